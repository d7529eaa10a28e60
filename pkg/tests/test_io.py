import io
import logging

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from apda_kit import io as kio


def test_libsvm_example():
    Q, b = kio.parse_libsvm("+1 1:0.5 3:2\n-1 2:1")
    np.testing.assert_array_equal(Q.toarray(), [[0.5, 0, 2], [0, 1, 0]])
    np.testing.assert_array_equal(b, [1, -1])
    assert sp.isspmatrix_csr(Q)


def test_libsvm_comments_blank_lines_and_file_objects():
    text = "# header\n\n+1 2:3 # trailing\n-1 1:1\n"
    Q, b = kio.parse_libsvm(io.StringIO(text))
    np.testing.assert_array_equal(Q.toarray(), [[0, 3], [1, 0]])
    np.testing.assert_array_equal(b, [1, -1])


def test_libsvm_zero_one_labels_are_remapped(caplog):
    with caplog.at_level(logging.WARNING):
        _, b = kio.parse_libsvm("0 1:1\n1 1:2\n")
    np.testing.assert_array_equal(b, [-1, 1])
    assert caplog.records


@pytest.mark.parametrize("text,match", [
    ("1 2:1 1:1", "indices not increasing at line 1"),
    ("1 1:1\n1 1:1 1:2", "indices not increasing at line 2"),
    ("1 1:1\nx 1:1", "cannot parse label 'x' at line 2"),
    ("1 1:1\n-1 3=2", "cannot parse token '3=2' at line 2"),
    ("1 0:1", "1-based"),
    ("", "empty LIBSVM input"),
    ("# only a comment\n", "empty LIBSVM input"),
])
def test_libsvm_errors(text, match):
    with pytest.raises(kio.LibsvmFormatError, match=match):
        kio.parse_libsvm(text)


def test_libsvm_n_features():
    Q, _ = kio.parse_libsvm("1 1:1\n-1 2:1", n_features=5)
    assert Q.shape == (2, 5)
    with pytest.raises(kio.LibsvmFormatError, match="n_features"):
        kio.parse_libsvm("1 4:1\n-1 1:1", n_features=3)


@given(seed=st.integers(0, 2**32 - 1), m=st.integers(1, 12), d=st.integers(1, 9),
       density=st.floats(0.05, 1.0))
def test_libsvm_round_trip(seed, m, d, density):
    rng = np.random.default_rng(seed)
    Q = sp.random(m, d, density=density, random_state=rng, format="csr",
                  data_rvs=lambda n: rng.standard_normal(n) * 10.0 ** rng.integers(-8, 8, n))
    b = np.where(rng.random(m) < 0.5, -1.0, 1.0)
    b[0], b[-1] = 1.0, -1.0 if m > 1 else 1.0
    buf = io.StringIO()
    kio.write_libsvm(buf, Q, b)
    Q2, b2 = kio.parse_libsvm(buf.getvalue(), n_features=d)
    Q.sort_indices()
    np.testing.assert_array_equal(Q2.indptr, Q.indptr)
    np.testing.assert_array_equal(Q2.indices, Q.indices)
    np.testing.assert_array_equal(Q2.data, Q.data)
    np.testing.assert_array_equal(b2, b)


def test_read_libsvm_from_disk(tmp_path):
    path = tmp_path / "tiny.svm"
    path.write_text("+1 1:0.5 3:2\n-1 2:1\n")
    Q, b = kio.read_libsvm(path)
    assert Q.shape == (2, 3) and list(b) == [1, -1]


def test_pgm_p2_example():
    np.testing.assert_array_equal(kio.parse_pgm(b"P2 2 2 255 0 255 255 0"), [[0, 1], [1, 0]])


def test_pgm_p5_constant():
    img = kio.parse_pgm(b"P5\n3 2\n255\n" + bytes([128]) * 6)
    assert img.shape == (2, 3)
    np.testing.assert_array_equal(img, np.full((2, 3), 128 / 255))


def test_pgm_header_comments_and_sixteen_bit():
    payload = np.array([[0, 1000], [65535, 7]], dtype=">u2").tobytes()
    img = kio.parse_pgm(b"P5\n# made by hand\n2 2\n# deep\n65535\n" + payload)
    np.testing.assert_array_equal(img, np.array([[0, 1000], [65535, 7]]) / 65535)


def test_pgm_payload_starting_with_whitespace_byte():
    # byte 10 is '\n'; only a single separator byte follows maxval
    img = kio.parse_pgm(b"P5 2 1 255\n" + bytes([10, 32]))
    np.testing.assert_array_equal(img, [[10 / 255, 32 / 255]])


@pytest.mark.parametrize("buf,match", [
    (b"P6\n1 1\n255\n\x00\x00\x00", "bad magic"),
    (b"P5\n2 2\n255\n\x00\x00", "truncated payload"),
    (b"P2 2 2 255 0 1 2", "truncated payload"),
    (b"P2 1 1 10 11", r"outside \[0, maxval\]"),
    (b"P5\n2", "truncated PGM header"),
])
def test_pgm_errors(buf, match):
    with pytest.raises(kio.PgmFormatError, match=match):
        kio.parse_pgm(buf)


def test_pgm_rounds_half_away_from_zero():
    # 0.5/255 sits exactly on a rounding boundary after scaling
    img = np.array([[0.5 / 255, 1.5 / 255, 2.5 / 255, 1.0]])
    out = kio.parse_pgm(kio.encode_pgm(img))
    np.testing.assert_array_equal(np.rint(out * 255), [[1, 2, 3, 255]])


def test_pgm_clips_out_of_range():
    out = kio.parse_pgm(kio.encode_pgm(np.array([[-0.3, 1.7]])))
    np.testing.assert_array_equal(out, [[0.0, 1.0]])


@given(img=arrays(np.float64, st.tuples(st.integers(1, 9), st.integers(1, 9)),
                  elements=st.floats(0.0, 1.0)))
def test_pgm_round_trip_quantization_bound(img):
    back = kio.parse_pgm(kio.encode_pgm(img))
    assert back.shape == img.shape
    assert np.abs(back - img).max() <= 1 / (2 * 255) + 1e-15


def test_pgm_file_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    img = rng.random((5, 4))
    path = tmp_path / "x.pgm"
    kio.save_pgm(path, img)
    assert np.abs(kio.load_pgm(path) - img).max() <= 1 / 510
