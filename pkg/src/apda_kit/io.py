"""LIBSVM text and PGM image readers/writers."""

from __future__ import annotations

import io as _io
import math
import re

import numpy as np
import scipy.sparse as sp

from .problems import normalize_labels

__all__ = [
    "LibsvmFormatError",
    "PgmFormatError",
    "parse_libsvm",
    "read_libsvm",
    "write_libsvm",
    "load_pgm",
    "parse_pgm",
    "save_pgm",
    "encode_pgm",
]


class LibsvmFormatError(ValueError):
    pass


class PgmFormatError(ValueError):
    pass


def parse_libsvm(stream, n_features=None):
    """Parse LIBSVM text into ``(Q, b)``.

    Parameters
    ----------
    stream : str or iterable of str
        A whole document or anything yielding lines (an open text file).
    n_features : int, optional
        Column count; defaults to the largest index seen.

    Returns
    -------
    Q : scipy.sparse.csr_matrix, shape (m, d)
    b : ndarray of +-1 labels, shape (m,)
    """
    if isinstance(stream, str):
        stream = _io.StringIO(stream)
    labels, indptr, indices, data = [], [0], [], []
    for lineno, raw in enumerate(stream, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            labels.append(float(tokens[0]))
        except ValueError:
            raise LibsvmFormatError(
                f"cannot parse label {tokens[0]!r} at line {lineno}") from None
        last = 0
        for tok in tokens[1:]:
            idx_s, sep, val_s = tok.partition(":")
            try:
                if not sep:
                    raise ValueError
                idx, val = int(idx_s), float(val_s)
            except ValueError:
                raise LibsvmFormatError(
                    f"cannot parse token {tok!r} at line {lineno}") from None
            if idx < 1:
                raise LibsvmFormatError(f"indices must be 1-based, got {idx} at line {lineno}")
            if idx <= last:
                raise LibsvmFormatError(f"indices not increasing at line {lineno}")
            if not math.isfinite(val):
                raise LibsvmFormatError(f"non-finite value at line {lineno}")
            last = idx
            indices.append(idx - 1)
            data.append(val)
        indptr.append(len(indices))
    if not labels:
        raise LibsvmFormatError("empty LIBSVM input")
    d = (max(indices) + 1) if indices else 0
    if n_features is not None:
        if n_features < d:
            raise LibsvmFormatError(f"found feature index {d} beyond n_features={n_features}")
        d = int(n_features)
    if d == 0:
        raise LibsvmFormatError("no features present")
    Q = sp.csr_matrix(
        (np.asarray(data, dtype=float), np.asarray(indices, dtype=np.int32),
         np.asarray(indptr, dtype=np.int64)),
        shape=(len(labels), d),
    )
    return Q, normalize_labels(np.asarray(labels))


def read_libsvm(path, n_features=None):
    with open(path, encoding="utf-8") as fh:
        return parse_libsvm(fh, n_features)


def write_libsvm(stream, Q, b):
    """Write ``(Q, b)`` as LIBSVM text; stored zeros are skipped."""
    Q = sp.csr_matrix(Q)
    Q.sort_indices()
    b = np.asarray(b, dtype=float)
    if b.shape != (Q.shape[0],):
        raise ValueError("label count does not match the number of rows")
    for i in range(Q.shape[0]):
        lo, hi = Q.indptr[i], Q.indptr[i + 1]
        parts = ["%+d" % b[i] if b[i] in (-1.0, 1.0) else repr(float(b[i]))]
        for j, v in zip(Q.indices[lo:hi], Q.data[lo:hi]):
            if v != 0:
                parts.append(f"{j + 1}:{float(v)!r}")
        stream.write(" ".join(parts) + "\n")


# --------------------------------------------------------------------------
# PGM

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _header(buf):
    """Return ``(magic, width, height, maxval, offset)``; offset is after the single separator byte."""
    pos = 0
    fields = []
    for _ in range(4):
        m = _TOKEN.match(buf, pos)
        if m is None:
            raise PgmFormatError("truncated PGM header")
        fields.append(m.group(1))
        pos = m.end()
    magic = fields[0]
    if magic not in (b"P2", b"P5"):
        raise PgmFormatError(f"bad magic {magic[:2]!r}: expected P2 or P5")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise PgmFormatError("non-integer PGM header field") from None
    if width < 1 or height < 1:
        raise PgmFormatError("PGM dimensions must be positive")
    if not 1 <= maxval <= 65535:
        raise PgmFormatError(f"maxval {maxval} outside [1, 65535]")
    return magic, width, height, maxval, pos + 1


def parse_pgm(buf):
    """Decode PGM bytes into a float image in [0, 1]."""
    magic, width, height, maxval, offset = _header(bytes(buf))
    n = width * height
    if magic == b"P5":
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        payload = buf[offset:offset + n * dtype.itemsize]
        if len(payload) < n * dtype.itemsize:
            raise PgmFormatError(
                f"truncated payload: expected {n * dtype.itemsize} bytes, got {len(payload)}")
        raw = np.frombuffer(payload, dtype=dtype).astype(np.int64)
    else:
        text = re.sub(rb"#[^\n]*", b"", buf[offset - 1:])
        try:
            raw = np.array([int(t) for t in text.split()], dtype=np.int64)
        except ValueError:
            raise PgmFormatError("non-integer sample in P2 payload") from None
        if raw.size < n:
            raise PgmFormatError(f"truncated payload: expected {n} samples, got {raw.size}")
        raw = raw[:n]
    if raw.min() < 0 or raw.max() > maxval:
        raise PgmFormatError("sample outside [0, maxval]")
    return (raw / maxval).reshape(height, width)


def load_pgm(path):
    with open(path, "rb") as fh:
        return parse_pgm(fh.read())


def encode_pgm(image):
    """P5, maxval 255. Values are clipped to [0, 1] and rounded half away from zero."""
    image = np.asarray(image, dtype=float)
    if image.ndim != 2:
        raise ValueError("image must be 2-D")
    if not np.isfinite(image).all():
        raise ValueError("image has non-finite entries")
    scaled = np.clip(image, 0.0, 1.0) * 255.0
    # nonnegative after clipping, so floor(v + 1/2) rounds half away from zero
    q = np.floor(scaled + 0.5).astype(np.uint8)
    height, width = image.shape
    return b"P5\n%d %d\n255\n" % (width, height) + q.tobytes()


def save_pgm(path, image):
    with open(path, "wb") as fh:
        fh.write(encode_pgm(image))
