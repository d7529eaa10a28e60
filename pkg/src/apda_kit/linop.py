"""Linear operators acting on flat real vectors.

Every operator maps vectors of length ``in_dim`` to vectors of length
``out_dim`` and exposes its adjoint. Images are always vectorized in
row-major order.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp

__all__ = [
    "LinearOperator",
    "DenseOperator",
    "SparseOperator",
    "IdentityOperator",
    "ZeroOperator",
    "MaskOperator",
    "GradientOperator",
    "ComposedOperator",
    "CertificateUnavailable",
    "apply",
    "adjoint_apply",
    "compose",
    "operator_norm",
    "smallest_singular_value",
    "SQRT8",
]

SQRT8 = math.sqrt(8.0)

# Largest number of matrix entries materialized for singular value work.
DENSE_SIZE_CAP = 4096 * 4096


class CertificateUnavailable(RuntimeError):
    """Raised when an exact spectral quantity is too expensive to compute."""


class LinearOperator:
    """Base class. Subclasses implement ``_matvec`` and ``_rmatvec``."""

    kind = "abstract"

    def __init__(self, in_dim, out_dim, norm_hint=None):
        in_dim, out_dim = int(in_dim), int(out_dim)
        if in_dim < 1 or out_dim < 1:
            raise ValueError(
                f"operator dimensions must be positive, got in_dim={in_dim}, "
                f"out_dim={out_dim}"
            )
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.norm_hint = None if norm_hint is None else float(norm_hint)

    @property
    def shape(self):
        return (self.out_dim, self.in_dim)

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.in_dim,):
            raise ValueError(
                f"{self.kind} operator expects input of length {self.in_dim}, "
                f"got shape {x.shape}"
            )
        return self._matvec(x)

    def adjoint_apply(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape != (self.out_dim,):
            raise ValueError(
                f"{self.kind} adjoint expects input of length {self.out_dim}, "
                f"got shape {y.shape}"
            )
        return self._rmatvec(y)

    __call__ = apply

    def to_dense(self):
        """Materialize the operator column by column."""
        eye = np.eye(self.in_dim)
        return np.column_stack([self._matvec(eye[:, j]) for j in range(self.in_dim)])

    def _matvec(self, x):  # pragma: no cover - abstract
        raise NotImplementedError

    def _rmatvec(self, y):  # pragma: no cover - abstract
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}(in_dim={self.in_dim}, out_dim={self.out_dim})"


class DenseOperator(LinearOperator):
    kind = "dense"

    def __init__(self, matrix, norm_hint=None):
        matrix = np.array(matrix, dtype=float)
        if matrix.ndim != 2:
            raise ValueError("dense operator needs a 2-D array")
        if not np.all(np.isfinite(matrix)):
            raise ValueError("dense operator has non-finite entries")
        matrix.setflags(write=False)
        self.matrix = matrix
        super().__init__(matrix.shape[1], matrix.shape[0], norm_hint)

    def _matvec(self, x):
        return self.matrix @ x

    def _rmatvec(self, y):
        return self.matrix.T @ y

    def to_dense(self):
        return np.array(self.matrix)


class SparseOperator(LinearOperator):
    kind = "sparse-CSR"

    def __init__(self, matrix, norm_hint=None):
        matrix = sp.csr_matrix(matrix, dtype=float)
        if not np.all(np.isfinite(matrix.data)):
            raise ValueError("sparse operator has non-finite entries")
        self.matrix = matrix
        self._matrix_t = matrix.T.tocsr()
        super().__init__(matrix.shape[1], matrix.shape[0], norm_hint)

    def _matvec(self, x):
        return self.matrix @ x

    def _rmatvec(self, y):
        return self._matrix_t @ y

    def to_dense(self):
        return self.matrix.toarray()


class IdentityOperator(LinearOperator):
    kind = "identity"

    def __init__(self, dim):
        super().__init__(dim, dim, norm_hint=1.0)

    def _matvec(self, x):
        return x.copy()

    _rmatvec = _matvec


class ZeroOperator(LinearOperator):
    kind = "zero"

    def __init__(self, in_dim, out_dim=None):
        super().__init__(in_dim, in_dim if out_dim is None else out_dim, norm_hint=0.0)

    def _matvec(self, x):
        return np.zeros(self.out_dim)

    def _rmatvec(self, y):
        return np.zeros(self.in_dim)


class MaskOperator(LinearOperator):
    """Row selection: keeps ``x[indices]`` in the given index order."""

    kind = "mask"

    def __init__(self, dim, indices):
        indices = np.asarray(indices, dtype=np.intp)
        if indices.ndim != 1 or indices.size == 0:
            raise ValueError("mask needs a non-empty 1-D index list")
        if indices.min() < 0 or indices.max() >= dim:
            raise ValueError(f"mask indices must lie in [0, {dim})")
        if np.unique(indices).size != indices.size:
            raise ValueError("mask indices must be distinct")
        indices.setflags(write=False)
        self.indices = indices
        super().__init__(dim, indices.size, norm_hint=1.0)

    def _matvec(self, x):
        return x[self.indices]

    def _rmatvec(self, y):
        out = np.zeros(self.in_dim)
        out[self.indices] = y
        return out


class GradientOperator(LinearOperator):
    """Forward-difference image gradient with Neumann boundary.

    Output stacking is all horizontal differences (row-major), then all
    vertical differences. Differences across the last column (resp. row)
    are zero.
    """

    kind = "discrete-gradient"

    def __init__(self, height, width):
        self.height = int(height)
        self.width = int(width)
        n = self.height * self.width
        super().__init__(n, 2 * n, norm_hint=SQRT8)

    def _matvec(self, x):
        img = x.reshape(self.height, self.width)
        dh = np.zeros_like(img)
        dv = np.zeros_like(img)
        dh[:, :-1] = img[:, 1:] - img[:, :-1]
        dv[:-1, :] = img[1:, :] - img[:-1, :]
        return np.concatenate([dh.ravel(), dv.ravel()])

    def _rmatvec(self, y):
        n = self.height * self.width
        ph = y[:n].reshape(self.height, self.width).copy()
        pv = y[n:].reshape(self.height, self.width).copy()
        # entries the forward map never writes do not reach the adjoint
        ph[:, -1] = 0.0
        pv[-1, :] = 0.0
        out = -np.diff(ph, axis=1, prepend=0.0) - np.diff(pv, axis=0, prepend=0.0)
        return out.ravel()


class ComposedOperator(LinearOperator):
    """``outer @ inner``: apply ``inner`` first."""

    kind = "composition"

    def __init__(self, outer, inner):
        if outer.in_dim != inner.out_dim:
            raise ValueError(
                f"cannot compose: outer.in_dim={outer.in_dim} != "
                f"inner.out_dim={inner.out_dim}"
            )
        hint = None
        if outer.norm_hint is not None and inner.norm_hint is not None:
            hint = outer.norm_hint * inner.norm_hint
        self.outer = outer
        self.inner = inner
        super().__init__(inner.in_dim, outer.out_dim, hint)

    def _matvec(self, x):
        return self.outer.apply(self.inner.apply(x))

    def _rmatvec(self, y):
        return self.inner.adjoint_apply(self.outer.adjoint_apply(y))


def apply(op, x):
    return op.apply(x)


def adjoint_apply(op, y):
    return op.adjoint_apply(y)


def compose(outer, inner):
    return ComposedOperator(outer, inner)


_EXACT_NORM_KINDS = ("identity", "zero", "mask", "discrete-gradient")


def operator_norm(op, tol=1e-10, max_iters=10_000, seed=0, safety=None):
    """Upper bound on the spectral norm of ``op``.

    Operators with a known norm (identity, zero, mask, discrete gradient)
    return their hint directly; the gradient returns the sqrt(8) bound,
    not its exact norm. Everything else runs power iteration on ``A^T A``
    from a seeded Gaussian start and inflates the estimate by
    ``safety`` (default ``1 + 10 * tol``).

    Parameters
    ----------
    op : LinearOperator
    tol : float
        Stop once the relative change of the Rayleigh quotient drops below
        this value.
    max_iters : int
    seed : int
        Seed for the starting vector.
    safety : float, optional
        Multiplicative inflation applied to the estimate.

    Returns
    -------
    float
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if op.kind in _EXACT_NORM_KINDS:
        return op.norm_hint
    if safety is None:
        safety = 1.0 + 10.0 * tol

    rng = np.random.default_rng(seed)
    v = rng.standard_normal(op.in_dim)
    v /= np.linalg.norm(v)
    rayleigh = 0.0
    for _ in range(max_iters):
        w = op.adjoint_apply(op.apply(v))
        new = float(v @ w)
        if not np.isfinite(new):
            raise FloatingPointError("non-finite value during power iteration")
        nw = np.linalg.norm(w)
        if nw == 0.0:
            # a Gaussian start lands in a nontrivial null space with probability 0
            return 0.0
        converged = rayleigh > 0 and abs(new - rayleigh) <= tol * new
        rayleigh = new
        v = w / nw
        if converged:
            break
    return math.sqrt(max(rayleigh, 0.0)) * safety


def smallest_singular_value(op, size_cap=DENSE_SIZE_CAP):
    """sigma_min of a full-row-rank operator via the spectrum of ``A A^T``."""
    if op.in_dim * op.out_dim > size_cap:
        raise CertificateUnavailable(
            f"certificate unavailable at this scale: {op.out_dim}x{op.in_dim} "
            f"exceeds the cap of {size_cap} entries"
        )
    dense = op.to_dense()
    eigs = np.linalg.eigvalsh(dense @ dense.T)
    return math.sqrt(max(float(eigs[0]), 0.0))
