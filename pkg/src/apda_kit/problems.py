"""Smooth objectives and saddle-point problem assembly.

A :class:`SaddleProblem` bundles ``f`` (value and gradient), the
regularizer ``g`` and the coupling operator ``A`` of

    min_x max_y  <Ax, y> + f(x) - g*(y).
"""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import linop, prox

logger = logging.getLogger(__name__)

__all__ = [
    "SmoothObjective",
    "LogisticLoss",
    "MaskedLeastSquares",
    "PhaseRetrievalLoss",
    "QuadraticObjective",
    "ReferenceSolution",
    "SaddleProblem",
    "f_value",
    "f_gradient",
    "normalize_labels",
    "make_logistic_problem",
    "make_synthetic_logistic",
    "make_inpainting_problem",
    "make_phase_retrieval_problem",
    "make_quadratic_testproblem",
    "piecewise_constant_image",
    "phase_retrieval_measurements",
]


class SmoothObjective:
    kind = "abstract"
    convex = True

    def __init__(self, dim):
        self.dim = int(dim)

    def value(self, x):
        return self.value_and_gradient(x)[0]

    def gradient(self, x):
        return self.value_and_gradient(x)[1]

    def value_and_gradient(self, x):  # pragma: no cover - abstract
        raise NotImplementedError

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"{self.kind} expects a vector of length {self.dim}, got {x.shape}")
        return x


def _log1pexp(s):
    """log(1 + exp(s)) without overflow."""
    out = np.empty_like(s)
    pos = s > 0
    out[pos] = s[pos] + np.log1p(np.exp(-s[pos]))
    out[~pos] = np.log1p(np.exp(s[~pos]))
    return out


def _sigmoid(s):
    out = np.empty_like(s)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    e = np.exp(s[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class LogisticLoss(SmoothObjective):
    """``sum_i log(1 + exp(-b_i <q_i, x>))``."""

    kind = "logistic"

    def __init__(self, Q, b):
        Q = sp.csr_matrix(Q, dtype=float) if sp.issparse(Q) else np.asarray(Q, dtype=float)
        b = np.asarray(b, dtype=float)
        if Q.shape[0] == 0 or Q.shape[1] == 0:
            raise ValueError("empty data matrix")
        if b.shape != (Q.shape[0],):
            raise ValueError("one label per row of Q required")
        if not np.all(np.isin(b, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")
        data = Q.data if sp.issparse(Q) else Q
        if not np.all(np.isfinite(data)):
            raise ValueError("non-finite entries in Q")
        self.Q = Q
        self.b = b
        super().__init__(Q.shape[1])

    def value_and_gradient(self, x):
        x = self._check(x)
        margin = self.b * (self.Q @ x)
        val = float(_log1pexp(-margin).sum())
        # d/dx log(1+exp(-m)) = -sigmoid(-m) * b_i q_i
        grad = -(self.Q.T @ (self.b * _sigmoid(-margin)))
        return val, np.asarray(grad).ravel()

    def lipschitz_bound(self):
        """||Q||^2 / 4, computed with the linop power iteration."""
        op = linop.SparseOperator(self.Q) if sp.issparse(self.Q) else linop.DenseOperator(self.Q)
        return linop.operator_norm(op, tol=1e-12) ** 2 / 4.0


class MaskedLeastSquares(SmoothObjective):
    """``0.5 * ||P x - b||^2`` with ``P`` a row-selection mask."""

    kind = "masked-least-squares"

    def __init__(self, mask, b):
        b = np.asarray(b, dtype=float)
        if b.shape != (mask.out_dim,):
            raise ValueError("b must have one entry per kept pixel")
        if not np.all(np.isfinite(b)):
            raise ValueError("non-finite observations")
        self.mask = mask
        self.b = b
        super().__init__(mask.in_dim)

    def value_and_gradient(self, x):
        x = self._check(x)
        r = self.mask.apply(x) - self.b
        return 0.5 * float(r @ r), self.mask.adjoint_apply(r)

    def lipschitz_bound(self):
        return 1.0


class PhaseRetrievalLoss(SmoothObjective):
    """``(1/4m) sum_i (b_i - (Mx)_i^2)^2``; row ``i`` of ``M`` is vec(A_i)."""

    kind = "phase-retrieval"
    convex = False

    def __init__(self, M, b):
        M = sp.csr_matrix(M, dtype=float)
        b = np.asarray(b, dtype=float)
        if M.shape[0] == 0:
            raise ValueError("need at least one measurement")
        if b.shape != (M.shape[0],):
            raise ValueError("one observation per measurement required")
        if not (np.all(np.isfinite(M.data)) and np.all(np.isfinite(b))):
            raise ValueError("non-finite measurement data")
        self.M = M
        self._Mt = M.T.tocsr()
        self.b = b
        super().__init__(M.shape[1])

    def value_and_gradient(self, x):
        x = self._check(x)
        m = self.b.size
        s = self.M @ x
        r = self.b - s * s
        return float(r @ r) / (4 * m), -(self._Mt @ (r * s)) / m


class QuadraticObjective(SmoothObjective):
    """``0.5 x^T H x - c^T x`` with symmetric positive semidefinite ``H``."""

    kind = "quadratic"

    def __init__(self, H, c):
        H = np.array(H, dtype=float)
        c = np.array(c, dtype=float)
        if H.ndim != 2 or H.shape[0] != H.shape[1] or c.shape != (H.shape[0],):
            raise ValueError("H must be square and c must match it")
        if not np.allclose(H, H.T, rtol=0, atol=1e-12 * max(1.0, np.abs(H).max())):
            raise ValueError("H must be symmetric")
        H = 0.5 * (H + H.T)
        H.setflags(write=False)
        c.setflags(write=False)
        self.H = H
        self.c = c
        super().__init__(H.shape[0])

    def value_and_gradient(self, x):
        x = self._check(x)
        Hx = self.H @ x
        return 0.5 * float(x @ Hx) - float(self.c @ x), Hx - self.c

    def eigen_bounds(self):
        eigs = np.linalg.eigvalsh(self.H)
        return float(eigs[0]), float(eigs[-1])

    def lipschitz_bound(self):
        return self.eigen_bounds()[1]


def f_value(obj, x):
    return obj.value(x)


def f_gradient(obj, x):
    return obj.gradient(x)


@dataclass(frozen=True, eq=False)
class ReferenceSolution:
    x: np.ndarray
    y: np.ndarray
    F: float
    residual: float
    note: str = ""


@dataclass(eq=False)
class SaddleProblem:
    f: SmoothObjective
    reg: prox.Regularizer
    A: linop.LinearOperator
    reference: ReferenceSolution | None = None
    convexity: str = "convex"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.A.in_dim != self.f.dim:
            raise ValueError(
                f"A.in_dim={self.A.in_dim} does not match the dimension of f ({self.f.dim})"
            )
        if self.reg.dim is not None and self.reg.dim != self.A.out_dim:
            raise ValueError(
                f"A.out_dim={self.A.out_dim} does not match the regularizer layout ({self.reg.dim})"
            )
        if self.convexity not in ("convex", "nonconvex-heuristic"):
            raise ValueError(f"unknown convexity note {self.convexity!r}")

    @property
    def dim_x(self):
        return self.A.in_dim

    @property
    def dim_y(self):
        return self.A.out_dim

    @property
    def convex(self):
        return self.convexity == "convex"

    def objective(self, x):
        """F(x) = f(x) + g(Ax)."""
        return self.f.value(x) + self.reg.value(self.A.apply(x))

    def residuals(self, x, y, sigma):
        """Optimality residuals ``(||grad f(x) + A^T y||, ||y - prox(y + sigma A x)|| / sigma)``."""
        primal = np.linalg.norm(self.f.gradient(x) + self.A.adjoint_apply(y))
        y_hat = prox.prox_g_conj(self.reg, sigma, y + sigma * self.A.apply(x))
        return float(primal), float(np.linalg.norm(y - y_hat) / sigma)


def normalize_labels(b):
    """Map a two-valued label vector onto {-1, +1}.

    Labels already in {-1, +1} pass through. Any other pair (``{0, 1}``,
    ``{1, 2}``, ...) is remapped smaller -> -1, larger -> +1 with a warning.
    """
    b = np.asarray(b, dtype=float)
    values = np.unique(b)
    if values.size == 0:
        raise ValueError("empty label vector")
    if np.all(np.isin(values, (-1.0, 1.0))):
        return b.copy()
    if values.size > 2:
        raise ValueError(f"expected binary labels, found {values.size} distinct values")
    if values.size == 1:
        raise ValueError(f"cannot remap single label value {values[0]} to {{-1, +1}}")
    logger.warning("remapping labels %s -> {-1, +1}", values.tolist())
    return np.where(b == values[1], 1.0, -1.0)


def make_logistic_problem(Q, b, lambda_frac=0.005):
    """l1-regularized logistic regression with ``A = I``.

    ``lambda = lambda_frac * ||Q^T b||_inf``.
    """
    if not lambda_frac > 0:
        raise ValueError("lambda_frac must be positive")
    if Q.shape[0] == 0 or Q.shape[1] == 0:
        raise ValueError("empty data matrix")
    b = np.asarray(b, dtype=float)
    if not np.all(np.isin(b, (-1.0, 1.0))):
        raise ValueError("labels must be -1 or +1 (see normalize_labels)")
    f = LogisticLoss(Q, b)
    lam = lambda_frac * float(np.abs(np.asarray(f.Q.T @ b)).max())
    return SaddleProblem(
        f=f,
        reg=prox.l1(lam),
        A=linop.IdentityOperator(f.dim),
        meta={"kind": "logistic", "lambda": lam, "lambda_frac": lambda_frac},
    )


def make_synthetic_logistic(m, d, lambda_frac=0.005, seed=0, density=0.2, noise=0.5):
    """Gaussian features and labels from a sparse planted model plus noise."""
    rng = np.random.default_rng(seed)
    Q = rng.standard_normal((m, d))
    w = np.zeros(d)
    support = rng.choice(d, size=max(1, int(density * d)), replace=False)
    w[support] = rng.standard_normal(support.size)
    b = np.sign(Q @ w + noise * rng.standard_normal(m))
    b[b == 0] = 1.0
    problem = make_logistic_problem(Q, b, lambda_frac)
    problem.meta.update(m=m, d=d, seed=seed)
    return problem


def piecewise_constant_image(height, width, seed=0, n_rects=4):
    """Random overlapping rectangles on a flat background, values in [0, 1]."""
    rng = np.random.default_rng(seed)
    img = np.full((height, width), 0.2)
    for level in rng.uniform(0.3, 1.0, size=n_rects):
        r0, r1 = np.sort(rng.choice(height + 1, size=2, replace=False))
        c0, c1 = np.sort(rng.choice(width + 1, size=2, replace=False))
        img[r0:r1, c0:c1] = level
    return img


def make_inpainting_problem(image, keep_ratio=0.4, lam=1e-2, seed=0):
    """TV inpainting: ``0.5 ||b - P x||^2 + lam ||D x||_{2,1}``.

    ``ceil(keep_ratio * H * W)`` pixels are kept, drawn uniformly without
    replacement from a seeded generator; kept indices are sorted.
    """
    image = np.asarray(image, dtype=float)
    if image.ndim != 2 or not np.all(np.isfinite(image)):
        raise ValueError("image must be a finite 2-D array")
    if not 0 < keep_ratio <= 1:
        raise ValueError("keep_ratio must lie in (0, 1]")
    height, width = image.shape
    n = height * width
    n_keep = math.ceil(keep_ratio * n - 1e-9)
    if n_keep == 0:
        raise ValueError("degenerate mask: no pixels kept")
    rng = np.random.default_rng(seed)
    kept = np.sort(rng.choice(n, size=n_keep, replace=False))
    mask = linop.MaskOperator(n, kept)
    truth = image.ravel()
    f = MaskedLeastSquares(mask, mask.apply(truth))
    return SaddleProblem(
        f=f,
        reg=prox.group_l21(lam, prox.gradient_groups(height, width)),
        A=linop.GradientOperator(height, width),
        meta={"kind": "inpainting", "shape": (height, width), "truth": truth,
              "keep_ratio": keep_ratio, "lambda": lam, "seed": seed},
    )


def phase_retrieval_measurements(d, m, density=0.3, seed=0):
    """``m`` sparse Gaussian measurement vectors stacked as an ``m x d`` CSR matrix."""
    rng = np.random.default_rng(seed)
    return sp.random(m, d, density=density, format="csr", random_state=rng,
                     data_rvs=rng.standard_normal)


def make_phase_retrieval_problem(image, m=None, density=0.3, corrupt_frac=0.1,
                                 lam=1e2, seed=0):
    """Real phase retrieval with TV: ``(1/4m) sum (b_i - <A_i, X>^2)^2 + lam TV(X)``.

    ``m`` defaults to ``ceil(d * log10(d))``. A seeded ``corrupt_frac``
    share of the raw observations is set to zero.
    """
    image = np.asarray(image, dtype=float)
    if image.ndim != 2 or not np.all(np.isfinite(image)):
        raise ValueError("image must be a finite 2-D array")
    if not 0 < density <= 1:
        raise ValueError("density must lie in (0, 1]")
    if not 0 <= corrupt_frac < 1:
        raise ValueError("corrupt_frac must lie in [0, 1)")
    height, width = image.shape
    d = height * width
    if m is None:
        m = default_measurement_count(d)
    if m < 1:
        raise ValueError("need at least one measurement")
    rng = np.random.default_rng(seed)
    M = phase_retrieval_measurements(d, m, density, seed=rng.integers(2**63))
    truth = image.ravel()
    b = (M @ truth) ** 2
    n_bad = int(round(corrupt_frac * m))
    corrupted = np.sort(rng.choice(m, size=n_bad, replace=False))
    b[corrupted] = 0.0
    return SaddleProblem(
        f=PhaseRetrievalLoss(M, b),
        reg=prox.group_l21(lam, prox.gradient_groups(height, width)),
        A=linop.GradientOperator(height, width),
        convexity="nonconvex-heuristic",
        meta={"kind": "phase-retrieval", "shape": (height, width), "truth": truth,
              "m": m, "density": density, "corrupted": corrupted, "lambda": lam,
              "seed": seed},
    )


def default_measurement_count(d):
    return math.ceil(d * math.log10(d))


def make_quadratic_testproblem(dim_x=10, dim_y=4, mu=0.5, L=5.0, seed=0, lam=0.05,
                               reference=True, reference_tol=1e-10,
                               reference_iters=100_000):
    """Strongly convex quadratic with l1 on a full-row-rank ``A``.

    ``H`` has spectrum in ``[mu, L]`` with both endpoints attained, so the
    strong convexity and smoothness constants are exact. The reference
    saddle point comes from a long Condat-Vu run and must reach a combined
    residual of ``reference_tol``.
    """
    if not 0 < mu <= L:
        raise ValueError(f"need 0 < mu <= L, got mu={mu}, L={L}")
    if dim_y > dim_x:
        raise ValueError("dim_y must not exceed dim_x for a full-row-rank A")
    if reference:
        return _cached_quadratic(dim_x, dim_y, float(mu), float(L), int(seed), float(lam),
                                 float(reference_tol), int(reference_iters))
    return _quadratic(dim_x, dim_y, mu, L, seed, lam)


def _quadratic(dim_x, dim_y, mu, L, seed, lam):
    rng = np.random.default_rng(seed)
    eigs = np.sort(rng.uniform(mu, L, size=dim_x))
    eigs[0], eigs[-1] = mu, L
    U, _ = np.linalg.qr(rng.standard_normal((dim_x, dim_x)))
    H = (U * eigs) @ U.T
    c = rng.standard_normal(dim_x)
    A = rng.standard_normal((dim_y, dim_x))
    return SaddleProblem(
        f=QuadraticObjective(0.5 * (H + H.T), c),
        reg=prox.l1(lam),
        A=linop.DenseOperator(A),
        meta={"kind": "quadratic", "mu": mu, "L": L, "seed": seed, "lambda": lam},
    )


@functools.lru_cache(maxsize=32)
def _cached_quadratic(dim_x, dim_y, mu, L, seed, lam, tol, iters):
    from .solvers import reference_solution

    problem = _quadratic(dim_x, dim_y, mu, L, seed, lam)
    problem.reference = reference_solution(problem, L_global=L, tol=tol, max_iters=iters)
    return problem
