"""Per-iteration records, gap functions and convergence certificates.

The checks here are the measurable consequences of the convergence
theory: stepsize invariants, the energy bound, the O(1/k) bound on the
gap at the ergodic iterates and the linear contraction under strong
convexity. They all read either solver traces or live iterates passed to
an ``on_iteration`` callback.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import linop

__all__ = [
    "IterationRecord",
    "Iterates",
    "CSV_COLUMNS",
    "primal_gap",
    "dual_gap",
    "gap",
    "energy",
    "boundedness_constant",
    "ErgodicAccumulator",
    "ergodic_update",
    "ErgodicGapMonitor",
    "GapBoundReport",
    "gap_bound_check",
    "RateCertificate",
    "rate_certificate",
    "LinearRateMonitor",
    "LinearRateReport",
    "linear_rate_check",
    "StepsizeReport",
    "check_stepsize_step",
    "stepsize_invariants",
    "InvariantViolation",
    "psnr",
    "ssim",
]


class InvariantViolation(AssertionError):
    """A quantity the convergence theory guarantees was found violated."""


@dataclass(slots=True)
class IterationRecord:
    """State of iteration ``k`` evaluated at ``(x_k, y_k)``."""

    k: int
    tau: float
    sigma: float | None
    theta: float | None
    L_k: float | None
    f: float
    F: float
    primal_res: float | None
    dual_res: float | None
    energy: float | None = None
    wall_time_ns: int = 0

    def as_row(self):
        return [getattr(self, name) for name in CSV_COLUMNS]


CSV_COLUMNS = tuple(f.name for f in fields(IterationRecord))


@dataclass(frozen=True, slots=True)
class Iterates:
    """Read-only view handed to callbacks next to each record.

    ``x_next``/``y_next`` are ``None`` on the iteration where the solver
    stops before updating.
    """

    k: int
    x_prev: np.ndarray
    x: np.ndarray
    y: np.ndarray
    x_next: np.ndarray | None = None
    y_next: np.ndarray | None = None


def _readonly(*arrays):
    out = []
    for a in arrays:
        if a is None:
            out.append(None)
            continue
        v = a.view()
        v.setflags(write=False)
        out.append(v)
    return out


# --------------------------------------------------------------------------
# gap functions


def primal_gap(problem, x_ref, y_ref, x):
    """``f(x) - f(x') + <x - x', A^T y'>``."""
    aty = problem.A.adjoint_apply(y_ref)
    return problem.f.value(x) - problem.f.value(x_ref) + float((x - x_ref) @ aty)


def dual_gap(problem, x_ref, y_ref, y):
    """``g*(y) - g*(y') - <A x', y - y'>``; ``inf`` when ``y`` is infeasible."""
    gy = problem.reg.conj_value(y)
    if math.isinf(gy):
        return math.inf
    ax = problem.A.apply(x_ref)
    return gy - problem.reg.conj_value(y_ref) - float(ax @ (y - y_ref))


def gap(problem, x_ref, y_ref, x, y):
    return primal_gap(problem, x_ref, y_ref, x) + dual_gap(problem, x_ref, y_ref, y)


def energy(x, y, x_ref, y_ref, beta):
    """``||x - x*||^2 + ||y - y*||^2 / beta``."""
    dx = x - x_ref
    dy = y - y_ref
    return float(dx @ dx) + float(dy @ dy) / beta


def boundedness_constant(x1, y1, x0, x_ref, y_ref, beta, radius=0.0):
    """Bound on the energy built from the first iterates.

    With ``radius > 0`` this is the sup over the product of balls of that
    radius centred at ``(x_ref, y_ref)``.
    """
    dx = np.linalg.norm(x1 - x_ref) + radius
    dy = np.linalg.norm(y1 - y_ref) + radius
    step = x1 - x0
    return float(dx * dx + dy * dy / beta + 0.5 * (step @ step))


# --------------------------------------------------------------------------
# ergodic averages


class ErgodicAccumulator:
    """Running stepsize-weighted averages of the primal and dual iterates.

    ``x_k`` carries weight ``tau_k (1 + theta_k)`` until the next update
    arrives, at which point ``tau_{k+1} theta_{k+1}`` is subtracted. The
    weights sum to ``S_k = sum tau_i`` because ``theta_1 = 0``.
    """

    def __init__(self, dim_x, dim_y):
        self.k = 0
        self.S = 0.0
        self._x_sum = np.zeros(dim_x)
        self._y_sum = np.zeros(dim_y)
        self._pending_x = None
        self.pending_weight = 0.0

    def update(self, tau, theta, x, y_next, k=None):
        if k is not None and k != self.k + 1:
            raise ValueError(f"ergodic update out of order: expected k={self.k + 1}, got {k}")
        if self._pending_x is not None:
            w = self.pending_weight - tau * theta
            if w < -1e-14 * self.pending_weight:
                raise InvariantViolation(
                    f"negative ergodic weight {w:.3e} at k={self.k}: "
                    f"tau_k(1+theta_k)={self.pending_weight:.6e} < "
                    f"tau_k+1 theta_k+1={tau * theta:.6e}"
                )
            self._x_sum += w * self._pending_x
        self._pending_x = np.array(x, dtype=float)
        self.pending_weight = tau * (1.0 + theta)
        self._y_sum += tau * np.asarray(y_next, dtype=float)
        self.S += tau
        self.k += 1
        return self

    @property
    def X(self):
        return (self._x_sum + self.pending_weight * self._pending_x) / self.S

    @property
    def Y(self):
        return self._y_sum / self.S


def ergodic_update(acc, tau_k, theta_k, x_k, y_next, k=None):
    return acc.update(tau_k, theta_k, x_k, y_next, k=k)


class ErgodicGapMonitor:
    """Callback tracking ``G_{x*,y*}(X_k, Y_k)`` and the constant ``M``.

    ``every`` controls how often the gap is evaluated; powers of two are
    always evaluated for the doubling trend.
    """

    def __init__(self, problem, beta, every=1):
        if problem.reference is None:
            raise ValueError("gap monitoring needs a reference saddle point")
        self.problem = problem
        self.beta = beta
        self.every = every
        self.acc = ErgodicAccumulator(problem.dim_x, problem.dim_y)
        self.gaps = {}
        self.first = None

    def __call__(self, record, it):
        if it.y_next is None:
            return
        if it.k == 1:
            self.first = (np.array(it.x), np.array(it.y), np.array(it.x_prev))
        self.acc.update(record.tau, record.theta, it.x, it.y_next, k=it.k)
        k = it.k
        if k % self.every == 0 or (k & (k - 1)) == 0:
            ref = self.problem.reference
            self.gaps[k] = gap(self.problem, ref.x, ref.y, self.acc.X, self.acc.Y)

    def M(self, radius=0.0):
        ref = self.problem.reference
        x1, y1, x0 = self.first
        return boundedness_constant(x1, y1, x0, ref.x, ref.y, self.beta, radius)


@dataclass
class GapBoundReport:
    M: float
    rate_constant: float
    worst_ratio: float
    violations: list
    dyadic: dict
    dyadic_monotone: bool
    gaps: dict = field(repr=False)

    @property
    def ok(self):
        return not self.violations


def gap_bound_check(monitor, L, beta, c, norm_A, radius=0.0, slack=1e-6):
    """Compare measured gaps with ``M(B) sqrt(L^2 + beta/(1-c) ||A||^2) / k``.

    The gap at the reference point is a lower bound on the restricted gap
    over any set containing it, so a violation here is a violation of the
    bound itself.
    """
    if monitor.problem.reference is None:
        raise ValueError("gap bound check needs a reference solution")
    if monitor.first is None:
        raise ValueError("monitor saw no iterations")
    M = monitor.M(radius)
    const = math.sqrt(L * L + beta / (1.0 - c) * norm_A * norm_A)
    worst = -math.inf
    violations = []
    for k, g in sorted(monitor.gaps.items()):
        bound = M * const / k
        ratio = g / bound if bound > 0 else (0.0 if g <= 0 else math.inf)
        worst = max(worst, ratio)
        if ratio > 1.0 + slack:
            violations.append((k, g, bound))
    dyadic = {k: g for k, g in sorted(monitor.gaps.items()) if (k & (k - 1)) == 0}
    vals = list(dyadic.values())
    monotone = all(b <= a for a, b in zip(vals, vals[1:]))
    return GapBoundReport(M, const, worst, violations, dyadic, monotone, dict(monitor.gaps))


# --------------------------------------------------------------------------
# linear rate


@dataclass(frozen=True)
class RateCertificate:
    mu: float
    L: float
    beta: float
    norm_A: float
    sigma_min: float
    s: float
    t: float
    p: float
    q: float
    r: float
    T: float

    @property
    def contraction(self):
        return 1.0 - min(self.p, self.q, self.r)


def rate_certificate(mu, L, beta, norm_A, sigma_min):
    """Rate constants of the strongly convex stepsize rule."""
    if mu is None or sigma_min is None:
        raise ValueError("rate certificate needs mu and sigma_min")
    if not 0 < mu <= L:
        raise ValueError(f"need 0 < mu <= L, got mu={mu}, L={L}")
    a = beta * norm_A * norm_A
    s = math.sqrt(4 * L * L + a)
    t = math.sqrt(4 * mu * mu + a)
    denom = 8 * s * s * t + 4 * L * L * s
    bsm = beta * sigma_min * sigma_min * mu
    return RateCertificate(
        mu=mu, L=L, beta=beta, norm_A=norm_A, sigma_min=sigma_min, s=s, t=t,
        p=0.5, q=mu / (4 * s), r=bsm / (bsm + denom),
        T=sigma_min * sigma_min * mu / denom,
    )


class LinearRateMonitor:
    """Callback collecting energies and the ingredients of ``M_2``."""

    def __init__(self, problem, beta):
        if problem.reference is None:
            raise ValueError("linear rate monitoring needs a reference saddle point")
        self.problem = problem
        self.beta = beta
        self.energies = {}
        self._x1 = None
        self._tau1 = None
        self._second = None

    def __call__(self, record, it):
        ref = self.problem.reference
        self.energies[it.k] = energy(it.x, it.y, ref.x, ref.y, self.beta)
        if it.k == 1:
            self._x1 = np.array(it.x)
            self._tau1 = record.tau
        elif it.k == 2:
            self._second = (np.array(it.x), np.array(it.y))

    def M2(self, T):
        ref = self.problem.reference
        x2, y2 = self._second
        x1 = self._x1
        dx = x2 - ref.x
        dy = y2 - ref.y
        step = x2 - x1
        p1 = primal_gap(self.problem, ref.x, ref.y, x1)
        return float(dx @ dx + (1.0 / self.beta + T) * (dy @ dy) + 0.5 * (step @ step)
                     + 2.0 * self._tau1 * p1)


@dataclass
class LinearRateReport:
    contraction: float
    M2: float
    worst_margin: float
    violations: list
    empirical_slope: float
    theoretical_slope: float

    @property
    def ok(self):
        return not self.violations and self.empirical_slope <= self.theoretical_slope


def linear_rate_check(monitor, cert, floor=1e-18):
    """Check ``energy_k <= contraction**k * M_2`` for every ``k >= 2``.

    ``worst_margin`` is the smallest ``log(bound) - log(energy)``. The
    empirical log-slope is a least-squares fit over energies above
    ``floor`` relative to the energy at ``k = 2``.
    """
    if monitor._second is None:
        raise ValueError("need at least two iterations")
    M2 = monitor.M2(cert.T)
    log_c = math.log(cert.contraction)
    worst = math.inf
    violations = []
    ks, logs = [], []
    e2 = monitor.energies[2]
    for k, e in sorted(monitor.energies.items()):
        if k < 2:
            continue
        log_bound = k * log_c + math.log(M2)
        if e > 0:
            margin = log_bound - math.log(e)
            worst = min(worst, margin)
            if margin < 0:
                violations.append((k, e, math.exp(log_bound)))
            if e > floor * e2:
                ks.append(k)
                logs.append(math.log(e))
    slope = float(np.polyfit(ks, logs, 1)[0]) if len(ks) >= 2 else -math.inf
    return LinearRateReport(cert.contraction, M2, worst, violations, slope, log_c)


# --------------------------------------------------------------------------
# stepsize invariants


def _first_term(L, beta, c, norm_A, variant):
    if variant == "strongly-convex":
        return 1.0 / (2.0 * math.sqrt(4 * L * L + beta * norm_A * norm_A))
    return 1.0 / (2.0 * math.sqrt(L * L + beta / (1.0 - c) * norm_A * norm_A))


def check_stepsize_step(tau, tau_prev, theta, theta_prev, L, beta, c, norm_A,
                        variant="base", rtol=1e-14):
    """Margins of the per-iteration stepsize invariants (positive = holds).

    Returns a dict ``name -> margin``. Strict inequalities become
    non-strict when ``norm_A = 0``, where they hold with equality.
    """
    sc = variant == "strongly-convex"
    strict = norm_A > 0
    margins = {}

    cap = 0.25 if sc else 0.5
    margins["tau_L"] = cap - tau * L
    if tau_prev is not None:
        growth = math.sqrt(1.0 + (theta_prev / 2.0 if sc else theta_prev))
        margins["growth"] = tau_prev * growth * (1.0 + rtol) - tau
    margins["theta"] = 2.0 - theta
    cc = 0.0 if sc else c
    upper = 1.0 / (L + math.sqrt(L * L + 2.0 * beta / (1.0 - cc) * norm_A * norm_A))
    margins["interval"] = upper - tau
    if sc:
        upper_sc = 1.0 / (2 * L + math.sqrt(4 * L * L + 2.0 * beta * norm_A * norm_A))
        margins["interval_sc"] = upper_sc - tau
    if not strict:
        # equality is attainable; tolerate it up to rounding
        for name in ("tau_L", "interval", "interval_sc"):
            if name in margins:
                margins[name] += rtol * max(1.0, tau * max(L, 1.0))
    return margins


def _violates(name, margin, strict):
    if name in ("growth", "theta"):
        return margin < 0
    return margin <= 0 if strict else margin < 0


@dataclass
class StepsizeReport:
    iterations: int
    violations: list
    worst_margins: dict
    tau_min: float
    floor: float

    @property
    def ok(self):
        return not self.violations and self.tau_min >= self.floor * (1 - 1e-12)


def stepsize_invariants(trace, beta, c, norm_A, variant="base"):
    """Scan an APDA trace for stepsize invariant violations.

    Also returns the uniform floor on ``tau_k`` implied by the largest
    observed ``L_k``; ``report.ok`` requires ``min tau_k`` above it.
    """
    worst = {}
    violations = []
    tau_prev = theta_prev = None
    L_max = 0.0
    tau_min = math.inf
    strict = norm_A > 0
    for rec in trace:
        m = check_stepsize_step(rec.tau, tau_prev, rec.theta, theta_prev, rec.L_k,
                                beta, c, norm_A, variant)
        for name, margin in m.items():
            worst[name] = min(worst.get(name, math.inf), margin)
            if _violates(name, margin, strict):
                violations.append((rec.k, name, margin))
        tau_prev, theta_prev = rec.tau, rec.theta
        L_max = max(L_max, rec.L_k)
        tau_min = min(tau_min, rec.tau)
    floor = _first_term(L_max, beta, c, norm_A, variant) if (L_max > 0 or norm_A > 0) else 0.0
    return StepsizeReport(len(trace), violations, worst, tau_min, floor)


# --------------------------------------------------------------------------
# image quality


def psnr(reference, candidate, peak=1.0):
    """Peak signal-to-noise ratio in dB; ``inf`` for identical images."""
    reference = np.asarray(reference, dtype=float)
    candidate = np.asarray(candidate, dtype=float)
    if reference.shape != candidate.shape:
        raise ValueError(f"shape mismatch: {reference.shape} vs {candidate.shape}")
    mse = float(np.mean((reference - candidate) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def ssim(reference, candidate, peak=1.0, window=8, k1=0.01, k2=0.03):
    """Mean SSIM over all ``window x window`` patches (uniform weights).

    Patch statistics use population (biased) variances.
    """
    reference = np.asarray(reference, dtype=float)
    candidate = np.asarray(candidate, dtype=float)
    if reference.shape != candidate.shape:
        raise ValueError(f"shape mismatch: {reference.shape} vs {candidate.shape}")
    if reference.ndim != 2 or min(reference.shape) < window:
        raise ValueError(f"images must be 2-D and at least {window}x{window}")
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    a = sliding_window_view(reference, (window, window))
    b = sliding_window_view(candidate, (window, window))
    mu_a = a.mean(axis=(-2, -1))
    mu_b = b.mean(axis=(-2, -1))
    var_a = (a * a).mean(axis=(-2, -1)) - mu_a**2
    var_b = (b * b).mean(axis=(-2, -1)) - mu_b**2
    cov = (a * b).mean(axis=(-2, -1)) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def sigma_min(problem):
    return linop.smallest_singular_value(problem.A)
