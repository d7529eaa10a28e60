"""Adaptive primal-dual method and its fixed-stepsize / accelerated baselines.

All solvers share one iteration record schema and the callback contract
``on_iteration(record, iterates)``: called once per iteration, in order,
with read-only views of the iterates.
"""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import linop, prox
from .diagnostics import (
    InvariantViolation,
    IterationRecord,
    Iterates,
    _readonly,
    check_stepsize_step,
    energy,
)
from .problems import ReferenceSolution

logger = logging.getLogger(__name__)

__all__ = [
    "ApdaConfig",
    "CvaConfig",
    "SolverState",
    "RunResult",
    "NonFiniteIterate",
    "ValidityGateError",
    "local_lipschitz",
    "apda_stepsize",
    "apda_run",
    "cva_run",
    "cva_gate",
    "gate_passes",
    "cva_stepsizes_from_p",
    "fista_run",
    "reference_solution",
]

VARIANTS = ("base", "strongly-convex")


class NonFiniteIterate(FloatingPointError):
    """Raised when an iterate or gradient stops being finite.

    ``last_record`` is the record of the last finite iteration (or None).
    """

    def __init__(self, message, last_record=None):
        super().__init__(message)
        self.last_record = last_record


class ValidityGateError(ValueError):
    def __init__(self, message, values):
        super().__init__(message)
        self.values = values


@dataclass
class ApdaConfig:
    beta: float = 1.0
    c: float = 1e-15
    tau_init: float = 1e-9
    variant: str = "base"
    max_iters: int = 1000
    residual_tol: float = 0.0
    norm_A: float | None = None
    check_invariants: bool = False

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        # c = 0 is admitted: boundedness and the strongly convex rule do not need c > 0
        if not 0 <= self.c < 1:
            raise ValueError("c must lie in [0, 1)")
        if not self.tau_init > 0:
            raise ValueError("tau_init must be positive")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if self.residual_tol < 0:
            raise ValueError("residual_tol must be nonnegative")


@dataclass
class CvaConfig:
    tau: float
    sigma: float
    L_global: float
    norm_A: float | None = None
    max_iters: int = 1000
    residual_tol: float = 0.0
    allow_invalid: bool = False


@dataclass
class SolverState:
    """Live variables of the adaptive recurrence at the start of iteration ``k``.

    ``tau_prev is None`` stands for the infinite initial stepsize.
    """

    k: int
    x_prev: np.ndarray
    x_cur: np.ndarray
    y_cur: np.ndarray
    grad_prev: np.ndarray
    grad_cur: np.ndarray | None = None
    tau_prev: float | None = None
    tau_cur: float | None = None
    theta_prev: float = 1.0
    theta_cur: float | None = None
    L_cur: float | None = None


@dataclass
class RunResult:
    x: np.ndarray
    y: np.ndarray | None
    trace: list = field(repr=False)
    stop_reason: str
    iterations: int
    norm_A: float | None = None

    @property
    def final(self):
        return self.trace[-1] if self.trace else None


def local_lipschitz(x_cur, x_prev, grad_cur, grad_prev):
    """``||grad_cur - grad_prev|| / ||x_cur - x_prev||``, 0 for coincident points."""
    if not np.isfinite(grad_cur).all():
        raise NonFiniteIterate("non-finite gradient at the current iterate")
    if not np.isfinite(grad_prev).all():
        raise NonFiniteIterate("non-finite gradient at the previous iterate")
    dx = np.linalg.norm(x_cur - x_prev)
    if dx == 0.0:
        return 0.0
    return float(np.linalg.norm(grad_cur - grad_prev) / dx)


def _growth_factor(theta_prev, variant):
    if variant == "strongly-convex":
        return math.sqrt(1.0 + theta_prev / 2.0)
    return math.sqrt(1.0 + theta_prev)


def apda_stepsize(L_k, tau_prev, theta_prev, config, norm_A=None):
    """One application of the adaptive stepsize rule.

    Returns ``(tau_k, sigma_k, theta_k)``. ``tau_prev=None`` is the
    infinite initial stepsize, for which ``theta_k`` is defined as 0.
    """
    if norm_A is None:
        norm_A = config.norm_A
    if L_k < 0 or norm_A is None or norm_A < 0:
        raise ValueError("need L_k >= 0 and a nonnegative norm_A")
    beta = config.beta
    if config.variant == "strongly-convex":
        radicand = 4.0 * L_k * L_k + beta * norm_A * norm_A
    else:
        radicand = L_k * L_k + beta / (1.0 - config.c) * norm_A * norm_A
    first = math.inf if radicand == 0.0 else 1.0 / (2.0 * math.sqrt(radicand))
    if tau_prev is None:
        if math.isinf(first):
            raise ValueError("degenerate problem: unbounded stepsize (L_k = 0 and ||A|| = 0)")
        tau = first
        theta = 0.0
    else:
        tau = min(first, tau_prev * _growth_factor(theta_prev, config.variant))
        theta = tau / tau_prev
    return tau, beta * tau, theta


def _emit(on_iteration, record, it):
    if on_iteration is not None:
        on_iteration(record, it)


def _finite(*arrays):
    return all(np.isfinite(a).all() for a in arrays)


def apda_run(problem, x0, y0, config, on_iteration=None, keep_trace=True):
    """Adaptive primal-dual algorithm.

    Per loop iteration: one gradient, one ``A`` and one ``A^T``
    application. ``A x~_k`` is formed from the cached ``A x_k`` and
    ``A x_{k-1}`` by linearity.

    Returns
    -------
    RunResult
        ``x``/``y`` are the last computed iterates; ``stop_reason`` is
        ``"converged"`` or ``"max_iters"``.
    """
    f, reg, A = problem.f, problem.reg, problem.A
    x0 = np.array(x0, dtype=float)
    y0 = np.array(y0, dtype=float)
    if x0.shape != (A.in_dim,) or y0.shape != (A.out_dim,):
        raise ValueError(
            f"x0/y0 shapes {x0.shape}/{y0.shape} do not match A ({A.out_dim}x{A.in_dim})"
        )
    norm_A = config.norm_A if config.norm_A is not None else linop.operator_norm(A)
    beta = config.beta
    ref = problem.reference
    trace = []
    start = time.perf_counter_ns()

    _, grad0 = f.value_and_gradient(x0)
    aty = A.adjoint_apply(y0)
    if not _finite(grad0, aty):
        raise NonFiniteIterate("non-finite gradient at x_0")
    x1 = x0 - config.tau_init * (grad0 + aty)

    state = SolverState(k=1, x_prev=x0, x_cur=x1, y_cur=y0, grad_prev=grad0)
    ax_prev = None
    last = None
    stop_reason = "max_iters"

    for k in range(1, config.max_iters + 1):
        state.k = k
        x, y = state.x_cur, state.y_cur
        fx, grad = f.value_and_gradient(x)
        if not (math.isfinite(fx) and _finite(grad)):
            raise NonFiniteIterate(f"non-finite objective or gradient at k={k}", last)
        state.grad_cur = grad
        L = local_lipschitz(x, state.x_prev, grad, state.grad_prev)
        tau, sigma, theta = apda_stepsize(L, state.tau_prev, state.theta_prev, config, norm_A)
        state.tau_cur, state.theta_cur, state.L_cur = tau, theta, L
        if config.check_invariants:
            _check_live(state, config, norm_A, problem.convex)

        ax = A.apply(x)
        primal_res = float(np.linalg.norm(grad + aty))
        y_hat = prox.prox_g_conj(reg, sigma, y + sigma * ax)
        dual_res = float(np.linalg.norm(y - y_hat) / sigma)
        record = IterationRecord(
            k=k, tau=tau, sigma=sigma, theta=theta, L_k=L, f=fx,
            F=fx + reg.value(ax), primal_res=primal_res, dual_res=dual_res,
            energy=None if ref is None else energy(x, y, ref.x, ref.y, beta),
            wall_time_ns=time.perf_counter_ns() - start,
        )
        if keep_trace:
            trace.append(record)

        if math.hypot(primal_res, dual_res) <= config.residual_tol:
            _emit(on_iteration, record, Iterates(k, *_readonly(state.x_prev, x, y)))
            stop_reason = "converged"
            break

        ax_tilde = ax if theta == 0.0 else (1.0 + theta) * ax - theta * ax_prev
        y_next = prox.prox_g_conj(reg, sigma, y + sigma * ax_tilde)
        aty = A.adjoint_apply(y_next)
        x_next = x - tau * (grad + aty)
        if not _finite(x_next, y_next):
            raise NonFiniteIterate(f"non-finite update produced at k={k}", record)

        _emit(on_iteration, record,
              Iterates(k, *_readonly(state.x_prev, x, y, x_next, y_next)))
        last = record

        state.x_prev, state.grad_prev = x, grad
        state.x_cur, state.y_cur = x_next, y_next
        state.tau_prev, state.theta_prev = tau, theta
        ax_prev = ax

    return RunResult(state.x_cur, state.y_cur, trace, stop_reason, state.k, norm_A)


def _check_live(state, config, norm_A, convex):
    margins = check_stepsize_step(
        state.tau_cur, state.tau_prev, state.theta_cur,
        state.theta_prev if state.tau_prev is not None else None,
        state.L_cur, config.beta, config.c, norm_A, config.variant,
    )
    strict = norm_A > 0
    bad = {n: m for n, m in margins.items()
           if (m < 0 if n in ("growth", "theta") or not strict else m <= 0)}
    if not bad:
        return
    msg = f"stepsize invariants violated at k={state.k}: {bad}"
    if convex:
        raise InvariantViolation(msg)
    warnings.warn(msg, RuntimeWarning, stacklevel=3)


# Relative slack on the gate so presets that meet it with equality survive roundoff.
GATE_RTOL = 1e-12


def cva_gate(tau, sigma, L_global, norm_A):
    """Returns ``(lhs, rhs)`` of ``(1/tau - L)(1/sigma) >= ||A||^2``."""
    return (1.0 / tau - L_global) / sigma, norm_A * norm_A


def gate_passes(tau, sigma, L_global, norm_A):
    """Decide the gate as ``1/tau >= L + sigma ||A||^2``, which avoids cancellation."""
    return 1.0 / tau >= (L_global + sigma * norm_A * norm_A) * (1.0 - GATE_RTOL)


def cva_stepsizes_from_p(p, L_global, norm_A):
    """Stepsizes meeting the gate with equality: ``tau = 1/(||A||/p + L)``, ``sigma = 1/(p ||A||)``."""
    return 1.0 / (norm_A / p + L_global), 1.0 / (p * norm_A)


def cva_run(problem, x0, y0, config, on_iteration=None, keep_trace=True):
    """Condat-Vu iteration with fixed stepsizes and unit extrapolation.

    Same order of operations and record schema as :func:`apda_run`;
    ``x_{-1} = x_0`` so the first extrapolation is trivial.
    """
    f, reg, A = problem.f, problem.reg, problem.A
    norm_A = config.norm_A if config.norm_A is not None else linop.operator_norm(A)
    tau, sigma = config.tau, config.sigma
    if not (tau > 0 and sigma > 0):
        raise ValueError("tau and sigma must be positive")
    lhs, rhs = cva_gate(tau, sigma, config.L_global, norm_A)
    if not gate_passes(tau, sigma, config.L_global, norm_A) and not config.allow_invalid:
        raise ValidityGateError(
            f"stepsize validity gate failed: (1/tau - L)(1/sigma) = {lhs:.6g} < "
            f"||A||^2 = {rhs:.6g} (tau={tau:.6g}, sigma={sigma:.6g}, L={config.L_global:.6g})",
            {"lhs": lhs, "rhs": rhs, "tau": tau, "sigma": sigma, "L": config.L_global},
        )
    beta = sigma / tau
    ref = problem.reference
    x = np.array(x0, dtype=float)
    y = np.array(y0, dtype=float)
    x_prev = x
    grad_prev = None
    ax_prev = None
    aty = A.adjoint_apply(y)
    trace = []
    start = time.perf_counter_ns()
    last = None
    stop_reason = "max_iters"
    k = 0

    for k in range(1, config.max_iters + 1):
        fx, grad = f.value_and_gradient(x)
        if not (math.isfinite(fx) and _finite(x, grad)):
            raise NonFiniteIterate(f"non-finite iterate or gradient at k={k}", last)
        L = None if grad_prev is None else local_lipschitz(x, x_prev, grad, grad_prev)
        ax = A.apply(x)
        primal_res = float(np.linalg.norm(grad + aty))
        dual_res = float(np.linalg.norm(y - prox.prox_g_conj(reg, sigma, y + sigma * ax)) / sigma)
        record = IterationRecord(
            k=k, tau=tau, sigma=sigma, theta=1.0, L_k=L, f=fx,
            F=fx + reg.value(ax), primal_res=primal_res, dual_res=dual_res,
            energy=None if ref is None else energy(x, y, ref.x, ref.y, beta),
            wall_time_ns=time.perf_counter_ns() - start,
        )
        if keep_trace:
            trace.append(record)
        if math.hypot(primal_res, dual_res) <= config.residual_tol:
            _emit(on_iteration, record, Iterates(k, *_readonly(x_prev, x, y)))
            stop_reason = "converged"
            break

        ax_tilde = ax if ax_prev is None else 2.0 * ax - ax_prev
        y_next = prox.prox_g_conj(reg, sigma, y + sigma * ax_tilde)
        aty = A.adjoint_apply(y_next)
        x_next = x - tau * (grad + aty)
        if not _finite(x_next, y_next):
            raise NonFiniteIterate(f"non-finite update produced at k={k}", record)
        _emit(on_iteration, record, Iterates(k, *_readonly(x_prev, x, y, x_next, y_next)))
        last = record
        x_prev, grad_prev, ax_prev = x, grad, ax
        x, y = x_next, y_next

    return RunResult(x, y, trace, stop_reason, k, norm_A)


def fista_run(f, reg, x0, L_global, max_iters, on_iteration=None, tol=0.0,
              keep_trace=True):
    """Accelerated proximal gradient on ``f(x) + g(x)`` with step ``1/L_global``.

    Records carry ``theta`` = momentum weight and ``primal_res`` = norm of
    the gradient mapping at the extrapolated point.
    """
    if not L_global > 0:
        raise ValueError("L_global must be positive")
    if reg.kind not in ("l1", "zero"):
        raise ValueError("FISTA needs a primal prox; use the l1 or zero regularizer")
    step = 1.0 / L_global
    x = np.array(x0, dtype=float)
    z = x.copy()
    t = 1.0
    trace = []
    start = time.perf_counter_ns()
    stop_reason = "max_iters"
    last = None
    k = 0
    for k in range(1, max_iters + 1):
        _, grad = f.value_and_gradient(z)
        if not _finite(z, grad):
            raise NonFiniteIterate(f"non-finite iterate or gradient at k={k}", last)
        x_next = prox.prox_g(reg, step, z - step * grad)
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        momentum = (t - 1.0) / t_next
        mapping = float(np.linalg.norm(z - x_next)) * L_global
        fx = f.value(x_next)
        record = IterationRecord(
            k=k, tau=step, sigma=None, theta=momentum, L_k=None, f=fx,
            F=fx + reg.value(x_next), primal_res=mapping, dual_res=None,
            wall_time_ns=time.perf_counter_ns() - start,
        )
        if keep_trace:
            trace.append(record)
        _emit(on_iteration, record, Iterates(k, *_readonly(x, x_next), None))
        last = record
        z = x_next + momentum * (x_next - x)
        x, t = x_next, t_next
        if mapping <= tol:
            stop_reason = "converged"
            break
    return RunResult(x, None, trace, stop_reason, k)


def reference_solution(problem, L_global, tol=1e-10, max_iters=100_000, beta=1.0):
    """Saddle point from a long Condat-Vu run, gated on the optimality residual."""
    norm_A = linop.operator_norm(problem.A, tol=1e-13)
    a = beta * norm_A * norm_A
    tau = 0.95 * 2.0 / (L_global + math.sqrt(L_global * L_global + 4.0 * a))
    config = CvaConfig(tau=tau, sigma=beta * tau, L_global=L_global, norm_A=norm_A,
                       max_iters=max_iters, residual_tol=tol)
    res = cva_run(problem, np.zeros(problem.dim_x), np.zeros(problem.dim_y), config,
                  keep_trace=False)
    primal, dual = problem.residuals(res.x, res.y, config.sigma)
    residual = math.hypot(primal, dual)
    if residual > tol:
        raise RuntimeError(
            f"reference run did not reach residual {tol:g} in {max_iters} iterations "
            f"(got {residual:.3e})"
        )
    return ReferenceSolution(
        x=res.x, y=res.y, F=problem.objective(res.x), residual=residual,
        note=f"Condat-Vu, tau={tau:.6e}, {res.iterations} iterations, residual gate {tol:g}",
    )
