"""Fast invariant suite behind ``apda-kit check``."""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import diagnostics, linop, problems, prox, solvers

__all__ = [
    "GroupResult",
    "SelfCheckReport",
    "QuarticObjective",
    "finite_difference_gradient",
    "self_check",
    "inject_fault",
    "FAULTS",
]


@dataclass
class GroupResult:
    name: str
    checks: int = 0
    failures: int = 0
    worst_margin: float = math.inf
    notes: list = field(default_factory=list)

    @property
    def ok(self):
        return self.failures == 0 and self.checks > 0

    def add(self, margin, note=None):
        """Record one check; ``margin >= 0`` passes."""
        self.checks += 1
        self.worst_margin = min(self.worst_margin, margin)
        if not margin >= 0:
            self.failures += 1
            if note is not None and len(self.notes) < 5:
                self.notes.append(note)

    def line(self):
        status = "PASS" if self.ok else "FAIL"
        return (f"{status} {self.name:<10} checks={self.checks:<5d} failures={self.failures:<4d} "
                f"worst_margin={self.worst_margin:.3e}")


@dataclass
class SelfCheckReport:
    groups: list

    @property
    def ok(self):
        return all(g.ok for g in self.groups)

    def lines(self):
        return [g.line() for g in self.groups] + [f"{'PASS' if self.ok else 'FAIL'} overall"]


class QuarticObjective(problems.SmoothObjective):
    """``sum(x**4) / 4``: curvature shrinks near the minimizer, so stepsizes must grow."""

    kind = "quartic"

    def value_and_gradient(self, x):
        x = self._check(x)
        return float(np.sum(x**4) / 4.0), x**3


def finite_difference_gradient(fun, x, h=None):
    """Central differences with step ``1e-6 * (1 + ||x||)``."""
    x = np.asarray(x, dtype=float)
    if h is None:
        h = 1e-6 * (1.0 + np.linalg.norm(x))
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


# --------------------------------------------------------------------------
# fault injection

def _fast_growth(theta_prev, variant):
    return 1.5 * math.sqrt(1.0 + theta_prev)


FAULTS = {"growth-cap": ("_growth_factor", _fast_growth)}


@contextlib.contextmanager
def inject_fault(name):
    """Temporarily replace a solver internal with a deliberately wrong version."""
    if name is None:
        yield
        return
    if name not in FAULTS:
        raise ValueError(f"unknown fault {name!r}; known: {sorted(FAULTS)}")
    attr, replacement = FAULTS[name]
    original = getattr(solvers, attr)
    setattr(solvers, attr, replacement)
    try:
        yield
    finally:
        setattr(solvers, attr, original)


# --------------------------------------------------------------------------
# groups

def _operators(rng):
    dense = linop.DenseOperator(rng.standard_normal((7, 5)))
    sparse = linop.SparseOperator(sp.random(9, 6, density=0.4, random_state=1, format="csr"))
    grad = linop.GradientOperator(5, 4)
    mask = linop.MaskOperator(20, rng.choice(20, size=8, replace=False))
    return {
        "dense": dense,
        "sparse": sparse,
        "gradient": grad,
        "mask": mask,
        "identity": linop.IdentityOperator(6),
        "composed": linop.compose(grad, linop.MaskOperator(20, np.arange(20))),
    }


def check_adjoints(probes=100, seed=0):
    res = GroupResult("adjoints")
    rng = np.random.default_rng(seed)
    for name, op in _operators(rng).items():
        for _ in range(probes):
            x = rng.standard_normal(op.in_dim)
            y = rng.standard_normal(op.out_dim)
            ax = op.apply(x)
            err = abs(ax @ y - x @ op.adjoint_apply(y))
            tol = 1e-10 * (1 + np.linalg.norm(ax) * np.linalg.norm(y))
            res.add(tol - err, f"{name}: |<Ax,y> - <x,A^T y>| = {err:.3e}")
    return res


def check_moreau(probes=50, seed=0):
    res = GroupResult("moreau")
    rng = np.random.default_rng(seed)
    regs = [prox.l1(0.7), prox.group_l21(0.4, prox.gradient_groups(3, 4)), prox.zero()]
    for reg in regs:
        for _ in range(probes):
            z = 3 * rng.standard_normal(24)
            sigma = float(10 ** rng.uniform(-3, 3))
            a = prox.prox_g_conj(reg, sigma, z)
            b = prox.prox_conj_via_moreau(reg, sigma, z)
            err = np.abs(a - b).max()
            res.add(1e-10 * (1 + np.abs(z).max()) - err, f"{reg.kind}, sigma={sigma:.3g}: {err:.3e}")
    return res


def _objectives(seed):
    rng = np.random.default_rng(seed)
    log = problems.make_synthetic_logistic(30, 8, seed=seed).f
    mask = problems.make_inpainting_problem(
        problems.piecewise_constant_image(4, 5, seed=seed), seed=seed).f
    pr = problems.make_phase_retrieval_problem(
        problems.piecewise_constant_image(4, 4, seed=seed), seed=seed).f
    quad = problems.make_quadratic_testproblem(6, 3, seed=seed, reference=False).f
    return rng, {"logistic": log, "masked-least-squares": mask, "phase-retrieval": pr,
                 "quadratic": quad}


def check_gradients(points=20, seed=0):
    res = GroupResult("gradients")
    rng, objs = _objectives(seed)
    for name, obj in objs.items():
        for _ in range(points):
            x = rng.standard_normal(obj.dim)
            g = obj.gradient(x)
            fd = finite_difference_gradient(obj.value, x)
            rel = np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12)
            res.add(1e-5 - rel, f"{name}: relative error {rel:.3e}")
    return res


def scalar_problem(dim=1):
    """``A = 0``, ``g = 0`` with a quartic ``f``: APDA reduces to adaptive gradient descent."""
    return problems.SaddleProblem(QuarticObjective(dim), prox.zero(), linop.ZeroOperator(dim))


def check_stepsizes(iters=300):
    res = GroupResult("stepsize")
    runs = [
        (scalar_problem(), np.array([1.0]), np.zeros(1), solvers.ApdaConfig(beta=1.0, max_iters=iters)),
        (scalar_problem(3), np.array([1.0, -0.5, 2.0]), np.zeros(3),
         solvers.ApdaConfig(beta=1.0, max_iters=iters)),
    ]
    quad = problems.make_quadratic_testproblem(reference=False)
    for variant in ("base", "strongly-convex"):
        cfg = solvers.ApdaConfig(beta=1.0, variant=variant, max_iters=iters,
                                 c=0.0 if variant == "strongly-convex" else 1e-15)
        runs.append((quad, np.zeros(quad.dim_x), np.zeros(quad.dim_y), cfg))
    for prob, x0, y0, cfg in runs:
        out = solvers.apda_run(prob, x0, y0, cfg)
        rep = diagnostics.stepsize_invariants(out.trace, cfg.beta, cfg.c, out.norm_A, cfg.variant)
        by_k = {}
        for k, name, margin in rep.violations:
            by_k.setdefault(k, []).append((name, margin))
        for rec in out.trace:
            hits = by_k.get(rec.k)
            res.add(min(m for _, m in hits) if hits else math.inf,
                    f"k={rec.k} ({cfg.variant}): {hits}")
        res.worst_margin = min(res.worst_margin, *rep.worst_margins.values())
        res.add(rep.tau_min - rep.floor * (1 - 1e-12), f"tau_min {rep.tau_min:.3e} below floor")
    return res


def check_energy(iters=2000):
    res = GroupResult("energy")
    prob = problems.make_quadratic_testproblem()
    beta = 1.0
    mon = diagnostics.ErgodicGapMonitor(prob, beta, every=10**9)
    out = solvers.apda_run(prob, np.zeros(prob.dim_x), np.zeros(prob.dim_y),
                           solvers.ApdaConfig(beta=beta, max_iters=iters), on_iteration=mon)
    M = mon.M()
    for rec in out.trace:
        res.add(M + 1e-8 - rec.energy, f"k={rec.k}: energy {rec.energy:.6g} > M {M:.6g}")
    return res


GROUPS = {
    "adjoints": check_adjoints,
    "moreau": check_moreau,
    "gradients": check_gradients,
    "stepsize": check_stepsizes,
    "energy": check_energy,
}


def self_check(fault=None, groups=None):
    """Run the invariant groups, optionally under an injected fault."""
    names = list(GROUPS) if groups is None else list(groups)
    out = []
    with inject_fault(fault):
        for name in names:
            try:
                out.append(GROUPS[name]())
            except (AssertionError, ArithmeticError, ValueError) as exc:
                res = GroupResult(name)
                res.add(-math.inf, f"{type(exc).__name__}: {exc}")
                out.append(res)
    return SelfCheckReport(out)
