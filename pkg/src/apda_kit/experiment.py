"""JSON-configured experiment runner: problem construction, solver runs, sweeps, CSV traces.

Config keys (all optional except ``problem`` and ``solvers``)::

    {
      "name": "logistic-desk",
      "seed": 0,
      "out_dir": "runs/logistic-desk",
      "record_every": 1,
      "init": "zeros",                       # or "gaussian" (x0 and y0 ~ N(0, I))
      "problem": {"kind": "logistic", "m": 200, "d": 50, "lambda_frac": 0.005},
      "solvers": [{"name": "apda", "beta": 10.0, "max_iters": 2000},
                  {"name": "fista", "max_iters": 20000}],
      "sweep": {"preset": "beta", "low": 1e-3, "high": 1e6, "count": 40}
    }

See README.md for the per-kind problem keys and per-solver keys.
"""

from __future__ import annotations

import concurrent.futures as cf
import csv
import json
import math
import os
import time
import traceback
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import diagnostics, io, linop, problems, solvers

__all__ = [
    "ExperimentConfig",
    "ProblemSpec",
    "SolverSpec",
    "SweepSpec",
    "ConfigError",
    "load_config",
    "build_problem",
    "run_experiment",
    "format_value",
    "SOLVER_NAMES",
    "SWEEP_PRESETS",
]

SOLVER_NAMES = ("apda", "apda-sc", "cva", "fista")
SWEEP_PRESETS = ("beta", "cva-p", "cva-tau-xi")
PROBLEM_KINDS = ("logistic", "inpainting", "phase-retrieval", "quadratic")

PROBLEM_KEYS = {
    "logistic": {"m", "d", "lambda_frac", "density", "noise", "libsvm", "n_features"},
    "inpainting": {"height", "width", "image", "keep_ratio", "lambda"},
    "phase-retrieval": {"height", "width", "image", "m", "density", "corrupt_frac", "lambda"},
    "quadratic": {"dim_x", "dim_y", "mu", "L", "lambda"},
}
STEPSIZE_KEYS = ("p", "tau", "sigma", "xi")
_COMMON_KEYS = {"max_iters", "residual_tol"}
SOLVER_KEYS = {
    "apda": _COMMON_KEYS | {"beta", "c", "tau_init"},
    "apda-sc": _COMMON_KEYS | {"beta", "tau_init"},
    "cva": _COMMON_KEYS | set(STEPSIZE_KEYS) | {"allow_invalid", "L_global"},
    "fista": _COMMON_KEYS | {"L_global"},
}

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_GATE = 3


class ConfigError(ValueError):
    pass


@dataclass
class ProblemSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in PROBLEM_KINDS:
            raise ConfigError(f"unknown problem kind {self.kind!r}; expected one of {PROBLEM_KINDS}")
        unknown = set(self.params) - PROBLEM_KEYS[self.kind]
        if unknown:
            raise ConfigError(f"unknown keys for problem {self.kind!r}: {sorted(unknown)}")
        for key in ("libsvm", "image"):
            path = self.params.get(key)
            if path is not None and not Path(path).is_file():
                raise ConfigError(f"problem.{key} file not found: {path}")


@dataclass
class SolverSpec:
    name: str
    params: dict = field(default_factory=dict)
    label: str | None = None

    def __post_init__(self):
        if self.name not in SOLVER_NAMES:
            raise ConfigError(f"unknown solver {self.name!r}; expected one of {SOLVER_NAMES}")
        unknown = set(self.params) - SOLVER_KEYS[self.name]
        if unknown:
            raise ConfigError(f"unknown keys for solver {self.name!r}: {sorted(unknown)}")
        if self.label is None:
            self.label = self.name


@dataclass
class SweepSpec:
    preset: str
    low: float
    high: float
    count: int = 40
    xi_low: float | None = None
    xi_high: float | None = None
    xi_count: int | None = None

    def __post_init__(self):
        if self.preset not in SWEEP_PRESETS:
            raise ConfigError(f"unknown sweep preset {self.preset!r}; expected one of {SWEEP_PRESETS}")
        if self.count < 1 or (self.xi_count is not None and self.xi_count < 1):
            raise ConfigError("sweep grids need count >= 1")
        if not 0 < self.low <= self.high:
            raise ConfigError("sweep bounds need 0 < low <= high")
        if self.preset == "cva-tau-xi" and (self.xi_low is None or self.xi_high is None):
            raise ConfigError("cva-tau-xi sweep needs xi_low and xi_high")

    def grid(self):
        return np.logspace(math.log10(self.low), math.log10(self.high), self.count)

    def xi_grid(self):
        n = self.xi_count if self.xi_count is not None else self.count
        return np.logspace(math.log10(self.xi_low), math.log10(self.xi_high), n)


@dataclass
class ExperimentConfig:
    problem: ProblemSpec
    solvers: list
    sweep: SweepSpec | None = None
    seed: int = 0
    out_dir: str = "runs"
    record_every: int = 1
    init: str = "zeros"
    name: str = "experiment"

    def __post_init__(self):
        if not self.solvers:
            raise ConfigError("config needs at least one solver")
        if self.record_every < 1:
            raise ConfigError("record_every must be a positive integer")
        if self.init not in ("zeros", "gaussian"):
            raise ConfigError("init must be 'zeros' or 'gaussian'")
        labels = [s.label for s in self.solvers]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"solver labels must be unique, got {labels}")

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        try:
            prob = dict(data.pop("problem"))
            solver_list = data.pop("solvers")
        except KeyError as exc:
            raise ConfigError(f"config is missing required key {exc.args[0]!r}") from None
        problem = ProblemSpec(prob.pop("kind", None), prob)
        specs = []
        for entry in solver_list:
            entry = dict(entry)
            name = entry.pop("name", None)
            label = entry.pop("label", None)
            specs.append(SolverSpec(name, entry, label))
        sweep = data.pop("sweep", None)
        if sweep is not None:
            try:
                sweep = SweepSpec(**sweep)
            except TypeError as exc:
                raise ConfigError(f"bad sweep section: {exc}") from None
        known = {"seed", "out_dir", "record_every", "init", "name"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(problem=problem, solvers=specs, sweep=sweep, **data)

    def to_dict(self):
        out = asdict(self)
        out["problem"] = {"kind": self.problem.kind, **self.problem.params}
        out["solvers"] = [{"name": s.name, "label": s.label, **s.params} for s in self.solvers]
        if self.sweep is not None:
            out["sweep"] = {k: v for k, v in asdict(self.sweep).items() if v is not None}
        return out


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return ExperimentConfig.from_dict(data)


# --------------------------------------------------------------------------
# problem construction


@dataclass
class BuiltProblem:
    problem: problems.SaddleProblem
    L_global: float | None
    mu: float | None = None


def _image(params, seed, default_shape):
    if "image" in params:
        return io.load_pgm(params["image"])
    h = params.get("height", default_shape[0])
    w = params.get("width", default_shape[1])
    return problems.piecewise_constant_image(h, w, seed=seed)


def build_problem(spec, seed):
    p = spec.params
    if spec.kind == "logistic":
        frac = p.get("lambda_frac", 0.005)
        if "libsvm" in p:
            Q, b = io.read_libsvm(p["libsvm"], p.get("n_features"))
            prob = problems.make_logistic_problem(Q, b, frac)
        else:
            prob = problems.make_synthetic_logistic(
                p.get("m", 200), p.get("d", 50), frac, seed=seed,
                density=p.get("density", 0.2), noise=p.get("noise", 0.5))
        return BuiltProblem(prob, prob.f.lipschitz_bound())
    if spec.kind == "inpainting":
        img = _image(p, seed, (32, 32))
        prob = problems.make_inpainting_problem(
            img, keep_ratio=p.get("keep_ratio", 0.4), lam=p.get("lambda", 1e-2), seed=seed)
        return BuiltProblem(prob, 1.0)
    if spec.kind == "phase-retrieval":
        img = _image(p, seed, (16, 16))
        prob = problems.make_phase_retrieval_problem(
            img, m=p.get("m"), density=p.get("density", 0.3),
            corrupt_frac=p.get("corrupt_frac", 0.1), lam=p.get("lambda", 1e2), seed=seed)
        return BuiltProblem(prob, None)
    mu, L = p.get("mu", 0.5), p.get("L", 5.0)
    prob = problems.make_quadratic_testproblem(
        p.get("dim_x", 10), p.get("dim_y", 4), mu, L, seed=seed, lam=p.get("lambda", 0.05))
    return BuiltProblem(prob, L, mu)


def initial_point(problem, init, seed):
    if init == "zeros":
        return np.zeros(problem.dim_x), np.zeros(problem.dim_y)
    rng = np.random.default_rng([seed, 1])
    return rng.standard_normal(problem.dim_x), rng.standard_normal(problem.dim_y)


# --------------------------------------------------------------------------
# CSV output


def format_value(v):
    """CSV cell: empty for missing, ``repr`` for floats so values round-trip."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


class TraceWriter:
    """``on_iteration`` callback streaming thinned records to CSV.

    Rows are written for ``k = 1`` and every multiple of ``record_every``;
    :meth:`close` appends the last record if it was skipped.
    """

    def __init__(self, path, record_every=1):
        self.path = Path(path)
        self.record_every = record_every
        self._fh = open(self.path, "w", newline="", encoding="utf-8")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(diagnostics.CSV_COLUMNS)
        self._pending = None
        self.rows = 0

    def __call__(self, record, it=None):
        if record.k == 1 or record.k % self.record_every == 0:
            self._write(record)
            self._pending = None
        else:
            self._pending = record

    def _write(self, record):
        self._writer.writerow([format_value(v) for v in record.as_row()])
        self.rows += 1

    def close(self):
        if self._pending is not None:
            self._write(self._pending)
            self._pending = None
        self._fh.close()


def _chain(*callbacks):
    def call(record, it):
        for cb in callbacks:
            cb(record, it)
    return call


# --------------------------------------------------------------------------
# jobs


def _sci(v):
    return f"{v:.3e}"


def expand_jobs(config, sweep):
    """List of ``(label, solver_spec_dict, overrides, filename)``."""
    jobs = []
    for spec in config.solvers:
        base = {"name": spec.name, "label": spec.label, "params": dict(spec.params)}
        if not sweep or config.sweep is None:
            jobs.append((base, {}, f"{spec.label}.csv"))
            continue
        preset = config.sweep.preset
        if preset == "beta" and spec.name in ("apda", "apda-sc"):
            for beta in config.sweep.grid():
                jobs.append((base, {"beta": float(beta)}, f"{spec.label}_beta={_sci(beta)}.csv"))
        elif preset == "cva-p" and spec.name == "cva":
            for p in config.sweep.grid():
                jobs.append((base, {"p": float(p)}, f"{spec.label}_p={_sci(p)}.csv"))
        elif preset == "cva-tau-xi" and spec.name == "cva":
            for tau in config.sweep.grid():
                for xi in config.sweep.xi_grid():
                    jobs.append((base, {"tau": float(tau), "xi": float(xi), "sweep": True},
                                 f"{spec.label}_tau={_sci(tau)}_xi={_sci(xi)}.csv"))
        else:
            jobs.append((base, {}, f"{spec.label}.csv"))
    return jobs


def _cva_stepsizes(params, L, norm_A):
    if "p" in params and "tau" in params:
        # sigma = 1 / (p tau ||A||): the form used when no global L is available
        tau = params["tau"]
        return tau, 1.0 / (params["p"] * tau * norm_A)
    if "p" in params:
        if L is None:
            raise ConfigError("cva with p needs a global Lipschitz constant (set L_global)")
        return solvers.cva_stepsizes_from_p(params["p"], L, norm_A)
    if "tau" in params and "xi" in params:
        return params["tau"], params["tau"] * params["xi"]
    if "tau" in params and "sigma" in params:
        return params["tau"], params["sigma"]
    raise ConfigError("cva needs 'p', 'tau'+'sigma', 'tau'+'xi' or 'tau'+'p'")


def _certificates(built, solver_name, params, result, gap_monitor):
    prob = built.problem
    out = {}
    if solver_name in ("apda", "apda-sc"):
        variant = "strongly-convex" if solver_name == "apda-sc" else "base"
        c = 0.0 if variant == "strongly-convex" else params.get("c", 1e-15)
        rep = diagnostics.stepsize_invariants(result.trace, params.get("beta", 1.0), c,
                                              result.norm_A, variant)
        out["stepsize"] = {"ok": rep.ok, "violations": len(rep.violations),
                           "worst_margins": rep.worst_margins, "tau_min": rep.tau_min,
                           "floor": rep.floor}
        if gap_monitor is not None and gap_monitor.first is not None:
            M = gap_monitor.M()
            e_max = max((r.energy for r in result.trace if r.energy is not None), default=None)
            out["boundedness"] = {"M": M, "max_energy": e_max,
                                  "ok": e_max is None or e_max <= M + 1e-8}
            if variant == "base" and built.L_global is not None:
                g = diagnostics.gap_bound_check(gap_monitor, built.L_global,
                                                params.get("beta", 1.0), c, result.norm_A)
                out["gap_bound"] = {"ok": g.ok, "worst_ratio": g.worst_ratio,
                                    "violations": len(g.violations)}
    return out


def run_job(config_dict, job):
    """Run one solver on a freshly built problem. Safe to run in a subprocess."""
    config = ExperimentConfig.from_dict(config_dict)
    base, overrides, filename = job
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    name, label = base["name"], base["label"]
    params = dict(base["params"])
    if any(k in overrides for k in STEPSIZE_KEYS):
        # a sweep point fixes the stepsizes on its own
        params = {k: v for k, v in params.items() if k not in STEPSIZE_KEYS}
    params.update(overrides)
    sweep_point = params.pop("sweep", False)
    summary = {"solver": name, "label": label, "csv": filename,
               "params": {k: v for k, v in params.items()}, "status": "ok", "partial": False}

    built = build_problem(config.problem, config.seed)
    prob = built.problem
    L_global = params.get("L_global", built.L_global)
    x0, y0 = initial_point(prob, config.init, config.seed)
    max_iters = int(params.get("max_iters", 1000))
    tol = float(params.get("residual_tol", 0.0))

    writer = None
    gap_monitor = None
    t0 = time.perf_counter()
    try:
        if name == "cva":
            norm_A = linop.operator_norm(prob.A)
            tau, sigma = _cva_stepsizes(params, L_global, norm_A)
            lhs, rhs = solvers.cva_gate(tau, sigma, L_global or 0.0, norm_A)
            summary["gate"] = {"lhs": lhs, "rhs": rhs, "tau": tau, "sigma": sigma,
                               "L": L_global,
                               "ok": solvers.gate_passes(tau, sigma, L_global or 0.0, norm_A)}
            if sweep_point and not summary["gate"]["ok"]:
                summary["status"] = "gate-rejected"
                summary["csv"] = None
                return summary
        writer = TraceWriter(out_dir / filename, config.record_every)
        if name in ("apda", "apda-sc"):
            variant = "strongly-convex" if name == "apda-sc" else "base"
            cfg = solvers.ApdaConfig(
                beta=params.get("beta", 1.0),
                c=0.0 if variant == "strongly-convex" else params.get("c", 1e-15),
                tau_init=params.get("tau_init", 1e-9), variant=variant,
                max_iters=max_iters, residual_tol=tol)
            callback = writer
            if prob.reference is not None:
                gap_monitor = diagnostics.ErgodicGapMonitor(prob, cfg.beta, every=64)
                callback = _chain(writer, gap_monitor)
            result = solvers.apda_run(prob, x0, y0, cfg, on_iteration=callback)
        elif name == "cva":
            cfg = solvers.CvaConfig(
                tau=tau, sigma=sigma, L_global=L_global or 0.0, norm_A=norm_A,
                max_iters=max_iters, residual_tol=tol,
                allow_invalid=params.get("allow_invalid", False))
            result = solvers.cva_run(prob, x0, y0, cfg, on_iteration=writer)
        else:
            if prob.A.kind != "identity":
                raise ConfigError("fista needs A = identity (prox of g composed with A is not available)")
            if L_global is None:
                raise ConfigError("fista needs a global Lipschitz constant")
            result = solvers.fista_run(prob.f, prob.reg, x0, L_global, max_iters,
                                       on_iteration=writer, tol=tol)
    except solvers.ValidityGateError as exc:
        summary.update(status="gate-failed", error=str(exc), gate=exc.values)
        summary["partial"] = writer is not None and writer.rows > 0
        return summary
    except Exception as exc:  # noqa: BLE001 - reported with run context
        summary.update(status="error", error=f"{type(exc).__name__}: {exc}",
                       context=f"solver {label} on {config.problem.kind} (seed {config.seed})",
                       traceback=traceback.format_exc(limit=5))
        summary["partial"] = writer is not None and writer.rows > 0
        return summary
    finally:
        if writer is not None:
            writer.close()

    final = result.final
    taus = [r.tau for r in result.trace]
    summary.update(
        iterations=result.iterations, stop_reason=result.stop_reason,
        final_F=final.F, final_f=final.f, primal_res=final.primal_res,
        dual_res=final.dual_res, tau_min=min(taus), tau_max=max(taus),
        wall_time_s=time.perf_counter() - t0, norm_A=result.norm_A,
    )
    meta = prob.meta
    if "truth" in meta and "shape" in meta and meta.get("kind") == "inpainting":
        truth = meta["truth"].reshape(meta["shape"])
        summary["psnr"] = diagnostics.psnr(truth, result.x.reshape(meta["shape"]))
        summary["ssim"] = diagnostics.ssim(truth, result.x.reshape(meta["shape"]))
    summary["certificates"] = _certificates(built, name, params, result, gap_monitor)
    return summary


def worker_count(jobs):
    cap = os.environ.get("APDA_KIT_THREADS")
    n = max(1, int(jobs))
    if cap:
        n = min(n, max(1, int(cap)))
    return n


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def run_experiment(config, sweep=False, jobs=1):
    """Run every solver (or every sweep point) and write CSVs plus ``summary.json``.

    Returns ``(exit_code, summary)``. The exit code is nonzero when a run
    errors or a configured CVA stepsize pair fails the validity gate.
    Sweep points rejected by the gate are recorded but are not failures.
    """
    if sweep and config.sweep is None:
        raise ConfigError("sweep requested but the config has no sweep section")
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    job_list = expand_jobs(config, sweep)
    cfg_dict = config.to_dict()
    n = worker_count(jobs)
    if n == 1:
        runs = [run_job(cfg_dict, job) for job in job_list]
    else:
        with cf.ProcessPoolExecutor(max_workers=n) as pool:
            runs = list(pool.map(run_job, [cfg_dict] * len(job_list), job_list))

    code = EXIT_OK
    for r in runs:
        if r["status"] == "gate-failed":
            code = max(code, EXIT_GATE)
        elif r["status"] == "error":
            code = EXIT_FAILED if code == EXIT_OK else code
    summary = {"name": config.name, "seed": config.seed, "config": cfg_dict,
               "mode": "sweep" if sweep else "run", "exit_code": code, "runs": runs}
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(_json_safe(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return code, summary
