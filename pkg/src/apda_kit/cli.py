"""Command line entry point: ``apda-kit {run,sweep,check,norm}``."""

from __future__ import annotations

import argparse
import math
import sys

import numpy as np
import scipy.sparse as sp

from . import io, linop, problems
from .experiment import ConfigError, load_config, run_experiment
from .selfcheck import FAULTS, self_check

OPERATOR_SPECS = """\
operator specs:
  identity:N                 N x N identity
  zero:N[:M]                 zero map R^N -> R^M
  gradient:HxW               forward-difference image gradient
  mask:N:RATIO[:SEED]        random row selection keeping ceil(RATIO*N) rows
  dense:MxN[:SEED]           Gaussian M x N matrix
  sparse:MxN:DENSITY[:SEED]  sparse Gaussian M x N matrix
  phase:HxW[:DENSITY[:SEED]] phase retrieval measurement map for an HxW image
  libsvm:PATH                data matrix of a LIBSVM file
"""


def _dims(text):
    try:
        a, b = text.lower().split("x")
        return int(a), int(b)
    except ValueError:
        raise ValueError(f"expected dimensions like 16x16, got {text!r}") from None


def parse_operator_spec(spec):
    kind, _, rest = spec.partition(":")
    args = rest.split(":") if rest else []
    if kind == "libsvm":
        if not rest:
            raise ValueError("libsvm spec needs a path")
        Q, _ = io.read_libsvm(rest)
        return linop.SparseOperator(Q)

    def arg(i, conv, default=None):
        if i < len(args) and args[i] != "":
            return conv(args[i])
        if default is None:
            raise ValueError(f"operator spec {spec!r} is missing argument {i + 1}")
        return default

    if kind == "identity":
        return linop.IdentityOperator(arg(0, int))
    if kind == "zero":
        n = arg(0, int)
        return linop.ZeroOperator(n, arg(1, int, n))
    if kind == "gradient":
        return linop.GradientOperator(*_dims(arg(0, str)))
    if kind == "mask":
        n, ratio, seed = arg(0, int), arg(1, float), arg(2, int, 0)
        keep = math.ceil(ratio * n - 1e-9)
        idx = np.sort(np.random.default_rng(seed).choice(n, size=keep, replace=False))
        return linop.MaskOperator(n, idx)
    if kind == "dense":
        m, n = _dims(arg(0, str))
        return linop.DenseOperator(np.random.default_rng(arg(1, int, 0)).standard_normal((m, n)))
    if kind == "sparse":
        m, n = _dims(arg(0, str))
        rng = np.random.default_rng(arg(2, int, 0))
        mat = sp.random(m, n, density=arg(1, float), random_state=rng,
                        data_rvs=rng.standard_normal, format="csr")
        return linop.SparseOperator(mat)
    if kind == "phase":
        h, w = _dims(arg(0, str))
        d = h * w
        M = problems.phase_retrieval_measurements(
            d, problems.default_measurement_count(d), arg(1, float, 0.3), seed=arg(2, int, 0))
        return linop.SparseOperator(M)
    raise ValueError(f"unknown operator kind {kind!r}")


def _apply_overrides(config, args):
    if args.seed is not None:
        config.seed = args.seed
    if args.out_dir is not None:
        config.out_dir = args.out_dir
    if args.record_every is not None:
        if args.record_every < 1:
            raise ConfigError("--record-every must be positive")
        config.record_every = args.record_every
    return config


def _cmd_run(args, sweep):
    config = _apply_overrides(load_config(args.config), args)
    code, summary = run_experiment(config, sweep=sweep, jobs=args.jobs)
    for r in summary["runs"]:
        status = r["status"]
        if status == "ok":
            print(f"{r['csv']}: F={r['final_F']!r} iterations={r['iterations']} "
                  f"stop={r['stop_reason']}")
        elif status == "gate-rejected":
            continue
        else:
            print(f"{r.get('csv')}: {status}: {r.get('error', '')}", file=sys.stderr)
    rejected = sum(r["status"] == "gate-rejected" for r in summary["runs"])
    if rejected:
        print(f"{rejected} sweep point(s) rejected by the stepsize validity gate")
    print(f"summary written to {config.out_dir}/summary.json")
    return code


def _cmd_check(args):
    report = self_check(fault=args.inject_fault)
    for line in report.lines():
        print(line)
    for g in report.groups:
        for note in g.notes:
            print(f"  {g.name}: {note}")
    return 0 if report.ok else 1


def _cmd_norm(args):
    op = parse_operator_spec(args.operator)
    value = linop.operator_norm(op, tol=args.tol, seed=args.seed or 0)
    how = "exact bound" if op.kind in ("identity", "zero", "mask", "discrete-gradient") \
        else "power iteration, inflated"
    print(f"{op.kind} {op.out_dim}x{op.in_dim}: ||A|| <= {value!r} ({how})")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="apda-kit", description="Adaptive primal-dual experiments and diagnostics.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out-dir", default=None, help="override the output directory")
        p.add_argument("--jobs", type=int, default=1,
                       help="parallel workers (capped by APDA_KIT_THREADS)")
        p.add_argument("--record-every", type=int, default=None,
                       help="keep every n-th trace row (k=1 and the last row are always kept)")

    p_run = sub.add_parser("run", help="run every solver in a config once")
    p_run.add_argument("config")
    common(p_run)
    p_sweep = sub.add_parser("sweep", help="run the config's sweep grid")
    p_sweep.add_argument("config")
    common(p_sweep)

    p_check = sub.add_parser("check", help="run the fast invariant suite")
    p_check.add_argument("--inject-fault", choices=sorted(FAULTS), default=None,
                         help=argparse.SUPPRESS)

    p_norm = sub.add_parser("norm", help="certified operator norm upper bound",
                            epilog=OPERATOR_SPECS,
                            formatter_class=argparse.RawDescriptionHelpFormatter)
    p_norm.add_argument("operator")
    p_norm.add_argument("--tol", type=float, default=1e-10)
    p_norm.add_argument("--seed", type=int, default=None)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args, sweep=False)
        if args.command == "sweep":
            return _cmd_run(args, sweep=True)
        if args.command == "check":
            return _cmd_check(args)
        return _cmd_norm(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
