"""Run every shipped desk config and print one summary line per solver run.

    python scripts/run_desk.py [--sweep] [--jobs N] [--out-dir DIR] [configs ...]

Without arguments all ``configs/*.json`` are run once each. ``--sweep``
runs their sweep grids instead (much slower).
"""

import argparse
import sys
from pathlib import Path

from apda_kit.experiment import load_config, run_experiment

ROOT = Path(__file__).resolve().parents[1]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("configs", nargs="*", type=Path)
    ap.add_argument("--sweep", action="store_true")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out-dir", type=Path, default=None,
                    help="parent directory; each config writes to a subdirectory named after it")
    args = ap.parse_args(argv)

    paths = args.configs or sorted((ROOT / "configs").glob("*.json"))
    worst = 0
    for path in paths:
        config = load_config(path)
        if args.sweep and config.sweep is None:
            print(f"{path.name}: no sweep section, skipped")
            continue
        if args.out_dir is not None:
            config.out_dir = str(args.out_dir / config.name)
        code, summary = run_experiment(config, sweep=args.sweep, jobs=args.jobs)
        worst = max(worst, code)
        print(f"== {config.name} (exit {code}) -> {config.out_dir}")
        for r in summary["runs"]:
            if r["status"] == "ok":
                extra = f" psnr={r['psnr']:.2f}" if "psnr" in r else ""
                print(f"   {r['csv']:<40} F={r['final_F']:.10g} k={r['iterations']} "
                      f"t={r['wall_time_s']:.2f}s{extra}")
            elif r["status"] != "gate-rejected":
                print(f"   {r.get('csv')}: {r['status']} {r.get('error', '')}")
    return worst


if __name__ == "__main__":
    sys.exit(main())
