"""Download the LIBSVM benchmark datasets used for full-scale logistic runs.

    python scripts/fetch_datasets.py [--dest data] [names ...]

Nothing in the test suite depends on these files. Checksums are not
shipped: on first download the SHA-256 of each file is written to
``<dest>/SHA256SUMS``, and later runs verify against that record, so a
silently changed upstream file is noticed.
"""

import argparse
import bz2
import hashlib
import shutil
import sys
import urllib.request
from pathlib import Path

BASE = "https://www.csie.ntu.edu.tw/~cjlin/libsvmtools/datasets/binary/"
DATASETS = {
    "a9a": "a9a",
    "mushrooms": "mushrooms",
    "ijcnn1": "ijcnn1.bz2",
    "covtype": "covtype.libsvm.binary.scale.bz2",
}


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def read_sums(path):
    if not path.exists():
        return {}
    out = {}
    for line in path.read_text().splitlines():
        digest, name = line.split(maxsplit=1)
        out[name.strip()] = digest
    return out


def fetch(name, dest):
    remote = DATASETS[name]
    raw = dest / remote
    if not raw.exists():
        print(f"downloading {BASE + remote}")
        with urllib.request.urlopen(BASE + remote) as resp, open(raw, "wb") as fh:
            shutil.copyfileobj(resp, fh)
    target = dest / name
    if remote.endswith(".bz2") and not target.exists():
        with bz2.open(raw, "rb") as src, open(target, "wb") as fh:
            shutil.copyfileobj(src, fh)
    return raw


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("names", nargs="*", help=f"subset of {', '.join(DATASETS)} (default: all)")
    ap.add_argument("--dest", type=Path, default=Path("data"))
    args = ap.parse_args(argv)
    unknown = sorted(set(args.names) - set(DATASETS))
    if unknown:
        ap.error(f"unknown dataset(s): {', '.join(unknown)}")
    args.dest.mkdir(parents=True, exist_ok=True)
    sums_path = args.dest / "SHA256SUMS"
    sums = read_sums(sums_path)
    status = 0
    for name in args.names or DATASETS:
        raw = fetch(name, args.dest)
        digest = sha256(raw)
        known = sums.get(raw.name)
        if known is None:
            sums[raw.name] = digest
            print(f"{raw.name}: recorded sha256 {digest}")
        elif known != digest:
            print(f"{raw.name}: sha256 mismatch (recorded {known}, got {digest})", file=sys.stderr)
            status = 1
        else:
            print(f"{raw.name}: ok")
    sums_path.write_text("".join(f"{d}  {n}\n" for n, d in sorted(sums.items())))
    return status


if __name__ == "__main__":
    sys.exit(main())
