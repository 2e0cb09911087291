"""Run the scaling studies and write one CSV and one JSON summary per study.

    python3 scripts/run_studies.py --out results/ [--only loops spinor]
"""

import argparse
import json
from pathlib import Path

from lerwgreen.experiments import STUDIES, StudyConfig, run_study

DEFAULT_SIZES = {
    "loops": [8, 12, 16, 24, 32, 48, 64],
    "spinor": [8, 12, 16, 24, 32, 48, 64],
    "beurling": [8, 12, 16, 24, 32, 48, 64, 96, 128],
    "green34": [8, 12, 16, 24, 32, 48],
    "sin3": [16, 32, 48],
    "qbar": [16, 32, 64, 128],
    "green00": [16, 32, 64, 128],
}


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="results")
    p.add_argument("--only", nargs="*", default=None, choices=sorted(STUDIES))
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=7)
    args = p.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = StudyConfig(mc_samples=args.samples, seed=args.seed)
    for name in args.only or DEFAULT_SIZES:
        res = run_study(name, DEFAULT_SIZES[name], cfg)
        (out / f"{name}.csv").write_text(res.to_csv())
        (out / f"{name}.json").write_text(res.to_json())
        s = res.summary()
        print(f"{name:9s} pass={s['pass']!s:5s} slope={s['slope']} tol={s['tol']}")
        if s["extra"]:
            print("          ", json.dumps(s["extra"], default=float)[:200])


if __name__ == "__main__":
    main()
