#!/usr/bin/env python3
"""Porosity study: square inclusions at porosities 0.19 to 0.75, 0.1 mol/l, 50 nm.

    python scripts/porosity_study.py [--out DIR] [--refine N] [--sequential]
"""

import argparse
from pathlib import Path

from msaupscale.config import load_config, with_overrides
from msaupscale.sweep import emit_outputs, run_sweep

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "porosity.ini"


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default=None)
    p.add_argument("--refine", type=int, default=None)
    p.add_argument("--sequential", action="store_true")
    args = p.parse_args()

    cfg = with_overrides(load_config(CONFIG), refine=args.refine, out=args.out)
    result = run_sweep(cfg, sequential=args.sequential)
    out = emit_outputs(result, cfg)

    print(f"{'model':5s}  {'porosity':>8s}  {'K_11':>10s}  {'Krel_11':>8s}  {'min_eig':>9s}")
    for r in result.records:
        print(f"{r['model']:5s}  {r['porosity']:8.2f}  {r['K_11']:10.4e}  {r['Krel_11']:8.4f}  {r['min_eig']:9.2e}")
    for f in result.failures:
        print(f"failed: {f['run_id']}: {f['error']}")
    print(f"outputs in {out}")
    return 1 if result.failures else 0


if __name__ == "__main__":
    raise SystemExit(main())
