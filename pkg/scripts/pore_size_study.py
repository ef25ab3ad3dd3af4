#!/usr/bin/env python3
"""Pore-size study: 3 to 200 nm in the ellipse cell at 0.1 mol/l.

    python scripts/pore_size_study.py [--out DIR] [--refine N] [--sequential]
"""

import argparse
from pathlib import Path

import numpy as np

from msaupscale.config import load_config, with_overrides
from msaupscale.sweep import emit_outputs, interior_minimum, run_sweep

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "pore_size.ini"


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default=None)
    p.add_argument("--refine", type=int, default=None)
    p.add_argument("--sequential", action="store_true")
    args = p.parse_args()

    cfg = with_overrides(load_config(CONFIG), refine=args.refine, out=args.out)
    result = run_sweep(cfg, sequential=args.sequential)
    out = emit_outputs(result, cfg)

    for model in cfg.sweep.models:
        rows = [r for r in result.records if r["model"] == model]
        ell = np.array([r["ell_nm"] for r in rows])
        for col in ("Krel_11", "Krel_22"):
            y = np.array([r[col] for r in rows])
            where = interior_minimum(ell, y)
            at = f"{where:.1f} nm" if where is not None else "none"
            print(f"{model:5s}  {col}: min {y.min():.4f}, interior minimum at {at}")
    for f in result.failures:
        print(f"failed: {f['run_id']}: {f['error']}")
    print(f"outputs in {out}")
    return 1 if result.failures else 0


if __name__ == "__main__":
    raise SystemExit(main())
