#!/usr/bin/env python3
"""Concentration study: NaCl from 1e-3 to 1 mol/l in the ellipse cell at 50 nm.

    python scripts/concentration_study.py [--out DIR] [--refine N] [--sequential]
"""

import argparse
from pathlib import Path

import numpy as np

from msaupscale.config import load_config, with_overrides
from msaupscale.sweep import emit_outputs, run_sweep, slope

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "concentration.ini"


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default=None)
    p.add_argument("--refine", type=int, default=None)
    p.add_argument("--sequential", action="store_true")
    args = p.parse_args()

    cfg = with_overrides(load_config(CONFIG), refine=args.refine, out=args.out)
    result = run_sweep(cfg, sequential=args.sequential)
    out = emit_outputs(result, cfg)

    base = cfg.species[0].concentration_mol_per_l
    for model in cfg.sweep.models:
        rows = [r for r in result.records if r["model"] == model]
        x = np.array([r["n_inf_mol_per_l"] for r in rows])
        d11 = np.array([r["D11_11"] for r in rows]) * (x / base) ** 2
        top = x >= x.max() / 10 * (1 - 1e-9)
        print(f"{model:5s}  D11_11 top-decade slope {slope(x[top], d11[top]):.3f}")
        print(f"{model:5s}  anion average / reservoir: " + ", ".join(f"{r['avg_n2'] / r['n_inf_mol_per_l']:.4f}" for r in rows))
    for f in result.failures:
        print(f"failed: {f['run_id']}: {f['error']}")
    print(f"outputs in {out}")
    return 1 if result.failures else 0


if __name__ == "__main__":
    raise SystemExit(main())
