"""Command line entry point: ``msaupscale {check,equilibrium,upscale,sweep,mms}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, default_config, load_config, with_overrides
from .errors import ConfigError
from .msa import BOUND1_FACTOR, MODELS, reservoir_closure

logger = logging.getLogger("msaupscale")

UNITS = {
    "bjerrum_length_m": "m",
    "debye_length_m": "m",
    "gamma_c_per_m": "1/m",
}


def _load(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if args.config else default_config()
    return with_overrides(cfg, getattr(args, "model", None), getattr(args, "refine", None), getattr(args, "out", None))


def cmd_check(args: argparse.Namespace) -> int:
    cfg = _load(args)
    from .mesh import describe
    from .sweep import cell_mesh

    for value, point in cfg.points():
        scaling = point.scaling()
        head = "base point" if np.isnan(value) else f"{cfg.sweep.parameter} = {value:.6g}"
        print(f"[{head}]")
        for key, val in scaling.summary().items():
            unit = UNITS.get(key, "-")
            print(f"  {key:18s} {val:.6e} {unit}")
        sysm = scaling.system
        lb = scaling.bjerrum_length
        limit = float(np.min(BOUND1_FACTOR * sysm.diameter / sysm.valence**2))
        print(f"  bound1             ok (L_B {lb:.4e} m < {limit:.4e} m)")
        charge = float(np.sum(sysm.valence * sysm.reservoir))
        print(f"  electroneutrality  ok (sum z_j n_j = {charge:.3e})")
        for model in cfg.sweep.models:
            res = reservoir_closure(scaling, model, cfg.solver.tol_alg)  # type: ignore[arg-type]
            gamma = dict(zip(sysm.names, res.activity))
            acts = ", ".join(f"{n}={gamma[n]:.6f}" for n in cfg.species_order)
            print(f"  gamma_inf[{model}]  {acts}")
    print(f"mesh: {describe(cell_mesh(cfg.geometry, cfg.discretization))}")
    return 0


def cmd_equilibrium(args: argparse.Namespace) -> int:
    from .equilibrium import equilibrium_diagnostics, solve_equilibrium, write_equilibrium_csv
    from .sweep import cell_mesh

    cfg = _load(args)
    out = Path(cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    mesh = cell_mesh(cfg.geometry, cfg.discretization)
    scaling = cfg.scaling()
    for model in cfg.sweep.models:
        res = reservoir_closure(scaling, model, cfg.solver.tol_alg)  # type: ignore[arg-type]
        eq = solve_equilibrium(mesh, scaling, res, cfg.surface_charge(), cfg.equilibrium_options())
        diag = equilibrium_diagnostics(eq)
        write_equilibrium_csv(eq, out / f"equilibrium_{model}.csv")
        lines = [f"{k} = {v}" for k, v in diag.items()]
        (out / f"equilibrium_{model}.txt").write_text("\n".join(lines) + "\n")
        print(f"[{model}] psi in [{diag['psi_min']:.6f}, {diag['psi_max']:.6f}], residual {diag['weak_residual']:.2e}")
        for name, avg in diag["averages"].items():
            print(f"  <n_{name}> = {avg:.6f} n_c")
    return 0


def cmd_upscale(args: argparse.Namespace) -> int:
    from .sweep import run_point, write_csv
    from .upscale import write_tensor_report

    cfg = _load(args)
    out = Path(cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for model in cfg.sweep.models:
        res = run_point(cfg, model, f"point-{model}")
        write_tensor_report(res.tensor, res.check, out / f"tensor_{model}.txt")
        rows.append(res.record)
        r = res.record
        print(
            f"[{model}] K = [[{r['K_11']:.6e}, {r['K_12']:.6e}], [{r['K_21']:.6e}, {r['K_22']:.6e}]], "
            f"Krel = ({r['Krel_11']:.6f}, {r['Krel_22']:.6f}), "
            f"symmetry {r['sym_residual']:.2e}, min eig {r['min_eig']:.3e}"
        )
    write_csv(rows, out / "upscale.csv")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    from .sweep import emit_outputs, run_sweep

    cfg = _load(args)
    if cfg.sweep.parameter == "none":
        raise ConfigError("[sweep] parameter is 'none'; nothing to sweep")
    result = run_sweep(cfg, sequential=args.sequential)
    out = emit_outputs(result, cfg)
    print(f"{len(result.records)} records written to {out / 'sweep.csv'}")
    for f in result.failures:
        print(f"FAILED {f['run_id']}: {f['error']}", file=sys.stderr)
    return 0 if result.ok else 1


MMS_TARGETS = {("scalar P2", "u"): (3.0, 0.2), ("Stokes Taylor-Hood", "velocity"): (3.0, 0.3), ("Stokes Taylor-Hood", "pressure"): (2.0, 0.3)}


def cmd_mms(args: argparse.Namespace) -> int:
    from .mms import report, run_all

    studies = run_all()
    text = report(studies)
    print(text)
    ok = True
    for s in studies:
        for key, order in s.orders().items():
            target, tol = MMS_TARGETS[(s.name, key)]
            good = abs(order - target) <= tol
            ok &= good
            print(f"{'PASS' if good else 'FAIL'} {s.name} {key}: order {order:.2f} (expected {target} +- {tol})")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "mms.txt").write_text(text + "\n")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msaupscale", description="Upscaled electrokinetic transport with MSA activity closure.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, model: bool = True) -> None:
        p.add_argument("--config", type=str, default=None, help="INI run configuration (default: NaCl 0.1 mol/l, ellipse cell)")
        if model:
            p.add_argument("--model", choices=MODELS + ("both",), default=None, help="activity closure(s) to run")
        p.add_argument("--refine", type=int, default=None, help="mesh refinement level")
        p.add_argument("--out", type=str, default=None, help="output directory")

    common(sub.add_parser("check", help="validate a configuration and print derived groups"))
    common(sub.add_parser("equilibrium", help="solve the equilibrium problem at the base point"))
    common(sub.add_parser("upscale", help="effective tensor at the base point"))
    p = sub.add_parser("sweep", help="run a parameter sweep")
    common(p)
    p.add_argument("--sequential", action="store_true", help="run points in-process, in order (bitwise reproducible)")
    p = sub.add_parser("mms", help="manufactured-solution convergence orders")
    p.add_argument("--out", type=str, default=None)
    return parser


HANDLERS = {"check": cmd_check, "equilibrium": cmd_equilibrium, "upscale": cmd_upscale, "sweep": cmd_sweep, "mms": cmd_mms}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return HANDLERS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
