"""Sweep orchestration: per-point pipeline, work pool, CSV / manifest / plot-data output."""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import __version__
from .config import DiscretizationSpec, GeometrySpec, RunConfig, config_to_ini
from .equilibrium import EquilibriumField, equilibrium_diagnostics, solve_equilibrium
from .mesh import Mesh, mesh_for
from .msa import reservoir_closure
from .plots import line_plot
from .upscale import (
    EffectiveTensor,
    OnsagerCheck,
    assemble_effective_tensor,
    neutral_permeability,
    onsager_check,
    solve_cell_problems,
    tensor_rows,
)

logger = logging.getLogger(__name__)

SWEEP_COLUMN = {"concentration": "n_inf_mol_per_l", "pore_size": "ell_nm", "porosity": "porosity", "none": "n_inf_mol_per_l"}
ONSAGER_TOL = 1e-6


@dataclass
class PointResult:
    record: dict[str, object]
    equilibrium: EquilibriumField
    tensor: EffectiveTensor
    check: OnsagerCheck
    diagnostics: dict


@dataclass
class SweepResult:
    records: list[dict[str, object]]
    failures: list[dict[str, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


@lru_cache(maxsize=8)
def cell_mesh(geometry: GeometrySpec, discretization: DiscretizationSpec) -> Mesh:
    cfg = RunConfig(species=(), geometry=geometry, discretization=discretization)
    return mesh_for(cfg.cell_geometry(), discretization.refine, cfg.sizing())


@lru_cache(maxsize=8)
def stokes_permeability(geometry: GeometrySpec, discretization: DiscretizationSpec) -> np.ndarray:
    return neutral_permeability(cell_mesh(geometry, discretization))


def run_id(cfg: RunConfig, index: int, model: str) -> str:
    return f"{cfg.sweep.parameter}-{index:03d}-{model}"


def solve_point(cfg: RunConfig, model: str) -> tuple[EquilibriumField, EffectiveTensor, OnsagerCheck]:
    """Reservoir closure, equilibrium, cell problems and tensor at one configuration."""
    mesh = cell_mesh(cfg.geometry, cfg.discretization)
    scaling = cfg.scaling()
    reservoir = reservoir_closure(scaling, model, cfg.solver.tol_alg)  # type: ignore[arg-type]
    eq = solve_equilibrium(mesh, scaling, reservoir, cfg.surface_charge(), cfg.equilibrium_options())
    cells = solve_cell_problems(eq, cfg.solver.cell_rtol)
    tensor = assemble_effective_tensor(cells)
    return eq, tensor, onsager_check(tensor)


def run_point(cfg: RunConfig, model: str, rid: str) -> PointResult:
    eq, tensor, check = solve_point(cfg, model)
    if not check.passed(ONSAGER_TOL):
        raise RuntimeError(
            f"{rid}: Onsager check failed (symmetry residual {check.symmetry_residual:.3e}, "
            f"min eigenvalue {check.min_eigenvalue:.3e})"
        )
    order = cfg.species_order
    nc = cfg.solvent.characteristic_concentration_mol_per_l
    rec: dict[str, object] = {
        "run_id": rid,
        "model": model,
        "geometry": cfg.geometry.kind,
        "porosity": cfg.geometry.porosity if cfg.geometry.kind != "custom" else float(cfg.cell_geometry().porosity),
        "ell_nm": cfg.geometry.pore_size_nm,
        "n_inf_mol_per_l": cfg.species[0].concentration_mol_per_l,
    }
    rec.update(tensor_rows(tensor, stokes_permeability(cfg.geometry, cfg.discretization), order))
    avg = dict(zip(eq.scaling.system.names, eq.averages()))
    for j, name in enumerate(order, start=1):
        rec[f"avg_n{j}"] = float(avg[name]) * nc
    diag = equilibrium_diagnostics(eq)
    rec["sym_residual"] = check.symmetry_residual
    rec["min_eig"] = check.min_eigenvalue
    rec["newton_iters"] = int(diag["newton_iterations"])
    rec["outer_iters"] = int(diag["outer_iterations"])
    return PointResult(rec, eq, tensor, check, diag)


def _task(args: tuple[RunConfig, str, str]) -> tuple[str, dict[str, object] | None, str]:
    cfg, model, rid = args
    try:
        return rid, run_point(cfg, model, rid).record, ""
    except Exception as exc:  # noqa: BLE001 - per-point failures are reported, not fatal
        logger.exception("point %s failed", rid)
        return rid, None, f"{type(exc).__name__}: {exc}"


def run_sweep(cfg: RunConfig, sequential: bool = False, workers: int | None = None) -> SweepResult:
    """Solve every (sweep point, model) pair; records come back ordered by sweep value, then model."""
    tasks = []
    for index, (value, point) in enumerate(cfg.points()):
        for model in cfg.sweep.models:
            tasks.append(((value, index, cfg.sweep.models.index(model)), (point, model, run_id(cfg, index, model))))
    tasks.sort(key=lambda t: t[0])
    args = [t[1] for t in tasks]
    workers = workers or os.cpu_count() or 1
    if sequential or workers == 1 or len(args) == 1:
        outcomes = [_task(a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(args))) as pool:
            outcomes = list(pool.map(_task, args))
    result = SweepResult([])
    for (rid, rec, err), (_, model, _) in zip(outcomes, args):
        if rec is None:
            result.failures.append({"run_id": rid, "model": model, "error": err})
        else:
            result.records.append(rec)
    return result


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def _fmt(value: object) -> str:
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


def write_csv(rows: list[dict[str, object]], path: Path, columns: list[str] | None = None) -> None:
    columns = columns or (list(rows[0]) if rows else [])
    lines = [",".join(columns)] + [",".join(_fmt(r[c]) for c in columns) for r in rows]
    path.write_text("\n".join(lines) + "\n")


def manifest_text(cfg: RunConfig) -> str:
    species = ", ".join(f"{j}={sp.name}" for j, sp in enumerate(cfg.species, start=1))
    header = [
        f"# msaupscale {__version__}",
        "# resolved configuration; pass this file to --config to reproduce the records",
        f"# species numbering: {species}",
    ]
    return "\n".join(header) + "\n" + config_to_ini(cfg)


def _figures(cfg: RunConfig) -> list[tuple[str, str, list[tuple[str, str]], bool, int]]:
    """(stem, y label, [(record column, output column)], log y, power of n_c in the normalization)."""
    n = len(cfg.species)
    idx = range(1, n + 1)
    avg = [(f"avg_n{j}", f"avg_n{j}_mol_per_l") for j in idx]
    diffusion = [(f"D{j}{i}_{l}{l}", f"D{j}{i}_{l}{l}_dimensionless") for j in idx for i in idx for l in (1, 2)]
    streaming = [(f"L{j}_{l}{l}", f"L{j}_{l}{l}_dimensionless") for j in idx for l in (1, 2)]
    logy = cfg.sweep.parameter == "concentration"
    return [
        ("average_concentration", "cell-averaged concentration [mol/l]", avg, logy, 0),
        ("relative_permeability", "K_ll / K_ll(uncharged) [-]", [("Krel_11", "Krel_11_dimensionless"), ("Krel_22", "Krel_22_dimensionless")], False, 0),
        ("permeability", "K_ll [-]", [("K_11", "K_11_dimensionless"), ("K_22", "K_22_dimensionless")], False, 0),
        ("diffusion", "D_ji,ll [-]", diffusion, logy, 2),
        ("streaming", "L_j,ll [-]", streaming, False, 1),
    ]


def write_plot_data(records: list[dict[str, object]], cfg: RunConfig, out: Path, svg: bool) -> list[Path]:
    param = cfg.sweep.parameter
    xcol = SWEEP_COLUMN[param]
    logx = param in ("concentration", "pore_size")
    xunit = {"n_inf_mol_per_l": "n_inf [mol/l]", "ell_nm": "pore size [nm]", "porosity": "porosity [-]"}[xcol]
    written = []
    base_nc = cfg.species[0].concentration_mol_per_l
    for stem, ylabel, cols, logy, power in _figures(cfg):
        name = f"{stem}_vs_{param}"
        rows = [{xcol: r[xcol], "model": r["model"], **{new: r[old] for old, new in cols}} for r in records]
        if param == "concentration" and power:
            # Each point is nondimensionalized with its own n_c; rescaling to the
            # base n_c makes the curves proportional to the dimensional quantity.
            rescaled = [(new, new.replace("_dimensionless", "_base_nc_dimensionless")) for _, new in cols]
            for r, src in zip(rows, records):
                ratio = float(src["n_inf_mol_per_l"]) / base_nc
                for new, scaled in rescaled:
                    r[scaled] = float(r[new]) * ratio**power
            cols = [(new, scaled) for new, scaled in rescaled]
            ylabel = ylabel.replace("[-]", f"[-, normalized at n_c = {cfg.solvent.characteristic_concentration_mol_per_l:g} mol/l]")
        if stem == "average_concentration":
            for r, src in zip(rows, records):
                n_inf = float(src["n_inf_mol_per_l"])
                for j, sp in enumerate(cfg.species, start=1):
                    reservoir = n_inf * sp.concentration_mol_per_l / base_nc
                    r[f"avg_n{j}_over_reservoir_dimensionless"] = float(src[f"avg_n{j}"]) / reservoir
        path = out / f"{name}.csv"
        write_csv(rows, path)
        written.append(path)
        if svg and param != "none":
            series = {}
            for model in cfg.sweep.models:
                sel = [r for r in rows if r["model"] == model]
                x = np.array([float(r[xcol]) for r in sel])
                for _, new in cols:
                    y = np.array([float(r[new]) for r in sel])
                    if logy and not (y > 0).all():
                        y = np.abs(y)
                    series[f"{new.rsplit('_', 1)[0]} [{model}]"] = (x, y)
            line_plot(out / f"{name}.svg", series, xunit, ylabel, logx=logx, logy=logy, title=name.replace("_", " "))
            written.append(out / f"{name}.svg")
    return written


def emit_outputs(result: SweepResult, cfg: RunConfig, out: str | Path | None = None) -> Path:
    """Write sweep.csv, manifest.txt, failures (if any) and plot-data files; returns the directory."""
    out = Path(out or cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(result.records, out / "sweep.csv")
    (out / "manifest.txt").write_text(manifest_text(cfg))
    fail = out / "failures.csv"
    if result.failures:
        write_csv(result.failures, fail)
    elif fail.exists():
        fail.unlink()
    if result.records:
        write_plot_data(result.records, cfg, out, cfg.output.svg)
    return out


def slope(x: np.ndarray, y: np.ndarray) -> float:
    """Least-squares slope of log10(y) against log10(x)."""
    return float(np.polyfit(np.log10(np.asarray(x, float)), np.log10(np.asarray(y, float)), 1)[0])


def interior_minimum(x: np.ndarray, y: np.ndarray) -> float | None:
    """Location of the smallest y if it is not at either end (parabolic refinement in log x)."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    k = int(np.argmin(y))
    if k == 0 or k == len(y) - 1:
        return None
    lx = np.log(x[k - 1 : k + 2])
    a, b, _ = np.polyfit(lx, y[k - 1 : k + 2], 2)
    return float(math.exp(-b / (2 * a))) if a > 0 else float(x[k])
