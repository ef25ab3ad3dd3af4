"""INI run configuration: parsing, validation and round-tripping.

Sections: ``[solvent]``, one ``[species.<name>]`` per ion, ``[geometry]``,
``[discretization]``, ``[solver]``, ``[sweep]`` and ``[output]``.  Unknown
sections or keys are errors.  Species are numbered 1..N in the order they
appear in the file; that numbering is used in every output column.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np

from .equilibrium import EquilibriumOptions, SurfaceCharge
from .errors import ConfigError
from .mesh import Ellipse, MeshSizing, Rectangle, UnitCellGeometry, ellipse_cell, rect_cell
from .msa import (
    MODELS,
    ElectrolyteSystem,
    ScalingGroup,
    SolventEnv,
    Species,
    molar_to_number_density,
)

SWEEP_PARAMETERS = ("none", "concentration", "pore_size", "porosity")


@dataclass(frozen=True)
class SpeciesSpec:
    name: str
    valence: int
    diffusivity: float  # m^2/s
    diameter: float  # m
    concentration_mol_per_l: float


@dataclass(frozen=True)
class SolventSpec:
    temperature: float = 298.0
    viscosity: float = 0.89e-3
    dielectric: float = 6.93e-10
    elementary_charge: float = 1.6e-19
    boltzmann: float = 1.38e-23
    characteristic_concentration_mol_per_l: float = 0.1
    debye_convention: str = "numerical"


@dataclass(frozen=True)
class GeometrySpec:
    kind: str = "ellipse"  # ellipse | rectangle | custom
    porosity: float = 0.62
    aspect_ratio: float = 2.0
    rotation_deg: float = 0.0
    inclusions: str = ""  # custom: "ellipse cx cy a b rot_deg; rectangle cx cy wx wy"
    pore_size_nm: float = 50.0
    surface_charge_c_per_m2: float = 0.129
    surface_charge_scale: float = 1.0


@dataclass(frozen=True)
class DiscretizationSpec:
    refine: int = 1
    coarse_size: float = 0.08
    wall_ratio: float = 0.15
    growth: float = 0.25


@dataclass(frozen=True)
class SolverSpec:
    tol_pde: float = 1e-9
    tol_fp: float = 1e-8
    tol_alg: float = 1e-12
    max_outer: int = 50
    max_inner: int = 50
    max_newton: int = 50
    line_search_halvings: int = 20
    continuation_steps: int = 3
    anderson_depth: int = 5
    cell_rtol: float = 1e-9


@dataclass(frozen=True)
class SweepSpec:
    parameter: str = "none"
    values: tuple[float, ...] = ()
    model: str = "both"

    @property
    def models(self) -> tuple[str, ...]:
        return MODELS if self.model == "both" else (self.model,)


@dataclass(frozen=True)
class OutputSpec:
    directory: str = "out"
    svg: bool = True


@dataclass(frozen=True)
class RunConfig:
    species: tuple[SpeciesSpec, ...]
    solvent: SolventSpec = field(default_factory=SolventSpec)
    geometry: GeometrySpec = field(default_factory=GeometrySpec)
    discretization: DiscretizationSpec = field(default_factory=DiscretizationSpec)
    solver: SolverSpec = field(default_factory=SolverSpec)
    sweep: SweepSpec = field(default_factory=SweepSpec)
    output: OutputSpec = field(default_factory=OutputSpec)

    # -- derived objects ------------------------------------------------------

    def solvent_env(self) -> SolventEnv:
        s = self.solvent
        return SolventEnv(s.viscosity, s.dielectric, s.temperature, s.elementary_charge, s.boltzmann)

    def electrolyte(self) -> ElectrolyteSystem:
        nc = self.solvent.characteristic_concentration_mol_per_l
        return ElectrolyteSystem(
            tuple(
                Species(sp.name, sp.valence, sp.diffusivity, sp.diameter, sp.concentration_mol_per_l / nc)
                for sp in self.species
            ),
            self.solvent_env(),
        )

    def scaling(self) -> ScalingGroup:
        return ScalingGroup(
            self.electrolyte(),
            pore_size=self.geometry.pore_size_nm * 1e-9,
            characteristic_concentration=molar_to_number_density(self.solvent.characteristic_concentration_mol_per_l),
            surface_charge=self.geometry.surface_charge_c_per_m2,
            debye_convention=self.solvent.debye_convention,  # type: ignore[arg-type]
        )

    def cell_geometry(self) -> UnitCellGeometry:
        g = self.geometry
        if g.kind == "ellipse":
            return ellipse_cell(g.porosity, g.aspect_ratio, g.rotation_deg)
        if g.kind == "rectangle":
            return rect_cell(g.porosity, g.aspect_ratio)
        return UnitCellGeometry(parse_inclusions(g.inclusions), name="custom")

    def sizing(self) -> MeshSizing:
        d = self.discretization
        return MeshSizing(d.coarse_size, d.wall_ratio, d.growth, d.refine)

    def equilibrium_options(self) -> EquilibriumOptions:
        s = self.solver
        return EquilibriumOptions(
            s.tol_pde, s.tol_fp, s.tol_alg, s.max_outer, s.max_inner, s.max_newton, s.line_search_halvings, s.continuation_steps, s.anderson_depth
        )

    def surface_charge(self) -> SurfaceCharge:
        return SurfaceCharge(self.geometry.surface_charge_scale)

    @property
    def species_order(self) -> list[str]:
        return [sp.name for sp in self.species]

    # -- sweep points ---------------------------------------------------------

    def at(self, parameter: str, value: float) -> "RunConfig":
        """Copy with one sweep parameter set to ``value``."""
        if parameter == "concentration":
            base = self.species[0].concentration_mol_per_l
            factor = value / base
            new = tuple(replace(sp, concentration_mol_per_l=sp.concentration_mol_per_l * factor) for sp in self.species)
            # n_c moves with the salt, so reservoir values in units of n_c stay put
            nc = self.solvent.characteristic_concentration_mol_per_l * factor
            return replace(self, species=new, solvent=replace(self.solvent, characteristic_concentration_mol_per_l=nc))
        if parameter == "pore_size":
            return replace(self, geometry=replace(self.geometry, pore_size_nm=value))
        if parameter == "porosity":
            return replace(self, geometry=replace(self.geometry, porosity=value))
        if parameter == "none":
            return self
        raise ConfigError(f"unknown sweep parameter {parameter!r}")

    def points(self) -> list[tuple[float, "RunConfig"]]:
        if self.sweep.parameter == "none":
            return [(float("nan"), self)]
        return [(v, self.at(self.sweep.parameter, v)) for v in self.sweep.values]


def parse_inclusions(text: str) -> tuple:
    out = []
    for chunk in filter(None, (c.strip() for c in text.split(";"))):
        parts = chunk.split()
        kind, nums = parts[0], [float(x) for x in parts[1:]]
        if kind == "ellipse" and len(nums) in (4, 5):
            rot = np.deg2rad(nums[4]) if len(nums) == 5 else 0.0
            out.append(Ellipse((nums[0], nums[1]), (nums[2], nums[3]), float(rot)))
        elif kind == "rectangle" and len(nums) == 4:
            out.append(Rectangle((nums[0], nums[1]), (nums[2], nums[3])))
        else:
            raise ConfigError(f"bad inclusion {chunk!r}")
    if not out:
        raise ConfigError("custom geometry needs at least one inclusion")
    return tuple(out)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_SECTIONS = {
    "solvent": SolventSpec,
    "geometry": GeometrySpec,
    "discretization": DiscretizationSpec,
    "solver": SolverSpec,
    "output": OutputSpec,
}
_SPECIES_KEYS = {"valence": int, "diffusivity": float, "diameter": float, "concentration_mol_per_l": float}


def _line_numbers(text: str) -> dict[tuple[str, str], int]:
    where: dict[tuple[str, str], int] = {}
    section = ""
    for no, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        m = re.match(r"^\[(.+)\]$", s)
        if m:
            section = m.group(1).strip()
            where[(section, "")] = no
        elif s and not s.startswith(("#", ";")) and ("=" in s or ":" in s):
            key = re.split(r"[=:]", s, maxsplit=1)[0].strip().lower()
            where[(section, key)] = no
    return where


def _convert(value: str, typ: Any, what: str) -> Any:
    try:
        if typ is bool:
            low = value.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if typ is int:
            return int(value)
        if typ is float:
            return float(value)
        return value.strip()
    except ValueError as exc:
        raise ConfigError(f"{what}: cannot parse {value!r}") from exc


def _parse_values(text: str) -> tuple[float, ...]:
    text = text.strip()
    m = re.match(r"^(log|linear)\(\s*([^,]+),\s*([^,]+),\s*(\d+)\s*\)$", text)
    if m:
        lo, hi, num = float(m.group(2)), float(m.group(3)), int(m.group(4))
        grid = np.geomspace(lo, hi, num) if m.group(1) == "log" else np.linspace(lo, hi, num)
        return tuple(float(v) for v in grid)
    if not text:
        return ()
    return tuple(float(v) for v in text.replace(",", " ").split())


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    where = _line_numbers(text)

    def loc(section: str, key: str = "") -> str:
        line = where.get((section, key))
        return f"{source}:{line}" if line else source

    parser = configparser.ConfigParser(interpolation=None, strict=True)
    parser.optionxform = str.lower  # type: ignore[assignment]
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc

    kwargs: dict[str, Any] = {}
    species: list[SpeciesSpec] = []
    for section in parser.sections():
        items = dict(parser.items(section))
        if section.startswith("species."):
            name = section.split(".", 1)[1].strip()
            if not name:
                raise ConfigError(f"{loc(section)}: empty species name")
            unknown = set(items) - set(_SPECIES_KEYS)
            if unknown:
                key = sorted(unknown)[0]
                raise ConfigError(f"{loc(section, key)}: unknown key {key!r} in [{section}]")
            missing = set(_SPECIES_KEYS) - set(items)
            if missing:
                raise ConfigError(f"{loc(section)}: [{section}] missing {', '.join(sorted(missing))}")
            vals = {k: _convert(v, _SPECIES_KEYS[k], loc(section, k)) for k, v in items.items()}
            species.append(SpeciesSpec(name=name, **vals))
        elif section == "sweep":
            unknown = set(items) - {"parameter", "values", "model"}
            if unknown:
                key = sorted(unknown)[0]
                raise ConfigError(f"{loc(section, key)}: unknown key {key!r} in [sweep]")
            try:
                values = _parse_values(items.get("values", ""))
            except ValueError as exc:
                raise ConfigError(f"{loc(section, 'values')}: bad sweep values") from exc
            kwargs["sweep"] = SweepSpec(items.get("parameter", "none").strip(), values, items.get("model", "both").strip())
        elif section in _SECTIONS:
            cls = _SECTIONS[section]
            types = {f.name: f.type for f in fields(cls)}
            vals = {}
            for key, raw in items.items():
                if key not in types:
                    raise ConfigError(f"{loc(section, key)}: unknown key {key!r} in [{section}]")
                typ = {"float": float, "int": int, "str": str, "bool": bool}[str(types[key])]
                vals[key] = _convert(raw, typ, loc(section, key))
            kwargs[section] = cls(**vals)
        else:
            raise ConfigError(f"{loc(section)}: unknown section [{section}]")
    if not species:
        raise ConfigError(f"{source}: no [species.<name>] sections")
    cfg = RunConfig(species=tuple(species), **kwargs)
    validate_config(cfg)
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(), str(path))


def validate_config(cfg: RunConfig) -> None:
    """Check enumerations, the sweep grid, electroneutrality and model validity at every point."""
    if cfg.sweep.parameter not in SWEEP_PARAMETERS:
        raise ConfigError(f"sweep parameter must be one of {SWEEP_PARAMETERS}")
    if cfg.sweep.model not in MODELS + ("both",):
        raise ConfigError("sweep model must be msa, ideal or both")
    if cfg.sweep.parameter != "none" and not cfg.sweep.values:
        raise ConfigError("sweep grid is empty")
    if cfg.geometry.kind not in ("ellipse", "rectangle", "custom"):
        raise ConfigError(f"unknown geometry kind {cfg.geometry.kind!r}")
    if cfg.discretization.refine < 0:
        raise ConfigError("refine must be nonnegative")
    from .msa import check_bound1, reservoir_closure  # local import keeps the module light

    for value, point in cfg.points():
        try:
            scaling = point.scaling()
            point.cell_geometry()
            if "msa" in cfg.sweep.models:
                check_bound1(scaling)
                reservoir_closure(scaling, "msa", cfg.solver.tol_alg)
        except ConfigError:
            raise
        except ValueError as exc:
            at = "" if np.isnan(value) else f" at {cfg.sweep.parameter}={value:g}"
            raise ConfigError(f"invalid configuration{at}: {exc}") from exc


def config_to_ini(cfg: RunConfig) -> str:
    """Serialize to INI; parsing the result reproduces ``cfg``."""
    lines: list[str] = []

    def fmt(v: Any) -> str:
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, float):
            return repr(v)
        return str(v)

    lines.append("[solvent]")
    lines += [f"{k} = {fmt(v)}" for k, v in asdict(cfg.solvent).items()]
    for sp in cfg.species:
        lines += ["", f"[species.{sp.name}]"]
        lines += [f"{k} = {fmt(v)}" for k, v in asdict(sp).items() if k != "name"]
    for name in ("geometry", "discretization", "solver"):
        lines += ["", f"[{name}]"]
        lines += [f"{k} = {fmt(v)}" for k, v in asdict(getattr(cfg, name)).items()]
    lines += ["", "[sweep]", f"parameter = {cfg.sweep.parameter}"]
    lines.append("values = " + ", ".join(repr(float(v)) for v in cfg.sweep.values))
    lines.append(f"model = {cfg.sweep.model}")
    lines += ["", "[output]"]
    lines += [f"{k} = {fmt(v)}" for k, v in asdict(cfg.output).items()]
    return "\n".join(lines) + "\n"


def with_overrides(cfg: RunConfig, model: str | None = None, refine: int | None = None, out: str | None = None) -> RunConfig:
    if model is not None:
        cfg = replace(cfg, sweep=replace(cfg.sweep, model=model))
    if refine is not None:
        cfg = replace(cfg, discretization=replace(cfg.discretization, refine=refine))
    if out is not None:
        cfg = replace(cfg, output=replace(cfg.output, directory=out))
    validate_config(cfg)
    return cfg


def default_config(parameter: str = "none", values: tuple[float, ...] = ()) -> RunConfig:
    """Sodium chloride at 0.1 mol/l in the default ellipse cell."""
    species = (
        SpeciesSpec("Na", 1, 13.33e-10, 3.3e-10, 0.1),
        SpeciesSpec("Cl", -1, 20.32e-10, 3.3e-10, 0.1),
    )
    cfg = RunConfig(species=species, sweep=SweepSpec(parameter, tuple(values), "both"))
    validate_config(cfg)
    return cfg
