"""Manufactured-solution checks of the periodic P2 scalar and Taylor-Hood Stokes discretizations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fem
from .mesh import unit_square_mesh

TWO_PI = 2.0 * np.pi


def scalar_exact(p: np.ndarray) -> np.ndarray:
    return np.sin(TWO_PI * p[..., 0]) * np.cos(TWO_PI * p[..., 1])


def velocity_exact(p: np.ndarray) -> np.ndarray:
    x, y = p[..., 0], p[..., 1]
    return np.stack([np.sin(TWO_PI * x) * np.cos(TWO_PI * y), -np.cos(TWO_PI * x) * np.sin(TWO_PI * y)], axis=-1)


def pressure_exact(p: np.ndarray) -> np.ndarray:
    return np.cos(TWO_PI * p[..., 0]) * np.cos(TWO_PI * p[..., 1])


@dataclass
class ConvergenceStudy:
    name: str
    sizes: list[float]
    errors: dict[str, list[float]]

    def orders(self) -> dict[str, float]:
        """Least-squares log-log slope of error against mesh size."""
        h = np.log(self.sizes)
        return {k: float(np.polyfit(h, np.log(v), 1)[0]) for k, v in self.errors.items()}


def scalar_study(levels: tuple[int, ...] = (8, 16, 32, 64)) -> ConvergenceStudy:
    """-lap(u) + u = f on the periodic square, P2 elements, L2 error."""
    errors = []
    for n in levels:
        space = fem.FunctionSpace(unit_square_mesh(n), 2)
        pts = space.geometry.points
        source = (1.0 + 2.0 * TWO_PI**2) * scalar_exact(pts)
        system = fem.assemble_scalar(space, reaction=1.0, source=source)
        u = fem.solve(system)[system.blocks["u"]]
        errors.append(fem.l2_norm(space, u, scalar_exact))
    return ConvergenceStudy("scalar P2", [1.0 / n for n in levels], {"u": errors})


def stokes_study(levels: tuple[int, ...] = (8, 16, 32, 64)) -> ConvergenceStudy:
    """Periodic Stokes with a divergence-free Taylor-Green velocity; L2 errors of v and pi."""
    ev, ep = [], []
    for n in levels:
        spaces = fem.StokesSpaces.build(unit_square_mesh(n))
        v, q = spaces.velocity, spaces.pressure
        pts = v.geometry.points
        x, y = pts[..., 0], pts[..., 1]
        grad_p = -TWO_PI * np.stack([np.sin(TWO_PI * x) * np.cos(TWO_PI * y), np.cos(TWO_PI * x) * np.sin(TWO_PI * y)], axis=-1)
        force = 2.0 * TWO_PI**2 * velocity_exact(pts) + grad_p
        system = fem.assemble_stokes(spaces, force, velocity_zero_mean=True)
        parts = system.split(fem.solve(system))
        ux, uy = v.extend(parts["ux"]), v.extend(parts["uy"])
        err = fem.l2_norm(v, ux, lambda p: velocity_exact(p)[..., 0]) ** 2 + fem.l2_norm(v, uy, lambda p: velocity_exact(p)[..., 1]) ** 2
        ev.append(float(np.sqrt(err)))
        ep.append(fem.l2_norm(q, parts["p"], pressure_exact))
    return ConvergenceStudy("Stokes Taylor-Hood", [1.0 / n for n in levels], {"velocity": ev, "pressure": ep})


def run_all(levels: tuple[int, ...] = (8, 16, 32, 64)) -> list[ConvergenceStudy]:
    return [scalar_study(levels), stokes_study(levels)]


def report(studies: list[ConvergenceStudy]) -> str:
    lines = []
    for s in studies:
        lines.append(f"{s.name}: h = " + ", ".join(f"{h:.4g}" for h in s.sizes))
        for key, errs in s.errors.items():
            lines.append(f"  {key:9s} L2 errors " + ", ".join(f"{e:.3e}" for e in errs) + f"  order {s.orders()[key]:.2f}")
    return "\n".join(lines)
