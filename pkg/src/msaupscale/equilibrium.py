"""Nonlinear Poisson-Boltzmann problem for the equilibrium potential in the cell.

The potential solves, in weak form over the fluid part of the periodic cell,

    int grad(Psi).grad(phi) + N_sigma int_S Sigma* phi = beta int sum_j z_j n_j(Psi) phi,

with n_j(Psi) given by the MSA closure.  The solver uses three nested levels:
an outer fixed point on the hard-sphere activity field, an inner fixed point
on the screening field and a damped Newton method for the semilinear problem
with both fields frozen.  Fields are stored at quadrature points.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from . import fem
from .errors import ConvergenceError, SingularSystemError
from .mesh import Mesh
from .msa import (
    LocalState,
    OnsagerLocal,
    ReservoirState,
    ScalingGroup,
    hard_sphere_p,
    local_state,
    onsager_local,
    screening_from_concentrations,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SurfaceCharge:
    """Dimensionless surface charge Sigma* on the solid boundary.

    With the outward fluid normal nu, grad(Psi).nu = -N_sigma Sigma*; a positive
    value attracts cations.
    """

    scale: float = 1.0
    profile: Callable[[np.ndarray], np.ndarray] | None = None

    def density(self, points: np.ndarray) -> np.ndarray:
        base = np.ones(len(points)) if self.profile is None else np.asarray(self.profile(points), dtype=float)
        return self.scale * base


@dataclass(frozen=True)
class EquilibriumOptions:
    tol_pde: float = 1e-9
    tol_fp: float = 1e-8
    tol_alg: float = 1e-12
    max_outer: int = 50
    max_inner: int = 50
    max_newton: int = 50
    line_search_halvings: int = 20
    continuation_steps: int = 3
    anderson_depth: int = 5  # 0 gives the plain outer iteration


@dataclass
class EquilibriumField:
    """Converged equilibrium state; quadrature arrays are shaped (nt, nq[, N[, N]])."""

    mesh: Mesh
    space: fem.FunctionSpace
    scaling: ScalingGroup
    reservoir: ReservoirState
    charge: SurfaceCharge
    psi: np.ndarray
    state: LocalState
    transport: OnsagerLocal
    residual: float
    history: dict = field(default_factory=dict)

    @property
    def model(self) -> str:
        return self.reservoir.model

    @property
    def geometry(self) -> fem.ElementGeometry:
        return self.space.geometry

    @property
    def concentration(self) -> np.ndarray:
        return self.state.concentration

    @property
    def fluid_area(self) -> float:
        return float(self.geometry.dx.sum())

    def averages(self) -> np.ndarray:
        """Cell averages |Y_F|^-1 int n_j (units of n_c)."""
        dx = self.geometry.dx
        return np.einsum("eqj,eq->j", self.concentration, dx) / dx.sum()

    def vertex_values(self) -> dict[str, np.ndarray]:
        mesh = self.mesh
        psi_v = self.psi[self.space.raw_to_dof[: mesh.num_vertices]]
        st = local_state(psi_v, self.scaling, self.reservoir)
        out = {"x": mesh.vertices[:, 0], "y": mesh.vertices[:, 1], "psi": psi_v}
        for j, name in enumerate(self.scaling.system.names):
            out[f"n_{name}"] = st.concentration[:, j]
        out["screening"] = st.screening
        out["packing"] = st.packing
        return out

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Potential at arbitrary points of the fluid domain."""
        return evaluate_field(self.space, self.psi, points)


def evaluate_field(space: fem.FunctionSpace, coeffs: np.ndarray, points: np.ndarray) -> np.ndarray:
    tri, bary = locate(space.mesh, points)
    phi = fem.basis_values(space.degree, bary)
    return np.einsum("pa,pa->p", coeffs[space.cell_dofs[tri]], phi)


def locate(mesh: Mesh, points: np.ndarray, candidates: int = 12) -> tuple[np.ndarray, np.ndarray]:
    """Triangle containing each point (best match among nearby triangles) and barycentrics."""
    p = mesh.vertices[mesh.triangles]
    tree = cKDTree(p.mean(axis=1))
    k = min(candidates, mesh.num_triangles)
    _, idx = tree.query(points, k=k)
    idx = idx.reshape(len(points), k)
    best_tri = np.zeros(len(points), dtype=np.int64)
    best_bary = np.zeros((len(points), 3))
    best_score = np.full(len(points), -np.inf)
    for c in range(k):
        t = idx[:, c]
        a, b, cc = p[t, 0], p[t, 1], p[t, 2]
        d1, d2, r = b - a, cc - a, points - a
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        l1 = (r[:, 0] * d2[:, 1] - r[:, 1] * d2[:, 0]) / det
        l2 = (d1[:, 0] * r[:, 1] - d1[:, 1] * r[:, 0]) / det
        bary = np.c_[1 - l1 - l2, l1, l2]
        score = bary.min(axis=1)
        better = score > best_score
        best_tri[better], best_bary[better], best_score[better] = t[better], bary[better], score[better]
    return best_tri, best_bary


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------


class _NewtonFailure(Exception):
    pass


class _AndersonMixer:
    """Anderson acceleration of a fixed-point map x -> G(x) over the last ``depth`` iterates."""

    def __init__(self, depth: int):
        self.depth = depth
        self.xs: list[np.ndarray] = []
        self.gs: list[np.ndarray] = []

    def __call__(self, x: np.ndarray, gx: np.ndarray) -> np.ndarray:
        if self.depth == 0:
            return gx
        self.xs = (self.xs + [x.ravel().copy()])[-(self.depth + 1) :]
        self.gs = (self.gs + [gx.ravel().copy()])[-(self.depth + 1) :]
        if len(self.xs) == 1:
            return gx
        g = np.array(self.gs).T
        f = g - np.array(self.xs).T
        coef = np.linalg.lstsq(np.diff(f, axis=1), f[:, -1], rcond=None)[0]
        return (g[:, -1] - np.diff(g, axis=1) @ coef).reshape(gx.shape)


@dataclass
class _Problem:
    space: fem.FunctionSpace
    stiffness: sp.csr_matrix
    surface: np.ndarray
    valence: np.ndarray
    beta: float

    def concentrations(self, psi: np.ndarray, prefactor: np.ndarray) -> np.ndarray:
        psi_q = self.space.values_at_quad(psi)
        return prefactor * np.exp(-self.valence * psi_q[..., None])

    def residual(self, psi: np.ndarray, conc: np.ndarray) -> tuple[np.ndarray, float]:
        z = self.valence
        rho = np.sum(z * conc, axis=-1)
        res = self.stiffness @ psi + self.surface - self.beta * fem.load(self.space, rho)
        scale = max(
            float(np.max(np.abs(self.surface))),
            self.beta * float(np.max(np.abs(fem.load(self.space, np.sum(np.abs(z) * conc, axis=-1))))),
        )
        return res, scale

    def jacobian(self, conc: np.ndarray) -> sp.csr_matrix:
        return self.stiffness + self.beta * fem.mass(self.space, np.sum(self.valence**2 * conc, axis=-1))


def _newton(problem: _Problem, psi: np.ndarray, prefactor: np.ndarray, opts: EquilibriumOptions, log: list) -> np.ndarray:
    conc = problem.concentrations(psi, prefactor)
    res, scale = problem.residual(psi, conc)
    norm = float(np.max(np.abs(res)))
    trace = [norm / scale]
    for _ in range(opts.max_newton):
        if norm <= opts.tol_pde * scale:
            log.append(trace)
            return psi
        try:
            step = fem.Factorization(problem.jacobian(conc)).solve(-res)
        except SingularSystemError as exc:
            raise _NewtonFailure(str(exc)) from exc
        t = 1.0
        for _ in range(opts.line_search_halvings + 1):
            cand = psi + t * step
            with np.errstate(over="ignore", invalid="ignore"):
                cconc = problem.concentrations(cand, prefactor)
                cres, cscale = problem.residual(cand, cconc)
            cnorm = float(np.max(np.abs(cres))) if np.all(np.isfinite(cres)) else np.inf
            if cnorm < (1.0 - 1e-4 * t) * norm or cnorm <= opts.tol_pde * cscale:
                break
            t *= 0.5
        else:
            log.append(trace)
            raise _NewtonFailure(f"line search failed at relative residual {norm / scale:.3e}")
        psi, conc, res, norm, scale = cand, cconc, cres, cnorm, cscale
        trace.append(norm / scale)
    log.append(trace)
    if norm <= opts.tol_pde * scale:
        return psi
    raise _NewtonFailure(f"no convergence in {opts.max_newton} Newton steps (relative residual {norm / scale:.3e})")


def _newton_continued(problem: _Problem, psi: np.ndarray, prefactor: np.ndarray, opts: EquilibriumOptions, log: list) -> np.ndarray:
    try:
        return _newton(problem, psi, prefactor, opts, log)
    except _NewtonFailure as first:
        logger.info("Newton failed (%s); continuing in beta", first)
    beta = problem.beta
    current = psi.copy()
    steps = opts.continuation_steps
    for k in range(steps):
        frac = 3.0 ** (k + 1 - steps)
        sub = _Problem(problem.space, problem.stiffness, problem.surface * frac, problem.valence, beta * frac)
        try:
            current = _newton(sub, current, prefactor, opts, log)
        except _NewtonFailure as exc:
            raise ConvergenceError(f"Newton diverged during beta continuation: {exc}", log) from exc
    return current


def solve_equilibrium(
    mesh: Mesh,
    scaling: ScalingGroup,
    reservoir: ReservoirState,
    charge: SurfaceCharge | None = None,
    options: EquilibriumOptions | None = None,
    space: fem.FunctionSpace | None = None,
) -> EquilibriumField:
    """Equilibrium potential, concentrations and transport tensor in the cell.

    Continuation scales the surface charge together with beta, so the weak
    problem keeps its charge balance along the path.
    """
    charge = charge or SurfaceCharge()
    opts = options or EquilibriumOptions()
    sysm = scaling.system
    z = sysm.valence
    space = space or fem.FunctionSpace(mesh, 2)
    problem = _Problem(
        space,
        fem.stiffness(space),
        scaling.n_sigma * fem.boundary_load(space, charge.density),
        z,
        scaling.beta,
    )
    nq_shape = space.geometry.dx.shape
    base = sysm.reservoir * reservoir.activity  # n_inf gamma_inf
    psi = np.zeros(space.ndof)
    newton_log: list[list[float]] = []
    history = {"newton": newton_log, "outer": 0, "inner": [], "outer_updates": []}

    lbgc = scaling.bjerrum_length * scaling.gamma_c
    sig = sysm.diameter

    def prefactor(gamma_hs: np.ndarray, screening: np.ndarray) -> np.ndarray:
        g = screening[..., None]
        return base * np.exp(lbgc * g * z**2 / (1.0 + g * scaling.gamma_c * sig)) / gamma_hs[..., None]

    if reservoir.model == "ideal":
        psi = _newton_continued(problem, psi, np.broadcast_to(sysm.reservoir, nq_shape + (sysm.size,)), opts, newton_log)
    else:
        gamma_hs = np.ones(nq_shape)
        mixer = _AndersonMixer(opts.anderson_depth)
        screening = np.zeros(nq_shape)
        sc = scaling.characteristic_diameter
        weights = scaling.xi_c * (sig / sc) ** 3
        converged = False
        for outer in range(1, opts.max_outer + 1):
            psi_prev = psi.copy()
            for inner in range(1, opts.max_inner + 1):
                psi = _newton_continued(problem, psi, prefactor(gamma_hs, screening), opts, newton_log)
                conc = problem.concentrations(psi, prefactor(gamma_hs, screening))
                new_screening = screening_from_concentrations(conc, scaling, opts.tol_alg)
                change = float(np.max(np.abs(new_screening - screening)))
                screening = new_screening
                if change < opts.tol_fp:
                    break
            history["inner"].append(inner)
            conc = problem.concentrations(psi, prefactor(gamma_hs, screening))
            xi = np.sum(weights * conc, axis=-1)
            if np.any(xi >= 1.0):
                raise ConvergenceError("packing fraction reached 1 during the fixed point", newton_log)
            # Mixed in log space: the plain update oscillates when wall layers approach close packing.
            new_hs = np.exp(mixer(np.log(gamma_hs), hard_sphere_p(xi)))
            hs_change = float(np.max(np.abs(new_hs - gamma_hs)))
            gamma_hs = new_hs
            psi_change = float(np.max(np.abs(psi - psi_prev)))
            history["outer_updates"].append((psi_change, hs_change))
            logger.info("outer %d: psi change %.3e, gamma_HS change %.3e, %d inner", outer, psi_change, hs_change, inner)
            history["outer"] = outer
            if psi_change < opts.tol_fp:
                res = _closure_residual(problem, psi, scaling, reservoir, opts)
                if res <= opts.tol_pde:
                    converged = True
                    break
        if not converged:
            raise ConvergenceError(
                f"fixed point did not converge in {opts.max_outer} outer iterations", history["outer_updates"]
            )

    psi_q = space.values_at_quad(psi)
    state = local_state(psi_q, scaling, reservoir, opts.tol_alg)
    transport = onsager_local(state, scaling, reservoir.model)
    residual = _closure_residual(problem, psi, scaling, reservoir, opts, state)
    history["newton_iterations"] = int(sum(len(t) - 1 for t in newton_log))
    return EquilibriumField(mesh, space, scaling, reservoir, charge, psi, state, transport, residual, history)


def _closure_residual(
    problem: _Problem,
    psi: np.ndarray,
    scaling: ScalingGroup,
    reservoir: ReservoirState,
    opts: EquilibriumOptions,
    state: LocalState | None = None,
) -> float:
    """Relative weak residual with concentrations from the exact pointwise closure."""
    if state is None:
        state = local_state(problem.space.values_at_quad(psi), scaling, reservoir, opts.tol_alg)
    res, scale = problem.residual(psi, state.concentration)
    return float(np.max(np.abs(res)) / scale)


# ---------------------------------------------------------------------------
# Diagnostics and export
# ---------------------------------------------------------------------------


def equilibrium_diagnostics(eq: EquilibriumField) -> dict:
    """Ranges, cell averages, charge balance and solver statistics."""
    sysm = eq.scaling.system
    z = sysm.valence
    dx = eq.geometry.dx
    rho = np.sum(z * eq.concentration, axis=-1)
    surface = eq.scaling.n_sigma * float(np.sum(fem.boundary_load(fem.FunctionSpace(eq.mesh, 1, geometry=eq.geometry), eq.charge.density)))
    volume = eq.scaling.beta * float(np.sum(rho * dx))
    bound = np.log(1.0 / eq.scaling.xi_c) if eq.scaling.xi_c > 0 else np.inf
    lo, hi = -bound / z.max(), bound / abs(z.min())
    psi_q = eq.state.psi
    out = {
        "model": eq.model,
        "psi_min": float(psi_q.min()),
        "psi_max": float(psi_q.max()),
        "psi_dof_min": float(eq.psi.min()),
        "psi_dof_max": float(eq.psi.max()),
        "packing_min": float(eq.state.packing.min()),
        "packing_max": float(eq.state.packing.max()),
        "screening_min": float(eq.state.screening.min()),
        "screening_max": float(eq.state.screening.max()),
        "averages": dict(zip(sysm.names, map(float, eq.averages()))),
        "weak_residual": eq.residual,
        "charge_balance": abs(volume - surface) / max(abs(surface), 1e-300) if surface else abs(volume),
        "invariant_region": (float(lo), float(hi)),
        "inside_invariant_region": bool(psi_q.min() >= lo and psi_q.max() <= hi),
        "newton_iterations": eq.history.get("newton_iterations", 0),
        "outer_iterations": eq.history.get("outer", 0),
        "inner_iterations": list(eq.history.get("inner", [])),
        "newton_rate": newton_rate(eq.history.get("newton", [])),
    }
    return out


def newton_rate(traces: list[list[float]]) -> float:
    """Largest r_{k+1} / r_k^2 over consecutive Newton residuals in the asymptotic window.

    Pairs are kept when r_k is small enough to be asymptotic and r_{k+1} is above
    the rounding floor, where the ratio carries no information.
    """
    ratios = [b / a**2 for t in traces for a, b in zip(t[:-1], t[1:]) if 1e-8 <= a <= 1e-2 and b > 1e-12]
    return float(max(ratios)) if ratios else float("nan")


def write_equilibrium_csv(eq: EquilibriumField, path: str | Path) -> None:
    cols = eq.vertex_values()
    names = list(cols)
    data = np.column_stack([cols[n] for n in names])
    lines = [",".join(names)] + [",".join(f"{v:.17g}" for v in row) for row in data]
    Path(path).write_text("\n".join(lines) + "\n")


def psi_l2_difference(coarse: EquilibriumField, fine: EquilibriumField) -> float:
    """Relative L2 difference of the potential, evaluated on the fine quadrature points."""
    pts = fine.geometry.points.reshape(-1, 2)
    coarse_vals = evaluate_field(coarse.space, coarse.psi, pts).reshape(fine.geometry.dx.shape)
    fine_vals = fine.state.psi
    dx = fine.geometry.dx
    return float(np.sqrt(np.sum((coarse_vals - fine_vals) ** 2 * dx) / np.sum(fine_vals**2 * dx)))
