"""Cell problems and the effective Onsager tensor.

For every macroscopic driving force (a pressure gradient e_k, or a
chemical-potential gradient e_k of species l) the coupled cell problem is

    -lap(v) + grad(pi) = lambda^0 + sum_j z_j n_j (lambda^j + grad(theta_j)),  div v = 0,
    -div(n_i (sum_j K_ij z_j (lambda^j + grad(theta_j)) + Pe_i v)) = 0,

with v = 0 on the solid boundary, no-flux for theta_i and periodicity.  The
ion equations are scaled by z_i / Pe_i and negated, which turns the discrete
system into a symmetric saddle-point matrix; the pressure and every theta_i
carry a zero-mean multiplier.  All (1 + N) d right-hand sides share one LU
factorization.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import fem
from .equilibrium import EquilibriumField
from .errors import ModelValidityError
from .mesh import Mesh

logger = logging.getLogger(__name__)

DIM = 2


@dataclass
class CellSolutionSet:
    """Solutions of all canonical cell problems.

    Column r of each array belongs to the driving force ``forces[r]`` = (source, k)
    where source 0 is the pressure gradient and source l >= 1 the
    chemical-potential gradient of species l - 1.
    """

    equilibrium: EquilibriumField
    velocity_space: fem.FunctionSpace
    potential_space: fem.FunctionSpace
    pressure_space: fem.FunctionSpace
    velocity: np.ndarray  # (ndof_v, 2, R) full coefficient vectors
    pressure: np.ndarray  # (ndof_p, R)
    potentials: np.ndarray  # (N, ndof_t, R)
    forces: list[tuple[int, int]]
    scaled_diffusion: np.ndarray  # K~_ij at quadrature points, (nt, nq, N, N)
    residual: float
    divergence: float
    solve_info: dict = field(default_factory=dict)

    def column(self, source: int, k: int) -> int:
        return self.forces.index((source, k))


@dataclass
class EffectiveTensor:
    """Effective blocks and the assembled Onsager matrix.

    ``permeability`` is K (d x d); ``convective[i]`` is J_i; ``streaming[j]`` is L_j;
    ``diffusion[j, i]`` is D_ji.  ``matrix`` is the ((1+N) d)^2 Onsager matrix
    with block rows (K, J_i / z_i) and (L_j, D_ji / z_i).
    """

    permeability: np.ndarray
    convective: np.ndarray
    streaming: np.ndarray
    diffusion: np.ndarray
    matrix: np.ndarray
    valence: np.ndarray
    names: list[str]
    fluid_area: float

    @property
    def symmetric_part(self) -> np.ndarray:
        return 0.5 * (self.matrix + self.matrix.T)


def _canonical_forces(nsp: int) -> list[tuple[int, int]]:
    return [(s, k) for s in range(nsp + 1) for k in range(DIM)]


def scaled_diffusion(eq: EquilibriumField) -> np.ndarray:
    """K~_ij = z_i z_j n_i K_ij / Pe_i at quadrature points (symmetric in i, j)."""
    z = eq.scaling.system.valence
    pe = eq.scaling.peclet
    n = eq.concentration
    return (z[:, None] * z[None, :] / pe[:, None]) * n[..., :, None] * eq.transport.tensor


def solve_cell_problems(eq: EquilibriumField, rtol: float = 1e-9) -> CellSolutionSet:
    """Solve the (1 + N) d canonical cell problems on the equilibrium mesh."""
    sigma = eq.scaling.system.diameter
    if eq.model == "msa" and not np.allclose(sigma, sigma[0], rtol=1e-12, atol=0):
        raise ModelValidityError(
            "cell problems need equal ion diameters: the linearized MSA flux is only symmetric in that case "
            f"(got {', '.join(f'{s:.3e}' for s in sigma)} m)"
        )
    mesh: Mesh = eq.mesh
    geo = eq.geometry
    z = eq.scaling.system.valence
    nsp = len(z)
    vel = fem.FunctionSpace(mesh, 2, dirichlet_on_solid=True, geometry=geo)
    prs = fem.FunctionSpace(mesh, 1, geometry=geo)
    pot = prs  # theta_j share the pressure space
    n = eq.concentration
    ktil = scaled_diffusion(eq)

    lap, div = fem.stokes_blocks(fem.StokesSpaces(vel, prs))
    coupling = [
        [(fem.mixed_gradient(vel, pot, k, -z[j] * n[..., j]))[vel.free] for j in range(nsp)] for k in range(DIM)
    ]
    diff = [[fem.stiffness(pot, ktil[..., i, j]) for j in range(nsp)] for i in range(nsp)]

    nf, npr, nt_ = vel.nfree, prs.ndof, pot.ndof
    blocks: list[list] = []
    size = 2 + 1 + nsp
    for r in range(size):
        blocks.append([None] * size)
    blocks[0][0] = lap
    blocks[1][1] = lap
    blocks[0][2] = div[0].T
    blocks[1][2] = div[1].T
    blocks[2][0] = div[0]
    blocks[2][1] = div[1]
    for j in range(nsp):
        for k in range(DIM):
            blocks[k][3 + j] = coupling[k][j]
            blocks[3 + j][k] = coupling[k][j].T
        for i in range(nsp):
            blocks[3 + i][3 + j] = -diff[i][j]
    matrix = sp.bmat(blocks, format="csr")

    offsets = np.cumsum([0, nf, nf, npr] + [nt_] * nsp)
    forces = _canonical_forces(nsp)
    rhs = np.zeros((offsets[-1], len(forces)))
    dx = geo.dx
    for col, (src, k) in enumerate(forces):
        # Velocity load: lambda^0 + sum_j z_j n_j lambda^j.
        fk = np.ones_like(dx) if src == 0 else z[src - 1] * n[..., src - 1]
        rhs[offsets[k] : offsets[k + 1], col] = fem.load(vel, fk)[vel.free]
        if src > 0:
            l = src - 1
            for i in range(nsp):
                flux = np.zeros(dx.shape + (DIM,))
                flux[..., k] = ktil[..., i, l]
                rhs[offsets[3 + i] : offsets[4 + i], col] = fem.load_gradient(pot, flux)

    mean_p = prs.mean_vector()
    cons = [(slice(offsets[2], offsets[3]), mean_p)]
    cons += [(slice(offsets[3 + i], offsets[4 + i]), mean_p) for i in range(nsp)]
    big, big_rhs = fem.with_mean_constraints(matrix, rhs, cons)
    lu = fem.Factorization(big)
    sol = lu.solve(big_rhs, rtol)
    residual = float(np.max(fem.backward_error(lu.matrix, sol, big_rhs)))

    velocity = np.zeros((vel.ndof, DIM, len(forces)))
    for k in range(DIM):
        velocity[vel.free, k, :] = sol[offsets[k] : offsets[k + 1]]
    pressure = sol[offsets[2] : offsets[3]]
    potentials = np.stack([sol[offsets[3 + i] : offsets[4 + i]] for i in range(nsp)])

    # Discrete divergence relative to the size of the terms it sums.
    bv = div[0] @ sol[offsets[0] : offsets[1]] + div[1] @ sol[offsets[1] : offsets[2]]
    mag = abs(div[0]) @ np.abs(sol[offsets[0] : offsets[1]]) + abs(div[1]) @ np.abs(sol[offsets[1] : offsets[2]])
    divergence = float(np.max(np.abs(bv)) / max(float(np.max(mag)), 1e-300))

    info = {"unknowns": int(big.shape[0]), "nnz": int(big.nnz)}
    return CellSolutionSet(eq, vel, pot, prs, velocity, pressure, potentials, forces, ktil, residual, divergence, info)


def assemble_effective_tensor(cells: CellSolutionSet) -> EffectiveTensor:
    """Cell averages defining K, J_i, L_j, D_ji and the Onsager matrix."""
    eq = cells.equilibrium
    z = eq.scaling.system.valence
    pe = eq.scaling.peclet
    nsp = len(z)
    dx = eq.geometry.dx
    area = float(dx.sum())
    n = eq.concentration
    ktensor = eq.transport.tensor
    nforces = len(cells.forces)

    v_q = _vector_at_quad(cells.velocity_space, cells.velocity)  # (nt, nq, 2, R)
    gt_q = np.stack([_gradient_at_quad(cells.potential_space, cells.potentials[m]) for m in range(nsp)])  # (N, nt, nq, 2, R)

    avg_v = np.einsum("eqlr,eq->lr", v_q, dx) / area  # (2, R)
    # Ion fluxes: n_j (v + sum_m K_jm z_m / Pe_j (lambda^m + grad theta_m)).
    lam = np.zeros((nsp, DIM, nforces))
    for col, (src, k) in enumerate(cells.forces):
        if src > 0:
            lam[src - 1, k, col] = 1.0
    weights = ktensor * (z[None, None, None, :] / pe[None, None, :, None])  # (nt, nq, j, m)
    drive = gt_q + lam[:, None, None, :, :]  # (m, nt, nq, 2, R)
    flux = n[..., None, None] * v_q[:, :, None, :, :] + np.einsum(
        "eqjm,meqlr->eqjlr", n[..., None] * weights, drive, optimize=True
    )
    avg_flux = np.einsum("eqjlr,eq->jlr", flux, dx) / area  # (N, 2, R)

    def block(values: np.ndarray, src: int) -> np.ndarray:
        """d x d block [l, k] from columns belonging to ``src``."""
        cols = [cells.column(src, k) for k in range(DIM)]
        return values[..., cols]

    perm = block(avg_v, 0)
    conv = np.stack([block(avg_v, i + 1) for i in range(nsp)])
    stream = np.stack([block(avg_flux[j], 0) for j in range(nsp)])
    diff = np.stack([np.stack([block(avg_flux[j], i + 1) for i in range(nsp)]) for j in range(nsp)])

    size = (1 + nsp) * DIM
    mat = np.zeros((size, size))
    mat[:DIM, :DIM] = perm
    for i in range(nsp):
        mat[:DIM, DIM * (1 + i) : DIM * (2 + i)] = conv[i] / z[i]
        mat[DIM * (1 + i) : DIM * (2 + i), :DIM] = stream[i]
        for j in range(nsp):
            mat[DIM * (1 + j) : DIM * (2 + j), DIM * (1 + i) : DIM * (2 + i)] = diff[j, i] / z[i]
    return EffectiveTensor(perm, conv, stream, diff, mat, z, eq.scaling.system.names, area)


def _vector_at_quad(space: fem.FunctionSpace, coeffs: np.ndarray) -> np.ndarray:
    """(ndof, 2, R) coefficients to (nt, nq, 2, R) values."""
    return np.einsum("eadr,qa->eqdr", coeffs[space.cell_dofs], space.values_ref, optimize=True)


def _gradient_at_quad(space: fem.FunctionSpace, coeffs: np.ndarray) -> np.ndarray:
    """(ndof, R) coefficients to (nt, nq, 2, R) gradients."""
    return np.einsum("ear,eqak->eqkr", coeffs[space.cell_dofs], space.grads, optimize=True)


# ---------------------------------------------------------------------------
# Checks
# ---------------------------------------------------------------------------


@dataclass
class OnsagerCheck:
    symmetry_residual: float
    min_eigenvalue: float
    reciprocity: dict[str, float]

    def passed(self, tol: float = 1e-6) -> bool:
        return self.symmetry_residual <= tol and self.min_eigenvalue > 0


def onsager_check(tensor: EffectiveTensor) -> OnsagerCheck:
    """Symmetry, positivity and block reciprocity of the Onsager matrix."""
    m = tensor.matrix
    sym = float(np.linalg.norm(m - m.T) / np.linalg.norm(m))
    mineig = float(np.min(np.linalg.eigvalsh(tensor.symmetric_part)))
    z = tensor.valence
    recip: dict[str, float] = {}
    for i, name in enumerate(tensor.names):
        a, b = tensor.streaming[i], (tensor.convective[i] / z[i]).T
        recip[f"L_{name}"] = float(np.linalg.norm(a - b) / max(np.linalg.norm(a), 1e-300))
        for j, other in enumerate(tensor.names):
            a, b = tensor.diffusion[j, i] / z[i], (tensor.diffusion[i, j] / z[j]).T
            recip[f"D_{other}_{name}"] = float(np.linalg.norm(a - b) / max(np.linalg.norm(a), 1e-300))
    return OnsagerCheck(sym, mineig, recip)


def energy_identity(cells: CellSolutionSet, tensor: EffectiveTensor, lam: np.ndarray) -> tuple[float, float]:
    """Quadratic form M Lambda . Lambda and the dissipation integral for forces ``lam``.

    ``lam`` has shape (1 + N, d): the pressure gradient followed by the
    chemical-potential gradients lambda^i; Lambda = (lambda^0, z_i lambda^i).
    """
    eq = cells.equilibrium
    z = tensor.valence
    nsp = len(z)
    coef = np.zeros(len(cells.forces))
    for col, (src, k) in enumerate(cells.forces):
        coef[col] = lam[src, k]
    big_lam = np.concatenate([lam[0]] + [z[i] * lam[i + 1] for i in range(nsp)])
    quad = float(big_lam @ tensor.matrix @ big_lam)

    vel = cells.velocity @ coef  # (ndof, 2)
    grad_v = np.stack([cells.velocity_space.gradients_at_quad(vel[:, k]) for k in range(DIM)], axis=2)
    pots = cells.potentials @ coef  # (N, ndof_t)
    drive = np.stack([cells.potential_space.gradients_at_quad(pots[m]) + lam[m + 1] for m in range(nsp)], axis=2)
    ktil = cells.scaled_diffusion
    dx = eq.geometry.dx
    viscous = float(np.sum(np.einsum("eqkl,eqkl->eq", grad_v, grad_v) * dx))
    ionic = float(np.sum(np.einsum("eqij,eqik,eqjk->eq", ktil, drive, drive) * dx))
    return quad, (viscous + ionic) / tensor.fluid_area


def neutral_permeability(mesh: Mesh, geometry: fem.ElementGeometry | None = None) -> np.ndarray:
    """Permeability of an uncharged fluid in the same cell (Stokes cell problem)."""
    spaces = fem.StokesSpaces.build(mesh, geometry)
    geo = spaces.velocity.geometry
    force = np.zeros(geo.dx.shape + (DIM, DIM))
    for k in range(DIM):
        force[:, :, k, k] = 1.0
    system = fem.assemble_stokes(spaces, force)
    sol = fem.solve(system)
    v = spaces.velocity
    vel = np.zeros((v.ndof, DIM, DIM))
    vel[v.free, 0, :] = sol[system.blocks["ux"]]
    vel[v.free, 1, :] = sol[system.blocks["uy"]]
    vq = _vector_at_quad(v, vel)
    return np.einsum("eqlk,eq->lk", vq, geo.dx) / geo.dx.sum()


def perforated_diffusion(mesh: Mesh, geometry: fem.ElementGeometry | None = None) -> np.ndarray:
    """Effective diffusion matrix of the fluid domain with no-flux inclusions (P1)."""
    space = fem.FunctionSpace(mesh, 1, geometry=geometry)
    geo = space.geometry
    out = np.zeros((DIM, DIM))
    for k in range(DIM):
        flux = np.zeros(geo.dx.shape + (DIM,))
        flux[..., k] = 1.0
        system = fem.assemble_scalar(space, flux=flux, zero_mean=True)
        chi = fem.solve(system)[system.blocks["u"]]
        grad = space.gradients_at_quad(chi)
        grad[..., k] += 1.0
        out[:, k] = np.einsum("eql,eq->l", grad, geo.dx) / geo.dx.sum()
    return out


def tensor_rows(tensor: EffectiveTensor, stokes: np.ndarray | None = None, order: list[str] | None = None) -> dict[str, float]:
    """Flat name -> value mapping of every tensor entry (1-based spatial indices).

    Species are labelled by name, or by their 1-based position in ``order`` when given.
    """
    out: dict[str, float] = {}
    d = range(DIM)
    for l in d:
        for k in d:
            out[f"K_{l + 1}{k + 1}"] = float(tensor.permeability[l, k])
    for l in d:
        out[f"Krel_{l + 1}{l + 1}"] = float(tensor.permeability[l, l] / stokes[l, l]) if stokes is not None else float("nan")
    names = order if order is not None else tensor.names
    label = {n: (str(p + 1) if order is not None else n) for p, n in enumerate(names)}
    idx = [tensor.names.index(n) for n in names]
    for i, name in zip(idx, names):
        for l in d:
            for k in d:
                out[f"J{label[name]}_{l + 1}{k + 1}"] = float(tensor.convective[i, l, k])
    for j, name in zip(idx, names):
        for l in d:
            for k in d:
                out[f"L{label[name]}_{l + 1}{k + 1}"] = float(tensor.streaming[j, l, k])
    for j, nj in zip(idx, names):
        for i, ni in zip(idx, names):
            for l in d:
                for k in d:
                    out[f"D{label[nj]}{label[ni]}_{l + 1}{k + 1}"] = float(tensor.diffusion[j, i, l, k])
    return out


def write_tensor_report(tensor: EffectiveTensor, check: OnsagerCheck, path: str | Path, stokes: np.ndarray | None = None) -> None:
    rows = tensor_rows(tensor, stokes)
    lines = ["# effective Onsager tensor (dimensionless)"]
    lines += [f"{k} = {v:.17g}" for k, v in rows.items()]
    lines.append(f"symmetry_residual = {check.symmetry_residual:.6e}")
    lines.append(f"min_eigenvalue = {check.min_eigenvalue:.6e}")
    for k, v in check.reciprocity.items():
        lines.append(f"reciprocity_{k} = {v:.6e}")
    lines.append("matrix =")
    lines += [" ".join(f"{x:.17g}" for x in row) for row in tensor.matrix]
    Path(path).write_text("\n".join(lines) + "\n")
