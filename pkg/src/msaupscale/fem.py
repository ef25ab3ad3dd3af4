"""Lagrange P1/P2 finite elements on periodic unit-cell meshes.

Degrees of freedom on the right/top sides are identified with their partners
on the left/bottom sides.  Optional homogeneous Dirichlet conditions on the
solid boundary are imposed by elimination.  All element integrals use one
6-point rule exact for polynomials of degree 4, so coefficient fields are
stored as (num_triangles, 6) arrays of quadrature-point values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import SingularSystemError
from .mesh import SOLID, Mesh

# Symmetric 6-point rule of degree 4 in barycentric coordinates; weights sum to 1.
_QA, _WA = 0.44594849091596488632, 0.22338158967801146570
_QB, _WB = 0.09157621350977074346, 0.10995174365532186764
QUAD_BARY = np.array(
    [
        [1 - 2 * _QA, _QA, _QA],
        [_QA, 1 - 2 * _QA, _QA],
        [_QA, _QA, 1 - 2 * _QA],
        [1 - 2 * _QB, _QB, _QB],
        [_QB, 1 - 2 * _QB, _QB],
        [_QB, _QB, 1 - 2 * _QB],
    ]
)
QUAD_WEIGHTS = np.array([_WA, _WA, _WA, _WB, _WB, _WB])

# 3-point Gauss rule on [0, 1] for edge integrals.
LINE_POINTS = 0.5 + 0.5 * np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)])
LINE_WEIGHTS = np.array([5.0, 8.0, 5.0]) / 18.0

# Local P2 numbering: vertices 0..2, then edge midpoints (0,1), (1,2), (2,0).
LOCAL_EDGES = ((0, 1), (1, 2), (2, 0))

# Smallest admissible |U_kk| relative to the largest LU pivot.
PIVOT_RTOL = 1e-15


def basis_values(degree: int, bary: np.ndarray) -> np.ndarray:
    """Reference basis values, shape (npoints, nloc)."""
    if degree == 1:
        return bary.copy()
    lam = bary
    verts = [lam[:, i] * (2 * lam[:, i] - 1) for i in range(3)]
    edges = [4 * lam[:, i] * lam[:, j] for i, j in LOCAL_EDGES]
    return np.stack(verts + edges, axis=1)


def basis_gradients(degree: int, bary: np.ndarray, grad_bary: np.ndarray) -> np.ndarray:
    """Physical gradients, shape (nt, npoints, nloc, 2)."""
    gl = grad_bary[:, None, :, :]  # (nt, 1, 3, 2)
    if degree == 1:
        return np.broadcast_to(gl, (grad_bary.shape[0], len(bary), 3, 2)).copy()
    lam = bary[None, :, :, None]  # (1, nq, 3, 1)
    verts = (4 * lam - 1) * gl
    edges = [4 * (lam[:, :, j] * gl[:, :, i] + lam[:, :, i] * gl[:, :, j]) for i, j in LOCAL_EDGES]
    return np.concatenate([verts, np.stack(edges, axis=2)], axis=2)


class ElementGeometry:
    """Per-triangle affine data and quadrature points."""

    def __init__(self, mesh: Mesh):
        p = mesh.vertices[mesh.triangles]
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        two_area = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        if np.any(two_area <= 0):
            raise ValueError("mesh has degenerate or clockwise triangles")
        self.area = 0.5 * two_area
        x, y = p[:, :, 0], p[:, :, 1]
        gx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
        gy = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
        self.grad_bary = np.stack([gx, gy], axis=2) / two_area[:, None, None]
        self.points = np.einsum("qi,eik->eqk", QUAD_BARY, p)
        self.dx = self.area[:, None] * QUAD_WEIGHTS[None, :]

    def integrate(self, values: np.ndarray) -> float:
        """Integral of a quadrature-point field over the fluid domain."""
        return float(np.sum(values * self.dx))


class FunctionSpace:
    """Scalar periodic Lagrange space of degree 1 or 2."""

    def __init__(self, mesh: Mesh, degree: int, dirichlet_on_solid: bool = False, geometry: ElementGeometry | None = None):
        if degree not in (1, 2):
            raise ValueError("only P1 and P2 are supported")
        self.mesh = mesh
        self.degree = degree
        self.geometry = geometry or ElementGeometry(mesh)
        nv = mesh.num_vertices
        vmaster = _direct_vertex_master(mesh)
        if degree == 1:
            raw_cells = mesh.triangles
            raw_master = vmaster
            raw_coords = mesh.vertices
        else:
            edges, t2e = mesh.edges()
            raw_cells = np.hstack([mesh.triangles, nv + t2e])
            raw_master = np.concatenate([vmaster, nv + _edge_master(mesh, edges, vmaster)])
            raw_coords = np.vstack([mesh.vertices, 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])])
        # Resolve chains (corner vertices map twice).
        for _ in range(3):
            raw_master = raw_master[raw_master]
        reps, inverse = np.unique(raw_master, return_inverse=True)
        self.raw_to_dof = inverse
        self.cell_dofs = inverse[raw_cells]
        self.ndof = len(reps)
        self.coords = raw_coords[reps]
        self.dirichlet = np.zeros(self.ndof, dtype=bool)
        if dirichlet_on_solid:
            solid = mesh.solid_edges
            self.dirichlet[inverse[solid.ravel()]] = True
            if degree == 2 and len(solid):
                edges, _ = mesh.edges()
                eid = _edge_ids(edges, solid)
                self.dirichlet[inverse[nv + eid]] = True
        self.free = np.flatnonzero(~self.dirichlet)
        self.nfree = len(self.free)
        self.values_ref = basis_values(degree, QUAD_BARY)  # (nq, nloc)
        self._grads: np.ndarray | None = None

    @property
    def nloc(self) -> int:
        return 3 if self.degree == 1 else 6

    @property
    def grads(self) -> np.ndarray:
        if self._grads is None:
            self._grads = basis_gradients(self.degree, QUAD_BARY, self.geometry.grad_bary)
        return self._grads

    def interpolate(self, func: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        return np.asarray(func(self.coords), dtype=float)

    def values_at_quad(self, coeffs: np.ndarray) -> np.ndarray:
        return np.einsum("ea,qa->eq", coeffs[self.cell_dofs], self.values_ref)

    def gradients_at_quad(self, coeffs: np.ndarray) -> np.ndarray:
        return np.einsum("ea,eqak->eqk", coeffs[self.cell_dofs], self.grads)

    def mean_vector(self) -> np.ndarray:
        """Integrals of the basis functions (constraint row for zero mean)."""
        return load(self, np.ones_like(self.geometry.dx))

    def extend(self, free_values: np.ndarray) -> np.ndarray:
        """Full coefficient vector from free values (zeros on Dirichlet dofs)."""
        out = np.zeros((self.ndof,) + free_values.shape[1:])
        out[self.free] = free_values
        return out


def _direct_vertex_master(mesh: Mesh) -> np.ndarray:
    master = np.arange(mesh.num_vertices)
    if len(mesh.periodic_pairs):
        master[mesh.periodic_pairs[:, 0]] = mesh.periodic_pairs[:, 1]
    return master


def _edge_ids(edges: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    index = {(int(a), int(b)): k for k, (a, b) in enumerate(edges)}
    key = np.sort(pairs, axis=1)
    return np.array([index[(int(a), int(b))] for a, b in key], dtype=np.int64)


def _edge_master(mesh: Mesh, edges: np.ndarray, vmaster: np.ndarray) -> np.ndarray:
    """Partner edge on the left/bottom side for edges lying on the right/top side."""
    v = mesh.vertices
    master = np.arange(len(edges))
    index = {(int(a), int(b)): k for k, (a, b) in enumerate(edges)}
    pa, pb = v[edges[:, 0]], v[edges[:, 1]]
    on_right = (pa[:, 0] == 1.0) & (pb[:, 0] == 1.0)
    on_top = (pa[:, 1] == 1.0) & (pb[:, 1] == 1.0)
    if not (np.any(on_right) or np.any(on_top)):
        return master
    # One-step partners: x-shift for the right side, y-shift for the top side.
    coord_index = {(float(x), float(y)): i for i, (x, y) in enumerate(v)}

    def shifted(i: int, dx: float, dy: float) -> int:
        return coord_index[(float(v[i, 0] - dx), float(v[i, 1] - dy))]

    for k in np.flatnonzero(on_right | on_top):
        dx, dy = (1.0, 0.0) if on_right[k] else (0.0, 1.0)
        a, b = shifted(edges[k, 0], dx, dy), shifted(edges[k, 1], dx, dy)
        master[k] = index[(min(a, b), max(a, b))]
    return master


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------


def _coeff(space: FunctionSpace, coeff) -> np.ndarray:
    dx = space.geometry.dx
    if coeff is None:
        return dx
    return np.broadcast_to(np.asarray(coeff, dtype=float), dx.shape) * dx


def scatter_matrix(rows: np.ndarray, cols: np.ndarray, local: np.ndarray, shape: tuple[int, int]) -> sp.csr_matrix:
    r = np.broadcast_to(rows[:, :, None], local.shape).ravel()
    c = np.broadcast_to(cols[:, None, :], local.shape).ravel()
    return sp.coo_matrix((local.ravel(), (r, c)), shape=shape).tocsr()


def scatter_vector(dofs: np.ndarray, local: np.ndarray, size: int) -> np.ndarray:
    if local.ndim == 2:
        return np.bincount(dofs.ravel(), weights=local.ravel(), minlength=size)
    return np.stack([scatter_vector(dofs, local[..., k], size) for k in range(local.shape[-1])], axis=-1)


def stiffness(space: FunctionSpace, coeff=None) -> sp.csr_matrix:
    """Matrix of the form c grad(u) . grad(v)."""
    g = space.grads
    local = np.einsum("eq,eqak,eqbk->eab", _coeff(space, coeff), g, g, optimize=True)
    return scatter_matrix(space.cell_dofs, space.cell_dofs, local, (space.ndof, space.ndof))


def mass(space: FunctionSpace, coeff=None) -> sp.csr_matrix:
    phi = space.values_ref
    local = np.einsum("eq,qa,qb->eab", _coeff(space, coeff), phi, phi, optimize=True)
    return scatter_matrix(space.cell_dofs, space.cell_dofs, local, (space.ndof, space.ndof))


def mixed_gradient(test: FunctionSpace, trial: FunctionSpace, component: int, coeff=None) -> sp.csr_matrix:
    """Matrix of the form c v d_k(u) with v from ``test`` and u from ``trial``."""
    local = np.einsum(
        "eq,qa,eqb->eab", _coeff(test, coeff), test.values_ref, trial.grads[..., component], optimize=True
    )
    return scatter_matrix(test.cell_dofs, trial.cell_dofs, local, (test.ndof, trial.ndof))


def load(space: FunctionSpace, source) -> np.ndarray:
    """Vector of integrals f v; ``source`` is a quadrature field or a constant."""
    local = np.einsum("eq,qa->ea", _coeff(space, source), space.values_ref)
    return scatter_vector(space.cell_dofs, local, space.ndof)


def load_gradient(space: FunctionSpace, flux: np.ndarray) -> np.ndarray:
    """Vector of integrals g . grad(v) for a vector quadrature field g."""
    g = np.asarray(flux, dtype=float) * space.geometry.dx[..., None]
    local = np.einsum("eqk,eqak->ea", g, space.grads)
    return scatter_vector(space.cell_dofs, local, space.ndof)


def boundary_load(space: FunctionSpace, density: Callable[[np.ndarray], np.ndarray] | float, marker: int = SOLID) -> np.ndarray:
    """Vector of boundary integrals g v over edges carrying ``marker``."""
    mesh = space.mesh
    bedges = mesh.boundary_edges[mesh.boundary_edges[:, 2] == marker, :2]
    out = np.zeros(space.ndof)
    if not len(bedges):
        return out
    a, b = mesh.vertices[bedges[:, 0]], mesh.vertices[bedges[:, 1]]
    length = np.linalg.norm(b - a, axis=1)
    s = LINE_POINTS
    pts = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
    if callable(density):
        g = np.asarray(density(pts.reshape(-1, 2)), dtype=float).reshape(len(bedges), len(s))
    else:
        g = np.full((len(bedges), len(s)), float(density))
    w = g * LINE_WEIGHTS[None, :] * length[:, None]
    if space.degree == 1:
        trace = np.stack([1 - s, s], axis=1)
        dofs = space.raw_to_dof[bedges]
    else:
        trace = np.stack([(1 - s) * (1 - 2 * s), s * (2 * s - 1), 4 * s * (1 - s)], axis=1)
        edges, _ = mesh.edges()
        eid = _edge_ids(edges, bedges)
        dofs = space.raw_to_dof[np.c_[bedges, mesh.num_vertices + eid]]
    local = np.einsum("eq,qa->ea", w, trace)
    np.add.at(out, dofs.ravel(), local.ravel())
    return out


# ---------------------------------------------------------------------------
# Linear systems
# ---------------------------------------------------------------------------


@dataclass
class LinearSystem:
    """Sparse matrix with right-hand side(s) and named unknown blocks."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    blocks: dict[str, slice] = field(default_factory=dict)

    def split(self, solution: np.ndarray) -> dict[str, np.ndarray]:
        return {name: solution[sl] for name, sl in self.blocks.items()}


class Factorization:
    """Sparse LU factorization reused across right-hand sides."""

    def __init__(self, matrix: sp.spmatrix):
        self.matrix = sp.csc_matrix(matrix)
        try:
            self._lu = splu(self.matrix)
        except RuntimeError as exc:
            raise SingularSystemError(f"factorization failed: {exc}") from exc
        pivots = np.abs(self._lu.U.diagonal())
        if pivots.size and pivots.min() <= PIVOT_RTOL * pivots.max():
            raise SingularSystemError(f"numerically singular matrix (pivot ratio {pivots.min() / pivots.max():.1e})")

    def solve(self, rhs: np.ndarray, rtol: float = 1e-9) -> np.ndarray:
        x = self._lu.solve(np.asarray(rhs, dtype=float))
        res = backward_error(self.matrix, x, rhs)
        if not np.all(np.isfinite(x)) or np.max(res) > rtol:
            raise SingularSystemError(f"linear solve residual {np.max(res):.3e} exceeds {rtol:.1e}")
        return x


def backward_error(matrix: sp.spmatrix, x: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Normwise relative residual ||Ax - b|| / (||A|| ||x|| + ||b||) per column."""
    r = matrix @ x - rhs
    anorm = sp.linalg.norm(matrix, np.inf)
    xa, ba, ra = (np.abs(v).reshape(len(v), -1) for v in (x, rhs, r))
    denom = anorm * xa.max(axis=0) + ba.max(axis=0)
    return np.where(denom > 0, ra.max(axis=0) / np.where(denom > 0, denom, 1.0), 0.0)


def solve(system: LinearSystem, rtol: float = 1e-9) -> np.ndarray:
    return Factorization(system.matrix).solve(system.rhs, rtol)


def with_mean_constraints(matrix: sp.spmatrix, rhs: np.ndarray, constraints: list[tuple[slice, np.ndarray]]) -> tuple[sp.csr_matrix, np.ndarray]:
    """Append one Lagrange-multiplier row/column per (block, weight vector) pair."""
    n = matrix.shape[0]
    cols = []
    for sl, w in constraints:
        col = np.zeros(n)
        col[sl] = w
        cols.append(col)
    c = sp.csr_matrix(np.array(cols).T) if cols else sp.csr_matrix((n, 0))
    k = c.shape[1]
    big = sp.bmat([[matrix, c], [c.T, None]], format="csr") if k else sp.csr_matrix(matrix)
    extra = np.zeros((k,) + rhs.shape[1:])
    return big, np.concatenate([rhs, extra], axis=0)


def assemble_scalar(
    space: FunctionSpace,
    diffusion=1.0,
    reaction=None,
    source=None,
    flux=None,
    boundary_flux: Callable[[np.ndarray], np.ndarray] | float | None = None,
    zero_mean: bool = False,
) -> LinearSystem:
    """Periodic problem -div(c grad u) + r u = f + div(g), with c grad u . nu = h on the solid boundary."""
    a = stiffness(space, diffusion)
    if reaction is not None:
        a = a + mass(space, reaction)
    b = np.zeros(space.ndof)
    if source is not None:
        b += load(space, source)
    if flux is not None:
        b -= load_gradient(space, flux)
    if boundary_flux is not None:
        b += boundary_load(space, boundary_flux)
    free = space.free
    a = a[free][:, free]
    b = b[free]
    blocks = {"u": slice(0, space.nfree)}
    if zero_mean:
        a, b = with_mean_constraints(a, b, [(blocks["u"], space.mean_vector()[free])])
        blocks["multiplier"] = slice(space.nfree, space.nfree + 1)
    return LinearSystem(sp.csr_matrix(a), b, blocks)


@dataclass
class StokesSpaces:
    velocity: FunctionSpace
    pressure: FunctionSpace

    @classmethod
    def build(cls, mesh: Mesh, geometry: ElementGeometry | None = None) -> "StokesSpaces":
        geometry = geometry or ElementGeometry(mesh)
        return cls(FunctionSpace(mesh, 2, dirichlet_on_solid=True, geometry=geometry), FunctionSpace(mesh, 1, geometry=geometry))


def stokes_blocks(spaces: StokesSpaces) -> tuple[sp.csr_matrix, list[sp.csr_matrix]]:
    """Velocity Laplacian on free dofs and the pressure-divergence blocks -q d_k(v)."""
    v, q = spaces.velocity, spaces.pressure
    lap = stiffness(v)[v.free][:, v.free]
    div = [(-mixed_gradient(q, v, k))[:, v.free] for k in range(2)]
    return lap, div


def assemble_stokes(spaces: StokesSpaces, force: np.ndarray, velocity_zero_mean: bool = False) -> LinearSystem:
    """Periodic Stokes -lap(v) + grad(pi) = f, div v = 0, v = 0 on the solid boundary.

    ``force`` has shape (nt, nq, 2) or (nt, nq, 2, m) for m right-hand sides.
    Pressure (and optionally each velocity component) is fixed by a zero-mean
    multiplier.
    """
    v, q = spaces.velocity, spaces.pressure
    lap, div = stokes_blocks(spaces)
    nf, npr = v.nfree, q.ndof
    mat = sp.bmat([[lap, None, div[0].T], [None, lap, div[1].T], [div[0], div[1], None]], format="csr")
    force = np.asarray(force, dtype=float)
    rhs = np.concatenate(
        [load_many(v, force[:, :, 0])[v.free], load_many(v, force[:, :, 1])[v.free], np.zeros((npr,) + force.shape[3:])]
    )
    blocks = {"ux": slice(0, nf), "uy": slice(nf, 2 * nf), "p": slice(2 * nf, 2 * nf + npr)}
    cons = [(blocks["p"], q.mean_vector())]
    if velocity_zero_mean:
        mv = v.mean_vector()[v.free]
        cons += [(blocks["ux"], mv), (blocks["uy"], mv)]
    mat, rhs = with_mean_constraints(mat, rhs, cons)
    return LinearSystem(mat, rhs, blocks)


def load_many(space: FunctionSpace, source: np.ndarray) -> np.ndarray:
    """``load`` for a source with trailing right-hand-side axis."""
    if source.ndim == 2:
        return load(space, source)
    local = np.einsum("eqm,qa->eam", source * space.geometry.dx[..., None], space.values_ref)
    return scatter_vector(space.cell_dofs, local, space.ndof)


def write_coo(matrix: sp.spmatrix, path: str | Path) -> None:
    """Text dump of a sparse matrix: header 'rows cols nnz', then 'i j value'."""
    m = sp.coo_matrix(matrix)
    order = np.lexsort((m.col, m.row))
    lines = [f"{m.shape[0]} {m.shape[1]} {m.nnz}"]
    lines += [f"{i} {j} {x:.17g}" for i, j, x in zip(m.row[order], m.col[order], m.data[order])]
    Path(path).write_text("\n".join(lines) + "\n")


def l2_norm(space: FunctionSpace, coeffs: np.ndarray, exact: Callable[[np.ndarray], np.ndarray] | None = None) -> float:
    """L2 norm of a discrete field, or of its difference with ``exact``."""
    vals = space.values_at_quad(coeffs)
    if exact is not None:
        pts = space.geometry.points
        vals = vals - np.asarray(exact(pts.reshape(-1, 2))).reshape(vals.shape)
    return float(np.sqrt(np.sum(vals**2 * space.geometry.dx)))
