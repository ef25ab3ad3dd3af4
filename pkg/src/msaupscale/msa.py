"""Mean spherical approximation (MSA) closures for an N-species electrolyte.

Every function here is pointwise in the electrostatic potential and vectorized
over arbitrary leading array shapes, so the same code serves scalar checks and
whole fields sampled at quadrature points.

Dimensionless conventions: concentrations are measured in units of the
characteristic concentration ``n_c``, the potential in units of ``k_B T / e``
and the screening parameter in units of ``Gamma_c = sqrt(pi L_B n_c)``.
Lengths such as ion diameters and the Bjerrum length stay in metres.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Literal, Sequence

import numpy as np
from scipy import integrate

from .errors import ConvergenceError, ElectroneutralityError, ModelValidityError

logger = logging.getLogger(__name__)

Model = Literal["msa", "ideal"]
MODELS: tuple[str, ...] = ("msa", "ideal")

AVOGADRO = 6.022e23
LITRE = 1e-3  # m^3
BOUND1_FACTOR = 6.0 + 4.0 * np.sqrt(2.0)


def molar_to_number_density(c_mol_per_l: float) -> float:
    """Convert mol/l to particles per m^3."""
    return c_mol_per_l * AVOGADRO / LITRE


def number_density_to_molar(n: float) -> float:
    return n * LITRE / AVOGADRO


# ---------------------------------------------------------------------------
# Inputs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SolventEnv:
    """Solvent and physical constants (SI units)."""

    viscosity: float = 0.89e-3
    dielectric: float = 6.93e-10
    temperature: float = 298.0
    elementary_charge: float = 1.6e-19
    boltzmann: float = 1.38e-23

    def __post_init__(self) -> None:
        for name in ("viscosity", "dielectric", "temperature", "elementary_charge", "boltzmann"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def thermal_energy(self) -> float:
        return self.boltzmann * self.temperature

    @property
    def bjerrum_length(self) -> float:
        """Distance at which two unit charges interact with energy k_B T."""
        e = self.elementary_charge
        return e * e / (4.0 * np.pi * self.dielectric * self.thermal_energy)


@dataclass(frozen=True)
class Species:
    """One ionic species; ``concentration`` is the reservoir value in units of n_c."""

    name: str
    valence: int
    diffusivity: float
    diameter: float
    concentration: float

    def __post_init__(self) -> None:
        if int(self.valence) != self.valence or self.valence == 0:
            raise ValueError(f"species {self.name}: valence must be a nonzero integer")
        if not self.diffusivity > 0:
            raise ValueError(f"species {self.name}: diffusivity must be positive")
        if not self.diameter >= 0:
            raise ValueError(f"species {self.name}: diameter must be nonnegative")
        if not self.concentration > 0:
            raise ValueError(f"species {self.name}: reservoir concentration must be positive")


@dataclass(frozen=True)
class ElectrolyteSystem:
    """Species (sorted by increasing valence) plus the solvent they live in."""

    species: tuple[Species, ...]
    solvent: SolventEnv = field(default_factory=SolventEnv)
    neutrality_tol: float = 1e-12

    def __post_init__(self) -> None:
        ordered = tuple(sorted(self.species, key=lambda s: s.valence))
        object.__setattr__(self, "species", ordered)
        if len(ordered) < 2:
            raise ValueError("at least two species are required")
        names = [s.name for s in ordered]
        if len(set(names)) != len(names):
            raise ValueError("species names must be unique")
        if ordered[0].valence > 0 or ordered[-1].valence < 0:
            raise ElectroneutralityError("need at least one anion and one cation")
        charge = float(np.sum(self.valence * self.reservoir))
        scale = float(np.sum(np.abs(self.valence) * self.reservoir))
        if abs(charge) > self.neutrality_tol * scale:
            raise ElectroneutralityError(
                f"reservoir net charge {charge:.3e} (relative {charge / scale:.3e})"
            )

    @property
    def size(self) -> int:
        return len(self.species)

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.species]

    @property
    def valence(self) -> np.ndarray:
        return np.array([s.valence for s in self.species], dtype=float)

    @property
    def diffusivity(self) -> np.ndarray:
        return np.array([s.diffusivity for s in self.species], dtype=float)

    @property
    def diameter(self) -> np.ndarray:
        return np.array([s.diameter for s in self.species], dtype=float)

    @property
    def reservoir(self) -> np.ndarray:
        return np.array([s.concentration for s in self.species], dtype=float)

    def with_reservoir(self, concentrations: Sequence[float]) -> "ElectrolyteSystem":
        new = tuple(replace(s, concentration=float(c)) for s, c in zip(self.species, concentrations))
        return replace(self, species=new)


@dataclass(frozen=True)
class ScalingGroup:
    """Characteristic scales and the dimensionless numbers built from them.

    ``debye_convention`` selects the Debye length entering beta:
    ``"numerical"`` (default) uses the reservoir ionic strength,
    lambda_D^2 = eps k_B T / (e^2 n_c sum_j n_j z_j^2), while ``"characteristic"``
    uses n_c alone, lambda_D^2 = eps k_B T / (e^2 n_c).
    """

    system: ElectrolyteSystem
    pore_size: float = 50e-9
    characteristic_concentration: float = molar_to_number_density(0.1)
    surface_charge: float = 0.129
    domain_size: float = 1e-3
    debye_convention: Literal["numerical", "characteristic"] = "numerical"

    def __post_init__(self) -> None:
        if not self.pore_size > 0 or not self.characteristic_concentration > 0:
            raise ValueError("pore size and characteristic concentration must be positive")
        if self.debye_convention not in ("numerical", "characteristic"):
            raise ValueError(f"unknown Debye convention {self.debye_convention!r}")

    @property
    def solvent(self) -> SolventEnv:
        return self.system.solvent

    @property
    def bjerrum_length(self) -> float:
        return self.solvent.bjerrum_length

    @property
    def characteristic_diameter(self) -> float:
        return float(np.max(self.system.diameter))

    @property
    def gamma_c(self) -> float:
        """Unit of the screening parameter, 1/m."""
        return float(np.sqrt(np.pi * self.bjerrum_length * self.characteristic_concentration))

    @property
    def xi_c(self) -> float:
        """Packing fraction scale (pi/6) n_c sigma_c^3."""
        return float(np.pi / 6.0 * self.characteristic_concentration * self.characteristic_diameter**3)

    @property
    def debye_length(self) -> float:
        env = self.solvent
        zz = float(np.sum(self.system.reservoir * self.system.valence**2)) if self.debye_convention == "numerical" else 1.0
        return float(
            np.sqrt(env.dielectric * env.thermal_energy / (env.elementary_charge**2 * self.characteristic_concentration * zz))
        )

    @property
    def beta(self) -> float:
        """Squared ratio of pore size to Debye length."""
        return (self.pore_size / self.debye_length) ** 2

    @property
    def n_sigma(self) -> float:
        env = self.solvent
        return env.elementary_charge * self.surface_charge * self.pore_size / (
            env.dielectric * env.thermal_energy
        )

    @property
    def peclet(self) -> np.ndarray:
        env = self.solvent
        return (
            self.pore_size**2
            * env.thermal_energy
            * self.characteristic_concentration
            / (env.viscosity * self.system.diffusivity)
        )

    @property
    def epsilon(self) -> float:
        return self.pore_size / self.domain_size

    @property
    def bjerrum_number(self) -> float:
        """Ratio of Bjerrum length to the characteristic diameter (diagnostic only)."""
        sc = self.characteristic_diameter
        return self.bjerrum_length / sc if sc > 0 else np.inf

    @property
    def stokes_number(self) -> float:
        """k_B T / (eta D_c sigma_c) with D_c the mean diffusivity (diagnostic only)."""
        sc = self.characteristic_diameter
        dc = float(np.mean(self.system.diffusivity))
        if sc <= 0:
            return np.inf
        return self.solvent.thermal_energy / (self.solvent.viscosity * dc * sc)

    def with_pore_size(self, pore_size: float) -> "ScalingGroup":
        return replace(self, pore_size=pore_size)

    def summary(self) -> dict[str, float]:
        out = {
            "bjerrum_length_m": self.bjerrum_length,
            "debye_length_m": self.debye_length,
            "beta": self.beta,
            "gamma_c_per_m": self.gamma_c,
            "xi_c": self.xi_c,
            "n_sigma": self.n_sigma,
            "bjerrum_number": self.bjerrum_number,
            "stokes_number": self.stokes_number,
        }
        for name, pe in zip(self.system.names, self.peclet):
            out[f"peclet_{name}"] = float(pe)
        return out


# ---------------------------------------------------------------------------
# Outputs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReservoirState:
    """Closure evaluated at zero potential."""

    model: str
    activity: np.ndarray  # gamma_j^inf
    screening: float  # Gamma(0), units of Gamma_c
    packing: float  # tilde xi(0)


@dataclass(frozen=True)
class LocalState:
    """Pointwise closure solution; arrays carry the input shape (+ species axis)."""

    psi: np.ndarray
    screening: np.ndarray
    packing: np.ndarray
    hard_sphere_activity: np.ndarray
    activity: np.ndarray
    concentration: np.ndarray


@dataclass(frozen=True)
class OnsagerLocal:
    """Pointwise transport corrections; matrices are indexed [..., i, j]."""

    omega_electrostatic: np.ndarray
    omega_hard_sphere: np.ndarray
    relaxation: np.ndarray
    kappa_q: np.ndarray
    tensor: np.ndarray  # K_ij


@dataclass(frozen=True)
class LinearizationCoeffs:
    """Derivative of the concentrations with respect to the potential.

    ``alpha[..., i, k]`` satisfies dn_i/dPsi = sum_k z_k alpha_ik.  A, B, C, D are
    the scalar intermediates (B in 1/m^3, C in m^3, A and D dimensionless).
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    alpha: np.ndarray

    def dconcentration_dpsi(self, valence: np.ndarray) -> np.ndarray:
        return np.einsum("...ik,k->...i", self.alpha, valence)


# ---------------------------------------------------------------------------
# Hard-sphere term
# ---------------------------------------------------------------------------


def hard_sphere_p(xi):
    """Carnahan-Starling excess chemical potential ln(gamma_HS)."""
    xi = np.asarray(xi, dtype=float)
    return xi * (8.0 - 9.0 * xi + 3.0 * xi * xi) / (1.0 - xi) ** 3


def hard_sphere_dp(xi):
    xi = np.asarray(xi, dtype=float)
    return (8.0 - 2.0 * xi) / (1.0 - xi) ** 4


# ---------------------------------------------------------------------------
# Scalar solvers
# ---------------------------------------------------------------------------


def _bracketed_newton(
    func: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]],
    x0: np.ndarray,
    lo: np.ndarray,
    hi: np.ndarray,
    accept: Callable[[np.ndarray, np.ndarray], np.ndarray],
    max_iter: int,
    what: str,
) -> np.ndarray:
    """Vectorized Newton with bisection fallback for increasing functions."""
    x = np.array(x0, dtype=float, copy=True)
    lo = np.array(np.broadcast_to(lo, x.shape), dtype=float, copy=True)
    hi = np.array(np.broadcast_to(hi, x.shape), dtype=float, copy=True)
    f = df = None
    for _ in range(max_iter):
        f, df = func(x)
        lo = np.where(f < 0, x, lo)
        hi = np.where(f > 0, x, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = x - f / df
        bad = ~np.isfinite(xn) | (xn <= lo) | (xn >= hi)
        xn = np.where(bad, 0.5 * (lo + hi), xn)
        small_step = np.abs(xn - x) <= 4.0 * np.finfo(float).eps * np.maximum(np.abs(x), 1e-300)
        exact = f == 0
        x = np.where(exact, x, xn)
        if np.all(exact | small_step | ((hi - lo) <= 4.0 * np.finfo(float).eps * np.abs(x))):
            break
    f, df = func(x)
    ok = accept(f, x)
    if not np.all(ok):
        worst = float(np.max(np.abs(np.where(ok, 0.0, f))))
        raise ConvergenceError(f"{what}: residual {worst:.3e} after {max_iter} iterations")
    return x


def _activity_exponent(screening, scaling: ScalingGroup) -> np.ndarray:
    """L_B Gamma Gamma_c z^2 / (1 + Gamma Gamma_c sigma) with a trailing species axis."""
    sys = scaling.system
    g = np.asarray(screening, dtype=float)[..., None] * scaling.gamma_c
    return scaling.bjerrum_length * g * sys.valence**2 / (1.0 + g * sys.diameter)


def check_bound1(scaling: ScalingGroup) -> None:
    """Reject parameters for which the screening equation may have several roots."""
    sys = scaling.system
    limits = BOUND1_FACTOR * sys.diameter / sys.valence**2
    lb = scaling.bjerrum_length
    bad = [name for name, lim in zip(sys.names, limits) if not lb < lim]
    if bad:
        raise ModelValidityError(
            f"Bjerrum length {lb:.4e} m violates the uniqueness bound "
            f"(6+4*sqrt(2)) sigma_j / z_j^2 for species {', '.join(bad)}"
        )


def _check_xi_c(scaling: ScalingGroup) -> float:
    xi_c = scaling.xi_c
    if not 0.0 <= xi_c < 1.0:
        raise ModelValidityError(f"packing scale xi_c={xi_c:.4g} outside [0, 1)")
    return xi_c


def _xi_source(psi, screening, scaling: ScalingGroup, reservoir: ReservoirState) -> np.ndarray:
    """Right-hand side of the packing equation xi exp(p(xi)) = source."""
    sys = scaling.system
    sc = scaling.characteristic_diameter
    weights = (sys.diameter / sc) ** 3 * sys.reservoir * reservoir.activity
    expo = -sys.valence * np.asarray(psi, dtype=float)[..., None] + _activity_exponent(screening, scaling)
    return scaling.xi_c * np.sum(weights * np.exp(expo), axis=-1)


def _solve_packing_from_source(source: np.ndarray, tol_alg: float, max_iter: int) -> np.ndarray:
    source = np.asarray(source, dtype=float)
    out = np.zeros_like(source)
    pos = source > 0
    if not np.any(pos):
        return out
    s = source[pos]
    log_s = np.log(s)

    def func(x):
        return np.log(x) + hard_sphere_p(x) - log_s, 1.0 / x + hard_sphere_dp(x)

    x0 = s / (1.0 + s)
    # Near-zero packing: xi ~ source exp(-8 source) is already very accurate.
    x0 = np.where(s < 1e-3, s * np.exp(-8.0 * s), x0)
    out[pos] = _bracketed_newton(
        func, x0, np.zeros_like(s), np.ones_like(s), lambda f, x: np.abs(f) <= tol_alg, max_iter, "packing fraction"
    )
    return out


def solve_xi(
    psi,
    screening,
    scaling: ScalingGroup,
    reservoir: ReservoirState,
    tol_alg: float = 1e-12,
    max_iter: int = 200,
) -> np.ndarray:
    """Packing fraction xi(Psi, Gamma), the unique root in [0, 1)."""
    xi_c = _check_xi_c(scaling)
    psi = np.asarray(psi, dtype=float)
    screening = np.broadcast_to(np.asarray(screening, dtype=float), psi.shape)
    if xi_c == 0.0 or reservoir.model == "ideal":
        return np.zeros(psi.shape)
    source = _xi_source(psi, screening, scaling, reservoir)
    return _solve_packing_from_source(source, tol_alg, max_iter)


def screening_from_concentrations(
    concentration: np.ndarray,
    scaling: ScalingGroup,
    tol_alg: float = 1e-12,
    max_iter: int = 200,
) -> np.ndarray:
    """Solve Gamma^2 = sum_k n_k z_k^2 / (1 + Gamma Gamma_c sigma_k)^2 for given n.

    Closed form when all diameters coincide.
    """
    sys = scaling.system
    n = np.asarray(concentration, dtype=float)
    zz = sys.valence**2
    a = scaling.gamma_c * sys.diameter
    total = np.sum(n * zz, axis=-1)
    if np.allclose(a, a[0], rtol=0, atol=0):
        a0 = a[0]
        if a0 == 0:
            return np.sqrt(total)
        root = np.sqrt(total)
        return 2.0 * root / (1.0 + np.sqrt(1.0 + 4.0 * a0 * root))

    def func(g):
        den = 1.0 + g[..., None] * a
        f = g * g - np.sum(n * zz / den**2, axis=-1)
        df = 2.0 * g + np.sum(2.0 * a * n * zz / den**3, axis=-1)
        return f, df

    hi = np.sqrt(total) + 1.0
    return _bracketed_newton(
        func,
        np.sqrt(total) * 0.5,
        np.zeros_like(total),
        hi,
        lambda f, x: np.abs(f) <= tol_alg * np.maximum(1.0, x * x),
        max_iter,
        "screening parameter",
    )


def solve_gamma(
    psi,
    scaling: ScalingGroup,
    reservoir: ReservoirState,
    tol_alg: float = 1e-12,
    max_iter: int = 200,
) -> np.ndarray:
    """Screening parameter Gamma(Psi) from the reduced scalar equation F(Gamma) = 0."""
    sys = scaling.system
    psi = np.asarray(psi, dtype=float)
    z = sys.valence
    zz = z * z
    if reservoir.model == "ideal":
        n = sys.reservoir * np.exp(-z * psi[..., None])
        return screening_from_concentrations(n, scaling, tol_alg, max_iter)

    check_bound1(scaling)
    xi_c = _check_xi_c(scaling)
    a = scaling.gamma_c * sys.diameter
    b = scaling.bjerrum_length * scaling.gamma_c * zz
    c = sys.reservoir * reservoir.activity
    weights = xi_c * (sys.diameter / scaling.characteristic_diameter) ** 3 * c
    base = -z * psi[..., None]

    def func(g):
        den = 1.0 + g[..., None] * a
        e = np.exp(base + b * g[..., None] / den)
        source = np.sum(weights * e, axis=-1)
        xi = _solve_packing_from_source(source, tol_alg, max_iter)
        p = hard_sphere_p(xi)
        dp = hard_sphere_dp(xi)
        de = e * b / den**2  # dE_j/dGamma
        dsource = np.sum(weights * de, axis=-1)
        dxi = dsource / (np.exp(p) * (1.0 + xi * dp))
        terms = c * zz * e / den**2
        rhs = np.exp(-p) * np.sum(terms, axis=-1)
        drhs = -dp * dxi * rhs + np.exp(-p) * np.sum(
            c * zz * (de / den**2 - 2.0 * a * e / den**3), axis=-1
        )
        return g * g - rhs, 2.0 * g - drhs

    # Upper bound: the exponent is below L_B z^2/sigma and the other factors are <= 1.
    bound = np.sum(c * zz * np.exp(base + scaling.bjerrum_length * zz / sys.diameter), axis=-1)
    hi = np.sqrt(bound) * (1.0 + 1e-12) + 1e-300
    ideal_guess = screening_from_concentrations(sys.reservoir * np.exp(base), scaling, tol_alg, max_iter)
    x0 = np.minimum(ideal_guess, 0.5 * hi)
    return _bracketed_newton(
        func,
        x0,
        np.zeros_like(x0),
        hi,
        lambda f, x: np.abs(f) <= tol_alg * np.maximum(1.0, x * x),
        max_iter,
        "screening parameter",
    )


# ---------------------------------------------------------------------------
# Closure
# ---------------------------------------------------------------------------


def reservoir_closure(scaling: ScalingGroup, model: Model = "msa", tol_alg: float = 1e-12) -> ReservoirState:
    """Gamma(0), tilde xi(0) and the reservoir activity coefficients gamma_j^inf."""
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}")
    sys = scaling.system
    screening = float(screening_from_concentrations(sys.reservoir, scaling, tol_alg))
    if model == "ideal":
        return ReservoirState("ideal", np.ones(sys.size), screening, 0.0)
    check_bound1(scaling)
    xi_c = _check_xi_c(scaling)
    packing = xi_c * float(np.sum((sys.diameter / scaling.characteristic_diameter) ** 3 * sys.reservoir))
    if packing >= 1.0:
        raise ModelValidityError(f"reservoir packing fraction {packing:.4g} >= 1")
    activity = np.exp(hard_sphere_p(packing) - _activity_exponent(screening, scaling))
    return ReservoirState("msa", activity, screening, packing)


def local_state(
    psi,
    scaling: ScalingGroup,
    reservoir: ReservoirState,
    tol_alg: float = 1e-12,
    max_iter: int = 200,
) -> LocalState:
    """Concentrations, activity and closure variables at potential(s) psi."""
    sys = scaling.system
    psi = np.asarray(psi, dtype=float)
    screening = solve_gamma(psi, scaling, reservoir, tol_alg, max_iter)
    if reservoir.model == "ideal":
        packing = np.zeros(psi.shape)
        activity = np.ones(psi.shape + (sys.size,))
    else:
        packing = solve_xi(psi, screening, scaling, reservoir, tol_alg, max_iter)
        activity = np.exp(hard_sphere_p(packing)[..., None] - _activity_exponent(screening, scaling))
    conc = sys.reservoir * reservoir.activity * np.exp(-sys.valence * psi[..., None]) / activity
    return LocalState(
        psi=psi,
        screening=screening,
        packing=packing,
        hard_sphere_activity=np.exp(hard_sphere_p(packing)),
        activity=activity,
        concentration=conc,
    )


def onsager_local(state: LocalState, scaling: ScalingGroup, model: Model = "msa") -> OnsagerLocal:
    """Electrostatic, hard-sphere and relaxation corrections and the tensor K_ij."""
    sys = scaling.system
    nsp = sys.size
    shape = np.shape(state.screening)
    eye = np.broadcast_to(np.eye(nsp), shape + (nsp, nsp))
    if model == "ideal":
        zeros = np.zeros(shape + (nsp, nsp))
        return OnsagerLocal(zeros, zeros.copy(), zeros.copy(), np.zeros(shape), eye.copy())

    env = scaling.solvent
    eta, kt = env.viscosity, env.thermal_energy
    lb = scaling.bjerrum_length
    z, sig, dif = sys.valence, sys.diameter, sys.diffusivity
    if np.any(sig <= 0):
        raise ModelValidityError("transport corrections need positive diameters")
    n = state.concentration * scaling.characteristic_concentration  # m^-3
    g = np.asarray(state.screening)[..., None] * scaling.gamma_c  # 1/m
    one = 1.0 + g * sig  # [..., k]

    # Electrostatic correction
    denom_c = g[..., 0] + np.sum(n * np.pi * lb * z**2 * sig / one**2, axis=-1)
    zizj = np.outer(z, z)
    omega_c = (
        -zizj
        * lb
        * n[..., None, :]
        / (3.0 * eta * one[..., :, None] * one[..., None, :] * denom_c[..., None, None])
    )

    # Hard-sphere correction
    x = [np.pi / 6.0 * np.sum(n * sig**k, axis=-1) for k in range(4)]
    x3t = np.pi / 6.0 * np.sum(n, axis=-1) * (3.0 * x[1] * x[2] + x[3] * x[0]) / (4.0 * x[0] ** 2)
    hs_factor = (1.0 - x3t / 5.0 + x3t**2 / 10.0) / (1.0 + 2.0 * x3t)
    sij = sig[:, None] + sig[None, :]
    omega_hs = -(sij**2) / (12.0 * eta) * n[..., None, :] * hs_factor[..., None, None]

    # Relaxation correction
    e = env.elementary_charge
    eps = env.dielectric
    kq2 = e * e / (eps * kt) * np.sum(n * z**2 * dif, axis=-1) / np.sum(dif)
    kq = np.sqrt(kq2)
    den_r = (
        kq2
        + 2.0 * g[..., 0] * kq
        + 2.0 * g[..., 0] ** 2
        - 2.0 * np.pi * lb * np.sum(n * z**2 * np.exp(-kq[..., None] * sig) / one**2, axis=-1)
    )
    if np.any(den_r <= 0):
        raise ModelValidityError("relaxation denominator is not positive; MSA transport corrections invalid")
    relax = (
        kq2[..., None, None]
        * e
        * e
        * zizj
        / (3.0 * eps * kt * sij * one[..., :, None] * one[..., None, :])
        * (1.0 - np.exp(-2.0 * kq[..., None, None] * sij))
        / den_r[..., None, None]
    )

    omega = omega_c + omega_hs
    tensor = (eye + (kt / dif)[:, None] * omega) * (1.0 + relax)
    return OnsagerLocal(omega_c, omega_hs, relax, kq, tensor)


def linearization_coeffs(state: LocalState, scaling: ScalingGroup, reservoir: ReservoirState) -> LinearizationCoeffs:
    """Coefficients alpha_ik of dn_i/dPsi = sum_k z_k alpha_ik."""
    sys = scaling.system
    n = state.concentration
    nsp = sys.size
    shape = np.shape(state.screening)
    if reservoir.model == "ideal":
        alpha = -n[..., :, None] * np.eye(nsp)
        zero = np.zeros(shape)
        return LinearizationCoeffs(zero, zero.copy(), zero.copy(), zero.copy(), alpha)

    z, sig = sys.valence, sys.diameter
    nc = scaling.characteristic_concentration
    gc = scaling.gamma_c
    lbgc = scaling.bjerrum_length * gc
    xi = state.packing
    dp = hard_sphere_dp(xi)
    bprime = dp / (1.0 + xi * dp)  # dimensionless
    s = np.pi / 6.0 * nc * sig**3
    one = 1.0 + np.asarray(state.screening)[..., None] * gc * sig
    q = z**2 / one**2
    c_red = np.sum(s * n * q, axis=-1)
    d = np.sum(q * n, axis=-1)
    a = (
        2.0 * state.screening
        + 2.0 * gc * np.sum(n * z**2 * sig / one**3, axis=-1)
        - lbgc * np.sum(n * z**4 / one**4, axis=-1)
        + lbgc * bprime * c_red * d
    )
    if np.any(a <= 0):
        raise ModelValidityError("linearization coefficient A is not positive")
    left = q - bprime[..., None] * c_red[..., None]
    right = q - bprime[..., None] * d[..., None] * s
    alpha = (
        -n[..., :, None] * np.eye(nsp)
        + bprime[..., None, None] * n[..., :, None] * (n * s)[..., None, :]
        - (lbgc / a)[..., None, None] * n[..., :, None] * n[..., None, :] * left[..., :, None] * right[..., None, :]
    )
    b_dim = np.pi / 6.0 * nc * bprime
    c_dim = c_red / (np.pi / 6.0 * nc)
    return LinearizationCoeffs(a, b_dim, c_dim, d, alpha)


def equilibrium_pressure(
    psi_values,
    scaling: ScalingGroup,
    reservoir: ReservoirState,
    tol_alg: float = 1e-12,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-species primitives E_j(Psi) and the pressure p0 = sum_j E_j.

    E_j is normalized by E_j(0) = 0 and obeys dE_j/dPsi = -z_j n_j(Psi), which
    makes grad p0 = -sum_j z_j n_j grad Psi (ideal case: E_j = n_j - n_j^inf).
    """
    sys = scaling.system
    psi = np.atleast_1d(np.asarray(psi_values, dtype=float))
    flat = psi.ravel()
    out = np.zeros((flat.size, sys.size))

    def integrand(s: float, j: int) -> float:
        st = local_state(np.array(s), scaling, reservoir, tol_alg)
        return -sys.valence[j] * float(st.concentration[j])

    order = np.argsort(flat)
    # Integrate outward from zero on each side, reusing the previous node.
    for side in (1.0, -1.0):
        idx = [i for i in (order if side > 0 else order[::-1]) if side * flat[i] > 0]
        prev = 0.0
        acc = np.zeros(sys.size)
        for i in idx:
            for j in range(sys.size):
                val, _ = integrate.quad(integrand, prev, flat[i], args=(j,), epsabs=0.0, epsrel=1e-12, limit=200)
                acc[j] += val
            out[i] = acc
            prev = flat[i]
    energies = out.reshape(psi.shape + (sys.size,))
    return energies, energies.sum(axis=-1)


def nacl(
    concentration: float = 1.0,
    solvent: SolventEnv | None = None,
    diameter: float = 3.3e-10,
) -> ElectrolyteSystem:
    """Sodium chloride with default diffusivities; concentration in units of n_c."""
    return ElectrolyteSystem(
        (
            Species("Na", 1, 13.33e-10, diameter, concentration),
            Species("Cl", -1, 20.32e-10, diameter, concentration),
        ),
        solvent or SolventEnv(),
    )
