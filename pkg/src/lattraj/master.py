"""Deterministic master-equation integrators and closed-form oracles.

Every unconditional evolution implemented here has the dephasing form

    drho/dt = -i [H, rho] - R o rho     (o = elementwise product)

because all measurement channels are diagonal in the chosen basis.  The rate
matrix R >= 0 encodes the variant:

* ``cm``           : weak-resolution limit for indistinguishable particles,
                     R_ab = (N^2 Gamma / 4) (Xcm_a - Xcm_b)^2
* ``dist``         : weak-resolution limit for distinguishable particles,
                     R_ab = sum_i (Gamma_i / 4) (x_i(a) - x_i(b))^2
* ``site``         : site-resolved limit, R_ab = (gamma/2) sum_m (n_m(a)-n_m(b))^2
* ``exact``        : exact dissipator from the full overlap matrix,
                     R_ab = (gamma/2) dn^T F dn  (indistinguishable) or
                     sum_i gamma_i (1 - F[x_i(a), x_i(b)])  (distinguishable)

with Gamma = gamma d^2 / sigma^2.  These integrators are verification oracles:
accuracy is favoured over speed and the dimension is capped.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import CapacityError, StatisticsError
from .hilbert import (
    DENSE_DIMENSION_LIMIT,
    FockBasis,
    Operator,
    Statistics,
    SystemSpec,
    build_hamiltonian,
    enumerate_basis,
    position_diagonal,
    xcm_diagonal,
)
from .measurement import MeasurementModel, build_measurement_model

#: Density-matrix integration refuses above this dimension.
MASTER_DIMENSION_CAP = 1024


class MasterVariant(Enum):
    CM_WEAK_RESOLUTION = "cm"
    DISTINGUISHABLE_WEAK_RESOLUTION = "dist"
    SITE_RESOLVED = "site"
    EXACT_OVERLAP = "exact"

    @classmethod
    def parse(cls, label):
        if isinstance(label, MasterVariant):
            return label
        return cls(str(label).strip().lower())


def dephasing_rate_matrix(variant, spec: SystemSpec, basis: FockBasis,
                          model: MeasurementModel | None = None) -> np.ndarray:
    """Coherence decay rates R_ab for one master-equation variant."""
    variant = MasterVariant.parse(variant)
    N = spec.particles
    strength = spec.measurement_strength

    if variant is MasterVariant.CM_WEAK_RESOLUTION:
        x = xcm_diagonal(basis)
        dx = x[:, None] - x[None, :]
        return 0.25 * N**2 * strength * dx**2

    if variant is MasterVariant.DISTINGUISHABLE_WEAK_RESOLUTION:
        if basis.statistics is not Statistics.DISTINGUISHABLE:
            raise StatisticsError(
                "the distinguishable weak-resolution variant needs a distinguishable basis"
            )
        gam = spec.particle_gammas() * spec.lattice_constant**2 / spec.sigma**2
        R = np.zeros((basis.dimension, basis.dimension))
        for i in range(N):
            xi = position_diagonal(basis, i)
            R += 0.25 * gam[i] * (xi[:, None] - xi[None, :]) ** 2
        return R

    if variant is MasterVariant.SITE_RESOLVED:
        occ = basis.occupations.astype(float)
        # (gamma/2) * sum_m (n_m(a) - n_m(b))^2, vectorized through the Gram trick
        sq = np.einsum("am,am->a", occ, occ)
        cross = occ @ occ.T
        return 0.5 * spec.gamma * (sq[:, None] + sq[None, :] - 2.0 * cross)

    # exact overlap dissipator
    if model is None:
        model = build_measurement_model(spec)
    F = model.overlap_matrix
    if basis.statistics is Statistics.DISTINGUISHABLE:
        gam = spec.particle_gammas()
        R = np.zeros((basis.dimension, basis.dimension))
        for i in range(N):
            pos = basis.positions[:, i]
            R += gam[i] * (1.0 - F[pos[:, None], pos[None, :]])
        return R
    occ = basis.occupations.astype(float)
    quad = np.einsum("am,ml,bl->ab", occ, F, occ)
    diag = np.diagonal(quad)
    return 0.5 * spec.gamma * (diag[:, None] + diag[None, :] - quad - quad.T)


@dataclass(frozen=True)
class MasterSpec:
    """A dephasing master equation ready for integration."""

    variant: MasterVariant
    system: SystemSpec
    basis: FockBasis
    hamiltonian: Operator
    rates: np.ndarray

    @property
    def dimension(self) -> int:
        return self.basis.dimension


def build_master(variant, spec: SystemSpec, basis: FockBasis | None = None,
                 model: MeasurementModel | None = None) -> MasterSpec:
    variant = MasterVariant.parse(variant)
    if basis is None:
        basis = enumerate_basis(spec)
    if basis.dimension > MASTER_DIMENSION_CAP:
        raise CapacityError(
            f"master-equation dimension {basis.dimension} exceeds the oracle cap "
            f"{MASTER_DIMENSION_CAP}; oracles are meant for small systems"
        )
    H = build_hamiltonian(spec, basis)
    R = dephasing_rate_matrix(variant, spec, basis, model)
    return MasterSpec(variant=variant, system=spec, basis=basis,
                      hamiltonian=H, rates=R)


def lindblad_rhs(mspec: MasterSpec, rho: np.ndarray) -> np.ndarray:
    """Right-hand side -i[H, rho] - R o rho (traceless, hermiticity-preserving)."""
    H = mspec.hamiltonian.matrix
    comm = H @ rho
    comm = comm - comm.conj().T
    return -1j * comm - mspec.rates * rho


def _default_master_dt(mspec: MasterSpec) -> float:
    J = abs(mspec.system.hopping)
    rate = float(mspec.rates.max()) if mspec.rates.size else 0.0
    scales = [1.0 / J if J > 0 else np.inf, 1.0 / rate if rate > 0 else np.inf]
    dt = 0.005 * min(scales)
    if not np.isfinite(dt):
        dt = 0.005
    return dt


def integrate_master(mspec: MasterSpec, rho0: np.ndarray, times: np.ndarray,
                     dt: float | None = None) -> np.ndarray:
    """Fixed-step RK4 integration, returning rho at each requested time.

    The state is re-hermitized after every step; a warning is emitted if the
    smallest eigenvalue at a readout drops below -1e-6.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0 or np.any(np.diff(times) < 0):
        raise ValueError("times must be a nondecreasing 1D array")
    if dt is None:
        dt = _default_master_dt(mspec)
    rho = np.array(rho0, dtype=complex)
    if rho.shape != (mspec.dimension, mspec.dimension):
        raise ValueError("rho0 has the wrong shape for this basis")

    out = np.empty((times.size, *rho.shape), dtype=complex)
    t = 0.0
    idx = 0
    while idx < times.size and times[idx] <= t + 1e-15:
        out[idx] = rho
        idx += 1
    while idx < times.size:
        target = times[idx]
        n_steps = max(1, int(np.ceil((target - t) / dt - 1e-12)))
        h = (target - t) / n_steps
        for _ in range(n_steps):
            k1 = lindblad_rhs(mspec, rho)
            k2 = lindblad_rhs(mspec, rho + 0.5 * h * k1)
            k3 = lindblad_rhs(mspec, rho + 0.5 * h * k2)
            k4 = lindblad_rhs(mspec, rho + h * k3)
            rho = rho + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            rho = 0.5 * (rho + rho.conj().T)
        t = target
        evmin = np.linalg.eigvalsh(rho).min()
        if evmin < -1e-6:
            warnings.warn(
                f"master-equation state lost positivity (min eigenvalue {evmin:.2e}) "
                f"at t={t:.4g}; decrease dt",
                RuntimeWarning,
            )
        out[idx] = rho
        idx += 1
    return out


# ---------------------------------------------------------------------------
# Unitary reference evolution
# ---------------------------------------------------------------------------


def evolve_unitary(H: Operator, psi0: np.ndarray, times: np.ndarray) -> np.ndarray:
    """exp(-i H t) psi0 at each time, via dense eigendecomposition.

    Exact up to diagonalization error; intended for oracle-grade reference
    data on moderate dimensions.  Falls back to fixed-step RK4 above the dense
    limit.
    """
    times = np.asarray(times, dtype=float)
    dim = H.dim
    if dim <= DENSE_DIMENSION_LIMIT:
        evals, vecs = np.linalg.eigh(H.dense())
        c0 = vecs.conj().T @ psi0
        phases = np.exp(-1j * np.outer(times, evals))
        return (phases * c0[None, :]) @ vecs.T
    return _evolve_unitary_rk4(H, psi0, times)


def _evolve_unitary_rk4(H: Operator, psi0: np.ndarray, times: np.ndarray) -> np.ndarray:
    J = max(abs(H.matrix).max(), 1e-12)
    dt = 0.005 / J
    mat = H.matrix

    def rhs(psi):
        return -1j * (mat @ psi)

    psi = np.array(psi0, dtype=complex)
    out = np.empty((times.size, psi.size), dtype=complex)
    t = 0.0
    for idx, target in enumerate(times):
        n_steps = max(0, int(np.ceil((target - t) / dt - 1e-12)))
        h = (target - t) / n_steps if n_steps else 0.0
        for _ in range(n_steps):
            k1 = rhs(psi)
            k2 = rhs(psi + 0.5 * h * k1)
            k3 = rhs(psi + 0.5 * h * k2)
            k4 = rhs(psi + h * k3)
            psi = psi + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        psi /= np.linalg.norm(psi)
        t = float(target)
        out[idx] = psi
    return out


# ---------------------------------------------------------------------------
# Closed-form oracles
# ---------------------------------------------------------------------------


def ballistic_variance(hopping: float, t) -> np.ndarray:
    """Free single-particle spread <x^2> = 2 J^2 t^2 from a single site."""
    t = np.asarray(t, dtype=float)
    return 2.0 * hopping**2 * t**2


def free_walk_density(hopping: float, t: float, site_offsets,
                      sites: int | None = None) -> np.ndarray:
    """Tight-binding propagator density |J_m(2 J t)|^2 on an infinite lattice.

    ``site_offsets`` are distances from the starting site.  If ``sites`` is
    given, warns when the ballistic wavefront comes within 5 sites of the
    boundary of a lattice of that size (the infinite-lattice oracle then
    stops being comparable to a finite simulation).
    """
    from scipy.special import jv

    m = np.asarray(site_offsets)
    if sites is not None:
        half = (sites - 1) / 2.0
        if 2.0 * abs(hopping) * t > half - 5:
            warnings.warn(
                "wavefront within 5 sites of the lattice boundary; "
                "infinite-lattice densities are no longer accurate",
                RuntimeWarning,
            )
    return jv(m, 2.0 * hopping * t) ** 2


def relative_diffusion_constant(hopping: float, strength: float) -> float:
    """Late-time diffusion constant of the relative coordinate, 16 J^2 / Gamma.

    ``strength`` is the dimensionless measurement strength gamma d^2 / sigma^2.
    The variance of the relative distance of two independently measured
    particles grows as 2 D t with this D.
    """
    if strength <= 0:
        raise ValueError("measurement strength must be > 0")
    return 16.0 * hopping**2 / strength


def onsite_diffusion_constant(hopping: float, strength: float) -> float:
    """Single-particle density diffusion constant 8 J^2 / Gamma."""
    if strength <= 0:
        raise ValueError("measurement strength must be > 0")
    return 8.0 * hopping**2 / strength


def collapse_time(hopping: float, strength: float) -> float:
    """Centre-of-mass collapse timescale (3 sqrt(2) / (Gamma J^2))^(1/3)."""
    if strength <= 0:
        raise ValueError("measurement strength must be > 0")
    return (3.0 * np.sqrt(2.0) / (strength * hopping**2)) ** (1.0 / 3.0)


def site_resolved_strength(gamma: float) -> float:
    """Map the site-resolved rate gamma to the dimensionless strength 4 gamma.

    In the site-resolved equation every coherence decays at rate gamma.  The
    weak-resolution single-particle equation damps nearest-neighbour
    coherences at Gamma/4, so the two descriptions share their transport
    coefficients (diffusion constant 8 J^2 / Gamma, quasi-stationary coherence
    4iJ/Gamma) under the identification Gamma = 4 gamma.
    """
    return 4.0 * gamma
