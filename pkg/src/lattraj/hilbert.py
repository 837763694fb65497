"""Bases and operators for N particles on an open 1D lattice.

Bosons and fermions live in the fixed-number occupation (Fock) basis of M
sites; distinguishable particles live in the M^N product basis of position
tuples.  All operators are built once, are immutable afterwards, and can be
shared freely between concurrent trajectory workers.

Units: hbar = 1 throughout.  Site coordinates are dimensionless site indices
shifted by a configurable origin; the lattice constant d only enters through
the imaging geometry and the dimensionless measurement strength gamma*d^2/sigma^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations, combinations_with_replacement, product

import numpy as np
from scipy import sparse

from .errors import CapacityError, DimensionMismatchError, StatisticsError

#: Above this dimension operators stay in sparse storage only.
DENSE_DIMENSION_LIMIT = 4096

#: Refuse to enumerate bases larger than this by default.
DEFAULT_BASIS_CAP = 1_000_000


class Statistics(Enum):
    """Particle statistics selecting the many-body basis."""

    BOSON = "boson"
    FERMION = "fermion"
    DISTINGUISHABLE = "distinguishable"

    @classmethod
    def parse(cls, label: "str | Statistics") -> "Statistics":
        if isinstance(label, Statistics):
            return label
        try:
            return cls(str(label).strip().lower())
        except ValueError:
            raise StatisticsError(
                f"unknown statistics {label!r}; expected one of "
                f"{[s.value for s in cls]}"
            ) from None


@dataclass(frozen=True)
class SystemSpec:
    """Physical description of the lattice system and its measurement.

    Parameters
    ----------
    sites : int
        Number of lattice sites M (open boundary conditions).
    particles : int
        Particle number N (conserved).
    statistics : Statistics or str
        'boson', 'fermion' or 'distinguishable'.
    hopping : float
        Nearest-neighbour tunnelling amplitude J (energy, hbar = 1).
    interaction : float
        On-site interaction U.  Enters (U/2) n(n-1) for bosons, is inert for
        fermions at 0/1 filling and for distinguishable particles (one particle
        per species, no inter-species coupling).
    gamma : float
        Rate constant of the position-measurement signal.
    sigma : float
        Spatial resolution of the imaging (length units).
    lattice_constant : float
        Lattice spacing d (length units).
    origin : float
        Site-index offset; the coordinate of site m is (m - origin).  Pick the
        lattice centre so the centre of mass starts near zero.
    gamma_per_particle : tuple of float, optional
        Per-particle signal rates for distinguishable particles.  Defaults to
        ``gamma`` for every particle.
    """

    sites: int
    particles: int
    statistics: Statistics = Statistics.BOSON
    hopping: float = 1.0
    interaction: float = 0.0
    gamma: float = 0.0
    sigma: float = 1.0
    lattice_constant: float = 1.0
    origin: float = 0.0
    gamma_per_particle: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "statistics", Statistics.parse(self.statistics))
        if self.sites < 1:
            raise ValueError(f"sites must be >= 1, got {self.sites}")
        if self.particles < 1:
            raise ValueError(f"particles must be >= 1, got {self.particles}")
        if self.statistics is Statistics.FERMION and self.particles > self.sites:
            raise ValueError(
                f"fermions need particles <= sites, got N={self.particles} > M={self.sites}"
            )
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if self.lattice_constant <= 0:
            raise ValueError("lattice_constant must be > 0")
        if self.gamma_per_particle is not None:
            if self.statistics is not Statistics.DISTINGUISHABLE:
                raise StatisticsError("gamma_per_particle only applies to distinguishable particles")
            if len(self.gamma_per_particle) != self.particles:
                raise ValueError("gamma_per_particle must have one entry per particle")
            if any(g < 0 for g in self.gamma_per_particle):
                raise ValueError("gamma_per_particle entries must be >= 0")

    @property
    def measurement_strength(self) -> float:
        """Dimensionless rate gamma * d^2 / sigma^2 controlling the backaction."""
        return self.gamma * self.lattice_constant**2 / self.sigma**2

    def particle_gammas(self) -> np.ndarray:
        if self.gamma_per_particle is not None:
            return np.asarray(self.gamma_per_particle, dtype=float)
        return np.full(self.particles, float(self.gamma))


def basis_dimension(spec: SystemSpec) -> int:
    """Closed-form dimension of the many-body basis."""
    M, N = spec.sites, spec.particles
    if spec.statistics is Statistics.BOSON:
        return math.comb(N + M - 1, N)
    if spec.statistics is Statistics.FERMION:
        return math.comb(M, N)
    return M**N


@dataclass(frozen=True)
class FockBasis:
    """Enumerated many-body basis with index maps and cached integer arrays.

    ``states`` holds occupation vectors for bosons/fermions and position
    tuples for distinguishable particles, in a deterministic order.
    ``occupations`` is always the (dimension, sites) table of site occupation
    numbers; ``positions`` is the (dimension, particles) table of particle
    coordinates and exists only for distinguishable statistics.
    ``site_coordinates`` are the origin-shifted coordinates of the M sites.
    """

    statistics: Statistics
    sites: int
    particles: int
    states: tuple[tuple[int, ...], ...]
    index_of: dict = field(repr=False)
    occupations: np.ndarray = field(repr=False)
    positions: np.ndarray | None = field(repr=False)
    site_coordinates: np.ndarray = field(repr=False)

    @property
    def dimension(self) -> int:
        return len(self.states)

    def index(self, state: tuple[int, ...]) -> int:
        return self.index_of[tuple(state)]

    def state_vector(self, state: tuple[int, ...]) -> np.ndarray:
        """Unit basis vector for an occupation vector / position tuple."""
        psi = np.zeros(self.dimension, dtype=complex)
        psi[self.index(state)] = 1.0
        return psi


def enumerate_basis(spec: SystemSpec, capacity: int = DEFAULT_BASIS_CAP) -> FockBasis:
    """Enumerate the many-body basis in a deterministic order.

    Bosonic and fermionic occupation vectors are ordered lexicographically
    descending, e.g. (2,0,0), (1,1,0), (1,0,1), ...; distinguishable position
    tuples are ordered row-major, (0,...,0), (0,...,1), ...

    Raises
    ------
    CapacityError
        If the closed-form dimension exceeds ``capacity``.
    """
    M, N = spec.sites, spec.particles
    dim = basis_dimension(spec)
    if dim > capacity:
        raise CapacityError(
            f"basis dimension {dim} exceeds cap {capacity} for M={M}, N={N}, "
            f"{spec.statistics.value}"
        )

    positions = None
    if spec.statistics is Statistics.DISTINGUISHABLE:
        states = tuple(product(range(M), repeat=N))
        positions = np.array(states, dtype=np.int64).reshape(dim, N)
        occupations = np.zeros((dim, M), dtype=np.int64)
        rows = np.repeat(np.arange(dim), N)
        np.add.at(occupations, (rows, positions.ravel()), 1)
    else:
        if spec.statistics is Statistics.BOSON:
            site_tuples = combinations_with_replacement(range(M), N)
        else:
            site_tuples = combinations(range(M), N)
        occ_list = []
        for sites_occupied in site_tuples:
            occ = [0] * M
            for m in sites_occupied:
                occ[m] += 1
            occ_list.append(tuple(occ))
        states = tuple(occ_list)
        occupations = np.array(states, dtype=np.int64).reshape(dim, M)

    index_of = {s: i for i, s in enumerate(states)}
    site_coordinates = np.arange(M, dtype=float) - spec.origin
    return FockBasis(
        statistics=spec.statistics,
        sites=M,
        particles=N,
        states=states,
        index_of=index_of,
        occupations=occupations,
        positions=positions,
        site_coordinates=site_coordinates,
    )


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Operator:
    """Matrix operator on a FockBasis.

    Stores a CSR matrix plus, for operators diagonal in the chosen basis, the
    diagonal as a plain vector (``diag``) used on fast paths.  ``hermitian``
    records whether the operator is meant to be self-adjoint; construction
    verifies this to near machine precision.
    """

    matrix: sparse.csr_matrix
    hermitian: bool
    diag: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.hermitian:
            dev = abs(self.matrix - self.matrix.getH())
            if dev.nnz and dev.max() > 1e-12:
                raise ValueError("operator flagged hermitian deviates from its adjoint")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def dense(self) -> np.ndarray:
        if self.dim > DENSE_DIMENSION_LIMIT:
            raise CapacityError(
                f"refusing to densify a {self.dim}-dimensional operator "
                f"(limit {DENSE_DIMENSION_LIMIT})"
            )
        return self.matrix.toarray()

    def __matmul__(self, other):
        return self.matrix @ other


def diagonal_operator(values: np.ndarray, hermitian: bool = True) -> Operator:
    values = np.asarray(values)
    mat = sparse.diags(values.astype(complex), format="csr")
    return Operator(matrix=mat, hermitian=hermitian, diag=values.astype(float) if hermitian else None)


def _fermion_hop_sign(occ: tuple[int, ...], create: int, annihilate: int) -> int:
    """Sign of c^dag_create c_annihilate on a 0/1 occupation vector.

    Uses the site-ordered convention |n> = (c^dag_0)^{n_0} ... (c^dag_{M-1})^{n_{M-1}} |vac>.
    """
    sign = 1
    if sum(occ[:annihilate]) % 2:
        sign = -sign
    occ_after = list(occ)
    occ_after[annihilate] = 0
    if sum(occ_after[:create]) % 2:
        sign = -sign
    return sign


def build_hamiltonian(spec: SystemSpec, basis: FockBasis) -> Operator:
    """Nearest-neighbour hopping -J with open boundaries plus on-site U term.

    Bosons get (U/2) sum_m n_m (n_m - 1); fermion matrix elements carry the
    site-ordered antisymmetrization signs (trivial for adjacent hops on an
    open chain); distinguishable particles are non-interacting, one hopping
    chain per particle.
    """
    M = spec.sites
    J = spec.hopping
    U = spec.interaction
    dim = basis.dimension
    rows: list[int] = []
    cols: list[int] = []
    vals: list[complex] = []

    if spec.statistics is Statistics.DISTINGUISHABLE:
        # index arithmetic: last particle varies fastest
        strides = np.array([M ** (spec.particles - 1 - i) for i in range(spec.particles)])
        for idx, pos in enumerate(basis.states):
            for i, x in enumerate(pos):
                if x + 1 < M:
                    rows.append(idx + strides[i])
                    cols.append(idx)
                    vals.append(-J)
                    rows.append(idx)
                    cols.append(idx + strides[i])
                    vals.append(-J)
    else:
        diag = np.zeros(dim)
        if spec.statistics is Statistics.BOSON and U != 0.0:
            occ = basis.occupations
            diag = 0.5 * U * np.sum(occ * (occ - 1), axis=1).astype(float)
        for idx, occ in enumerate(basis.states):
            for m in range(M - 1):
                if occ[m] == 0:
                    continue
                target = list(occ)
                target[m] -= 1
                target[m + 1] += 1
                if spec.statistics is Statistics.FERMION:
                    if occ[m + 1] == 1:
                        continue
                    amp = -J * _fermion_hop_sign(occ, m + 1, m)
                else:
                    amp = -J * math.sqrt(occ[m] * (occ[m + 1] + 1))
                jdx = basis.index_of[tuple(target)]
                rows.extend((jdx, idx))
                cols.extend((idx, jdx))
                vals.extend((amp, np.conjugate(amp)))
        if np.any(diag):
            rows.extend(range(dim))
            cols.extend(range(dim))
            vals.extend(diag)

    mat = sparse.csr_matrix(
        (np.asarray(vals, dtype=complex), (rows, cols)), shape=(dim, dim)
    )
    mat.sum_duplicates()
    return Operator(matrix=mat, hermitian=True)


def number_diagonal(basis: FockBasis, site: int) -> np.ndarray:
    if not 0 <= site < basis.sites:
        raise IndexError(f"site {site} out of range 0..{basis.sites - 1}")
    return basis.occupations[:, site].astype(float)


def build_number_operator(basis: FockBasis, site: int) -> Operator:
    """Occupation-number operator of one site (diagonal)."""
    return diagonal_operator(number_diagonal(basis, site))


def xcm_diagonal(basis: FockBasis) -> np.ndarray:
    """Centre-of-mass coordinate sum_m coord_m n_m / N on each basis state."""
    return (basis.occupations @ basis.site_coordinates) / basis.particles


def build_xcm_operator(basis: FockBasis) -> Operator:
    """Centre-of-mass position operator (diagonal in the chosen basis)."""
    return diagonal_operator(xcm_diagonal(basis))


def position_diagonal(basis: FockBasis, particle: int) -> np.ndarray:
    if basis.statistics is not Statistics.DISTINGUISHABLE:
        raise StatisticsError(
            "per-particle positions exist only for distinguishable particles"
        )
    if not 0 <= particle < basis.particles:
        raise IndexError(f"particle {particle} out of range 0..{basis.particles - 1}")
    return basis.site_coordinates[basis.positions[:, particle]]


def build_position_operator(basis: FockBasis, particle: int) -> Operator:
    """Position operator of one distinguishable particle (diagonal)."""
    return diagonal_operator(position_diagonal(basis, particle))


def total_number_diagonal(basis: FockBasis) -> np.ndarray:
    return basis.occupations.sum(axis=1).astype(float)


def expectation(op, state) -> complex:
    """<psi|O|psi> for a state vector or Tr(O rho) for a density matrix."""
    if isinstance(op, Operator):
        diag = op.diag
        mat = op.matrix
        dim = op.dim
    else:
        mat = op
        diag = None
        dim = mat.shape[0]
    state = np.asarray(state)
    if state.shape[0] != dim:
        raise DimensionMismatchError(
            f"operator dimension {dim} does not match state dimension {state.shape[0]}"
        )
    if state.ndim == 1:
        if diag is not None:
            return complex(np.sum(diag * np.abs(state) ** 2))
        return complex(np.vdot(state, mat @ state))
    if state.ndim == 2:
        if diag is not None:
            return complex(np.sum(diag * np.diagonal(state)))
        return complex(np.trace(mat @ state))
    raise DimensionMismatchError("state must be a vector or a square matrix")


def normalize(psi: np.ndarray) -> np.ndarray:
    """Return psi scaled to unit norm."""
    nrm = np.linalg.norm(psi)
    if nrm == 0.0:
        raise ValueError("cannot normalize the zero vector")
    return psi / nrm


def fock_state(basis: FockBasis, state: tuple[int, ...]) -> np.ndarray:
    """Basis vector for one occupation vector / position tuple."""
    return basis.state_vector(tuple(int(x) for x in state))


def superposition_state(basis: FockBasis, components) -> np.ndarray:
    """Normalized superposition from (state, amplitude) pairs."""
    psi = np.zeros(basis.dimension, dtype=complex)
    for state, amp in components:
        psi[basis.index(tuple(int(x) for x in state))] += amp
    return normalize(psi)


def check_density_matrix(rho: np.ndarray, *, herm_tol=1e-10, trace_tol=1e-8,
                         eig_tol=1e-8) -> None:
    """Assert hermiticity, unit trace and near-positivity of a density matrix."""
    if np.max(np.abs(rho - rho.conj().T)) > herm_tol:
        raise ValueError("density matrix is not hermitian")
    if abs(np.trace(rho).real - 1.0) > trace_tol:
        raise ValueError("density matrix trace differs from 1")
    evals = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
    if evals.min() < -eig_tol:
        raise ValueError(f"density matrix has negative eigenvalue {evals.min():.3e}")
