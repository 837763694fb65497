import math

import numpy as np
import pytest
from scipy import sparse

from lattraj import (
    CapacityError,
    DimensionMismatchError,
    Statistics,
    StatisticsError,
    SystemSpec,
    basis_dimension,
    build_hamiltonian,
    build_number_operator,
    build_position_operator,
    build_xcm_operator,
    enumerate_basis,
    expectation,
    fock_state,
    normalize,
    superposition_state,
)
from lattraj.hilbert import total_number_diagonal


def spec_for(M, N, stats, **kw):
    return SystemSpec(sites=M, particles=N, statistics=stats, **kw)


# ---------------------------------------------------------------------------
# basis enumeration
# ---------------------------------------------------------------------------


def test_single_particle_two_sites_ordering():
    basis = enumerate_basis(spec_for(2, 1, "boson"))
    assert basis.dimension == 2
    assert basis.states == ((1, 0), (0, 1))


@pytest.mark.parametrize("M", range(1, 9))
@pytest.mark.parametrize("N", range(1, 4))
@pytest.mark.parametrize("stats", ["boson", "fermion", "distinguishable"])
def test_dimensions_match_counting(M, N, stats):
    if stats == "fermion" and N > M:
        return
    spec = spec_for(M, N, stats)
    basis = enumerate_basis(spec)
    expected = {
        "boson": math.comb(N + M - 1, N),
        "fermion": math.comb(M, N),
        "distinguishable": M**N,
    }[stats]
    assert basis_dimension(spec) == expected
    assert basis.dimension == expected
    assert len(set(basis.states)) == expected
    # index map is a bijection onto 0..dim-1
    assert sorted(basis.index_of[s] for s in basis.states) == list(range(expected))


def test_occupations_sum_to_particle_number():
    for stats in ("boson", "fermion", "distinguishable"):
        basis = enumerate_basis(spec_for(5, 3, stats))
        assert np.all(basis.occupations.sum(axis=1) == 3)
        if stats == "fermion":
            assert basis.occupations.max() == 1


def test_capacity_error():
    with pytest.raises(CapacityError):
        enumerate_basis(spec_for(40, 3, "distinguishable"), capacity=1000)


def test_spec_validation():
    with pytest.raises(ValueError):
        spec_for(3, 4, "fermion")
    with pytest.raises(ValueError):
        spec_for(3, 1, "boson", gamma=-1.0)
    with pytest.raises(ValueError):
        spec_for(3, 1, "boson", sigma=0.0)
    with pytest.raises(StatisticsError):
        Statistics.parse("anyons")


def test_measurement_strength_property():
    spec = spec_for(3, 2, "boson", gamma=2.0, sigma=4.0, lattice_constant=2.0)
    assert spec.measurement_strength == pytest.approx(2.0 * 4.0 / 16.0)


# ---------------------------------------------------------------------------
# Hamiltonians
# ---------------------------------------------------------------------------


def test_two_site_single_particle_hamiltonian():
    spec = spec_for(2, 1, "boson", hopping=1.0)
    H = build_hamiltonian(spec, enumerate_basis(spec))
    assert np.allclose(H.toarray(), [[0, -1], [-1, 0]])


def test_two_site_two_boson_hamiltonian_with_interaction():
    spec = spec_for(2, 2, "boson", hopping=1.0, interaction=2.0)
    basis = enumerate_basis(spec)
    assert basis.states == ((2, 0), (1, 1), (0, 2))
    H = build_hamiltonian(spec, basis).toarray()
    s2 = math.sqrt(2)
    expected = np.array([[2, -s2, 0], [-s2, 0, -s2], [0, -s2, 2]])
    assert np.allclose(H, expected)


def test_three_site_two_fermion_hamiltonian():
    spec = spec_for(3, 2, "fermion", hopping=1.0, interaction=5.0)
    basis = enumerate_basis(spec)
    H = build_hamiltonian(spec, basis).toarray()
    assert np.allclose(np.diag(H), 0.0)  # interaction inert at 0/1 filling
    i110 = basis.index((1, 1, 0))
    i101 = basis.index((1, 0, 1))
    i011 = basis.index((0, 1, 1))
    assert H[i110, i101] == pytest.approx(-1.0)
    assert H[i101, i011] == pytest.approx(-1.0)
    assert H[i110, i011] == pytest.approx(0.0)


def _full_space_fermion_hamiltonian(M, J):
    """Independent construction from single-site matrices with parity strings."""
    ann = np.array([[0.0, 1.0], [0.0, 0.0]])
    zed = np.diag([1.0, -1.0])
    eye = np.eye(2)

    def site_op(m, local):
        ops = [zed] * m + [local] + [eye] * (M - m - 1)
        out = ops[0]
        for o in ops[1:]:
            out = np.kron(out, o)
        return out

    c = [site_op(m, ann) for m in range(M)]
    H = np.zeros((2**M, 2**M))
    for m in range(M - 1):
        H += -J * (c[m].T @ c[m + 1] + c[m + 1].T @ c[m])
    return H


@pytest.mark.parametrize("M,N", [(2, 1), (3, 2), (4, 2), (4, 3)])
def test_fermion_hamiltonian_against_full_space_construction(M, N):
    spec = spec_for(M, N, "fermion", hopping=0.8)
    basis = enumerate_basis(spec)
    H = build_hamiltonian(spec, basis).toarray()
    H_full = _full_space_fermion_hamiltonian(M, 0.8)
    # map occupation vectors to full-space indices (site 0 = most significant bit)
    idx = [int("".join(str(n) for n in occ), 2) for occ in basis.states]
    H_proj = H_full[np.ix_(idx, idx)]
    assert np.allclose(H, H_proj, atol=1e-12)


@pytest.mark.parametrize("stats", ["boson", "fermion", "distinguishable"])
@pytest.mark.parametrize("M,N", [(4, 2), (5, 3), (6, 1)])
def test_hermiticity_and_particle_conservation(stats, M, N):
    spec = spec_for(M, N, stats, hopping=1.3, interaction=0.7)
    basis = enumerate_basis(spec)
    H = build_hamiltonian(spec, basis)
    dense = H.toarray()
    assert np.max(np.abs(dense - dense.conj().T)) < 1e-12
    ntot = sparse.diags(total_number_diagonal(basis).astype(complex))
    comm = H.matrix @ ntot - ntot @ H.matrix
    assert abs(comm).max() == 0.0  # exact commutation in matrix form


def test_distinguishable_hamiltonian_is_sum_of_chains():
    spec = spec_for(3, 2, "distinguishable", hopping=1.0)
    basis = enumerate_basis(spec)
    H = build_hamiltonian(spec, basis).toarray()
    h1 = np.array([[0, -1, 0], [-1, 0, -1], [0, -1, 0]], dtype=float)
    expected = np.kron(h1, np.eye(3)) + np.kron(np.eye(3), h1)
    assert np.allclose(H, expected)


def test_dense_and_sparse_application_agree():
    spec = spec_for(6, 2, "boson", hopping=1.0, interaction=0.5)
    basis = enumerate_basis(spec)
    H = build_hamiltonian(spec, basis)
    rng = np.random.default_rng(0)
    v = rng.normal(size=basis.dimension) + 1j * rng.normal(size=basis.dimension)
    assert np.allclose(H.matrix @ v, H.toarray() @ v, rtol=1e-13, atol=1e-13)


# ---------------------------------------------------------------------------
# diagonal observables
# ---------------------------------------------------------------------------


def test_number_operator_eigenvalues():
    spec = spec_for(2, 2, "boson")
    basis = enumerate_basis(spec)
    n0 = build_number_operator(basis, 0)
    psi = fock_state(basis, (2, 0))
    assert expectation(n0, psi) == pytest.approx(2.0)
    n1 = build_number_operator(basis, 1)
    psi11 = fock_state(basis, (1, 1))
    assert expectation(n1, psi11) == pytest.approx(1.0)
    with pytest.raises(IndexError):
        build_number_operator(basis, 2)


@pytest.mark.parametrize("stats", ["boson", "fermion", "distinguishable"])
def test_total_number_is_identity_times_n(stats):
    basis = enumerate_basis(spec_for(5, 2, stats))
    total = sum(build_number_operator(basis, m).diag for m in range(5))
    assert np.all(total == 2.0)


def test_xcm_eigenvalues():
    spec = spec_for(3, 2, "boson")
    basis = enumerate_basis(spec)
    x = build_xcm_operator(basis)
    assert expectation(x, fock_state(basis, (1, 0, 1))) == pytest.approx(1.0)
    assert expectation(x, fock_state(basis, (0, 2, 0))) == pytest.approx(1.0)
    # neighbouring centre-of-mass eigenvalues are 1/N apart
    vals = np.unique(np.round(x.diag, 12))
    assert np.min(np.diff(vals)) == pytest.approx(1.0 / 2.0)


def test_xcm_respects_origin():
    spec = spec_for(3, 1, "boson", origin=1.0)
    basis = enumerate_basis(spec)
    x = build_xcm_operator(basis)
    assert np.allclose(x.diag, [-1.0, 0.0, 1.0])


def test_position_operators_distinguishable():
    spec = spec_for(3, 2, "distinguishable")
    basis = enumerate_basis(spec)
    x1 = build_position_operator(basis, 0)
    x2 = build_position_operator(basis, 1)
    psi = fock_state(basis, (0, 1))
    assert expectation(x2, psi) == pytest.approx(1.0)
    xcm = build_xcm_operator(basis)
    assert np.allclose(0.5 * (x1.diag + x2.diag), xcm.diag)
    # relative coordinate of particle 0 in configuration (0, 2)
    rel = x1.diag - xcm.diag
    assert rel[basis.index((0, 2))] == pytest.approx(-1.0)
    with pytest.raises(StatisticsError):
        build_position_operator(enumerate_basis(spec_for(3, 2, "boson")), 0)


def test_expectation_contracts():
    spec = spec_for(2, 1, "boson")
    basis = enumerate_basis(spec)
    ident = build_number_operator(basis, 0).matrix + build_number_operator(basis, 1).matrix
    psi = superposition_state(basis, [((1, 0), 1.0), ((0, 1), 1.0)])
    assert expectation(build_number_operator(basis, 0), psi) == pytest.approx(0.5)
    assert expectation(ident, psi) == pytest.approx(1.0)
    H = build_hamiltonian(spec, basis)
    val = expectation(H, psi)
    assert abs(val.imag) < 1e-10
    with pytest.raises(DimensionMismatchError):
        expectation(H, np.ones(5))


def test_normalize():
    v = np.array([3.0, 4.0j])
    assert abs(np.linalg.norm(normalize(v)) - 1.0) < 1e-10
    with pytest.raises(ValueError):
        normalize(np.zeros(2))
