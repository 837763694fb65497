import numpy as np
import pytest

from lattraj import (
    CapacityError,
    StatisticsError,
    SystemSpec,
    ballistic_variance,
    build_hamiltonian,
    build_master,
    build_xcm_operator,
    collapse_time,
    enumerate_basis,
    evolve_unitary,
    fock_state,
    free_walk_density,
    integrate_master,
    lindblad_rhs,
    onsite_diffusion_constant,
    relative_diffusion_constant,
    site_resolved_strength,
    superposition_state,
)
from lattraj.hilbert import check_density_matrix, xcm_diagonal
from lattraj.master import MasterVariant, dephasing_rate_matrix


def random_density(dim, seed=0, rank=3):
    rng = np.random.default_rng(seed)
    rho = np.zeros((dim, dim), dtype=complex)
    for _ in range(rank):
        v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
        rho += np.outer(v, v.conj())
    return rho / np.trace(rho).real


# ---------------------------------------------------------------------------
# right-hand sides
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("variant,stats", [
    ("cm", "boson"), ("cm", "fermion"), ("site", "boson"),
    ("exact", "boson"), ("dist", "distinguishable"), ("exact", "distinguishable"),
])
def test_rhs_traceless_and_hermitian(variant, stats):
    spec = SystemSpec(sites=4, particles=2, statistics=stats, gamma=1.3,
                      sigma=1.2, hopping=0.9, interaction=0.4)
    ms = build_master(variant, spec)
    rho = random_density(ms.dimension, seed=3)
    dr = lindblad_rhs(ms, rho)
    assert abs(np.trace(dr)) < 1e-10
    assert np.max(np.abs(dr - dr.conj().T)) < 1e-10


def test_variant_compatibility():
    spec = SystemSpec(sites=3, particles=2, statistics="boson", gamma=1.0)
    with pytest.raises(StatisticsError):
        build_master("dist", spec)


def test_cm_dissipator_vanishes_on_fock_projector():
    spec = SystemSpec(sites=4, particles=2, statistics="boson", gamma=2.0,
                      hopping=0.0)
    ms = build_master("cm", spec)
    basis = ms.basis
    rho = np.outer(fock_state(basis, (1, 0, 1, 0)),
                   fock_state(basis, (1, 0, 1, 0)).conj())
    assert np.max(np.abs(lindblad_rhs(ms, rho))) < 1e-14


def test_cm_coherence_decay_rates():
    # off-diagonal elements decay at N^2 Gamma/4 times the squared
    # centre-of-mass distance
    spec = SystemSpec(sites=4, particles=2, statistics="boson", gamma=1.7,
                      sigma=1.3, hopping=0.0)
    ms = build_master("cm", spec)
    basis = ms.basis
    strength = spec.measurement_strength
    x = xcm_diagonal(basis)
    a, b = basis.index((2, 0, 0, 0)), basis.index((0, 0, 1, 1))
    E = np.zeros((basis.dimension,) * 2, dtype=complex)
    E[a, b] = 1.0
    dr = lindblad_rhs(ms, E)
    expected = -(2**2) * strength / 4.0 * (x[a] - x[b]) ** 2
    assert dr[a, b] == pytest.approx(expected, rel=1e-12)


def test_single_particle_weak_resolution_rates_are_quadratic():
    spec = SystemSpec(sites=5, particles=1, statistics="boson", gamma=2.0,
                      sigma=1.0, hopping=0.0)
    ms = build_master("cm", spec)
    strength = spec.measurement_strength
    n = np.arange(5)
    expected = strength / 4.0 * (n[:, None] - n[None, :]) ** 2
    assert np.allclose(ms.rates, expected)


def test_site_resolved_rates_single_particle_are_flat():
    spec = SystemSpec(sites=5, particles=1, statistics="boson", gamma=0.9,
                      hopping=0.0)
    ms = build_master("site", spec)
    off = ms.rates[~np.eye(5, dtype=bool)]
    assert np.allclose(off, 0.9)
    # nearest-neighbour rate matches the weak-resolution form at strength 4*gamma
    assert site_resolved_strength(0.9) / 4.0 == pytest.approx(0.9)


def test_exact_overlap_approaches_cm_limit():
    # fixed dimensionless strength, increasing sigma/d: deviation shrinks ~ (d/sigma)^2
    devs = []
    for sigma in (5.0, 20.0):
        spec = SystemSpec(sites=5, particles=2, statistics="boson",
                          gamma=2.0 * sigma**2, sigma=sigma, hopping=0.0)
        assert spec.measurement_strength == pytest.approx(2.0)
        basi = enumerate_basis(spec)
        R_exact = dephasing_rate_matrix("exact", spec, basi)
        R_cm = dephasing_rate_matrix("cm", spec, basi)
        devs.append(np.max(np.abs(R_exact - R_cm)))
    ratio = devs[0] / devs[1]
    assert 10.0 < ratio < 26.0  # (20/5)^2 = 16 up to higher-order terms


def test_exact_overlap_approaches_site_resolved_limit():
    spec = SystemSpec(sites=5, particles=2, statistics="boson", gamma=1.1,
                      sigma=0.05, hopping=0.0)
    basis = enumerate_basis(spec)
    R_exact = dephasing_rate_matrix("exact", spec, basis)
    R_site = dephasing_rate_matrix("site", spec, basis)
    assert np.max(np.abs(R_exact - R_site)) < 1e-10


def test_exact_overlap_distinguishable_limits():
    spec = SystemSpec(sites=4, particles=2, statistics="distinguishable",
                      gamma=200.0, sigma=10.0, hopping=0.0)
    basis = enumerate_basis(spec)
    R_exact = dephasing_rate_matrix("exact", spec, basis)
    R_dist = dephasing_rate_matrix("dist", spec, basis)
    # residual of the quadratic overlap expansion: ~ (max separation)^2 (d/2 sigma)^2
    assert np.max(np.abs(R_exact - R_dist)) / np.max(R_dist) < 0.02


# ---------------------------------------------------------------------------
# integrator
# ---------------------------------------------------------------------------


def test_integrator_matches_unitary_when_gamma_zero():
    spec = SystemSpec(sites=5, particles=2, statistics="boson", gamma=0.0,
                      hopping=1.0, interaction=0.8)
    ms = build_master("cm", spec)
    basis = ms.basis
    psi0 = superposition_state(basis, [((0, 1, 1, 0, 0), 1.0),
                                       ((0, 0, 2, 0, 0), 0.5j)])
    times = np.array([0.0, 0.7, 1.5])
    rhos = integrate_master(ms, np.outer(psi0, psi0.conj()), times)
    states = evolve_unitary(build_hamiltonian(spec, basis), psi0, times)
    for rho, psi in zip(rhos, states):
        assert np.max(np.abs(rho - np.outer(psi, psi.conj()))) < 1e-8


def test_integrator_preserves_trace_and_hermiticity():
    spec = SystemSpec(sites=4, particles=2, statistics="boson", gamma=2.0,
                      hopping=1.0)
    ms = build_master("cm", spec)
    rho0 = random_density(ms.dimension, seed=5)
    rhos = integrate_master(ms, rho0, np.array([0.0, 1.0, 2.0]))
    for rho in rhos:
        assert abs(np.trace(rho).real - 1.0) < 1e-8
        assert np.max(np.abs(rho - rho.conj().T)) < 1e-12
        check_density_matrix(rho)


def test_integrator_dt_halving_converged():
    spec = SystemSpec(sites=4, particles=2, statistics="boson", gamma=1.5,
                      hopping=1.0)
    ms = build_master("cm", spec)
    rho0 = random_density(ms.dimension, seed=8)
    times = np.array([0.0, 1.0])
    coarse = integrate_master(ms, rho0, times)[-1]
    fine = integrate_master(ms, rho0, times, dt=0.0025)[-1]
    assert np.max(np.abs(coarse - fine)) < 1e-6


def test_integrator_constant_on_cm_eigenspace_mixture():
    spec = SystemSpec(sites=4, particles=2, statistics="boson", gamma=3.0,
                      hopping=0.0)
    ms = build_master("cm", spec)
    basis = ms.basis
    # (1,1,0,0) and (2,0,... ) wait: pick equal-Xcm states (0,2,0,0) and (1,0,1,0)
    psi = superposition_state(basis, [((0, 2, 0, 0), 1.0), ((1, 0, 1, 0), 1.0)])
    rho0 = np.outer(psi, psi.conj())
    rhos = integrate_master(ms, rho0, np.array([0.0, 2.0]))
    assert np.max(np.abs(rhos[-1] - rho0)) < 1e-10


def test_master_dimension_cap():
    spec = SystemSpec(sites=40, particles=2, statistics="distinguishable",
                      gamma=1.0)
    with pytest.raises(CapacityError):
        build_master("dist", spec)


# ---------------------------------------------------------------------------
# closed-form oracles
# ---------------------------------------------------------------------------


def test_ballistic_variance_values():
    assert ballistic_variance(1.0, 0.0) == 0.0
    assert ballistic_variance(1.0, 3.0) == pytest.approx(18.0)


def test_free_walk_density_unitarity_and_initial_condition():
    m = np.arange(-60, 61)
    assert free_walk_density(1.0, 0.0, m)[60] == pytest.approx(1.0)
    dens = free_walk_density(1.0, 8.0, m)
    assert dens.sum() == pytest.approx(1.0, abs=1e-10)


def test_free_walk_density_matches_unitary_integrator():
    M = 41
    spec = SystemSpec(sites=M, particles=1, statistics="boson", origin=(M - 1) / 2)
    basis = enumerate_basis(spec)
    H = build_hamiltonian(spec, basis)
    psi0 = np.zeros(M, dtype=complex)
    psi0[(M - 1) // 2] = 1.0
    t = 5.0
    psi = evolve_unitary(H, psi0, np.array([t]))[0]
    offsets = np.arange(M) - (M - 1) // 2
    oracle = free_walk_density(1.0, t, offsets, sites=M)
    assert np.max(np.abs(np.abs(psi) ** 2 - oracle)) < 1e-8


def test_free_walk_density_boundary_warning():
    with pytest.warns(RuntimeWarning):
        free_walk_density(1.0, 10.0, np.arange(-10, 11), sites=21)


def test_diffusion_constant_values():
    assert relative_diffusion_constant(1.0, 16.0) == pytest.approx(1.0)
    assert onsite_diffusion_constant(1.0, 16.0) == pytest.approx(0.5)
    assert relative_diffusion_constant(1.0, 1e9) < 1e-6  # frozen transport
    with pytest.raises(ValueError):
        relative_diffusion_constant(1.0, 0.0)


def test_collapse_time_values():
    assert collapse_time(1.0, 2.0) == pytest.approx((3 * np.sqrt(2) / 2) ** (1 / 3))
    assert collapse_time(1.0, 1e9) < 2e-3


def test_site_resolved_onsite_diffusion():
    # density spread of the site-resolved single-particle equation:
    # d<x^2>/dt -> 2 * (8 J^2 / strength) with strength = 4 gamma
    gamma = 10.0
    M = 25
    spec = SystemSpec(sites=M, particles=1, statistics="boson", gamma=gamma,
                      hopping=1.0, origin=(M - 1) / 2)
    ms = build_master("site", spec)
    basis = ms.basis
    center = (M - 1) // 2
    occ = [0] * M
    occ[center] = 1
    psi0 = fock_state(basis, tuple(occ))
    times = np.linspace(0.0, 1.2, 7)
    rhos = integrate_master(ms, np.outer(psi0, psi0.conj()), times)
    coords = basis.site_coordinates
    x2 = np.array([np.real(np.diagonal(r)) @ coords**2 for r in rhos])
    slope = np.polyfit(times[3:], x2[3:], 1)[0]
    D = onsite_diffusion_constant(1.0, site_resolved_strength(gamma))
    assert slope == pytest.approx(2 * D, rel=0.05)


def test_adiabatic_coherence_relation_site_resolved():
    gamma = 10.0
    M = 17
    spec = SystemSpec(sites=M, particles=1, statistics="boson", gamma=gamma,
                      hopping=1.0, origin=(M - 1) / 2)
    ms = build_master("site", spec)
    psi0 = np.zeros(M, dtype=complex)
    psi0[(M - 1) // 2] = 1.0
    rho = integrate_master(ms, np.outer(psi0, psi0.conj()),
                           np.array([0.0, 0.5]))[-1]
    upper = np.diagonal(rho, offset=1)
    diag = np.real(np.diagonal(rho))
    strength = site_resolved_strength(gamma)
    predicted = 4j * 1.0 / strength * (diag[1:] - diag[:-1])
    err = np.max(np.abs(upper - predicted)) / np.max(np.abs(upper))
    assert err < 0.05
