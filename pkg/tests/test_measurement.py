import numpy as np
import pytest

from lattraj import (
    DegenerateRateError,
    ResolutionFitError,
    SystemSpec,
    build_measurement_model,
    effective_resolution,
    enumerate_basis,
    fock_state,
    gaussian_psf,
    integrated_mdagm,
    load_tabulated_psf,
    measurement_operator,
    outcome_distribution,
    superposition_state,
    tabulated_psf,
)
from lattraj.measurement import outcome_density, sample_outcome


def make_system(M=4, N=2, stats="boson", gamma=1.0, sigma=1.0, **kw):
    return SystemSpec(sites=M, particles=N, statistics=stats, gamma=gamma,
                      sigma=sigma, **kw)


# ---------------------------------------------------------------------------
# point spread functions
# ---------------------------------------------------------------------------


def test_gaussian_psf_normalization_and_symmetry():
    psf = gaussian_psf(1.7)
    x = np.linspace(-30, 30, 20001)
    assert np.trapezoid(psf(x) ** 2, x) == pytest.approx(1.0, abs=1e-6)
    assert np.max(np.abs(psf(x) - psf(-x))) < 1e-12


def test_tabulated_psf_validation():
    x = np.linspace(-20, 20, 4001)
    f = np.exp(-(x**2) / 2.0) / np.pi**0.25
    psf = tabulated_psf(x, f)
    assert psf.overlap(1.0) == pytest.approx(np.exp(-0.25), abs=1e-6)
    with pytest.raises(ValueError):
        tabulated_psf(x + 1.0, f)  # asymmetric grid
    with pytest.raises(ValueError):
        tabulated_psf(x, 2 * f)  # unnormalized
    bad = f.copy()
    bad[0] += 0.5
    with pytest.raises(ValueError):
        tabulated_psf(x, bad)  # not symmetric


def test_load_tabulated_psf(tmp_path):
    x = np.linspace(-15, 15, 3001)
    f = np.exp(-(x**2) / 2.0) / np.pi**0.25
    path = tmp_path / "psf.txt"
    np.savetxt(path, np.column_stack([x, f]), header="X f(X)")
    psf = load_tabulated_psf(path)
    assert psf.kind == "tabulated"
    assert psf(0.0) == pytest.approx(np.pi**-0.25, rel=1e-6)


# ---------------------------------------------------------------------------
# overlap matrix and effective resolution
# ---------------------------------------------------------------------------


def test_overlap_matrix_properties():
    spec = make_system(M=6, sigma=2.0)
    model = build_measurement_model(spec)
    F = model.overlap_matrix
    assert np.allclose(np.diag(F), 1.0, atol=1e-6)
    assert np.max(np.abs(F)) <= 1.0 + 1e-12
    assert np.allclose(F, F.T)
    assert np.linalg.eigvalsh(F).min() > -1e-12  # Gram matrix of shifted psfs
    k = np.arange(6)
    expected = np.exp(-((k[:, None] - k[None, :]) ** 2) / (4.0 * 4.0))
    assert np.allclose(F, expected, atol=1e-12)


def test_gaussian_overlap_matches_tabulated_quadrature():
    x = np.linspace(-40, 40, 16001)
    f = np.exp(-(x**2) / (2 * 1.3**2)) / (np.pi * 1.3**2) ** 0.25
    tab = tabulated_psf(x, f)
    gauss = gaussian_psf(1.3)
    for k in range(4):
        assert tab.overlap(float(k)) == pytest.approx(gauss.overlap(float(k)), abs=1e-6)


def test_effective_resolution_gaussian():
    sig = effective_resolution(gaussian_psf(10.0), 1.0)
    assert sig == pytest.approx(10.0, rel=0.02)
    sig2 = effective_resolution(gaussian_psf(20.0), 1.0)
    assert sig2 == pytest.approx(2.0 * sig, rel=0.02)


def test_effective_resolution_quadratic_coefficient():
    # exact Gaussian overlaps exp(-k^2 d^2 / 4 sigma^2): curvature d^2/(4 sigma^2)
    sigma = 7.0
    sig_fit = effective_resolution(gaussian_psf(sigma), 1.0)
    c_fit = 1.0 / (4.0 * sig_fit**2)
    assert c_fit == pytest.approx(1.0 / (4 * sigma**2), rel=0.01)


def test_effective_resolution_rejects_narrow_psf():
    with pytest.raises(ResolutionFitError):
        effective_resolution(gaussian_psf(0.3), 1.0)


def test_model_sigma_eff_none_for_narrow_psf():
    spec = make_system(M=4, sigma=0.05)
    model = build_measurement_model(spec)
    assert model.sigma_eff is None


# ---------------------------------------------------------------------------
# measurement operators
# ---------------------------------------------------------------------------


def test_operator_single_particle_value():
    spec = make_system(M=3, N=1, gamma=2.0, sigma=1.5, origin=0.0)
    basis = enumerate_basis(spec)
    model = build_measurement_model(spec)
    op = measurement_operator(model, basis, 0.0)
    # particle at site 0, outcome at site 0: sqrt(gamma) * (sigma^2 pi)^(-1/4)
    expected = np.sqrt(2.0) * (1.5**2 * np.pi) ** -0.25
    assert op.diag[basis.index((1, 0, 0))] == pytest.approx(expected)


def test_operator_sums_over_occupied_sites():
    spec = make_system(M=3, N=2, gamma=1.0, sigma=1.0)
    basis = enumerate_basis(spec)
    model = build_measurement_model(spec)
    X = 0.37
    op = measurement_operator(model, basis, X)
    f = model.psf(X - model.site_positions)
    assert op.diag[basis.index((1, 1, 0))] == pytest.approx(f[0] + f[1])
    assert op.diag[basis.index((2, 0, 0))] == pytest.approx(2 * f[0])


def test_operator_distinguishable_per_particle():
    spec = make_system(M=3, N=2, stats="distinguishable", gamma=4.0)
    basis = enumerate_basis(spec)
    model = build_measurement_model(spec)
    op = measurement_operator(model, basis, 1.0, particle=1)
    f = model.psf(1.0 - model.site_positions)
    assert op.diag[basis.index((0, 2))] == pytest.approx(2.0 * f[2])
    with pytest.raises(Exception):
        measurement_operator(model, basis, 1.0)  # particle index required


# ---------------------------------------------------------------------------
# integrated M^dag M
# ---------------------------------------------------------------------------


def test_integrated_rate_single_particle_is_flat():
    spec = make_system(M=5, N=1, gamma=0.7, sigma=2.0)
    basis = enumerate_basis(spec)
    model = build_measurement_model(spec)
    Q = integrated_mdagm(model, basis)
    assert np.allclose(Q.diag, 0.7, atol=1e-12)


def test_integrated_rate_bunched_pair():
    for sigma in (0.3, 1.0, 5.0):
        spec = make_system(M=4, N=2, gamma=1.0, sigma=sigma)
        basis = enumerate_basis(spec)
        model = build_measurement_model(spec)
        Q = integrated_mdagm(model, basis)
        assert Q.diag[basis.index((2, 0, 0, 0))] == pytest.approx(4.0)


def test_integrated_rate_weak_resolution_scaling():
    spec = make_system(M=4, N=2, gamma=1.0, sigma=10.0)
    basis = enumerate_basis(spec)
    model = build_measurement_model(spec)
    Q = integrated_mdagm(model, basis)
    # gamma N^2 (1 - O(d^2/sigma^2)) on every configuration
    assert np.all(Q.diag <= 4.0 + 1e-9)
    assert np.all(Q.diag >= 4.0 * (1 - 4 * (3.0 / 10.0) ** 2 / 4))


def test_integrated_rate_matches_grid_quadrature():
    spec = make_system(M=4, N=2, gamma=1.0, sigma=0.8)
    basis = enumerate_basis(spec)
    model = build_measurement_model(spec)
    Q = integrated_mdagm(model, basis)
    quad = np.zeros(basis.dimension)
    for X in model.outcome_grid:
        quad += measurement_operator(model, basis, X).diag ** 2
    quad *= model.grid_spacing
    assert np.allclose(quad, Q.diag, rtol=1e-6)


def test_integrated_rate_distinguishable_constant():
    spec = make_system(M=3, N=2, stats="distinguishable", gamma=1.5)
    basis = enumerate_basis(spec)
    model = build_measurement_model(spec)
    Q = integrated_mdagm(model, basis)
    assert np.allclose(Q.diag, 3.0, atol=1e-12)


# ---------------------------------------------------------------------------
# outcome distribution
# ---------------------------------------------------------------------------


def test_distribution_localized_particle():
    spec = make_system(M=3, N=1, gamma=1.0, sigma=0.7, origin=1.0)
    basis = enumerate_basis(spec)
    model = build_measurement_model(spec)
    psi = fock_state(basis, (0, 0, 1))
    dens = outcome_distribution(model, basis, psi)
    assert np.trapezoid(dens, model.outcome_grid) == pytest.approx(1.0, abs=1e-6)
    expected = model.psf(model.outcome_grid - 1.0) ** 2
    assert np.allclose(dens, expected, atol=1e-8)


def test_distribution_symmetry():
    spec = make_system(M=3, N=1, gamma=1.0, sigma=1.0, origin=1.0)
    basis = enumerate_basis(spec)
    model = build_measurement_model(spec)
    psi = superposition_state(basis, [((1, 0, 0), 1.0), ((0, 0, 1), 1.0)])
    dens = outcome_distribution(model, basis, psi)
    assert np.max(np.abs(dens - dens[::-1])) < 1e-10


def test_distribution_bunched_vs_separated_peaks():
    spec = make_system(M=7, N=2, gamma=1.0, sigma=0.4, origin=3.0)
    basis = enumerate_basis(spec)
    model = build_measurement_model(spec)
    grid = model.outcome_grid

    occ_bunched = (0, 0, 0, 2, 0, 0, 0)
    dens_b = outcome_distribution(model, basis, fock_state(basis, occ_bunched))
    occ_split = (1, 0, 0, 0, 0, 0, 1)
    dens_s = outcome_distribution(model, basis, fock_state(basis, occ_split))

    # independent evaluation from gamma * sum f(X - m) f(X - l) <n_m n_l>
    f = model.psf_on_grid
    direct = 4.0 * f[:, 3] ** 2
    direct /= np.trapezoid(direct, grid)
    assert np.allclose(dens_b, direct, atol=1e-10)

    def count_peaks(d):
        mask = np.concatenate([[0], (d > 0.25 * d.max()).astype(int), [0]])
        return int(np.sum(np.diff(mask) == 1))

    assert count_peaks(dens_b) == 1
    assert count_peaks(dens_s) == 2


def test_distribution_zero_rate_error():
    spec = make_system(M=3, N=1, gamma=0.0)
    basis = enumerate_basis(spec)
    model = build_measurement_model(spec)
    with pytest.raises(DegenerateRateError):
        outcome_distribution(model, basis, fock_state(basis, (1, 0, 0)))


def test_sample_outcome_inverse_cdf():
    spec = make_system(M=3, N=1, gamma=1.0, sigma=0.5, origin=1.0)
    basis = enumerate_basis(spec)
    model = build_measurement_model(spec)
    dens = outcome_density(model, basis, fock_state(basis, (0, 1, 0)))
    # symmetric single peak at 0: the median must sit at the centre
    assert sample_outcome(model, dens, 0.5) == pytest.approx(0.0, abs=1e-6)
    assert sample_outcome(model, dens, 0.999) > 1.0
