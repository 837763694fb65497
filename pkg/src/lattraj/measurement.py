"""Spatially resolved position-measurement model.

A detected signal at screen coordinate X acts on the lattice through the
diagonal operator sqrt(gamma) * sum_m f(X - x_m) n_m, where f is the amplitude
point spread function (normalized so that the integral of f^2 is one) and
x_m = coord_m * d is the physical position of site m.  Everything observable
in the weak-resolution regime reduces to the overlap matrix
F[m,l] = integral f(X - x_m) f(X - x_l) dX and its quadratic expansion, whose
curvature defines the effective resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateRateError, ResolutionFitError, StatisticsError
from .hilbert import (
    FockBasis,
    Operator,
    Statistics,
    SystemSpec,
    diagonal_operator,
)


@dataclass(frozen=True)
class PointSpreadFunction:
    """Amplitude point spread function, Gaussian or tabulated.

    Gaussian: f(X) = exp(-X^2 / (2 width^2)) / (pi width^2)^(1/4).
    Tabulated profiles are sampled on a uniform symmetric grid and evaluated
    by linear interpolation (zero outside the grid).
    """

    kind: str
    width: float | None = None
    grid: np.ndarray | None = field(default=None, repr=False)
    values: np.ndarray | None = field(default=None, repr=False)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "gaussian":
            w = self.width
            return np.exp(-(x**2) / (2.0 * w**2)) / (np.pi * w**2) ** 0.25
        return np.interp(x, self.grid, self.values, left=0.0, right=0.0)

    def overlap(self, displacement: float) -> float:
        """integral f(X) f(X - displacement) dX (analytic for Gaussian)."""
        if self.kind == "gaussian":
            return float(np.exp(-(displacement**2) / (4.0 * self.width**2)))
        # trapezoid on the tabulated grid, dense enough by construction
        fx = self.values
        fshift = self(self.grid + displacement)
        return float(np.trapezoid(fx * fshift, self.grid))


def gaussian_psf(width: float) -> PointSpreadFunction:
    if width <= 0:
        raise ValueError("psf width must be > 0")
    return PointSpreadFunction(kind="gaussian", width=width)


def tabulated_psf(grid: np.ndarray, values: np.ndarray,
                  norm_tol: float = 1e-6, sym_tol: float = 1e-10) -> PointSpreadFunction:
    """Validate and wrap a sampled symmetric profile.

    The grid must be uniform and symmetric about 0; f must satisfy
    f(X) = f(-X) within ``sym_tol`` and integral f^2 = 1 within ``norm_tol``.
    """
    grid = np.asarray(grid, dtype=float)
    values = np.asarray(values, dtype=float)
    if grid.ndim != 1 or grid.shape != values.shape or grid.size < 5:
        raise ValueError("tabulated psf needs matching 1D arrays with >= 5 samples")
    steps = np.diff(grid)
    if not np.allclose(steps, steps[0], rtol=1e-8, atol=1e-12):
        raise ValueError("tabulated psf grid must be uniform")
    if abs(grid[0] + grid[-1]) > 1e-9 * max(1.0, abs(grid[-1])):
        raise ValueError("tabulated psf grid must be symmetric about 0")
    if np.max(np.abs(values - values[::-1])) > sym_tol:
        raise ValueError("tabulated psf must be symmetric: f(X) = f(-X)")
    norm = np.trapezoid(values**2, grid)
    if abs(norm - 1.0) > norm_tol:
        raise ValueError(f"tabulated psf has integral f^2 = {norm:.8f}, expected 1")
    return PointSpreadFunction(kind="tabulated", grid=grid, values=values)


def load_tabulated_psf(path) -> PointSpreadFunction:
    """Load a two-column text file (X, f(X)); '#' starts a comment."""
    data = np.loadtxt(path, comments="#")
    if data.ndim != 2 or data.shape[1] != 2:
        raise ValueError("psf file must have two columns: X and f(X)")
    return tabulated_psf(data[:, 0], data[:, 1])


def effective_resolution(psf: PointSpreadFunction, lattice_constant: float) -> float:
    """Effective resolution from the curvature of displaced psf overlaps.

    Fits F(k) ~= 1 - (k d)^2 / (4 s^2) over separations |k| d <= s by least
    squares; a quartic nuisance term absorbs the next order of the expansion
    so the fitted curvature is unbiased.  Solved self-consistently since the
    fit window depends on the result.

    Raises
    ------
    ResolutionFitError
        If the quadratic model misses F by more than 0.1 anywhere in the fit
        window (the psf is too narrow for the expansion to hold).
    """
    d = float(lattice_constant)
    f1 = psf.overlap(d)
    if f1 >= 1.0:
        raise ResolutionFitError("psf overlap does not decrease with displacement")
    s_est = d / (2.0 * np.sqrt(1.0 - f1))
    c = d**2 / (4.0 * s_est**2)
    for _ in range(4):
        kmax = max(2, int(np.floor(s_est / d)))
        ks = np.arange(kmax + 1)
        F = np.array([psf.overlap(k * d) for k in ks])
        y = 1.0 - F
        A = np.column_stack([ks.astype(float) ** 2, ks.astype(float) ** 4])
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        c = coef[0]
        if c <= 0:
            raise ResolutionFitError("fitted overlap curvature is not positive")
        s_new = d / (2.0 * np.sqrt(c))
        if abs(s_new - s_est) <= 1e-9 * s_est:
            s_est = s_new
            break
        s_est = s_new
    kmax = max(2, int(np.floor(s_est / d)))
    ks = np.arange(kmax + 1)
    F = np.array([psf.overlap(k * d) for k in ks])
    resid = np.max(np.abs(F - (1.0 - c * ks.astype(float) ** 2)))
    if resid > 0.1:
        raise ResolutionFitError(
            f"quadratic overlap model residual {resid:.3f} exceeds 0.1; "
            "psf too narrow for a meaningful effective resolution"
        )
    return float(s_est)


@dataclass(frozen=True)
class MeasurementModel:
    """Precomputed measurement geometry for one system.

    ``outcome_grid`` spans the illuminated region with spacing fine enough to
    resolve both the psf and the lattice; ``overlap_matrix`` holds
    F[m,l] = integral f(X - x_m) f(X - x_l) dX; ``sigma_eff`` is the fitted
    effective resolution of the psf (None when the psf is too narrow for the
    quadratic expansion).
    """

    psf: PointSpreadFunction
    gamma: float
    lattice_constant: float
    site_positions: np.ndarray
    outcome_grid: np.ndarray
    grid_spacing: float
    overlap_matrix: np.ndarray
    sigma_eff: float | None
    psf_on_grid: np.ndarray = field(repr=False)  # (n_grid, sites)

    @property
    def sites(self) -> int:
        return self.site_positions.size


def build_measurement_model(spec: SystemSpec, psf: PointSpreadFunction | None = None,
                            grid_oversampling: int = 8) -> MeasurementModel:
    """Assemble the outcome grid, overlap matrix and effective resolution.

    The grid extends 6 sigma plus one lattice length beyond the lattice centre
    on both sides (captures all but ~1e-8 of the signal mass) with spacing
    min(d, sigma) / grid_oversampling.
    """
    if psf is None:
        psf = gaussian_psf(spec.sigma)
    d = spec.lattice_constant
    # physical positions of the sites on the screen axis
    x_sites = spec.lattice_constant * (np.arange(spec.sites) - spec.origin)
    center = float(x_sites.mean())
    sigma_scale = psf.width if psf.kind == "gaussian" else spec.sigma
    half_extent = spec.sites * d + 6.0 * sigma_scale
    spacing = min(d, sigma_scale) / grid_oversampling
    n_half = int(np.ceil(half_extent / spacing))
    grid = center + spacing * np.arange(-n_half, n_half + 1)

    M = spec.sites
    F = np.empty((M, M))
    for k in range(M):
        val = psf.overlap(k * d)
        idx = np.arange(M - k)
        F[idx, idx + k] = val
        F[idx + k, idx] = val

    try:
        sig_eff = effective_resolution(psf, d)
    except ResolutionFitError:
        sig_eff = None

    psf_on_grid = psf(grid[:, None] - x_sites[None, :])
    return MeasurementModel(
        psf=psf,
        gamma=float(spec.gamma),
        lattice_constant=d,
        site_positions=x_sites,
        outcome_grid=grid,
        grid_spacing=spacing,
        overlap_matrix=F,
        sigma_eff=sig_eff,
        psf_on_grid=psf_on_grid,
    )


def measurement_operator(model: MeasurementModel, basis: FockBasis, outcome: float,
                         particle: int | None = None) -> Operator:
    """Diagonal signal operator for one outcome X.

    For indistinguishable particles the diagonal on an occupation vector is
    sqrt(gamma) sum_m f(X - x_m) n_m.  For distinguishable particles the
    operator acts on one particle: sqrt(gamma_i) f(X - x_{pos_i}).
    """
    fvals = model.psf(outcome - model.site_positions)
    if basis.statistics is Statistics.DISTINGUISHABLE:
        if particle is None:
            raise StatisticsError(
                "distinguishable particles carry per-particle signal operators; "
                "pass particle=i"
            )
        diag = np.sqrt(model.gamma) * fvals[basis.positions[:, particle]]
    else:
        if particle is not None:
            raise StatisticsError("particle index only applies to distinguishable bases")
        diag = np.sqrt(model.gamma) * (basis.occupations @ fvals)
    return diagonal_operator(diag, hermitian=True)


def integrated_mdagm_diagonal(model: MeasurementModel, basis: FockBasis,
                              gammas: np.ndarray | None = None) -> np.ndarray:
    """Diagonal of the outcome-integrated backaction rate operator.

    Indistinguishable: gamma * n^T F n per basis state, exact through the
    overlap matrix.  Distinguishable: each particle contributes a constant
    gamma_i (its own overlap at zero displacement), so the total is uniform.
    """
    if basis.statistics is Statistics.DISTINGUISHABLE:
        if gammas is None:
            gammas = np.full(basis.particles, model.gamma)
        return np.full(basis.dimension, float(np.sum(gammas)))
    occ = basis.occupations.astype(float)
    return model.gamma * np.einsum("sm,ml,sl->s", occ, model.overlap_matrix, occ)


def integrated_mdagm(model: MeasurementModel, basis: FockBasis,
                     gammas: np.ndarray | None = None) -> Operator:
    """Outcome-integrated M^dag M as a diagonal operator."""
    return diagonal_operator(integrated_mdagm_diagonal(model, basis, gammas))


def _pair_expectations(basis: FockBasis, state: np.ndarray) -> np.ndarray:
    """<n_m n_l> matrix for a state vector or density matrix."""
    if state.ndim == 1:
        w = np.abs(state) ** 2
    else:
        w = np.real(np.diagonal(state))
    occ = basis.occupations.astype(float)
    return np.einsum("s,sm,sl->ml", w, occ, occ)


def outcome_density(model: MeasurementModel, basis: FockBasis, state: np.ndarray,
                    gammas: np.ndarray | None = None) -> np.ndarray:
    """Unnormalized detection-rate density <M^dag(X) M(X)> on the grid."""
    fg = model.psf_on_grid
    if basis.statistics is Statistics.DISTINGUISHABLE:
        if gammas is None:
            gammas = np.full(basis.particles, model.gamma)
        w = np.abs(state) ** 2 if state.ndim == 1 else np.real(np.diagonal(state))
        dens = np.zeros(model.outcome_grid.size)
        for i in range(basis.particles):
            site_prob = np.bincount(
                basis.positions[:, i], weights=w, minlength=basis.sites
            )
            dens += gammas[i] * (fg**2) @ site_prob
        return dens
    corr = _pair_expectations(basis, state)
    return model.gamma * np.einsum("gm,ml,gl->g", fg, corr, fg)


def outcome_distribution(model: MeasurementModel, basis: FockBasis,
                         state: np.ndarray,
                         gammas: np.ndarray | None = None) -> np.ndarray:
    """Normalized outcome probability density on the grid.

    Raises
    ------
    DegenerateRateError
        If the total detection rate vanishes (gamma = 0 or zero state).
    """
    dens = outcome_density(model, basis, state, gammas)
    total = np.trapezoid(dens, model.outcome_grid)
    if total <= 0.0:
        raise DegenerateRateError("total detection rate is zero; no outcome defined")
    return dens / total


def sample_outcome(model: MeasurementModel, density: np.ndarray, u: float) -> float:
    """Inverse-CDF draw on the outcome grid with linear interpolation."""
    cdf = np.concatenate(([0.0], np.cumsum(0.5 * (density[1:] + density[:-1])
                                           * np.diff(model.outcome_grid))))
    cdf /= cdf[-1]
    return float(np.interp(u, cdf, model.outcome_grid))
