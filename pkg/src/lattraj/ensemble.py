"""Seeded parallel ensembles, observable statistics and diffusion fits.

Trajectory i of an ensemble draws its noise from a counter-based stream keyed
by (base_seed, i), and trajectories are processed in fixed-size blocks whose
partial sums are reduced in block order.  Aggregates are therefore bit
identical for any worker count; the worker count only changes wall time.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import jump as jump_mod
from .diffusive import (
    DiffusiveParams,
    diffusive_params,
    integrate_diffusive_block,
    make_step_grid,
    noise_channels,
    trajectory_generator,
)
from .errors import StatisticsError, DiffusionFitError
from .hilbert import (
    FockBasis,
    Statistics,
    SystemSpec,
    build_hamiltonian,
    enumerate_basis,
    normalize,
)
from .master import evolve_unitary
from .measurement import build_measurement_model
from .records import (
    EnsembleAccumulator,
    EnsembleResult,
    FactorizedObservableSet,
    ObservableSet,
    TrajectoryRecord,
)

#: Trajectories are processed in blocks of this fixed size.
BLOCK_SIZE = 64

WORKERS_ENV = "LATTRAJ_WORKERS"


def resolve_workers(workers: int | None) -> int:
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    return max(1, workers)


def _block_ranges(n: int, block: int = BLOCK_SIZE):
    return [(b, min(b + block, n)) for b in range(0, n, block)]


# ---------------------------------------------------------------------------
# Diffusive ensembles
# ---------------------------------------------------------------------------


@dataclass
class _DiffusivePlan:
    """Everything a worker needs to integrate a block of trajectories."""

    hmat: object
    diags: np.ndarray
    kappas: np.ndarray
    dt: float
    n_steps: int
    readout_steps: np.ndarray
    times: np.ndarray
    psi0: np.ndarray
    obs: object
    base_seed: int
    n_trajectories: int
    scalar_names: tuple
    keep_per_trajectory: tuple
    rho_readout_map: dict          # readout index -> checkpoint index
    rho_dim: int
    noise_per_column: int | None = None
    factor_count: int = 1          # columns per trajectory


def _new_accumulator(plan: _DiffusivePlan) -> EnsembleAccumulator:
    rho_idx = (np.arange(len(plan.rho_readout_map))
               if plan.rho_readout_map else None)
    sites = plan.obs.sites if hasattr(plan.obs, "sites") else plan.psi0.shape[0]
    return EnsembleAccumulator(
        n_times=plan.times.size,
        sites=sites,
        scalar_names=plan.scalar_names,
        rho_checkpoints=rho_idx,
        dim=plan.rho_dim,
        keep_per_trajectory=plan.keep_per_trajectory,
        n_trajectories=plan.n_trajectories,
    )


def _product_columns_to_rho(Psi: np.ndarray, factors: int) -> np.ndarray:
    """Full product-state block (dim^N, B) from per-particle columns."""
    M, total = Psi.shape
    B = total // factors
    cols = []
    for b in range(B):
        psi = Psi[:, b * factors]
        for i in range(1, factors):
            psi = np.multiply.outer(psi, Psi[:, b * factors + i]).ravel()
        cols.append(psi)
    return np.stack(cols, axis=1)


def _diffusive_block_worker(args) -> EnsembleAccumulator:
    plan, (b0, b1) = args
    acc = _new_accumulator(plan)
    n_block = b1 - b0
    gens = [trajectory_generator(plan.base_seed, i) for i in range(b0, b1)]
    traj_idx = np.arange(b0, b1)

    if plan.noise_per_column is None:
        psi0_block = plan.psi0
        kappas = plan.kappas
    else:
        # product path: columns grouped per trajectory, one per particle
        psi0_block = np.tile(plan.psi0, (1, n_block))
        kappas = np.tile(plan.kappas, n_block)[None, :]

    def on_readout(k, step, Psi):
        w = plan.obs.weights(Psi)
        acc.add_readout(k, plan.obs.density(w), plan.obs.scalars(w), traj_idx)
        if k in plan.rho_readout_map:
            if plan.noise_per_column is None:
                block = Psi
            else:
                block = _product_columns_to_rho(Psi, plan.factor_count)
            acc.add_rho(plan.rho_readout_map[k], block)

    integrate_diffusive_block(
        psi0_block, plan.hmat, plan.diags, kappas, plan.dt, plan.n_steps,
        plan.readout_steps, gens, on_readout,
        noise_per_column=plan.noise_per_column,
    )
    acc.add_count(n_block)
    return acc


# ---------------------------------------------------------------------------
# Jump ensembles
# ---------------------------------------------------------------------------


@dataclass
class _JumpPlan:
    spec: SystemSpec
    basis: FockBasis
    model: object
    psi0: np.ndarray
    t_end: float
    n_readout: int
    dt_max: float | None
    times: np.ndarray
    base_seed: int
    n_trajectories: int
    scalar_names: tuple
    keep_per_trajectory: tuple
    rho_checkpoint_times: np.ndarray | None
    rho_dim: int


def _jump_block_worker(args) -> EnsembleAccumulator:
    plan, (b0, b1) = args
    sites = plan.basis.sites
    acc = EnsembleAccumulator(
        n_times=plan.times.size,
        sites=sites,
        scalar_names=plan.scalar_names,
        rho_checkpoints=(np.arange(len(plan.rho_checkpoint_times))
                         if plan.rho_checkpoint_times is not None else None),
        dim=plan.rho_dim,
        keep_per_trajectory=plan.keep_per_trajectory,
        n_trajectories=plan.n_trajectories,
    )
    for i in range(b0, b1):
        rec = jump_mod.run_jump_trajectory(
            plan.spec, plan.psi0, plan.t_end, seed=None,
            basis=plan.basis, model=plan.model, dt_max=plan.dt_max,
            n_readout=plan.n_readout,
            rho_checkpoint_times=plan.rho_checkpoint_times,
            rng=trajectory_generator(plan.base_seed, i),
        )
        scalars = {"xcm": rec.xcm, "xcm_var": rec.xcm_var}
        if rec.sigma_r2 is not None:
            scalars["sigma_r2"] = rec.sigma_r2
        acc.add_trajectory(rec.density, scalars, i)
        if plan.rho_checkpoint_times is not None:
            for kc, tc in enumerate(plan.rho_checkpoint_times):
                rho = rec.rho_checkpoints[tc]
                acc.rho_sum[kc] += rho
                acc.rho_sumsq[kc] += rho.real**2 + rho.imag**2
        acc.jump_counts.append(len(rec.events))
    acc.add_count(b1 - b0)
    return acc


# ---------------------------------------------------------------------------
# Public driver
# ---------------------------------------------------------------------------


def run_ensemble(spec: SystemSpec, psi0, t_end: float, n_trajectories: int,
                 base_seed: int, *, unraveling: str = "diffusive",
                 dt: float | None = None, n_readout: int = 200,
                 rho_checkpoint_times=None, keep_per_trajectory=(),
                 workers: int | None = None, basis: FockBasis | None = None,
                 psi0_factors=None, params: DiffusiveParams | None = None,
                 model=None) -> EnsembleResult:
    """Run R independent trajectories and aggregate their observables.

    ``psi0_factors`` (a list of N single-particle wavefunctions) activates an
    exact product-state fast path for non-interacting distinguishable
    particles: each factor carries its own measurement channel and noise, so
    a trajectory of the N-particle state is N coupled single-particle
    trajectories.  Results are statistically identical to the generic stepper
    (verified in the test suite) at an N-fold smaller state dimension.
    """
    if n_trajectories < 1:
        raise ValueError("need at least one trajectory")
    workers = resolve_workers(workers)
    unraveling = unraveling.lower()

    if unraveling == "jump":
        if basis is None:
            basis = enumerate_basis(spec)
        if model is None:
            model = build_measurement_model(spec)
        times = np.linspace(0.0, t_end, max(2, n_readout))
        obs = ObservableSet(basis)
        scalar_names = ["xcm", "xcm_var"]
        if obs.sigma_r2_diag is not None:
            scalar_names.append("sigma_r2")
        rho_times = (np.asarray(rho_checkpoint_times, dtype=float)
                     if rho_checkpoint_times is not None else None)
        plan = _JumpPlan(
            spec=spec, basis=basis, model=model,
            psi0=normalize(np.asarray(psi0, dtype=complex)), t_end=t_end,
            n_readout=n_readout, dt_max=dt, times=times, base_seed=base_seed,
            n_trajectories=n_trajectories, scalar_names=tuple(scalar_names),
            keep_per_trajectory=tuple(keep_per_trajectory),
            rho_checkpoint_times=rho_times, rho_dim=basis.dimension,
        )
        acc = _reduce_blocks(_jump_block_worker, plan, n_trajectories, workers)
        return acc.finalize(base_seed, times, rho_times)

    if unraveling != "diffusive":
        raise ValueError(f"unknown unraveling {unraveling!r}")

    if params is None:
        params = diffusive_params(spec, dt)

    if psi0_factors is not None:
        if spec.statistics is not Statistics.DISTINGUISHABLE:
            raise StatisticsError("psi0_factors requires distinguishable particles")
        if spec.interaction != 0.0:
            raise StatisticsError("the product-state path needs U = 0")
        factors = [normalize(np.asarray(f, dtype=complex)) for f in psi0_factors]
        if len(factors) != spec.particles:
            raise ValueError("need one factor per particle")
        M = spec.sites
        coords = np.arange(M, dtype=float) - spec.origin
        single = SystemSpec(sites=M, particles=1, statistics=Statistics.BOSON,
                            hopping=spec.hopping, origin=spec.origin)
        hmat = build_hamiltonian(single, enumerate_basis(single)).matrix
        n_steps, dt_adj, readout_steps, times = make_step_grid(
            t_end, params.dt, n_readout)
        psi0_block = np.stack(factors, axis=1)  # (M, N) template per trajectory
        obs = FactorizedObservableSet(M, spec.particles, coords)
        rho_map = _checkpoint_map(times, rho_checkpoint_times)
        plan = _DiffusivePlan(
            hmat=hmat, diags=coords[None, :],
            kappas=np.asarray(params.kappa_rel, dtype=float),
            dt=dt_adj, n_steps=n_steps, readout_steps=readout_steps,
            times=times, psi0=psi0_block, obs=obs, base_seed=base_seed,
            n_trajectories=n_trajectories,
            scalar_names=_scalar_names_for(spec),
            keep_per_trajectory=tuple(keep_per_trajectory),
            rho_readout_map=rho_map, rho_dim=M**spec.particles,
            noise_per_column=spec.particles, factor_count=spec.particles,
        )
        acc = _reduce_blocks(_diffusive_block_worker, plan,
                             n_trajectories, workers)
        rho_times = (np.asarray(rho_checkpoint_times, dtype=float)
                     if rho_checkpoint_times is not None else None)
        return acc.finalize(base_seed, times, rho_times)

    if basis is None:
        basis = enumerate_basis(spec)
    hmat = build_hamiltonian(spec, basis).matrix
    diags, kappas = noise_channels(spec, basis, params)
    n_steps, dt_adj, readout_steps, times = make_step_grid(t_end, params.dt,
                                                           n_readout)
    obs = ObservableSet(basis)
    rho_map = _checkpoint_map(times, rho_checkpoint_times)
    plan = _DiffusivePlan(
        hmat=hmat, diags=diags, kappas=kappas, dt=dt_adj, n_steps=n_steps,
        readout_steps=readout_steps, times=times,
        psi0=normalize(np.asarray(psi0, dtype=complex)), obs=obs,
        base_seed=base_seed, n_trajectories=n_trajectories,
        scalar_names=_scalar_names_for(spec),
        keep_per_trajectory=tuple(keep_per_trajectory),
        rho_readout_map=rho_map, rho_dim=basis.dimension,
    )
    acc = _reduce_blocks(_diffusive_block_worker, plan, n_trajectories, workers)
    rho_times = (np.asarray(rho_checkpoint_times, dtype=float)
                 if rho_checkpoint_times is not None else None)
    return acc.finalize(base_seed, times, rho_times)


def _scalar_names_for(spec: SystemSpec):
    names = ["xcm", "xcm_var"]
    if spec.particles == 2:
        names.append("sigma_r2")
    return tuple(names)


def _checkpoint_map(times: np.ndarray, checkpoint_times) -> dict:
    if checkpoint_times is None:
        return {}
    out = {}
    for kc, tc in enumerate(np.asarray(checkpoint_times, dtype=float)):
        out[int(np.argmin(np.abs(times - tc)))] = kc
    return out


def _reduce_blocks(worker, plan, n_trajectories: int, workers: int):
    ranges = _block_ranges(n_trajectories)
    tasks = [(plan, rng) for rng in ranges]
    if workers <= 1 or len(ranges) == 1:
        results = map(worker, tasks)
        total = None
        for acc in results:
            if total is None:
                total = acc
            else:
                total.merge(acc)
        return total
    with ProcessPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(worker, tasks))
    total = results[0]
    for acc in results[1:]:
        total.merge(acc)
    return total


# ---------------------------------------------------------------------------
# Observable helpers and fits
# ---------------------------------------------------------------------------


def run_unitary_trajectory(spec: SystemSpec, psi0: np.ndarray, t_end: float,
                           n_readout: int = 200,
                           basis: FockBasis | None = None,
                           record_pair_correlation: bool = False) -> TrajectoryRecord:
    """Reference evolution without measurement, as a TrajectoryRecord."""
    if basis is None:
        basis = enumerate_basis(spec)
    H = build_hamiltonian(spec, basis)
    times = np.linspace(0.0, t_end, max(2, n_readout))
    states = evolve_unitary(H, normalize(np.asarray(psi0, dtype=complex)), times)
    obs = ObservableSet(basis)
    w = obs.weights(states.T)
    density = obs.density(w)
    sc = obs.scalars(w)
    pair = None
    if record_pair_correlation:
        pair = obs.pair_correlation(w)
    return TrajectoryRecord(
        times=times, density=density, xcm=sc["xcm"], xcm_var=sc["xcm_var"],
        sigma_r2=sc.get("sigma_r2"), pair_correlation=pair, seed=0,
    )


def pair_correlation(state: np.ndarray, basis: FockBasis) -> np.ndarray:
    """Site-resolved coincidence matrix <n_m n_l> (sums to N^2)."""
    obs = ObservableSet(basis)
    state = np.asarray(state)
    if state.ndim == 1:
        w = (state.real**2 + state.imag**2)[:, None]
    else:
        w = np.real(np.diagonal(state))[:, None]
    return obs.pair_correlation(w)[0]


def pair_correlation_normal_ordered(state: np.ndarray, basis: FockBasis) -> np.ndarray:
    """Two-particle coincidence <n_m n_l> - delta_ml <n_m> (sums to N(N-1)).

    This is the same-time pair-detection probability; its diagonal vanishes
    for fermions.
    """
    corr = pair_correlation(state, basis)
    state = np.asarray(state)
    if state.ndim == 1:
        w = state.real**2 + state.imag**2
    else:
        w = np.real(np.diagonal(state))
    dens = w @ basis.occupations.astype(float)
    return corr - np.diag(dens)


def relative_distance_variance(source) -> np.ndarray:
    """Squared relative distance series of a two-particle record or ensemble.

    For distinguishable particles this is <(x1 - x2)^2>; for bosons and
    fermions it is the pair-correlation average
    sum_{m,l} (m-l)^2 (<n_m n_l> - delta_ml <n_m>) / (N (N-1)),
    which reduces to the same quantity in the one-particle-per-species limit.
    """
    if isinstance(source, TrajectoryRecord):
        if source.sigma_r2 is None:
            raise StatisticsError("relative distance needs exactly two particles")
        return source.sigma_r2
    if isinstance(source, EnsembleResult):
        if "sigma_r2" not in source.mean:
            raise StatisticsError("relative distance needs exactly two particles")
        return source.mean["sigma_r2"]
    raise TypeError("expected a TrajectoryRecord or EnsembleResult")


@dataclass(frozen=True)
class DiffusionFit:
    diffusion_constant: float
    slope: float
    intercept: float
    r_squared: float
    slope_stderr: float
    window: tuple
    n_points: int

    @property
    def diffusion_stderr(self) -> float:
        return 0.5 * self.slope_stderr


def fit_diffusion_constant(times: np.ndarray, series: np.ndarray,
                           window: tuple) -> DiffusionFit:
    """Least-squares slope/2 of a variance series over a late-time window.

    Raises
    ------
    DiffusionFitError
        If fewer than 3 points fall in the window or R^2 < 0.9 (the series is
        not yet linear, i.e. not yet diffusive).
    """
    times = np.asarray(times, dtype=float)
    series = np.asarray(series, dtype=float)
    lo, hi = window
    mask = (times >= lo) & (times <= hi)
    n = int(mask.sum())
    if n < 3:
        raise DiffusionFitError(f"only {n} points inside the fit window {window}")
    t = times[mask]
    y = series[mask]
    tbar = t.mean()
    ybar = y.mean()
    sxx = np.sum((t - tbar) ** 2)
    slope = np.sum((t - tbar) * (y - ybar)) / sxx
    intercept = ybar - slope * tbar
    resid = y - (intercept + slope * t)
    ss_res = np.sum(resid**2)
    ss_tot = np.sum((y - ybar) ** 2)
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    if r2 < 0.9:
        raise DiffusionFitError(
            f"R^2 = {r2:.3f} < 0.9 over {window}; series is not yet diffusive"
        )
    se = np.sqrt(ss_res / max(n - 2, 1) / sxx)
    return DiffusionFit(diffusion_constant=0.5 * slope, slope=slope,
                        intercept=intercept, r_squared=r2, slope_stderr=se,
                        window=(float(lo), float(hi)), n_points=n)


def fit_diffusion_distribution(times: np.ndarray, per_traj: np.ndarray,
                               window: tuple):
    """Per-trajectory diffusion fits: returns (mean D, stderr of mean D).

    Trajectories are independent, so the spread of single-trajectory slopes
    gives an unbiased standard error for the ensemble diffusion constant.
    """
    times = np.asarray(times, dtype=float)
    lo, hi = window
    mask = (times >= lo) & (times <= hi)
    if mask.sum() < 3:
        raise DiffusionFitError(f"only {int(mask.sum())} points inside {window}")
    t = times[mask]
    Y = np.asarray(per_traj, dtype=float)[:, mask]
    tbar = t.mean()
    sxx = np.sum((t - tbar) ** 2)
    slopes = (Y - Y.mean(axis=1, keepdims=True)) @ (t - tbar) / sxx
    D = 0.5 * slopes
    return float(D.mean()), float(D.std(ddof=1) / np.sqrt(D.size))
