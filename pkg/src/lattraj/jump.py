"""Photodetection-jump trajectories.

Between detections the state evolves under the non-hermitian generator
H - (i/2) integral M^dag(X) M(X) dX, whose decaying norm encodes the waiting
time: a detection happens when the squared norm crosses a uniform threshold,
which reproduces the exact inhomogeneous detection statistics for any step
size.  At a detection the outcome X is drawn from <M^dag(X) M(X)> by inverse
CDF on the outcome grid and the state is reduced by M(X) and renormalized.
Distinguishable particles emit through one channel per particle.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq

from .diffusive import trajectory_generator
from .errors import DegenerateRateError, StepSizeError
from .hilbert import (
    FockBasis,
    Operator,
    Statistics,
    SystemSpec,
    build_hamiltonian,
    enumerate_basis,
    normalize,
)
from .measurement import (
    MeasurementModel,
    build_measurement_model,
    integrated_mdagm,
    measurement_operator,
    outcome_density,
    sample_outcome,
)
from .records import JumpEvent, ObservableSet, TrajectoryRecord

_DENSE_LIMIT = 512


def default_jump_dt(spec: SystemSpec) -> float:
    """0.01 times the fastest of the hopping and total detection timescales."""
    J = abs(spec.hopping)
    rate = spec.particles**2 * spec.gamma
    scales = [s for s in (1.0 / J if J > 0 else None,
                          1.0 / rate if rate > 0 else None) if s is not None]
    return 0.01 * min(scales) if scales else 0.01


def nocount_generator(hamiltonian: Operator, mdagm: Operator) -> Operator:
    """Non-hermitian no-count generator H - (i/2) * integrated M^dag M."""
    mat = (hamiltonian.matrix - 0.5j * mdagm.matrix).tocsr()
    return Operator(matrix=mat, hermitian=False)


def _flow_matrix(generator: Operator):
    """-i G, dense below the small-dimension threshold."""
    mat = -1j * generator.matrix
    if generator.dim <= _DENSE_LIMIT:
        return np.asarray(mat.todense())
    return mat.tocsr()


def _rk4_step(A, psi: np.ndarray, h: float) -> np.ndarray:
    k1 = A @ psi
    k2 = A @ (psi + 0.5 * h * k1)
    k3 = A @ (psi + 0.5 * h * k2)
    k4 = A @ (psi + h * k3)
    return psi + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def evolve_nocount(psi: np.ndarray, generator: Operator, dt: float) -> np.ndarray:
    """One unnormalized 4th-order step of the no-count evolution.

    Raises
    ------
    StepSizeError
        If the squared norm falls below 1e-12 within the single step.
    """
    out = _rk4_step(_flow_matrix(generator), np.asarray(psi, dtype=complex), dt)
    if np.vdot(out, out).real < 1e-12:
        raise StepSizeError("no-count norm collapsed within one step; decrease dt")
    return out


class JumpSample(NamedTuple):
    time: float
    state: np.ndarray
    jumped: bool


def _advance_to_threshold(A, psi: np.ndarray, log_w: float, log_u: float,
                          t: float, t_stop: float, dt_max: float):
    """March the renormalized state forward, watching the norm threshold.

    Returns (psi, log_w, t, crossed).  ``log_w`` accumulates the log of the
    squared norm so long trajectories never underflow.  On a crossing the
    sub-step size is refined until the accumulated squared norm equals the
    threshold u, and the state at that instant is returned normalized.
    """
    while t < t_stop - 1e-15:
        h = min(dt_max, t_stop - t)
        trial = _rk4_step(A, psi, h)
        n2 = np.vdot(trial, trial).real
        if n2 <= 0.0:
            raise StepSizeError("no-count norm collapsed within one step; decrease dt")
        if log_w + np.log(n2) <= log_u:
            def gap(delta):
                if delta == 0.0:
                    return log_w - log_u
                cand = _rk4_step(A, psi, delta)
                return log_w + np.log(np.vdot(cand, cand).real) - log_u
            if gap(0.0) <= 0.0:
                delta = 0.0
                state = psi
            else:
                delta = brentq(gap, 0.0, h, xtol=1e-13, rtol=8.9e-16)
                state = normalize(_rk4_step(A, psi, delta))
            return state, log_u, t + delta, True
        psi = trial / np.sqrt(n2)
        log_w += np.log(n2)
        t += h
    return psi, log_w, t_stop, False


def sample_jump_time(psi: np.ndarray, generator: Operator,
                     rng: np.random.Generator, t_max: float,
                     dt_max: float) -> JumpSample:
    """Waiting time until ||psi(T)||^2 hits a uniform threshold.

    Returns the pre-jump state at the crossing, or the state at ``t_max``
    with ``jumped=False`` when no detection occurs before the horizon.
    """
    u = max(rng.uniform(), 1e-300)
    A = _flow_matrix(generator)
    state, _, t, crossed = _advance_to_threshold(
        A, normalize(np.asarray(psi, dtype=complex)), 0.0, np.log(u), 0.0,
        t_max, dt_max,
    )
    if not crossed:
        return JumpSample(time=t_max, state=normalize(state), jumped=False)
    return JumpSample(time=t, state=state, jumped=True)


def _draw_channel(gammas: np.ndarray, rng: np.random.Generator) -> int:
    w = np.cumsum(gammas)
    return int(np.searchsorted(w / w[-1], rng.uniform(), side="right"))


def apply_jump(psi: np.ndarray, model: MeasurementModel, basis: FockBasis,
               rng: np.random.Generator,
               gammas: np.ndarray | None = None):
    """Draw an outcome and reduce the state.

    Returns (state, outcome, channel); ``channel`` is None for
    indistinguishable particles.
    """
    psi = np.asarray(psi, dtype=complex)
    channel = None
    if basis.statistics is Statistics.DISTINGUISHABLE:
        if gammas is None:
            gammas = np.full(basis.particles, model.gamma)
        total = float(np.sum(gammas))
        if total <= 0:
            raise DegenerateRateError("total detection rate is zero")
        channel = _draw_channel(gammas, rng)
        w = np.abs(psi) ** 2
        site_prob = np.bincount(basis.positions[:, channel], weights=w,
                                minlength=basis.sites)
        density = (model.psf_on_grid**2) @ site_prob
        if np.trapezoid(density, model.outcome_grid) <= 0.0:
            raise DegenerateRateError("detection density vanished")
        outcome = sample_outcome(model, density, rng.uniform())
        op = measurement_operator(model, basis, outcome, particle=channel)
    else:
        density = outcome_density(model, basis, psi)
        if np.trapezoid(density, model.outcome_grid) <= 0.0:
            raise DegenerateRateError("detection density vanished")
        outcome = sample_outcome(model, density, rng.uniform())
        op = measurement_operator(model, basis, outcome)
    return normalize(op.diag * psi), float(outcome), channel


def run_jump_trajectory(spec: SystemSpec, psi0: np.ndarray, t_end: float,
                        seed: int | None = 0, *, basis: FockBasis | None = None,
                        model: MeasurementModel | None = None,
                        dt_max: float | None = None, n_readout: int = 200,
                        rho_checkpoint_times=None,
                        record_pair_correlation: bool = False,
                        rng: np.random.Generator | None = None) -> TrajectoryRecord:
    """Integrate one photodetection trajectory and record observables.

    The trajectory is fully determined by (seed, configuration): thresholds
    and outcomes come from a counter-based stream keyed by the seed.  An
    explicit ``rng`` overrides the seed-derived stream (used by ensembles).
    """
    if basis is None:
        basis = enumerate_basis(spec)
    if model is None:
        model = build_measurement_model(spec)
    if dt_max is None:
        dt_max = default_jump_dt(spec)
    gammas = (spec.particle_gammas()
              if spec.statistics is Statistics.DISTINGUISHABLE else None)

    H = build_hamiltonian(spec, basis)
    Q = integrated_mdagm(model, basis, gammas)
    G = nocount_generator(H, Q)
    A = _flow_matrix(G)
    obs = ObservableSet(basis)
    if rng is None:
        rng = trajectory_generator(seed, 0)

    times = np.linspace(0.0, t_end, max(2, n_readout))
    rho_times = None
    rho_map: dict[int, float] = {}
    if rho_checkpoint_times is not None:
        rho_times = np.asarray(rho_checkpoint_times, dtype=float)
        for tc in rho_times:
            rho_map[int(np.argmin(np.abs(times - tc)))] = tc

    psi = normalize(np.asarray(psi0, dtype=complex))
    log_w = 0.0
    log_u = np.log(max(rng.uniform(), 1e-300))
    events: list[JumpEvent] = []

    T = times.size
    density = np.empty((T, basis.sites))
    xcm = np.empty(T)
    xcm_var = np.empty(T)
    sig = np.empty(T) if obs.sigma_r2_diag is not None else None
    pair = (np.empty((T, basis.sites, basis.sites))
            if record_pair_correlation else None)
    rho_checkpoints: dict[float, np.ndarray] = {}

    def record(k: int, state: np.ndarray) -> None:
        w = obs.weights(state.reshape(-1, 1))
        density[k] = obs.density(w)[0]
        sc = obs.scalars(w)
        xcm[k] = sc["xcm"][0]
        xcm_var[k] = sc["xcm_var"][0]
        if sig is not None:
            sig[k] = sc["sigma_r2"][0]
        if pair is not None:
            pair[k] = obs.pair_correlation(w)[0]
        if k in rho_map:
            rho_checkpoints[rho_map[k]] = np.outer(state, state.conj())

    record(0, psi)
    t = 0.0
    for k in range(1, T):
        t_stop = times[k]
        while True:
            psi, log_w, t, crossed = _advance_to_threshold(
                A, psi, log_w, log_u, t, t_stop, dt_max)
            if not crossed:
                break
            psi, outcome, channel = apply_jump(psi, model, basis, rng, gammas)
            events.append(JumpEvent(time=t, outcome=outcome,
                                    pre_jump_norm=float(np.exp(0.5 * log_u)),
                                    channel=channel))
            log_w = 0.0
            log_u = np.log(max(rng.uniform(), 1e-300))
        psi = normalize(psi)
        record(k, psi)

    return TrajectoryRecord(
        times=times, density=density, xcm=xcm, xcm_var=xcm_var, sigma_r2=sig,
        pair_correlation=pair,
        rho_checkpoints=rho_checkpoints or None,
        events=events, seed=seed if seed is not None else -1,
    )
