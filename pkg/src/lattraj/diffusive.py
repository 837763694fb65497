"""Diffusive (Wiener-noise) pure-state trajectories.

Weak spatial resolution with strong signal rate turns the photodetection
record into Gaussian white noise.  The surviving backaction couples only to
the centre of mass for indistinguishable particles and to each particle's own
position for distinguishable ones.  A trajectory evolves the normalized state
by Euler-Maruyama steps of

    d|psi> = [-iH - sum_c (kappa_c/2) (A_c - <A_c>)^2] |psi> dt
             + sum_c sqrt(kappa_c) (A_c - <A_c>) |psi> dW_c

with one channel A = Xcm, kappa = N^2 gamma d^2 / (2 sigma^2) for bosons and
fermions, and per-particle channels A_i = x_i, kappa_i = gamma_i d^2 /
(2 sigma^2) for distinguishable particles.  Averaging |psi><psi| over noise
realizations recovers the corresponding dephasing master equation; that
consistency is enforced by the test suite rather than assumed.

Noise streams are counter-based (Philox) and keyed by (base_seed, trajectory
index), with a fixed draw schedule, so results do not depend on how
trajectories are distributed over workers.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import StatisticsError, StepSizeError
from .hilbert import (
    FockBasis,
    Operator,
    Statistics,
    SystemSpec,
    position_diagonal,
    xcm_diagonal,
)

#: Steps integrated between two noise-buffer refills.
NOISE_CHUNK_STEPS = 2048


def trajectory_generator(base_seed: int, trajectory: int) -> np.random.Generator:
    """Independent counter-based stream for one trajectory."""
    key = np.array([np.uint64(base_seed & 0xFFFFFFFFFFFFFFFF),
                    np.uint64(trajectory)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class DiffusiveParams:
    """Noise strengths and step size of the diffusive unraveling.

    ``kappa_cm`` is the squared noise coefficient of the centre-of-mass
    channel (indistinguishable particles); ``kappa_rel`` holds the
    per-particle coefficients for distinguishable particles.  Exactly one of
    the two is set.
    """

    dt: float
    kappa_cm: float | None = None
    kappa_rel: tuple[float, ...] | None = None
    scheme: str = "euler-maruyama"

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if (self.kappa_cm is None) == (self.kappa_rel is None):
            raise ValueError("set exactly one of kappa_cm / kappa_rel")
        if self.kappa_cm is not None and self.kappa_cm < 0:
            raise ValueError("kappa_cm must be >= 0")
        if self.kappa_rel is not None and any(k < 0 for k in self.kappa_rel):
            raise ValueError("kappa_rel entries must be >= 0")
        if self.scheme != "euler-maruyama":
            raise ValueError(f"unsupported scheme {self.scheme!r}")

    @property
    def n_channels(self) -> int:
        return 1 if self.kappa_cm is not None else len(self.kappa_rel)


def default_dt(spec: SystemSpec) -> float:
    """0.01 times the fastest of the hopping and total-backaction timescales."""
    J = abs(spec.hopping)
    rate = spec.particles**2 * spec.measurement_strength
    scales = [s for s in (1.0 / J if J > 0 else None,
                          1.0 / rate if rate > 0 else None) if s is not None]
    return 0.01 * min(scales) if scales else 0.01


def diffusive_params(spec: SystemSpec, dt: float | None = None) -> DiffusiveParams:
    """Noise strengths implied by a system description."""
    if dt is None:
        dt = default_dt(spec)
    d2s2 = spec.lattice_constant**2 / spec.sigma**2
    if spec.statistics is Statistics.DISTINGUISHABLE:
        kappas = tuple(0.5 * g * d2s2 for g in spec.particle_gammas())
        return DiffusiveParams(dt=dt, kappa_rel=kappas)
    kappa = 0.5 * spec.particles**2 * spec.gamma * d2s2
    return DiffusiveParams(dt=dt, kappa_cm=kappa)


def noise_channels(spec: SystemSpec, basis: FockBasis,
                   params: DiffusiveParams) -> tuple[np.ndarray, np.ndarray]:
    """Diagonals and strengths of the measurement channels, as arrays."""
    if params.kappa_cm is not None:
        diags = xcm_diagonal(basis)[None, :]
        kappas = np.array([params.kappa_cm])
    else:
        if basis.statistics is not Statistics.DISTINGUISHABLE:
            raise StatisticsError("per-particle channels need a distinguishable basis")
        diags = np.stack([position_diagonal(basis, i) for i in range(basis.particles)])
        kappas = np.asarray(params.kappa_rel, dtype=float)
    return diags, kappas


def _em_step_block(Psi: np.ndarray, hmat, diags: np.ndarray, kappas,
                   dW: np.ndarray, dt: float) -> np.ndarray:
    """One Euler-Maruyama step on a block of normalized columns.

    Psi: (dim, B) with unit columns; diags: (C, dim); kappas: (C,) scalars or
    (C, B) per-column strengths; dW: (C, B).  Returns the renormalized block.
    Raises StepSizeError if any column's norm moves by more than 10% in the
    step (the step size is too large for the instantaneous rates).
    """
    w = Psi.real**2 + Psi.imag**2
    update = (-1j * dt) * (hmat @ Psi)
    kap = np.asarray(kappas, dtype=float)
    for c in range(diags.shape[0]):
        k_c = kap[c]
        mean = diags[c] @ w  # (B,)
        delta = diags[c][:, None] - mean[None, :]
        update += ((-0.5 * dt) * k_c * delta * delta
                   + np.sqrt(k_c) * delta * dW[c][None, :]) * Psi
    Psi = Psi + update
    norms = np.sqrt(np.sum(Psi.real**2 + Psi.imag**2, axis=0))
    if np.any(np.abs(norms - 1.0) > 0.1):
        worst = float(np.max(np.abs(norms - 1.0)))
        raise StepSizeError(
            f"norm moved by {worst:.2f} in one step; decrease dt"
        )
    return Psi / norms[None, :]


def sse_step_indist(psi: np.ndarray, hamiltonian: Operator | sparse.spmatrix,
                    xcm_diag: np.ndarray, params: DiffusiveParams,
                    dW: float) -> np.ndarray:
    """Single step of the centre-of-mass unraveling; dW ~ Normal(0, dt)."""
    hmat = hamiltonian.matrix if isinstance(hamiltonian, Operator) else hamiltonian
    out = _em_step_block(psi.astype(complex).reshape(-1, 1), hmat,
                         np.asarray(xcm_diag)[None, :],
                         np.array([params.kappa_cm]),
                         np.array([[dW]]), params.dt)
    return out[:, 0]


def sse_step_dist(psi: np.ndarray, hamiltonian: Operator | sparse.spmatrix,
                  position_diags: np.ndarray, params: DiffusiveParams,
                  dWs: np.ndarray) -> np.ndarray:
    """Single step of the per-particle unraveling; dWs ~ Normal(0, dt) each."""
    hmat = hamiltonian.matrix if isinstance(hamiltonian, Operator) else hamiltonian
    diags = np.atleast_2d(np.asarray(position_diags))
    dWs = np.asarray(dWs, dtype=float).reshape(-1, 1)
    out = _em_step_block(psi.astype(complex).reshape(-1, 1), hmat, diags,
                         np.asarray(params.kappa_rel, dtype=float),
                         dWs, params.dt)
    return out[:, 0]


def make_step_grid(t_end: float, dt: float, n_readout: int):
    """Integer step schedule hitting t_end exactly.

    Returns (n_steps, dt_adjusted, readout_steps, readout_times); readout
    steps are unique, include 0 and the final step, and are as uniform as the
    grid allows.
    """
    if t_end <= 0:
        raise ValueError("t_end must be > 0")
    n_steps = max(1, int(np.ceil(t_end / dt - 1e-12)))
    dt_adj = t_end / n_steps
    n_readout = max(2, min(int(n_readout), n_steps + 1))
    readout_steps = np.unique(np.round(np.linspace(0, n_steps, n_readout)).astype(int))
    return n_steps, dt_adj, readout_steps, readout_steps * dt_adj


def integrate_diffusive_block(psi0: np.ndarray, hmat, diags: np.ndarray,
                              kappas, dt: float, n_steps: int,
                              readout_steps: np.ndarray,
                              generators: list,
                              on_readout,
                              noise_per_column: int | None = None,
                              checksum: "hashlib._Hash | None" = None) -> None:
    """Drive a block of trajectories through the full step schedule.

    psi0: (dim,) or (dim, B) initial column(s).  ``generators`` supplies one
    Generator per trajectory; each trajectory draws its noise in a fixed
    chunked schedule so the stream is independent of worker placement.  When
    ``noise_per_column`` is given, each generator feeds that many adjacent
    columns (used by the factorized product-state path, one column per
    particle), drawing (chunk, n_noise) blocks whose channel order matches the
    generic path.  ``on_readout(k, step, Psi)`` is called with the normalized
    block at every step in ``readout_steps``.
    """
    diags = np.atleast_2d(np.asarray(diags, dtype=float))
    C = diags.shape[0]
    if noise_per_column is None:
        B = len(generators)
        cols_per_traj = 1
        n_noise = C
    else:
        cols_per_traj = noise_per_column
        B = len(generators) * cols_per_traj
        n_noise = cols_per_traj * C

    Psi = np.array(psi0, dtype=complex)
    if Psi.ndim == 1:
        Psi = np.repeat(Psi[:, None], B, axis=1)
    elif Psi.shape[1] != B:
        raise ValueError("psi0 block width does not match the trajectory count")

    readout_set = set(int(s) for s in readout_steps)
    k_read = 0
    if 0 in readout_set:
        on_readout(k_read, 0, Psi)
        k_read += 1

    sqrt_dt = np.sqrt(dt)
    step = 0
    while step < n_steps:
        chunk = min(NOISE_CHUNK_STEPS, n_steps - step)
        # (traj, chunk, n_noise) -> (chunk, C, B)
        draws = np.stack([g.standard_normal((chunk, n_noise)) for g in generators])
        if checksum is not None:
            for block in draws:
                checksum.update(np.ascontiguousarray(block).tobytes())
        draws = draws * sqrt_dt
        if noise_per_column is None:
            dW_chunk = draws.transpose(1, 2, 0)  # (chunk, C, B)
        else:
            # (traj, chunk, cols_per_traj, C) -> (chunk, C, traj*cols)
            d4 = draws.reshape(len(generators), chunk, cols_per_traj, C)
            dW_chunk = d4.transpose(1, 3, 0, 2).reshape(chunk, C, B)
        for j in range(chunk):
            Psi = _em_step_block(Psi, hmat, diags, kappas, dW_chunk[j], dt)
            step += 1
            if step in readout_set:
                on_readout(k_read, step, Psi)
                k_read += 1


def wiener_path_checksum() -> "hashlib._Hash":
    """Fresh accumulator for auditing the realized noise path."""
    return hashlib.sha256()


def run_diffusive_trajectory(spec: SystemSpec, psi0: np.ndarray, t_end: float,
                             seed: int, *, basis: FockBasis | None = None,
                             params: DiffusiveParams | None = None,
                             n_readout: int = 200,
                             rho_checkpoint_times=None,
                             record_pair_correlation: bool = False):
    """Integrate one diffusive trajectory and record observables.

    Deterministic given (seed, configuration); the record carries a SHA-256
    digest of the realized noise path for reproducibility audits.
    """
    from .hilbert import build_hamiltonian, normalize
    from .records import ObservableSet, TrajectoryRecord

    if basis is None:
        from .hilbert import enumerate_basis

        basis = enumerate_basis(spec)
    if params is None:
        params = diffusive_params(spec)
    hmat = build_hamiltonian(spec, basis).matrix
    diags, kappas = noise_channels(spec, basis, params)
    n_steps, dt, readout_steps, times = make_step_grid(t_end, params.dt, n_readout)

    obs = ObservableSet(basis)
    T = times.size
    density = np.empty((T, basis.sites))
    xcm = np.empty(T)
    xcm_var = np.empty(T)
    sig = np.empty(T) if obs.sigma_r2_diag is not None else None
    pair = (np.empty((T, basis.sites, basis.sites))
            if record_pair_correlation else None)
    rho_map: dict[int, float] = {}
    rho_checkpoints: dict[float, np.ndarray] = {}
    if rho_checkpoint_times is not None:
        for tc in np.asarray(rho_checkpoint_times, dtype=float):
            rho_map[int(np.argmin(np.abs(times - tc)))] = tc

    def on_readout(k, step, Psi):
        w = obs.weights(Psi)
        density[k] = obs.density(w)[0]
        sc = obs.scalars(w)
        xcm[k] = sc["xcm"][0]
        xcm_var[k] = sc["xcm_var"][0]
        if sig is not None:
            sig[k] = sc["sigma_r2"][0]
        if pair is not None:
            pair[k] = obs.pair_correlation(w)[0]
        if k in rho_map:
            rho_checkpoints[rho_map[k]] = np.outer(Psi[:, 0], Psi[:, 0].conj())

    checksum = wiener_path_checksum()
    integrate_diffusive_block(
        normalize(np.asarray(psi0, dtype=complex)), hmat, diags, kappas, dt,
        n_steps, readout_steps, [trajectory_generator(seed, 0)], on_readout,
        checksum=checksum,
    )
    return TrajectoryRecord(
        times=times, density=density, xcm=xcm, xcm_var=xcm_var, sigma_r2=sig,
        pair_correlation=pair, rho_checkpoints=rho_checkpoints or None,
        events=None, seed=seed, wiener_checksum=checksum.hexdigest(),
    )
