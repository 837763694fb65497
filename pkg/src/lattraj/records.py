"""Trajectory records, observable extraction and ensemble accumulators."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import StatisticsError
from .hilbert import FockBasis, Statistics, position_diagonal, xcm_diagonal


@dataclass(frozen=True)
class JumpEvent:
    """One photodetection: time, screen outcome, norm at the threshold.

    ``channel`` identifies the emitting particle for distinguishable runs.
    """

    time: float
    outcome: float
    pre_jump_norm: float
    channel: int | None = None


@dataclass
class TrajectoryRecord:
    """Time series of observables along one trajectory."""

    times: np.ndarray
    density: np.ndarray                       # (T, sites)
    xcm: np.ndarray                           # (T,)
    xcm_var: np.ndarray                       # (T,)
    sigma_r2: np.ndarray | None = None        # (T,)  two-particle runs
    pair_correlation: np.ndarray | None = None  # (T, sites, sites)
    rho_checkpoints: dict | None = None       # time -> (dim, dim)
    events: list | None = None                # JumpEvents, jump runs only
    seed: int = 0
    wiener_checksum: str | None = None

    @property
    def sites(self) -> int:
        return self.density.shape[1]


@dataclass
class EnsembleResult:
    """Seeded aggregate of trajectory observables with standard errors."""

    n_trajectories: int
    base_seed: int
    times: np.ndarray
    mean: dict                                 # name -> (T, ...) array
    stderr: dict                               # name -> matching array
    rho_times: np.ndarray | None = None
    rho_mean: np.ndarray | None = None         # (K, dim, dim)
    rho_stderr: np.ndarray | None = None       # (K, dim, dim) real+imag in quadrature
    per_trajectory: dict = field(default_factory=dict)  # name -> (R, T)
    mean_jump_count: float | None = None
    stderr_jump_count: float | None = None


class ObservableSet:
    """Precomputed diagonals turning state blocks into observables.

    Works on (dim, B) blocks of normalized columns in the many-body basis.
    """

    def __init__(self, basis: FockBasis):
        self.sites = basis.sites
        self.particles = basis.particles
        self.occ = basis.occupations.astype(float)
        self.xcm = xcm_diagonal(basis)
        self.xcm2 = self.xcm**2
        self.sigma_r2_diag = None
        if basis.particles == 2:
            coords = basis.site_coordinates
            if basis.statistics is Statistics.DISTINGUISHABLE:
                x1 = position_diagonal(basis, 0)
                x2 = position_diagonal(basis, 1)
                self.sigma_r2_diag = (x1 - x2) ** 2
            else:
                q = self.occ @ coords**2
                p = self.occ @ coords
                self.sigma_r2_diag = 2.0 * q - p**2

    @staticmethod
    def weights(Psi: np.ndarray) -> np.ndarray:
        return Psi.real**2 + Psi.imag**2

    def density(self, w: np.ndarray) -> np.ndarray:
        """Site densities, (B, sites)."""
        return w.T @ self.occ

    def scalars(self, w: np.ndarray) -> dict:
        xcm = self.xcm @ w
        out = {"xcm": xcm, "xcm_var": self.xcm2 @ w - xcm**2}
        if self.sigma_r2_diag is not None:
            out["sigma_r2"] = self.sigma_r2_diag @ w
        return out

    def pair_correlation(self, w: np.ndarray) -> np.ndarray:
        """<n_m n_l> per column, (B, sites, sites)."""
        return np.einsum("sb,sm,sl->bml", w, self.occ, self.occ)


class FactorizedObservableSet:
    """Observables for the product-state path of distinguishable particles.

    Blocks are (sites, B * particles) with columns grouped per trajectory:
    column b * N + i is particle i of trajectory b.
    """

    def __init__(self, basis_sites: int, particles: int, site_coordinates: np.ndarray):
        if particles < 1:
            raise StatisticsError("factorized path needs at least one particle")
        self.sites = basis_sites
        self.particles = particles
        self.coords = site_coordinates
        self.coords2 = site_coordinates**2

    def weights(self, Psi: np.ndarray) -> np.ndarray:
        return Psi.real**2 + Psi.imag**2

    def density(self, w: np.ndarray) -> np.ndarray:
        """(B, sites): sum of the per-particle site distributions."""
        B = w.shape[1] // self.particles
        return w.T.reshape(B, self.particles, self.sites).sum(axis=1)

    def scalars(self, w: np.ndarray) -> dict:
        N = self.particles
        B = w.shape[1] // N
        x = (self.coords @ w).reshape(B, N)
        x2 = (self.coords2 @ w).reshape(B, N)
        xcm = x.mean(axis=1)
        xcm2 = (x.sum(axis=1) ** 2 + (x2 - x**2).sum(axis=1)) / N**2
        out = {"xcm": xcm, "xcm_var": xcm2 - xcm**2}
        if N == 2:
            out["sigma_r2"] = x2[:, 0] + x2[:, 1] - 2.0 * x[:, 0] * x[:, 1]
        return out


class EnsembleAccumulator:
    """Streaming mean/variance accumulation over trajectories.

    Observables are accumulated per readout time; optional full density
    matrices are accumulated at checkpoint indices.  Accumulators from
    different blocks merge associatively, and reductions are always applied
    in trajectory order, so aggregates do not depend on the worker layout.
    """

    def __init__(self, n_times: int, sites: int, scalar_names,
                 rho_checkpoints: np.ndarray | None = None, dim: int = 0,
                 keep_per_trajectory=(), n_trajectories: int = 0):
        self.count = 0
        self.sum = {"density": np.zeros((n_times, sites))}
        self.sumsq = {"density": np.zeros((n_times, sites))}
        for name in scalar_names:
            self.sum[name] = np.zeros(n_times)
            self.sumsq[name] = np.zeros(n_times)
        self.rho_idx = rho_checkpoints
        self.rho_sum = None
        self.rho_sumsq = None
        if rho_checkpoints is not None and len(rho_checkpoints):
            K = len(rho_checkpoints)
            self.rho_sum = np.zeros((K, dim, dim), dtype=complex)
            self.rho_sumsq = np.zeros((K, dim, dim))
        self.keep = tuple(keep_per_trajectory)
        self.per_traj = {
            name: np.zeros((n_trajectories, n_times)) for name in self.keep
        }
        self.jump_counts: list = []

    def add_readout(self, k: int, density_block: np.ndarray, scalar_block: dict,
                    traj_indices=None) -> None:
        self.sum["density"][k] += density_block.sum(axis=0)
        self.sumsq["density"][k] += (density_block**2).sum(axis=0)
        for name, vals in scalar_block.items():
            self.sum[name][k] += vals.sum()
            self.sumsq[name][k] += (vals**2).sum()
            if name in self.per_traj and traj_indices is not None:
                self.per_traj[name][traj_indices, k] = vals

    def add_trajectory(self, density: np.ndarray, scalars: dict,
                       traj_index: int) -> None:
        """Accumulate a whole trajectory's series at once (jump runs)."""
        self.sum["density"] += density
        self.sumsq["density"] += density**2
        for name, vals in scalars.items():
            self.sum[name] += vals
            self.sumsq[name] += vals**2
            if name in self.per_traj:
                self.per_traj[name][traj_index] = vals

    def add_rho(self, kc: int, Psi: np.ndarray) -> None:
        outer = np.einsum("ib,jb->ijb", Psi, Psi.conj())
        self.rho_sum[kc] += outer.sum(axis=2)
        self.rho_sumsq[kc] += (outer.real**2 + outer.imag**2).sum(axis=2)

    def add_count(self, n_traj: int) -> None:
        self.count += n_traj

    def merge(self, other: "EnsembleAccumulator") -> None:
        self.count += other.count
        for name in self.sum:
            self.sum[name] += other.sum[name]
            self.sumsq[name] += other.sumsq[name]
        if self.rho_sum is not None:
            self.rho_sum += other.rho_sum
            self.rho_sumsq += other.rho_sumsq
        for name in self.per_traj:
            self.per_traj[name] += other.per_traj[name]
        self.jump_counts.extend(other.jump_counts)

    def finalize(self, base_seed: int, times: np.ndarray,
                 rho_times: np.ndarray | None = None) -> EnsembleResult:
        R = self.count
        mean = {}
        stderr = {}
        for name in self.sum:
            m = self.sum[name] / R
            var = np.maximum(self.sumsq[name] / R - m**2, 0.0)
            mean[name] = m
            stderr[name] = np.sqrt(var / max(R - 1, 1))
        rho_mean = rho_se = None
        if self.rho_sum is not None:
            rho_mean = self.rho_sum / R
            var = np.maximum(
                self.rho_sumsq / R - (rho_mean.real**2 + rho_mean.imag**2), 0.0
            )
            rho_se = np.sqrt(var / max(R - 1, 1))
        counts = np.asarray(self.jump_counts, dtype=float)
        mean_jumps = float(counts.mean()) if counts.size else None
        se_jumps = (
            float(counts.std(ddof=1) / np.sqrt(counts.size)) if counts.size > 1 else None
        )
        return EnsembleResult(
            n_trajectories=R,
            base_seed=base_seed,
            times=times,
            mean=mean,
            stderr=stderr,
            rho_times=rho_times,
            rho_mean=rho_mean,
            rho_stderr=rho_se,
            per_trajectory=dict(self.per_traj),
            mean_jump_count=mean_jumps,
            stderr_jump_count=se_jumps,
        )
