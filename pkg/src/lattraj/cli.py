"""Command-line entry points: run, validate, preset.

Every output file starts with a provenance header (package version, config
hash, base seed, timestamp).  Identical configuration and seed produce byte
identical payloads apart from the timestamp line, for any worker count.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    RunConfig,
    canonical_text,
    effective_observables,
    load_config,
    preset_runs,
)
from .diffusive import run_diffusive_trajectory
from .ensemble import (
    fit_diffusion_constant,
    run_ensemble,
    run_unitary_trajectory,
)
from .errors import ConfigError, DiffusionFitError, LatTrajError
from .hilbert import Statistics, enumerate_basis
from .jump import run_jump_trajectory
from .master import build_master, integrate_master
from .records import EnsembleResult, ObservableSet, TrajectoryRecord

OUTDIR_ENV = "LATTRAJ_OUTDIR"


def _fmt(value: float) -> str:
    return repr(float(value))


def _provenance_lines(cfg: RunConfig) -> list[str]:
    return [
        f"# lattraj {__version__}",
        f"# config_hash={cfg.config_hash()}",
        f"# base_seed={cfg.base_seed}",
        f"# generated={datetime.now(timezone.utc).isoformat()}",
    ]


def write_series_csv(path: Path, cfg: RunConfig, columns: list[str],
                     rows) -> None:
    lines = _provenance_lines(cfg)
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_fmt(v) if isinstance(v, (float, np.floating))
                              else str(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_csv(path) -> tuple[dict, dict]:
    """Parse an emitted CSV back into (provenance, column arrays)."""
    meta = {}
    header = None
    data: list[list[str]] = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, _, val = body.partition("=")
                meta[key.strip()] = val.strip()
            continue
        if header is None:
            header = line.split(",")
            continue
        data.append(line.split(","))
    if header is None:
        raise ValueError(f"{path} carries no table")
    cols = {name: np.array([row[i] for row in data], dtype=float)
            for i, name in enumerate(header)}
    return meta, cols


def _density_rows(times, density, stderr=None):
    T, M = density.shape
    for k in range(T):
        for m in range(M):
            if stderr is None:
                yield (times[k], m, density[k, m])
            else:
                yield (times[k], m, density[k, m], stderr[k, m])


def _scalar_rows(times, values, stderr=None):
    for k in range(times.size):
        if stderr is None:
            yield (times[k], values[k])
        else:
            yield (times[k], values[k], stderr[k])


def _write_record_outputs(out_dir: Path, label: str, cfg: RunConfig,
                          names, rec: TrajectoryRecord) -> list[Path]:
    files = []

    def emit(name, columns, rows):
        path = out_dir / f"{label}_{name}.csv"
        write_series_csv(path, cfg, columns, rows)
        files.append(path)

    if "density" in names:
        emit("density", ["time", "site", "value"],
             _density_rows(rec.times, rec.density))
    for scalar in ("xcm", "xcm_var", "sigma_r2"):
        if scalar in names:
            series = getattr(rec, scalar)
            if series is not None:
                emit(scalar, ["time", "value"], _scalar_rows(rec.times, series))
    if "events" in names and rec.events is not None:
        rows = [(e.time, e.outcome, -1 if e.channel is None else e.channel)
                for e in rec.events]
        emit("events", ["time", "outcome", "channel"],
             ((t, x, int(c)) for t, x, c in rows))
    return files


def _write_ensemble_outputs(out_dir: Path, label: str, cfg: RunConfig,
                            names, res: EnsembleResult) -> list[Path]:
    files = []

    def emit(name, columns, rows):
        path = out_dir / f"{label}_{name}.csv"
        write_series_csv(path, cfg, columns, rows)
        files.append(path)

    if "density" in names:
        emit("density", ["time", "site", "value", "stderr"],
             _density_rows(res.times, res.mean["density"],
                           res.stderr["density"]))
    for scalar in ("xcm", "xcm_var", "sigma_r2"):
        if scalar in names and scalar in res.mean:
            emit(scalar, ["time", "value", "stderr"],
                 _scalar_rows(res.times, res.mean[scalar], res.stderr[scalar]))
    return files


def _master_record(cfg: RunConfig, spec, basis, psi0) -> TrajectoryRecord:
    variant = cfg.master_variant
    if variant == "auto":
        variant = ("dist" if spec.statistics is Statistics.DISTINGUISHABLE
                   else "cm")
    mspec = build_master(variant, spec, basis)
    times = np.linspace(0.0, cfg.t_end, cfg.readout_points)
    rhos = integrate_master(mspec, np.outer(psi0, psi0.conj()), times,
                            dt=cfg.dt)
    obs = ObservableSet(basis)
    w = np.stack([np.real(np.diagonal(r)) for r in rhos], axis=1)  # (dim, T)
    sc = obs.scalars(w)
    return TrajectoryRecord(
        times=times, density=obs.density(w), xcm=sc["xcm"],
        xcm_var=sc["xcm_var"], sigma_r2=sc.get("sigma_r2"), seed=cfg.base_seed,
    )


def execute(cfg: RunConfig, out_dir, label: str = "run",
            workers: int | None = None) -> list[Path]:
    """Run one configuration and write its data files; returns the paths."""
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = cfg.system()
    basis = enumerate_basis(spec)
    psi0, factors = cfg.initial_vector(spec, basis)
    names = effective_observables(cfg, spec)
    meta: dict = {
        "version": __version__,
        "config_hash": cfg.config_hash(),
        "config": canonical_text(cfg).strip().splitlines(),
        "derived": cfg.report(),
        "label": label,
        "generated": datetime.now(timezone.utc).isoformat(),
    }

    if cfg.unraveling == "unitary":
        rec = run_unitary_trajectory(spec, psi0, cfg.t_end,
                                     n_readout=cfg.readout_points, basis=basis)
        files = _write_record_outputs(out_dir, label, cfg, names, rec)
    elif cfg.unraveling == "master":
        rec = _master_record(cfg, spec, basis, psi0)
        files = _write_record_outputs(out_dir, label, cfg, names, rec)
    elif cfg.realizations == 1:
        if cfg.unraveling == "diffusive":
            rec = run_diffusive_trajectory(
                spec, psi0, cfg.t_end, cfg.base_seed, basis=basis,
                n_readout=cfg.readout_points)
            meta["wiener_checksum"] = rec.wiener_checksum
        else:
            rec = run_jump_trajectory(
                spec, psi0, cfg.t_end, cfg.base_seed, basis=basis,
                dt_max=cfg.dt, n_readout=cfg.readout_points)
            meta["jump_count"] = len(rec.events)
        files = _write_record_outputs(out_dir, label, cfg, names, rec)
    else:
        keep = ("sigma_r2",) if spec.particles == 2 else ()
        res = run_ensemble(
            spec, psi0, cfg.t_end, cfg.realizations, cfg.base_seed,
            unraveling=cfg.unraveling, dt=cfg.dt,
            n_readout=cfg.readout_points, keep_per_trajectory=keep,
            workers=workers, basis=None if factors else basis,
            psi0_factors=factors,
        )
        files = _write_ensemble_outputs(out_dir, label, cfg, names, res)
        if res.mean_jump_count is not None:
            meta["mean_jump_count"] = res.mean_jump_count
            meta["stderr_jump_count"] = res.stderr_jump_count
        strength = spec.measurement_strength
        if (cfg.unraveling == "diffusive" and spec.particles == 2
                and strength > 0):
            window = (max(8.0 / strength, cfg.t_end / 3.0), cfg.t_end)
            try:
                fit = fit_diffusion_constant(res.times, res.mean["sigma_r2"],
                                             window)
                meta["diffusion_fit"] = {
                    "constant": fit.diffusion_constant,
                    "slope": fit.slope,
                    "intercept": fit.intercept,
                    "r_squared": fit.r_squared,
                    "slope_stderr": fit.slope_stderr,
                    "window": list(fit.window),
                    "reference_2dc": 32.0 * spec.hopping**2 / strength,
                }
            except DiffusionFitError as exc:
                meta["diffusion_fit"] = {"error": str(exc)}

    meta_path = out_dir / f"{label}_meta.json"
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                         encoding="utf-8")
    files.append(meta_path)
    return files


# ---------------------------------------------------------------------------
# argparse front end
# ---------------------------------------------------------------------------


def _resolve_outdir(arg: str | None) -> Path:
    if arg:
        return Path(arg)
    env = os.environ.get(OUTDIR_ENV)
    return Path(env) if env else Path.cwd()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="lattraj",
        description="Stochastic trajectories of continuously observed lattice particles",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a configuration file")
    p_run.add_argument("config", help="path to an INI run configuration")
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.add_argument("--label", default="run", help="output file prefix")

    p_val = sub.add_parser("validate", help="check a configuration and report derived quantities")
    p_val.add_argument("config", help="path to an INI run configuration")

    p_pre = sub.add_parser("preset", help="run a named experiment preset")
    p_pre.add_argument("name", help="fig3a fig3b fig3c fig3d fig4 ballistic")
    p_pre.add_argument("--seed", type=int, default=None, help="override base seed")
    p_pre.add_argument("--realizations", type=int, default=None,
                       help="override trajectory count")
    p_pre.add_argument("--t-end", type=float, default=None, help="override run length")
    p_pre.add_argument("--out", default=None, help="output directory")

    args = parser.parse_args(argv)
    try:
        if args.command == "validate":
            cfg = load_config(args.config)
            report = cfg.report()
            for key, val in report.items():
                print(f"{key} = {val}")
            return 0
        if args.command == "run":
            cfg = load_config(args.config)
            out = _resolve_outdir(args.out)
            files = execute(cfg, out, label=args.label)
            for f in files:
                print(f)
            return 0
        # preset
        out = _resolve_outdir(args.out)
        for label, cfg in preset_runs(args.name):
            if args.seed is not None:
                cfg.base_seed = args.seed
            if args.realizations is not None:
                cfg.realizations = args.realizations
            if getattr(args, "t_end", None) is not None:
                cfg.t_end = args.t_end
                cfg.sites = None  # re-derive the auto margin
            files = execute(cfg, out, label=f"{args.name}_{label}")
            for f in files:
                print(f)
        return 0
    except (ConfigError, LatTrajError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
