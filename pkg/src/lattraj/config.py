"""Declarative run configuration: flat INI-style files with sections.

A run file looks like

    [system]
    statistics = boson
    particles = 2
    sites = auto
    hopping = 1.0
    interaction = 0.0

    [measurement]
    measurement_strength = 2.0
    normalization = equal_gamma

    [run]
    unraveling = diffusive
    initial_state = adjacent_pair
    t_end = 25.0
    dt = auto
    readout_points = 200
    realizations = 1
    base_seed = 1234

    [output]
    observables = density, xcm, xcm_var, sigma_r2

The measurement block accepts either the single dimensionless knob
``measurement_strength`` (gamma d^2 / sigma^2, with sigma = d = 1 implied) or
the explicit triple ``gamma``, ``sigma``, ``lattice_constant`` - never both.
``sites = auto`` sizes the lattice so a ballistic wavefront cannot reach the
boundary before t_end.
"""

from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .diffusive import default_dt
from .errors import ConfigError
from .hilbert import (
    FockBasis,
    Statistics,
    SystemSpec,
    basis_dimension,
    enumerate_basis,
    fock_state,
    normalize,
)
from .jump import default_jump_dt
from .master import collapse_time

UNRAVELINGS = ("diffusive", "jump", "master", "unitary")
NORMALIZATIONS = ("equal_gamma", "equal_total_rate")
OBSERVABLES = ("density", "xcm", "xcm_var", "sigma_r2", "events")


@dataclass
class RunConfig:
    statistics: str = "boson"
    particles: int = 2
    sites: int | None = None              # None = auto margin
    hopping: float = 1.0
    interaction: float = 0.0
    # exactly one of measurement_strength / (gamma, sigma, lattice_constant)
    measurement_strength: float | None = None
    gamma: float | None = None
    sigma: float | None = None
    lattice_constant: float | None = None
    normalization: str = "equal_gamma"
    psf_file: str | None = None
    unraveling: str = "diffusive"
    master_variant: str = "auto"
    initial_state: str = "adjacent_pair"
    t_end: float = 10.0
    dt: float | None = None               # None = auto
    readout_points: int = 200
    realizations: int = 1
    base_seed: int = 1234
    observables: tuple = ()
    raw_text: str = field(default="", repr=False)

    # ------------------------------------------------------------------
    def validate(self) -> None:
        errs = []
        if self.particles < 1:
            errs.append("system.particles: must be >= 1")
        try:
            Statistics.parse(self.statistics)
        except Exception:
            errs.append(f"system.statistics: unknown value {self.statistics!r}")
        if self.unraveling not in UNRAVELINGS:
            errs.append(f"run.unraveling: expected one of {UNRAVELINGS}, got {self.unraveling!r}")
        if self.normalization not in NORMALIZATIONS:
            errs.append(f"measurement.normalization: expected one of {NORMALIZATIONS}")
        explicit = [v is not None for v in (self.gamma, self.sigma, self.lattice_constant)]
        if self.measurement_strength is not None:
            if any(explicit):
                errs.append("measurement: give either measurement_strength or "
                            "(gamma, sigma, lattice_constant), not both")
            if self.measurement_strength < 0:
                errs.append("measurement.measurement_strength: must be >= 0")
        elif any(explicit):
            if not all(explicit):
                errs.append("measurement: gamma, sigma and lattice_constant "
                            "must be given together")
        elif self.unraveling in ("diffusive", "jump", "master"):
            errs.append("measurement: missing measurement_strength or "
                        "(gamma, sigma, lattice_constant)")
        if self.t_end <= 0:
            errs.append("run.t_end: must be > 0")
        if self.readout_points < 2:
            errs.append("run.readout_points: must be >= 2")
        if self.realizations < 1:
            errs.append("run.realizations: must be >= 1")
        if self.sites is not None and self.sites < 1:
            errs.append("system.sites: must be >= 1 or 'auto'")
        for name in self.observables:
            if name not in OBSERVABLES:
                errs.append(f"output.observables: unknown observable {name!r}")
        known = self.initial_state.split(":", 1)[0]
        if known not in ("adjacent_pair", "single_site", "custom"):
            errs.append(f"run.initial_state: unknown preset {self.initial_state!r}")
        if errs:
            raise ConfigError("; ".join(errs))

    # ------------------------------------------------------------------
    @property
    def strength(self) -> float:
        """Dimensionless measurement strength implied by either input form."""
        if self.measurement_strength is not None:
            return float(self.measurement_strength)
        if self.gamma is None:
            return 0.0
        return self.gamma * self.lattice_constant**2 / self.sigma**2

    def auto_sites(self) -> int:
        """Lattice size keeping the ballistic wavefront off the boundary."""
        return 2 * math.ceil(2.0 * abs(self.hopping) * self.t_end) + 9

    def system(self) -> SystemSpec:
        self.validate()
        sites = self.sites if self.sites is not None else self.auto_sites()
        stats = Statistics.parse(self.statistics)
        if self.measurement_strength is not None:
            gamma, sigma, d = float(self.measurement_strength), 1.0, 1.0
        elif self.gamma is not None:
            gamma, sigma, d = float(self.gamma), float(self.sigma), float(self.lattice_constant)
        else:
            gamma, sigma, d = 0.0, 1.0, 1.0
        per_particle = None
        if stats is Statistics.DISTINGUISHABLE and self.normalization == "equal_total_rate":
            # equal total detection rate: N gamma_i = N^2 gamma
            per_particle = tuple(gamma * self.particles for _ in range(self.particles))
        return SystemSpec(
            sites=sites, particles=self.particles, statistics=stats,
            hopping=self.hopping, interaction=self.interaction, gamma=gamma,
            sigma=sigma, lattice_constant=d, origin=(sites - 1) / 2.0,
            gamma_per_particle=per_particle,
        )

    def initial_vector(self, spec: SystemSpec, basis: FockBasis):
        """(psi0, factors): the full vector and, when available, the product factors."""
        M, N = spec.sites, spec.particles
        center = (M - 1) // 2
        kind, _, arg = self.initial_state.partition(":")
        if kind == "single_site":
            if N != 1 and spec.statistics is not Statistics.DISTINGUISHABLE:
                occ = [0] * M
                occ[center] = N
                return fock_state(basis, tuple(occ)), None
            sites_occ = tuple(center for _ in range(N))
        elif kind == "adjacent_pair":
            if N != 2:
                raise ConfigError("initial_state adjacent_pair needs particles = 2")
            start = int(arg) if arg else center
            if not 0 <= start < M - 1:
                raise ConfigError(f"adjacent_pair start site {start} out of range")
            sites_occ = (start, start + 1)
        else:  # custom amplitude file
            if not arg:
                raise ConfigError("custom initial state needs a path: custom:FILE")
            data = np.loadtxt(arg, comments="#", ndmin=2)
            if data.shape[1] != 3:
                raise ConfigError("custom state file needs columns: index, re, im")
            psi = np.zeros(basis.dimension, dtype=complex)
            idx = data[:, 0].astype(int)
            if idx.min() < 0 or idx.max() >= basis.dimension:
                raise ConfigError("custom state index out of range")
            psi[idx] = data[:, 1] + 1j * data[:, 2]
            return normalize(psi), None

        if spec.statistics is Statistics.DISTINGUISHABLE:
            factors = []
            for x in sites_occ:
                f = np.zeros(M, dtype=complex)
                f[x] = 1.0
                factors.append(f)
            return fock_state(basis, sites_occ), factors
        occ = [0] * M
        for x in sites_occ:
            occ[x] += 1
        return fock_state(basis, tuple(occ)), None

    def chosen_dt(self, spec: SystemSpec) -> float:
        if self.dt is not None:
            return float(self.dt)
        if self.unraveling == "jump":
            return default_jump_dt(spec)
        return default_dt(spec)

    def report(self) -> dict:
        """Derived quantities for `validate`: sizes, rates, temporal regimes."""
        self.validate()
        spec = self.system()
        strength = spec.measurement_strength
        out = {
            "statistics": spec.statistics.value,
            "sites": spec.sites,
            "particles": spec.particles,
            "basis_dimension": basis_dimension(spec),
            "measurement_strength": strength,
            "dt": self.chosen_dt(spec),
            "readout_points": self.readout_points,
            "realizations": self.realizations,
            "state_bytes_per_trajectory": 16 * basis_dimension(spec),
        }
        if strength > 0 and abs(spec.hopping) > 0:
            t_col = collapse_time(spec.hopping, strength)
            out["collapse_time"] = t_col
            out["diffusive_threshold"] = 4.0 / strength
            if self.t_end < t_col:
                regime = "collapse"
            elif self.t_end < 4.0 / strength:
                regime = "inertial"
            else:
                regime = "diffusive"
            out["regime_at_t_end"] = regime
        return out

    def config_hash(self) -> str:
        return hashlib.sha256(canonical_text(self).encode()).hexdigest()[:16]


def effective_observables(cfg: RunConfig, spec: SystemSpec) -> tuple:
    if cfg.observables:
        return cfg.observables
    names = ["density", "xcm", "xcm_var"]
    if spec.particles == 2:
        names.append("sigma_r2")
    if cfg.unraveling == "jump" and cfg.realizations == 1:
        names.append("events")
    return tuple(names)


# ---------------------------------------------------------------------------
# Parsing and serialization
# ---------------------------------------------------------------------------

_SECTION_KEYS = {
    "system": ("statistics", "particles", "sites", "hopping", "interaction"),
    "measurement": ("measurement_strength", "gamma", "sigma",
                    "lattice_constant", "normalization", "psf_file"),
    "run": ("unraveling", "master_variant", "initial_state", "t_end", "dt",
            "readout_points", "realizations", "base_seed"),
    "output": ("observables",),
}

_INT_KEYS = {"particles", "readout_points", "realizations", "base_seed"}
_FLOAT_KEYS = {"hopping", "interaction", "measurement_strength", "gamma",
               "sigma", "lattice_constant", "t_end"}
_AUTO_KEYS = {"sites", "dt"}


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    values: dict = {}
    seen: set = set()
    for section in parser.sections():
        if section not in _SECTION_KEYS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SECTION_KEYS[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            seen.add(f"{section}.{key}")
            raw = raw.strip()
            if key in _AUTO_KEYS and raw.lower() == "auto":
                values[key] = None
            elif key == "sites":
                values[key] = int(raw)
            elif key == "dt":
                values[key] = float(raw)
            elif key in _INT_KEYS:
                values[key] = int(raw)
            elif key in _FLOAT_KEYS:
                values[key] = float(raw)
            elif key == "observables":
                values[key] = tuple(x.strip() for x in raw.split(",") if x.strip())
            else:
                values[key] = raw
    for required in ("system.statistics", "system.particles", "run.t_end"):
        if required not in seen:
            raise ConfigError(f"missing required key {required}")
    cfg = RunConfig(raw_text=text, **values)
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def canonical_text(cfg: RunConfig) -> str:
    """Normalized key=value dump used for hashing and config echo."""
    lines = []
    for section, keys in _SECTION_KEYS.items():
        for key in keys:
            val = getattr(cfg, key)
            if val is None:
                if key in _AUTO_KEYS:
                    val = "auto"
                else:
                    continue
            if key == "observables":
                if not val:
                    continue
                val = ",".join(val)
            lines.append(f"{section}.{key}={val}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------


def _walk_preset(statistics: str, unraveling: str, strength: float,
                 t_end: float, realizations: int, seed: int) -> RunConfig:
    return RunConfig(
        statistics=statistics, particles=2, sites=None, hopping=1.0,
        interaction=0.0, measurement_strength=strength, unraveling=unraveling,
        initial_state="adjacent_pair", t_end=t_end, readout_points=201,
        realizations=realizations, base_seed=seed,
    )


def preset_runs(name: str) -> list[tuple[str, RunConfig]]:
    """Named experiment presets; each returns (label, config) pairs."""
    if name == "fig3a":
        cfg = _walk_preset("boson", "unitary", 0.0, 25.0, 1, 1001)
        cfg.measurement_strength = None
        return [("unitary_pair", cfg)]
    if name == "fig3b":
        return [("distinguishable", _walk_preset("distinguishable", "diffusive", 2.0, 25.0, 1, 1001))]
    if name == "fig3c":
        return [("boson", _walk_preset("boson", "diffusive", 2.0, 25.0, 1, 1001))]
    if name == "fig3d":
        return [("fermion", _walk_preset("fermion", "diffusive", 2.0, 25.0, 1, 1001))]
    if name == "fig4":
        return [
            (stats, _walk_preset(stats, "diffusive", 16.0, 6.0, 1000, 2024))
            for stats in ("distinguishable", "boson", "fermion")
        ]
    if name == "ballistic":
        cfg = RunConfig(statistics="boson", particles=1, sites=81,
                        unraveling="unitary", initial_state="single_site",
                        t_end=15.0, readout_points=151, realizations=1,
                        base_seed=1)
        return [("free_particle", cfg)]
    raise ConfigError(
        f"unknown preset {name!r}; available: fig3a fig3b fig3c fig3d fig4 ballistic"
    )
