"""Run configuration: flat keyed text file with one section per stage.

Every knob has a default; unknown sections or keys are rejected with the
offending key path.  Environment variables ``MATI_<SECTION>_<KEY>`` override
file values.  All randomness flows from ``run.seed``, split per stage with
fixed tags.
"""

from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping

from .baselines import UsgWeights
from .errors import ConfigError
from .hybrid import HybridConfig
from .univariate import UnivariateConfig

ENV_PREFIX = "MATI"

# Stage tags for seed splitting: default_rng([seed, tag]).
SEED_SAMPLING = 11
SEED_MF = 12
SEED_SPLIT = 13


@dataclass
class DataConfig:
    checkins: str = ""
    social: str = ""
    utc_offset_hours: int = 0
    column_format: str = "user,time,lat,lon,poi"
    on_error: str = "abort"

    def validate(self):
        if self.on_error not in ("abort", "skip"):
            raise ConfigError(f"data.on_error must be abort|skip, got {self.on_error!r}")


@dataclass
class FactorConfig:
    names: str = "hour,day"
    hac_threshold: float = 0.6
    hac_threshold_hour: float = -1.0   # < 0 means inherit hac_threshold
    hac_threshold_day: float = -1.0
    binary_vectors: bool = False

    def validate(self):
        if not self.names.strip():
            raise ConfigError("factors.names must list at least one factor")
        if not 0 <= self.hac_threshold <= 1:
            raise ConfigError(f"factors.hac_threshold must be in [0,1], got {self.hac_threshold}")

    def factor_names(self) -> list[str]:
        return [n.strip() for n in self.names.split(",") if n.strip()]

    def threshold_for(self, name: str) -> float:
        override = getattr(self, f"hac_threshold_{name}", -1.0)
        return self.hac_threshold if override < 0 else override


@dataclass
class SamplingConfig:
    strata_low: int = 5
    strata_high: int = 15
    m_min: int = 30
    n_percent: float = 5.0
    max_rounds: int = 100

    def validate(self):
        if self.strata_low >= self.strata_high:
            raise ConfigError("sampling.strata_low must be < sampling.strata_high")
        if self.m_min < 1:
            raise ConfigError("sampling.m_min must be >= 1")
        if not 0 < self.n_percent <= 100:
            raise ConfigError("sampling.n_percent must be in (0,100]")


@dataclass
class MfConfig:
    rank: int = 3
    reg: float = 0.01
    iters: int = 200
    tol: float = 1e-8

    def validate(self):
        if self.rank < 1:
            raise ConfigError("mf.rank must be >= 1")


@dataclass
class UsgConfig:
    alpha: float = 0.3
    beta: float = 0.4
    k_neighbors: int = 50
    bin_km: float = 0.5
    d_min_km: float = 0.1

    def validate(self):
        UsgWeights(self.alpha, self.beta)
        if self.k_neighbors < 1:
            raise ConfigError("usg.k_neighbors must be >= 1")

    def weights(self) -> UsgWeights:
        return UsgWeights(self.alpha, self.beta)


@dataclass
class MatiConfig:
    phi_t: float = 0.7
    gamma: float = 1.0
    em_tol: float = 1e-6
    em_max_iter: int = 200

    def validate(self):
        if not 0 <= self.phi_t <= 1:
            raise ConfigError("mati.phi_t must be in [0,1]")
        if self.gamma < 0:
            raise ConfigError("mati.gamma must be >= 0")


@dataclass
class EvalConfig:
    x: float = 0.3
    test_fraction: float = 0.2
    ns: str = "5,10,20"
    models: str = "ubcf,usg,usgt,ubcft,mati,hybrid"

    def validate(self):
        if not 0 < self.x < 1:
            raise ConfigError("eval.x must be in (0,1)")
        if not 0 < self.test_fraction <= 1:
            raise ConfigError("eval.test_fraction must be in (0,1]")
        self.n_list()

    def n_list(self) -> tuple[int, ...]:
        try:
            return tuple(int(v) for v in self.ns.split(","))
        except ValueError as exc:
            raise ConfigError(f"eval.ns must be comma-separated integers, got {self.ns!r}") from exc

    def model_list(self) -> list[str]:
        return [m.strip() for m in self.models.split(",") if m.strip()]


@dataclass
class RunConfig:
    seed: int = 42
    data: DataConfig = field(default_factory=DataConfig)
    factors: FactorConfig = field(default_factory=FactorConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    mf: MfConfig = field(default_factory=MfConfig)
    usg: UsgConfig = field(default_factory=UsgConfig)
    univariate: UnivariateConfig = field(default_factory=UnivariateConfig)
    mati: MatiConfig = field(default_factory=MatiConfig)
    hybrid: HybridConfig = field(default_factory=HybridConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def utc_offset_seconds(self) -> int:
        return self.data.utc_offset_hours * 3600


_SECTIONS = {
    "run": None,       # holds the root seed
    "data": DataConfig,
    "factors": FactorConfig,
    "sampling": SamplingConfig,
    "mf": MfConfig,
    "usg": UsgConfig,
    "univariate": UnivariateConfig,
    "mati": MatiConfig,
    "hybrid": HybridConfig,
    "eval": EvalConfig,
}


def _coerce(raw: str, target_type: type, path: str):
    try:
        if target_type is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return target_type(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value for {path}: {raw!r}") from exc


def load_config(path: str | Path | None = None,
                env: Mapping[str, str] | None = None) -> RunConfig:
    """Build a RunConfig from defaults, an optional file, and env overrides."""
    env = os.environ if env is None else env
    parser = configparser.ConfigParser(interpolation=None)
    if path is not None:
        read = parser.read(str(path))
        if not read:
            raise ConfigError(f"config file not found: {path}")

    values: dict[str, dict[str, str]] = {s: dict(parser.items(s)) for s in parser.sections()}
    for key, raw in env.items():
        if not key.startswith(ENV_PREFIX + "_"):
            continue
        rest = key[len(ENV_PREFIX) + 1:]
        section, _, option = rest.partition("_")
        section = section.lower()
        option = option.lower()
        if not option:
            raise ConfigError(f"malformed override variable {key}")
        values.setdefault(section, {})[option] = raw

    cfg = RunConfig()
    for section, entries in values.items():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        if section == "run":
            for option, raw in entries.items():
                if option != "seed":
                    raise ConfigError(f"unknown config key run.{option}")
                cfg.seed = _coerce(raw, int, "run.seed")
            continue
        target = getattr(cfg, section)
        known = {f.name: f.type for f in fields(target)}
        updates = {}
        for option, raw in entries.items():
            if option not in known:
                raise ConfigError(f"unknown config key {section}.{option}")
            current = getattr(target, option)
            updates[option] = _coerce(raw, type(current), f"{section}.{option}")
        if updates:
            merged = {f.name: getattr(target, f.name) for f in fields(target)}
            merged.update(updates)
            setattr(cfg, section, _SECTIONS[section](**merged))

    for section, klass in _SECTIONS.items():
        if klass is None:
            continue
        obj = getattr(cfg, section)
        if hasattr(obj, "validate"):
            obj.validate()
    return cfg


def serialize_config(cfg: RunConfig) -> str:
    """Canonical text form: sorted sections and keys (round-trip idempotent)."""
    lines = ["[run]", f"seed = {cfg.seed}", ""]
    for section in sorted(s for s in _SECTIONS if s != "run"):
        obj = getattr(cfg, section)
        lines.append(f"[{section}]")
        for f in sorted(fields(obj), key=lambda f: f.name):
            lines.append(f"{f.name} = {getattr(obj, f.name)}")
        lines.append("")
    return "\n".join(lines)


def fingerprint(cfg: RunConfig, input_checksums: Mapping[str, str] | None = None) -> str:
    """Hash of config + seed + input checksums, stamped into every artifact."""
    h = hashlib.sha256(serialize_config(cfg).encode("utf-8"))
    for name, checksum in sorted((input_checksums or {}).items()):
        h.update(f"{name}={checksum}".encode("utf-8"))
    return h.hexdigest()


def file_checksum(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
