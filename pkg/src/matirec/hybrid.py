"""Per-user routing between the temporal model and the non-temporal scorer.

A query user is temporally sensitive when the mean shared-activity overlap
between them and their non-temporal top-N candidates falls inside a tuned
closed interval; only then does the temporal score rank the final list.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Mapping, Sequence

from .errors import ConfigError, DataError
from .mati import psi_shared_activity
from .slabs import SlabProfile

Path = Literal["temporal", "non_temporal"]

PSI_RANGE_PRESETS: dict[str, tuple[float, float]] = {
    "brightkite": (0.4, 0.9),
    "foursquare": (0.4, 0.8),
}


@dataclass(frozen=True)
class HybridConfig:
    """Closed interval of mean shared activity in which the temporal path applies."""

    psi_low: float = 0.4
    psi_high: float = 0.9

    def __post_init__(self):
        if not 0 <= self.psi_low <= self.psi_high <= 1:
            raise ConfigError(f"psi range must satisfy 0 <= low <= high <= 1, "
                              f"got [{self.psi_low}, {self.psi_high}]")

    @classmethod
    def preset(cls, dataset: str) -> "HybridConfig":
        if dataset not in PSI_RANGE_PRESETS:
            raise ConfigError(f"no psi-range preset for {dataset!r}")
        return cls(*PSI_RANGE_PRESETS[dataset])


def avg_shared_activity(user_profile: SlabProfile | None,
                        candidates: Sequence[str],
                        poi_profiles: Mapping[str, SlabProfile]) -> float:
    """Mean shared-activity overlap between the user and their candidates.

    Candidates without a defined overlap (missing or empty profile on either
    side) contribute zero rather than being dropped.
    """
    if not candidates:
        raise DataError("cannot average shared activity over an empty candidate list")
    total = 0.0
    for poi in candidates:
        profile = poi_profiles.get(poi)
        if user_profile is None or profile is None:
            continue
        try:
            total += psi_shared_activity(user_profile, profile)
        except DataError:
            continue
    return total / len(candidates)


def decide(mean_psi: float, cfg: HybridConfig) -> Path:
    """Route to the temporal path iff mean_psi lies in the closed interval."""
    return "temporal" if cfg.psi_low <= mean_psi <= cfg.psi_high else "non_temporal"


@dataclass(frozen=True)
class Decision:
    user_id: str
    mean_psi: float
    path: Path


def decisions_csv(decisions: Sequence[Decision], run_stamp: str) -> str:
    lines = ["user_id,mean_psi,path,run_timestamp"]
    lines += [f"{d.user_id},{d.mean_psi!r},{d.path},{run_stamp}" for d in decisions]
    return "\n".join(lines) + "\n"
