"""Single-slot weekday/weekend temporal model.

A POI's act is the margin between its weekday and weekend visit shares; a
user's effective act weighs each visited POI's weekday/weekend lean by how
strongly the non-temporal scorer believes the user would visit it (computed
leave-one-out).  Users whose effective act clears the orientation threshold
get their candidate list re-composed so the weekday / weekend / neutral
proportions follow their measured lean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

from .errors import ConfigError, DataError
from .ingest import CheckInLog
from .localtime import is_weekend


@dataclass(frozen=True)
class UnivariateConfig:
    """Thresholds of the weekday/weekend framework.

    t: effective-act threshold above which the temporal path applies
       (1/7 matches a uniform day-of-week split).
    lam: margin shift separating weekday from weekend lean.
    theta: POI-act cut separating weekday / neutral / weekend candidates.
    xi: share of the final list reserved for neutral POIs.
    k: candidate-pool multiplier (the temporal path re-ranks the top k*n).
    """

    t: float = 1.0 / 7.0
    lam: float = 0.5
    theta: float = 0.0
    xi: float = 0.1
    k: int = 10

    def __post_init__(self):
        if not 0 < self.t < 1:
            raise ConfigError(f"t must be in (0,1), got {self.t}")
        if not 0 < self.lam < 1:
            raise ConfigError(f"lam must be in (0,1), got {self.lam}")
        if not 0 <= self.xi < 1:
            raise ConfigError(f"xi must be in [0,1), got {self.xi}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")


@dataclass(frozen=True)
class PoiAct:
    """Weekday-vs-weekend orientation of a POI over all its visits."""

    poi_id: str
    weekday_visits: int
    weekend_visits: int

    @property
    def total(self) -> int:
        return self.weekday_visits + self.weekend_visits

    @property
    def act(self) -> float:
        return self.weekday_visits / self.total - self.weekend_visits / self.total


@dataclass(frozen=True)
class UserActProfile:
    """Per-user weekday/weekend orientation evidence.

    ``act`` is the non-negative effective act; ``orientation`` is +1 for a
    weekday lean, -1 for weekend, 0 for neither.  ``raw_act`` is the plain
    visit-share margin that ignores per-POI influence.
    """

    user_id: str
    p_day: dict[str, float]
    p_end: dict[str, float]
    c_star: dict[str, float]
    c_hat: dict[str, float]
    pr_day: dict[str, float]
    pr_end: dict[str, float]
    avg_day: float
    avg_end: float
    act: float
    orientation: int
    raw_act: float


def poi_act(poi_id: str, log: CheckInLog, utc_offset: int = 0) -> PoiAct:
    """Visit-share margin of a POI; positive = weekday-leaning."""
    day = end = 0
    for c in log.checkins:
        if c.poi_id == poi_id:
            if is_weekend(c.timestamp, utc_offset):
                end += 1
            else:
                day += 1
    if day + end == 0:
        raise DataError(f"poi {poi_id!r} has no visits")
    return PoiAct(poi_id, day, end)


def all_poi_acts(log: CheckInLog, utc_offset: int = 0) -> dict[str, PoiAct]:
    day: dict[str, int] = {}
    end: dict[str, int] = {}
    for c in log.checkins:
        bucket = end if is_weekend(c.timestamp, utc_offset) else day
        bucket[c.poi_id] = bucket.get(c.poi_id, 0) + 1
    return {p: PoiAct(p, day.get(p, 0), end.get(p, 0))
            for p in set(day) | set(end)}


def user_poi_probs(user: str, poi: str, log: CheckInLog,
                   utc_offset: int = 0) -> tuple[float, float]:
    """(weekday, weekend) visit shares of one user at one POI; they sum to 1."""
    day = end = 0
    for c in log.by_user.get(user, ()):
        if c.poi_id == poi:
            if is_weekend(c.timestamp, utc_offset):
                end += 1
            else:
                day += 1
    total = day + end
    if total == 0:
        raise DataError(f"user {user!r} never visited poi {poi!r}")
    return day / total, end / total


def absolute_poi_act(poi: str, log: CheckInLog, min_users: int = 5,
                     utc_offset: int = 0) -> float | None:
    """Mean absolute per-visitor weekday/weekend deviation; None below the
    visitor floor (the POI is skipped from the observation)."""
    visitors = sorted({c.user_id for c in log.checkins if c.poi_id == poi})
    if len(visitors) < min_users:
        return None
    deviations = []
    for u in visitors:
        p_d, p_e = user_poi_probs(u, poi, log, utc_offset)
        deviations.append(abs(p_d - p_e))
    return sum(deviations) / len(deviations)


def absolute_user_act(user: str, log: CheckInLog, min_pois: int = 8,
                      utc_offset: int = 0) -> float | None:
    """Mean absolute per-POI deviation over the user's distinct POIs; None
    below the POI floor."""
    pois = sorted(log.distinct_pois(user))
    if len(pois) < min_pois:
        return None
    deviations = []
    for p in pois:
        p_d, p_e = user_poi_probs(user, p, log, utc_offset)
        deviations.append(abs(p_d - p_e))
    return sum(deviations) / len(deviations)


def effective_user_act(user: str, log: CheckInLog, cfg: UnivariateConfig,
                       c_star: Mapping[str, float] | Callable[[str, str], float],
                       utc_offset: int = 0) -> UserActProfile:
    """Influence-weighted orientation of a user.

    ``c_star`` supplies the leave-one-out non-temporal visit score for each
    of the user's POIs -- either a precomputed mapping or a callable
    ``(user, poi) -> score``.  Scores are min-max scaled across the user's
    POIs; when they are all equal the scaling is degenerate and every weight
    falls back to 1 (all POIs treated the same).
    """
    pois = sorted(log.distinct_pois(user))
    if len(pois) < 2:
        raise DataError(f"user {user!r} needs >= 2 distinct POIs for feature scaling")
    raw = {p: (c_star[p] if isinstance(c_star, Mapping) else c_star(user, p)) for p in pois}
    lo, hi = min(raw.values()), max(raw.values())
    if hi == lo:
        c_hat = {p: 1.0 for p in pois}
    else:
        c_hat = {p: (raw[p] - lo) / (hi - lo) for p in pois}

    p_day, p_end, pr_day, pr_end = {}, {}, {}, {}
    for p in pois:
        d, e = user_poi_probs(user, p, log, utc_offset)
        p_day[p], p_end[p] = d, e
        pr_day[p] = c_hat[p] * (d - cfg.lam)
        pr_end[p] = c_hat[p] * (e - cfg.lam)
    avg_day = sum(pr_day.values()) / len(pois)
    avg_end = sum(pr_end.values()) / len(pois)
    margin = avg_day - avg_end

    day_events = sum(1 for c in log.by_user[user] if not is_weekend(c.timestamp, utc_offset))
    total_events = len(log.by_user[user])
    raw_act = day_events / total_events - (total_events - day_events) / total_events

    return UserActProfile(
        user_id=user, p_day=p_day, p_end=p_end, c_star=dict(raw), c_hat=c_hat,
        pr_day=pr_day, pr_end=pr_end, avg_day=avg_day, avg_end=avg_end,
        act=abs(margin), orientation=(margin > 0) - (margin < 0), raw_act=raw_act,
    )


def _apportion(quotas: Mapping[str, float], n: int, priority: Sequence[str]) -> dict[str, int]:
    """Largest-remainder seat allocation summing exactly to n.

    Raw quotas are clamped at zero and rescaled to total n when they do not
    already; remainder ties are resolved by ``priority`` order.
    """
    clamped = {k: max(0.0, v) for k, v in quotas.items()}
    total = sum(clamped.values())
    if total <= 0:
        return {k: 0 for k in quotas}
    scaled = {k: v * n / total for k, v in clamped.items()}
    floors = {k: int(math.floor(v)) for k, v in scaled.items()}
    leftover = n - sum(floors.values())
    order = sorted(quotas, key=lambda k: (-(scaled[k] - floors[k]), priority.index(k)))
    for k in order[:leftover]:
        floors[k] += 1
    return floors


def m_avg_recommend(rho: Sequence[str], delta: Mapping[str, float],
                    profile: UserActProfile, cfg: UnivariateConfig,
                    n: int) -> tuple[list[str], bool]:
    """Re-compose the candidate list to match the user's weekday/weekend lean.

    ``rho`` is the score-sorted candidate pool (top k*n of the base scorer),
    ``delta`` maps each candidate to its POI act.  Weekday / weekend quota =
    (avg + lam - xi/2) * n, neutral quota = xi * n, resolved to whole seats
    by the largest-remainder rule with ties favoring the stronger lean;
    bucket shortfalls are backfilled from the remaining pool in rank order.
    """
    if n < 1:
        raise ConfigError(f"list size must be >= 1, got {n}")
    short = len(rho) < n
    quotas = {
        "day": (profile.avg_day + cfg.lam - cfg.xi / 2) * n,
        "end": (profile.avg_end + cfg.lam - cfg.xi / 2) * n,
        "neutral": cfg.xi * n,
    }
    lean = ["day", "end"] if profile.avg_day >= profile.avg_end else ["end", "day"]
    seats = _apportion(quotas, n, priority=lean + ["neutral"])

    buckets = {"day": [], "end": [], "neutral": []}
    for p in rho:
        act = delta[p]
        if act > cfg.theta:
            buckets["day"].append(p)
        elif act < cfg.theta:
            buckets["end"].append(p)
        else:
            buckets["neutral"].append(p)
    chosen: set[str] = set()
    for name in ("day", "end", "neutral"):
        for p in buckets[name][:seats[name]]:
            chosen.add(p)
    if len(chosen) < n:
        for p in rho:
            if len(chosen) >= n:
                break
            chosen.add(p)
    result = [p for p in rho if p in chosen][:n]
    return result, short


def usgt_recommend(profile: UserActProfile, cfg: UnivariateConfig,
                   ranked_pool: Sequence[str], delta: Mapping[str, float],
                   n: int) -> tuple[list[str], str, bool]:
    """Threshold framework: temporal re-composition when the effective act
    clears t (inclusive), the plain base ranking otherwise.

    Returns (list, path, short_flag) with path 'temporal' or 'non_temporal'.
    """
    if profile.act >= cfg.t:
        items, short = m_avg_recommend(ranked_pool, delta, profile, cfg, n)
        return items, "temporal", short
    return list(ranked_pool[:n]), "non_temporal", len(ranked_pool) < n


def act_observations(log: CheckInLog, utc_offset: int = 0, min_users: int = 5,
                     min_pois: int = 8) -> tuple[list[float], list[float]]:
    """Absolute user and POI acts over the corpus, in one pass.

    Returns (user_acts, poi_acts) restricted to users with at least
    ``min_pois`` distinct POIs and POIs with at least ``min_users`` visitors.
    """
    day: dict[tuple[str, str], int] = {}
    end: dict[tuple[str, str], int] = {}
    for c in log.checkins:
        bucket = end if is_weekend(c.timestamp, utc_offset) else day
        key = (c.user_id, c.poi_id)
        bucket[key] = bucket.get(key, 0) + 1
    deviation: dict[tuple[str, str], float] = {}
    for key in set(day) | set(end):
        d, e = day.get(key, 0), end.get(key, 0)
        deviation[key] = abs(d - e) / (d + e)
    by_user: dict[str, list[float]] = {}
    by_poi: dict[str, list[float]] = {}
    for (u, p), dev in deviation.items():
        by_user.setdefault(u, []).append(dev)
        by_poi.setdefault(p, []).append(dev)
    user_acts = [sum(v) / len(v) for u, v in sorted(by_user.items()) if len(v) >= min_pois]
    poi_acts = [sum(v) / len(v) for p, v in sorted(by_poi.items()) if len(v) >= min_users]
    return user_acts, poi_acts


def act_histogram(values: Sequence[float], width: float = 0.1) -> list[tuple[float, float, int]]:
    """Fixed-width histogram rows (lo, hi, count) for act observations."""
    if width <= 0:
        raise ConfigError("histogram width must be positive")
    counts: dict[int, int] = {}
    for v in values:
        idx = min(int(v / width), int(1.0 / width) - 1)
        counts[idx] = counts.get(idx, 0) + 1
    return [(i * width, (i + 1) * width, counts[i]) for i in sorted(counts)]


def histogram_csv(rows: Sequence[tuple[float, float, int]]) -> str:
    lines = ["bin_lo,bin_hi,count"]
    lines += [f"{lo!r},{hi!r},{c}" for lo, hi, c in rows]
    return "\n".join(lines) + "\n"
