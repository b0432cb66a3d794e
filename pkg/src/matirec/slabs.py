"""Temporal slab extraction.

A temporal factor (hour of day, day of week, ...) slices timestamps into a
fixed number of slots.  Per factor we estimate a slot-by-slot similarity
matrix from sampled user activity, complete its unobserved cells by low-rank
symmetric matrix factorization, cluster mutually similar slots into
uni-aspect slabs with complete-linkage agglomerative clustering, and cross
the per-factor slabs into multi-aspect slabs that partition the timestamp
space.  Check-in profiles over multi-aspect slabs feed the latent temporal
model and the shared-activity overlap.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .ingest import CheckIn, CheckInLog
from .localtime import local_hour, local_weekday

SLAB_INDEX_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TemporalFactorSpec:
    """One temporal granularity: a total slot extractor plus its containment rank.

    ``containment_rank`` orders granularities by containment (lower = finer:
    minute < hour < day < week); it fixes the conditioning order of the
    latent chain and the axis order of slab tables.
    """

    name: str
    slot_count: int
    slot_of: Callable[[int], int]
    containment_rank: int
    utc_offset: int = 0

    def __post_init__(self):
        if self.slot_count < 2:
            raise ConfigError(f"factor {self.name}: slot_count must be >= 2")


def hour_factor(utc_offset: int = 0) -> TemporalFactorSpec:
    return TemporalFactorSpec("hour", 24, lambda ts: local_hour(ts, utc_offset),
                              containment_rank=1, utc_offset=utc_offset)


def day_factor(utc_offset: int = 0) -> TemporalFactorSpec:
    return TemporalFactorSpec("day", 7, lambda ts: local_weekday(ts, utc_offset),
                              containment_rank=2, utc_offset=utc_offset)


FACTOR_BUILDERS: dict[str, Callable[[int], TemporalFactorSpec]] = {
    "hour": hour_factor,
    "day": day_factor,
}


def register_factor(name: str, builder: Callable[[int], TemporalFactorSpec]) -> None:
    """Register a custom factor builder so slab indexes using it can round-trip."""
    FACTOR_BUILDERS[name] = builder


def build_factor(name: str, utc_offset: int = 0) -> TemporalFactorSpec:
    if name not in FACTOR_BUILDERS:
        raise ConfigError(f"unknown temporal factor {name!r}; registered: {sorted(FACTOR_BUILDERS)}")
    return FACTOR_BUILDERS[name](utc_offset)


def user_slot_vectors(history: Sequence[CheckIn], factor: TemporalFactorSpec,
                      binary: bool = False) -> dict[int, dict[str, float]]:
    """Per-slot visit-count vectors over POIs for one user's history.

    With ``binary=True`` counts collapse to 0/1 presence.
    """
    vectors: dict[int, dict[str, float]] = {}
    for c in history:
        slot = factor.slot_of(c.timestamp)
        vec = vectors.setdefault(slot, {})
        vec[c.poi_id] = 1.0 if binary else vec.get(c.poi_id, 0.0) + 1.0
    return vectors


def slot_pair_similarity(vec_a: Mapping[str, float], vec_b: Mapping[str, float]) -> float | None:
    """Cosine similarity of two slot vectors; None when either slot is inactive.

    An inactive slot yields no sample at all (it must not be conflated with
    similarity zero).
    """
    if not vec_a or not vec_b:
        return None
    dot = sum(vec_a[k] * vec_b[k] for k in vec_a.keys() & vec_b.keys())
    norm_a = math.sqrt(sum(v * v for v in vec_a.values()))
    norm_b = math.sqrt(sum(v * v for v in vec_b.values()))
    return dot / (norm_a * norm_b)


@dataclass
class SimilaritySamples:
    """Raw per-user similarity observations for one factor, keyed (a, b) with a < b."""

    factor: TemporalFactorSpec
    values: dict[tuple[int, int], list[float]] = field(default_factory=dict)

    def add(self, slot_a: int, slot_b: int, value: float) -> None:
        key = (slot_a, slot_b) if slot_a < slot_b else (slot_b, slot_a)
        self.values.setdefault(key, []).append(value)

    def count(self, slot_a: int, slot_b: int) -> int:
        key = (slot_a, slot_b) if slot_a < slot_b else (slot_b, slot_a)
        return len(self.values.get(key, ()))

    def covered(self, m_min: int) -> bool:
        n = self.factor.slot_count
        return all(self.count(a, b) >= m_min for a in range(n) for b in range(a + 1, n))


@dataclass
class SlotSimilarityMatrix:
    """Symmetric slot-by-slot similarity with observation counts.

    Cells observed with fewer than the sample floor stay NaN until matrix
    completion imputes them; the diagonal is definitionally 1 and always
    observed.  ``completed_mask`` marks imputed cells.
    """

    factor: TemporalFactorSpec
    sim: np.ndarray
    count: np.ndarray
    observed: np.ndarray
    completed_mask: np.ndarray

    def copy(self) -> "SlotSimilarityMatrix":
        return SlotSimilarityMatrix(self.factor, self.sim.copy(), self.count.copy(),
                                    self.observed.copy(), self.completed_mask.copy())

    def is_complete(self) -> bool:
        return bool((self.observed | self.completed_mask).all())


def aggregate_similarity(samples: SimilaritySamples, m_min: int = 1) -> SlotSimilarityMatrix:
    """Average the per-user samples into a similarity matrix.

    A cell becomes observed once it has at least ``m_min`` samples; the mean
    over contributing users is symmetric by construction.
    """
    n = samples.factor.slot_count
    sim = np.full((n, n), np.nan)
    count = np.zeros((n, n), dtype=int)
    observed = np.zeros((n, n), dtype=bool)
    np.fill_diagonal(sim, 1.0)
    np.fill_diagonal(observed, True)
    for (a, b), vals in samples.values.items():
        count[a, b] = count[b, a] = len(vals)
        if len(vals) >= m_min:
            mean = float(np.mean(vals))
            sim[a, b] = sim[b, a] = mean
            observed[a, b] = observed[b, a] = True
    return SlotSimilarityMatrix(samples.factor, sim, count, observed,
                                np.zeros((n, n), dtype=bool))


def complete_matrix(matrix: SlotSimilarityMatrix, rank: int = 3, reg: float = 0.01,
                    iters: int = 200, tol: float = 1e-8, seed: int = 0) -> SlotSimilarityMatrix:
    """Impute unobserved cells from a rank-``rank`` symmetric factorization.

    Fits S ~ F F^T on the observed off-diagonal cells by regularized
    alternating least squares; observed cells are never altered and imputed
    values are clamped to [0, 1].  The diagonal is excluded from the fit
    (it is fixed at its stored value and never imputed).
    """
    n = matrix.sim.shape[0]
    if matrix.observed.all():
        return matrix.copy()
    eye = np.eye(n, dtype=bool)
    off_obs = matrix.observed & ~eye
    if not off_obs.any():
        raise DataError("matrix completion needs at least one observed off-diagonal cell")
    observed_cells = int(np.triu(matrix.observed).sum())
    if observed_cells < n * rank:
        raise DataError(f"insufficient observations for rank {rank}: "
                        f"{observed_cells} observed cells < {n * rank} required")
    out = matrix.copy()

    rng = np.random.default_rng([seed, 7])
    factors = rng.uniform(0.1, 0.9, size=(n, rank)) / math.sqrt(rank)
    s_obs = np.where(off_obs, np.nan_to_num(matrix.sim), 0.0)
    reg_eye = reg * np.eye(rank)
    prev = math.inf
    for _ in range(iters):
        for i in range(n):
            js = np.flatnonzero(off_obs[i])
            if js.size == 0:
                continue
            gram = factors[js].T @ factors[js] + reg_eye
            rhs = factors[js].T @ s_obs[i, js]
            try:
                factors[i] = np.linalg.solve(gram, rhs)
            except np.linalg.LinAlgError:
                factors[i] = np.linalg.lstsq(gram, rhs, rcond=None)[0]
        pred = factors @ factors.T
        obj = float(np.sum((s_obs[off_obs] - pred[off_obs]) ** 2)) + reg * float(np.sum(factors ** 2))
        if math.isfinite(prev) and abs(prev - obj) <= tol * max(abs(prev), 1e-12):
            break
        prev = obj

    pred = np.clip(factors @ factors.T, 0.0, 1.0)
    fill = ~matrix.observed
    out.sim[fill] = pred[fill]
    out.completed_mask = fill.copy()
    return out


@dataclass(frozen=True)
class UniAspectSlab:
    """A cluster of mutually similar slots within one factor."""

    factor_name: str
    index: int
    slots: frozenset[int]

    @property
    def id(self) -> str:
        return f"{self.factor_name}:{self.index}"


def hac_complete_linkage(matrix: SlotSimilarityMatrix, threshold: float) -> tuple[UniAspectSlab, ...]:
    """Partition slots into slabs by bottom-up complete-linkage clustering.

    Two clusters merge only while their least-similar cross pair is still at
    or above ``threshold``, so every within-slab slot pair is guaranteed to
    be at least that similar.  Equal-distance merge candidates are resolved
    toward the lexicographically smallest slot ids.
    """
    if not matrix.is_complete():
        raise DataError("similarity matrix has unobserved cells; run completion first")
    sim = matrix.sim
    n = sim.shape[0]
    clusters: list[tuple[int, ...]] = [(s,) for s in range(n)]
    while len(clusters) > 1:
        best = None
        for i in range(len(clusters)):
            for j in range(i + 1, len(clusters)):
                link = min(sim[a, b] for a in clusters[i] for b in clusters[j])
                key = (-link, min(clusters[i]), min(clusters[j]))
                if best is None or key < best[0]:
                    best = (key, i, j, link)
        _, i, j, link = best
        if link < threshold:
            break
        merged = tuple(sorted(clusters[i] + clusters[j]))
        clusters = [c for k, c in enumerate(clusters) if k not in (i, j)] + [merged]
    clusters.sort(key=min)
    return tuple(UniAspectSlab(matrix.factor.name, idx, frozenset(c))
                 for idx, c in enumerate(clusters))


@dataclass(frozen=True)
class MultiAspectSlab:
    """One cell of the cross product of uni-aspect slabs, finest factor first."""

    id: str
    parts: tuple[UniAspectSlab, ...]


def cross_slabs(slab_sets: Mapping[str, Sequence[UniAspectSlab]],
                factors: Sequence[TemporalFactorSpec]) -> tuple[MultiAspectSlab, ...]:
    """Full Cartesian product of per-factor slab partitions.

    Ids are deterministic: factors ordered finest-first by containment rank,
    combinations enumerated lexicographically over per-factor slab indices.
    """
    if not factors:
        raise DataError("cross_slabs requires at least one factor")
    ranks = [f.containment_rank for f in factors]
    if len(set(ranks)) != len(ranks):
        raise ConfigError(f"duplicate containment ranks: {ranks}")
    ordered = sorted(factors, key=lambda f: f.containment_rank)
    combos: list[tuple[UniAspectSlab, ...]] = [()]
    for f in ordered:
        slabs = slab_sets[f.name]
        combos = [prefix + (s,) for prefix in combos for s in slabs]
    out = []
    for combo in combos:
        slab_id = "|".join(part.id for part in combo)
        out.append(MultiAspectSlab(slab_id, combo))
    return tuple(out)


class SlabIndex:
    """Immutable mapping timestamp -> multi-aspect slab, plus related lookups.

    ``factors`` are kept finest-first (ascending containment rank).  For
    latent tables the companion tuple ordering is coarsest-first; see
    ``grid_shape`` and ``grid_index_of``.
    """

    def __init__(self, factors: Sequence[TemporalFactorSpec],
                 slab_sets: Mapping[str, Sequence[UniAspectSlab]]):
        if not factors:
            raise DataError("SlabIndex requires at least one factor")
        self.factors = tuple(sorted(factors, key=lambda f: f.containment_rank))
        ranks = [f.containment_rank for f in self.factors]
        if len(set(ranks)) != len(ranks):
            raise ConfigError(f"duplicate containment ranks: {ranks}")
        self.slab_sets = {f.name: tuple(slab_sets[f.name]) for f in self.factors}
        for f in self.factors:
            covered = sorted(s for slab in self.slab_sets[f.name] for s in slab.slots)
            if covered != list(range(f.slot_count)):
                raise DataError(f"slabs of factor {f.name} do not partition its slots")
        self._slot_to_slab = {
            f.name: {slot: slab.index for slab in self.slab_sets[f.name] for slot in slab.slots}
            for f in self.factors
        }
        self.multi_slabs = cross_slabs(self.slab_sets, self.factors)
        self._combo_to_id = {
            tuple(part.index for part in slab.parts): slab.id for slab in self.multi_slabs
        }

    @property
    def multi_ids(self) -> tuple[str, ...]:
        return tuple(s.id for s in self.multi_slabs)

    def slab_counts(self) -> dict[str, int]:
        return {f.name: len(self.slab_sets[f.name]) for f in self.factors}

    def grid_shape(self) -> tuple[int, ...]:
        """Slab counts per factor, coarsest first (array axis order for tables)."""
        return tuple(len(self.slab_sets[f.name]) for f in reversed(self.factors))

    def slab_of(self, timestamp: int) -> str:
        """The unique multi-aspect slab id containing the timestamp."""
        combo = tuple(self._slot_to_slab[f.name][f.slot_of(timestamp)] for f in self.factors)
        return self._combo_to_id[combo]

    def grid_index_of(self, timestamp: int) -> tuple[int, ...]:
        """Per-factor slab indices, coarsest first, for table addressing."""
        return tuple(self._slot_to_slab[f.name][f.slot_of(timestamp)]
                     for f in reversed(self.factors))

    def to_json(self, fingerprint: str = "") -> str:
        """Versioned text form.  The content checksum covers factor specs and
        slab memberships only, so the run fingerprint can vary freely."""
        payload = {
            "format_version": SLAB_INDEX_FORMAT_VERSION,
            "factors": [
                {"name": f.name, "slot_count": f.slot_count,
                 "containment_rank": f.containment_rank, "utc_offset": f.utc_offset}
                for f in self.factors
            ],
            "slabs": {
                name: [sorted(s.slots) for s in slabs]
                for name, slabs in self.slab_sets.items()
            },
        }
        payload["checksum"] = _checksum(payload)
        if fingerprint:
            payload["fingerprint"] = fingerprint
        return json.dumps(payload, sort_keys=True, indent=1)

    @property
    def checksum(self) -> str:
        payload = json.loads(self.to_json())
        payload.pop("checksum")
        return _checksum(payload)

    @classmethod
    def from_json(cls, text: str) -> "SlabIndex":
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataError(f"unreadable slab index: {exc}") from exc
        if payload.get("format_version") != SLAB_INDEX_FORMAT_VERSION:
            raise DataError(f"unsupported slab index format {payload.get('format_version')!r}")
        payload.pop("fingerprint", None)
        stored = payload.pop("checksum", None)
        if stored != _checksum(payload):
            raise DataError("slab index checksum mismatch; file is stale or corrupted")
        factors = [build_factor(spec["name"], spec["utc_offset"]) for spec in payload["factors"]]
        for spec, f in zip(payload["factors"], factors):
            if f.slot_count != spec["slot_count"] or f.containment_rank != spec["containment_rank"]:
                raise DataError(f"registered factor {f.name!r} disagrees with stored spec")
        slab_sets = {
            name: tuple(UniAspectSlab(name, i, frozenset(slots))
                        for i, slots in enumerate(slot_lists))
            for name, slot_lists in payload["slabs"].items()
        }
        return cls(factors, slab_sets)


def _checksum(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class SlabProfile:
    """Check-in counts of one user or POI over multi-aspect slabs."""

    owner: str
    slab_counts: dict[str, int]

    @property
    def slab_set(self) -> frozenset[str]:
        return frozenset(k for k, v in self.slab_counts.items() if v > 0)

    @property
    def total(self) -> int:
        return sum(self.slab_counts.values())


def entity_slab_profile(log: CheckInLog, entity_id: str, index: SlabIndex,
                        kind: str = "user") -> SlabProfile:
    """Slab profile of a user (own events) or a POI (all its visitors' events)."""
    if kind == "user":
        events = log.by_user.get(entity_id)
        if not events:
            raise DataError(f"unknown user {entity_id!r}")
    elif kind == "poi":
        events = [c for c in log.checkins if c.poi_id == entity_id]
        if not events:
            raise DataError(f"unknown poi {entity_id!r}")
    else:
        raise DataError(f"kind must be 'user' or 'poi', got {kind!r}")
    counts: dict[str, int] = {}
    for c in events:
        slab = index.slab_of(c.timestamp)
        counts[slab] = counts.get(slab, 0) + 1
    return SlabProfile(entity_id, counts)


def all_slab_profiles(log: CheckInLog, index: SlabIndex) -> tuple[dict[str, SlabProfile], dict[str, SlabProfile]]:
    """One pass over the log yielding (user profiles, poi profiles)."""
    users: dict[str, dict[str, int]] = {}
    pois: dict[str, dict[str, int]] = {}
    for c in log.checkins:
        slab = index.slab_of(c.timestamp)
        u = users.setdefault(c.user_id, {})
        u[slab] = u.get(slab, 0) + 1
        p = pois.setdefault(c.poi_id, {})
        p[slab] = p.get(slab, 0) + 1
    return ({u: SlabProfile(u, counts) for u, counts in users.items()},
            {p: SlabProfile(p, counts) for p, counts in pois.items()})


def similarity_csv(matrix: SlotSimilarityMatrix) -> str:
    """CSV export of one factor's similarity map (plot-ready)."""
    lines = ["factor,slot_a,slot_b,similarity,count,imputed"]
    n = matrix.sim.shape[0]
    for a in range(n):
        for b in range(n):
            value = matrix.sim[a, b]
            rendered = "" if np.isnan(value) else repr(float(value))
            lines.append(f"{matrix.factor.name},{a},{b},{rendered},"
                         f"{int(matrix.count[a, b])},{int(matrix.completed_mask[a, b])}")
    return "\n".join(lines) + "\n"
