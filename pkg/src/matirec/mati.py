"""Latent multi-aspect temporal model (MATI): joint probability, EM, scoring.

For every observed (user, POI) pair the model keeps a chain of conditional
slab tables, finest granularity conditioned on all coarser ones:

    Pr(z_1 | z_2..z_t, u, l) * ... * Pr(z_{t-1} | z_t, u, l) * Pr(z_t | u, l)

Table arrays are indexed coarsest-first, so the table for chain level k has
the conditioning axes first and the level's own slab axis last; every table
sums to 1 over that last axis for each conditioning tuple.

The joint visit probability is Pr(u) * Pr_nu(l|u) * chain, with Pr(u) = 1
(users are treated equally) and Pr_nu the fixed non-temporal score.  All
probability arithmetic runs in log space with an explicit -inf sentinel for
zero factors, never a silent underflow.

Evidence coupling: the estimation equations alone leave the per-pair tables
at a fixed point, so each M step blends the posterior responsibilities with
the pair's empirical slab histogram,

    resp'(z) = (n(u,l,z) + gamma * resp(z)) / (n(u,l) + gamma),

which reduces to the empirical frequencies for well-observed pairs and to
pure posterior smoothing for pairs without timestamped support.  The
reported log-likelihood is the per-event data log-likelihood under the
current tables (plus the fixed Pr_nu terms); it is non-decreasing across
iterations.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError, InvariantError
from .ingest import CheckInLog
from .slabs import SlabIndex, SlabProfile, TemporalFactorSpec

logger = logging.getLogger(__name__)

PARAMS_FORMAT_VERSION = 1

ROW_SUM_TOL = 1e-9
MONOTONE_SLACK = 1e-9


@dataclass(frozen=True)
class ChainLayout:
    """Conditional-table layout for a set of temporal factors.

    ``shape`` holds per-level slab counts coarsest-first (the array axis
    order); ``levels`` names the factors in the same order.
    """

    levels: tuple[str, ...]
    shape: tuple[int, ...]

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))


def chain_factorization(factors: Sequence[tuple[TemporalFactorSpec, int]] |
                        Sequence[tuple[str, int, int]]) -> ChainLayout:
    """Layout for (factor, slab_count) pairs; finest factor ends the chain.

    Accepts (TemporalFactorSpec, slab_count) or (name, containment_rank,
    slab_count) tuples.  Duplicate containment ranks are rejected.
    """
    norm = []
    for item in factors:
        if isinstance(item[0], TemporalFactorSpec):
            spec, count = item
            norm.append((spec.name, spec.containment_rank, count))
        else:
            norm.append(tuple(item))
    if not norm:
        raise DataError("chain factorization requires at least one factor")
    ranks = [r for _, r, _ in norm]
    if len(set(ranks)) != len(ranks):
        raise ConfigError(f"duplicate containment ranks: {ranks}")
    ordered = sorted(norm, key=lambda t: -t[1])  # coarsest first
    return ChainLayout(tuple(n for n, _, _ in ordered), tuple(c for _, _, c in ordered))


def layout_for(index: SlabIndex) -> ChainLayout:
    counts = index.slab_counts()
    return chain_factorization([(f, counts[f.name]) for f in index.factors])


def chain_from_joint(joint: np.ndarray) -> list[np.ndarray]:
    """Factor a joint slab table into the conditional chain.

    Level k's table is the joint marginalized over all finer axes and
    normalized along axis k given the coarser axes; conditioning tuples with
    zero mass fall back to a uniform row (their reconstructed joint mass
    stays zero).
    """
    t = joint.ndim
    tables = []
    fallbacks = 0
    for k in range(t):
        marg = joint.sum(axis=tuple(range(k + 1, t))) if k + 1 < t else joint
        denom = marg.sum(axis=k, keepdims=True)
        size = marg.shape[k]
        with np.errstate(invalid="ignore", divide="ignore"):
            table = np.where(denom > 0, marg / np.where(denom > 0, denom, 1.0), 1.0 / size)
        fallbacks += int(np.count_nonzero(denom <= 0))
        tables.append(table)
    if fallbacks:
        logger.debug("chain_from_joint: %d zero-mass conditioning tuples set uniform", fallbacks)
    return tables


def joint_from_chain(tables: Sequence[np.ndarray]) -> np.ndarray:
    """Multiply the chain back into the full joint table."""
    joint = tables[0]
    for table in tables[1:]:
        joint = joint[..., None] * table
    return joint


def log_joint_from_chain(tables: Sequence[np.ndarray]) -> np.ndarray:
    """Log-space joint with -inf where any chain factor is zero."""
    with np.errstate(divide="ignore"):
        acc = np.log(tables[0])
        for table in tables[1:]:
            acc = acc[..., None] + np.log(table)
    return acc


def validate_chain(tables: Sequence[np.ndarray]) -> None:
    for k, table in enumerate(tables):
        if (table < 0).any():
            raise InvariantError(f"chain level {k} has negative entries")
        sums = table.sum(axis=-1)
        if not np.allclose(sums, 1.0, atol=ROW_SUM_TOL, rtol=0):
            raise InvariantError(f"chain level {k} rows do not sum to 1 (max err "
                                 f"{float(np.abs(sums - 1).max()):.3e})")


@dataclass
class MatiParams:
    """Trained parameter set: fixed non-temporal scores plus slab chains.

    ``pair_tables`` covers observed pairs; candidate pairs unseen in
    training back off to the POI-marginal chain (mean of the POI's observed
    pair joints) and finally to the global popularity chain.
    """

    layout: ChainLayout
    pr_nu: dict[tuple[str, str], float]
    pair_tables: dict[tuple[str, str], list[np.ndarray]]
    poi_tables: dict[str, list[np.ndarray]] = field(default_factory=dict)
    global_table: list[np.ndarray] | None = None
    slab_checksum: str = ""

    def tables_for(self, user: str, poi: str) -> list[np.ndarray]:
        pair = (user, poi)
        if pair in self.pair_tables:
            return self.pair_tables[pair]
        if poi in self.poi_tables:
            return self.poi_tables[poi]
        if self.global_table is None:
            raise DataError(f"no tables for pair {pair} and no global fallback")
        return self.global_table

    def validate(self) -> None:
        for tables in self.pair_tables.values():
            validate_chain(tables)
        for tables in self.poi_tables.values():
            validate_chain(tables)
        if self.global_table is not None:
            validate_chain(self.global_table)


@dataclass
class EmReport:
    """Per-iteration log-likelihood trace; index 0 is the initial tables."""

    log_likelihood: list[float]
    iterations: int
    converged: bool


def psi_shared_activity(user_profile: SlabProfile, poi_profile: SlabProfile) -> float:
    """Jaccard overlap of the two slab-id sets (extent of shared activity)."""
    a, b = user_profile.slab_set, poi_profile.slab_set
    union = a | b
    if not union:
        raise DataError("shared activity undefined: both slab profiles empty")
    return len(a & b) / len(union)


def joint_prob(user: str, poi: str, assignment: tuple[int, ...], params: MatiParams,
               pr_nu: float | None = None) -> float:
    """Log joint probability of (user, poi, slab assignment).

    ``assignment`` indexes slabs coarsest-first.  Any zero factor yields the
    -inf sentinel.  ``pr_nu`` overrides the stored non-temporal score (used
    when scoring candidate pairs).
    """
    if pr_nu is None:
        pr_nu = params.pr_nu.get((user, poi))
        if pr_nu is None:
            raise DataError(f"no stored non-temporal score for pair ({user}, {poi})")
    if pr_nu < 0:
        raise DataError(f"negative non-temporal score for ({user}, {poi})")
    # log Pr(u) = log 1 = 0 contributes nothing.
    log_p = -math.inf if pr_nu == 0 else math.log(pr_nu)
    tables = params.tables_for(user, poi)
    for k, table in enumerate(tables):
        value = float(table[assignment[:k + 1]])
        if value == 0.0:
            return -math.inf
        log_p += math.log(value)
    return log_p


def e_step(params: MatiParams, pairs: Sequence[tuple[str, str]]) -> dict[tuple[str, str], np.ndarray]:
    """Posterior slab responsibilities per pair, log-sum-exp normalized."""
    out: dict[tuple[str, str], np.ndarray] = {}
    for pair in pairs:
        user, poi = pair
        pr_nu = params.pr_nu.get(pair)
        if pr_nu is None or pr_nu <= 0:
            raise DataError(f"pair {pair} has no positive non-temporal score")
        log_joint = log_joint_from_chain(params.tables_for(user, poi)) + math.log(pr_nu)
        top = log_joint.max()
        if top == -math.inf:
            raise DataError(f"pair {pair} has no support")
        shifted = np.exp(log_joint - top)
        out[pair] = shifted / shifted.sum()
    return out


def m_step(responsibilities: Mapping[tuple[str, str], np.ndarray],
           evidence: Mapping[tuple[str, str], np.ndarray],
           gamma: float = 1.0) -> dict[tuple[str, str], list[np.ndarray]]:
    """Update each pair's chain from evidence-blended responsibilities."""
    tables: dict[tuple[str, str], list[np.ndarray]] = {}
    for pair in responsibilities:
        resp = responsibilities[pair]
        hist = evidence.get(pair)
        n = float(hist.sum()) if hist is not None else 0.0
        if n > 0:
            blended = (hist + gamma * resp) / (n + gamma)
        else:
            blended = resp
        tables[pair] = chain_from_joint(blended)
    return tables


def slab_evidence(log: CheckInLog, index: SlabIndex,
                  pairs: Sequence[tuple[str, str]] | None = None) -> dict[tuple[str, str], np.ndarray]:
    """Per-pair histogram of training check-ins over the slab grid."""
    shape = index.grid_shape()
    wanted = set(pairs) if pairs is not None else None
    out: dict[tuple[str, str], np.ndarray] = {}
    for c in log.checkins:
        pair = (c.user_id, c.poi_id)
        if wanted is not None and pair not in wanted:
            continue
        hist = out.get(pair)
        if hist is None:
            hist = out[pair] = np.zeros(shape)
        hist[index.grid_index_of(c.timestamp)] += 1
    return out


def global_popularity_table(log: CheckInLog, index: SlabIndex) -> list[np.ndarray]:
    """Chain built from the corpus-wide slab popularity (deterministic init)."""
    shape = index.grid_shape()
    counts = np.zeros(shape)
    for c in log.checkins:
        counts[index.grid_index_of(c.timestamp)] += 1
    total = counts.sum()
    if total == 0:
        raise DataError("cannot initialize slab tables from an empty log")
    return chain_from_joint(counts / total)


def _data_log_likelihood(params: MatiParams, pairs: Sequence[tuple[str, str]],
                         evidence: Mapping[tuple[str, str], np.ndarray]) -> float:
    """Per-event log-likelihood: sum over check-ins of log Pr_nu + log Pr(z|u,l)."""
    total = 0.0
    for pair in pairs:
        hist = evidence.get(pair)
        if hist is None:
            continue
        n = float(hist.sum())
        total += n * math.log(params.pr_nu[pair])
        log_joint = log_joint_from_chain(params.pair_tables[pair])
        mask = hist > 0
        if np.isneginf(log_joint[mask]).any():
            return -math.inf
        total += float((hist[mask] * log_joint[mask]).sum())
    return total


def run_em(log: CheckInLog, index: SlabIndex, pr_nu: Mapping[tuple[str, str], float],
           init: Mapping[tuple[str, str], list[np.ndarray]] | None = None,
           max_iter: int = 200, tol: float = 1e-6,
           gamma: float = 1.0) -> tuple[MatiParams, EmReport]:
    """Alternate expectation and maximization until the likelihood stalls.

    Observed pairs are every (user, poi) with at least one training
    check-in, processed in sorted order for deterministic reduction.  The
    run stops when the relative log-likelihood change drops below ``tol``
    or after ``max_iter`` iterations; a decrease beyond the slack is an
    invariant breach.
    """
    pairs = sorted({(c.user_id, c.poi_id) for c in log.checkins})
    if not pairs:
        raise DataError("no observed pairs to train on")
    for pair in pairs:
        if pr_nu.get(pair, 0.0) <= 0:
            raise DataError(f"observed pair {pair} needs a positive non-temporal score")
    layout = layout_for(index)
    evidence = slab_evidence(log, index)
    base = global_popularity_table(log, index)
    tables = ({pair: [t.copy() for t in init[pair]] for pair in pairs} if init is not None
              else {pair: [t.copy() for t in base] for pair in pairs})
    params = MatiParams(layout=layout, pr_nu={p: float(pr_nu[p]) for p in pairs},
                        pair_tables=tables, global_table=base,
                        slab_checksum=index.checksum)

    trace = [_data_log_likelihood(params, pairs, evidence)]
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        resp = e_step(params, pairs)
        params.pair_tables = m_step(resp, evidence, gamma=gamma)
        ll = _data_log_likelihood(params, pairs, evidence)
        prev = trace[-1]
        slack = MONOTONE_SLACK * max(1.0, abs(prev))
        if prev != -math.inf and ll < prev - slack:
            raise InvariantError(f"log-likelihood decreased: {prev} -> {ll}")
        trace.append(ll)
        denom = max(abs(prev), 1e-12)
        if prev != -math.inf and abs(ll - prev) / denom < tol:
            converged = True
            break

    params.poi_tables = _poi_marginal_tables(params, pairs)
    params.validate()
    return params, EmReport(trace, iterations, converged)


def _poi_marginal_tables(params: MatiParams,
                         pairs: Sequence[tuple[str, str]]) -> dict[str, list[np.ndarray]]:
    """Backoff chain per POI: mean of the POI's observed pair joints."""
    sums: dict[str, np.ndarray] = {}
    counts: dict[str, int] = {}
    for user, poi in pairs:
        joint = joint_from_chain(params.pair_tables[(user, poi)])
        if poi in sums:
            sums[poi] += joint
        else:
            sums[poi] = joint.copy()
        counts[poi] = counts.get(poi, 0) + 1
    return {poi: chain_from_joint(sums[poi] / counts[poi]) for poi in sums}


def mati_score_components(user: str, poi: str, params: MatiParams,
                          user_profile: SlabProfile | None,
                          poi_profile: SlabProfile | None,
                          pr_nu: float) -> tuple[float, float]:
    """Raw (shared-activity, depth) pair for one candidate.

    Depth is the average joint probability over all slab assignments; a
    missing profile contributes zero shared activity.
    """
    if user_profile is None or poi_profile is None:
        psi = 0.0
    else:
        try:
            psi = psi_shared_activity(user_profile, poi_profile)
        except DataError:
            psi = 0.0
    joint = joint_from_chain(params.tables_for(user, poi))
    depth = pr_nu * float(joint.mean())
    return psi, depth


def mati_scores(user: str, candidates: Sequence[str], params: MatiParams,
                user_profile: SlabProfile | None,
                poi_profiles: Mapping[str, SlabProfile],
                pr_nu_map: Mapping[str, float], phi_t: float) -> dict[str, float]:
    """Mixture score over a candidate set.

    Both components are max-normalized per query user before mixing:
    phi_t * shared_activity + (1 - phi_t) * depth.
    """
    if not 0 <= phi_t <= 1:
        raise ConfigError(f"phi_t must be in [0,1], got {phi_t}")
    psi_raw: dict[str, float] = {}
    depth_raw: dict[str, float] = {}
    for l in candidates:
        psi, depth = mati_score_components(user, l, params, user_profile,
                                           poi_profiles.get(l), pr_nu_map.get(l, 0.0))
        psi_raw[l] = psi
        depth_raw[l] = depth
    psi_n = _max_normalize(psi_raw)
    depth_n = _max_normalize(depth_raw)
    return {l: phi_t * psi_n[l] + (1 - phi_t) * depth_n[l] for l in candidates}


def _max_normalize(scores: dict[str, float]) -> dict[str, float]:
    if not scores:
        return {}
    top = max(scores.values())
    if top <= 0:
        return dict(scores)
    return {k: v / top for k, v in scores.items()}


def params_to_json(params: MatiParams, fingerprint: str = "") -> str:
    payload = {
        "format_version": PARAMS_FORMAT_VERSION,
        "fingerprint": fingerprint,
        "slab_checksum": params.slab_checksum,
        "layout": {"levels": list(params.layout.levels), "shape": list(params.layout.shape)},
        "pr_nu": {f"{u}\t{l}": v for (u, l), v in sorted(params.pr_nu.items())},
        "pair_tables": {f"{u}\t{l}": [t.tolist() for t in tables]
                        for (u, l), tables in sorted(params.pair_tables.items())},
        "poi_tables": {poi: [t.tolist() for t in tables]
                       for poi, tables in sorted(params.poi_tables.items())},
        "global_table": ([t.tolist() for t in params.global_table]
                         if params.global_table is not None else None),
    }
    return json.dumps(payload, sort_keys=True)


def params_from_json(text: str, expected_checksum: str | None = None) -> MatiParams:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"unreadable model parameters: {exc}") from exc
    if payload.get("format_version") != PARAMS_FORMAT_VERSION:
        raise DataError(f"unsupported parameter format {payload.get('format_version')!r}")
    if expected_checksum is not None and payload["slab_checksum"] != expected_checksum:
        raise DataError("model parameters were trained against a different slab index; refusing")
    layout = ChainLayout(tuple(payload["layout"]["levels"]), tuple(payload["layout"]["shape"]))

    def split(key: str) -> tuple[str, str]:
        u, _, l = key.partition("\t")
        return u, l

    params = MatiParams(
        layout=layout,
        pr_nu={split(k): float(v) for k, v in payload["pr_nu"].items()},
        pair_tables={split(k): [np.asarray(t) for t in tables]
                     for k, tables in payload["pair_tables"].items()},
        poi_tables={poi: [np.asarray(t) for t in tables]
                    for poi, tables in payload["poi_tables"].items()},
        global_table=([np.asarray(t) for t in payload["global_table"]]
                      if payload["global_table"] is not None else None),
        slab_checksum=payload["slab_checksum"],
    )
    params.validate()
    return params
