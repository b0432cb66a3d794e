"""Training and recommendation wiring: builds every model from a training log.

This is the glue between the library modules and the CLI / evaluation
harness.  All recommenders share one candidate rule (every known POI the
user has not visited in the training view, ties broken by POI id) and one
ranked list per (user, n) so that top-N lists are nested by construction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import baselines as bl
from . import univariate as uv
from .config import RunConfig, SEED_MF, SEED_SAMPLING
from .errors import ConfigError, DataError
from .hybrid import Decision, HybridConfig, avg_shared_activity, decide
from .ingest import CheckInLog
from .mati import MatiParams, EmReport, mati_scores, run_em
from .sampling import CoverageRow, collect_until
from .slabs import (SlabIndex, SlotSimilarityMatrix, aggregate_similarity, all_slab_profiles,
                    build_factor, complete_matrix, hac_complete_linkage)

logger = logging.getLogger(__name__)

PR_NU_FLOOR = 1e-12


@dataclass
class SlabArtifacts:
    index: SlabIndex
    matrices: dict[str, SlotSimilarityMatrix]
    coverage: list[CoverageRow]


def build_slab_index(log: CheckInLog, cfg: RunConfig) -> SlabArtifacts:
    """Sampling -> similarity aggregation -> completion -> clustering -> cross product."""
    offset = cfg.utc_offset_seconds()
    factors = [build_factor(name, offset) for name in cfg.factors.factor_names()]
    samples, coverage, _ = collect_until(
        log, factors, m_min=cfg.sampling.m_min, n_percent=cfg.sampling.n_percent,
        max_rounds=cfg.sampling.max_rounds, seed=cfg.seed * 1000 + SEED_SAMPLING,
        thresholds=(cfg.sampling.strata_low, cfg.sampling.strata_high),
        binary=cfg.factors.binary_vectors)
    matrices = {}
    slab_sets = {}
    for f in factors:
        matrix = aggregate_similarity(samples[f.name], m_min=cfg.sampling.m_min)
        if not matrix.observed.all():
            # Degrade the rank to what the observed cells can support.
            observed_cells = int(np.triu(matrix.observed).sum())
            rank = max(1, min(cfg.mf.rank, f.slot_count - 1, observed_cells // f.slot_count))
            if rank < cfg.mf.rank:
                logger.warning("factor %s: degrading completion rank %d -> %d "
                               "(%d observed cells)", f.name, cfg.mf.rank, rank, observed_cells)
            matrix = complete_matrix(matrix, rank=rank, reg=cfg.mf.reg, iters=cfg.mf.iters,
                                     tol=cfg.mf.tol, seed=cfg.seed * 1000 + SEED_MF)
        matrices[f.name] = matrix
        slab_sets[f.name] = hac_complete_linkage(matrix, cfg.factors.threshold_for(f.name))
    return SlabArtifacts(SlabIndex(factors, slab_sets), matrices, coverage)


class UsgComponents:
    """Shared scoring state for the CF + social + geo mixture."""

    def __init__(self, log: CheckInLog, cfg: RunConfig):
        self.log = log
        self.cfg = cfg
        self.matrix = bl.UserPoiMatrix(log)
        self.friends = bl.friend_map(log)
        self.coords = bl.poi_coordinates(log)
        self.weights = cfg.usg.weights()
        self.k_neighbors = cfg.usg.k_neighbors
        try:
            self.geo = bl.fit_geo_model(log, bin_km=cfg.usg.bin_km, d_min_km=cfg.usg.d_min_km)
        except DataError:
            # Degenerate geography (single distance bin): neutral flat model.
            logger.warning("geo fit degenerate; using a flat distance model")
            self.geo = bl.GeoModel(log_a=0.0, b=0.0, d_min_km=cfg.usg.d_min_km)
        self._neighbor_cache: dict[str, list[tuple[str, float]]] = {}
        self._usg_cache: dict[str, dict[str, float]] = {}
        self._candidate_cache: dict[str, list[str]] = {}

    def candidates_for(self, user: str) -> list[str]:
        if user not in self._candidate_cache:
            self._candidate_cache[user] = self.matrix.candidates_for(user)
        return self._candidate_cache[user]

    def neighbors(self, user: str) -> list[tuple[str, float]]:
        if user not in self._neighbor_cache:
            self._neighbor_cache[user] = bl.top_neighbors(self.matrix, user, self.k_neighbors)
        return self._neighbor_cache[user]

    def set_weights(self, weights: bl.UsgWeights) -> None:
        """Swap mixing weights (tuning); invalidates cached mixed scores."""
        self.weights = weights
        self._usg_cache.clear()

    def component_scores(self, user: str, pois: list[str],
                         exclude_poi: str | None = None) -> tuple[dict, dict, dict]:
        """Raw (cf, social, geo) maps; exclude_poi gives the leave-one-out view."""
        if exclude_poi is None:
            neighbors = self.neighbors(user)
        else:
            neighbors = bl.top_neighbors(self.matrix, user, self.k_neighbors,
                                         exclude_poi=exclude_poi)
        cf = {p: bl.ubcf_from_neighbors(neighbors, p, self.matrix) for p in pois}
        weights = bl.friend_weights(self.matrix, self.friends, user, exclude_poi)
        social = {p: bl.social_from_weights(weights, p, self.matrix) for p in pois}
        history = [poi for poi in sorted(self.matrix.pois_of.get(user, frozenset()))
                   if poi != exclude_poi]
        history_coords = [self.coords[poi] for poi in history]
        geo = bl.geo_scores(history_coords, pois, self.coords, self.geo)
        return cf, social, geo

    def ubcf_scores(self, user: str, pois: list[str]) -> dict[str, float]:
        neighbors = self.neighbors(user)
        return {p: bl.ubcf_from_neighbors(neighbors, p, self.matrix) for p in pois}

    def usg_scores(self, user: str, pois: list[str],
                   exclude_poi: str | None = None) -> dict[str, float]:
        # The normalization set is the requested pois; full-pool calls are
        # the hot path during evaluation, so cache those per user.
        cacheable = exclude_poi is None and pois == self.candidates_for(user)
        if cacheable and user in self._usg_cache:
            return self._usg_cache[user]
        cf, social, geo = self.component_scores(user, pois, exclude_poi)
        cf_n, social_n, geo_n = (bl.max_normalize(cf), bl.max_normalize(social),
                                 bl.max_normalize(geo))
        scores = {p: bl.usg_score(cf_n[p], social_n[p], geo_n[p], self.weights)
                  for p in pois}
        if cacheable:
            self._usg_cache[user] = scores
        return scores

    def leave_one_out_c_star(self, user: str) -> dict[str, float]:
        """Per visited POI: its mixed score with that POI held out of the history.

        Components are computed in each leave-one-out context and
        max-normalized across the user's POIs before mixing, so the mixture
        weighting stays meaningful within the user.
        """
        pois = sorted(self.matrix.pois_of.get(user, frozenset()))
        cf, social, geo = {}, {}, {}
        for p in pois:
            c, s, g = self.component_scores(user, [p], exclude_poi=p)
            cf[p], social[p], geo[p] = c[p], s[p], g[p]
        cf_n, social_n, geo_n = (bl.max_normalize(cf), bl.max_normalize(social),
                                 bl.max_normalize(geo))
        return {p: bl.usg_score(cf_n[p], social_n[p], geo_n[p], self.weights) for p in pois}


class _RankedRecommender:
    """Shared recommend() on top of a per-user batch score function."""

    name = "base"

    def __init__(self, components: UsgComponents):
        self.components = components

    def score(self, user: str, candidates: list[str]) -> dict[str, float]:
        raise NotImplementedError

    def recommend(self, user_id: str, n: int) -> list[str]:
        candidates = self.components.candidates_for(user_id)
        if not candidates:
            return []
        ranked, _ = bl.rank_top_n(self.score(user_id, candidates), n)
        return ranked


class UbcfRecommender(_RankedRecommender):
    name = "ubcf"

    def score(self, user, candidates):
        return self.components.ubcf_scores(user, candidates)


class UsgRecommender(_RankedRecommender):
    name = "usg"

    def score(self, user, candidates):
        return self.components.usg_scores(user, candidates)


class _UnivariateRecommender:
    """Threshold framework over USG candidates (shared by both variants)."""

    name = "usgt"
    uniform_influence = False

    def __init__(self, components: UsgComponents, cfg: RunConfig):
        self.components = components
        self.cfg = cfg.univariate
        self.offset = cfg.utc_offset_seconds()
        self.acts = uv.all_poi_acts(components.log, self.offset)
        self._profiles: dict[str, uv.UserActProfile | None] = {}

    def _profile(self, user: str) -> uv.UserActProfile | None:
        if user not in self._profiles:
            try:
                if self.uniform_influence:
                    c_star = {p: 1.0 for p in self.components.matrix.pois_of.get(user, ())}
                else:
                    c_star = self.components.leave_one_out_c_star(user)
                self._profiles[user] = uv.effective_user_act(
                    user, self.components.log, self.cfg, c_star, self.offset)
            except DataError:
                self._profiles[user] = None
        return self._profiles[user]

    def recommend(self, user_id: str, n: int) -> list[str]:
        candidates = self.components.candidates_for(user_id)
        if not candidates:
            return []
        scores = self.components.usg_scores(user_id, candidates)
        pool, _ = bl.rank_top_n(scores, min(self.cfg.k * n, len(candidates)))
        profile = self._profile(user_id)
        if profile is None:
            return pool[:n]
        delta = {p: self.acts[p].act for p in pool}
        items, _, _ = uv.usgt_recommend(profile, self.cfg, pool, delta, n)
        return items


class UsgtRecommender(_UnivariateRecommender):
    name = "usgt"
    uniform_influence = False


class UbcftRecommender(_UnivariateRecommender):
    name = "ubcft"
    uniform_influence = True


class MatiRecommender:
    """Mixture of shared-activity extent and latent joint depth."""

    name = "mati"

    def __init__(self, components: UsgComponents, params: MatiParams,
                 user_profiles, poi_profiles, phi_t: float):
        self.components = components
        self.params = params
        self.user_profiles = user_profiles
        self.poi_profiles = poi_profiles
        self.phi_t = phi_t

    def score(self, user: str, candidates: list[str]) -> dict[str, float]:
        pr_nu = self.components.usg_scores(user, candidates)
        return mati_scores(user, candidates, self.params, self.user_profiles.get(user),
                           self.poi_profiles, pr_nu, self.phi_t)

    def recommend(self, user_id: str, n: int) -> list[str]:
        candidates = self.components.candidates_for(user_id)
        if not candidates:
            return []
        ranked, _ = bl.rank_top_n(self.score(user_id, candidates), n)
        return ranked


class HybridRecommender:
    """Route each user to the temporal or non-temporal path by mean overlap."""

    name = "hybrid"

    def __init__(self, usg: UsgRecommender, mati: MatiRecommender, cfg: HybridConfig,
                 psi_candidates: int | None = None):
        self.usg = usg
        self.mati = mati
        self.cfg = cfg
        self.psi_candidates = psi_candidates
        self.decisions: list[Decision] = []

    def _route(self, user_id: str, n: int) -> Decision | None:
        probe = self.usg.recommend(user_id, self.psi_candidates or n)
        if not probe:
            return None
        mean_psi = avg_shared_activity(self.mati.user_profiles.get(user_id), probe,
                                       self.mati.poi_profiles)
        decision = Decision(user_id, mean_psi, decide(mean_psi, self.cfg))
        self.decisions.append(decision)
        return decision

    def recommend(self, user_id: str, n: int) -> list[str]:
        if n < 1:
            raise ConfigError(f"list size must be >= 1, got {n}")
        decision = self._route(user_id, n)
        if decision is None:
            return []
        if decision.path == "temporal":
            return self.mati.recommend(user_id, n)
        return self.usg.recommend(user_id, n)

    def score(self, user_id: str, candidates: list[str]) -> dict[str, float]:
        """Scores from whichever path the user's latest decision routed to."""
        if self.decisions and self.decisions[-1].user_id == user_id:
            decision = self.decisions[-1]
        else:
            decision = self._route(user_id, self.psi_candidates or 5)
        if decision is not None and decision.path == "temporal":
            return self.mati.score(user_id, candidates)
        return self.usg.score(user_id, candidates)


@dataclass
class TrainedModels:
    components: UsgComponents
    slab_artifacts: SlabArtifacts
    params: MatiParams
    em_report: EmReport
    user_profiles: dict
    poi_profiles: dict
    recommenders: dict[str, object] = field(default_factory=dict)

    def get(self, name: str):
        if name not in self.recommenders:
            raise ConfigError(f"unknown model {name!r}; available: {sorted(self.recommenders)}")
        return self.recommenders[name]


def training_pr_nu(components: UsgComponents) -> dict[tuple[str, str], float]:
    """Non-temporal scores for every observed (user, poi) pair, per-user
    max-normalized and floored so every pair keeps support in the latent model."""
    out: dict[tuple[str, str], float] = {}
    for user in sorted(components.matrix.counts):
        pois = sorted(components.matrix.pois_of[user])
        scores = components.usg_scores(user, pois)
        top = max(scores.values()) if scores else 0.0
        for p in pois:
            value = scores[p] / top if top > 0 else 1.0
            out[(user, p)] = max(value, PR_NU_FLOOR)
    return out


def train_models(log: CheckInLog, cfg: RunConfig,
                 slab_artifacts: SlabArtifacts | None = None) -> TrainedModels:
    """Train every recommender family on the given (training-view) log."""
    components = UsgComponents(log, cfg)
    artifacts = slab_artifacts or build_slab_index(log, cfg)
    user_profiles, poi_profiles = all_slab_profiles(log, artifacts.index)
    pr_nu = training_pr_nu(components)
    params, report = run_em(log, artifacts.index, pr_nu, max_iter=cfg.mati.em_max_iter,
                            tol=cfg.mati.em_tol, gamma=cfg.mati.gamma)
    usg = UsgRecommender(components)
    mati = MatiRecommender(components, params, user_profiles, poi_profiles, cfg.mati.phi_t)
    recommenders = {
        "ubcf": UbcfRecommender(components),
        "usg": usg,
        "usgt": UsgtRecommender(components, cfg),
        "ubcft": UbcftRecommender(components, cfg),
        "mati": mati,
        "hybrid": HybridRecommender(usg, mati, cfg.hybrid),
    }
    return TrainedModels(components, artifacts, params, report,
                         user_profiles, poi_profiles, recommenders)
