"""Command-line front end tying the pipeline stages together.

Subcommands: ingest, stats, slabs, train, recommend, evaluate, tune.  Every
artifact carries the run fingerprint (config hash + seed + input checksums).
Exit codes: 0 ok, 2 config error, 3 data error, 4 invariant breach.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import evaluation as ev
from . import ingest as ing
from .config import RunConfig, file_checksum, fingerprint, load_config
from .errors import ConfigError, DataError, MatirecError
from .hybrid import decisions_csv
from .mati import params_from_json, params_to_json
from .pipeline import build_slab_index, train_models
from .sampling import coverage_csv
from .slabs import SlabIndex, similarity_csv


def _load_log(cfg: RunConfig) -> ing.CheckInLog:
    if not cfg.data.checkins:
        raise ConfigError("data.checkins is required")
    fmt = ing.ColumnFormat.parse(cfg.data.column_format)
    log = ing.parse_checkins(cfg.data.checkins, fmt, on_error=cfg.data.on_error)
    if cfg.data.social:
        log = log.with_social(ing.parse_social(cfg.data.social).edges)
    return log


def _fingerprint(cfg: RunConfig) -> str:
    sums = {}
    for name in ("checkins", "social"):
        path = getattr(cfg.data, name)
        if path and Path(path).exists():
            sums[name] = file_checksum(path)
    return fingerprint(cfg, sums)


def _write(out_dir: Path, name: str, text: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    path.write_text(text, encoding="utf-8")
    return path


def cmd_ingest(cfg: RunConfig, args) -> int:
    log = _load_log(cfg)
    out = Path(args.out)
    stamp = f"# fingerprint={_fingerprint(cfg)}\n"
    _write(out, "checkins.tsv", stamp + ing.serialize_log(log))
    _write(out, "social.tsv", stamp + ing.serialize_social(log))
    summary = {
        "fingerprint": _fingerprint(cfg),
        "checkins": len(log.checkins),
        "social_edges": len(log.social_edges),
        "skipped_lines": log.skipped_lines,
    }
    _write(out, "ingest.json", json.dumps(summary, sort_keys=True, indent=1))
    print(f"ingested {len(log.checkins)} check-ins, {len(log.social_edges)} edges "
          f"({log.skipped_lines} lines skipped)")
    return 0


def cmd_stats(cfg: RunConfig, args) -> int:
    log = _load_log(cfg)
    stats = ing.dataset_stats(log)
    text = f"fingerprint={_fingerprint(cfg)}\n" + stats.report()
    if args.out:
        out = Path(args.out)
        stamp = f"# fingerprint={_fingerprint(cfg)}\n"
        _write(out, "stats.txt", text)
        from .univariate import act_histogram, act_observations, histogram_csv
        user_acts, poi_acts = act_observations(log, cfg.utc_offset_seconds())
        _write(out, "user_act_histogram.csv", stamp + histogram_csv(act_histogram(user_acts)))
        _write(out, "poi_act_histogram.csv", stamp + histogram_csv(act_histogram(poi_acts)))
    print(text, end="")
    return 0


def cmd_slabs(cfg: RunConfig, args) -> int:
    log = _load_log(cfg)
    artifacts = build_slab_index(log, cfg)
    out = Path(args.out)
    stamp = f"# fingerprint={_fingerprint(cfg)}\n"
    _write(out, "slab_index.json", artifacts.index.to_json(fingerprint=_fingerprint(cfg)))
    _write(out, "coverage.csv", stamp + coverage_csv(artifacts.coverage))
    for name, matrix in artifacts.matrices.items():
        _write(out, f"similarity_{name}.csv", stamp + similarity_csv(matrix))
    counts = artifacts.index.slab_counts()
    print(f"slab index written: {counts} -> {len(artifacts.index.multi_slabs)} multi-aspect slabs")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    log = _load_log(cfg)
    index = SlabIndex.from_json(Path(args.slabs).read_text(encoding="utf-8"))
    from .pipeline import SlabArtifacts
    models = train_models(log, cfg, SlabArtifacts(index, {}, []))
    out = Path(args.out)
    _write(out, "mati_params.json", params_to_json(models.params, fingerprint=_fingerprint(cfg)))
    report = {
        "fingerprint": _fingerprint(cfg),
        "log_likelihood": models.em_report.log_likelihood,
        "iterations": models.em_report.iterations,
        "converged": models.em_report.converged,
        "slab_checksum": models.params.slab_checksum,
    }
    _write(out, "em_report.json", json.dumps(report, sort_keys=True, indent=1))
    _write(out, "geo_model.json", _geo_json(models, cfg))
    print(f"EM finished in {models.em_report.iterations} iterations "
          f"(converged={models.em_report.converged})")
    return 0


def _geo_json(models, cfg: RunConfig) -> str:
    geo = models.components.geo
    return json.dumps({"fingerprint": _fingerprint(cfg), "log_a": geo.log_a,
                       "b": geo.b, "d_min_km": geo.d_min_km}, sort_keys=True, indent=1)


def cmd_recommend(cfg: RunConfig, args) -> int:
    if args.n < 1:
        raise ConfigError("--n must be >= 1")
    log = _load_log(cfg)
    index = SlabIndex.from_json(Path(args.slabs).read_text(encoding="utf-8"))
    if args.params:
        params_from_json(Path(args.params).read_text(encoding="utf-8"),
                         expected_checksum=index.checksum)
    from .pipeline import SlabArtifacts
    models = train_models(log, cfg, SlabArtifacts(index, {}, []))
    model = models.get(args.model)
    lines = ["user_id,rank,poi_id,score,path"]
    for user in args.user:
        if user not in log.by_user:
            raise DataError(f"unknown user {user!r}")
        items = model.recommend(user, args.n)
        scores = {}
        if items and hasattr(model, "score"):
            pool = models.components.candidates_for(user)
            scores = model.score(user, pool)
        path = args.model
        if args.model == "hybrid" and models.recommenders["hybrid"].decisions:
            path = models.recommenders["hybrid"].decisions[-1].path
        for rank, poi in enumerate(items, start=1):
            rendered = repr(scores[poi]) if poi in scores else ""
            lines.append(f"{user},{rank},{poi},{rendered},{path}")
        if len(items) < args.n:
            print(f"note: short list for {user}: {len(items)} < {args.n}", file=sys.stderr)
    text = f"# fingerprint={_fingerprint(cfg)}\n" + "\n".join(lines) + "\n"
    if args.out:
        _write(Path(args.out), "recommendations.csv", text)
    print(text, end="")
    return 0


def cmd_evaluate(cfg: RunConfig, args) -> int:
    log = _load_log(cfg)
    split = ev.split_exclude(log, cfg.eval.x, cfg.seed, cfg.eval.test_fraction)
    models = train_models(split.train_log, cfg)
    chosen = [models.get(name) for name in cfg.eval.model_list()]
    report = ev.evaluate(chosen, split, ns=cfg.eval.n_list(), fingerprint=_fingerprint(cfg))
    out = Path(args.out)
    _write(out, "eval_report.json", report.to_json())
    _write(out, "geo_model.json", _geo_json(models, cfg))
    _write(out, "eval_users.csv", f"# fingerprint={report.fingerprint}\n" + report.rows_csv())
    hybrid = models.recommenders.get("hybrid")
    if hybrid is not None and hybrid.decisions:
        run_stamp = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
        _write(out, "decisions.csv", f"# fingerprint={report.fingerprint}\n"
               + decisions_csv(hybrid.decisions, run_stamp))
    for model in sorted(report.aggregates):
        for n in report.ns:
            m = report.aggregates[model][n]
            print(f"{model}@{n}: precision={m['precision']:.4f} recall={m['recall']:.4f} "
                  f"f1={m['f1']:.4f} failure_rate={m['failure_rate']:.4f}")
    return 0


def _parse_grid(spec: str) -> list[float]:
    parts = spec.split(":")
    if len(parts) == 3:
        lo, hi, step = (float(p) for p in parts)
        if step <= 0 or hi < lo:
            raise ConfigError(f"bad grid spec {spec!r}")
        out = []
        v = lo
        while v <= hi + 1e-12:
            out.append(round(v, 12))
            v += step
        return out
    try:
        return [float(p) for p in spec.split(",")]
    except ValueError as exc:
        raise ConfigError(f"bad grid spec {spec!r}") from exc


TUNABLE = ("phi_t", "alpha", "beta", "xi")


def cmd_tune(cfg: RunConfig, args) -> int:
    if args.param not in TUNABLE:
        raise ConfigError(f"--param must be one of {TUNABLE}, got {args.param!r}")
    grid = _parse_grid(args.grid)
    metric, _, n_str = args.objective.partition("@")
    objective = (metric, int(n_str or 5))
    log = _load_log(cfg)
    # Tuning population: active and semi-active users only, sampled at 20%.
    split = ev.split_exclude(log, cfg.eval.x, cfg.seed, cfg.eval.test_fraction,
                             min_checkins=cfg.sampling.strata_high)
    models = train_models(split.train_log, cfg)

    def build(value: float):
        from dataclasses import replace
        from .pipeline import MatiRecommender, UsgRecommender, UsgtRecommender
        if args.param == "phi_t":
            return MatiRecommender(models.components, models.params,
                                   models.user_profiles, models.poi_profiles, value)
        if args.param in ("alpha", "beta"):
            tuned = replace(cfg.usg, **{args.param: value})
            tuned.validate()
            models.components.set_weights(tuned.weights())
            return UsgRecommender(models.components)
        tuned_cfg = replace(cfg, univariate=replace(cfg.univariate, xi=value))
        return UsgtRecommender(models.components, tuned_cfg)

    result = ev.tune_sweep(args.param, grid, build, split, objective)
    out = Path(args.out)
    _write(out, "tune_curve.csv", f"# fingerprint={_fingerprint(cfg)}\n" + result.curve_csv())
    _write(out, "tune_best.json", json.dumps(
        {"parameter": result.parameter, "best_value": result.best_value,
         "objective": result.objective, "fingerprint": _fingerprint(cfg)},
        sort_keys=True, indent=1))
    print(f"best {result.parameter} = {result.best_value} by {result.objective}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="matirec",
                                     description="Temporal-slab POI recommendation pipeline")
    parser.add_argument("--config", help="path to the run config file")
    parser.add_argument("--seed", type=int, help="override run.seed")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("ingest").add_argument("--out", default="out")
    p = sub.add_parser("stats")
    p.add_argument("--out", default="")
    sub.add_parser("slabs").add_argument("--out", default="out")
    p = sub.add_parser("train")
    p.add_argument("--slabs", required=True, help="slab_index.json from the slabs stage")
    p.add_argument("--out", default="out")
    p = sub.add_parser("recommend")
    p.add_argument("--slabs", required=True)
    p.add_argument("--params", default="", help="trained mati_params.json (checksum-checked)")
    p.add_argument("--user", action="append", required=True)
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--model", default="hybrid")
    p.add_argument("--out", default="")
    sub.add_parser("evaluate").add_argument("--out", default="out")
    p = sub.add_parser("tune")
    p.add_argument("--param", required=True)
    p.add_argument("--grid", required=True, help="lo:hi:step or comma list")
    p.add_argument("--objective", default="f1@5")
    p.add_argument("--out", default="out")
    return parser


COMMANDS = {
    "ingest": cmd_ingest,
    "stats": cmd_stats,
    "slabs": cmd_slabs,
    "train": cmd_train,
    "recommend": cmd_recommend,
    "evaluate": cmd_evaluate,
    "tune": cmd_tune,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        return COMMANDS[args.command](cfg, args)
    except MatirecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
