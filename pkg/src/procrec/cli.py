"""Command-line entry point for reproducible end-to-end runs.

Commands: ``generate`` (synthetic dataset), ``train`` (single model fit),
``evaluate`` (nested CV comparison of models), ``recommend`` (score a raw
event against a trained model), ``audit`` (leakage check of a CV trace).

Configuration precedence: command-line flags override config-file values,
which override built-in defaults. All randomness derives from one global
seed via named sub-seeds, so every command is a pure function of its
inputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from . import baselines, bpr, cv, dataset as ds, features, fm, metrics
from .config import derive_seed, resolve_config

logger = logging.getLogger(__name__)

MODEL_NAMES = ("fm", "fm-ablated", "popularity")


def _setup_logging(verbose: bool) -> None:
    level = os.environ.get("PROCREC_LOG_LEVEL", "INFO" if verbose else "WARNING")
    logging.basicConfig(
        level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr
    )


def _global_seed(args, config: dict) -> int:
    return args.seed if args.seed is not None else int(config.get("seed", 0))


def _load_dataset(args, config: dict) -> ds.InteractionDataset:
    opts = config["dataset"]
    exclude = ds.read_exclusion_list(args.exclude) if getattr(args, "exclude", None) else None
    data = ds.load(
        args.data,
        exclude_event_ids=exclude,
        min_token_count=int(opts["min_token_count"]),
        binary_bow=bool(opts["binary_bow"]),
    )
    if opts.get("filter_suppliers", True):
        data = ds.filter_suppliers(data)
    return data


def _fmt(x: float) -> str:
    return repr(float(x))


GENERATOR_FLAG_FIELDS = (
    "n_events",
    "n_suppliers",
    "n_purchasers",
    "n_regions",
    "base_participation_rate",
    "affinity_boost",
)


def cmd_generate(args) -> int:
    config = resolve_config(args.config)
    seed = _global_seed(args, config)
    gen_opts = dict(config["generator"])
    for name in GENERATOR_FLAG_FIELDS:
        value = getattr(args, name)
        if value is not None:
            gen_opts[name] = value
    gen_opts.setdefault("seed", derive_seed(seed, "generate"))
    gen_config = ds.GeneratorConfig.from_dict(gen_opts)
    records = ds.generate_synthetic_records(gen_config)
    data = ds.dataset_from_records(
        records, min_token_count=int(config["dataset"]["min_token_count"])
    )
    ds.write_jsonl(records, args.out)
    summary = {
        "events": data.n_events,
        "suppliers": data.n_suppliers,
        "interactions": data.n_interactions,
        "sparsity": ds.sparsity(data),
    }
    Path(str(args.out) + ".summary.json").write_text(
        json.dumps(summary, sort_keys=True) + "\n"
    )
    print(f"wrote {data.n_events} events to {args.out}")
    print(
        f"suppliers={data.n_suppliers} interactions={data.n_interactions} "
        f"sparsity={100 * summary['sparsity']:.2f}%"
    )
    return 0


def _fit_model(name: str, data: ds.InteractionDataset, train_config: bpr.TrainConfig):
    """Returns (payload, schema_used, probe_losses or None)."""
    if name == "popularity":
        model = baselines.train_popularity(data)
        return model, data.schema, None
    if name == "fm-ablated":
        data = baselines.ablate_to_purchaser_only(data)
    result = bpr.train(data, train_config)
    return result.params, data.schema, result.probe_loss


def cmd_train(args) -> int:
    config = resolve_config(args.config)
    seed = _global_seed(args, config)
    data = _load_dataset(args, config)
    train_config = bpr.TrainConfig.from_dict(
        {**config["train"], "seed": derive_seed(seed, "train")}
    )
    payload, schema, probe = _fit_model(args.model, data, train_config)

    model_path = Path(args.model_out)
    if args.model == "popularity":
        baselines.save_popularity(payload, schema, model_path)
    else:
        fm.save_model(payload, schema, model_path)
    schema_path = Path(args.schema_out) if args.schema_out else model_path.with_suffix(
        ".schema.json"
    )
    schema.save(schema_path)
    print(f"wrote model to {model_path} and schema to {schema_path}")

    if probe is not None:
        probe_path = (
            Path(args.probe_out)
            if args.probe_out
            else model_path.with_suffix(".probe.csv")
        )
        with probe_path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "mean_pair_loss"])
            for epoch, loss in enumerate(probe):
                writer.writerow([epoch, _fmt(loss)])
        print(f"wrote probe loss curve to {probe_path}")
    return 0


def _cv_for_model(name: str, data, grid, eval_opts, seed, trace, n_jobs):
    common = dict(
        n_outer=int(eval_opts["n_outer"]),
        n_inner=int(eval_opts["n_inner"]),
        selection_metric=eval_opts["selection_metric"],
        selection_k=int(eval_opts["selection_k"]),
        ks=[int(k) for k in eval_opts["ks"]],
        seed=seed,
        trace=trace,
        n_jobs=n_jobs,
    )
    if name == "fm":
        return cv.run_nested_cv(data, grid, **common)
    if name == "fm-ablated":
        return cv.run_nested_cv(
            baselines.ablate_to_purchaser_only(data), grid, **common
        )
    if name == "popularity":
        return cv.run_nested_cv(
            data, None, trainer=baselines.popularity_trainer, **common
        )
    raise ValueError(f"unknown model {name!r}")


def cmd_evaluate(args) -> int:
    config = resolve_config(args.config)
    seed = _global_seed(args, config)
    models = [m.strip() for m in args.models.split(",") if m.strip()]
    if not models:
        raise ValueError("no models requested")
    for m in models:
        if m not in MODEL_NAMES:
            raise ValueError(f"unknown model {m!r}; choose from {MODEL_NAMES}")

    data = _load_dataset(args, config)
    grid = cv.HyperGrid.from_dict(config["grid"])
    eval_opts = config["evaluate"]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    results: dict[str, cv.CVResult] = {}
    traces: dict[str, list] = {}
    for name in models:
        trace: list = []
        results[name] = _cv_for_model(
            name, data, grid, eval_opts, seed, trace, args.jobs
        )
        traces[name] = trace
        audit = cv.leakage_audit(trace)
        if not audit.ok:
            raise RuntimeError(
                f"leakage audit failed for {name}: {audit.violations[:3]}"
            )

    _write_metrics_csv(out_dir / "metrics.csv", results)
    _write_plot_csv(out_dir / "plot_data.csv", results)
    report = {
        "seed": seed,
        "selection": {
            "metric": eval_opts["selection_metric"],
            "k": int(eval_opts["selection_k"]),
            "note": "inner-loop selection objective is a harness default",
        },
        "dataset": {
            "events": data.n_events,
            "suppliers": data.n_suppliers,
            "interactions": data.n_interactions,
        },
        "models": {name: results[name].to_dict() for name in models},
    }
    (out_dir / "report.json").write_text(
        json.dumps(report, sort_keys=True, indent=2) + "\n"
    )
    if args.trace:
        with (out_dir / "trace.jsonl").open("w") as fh:
            for name in models:
                for rec in traces[name]:
                    fh.write(json.dumps({"model": name, **rec}, sort_keys=True) + "\n")
    _print_table(results)
    print(f"wrote metrics to {out_dir}")
    return 0


def _write_metrics_csv(path: Path, results: dict[str, cv.CVResult]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["model", "fold", "k", "precision", "recall", "ndcg", "n_events"]
        )
        for name, result in results.items():
            for fold in result.per_fold:
                for r in fold.reports:
                    writer.writerow(
                        [
                            name,
                            fold.fold,
                            r.k,
                            _fmt(r.mean_precision),
                            _fmt(r.mean_recall),
                            _fmt(r.mean_ndcg),
                            r.n_events_evaluated,
                        ]
                    )
            for r in result.aggregate:
                writer.writerow(
                    [
                        name,
                        "mean",
                        r.k,
                        _fmt(r.mean_precision),
                        _fmt(r.mean_recall),
                        _fmt(r.mean_ndcg),
                        r.n_events_evaluated,
                    ]
                )


def _write_plot_csv(path: Path, results: dict[str, cv.CVResult]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "k", "metric", "value"])
        for name, result in results.items():
            for r in result.aggregate:
                for metric in ("precision", "recall", "ndcg"):
                    writer.writerow(
                        [name, r.k, metric, _fmt(getattr(r, f"mean_{metric}"))]
                    )


def _print_table(results: dict[str, cv.CVResult]) -> None:
    print(f"{'model':<12} {'k':>4} {'precision':>10} {'recall':>10} {'ndcg':>10}")
    for name, result in results.items():
        for r in result.aggregate:
            print(
                f"{name:<12} {r.k:>4} {r.mean_precision:>10.4f} "
                f"{r.mean_recall:>10.4f} {r.mean_ndcg:>10.4f}"
            )


def cmd_recommend(args) -> int:
    schema = features.FeatureSchema.load(args.schema)
    params = fm.load_model(args.model, schema)
    event = json.loads(Path(args.event).read_text())
    event_vec = features.encode_event(event, schema)
    scores = fm.score_all_suppliers(params, event_vec, schema)
    order = metrics.rank_suppliers(scores)[: max(1, args.k)]
    for rank, s in enumerate(order, start=1):
        print(f"{rank}\t{schema.supplier_ids[int(s)]}\t{_fmt(scores[int(s)])}")
    return 0


def cmd_audit(args) -> int:
    records = []
    with Path(args.trace).open() as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    by_model: dict[str, list] = {}
    for rec in records:
        by_model.setdefault(rec.get("model", ""), []).append(rec)
    any_violation = False
    for name, recs in by_model.items():
        report = cv.leakage_audit(recs)
        label = name or "<run>"
        if report.ok:
            print(f"{label}: ok ({report.n_folds} folds, no violations)")
        else:
            any_violation = True
            print(f"{label}: {len(report.violations)} violation(s)")
            for v in report.violations:
                print(f"  {v}")
    return 1 if any_violation else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="procrec",
        description="Cold-start supplier recommendation for procurement events",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--n-events", type=int, default=None, dest="n_events")
    p.add_argument("--n-suppliers", type=int, default=None, dest="n_suppliers")
    p.add_argument("--n-purchasers", type=int, default=None, dest="n_purchasers")
    p.add_argument("--n-regions", type=int, default=None, dest="n_regions")
    p.add_argument(
        "--base-participation-rate",
        type=float,
        default=None,
        dest="base_participation_rate",
    )
    p.add_argument(
        "--affinity-boost", type=float, default=None, dest="affinity_boost"
    )
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one model on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--model", choices=MODEL_NAMES, default="fm")
    p.add_argument("--model-out", required=True)
    p.add_argument("--schema-out", default=None)
    p.add_argument("--probe-out", default=None)
    p.add_argument("--exclude", default=None, help="event_id exclusion list file")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="nested-CV comparison of models")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--models", default="fm,fm-ablated,popularity")
    p.add_argument("--out", required=True)
    p.add_argument("--trace", action="store_true", help="write fold trace JSONL")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--exclude", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("recommend", help="rank suppliers for a raw event")
    p.add_argument("--model", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--event", required=True, help="JSON file with one event object")
    p.add_argument("-k", type=int, default=10)
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("audit", help="leakage-audit a fold trace")
    p.add_argument("--trace", required=True)
    p.set_defaults(func=cmd_audit)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.verbose)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
