"""Command-line entry point tying the pipeline together.

Subcommands: ``phantom`` (generate a synthetic dataset), ``ingest`` (build a
manifest from an image tree), ``cv`` (run the full cross-validated
evaluation), ``report`` (re-aggregate an existing results file),
``calibrate`` (threshold selection from pooled held-out probabilities), and
``explain`` (class-activation overlays and localization scores).

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .config import PipelineConfig, load_config, save_config
from .cvharness import (
    FoldResult,
    plan_folds,
    read_fold_results,
    run_cv,
    verify_no_leakage,
)
from .errors import ConfigurationError, HydroError, PlanningError
from .explain import (
    activation_mean,
    gradcam,
    localization_score,
    overlay,
    resize_mask,
    write_heatmap,
)
from .imops import load_grayscale, save_png, window_to_uint8
from .ingest import build_manifest, read_manifest, validate_manifest, write_manifest
from .model import load_checkpoint, predict_records
from .phantom import generate_dataset, load_mask, mask_paths
from .preprocess import center_crop_resize
from .stats import (
    METRIC_NAMES,
    aggregate_cv,
    calibrate_threshold,
    confusion,
    fold_metric_values,
    format_summary,
    threshold_sweep,
)


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _write_json(data, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_run_metadata(out_dir: Path, config: PipelineConfig, extra: dict) -> None:
    meta = {
        "version": __version__,
        "timestamp": _now(),
        "config": config.to_dict(),
    }
    meta.update(extra)
    _write_json(meta, out_dir / "run_metadata.json")


def cmd_phantom(args) -> int:
    manifest = generate_dataset(
        args.n_normal, args.n_path, args.seed, args.out, image_side=args.image_side, jpeg=args.jpeg
    )
    manifest_path = Path(args.out) / "manifest.jsonl"
    counts = manifest.class_counts
    print(f"wrote {len(manifest)} records ({counts}) -> {manifest_path}")
    print(manifest_path)
    return 0


def cmd_ingest(args) -> int:
    manifest = build_manifest(args.root, labeling=args.labeling)
    out = Path(args.out)
    write_manifest(manifest, out)
    report = validate_manifest(manifest)
    print(f"wrote {len(manifest)} records -> {out}")
    print(str(report))
    return 0 if report.ok else 1


def _fold_report_rows(results: list[FoldResult], threshold: float) -> list[dict]:
    rows = []
    per_metric = fold_metric_values(results, threshold)
    for i, fr in enumerate(results):
        probs = [pair[1] for pair in fr.test_probs]
        cm = confusion(fr.test_labels, probs, threshold)
        rows.append(
            {
                "rep": fr.rep,
                "fold": fr.fold,
                "n_test": len(fr.test_ids),
                "tp": cm.tp,
                "fp": cm.fp,
                "tn": cm.tn,
                "fn": cm.fn,
                "accuracy": per_metric["accuracy"][i],
                "sensitivity": per_metric["sensitivity"][i],
                "specificity": per_metric["specificity"][i],
                "best_val_loss": fr.best_val_loss,
                "epochs_run": fr.epochs_run,
            }
        )
    return rows


def _aggregate_and_write(results: list[FoldResult], config: PipelineConfig, out_dir: Path) -> list[str]:
    scfg = config.stats
    summaries = aggregate_cv(
        results,
        threshold=scfg.threshold,
        n_resamples=scfg.n_resamples,
        seed=scfg.seed,
        pooled=scfg.pooled,
    )
    lines = [f"{name}: {format_summary(summaries[name])}" for name in METRIC_NAMES]

    pooled_labels: list[str] = []
    pooled_probs: list[float] = []
    for fr in results:
        pooled_labels.extend(fr.test_labels)
        pooled_probs.extend(pair[1] for pair in fr.test_probs)
    _, sweep_rows = threshold_sweep(pooled_labels, pooled_probs)

    report = {
        "threshold": scfg.threshold,
        "n_resamples": scfg.n_resamples,
        "seed": scfg.seed,
        "pooled": scfg.pooled,
        "n_folds": len(results),
        "folds": _fold_report_rows(results, scfg.threshold),
        "summaries": {
            name: {
                "median": summaries[name].median,
                "p2_5": summaries[name].p2_5,
                "p97_5": summaries[name].p97_5,
                "n_resamples": summaries[name].n_resamples,
                "seed": summaries[name].seed,
                "formatted": format_summary(summaries[name]),
            }
            for name in METRIC_NAMES
        },
        "threshold_sweep": sweep_rows,
    }
    _write_json(report, out_dir / "report.json")
    (out_dir / "report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return lines


def cmd_cv(args) -> int:
    config = load_config(args.config)
    if args.manifest:
        config.manifest = args.manifest
    if args.out:
        config.out_dir = args.out
    if config.manifest is None:
        raise ConfigurationError("no manifest given (config 'manifest' key or --manifest)")
    manifest_path = Path(config.manifest)
    if not manifest_path.is_file():
        raise ConfigurationError(f"manifest not found: {manifest_path}")

    manifest = read_manifest(manifest_path)
    cv = config.cv
    plan = plan_folds(
        manifest,
        j=cv.j,
        k=cv.k,
        seed=cv.seed,
        group_by_patient=cv.group_by_patient,
        val_fraction=cv.val_fraction,
    )
    leak_report = verify_no_leakage(plan, manifest)
    if not leak_report.ok:
        raise PlanningError(f"fold plan failed leakage verification:\n{leak_report}")

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    workers = args.workers or min(os.cpu_count() or 1, cv.j * cv.k)
    results = run_cv(
        manifest,
        plan,
        head_cfg=config.head,
        train_cfg=config.train,
        augment_policy=config.augment,
        stats=config.normalization,
        n_workers=workers,
        results_path=out_dir / "fold_results.jsonl",
        resume=args.resume,
    )
    lines = _aggregate_and_write(results, config, out_dir)
    _write_run_metadata(
        out_dir,
        config,
        {"command": "cv", "workers": workers, "n_folds": len(results), "plan_seed": cv.seed},
    )
    save_config(config, out_dir / "config_snapshot.yaml")
    for line in lines:
        print(line)
    print(f"results: {out_dir / 'fold_results.jsonl'}")
    return 0


def cmd_report(args) -> int:
    config = load_config(args.config) if args.config else PipelineConfig()
    if args.threshold is not None:
        config.stats = replace(config.stats, threshold=args.threshold)
    if args.n_resamples is not None:
        config.stats = replace(config.stats, n_resamples=args.n_resamples)
    if args.seed is not None:
        config.stats = replace(config.stats, seed=args.seed)
    results = read_fold_results(args.results)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = _aggregate_and_write(results, config, out_dir)
    for line in lines:
        print(line)
    return 0


def cmd_calibrate(args) -> int:
    results = read_fold_results(args.results)
    labels: list[str] = []
    probs: list[float] = []
    for fr in results:
        labels.extend(fr.test_labels)
        probs.extend(pair[1] for pair in fr.test_probs)
    report = calibrate_threshold(labels, probs, objective=args.objective, constraint=args.constraint)
    payload = report.to_dict()
    if args.out:
        _write_json(payload, Path(args.out))
    if report.feasible:
        print(f"chosen threshold: {report.chosen_threshold}")
    else:
        print("infeasible: no threshold satisfies the constraint")
    return 0


def _iter_explain_records(args):
    if args.image:
        yield None, Path(args.image)
        return
    manifest = read_manifest(args.manifest)
    records = manifest.records
    if args.filter:
        if "=" not in args.filter:
            raise ConfigurationError(f"--filter must look like field=value: {args.filter!r}")
        key, value = args.filter.split("=", 1)
        records = [r for r in records if str(getattr(r, key, None)) == value]
    if args.limit is not None:
        records = records[: args.limit]
    for rec in records:
        yield rec, Path(rec.path)


def cmd_explain(args) -> int:
    if not args.image and not args.manifest:
        raise ConfigurationError("explain needs --image or --manifest")
    trained = load_checkpoint(args.checkpoint)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    scores: dict[str, dict] = {}
    count = 0
    for rec, path in _iter_explain_records(args):
        image = load_grayscale(path)
        image_id = rec.image_id if rec is not None else path.stem
        if args.target == "auto":
            probs = predict_records(trained, [rec]) if rec is not None else None
            if probs is None:
                from .preprocess import evaluation_pipeline
                from .model import predict_proba

                grid = evaluation_pipeline(image, trained.input_side, trained.stats)
                probs = predict_proba(trained, grid)
            target = "hydrocephalus" if probs[0][1] >= probs[0][0] else "normal"
            p_normal, p_path = float(probs[0][0]), float(probs[0][1])
        else:
            target = args.target
            p_normal = p_path = None

        heatmap = gradcam(trained, image, target)
        eval_view = window_to_uint8(center_crop_resize(image, trained.input_side))
        save_png(overlay(eval_view, heatmap, alpha=args.alpha), out_dir / f"{image_id}_overlay.png")
        act = activation_mean(trained, image)
        save_png(window_to_uint8(act * 255.0), out_dir / f"{image_id}_activation.png")
        write_heatmap(heatmap, out_dir / f"{image_id}_heatmap.bin")

        loc = None
        if rec is not None and rec.source == "phantom":
            ventricle_path, _ = mask_paths(rec)
            if ventricle_path.is_file():
                mask = resize_mask(load_mask(ventricle_path), trained.input_side)
                loc = localization_score(heatmap, mask)
        scores[image_id] = {
            "target_class": target,
            "p_normal": p_normal,
            "p_hydrocephalus": p_path,
            "localization": loc,
            "degenerate": heatmap.degenerate,
        }
        count += 1

    _write_json(scores, out_dir / "scores.json")
    if count == 0:
        print("warning: no images matched; nothing to explain", file=sys.stderr)
    else:
        print(f"explained {count} image(s) -> {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hydrocls", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a synthetic labeled dataset")
    p.add_argument("--n-normal", type=_positive_int, required=True)
    p.add_argument("--n-path", type=_positive_int, required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.add_argument("--image-side", type=int, default=256)
    p.add_argument("--jpeg", action="store_true", help="write JPEG images instead of PNG")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("ingest", help="build a manifest from an image tree")
    p.add_argument("--root", required=True)
    p.add_argument(
        "--labeling", choices=["by_subdirectory", "by_sidecar_file"], default="by_subdirectory"
    )
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("cv", help="run the cross-validated evaluation")
    p.add_argument("--config", required=True)
    p.add_argument("--manifest", help="override the config manifest path")
    p.add_argument("--out", help="override the config output directory")
    p.add_argument("--workers", type=_positive_int, default=None)
    p.add_argument("--resume", action="store_true", help="skip folds already in the results file")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("report", help="aggregate an existing fold-results file")
    p.add_argument("--results", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--n-resamples", type=_positive_int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("calibrate", help="choose an operating threshold")
    p.add_argument("--results", required=True)
    p.add_argument(
        "--objective",
        choices=["max_youden", "min_sensitivity_at", "min_specificity_at"],
        default="max_youden",
    )
    p.add_argument("--constraint", type=float, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("explain", help="class-activation overlays and scores")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", default=None)
    p.add_argument("--manifest", default=None)
    p.add_argument("--filter", default=None, help="manifest filter, e.g. label=hydrocephalus")
    p.add_argument("--limit", type=_positive_int, default=None)
    p.add_argument("--target", choices=["auto", "normal", "hydrocephalus"], default="auto")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_explain)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except HydroError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
