"""Repeated stratified cross-validation with leak-free three-way splits.

A plan assigns every record to train/validation/test for each (repetition,
fold) pair: per repetition the records (or patient groups) are shuffled with
a repetition-derived seed and dealt into k stratified folds; each fold in
turn is the test set while the rest split into train and validation. Running
the plan trains one fresh classifier per pair and collects its held-out test
probabilities, j*k results in total.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from multiprocessing import get_context
from pathlib import Path

import torch

from .errors import PlanningError, TrainingError
from .ingest import (
    LABELS,
    DatasetManifest,
    Finding,
    ImageRecord,
    ValidationReport,
)
from .model import (
    HeadConfig,
    TrainConfig,
    TrainedModel,
    backbone_checksum,
    build_classifier,
    freeze_backbone,
    head_checksum,
    predict_records,
    train_head,
)
from .preprocess import AugmentPolicy, NormalizationStats
from .seeding import derive_seed, rng_for


@dataclass(frozen=True)
class FoldAssignment:
    """Disjoint record-id triples for one (repetition, fold)."""

    train_ids: tuple[str, ...]
    val_ids: tuple[str, ...]
    test_ids: tuple[str, ...]


@dataclass
class FoldPlan:
    j: int
    k: int
    seed: int
    group_by_patient: bool
    val_fraction: float
    assignments: list[list[FoldAssignment]]  # indexed [rep][fold]

    def assignment(self, rep: int, fold: int) -> FoldAssignment:
        return self.assignments[rep][fold]


@dataclass
class FoldResult:
    """Held-out outcome of one trained fold."""

    rep: int
    fold: int
    test_ids: list[str]
    test_probs: list[tuple[float, float]]  # (p_normal, p_hydrocephalus) per id
    test_labels: list[str]
    best_val_loss: float
    epochs_run: int
    head_checksum: str
    backbone_checksum: str

    def to_dict(self) -> dict:
        return {
            "rep": self.rep,
            "fold": self.fold,
            "test_ids": list(self.test_ids),
            "test_probs": [[float(a), float(b)] for a, b in self.test_probs],
            "test_labels": list(self.test_labels),
            "best_val_loss": self.best_val_loss,
            "epochs_run": self.epochs_run,
            "head_checksum": self.head_checksum,
            "backbone_checksum": self.backbone_checksum,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FoldResult":
        return cls(
            rep=int(data["rep"]),
            fold=int(data["fold"]),
            test_ids=list(data["test_ids"]),
            test_probs=[(float(a), float(b)) for a, b in data["test_probs"]],
            test_labels=list(data["test_labels"]),
            best_val_loss=float(data["best_val_loss"]),
            epochs_run=int(data["epochs_run"]),
            head_checksum=data["head_checksum"],
            backbone_checksum=data["backbone_checksum"],
        )


def _build_groups(
    manifest: DatasetManifest, group_by_patient: bool
) -> list[tuple[str, str, list[int]]]:
    """(key, label, record indices) in first-appearance order."""
    groups: dict[str, list[int]] = {}
    order: list[str] = []
    for idx, rec in enumerate(manifest.records):
        key = rec.patient_id if group_by_patient else rec.image_id
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(idx)
    return [(key, manifest.records[groups[key][0]].label, groups[key]) for key in order]


def plan_folds(
    manifest: DatasetManifest,
    j: int = 5,
    k: int = 5,
    seed: int = 0,
    group_by_patient: bool = True,
    val_fraction: float = 0.2,
) -> FoldPlan:
    """Deterministic J-repetition, K-fold, three-way split plan.

    Stratified by class; when grouping is on, whole patients move together
    so no patient ever straddles two of train/val/test. Pure in (manifest
    record order, j, k, seed).
    """
    if j < 1:
        raise PlanningError("j must be >= 1")
    if k < 2:
        raise PlanningError("k must be >= 2")
    if not 0.0 < val_fraction < 1.0:
        raise PlanningError("val_fraction must lie in (0, 1)")
    if not manifest.records:
        raise PlanningError("manifest has no records")

    groups = _build_groups(manifest, group_by_patient)
    by_class: dict[str, list[int]] = {label: [] for label in LABELS}
    for gi, (_, label, _) in enumerate(groups):
        by_class.setdefault(label, []).append(gi)
    for label in LABELS:
        if 0 < len(by_class[label]) < k:
            raise PlanningError(
                f"class {label!r} has only {len(by_class[label])} groups; needs >= {k}"
            )
    present = [label for label in by_class if by_class[label]]

    def expand(group_idxs: list[int]) -> tuple[str, ...]:
        rec_idxs = sorted(i for gi in group_idxs for i in groups[gi][2])
        return tuple(manifest.records[i].image_id for i in rec_idxs)

    assignments: list[list[FoldAssignment]] = []
    for rep in range(j):
        rng = rng_for(seed, rep)
        permuted = {
            label: [by_class[label][i] for i in rng.permutation(len(by_class[label]))]
            for label in present
        }
        rep_assignments = []
        for fold in range(k):
            test_groups: list[int] = []
            rest_by_class: dict[str, list[int]] = {}
            for label in present:
                perm = permuted[label]
                test_groups.extend(perm[fold::k])
                rest_by_class[label] = [g for i, g in enumerate(perm) if i % k != fold]
            rng_fold = rng_for(seed, rep, fold)
            train_groups: list[int] = []
            val_groups: list[int] = []
            for label in present:
                rest = rest_by_class[label]
                order = [rest[i] for i in rng_fold.permutation(len(rest))]
                if len(order) <= 1:
                    n_val = 0
                else:
                    n_val = min(max(round(val_fraction * len(order)), 1), len(order) - 1)
                val_groups.extend(order[:n_val])
                train_groups.extend(order[n_val:])
            rep_assignments.append(
                FoldAssignment(
                    train_ids=expand(train_groups),
                    val_ids=expand(val_groups),
                    test_ids=expand(test_groups),
                )
            )
        assignments.append(rep_assignments)

    return FoldPlan(
        j=j,
        k=k,
        seed=seed,
        group_by_patient=group_by_patient,
        val_fraction=val_fraction,
        assignments=assignments,
    )


def verify_no_leakage(plan: FoldPlan, manifest: DatasetManifest) -> ValidationReport:
    """Brute-force re-check of every plan invariant; empty report = leak-free.

    Checks pairwise disjointness of the three sets per (rep, fold), exact
    once-each test coverage per repetition, patient atomicity when grouping
    is enabled, and that every id exists in the manifest.
    """
    report = ValidationReport()
    known = manifest.by_id()
    all_ids = set(known)

    if len(plan.assignments) != plan.j or any(len(row) != plan.k for row in plan.assignments):
        report.add("shape", f"assignments are not {plan.j}x{plan.k}")
        return report

    for rep in range(plan.j):
        test_union: list[str] = []
        for fold in range(plan.k):
            a = plan.assignment(rep, fold)
            sets = {"train": set(a.train_ids), "val": set(a.val_ids), "test": set(a.test_ids)}
            for name, ids in sets.items():
                for unknown in sorted(ids - all_ids):
                    report.add(
                        "unknown_id", f"(rep={rep}, fold={fold}) {name} id {unknown!r} not in manifest"
                    )
            for first, second in (("train", "val"), ("train", "test"), ("val", "test")):
                for dup in sorted(sets[first] & sets[second]):
                    report.add(
                        "overlap",
                        f"(rep={rep}, fold={fold}) id {dup!r} appears in both {first} and {second}",
                    )
            if plan.group_by_patient:
                placement: dict[str, str] = {}
                for name in ("train", "val", "test"):
                    for rid in sets[name]:
                        if rid not in known:
                            continue
                        patient = known[rid].patient_id
                        if placement.get(patient, name) != name:
                            report.add(
                                "patient_straddle",
                                f"(rep={rep}, fold={fold}) patient {patient!r} spans "
                                f"{placement[patient]} and {name}",
                            )
                        placement[patient] = name
            test_union.extend(a.test_ids)

        seen: set[str] = set()
        for rid in test_union:
            if rid in seen:
                report.add("coverage_duplicate", f"(rep={rep}) id {rid!r} tested more than once")
            seen.add(rid)
        for missing in sorted(all_ids - seen):
            report.add("coverage_missing", f"(rep={rep}) id {missing!r} never tested")
    return report


def train_single_fold(
    manifest: DatasetManifest,
    plan: FoldPlan,
    rep: int,
    fold: int,
    head_cfg: HeadConfig,
    train_cfg: TrainConfig,
    augment_policy: AugmentPolicy,
    stats: NormalizationStats = NormalizationStats(),
) -> tuple[TrainedModel, FoldResult]:
    """Train one (rep, fold) pair; deterministic, so any fold's model can be
    reproduced after the fact from the same plan and configs."""
    torch.set_num_threads(1)
    by_id = manifest.by_id()
    a = plan.assignment(rep, fold)

    def recs(ids: tuple[str, ...]) -> list[ImageRecord]:
        return [by_id[i] for i in ids]

    fold_seed = derive_seed(train_cfg.seed, rep, fold)
    cfg = replace(train_cfg, seed=fold_seed)
    try:
        model = build_classifier(cfg.backbone_id, head_cfg, seed=fold_seed)
        freeze_backbone(model)
        trained = train_head(model, recs(a.train_ids), recs(a.val_ids), cfg, augment_policy, stats)
        test_records = recs(a.test_ids)
        probs = predict_records(trained, test_records)
    except TrainingError as exc:
        raise TrainingError(f"(rep={rep}, fold={fold}): {exc}") from exc
    result = FoldResult(
        rep=rep,
        fold=fold,
        test_ids=list(a.test_ids),
        test_probs=[(float(p[0]), float(p[1])) for p in probs],
        test_labels=[r.label for r in test_records],
        best_val_loss=trained.best_val_loss,
        epochs_run=trained.epochs_run,
        head_checksum=head_checksum(trained.classifier),
        backbone_checksum=backbone_checksum(trained.classifier),
    )
    return trained, result


def _fold_worker(args) -> FoldResult:
    manifest, plan, rep, fold, head_cfg, train_cfg, augment_policy, stats = args
    _, result = train_single_fold(
        manifest, plan, rep, fold, head_cfg, train_cfg, augment_policy, stats
    )
    return result


def write_fold_results(results: list[FoldResult], path: str | Path) -> Path:
    """Persist results as JSONL sorted by (rep, fold); rewrites the file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ordered = sorted(results, key=lambda r: (r.rep, r.fold))
    lines = [json.dumps(r.to_dict(), sort_keys=True) for r in ordered]
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return path


def append_fold_result(result: FoldResult, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(result.to_dict(), sort_keys=True) + "\n")


def read_fold_results(path: str | Path, tolerate_partial: bool = False) -> list[FoldResult]:
    """Load a results JSONL; optionally drop a trailing half-written line."""
    path = Path(path)
    results = []
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    for i, line in enumerate(lines):
        try:
            results.append(FoldResult.from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            if tolerate_partial and i == len(lines) - 1:
                break
            raise TrainingError(f"malformed results line {i + 1} in {path}: {exc}") from exc
    return results


def run_cv(
    manifest: DatasetManifest,
    plan: FoldPlan,
    head_cfg: HeadConfig = HeadConfig(),
    train_cfg: TrainConfig = TrainConfig(),
    augment_policy: AugmentPolicy = AugmentPolicy(),
    stats: NormalizationStats = NormalizationStats(),
    n_workers: int = 1,
    results_path: str | Path | None = None,
    resume: bool = False,
) -> list[FoldResult]:
    """Execute every (rep, fold) of the plan; returns exactly j*k results.

    Each pair gets a fresh classifier seeded from (train seed, rep, fold).
    Fold runs are independent and may execute in parallel; output order is
    sorted by (rep, fold) regardless of schedule. With ``results_path`` set,
    completed folds are appended as they finish and the final file is the
    sorted JSONL; ``resume`` skips pairs already present in that file.
    """
    done: dict[tuple[int, int], FoldResult] = {}
    if resume and results_path is not None and Path(results_path).exists():
        for result in read_fold_results(results_path, tolerate_partial=True):
            if 0 <= result.rep < plan.j and 0 <= result.fold < plan.k:
                done[(result.rep, result.fold)] = result

    pending = [
        (rep, fold)
        for rep in range(plan.j)
        for fold in range(plan.k)
        if (rep, fold) not in done
    ]
    payloads = [
        (manifest, plan, rep, fold, head_cfg, train_cfg, augment_policy, stats)
        for rep, fold in pending
    ]

    results = list(done.values())
    if n_workers <= 1 or len(payloads) <= 1:
        for payload in payloads:
            result = _fold_worker(payload)
            results.append(result)
            if results_path is not None:
                append_fold_result(result, results_path)
    else:
        with ProcessPoolExecutor(
            max_workers=min(n_workers, len(payloads)), mp_context=get_context("spawn")
        ) as pool:
            for result in pool.map(_fold_worker, payloads):
                results.append(result)
                if results_path is not None:
                    append_fold_result(result, results_path)

    results.sort(key=lambda r: (r.rep, r.fold))
    if results_path is not None:
        write_fold_results(results, results_path)
    return results
