"""Dataset manifests: the single input contract for the rest of the pipeline.

A manifest is an ordered list of labeled image records with patient grouping.
It is serialized as JSON Lines: a header object ``{"schema_version": N}`` on
the first line, then one record object per line.
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import IngestError, LabelingError
from .imops import load_grayscale, window_to_uint8

LABEL_NORMAL = "normal"
LABEL_HYDROCEPHALUS = "hydrocephalus"
LABELS = (LABEL_NORMAL, LABEL_HYDROCEPHALUS)

SOURCES = ("phantom", "dicom", "image")

SCHEMA_VERSION = 1

_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".dcm"}

DEFAULT_SLICE_TAG = "lateral_ventricle_level"


@dataclass(frozen=True)
class ImageRecord:
    """One labeled image with its patient grouping key."""

    image_id: str
    patient_id: str
    path: str
    label: str
    slice_tag: str = DEFAULT_SLICE_TAG
    source: str = "image"

    def __post_init__(self):
        if self.label not in LABELS:
            raise LabelingError(f"unknown label {self.label!r} for {self.image_id!r}")
        if self.source not in SOURCES:
            raise IngestError(f"unknown source {self.source!r} for {self.image_id!r}")


@dataclass
class DatasetManifest:
    """Ordered record list; class counts are always derived from the records."""

    records: list[ImageRecord] = field(default_factory=list)
    schema_version: int = SCHEMA_VERSION

    @property
    def class_counts(self) -> dict[str, int]:
        counts = {label: 0 for label in LABELS}
        for rec in self.records:
            counts[rec.label] = counts.get(rec.label, 0) + 1
        return counts

    def __len__(self) -> int:
        return len(self.records)

    def record_ids(self) -> list[str]:
        return [rec.image_id for rec in self.records]

    def by_id(self) -> dict[str, ImageRecord]:
        return {rec.image_id: rec for rec in self.records}


def write_manifest(manifest: DatasetManifest, path: str | Path) -> Path:
    """Write the manifest as JSONL (header line, then one record per line)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps({"schema_version": manifest.schema_version}, sort_keys=True)]
    for rec in manifest.records:
        lines.append(json.dumps(asdict(rec), sort_keys=True))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_manifest(path: str | Path) -> DatasetManifest:
    """Read a JSONL manifest written by :func:`write_manifest`."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise IngestError(f"manifest not found: {path}") from exc
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise IngestError(f"manifest is empty: {path}")
    try:
        header = json.loads(lines[0])
        records = [ImageRecord(**json.loads(line)) for line in lines[1:]]
    except (json.JSONDecodeError, TypeError) as exc:
        raise IngestError(f"malformed manifest {path}: {exc}") from exc
    version = header.get("schema_version")
    if version != SCHEMA_VERSION:
        raise IngestError(f"unsupported manifest schema_version {version!r}")
    return DatasetManifest(records=records, schema_version=version)


def patient_id_from_name(image_id: str, filename: str) -> str:
    """Patient id is the filename prefix before the first underscore, else the image id."""
    stem = Path(filename).stem
    if "_" in stem:
        return stem.split("_", 1)[0]
    return image_id


def _natural_key(name: str) -> list:
    return [int(tok) if tok.isdigit() else tok for tok in re.split(r"(\d+)", name)]


def _list_images(directory: Path) -> list[Path]:
    return sorted(
        (p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in _IMAGE_SUFFIXES),
        key=lambda p: _natural_key(p.name),
    )


def build_manifest(root: str | Path, labeling: str = "by_subdirectory") -> DatasetManifest:
    """Scan an image tree and return a labeled manifest.

    ``by_subdirectory`` expects exactly the class directories ``normal/`` and
    ``hydrocephalus/`` under ``root``; any other subdirectory is a labeling
    error naming the offenders. ``by_sidecar_file`` reads ``root/labels.json``
    mapping image filenames (relative to root) to label strings.
    """
    root = Path(root)
    if not root.is_dir():
        raise IngestError(f"root is not a directory: {root}")

    pairs: list[tuple[Path, str]] = []
    if labeling == "by_subdirectory":
        subdirs = sorted((p for p in root.iterdir() if p.is_dir()), key=lambda p: p.name)
        unknown = [p.name for p in subdirs if p.name not in LABELS]
        if unknown:
            raise LabelingError(f"unknown subdirectories under {root}: {', '.join(unknown)}")
        for label in LABELS:
            class_dir = root / label
            if class_dir.is_dir():
                pairs.extend((p, label) for p in _list_images(class_dir))
    elif labeling == "by_sidecar_file":
        sidecar = root / "labels.json"
        if not sidecar.is_file():
            raise LabelingError(f"sidecar file not found: {sidecar}")
        try:
            mapping = json.loads(sidecar.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise LabelingError(f"malformed sidecar {sidecar}: {exc}") from exc
        images = _list_images(root)
        offenders = []
        for img in images:
            label = mapping.get(img.name)
            if label not in LABELS:
                offenders.append(img.name)
            else:
                pairs.append((img, label))
        if offenders:
            raise LabelingError(
                f"images without a valid sidecar label: {', '.join(offenders)}"
            )
    else:
        raise LabelingError(f"unknown labeling mode {labeling!r}")

    if not pairs:
        raise IngestError(f"no images found under {root}")

    records = []
    for path, label in pairs:
        image_id = path.stem
        records.append(
            ImageRecord(
                image_id=image_id,
                patient_id=patient_id_from_name(image_id, path.name),
                path=str(path),
                label=label,
                source="dicom" if path.suffix.lower() == ".dcm" else "image",
            )
        )
    return DatasetManifest(records=records)


def extract_slice(series_dir: str | Path, selector: int | str) -> np.ndarray:
    """Pull one frame from a single-frame image series and window it to 8 bits.

    Frames are ordered by DICOM instance number when available, otherwise by
    natural filename order. An integer selector indexes that order; a string
    selector picks the first frame whose stem contains it. Windowing is
    per-frame min-max; a constant frame maps to all zeros.
    """
    series_dir = Path(series_dir)
    if not series_dir.is_dir():
        raise IngestError(f"series directory not found: {series_dir}")
    files = _list_images(series_dir)
    if not files:
        raise IngestError(f"no readable frames in {series_dir}")

    dicoms = [p for p in files if p.suffix.lower() == ".dcm"]
    if dicoms and len(dicoms) == len(files):
        from .dicom import read_dicom_frame

        frames = []
        for i, p in enumerate(files):
            pixels, instance = read_dicom_frame(p)
            frames.append((instance if instance is not None else i, p.name, pixels))
        frames.sort(key=lambda t: (t[0], t[1]))
        ordered = [(name, pixels) for _, name, pixels in frames]
    else:
        ordered = [(p.name, None) for p in files]

    if isinstance(selector, int):
        if not 0 <= selector < len(ordered):
            raise IndexError(
                f"frame index {selector} out of range for {len(ordered)}-frame series"
            )
        idx = selector
    else:
        matches = [i for i, (name, _) in enumerate(ordered) if selector in Path(name).stem]
        if not matches:
            raise IngestError(f"no frame tagged {selector!r} in {series_dir}")
        idx = matches[0]

    name, pixels = ordered[idx]
    if pixels is not None:
        return window_to_uint8(pixels)
    return window_to_uint8(load_grayscale(series_dir / name))


@dataclass(frozen=True)
class Finding:
    """One validation problem; ``kind`` is machine-readable, ``detail`` for humans."""

    kind: str
    detail: str


@dataclass
class ValidationReport:
    findings: list[Finding] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.findings

    def add(self, kind: str, detail: str) -> None:
        self.findings.append(Finding(kind, detail))

    def __str__(self) -> str:
        if self.ok:
            return "manifest OK"
        return "\n".join(f"[{f.kind}] {f.detail}" for f in self.findings)


def validate_manifest(manifest: DatasetManifest, check_decodable: bool = True) -> ValidationReport:
    """Check a manifest for training usability; an empty report means usable.

    Reports duplicate ids, missing files, undecodable images, and datasets
    that do not contain both classes. Nothing raises; every problem becomes
    a report finding.
    """
    report = ValidationReport()
    if not manifest.records:
        report.add("no_records", "manifest has no records")
        return report

    seen: set[str] = set()
    for rec in manifest.records:
        if rec.image_id in seen:
            report.add("duplicate_id", f"duplicate image_id {rec.image_id!r}")
        seen.add(rec.image_id)
        path = Path(rec.path)
        if not path.is_file():
            report.add("missing_file", f"{rec.image_id}: file not found {path}")
        elif check_decodable:
            try:
                img = load_grayscale(path)
                if img.ndim != 2 or img.size == 0:
                    report.add("undecodable", f"{rec.image_id}: not a 2D image {path}")
            except IngestError:
                report.add("undecodable", f"{rec.image_id}: could not decode {path}")

    counts = manifest.class_counts
    missing = [label for label in LABELS if counts.get(label, 0) == 0]
    if missing:
        report.add("single_class", f"no records labeled {', '.join(missing)}")
    return report
