"""Synthetic axial brain-slice phantoms with controllable ventricle geometry.

Each phantom is a square grayscale image: an elliptical skull, darker
parenchyma texture inside it, and a bright CSF-like ventricle system made of
two tilted frontal-horn ellipses (the butterfly), a midline slit for the
third ventricle, and two posterior wings for the lateral ventricle bodies.
Ground-truth masks accompany every image, so geometric claims (Evans-style
width ratios, localization scores) can be verified exactly.

Class labels follow three width criteria on one declared spatial scale of
0.5 mm per pixel: a sample is pathological iff its frontal-horn/skull width
ratio exceeds 0.3 AND the third-ventricle width exceeds 6 mm AND the
lateral-ventricle width exceeds 18 mm. All three are strict inequalities.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import SpecValidationError
from .imops import save_jpeg, save_png
from .ingest import (
    LABEL_HYDROCEPHALUS,
    LABEL_NORMAL,
    DatasetManifest,
    ImageRecord,
    write_manifest,
)
from .seeding import derive_seed, rng_for

MM_PER_PIXEL = 0.5
EVANS_THRESHOLD = 0.3
THIRD_VENTRICLE_MM = 6.0
LATERAL_VENTRICLE_MM = 18.0

THIRD_VENTRICLE_PX = THIRD_VENTRICLE_MM / MM_PER_PIXEL  # 12 px
LATERAL_VENTRICLE_PX = LATERAL_VENTRICLE_MM / MM_PER_PIXEL  # 36 px

# Cohort sampling ranges (pixels, or width ratio for the Evans analogue).
# Normal and pathology ranges are disjoint on every parameter so a generated
# dataset is separable by construction.
SKULL_DIAMETER_RANGE = (200.0, 232.0)
NORMAL_EVANS_RANGE = (0.18, 0.27)
PATHOLOGY_EVANS_RANGE = (0.33, 0.45)
NORMAL_THIRD_RANGE = (6.0, 10.0)
PATHOLOGY_THIRD_RANGE = (14.0, 22.0)
NORMAL_LATERAL_RANGE = (20.0, 30.0)
PATHOLOGY_LATERAL_RANGE = (40.0, 55.0)

# Absolute pixel thresholds above assume roughly the default field; smaller
# canvases would silently flip labels, so dataset generation refuses them.
MIN_DATASET_IMAGE_SIDE = 248

# Fixed geometry fractions of the rendered structures.
_HORN_TILT_DEG = 20.0
_HORN_THICK_FRAC = 0.13  # semi-axis across the horn, fraction of horn span
_HORN_LONG_FRAC = 0.45  # semi-axis along the horn, fraction of horn span
_HORN_ROW_FRAC = 0.28  # horn centers this fraction of the skull semi-height above center
_THIRD_ROW_FRAC = 0.12
_THIRD_LONG_FRAC = 0.17
_WING_ROW_FRAC = 0.26
_WING_LONG_FRAC = 0.13
_WING_INNER_FRAC = 0.10  # wing inner edge offset, fraction of skull semi-width

_BONE_RING_PX = 5.0


@dataclass(frozen=True)
class PhantomSpec:
    """Geometry knobs for one phantom; widths are in pixels."""

    image_side: int = 256
    skull_inner_diameter: float = 220.0
    frontal_horn_width: float = 50.0
    third_ventricle_width: float = 8.0
    lateral_ventricle_width: float = 24.0
    noise_sigma: float = 0.05
    texture_seed: int = 0

    def validate(self) -> None:
        """Raise SpecValidationError naming the first violated bound."""
        if self.image_side < 32:
            raise SpecValidationError(f"image_side must be >= 32, got {self.image_side}")
        if not self.skull_inner_diameter <= self.image_side:
            raise SpecValidationError(
                f"skull_inner_diameter {self.skull_inner_diameter} exceeds "
                f"image_side {self.image_side}"
            )
        for name in ("frontal_horn_width", "third_ventricle_width", "lateral_ventricle_width"):
            value = getattr(self, name)
            if not value > 0:
                raise SpecValidationError(f"{name} must be strictly positive, got {value}")
        if not self.frontal_horn_width < self.skull_inner_diameter:
            raise SpecValidationError(
                f"frontal_horn_width {self.frontal_horn_width} must be smaller than "
                f"skull_inner_diameter {self.skull_inner_diameter}"
            )
        if not 0.0 <= self.noise_sigma <= 0.5:
            raise SpecValidationError(
                f"noise_sigma must lie in [0, 0.5], got {self.noise_sigma}"
            )

    @property
    def evans_ratio(self) -> float:
        return self.frontal_horn_width / self.skull_inner_diameter


@dataclass(eq=False)
class PhantomSample:
    """Rendered phantom plus its ground-truth masks and derived label."""

    image: np.ndarray  # float64 (S, S) in [0, 1]
    ventricle_mask: np.ndarray  # bool (S, S)
    skull_mask: np.ndarray  # bool (S, S)
    label: str
    spec: PhantomSpec


def classify_spec(spec: PhantomSpec) -> str:
    """Label implied by the geometry: pathology iff all three criteria hold."""
    pathological = (
        spec.evans_ratio > EVANS_THRESHOLD
        and spec.third_ventricle_width > THIRD_VENTRICLE_PX
        and spec.lateral_ventricle_width > LATERAL_VENTRICLE_PX
    )
    return LABEL_HYDROCEPHALUS if pathological else LABEL_NORMAL


def _ellipse(xx, yy, cx, cy, semi_x, semi_y, tilt_deg=0.0):
    """Boolean mask of a filled, possibly tilted ellipse at pixel centers."""
    a = np.deg2rad(tilt_deg)
    dx = xx - cx
    dy = yy - cy
    u = np.cos(a) * dx + np.sin(a) * dy
    v = -np.sin(a) * dx + np.cos(a) * dy
    return (u / semi_x) ** 2 + (v / semi_y) ** 2 <= 1.0


def _ventricle_masks(spec: PhantomSpec, xx, yy, cx, cy, sa, sb):
    fh = spec.frontal_horn_width
    tv = spec.third_ventricle_width
    lv = spec.lateral_ventricle_width

    # Frontal horns: place the tilted ellipses so their outer extremes land
    # exactly at cx +/- fh/2, giving the butterfly an analytic total width.
    a_h = _HORN_THICK_FRAC * fh
    b_h = _HORN_LONG_FRAC * fh
    tilt = np.deg2rad(_HORN_TILT_DEG)
    half_extent = np.hypot(a_h * np.cos(tilt), b_h * np.sin(tilt))
    horn_row = cy - _HORN_ROW_FRAC * sb
    left = _ellipse(xx, yy, cx - fh / 2 + half_extent, horn_row, a_h, b_h, -_HORN_TILT_DEG)
    right = _ellipse(xx, yy, cx + fh / 2 - half_extent, horn_row, a_h, b_h, _HORN_TILT_DEG)

    third = _ellipse(xx, yy, cx, cy + _THIRD_ROW_FRAC * sb, tv / 2, _THIRD_LONG_FRAC * sb)

    wing_dx = _WING_INNER_FRAC * sa + lv / 2
    wing_row = cy + _WING_ROW_FRAC * sb
    wing_l = _ellipse(xx, yy, cx - wing_dx, wing_row, lv / 2, _WING_LONG_FRAC * sb)
    wing_r = _ellipse(xx, yy, cx + wing_dx, wing_row, lv / 2, _WING_LONG_FRAC * sb)

    return left | right | third | wing_l | wing_r


def generate_phantom(spec: PhantomSpec, seed: int) -> PhantomSample:
    """Render one phantom; bit-identical for the same (spec, seed).

    The texture stream mixes ``seed`` with ``spec.texture_seed``, so either
    can be varied independently.
    """
    spec.validate()
    side = spec.image_side
    cx = cy = (side - 1) / 2
    sa = spec.skull_inner_diameter / 2
    sb = min(1.2 * sa, side / 2 - 2.0)

    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    skull = _ellipse(xx, yy, cx, cy, sa, sb)
    ventricle = _ventricle_masks(spec, xx, yy, cx, cy, sa, sb) & skull
    bone = _ellipse(xx, yy, cx, cy, sa + _BONE_RING_PX, sb + _BONE_RING_PX) & ~skull

    rng = rng_for(seed, spec.texture_seed)
    texture = gaussian_filter(rng.uniform(-0.5, 0.5, size=(side, side)), sigma=2.5)
    std = float(texture.std())
    if std > 0.0 and spec.noise_sigma > 0.0:
        texture *= spec.noise_sigma / std
    else:
        texture = np.zeros((side, side))
    ramp = 0.06 * ((xx / max(side - 1, 1) - 0.5) + (yy / max(side - 1, 1) - 0.5))

    image = np.full((side, side), 0.02)
    image[bone] = 0.10
    image[skull] = (0.38 + ramp + texture)[skull]
    image[ventricle] = (0.88 + 0.35 * texture)[ventricle]
    image = gaussian_filter(image, sigma=0.7)
    np.clip(image, 0.0, 1.0, out=image)

    return PhantomSample(
        image=image,
        ventricle_mask=ventricle,
        skull_mask=skull,
        label=classify_spec(spec),
        spec=spec,
    )


def _max_row_extent(mask: np.ndarray, rows: slice = slice(None)) -> int:
    """Widest per-row horizontal span (max col - min col + 1) inside ``rows``."""
    part = mask[rows]
    any_rows = part.any(axis=1)
    if not any_rows.any():
        return 0
    width = part.shape[1]
    first = part.argmax(axis=1)
    last = width - 1 - part[:, ::-1].argmax(axis=1)
    return int((last - first + 1)[any_rows].max())


def synthetic_evans_index(sample: PhantomSample) -> float:
    """Width ratio measured from the masks alone.

    Numerator: widest ventricle span over the anterior half of the image
    (where the frontal horns lie). Denominator: widest skull span. Agrees
    with ``spec.evans_ratio`` to within rasterization error (about a pixel
    per edge).
    """
    if not sample.skull_mask.any():
        raise SpecValidationError("skull mask is empty")
    skull_extent = _max_row_extent(sample.skull_mask)
    anterior = slice(0, sample.ventricle_mask.shape[0] // 2)
    horn_extent = _max_row_extent(sample.ventricle_mask, anterior)
    return horn_extent / skull_extent


def _sample_spec(rng: np.random.Generator, pathological: bool, image_side: int) -> PhantomSpec:
    skull = rng.uniform(*SKULL_DIAMETER_RANGE)
    evans_range = PATHOLOGY_EVANS_RANGE if pathological else NORMAL_EVANS_RANGE
    third_range = PATHOLOGY_THIRD_RANGE if pathological else NORMAL_THIRD_RANGE
    lateral_range = PATHOLOGY_LATERAL_RANGE if pathological else NORMAL_LATERAL_RANGE
    return PhantomSpec(
        image_side=image_side,
        skull_inner_diameter=skull,
        frontal_horn_width=rng.uniform(*evans_range) * skull,
        third_ventricle_width=rng.uniform(*third_range),
        lateral_ventricle_width=rng.uniform(*lateral_range),
        noise_sigma=0.05,
        texture_seed=int(rng.integers(0, 2**31)),
    )


def generate_dataset(
    n_normal: int,
    n_path: int,
    base_seed: int,
    out_dir: str | Path,
    image_side: int = 256,
    jpeg: bool = False,
) -> DatasetManifest:
    """Write a labeled phantom cohort and return its manifest.

    Layout under ``out_dir``: ``images/<label>/<id>_axial.png``, ground-truth
    masks under ``masks/``, and ``manifest.jsonl`` at the top. One synthetic
    patient id per image. Per-class geometry is drawn from the disjoint
    ranges above, and the whole tree is a pure function of the arguments.
    """
    if n_normal < 1 or n_path < 1:
        raise SpecValidationError("both class counts must be >= 1")
    if image_side < MIN_DATASET_IMAGE_SIDE:
        raise SpecValidationError(
            f"image_side must be >= {MIN_DATASET_IMAGE_SIDE} so the absolute pixel "
            f"thresholds stay meaningful, got {image_side}"
        )
    out_dir = Path(out_dir)
    suffix = ".jpg" if jpeg else ".png"
    records = []
    for cls_idx, (label, count, prefix) in enumerate(
        [(LABEL_NORMAL, n_normal, "n"), (LABEL_HYDROCEPHALUS, n_path, "p")]
    ):
        pathological = label == LABEL_HYDROCEPHALUS
        for i in range(count):
            spec = _sample_spec(rng_for(base_seed, cls_idx, i), pathological, image_side)
            sample = generate_phantom(spec, seed=derive_seed(base_seed, cls_idx, i, 1))
            if sample.label != label:
                raise SpecValidationError(
                    f"sampled geometry classified as {sample.label}, expected {label}"
                )
            pid = f"{prefix}{i:04d}"
            image_id = f"{pid}_axial"
            img_path = out_dir / "images" / label / f"{image_id}{suffix}"
            img8 = np.round(sample.image * 255.0).astype(np.uint8)
            if jpeg:
                save_jpeg(img8, img_path)
            else:
                save_png(img8, img_path)
            masks_dir = out_dir / "masks"
            save_png(sample.ventricle_mask.astype(np.uint8) * 255, masks_dir / f"{image_id}_ventricle.png")
            save_png(sample.skull_mask.astype(np.uint8) * 255, masks_dir / f"{image_id}_skull.png")
            records.append(
                ImageRecord(
                    image_id=image_id,
                    patient_id=pid,
                    path=str(img_path),
                    label=label,
                    source="phantom",
                )
            )
    manifest = DatasetManifest(records=records)
    write_manifest(manifest, out_dir / "manifest.jsonl")
    return manifest


def mask_paths(record: ImageRecord) -> tuple[Path, Path]:
    """Ground-truth mask locations for a phantom record (ventricle, skull)."""
    masks_dir = Path(record.path).parents[2] / "masks"
    return (
        masks_dir / f"{record.image_id}_ventricle.png",
        masks_dir / f"{record.image_id}_skull.png",
    )


def load_mask(path: str | Path) -> np.ndarray:
    """Read a 0/255 mask PNG back to a boolean grid."""
    from .imops import load_grayscale

    return load_grayscale(path) > 127


def with_texture_seed(spec: PhantomSpec, texture_seed: int) -> PhantomSpec:
    """Copy of the spec with a different texture stream."""
    return replace(spec, texture_seed=texture_seed)
