"""Augmentation and normalization: stochastic training path, pure eval path.

The training path applies, with probability ``p_apply``, rotation, zoom with
a random crop back to frame, brightness, and contrast, in that fixed order,
then resizes to the output side. The evaluation path is a deterministic
center crop and resize. All randomness comes from an explicit seed; nothing
touches global state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ShapeMismatchError, SpecValidationError
from .imops import bilinear_resize
from .seeding import rng_for

# Conventional channel statistics of the large natural-image corpus used to
# pretrain the backbones; overridable through NormalizationStats.
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

MIN_INPUT_SIDE = 32


@dataclass(frozen=True)
class AugmentPolicy:
    """Stochastic transform parameters for the training path."""

    p_apply: float = 0.75
    max_rotation_deg: float = 10.0
    max_zoom: float = 1.05
    lighting_range: float = 0.10
    contrast_range: float = 0.10
    output_side: int = 256

    def validate(self) -> None:
        if not 0.0 <= self.p_apply <= 1.0:
            raise SpecValidationError(f"p_apply must lie in [0, 1], got {self.p_apply}")
        if self.max_rotation_deg < 0:
            raise SpecValidationError("max_rotation_deg must be >= 0")
        if self.max_zoom < 1.0:
            raise SpecValidationError("max_zoom must be >= 1")
        for name in ("lighting_range", "contrast_range"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise SpecValidationError(f"{name} must lie in [0, 1], got {value}")
        if self.output_side < 8:
            raise SpecValidationError("output_side must be >= 8")


@dataclass(frozen=True)
class NormalizationStats:
    """Per-channel mean/std applied after scaling pixels to [0, 1]."""

    mean: tuple[float, float, float] = IMAGENET_MEAN
    std: tuple[float, float, float] = IMAGENET_STD

    def validate(self) -> None:
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ShapeMismatchError("normalization stats must have 3 channels")
        if any(s <= 0 for s in self.std):
            raise SpecValidationError(f"std components must be strictly positive: {self.std}")


@dataclass(frozen=True)
class AugmentParams:
    """One seeded draw of every stochastic knob (drawn even when unused)."""

    apply: bool
    rotation_deg: float
    zoom: float
    brightness: float
    contrast: float
    crop_dx: float
    crop_dy: float


def sample_augment_params(policy: AugmentPolicy, seed: int) -> AugmentParams:
    """Draw the transform parameters for one image; pure in (policy, seed)."""
    rng = rng_for(seed)
    apply = bool(rng.random() < policy.p_apply)
    return AugmentParams(
        apply=apply,
        rotation_deg=float(rng.uniform(-policy.max_rotation_deg, policy.max_rotation_deg)),
        zoom=float(rng.uniform(1.0, policy.max_zoom)),
        brightness=float(rng.uniform(1.0 - policy.lighting_range, 1.0 + policy.lighting_range)),
        contrast=float(rng.uniform(1.0 - policy.contrast_range, 1.0 + policy.contrast_range)),
        crop_dx=float(rng.random()),
        crop_dy=float(rng.random()),
    )


def _check_input(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeMismatchError(f"expected a 2D grayscale array, got shape {arr.shape}")
    if min(arr.shape) < MIN_INPUT_SIDE:
        raise SpecValidationError(
            f"input sides must be >= {MIN_INPUT_SIDE} px, got {arr.shape}"
        )
    return arr


def center_crop_resize(image: np.ndarray, output_side: int) -> np.ndarray:
    """Largest centered square crop, then bilinear resize to ``output_side``.

    Pure and deterministic; a square input of the target size passes through
    pixel-identical. Returns float64 in the input's intensity range.
    """
    arr = _check_input(image)
    h, w = arr.shape
    side = min(h, w)
    top = (h - side) // 2
    left = (w - side) // 2
    crop = arr[top : top + side, left : left + side]
    if side == output_side:
        return crop.copy()
    return bilinear_resize(crop, output_side, output_side)


def augment(image: np.ndarray, policy: AugmentPolicy, seed: int) -> np.ndarray:
    """Training-path transform; falls back to the evaluation path when the
    stochastic branch is not drawn. Deterministic for a fixed seed; output is
    float64 with shape (output_side, output_side) in [0, 255]-scale.
    """
    policy.validate()
    arr = _check_input(image)
    params = sample_augment_params(policy, seed)
    if not params.apply:
        return center_crop_resize(arr, policy.output_side)

    # 1. rotation, reflection-padded so no dark corners appear
    if params.rotation_deg != 0.0:
        arr = ndimage.rotate(
            arr, params.rotation_deg, reshape=False, order=1, mode="reflect"
        )
    # 2. zoom as a random crop of side/zoom sampled back to the full frame
    if params.zoom > 1.0:
        h, w = arr.shape
        crop_h = h / params.zoom
        crop_w = w / params.zoom
        top = params.crop_dy * (h - crop_h)
        left = params.crop_dx * (w - crop_w)
        rows = top + (np.arange(h) + 0.5) * (crop_h / h) - 0.5
        cols = left + (np.arange(w) + 0.5) * (crop_w / w) - 0.5
        grid = np.meshgrid(rows, cols, indexing="ij")
        arr = ndimage.map_coordinates(arr, grid, order=1, mode="nearest")
    # 3. brightness, 4. contrast around the frame mean
    arr = arr * params.brightness
    mean = arr.mean()
    arr = (arr - mean) * params.contrast + mean
    np.clip(arr, 0.0, 255.0, out=arr)

    if arr.shape != (policy.output_side, policy.output_side):
        arr = center_crop_resize(arr, policy.output_side)
    return arr


def normalize(image: np.ndarray, stats: NormalizationStats = NormalizationStats()) -> np.ndarray:
    """Scale to [0, 1], replicate grayscale to 3 channels, standardize.

    Accepts (H, W) or (H, W, 3) arrays on the [0, 255] scale and returns a
    float64 grid of shape (3, H, W).
    """
    stats.validate()
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = np.stack([arr, arr, arr], axis=0)
    elif arr.ndim == 3 and arr.shape[2] == 3:
        arr = arr.transpose(2, 0, 1)
    else:
        raise ShapeMismatchError(f"expected (H, W) or (H, W, 3), got {arr.shape}")
    mean = np.asarray(stats.mean, dtype=np.float64)[:, None, None]
    std = np.asarray(stats.std, dtype=np.float64)[:, None, None]
    return (arr / 255.0 - mean) / std


def denormalize(grid: np.ndarray, stats: NormalizationStats = NormalizationStats()) -> np.ndarray:
    """Exact inverse of :func:`normalize`; returns (H, W, 3) on the [0, 255] scale."""
    stats.validate()
    arr = np.asarray(grid, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ShapeMismatchError(f"expected a (3, H, W) grid, got {arr.shape}")
    mean = np.asarray(stats.mean, dtype=np.float64)[:, None, None]
    std = np.asarray(stats.std, dtype=np.float64)[:, None, None]
    return ((arr * std + mean) * 255.0).transpose(1, 2, 0)


def evaluation_pipeline(
    image: np.ndarray,
    output_side: int,
    stats: NormalizationStats = NormalizationStats(),
) -> np.ndarray:
    """The deterministic eval path: center crop + resize + normalize."""
    return normalize(center_crop_resize(image, output_side), stats)
