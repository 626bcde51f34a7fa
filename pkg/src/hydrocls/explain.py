"""Gradient-weighted class activation maps over the final conv features.

Channel weights are the spatial means of the target-class logit's gradient
with respect to each final-conv activation map; the raw map is the rectified
weighted sum, min-max normalized and bilinearly upsampled to the model's
input size. Using the logit (not the softmax) makes the normalized map
invariant to positive rescaling of the class score.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import CapabilityError, ShapeMismatchError
from .imops import bilinear_resize
from .model import TrainedModel, class_index
from .preprocess import center_crop_resize, evaluation_pipeline

HEATMAP_MAGIC = b"HMAP"


@dataclass
class Heatmap:
    """Normalized relevance map at the model's input resolution."""

    grid: np.ndarray  # float64 (H, W) in [0, 1]
    source_shape: tuple[int, int]  # final conv map (h, w)
    upsampled_shape: tuple[int, int]
    target_class: str
    degenerate: bool = False  # raw map was identically zero


def _normalize_map(raw: np.ndarray) -> tuple[np.ndarray, bool]:
    mx = float(raw.max())
    mn = float(raw.min())
    if mx <= 0.0:
        return np.zeros_like(raw), True
    if mx == mn:
        return np.ones_like(raw), False
    return (raw - mn) / (mx - mn), False


def gradcam(trained: TrainedModel, image: np.ndarray, target_class: str | int) -> Heatmap:
    """Relevance heatmap of one image for the given class.

    ``image`` is a raw grayscale array; it goes through the evaluation path
    before the forward pass. Deterministic for a fixed model and input.
    """
    label = target_class if isinstance(target_class, str) else None
    if isinstance(target_class, str):
        target_idx = class_index(target_class)
    else:
        target_idx = int(target_class)
        from .model import CLASS_ORDER

        label = CLASS_ORDER[target_idx]

    model = trained.classifier
    model.eval()
    grid = evaluation_pipeline(image, trained.input_side, trained.stats)
    x = torch.from_numpy(grid[None].astype(np.float32))

    with torch.no_grad():
        feats = model.forward_features(x)
    if feats.ndim != 4:
        raise CapabilityError(
            f"backbone returned a {feats.ndim}D output; a convolutional map is required"
        )
    feats = feats.detach().requires_grad_(True)
    logits = model.head_forward(feats)
    score = logits[0, target_idx]
    (grads,) = torch.autograd.grad(score, feats)

    weights = grads.mean(dim=(2, 3), keepdim=True)
    raw = torch.relu((weights * feats).sum(dim=1))[0].detach().double().numpy()
    normalized, degenerate = _normalize_map(raw)
    upsampled = bilinear_resize(normalized, trained.input_side, trained.input_side)
    np.clip(upsampled, 0.0, 1.0, out=upsampled)

    return Heatmap(
        grid=upsampled,
        source_shape=(raw.shape[0], raw.shape[1]),
        upsampled_shape=(trained.input_side, trained.input_side),
        target_class=label,
        degenerate=degenerate,
    )


def activation_mean(trained: TrainedModel, image: np.ndarray) -> np.ndarray:
    """Mean-over-channels final-conv activation, min-max normalized and
    upsampled; the companion panel usually shown beside the class map."""
    model = trained.classifier
    model.eval()
    grid = evaluation_pipeline(image, trained.input_side, trained.stats)
    with torch.no_grad():
        feats = model.forward_features(torch.from_numpy(grid[None].astype(np.float32)))
    if feats.ndim != 4:
        raise CapabilityError("backbone does not expose a convolutional map")
    raw = feats.mean(dim=1)[0].double().numpy()
    normalized, _ = _normalize_map(np.maximum(raw, 0.0))
    return bilinear_resize(normalized, trained.input_side, trained.input_side)


def overlay(image: np.ndarray, heatmap: Heatmap, alpha: float = 0.5) -> np.ndarray:
    """Composite the heatmap over a grayscale image as RGB.

    The color ramp runs from transparent blue at 0 to opaque red at 1, with
    per-pixel opacity ``alpha * value``, so a zero heatmap leaves the image
    untouched for any alpha. Returns uint8 (H, W, 3).
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeMismatchError(f"overlay expects a 2D grayscale image, got {img.shape}")
    if img.shape != tuple(heatmap.upsampled_shape) or img.shape != heatmap.grid.shape:
        raise ShapeMismatchError(
            f"image {img.shape} does not match heatmap {heatmap.grid.shape}"
        )
    if not 0.0 <= alpha <= 1.0:
        raise ShapeMismatchError(f"alpha must lie in [0, 1], got {alpha}")
    v = heatmap.grid
    color = np.stack([v * 255.0, np.zeros_like(v), (1.0 - v) * 255.0], axis=-1)
    opacity = (alpha * v)[..., None]
    base = np.repeat(img[..., None], 3, axis=-1)
    out = base * (1.0 - opacity) + color * opacity
    return np.clip(np.round(out), 0, 255).astype(np.uint8)


def localization_score(heatmap: Heatmap, mask: np.ndarray) -> float:
    """Fraction of heatmap mass inside a boolean region; 0 for a zero map."""
    mask = np.asarray(mask)
    if mask.shape != heatmap.grid.shape:
        raise ShapeMismatchError(
            f"mask {mask.shape} does not match heatmap {heatmap.grid.shape}"
        )
    total = float(heatmap.grid.sum())
    if total <= 0.0:
        return 0.0
    return float(heatmap.grid[mask.astype(bool)].sum()) / total


def resize_mask(mask: np.ndarray, output_side: int) -> np.ndarray:
    """Carry a boolean mask through the evaluation path's crop and resize."""
    as_float = center_crop_resize(np.asarray(mask, dtype=np.float64) * 255.0, output_side)
    return as_float > 127.5


def write_heatmap(heatmap: Heatmap, path: str | Path) -> Path:
    """Portable grid file: magic, little-endian header (width, height,
    degenerate flag), then row-major float32 values."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    h, w = heatmap.grid.shape
    header = HEATMAP_MAGIC + struct.pack("<IIB", w, h, 1 if heatmap.degenerate else 0)
    payload = heatmap.grid.astype("<f4").tobytes(order="C")
    path.write_bytes(header + payload)
    return path


def read_heatmap(path: str | Path, target_class: str = "hydrocephalus") -> Heatmap:
    """Read a grid file written by :func:`write_heatmap`."""
    data = Path(path).read_bytes()
    if data[:4] != HEATMAP_MAGIC or len(data) < 13:
        raise ShapeMismatchError(f"not a heatmap grid file: {path}")
    w, h, degenerate = struct.unpack("<IIB", data[4:13])
    expected = 13 + 4 * w * h
    if len(data) != expected:
        raise ShapeMismatchError(f"heatmap payload length mismatch in {path}")
    grid = np.frombuffer(data[13:], dtype="<f4").reshape(h, w).astype(np.float64)
    return Heatmap(
        grid=grid,
        source_shape=(h, w),
        upsampled_shape=(h, w),
        target_class=target_class,
        degenerate=bool(degenerate),
    )
