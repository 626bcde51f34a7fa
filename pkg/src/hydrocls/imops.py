"""Small shared image utilities: decoding, PNG writing, resizing, hashing."""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import IngestError


def load_grayscale(path: str | Path) -> np.ndarray:
    """Decode an image file to a 2D uint8 grayscale array.

    Color inputs are converted with the usual luminance weights. Raises
    :class:`IngestError` if the file is missing or not a decodable image.
    """
    p = Path(path)
    if p.suffix.lower() == ".dcm":
        from .dicom import read_dicom_frame

        frame, _ = read_dicom_frame(p)
        return window_to_uint8(frame)
    try:
        with Image.open(p) as im:
            return np.asarray(im.convert("L"), dtype=np.uint8)
    except FileNotFoundError as exc:
        raise IngestError(f"image file not found: {p}") from exc
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise IngestError(f"could not decode image: {p}") from exc


def window_to_uint8(frame: np.ndarray) -> np.ndarray:
    """Min-max window an intensity frame to 8 bits.

    A constant-valued frame has a degenerate window and maps to all zeros.
    """
    frame = np.asarray(frame, dtype=np.float64)
    lo = float(frame.min())
    hi = float(frame.max())
    if hi <= lo:
        return np.zeros(frame.shape, dtype=np.uint8)
    scaled = (frame - lo) / (hi - lo) * 255.0
    return np.round(scaled).astype(np.uint8)


def save_png(array: np.ndarray, path: str | Path) -> None:
    """Write a uint8 array as PNG; 2D is grayscale, (H, W, 3) is RGB."""
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        raise ValueError("save_png expects a uint8 array")
    mode = "L" if arr.ndim == 2 else "RGB"
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode=mode).save(path, format="PNG")


def save_jpeg(array: np.ndarray, path: str | Path, quality: int = 95) -> None:
    """Write a 2D uint8 array as a grayscale JPEG."""
    arr = np.asarray(array)
    if arr.dtype != np.uint8 or arr.ndim != 2:
        raise ValueError("save_jpeg expects a 2D uint8 array")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode="L").save(path, format="JPEG", quality=quality)


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize a 2D float array with bilinear interpolation.

    Output pixel centers map to input coordinates via the half-pixel
    convention ``src = (dst + 0.5) * in/out - 0.5``, clamped at the borders.
    Pure and deterministic; returns float64.
    """
    img = np.asarray(image, dtype=np.float64)
    in_h, in_w = img.shape
    if (in_h, in_w) == (out_h, out_w):
        return img.copy()

    ys = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    ys = np.clip(ys, 0.0, in_h - 1.0)
    xs = np.clip(xs, 0.0, in_w - 1.0)

    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]

    top = img[np.ix_(y0, x0)] * (1.0 - wx) + img[np.ix_(y0, x1)] * wx
    bot = img[np.ix_(y1, x0)] * (1.0 - wx) + img[np.ix_(y1, x1)] * wx
    return top * (1.0 - wy) + bot * wy


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str | Path) -> str:
    return sha256_bytes(Path(path).read_bytes())
