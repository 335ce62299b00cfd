"""Canonicalize raw radiographs to 512x512 grayscale rasters in [0, 1]."""

from __future__ import annotations

import datetime as dt
from typing import Optional

import numpy as np
import torch

from .types import CANONICAL_SIZE, CxrImage

CONSTANT_INPUT = "constant_input"


def resize_bilinear(array: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of a 2-D float array (shared by images and heatmaps)."""
    if array.shape == size:
        return array.astype(np.float32, copy=False)
    t = torch.from_numpy(np.ascontiguousarray(array, dtype=np.float32))
    out = torch.nn.functional.interpolate(
        t[None, None], size=size, mode="bilinear", align_corners=False
    )
    return out[0, 0].numpy()


def resize_nearest(array: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor resize; keeps binary masks binary."""
    if array.shape == size:
        return array
    t = torch.from_numpy(np.ascontiguousarray(array, dtype=np.float32))
    out = torch.nn.functional.interpolate(t[None, None], size=size, mode="nearest")
    return out[0, 0].numpy().astype(array.dtype)


def _to_luminance(raw: np.ndarray) -> np.ndarray:
    if raw.ndim == 2:
        return raw.astype(np.float64)
    if raw.ndim == 3 and raw.shape[2] in (1, 3, 4):
        return raw[..., : min(raw.shape[2], 3)].astype(np.float64).mean(axis=2)
    raise ValueError(f"cannot interpret array of shape {raw.shape} as a grayscale image")


def _center_pad_square(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    side = max(h, w)
    if h == w:
        return img
    out = np.zeros((side, side), dtype=img.dtype)
    top = (side - h) // 2
    left = (side - w) // 2
    out[top : top + h, left : left + w] = img
    return out


def preprocess(
    raw: np.ndarray,
    source_id: str = "",
    capture_date: Optional[dt.date] = None,
) -> CxrImage:
    """Turn an arbitrary-size 8/16-bit or float radiograph into a CxrImage.

    Aspect ratio is preserved by center-padding with zeros to a square
    before the bilinear resize to 512x512; intensities are then min-max
    normalized to [0, 1]. A zero-variance input normalizes to all-zeros
    and the result carries the ``constant_input`` flag.
    """
    raw = np.asarray(raw)
    if raw.size == 0:
        raise ValueError("empty image")
    img = _to_luminance(raw)
    img = _center_pad_square(img)
    img = resize_bilinear(img, (CANONICAL_SIZE, CANONICAL_SIZE)).astype(np.float64)

    lo, hi = float(img.min()), float(img.max())
    flags: tuple[str, ...] = ()
    if hi - lo <= 0.0:
        img = np.zeros_like(img)
        flags = (CONSTANT_INPUT,)
    else:
        img = (img - lo) / (hi - lo)
    return CxrImage(
        pixels=np.clip(img, 0.0, 1.0).astype(np.float32),
        source_id=source_id,
        capture_date=capture_date,
        flags=flags,
    )
