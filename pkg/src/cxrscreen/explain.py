"""Attribution maps: CAM, GradCAM, guided backpropagation and their products.

All heatmaps are bilinearly upsampled from the backbone's 32x32 feature
grid to the 512x512 input plane and min-max normalized to [0, 1]. A map
that is constant before normalization becomes all-ones (flagged
``flat_attribution``) so that downstream pixel-wise products degrade to
identity instead of erasing the image.
"""

from __future__ import annotations

import base64
import io
from dataclasses import dataclass

import numpy as np
import torch
from PIL import Image

from .backbone import ForwardRecord, StageModel, guided_backprop_mode
from .data.preprocess import resize_bilinear

FLAT_ATTRIBUTION = "flat_attribution"

METHOD_CAM = "CAM"
METHOD_GRADCAM = "GRADCAM"


@dataclass(frozen=True, eq=False)
class HeatMap:
    pixels: np.ndarray         # (512, 512) in [0, 1]
    stage: int                 # 2 or 3
    method: str                # METHOD_CAM | METHOD_GRADCAM
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.pixels.ndim != 2:
            raise ValueError("heatmap must be 2-D")
        if self.method not in (METHOD_CAM, METHOD_GRADCAM):
            raise ValueError(f"unknown heatmap method {self.method!r}")


@dataclass(frozen=True, eq=False)
class GuidedActivation:
    """Signed input-space attribution plus a display copy in [-1, 1]."""

    pixels: np.ndarray
    display: np.ndarray
    stage: int = 3
    flags: tuple[str, ...] = ()


def _check_target(model: StageModel, target_class: int) -> None:
    n = model.config.num_classes
    if not 0 <= target_class < n:
        raise ValueError(f"target_class {target_class} out of range [0, {n})")


def upsample_normalize(low: np.ndarray, out_size: int) -> tuple[np.ndarray, bool]:
    """Bilinear upsample then min-max normalize; returns (map, was_flat)."""
    low = np.asarray(low, dtype=np.float64)
    if float(low.max() - low.min()) <= 1e-12:
        return np.ones((out_size, out_size), dtype=np.float32), True
    up = resize_bilinear(low, (out_size, out_size)).astype(np.float64)
    lo, hi = float(up.min()), float(up.max())
    if hi - lo <= 1e-12:
        return np.ones((out_size, out_size), dtype=np.float32), True
    return ((up - lo) / (hi - lo)).astype(np.float32), False


def cam_low_res(record: ForwardRecord, weight_row: np.ndarray) -> np.ndarray:
    """Head-weighted sum over spatial feature maps; linear in the weight row."""
    return np.tensordot(np.asarray(weight_row, dtype=np.float64), record.spatial, axes=(0, 0))


def cam(
    record: ForwardRecord,
    model: StageModel,
    target_class: int = 1,
    stage: int | None = None,
    literal_reshape: bool = False,
) -> HeatMap:
    """Class activation map from the head weights of ``target_class``.

    ``literal_reshape`` swaps in the alternative formulation that reshapes
    the pooled feature vector itself into a square grid (available for
    comparison; it carries no spatial localization).
    """
    _check_target(model, target_class)
    if record.spatial.shape[0] != model.config.channels:
        raise ValueError("record does not match the model's channel count")
    out_size = record.spatial.shape[1] * 16
    if literal_reshape:
        side = int(round(np.sqrt(record.pooled.size)))
        if side * side != record.pooled.size:
            raise ValueError(
                f"pooled length {record.pooled.size} is not a perfect square; "
                "literal reshape unavailable"
            )
        low = record.pooled.reshape(side, side)
        out_size = side * 16
    else:
        low = cam_low_res(record, model.head_weights()[target_class])
    pixels, flat = upsample_normalize(low, out_size)
    flags = (FLAT_ATTRIBUTION,) if flat else ()
    return HeatMap(pixels=pixels, stage=stage if stage is not None else model.stage,
                   method=METHOD_CAM, flags=flags)


def gradcam_alphas(pixels: np.ndarray, model: StageModel, target_class: int) -> np.ndarray:
    """Channel weights: spatial mean of d(target logit)/d(feature map)."""
    _check_target(model, target_class)
    model.net.eval()
    x = model.tensor_from(pixels)
    logits, _, spatial = model.net(x)
    (grad,) = torch.autograd.grad(logits[0, target_class], spatial)
    return grad.mean(dim=(2, 3))[0].detach().cpu().numpy()


def _grad_cam_raw(pixels: np.ndarray, model: StageModel, target_class: int):
    """ReLU-clipped gradient-weighted map, low-res and upsampled, unnormalized."""
    model.net.eval()
    x = model.tensor_from(pixels)
    logits, _, spatial = model.net(x)
    (grad,) = torch.autograd.grad(logits[0, target_class], spatial)
    alpha = grad.mean(dim=(2, 3))                                # (1, C)
    low = torch.relu((alpha[:, :, None, None] * spatial).sum(dim=1))[0]
    low = low.detach().cpu().numpy().astype(np.float64)
    out_size = low.shape[0] * 16
    if float(low.max() - low.min()) <= 1e-12:
        up = np.full((out_size, out_size), float(low.max()), dtype=np.float64)
    else:
        up = resize_bilinear(low, (out_size, out_size)).astype(np.float64)
    return low, up


def grad_cam(
    pixels: np.ndarray,
    model: StageModel,
    target_class: int = 1,
    stage: int | None = None,
) -> HeatMap:
    """GradCAM for the target logit at the final pre-pooling feature map."""
    _check_target(model, target_class)
    low, _ = _grad_cam_raw(pixels, model, target_class)
    out, flat = upsample_normalize(low, low.shape[0] * 16)
    flags = (FLAT_ATTRIBUTION,) if flat else ()
    return HeatMap(pixels=out, stage=stage if stage is not None else model.stage,
                   method=METHOD_GRADCAM, flags=flags)


def guided_backprop(pixels: np.ndarray, model: StageModel, target_class: int = 1) -> GuidedActivation:
    """Input gradient where every ReLU backward pass suppresses negative
    incoming gradients and inactive units."""
    _check_target(model, target_class)
    model.net.eval()
    x = model.tensor_from(pixels).requires_grad_(True)
    with guided_backprop_mode():
        logits, _, _ = model.net(x)
        (grad,) = torch.autograd.grad(logits[0, target_class], x)
    raw = grad[0, 0].detach().cpu().numpy().astype(np.float32)
    return GuidedActivation(pixels=raw, display=_display_normalize(raw), stage=model.stage)


def combine_guided(guided_raw: np.ndarray, gradcam_raw: np.ndarray) -> np.ndarray:
    """Elementwise product of guided backprop with the unnormalized GradCAM map."""
    if guided_raw.shape != gradcam_raw.shape:
        raise ValueError("shape mismatch")
    return (guided_raw.astype(np.float64) * gradcam_raw.astype(np.float64)).astype(np.float32)


def _display_normalize(raw: np.ndarray) -> np.ndarray:
    peak = float(np.abs(raw).max())
    if peak <= 0.0:
        return np.zeros_like(raw, dtype=np.float32)
    return (raw / peak).astype(np.float32)


def guided_grad_cam(pixels: np.ndarray, model: StageModel, target_class: int = 1) -> GuidedActivation:
    _check_target(model, target_class)
    guided = guided_backprop(pixels, model, target_class)
    _, up_raw = _grad_cam_raw(pixels, model, target_class)
    product = combine_guided(guided.pixels, up_raw)
    flags = () if np.abs(product).max() > 0 else (FLAT_ATTRIBUTION,)
    return GuidedActivation(
        pixels=product, display=_display_normalize(product), stage=model.stage, flags=flags
    )


# ---------------------------------------------------------------------------
# export helpers
# ---------------------------------------------------------------------------

def _png_bytes(arr_u8: np.ndarray, mode: str = "L") -> bytes:
    buf = io.BytesIO()
    Image.fromarray(arr_u8, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def heatmap_png(heatmap: HeatMap) -> bytes:
    """8-bit grayscale PNG of a [0, 1] heatmap."""
    return _png_bytes(np.round(heatmap.pixels * 255).astype(np.uint8))


def guided_png(guided: GuidedActivation) -> bytes:
    """8-bit PNG of the display copy, mapping [-1, 1] to [0, 255]."""
    arr = np.round((guided.display * 0.5 + 0.5) * 255).astype(np.uint8)
    return _png_bytes(arr)


def heatmap_base64(heatmap: HeatMap) -> str:
    return base64.b64encode(heatmap_png(heatmap)).decode("ascii")


def _jet(v: np.ndarray) -> np.ndarray:
    """Small jet-like colormap; v in [0,1] -> float RGB in [0,1]."""
    r = np.clip(1.5 - np.abs(4 * v - 3.0), 0, 1)
    g = np.clip(1.5 - np.abs(4 * v - 2.0), 0, 1)
    b = np.clip(1.5 - np.abs(4 * v - 1.0), 0, 1)
    return np.stack([r, g, b], axis=-1)


def overlay_png(base: np.ndarray, heat: np.ndarray, alpha: float = 0.45, colormap: str = "jet") -> bytes:
    """Colormapped heatmap alpha-blended over a grayscale image, as PNG."""
    if colormap != "jet":
        raise ValueError(f"unknown colormap {colormap!r}")
    if base.shape != heat.shape:
        raise ValueError("shape mismatch")
    gray = np.repeat(base[..., None], 3, axis=-1)
    blended = (1 - alpha) * gray + alpha * _jet(heat)
    return _png_bytes(np.round(np.clip(blended, 0, 1) * 255).astype(np.uint8), mode="RGB")
