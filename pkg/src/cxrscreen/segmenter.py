"""Stage 1: lung mask prediction and application.

A small 4-level encoder-decoder with skip connections runs at a reduced
working resolution (default 128) and its logits are bilinearly upsampled
back to the 512x512 canonical plane, where they are thresholded at 0.5.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .backbone import Act
from .data.types import CxrImage, LabeledSample
from .training import ArrayDataset, CheckpointBundle, TrainConfig, fit

EMPTY_MASK = "empty_mask"


@dataclass(frozen=True, eq=False)
class LungMask:
    pixels: np.ndarray                # binary uint8, same shape as the image
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        vals = np.unique(self.pixels)
        if not set(vals.tolist()) <= {0, 1}:
            raise ValueError("mask values must be 0 or 1")

    @property
    def is_empty(self) -> bool:
        return not bool(self.pixels.any())


@dataclass(frozen=True)
class SegmenterConfig:
    base_channels: int = 16
    depth: int = 4
    work_size: int = 128
    threshold: float = 0.5
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "base_channels": self.base_channels,
            "depth": self.depth,
            "work_size": self.work_size,
            "threshold": self.threshold,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "SegmenterConfig":
        return SegmenterConfig(**d)


class _ConvBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, padding=1, bias=False)
        self.norm = nn.BatchNorm2d(out_ch)
        self.act = Act("relu")

    def forward(self, x):
        return self.act(self.norm(self.conv(x)))


class UNet(nn.Module):
    def __init__(self, config: SegmenterConfig):
        super().__init__()
        self.config = config
        chans = [config.base_channels * (2 ** i) for i in range(config.depth)]
        self.enc = nn.ModuleList()
        in_ch = 1
        for c in chans:
            self.enc.append(_ConvBlock(in_ch, c))
            in_ch = c
        self.pool = nn.MaxPool2d(2)
        self.dec = nn.ModuleList()
        for skip_c, up_c in zip(chans[-2::-1], chans[:0:-1]):
            self.dec.append(_ConvBlock(skip_c + up_c, skip_c))
        self.head = nn.Conv2d(chans[0], 1, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        size = x.shape[-2:]
        w = self.config.work_size
        y = F.interpolate(x, size=(w, w), mode="bilinear", align_corners=False)
        skips = []
        for i, block in enumerate(self.enc):
            y = block(y)
            if i < len(self.enc) - 1:
                skips.append(y)
                y = self.pool(y)
        for block, skip in zip(self.dec, reversed(skips)):
            y = F.interpolate(y, size=skip.shape[-2:], mode="bilinear", align_corners=False)
            y = block(torch.cat([skip, y], dim=1))
        logits = self.head(y)
        return F.interpolate(logits, size=size, mode="bilinear", align_corners=False)


@dataclass(eq=False)
class SegmenterModel:
    config: SegmenterConfig
    net: UNet
    version_id: str = ""

    def tensor_from(self, pixels: np.ndarray) -> torch.Tensor:
        dtype = next(self.net.parameters()).dtype
        return torch.from_numpy(np.ascontiguousarray(pixels)).to(dtype)[None, None]


def new_segmenter(config: Optional[SegmenterConfig] = None) -> SegmenterModel:
    config = config or SegmenterConfig()
    torch.manual_seed(config.seed)
    net = UNet(config)
    for m in net.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_uniform_(m.weight, nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
    net.eval()
    return SegmenterModel(config=config, net=net)


def predict_mask(image: CxrImage, model: SegmenterModel) -> LungMask:
    """Per-pixel probability thresholded into a binary mask."""
    model.net.eval()
    with torch.no_grad():
        logits = model.net(model.tensor_from(image.pixels))
        probs = torch.sigmoid(logits)[0, 0].cpu().numpy()
    mask = (probs >= model.config.threshold).astype(np.uint8)
    flags = (EMPTY_MASK,) if not mask.any() else ()
    return LungMask(pixels=mask, flags=flags)


def _mask_pixels(mask) -> np.ndarray:
    return mask.pixels if isinstance(mask, LungMask) else np.asarray(mask)


def dice(a, b) -> float:
    """Dice similarity 2|a n b| / (|a| + |b|); two empty masks score 1.0."""
    pa, pb = _mask_pixels(a), _mask_pixels(b)
    if pa.shape != pb.shape:
        raise ValueError(f"mask shapes differ: {pa.shape} vs {pb.shape}")
    pa = pa.astype(bool)
    pb = pb.astype(bool)
    denom = int(pa.sum()) + int(pb.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((pa & pb).sum()) / denom


def apply_mask(image: CxrImage, mask) -> CxrImage:
    """Elementwise product; pixels outside the mask become exactly zero."""
    pm = _mask_pixels(mask)
    if image.pixels.shape != pm.shape:
        raise ValueError(f"shape mismatch: image {image.pixels.shape} vs mask {pm.shape}")
    flags = image.flags
    if isinstance(mask, LungMask) and mask.flags:
        flags = tuple(dict.fromkeys(flags + mask.flags))
    return CxrImage(
        pixels=(image.pixels * pm.astype(np.float32)),
        source_id=image.source_id,
        capture_date=image.capture_date,
        flags=flags,
    )


def _segmentation_batch_loss(net: nn.Module, x: torch.Tensor, target: torch.Tensor, _orig) -> torch.Tensor:
    logits = net(x)
    bce = F.binary_cross_entropy_with_logits(logits, target)
    probs = torch.sigmoid(logits)
    eps = 1.0
    inter = (probs * target).sum()
    soft_dice = 1.0 - (2 * inter + eps) / (probs.sum() + target.sum() + eps)
    return bce + soft_dice


def _dataset_from(samples: Sequence[LabeledSample]) -> ArrayDataset:
    for s in samples:
        if s.lung_mask is None:
            raise ValueError(f"sample {s.source_id} lacks a ground-truth mask")
    return ArrayDataset(
        inputs=np.stack([s.image.pixels for s in samples]),
        targets=np.stack([s.lung_mask.astype(np.float32) for s in samples]),
        is_original=np.ones(len(samples), dtype=bool),
        groups=[0] * len(samples),
        ids=tuple(s.source_id for s in samples),
    )


def train_segmenter(
    train_samples: Sequence[LabeledSample],
    config: TrainConfig,
    val_samples: Sequence[LabeledSample] = (),
    seg_config: Optional[SegmenterConfig] = None,
) -> CheckpointBundle:
    """BCE + soft-dice training; history carries per-epoch loss and val DSC."""
    if config.stage != 1:
        raise ValueError("train_segmenter expects a stage-1 config")
    if not train_samples and config.epochs > 0:
        raise ValueError("empty training corpus")
    model = new_segmenter(seg_config or SegmenterConfig(seed=config.seed))
    if config.epochs == 0:
        return CheckpointBundle(model=model, config=config, history=[])
    train_set = _dataset_from(train_samples)
    val_set = _dataset_from(val_samples) if val_samples else None

    def val_metric(net: nn.Module, _val: ArrayDataset) -> dict:
        scores = [
            dice(predict_mask(s.image, model), s.lung_mask) for s in val_samples
        ]
        return {"val_dsc": float(np.mean(scores))}

    result = fit(
        model.net,
        train_set,
        val_set,
        config,
        batch_loss=_segmentation_batch_loss,
        val_metric=val_metric if val_samples else None,
    )
    return CheckpointBundle(
        model=model, config=config, history=result.history, aborted=result.aborted
    )
