"""Densely connected classifier backbone shared by the pneumonia and COVID stages.

Exposes logits, the pre-pooling spatial feature map (the attribution
target) and the pooled feature vector. The spatial reduction is fixed at
16x, so a 512x512 input yields a 32x32 map; the pooled vector length
equals the configured channel count.
"""

from __future__ import annotations

import contextlib
import contextvars
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
from torch import nn

from .data.types import CxrImage

_GUIDED_MODE: contextvars.ContextVar[bool] = contextvars.ContextVar("guided_mode", default=False)


@contextlib.contextmanager
def guided_backprop_mode():
    """While active, every ReLU backward pass also zeroes negative gradients."""
    token = _GUIDED_MODE.set(True)
    try:
        yield
    finally:
        _GUIDED_MODE.reset(token)


class _GuidedReLU(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        out = x.clamp(min=0)
        ctx.save_for_backward(out)
        return out

    @staticmethod
    def backward(ctx, grad_out):
        (out,) = ctx.saved_tensors
        # suppress gradients that are negative or flow into inactive units
        return grad_out.clamp(min=0) * (out > 0)


class Act(nn.Module):
    """ReLU (guided-backprop aware) or identity, per backbone config."""

    def __init__(self, kind: str = "relu"):
        super().__init__()
        if kind not in ("relu", "identity"):
            raise ValueError(f"unknown activation {kind!r}")
        self.kind = kind

    def forward(self, x):
        if self.kind == "identity":
            return x
        if _GUIDED_MODE.get():
            return _GuidedReLU.apply(x)
        return torch.relu(x)


@dataclass(frozen=True)
class BackboneConfig:
    channels: int = 64                 # pooled feature length C
    growth: int = 12
    block_layers: tuple[int, int, int] = (2, 2, 2)
    stem_channels: int = 16
    activation: str = "relu"
    num_classes: int = 2
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "channels": self.channels,
            "growth": self.growth,
            "block_layers": list(self.block_layers),
            "stem_channels": self.stem_channels,
            "activation": self.activation,
            "num_classes": self.num_classes,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "BackboneConfig":
        d = dict(d)
        d["block_layers"] = tuple(d["block_layers"])
        return BackboneConfig(**d)


class _DenseLayer(nn.Module):
    def __init__(self, in_ch: int, growth: int, activation: str):
        super().__init__()
        self.norm = nn.BatchNorm2d(in_ch)
        self.act = Act(activation)
        self.conv = nn.Conv2d(in_ch, growth, kernel_size=3, padding=1, bias=False)

    def forward(self, x):
        y = self.conv(self.act(self.norm(x)))
        return torch.cat([x, y], dim=1)


class _Transition(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, activation: str):
        super().__init__()
        self.norm = nn.BatchNorm2d(in_ch)
        self.act = Act(activation)
        self.conv = nn.Conv2d(in_ch, out_ch, kernel_size=1, bias=False)
        self.pool = nn.AvgPool2d(2)

    def forward(self, x):
        return self.pool(self.conv(self.act(self.norm(x))))


class DenseBackbone(nn.Module):
    """Dense blocks over a 16x-reduced grid, GAP, linear head."""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        act = config.activation
        # cheap parameter-free halving keeps the 512-resolution plane out of
        # every convolution
        self.pre_pool = nn.AvgPool2d(2)
        self.stem = nn.Conv2d(1, config.stem_channels, kernel_size=3, stride=2, padding=1, bias=False)

        ch = config.stem_channels
        stages: list[nn.Module] = []
        for i, n_layers in enumerate(config.block_layers):
            block = []
            for _ in range(n_layers):
                block.append(_DenseLayer(ch, config.growth, act))
                ch += config.growth
            stages.append(nn.Sequential(*block))
            if i < len(config.block_layers) - 1:
                out_ch = max(1, ch // 2)
                stages.append(_Transition(ch, out_ch, act))
                ch = out_ch
        self.blocks = nn.Sequential(*stages)
        self.final_norm = nn.BatchNorm2d(ch)
        self.final_act = Act(act)
        self.feature_conv = nn.Conv2d(ch, config.channels, kernel_size=1, bias=False)
        self.head = nn.Linear(config.channels, config.num_classes)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """Pre-pooling spatial feature map A, shape (B, C, H/16, W/16)."""
        y = self.pre_pool(x)
        y = self.stem(y)
        y = self.blocks(y)
        return self.feature_conv(self.final_act(self.final_norm(y)))

    def forward(self, x: torch.Tensor):
        spatial = self.features(x)
        pooled = spatial.mean(dim=(2, 3))
        logits = self.head(pooled)
        return logits, pooled, spatial


@dataclass(eq=False)
class StageModel:
    """A stage-tagged backbone plus its construction config."""

    stage: int
    config: BackboneConfig
    net: DenseBackbone
    version_id: str = ""

    def tensor_from(self, pixels: np.ndarray) -> torch.Tensor:
        dtype = next(self.net.parameters()).dtype
        return torch.from_numpy(np.ascontiguousarray(pixels)).to(dtype)[None, None]

    def head_weights(self) -> np.ndarray:
        """Classifier head weight matrix, shape (num_classes, C)."""
        return self.net.head.weight.detach().cpu().numpy()


def _he_init(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_uniform_(m.weight, nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.Linear):
            nn.init.kaiming_uniform_(m.weight, nonlinearity="relu")
            nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


def new_stage_model(stage: int, config: Optional[BackboneConfig] = None) -> StageModel:
    config = config or BackboneConfig()
    torch.manual_seed(config.seed)
    net = DenseBackbone(config)
    _he_init(net)
    net.eval()
    return StageModel(stage=stage, config=config, net=net)


@dataclass(eq=False)
class ForwardRecord:
    """One forward pass: logits, GAP vector and the spatial map behind it."""

    logits: np.ndarray          # (num_classes,)
    pooled: np.ndarray          # (C,)
    spatial: np.ndarray         # (C, H/16, W/16)
    image: Optional[np.ndarray] = None


def forward(image: CxrImage, model: StageModel) -> ForwardRecord:
    """Run the backbone on a canonical image; GAP consistency holds to 1e-6."""
    model.net.eval()
    with torch.no_grad():
        logits, pooled, spatial = model.net(model.tensor_from(image.pixels))
    return ForwardRecord(
        logits=logits[0].cpu().numpy(),
        pooled=pooled[0].cpu().numpy(),
        spatial=spatial[0].cpu().numpy(),
        image=image.pixels,
    )


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def predict_proba(image: CxrImage, model: StageModel) -> float:
    """Positive-class probability under the two-way softmax head."""
    record = forward(image, model)
    return float(softmax(record.logits)[1])
