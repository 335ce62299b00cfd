"""Optimization loops for all stages, including incremental training with
knowledge distillation against a frozen teacher.

The incremental objective averages, over the batch, the cross-entropy of
every sample plus ``lambda`` times the distillation divergence of the
samples drawn from the original collection:

    (1/|B|) * ( sum_B ce_i  +  lambda * sum_{B, original} kl_i )

With ``lambda = 0`` this reduces exactly to plain re-training.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import torch
from torch import nn

from .data.batching import balanced_batches


@dataclass(frozen=True)
class TrainConfig:
    stage: int
    epochs: int = 20
    batch_size: int = 8
    learning_rate: float = 1e-3
    lam: float = 0.0              # knowledge-distillation weight
    temperature: float = 1.0
    seed: int = 0
    grad_clip: float = 5.0

    def __post_init__(self) -> None:
        if self.stage not in (1, 2, 3):
            raise ValueError("stage must be 1, 2 or 3")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "lam": self.lam,
            "temperature": self.temperature,
            "seed": self.seed,
            "grad_clip": self.grad_clip,
        }

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        return TrainConfig(**d)


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x))


def cross_entropy(logits, label) -> torch.Tensor:
    """-log softmax(logits)[label]; log-stabilized via max subtraction."""
    z = _as_tensor(logits)
    if z.ndim != 1:
        raise ValueError("cross_entropy takes a single logit vector")
    log_p = torch.log_softmax(z.double(), dim=0)
    return -log_p[int(label)]


def distillation_loss(student_logits, teacher_logits, temperature: float = 1.0) -> torch.Tensor:
    """KL(softmax(teacher/T) || softmax(student/T)), scaled by T^2.

    Nonnegative; zero exactly when the tempered distributions coincide.
    """
    s = _as_tensor(student_logits).double()
    t = _as_tensor(teacher_logits).double()
    if s.shape != t.shape:
        raise ValueError("student and teacher logits must have the same arity")
    log_ps = torch.log_softmax(s / temperature, dim=-1)
    log_pt = torch.log_softmax(t / temperature, dim=-1)
    pt = log_pt.exp()
    kl = (pt * (log_pt - log_ps)).sum(dim=-1)
    return kl * (temperature ** 2)


def combined_loss(
    student_logits,
    labels,
    is_original,
    teacher_logits=None,
    lam: float = 0.0,
    temperature: float = 1.0,
) -> torch.Tensor:
    """Per-batch estimator of the incremental objective (see module docstring)."""
    z = _as_tensor(student_logits)
    if z.ndim == 1:
        z = z[None]
    y = _as_tensor(labels).long().reshape(-1)
    orig = _as_tensor(is_original).bool().reshape(-1)
    if z.shape[0] != y.shape[0] or z.shape[0] != orig.shape[0]:
        raise ValueError("batch size mismatch between logits, labels and flags")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if lam > 0 and teacher_logits is None:
        raise ValueError("lambda > 0 requires teacher logits")

    log_p = torch.log_softmax(z.double(), dim=1)
    ce = -log_p[torch.arange(len(y)), y]
    total = ce.sum()
    if lam > 0 and orig.any():
        t = _as_tensor(teacher_logits).double()
        kl = distillation_loss(z[orig], t[orig], temperature)
        total = total + lam * kl.sum()
    return total / len(y)


def corpus_loss(
    net: nn.Module,
    dataset: "ArrayDataset",
    teacher: Optional[nn.Module] = None,
    lam: float = 0.0,
    temperature: float = 1.0,
    chunk: int = 16,
) -> float:
    """Exact corpus-level incremental objective (slow audit counterpart of
    the per-batch estimator): averages over the whole dataset at once."""
    if lam > 0 and teacher is None:
        raise ValueError("lambda > 0 requires a teacher model")
    net.eval()
    ce_total = 0.0
    kl_total = 0.0
    with torch.no_grad():
        for start in range(0, len(dataset), chunk):
            idxs = list(range(start, min(start + chunk, len(dataset))))
            x, y, orig = dataset.batch(idxs)
            logits = net(x)[0].double()
            log_p = torch.log_softmax(logits, dim=1)
            ce_total += float(-log_p[torch.arange(len(y)), y].sum())
            if lam > 0 and orig.any():
                t_logits = teacher(x)[0].double()
                kl_total += float(
                    distillation_loss(logits[orig], t_logits[orig], temperature).sum()
                )
    return (ce_total + lam * kl_total) / len(dataset)


@dataclass(eq=False)
class ArrayDataset:
    """Tensor-ready samples for one stage: inputs, targets, balancing groups."""

    inputs: np.ndarray                      # (N, H, W) float32
    targets: np.ndarray                     # (N,) int64 labels or (N, H, W) masks
    is_original: np.ndarray                 # (N,) bool
    groups: Sequence                        # balancing keys, len N
    ids: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.inputs)

    def batch(self, idxs: Sequence[int], dtype=torch.float32):
        x = torch.from_numpy(self.inputs[list(idxs)]).to(dtype)[:, None]
        t = torch.from_numpy(self.targets[list(idxs)])
        if t.dtype.is_floating_point:
            t = t.to(dtype)
            if t.ndim == 3:
                t = t[:, None]
        else:
            t = t.long()
        orig = torch.from_numpy(self.is_original[list(idxs)])
        return x, t, orig


@dataclass(eq=False)
class FitResult:
    history: list[dict] = field(default_factory=list)
    aborted: bool = False
    abort_reason: str = ""


@dataclass(eq=False)
class CheckpointBundle:
    """A trained stage: parameters, optional frozen teacher, config, history."""

    model: object                      # SegmenterModel or StageModel
    config: TrainConfig
    history: list[dict] = field(default_factory=list)
    teacher: object | None = None
    aborted: bool = False

    @property
    def seed(self) -> int:
        return self.config.seed


BatchLoss = Callable[[nn.Module, torch.Tensor, torch.Tensor, torch.Tensor], torch.Tensor]
ValMetric = Callable[[nn.Module, ArrayDataset], dict]


def classification_batch_loss(
    teacher: Optional[nn.Module], lam: float, temperature: float
) -> BatchLoss:
    if lam > 0 and teacher is None:
        raise ValueError("lambda > 0 requires a teacher model")

    def loss_fn(net: nn.Module, x: torch.Tensor, y: torch.Tensor, orig: torch.Tensor) -> torch.Tensor:
        logits = net(x)[0]
        teacher_logits = None
        if teacher is not None and lam > 0:
            with torch.no_grad():
                teacher_logits = teacher(x)[0]
        return combined_loss(logits, y, orig, teacher_logits, lam, temperature)

    return loss_fn


def fit(
    net: nn.Module,
    train: ArrayDataset,
    val: Optional[ArrayDataset],
    config: TrainConfig,
    batch_loss: BatchLoss,
    val_metric: Optional[ValMetric] = None,
) -> FitResult:
    """Adam loop over balanced batches; deterministic for a fixed seed.

    Divergence (non-finite loss) aborts the run and restores the last
    finite end-of-epoch parameters.
    """
    result = FitResult()
    if config.epochs == 0:
        return result
    torch.manual_seed(config.seed)
    optimizer = torch.optim.Adam(net.parameters(), lr=config.learning_rate)
    indices = list(range(len(train)))
    all_batches = list(
        balanced_batches(indices, list(train.groups), config.batch_size,
                         seed=config.seed, epochs=config.epochs)
    )
    per_epoch = len(all_batches) // config.epochs
    last_good = copy.deepcopy(net.state_dict())

    for epoch in range(config.epochs):
        net.train()
        losses = []
        diverged = False
        for batch_idxs in all_batches[epoch * per_epoch : (epoch + 1) * per_epoch]:
            x, y, orig = train.batch(batch_idxs)
            optimizer.zero_grad()
            loss = batch_loss(net, x, y, orig)
            if not torch.isfinite(loss):
                diverged = True
                break
            loss.backward()
            if config.grad_clip > 0:
                nn.utils.clip_grad_norm_(net.parameters(), config.grad_clip)
            optimizer.step()
            losses.append(float(loss.detach()))
        if diverged:
            net.load_state_dict(last_good)
            result.aborted = True
            result.abort_reason = f"non-finite loss at epoch {epoch}"
            break
        last_good = copy.deepcopy(net.state_dict())
        record = {"epoch": epoch, "train_loss": float(np.mean(losses)) if losses else float("nan")}
        if val is not None and val_metric is not None:
            net.eval()
            record.update(val_metric(net, val))
        result.history.append(record)
    net.eval()
    return result
