"""Stage 2: Normal-vs-Pneumonia screening on lung-masked images.

Pneumonia of either type maps to the positive class; the stage exists to
filter out normal studies. Every screening also produces the stage-2 CAM,
which stage 3 consumes and the audit trail stores regardless of the
decision.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from torch import nn

from .backbone import BackboneConfig, StageModel, forward, new_stage_model, softmax
from .data.types import CxrImage, Label, LabeledSample, Partition
from .evaluation import roc_auc
from .explain import HeatMap, cam
from .segmenter import SegmenterModel, apply_mask, predict_mask
from .training import (
    ArrayDataset,
    CheckpointBundle,
    TrainConfig,
    classification_batch_loss,
    fit,
)


@dataclass(frozen=True, eq=False)
class Stage2Output:
    prob_pneumonia: float
    decision: bool
    heatmap: HeatMap
    threshold: float
    flags: tuple[str, ...] = ()


def relabel_binary(sample: LabeledSample) -> int:
    """NORMAL -> 0; COVID and NON_COVID_PNEUMONIA -> 1."""
    return 0 if sample.label == Label.NORMAL else 1


def masked_pixels(image: CxrImage, segmenter: SegmenterModel) -> CxrImage:
    return apply_mask(image, predict_mask(image, segmenter))


def build_stage2_dataset(
    samples: Sequence[LabeledSample],
    segmenter: Optional[SegmenterModel],
) -> ArrayDataset:
    """Lung-mask every image (or pass it through for the ablation arm)."""
    inputs = []
    for s in samples:
        img = masked_pixels(s.image, segmenter) if segmenter is not None else s.image
        inputs.append(img.pixels)
    return ArrayDataset(
        inputs=np.stack(inputs),
        targets=np.array([relabel_binary(s) for s in samples], dtype=np.int64),
        is_original=np.array([s.partition == Partition.ORIGINAL for s in samples], dtype=bool),
        groups=[int(s.label) for s in samples],  # balance over the 3-way classes
        ids=tuple(s.source_id for s in samples),
    )


def _auc_metric():
    def metric(net: nn.Module, val: ArrayDataset) -> dict:
        import torch

        with torch.no_grad():
            logits = net(torch.from_numpy(val.inputs[:, None]).float())[0].numpy()
        scores = [float(softmax(row)[1]) for row in logits]
        try:
            return {"val_auc": roc_auc(scores, val.targets.tolist())}
        except ValueError:
            return {"val_auc": float("nan")}

    return metric


def train_stage2(
    train_samples: Sequence[LabeledSample],
    segmenter: Optional[SegmenterModel],
    config: TrainConfig,
    teacher: Optional[StageModel] = None,
    val_samples: Sequence[LabeledSample] = (),
    backbone_config: Optional[BackboneConfig] = None,
) -> CheckpointBundle:
    """Train the pneumonia filter on masked images with balanced batches.

    With a teacher, the student starts from the teacher's parameters and
    the incremental objective (config.lam) anchors predictions on
    original-collection samples; the teacher itself is never modified.
    """
    if config.stage != 2:
        raise ValueError("train_stage2 expects a stage-2 config")
    if not train_samples and config.epochs > 0:
        raise ValueError("empty training corpus")
    if teacher is not None and teacher.config.num_classes != 2:
        raise ValueError("teacher head arity mismatch")

    if teacher is not None:
        model = StageModel(stage=2, config=teacher.config, net=copy.deepcopy(teacher.net))
    else:
        model = new_stage_model(2, backbone_config or BackboneConfig(seed=config.seed))
    if config.epochs == 0:
        return CheckpointBundle(model=model, config=config, teacher=teacher)

    train_set = build_stage2_dataset(train_samples, segmenter)
    val_set = build_stage2_dataset(val_samples, segmenter) if val_samples else None
    teacher_net = None
    if teacher is not None and config.lam > 0:
        teacher_net = teacher.net
        teacher_net.eval()
    result = fit(
        model.net,
        train_set,
        val_set,
        config,
        batch_loss=classification_batch_loss(teacher_net, config.lam, config.temperature),
        val_metric=_auc_metric() if val_set is not None else None,
    )
    return CheckpointBundle(
        model=model, config=config, history=result.history, teacher=teacher,
        aborted=result.aborted,
    )


def screen_stage2(
    image: CxrImage,
    segmenter: SegmenterModel,
    model: StageModel,
    threshold: float = 0.5,
) -> Stage2Output:
    """Mask, classify, and attach the positive-class CAM (H2)."""
    masked = masked_pixels(image, segmenter)
    record = forward(masked, model)
    prob = float(softmax(record.logits)[1])
    heatmap = cam(record, model, target_class=1, stage=2)
    return Stage2Output(
        prob_pneumonia=prob,
        decision=prob >= threshold,
        heatmap=heatmap,
        threshold=threshold,
        flags=masked.flags,
    )
