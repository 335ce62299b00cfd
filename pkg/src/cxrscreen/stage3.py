"""Stage 3: COVID-19 vs non-COVID pneumonia on the heatmap-masked input.

The stage-3 input is the pixel-wise product of the lung-masked image with
the stage-2 CAM; the attenuation itself is the signal and is not
re-normalized. Explanations come from GradCAM and Guided-GradCAM at the
COVID logit.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .backbone import BackboneConfig, StageModel, forward, new_stage_model, softmax
from .data.types import CxrImage, Label, LabeledSample, Partition
from .explain import GuidedActivation, HeatMap, cam, grad_cam, guided_grad_cam
from .segmenter import SegmenterModel
from .stage2 import _auc_metric, masked_pixels
from .training import (
    ArrayDataset,
    CheckpointBundle,
    TrainConfig,
    classification_batch_loss,
    fit,
)


@dataclass(frozen=True, eq=False)
class MaskedInput:
    """x-tilde: the image attenuated by the stage-2 heatmap."""

    pixels: np.ndarray
    source_id: str = ""
    heatmap_method: str = ""
    flags: tuple[str, ...] = ()


@dataclass(frozen=True, eq=False)
class Stage3Output:
    prob_covid: float
    decision: bool
    gradcam: HeatMap
    guided: GuidedActivation
    threshold: float


def make_stage3_input(image: CxrImage, h2: HeatMap) -> MaskedInput:
    """Pixel-wise product x * H2; never exceeds the input image."""
    if image.pixels.shape != h2.pixels.shape:
        raise ValueError(
            f"shape mismatch: image {image.pixels.shape} vs heatmap {h2.pixels.shape}"
        )
    flags = tuple(dict.fromkeys(image.flags + h2.flags))
    return MaskedInput(
        pixels=image.pixels * h2.pixels,
        source_id=image.source_id,
        heatmap_method=h2.method,
        flags=flags,
    )


def relabel_stage3(sample: LabeledSample) -> int:
    """COVID -> 1; NON_COVID_PNEUMONIA -> 0; normals never reach stage 3."""
    if sample.label == Label.COVID:
        return 1
    if sample.label == Label.NON_COVID_PNEUMONIA:
        return 0
    raise ValueError(f"stage 3 received a NORMAL sample ({sample.source_id})")


def build_stage3_dataset(
    samples: Sequence[LabeledSample],
    segmenter: Optional[SegmenterModel],
    stage2_model: StageModel,
) -> ArrayDataset:
    """Run the frozen upstream stages to derive x-tilde for every sample."""
    inputs = []
    for s in samples:
        masked = masked_pixels(s.image, segmenter) if segmenter is not None else s.image
        record = forward(masked, stage2_model)
        h2 = cam(record, stage2_model, target_class=1, stage=2)
        inputs.append(make_stage3_input(masked, h2).pixels)
    return ArrayDataset(
        inputs=np.stack(inputs),
        targets=np.array([relabel_stage3(s) for s in samples], dtype=np.int64),
        is_original=np.array([s.partition == Partition.ORIGINAL for s in samples], dtype=bool),
        groups=[int(s.label) for s in samples],
        ids=tuple(s.source_id for s in samples),
    )


def train_stage3(
    train_samples: Sequence[LabeledSample],
    segmenter: Optional[SegmenterModel],
    stage2_model: StageModel,
    config: TrainConfig,
    teacher: Optional[StageModel] = None,
    val_samples: Sequence[LabeledSample] = (),
    backbone_config: Optional[BackboneConfig] = None,
) -> CheckpointBundle:
    """Train the COVID discriminator; stages 1 and 2 stay frozen."""
    if config.stage != 3:
        raise ValueError("train_stage3 expects a stage-3 config")
    bad = [s.source_id for s in train_samples if s.label == Label.NORMAL]
    if bad:
        raise ValueError(f"stage 3 corpus contains NORMAL samples: {bad[:3]}")
    if not train_samples and config.epochs > 0:
        raise ValueError("empty training corpus")

    if teacher is not None:
        model = StageModel(stage=3, config=teacher.config, net=copy.deepcopy(teacher.net))
    else:
        model = new_stage_model(3, backbone_config or BackboneConfig(seed=config.seed))
    if config.epochs == 0:
        return CheckpointBundle(model=model, config=config, teacher=teacher)

    train_set = build_stage3_dataset(train_samples, segmenter, stage2_model)
    val_set = (
        build_stage3_dataset(val_samples, segmenter, stage2_model) if val_samples else None
    )
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


def screen_stage3(
    masked: MaskedInput,
    model: StageModel,
    threshold: float = 0.5,
) -> Stage3Output:
    """COVID probability plus GradCAM (H3) and guided activation."""
    record_prob = softmax(
        forward(CxrImage(pixels=masked.pixels, source_id=masked.source_id), model).logits
    )[1]
    prob = float(record_prob)
    h3 = grad_cam(masked.pixels, model, target_class=1, stage=3)
    guided = guided_grad_cam(masked.pixels, model, target_class=1)
    return Stage3Output(
        prob_covid=prob,
        decision=prob >= threshold,
        gradcam=h3,
        guided=guided,
        threshold=threshold,
    )
