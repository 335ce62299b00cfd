"""Reference synthetic pilots: the end-to-end cascade run and the two-arm
incremental (forgetting) comparison backing the acceptance thresholds."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .backbone import BackboneConfig
from .data import Label, SyntheticSpec, generate_synthetic_corpus
from .data.splits import protocol_split
from .data.types import TrainingCorpus
from .evaluation import roc_auc
from .segmenter import SegmenterConfig, dice, predict_mask, train_segmenter
from .stage2 import build_stage2_dataset, train_stage2
from .stage3 import build_stage3_dataset, train_stage3
from .training import CheckpointBundle, TrainConfig

PILOT_SPEC = SyntheticSpec(n_normal=60, n_covid=30, n_pneumonia=30, seed=7)
FORGETTING_SPEC = SyntheticSpec(n_normal=40, n_covid=16, n_pneumonia=20, seed=7)

# desk-scale defaults used by every pilot stage
PILOT_BACKBONE = BackboneConfig(channels=64, growth=12, block_layers=(2, 2, 2),
                                stem_channels=16)
PILOT_SEGMENTER = SegmenterConfig(base_channels=16, depth=4, work_size=128)


def _scores_and_labels(model, dataset):
    import torch

    from .backbone import softmax

    with torch.no_grad():
        logits = model.net(torch.from_numpy(dataset.inputs[:, None]).float())[0].numpy()
    return [float(softmax(row)[1]) for row in logits], dataset.targets.tolist()


@dataclass
class PilotOutcome:
    test_dsc: float
    stage2_test_auc: float
    stage3_test_auc: float
    seg_bundle: CheckpointBundle
    stage2_bundle: CheckpointBundle
    stage3_bundle: CheckpointBundle
    corpus: TrainingCorpus
    split: object
    timings: dict = field(default_factory=dict)


def run_reference_pilot(
    seed: int = 7,
    spec: SyntheticSpec = PILOT_SPEC,
    epochs: int = 20,
    stage1_max_samples: int = 40,
    verbose: bool = False,
) -> PilotOutcome:
    """Train all three stages on the synthetic corpus and score the test split."""
    def log(msg):
        if verbose:
            print(f"[pilot] {msg}", flush=True)

    timings: dict = {}
    t0 = time.time()
    corpus = generate_synthetic_corpus(spec)
    split = protocol_split(corpus, seed)
    train_samples = list(corpus.by_ids(split.train))
    val_samples = list(corpus.by_ids(split.val))
    test_samples = list(corpus.by_ids(split.test))
    timings["data"] = time.time() - t0
    log(f"corpus {len(corpus)}: split {len(train_samples)}/{len(val_samples)}/{len(test_samples)}")

    t0 = time.time()
    seg_train = [s for s in train_samples if s.lung_mask is not None][:stage1_max_samples]
    seg_bundle = train_segmenter(
        seg_train,
        TrainConfig(stage=1, epochs=epochs, batch_size=4, seed=seed),
        val_samples=val_samples,
        seg_config=SegmenterConfig(**{**PILOT_SEGMENTER.to_dict(), "seed": seed}),
    )
    segmenter = seg_bundle.model
    test_dsc = float(np.mean([
        dice(predict_mask(s.image, segmenter), s.lung_mask) for s in test_samples
    ]))
    timings["stage1"] = time.time() - t0
    log(f"stage 1 in {timings['stage1']:.0f}s; test DSC {test_dsc:.4f}")

    t0 = time.time()
    stage2_bundle = train_stage2(
        train_samples, segmenter,
        TrainConfig(stage=2, epochs=epochs, batch_size=9, seed=seed),
        val_samples=val_samples,
        backbone_config=BackboneConfig(**{**PILOT_BACKBONE.to_dict(), "seed": seed}),
    )
    test2 = build_stage2_dataset(test_samples, segmenter)
    stage2_test_auc = roc_auc(*_scores_and_labels(stage2_bundle.model, test2))
    timings["stage2"] = time.time() - t0
    log(f"stage 2 in {timings['stage2']:.0f}s; test AUC {stage2_test_auc:.4f}")

    t0 = time.time()
    pneumonia_train = [s for s in train_samples if s.label != Label.NORMAL]
    pneumonia_val = [s for s in val_samples if s.label != Label.NORMAL]
    pneumonia_test = [s for s in test_samples if s.label != Label.NORMAL]
    stage3_bundle = train_stage3(
        pneumonia_train, segmenter, stage2_bundle.model,
        TrainConfig(stage=3, epochs=epochs, batch_size=8, seed=seed),
        val_samples=pneumonia_val,
        backbone_config=BackboneConfig(**{**PILOT_BACKBONE.to_dict(), "seed": seed + 1}),
    )
    test3 = build_stage3_dataset(pneumonia_test, segmenter, stage2_bundle.model)
    stage3_test_auc = roc_auc(*_scores_and_labels(stage3_bundle.model, test3))
    timings["stage3"] = time.time() - t0
    log(f"stage 3 in {timings['stage3']:.0f}s; test AUC {stage3_test_auc:.4f}")

    return PilotOutcome(
        test_dsc=test_dsc,
        stage2_test_auc=stage2_test_auc,
        stage3_test_auc=stage3_test_auc,
        seg_bundle=seg_bundle,
        stage2_bundle=stage2_bundle,
        stage3_bundle=stage3_bundle,
        corpus=corpus,
        split=split,
        timings=timings,
    )


def run_forgetting_pilot(
    seed: int = 7,
    spec: SyntheticSpec = FORGETTING_SPEC,
    pretrain_epochs: int = 12,
    incremental_epochs: int = 8,
    lam: float = 1.0,
    verbose: bool = False,
) -> dict:
    """Pretrain stage 2 on the original collection, then extend on the full
    corpus with and without distillation; report original-data val AUC."""
    def log(msg):
        if verbose:
            print(f"[forgetting] {msg}", flush=True)

    corpus = generate_synthetic_corpus(spec)
    split = protocol_split(corpus, seed)
    train_samples = list(corpus.by_ids(split.train))
    val_samples = list(corpus.by_ids(split.val))
    original_train = [s for s in train_samples if s.label != Label.COVID]
    original_val = [s for s in val_samples if s.label != Label.COVID]

    backbone = BackboneConfig(**{**PILOT_BACKBONE.to_dict(), "seed": seed})
    teacher_bundle = train_stage2(
        original_train, None,
        TrainConfig(stage=2, epochs=pretrain_epochs, batch_size=8, seed=seed),
        val_samples=original_val,
        backbone_config=backbone,
    )
    val_ds = build_stage2_dataset(original_val, None)
    auc_pre = roc_auc(*_scores_and_labels(teacher_bundle.model, val_ds))
    log(f"teacher pretrained; original-val AUC {auc_pre:.4f}")

    results = {"auc_pre": auc_pre}
    for arm_lam in (lam, 0.0):
        arm = train_stage2(
            train_samples, None,
            TrainConfig(stage=2, epochs=incremental_epochs, batch_size=9, seed=seed,
                        lam=arm_lam),
            teacher=teacher_bundle.model,
            backbone_config=backbone,
        )
        auc_post = roc_auc(*_scores_and_labels(arm.model, val_ds))
        key = "auc_post_distilled" if arm_lam > 0 else "auc_post_plain"
        results[key] = auc_post
        log(f"lambda={arm_lam}: original-val AUC {auc_post:.4f}")
    results["retention_gap"] = abs(results["auc_pre"] - results["auc_post_distilled"])
    return results
