import numpy as np
import torch

from cxrscreen.backbone import BackboneConfig, forward, new_stage_model
from cxrscreen.checkpoint import load_bundle, save_bundle, version_id
from cxrscreen.data import CxrImage
from cxrscreen.segmenter import SegmenterConfig, new_segmenter, predict_mask
from cxrscreen.training import CheckpointBundle, TrainConfig

SMALL = BackboneConfig(channels=4, growth=2, block_layers=(1, 1, 1), stem_channels=4, seed=0)


def test_classifier_roundtrip(tmp_path):
    model = new_stage_model(2, SMALL)
    bundle = CheckpointBundle(
        model=model,
        config=TrainConfig(stage=2, epochs=3, seed=7),
        history=[{"epoch": 0, "train_loss": 1.0}],
    )
    save_bundle(bundle, tmp_path / "b")
    loaded = load_bundle(tmp_path / "b")
    assert loaded.config == bundle.config
    assert loaded.history == bundle.history
    img = CxrImage(pixels=np.random.default_rng(0).random((32, 32)).astype(np.float32))
    np.testing.assert_array_equal(forward(img, model).logits, forward(img, loaded.model).logits)
    assert loaded.model.version_id == version_id(2, model.net)


def test_segmenter_roundtrip(tmp_path):
    model = new_segmenter(SegmenterConfig(work_size=32, seed=3))
    bundle = CheckpointBundle(model=model, config=TrainConfig(stage=1, epochs=0, seed=3))
    save_bundle(bundle, tmp_path / "seg")
    loaded = load_bundle(tmp_path / "seg")
    img = CxrImage(pixels=np.random.default_rng(1).random((64, 64)).astype(np.float32))
    np.testing.assert_array_equal(
        predict_mask(img, model).pixels, predict_mask(img, loaded.model).pixels
    )


def test_teacher_roundtrip(tmp_path):
    student = new_stage_model(2, SMALL)
    teacher = new_stage_model(2, BackboneConfig(**{**SMALL.to_dict(), "seed": 9,
                                                   "block_layers": (1, 1, 1)}))
    bundle = CheckpointBundle(
        model=student, config=TrainConfig(stage=2, epochs=1, lam=1.0, seed=1), teacher=teacher
    )
    save_bundle(bundle, tmp_path / "inc")
    loaded = load_bundle(tmp_path / "inc")
    assert loaded.teacher is not None
    for a, b in zip(teacher.net.parameters(), loaded.teacher.net.parameters()):
        assert torch.equal(a, b)
