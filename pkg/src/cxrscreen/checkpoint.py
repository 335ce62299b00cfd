"""Checkpoint bundles: parameter archive + JSON manifest, shared by all stages.

Layout of a bundle directory::

    manifest.json    stage, kind, configs, seed, metric history, version id
    params.pt        model state_dict
    teacher.pt       frozen teacher state_dict (incremental runs only)
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Optional

import torch

from .backbone import BackboneConfig, DenseBackbone, StageModel
from .segmenter import SegmenterConfig, SegmenterModel, UNet
from .training import CheckpointBundle, TrainConfig


def _digest(net: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for name, tensor in sorted(net.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.cpu().numpy().tobytes())
    return h.hexdigest()[:12]


def version_id(stage: int, net: torch.nn.Module) -> str:
    return f"stage{stage}-{_digest(net)}"


def save_bundle(bundle: CheckpointBundle, path: str | Path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    model = bundle.model
    if isinstance(model, SegmenterModel):
        stage, kind = 1, "segmenter"
        model_config = model.config.to_dict()
    elif isinstance(model, StageModel):
        stage, kind = model.stage, "classifier"
        model_config = model.config.to_dict()
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")

    manifest = {
        "stage": stage,
        "kind": kind,
        "version_id": version_id(stage, model.net),
        "config": bundle.config.to_dict(),
        "model_config": model_config,
        "seed": bundle.seed,
        "metrics": bundle.history,
        "aborted": bundle.aborted,
        "has_teacher": bundle.teacher is not None,
    }
    torch.save(model.net.state_dict(), path / "params.pt")
    if bundle.teacher is not None:
        torch.save(bundle.teacher.net.state_dict(), path / "teacher.pt")
        manifest["teacher_config"] = bundle.teacher.config.to_dict()
    with open(path / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    return path


def _load_classifier(stage: int, model_config: dict, state_path: Path) -> StageModel:
    config = BackboneConfig.from_dict(model_config)
    net = DenseBackbone(config)
    net.load_state_dict(torch.load(state_path, map_location="cpu", weights_only=True))
    net.eval()
    model = StageModel(stage=stage, config=config, net=net)
    model.version_id = version_id(stage, net)
    return model


def load_bundle(path: str | Path) -> CheckpointBundle:
    path = Path(path)
    with open(path / "manifest.json") as fh:
        manifest = json.load(fh)
    config = TrainConfig.from_dict(manifest["config"])
    if manifest["kind"] == "segmenter":
        seg_config = SegmenterConfig.from_dict(manifest["model_config"])
        net = UNet(seg_config)
        net.load_state_dict(torch.load(path / "params.pt", map_location="cpu", weights_only=True))
        net.eval()
        model: object = SegmenterModel(config=seg_config, net=net,
                                       version_id=version_id(1, net))
    else:
        model = _load_classifier(manifest["stage"], manifest["model_config"], path / "params.pt")
    teacher: Optional[StageModel] = None
    if manifest.get("has_teacher") and (path / "teacher.pt").exists():
        teacher = _load_classifier(
            manifest["stage"], manifest["teacher_config"], path / "teacher.pt"
        )
    return CheckpointBundle(
        model=model,
        config=config,
        history=manifest.get("metrics", []),
        teacher=teacher,
        aborted=manifest.get("aborted", False),
    )


def load_model(path: str | Path):
    """Just the model from a bundle directory."""
    return load_bundle(path).model
