"""Shared fixtures: tiny corpora and toy models for fast tests."""

from __future__ import annotations

import numpy as np

from cxrscreen.data import CxrImage, Label, LabeledSample, Partition, TrainingCorpus


def tiny_image(seed: int, size: int = 512) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.random((size, size)).astype(np.float32)


def make_corpus(normal: int = 0, covid: int = 0, pneumonia: int = 0, size: int = 16) -> TrainingCorpus:
    """Corpus of small random images; cheap enough for property tests."""
    samples = []
    spec = [
        (Label.NORMAL, Partition.ORIGINAL, normal),
        (Label.COVID, Partition.COVID_ADDED, covid),
        (Label.NON_COVID_PNEUMONIA, Partition.ORIGINAL, pneumonia),
    ]
    for label, partition, count in spec:
        for i in range(count):
            rng = np.random.default_rng([int(label), i])
            img = CxrImage(
                pixels=rng.random((size, size)).astype(np.float32),
                source_id=f"{label.name.lower()}-{i:03d}",
            )
            samples.append(LabeledSample(image=img, label=label, partition=partition))
    return TrainingCorpus(tuple(samples))
