"""Stratified train/val/test splitting with deterministic seeding."""

from __future__ import annotations

import warnings
from collections import defaultdict

import numpy as np

from .types import DatasetSplit, TrainingCorpus


def _allocate(n: int, ratios: tuple[float, float, float]) -> list[int]:
    """Floor-then-distribute rounding of n items across three bins."""
    floors = [int(np.floor(r * n)) for r in ratios]
    remainders = [r * n - f for r, f in zip(ratios, floors)]
    leftover = n - sum(floors)
    # hand out the leftover by descending fractional remainder, ties in
    # train/val/test order
    order = sorted(range(3), key=lambda i: (-remainders[i], i))
    for i in range(leftover):
        floors[order[i % 3]] += 1
    return floors


def protocol_split(
    corpus: TrainingCorpus,
    seed: int,
    open_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    covid_ratios: tuple[float, float, float] = (0.5, 0.25, 0.25),
) -> DatasetSplit:
    """The experimental protocol: 80/10/10 for the original collection and
    50/25/25 for the (small) COVID partition, merged into one split."""
    from .types import Label, TrainingCorpus as _Corpus

    open_samples = tuple(s for s in corpus if s.label != Label.COVID)
    covid_samples = tuple(s for s in corpus if s.label == Label.COVID)
    parts = []
    if open_samples:
        parts.append(split_dataset(_Corpus(open_samples), open_ratios, seed))
    if covid_samples:
        parts.append(split_dataset(_Corpus(covid_samples), covid_ratios, seed))
    if not parts:
        return DatasetSplit(train=(), val=(), test=())
    return DatasetSplit(
        train=tuple(i for p in parts for i in p.train),
        val=tuple(i for p in parts for i in p.val),
        test=tuple(i for p in parts for i in p.test),
    )


def split_dataset(
    corpus: TrainingCorpus,
    ratios: tuple[float, float, float],
    seed: int,
) -> DatasetSplit:
    """Per-class stratified shuffle split.

    Ratios must be positive and sum to 1. Classes smaller than the number
    of bins still contribute at least one training sample (with a warning).
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError("ratios must be three positive fractions")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")

    by_class: dict[int, list[str]] = defaultdict(list)
    for s in corpus:
        by_class[int(s.label)].append(s.source_id)

    rng = np.random.default_rng(seed)
    train: list[str] = []
    val: list[str] = []
    test: list[str] = []
    for label in sorted(by_class):
        ids = sorted(by_class[label])
        rng.shuffle(ids)
        n_train, n_val, n_test = _allocate(len(ids), tuple(ratios))
        if n_train == 0 and ids:
            # steal one from the largest non-train bin
            if n_val >= n_test:
                n_val -= 1
            else:
                n_test -= 1
            n_train = 1
            warnings.warn(
                f"class {label}: too few samples for the requested ratios; "
                "forcing one into train",
                stacklevel=2,
            )
        if len(ids) < 3:
            warnings.warn(
                f"class {label} has only {len(ids)} sample(s); split is degenerate",
                stacklevel=2,
            )
        train.extend(ids[:n_train])
        val.extend(ids[n_train : n_train + n_val])
        test.extend(ids[n_train + n_val :])
    return DatasetSplit(train=tuple(train), val=tuple(val), test=tuple(test))
