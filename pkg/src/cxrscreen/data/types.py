"""Core dataset types: images, labels, corpora and split descriptions."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Optional

import numpy as np

CANONICAL_SIZE = 512


class Label(IntEnum):
    NORMAL = 0
    COVID = 1
    NON_COVID_PNEUMONIA = 2


class Partition(Enum):
    ORIGINAL = "original"       # large pre-existing collection (no COVID)
    COVID_ADDED = "covid_added"  # newly added COVID images


@dataclass(frozen=True, eq=False)
class CxrImage:
    """Canonical grayscale chest x-ray raster.

    ``pixels`` is a float32 array with intensities in [0, 1]; after
    preprocessing the shape is exactly 512x512.
    """

    pixels: np.ndarray
    source_id: str = ""
    capture_date: Optional[dt.date] = None
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        px = self.pixels
        if px.ndim != 2:
            raise ValueError(f"CxrImage pixels must be 2-D, got shape {px.shape}")
        if px.size and (float(px.min()) < 0.0 or float(px.max()) > 1.0):
            raise ValueError("CxrImage intensities must lie in [0, 1]")

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape  # type: ignore[return-value]


@dataclass(frozen=True, eq=False)
class LabeledSample:
    """One (image, label) pair with its corpus partition.

    ``lung_mask`` is the ground-truth segmentation target when known
    (synthetic corpora always carry one). The optional dates support the
    RT-PCR lead-time analysis.
    """

    image: CxrImage
    label: Label
    partition: Partition
    lung_mask: Optional[np.ndarray] = None
    symptom_onset_date: Optional[dt.date] = None
    rtpcr_confirm_date: Optional[dt.date] = None

    def __post_init__(self) -> None:
        if self.label == Label.COVID and self.partition != Partition.COVID_ADDED:
            raise ValueError("COVID samples belong to the COVID_ADDED partition")
        if self.partition == Partition.ORIGINAL and self.label == Label.COVID:
            raise ValueError("ORIGINAL partition cannot contain COVID samples")

    @property
    def source_id(self) -> str:
        return self.image.source_id


@dataclass(frozen=True, eq=False)
class TrainingCorpus:
    """Immutable collection of labeled samples, D = D_original U D_covid."""

    samples: tuple[LabeledSample, ...]

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for s in self.samples:
            if s.source_id in seen:
                raise ValueError(f"duplicate source_id {s.source_id!r}")
            seen.add(s.source_id)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @property
    def n(self) -> int:
        return len(self.samples)

    def by_partition(self, partition: Partition) -> tuple[LabeledSample, ...]:
        return tuple(s for s in self.samples if s.partition == partition)

    def by_ids(self, ids) -> tuple[LabeledSample, ...]:
        index = {s.source_id: s for s in self.samples}
        return tuple(index[i] for i in ids)

    def subset(self, ids) -> "TrainingCorpus":
        return TrainingCorpus(self.by_ids(ids))


@dataclass(frozen=True)
class DatasetSplit:
    """Disjoint train/val/test id lists covering a corpus."""

    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]

    def __post_init__(self) -> None:
        groups = [set(self.train), set(self.val), set(self.test)]
        total = sum(len(g) for g in groups)
        if len(groups[0] | groups[1] | groups[2]) != total:
            raise ValueError("split groups must be pairwise disjoint")

    @property
    def all_ids(self) -> tuple[str, ...]:
        return self.train + self.val + self.test

    def of(self, name: str) -> tuple[str, ...]:
        if name not in ("train", "val", "test"):
            raise ValueError(f"unknown split name {name!r}")
        return getattr(self, name)


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the deterministic synthetic desk-scale CXR generator."""

    n_normal: int = 60
    n_covid: int = 30
    n_pneumonia: int = 30
    image_size: int = CANONICAL_SIZE
    seed: int = 7
    # focal opacity blobs (non-COVID pneumonia)
    blob_count_range: tuple[int, int] = (1, 4)
    blob_radius_range: tuple[float, float] = (24.0, 48.0)
    blob_intensity_range: tuple[float, float] = (0.38, 0.55)
    # diffuse peripheral texture (COVID)
    peripheral_band_width: float = 0.30   # fraction of lung radius
    texture_frequency: float = 0.12       # cycles per pixel
    texture_intensity: float = 0.10

    def __post_init__(self) -> None:
        if min(self.n_normal, self.n_covid, self.n_pneumonia) < 0:
            raise ValueError("class counts must be nonnegative")
        if self.image_size < 16:
            raise ValueError("image_size too small")

    @property
    def counts(self) -> dict[Label, int]:
        return {
            Label.NORMAL: self.n_normal,
            Label.COVID: self.n_covid,
            Label.NON_COVID_PNEUMONIA: self.n_pneumonia,
        }
