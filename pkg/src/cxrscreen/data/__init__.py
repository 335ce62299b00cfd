from .batching import balanced_batches
from .manifest import ManifestIssue, ManifestLoadResult, load_manifest, write_corpus
from .preprocess import preprocess, resize_bilinear, resize_nearest
from .splits import split_dataset
from .synthetic import generate_synthetic_corpus
from .types import (
    CANONICAL_SIZE,
    CxrImage,
    DatasetSplit,
    Label,
    LabeledSample,
    Partition,
    SyntheticSpec,
    TrainingCorpus,
)

__all__ = [
    "CANONICAL_SIZE",
    "CxrImage",
    "DatasetSplit",
    "Label",
    "LabeledSample",
    "ManifestIssue",
    "ManifestLoadResult",
    "Partition",
    "SyntheticSpec",
    "TrainingCorpus",
    "balanced_batches",
    "generate_synthetic_corpus",
    "load_manifest",
    "preprocess",
    "resize_bilinear",
    "resize_nearest",
    "split_dataset",
    "write_corpus",
]
