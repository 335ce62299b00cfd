"""CSV manifest ingestion and corpus export.

Manifest schema (header required)::

    source_id,path,label,partition,capture_date,symptom_onset_date,rtpcr_confirm_date

Labels are case-insensitive {normal, covid, pneumonia}; dates are
ISO-8601 and may be blank. Image paths are relative to the manifest
file. Ground-truth lung masks, when present, live in a ``masks/``
directory sibling to each image as ``masks/<source_id>.png``.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .preprocess import preprocess
from .types import Label, LabeledSample, Partition, TrainingCorpus

MANIFEST_COLUMNS = [
    "source_id",
    "path",
    "label",
    "partition",
    "capture_date",
    "symptom_onset_date",
    "rtpcr_confirm_date",
]

_LABEL_NAMES = {
    "normal": Label.NORMAL,
    "covid": Label.COVID,
    "pneumonia": Label.NON_COVID_PNEUMONIA,
}
_LABEL_TO_NAME = {v: k for k, v in _LABEL_NAMES.items()}


@dataclass
class ManifestIssue:
    row: int
    source_id: str
    problem: str


@dataclass
class ManifestLoadResult:
    corpus: TrainingCorpus
    issues: list[ManifestIssue] = field(default_factory=list)


def _parse_date(text: str) -> Optional[dt.date]:
    text = (text or "").strip()
    return dt.date.fromisoformat(text) if text else None


def read_image_file(path: Path) -> np.ndarray:
    """Read an 8- or 16-bit grayscale PNG/JPEG into a numpy array."""
    with Image.open(path) as im:
        arr = np.array(im)
    return arr


def load_manifest(path: str | Path) -> ManifestLoadResult:
    """Load a manifest CSV; bad rows are reported (with row numbers), not fatal."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    base = path.parent
    samples: list[LabeledSample] = []
    issues: list[ManifestIssue] = []
    seen_ids: set[str] = set()

    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in MANIFEST_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"manifest {path} missing columns: {missing}")
        for rownum, row in enumerate(reader, start=2):  # row 1 is the header
            sid = (row["source_id"] or "").strip()
            if not sid:
                issues.append(ManifestIssue(rownum, sid, "blank source_id"))
                continue
            if sid in seen_ids:
                issues.append(ManifestIssue(rownum, sid, "duplicate source_id"))
                continue
            label_name = (row["label"] or "").strip().lower()
            if label_name not in _LABEL_NAMES:
                issues.append(ManifestIssue(rownum, sid, f"unknown label {row['label']!r}"))
                continue
            label = _LABEL_NAMES[label_name]
            img_path = base / row["path"]
            if not img_path.exists():
                issues.append(ManifestIssue(rownum, sid, f"missing file {row['path']}"))
                continue
            try:
                raw = read_image_file(img_path)
            except Exception as exc:
                issues.append(ManifestIssue(rownum, sid, f"unreadable image: {exc}"))
                continue
            try:
                capture = _parse_date(row.get("capture_date", ""))
                onset = _parse_date(row.get("symptom_onset_date", ""))
                confirm = _parse_date(row.get("rtpcr_confirm_date", ""))
            except ValueError as exc:
                issues.append(ManifestIssue(rownum, sid, f"bad date: {exc}"))
                continue

            partition_text = (row.get("partition") or "").strip().lower()
            if partition_text:
                try:
                    partition = Partition(partition_text)
                except ValueError:
                    issues.append(
                        ManifestIssue(rownum, sid, f"unknown partition {row['partition']!r}")
                    )
                    continue
            else:
                partition = Partition.COVID_ADDED if label == Label.COVID else Partition.ORIGINAL

            image = preprocess(raw, source_id=sid, capture_date=capture)
            mask = None
            mask_path = img_path.parent.parent / "masks" / f"{sid}.png"
            if mask_path.exists():
                mask = (read_image_file(mask_path) > 0).astype(np.uint8)
            try:
                samples.append(
                    LabeledSample(
                        image=image,
                        label=label,
                        partition=partition,
                        lung_mask=mask,
                        symptom_onset_date=onset,
                        rtpcr_confirm_date=confirm,
                    )
                )
            except ValueError as exc:
                issues.append(ManifestIssue(rownum, sid, str(exc)))
            seen_ids.add(sid)
    return ManifestLoadResult(corpus=TrainingCorpus(tuple(samples)), issues=issues)


def write_corpus(corpus: TrainingCorpus, out_dir: str | Path) -> Path:
    """Write a corpus as 16-bit grayscale PNGs + masks + manifest.csv."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / "manifest.csv"
    has_masks = any(s.lung_mask is not None for s in corpus)
    if has_masks:
        (out_dir / "masks").mkdir(exist_ok=True)

    with open(manifest_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for s in corpus:
            rel = f"images/{s.source_id}.png"
            arr16 = np.round(s.image.pixels.astype(np.float64) * 65535.0).astype(np.uint16)
            Image.fromarray(arr16).save(out_dir / rel)
            if s.lung_mask is not None:
                Image.fromarray((s.lung_mask * 255).astype(np.uint8)).save(
                    out_dir / "masks" / f"{s.source_id}.png"
                )
            writer.writerow(
                [
                    s.source_id,
                    rel,
                    _LABEL_TO_NAME[s.label],
                    s.partition.value,
                    s.image.capture_date.isoformat() if s.image.capture_date else "",
                    s.symptom_onset_date.isoformat() if s.symptom_onset_date else "",
                    s.rtpcr_confirm_date.isoformat() if s.rtpcr_confirm_date else "",
                ]
            )
    return manifest_path
