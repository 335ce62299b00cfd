"""Deterministic synthetic CXR generator with ground-truth lung masks.

Stands in for clinical corpora at desk scale: NORMAL images are two
smooth elliptical "lungs" over a dark, rib-striped background;
NON_COVID_PNEUMONIA adds bright focal opacity blobs inside the lungs;
COVID adds a diffuse high-frequency texture in the peripheral band of
each lung. Generator parameters are chosen so that mean intensity inside
the lung mask is ordered NORMAL < COVID < NON_COVID_PNEUMONIA (blobs are
brightest).
"""

from __future__ import annotations

import datetime as dt

import numpy as np

from .types import CxrImage, Label, LabeledSample, Partition, SyntheticSpec, TrainingCorpus


def _lung_geometry(rng: np.random.Generator, size: int):
    """Jittered left/right lung ellipses: (cx, cy, semi_x, semi_y) in pixels."""
    s = size
    jit = lambda lo, hi: float(rng.uniform(lo, hi))
    lungs = []
    for side in (-1.0, 1.0):
        cx = s * (0.5 + side * jit(0.17, 0.20))
        cy = s * jit(0.50, 0.55)
        ax = s * jit(0.125, 0.150)
        ay = s * jit(0.26, 0.31)
        lungs.append((cx, cy, ax, ay))
    return lungs


def _ellipse_r(yy: np.ndarray, xx: np.ndarray, lung) -> np.ndarray:
    cx, cy, ax, ay = lung
    return np.sqrt(((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2)


def _sample_point_in_lung(rng: np.random.Generator, lung, margin: float = 0.72):
    cx, cy, ax, ay = lung
    while True:
        u, v = rng.uniform(-1, 1, size=2)
        if u * u + v * v <= margin * margin:
            return cx + u * ax, cy + v * ay


def _render(spec: SyntheticSpec, label: Label, index: int):
    s = spec.image_size
    rng = np.random.default_rng([spec.seed, int(label), index])
    yy, xx = np.meshgrid(np.arange(s, dtype=np.float32), np.arange(s, dtype=np.float32), indexing="ij")

    lungs = _lung_geometry(rng, s)
    r = np.minimum(_ellipse_r(yy, xx, lungs[0]), _ellipse_r(yy, xx, lungs[1]))
    mask = (r <= 1.0).astype(np.uint8)
    # soft rim so the boundary is learnable at reduced working resolutions
    soft = np.clip((1.04 - r) / 0.08, 0.0, 1.0)

    img = np.full((s, s), 0.05, dtype=np.float32)
    img += soft * (0.42 * (1.0 - 0.25 * np.clip(r, 0.0, 1.0) ** 2) - 0.05)

    # rib-like sinusoidal striping, stronger over the lung fields
    period = float(rng.uniform(30.0, 44.0))
    phase = float(rng.uniform(0.0, 2 * np.pi))
    stripes = 0.04 * np.sin(2 * np.pi * yy / period + phase).astype(np.float32)
    img += stripes * (0.3 + 0.7 * soft)

    if label == Label.NON_COVID_PNEUMONIA:
        lo_n, hi_n = spec.blob_count_range
        n_blobs = int(rng.integers(lo_n, hi_n + 1))
        for _ in range(n_blobs):
            lung = lungs[int(rng.integers(0, 2))]
            bx, by = _sample_point_in_lung(rng, lung)
            radius = float(rng.uniform(*spec.blob_radius_range))
            amp = float(rng.uniform(*spec.blob_intensity_range))
            sigma = radius / 1.6
            d2 = (xx - bx) ** 2 + (yy - by) ** 2
            img += (amp * np.exp(-d2 / (2 * sigma * sigma))).astype(np.float32)
    elif label == Label.COVID:
        band_lo = 1.0 - spec.peripheral_band_width
        band = ((r >= band_lo) & (r <= 1.0)).astype(np.float32)
        f = 2 * np.pi * spec.texture_frequency
        px, py = rng.uniform(0.0, 2 * np.pi, size=2)
        texture = 0.5 + 0.5 * np.sin(f * xx + px) * np.sin(f * yy + py)
        img += (spec.texture_intensity * band * texture).astype(np.float32)

    img += rng.normal(0.0, 0.008, size=(s, s)).astype(np.float32)
    img = np.clip(img, 0.0, 1.0).astype(np.float32)
    return img, mask


def _covid_dates(rng: np.random.Generator, index: int):
    confirm = dt.date(2020, 1, 20) + dt.timedelta(days=index * 3)
    capture = confirm - dt.timedelta(days=int(rng.integers(0, 8)))
    onset = capture - dt.timedelta(days=int(rng.integers(0, 6)))
    return capture, onset, confirm


def generate_synthetic_corpus(spec: SyntheticSpec) -> TrainingCorpus:
    """Render the corpus described by ``spec``; pure function of (spec, seed)."""
    samples: list[LabeledSample] = []
    for label, count in spec.counts.items():
        for i in range(count):
            img, mask = _render(spec, label, i)
            source_id = f"synth-{label.name.lower()}-{i:04d}"
            capture = onset = confirm = None
            if label == Label.COVID:
                date_rng = np.random.default_rng([spec.seed, int(label), i, 1])
                capture, onset, confirm = _covid_dates(date_rng, i)
            partition = Partition.COVID_ADDED if label == Label.COVID else Partition.ORIGINAL
            samples.append(
                LabeledSample(
                    image=CxrImage(pixels=img, source_id=source_id, capture_date=capture),
                    label=label,
                    partition=partition,
                    lung_mask=mask,
                    symptom_onset_date=onset,
                    rtpcr_confirm_date=confirm,
                )
            )
    return TrainingCorpus(tuple(samples))
