"""Metrics, operating-point selection and the RT-PCR lead-time analysis."""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence


class UndefinedMetricError(ValueError):
    pass


@dataclass(frozen=True)
class EvalReport:
    auc: float
    sensitivity: float
    specificity: float
    threshold: float
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return {
            "auc": self.auc,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "threshold": self.threshold,
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "n": self.n,
        }


def _validate_scores_labels(scores: Sequence[float], labels: Sequence[int]):
    if len(scores) != len(labels):
        raise ValueError("scores and labels must have equal length")
    if len(scores) == 0:
        raise ValueError("empty input")
    labels = [int(v) for v in labels]
    if any(v not in (0, 1) for v in labels):
        raise ValueError("labels must be 0 or 1")
    return [float(s) for s in scores], labels


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Exact pairwise ranking statistic: P(s+ > s-) + 0.5 P(s+ = s-).

    Computed in the rank (Mann-Whitney) form, which agrees with the
    brute-force pair count exactly, ties included.
    """
    scores, labels = _validate_scores_labels(scores, labels)
    n_pos = sum(labels)
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("undefined_auc: both classes must be present")

    order = sorted(range(len(scores)), key=lambda i: scores[i])
    ranks = [0.0] * len(scores)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        avg_rank = (i + j) / 2 + 1  # 1-based, ties share the average rank
        for k in range(i, j + 1):
            ranks[order[k]] = avg_rank
        i = j + 1
    rank_sum_pos = sum(r for r, y in zip(ranks, labels) if y == 1)
    u = rank_sum_pos - n_pos * (n_pos + 1) / 2
    return u / (n_pos * n_neg)


def sens_spec(
    scores: Sequence[float], labels: Sequence[int], threshold: float
) -> tuple[float, float, dict]:
    """Sensitivity/specificity at ``score >= threshold``; rates are NaN when
    the corresponding class is absent."""
    scores, labels = _validate_scores_labels(scores, labels)
    tp = fp = tn = fn = 0
    for s, y in zip(scores, labels):
        predicted = s >= threshold
        if y == 1 and predicted:
            tp += 1
        elif y == 1:
            fn += 1
        elif predicted:
            fp += 1
        else:
            tn += 1
    sensitivity = tp / (tp + fn) if (tp + fn) else float("nan")
    specificity = tn / (tn + fp) if (tn + fp) else float("nan")
    return sensitivity, specificity, {"tp": tp, "fp": fp, "tn": tn, "fn": fn}


def youden_threshold(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Threshold maximizing sensitivity + specificity - 1 over midpoints of
    sorted unique scores; ties resolve to the lowest threshold."""
    scores, labels = _validate_scores_labels(scores, labels)
    if len(set(labels)) < 2:
        raise UndefinedMetricError("both classes must be present")
    uniq = sorted(set(scores))
    if len(uniq) == 1:
        return uniq[0]
    candidates = [(a + b) / 2 for a, b in zip(uniq, uniq[1:])]
    best_t, best_j = None, -float("inf")
    for t in candidates:
        sens, spec, _ = sens_spec(scores, labels, t)
        j = sens + spec - 1.0
        if j > best_j + 1e-15:
            best_t, best_j = t, j
    return best_t


def evaluate(scores, labels, threshold: float) -> EvalReport:
    auc = roc_auc(scores, labels)
    sens, spec, confusion = sens_spec(scores, labels, threshold)
    return EvalReport(
        auc=auc, sensitivity=sens, specificity=spec, threshold=threshold, **confusion
    )


# ---------------------------------------------------------------------------
# RT-PCR lead time
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CaseTimeline:
    """Chest x-ray capture dates and model decisions for one confirmed case."""

    case_id: str
    captures: tuple[tuple[dt.date, bool], ...]         # (capture date, positive decision)
    symptom_onset_date: Optional[dt.date] = None
    rtpcr_confirm_date: Optional[dt.date] = None

    def __post_init__(self) -> None:
        dates = [c[0] for c in self.captures]
        if dates != sorted(dates):
            raise ValueError("captures must be sorted by date")


def lead_time(case: CaseTimeline) -> Optional[int]:
    """Days between the earliest positive capture and RT-PCR confirmation.

    None when the case has no positive capture or no confirmation date;
    negative values mean the model first flagged the case after
    confirmation and are reported as-is.
    """
    if case.rtpcr_confirm_date is None:
        return None
    positives = [date for date, decision in case.captures if decision]
    if not positives:
        return None
    return (case.rtpcr_confirm_date - min(positives)).days


@dataclass
class CohortLeadReport:
    n_cases: int
    n_defined: int
    n_lead_2_or_more: int
    n_lead_5_or_more: int
    rows: list[dict] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=["case_id", "lead_days", "first_positive", "confirmed"])
        writer.writeheader()
        writer.writerows(self.rows)
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(
            {
                "n_cases": self.n_cases,
                "n_defined": self.n_defined,
                "n_lead_2_or_more": self.n_lead_2_or_more,
                "n_lead_5_or_more": self.n_lead_5_or_more,
                "cases": self.rows,
            },
            indent=2,
        )


def cohort_lead_report(cases: Sequence[CaseTimeline]) -> CohortLeadReport:
    rows = []
    n2 = n5 = n_defined = 0
    for case in sorted(cases, key=lambda c: c.case_id):
        lead = lead_time(case)
        positives = [d for d, dec in case.captures if dec]
        rows.append(
            {
                "case_id": case.case_id,
                "lead_days": lead if lead is not None else "",
                "first_positive": min(positives).isoformat() if positives else "",
                "confirmed": case.rtpcr_confirm_date.isoformat() if case.rtpcr_confirm_date else "",
            }
        )
        if lead is None:
            continue
        n_defined += 1
        if lead >= 2:
            n2 += 1
        if lead >= 5:
            n5 += 1
    return CohortLeadReport(
        n_cases=len(cases),
        n_defined=n_defined,
        n_lead_2_or_more=n2,
        n_lead_5_or_more=n5,
        rows=rows,
    )


def report_grid_csv(rows: Sequence[dict], columns: Sequence[str]) -> str:
    """Table-shaped CSV for the ablation and per-stage report grids."""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns))
    writer.writeheader()
    for row in rows:
        writer.writerow({c: row.get(c, "") for c in columns})
    return buf.getvalue()
