import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cxrscreen.evaluation import (
    CaseTimeline,
    UndefinedMetricError,
    cohort_lead_report,
    evaluate,
    lead_time,
    roc_auc,
    sens_spec,
    youden_threshold,
)


def brute_force_auc(scores, labels) -> float:
    """Pairwise oracle: wins + half-ties over all pos/neg pairs."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))


def test_auc_perfect_separation():
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0


def test_auc_all_ties():
    assert roc_auc([0.5, 0.5, 0.5, 0.5], [0, 1, 0, 1]) == 0.5


def test_auc_hand_fixture():
    # pairs: (0.35 vs 0.1) win, (0.35 vs 0.4) loss, (0.8 vs .1/.4) wins -> 3/4
    scores = [0.1, 0.4, 0.35, 0.8]
    labels = [0, 0, 1, 1]
    assert brute_force_auc(scores, labels) == 0.75
    assert roc_auc(scores, labels) == 0.75


def test_auc_single_class_error():
    with pytest.raises(UndefinedMetricError, match="undefined_auc"):
        roc_auc([0.1, 0.2], [1, 1])


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 100_000))
def test_auc_matches_brute_force_with_ties(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 30))
    # coarse grid forces duplicate scores
    scores = (rng.integers(0, 8, size=n) / 7.0).tolist()
    labels = rng.integers(0, 2, size=n).tolist()
    if len(set(labels)) < 2:
        labels[0], labels[1] = 0, 1
    assert roc_auc(scores, labels) == brute_force_auc(scores, labels)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 100_000))
def test_auc_monotone_transform_invariant(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 25))
    scores = rng.normal(size=n).tolist()
    labels = rng.integers(0, 2, size=n).tolist()
    if len(set(labels)) < 2:
        labels[0], labels[1] = 0, 1
    base = roc_auc(scores, labels)
    for transform in (lambda s: 3 * s + 2, np.tanh, lambda s: np.exp(s / 4)):
        assert roc_auc([float(transform(s)) for s in scores], labels) == pytest.approx(base, abs=1e-12)


def test_auc_complement_for_tie_free_scores():
    rng = np.random.default_rng(3)
    scores = rng.permutation(20) / 19.0
    labels = (rng.random(20) < 0.5).astype(int)
    labels[0], labels[1] = 0, 1
    a = roc_auc(scores.tolist(), labels.tolist())
    b = roc_auc((-scores).tolist(), labels.tolist())
    assert a + b == pytest.approx(1.0, abs=1e-12)


def test_sens_spec_degenerate_thresholds():
    scores = [0.2, 0.6, 0.4, 0.9]
    labels = [0, 1, 0, 1]
    sens, spec, _ = sens_spec(scores, labels, 0.0)
    assert sens == 1.0 and spec == 0.0
    sens, spec, _ = sens_spec(scores, labels, 0.95)
    assert sens == 0.0 and spec == 1.0


def test_sens_spec_paper_style_ratio():
    # 42 of 47 positives detected
    scores = [1.0] * 42 + [0.0] * 5 + [0.0] * 10
    labels = [1] * 47 + [0] * 10
    sens, spec, confusion = sens_spec(scores, labels, 0.5)
    assert sens == pytest.approx(42 / 47)
    assert round(sens * 10000) / 100 == 89.36
    assert confusion["tp"] == 42 and confusion["fn"] == 5
    assert sum(confusion.values()) == 57


def test_sens_spec_ge_convention_at_boundary():
    sens, _, _ = sens_spec([0.5], [1], 0.5)
    assert sens == 1.0


def test_evaluate_report_invariants():
    rng = np.random.default_rng(5)
    scores = rng.random(40).tolist()
    labels = (rng.random(40) < 0.4).astype(int).tolist()
    labels[0], labels[1] = 0, 1
    report = evaluate(scores, labels, 0.5)
    assert report.n == 40
    assert 0 <= report.sensitivity <= 1 and 0 <= report.specificity <= 1
    assert report.sensitivity == pytest.approx(report.tp / (report.tp + report.fn))
    assert report.specificity == pytest.approx(report.tn / (report.tn + report.fp))


def brute_force_youden(scores, labels):
    uniq = sorted(set(scores))
    if len(uniq) == 1:
        return uniq[0]
    best_t, best_j = None, -np.inf
    for t in [(a + b) / 2 for a, b in zip(uniq, uniq[1:])]:
        sens, spec, _ = sens_spec(scores, labels, t)
        j = sens + spec - 1
        if j > best_j + 1e-15:
            best_t, best_j = t, j
    return best_t


def test_youden_perfectly_separated_returns_lowest_gap_midpoint():
    scores = [0.1, 0.2, 0.8, 0.9]
    labels = [0, 0, 1, 1]
    assert youden_threshold(scores, labels) == 0.5  # midpoint of the gap


def test_youden_degenerate_identical_scores():
    assert youden_threshold([0.3, 0.3, 0.3], [0, 1, 0]) == 0.3


def test_youden_matches_exhaustive_scan():
    scores = [0.05, 0.3, 0.35, 0.5, 0.75, 0.9]
    labels = [0, 0, 1, 0, 1, 1]
    assert youden_threshold(scores, labels) == brute_force_youden(scores, labels)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 100_000))
def test_youden_matches_scan_random(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 20))
    scores = (rng.integers(0, 10, size=n) / 9.0).tolist()
    labels = rng.integers(0, 2, size=n).tolist()
    if len(set(labels)) < 2:
        labels[0], labels[1] = 0, 1
    assert youden_threshold(scores, labels) == brute_force_youden(scores, labels)


def make_case(case_id="c1", captures=(), onset=None, confirm=None):
    return CaseTimeline(
        case_id=case_id,
        captures=tuple(captures),
        symptom_onset_date=onset,
        rtpcr_confirm_date=confirm,
    )


def test_lead_time_17_days():
    case = make_case(
        captures=[(dt.date(2020, 1, 14), True), (dt.date(2020, 1, 20), True)],
        confirm=dt.date(2020, 1, 31),
    )
    assert lead_time(case) == 17


def test_lead_time_same_day_zero():
    case = make_case(captures=[(dt.date(2020, 3, 20), True)], confirm=dt.date(2020, 3, 20))
    assert lead_time(case) == 0


def test_lead_time_undefined_cases():
    no_positive = make_case(captures=[(dt.date(2020, 1, 1), False)], confirm=dt.date(2020, 1, 5))
    assert lead_time(no_positive) is None
    no_confirm = make_case(captures=[(dt.date(2020, 1, 1), True)])
    assert lead_time(no_confirm) is None


def test_lead_time_negative_reported_as_is():
    late = make_case(captures=[(dt.date(2020, 2, 10), True)], confirm=dt.date(2020, 2, 1))
    assert lead_time(late) == -9


def test_cohort_report_counts():
    assert cohort_lead_report([]).n_lead_2_or_more == 0
    single = make_case("a", [(dt.date(2020, 1, 1), True)], confirm=dt.date(2020, 1, 7))
    rep = cohort_lead_report([single])
    assert (rep.n_lead_2_or_more, rep.n_lead_5_or_more) == (1, 1)

    cases = [
        make_case("x", [(dt.date(2020, 1, 6), True)], confirm=dt.date(2020, 1, 7)),   # lead 1
        make_case("y", [(dt.date(2020, 1, 4), True)], confirm=dt.date(2020, 1, 7)),   # lead 3
        make_case("z", [(dt.date(2020, 1, 4), False)], confirm=dt.date(2020, 1, 7)),  # undefined
    ]
    rep = cohort_lead_report(cases)
    assert (rep.n_lead_2_or_more, rep.n_lead_5_or_more) == (1, 0)
    assert rep.n_defined == 2
    assert [r["case_id"] for r in rep.rows] == ["x", "y", "z"]
    assert rep.rows[2]["lead_days"] == ""


def test_captures_must_be_sorted():
    with pytest.raises(ValueError):
        make_case(captures=[(dt.date(2020, 2, 1), True), (dt.date(2020, 1, 1), True)])
