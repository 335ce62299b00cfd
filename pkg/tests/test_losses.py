import math

import numpy as np
import pytest
import torch

from cxrscreen.training import combined_loss, cross_entropy, distillation_loss


def test_cross_entropy_symmetric_logits_is_ln2():
    for t in (-3.0, 0.0, 7.5):
        for label in (0, 1):
            val = float(cross_entropy(np.array([t, t]), label))
            assert abs(val - math.log(2)) < 1e-12


def test_cross_entropy_hand_value():
    # softmax(0, ln 3) = (1/4, 3/4); -ln(3/4) = ln(4/3)
    val = float(cross_entropy(np.array([0.0, math.log(3.0)]), 1))
    assert abs(val - 0.28768207245178085) < 1e-9


def test_cross_entropy_stable_at_extremes():
    val = float(cross_entropy(np.array([1000.0, -1000.0]), 0))
    assert val == 0.0
    val = float(cross_entropy(np.array([1000.0, -1000.0]), 1))
    assert np.isfinite(val) and val > 100


def test_cross_entropy_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    for _ in range(20):
        logits = rng.normal(size=3) * 4
        label = int(rng.integers(0, 3))
        z = torch.tensor(logits, requires_grad=True, dtype=torch.float64)
        loss = cross_entropy(z, label)
        (grad,) = torch.autograd.grad(loss, z)
        scale = float(grad.abs().max())  # near-zero components hit the FD noise floor
        h = 1e-5
        for k in range(3):
            plus = logits.copy(); plus[k] += h
            minus = logits.copy(); minus[k] -= h
            fd = (float(cross_entropy(plus, label)) - float(cross_entropy(minus, label))) / (2 * h)
            assert abs(fd - float(grad[k])) / max(scale, abs(fd)) <= 1e-6


def test_distillation_zero_for_equal_logits():
    rng = np.random.default_rng(1)
    for _ in range(10):
        s = rng.normal(size=4) * 5
        for T in (0.5, 1.0, 4.0):
            assert float(distillation_loss(s, s, T)) == 0.0


def test_distillation_hand_value():
    # teacher (0,0), student (0, ln 3), T=1:
    # 0.5*ln(0.5/0.75) + 0.5*ln(0.5/0.25)
    val = float(distillation_loss(np.array([0.0, math.log(3.0)]), np.array([0.0, 0.0]), 1.0))
    expected = 0.5 * math.log(0.5 / 0.75) + 0.5 * math.log(0.5 / 0.25)
    assert abs(val - expected) < 1e-12
    assert abs(val - 0.143841) < 1e-6


def test_distillation_nonnegative_on_random_pairs():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        s = rng.normal(size=2) * 10
        t = rng.normal(size=2) * 10
        assert float(distillation_loss(s, t, 1.0)) >= 0.0


def test_distillation_temperature_scaling():
    s = np.array([1.0, -1.0])
    t = np.array([0.5, 0.2])
    base = float(distillation_loss(s, t, 1.0))
    # T=1 means no extra factor
    log_ps = torch.log_softmax(torch.tensor(s), 0)
    log_pt = torch.log_softmax(torch.tensor(t), 0)
    manual = float((log_pt.exp() * (log_pt - log_ps)).sum())
    assert abs(base - manual) < 1e-12
    # at T != 1 the tempered KL is multiplied by T^2
    T = 2.0
    log_ps = torch.log_softmax(torch.tensor(s) / T, 0)
    log_pt = torch.log_softmax(torch.tensor(t) / T, 0)
    manual = float((log_pt.exp() * (log_pt - log_ps)).sum()) * T * T
    assert abs(float(distillation_loss(s, t, T)) - manual) < 1e-12


def test_distillation_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    t_logits = rng.normal(size=3)
    s_logits = rng.normal(size=3)
    z = torch.tensor(s_logits, requires_grad=True, dtype=torch.float64)
    loss = distillation_loss(z, torch.tensor(t_logits), 2.0)
    (grad,) = torch.autograd.grad(loss, z)
    h = 1e-6
    for k in range(3):
        plus = s_logits.copy(); plus[k] += h
        minus = s_logits.copy(); minus[k] -= h
        fd = (float(distillation_loss(plus, t_logits, 2.0))
              - float(distillation_loss(minus, t_logits, 2.0))) / (2 * h)
        denom = max(abs(fd), abs(float(grad[k])), 1e-12)
        assert abs(fd - float(grad[k])) / denom <= 1e-6


def test_combined_loss_lambda_zero_is_mean_ce():
    rng = np.random.default_rng(4)
    for _ in range(100):
        n = int(rng.integers(1, 16))
        logits = rng.normal(size=(n, 2)) * 6
        labels = rng.integers(0, 2, size=n)
        orig = rng.integers(0, 2, size=n).astype(bool)
        got = float(combined_loss(logits, labels, orig, None, lam=0.0))
        expected = float(np.mean([float(cross_entropy(logits[i], labels[i])) for i in range(n)]))
        assert abs(got - expected) <= 1e-9


def test_combined_loss_all_new_data_kl_contributes_nothing():
    rng = np.random.default_rng(5)
    logits = rng.normal(size=(6, 2))
    teacher = rng.normal(size=(6, 2))
    labels = rng.integers(0, 2, size=6)
    orig = np.zeros(6, dtype=bool)
    with_kl = float(combined_loss(logits, labels, orig, teacher, lam=3.0))
    without = float(combined_loss(logits, labels, orig, None, lam=0.0))
    assert abs(with_kl - without) < 1e-12


def test_combined_loss_hand_assembly():
    # batch, per the per-sample oracles: original sample with CE=a, KL=b;
    # new sample with CE=c; lambda=2 -> (a + c + 2 b) / 2
    logits = np.array([[0.2, -0.4], [1.0, 0.3]])
    teacher = np.array([[0.9, -0.1], [0.0, 0.0]])
    labels = np.array([0, 1])
    orig = np.array([True, False])
    a = float(cross_entropy(logits[0], 0))
    b = float(distillation_loss(logits[0], teacher[0], 1.0))
    c = float(cross_entropy(logits[1], 1))
    got = float(combined_loss(logits, labels, orig, teacher, lam=2.0))
    assert abs(got - (a + c + 2 * b) / 2) < 1e-12


def test_combined_loss_monotone_in_lambda():
    rng = np.random.default_rng(6)
    logits = rng.normal(size=(8, 2))
    teacher = rng.normal(size=(8, 2))
    labels = rng.integers(0, 2, size=8)
    orig = rng.integers(0, 2, size=8).astype(bool)
    values = [
        float(combined_loss(logits, labels, orig, teacher, lam=lam))
        for lam in (0.0, 0.5, 1.0, 2.0, 5.0)
    ]
    assert all(v2 >= v1 - 1e-12 for v1, v2 in zip(values, values[1:]))


def test_combined_loss_requires_teacher_when_lambda_positive():
    with pytest.raises(ValueError):
        combined_loss(np.zeros((2, 2)), [0, 1], [True, False], None, lam=1.0)


def test_combined_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    logits = rng.normal(size=(4, 2))
    teacher = rng.normal(size=(4, 2))
    labels = rng.integers(0, 2, size=4)
    orig = np.array([True, False, True, False])
    z = torch.tensor(logits, requires_grad=True, dtype=torch.float64)
    loss = combined_loss(z, labels, orig, torch.tensor(teacher), lam=1.5, temperature=2.0)
    (grad,) = torch.autograd.grad(loss, z)
    h = 1e-6
    for i in range(4):
        for k in range(2):
            plus = logits.copy(); plus[i, k] += h
            minus = logits.copy(); minus[i, k] -= h
            fd = (
                float(combined_loss(plus, labels, orig, teacher, lam=1.5, temperature=2.0))
                - float(combined_loss(minus, labels, orig, teacher, lam=1.5, temperature=2.0))
            ) / (2 * h)
            denom = max(abs(fd), abs(float(grad[i, k])), 1e-12)
            assert abs(fd - float(grad[i, k])) / denom <= 1e-5
