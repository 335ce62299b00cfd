import numpy as np
import torch
from torch import nn

from cxrscreen.training import ArrayDataset, TrainConfig, classification_batch_loss, fit


class TinyNet(nn.Module):
    """Logistic head over pixel means; mimics the (logits, ...) tuple contract."""

    def __init__(self):
        super().__init__()
        self.lin = nn.Linear(1, 2)

    def forward(self, x):
        pooled = x.mean(dim=(1, 2, 3), keepdim=False)[:, None]
        return self.lin(pooled), pooled, None


def dataset(n=12, seed=0):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, size=n)
    inputs = (labels[:, None, None] * 0.5 + rng.random((n, 8, 8)) * 0.3).astype(np.float32)
    return ArrayDataset(
        inputs=inputs,
        targets=labels.astype(np.int64),
        is_original=np.ones(n, dtype=bool),
        groups=labels.tolist(),
    )


def test_fit_zero_epochs_noop():
    torch.manual_seed(0)
    net = TinyNet()
    before = {k: v.clone() for k, v in net.state_dict().items()}
    result = fit(net, dataset(), None, TrainConfig(stage=2, epochs=0),
                 batch_loss=classification_batch_loss(None, 0.0, 1.0))
    assert result.history == []
    for k, v in net.state_dict().items():
        assert torch.equal(v, before[k])


def test_fit_deterministic_history():
    cfg = TrainConfig(stage=2, epochs=3, batch_size=4, seed=5)
    histories = []
    for _ in range(2):
        torch.manual_seed(99)  # polluted global state must not matter
        net = TinyNet()
        with torch.no_grad():
            net.lin.weight.zero_(); net.lin.bias.zero_()
        r = fit(net, dataset(), None, cfg,
                batch_loss=classification_batch_loss(None, 0.0, 1.0))
        histories.append(r.history)
    assert histories[0] == histories[1]


def test_fit_loss_decreases_on_separable_data():
    net = TinyNet()
    with torch.no_grad():
        net.lin.weight.zero_(); net.lin.bias.zero_()
    r = fit(net, dataset(24, seed=1), None,
            TrainConfig(stage=2, epochs=8, batch_size=8, seed=1, learning_rate=0.05),
            batch_loss=classification_batch_loss(None, 0.0, 1.0))
    assert r.history[-1]["train_loss"] < r.history[0]["train_loss"]


def test_fit_aborts_on_divergence_and_restores_last_finite():
    net = TinyNet()
    calls = {"n": 0}

    def exploding_loss(net_, x, y, orig):
        calls["n"] += 1
        if calls["n"] > 3:
            return torch.tensor(float("nan"), requires_grad=True)
        return classification_batch_loss(None, 0.0, 1.0)(net_, x, y, orig)

    r = fit(net, dataset(), None, TrainConfig(stage=2, epochs=10, batch_size=4, seed=2),
            batch_loss=exploding_loss)
    assert r.aborted
    assert "non-finite" in r.abort_reason
    for v in net.state_dict().values():
        assert torch.isfinite(v).all()


def test_corpus_loss_matches_single_batch_estimator():
    from cxrscreen.training import combined_loss, corpus_loss

    net = TinyNet()
    data = dataset(10, seed=3)
    teacher = TinyNet()
    with torch.no_grad():
        teacher.lin.weight.copy_(torch.tensor([[0.3], [-0.2]]))
        teacher.lin.bias.zero_()
    x, y, orig = data.batch(list(range(10)))
    with torch.no_grad():
        logits = net(x)[0]
        t_logits = teacher(x)[0]
    expected = float(combined_loss(logits, y, orig, t_logits, lam=2.0, temperature=1.5))
    got = corpus_loss(net, data, teacher, lam=2.0, temperature=1.5, chunk=3)
    assert abs(got - expected) < 1e-9


def test_corpus_loss_requires_teacher():
    import pytest

    from cxrscreen.training import corpus_loss

    with pytest.raises(ValueError):
        corpus_loss(TinyNet(), dataset(4), None, lam=1.0)


def test_train_config_validation():
    import pytest

    from cxrscreen.training import TrainConfig

    with pytest.raises(ValueError):
        TrainConfig(stage=4)
    with pytest.raises(ValueError):
        TrainConfig(stage=2, lam=-0.1)
    with pytest.raises(ValueError):
        TrainConfig(stage=2, temperature=0.0)
    with pytest.raises(ValueError):
        TrainConfig(stage=2, epochs=-1)
