import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctranatd import metrics
from ctranatd.errors import EmptyDatasetError, NonFiniteError
from ctranatd.models import ModelConfig, build
from ctranatd.nn.tensor import RngState
from ctranatd.preprocess import FeatureSchema, ProtocolTable, WindowedDataset
from ctranatd.training import (
    TrainConfig,
    evaluate,
    repeated_selection,
    selection_indices,
    split,
    train,
)


def schema():
    return FeatureSchema(mean=np.zeros(66), std=np.ones(66), protocols=ProtocolTable())


def separable(n=100, seed=0, window=60):
    g = np.random.default_rng(seed)
    labels = np.array([1] * (n // 2) + [0] * (n - n // 2))
    x = g.standard_normal((n, window, 71))
    x[labels == 1, :, :3] += 5.0
    return WindowedDataset(windows=x, labels=labels, schema=schema())


def logistic_oracle(ds, steps=500, lr=0.5):
    """Plain logistic regression on per-window feature means."""
    X = ds.windows.mean(axis=1)
    y = ds.labels
    w, b = np.zeros(X.shape[1]), 0.0
    for _ in range(steps):
        p = 1 / (1 + np.exp(-(X @ w + b)))
        w -= lr * X.T @ (p - y) / len(y)
        b -= lr * np.mean(p - y)
    return np.mean(((X @ w + b) >= 0) == (y == 1))


def small_cfg(seed=0):
    return ModelConfig.preset("ddos", seed=seed, cnn_filters=8, ff_dim=8, mlp_hidden=8)


class TestSplit:
    def test_stratified_80_20(self):
        tr, va = split(separable(100), 0.2, seed=1)
        assert (len(tr), len(va)) == (80, 20)
        assert tr.labels.mean() == 0.5 and va.labels.mean() == 0.5

    def test_same_seed(self):
        ds = separable(100)
        a, b = split(ds, 0.2, 3), split(ds, 0.2, 3)
        assert np.array_equal(a[1].windows, b[1].windows)

    def test_ten_windows(self):
        tr, va = split(separable(10), 0.2, 0)
        assert (len(tr), len(va)) == (8, 2)

    def test_empty(self):
        with pytest.raises(EmptyDatasetError):
            split(separable(10).subset([]), 0.2)


class TestTrain:
    def test_zero_lr_fixed_point(self):
        m = build(small_cfg())
        before = m.state_arrays()
        train(m, separable(40), TrainConfig(epochs=3, learning_rate=0.0))
        after = m.state_arrays()
        assert all(np.array_equal(before[k], after[k]) for k in before)

    def test_separable_reaches_099(self):
        ds = separable(100)
        assert logistic_oracle(ds) >= 0.99
        m, rep = train(build(ModelConfig.preset("dos")), ds, TrainConfig(epochs=10))
        scores, labels = evaluate(m, ds)
        assert metrics.accuracy(metrics.confusion(scores, labels)) >= 0.99
        assert rep.train_losses[-1] < rep.train_losses[0]

    def test_bitwise_repeatable(self):
        runs = [train(build(small_cfg(2)), separable(40, 2), TrainConfig(epochs=3, seed=2))[1] for _ in range(2)]
        assert runs[0].to_csv() == runs[1].to_csv()
        assert runs[0].train_losses == runs[1].train_losses

    def test_early_stopping_restores_best(self):
        m, rep = train(build(small_cfg()), separable(40), TrainConfig(epochs=30, patience=1, learning_rate=0.05))
        assert rep.stopped_epoch <= 30
        best = min(rep.val_losses)
        assert rep.val_losses[rep.best_epoch - 1] == best
        tr, va = split(separable(40), 0.2, 0)
        from ctranatd.nn.ops import bce_loss

        assert bce_loss(m.predict(va.windows), va.labels)[0] == pytest.approx(best, rel=1e-12)

    def test_report_csv(self):
        _, rep = train(build(small_cfg()), separable(20), TrainConfig(epochs=2))
        lines = rep.to_csv().splitlines()
        assert lines[0] == "epoch,train_loss,val_loss,val_acc" and len(lines) == 3

    def test_nonfinite_input_raises(self):
        ds = separable(20)
        ds.windows[0, 0, 0] = np.nan
        m = build(small_cfg())
        before = m.state_arrays()
        with pytest.raises(NonFiniteError):
            train(m, ds, TrainConfig(epochs=2))
        after = m.state_arrays()
        assert all(np.array_equal(before[k], after[k]) for k in before)

    def test_uses_preprocessing_validation_mask(self):
        ds = separable(40)
        ds.is_val[:4] = True
        ds.is_val[-4:] = True
        m, rep = train(build(small_cfg()), ds, TrainConfig(epochs=1))
        from ctranatd.nn.ops import bce_loss

        held = ds.subset(ds.is_val)
        assert rep.val_losses[0] == pytest.approx(bce_loss(m.predict(held.windows), held.labels)[0], rel=1e-12)

    def test_empty(self):
        with pytest.raises(EmptyDatasetError):
            train(build(small_cfg()), separable(10).subset([]))


class TestEvaluate:
    def test_repeatable(self):
        m, ds = build(small_cfg()), separable(20)
        a, b = evaluate(m, ds), evaluate(m, ds)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], ds.labels)

    def test_empty(self):
        with pytest.raises(EmptyDatasetError):
            evaluate(build(small_cfg()), separable(10).subset([]))

    def test_single_full_repetition_equals_single_evaluation(self):
        g = np.random.default_rng(0)
        s, y = g.random(50), g.integers(0, 2, 50)
        rep = repeated_selection(s, y, reps=1, fraction=1.0)
        direct = metrics.summarize(s, y)
        assert rep.mean == {k: direct[k] for k in rep.mean}

    def test_repeated_csv_shape_and_determinism(self):
        g = np.random.default_rng(1)
        s, y = g.random(40), g.integers(0, 2, 40)
        a = repeated_selection(s, y, reps=100, seed=4).to_csv()
        assert a == repeated_selection(s, y, reps=100, seed=4).to_csv()
        lines = a.splitlines()
        assert len(lines) == 102 and lines[-1].startswith("mean,")

    @settings(max_examples=40)
    @given(st.integers(1, 30), st.integers(1, 30), st.floats(0.1, 1.0), st.integers(0, 1000))
    def test_selection_stratified(self, n_pos, n_neg, fraction, seed):
        y = np.array([1] * n_pos + [0] * n_neg)
        idx = selection_indices(y, fraction, RngState(seed))
        assert len(set(idx.tolist())) == len(idx)
        assert y[idx].sum() == max(1, round(fraction * n_pos))
        assert (1 - y[idx]).sum() == max(1, round(fraction * n_neg))
