import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from waveforge import tensor as T
from waveforge import training as tr
from waveforge.data import EpochDataset, gen_sinusoid_toy
from waveforge.layers import dense
from waveforge.models import build_pair
from waveforge.tensor import ShapeError, Tensor


def col(values):
    return Tensor(np.asarray(values, dtype=float).reshape(-1, 1))


def test_wasserstein_examples():
    assert tr.wasserstein_estimate(col([1, 1]), col([0, 0])).item() == 1
    d = col([0.3, -2.0, 5.0])
    assert tr.wasserstein_estimate(d, d).item() == 0
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal(16), rng.standard_normal(16)
    assert abs(tr.wasserstein_estimate(col(a), col(b)).item() - (a.mean() - b.mean())) < 1e-12
    with pytest.raises(ShapeError):
        tr.wasserstein_estimate(col([1, 2]), col([1, 2, 3]))


def test_discriminator_loss_examples():
    m = 2.5
    assert tr.loss_discriminator(col([m, m]), col([0, 0]), 0.0, 10.0).item() == -m
    rng = np.random.default_rng(1)
    dr, df = col(rng.standard_normal(8)), col(rng.standard_normal(8))
    assert tr.loss_discriminator(dr, df, 0.7, 0.0).item() == -tr.wasserstein_estimate(dr, df).item()
    composite = tr.loss_discriminator(dr, df, 0.7, 10.0).item()
    parts = df.data.mean() - dr.data.mean() + 10.0 * 0.7
    assert abs(composite - parts) < 1e-12


def test_generator_losses():
    assert tr.loss_generator(col([5, 5])).item() == -5
    y = np.array([0, 1])
    perfect = Tensor(np.array([[60.0, -60.0], [-60.0, 60.0]]))
    assert abs(tr.loss_generator_cc(col([5, 5]), perfect, y).item() + 5) < 1e-12
    rng = np.random.default_rng(2)
    logits = Tensor(rng.standard_normal((6, 2)))
    labels = rng.integers(0, 2, 6)
    d = col(rng.standard_normal(6))
    ce = -np.mean(logits.data[np.arange(6), labels] - np.log(np.exp(logits.data).sum(axis=1)))
    expect = -d.data.mean() + ce
    assert abs(tr.loss_generator_cc(d, logits, labels).item() - expect) < 1e-12
    with pytest.raises(ShapeError):
        tr.loss_generator_cc(d, logits, labels[:3])


def test_classifier_loss():
    y = np.array([0, 1, 1])
    uniform = Tensor(np.zeros((3, 2)))
    assert abs(tr.loss_classifier(uniform, y, uniform, y).item() - 2 * math.log(2)) < 1e-12
    onehot = Tensor(np.array([[50.0, -50.0], [-50.0, 50.0], [-50.0, 50.0]]))
    assert tr.loss_classifier(onehot, y, onehot, y).item() < 1e-12
    rng = np.random.default_rng(3)
    a, b = Tensor(rng.standard_normal((3, 2))), Tensor(rng.standard_normal((3, 2)))
    from waveforge.layers import softmax_cross_entropy

    direct = softmax_cross_entropy(a, y).item() + softmax_cross_entropy(b, y[::-1].copy()).item()
    assert abs(tr.loss_classifier(a, y, b, y[::-1].copy()).item() - direct) < 1e-12


def test_gradient_penalty_analytic_cases():
    rng = np.random.default_rng(0)
    xr, xf = rng.standard_normal((8, 5)), rng.standard_normal((8, 5))
    a = rng.standard_normal((5, 1))
    a /= np.linalg.norm(a)
    gp_unit = tr.gradient_penalty(lambda x: dense(x, Tensor(a)), xr, xf, rng).item()
    assert abs(gp_unit) < 1e-10
    gp_zero = tr.gradient_penalty(lambda x: T.scalar_mul(dense(x, Tensor(a)), 0.0), xr, xf, rng).item()
    assert abs(gp_zero - 1) < 1e-10
    with pytest.raises(ShapeError):
        tr.gradient_penalty(lambda x: x, xr, xf[:4], rng)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.01, 5.0))
def test_gradient_penalty_nonnegative(seed, scale):
    rng = np.random.default_rng(seed)
    xr, xf = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    w1 = Tensor(scale * rng.standard_normal((3, 6)))
    w2 = Tensor(rng.standard_normal((6, 1)))
    gp = tr.gradient_penalty(lambda x: dense(T.exp(T.scalar_mul(dense(x, w1), 0.1)), w2), xr, xf, rng)
    assert gp.item() >= 0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_interpolates_lie_between_endpoints(seed):
    rng = np.random.default_rng(seed)
    xr, xf = rng.standard_normal((6, 1, 1, 8)), rng.standard_normal((6, 1, 1, 8))
    eps = rng.uniform(size=6)
    xh = tr.interpolate(xr, xf, eps)
    lo, hi = np.minimum(xr, xf), np.maximum(xr, xf)
    assert np.all(xh >= lo - 1e-12) and np.all(xh <= hi + 1e-12)
    # one epsilon per sample, shared by every coordinate
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = (xh - xf) / (xr - xf)
    np.testing.assert_allclose(ratio.reshape(6, -1), np.repeat(eps[:, None], 8, axis=1), atol=1e-9)


def test_adam_first_step_and_zero_gradient():
    p = {"w": Tensor(np.array([2.0]))}
    state = tr.AdamState()
    tr.adam_step(p, {"w": np.array([1.0])}, state, lr=0.1, betas=(0.9, 0.999))
    assert abs(p["w"].data[0] - (2.0 - 0.1)) < 1e-6
    q = {"w": Tensor(np.array([3.0]))}
    tr.adam_step(q, {"w": np.array([0.0])}, tr.AdamState(), lr=0.1)
    assert q["w"].data[0] == 3.0


def test_adam_rejects_non_finite():
    p = {"w": Tensor(np.array([1.0]))}
    with pytest.raises(tr.NonFiniteGradientError):
        tr.adam_step(p, {"w": np.array([np.nan])}, tr.AdamState(), lr=0.1)
    assert p["w"].data[0] == 1.0


def test_adam_trajectories_identical():
    def run():
        rng = np.random.default_rng(4)
        p = {"w": Tensor(rng.standard_normal(5))}
        s = tr.AdamState()
        for _ in range(20):
            tr.adam_step(p, {"w": 2 * p["w"].data + rng.standard_normal(5)}, s, lr=0.01)
        return p["w"].data.tobytes()

    assert run() == run()


def test_train_config_validation():
    for bad in (dict(lambda_gp=-1), dict(ratio_d_to_g=(0, 5)), dict(learning_rate=0),
                dict(adam_betas=(1.0, 0.9)), dict(batch_size=1), dict(eval_every=0)):
        with pytest.raises(ValueError):
            tr.TrainConfig(**bad)


def test_linear_critic_loss_decreases_with_zero_lambda():
    # the critic alone on fixed batches: a linear score must separate them steadily
    rng = np.random.default_rng(0)
    xr = Tensor(rng.normal(1.0, 1.0, size=(32, 4)))
    xf = Tensor(rng.normal(-1.0, 1.0, size=(32, 4)))
    w = Tensor(rng.standard_normal((4, 1)) * 0.01, requires_grad=True)
    state = tr.AdamState()
    losses = []
    for _ in range(15):
        loss = tr.loss_discriminator(dense(xr, w), dense(xf, w), 0.0, 0.0)
        losses.append(loss.item())
        w.grad = None
        T.backward(loss)
        tr.adam_step({"w": w}, {"w": w.grad}, state, lr=1e-2)
    assert all(b < a for a, b in zip(losses, losses[1:]))


def tiny_data(n=64, seed=0):
    return gen_sinusoid_toy(n, seed=seed, phase="fixed")


def test_zero_steps_returns_initial_state():
    pair = build_pair(0.125, seed=0)
    state = tr.train(pair.generator, pair.critic, tiny_data(), tr.TrainConfig(max_steps=0))
    assert state.step == 0 and state.best_auc is None and state.logs == []


def test_update_ratio_counts():
    pair = build_pair(0.125, seed=0)
    cfg = tr.TrainConfig(max_steps=2, ratio_d_to_g=(3, 2), batch_size=8, eval_every=1)
    state = tr.train(pair.generator, pair.critic, tiny_data(), cfg)
    assert state.opt_critic.step == 6 and state.opt_generator.step == 4
    assert tr.TrainConfig().ratio_d_to_g == (1, 5)


def test_log_format():
    pair = build_pair(0.125, seed=0)
    cfg = tr.TrainConfig(max_steps=3, batch_size=8, eval_every=2)
    state = tr.train(pair.generator, pair.critic, tiny_data(), cfg)
    rows = list(csv.reader(io.StringIO(state.log_csv())))
    assert rows[0] == ["step", "L_D", "L_G", "L_C", "W", "gp", "auc"]
    assert [r[0] for r in rows[1:]] == ["2", "3"]
    assert all(r[3] == "" and r[6] == "" for r in rows[1:])


def test_training_is_reproducible():
    def run():
        pair = build_pair(0.125, seed=3)
        cfg = tr.TrainConfig(max_steps=3, batch_size=8, seed=3, eval_every=1)
        state = tr.train(pair.generator, pair.critic, tiny_data(seed=3), cfg)
        snap = tr.snapshot(pair.generator, pair.critic)
        return state.log_csv(), b"".join(v.tobytes() for _, v in sorted(snap.items()))

    assert run() == run()


def test_divergence_guard_reports_step():
    data = tiny_data()
    data.samples[:] = np.nan
    pair = build_pair(0.125, seed=0)
    with pytest.raises(tr.DivergenceError) as err:
        tr.train(pair.generator, pair.critic, data, tr.TrainConfig(max_steps=5, batch_size=8))
    assert err.value.step == 1


def test_cc_mode_requires_labels():
    pair = build_pair(0.125, class_conditioned=True, seed=0)
    with pytest.raises(ValueError):
        tr.train(pair.generator, pair.critic, tiny_data(), tr.TrainConfig(class_conditioned=True))


def test_holdout_split_is_seeded_and_disjoint():
    a_train, a_hold = tr.holdout_split(100, seed=4)
    b_train, b_hold = tr.holdout_split(100, seed=4)
    assert np.array_equal(a_hold, b_hold) and len(a_hold) == 20
    assert set(a_train).isdisjoint(a_hold) and len(set(a_train) | set(a_hold)) == 100


def separable_dataset(n_per_class=100, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(64) / 64
    labels = rng.permutation(np.repeat([0, 1], n_per_class))
    x = rng.normal(0.0, 0.3, size=(labels.size, 1, 64))
    x[labels == 1, 0] += 1.5 * np.sin(2 * np.pi * 5 * t)
    return EpochDataset(x, labels)


def test_cc_training_on_separable_data_reaches_high_auc():
    pair = build_pair(0.125, class_conditioned=True, seed=0)
    cfg = tr.TrainConfig(class_conditioned=True, max_steps=40, batch_size=32, eval_every=5,
                         ratio_d_to_g=(1, 1), learning_rate=5e-4)
    state = tr.train(pair.generator, pair.critic, separable_dataset(), cfg)
    assert state.best_auc >= 0.95
    best = [b for _, b in state.best_auc_history]
    assert all(b2 >= b1 for b1, b2 in zip(best, best[1:]))
    assert state.best_checkpoint is not None
    rows = list(csv.reader(io.StringIO(state.log_csv())))
    assert all(r[6] != "" and r[3] != "" for r in rows[1:])
