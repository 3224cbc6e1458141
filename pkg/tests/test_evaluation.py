import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from waveforge import evaluation as ev
from waveforge.evaluation import GmmModel


def three_clusters(seed, n_per=100, d=2):
    rng = np.random.default_rng(seed)
    centers = np.array([[0.0, 0.0], [8.0, 0.0], [0.0, 8.0]])[:, :d]
    return np.concatenate([c + rng.standard_normal((n_per, d)) for c in centers])


def test_single_component_is_mle():
    x = np.random.default_rng(0).normal([1.0, -2.0], [0.5, 2.0], size=(400, 2))
    m = ev.gmm_fit_em(x, 1, seed=0)
    np.testing.assert_allclose(m.means[0], x.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(m.covariances[0], x.var(axis=0), rtol=1e-10)
    assert math.isclose(m.weights.sum(), 1.0, abs_tol=1e-12)


def test_two_clusters_recovered():
    rng = np.random.default_rng(1)
    x = np.concatenate([rng.normal(-3, 1, (1000, 1)), rng.normal(3, 1, (1000, 1))])
    m = ev.gmm_fit_em(x, 2, seed=0)
    assert np.all(np.abs(np.sort(m.means.ravel()) - [-3, 3]) < 0.1)


@pytest.mark.parametrize("cov", ["diag", "full"])
def test_em_log_likelihood_monotone(cov):
    for seed in range(10):
        m = ev.gmm_fit_em(three_clusters(seed), 4, seed=seed, covariance_type=cov)
        trace = np.array(m.log_likelihood_trace)
        assert np.all(np.diff(trace) >= -1e-12)


def test_full_covariances_positive_definite():
    m = ev.gmm_fit_em(three_clusters(2), 3, seed=0, covariance_type="full")
    for c in m.covariances:
        assert np.linalg.eigvalsh(c).min() > ev.COV_FLOOR * 0.999


def test_degenerate_data_rejected():
    with pytest.raises(ev.DegenerateDataError):
        ev.gmm_fit_em(np.ones((10, 3)), 2)
    with pytest.raises(ValueError):
        ev.gmm_fit_em(np.random.default_rng(0).standard_normal((3, 2)), 3)


def test_standard_normal_density_at_zero():
    m = GmmModel(np.array([1.0]), np.zeros((1, 1)), np.ones((1, 1)))
    assert abs(ev.gmm_log_likelihood(m, np.zeros((1, 1))) + 0.5 * math.log(2 * math.pi)) < 1e-12
    assert abs(-0.5 * math.log(2 * math.pi) - (-0.91894)) < 1e-5
    with pytest.raises(ValueError):
        ev.gmm_log_likelihood(m, np.zeros((2, 3)))


def test_log_likelihood_matches_direct_density():
    rng = np.random.default_rng(3)
    w = np.array([0.2, 0.5, 0.3])
    mu = rng.standard_normal((3, 2))
    var = 0.5 + rng.random((3, 2))
    m = GmmModel(w, mu, var)
    x = rng.standard_normal((10, 2))
    dens = np.zeros(10)
    for k in range(3):
        norm = np.prod(1 / np.sqrt(2 * np.pi * var[k]))
        dens += w[k] * norm * np.exp(-0.5 * np.sum((x - mu[k]) ** 2 / var[k], axis=1))
    assert abs(ev.gmm_log_likelihood(m, x) - np.mean(np.log(dens))) < 1e-10


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 4))
def test_log_likelihood_relabel_and_split_invariance(seed, k):
    rng = np.random.default_rng(seed)
    w = rng.dirichlet(np.ones(k))
    mu = rng.standard_normal((k, 3))
    var = 0.3 + rng.random((k, 3))
    x = rng.standard_normal((15, 3))
    base = ev.gmm_log_likelihood(GmmModel(w, mu, var), x)
    perm = rng.permutation(k)
    assert math.isclose(ev.gmm_log_likelihood(GmmModel(w[perm], mu[perm], var[perm]), x), base,
                        rel_tol=1e-12, abs_tol=1e-12)
    split = GmmModel(np.concatenate([w[:1] / 2, w[:1] / 2, w[1:]]),
                     np.concatenate([mu[:1], mu[:1], mu[1:]]),
                     np.concatenate([var[:1], var[:1], var[1:]]))
    assert math.isclose(ev.gmm_log_likelihood(split, x), base, rel_tol=1e-12, abs_tol=1e-12)


def test_bic_selects_one_for_single_gaussian():
    hits = 0
    for seed in range(50):
        x = np.random.default_rng(seed).standard_normal((200, 2))
        k, _, _ = ev.gmm_select_k(x, range(1, 5), seed=seed)
        hits += k == 1
    assert hits >= 45


def test_bic_selects_three_for_three_clusters():
    hits = 0
    for seed in range(50):
        k, _, _ = ev.gmm_select_k(three_clusters(seed), range(1, 6), seed=seed)
        hits += k == 3
    assert hits >= 45


def test_bic_argmin_and_determinism():
    x = three_clusters(7)
    k, model, scores = ev.gmm_select_k(x, range(1, 5), seed=1)
    assert all(scores[k] <= s for s in scores.values())
    assert ev.gmm_select_k(x, range(1, 5), seed=1)[2] == scores
    assert math.isclose(ev.bic(model, x), scores[k])
    with pytest.raises(ValueError):
        ev.gmm_select_k(x, [], seed=0)


def test_bic_formula():
    x = three_clusters(0)
    m = ev.gmm_fit_em(x, 2, seed=0)
    n = len(x)
    p = (2 - 1) + 2 * 2 + 2 * 2
    expected = p * math.log(n) - 2 * n * ev.gmm_log_likelihood(m, x)
    assert math.isclose(ev.bic(m, x), expected, rel_tol=1e-12)


def test_artifact_ratio_pure_tone():
    t = np.arange(64) / 64
    x = np.sin(2 * np.pi * 5 * t)[None]
    assert ev.spectral_artifact_ratio(x, [5]) < 1e-20


def test_artifact_ratio_white_noise():
    x = np.random.default_rng(0).standard_normal((4000, 64))
    # 32 non-DC bins with the Nyquist bin carrying half weight: 31.5 effective bins
    assert abs(ev.spectral_artifact_ratio(x, [5]) - (1 - 1 / 31.5)) < 0.005


def test_artifact_ratio_two_tone():
    t = np.arange(64)
    tone = np.sin(2 * np.pi * 5 * t / 64)
    ripple = np.cos(np.pi * t) * np.sqrt(0.5)  # alternating sign, same power
    r = ev.spectral_artifact_ratio((tone + ripple)[None], [5])
    assert abs(r - 0.5) < 1e-12


def test_artifact_ratio_errors():
    with pytest.raises(ValueError):
        ev.spectral_artifact_ratio(np.zeros((0, 64)), [5])
    with pytest.raises(ValueError):
        ev.spectral_artifact_ratio(np.ones((1, 64)), [40])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.lists(st.integers(1, 32), min_size=1, max_size=5))
def test_artifact_ratio_in_unit_interval(seed, band):
    x = np.random.default_rng(seed).standard_normal((5, 64)) * 3
    r = ev.spectral_artifact_ratio(x, band)
    assert 0.0 <= r <= 1.0


def test_parseval():
    x = np.random.default_rng(0).standard_normal((3, 64))
    np.testing.assert_allclose(ev.parseval_spectrum(x).sum(axis=1), (x * x).sum(axis=1) / 1, rtol=1e-12)


def test_waveform_helpers():
    t = np.arange(64)
    wave = 0.8 * np.sin(2 * np.pi * 5 * t / 64 + 0.3) + 0.1
    assert ev.dominant_bin(wave) == 5
    assert abs(ev.fitted_amplitude(wave, 5) - 0.8) < 1e-12
    np.testing.assert_allclose(ev.averaged_waveform(np.stack([wave, wave])), wave)
    with pytest.raises(ValueError):
        ev.averaged_waveform(np.zeros((0, 4)))


def test_auc_examples():
    assert ev.roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert ev.roc_auc([1, 1, 1, 1], [0, 1, 0, 1]) == 0.5
    with pytest.raises(ValueError):
        ev.roc_auc([0.1, 0.2], [1, 1])


def pair_count_auc(s, y):
    pos, neg = s[y == 1], s[y == 0]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return total / (len(pos) * len(neg))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_auc_matches_pair_counting(seed):
    rng = np.random.default_rng(seed)
    y = np.array([0, 1] * 10)
    rng.shuffle(y)
    s = rng.integers(0, 6, size=20).astype(float)  # plenty of ties
    assert ev.roc_auc(s, y) == pair_count_auc(s, y)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_auc_negation(seed):
    rng = np.random.default_rng(seed)
    s = rng.standard_normal(30)
    y = rng.permutation(np.repeat([0, 1], 15))
    assert math.isclose(ev.roc_auc(-s, y), 1 - ev.roc_auc(s, y), abs_tol=1e-12)


def test_quality_report_single_and_multi_channel():
    rng = np.random.default_rng(0)
    real = rng.standard_normal((150, 1, 8))
    gen = rng.standard_normal((100, 1, 8)) * 2
    rep = ev.quality_report(real, gen, k_range=range(1, 3), signal_band=[1])
    assert np.isfinite(rep.real_score) and np.isfinite(rep.gen_score)
    assert rep.gen_score < rep.real_score
    assert rep.score_gap == abs(rep.real_score - rep.gen_score)
    assert "k_selected" in rep.to_csv() and "BIC" in rep.summary()
    multi = ev.quality_report(rng.standard_normal((60, 3, 8)), rng.standard_normal((40, 3, 8)),
                              k_range=[1], signal_band=[1])
    assert len(multi.channel_scores) == 3
    avg = np.mean([c[1] for c in multi.channel_scores])
    assert math.isclose(multi.real_score, avg)
