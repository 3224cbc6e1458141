"""Sample-quality measures: Gaussian mixtures, spectra, averaged waveforms, AUC."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp
from scipy.stats import rankdata

COV_FLOOR = 1e-6
EM_TOL = 1e-7
EM_MAX_ITER = 500


class DegenerateDataError(ValueError):
    """Samples carry no spread (e.g. all identical), so a mixture cannot be fitted."""


@dataclass
class GmmModel:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, d)
    covariances: np.ndarray  # (K, d) diagonal or (K, d, d) full
    covariance_type: str = "diag"
    log_likelihood_trace: list[float] = field(default_factory=list)
    converged: bool = False

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def n_parameters(self) -> int:
        k, d = self.n_components, self.dim
        cov = k * d if self.covariance_type == "diag" else k * d * (d + 1) // 2
        return (k - 1) + k * d + cov


def _component_log_pdf(x: np.ndarray, model: GmmModel) -> np.ndarray:
    """(n, K) matrix of log N(x_i | mu_k, Sigma_k)."""
    n, d = x.shape
    out = np.empty((n, model.n_components))
    for k in range(model.n_components):
        diff = x - model.means[k]
        if model.covariance_type == "diag":
            var = model.covariances[k]
            maha = np.sum(diff * diff / var, axis=1)
            logdet = np.sum(np.log(var))
        else:
            chol = np.linalg.cholesky(model.covariances[k])
            sol = np.linalg.solve(chol, diff.T)
            maha = np.sum(sol * sol, axis=0)
            logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        out[:, k] = -0.5 * (d * np.log(2 * np.pi) + logdet + maha)
    return out


def _as_samples(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    return x.reshape(x.shape[0], -1)


def gmm_log_likelihood(model: GmmModel, samples) -> float:
    """Mean over samples of log sum_k w_k N(x | mu_k, Sigma_k)."""
    x = _as_samples(samples)
    if x.shape[1] != model.dim:
        raise ValueError(f"sample dimension {x.shape[1]} != model dimension {model.dim}")
    per = logsumexp(_component_log_pdf(x, model) + np.log(model.weights), axis=1)
    return float(np.mean(per))


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers.append(x[idx])
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    return np.array(centers)


def _m_step(x, resp, covariance_type, floor):
    n, d = x.shape
    nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
    weights = nk / n
    means = (resp.T @ x) / nk[:, None]
    # clipping (not adding) the floor keeps each M-step an exact constrained
    # maximiser, so EM stays monotone
    if covariance_type == "diag":
        covs = np.empty((len(nk), d))
        for k in range(len(nk)):
            diff = x - means[k]
            covs[k] = np.maximum((resp[:, k] @ (diff * diff)) / nk[k], floor)
    else:
        covs = np.empty((len(nk), d, d))
        for k in range(len(nk)):
            diff = x - means[k]
            s = (resp[:, k, None] * diff).T @ diff / nk[k]
            vals, vecs = np.linalg.eigh((s + s.T) / 2)
            covs[k] = (vecs * np.maximum(vals, floor)) @ vecs.T
    return weights, means, covs


def gmm_fit_em(
    samples,
    k: int,
    seed: int = 0,
    covariance_type: str = "diag",
    tol: float = EM_TOL,
    max_iter: int = EM_MAX_ITER,
    floor: float = COV_FLOOR,
) -> GmmModel:
    """Fit a K-component mixture by EM from a k-means++ start.

    Stops when the relative change of the mean log-likelihood drops below
    ``tol`` or after ``max_iter`` iterations.  The per-iteration
    log-likelihood is kept in ``log_likelihood_trace``.
    """
    x = _as_samples(samples)
    n, d = x.shape
    if k < 1 or n <= k:
        raise ValueError(f"need more samples ({n}) than components ({k})")
    if covariance_type not in ("diag", "full"):
        raise ValueError(f"covariance_type must be 'diag' or 'full', got {covariance_type!r}")
    if np.all(np.ptp(x, axis=0) == 0):
        raise DegenerateDataError("all samples are identical")
    rng = np.random.default_rng(seed)

    centers = _kmeanspp(x, k, rng)
    d2 = ((x[:, None, :] - centers[None]) ** 2).sum(axis=2)
    resp = np.zeros((n, k))
    resp[np.arange(n), np.argmin(d2, axis=1)] = 1.0
    weights, means, covs = _m_step(x, resp, covariance_type, floor)
    model = GmmModel(weights, means, covs, covariance_type)

    prev = None
    for _ in range(max_iter):
        log_joint = _component_log_pdf(x, model) + np.log(model.weights)
        log_norm = logsumexp(log_joint, axis=1)
        ll = float(np.mean(log_norm))
        model.log_likelihood_trace.append(ll)
        if prev is not None and abs(ll - prev) <= tol * max(abs(prev), 1e-300):
            model.converged = True
            break
        prev = ll
        resp = np.exp(log_joint - log_norm[:, None])
        model.weights, model.means, model.covariances = _m_step(x, resp, covariance_type, floor)
    return model


def bic(model: GmmModel, samples) -> float:
    x = _as_samples(samples)
    n = x.shape[0]
    total_ll = gmm_log_likelihood(model, x) * n
    return model.n_parameters() * np.log(n) - 2.0 * total_ll


def gmm_select_k(
    samples, k_range, seed: int = 0, covariance_type: str = "diag"
) -> tuple[int, GmmModel, dict[int, float]]:
    """Fit every K in ``k_range`` and keep the lowest-BIC model."""
    x = _as_samples(samples)
    ks = list(k_range)
    if not ks:
        raise ValueError("empty component range")
    if min(ks) < 1 or max(ks) >= x.shape[0]:
        raise ValueError(f"component range {ks} must lie in (0, {x.shape[0]})")
    scores: dict[int, float] = {}
    models: dict[int, GmmModel] = {}
    for k in ks:
        models[k] = gmm_fit_em(x, k, seed=seed, covariance_type=covariance_type)
        scores[k] = bic(models[k], x)
    best = min(ks, key=lambda k: (scores[k], k))
    return best, models[best], scores


# ------------------------------------------------------------------ spectra


def parseval_spectrum(signals) -> np.ndarray:
    """One-sided energy per DFT bin, scaled so bins sum to the signal energy."""
    x = np.asarray(signals, dtype=np.float64)
    n = x.shape[-1]
    spec = np.abs(np.fft.rfft(x, axis=-1)) ** 2 / n
    spec[..., 1 : (n + 1) // 2] *= 2.0
    return spec


def spectral_artifact_ratio(samples, signal_band) -> float:
    """Mean fraction of non-DC energy that lies outside ``signal_band`` bins."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0 or x.shape[0] == 0:
        raise ValueError("empty batch")
    x = x.reshape(x.shape[0], -1) if x.ndim > 2 else np.atleast_2d(x)
    energy = parseval_spectrum(x)[:, 1:]
    band = np.zeros(energy.shape[1], dtype=bool)
    for b in signal_band:
        if b < 1 or b > energy.shape[1]:
            raise ValueError(f"band bin {b} outside 1..{energy.shape[1]}")
        band[b - 1] = True
    total = energy.sum(axis=1)
    outside = energy[:, ~band].sum(axis=1)
    ratio = np.divide(outside, total, out=np.zeros_like(total), where=total > 0)
    return float(np.mean(ratio))


def averaged_waveform(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    return x.mean(axis=0)


def dominant_bin(signal) -> int:
    """Index of the strongest positive-frequency DFT bin (DC excluded)."""
    spec = parseval_spectrum(np.asarray(signal, dtype=np.float64).ravel())
    return int(np.argmax(spec[1:]) + 1)


def fitted_amplitude(signal, freq_bin: int) -> float:
    """Least-squares amplitude of the sinusoid at ``freq_bin`` cycles per record."""
    y = np.asarray(signal, dtype=np.float64).ravel()
    t = np.arange(y.size)
    w = 2 * np.pi * freq_bin * t / y.size
    design = np.column_stack([np.sin(w), np.cos(w), np.ones_like(w)])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    return float(np.hypot(coef[0], coef[1]))


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve via the rank-sum statistic; ties count one half."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError(f"scores {s.shape} and labels {y.shape} differ in length")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = int((y == 0).sum())
    if n_pos + n_neg != y.size:
        raise ValueError("labels must be 0/1")
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    ranks = rankdata(s)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


# ------------------------------------------------------------------ report


@dataclass
class QualityReport:
    real_score: float
    gen_score: float
    k_selected: int
    artifact_ratio_real: float
    artifact_ratio_gen: float
    averaged_real: np.ndarray
    averaged_gen: np.ndarray
    channel_scores: list[tuple[int, float, float]] = field(default_factory=list)

    @property
    def real_gmm_distance(self) -> float:
        return abs(self.real_score)

    @property
    def gen_gmm_distance(self) -> float:
        return abs(self.gen_score)

    @property
    def score_gap(self) -> float:
        return abs(self.real_score - self.gen_score)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value"])
        w.writerow(["k_selected", self.k_selected])
        w.writerow(["real_loglik", f"{self.real_score:.10g}"])
        w.writerow(["gen_loglik", f"{self.gen_score:.10g}"])
        w.writerow(["score_gap", f"{self.score_gap:.10g}"])
        w.writerow(["artifact_ratio_real", f"{self.artifact_ratio_real:.10g}"])
        w.writerow(["artifact_ratio_gen", f"{self.artifact_ratio_gen:.10g}"])
        return buf.getvalue()

    def summary(self) -> str:
        lines = [
            f"GMM components (BIC): {self.k_selected}",
            f"Real~GMM mean log-likelihood: {self.real_score:.4f}",
            f"Gen~GMM mean log-likelihood:  {self.gen_score:.4f}",
            f"|Real - Gen| score gap:        {self.score_gap:.4f}",
            f"Artifact ratio real / gen:     {self.artifact_ratio_real:.4f} / {self.artifact_ratio_gen:.4f}",
        ]
        if self.channel_scores:
            lines.append(f"Channels scored: {len(self.channel_scores)}")
        return "\n".join(lines) + "\n"


def quality_report(
    real,
    gen,
    k_range=range(1, 7),
    signal_band=(5,),
    seed: int = 0,
    covariance_type: str = "diag",
    k_fixed: int | None = None,
) -> QualityReport:
    """Fit a mixture to real epochs and score real and generated sets under it.

    ``real``/``gen`` are (N, C, T).  Multi-channel data is scored channel by
    channel and the per-channel scores are averaged.
    """
    real = np.asarray(real, dtype=np.float64)
    gen = np.asarray(gen, dtype=np.float64)
    if real.ndim == 2:
        real, gen = real[:, None], gen[:, None]
    channel_scores = []
    ks = []
    for c in range(real.shape[1]):
        xr, xg = real[:, c], gen[:, c]
        if k_fixed is None:
            k, model, _ = gmm_select_k(xr, k_range, seed=seed, covariance_type=covariance_type)
        else:
            k, model = k_fixed, gmm_fit_em(xr, k_fixed, seed=seed, covariance_type=covariance_type)
        ks.append(k)
        channel_scores.append((c, gmm_log_likelihood(model, xr), gmm_log_likelihood(model, xg)))
    real_score = float(np.mean([s[1] for s in channel_scores]))
    gen_score = float(np.mean([s[2] for s in channel_scores]))
    flat_r = real.reshape(real.shape[0], -1) if real.shape[1] == 1 else real.mean(axis=1)
    flat_g = gen.reshape(gen.shape[0], -1) if gen.shape[1] == 1 else gen.mean(axis=1)
    return QualityReport(
        real_score=real_score,
        gen_score=gen_score,
        k_selected=int(round(np.median(ks))),
        artifact_ratio_real=spectral_artifact_ratio(flat_r, signal_band),
        artifact_ratio_gen=spectral_artifact_ratio(flat_g, signal_band),
        averaged_real=averaged_waveform(real),
        averaged_gen=averaged_waveform(gen),
        channel_scores=channel_scores if real.shape[1] > 1 else [],
    )
