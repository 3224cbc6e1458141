"""Desk-scale sinusoid experiments shared by the CLI, scripts and acceptance tests."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import encode_checkpoint
from .data import gen_sinusoid_toy
from .evaluation import averaged_waveform, dominant_bin, fitted_amplitude, spectral_artifact_ratio
from .models import Scheme, build_pair
from .training import TrainConfig, snapshot, train

TOY_FREQ_HZ = 5.0
ALL_SCHEMES = (
    Scheme.DC_DC,
    Scheme.BC_BC,
    Scheme.NN_NN,
    Scheme.BC_DCBL,
    Scheme.DCBL_BC,
    Scheme.DCBL_DCBL,
)


@dataclass(frozen=True)
class SinusoidBudget:
    width_scale: float = 0.125
    steps: int = 1000
    batch_size: int = 64
    ratio_d_to_g: tuple[int, int] = (1, 5)
    n_train: int = 5000
    n_generate: int = 1000
    phase: str = "fixed"
    eval_every: int = 100


@dataclass
class SinusoidResult:
    scheme: Scheme
    seed: int
    dominant_bin: int
    amplitude: float
    artifact_ratio: float
    waveform: np.ndarray
    checkpoint: bytes = field(repr=False)
    log_csv: str = field(repr=False)

    @property
    def hits_target(self) -> bool:
        return self.dominant_bin == int(TOY_FREQ_HZ) and 0.6 <= self.amplitude <= 1.4


def run_sinusoid(scheme: Scheme | str, seed: int, budget: SinusoidBudget = SinusoidBudget()):
    scheme = Scheme.parse(scheme) if isinstance(scheme, str) else scheme
    data = gen_sinusoid_toy(budget.n_train, freq_hz=TOY_FREQ_HZ, seed=seed, phase=budget.phase)
    pair = build_pair(budget.width_scale, scheme, channels=1, seed=seed)
    cfg = TrainConfig(
        ratio_d_to_g=budget.ratio_d_to_g,
        batch_size=budget.batch_size,
        max_steps=budget.steps,
        seed=seed,
        eval_every=budget.eval_every,
    )
    state = train(pair.generator, pair.critic, data, cfg)
    fake = pair.generator.sample(budget.n_generate, np.random.default_rng([seed, 1]))
    signals = fake[:, 0, 0, :]
    wave = averaged_waveform(signals)
    k = int(round(TOY_FREQ_HZ * data.length / data.sample_rate))
    return SinusoidResult(
        scheme=scheme,
        seed=seed,
        dominant_bin=dominant_bin(wave),
        amplitude=fitted_amplitude(wave, k),
        artifact_ratio=spectral_artifact_ratio(signals, [k]),
        waveform=wave,
        checkpoint=encode_checkpoint(snapshot(pair.generator, pair.critic)),
        log_csv=state.log_csv(),
    )


def worker_count(requested: int | None = None) -> int:
    cap = os.environ.get("WAVEFORGE_THREADS")
    n = requested if requested is not None else (os.cpu_count() or 1)
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def _job(args):
    scheme, seed, budget = args
    return run_sinusoid(scheme, seed, budget)


def run_grid(schemes, seeds, budget: SinusoidBudget = SinusoidBudget(), workers: int | None = None):
    """Train every (scheme, seed) pair; results come back in input order."""
    jobs = [(s, seed, budget) for s in schemes for seed in seeds]
    n = worker_count(workers)
    if n == 1 or len(jobs) == 1:
        return [_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(_job, jobs))


@dataclass
class SchemeSummary:
    scheme: Scheme
    median_artifact_ratio: float
    mean_amplitude: float
    hits: int
    runs: int


def summarize(results) -> list[SchemeSummary]:
    by: dict[Scheme, list[SinusoidResult]] = {}
    for r in results:
        by.setdefault(r.scheme, []).append(r)
    out = []
    for scheme, rs in by.items():
        out.append(
            SchemeSummary(
                scheme,
                float(np.median([r.artifact_ratio for r in rs])),
                float(np.mean([r.amplitude for r in rs])),
                sum(r.hits_target for r in rs),
                len(rs),
            )
        )
    return sorted(out, key=lambda s: s.median_artifact_ratio)
