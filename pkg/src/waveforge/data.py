"""Synthetic epoch datasets and the ``WFDS`` binary container."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SAMPLE_RATE = 64
EPOCH_LEN = 64

# ERP surrogate construction (not taken from any recording)
ERP_LATENCY_S = 0.300
ERP_FWHM_S = 0.060
ERP_AMPLITUDE = 2.5
BACKGROUND_HZ = 5.0
BACKGROUND_AMPLITUDE = 0.5
OCCIPITAL_CHANNELS = tuple(range(48, 64))
NON_OCCIPITAL_GAIN = 0.25

MAGIC = b"WFDS"
VERSION = 1


class DatasetFormatError(ValueError):
    """Bad magic, truncated payload, or unsupported version in a WFDS file."""


@dataclass
class EpochDataset:
    samples: np.ndarray  # (N, C, T)
    labels: np.ndarray | None = None  # (N,) of {0 non-target, 1 target}
    sample_rate: int = SAMPLE_RATE
    metadata: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 3:
            raise ValueError(f"samples must be (N, C, T), got {self.samples.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.samples.shape[0],):
                raise ValueError("labels must have one entry per epoch")
            if set(np.unique(self.labels)) != {0, 1}:
                raise ValueError("labels must contain both classes 0 and 1")

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def channels(self) -> int:
        return self.samples.shape[1]

    @property
    def length(self) -> int:
        return self.samples.shape[2]

    def model_input(self) -> np.ndarray:
        """(N, 1, C, T) float64 layout consumed by the networks."""
        return self.samples.astype(np.float64)[:, None, :, :]

    def summary(self) -> str:
        text = f"N={self.n} C={self.channels} T={self.length}"
        if self.labels is not None:
            n_t = int(self.labels.sum())
            text += f" target={n_t} non-target={self.n - n_t}"
        return text


def gen_sinusoid_toy(
    n: int = 5000,
    freq_hz: float = 5.0,
    amplitude: float = 1.0,
    noise_var: float = 1.0,
    seed: int = 0,
    phase: str = "random",
    length: int = EPOCH_LEN,
    sample_rate: int = SAMPLE_RATE,
) -> EpochDataset:
    """Noisy 1-second sinusoids, one channel.

    ``phase="random"`` draws a phase per epoch from U(0, 2pi); ``"fixed"``
    starts every epoch at phase 0.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if freq_hz >= sample_rate / 2:
        raise ValueError(f"frequency {freq_hz} Hz is not below Nyquist ({sample_rate / 2} Hz)")
    if noise_var < 0:
        raise ValueError("noise variance must be >= 0")
    if phase not in ("random", "fixed"):
        raise ValueError(f"phase must be 'random' or 'fixed', got {phase!r}")
    rng = np.random.default_rng(seed)
    t = np.arange(length) / sample_rate
    phi = rng.uniform(0, 2 * np.pi, size=(n, 1)) if phase == "random" else np.zeros((n, 1))
    clean = amplitude * np.sin(2 * np.pi * freq_hz * t[None, :] + phi)
    noise = rng.normal(0.0, np.sqrt(noise_var), size=(n, length))
    meta = f"sinusoid f={freq_hz} A={amplitude} var={noise_var} phase={phase} seed={seed}"
    return EpochDataset((clean + noise)[:, None, :], None, sample_rate, meta)


def zscore_epoch(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    sd = x.std()
    if not sd > 0:
        raise ValueError("cannot z-score a zero-variance epoch")
    return (x - x.mean()) / sd


def erp_template(length: int = EPOCH_LEN, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Positive peak at 300 ms riding on a broad negative trough of equal area.

    The zero-area trough keeps the target epochs' mean unchanged, so per-epoch
    z-scoring does not leak the peak into distant samples.
    """
    t = np.arange(length) / sample_rate
    sigma = ERP_FWHM_S / (2 * np.sqrt(2 * np.log(2)))
    peak = np.exp(-0.5 * ((t - ERP_LATENCY_S) / sigma) ** 2)
    trough = np.exp(-0.5 * ((t - ERP_LATENCY_S) / (3 * sigma)) ** 2) / 3.0
    return ERP_AMPLITUDE * (peak - trough)


def gen_erp_surrogate(
    n_per_class: int,
    channels: int = 1,
    seed: int = 0,
    noise_std: float = 1.0,
    length: int = EPOCH_LEN,
    sample_rate: int = SAMPLE_RATE,
) -> EpochDataset:
    """Labelled target / non-target epochs with an RSVP-like structure.

    Non-target epochs carry a phase-locked 5 Hz oscillation in white noise;
    target epochs add :func:`erp_template`, full strength on the occipital
    channel block and attenuated elsewhere.  Target noise is reduced so both
    classes have the same expected power, then every epoch is z-scored.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    if channels not in (1, 64):
        raise ValueError("channels must be 1 or 64")
    rng = np.random.default_rng(seed)
    t = np.arange(length) / sample_rate
    background = BACKGROUND_AMPLITUDE * np.sin(2 * np.pi * BACKGROUND_HZ * t)
    gain = np.ones(channels)
    if channels == 64:
        gain[:] = NON_OCCIPITAL_GAIN
        gain[list(OCCIPITAL_CHANNELS)] = 1.0
    erp = gain[:, None] * erp_template(length, sample_rate)[None, :]
    bg = np.broadcast_to(background, (channels, length))
    extra_power = np.var(bg + erp) - np.var(bg)
    target_noise_var = noise_std**2 - extra_power
    if target_noise_var <= 0:
        raise ValueError("noise too small to balance the ERP power")

    labels = np.repeat([0, 1], n_per_class)
    labels = labels[rng.permutation(labels.size)]
    out = np.empty((labels.size, channels, length))
    for i, lab in enumerate(labels):
        if lab:
            epoch = bg + erp + rng.normal(0.0, np.sqrt(target_noise_var), size=(channels, length))
        else:
            epoch = bg + rng.normal(0.0, noise_std, size=(channels, length))
        out[i] = zscore_epoch(epoch)
    meta = f"erp-surrogate channels={channels} n_per_class={n_per_class} seed={seed}"
    return EpochDataset(out, labels, sample_rate, meta)


# ------------------------------------------------------------------ files


def encode_dataset(ds: EpochDataset) -> bytes:
    n, c, t = ds.samples.shape
    parts = [MAGIC, struct.pack("<B", VERSION), struct.pack("<3Q", n, c, t)]
    parts.append(np.ascontiguousarray(ds.samples, dtype="<f4").tobytes())
    if ds.labels is None:
        parts.append(b"\x00")
    else:
        parts.append(b"\x01")
        parts.append(np.ascontiguousarray(ds.labels, dtype="<u1").tobytes())
    return b"".join(parts)


def decode_dataset(blob: bytes) -> EpochDataset:
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise DatasetFormatError("not a WFDS dataset (bad magic)")
    if len(blob) < 5 + 24:
        raise DatasetFormatError("truncated dataset header")
    if blob[4] != VERSION:
        raise DatasetFormatError(f"unsupported dataset version {blob[4]}")
    n, c, t = struct.unpack("<3Q", blob[5:29])
    pos = 29
    count = n * c * t
    end = pos + 4 * count
    if end + 1 > len(blob):
        raise DatasetFormatError("truncated sample block")
    samples = np.frombuffer(blob[pos:end], dtype="<f4").reshape(n, c, t).astype(np.float32)
    flag = blob[end]
    labels = None
    if flag == 1:
        if end + 1 + n != len(blob):
            raise DatasetFormatError("truncated or oversized label block")
        labels = np.frombuffer(blob[end + 1 :], dtype="<u1").astype(np.int64)
    elif flag != 0 or end + 1 != len(blob):
        raise DatasetFormatError("bad label flag or trailing bytes")
    return EpochDataset(samples, labels)


def save_dataset(path: str | Path, ds: EpochDataset) -> None:
    Path(path).write_bytes(encode_dataset(ds))


def load_dataset(path: str | Path) -> EpochDataset:
    return decode_dataset(Path(path).read_bytes())


def export_csv(path: str | Path, ds: EpochDataset) -> None:
    """One row per epoch: optional label, then channel-major samples."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        n, c, t = ds.samples.shape
        header = (["label"] if ds.labels is not None else []) + [
            f"c{ch}_t{i}" for ch in range(c) for i in range(t)
        ]
        w.writerow(header)
        for k in range(n):
            row = [int(ds.labels[k])] if ds.labels is not None else []
            row += [f"{v:.9g}" for v in ds.samples[k].reshape(-1)]
            w.writerow(row)
