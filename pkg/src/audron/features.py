"""Per-clip featurization and the batched arrays the model consumes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import dsp
from .dsp import StftConfig


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate_hz: int = 16000
    clip_samples: int = 48000
    stft: StftConfig = field(default_factory=StftConfig)
    n_mels: int = 40
    f_min_hz: float = 0.0
    f_max_hz: float = 8000.0
    ae_pool: int = 10

    def filterbank(self) -> dsp.MelFilterbank:
        return dsp.build_mel_filterbank(self.n_mels, self.stft, self.sample_rate_hz, self.f_min_hz, self.f_max_hz)


@dataclass
class Normalizer:
    """Training-set statistics: scalar for the log spectrogram, per coefficient for MFCCs."""

    spec_mean: float = 0.0
    spec_std: float = 1.0
    mfcc_mean: np.ndarray = field(default_factory=lambda: np.zeros(dsp.N_MFCC))
    mfcc_std: np.ndarray = field(default_factory=lambda: np.ones(dsp.N_MFCC))

    @classmethod
    def fit(cls, logspec: np.ndarray, mfcc: np.ndarray) -> "Normalizer":
        spec64 = logspec.astype(np.float64)
        m64 = mfcc.reshape(-1, mfcc.shape[-1]).astype(np.float64)
        return cls(float(spec64.mean()), float(spec64.std()) or 1.0,
                   m64.mean(axis=0), np.where(m64.std(axis=0) > 0, m64.std(axis=0), 1.0))

    def apply(self, logspec: np.ndarray, mfcc: np.ndarray) -> tuple:
        spec = ((logspec - self.spec_mean) / self.spec_std).astype(np.float32)
        cep = ((mfcc - self.mfcc_mean) / self.mfcc_std).astype(np.float32)
        return spec, cep


@dataclass
class Batch:
    wave: np.ndarray     # [B, samples]
    mfcc: np.ndarray     # [B, frames, 13]
    spec: np.ndarray     # [B, frames, bins]
    target: np.ndarray   # [B, samples / pool] reconstruction target
    labels: np.ndarray   # [B]

    def __len__(self) -> int:
        return len(self.labels)


def clip_features(samples: np.ndarray, cfg: FeatureConfig, fb: Optional[dsp.MelFilterbank] = None) -> tuple:
    """(log1p magnitude spectrogram, raw MFCC matrix) for one waveform."""
    fb = fb if fb is not None else cfg.filterbank()
    mags = dsp.stft(samples, cfg.stft).mags
    return np.log1p(mags), dsp.mfcc_from_power(mags * mags, fb)


def pooled_target(waves: np.ndarray, pool: int) -> np.ndarray:
    n, length = waves.shape
    return waves[:, : length - length % pool].reshape(n, -1, pool).mean(axis=2).astype(np.float32)


@dataclass
class FeatureSet:
    waves: np.ndarray
    mfcc: np.ndarray
    spec: np.ndarray
    targets: np.ndarray
    labels: np.ndarray
    raw_spec: Optional[np.ndarray] = None
    raw_mfcc: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.labels)

    def batch(self, idx) -> Batch:
        idx = np.asarray(idx, dtype=np.int64)
        return Batch(self.waves[idx], self.mfcc[idx], self.spec[idx], self.targets[idx], self.labels[idx])

    def subset(self, idx) -> "FeatureSet":
        idx = np.asarray(idx, dtype=np.int64)
        return FeatureSet(self.waves[idx], self.mfcc[idx], self.spec[idx], self.targets[idx], self.labels[idx],
                          None if self.raw_spec is None else self.raw_spec[idx],
                          None if self.raw_mfcc is None else self.raw_mfcc[idx])

    def renormalize(self, norm: Normalizer) -> "FeatureSet":
        if self.raw_spec is None:
            raise ValueError("raw features were not kept")
        spec, cep = norm.apply(self.raw_spec, self.raw_mfcc)
        return FeatureSet(self.waves, cep, spec, self.targets, self.labels, self.raw_spec, self.raw_mfcc)


def featurize(waves: Sequence[np.ndarray], labels: Sequence[int], cfg: FeatureConfig = FeatureConfig(),
              norm: Optional[Normalizer] = None) -> tuple:
    """Build a FeatureSet; fits a Normalizer on these clips when none is given. Returns (set, normalizer)."""
    fb = cfg.filterbank()
    waves = np.stack([np.asarray(w, dtype=np.float64) for w in waves])
    if waves.shape[1] != cfg.clip_samples:
        raise ValueError(f"clips must have {cfg.clip_samples} samples, got {waves.shape[1]}")
    specs, ceps = zip(*(clip_features(w, cfg, fb) for w in waves))
    raw_spec = np.stack(specs).astype(np.float32)
    raw_mfcc = np.stack(ceps)
    if norm is None:
        norm = Normalizer.fit(raw_spec, raw_mfcc)
    spec, cep = norm.apply(raw_spec, raw_mfcc)
    w32 = waves.astype(np.float32)
    fs = FeatureSet(w32, cep, spec, pooled_target(w32, cfg.ae_pool), np.asarray(labels, dtype=np.int64),
                    raw_spec, raw_mfcc)
    return fs, norm
