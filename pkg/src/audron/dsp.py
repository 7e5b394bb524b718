"""STFT magnitude spectrograms, mel filterbanks and MFCCs."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import dct

from .synthgen import AudioClip

N_MFCC = 13
LOG_FLOOR = 1e-10


class LengthError(ValueError):
    pass


@dataclass(frozen=True)
class StftConfig:
    n_fft: int = 512
    hop: int = 256
    window: str = "hann"  # or "rectangular"

    def __post_init__(self):
        if self.n_fft < 1 or self.n_fft & (self.n_fft - 1):
            raise ValueError(f"n_fft must be a power of two, got {self.n_fft}")
        if not 0 < self.hop <= self.n_fft:
            raise ValueError(f"hop must be in (0, n_fft], got {self.hop}")
        if self.window not in ("hann", "rectangular"):
            raise ValueError(f"unknown window {self.window!r}")

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.n_fft:
            raise LengthError(f"input of {n_samples} samples is shorter than n_fft={self.n_fft}")
        return 1 + (n_samples - self.n_fft) // self.hop

    def window_array(self) -> np.ndarray:
        if self.window == "rectangular":
            return np.ones(self.n_fft)
        # periodic Hann
        return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(self.n_fft) / self.n_fft)


@dataclass
class Spectrogram:
    mags: np.ndarray  # [frames, bins]
    config: StftConfig


@dataclass
class MelFilterbank:
    weights: np.ndarray  # [n_mels, bins]
    f_min_hz: float
    f_max_hz: float
    centers_hz: np.ndarray


def _samples(clip) -> np.ndarray:
    return np.asarray(clip.samples if isinstance(clip, AudioClip) else clip, dtype=np.float64)


def frames(x: np.ndarray, config: StftConfig) -> np.ndarray:
    count = config.n_frames(len(x))
    return sliding_window_view(x, config.n_fft)[: config.hop * (count - 1) + 1 : config.hop]


def stft(clip, config: StftConfig = StftConfig()) -> Spectrogram:
    """Magnitudes of the one-sided DFT of each windowed frame."""
    x = _samples(clip)
    framed = frames(x, config) * config.window_array()
    return Spectrogram(np.abs(np.fft.rfft(framed, axis=1)), config)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


def build_mel_filterbank(n_mels: int = 40, config: StftConfig = StftConfig(), sample_rate_hz: int = 16000,
                         f_min_hz: float = 0.0, f_max_hz: float = 8000.0) -> MelFilterbank:
    """Triangular filters at mel-uniform centers, each scaled so its largest weight is 1."""
    if not 0 <= f_min_hz < f_max_hz <= sample_rate_hz / 2:
        raise ValueError(f"infeasible band [{f_min_hz}, {f_max_hz}] for sample rate {sample_rate_hz}")
    if n_mels < N_MFCC:
        raise ValueError(f"n_mels must be >= {N_MFCC}, got {n_mels}")
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min_hz), hz_to_mel(f_max_hz), n_mels + 2))
    bin_hz = np.arange(config.n_bins) * sample_rate_hz / config.n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_hz - lo) / (mid - lo)
    falling = (hi - bin_hz) / (hi - mid)
    weights = np.clip(np.minimum(rising, falling), 0.0, None)
    peaks = weights.max(axis=1)
    if np.any(peaks <= 0):
        empty = int(np.argmin(peaks))
        raise ValueError(f"mel filter {empty} covers no FFT bin; use fewer mels or a larger n_fft")
    return MelFilterbank(weights / peaks[:, None], f_min_hz, f_max_hz, edges[1:-1])


def mfcc_from_power(power: np.ndarray, fb: MelFilterbank, n_coeffs: int = N_MFCC) -> np.ndarray:
    mel = power @ fb.weights.T
    return dct(np.log(mel + LOG_FLOOR), type=2, norm="ortho", axis=1)[:, :n_coeffs]


def mfcc(clip, config: StftConfig = StftConfig(), fb: MelFilterbank = None) -> np.ndarray:
    """[frames, 13] cepstra: |STFT|^2 -> mel projection -> log -> orthonormal DCT-II."""
    fb = fb if fb is not None else build_mel_filterbank(config=config)
    mags = stft(clip, config).mags
    return mfcc_from_power(mags * mags, fb)


def resample_linear(clip: AudioClip, target_rate_hz: int) -> AudioClip:
    if clip.sample_rate_hz <= 0 or target_rate_hz <= 0:
        raise ValueError("sample rates must be positive")
    if clip.sample_rate_hz == target_rate_hz:
        return AudioClip(np.array(clip.samples, dtype=float), target_rate_hz, clip.label, clip.source)
    n_out = len(clip.samples) * target_rate_hz // clip.sample_rate_hz
    t_in = np.arange(len(clip.samples)) / clip.sample_rate_hz
    t_out = np.arange(n_out) / target_rate_hz
    return AudioClip(np.interp(t_out, t_in, clip.samples), target_rate_hz, clip.label, clip.source)


def fit_length(x: np.ndarray, n: int) -> np.ndarray:
    """Zero-pad at the tail or center-crop to exactly ``n`` samples."""
    if len(x) >= n:
        start = (len(x) - n) // 2
        return np.asarray(x[start : start + n])
    return np.concatenate([x, np.zeros(n - len(x), dtype=np.asarray(x).dtype)])


def spectrogram_to_pgm(spec: Spectrogram, path) -> None:
    """8-bit binary PGM of log1p magnitudes, rows = frames, columns = bins, min-max scaled."""
    img = np.log1p(spec.mags)
    lo, hi = img.min(), img.max()
    scaled = np.zeros_like(img) if hi == lo else (img - lo) / (hi - lo) * 255.0
    pixels = np.round(scaled).astype(np.uint8)
    rows, cols = pixels.shape
    Path(path).write_bytes(f"P5\n{cols} {rows}\n255\n".encode("ascii") + pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    cols, rows = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(rows, cols)
