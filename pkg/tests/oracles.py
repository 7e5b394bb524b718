"""Brute-force reference implementations, written without the package's fast paths."""

from __future__ import annotations

import math

import numpy as np


def dft_mags(x: np.ndarray, bins) -> np.ndarray:
    """|sum_n x[n] exp(-2 pi i k n / N)| evaluated directly for each requested bin k."""
    x = np.asarray(x, dtype=float)
    size = len(x)
    n = np.arange(size)
    roots = np.exp(-2j * np.pi * n / size)  # the exponent only depends on k*n mod N
    bins = np.atleast_1d(np.asarray(bins, dtype=np.int64))
    out = [np.abs(roots[np.outer(chunk, n) % size] @ x) for chunk in np.array_split(bins, -(-len(bins) // 64))]
    return np.concatenate(out)


def peak_bins(x: np.ndarray, max_hz: float, sr: int, count: int = 1) -> list:
    """Bins of the `count` largest local maxima of the brute-force spectrum below max_hz."""
    bins = np.arange(int(max_hz * len(x) / sr) + 1)
    mags = dft_mags(x, bins)
    local = [k for k in range(1, len(mags) - 1) if mags[k] >= mags[k - 1] and mags[k] >= mags[k + 1]]
    return sorted(sorted(local, key=lambda k: -mags[k])[:count])


def hz_bin(f_hz: float, n: int, sr: int) -> int:
    return int(round(f_hz * n / sr))


def mel(f: float) -> float:
    return 2595.0 * math.log10(1.0 + f / 700.0)


def inv_mel(m: float) -> float:
    return 700.0 * (10.0 ** (m / 2595.0) - 1.0)


def triangle_weights(n_mels: int, n_fft: int, sr: int, fmin: float, fmax: float) -> list:
    """Explicit per-filter, per-bin triangle evaluation, each filter scaled to peak 1."""
    lo_m, hi_m = mel(fmin), mel(fmax)
    edges = [inv_mel(lo_m + (hi_m - lo_m) * i / (n_mels + 1)) for i in range(n_mels + 2)]
    rows = []
    for m in range(n_mels):
        left, center, right = edges[m], edges[m + 1], edges[m + 2]
        row = []
        for b in range(n_fft // 2 + 1):
            f = b * sr / n_fft
            if left < f <= center:
                row.append((f - left) / (center - left))
            elif center < f < right:
                row.append((right - f) / (right - center))
            else:
                row.append(0.0)
        peak = max(row)
        rows.append([w / peak for w in row])
    return rows


def mfcc_reference(x: np.ndarray, n_fft: int = 512, hop: int = 256, sr: int = 16000, n_mels: int = 40,
                   fmin: float = 0.0, fmax: float = 8000.0, n_coeffs: int = 13, floor: float = 1e-10) -> np.ndarray:
    """Direct DFT per frame, explicit triangle weights, naive orthonormal DCT-II sum."""
    x = np.asarray(x, dtype=float)
    window = np.array([0.5 - 0.5 * math.cos(2 * math.pi * i / n_fft) for i in range(n_fft)])
    n_bins = n_fft // 2 + 1
    basis = np.exp(-2j * np.pi * np.outer(np.arange(n_bins), np.arange(n_fft)) / n_fft)
    weights = np.array(triangle_weights(n_mels, n_fft, sr, fmin, fmax))
    n_frames = 1 + (len(x) - n_fft) // hop
    out = np.empty((n_frames, n_coeffs))
    for t in range(n_frames):
        frame = x[t * hop : t * hop + n_fft] * window
        power = np.abs(basis @ frame) ** 2
        logmel = [math.log(sum(weights[m, b] * power[b] for b in range(n_bins) if weights[m, b]) + floor)
                  for m in range(n_mels)]
        for k in range(n_coeffs):
            scale = math.sqrt(1.0 / n_mels) if k == 0 else math.sqrt(2.0 / n_mels)
            out[t, k] = scale * sum(logmel[m] * math.cos(math.pi * k * (2 * m + 1) / (2 * n_mels))
                                    for m in range(n_mels))
    return out
