"""Synthetic drone audio: harmonic rotor stacks under slow RPM modulation, plus noise and wind."""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.signal import lfilter

from .rng import derive_seed, generator

PEAK_LEVEL = 0.95


class ParameterError(ValueError):
    pass


class Source(enum.Enum):
    SYNTHETIC = "Synthetic"
    FILE = "File"


@dataclass(frozen=True)
class DroneClass:
    name: str
    rotor_count: int
    base_frequency_hz: float

    def __post_init__(self):
        if self.base_frequency_hz <= 0 or self.rotor_count < 1:
            raise ParameterError(f"invalid drone class {self}")


QUADCOPTER = DroneClass("Quadcopter", 4, 75.0)
HEXACOPTER = DroneClass("Hexacopter", 6, 65.0)
OCTOCOPTER = DroneClass("Octocopter", 8, 55.0)
RACING_DRONE = DroneClass("RacingDrone", 4, 120.0)

DRONE_CLASSES = (QUADCOPTER, HEXACOPTER, OCTOCOPTER, RACING_DRONE)
CLASS_BY_NAME = {c.name: c for c in DRONE_CLASSES}


def _default_amplitudes() -> tuple:
    return tuple(1.0 / k for k in range(1, 6))


@dataclass(frozen=True)
class SynthParams:
    """Waveform model parameters. ``f1_hz=None`` uses the class fundamental;
    ``mod_phase=None`` draws the phase from the clip seed."""

    harmonic_count: int = 5
    amplitudes: tuple = field(default_factory=_default_amplitudes)
    f1_hz: Optional[float] = None
    mod_depth: float = 0.15
    mod_freq_hz: float = 1.5
    mod_phase: Optional[float] = None
    noise_sigma: float = 0.05
    wind_sigma: float = 0.1
    wind_cutoff_hz: float = 10.0
    rotor_detune_frac: float = 0.01
    duration_s: float = 3.0
    sample_rate_hz: int = 16000

    def __post_init__(self):
        object.__setattr__(self, "amplitudes", tuple(float(a) for a in self.amplitudes))

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s * self.sample_rate_hz))

    def validate(self) -> None:
        if self.duration_s <= 0:
            raise ParameterError(f"duration_s must be > 0, got {self.duration_s}")
        if self.sample_rate_hz <= 0:
            raise ParameterError(f"sample_rate_hz must be > 0, got {self.sample_rate_hz}")
        if abs(self.duration_s * self.sample_rate_hz - self.n_samples) > 1e-6:
            raise ParameterError("duration_s * sample_rate_hz must be an integer")
        if self.harmonic_count < 1 or len(self.amplitudes) != self.harmonic_count:
            raise ParameterError(
                f"need harmonic_count >= 1 amplitudes, got K={self.harmonic_count}, {len(self.amplitudes)} amplitudes")
        if any(a < 0 for a in self.amplitudes):
            raise ParameterError("amplitudes must be non-negative")
        if not 0 <= self.mod_depth < 1:
            raise ParameterError(f"mod_depth must be in [0, 1), got {self.mod_depth}")
        if self.noise_sigma < 0 or self.wind_sigma < 0:
            raise ParameterError("noise and wind sigmas must be non-negative")
        if not 0 <= self.rotor_detune_frac < 0.1:
            raise ParameterError(f"rotor_detune_frac must be in [0, 0.1), got {self.rotor_detune_frac}")
        if self.f1_hz is not None and self.f1_hz <= 0:
            raise ParameterError(f"f1_hz must be > 0, got {self.f1_hz}")
        if self.wind_cutoff_hz <= 0:
            raise ParameterError(f"wind_cutoff_hz must be > 0, got {self.wind_cutoff_hz}")

    def noiseless(self) -> "SynthParams":
        """Pure harmonic stack: no modulation, noise, wind or detune."""
        return dataclasses.replace(self, mod_depth=0.0, noise_sigma=0.0, wind_sigma=0.0, rotor_detune_frac=0.0)


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate_hz: int
    label: str = ""
    source: Source = Source.SYNTHETIC

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


def modulation_envelope(t, alpha: float, f_m_hz: float, phi: float):
    """Slow RPM envelope 1 + alpha*sin(2*pi*f_m*t + phi)."""
    return 1.0 + alpha * np.sin(2 * np.pi * f_m_hz * np.asarray(t, dtype=float) + phi)


def lowpass_one_pole(x: np.ndarray, cutoff_hz: float, sample_rate_hz: int) -> np.ndarray:
    a = 1.0 - np.exp(-2 * np.pi * cutoff_hz / sample_rate_hz)
    return lfilter([a], [1.0, a - 1.0], x)


def synthesize(drone: DroneClass, params: SynthParams = SynthParams(), seed: int = 0) -> AudioClip:
    """Render one clip. Deterministic in (drone, params, seed); peak-normalized to 0.95.

    Each rotor contributes the harmonic stack at its own detuned fundamental;
    stacks are averaged so detune 0 reduces to a single stack.
    """
    params.validate()
    rng = generator(seed)
    sr = params.sample_rate_hz
    n = params.n_samples
    t = np.arange(n) / sr
    f1 = params.f1_hz if params.f1_hz is not None else drone.base_frequency_hz

    phi = rng.uniform(0.0, 2 * np.pi)
    if params.mod_phase is not None:
        phi = params.mod_phase
    detunes = rng.uniform(-params.rotor_detune_frac, params.rotor_detune_frac, size=drone.rotor_count)
    noise = rng.standard_normal(n)
    wind_white = rng.standard_normal(n)

    harmonics = np.zeros(n)
    for d in detunes:
        for k, amp in enumerate(params.amplitudes, start=1):
            if amp:
                harmonics += amp * np.sin(2 * np.pi * k * f1 * (1.0 + d) * t)
    harmonics /= drone.rotor_count

    x = harmonics * modulation_envelope(t, params.mod_depth, params.mod_freq_hz, phi)
    if params.noise_sigma:
        x += params.noise_sigma * noise
    if params.wind_sigma:
        x += lowpass_one_pole(params.wind_sigma * wind_white, params.wind_cutoff_hz, sr)

    peak = np.max(np.abs(x))
    if peak > 0:
        x *= PEAK_LEVEL / peak
    return AudioClip(samples=x, sample_rate_hz=sr, label=drone.name, source=Source.SYNTHETIC)


def clip_seed(master_seed: int, class_index: int, split_index: int, clip_index: int) -> int:
    return derive_seed(master_seed, class_index, split_index, clip_index)


SPLITS = ("train", "val")


def generate_dataset(out_dir, per_class_train: int = 65, per_class_val: int = 20,
                     params: SynthParams = SynthParams(), seed: int = 42,
                     classes: Sequence[DroneClass] = DRONE_CLASSES):
    """Write a balanced WAV corpus and ``manifest.csv`` under ``out_dir``; returns the manifest."""
    from . import dataio

    if per_class_train < 1 or per_class_val < 1:
        raise ParameterError("per-class counts must be >= 1")
    params.validate()
    out = Path(out_dir)
    rows = []
    for ci, drone in enumerate(classes):
        for si, (split, count) in enumerate(zip(SPLITS, (per_class_train, per_class_val))):
            folder = out / split / drone.name
            folder.mkdir(parents=True, exist_ok=True)
            for i in range(count):
                clip = synthesize(drone, params, clip_seed(seed, ci, si, i))
                rel = f"{split}/{drone.name}/{drone.name}_{i:04d}.wav"
                dataio.write_wav(clip, out / rel)
                rows.append(dataio.ManifestRow(rel, drone.name, split))
    manifest = dataio.DatasetManifest(rows, dataio.Task.SYNTH4)
    dataio.write_manifest(manifest, out / "manifest.csv")
    return manifest
