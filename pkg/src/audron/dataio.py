"""PCM16 WAV I/O, dataset manifests and stratified splits."""

from __future__ import annotations

import csv
import enum
import io
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .dsp import fit_length, resample_linear
from .rng import generator
from .synthgen import DRONE_CLASSES, AudioClip, Source

SAMPLE_RATE_HZ = 16000
CLIP_SAMPLES = 48000


class WavFormatError(ValueError):
    pass


class LabelError(ValueError):
    pass


class DataError(ValueError):
    pass


# --- WAV ------------------------------------------------------------------------

def encode_pcm16(samples: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(samples, dtype=np.float64) * 32767), -32768, 32767).astype("<i2")


def decode_pcm16(ints: np.ndarray) -> np.ndarray:
    return np.asarray(ints, dtype=np.float64) / 32768.0


def wav_bytes(pcm: np.ndarray, sample_rate_hz: int) -> bytes:
    payload = np.ascontiguousarray(pcm, dtype="<i2").tobytes()
    fmt = struct.pack("<HHIIHH", 1, 1, sample_rate_hz, sample_rate_hz * 2, 2, 16)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) % 2:
        body += b"\x00"
    return b"RIFF" + struct.pack("<I", len(body)) + body


def write_wav(clip: AudioClip, path) -> None:
    samples = np.asarray(clip.samples)
    if samples.size and (np.abs(samples).max() > 1.0 or not np.isfinite(samples).all()):
        raise ValueError("samples must be finite and within [-1, 1]")
    Path(path).write_bytes(wav_bytes(encode_pcm16(samples), clip.sample_rate_hz))


def parse_wav(blob: bytes) -> tuple:
    """Return (sample_rate_hz, int16 payload) from a mono PCM16 RIFF/WAVE container."""
    if len(blob) < 12 or blob[:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise WavFormatError("RIFF: missing RIFF/WAVE header")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(blob):
        cid = blob[pos : pos + 4]
        (size,) = struct.unpack_from("<I", blob, pos + 4)
        body = blob[pos + 8 : pos + 8 + size]
        if cid == b"fmt ":
            if len(body) < 16:
                raise WavFormatError("fmt : chunk shorter than 16 bytes")
            fmt = struct.unpack_from("<HHIIHH", body)
        elif cid == b"data":
            if len(body) != size:
                raise WavFormatError(f"data: declared {size} bytes, found {len(body)}")
            data = body
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise WavFormatError("fmt : chunk missing")
    tag, channels, rate, _, _, bits = fmt
    if tag != 1:
        raise WavFormatError(f"fmt : format tag {tag} is not PCM")
    if channels != 1:
        raise WavFormatError(f"fmt : {channels} channels, only mono is supported")
    if bits != 16:
        raise WavFormatError(f"fmt : {bits}-bit samples, only 16-bit is supported")
    if data is None:
        raise WavFormatError("data: chunk missing")
    if len(data) % 2:
        raise WavFormatError("data: odd byte count for 16-bit samples")
    return rate, np.frombuffer(data, dtype="<i2")


def read_wav(path, label: str = "") -> AudioClip:
    rate, pcm = parse_wav(Path(path).read_bytes())
    return AudioClip(decode_pcm16(pcm), rate, label, Source.FILE)


def load_clip(path, label: str = "", sample_rate_hz: int = SAMPLE_RATE_HZ, n_samples: int = CLIP_SAMPLES) -> AudioClip:
    """Read, resample and pad/center-crop to the fixed model input length."""
    clip = resample_linear(read_wav(path, label), sample_rate_hz)
    clip.samples = fit_length(clip.samples, n_samples)
    return clip


# --- manifests ------------------------------------------------------------------

class Task(enum.Enum):
    BINARY = "binary"
    MULTI3 = "multi3"
    SYNTH4 = "synth4"

    @property
    def labels(self) -> tuple:
        return TASK_LABELS[self]


TASK_LABELS = {
    Task.BINARY: ("Drone", "Noise"),
    Task.MULTI3: ("Bebop", "Membo", "Noise"),
    Task.SYNTH4: tuple(c.name for c in DRONE_CLASSES),
}

_NOISE_DIRS = {"noise", "unknown", "silence", "white_noise", "esc50", "esc-50", "background"}
_DIR_ALIASES = {
    Task.BINARY: {**{k: "Drone" for k in ("drone", "bebop", "membo", "supplementary", "yes_drone")},
                  **{k: "Noise" for k in _NOISE_DIRS}},
    Task.MULTI3: {"bebop": "Bebop", "membo": "Membo", **{k: "Noise" for k in _NOISE_DIRS}},
    Task.SYNTH4: {c.name.lower(): c.name for c in DRONE_CLASSES},
}


@dataclass(frozen=True)
class ManifestRow:
    path: str
    label: str
    split: str


@dataclass
class DatasetManifest:
    rows: list
    task: Task

    def __post_init__(self):
        self.rows = sorted(self.rows, key=lambda r: r.path)
        seen = set()
        allowed = set(self.task.labels)
        for r in self.rows:
            if r.path in seen:
                raise DataError(f"duplicate path {r.path}")
            seen.add(r.path)
            if r.label not in allowed:
                raise LabelError(f"label {r.label!r} not valid for task {self.task.value}")
            if r.split not in ("train", "val"):
                raise DataError(f"unknown split {r.split!r}")

    def split(self, name: str) -> list:
        return [r for r in self.rows if r.split == name]

    def counts(self) -> dict:
        out: dict = {}
        for r in self.rows:
            out[(r.split, r.label)] = out.get((r.split, r.label), 0) + 1
        return out


def manifest_text(manifest: DatasetManifest) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["path", "label", "split"])
    for r in manifest.rows:
        w.writerow([r.path, r.label, r.split])
    return buf.getvalue()


def write_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(manifest_text(manifest), encoding="utf-8")
    os.replace(tmp, path)


def infer_task(labels) -> Task:
    labels = set(labels)
    for task in (Task.SYNTH4, Task.MULTI3, Task.BINARY):
        if labels <= set(task.labels):
            return task
    raise LabelError(f"labels {sorted(labels)} match no task")


def parse_manifest(text: str, task: Optional[Task] = None) -> DatasetManifest:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != ["path", "label", "split"]:
        raise DataError(f"manifest header must be path,label,split, got {header}")
    rows = [ManifestRow(*rec) for rec in reader if rec]
    if task is None:
        task = infer_task(r.label for r in rows)
    return DatasetManifest(rows, task)


def load_manifest(path, task: Optional[Task] = None) -> DatasetManifest:
    return parse_manifest(Path(path).read_text(encoding="utf-8"), task)


def ingest_directory(root, task: Task, split_ratio: float = 0.8, seed: int = 0) -> DatasetManifest:
    """Stratified seeded split of ``root/<label dir>/*.wav``; directory names map to task labels."""
    root = Path(root)
    if not 0 < split_ratio < 1:
        raise ValueError(f"split_ratio must be in (0, 1), got {split_ratio}")
    aliases = _DIR_ALIASES[task]
    by_label: dict = {}
    for d in sorted(p for p in root.iterdir() if p.is_dir()):
        label = aliases.get(d.name.lower())
        if label is None:
            raise LabelError(f"directory {d.name!r} maps to no {task.value} label")
        files = sorted(d.rglob("*.wav"))
        if not files:
            raise DataError(f"class directory {d.name!r} has no WAV files")
        by_label.setdefault(label, []).extend(f.relative_to(root).as_posix() for f in files)
    rows = []
    for li, label in enumerate(task.labels):
        files = sorted(by_label.get(label, []))
        if not files:
            continue
        order = generator(seed, li).permutation(len(files))
        n_train = int(round(split_ratio * len(files)))
        if len(files) >= 2:
            n_train = min(max(n_train, 1), len(files) - 1)
        for rank, i in enumerate(order):
            rows.append(ManifestRow(files[i], label, "train" if rank < n_train else "val"))
    if not rows:
        raise DataError(f"no audio found under {root}")
    return DatasetManifest(rows, task)
