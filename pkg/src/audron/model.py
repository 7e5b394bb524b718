"""Four-branch fused classifier: MFCC-CNN, STFT-CNN, attentive BiLSTM and waveform autoencoder."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .rng import generator
from .tensor import (LSTM, BatchNorm1d, Conv1d, Conv2d, ConvTranspose1d, DimensionError, Dropout, Linear, Module,
                     Parameter, Tensor, ops)

BRANCHES = ("mfcc", "stft", "rnn", "ae")
MIN_MFCC_FRAMES = 8
MIN_STFT_SIZE = 16


@dataclass(frozen=True)
class Profile:
    mfcc_channels: tuple
    stft_channels: tuple
    rnn_hidden: int
    attn_dim: int
    ae_channels: tuple
    ae_embed: int
    ae_input: int
    ae_pool: int
    fusion_hidden: int
    ae_kernel: int = 9
    ae_stride: int = 4


PROFILES = {
    "full": Profile(mfcc_channels=(64, 128), stft_channels=(32, 64, 128, 256), rnn_hidden=96, attn_dim=64,
                    ae_channels=(8, 16), ae_embed=160, ae_input=48000, ae_pool=10, fusion_hidden=256),
    # quartered widths; only for gradient checks and quick tests
    "reduced": Profile(mfcc_channels=(16, 32), stft_channels=(8, 16, 32, 64), rnn_hidden=24, attn_dim=16,
                       ae_channels=(2, 4), ae_embed=40, ae_input=4800, ae_pool=10, fusion_hidden=64),
}


@dataclass(frozen=True)
class BranchDims:
    mfcc_out: int
    stft_out: int
    rnn_out: int
    ae_embed: int

    def of(self, branch: str) -> int:
        return {"mfcc": self.mfcc_out, "stft": self.stft_out, "rnn": self.rnn_out, "ae": self.ae_embed}[branch]

    def fused(self, branches=BRANCHES) -> int:
        return sum(self.of(b) for b in branches)


def branch_dims(profile: Profile) -> BranchDims:
    return BranchDims(profile.mfcc_channels[-1], profile.stft_channels[-1], 2 * profile.rnn_hidden, profile.ae_embed)


FULL_DIMS = branch_dims(PROFILES["full"])
assert (FULL_DIMS.mfcc_out, FULL_DIMS.stft_out, FULL_DIMS.rnn_out, FULL_DIMS.ae_embed) == (128, 256, 192, 160)
assert FULL_DIMS.fused() == 736


@dataclass(frozen=True)
class ModelConfig:
    n_classes: int = 4
    branches: tuple = BRANCHES
    profile: str = "full"
    dropout: float = 0.3
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "branches", tuple(b for b in BRANCHES if b in self.branches))
        if self.n_classes < 2:
            raise ValueError(f"n_classes must be >= 2, got {self.n_classes}")
        if not self.branches:
            raise ValueError("at least one branch must be enabled")
        if self.profile not in PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}")

    @property
    def dims(self) -> BranchDims:
        return branch_dims(PROFILES[self.profile])

    @property
    def fused_dim(self) -> int:
        return self.dims.fused(self.branches)


@dataclass
class ForwardOutput:
    logits: Tensor
    reconstruction: Optional[Tensor] = None
    embedding: Optional[Tensor] = None
    features: dict = field(default_factory=dict)


class MfccBranch(Module):
    def __init__(self, channels: tuple, rng: np.random.Generator, n_coeffs: int = 13):
        # edge padding keeps a time-constant input constant, so the mean pool is frame-count invariant
        self.conv1 = Conv1d(n_coeffs, channels[0], 3, rng, pad=1, pad_mode="edge")
        self.conv2 = Conv1d(channels[0], channels[1], 3, rng, pad=1, pad_mode="edge")

    def __call__(self, mfcc: np.ndarray) -> Tensor:
        """[B, frames, 13] -> [B, C]; time-averaged after two conv layers."""
        if mfcc.ndim != 3 or mfcc.shape[1] < MIN_MFCC_FRAMES:
            raise DimensionError(f"mfcc branch needs [B, >={MIN_MFCC_FRAMES} frames, 13], got {mfcc.shape}")
        x = Tensor(np.ascontiguousarray(mfcc.transpose(0, 2, 1)))
        x = ops.relu(self.conv1(x))
        x = ops.relu(self.conv2(x))
        return ops.mean(x, axis=2)


class StftBranch(Module):
    def __init__(self, channels: tuple, rng: np.random.Generator):
        c_in = (1,) + tuple(channels[:-1])
        self.blocks = [Conv2d(a, b, 3, rng, pad=1) for a, b in zip(c_in, channels)]

    def __call__(self, spec: np.ndarray) -> Tensor:
        """[B, frames, bins] (or [B, 1, frames, bins]) -> [B, C_last]."""
        if spec.ndim == 3:
            spec = spec[:, None]
        if spec.ndim != 4 or min(spec.shape[2:]) < MIN_STFT_SIZE:
            raise DimensionError(f"stft branch needs [B, 1, >=16, >=16], got {spec.shape}")
        x = Tensor(spec)
        for conv in self.blocks:
            x = ops.maxpool2d(ops.relu(conv(x)))
        return ops.mean(x, axis=(2, 3))


class RnnBranch(Module):
    """Bidirectional LSTM; attention e_t = v . tanh(W h_t) pools the per-step states."""

    def __init__(self, hidden: int, attn_dim: int, rng: np.random.Generator, n_in: int = 13):
        self.forward_lstm = LSTM(n_in, hidden, rng)
        self.backward_lstm = LSTM(n_in, hidden, rng)
        self.attn_w = Parameter.uniform_fan_in((2 * hidden, attn_dim), 2 * hidden, rng)
        self.attn_v = Parameter.uniform_fan_in((attn_dim, 1), attn_dim, rng)
        self.last_attention: Optional[np.ndarray] = None

    def __call__(self, seq: np.ndarray) -> Tensor:
        if seq.ndim != 3 or seq.shape[1] < 1:
            raise DimensionError(f"rnn branch needs [B, frames>=1, features], got {seq.shape}")
        b, t, _ = seq.shape
        steps = [Tensor(seq[:, i]) for i in range(t)]
        fwd = ops.stack(self.forward_lstm(steps), axis=1)
        bwd = ops.stack(self.backward_lstm(steps, reverse=True), axis=1)
        states = ops.concat([fwd, bwd], axis=2)  # [B, T, 2H]
        scores = ops.matmul(ops.tanh(ops.matmul(states, self.attn_w)), self.attn_v)
        weights = ops.softmax(ops.reshape(scores, (b, t)), axis=1)
        self.last_attention = weights.data
        pooled = ops.matmul(ops.reshape(weights, (b, 1, t)), states)
        return ops.reshape(pooled, (b, states.shape[2]))


class AudioAutoencoder(Module):
    """Average-pool the waveform, encode to an embedding, decode back to the pooled length."""

    def __init__(self, profile: Profile, rng: np.random.Generator):
        self.input_len = profile.ae_input
        self.pool = profile.ae_pool
        k, s = profile.ae_kernel, profile.ae_stride
        c1, c2 = profile.ae_channels
        self.pooled_len = self.input_len // self.pool
        self.len1 = (self.pooled_len - k) // s + 1
        self.len2 = (self.len1 - k) // s + 1
        self.channels = (c1, c2)
        self.enc1 = Conv1d(1, c1, k, rng, stride=s)
        self.enc2 = Conv1d(c1, c2, k, rng, stride=s)
        self.to_embed = Linear(c2 * self.len2, profile.ae_embed, rng)
        self.from_embed = Linear(profile.ae_embed, c2 * self.len2, rng)
        pad1 = self.len1 - ((self.len2 - 1) * s + k)
        pad2 = self.pooled_len - ((self.len1 - 1) * s + k)
        self.dec1 = ConvTranspose1d(c2, c1, k, rng, stride=s, output_padding=pad1)
        self.dec2 = ConvTranspose1d(c1, 1, k, rng, stride=s, output_padding=pad2)

    def __call__(self, wave: np.ndarray) -> tuple:
        if wave.ndim != 2 or wave.shape[1] != self.input_len:
            raise DimensionError(f"autoencoder needs [B, {self.input_len}], got {wave.shape}")
        b = wave.shape[0]
        x = ops.avgpool1d(Tensor(wave[:, None, :]), self.pool)
        x = ops.relu(self.enc1(x))
        x = ops.relu(self.enc2(x))
        embedding = self.to_embed(ops.reshape(x, (b, -1)))
        y = ops.relu(self.from_embed(embedding))
        y = ops.reshape(y, (b, self.channels[1], self.len2))
        y = ops.relu(self.dec1(y))
        y = self.dec2(y)
        return embedding, ops.reshape(y, (b, self.pooled_len))


class FusionHead(Module):
    def __init__(self, fused: int, hidden: int, n_classes: int, dropout: float, rng: np.random.Generator,
                 dropout_rng: np.random.Generator):
        self.fc = Linear(fused, hidden, rng)
        self.bn = BatchNorm1d(hidden)
        self.dropout = Dropout(dropout, dropout_rng)
        self.out = Linear(hidden, n_classes, rng)

    def __call__(self, fused: Tensor) -> Tensor:
        x = ops.relu(self.bn(self.fc(fused)))
        return self.out(self.dropout(x))


class AudronModel(Module):
    def __init__(self, config: ModelConfig = ModelConfig()):
        self.config = config
        prof = PROFILES[config.profile]
        dims = config.dims
        if config.profile == "full" and config.branches == BRANCHES:
            assert dims.fused() == 736, "fused width must be 128 + 256 + 192 + 160"
        # one stream per branch so ablations share initial weights with the full model
        seeds = {name: generator(config.seed, i) for i, name in enumerate(BRANCHES)}
        self.mfcc_branch = MfccBranch(prof.mfcc_channels, seeds["mfcc"]) if "mfcc" in config.branches else None
        self.stft_branch = StftBranch(prof.stft_channels, seeds["stft"]) if "stft" in config.branches else None
        self.rnn_branch = RnnBranch(prof.rnn_hidden, prof.attn_dim, seeds["rnn"]) if "rnn" in config.branches else None
        self.autoencoder = AudioAutoencoder(prof, seeds["ae"]) if "ae" in config.branches else None
        self.fusion_head = FusionHead(config.fused_dim, prof.fusion_hidden, config.n_classes, config.dropout,
                                      generator(config.seed, 10), generator(config.seed, 11))

    @property
    def n_classes(self) -> int:
        return self.config.n_classes

    def __call__(self, batch) -> ForwardOutput:
        return self.forward(batch)

    def forward(self, batch) -> ForwardOutput:
        sizes = {len(a) for a in (batch.mfcc, batch.spec, batch.wave) if a is not None}
        if len(sizes) != 1:
            raise DimensionError(f"inconsistent batch sizes across feature inputs: {sorted(sizes)}")
        feats = {}
        recon = embedding = None
        if self.mfcc_branch is not None:
            feats["mfcc"] = self.mfcc_branch(batch.mfcc)
        if self.stft_branch is not None:
            feats["stft"] = self.stft_branch(batch.spec)
        if self.rnn_branch is not None:
            feats["rnn"] = self.rnn_branch(batch.mfcc)
        if self.autoencoder is not None:
            embedding, recon = self.autoencoder(batch.wave)
            feats["ae"] = embedding
        parts = [feats[b] for b in self.config.branches]
        fused = parts[0] if len(parts) == 1 else ops.concat(parts, axis=1)
        if fused.shape[1] != self.config.fused_dim:
            raise DimensionError(f"fused width {fused.shape[1]} != {self.config.fused_dim}")
        logits = self.fusion_head(fused)
        return ForwardOutput(logits=logits, reconstruction=recon, embedding=embedding, features=feats)
