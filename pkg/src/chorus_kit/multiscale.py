"""Spectrogram stem and the multi-resolution embedding network.

The stem turns a ``(T, bands)`` Mel matrix into a ``(T, stem_dim)`` sequence
with 2-D convolutions and frequency-only pooling. The multi-scale network then
keeps ``n_branches`` copies of that sequence at time resolutions ``T``,
``T/4``, ``T/16`` … and repeatedly lets every branch see every other one,
resampled to its own length, before fusing everything back at full resolution.
"""

from __future__ import annotations

import numpy as np

from .autodiff import ops
from .autodiff.tensor import Tensor, as_tensor
from .config import ModelConfig
from .errors import DimensionError, UsageError
from .nn import Conv1d, Conv2d, ConvTranspose1d, Module


class Stem(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        chans = (1,) + tuple(cfg.stem_channels)
        self.convs = [Conv2d(rng, a, b) for a, b in zip(chans[:-1], chans[1:])]
        self.project = Conv1d(rng, cfg.stem_bands * chans[-1], cfg.stem_dim, 1)
        self.n_mels = cfg.n_mels
        self.pool = cfg.stem_pool

    def __call__(self, mel) -> Tensor:
        """``(…, T, n_mels)`` Mel frames to a ``(…, T, stem_dim)`` sequence."""
        mel = as_tensor(mel)
        if mel.data.ndim < 2 or mel.dims[-1] != self.n_mels:
            raise DimensionError("stem", f"expected (…, T, {self.n_mels}) Mel frames", [mel.dims])
        lead, t = mel.dims[:-2], mel.dims[-2]
        nd = len(lead)
        # (…, T, F) -> (…, F, T, 1)
        perm = tuple(range(nd)) + (nd + 1, nd)
        x = ops.reshape(ops.transpose(mel, perm), lead + (self.n_mels, t, 1))
        for conv in self.convs:
            x = ops.avg_pool2d(ops.relu(conv(x)), (self.pool, 1))
        f, c = x.dims[-3], x.dims[-1]
        x = ops.transpose(x, tuple(range(nd)) + (nd + 1, nd, nd + 2))
        x = ops.reshape(x, lead + (t, f * c))
        return ops.relu(self.project(x))


class Resample(Module):
    """Moves a branch ``shift`` levels coarser (> 0) or finer (< 0)."""

    def __init__(self, rng, channels: int, stride: int, shift: int):
        factor = stride ** abs(shift)
        if shift > 0:
            self.op = Conv1d(rng, channels, channels, factor, stride=factor, padding="valid")
        else:
            self.op = ConvTranspose1d(rng, channels, channels, factor)

    def __call__(self, x: Tensor) -> Tensor:
        return self.op(x)


class FusionRound(Module):
    def __init__(self, cfg: ModelConfig, rng):
        n, c = cfg.n_branches, cfg.branch_channels
        self.convs = [Conv1d(rng, c, c, cfg.kernel) for _ in range(n)]
        self.exchange = [
            [Resample(rng, c, cfg.stride, i - j) for j in range(n) if j != i] for i in range(n)
        ]
        self.mix = [Conv1d(rng, n * c, c, 1) for _ in range(n)]

    def named_parameters(self, prefix=""):
        # exchange is a nested list; flatten it as exchange.<to>.<from>
        yield from _named(self.convs, prefix + "convs")
        for i, row in enumerate(self.exchange):
            yield from _named(row, f"{prefix}exchange.{i}")
        yield from _named(self.mix, prefix + "mix")

    def __call__(self, branches: list[Tensor]) -> list[Tensor]:
        h = [ops.relu(conv(x)) for conv, x in zip(self.convs, branches)]
        out = []
        for i, row in enumerate(self.exchange):
            others = iter(row)
            parts = [h[i] if j == i else next(others)(h[j]) for j in range(len(h))]
            out.append(ops.relu(self.mix[i](ops.concat(parts, axis=-1))))
        return out


def _named(modules, prefix):
    for i, m in enumerate(modules):
        yield from m.named_parameters(f"{prefix}.{i}.")


class MultiScaleNet(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        c = cfg.branch_channels
        self.entry = Conv1d(rng, cfg.stem_dim, c, 1)
        self.down = [Conv1d(rng, c, c, cfg.stride, stride=cfg.stride, padding="valid")
                     for _ in range(cfg.n_branches - 1)]
        self.rounds = [FusionRound(cfg, rng) for _ in range(cfg.fusion_rounds)]
        self.up = [ConvTranspose1d(rng, c, c, cfg.stride ** i) for i in range(1, cfg.n_branches)]
        self.out = Conv1d(rng, cfg.n_branches * c, cfg.d_x, 1)
        self.unit = cfg.time_unit

    def __call__(self, e: Tensor) -> Tensor:
        e = as_tensor(e)
        t = e.dims[-2]
        if t < self.unit:
            raise UsageError(f"multi-scale input needs at least {self.unit} frames, got {t}")
        usable = t - t % self.unit
        if usable != t:
            e = ops.take(e, np.arange(usable), axis=-2)
        branches = [ops.relu(self.entry(e))]
        for down in self.down:
            branches.append(ops.relu(down(branches[-1])))
        for rnd in self.rounds:
            branches = rnd(branches)
        parts = [branches[0]] + [up(b) for up, b in zip(self.up, branches[1:])]
        y = ops.relu(self.out(ops.concat(parts, axis=-1)))
        if usable != t:
            y = ops.take(y, np.minimum(np.arange(t), usable - 1), axis=-2)
        return y


def single_scale_width(cfg: ModelConfig, target: int) -> tuple[int, int]:
    """Width and depth of a plain kernel-3 stack whose size best matches ``target``."""
    depth = max(2 * cfg.fusion_rounds, 1)

    def count(w):
        return cfg.stem_dim * w + w + depth * (cfg.kernel * w * w + w) + w * cfg.d_x + cfg.d_x

    width = min(range(1, 4 * cfg.d_x + 4 * cfg.branch_channels), key=lambda w: abs(count(w) - target))
    return width, depth


class SingleScaleNet(Module):
    """Ablation: the same budget spent on a full-resolution stack of kernel-3 convs."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        ref = MultiScaleNet(cfg.replace(single_scale=False), np.random.default_rng(0)).n_params()
        width, depth = single_scale_width(cfg, ref)
        self.entry = Conv1d(rng, cfg.stem_dim, width, 1)
        self.stack = [Conv1d(rng, width, width, cfg.kernel) for _ in range(depth)]
        self.out = Conv1d(rng, width, cfg.d_x, 1)

    def __call__(self, e: Tensor) -> Tensor:
        x = ops.relu(self.entry(as_tensor(e)))
        for conv in self.stack:
            x = ops.relu(conv(x))
        return ops.relu(self.out(x))


def build_multiscale(cfg: ModelConfig, rng: np.random.Generator) -> Module:
    return SingleScaleNet(cfg, rng) if cfg.single_scale else MultiScaleNet(cfg, rng)
