"""Self-attention convolution blocks and the per-second probability head."""

from __future__ import annotations

import numpy as np

from .autodiff import ops
from .autodiff.tensor import Tensor, as_tensor
from .config import ModelConfig
from .errors import DimensionError, UsageError
from .nn import Conv1d, Module, Projection


class SelfAttention(Module):
    """Single-head scaled dot-product attention, no positional information."""

    def __init__(self, rng, d_x: int, d_s: int):
        self.wq = Projection(rng, d_x, d_s)
        self.wk = Projection(rng, d_x, d_s)
        self.wv = Projection(rng, d_x, d_s)
        self.d_x = d_x
        self.d_s = d_s

    def __call__(self, x: Tensor) -> Tensor:
        x = as_tensor(x)
        if x.data.ndim < 2 or x.dims[-1] != self.d_x:
            raise DimensionError("self_attention", f"expected (…, T, {self.d_x})", [x.dims])
        return ops.attention(self.wq(x), self.wk(x), self.wv(x), 1.0 / np.sqrt(self.d_s))


def attention_weights(x: np.ndarray, wq: np.ndarray, wk: np.ndarray) -> np.ndarray:
    """Row-stochastic ``T × T`` weights the attention layer would apply to ``x``."""
    p = (x @ wq) @ (x @ wk).T / np.sqrt(wq.shape[1])
    p = np.exp(p - p.max(axis=1, keepdims=True))
    return p / p.sum(axis=1, keepdims=True)


class SAConvBlock(Module):
    """``relu(conv3(concat(x, s)))`` with ``s`` from attention or, ablated, a conv."""

    def __init__(self, cfg: ModelConfig, rng):
        if cfg.disable_attention:
            # k * d_x * d_s weights, the same count as the three projections when k = 3
            self.context = Conv1d(rng, cfg.d_x, cfg.d_s, 3, bias=False)
        else:
            self.context = SelfAttention(rng, cfg.d_x, cfg.d_s)
        self.conv = Conv1d(rng, cfg.d_x + cfg.d_s, cfg.d_x, cfg.kernel)

    def __call__(self, x: Tensor) -> Tensor:
        s = self.context(x)
        return ops.relu(self.conv(ops.concat([x, s], axis=-1)))


class SAConvNet(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.blocks = [SAConvBlock(cfg, rng) for _ in range(cfg.n_blocks)]
        self.down = Conv1d(rng, cfg.d_x, cfg.down_channels, cfg.fps, stride=cfg.fps, padding="valid")
        self.hidden = Conv1d(rng, cfg.down_channels, cfg.head_channels, cfg.kernel)
        self.head = Conv1d(rng, cfg.head_channels, 1, 1)
        self.fps = cfg.fps

    def features(self, e: Tensor) -> list[Tensor]:
        """Outputs of each block, in order."""
        out = []
        x = as_tensor(e)
        for block in self.blocks:
            x = block(x)
            out.append(x)
        return out

    def curve(self, x: Tensor) -> Tensor:
        """Per-second probabilities from the last block's output; ``(…, T // fps)``."""
        t = x.dims[-2]
        if t < self.fps:
            raise UsageError(f"input has {t} frames; at least {self.fps} (one second) are needed")
        y = ops.relu(self.down(x))
        y = ops.relu(self.hidden(y))
        y = ops.sigmoid(self.head(y))
        return ops.reshape(y, y.dims[:-1])

    def __call__(self, e: Tensor) -> Tensor:
        e = as_tensor(e)
        if e.dims[-2] < self.fps:
            raise UsageError(f"input has {e.dims[-2]} frames; at least {self.fps} (one second) are needed")
        return self.curve(self.features(e)[-1])
