"""The full detector: stem, multi-scale embedding, SA-Conv head."""

from __future__ import annotations

import numpy as np

from .autodiff import load_checkpoint, save_checkpoint
from .autodiff.checkpoint import array_to_text, text_to_array
from .autodiff.tensor import Tensor, as_tensor
from .config import ModelConfig
from .errors import FormatError, UsageError
from .multiscale import Stem, build_multiscale
from .nn import Module
from .saconv import SAConvNet

STAGES = ("stem", "multiscale", "block1", "block2", "block3")
CONFIG_KEY = "meta.config"


class ChorusNet(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | int = 0):
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        self.cfg = cfg
        self.stem = Stem(cfg, rng)
        self.multiscale = build_multiscale(cfg, rng)
        self.saconv = SAConvNet(cfg, rng)

    def named_parameters(self, prefix: str = ""):
        for name in ("stem", "multiscale", "saconv"):
            yield from getattr(self, name).named_parameters(f"{prefix}{name}.")

    def check_length(self, n_frames: int) -> None:
        need = self.cfg.min_frames
        if n_frames < need:
            raise UsageError(f"song has {n_frames} frames; the model needs at least {need}")

    def __call__(self, mel) -> Tensor:
        """Mel frames ``(…, T, n_mels)`` to probabilities ``(…, T // fps)``."""
        mel = as_tensor(mel)
        self.check_length(mel.dims[-2])
        return self.saconv(self.multiscale(self.stem(mel)))

    def embed(self, mel, stage: str) -> Tensor:
        """Intermediate sequence after ``stage`` (one of :data:`STAGES`)."""
        if stage not in STAGES:
            raise UsageError(f"unknown stage {stage!r}; choose from {', '.join(STAGES)}")
        mel = as_tensor(mel)
        self.check_length(mel.dims[-2])
        x = self.stem(mel)
        if stage == "stem":
            return x
        x = self.multiscale(x)
        if stage == "multiscale":
            return x
        blocks = self.saconv.features(x)
        index = int(stage[-1]) - 1
        if index >= len(blocks):
            raise UsageError(f"model has {len(blocks)} SA-Conv blocks; {stage} does not exist")
        return blocks[index]

    def save(self, path, extra: dict[str, np.ndarray] | None = None) -> None:
        arrays = dict(self.state())
        arrays[CONFIG_KEY] = text_to_array(self.cfg.to_text())
        arrays.update(extra or {})
        save_checkpoint(path, arrays)

    @classmethod
    def load(cls, path) -> tuple["ChorusNet", dict[str, np.ndarray]]:
        """Rebuild a model from a checkpoint; also returns non-parameter entries."""
        arrays = load_checkpoint(path)
        if CONFIG_KEY not in arrays:
            raise FormatError("checkpoint has no embedded model config", path=path)
        cfg = ModelConfig.from_text(array_to_text(arrays[CONFIG_KEY]), path)
        model = cls(cfg, 0)
        model.load_state(arrays)
        names = set(model.parameters())
        extra = {k: v for k, v in arrays.items() if k not in names and k != CONFIG_KEY}
        return model, extra
