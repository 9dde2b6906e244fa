"""Model hyper-parameters, presets, and the flat ``key = value`` config format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import ParseError, UsageError


@dataclass(frozen=True)
class ModelConfig:
    preset: str = "paper"
    n_mels: int = 128
    # stem: one 3x3 conv + frequency pooling per entry
    stem_channels: tuple[int, ...] = (32, 64)
    stem_pool: int = 4
    stem_dim: int = 128
    # multi-scale network
    n_branches: int = 3
    stride: int = 4
    fusion_rounds: int = 2
    branch_channels: int = 100
    d_x: int = 256
    single_scale: bool = False
    # SA-Conv network
    n_blocks: int = 3
    d_s: int = 256
    kernel: int = 3
    fps: int = 43
    down_channels: int = 128
    head_channels: int = 64
    disable_attention: bool = False

    def __post_init__(self):
        positive = ("n_mels", "stem_pool", "stem_dim", "n_branches", "stride", "branch_channels",
                    "d_x", "n_blocks", "d_s", "kernel", "fps", "down_channels", "head_channels")
        for key in positive:
            if getattr(self, key) < 1:
                raise UsageError(f"config field {key} must be >= 1, got {getattr(self, key)}")
        if self.fusion_rounds < 0:
            raise UsageError("fusion_rounds must be >= 0")
        if not self.stem_channels:
            raise UsageError("stem_channels needs at least one entry")
        if self.n_mels % self.stem_pool ** len(self.stem_channels):
            raise UsageError(
                f"{self.n_mels} bands cannot be pooled by {self.stem_pool} {len(self.stem_channels)} times")

    @property
    def stem_bands(self) -> int:
        """Frequency rows left after the stem's pooling."""
        return self.n_mels // self.stem_pool ** len(self.stem_channels)

    @property
    def time_unit(self) -> int:
        """Frame count the multi-scale input is trimmed to a multiple of."""
        return 1 if self.single_scale else self.stride ** (self.n_branches - 1)

    @property
    def min_frames(self) -> int:
        return max(self.fps, self.time_unit)

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, path=None) -> "ModelConfig":
        """Parse ``key = value`` lines; ``preset`` (if present) supplies defaults."""
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        raw: dict[str, tuple[str, int]] = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"expected 'key = value', got {line!r}", lineno, path)
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ParseError(f"unknown config key {key!r}", lineno, path)
            raw[key] = (value, lineno)
        base = preset(raw.get("preset", ("paper", 0))[0])
        changes = {}
        for key, (value, lineno) in raw.items():
            kind = types[key]
            try:
                if "tuple" in kind:
                    changes[key] = tuple(int(x) for x in value.split(",") if x.strip())
                elif kind == "bool":
                    if value.lower() not in ("true", "false"):
                        raise ValueError(value)
                    changes[key] = value.lower() == "true"
                elif kind == "int":
                    changes[key] = int(value)
                else:
                    changes[key] = value
            except ValueError:
                raise ParseError(f"bad value {value!r} for {key}", lineno, path) from None
        try:
            return base.replace(**changes)
        except UsageError as exc:
            raise ParseError(str(exc), 0, path) from None

    @classmethod
    def read(cls, path) -> "ModelConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"), path)


PRESETS = {
    "paper": ModelConfig(),
    "small": ModelConfig(
        preset="small",
        stem_channels=(4, 8),
        stem_dim=32,
        n_branches=2,
        branch_channels=16,
        d_x=32,
        d_s=32,
        down_channels=8,
        head_channels=16,
    ),
    # for finite-difference checks only
    "tiny": ModelConfig(
        preset="tiny",
        stem_channels=(2, 2),
        stem_dim=8,
        n_branches=2,
        fusion_rounds=1,
        branch_channels=8,
        d_x=8,
        n_blocks=1,
        d_s=8,
        down_channels=4,
        head_channels=4,
    ),
}


def preset(name: str, **overrides) -> ModelConfig:
    if name not in PRESETS:
        raise UsageError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return PRESETS[name].replace(**overrides)
