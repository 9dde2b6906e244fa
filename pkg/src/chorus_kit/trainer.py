"""Training loop: cropped batches, MSE loss, Adam, F1-driven checkpointing."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import AdamState, adam_step, backward, no_grad, ops
from .autodiff.checkpoint import array_to_text, text_to_array
from .config import ModelConfig, preset
from .dataset import FRAMES_PER_SECOND, LabeledExample, load_split, random_crop
from .errors import NumericError, UsageError
from .metrics import EvalReport, prf
from .model import ChorusNet
from .postprocess import detect

log = logging.getLogger(__name__)

LOG_COLUMNS = ("iteration", "loss", "val_f1", "best_val_f1", "seconds")


@dataclass
class TrainConfig:
    batch_size: int = 4
    crop_frames: int = 3096
    lr: float = 1e-4
    validate_every: int = 50
    patience: int = 500
    seed: int = 7
    max_iterations: int = 20000
    smooth: str = "median"
    threshold: str = "literal"
    model: ModelConfig = field(default_factory=lambda: preset("paper"))

    def __post_init__(self):
        for key in ("batch_size", "crop_frames", "validate_every", "patience", "max_iterations"):
            if getattr(self, key) < 1:
                raise UsageError(f"{key} must be positive, got {getattr(self, key)}")
        if not self.lr > 0:
            raise UsageError(f"learning rate must be positive, got {self.lr}")
        if self.crop_frames % self.model.fps:
            raise UsageError(f"crop_frames {self.crop_frames} is not a multiple of {self.model.fps}")

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        d["model"] = self.model.to_text()
        return json.dumps(d, sort_keys=True)


@dataclass
class TrainState:
    iteration: int = 0
    best_val_f1: float = -math.inf
    iterations_since_best: int = 0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    opt: AdamState = field(default_factory=AdamState)
    queue: list[int] = field(default_factory=list)

    def to_arrays(self, names: list[str]) -> dict[str, np.ndarray]:
        meta = {
            "iteration": self.iteration,
            "best_val_f1": self.best_val_f1 if math.isfinite(self.best_val_f1) else None,
            "iterations_since_best": self.iterations_since_best,
            "adam_step": self.opt.step,
            "queue": self.queue,
            "rng": self.rng.bit_generator.state,
        }
        out = {"train.state": text_to_array(json.dumps(meta, sort_keys=True))}
        for name in names:
            if name in self.opt.m:
                out[f"adam.m.{name}"] = self.opt.m[name]
                out[f"adam.v.{name}"] = self.opt.v[name]
        return out

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "TrainState":
        if "train.state" not in arrays:
            raise UsageError("checkpoint carries no training state to resume from")
        meta = json.loads(array_to_text(arrays["train.state"]))
        rng = np.random.default_rng()
        rng.bit_generator.state = meta["rng"]
        opt = AdamState(step=meta["adam_step"])
        for key, value in arrays.items():
            if key.startswith("adam.m."):
                opt.m[key[7:]] = np.array(value)
            elif key.startswith("adam.v."):
                opt.v[key[7:]] = np.array(value)
        best = meta["best_val_f1"]
        return cls(meta["iteration"], -math.inf if best is None else best,
                   meta["iterations_since_best"], rng, opt, list(meta["queue"]))


def train_step(model: ChorusNet, features: np.ndarray, targets: np.ndarray, opt: AdamState, lr: float,
               iteration: int | None = None) -> float:
    """One MSE + Adam update on a batch ``(B, T, bands)`` / ``(B, T // fps)``."""
    params = model.parameters()
    model.zero_grad()
    curve = model(features)
    if curve.dims != np.shape(targets):
        raise UsageError(f"model emits {curve.dims} values, batch targets are {np.shape(targets)}")
    loss = ops.mse_loss(curve, targets)
    value = loss.item()
    if not math.isfinite(value):
        raise NumericError(f"non-finite loss at iteration {iteration}, lr {lr}")
    backward(loss)
    adam_step(params, {k: p.grad for k, p in params.items()}, opt, lr)
    return value


def predict(model: ChorusNet, features: np.ndarray) -> np.ndarray:
    """Per-second probabilities for one full-length song, ``(T // fps,)``."""
    with no_grad():
        return model(features[None]).data[0].astype(np.float64)


def validate(model: ChorusNet, songs: list[LabeledExample], smooth: str = "median",
             threshold: str = "literal") -> float:
    """Mean per-song F1 after full-length inference and postprocessing."""
    if not songs:
        raise UsageError("validation set is empty")
    scores = []
    for ex in songs:
        if len(ex.features) < model.cfg.min_frames:
            log.warning("skipping %s: %d frames is shorter than %d", ex.song_id, len(ex.features),
                        model.cfg.min_frames)
            continue
        curve = predict(model, ex.features)
        n = min(len(curve), len(ex.targets))
        _, mask = detect(curve[:n], smooth, threshold)
        scores.append(prf(mask, ex.targets[:n])[2])
    if not scores:
        raise UsageError("no validation song is long enough for the model")
    return float(np.mean(scores))


def evaluate(curve_fn, songs: list[LabeledExample], smooth: str = "median", threshold: str = "literal",
             jobs: int = 1) -> EvalReport:
    """Score ``curve_fn(example) -> per-second curve`` on every song.

    Songs are scored independently, so ``jobs > 1`` only changes wall time.
    """

    def score(ex):
        curve = np.asarray(curve_fn(ex), dtype=np.float64)
        n = min(len(curve), len(ex.targets))
        _, mask = detect(curve[:n], smooth, threshold)
        return ex.song_id, curve[:n], mask, ex.targets[:n]

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(jobs) as pool:
            results = list(pool.map(score, songs))
    else:
        results = [score(ex) for ex in songs]
    report = EvalReport()
    for song_id, curve, mask, truth in results:
        report.add(song_id, curve, mask, truth)
    return report


def next_batch(songs: list[LabeledExample], state: TrainState, cfg: TrainConfig):
    """One crop per song per epoch; epochs are reshuffled with the state's RNG."""
    feats, targets = [], []
    for _ in range(cfg.batch_size):
        if not state.queue:
            state.queue = [int(i) for i in state.rng.permutation(len(songs))]
        ex = songs[state.queue.pop(0)]
        f, t = random_crop(ex, state.rng, cfg.crop_frames, cfg.model.fps)
        feats.append(f)
        targets.append(t)
    return np.stack(feats), np.stack(targets).astype(np.float32)


class Trainer:
    """Holds the model, data, and state of one run; ``run`` drives it to a stop."""

    def __init__(self, cfg: TrainConfig, train: list[LabeledExample], val: list[LabeledExample],
                 out_dir, state: TrainState | None = None, model: ChorusNet | None = None):
        if not train:
            raise UsageError("training split is empty")
        if not val:
            raise UsageError("validation split is empty")
        self.cfg = cfg
        self.train = train
        self.val = val
        self.out_dir = Path(out_dir)
        self.model = model or ChorusNet(cfg.model, np.random.default_rng(cfg.seed))
        self.state = state or TrainState(rng=np.random.default_rng(cfg.seed + 1))

    @property
    def best_path(self) -> Path:
        return self.out_dir / "best.dckp"

    @property
    def last_path(self) -> Path:
        return self.out_dir / "last.dckp"

    def save(self, path) -> None:
        names = list(self.model.parameters())
        extra = self.state.to_arrays(names)
        extra["train.config"] = text_to_array(self.cfg.to_json())
        self.model.save(path, extra)

    def step(self) -> float:
        feats, targets = next_batch(self.train, self.state, self.cfg)
        loss = train_step(self.model, feats, targets, self.state.opt, self.cfg.lr, self.state.iteration + 1)
        self.state.iteration += 1
        return loss

    def _validate_and_log(self, writer, fh, losses: list[float], started: float) -> None:
        st = self.state
        f1 = validate(self.model, self.val, self.cfg.smooth, self.cfg.threshold)
        if f1 > st.best_val_f1:
            st.best_val_f1 = f1
            st.iterations_since_best = 0
            self.save(self.best_path)
        else:
            st.iterations_since_best += self.cfg.validate_every
        self.save(self.last_path)
        writer.writerow([st.iteration, repr(float(np.mean(losses))), repr(f1), repr(st.best_val_f1),
                         f"{time.perf_counter() - started:.1f}"])
        fh.flush()
        log.info("iteration %d loss %.5f val F1 %.4f (best %.4f)", st.iteration, np.mean(losses), f1,
                 st.best_val_f1)

    def run(self) -> Path:
        """Train until patience runs out or ``max_iterations``; returns the best checkpoint."""
        self.out_dir.mkdir(parents=True, exist_ok=True)
        (self.out_dir / "config.txt").write_text(self.cfg.model.to_text(), encoding="utf-8")
        log_path = self.out_dir / "log.tsv"
        fresh = self.state.iteration == 0 or not log_path.exists()
        started = time.perf_counter()
        with log_path.open("w" if fresh else "a", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
            if fresh:
                writer.writerow(LOG_COLUMNS)
            losses: list[float] = []
            st = self.state
            while st.iteration < self.cfg.max_iterations and st.iterations_since_best < self.cfg.patience:
                losses.append(self.step())
                if st.iteration % self.cfg.validate_every == 0 or st.iteration == self.cfg.max_iterations:
                    self._validate_and_log(writer, fh, losses, started)
                    losses = []
        return self.best_path


def fit(cfg: TrainConfig, manifest, out_dir, resume: bool = False) -> Path:
    """Train on the manifest's ``train`` split, selecting on ``val``."""
    train = load_split(manifest, "train", cfg.model.fps)
    val = load_split(manifest, "val", cfg.model.fps)
    out_dir = Path(out_dir)
    state = model = None
    if resume and (out_dir / "last.dckp").exists():
        model, extra = ChorusNet.load(out_dir / "last.dckp")
        state = TrainState.from_arrays(extra)
    return Trainer(cfg, train, val, out_dir, state, model).run()


def read_log(path) -> list[dict[str, float]]:
    with Path(path).open(encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh, delimiter="\t"))
    return [{k: float(v) for k, v in row.items()} for row in rows]


__all__ = [
    "FRAMES_PER_SECOND",
    "TrainConfig",
    "TrainState",
    "Trainer",
    "evaluate",
    "fit",
    "next_batch",
    "predict",
    "read_log",
    "train_step",
    "validate",
]
