"""Annotations, per-second targets, training crops, and the synthetic corpus.

Annotation files are UTF-8 TSV, one ``start<TAB>end<TAB>label`` segment per
line with times in seconds. "chorus" and "refrain" (any case) both count as
chorus, and overlapping or touching chorus segments are merged.

The synthetic generator stands in for licensed corpora. Each song follows
``intro (verse chorus)×k bridge chorus outro`` with ``k`` in {2, 3}; every
chorus reuses one spectral template per song and carries extra energy in the
lowest 16 bands, so both repetition and low-frequency cues are present.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import ParseError, UsageError
from .features import MelSpectrogram, read_features, write_features

log = logging.getLogger(__name__)

FRAMES_PER_SECOND = 43
CROP_FRAMES = 3096
CHORUS_LABELS = ("chorus", "refrain")


@dataclass(frozen=True)
class Segment:
    start: float
    end: float
    label: str


@dataclass
class ChorusAnnotation:
    segments: list[Segment]
    duration: float

    @property
    def chorus(self) -> list[Segment]:
        return [s for s in self.segments if s.label == "chorus"]


@dataclass
class LabeledExample:
    features: np.ndarray
    targets: np.ndarray
    song_id: str = ""


def _merge_chorus(segments: list[Segment]) -> list[Segment]:
    merged: list[Segment] = []
    for seg in sorted((s for s in segments if s.label == "chorus"), key=lambda s: s.start):
        if merged and seg.start <= merged[-1].end:
            last = merged[-1]
            merged[-1] = Segment(last.start, max(last.end, seg.end), "chorus")
        else:
            merged.append(seg)
    others = [s for s in segments if s.label != "chorus"]
    return sorted(merged + others, key=lambda s: (s.start, s.end))


def parse_annotation_text(text: str, path=None, duration: float | None = None) -> ChorusAnnotation:
    segments = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.rstrip("\r\n").split("\t")
        if len(fields) < 3:
            raise ParseError("expected start<TAB>end<TAB>label", lineno, path)
        try:
            start, end = float(fields[0]), float(fields[1])
        except ValueError:
            raise ParseError(f"non-numeric time in {fields[:2]!r}", lineno, path) from None
        if not (np.isfinite(start) and np.isfinite(end)) or start < 0:
            raise ParseError("times must be finite and non-negative", lineno, path)
        if end <= start:
            raise ParseError(f"end {end} is not after start {start}", lineno, path)
        label = fields[2].strip()
        if label.lower() in CHORUS_LABELS:
            label = "chorus"
        segments.append(Segment(start, end, label))
    segments = _merge_chorus(segments)
    end = max((s.end for s in segments), default=0.0)
    if duration is not None and duration < end:
        raise UsageError(f"duration {duration} is shorter than the last segment end {end}")
    return ChorusAnnotation(segments, end if duration is None else duration)


def parse_annotation(path, duration: float | None = None) -> ChorusAnnotation:
    return parse_annotation_text(Path(path).read_text(encoding="utf-8"), path=path, duration=duration)


def format_annotation(a: ChorusAnnotation) -> str:
    return "".join(f"{s.start!r}\t{s.end!r}\t{s.label}\n" for s in a.segments)


def write_annotation(a: ChorusAnnotation, path) -> None:
    Path(path).write_text(format_annotation(a), encoding="utf-8")


def targets_from_annotation(a: ChorusAnnotation, n_seconds: int, step: float = 1.0) -> np.ndarray:
    """Binary vector; step ``i`` covers ``[i*step, (i+1)*step)`` and is chorus
    when at least half of it overlaps a chorus segment."""
    if n_seconds < 1:
        raise UsageError(f"n_seconds must be >= 1, got {n_seconds}")
    starts = np.arange(n_seconds) * step
    overlap = np.zeros(n_seconds)
    for seg in a.chorus:
        overlap += np.clip(np.minimum(starts + step, seg.end) - np.maximum(starts, seg.start), 0, None)
    return (overlap >= 0.5 * step - 1e-9).astype(np.float32)


def example_from_files(features_path, annotation_path, n: int = FRAMES_PER_SECOND, song_id: str = "") -> LabeledExample:
    mel = read_features(features_path)
    n_seconds = mel.n_frames // n
    if n_seconds < 1:
        raise UsageError(f"{features_path}: {mel.n_frames} frames is shorter than one second ({n} frames)")
    targets = targets_from_annotation(parse_annotation(annotation_path), n_seconds, step=n / float(mel.fps))
    return LabeledExample(mel.data, targets, song_id or Path(features_path).stem)


def random_crop(
    ex: LabeledExample,
    rng: np.random.Generator,
    crop_frames: int = CROP_FRAMES,
    n: int = FRAMES_PER_SECOND,
    start: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Cut ``crop_frames`` consecutive frames and the matching per-second targets.

    The track is first trimmed to whole seconds; tracks shorter than the crop
    are loop-tiled. A crop starting mid-second takes, for each output step,
    the target of the second containing that step's centre frame.
    """
    if crop_frames % n:
        raise UsageError(f"crop length {crop_frames} is not a multiple of {n} frames per second")
    n_sec = min(len(ex.features) // n, len(ex.targets))
    if n_sec < 1:
        raise UsageError(f"track {ex.song_id!r} is shorter than one second")
    feats = ex.features[: n_sec * n]
    targets = np.asarray(ex.targets[:n_sec])
    if len(feats) < crop_frames:
        reps = -(-crop_frames // len(feats))
        feats = np.concatenate([feats] * reps)
        targets = np.concatenate([targets] * reps)
    if start is None:
        start = int(rng.integers(0, len(feats) - crop_frames + 1))
    if not 0 <= start <= len(feats) - crop_frames:
        raise UsageError(f"crop start {start} out of range for {len(feats)} frames")
    first = (start + n // 2) // n
    return feats[start:start + crop_frames], targets[first:first + crop_frames // n]


# ---------------------------------------------------------------------------
# synthetic corpus


@dataclass
class SynthConfig:
    n_mels: int = 128
    fps: int = FRAMES_PER_SECOND
    repeats: tuple[int, ...] = (2, 3)
    intro: tuple[int, int] = (4, 8)
    verse: tuple[int, int] = (8, 14)
    chorus: tuple[int, int] = (8, 14)
    bridge: tuple[int, int] = (6, 10)
    outro: tuple[int, int] = (4, 8)
    noise: float = 0.1
    low_bands: int = 16
    low_boost: float = 0.5
    envelope_range: tuple[float, float] = (0.45, 0.65)
    edge_level: float = 0.9
    # bridges get a low-frequency tilt so that loudness alone is ambiguous
    bridge_tilt: tuple[float, float] = (0.0, 0.6)
    split: dict = field(default_factory=lambda: {"train": 0.8, "val": 0.1, "test": 0.1})


def smooth_envelope(rng: np.random.Generator, n_bands: int, lo: float, hi: float) -> np.ndarray:
    """A random positive spectral envelope built from a few low-order cosines."""
    x = np.linspace(0.0, 1.0, n_bands)
    env = np.zeros(n_bands)
    for order in range(1, 5):
        env += rng.normal(0, 1.0 / order) * np.cos(np.pi * order * x + rng.uniform(0, 2 * np.pi))
    env -= env.min()
    if env.max() > 0:
        env /= env.max()
    return lo + (hi - lo) * env


def _section(rng, template, seconds, cfg):
    frames = seconds * cfg.fps
    block = template[None, :] + rng.normal(0.0, cfg.noise, size=(frames, cfg.n_mels))
    return np.clip(block, 0.0, None)


def synth_song(rng: np.random.Generator, cfg: SynthConfig | None = None, repeats: int | None = None):
    """Generate ``(features[T, n_mels], ChorusAnnotation)`` for one song at ``cfg.fps``."""
    cfg = cfg or SynthConfig()
    k = int(rng.choice(cfg.repeats)) if repeats is None else repeats
    lo, hi = cfg.envelope_range
    lb = cfg.low_bands
    chorus_t = smooth_envelope(rng, cfg.n_mels, lo, hi)
    chorus_t[:lb] *= 1.0 + cfg.low_boost
    while True:
        verse_t = smooth_envelope(rng, cfg.n_mels, lo, hi)
        if verse_t[:lb].mean() < chorus_t[:lb].mean():
            break
    bridge_t = smooth_envelope(rng, cfg.n_mels, lo, hi)
    tilt = rng.uniform(*cfg.bridge_tilt)
    bridge_t *= 1.0 + tilt * np.clip(1.0 - np.arange(cfg.n_mels) / (2.0 * lb), 0.0, None)
    intro_t = cfg.edge_level * verse_t
    outro_t = cfg.edge_level * verse_t

    def dur(bounds):
        return int(rng.integers(bounds[0], bounds[1] + 1))

    plan = [("intro", intro_t, dur(cfg.intro))]
    for _ in range(k):
        plan.append(("verse", verse_t, dur(cfg.verse)))
        plan.append(("chorus", chorus_t, dur(cfg.chorus)))
    plan.append(("bridge", bridge_t, dur(cfg.bridge)))
    plan.append(("chorus", chorus_t, dur(cfg.chorus)))
    plan.append(("outro", outro_t, dur(cfg.outro)))

    blocks, segments, t = [], [], 0
    for label, template, seconds in plan:
        blocks.append(_section(rng, template, seconds, cfg))
        segments.append(Segment(float(t), float(t + seconds), label))
        t += seconds
    features = np.concatenate(blocks).astype(np.float32)
    return features, ChorusAnnotation(segments, float(t))


def low_band_energy_curve(features: np.ndarray, n: int = FRAMES_PER_SECOND, low_bands: int = 16) -> np.ndarray:
    """Per-second mean energy of the lowest bands, rescaled to ``[0, 1]``.

    This is the separability baseline: no learning, one spectral cue.
    """
    n_sec = len(features) // n
    energy = features[: n_sec * n, :low_bands].reshape(n_sec, n, low_bands).mean(axis=(1, 2))
    span = energy.max() - energy.min()
    return (energy - energy.min()) / span if span > 0 else np.zeros_like(energy)


@dataclass
class ManifestEntry:
    song_id: str
    features: Path
    annotation: Path
    split: str


def read_manifest(path) -> list[ManifestEntry]:
    path = Path(path)
    root = path.parent
    entries = []
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader, None)
        if header != ["id", "features", "annotation", "split"]:
            raise ParseError("manifest header must be id, features, annotation, split", 1, path)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ParseError(f"expected 4 columns, found {len(row)}", lineno, path)
            song_id, feats, ann, split = row
            if split not in ("train", "val", "test"):
                raise ParseError(f"unknown split {split!r}", lineno, path)
            entries.append(ManifestEntry(song_id, root / feats, root / ann, split))
    return entries


def write_manifest(path, entries: list[ManifestEntry]) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(["id", "features", "annotation", "split"])
        for e in entries:
            writer.writerow([e.song_id, Path(e.features).name, Path(e.annotation).name, e.split])


def load_split(manifest, split: str, n: int = FRAMES_PER_SECOND) -> list[LabeledExample]:
    entries = manifest if isinstance(manifest, list) else read_manifest(manifest)
    return [example_from_files(e.features, e.annotation, n, e.song_id) for e in entries if e.split == split]


def split_counts(n_songs: int, fractions: dict) -> dict[str, int]:
    val = int(round(n_songs * fractions["val"]))
    test = int(round(n_songs * fractions["test"]))
    return {"train": n_songs - val - test, "val": val, "test": test}


def write_corpus(out_dir, n_songs: int = 200, seed: int = 7, cfg: SynthConfig | None = None) -> Path:
    """Synthesise ``n_songs`` songs into ``out_dir`` and return the manifest path.

    Splits are assigned by a seeded shuffle: 80/10/10 by default, i.e.
    160/20/20 for 200 songs.
    """
    cfg = cfg or SynthConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    counts = split_counts(n_songs, cfg.split)
    labels = ["train"] * counts["train"] + ["val"] * counts["val"] + ["test"] * counts["test"]
    labels = [labels[i] for i in rng.permutation(n_songs)]
    entries = []
    for i in range(n_songs):
        song_id = f"song{i:04d}"
        features, ann = synth_song(rng, cfg)
        fpath, apath = out / f"{song_id}.dcf", out / f"{song_id}.tsv"
        write_features(MelSpectrogram(features, Fraction(cfg.fps)), fpath)
        write_annotation(ann, apath)
        entries.append(ManifestEntry(song_id, fpath, apath, labels[i]))
    manifest = out / "manifest.tsv"
    write_manifest(manifest, entries)
    log.info("wrote %d songs to %s (%s)", n_songs, out, counts)
    return manifest
