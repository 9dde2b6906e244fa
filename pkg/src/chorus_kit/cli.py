"""``chorus-kit`` command line.

Exit codes: 0 success, 1 usage error, 2 unreadable or malformed data,
3 numeric failure. Machine-readable results go to the files named by
``--out``; short human summaries go to stdout and diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import FORMAT_VERSIONS, __version__
from .errors import ChorusKitError, FormatError, NumericError, UsageError

log = logging.getLogger("chorus_kit")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad flags; this contract reserves 2 for data errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(2, "no such file", str(p))
    return p


# ---------------------------------------------------------------------------
# subcommands


def cmd_features(args) -> int:
    from .features import extract, write_features

    inputs = [_existing(p) for p in args.inputs]
    out = Path(args.out)
    single = len(inputs) == 1 and out.suffix == ".dcf"
    if not single:
        out.mkdir(parents=True, exist_ok=True)

    def one(src: Path) -> tuple[Path, int]:
        dst = out if single else out / (src.stem + ".dcf")
        mel = extract(src, log=args.log)
        write_features(mel, dst)
        return dst, mel.n_frames

    if args.jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(args.jobs) as pool:
            done = list(pool.map(one, inputs))
    else:
        done = [one(src) for src in inputs]
    for dst, frames in done:
        print(f"{dst}\t{frames} frames")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .dataset import write_corpus

    manifest = write_corpus(args.out, n_songs=args.songs, seed=args.seed)
    print(f"wrote {args.songs} songs; manifest {manifest}")
    return EXIT_OK


def _model_config(args):
    from .config import ModelConfig, preset

    cfg = ModelConfig.read(_existing(args.config)) if args.config else preset(args.preset)
    flags = {}
    if args.single_scale:
        flags["single_scale"] = True
    if args.disable_attention:
        flags["disable_attention"] = True
    return cfg.replace(**flags) if flags else cfg


def cmd_train(args) -> int:
    from .plotting import plot_training_log
    from .trainer import TrainConfig, fit, read_log

    _existing(args.manifest)
    cfg = TrainConfig(
        batch_size=args.batch_size,
        crop_frames=args.crop_frames,
        lr=args.lr,
        validate_every=args.validate_every,
        patience=args.patience,
        seed=args.seed,
        max_iterations=args.max_iterations,
        model=_model_config(args),
    )
    best = fit(cfg, args.manifest, args.out, resume=args.resume)
    rows = read_log(Path(args.out) / "log.tsv")
    if rows and not args.no_plot:
        plot_training_log(rows, Path(args.out) / "log.svg")
    if rows:
        print(f"stopped at iteration {int(rows[-1]['iteration'])}; best val F1 {rows[-1]['best_val_f1']:.4f}")
    print(f"best checkpoint {best}")
    return EXIT_OK


def cmd_detect(args) -> int:
    from .features import read_features
    from .model import ChorusNet
    from .plotting import plot_curve
    from .postprocess import detect, segments_from_mask, write_curve
    from .trainer import predict

    model, _ = ChorusNet.load(_existing(args.model))
    mel = read_features(_existing(args.inp))
    curve = predict(model, mel.data)
    smoothed, mask = detect(curve, args.smooth, args.threshold)
    write_curve(args.out, curve, mask)
    if args.plot:
        plot_curve(curve, args.plot, mask.threshold_used, title=Path(args.inp).stem)
    for start, end in segments_from_mask(mask):
        print(f"{start}\t{end}\tchorus")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .dataset import load_split, low_band_energy_curve
    from .trainer import evaluate, predict

    songs = load_split(_existing(args.manifest), args.split)
    if not songs:
        raise UsageError(f"manifest has no songs in split {args.split!r}")
    if args.baseline:
        def curve_fn(ex):
            return low_band_energy_curve(ex.features)
    else:
        if not args.model:
            raise UsageError("eval needs --model (or --baseline)")
        from .model import ChorusNet

        model, _ = ChorusNet.load(_existing(args.model))
        for ex in songs:
            if len(ex.features) < model.cfg.min_frames:
                log.warning("skipping %s: shorter than %d frames", ex.song_id, model.cfg.min_frames)
        songs = [ex for ex in songs if len(ex.features) >= model.cfg.min_frames]

        def curve_fn(ex):
            return predict(model, ex.features)

    report = evaluate(curve_fn, songs, args.smooth, args.threshold, jobs=args.jobs)
    report.write(args.out)
    print(f"{len(report.songs)} songs  F1 {report.f1:.4f}  AUC {report.auc:.4f}  "
          f"recall {report.mean('recall'):.4f}  precision {report.mean('precision'):.4f}")
    if args.plot_dir:
        from .plotting import plot_curve
        from .postprocess import detect, segments_from_mask

        plot_dir = Path(args.plot_dir)
        plot_dir.mkdir(parents=True, exist_ok=True)
        for ex in songs:
            curve = np.asarray(curve_fn(ex))[: len(ex.targets)]
            _, mask = detect(curve, args.smooth, args.threshold)
            plot_curve(curve, plot_dir / f"{ex.song_id}.svg", mask.threshold_used,
                       segments_from_mask(ex.targets.astype(np.int8)), title=ex.song_id)
    return EXIT_OK


def cmd_ssm(args) -> int:
    from .autodiff import no_grad
    from .features import read_features
    from .metrics import ssm
    from .model import ChorusNet

    model, _ = ChorusNet.load(_existing(args.model))
    mel = read_features(_existing(args.inp))
    with no_grad():
        e = model.embed(mel.data, args.stage).data.astype(np.float64)
    if args.hop > 1:
        rows = len(e) // args.hop
        if rows < 1:
            raise UsageError(f"sequence of {len(e)} frames is shorter than --hop {args.hop}")
        e = e[: rows * args.hop].reshape(rows, args.hop, -1).mean(axis=1)
    d = ssm(e, args.distance)
    np.savetxt(args.out, d, delimiter=",", fmt="%.9g")
    if args.plot:
        from .plotting import plot_ssm

        plot_ssm(d, args.plot, args.hop / float(mel.fps), title=f"{Path(args.inp).stem} / {args.stage}")
    print(f"{d.shape[0]}x{d.shape[1]} {args.distance} distances -> {args.out}")
    return EXIT_OK


def cmd_plot(args) -> int:
    from .dataset import parse_annotation, targets_from_annotation
    from .plotting import plot_curve
    from .postprocess import adaptive_threshold, binarize, median_smooth, read_curve, segments_from_mask

    probs, _ = read_curve(_existing(args.curve))
    smoothed = median_smooth(probs, args.smooth)
    mask = binarize(smoothed, adaptive_threshold(smoothed, args.threshold))
    spans = []
    if args.annotation:
        truth = targets_from_annotation(parse_annotation(_existing(args.annotation)), len(probs))
        spans = segments_from_mask(truth.astype(np.int8))
    plot_curve(probs, args.out, mask.threshold_used, spans, title=Path(args.curve).stem)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _postprocess_flags(p):
    p.add_argument("--smooth", choices=["median", "trimmed-mean"], default="median")
    p.add_argument("--threshold", choices=["literal", "midpoint"], default="literal")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="chorus-kit", description="Chorus detection from Mel spectrograms.")
    formats = ", ".join(f"{k} v{v}" for k, v in FORMAT_VERSIONS.items())
    parser.add_argument("--version", action="version", version=f"chorus-kit {__version__} ({formats})")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("features", help="WAV files to Mel feature files")
    p.add_argument("--in", dest="inputs", nargs="+", required=True, metavar="WAV")
    p.add_argument("--out", required=True, help="a .dcf path for one input, else a directory")
    p.add_argument("--log", action="store_true", help="store log(1 + magnitude)")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("synth", help="write a synthetic structured-song corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--songs", type=int, default=200)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--preset", choices=["paper", "small", "tiny"], default="paper")
    p.add_argument("--config", help="key = value model config (overrides --preset)")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--crop-frames", type=int, default=3096)
    p.add_argument("--validate-every", type=int, default=50)
    p.add_argument("--patience", type=int, default=500)
    p.add_argument("--max-iterations", type=int, default=20000)
    p.add_argument("--single-scale", action="store_true", help="ablate the multi-scale branches")
    p.add_argument("--disable-attention", action="store_true", help="ablate self-attention")
    p.add_argument("--resume", action="store_true", help="continue from OUT/last.dckp")
    p.add_argument("--no-plot", action="store_true", help="skip log.svg")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="probability curve and chorus segments for one song")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True, help="curve CSV")
    p.add_argument("--plot", help="also render the curve (.svg or .png)")
    _postprocess_flags(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="F1/AUC report over one manifest split")
    p.add_argument("--model")
    p.add_argument("--baseline", action="store_true", help="score the low-band energy curve instead")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--out", required=True, help="report TSV")
    p.add_argument("--plot-dir", help="write one curve figure per song here")
    p.add_argument("--jobs", type=int, default=1)
    _postprocess_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ssm", help="self-similarity matrix of an intermediate representation")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--stage", choices=["stem", "multiscale", "block1", "block2", "block3"], default="multiscale")
    p.add_argument("--distance", choices=["euclidean", "cosine"], default="euclidean")
    p.add_argument("--hop", type=int, default=43, help="average this many frames per row (1 = frame level)")
    p.add_argument("--out", required=True, help="matrix CSV")
    p.add_argument("--plot", help="also render the matrix")
    p.set_defaults(func=cmd_ssm)

    p = sub.add_parser("plot", help="render a curve CSV, optionally with ground truth")
    p.add_argument("--curve", required=True)
    p.add_argument("--annotation")
    p.add_argument("--out", required=True)
    _postprocess_flags(p)
    p.set_defaults(func=cmd_plot)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, OSError) as exc:
        if isinstance(exc, OSError) and exc.filename:
            print(f"error: {exc.filename}: {exc.strerror}", file=sys.stderr)
        else:
            print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ChorusKitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
