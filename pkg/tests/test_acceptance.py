"""Acceptance checks, one PASS/FAIL line each, listed in the terminal summary.

The learning benchmark trains two small models for up to 5000 iterations and
is marked ``slow``; deselect it with ``-m "not slow"``.
"""

import math
import time
from fractions import Fraction

import numpy as np
import pytest
from test_autodiff import OP_CASES
from test_metrics import pairs_auc
from test_model import naive_attention

from chorus_kit.autodiff import AdamState, Tensor, grad_check, no_grad, ops, precision
from chorus_kit.cli import run as cli
from chorus_kit.config import preset
from chorus_kit.dataset import (
    ChorusAnnotation,
    Segment,
    format_annotation,
    load_split,
    low_band_energy_curve,
    parse_annotation,
    write_annotation,
    write_corpus,
)
from chorus_kit.features import MelSpectrogram, read_features, write_features
from chorus_kit.metrics import auc
from chorus_kit.model import ChorusNet
from chorus_kit.multiscale import MultiScaleNet
from chorus_kit.postprocess import adaptive_threshold, binarize, median_smooth, read_curve, write_curve
from chorus_kit.saconv import SAConvBlock, SelfAttention
from chorus_kit.trainer import TrainConfig, TrainState, evaluate, fit, next_batch, predict, train_step


VERDICTS = []


def verdict(name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    VERDICTS.append(line)
    print("\n" + line)
    assert ok, detail


def test_gradient_correctness():
    started = time.perf_counter()
    worst = {}
    for name, (fn, params) in OP_CASES.items():
        worst[name] = grad_check(fn, params, eps=1e-6, tolerance=1e-5).max_error
    with precision(np.float64):
        for ablate in (False, True):
            cfg = preset("tiny", d_x=4, d_s=4, disable_attention=ablate)
            block = SAConvBlock(cfg, np.random.default_rng(0))
            x = Tensor(np.random.default_rng(1).standard_normal((6, 4)), requires_grad=True)
            report = grad_check(lambda: ops.sum(ops.sigmoid(block(x))), dict(block.parameters(), x=x))
            worst["saconv_block" + ("_no_attention" if ablate else "")] = report.max_error
        cfg = preset("tiny")
        net = MultiScaleNet(cfg, np.random.default_rng(0))
        x = Tensor(np.random.default_rng(1).random((2, 20, cfg.stem_dim)))
        target = np.random.default_rng(2).random((2, 20, cfg.d_x))
        worst["multiscale_tiny"] = grad_check(lambda: ops.mse_loss(net(x), target), net.parameters()).max_error
    seconds = time.perf_counter() - started
    top = max(worst, key=worst.get)
    ok = all(e <= 1e-5 for e in worst.values()) and seconds < 120
    verdict("gradient correctness", ok,
            f"{len(worst)} checks, max rel err {worst[top]:.2e} ({top}) <= 1e-5, {seconds:.1f} s < 120 s")


def test_attention_oracle():
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        t, d_x, d_s = int(rng.integers(1, 17)), int(rng.integers(1, 9)), int(rng.integers(1, 9))
        with precision(np.float64):
            att = SelfAttention(rng, d_x, d_s)
            x = rng.standard_normal((t, d_x))
            with no_grad():
                got = att(Tensor(x)).data
        want = naive_attention(x, att.wq.w.data, att.wk.w.data, att.wv.w.data)
        worst = max(worst, float(np.abs(got - want).max()))
    verdict("attention oracle", worst <= 1e-6, f"50 instances, max abs diff {worst:.1e} <= 1e-6")


def test_auc_oracle():
    mismatches = 0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 21))
        truth = rng.integers(0, 2, n)
        truth[0], truth[1] = 0, 1
        scores = rng.integers(0, 6, n) / 5.0
        if auc(scores, truth) != float(pairs_auc(scores.tolist(), truth.tolist())):
            mismatches += 1
    verdict("AUC oracle", mismatches == 0, f"50 instances with ties, {mismatches} differ from pair enumeration")


def test_postprocess_worked_examples():
    impulse = median_smooth([0, 0, 0, 0, 1, 0, 0, 0, 0]).tolist() == [0] * 9
    y8 = np.array([0.1, 0.9, 0.2, 0.8, 0.3, 0.7, 0.4, 0.6])
    edge = np.array_equal(median_smooth(y8), y8)
    t = adaptive_threshold([0.1, 0.9, 0.5])
    rule = math.isclose(t, 0.4, abs_tol=1e-15) and binarize([0.1, 0.9, 0.5], t).values.tolist() == [0, 1, 1]
    verdict("smoothing and threshold examples", impulse and edge and rule,
            f"impulse rejected {impulse}, n=8 unchanged {edge}, t([0.1,0.9,0.5]) = {t!r}")


def test_shape_laws():
    rng = np.random.default_rng(0)
    small = ChorusNet(preset("small"), 0)
    lengths = [43, 44, 85, 86, 129] + [int(t) for t in rng.integers(43, 3000, 95)]
    bad = []
    for t in lengths:
        mel = rng.random((t, 128), dtype=np.float32)
        if predict(small, mel).shape != (t // 43,):
            bad.append(("seconds", t))
    paper = preset("paper")
    ms = MultiScaleNet(paper, np.random.default_rng(1))
    for t in rng.integers(16, 400, 100):
        with no_grad():
            out = ms(Tensor(rng.random((int(t), paper.stem_dim), dtype=np.float32)))
        if out.dims != (int(t), 256):
            bad.append(("multiscale", int(t)))
    full = ChorusNet(paper, 0)
    for t in (43, 97, 301):
        if predict(full, rng.random((t, 128), dtype=np.float32)).shape != (t // 43,):
            bad.append(("paper model", t))
    verdict("shape laws", not bad,
            f"100 lengths give floor(T/43) seconds, 100 lengths give T x 256 multiscale output; failures {bad}")


def test_overfit_sanity():
    songs = load_split(_corpus(), "train")
    cfg = TrainConfig(crop_frames=1032, lr=1e-4, model=preset("small"))
    features, targets = next_batch(songs, TrainState(rng=np.random.default_rng(cfg.seed + 1)), cfg)
    model = ChorusNet(cfg.model, np.random.default_rng(cfg.seed))
    opt = AdamState()
    started = time.perf_counter()
    for i in range(1, 501):
        loss = train_step(model, features, targets, opt, cfg.lr, i)
    seconds = time.perf_counter() - started
    verdict("overfit sanity", loss < 0.01 and seconds < 300,
            f"500 steps, final MSE {loss:.5f} < 0.01, {seconds:.0f} s < 300 s")


def test_ablation_parameter_parity():
    lines, ok = [], True
    for name in ("paper", "small", "tiny"):
        full = ChorusNet(preset(name), 0).n_params()
        for flag in ("single_scale", "disable_attention"):
            n = ChorusNet(preset(name, **{flag: True}), 0).n_params()
            ok &= abs(n - full) <= 0.1 * full
            lines.append(f"{name}/{flag} {n / full - 1:+.1%}")
        if name == "paper":
            ok &= 4.0e6 <= full <= 6.0e6
            lines.append(f"paper total {full:,}")
    verdict("ablation parameter parity", ok, ", ".join(lines))


def test_reproducibility(mini_corpus, tmp_path):
    outputs = []
    for run_name in ("a", "b"):
        out = tmp_path / run_name
        argv = ["train", "--manifest", str(mini_corpus), "--preset", "tiny", "--out", str(out), "--crop-frames",
                "172", "--batch-size", "2", "--max-iterations", "6", "--validate-every", "2", "--lr", "1e-3",
                "--no-plot"]
        assert cli(argv) == 0
        assert cli(["eval", "--model", str(out / "best.dckp"), "--manifest", str(mini_corpus), "--split", "train",
                    "--out", str(out / "report.tsv")]) == 0
        outputs.append([(out / f).read_bytes() for f in ("best.dckp", "last.dckp", "report.tsv")])
    same = outputs[0] == outputs[1]
    verdict("reproducibility", same, "two seeded runs: best/last checkpoints and eval report byte-identical")


def test_round_trips(tmp_path):
    rng = np.random.default_rng(0)
    mel = MelSpectrogram(rng.random((100, 128), dtype=np.float32), Fraction(22050, 512))
    write_features(mel, tmp_path / "a.dcf")
    back = read_features(tmp_path / "a.dcf")
    feats = back.data.tobytes() == mel.data.tobytes() and back.fps == mel.fps

    model = ChorusNet(preset("tiny"), 0)
    model.save(tmp_path / "m.dckp")
    loaded, _ = ChorusNet.load(tmp_path / "m.dckp")
    ckpt = all(np.array_equal(p.data, loaded.parameters()[k].data) for k, p in model.parameters().items())
    ckpt &= loaded.cfg == model.cfg

    ann = ChorusAnnotation([Segment(0.0, 12.5, "intro"), Segment(12.5, 30.25, "chorus")], 30.25)
    write_annotation(ann, tmp_path / "a.tsv")
    annot = format_annotation(parse_annotation(tmp_path / "a.tsv")) == format_annotation(ann)
    annot &= parse_annotation(tmp_path / "a.tsv").segments == ann.segments

    probs = rng.random(50)
    mask = binarize(probs, 0.5)
    write_curve(tmp_path / "c.csv", probs, mask)
    p2, b2 = read_curve(tmp_path / "c.csv")
    curve = p2.tobytes() == probs.tobytes() and np.array_equal(b2, mask.values)
    verdict("round trips", feats and ckpt and annot and curve,
            f"features {feats}, checkpoint {ckpt}, annotation {annot}, curve CSV {curve}")


# -- learning benchmark ----------------------------------------------------------

_CORPUS = {}


def _corpus():
    if "path" not in _CORPUS:
        import tempfile

        _CORPUS["path"] = write_corpus(tempfile.mkdtemp(prefix="chorus-corpus-"), n_songs=200, seed=7)
    return _CORPUS["path"]


def _desk_run(out_dir, **model_flags):
    cfg = TrainConfig(crop_frames=1032, lr=1e-3, model=preset("small", **model_flags), max_iterations=5000)
    started = time.perf_counter()
    best = fit(cfg, _corpus(), out_dir)
    minutes = (time.perf_counter() - started) / 60
    model, _ = ChorusNet.load(best)
    test = load_split(_corpus(), "test")
    report = evaluate(lambda ex: predict(model, ex.features), test)
    return report, minutes


@pytest.mark.slow
def test_desk_scale_learning(tmp_path):
    test = load_split(_corpus(), "test")
    base = evaluate(lambda ex: low_band_energy_curve(ex.features), test)
    full, full_min = _desk_run(tmp_path / "full")
    ablated, ablated_min = _desk_run(tmp_path / "no-attention", disable_attention=True)
    ok = (full.f1 >= 0.8 and full.auc >= 0.9 and full.f1 > base.f1 and ablated.f1 > base.f1
          and full_min < 30 and ablated_min < 30)
    verdict("desk-scale learning", ok,
            f"test F1/AUC full {full.f1:.4f}/{full.auc:.4f} ({full_min:.1f} min), "
            f"no-attention {ablated.f1:.4f}/{ablated.auc:.4f} ({ablated_min:.1f} min), "
            f"low-band baseline {base.f1:.4f}/{base.auc:.4f}; "
            f"full vs no-attention F1 {full.f1 - ablated.f1:+.4f}")
