"""Acceptance criteria, one test each, each printing a single PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``.
"""
import csv
import math
import pathlib
import time

import numpy as np
import pytest

import oracles
from fldnet import cli, metrics
from fldnet import functional as F
from fldnet.data import AugmentConfig, adjust_brightness, augment
from fldnet.losses import supervised_loss, total_loss, wbce, weight_map, wiou
from fldnet.model import FLDNet, LCMConfig, LocalContext, foreground_split
from fldnet.tensor import Tensor, precision
from fldnet.train import TrainConfig, lr_schedule

ROOT = pathlib.Path(__file__).resolve().parent.parent
OVERFIT_CFG = ROOT / "configs" / "overfit.cfg"


@pytest.fixture
def verdict(capsys):
    def emit(name, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        return ok
    return emit


# ------------------------------------------------------------ gradient checks

@pytest.mark.slow
def test_gradient_integrity(tmp_path, capsys, verdict):
    cfg = tmp_path / "gc.cfg"
    cfg.write_text("seed=0\ngradcheck.image_size=32\ngradcheck.op_tol=1e-5\ngradcheck.model_tol=1e-4\n")
    start = time.perf_counter()
    code = cli.main(["gradcheck", "--config", str(cfg)])
    elapsed = time.perf_counter() - start
    lines = capsys.readouterr().out.strip().splitlines()
    failed = [ln for ln in lines[:-1] if ln.startswith("FAIL")]
    model_line = next(ln for ln in lines if "full model" in ln)
    ok = code == 0 and not failed and elapsed < 120
    verdict("gradient integrity", ok,
            f"{len(lines) - 1} checks, {len(failed)} failed; {model_line.split(': ', 1)[1]}; {elapsed:.0f}s")
    assert ok, failed or lines[-1]


# ------------------------------------------------------------ model identities

def test_model_identities(verdict):
    rng = np.random.default_rng(0)
    notes, ok = [], True

    # zero input absorbs any gate
    lcm = LocalContext(16, LCMConfig(), rng)
    for p in lcm.parameters():
        p.data[...] = rng.normal(size=p.shape) * 5
    zero = lcm(Tensor(np.zeros((2, 16, 8, 8)))).data
    ok &= not zero.any()
    notes.append(f"zero-gate max |Y| {np.abs(zero).max():.1e}")

    model = FLDNet(rng=np.random.default_rng(1))
    fam = model.fam
    high = Tensor(rng.normal(size=(2, 32, 4, 4)))
    coarse = Tensor(rng.normal(size=(2, 1, 2, 2)) * 4)
    fg, bg = foreground_split(coarse, 8, 8)
    split_err = np.abs((fg + bg).data - 1).max()
    ok &= split_err == 0
    notes.append(f"max |Mf+Mb-1| {split_err:.1e}")

    fam.alpha.data[...] = 0
    fam.beta.data[...] = 0
    up = F.bilinear_upsample(high, 8, 8)
    plain = fam.refine_out(F.gelu(fam.refine_conv(up))).data
    degenerate = np.abs(fam.refine(high, fg, bg).data - plain).max()
    ok &= degenerate == 0
    notes.append(f"alpha=beta=0 diff {degenerate:.1e}")

    with precision(64):
        g = np.zeros((1, 1, 32, 32))
        g[0, 0, 8:20, 10:24] = 1
        gt = Tensor(g)
        s3, s4 = Tensor(rng.normal(size=g.shape)), Tensor(rng.normal(size=g.shape))
        lhs = total_loss(gt, s3, s4).item()
        rhs = 2 * supervised_loss(gt, s3).item() + supervised_loss(gt, s4).item()
    ok &= abs(lhs - rhs) <= 1e-6
    notes.append(f"|total - (2 L3 + L4)| {abs(lhs - rhs):.1e}")
    verdict("model identities", ok, "; ".join(notes))
    assert ok


# ----------------------------------------------------------------- oracles

def test_loss_formula_oracles(verdict):
    worst = 0.0
    with precision(64):
        for seed in range(24):
            rng = np.random.default_rng(seed)
            g = (rng.uniform(size=(8, 8)) < rng.uniform(0.1, 0.9)).astype(np.float64)
            z = rng.normal(0, 3, size=(8, 8))
            gt, logits = Tensor(g[None, None]), Tensor(z[None, None])
            w_ref = oracles.weight_map(g)
            w = weight_map(gt)
            worst = max(worst,
                        np.abs(w.data[0, 0] - w_ref).max(),
                        abs(wbce(logits, gt, w).item() - oracles.wbce(z, g, w_ref)),
                        abs(wiou(logits, gt, w).item() - oracles.wiou(z, g, w_ref)))
    ok = worst <= 1e-6
    verdict("loss-formula oracles", ok, f"24 fixtures, worst abs diff {worst:.2e} (tol 1e-6)")
    assert ok


def _metric_pair(seed):
    rng = np.random.default_rng(1000 + seed)
    yy, xx = np.mgrid[0:16, 0:16]
    cy, cx = rng.uniform(2, 14, 2)
    g = ((yy - cy) ** 2 + (xx - cx) ** 2 <= rng.uniform(2, 6) ** 2).astype(np.uint8)
    if seed % 3 == 0:
        g |= (rng.uniform(size=g.shape) < 0.08).astype(np.uint8)
    s = rng.uniform(size=g.shape) if seed % 2 else np.clip(g + rng.normal(0, 0.3, g.shape), 0, 1)
    return s, g


def _metric_diffs(s, g):
    me, maxe = metrics.e_measure(s, g)
    ome, omax = oracles.e_measure(s, g)
    return {
        "dice": abs(metrics.dice(s, g) - oracles.dice(s, g)),
        "iou": abs(metrics.iou(s, g) - oracles.iou(s, g)),
        "fbw": abs(metrics.weighted_fmeasure(s, g) - oracles.fbw(s, g)),
        "s": abs(metrics.s_measure(s, g) - oracles.s_measure(s, g)),
        "me": abs(me - ome),
        "maxe": abs(maxe - omax),
        "mae": abs(metrics.mae(s, g) - oracles.mae(s, g)),
    }


@pytest.mark.filterwarnings("ignore::fldnet.metrics.EmptyMaskWarning")
def test_metric_oracles(verdict):
    worst = dict.fromkeys(metrics.FIELDS, 0.0)
    for seed in range(100):
        for k, v in _metric_diffs(*_metric_pair(seed)).items():
            worst[k] = max(worst[k], v)
    # degenerate masks go through the fallback branches
    rng = np.random.default_rng(7)
    degenerate = [(rng.uniform(size=(16, 16)), np.zeros((16, 16), np.uint8)),
                  (np.zeros((16, 16)), np.zeros((16, 16), np.uint8)),
                  (rng.uniform(size=(16, 16)), np.ones((16, 16), np.uint8)),
                  (np.ones((16, 16)), np.ones((16, 16), np.uint8))]
    for s, g in degenerate:
        for k, v in _metric_diffs(s, g).items():
            worst[k] = max(worst[k], v)
    fallback_ok = (metrics.s_measure(np.zeros((16, 16)), degenerate[1][1]) == 1.0
                   and metrics.weighted_fmeasure(*degenerate[0]) == 0.0
                   and metrics.e_measure(*degenerate[3]) == (1.0, 1.0))
    ok = max(worst.values()) <= 1e-6 and fallback_ok
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    verdict("metric oracles", ok, f"100 pairs + 4 degenerate, worst diffs: {detail}")
    assert ok


# ------------------------------------------------------------------ overfit

def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.mark.slow
def test_overfit_convergence(tmp_path, capsys, verdict):
    data, ckpt, report = tmp_path / "data", tmp_path / "overfit.ckpt", tmp_path / "report.csv"
    start = time.perf_counter()
    assert cli.main(["synth", "--out", str(data), "--config", str(OVERFIT_CFG)]) == 0
    assert cli.main(["train", "--data", str(data), "--config", str(OVERFIT_CFG), "--out", str(ckpt)]) == 0
    assert cli.main(["eval", "--ckpt", str(ckpt), "--data", str(data), "--report", str(report)]) == 0
    elapsed = time.perf_counter() - start
    capsys.readouterr()

    log = _read_csv(tmp_path / "overfit.loss.csv")
    first, last = float(log[0]["loss"]), float(log[-1]["loss"])
    drop = 1 - last / first
    mdice = float(_read_csv(report)[-1]["dice"])
    checks = {"steps<=300": len(log) <= 300, "mDice>=0.95": mdice >= 0.95,
              "loss drop>=90%": drop >= 0.90, "runtime<5min": elapsed < 300}
    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    verdict("overfit convergence", ok,
            f"{len(log)} steps, mDice {mdice:.4f}, loss {first:.3f} -> {last:.3f} "
            f"({100 * drop:.1f}% drop), {elapsed:.0f}s" + (f"; unmet: {', '.join(failed)}" if failed else ""))
    assert ok, f"unmet: {failed}"


# ------------------------------------------------------------------ protocol

def test_protocol_fidelity(verdict):
    cfg = TrainConfig()
    rates = [lr_schedule(e, cfg) for e in (0, 49, 50, 99, 100)]
    sched_ok = (rates[0] == rates[1] == 1e-4 and math.isclose(rates[2], 1e-5, rel_tol=1e-12)
                and rates[3] == rates[2] and math.isclose(rates[4], 1e-6, rel_tol=1e-12))
    rng = np.random.default_rng(0)
    image = rng.uniform(size=(3, 16, 16))
    mask = (rng.uniform(size=(1, 16, 16)) < 0.3).astype(np.float64)
    forced = AugmentConfig(hflip=1.0, vflip=1.0, brightness_lo=1.0, brightness_hi=1.0)
    i2, m2 = augment(*augment(image, mask, forced, rng), forced, rng)
    flip_ok = np.array_equal(i2, image) and np.array_equal(m2, mask)
    clamp_ok = adjust_brightness(np.array([0.9]), 1.3)[0] == 1.0
    ok = sched_ok and flip_ok and clamp_ok
    verdict("protocol fidelity", ok,
            f"lr at epochs 0/50/100 = {rates[0]:.0e}/{rates[2]:.0e}/{rates[4]:.0e}; "
            f"double flip identity {flip_ok}; 0.9*1.3 -> {adjust_brightness(np.array([0.9]), 1.3)[0]}")
    assert ok


# ------------------------------------------------------------ reproducibility

def test_reproducibility(tmp_path, capsys, verdict):
    cfg = tmp_path / "repro.cfg"
    cfg.write_text("seed=5\nsynth.count=4\ntrain.epochs=4\ntrain.batch_size=2\n")
    data = tmp_path / "data"
    assert cli.main(["synth", "--out", str(data), "--config", str(cfg)]) == 0

    def train(name, *extra):
        argv = ["train", "--data", str(data), "--config", str(cfg), "--out", str(tmp_path / f"{name}.ckpt")]
        assert cli.main(argv + [str(a) for a in extra]) == 0
        return (tmp_path / f"{name}.ckpt").read_bytes(), (tmp_path / f"{name}.loss.csv").read_bytes()

    a, b = train("a"), train("b")
    train("half", "--epochs", 2)
    resumed = train("resumed", "--resume", tmp_path / "half.ckpt")
    capsys.readouterr()
    same_runs = a == b
    same_resume = resumed == a
    ok = same_runs and same_resume
    verdict("reproducibility", ok,
            f"repeat run identical ckpt+log {same_runs}; resume identical ckpt+log {same_resume}")
    assert ok
