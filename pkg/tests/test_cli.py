import numpy as np
import pytest

from fldnet import cli, data
from fldnet.config import config_keys

SMALL = """seed=3
synth.count=3
synth.size=32
train.image_size=32
train.epochs=2
train.batch_size=2
encoder.widths=4,8,8,16
encoder.heads=1,1,1,2
model.head_width=8
"""


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(SMALL)
    return p


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.mark.parametrize("cmd", ["synth", "train", "eval", "infer", "gradcheck"])
def test_help_lists_every_key(cmd, capsys):
    with pytest.raises(SystemExit) as exc:
        run(cmd, "--help")
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for key in config_keys():
        assert key in out


def _pipeline(tmp_path, cfg, tag):
    d, ck, rep = tmp_path / f"data{tag}", tmp_path / f"m{tag}.ckpt", tmp_path / f"r{tag}.csv"
    assert run("synth", "--out", d, "--config", cfg) == 0
    assert run("train", "--data", d, "--config", cfg, "--out", ck) == 0
    assert run("eval", "--ckpt", ck, "--data", d, "--report", rep) == 0
    assert run("infer", "--ckpt", ck, "--image", d / "images" / "0000.ppm", "--out", tmp_path / f"p{tag}.pgm") == 0
    return d, ck, rep


def test_pipeline_outputs_and_idempotence(tmp_path, cfg, capsys):
    d1, ck1, rep1 = _pipeline(tmp_path, cfg, 1)
    d2, ck2, rep2 = _pipeline(tmp_path, cfg, 2)
    capsys.readouterr()
    for a, b in [(d1 / "images" / "0002.ppm", d2 / "images" / "0002.ppm"),
                 (d1 / "masks" / "0002.pgm", d2 / "masks" / "0002.pgm"),
                 (ck1, ck2), (rep1, rep2),
                 (tmp_path / "m1.loss.csv", tmp_path / "m2.loss.csv"),
                 (tmp_path / "m1.loss.png", tmp_path / "m2.loss.png"),
                 (tmp_path / "r1.png", tmp_path / "r2.png"),
                 (tmp_path / "p1.pgm", tmp_path / "p2.pgm")]:
        assert a.read_bytes() == b.read_bytes(), a.name
    log = (tmp_path / "m1.loss.csv").read_text().splitlines()
    assert log[0] == "step,epoch,lr,loss" and len(log) == 1 + 2 * 2
    report = rep1.read_text().splitlines()
    assert report[0] == "image,dice,iou,fbw,s,me,maxe,mae" and report[-1].startswith("mean,")
    assert (tmp_path / "r1.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    pred = data.read_pnm(tmp_path / "p1.pgm")
    assert pred.shape == (32, 32) and set(np.unique(pred)) <= {0, 255}


def test_resume_via_cli(tmp_path, cfg):
    d = tmp_path / "d"
    run("synth", "--out", d, "--config", cfg)
    assert run("train", "--data", d, "--config", cfg, "--out", tmp_path / "full.ckpt") == 0
    assert run("train", "--data", d, "--config", cfg, "--out", tmp_path / "half.ckpt", "--epochs", 1) == 0
    assert run("train", "--data", d, "--config", cfg, "--out", tmp_path / "res.ckpt",
               "--resume", tmp_path / "half.ckpt") == 0
    assert (tmp_path / "full.ckpt").read_bytes() == (tmp_path / "res.ckpt").read_bytes()
    assert (tmp_path / "full.loss.csv").read_text() == (tmp_path / "res.loss.csv").read_text()


def test_infer_keeps_input_extents(tmp_path, cfg):
    d = tmp_path / "d"
    run("synth", "--out", d, "--config", cfg)
    run("train", "--data", d, "--config", cfg, "--out", tmp_path / "m.ckpt", "--epochs", 1)
    img = np.random.default_rng(0).integers(0, 256, size=(64, 96, 3), dtype=np.uint8)
    data.write_ppm(tmp_path / "wide.ppm", img)
    assert run("infer", "--ckpt", tmp_path / "m.ckpt", "--image", tmp_path / "wide.ppm", "--out", tmp_path / "o.pgm") == 0
    assert data.read_pnm(tmp_path / "o.pgm").shape == (64, 96)


def _err(capsys):
    lines = capsys.readouterr().err.strip().splitlines()
    assert len(lines) == 1
    return lines[0]


def test_failures_exit_nonzero_with_one_line(tmp_path, cfg, capsys):
    noseed = tmp_path / "noseed.cfg"
    noseed.write_text("synth.count=1\n")
    assert run("synth", "--out", tmp_path / "x", "--config", noseed) == 2
    assert "seed" in _err(capsys)

    typo = tmp_path / "typo.cfg"
    typo.write_text("seed=1\ntrain.lrate=1\n")
    assert run("synth", "--out", tmp_path / "x", "--config", typo) == 2
    assert "train.lrate" in _err(capsys)

    assert run("eval", "--ckpt", tmp_path / "missing.ckpt", "--data", tmp_path, "--report", tmp_path / "r.csv") == 2
    assert "missing.ckpt" in _err(capsys)

    d = tmp_path / "d"
    run("synth", "--out", d, "--config", cfg)
    run("train", "--data", d, "--config", cfg, "--out", tmp_path / "m.ckpt", "--epochs", 1)
    capsys.readouterr()
    data.write_ppm(tmp_path / "odd.ppm", np.zeros((40, 40, 3), dtype=np.uint8))
    assert run("infer", "--ckpt", tmp_path / "m.ckpt", "--image", tmp_path / "odd.ppm", "--out", tmp_path / "o.pgm") == 2
    assert "multiple of 32" in _err(capsys)

    raw = (tmp_path / "m.ckpt").read_bytes()
    (tmp_path / "v2.ckpt").write_bytes(raw[:4] + b"\x02\x00\x00\x00" + raw[8:])
    assert run("infer", "--ckpt", tmp_path / "v2.ckpt", "--image", d / "images" / "0000.ppm",
               "--out", tmp_path / "o.pgm") == 2
    assert "version 2" in _err(capsys)


GRADCHECK = "seed=0\ngradcheck.max_coords=3\n"


def test_gradcheck_command(tmp_path, capsys):
    # default architecture; the full-strength run lives in the acceptance suite
    quick = tmp_path / "quick.cfg"
    quick.write_text(GRADCHECK)
    assert run("gradcheck", "--config", quick) == 0
    out = capsys.readouterr().out
    assert "full model" in out and out.strip().splitlines()[-1].startswith("PASS")
    strict = tmp_path / "strict.cfg"
    strict.write_text(GRADCHECK + "gradcheck.model_tol=1e-300\n")
    assert run("gradcheck", "--config", strict) == 1
    assert capsys.readouterr().out.strip().splitlines()[-1].startswith("FAIL")
