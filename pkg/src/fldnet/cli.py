"""Command-line entry point: ``fldnet {synth,train,eval,infer,gradcheck}``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time

from . import data, gradcheck, metrics, plots
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, config_keys, load_config
from .train import Trainer, TrainingError, infer

log = logging.getLogger("fldnet")


def _keys_epilog() -> str:
    return "accepted config keys (key=value, '#' comments):\n  " + "\n  ".join(config_keys())


def _load(path):
    cfg = load_config(path)
    cfg.require_seed()
    log.info("resolved config:\n%s", cfg.resolved().rstrip())
    return cfg


def cmd_synth(args) -> int:
    cfg = _load(args.config)
    names = data.save_dataset(data.synth_dataset(cfg.synth), args.out)
    print(f"wrote {len(names)} samples to {args.out}")
    return 0


def write_loss_log(history, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,epoch,lr,loss\n")
        for r in history:
            fh.write(f"{r.step},{r.epoch},{r.lr!r},{r.loss!r}\n")


def cmd_train(args) -> int:
    cfg = _load(args.config)
    _, samples = data.load_dataset(args.data)
    if args.resume:
        trainer = load_checkpoint(args.resume)
        log.info("resuming from %s at epoch %d", args.resume, trainer.epoch)
    else:
        trainer = Trainer(cfg.train, cfg.model)
    every = trainer.config.checkpoint_every

    def on_epoch(t):
        if every and t.epoch % every == 0:
            save_checkpoint(args.out, t)

    start = time.perf_counter()
    trainer.fit(samples, until_epoch=args.epochs, on_epoch=on_epoch)
    save_checkpoint(args.out, trainer)
    log_path = args.log or os.path.splitext(args.out)[0] + ".loss.csv"
    write_loss_log(trainer.history, log_path)
    plots.plot_loss(trainer.history, os.path.splitext(log_path)[0] + ".png")
    last = trainer.history[-1].loss if trainer.history else float("nan")
    print(f"trained {trainer.step} steps ({trainer.epoch} epochs) in "
          f"{time.perf_counter() - start:.1f}s, final loss {last:.5f}; checkpoint {args.out}")
    return 0


def cmd_eval(args) -> int:
    trainer = load_checkpoint(args.ckpt)
    names, samples = data.load_dataset(args.data)
    scores = []
    for image, _ in samples:
        _, s = infer(trainer.model, image, args.threshold)
        scores.append(s[0])
    report = metrics.evaluate(scores, [m[0] for _, m in samples], names, args.threshold)
    with open(args.report, "w", encoding="utf-8") as fh:
        fh.write(report.to_csv())
    plots.plot_report(report, os.path.splitext(args.report)[0] + ".png")
    m = report.means
    print(" ".join(f"{k}={m[k]:.4f}" for k in metrics.FIELDS))
    return 0


def cmd_infer(args) -> int:
    trainer = load_checkpoint(args.ckpt)
    image = data.load_image(args.image)
    mask, _ = infer(trainer.model, image, args.threshold)
    data.write_pgm(args.out, mask[0] * 255)
    print(f"wrote {args.out} ({mask.shape[-2]}x{mask.shape[-1]})")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = _load(args.config)
    gc = cfg.section("gradcheck")
    start = time.perf_counter()
    reports = gradcheck.check_ops(gc.step, gc.op_tol, seed=cfg.seed)
    reports.append(gradcheck.check_model(gc.image_size, gc.step, gc.model_tol, gc.max_coords,
                                         seed=cfg.seed, config=cfg.model))
    for r in reports:
        print(r.summary())
    ok = all(r.passed for r in reports)
    print(f"{'PASS' if ok else 'FAIL'}: {sum(r.passed for r in reports)}/{len(reports)} checks "
          f"in {time.perf_counter() - start:.1f}s")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fldnet", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.RawDescriptionHelpFormatter

    p = sub.add_parser("synth", help="generate a synthetic dataset", epilog=_keys_epilog(), formatter_class=fmt)
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--config", required=True, metavar="FILE")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train and write a checkpoint plus loss log",
                       epilog=_keys_epilog(), formatter_class=fmt)
    p.add_argument("--data", required=True, metavar="DIR")
    p.add_argument("--config", required=True, metavar="FILE")
    p.add_argument("--out", required=True, metavar="CKPT")
    p.add_argument("--log", metavar="CSV", help="loss log path (default: CKPT stem + .loss.csv)")
    p.add_argument("--resume", metavar="CKPT", help="continue from a saved checkpoint")
    p.add_argument("--epochs", type=int, help="stop after this epoch (default: train.epochs)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset", epilog=_keys_epilog(), formatter_class=fmt)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, metavar="DIR")
    p.add_argument("--report", required=True, metavar="FILE")
    p.add_argument("--threshold", type=float, default=0.5, help="binarisation threshold for Dice/IoU")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="predict a mask for one image", epilog=_keys_epilog(), formatter_class=fmt)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True, metavar="FILE")
    p.add_argument("--out", required=True, metavar="FILE")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("gradcheck", help="finite-difference checks for every op and the model",
                       epilog=_keys_epilog(), formatter_class=fmt)
    p.add_argument("--config", required=True, metavar="FILE")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, ConfigError, CheckpointError, TrainingError) as exc:
        print(f"fldnet {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
