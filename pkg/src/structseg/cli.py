"""Command-line entry point.

Subcommands: train, evaluate, ablate, gradcheck, oracle, dump. Configs are
JSON files whose keys mirror TrainConfig; any field can be overridden with
a ``--key value`` flag. Unknown config keys are hard errors.

Exit codes: 0 success, 1 check failure, 2 usage/config error, 3 numeric
abort (non-finite loss or parameters).
"""

from __future__ import annotations

import argparse
import datetime
import json
import sys
from dataclasses import fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import tensor as tensor_mod
from .cutmix import generate_boxes, compose_image
from .synthdata import save_pgm, save_ppm
from .tensor import NonFiniteError, no_grad
from .trainer import (ConfigError, EMA_VARIANTS, LOSS_VARIANTS, StepRecord,
                      TrainConfig, Trainer, ablation_csv_rows, load_checkpoint,
                      run_ablation, save_checkpoint)
from .verification import (GRAD_TOLERANCE, ORACLE_TOLERANCE,
                           pair_reduction_report, run_gradcheck, run_oracle)

METRICS_HEADER = "step,lr,l_x,l_c,l_sc,l_tot"


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {s!r}")


def _parse_widths(s: str) -> tuple:
    return tuple(int(tok) for tok in s.split(",") if tok)


def _add_config_overrides(parser: argparse.ArgumentParser) -> None:
    for f in fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool":
            parser.add_argument(flag, dest=f.name, type=_parse_bool, default=None)
        elif f.type == "int":
            parser.add_argument(flag, dest=f.name, type=int, default=None)
        elif f.type == "float":
            parser.add_argument(flag, dest=f.name, type=float, default=None)
        elif f.name == "model_widths":
            parser.add_argument(flag, dest=f.name, type=_parse_widths, default=None)
        else:
            parser.add_argument(flag, dest=f.name, type=str, default=None)


def resolve_config(args: argparse.Namespace) -> TrainConfig:
    """Defaults, then the config file, then command-line overrides. A run
    manifest is accepted wherever a config is: its resolved config is used,
    which makes any run reproducible from its manifest alone."""
    base = {}
    if getattr(args, "config", None):
        with open(args.config) as f:
            base = json.load(f)
        if "config_hash" in base and "config" in base:
            base = base["config"]
    cfg = TrainConfig.from_dict(base)
    overrides = {}
    for f in fields(TrainConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            overrides[f.name] = v
    if overrides:
        cfg = TrainConfig.from_dict({**cfg.to_dict(), **overrides})
    return cfg


def _timestamp() -> str:
    return datetime.datetime.now().isoformat(timespec="seconds")


def _metrics_row(rec: StepRecord) -> str:
    vals = [repr(rec.lr)] + [repr(v) for v in rec.losses.csv_values()]
    return ",".join([str(rec.step)] + vals)


def _eval_row(step: int, variant: str, per_class, miou_val: float) -> str:
    return ",".join([str(step), variant] + [repr(v) for v in per_class] + [repr(miou_val)])


def _eval_header(num_classes: int) -> str:
    return "step,variant," + ",".join(f"iou_{c}" for c in range(num_classes)) + ",miou"


def cmd_train(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    out_dir = Path(args.out_dir or f"runs/train-seed{cfg.seed}")
    out_dir.mkdir(parents=True, exist_ok=True)
    started = _timestamp()

    trainer = Trainer(cfg)
    metrics_path = out_dir / "metrics.csv"
    eval_path = out_dir / "eval.csv"
    ckpt_path = out_dir / "checkpoint.bin"

    with open(metrics_path, "w") as mf, open(eval_path, "w") as ef:
        mf.write(METRICS_HEADER + "\n")
        ef.write(_eval_header(cfg.num_classes) + "\n")

        def on_step(rec: StepRecord) -> None:
            mf.write(_metrics_row(rec) + "\n")
            step_no = rec.step + 1
            if cfg.eval_every and step_no % cfg.eval_every == 0 and step_no < trainer.max_steps:
                per_class, m = trainer.evaluate()
                ef.write(_eval_row(rec.step, "ema" if cfg.ema_eval else "student",
                                   per_class, m) + "\n")
            if cfg.checkpoint_every and step_no % cfg.checkpoint_every == 0:
                save_checkpoint(out_dir / f"checkpoint-step{step_no}.bin", trainer)

        trainer.run(on_step=on_step)
        per_class, m = trainer.evaluate()
        ef.write(_eval_row(trainer.step_index, "ema" if cfg.ema_eval else "student",
                           per_class, m) + "\n")

    save_checkpoint(ckpt_path, trainer)
    manifest = {
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "started": started,
        "finished": _timestamp(),
        "outputs": {
            "metrics": metrics_path.name,
            "eval": eval_path.name,
            "checkpoint": ckpt_path.name,
        },
        "final_miou": m,
    }
    with open(out_dir / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    print(f"final mIoU {m:.4f} (run dir: {out_dir})")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    net, ema_state, meta = load_checkpoint(args.checkpoint)
    cfg = TrainConfig.from_dict(meta["config"])
    overrides = {f.name: getattr(args, f.name) for f in fields(TrainConfig)
                 if getattr(args, f.name, None) is not None}
    if overrides:
        cfg = TrainConfig.from_dict({**cfg.to_dict(), **overrides})
    trainer = Trainer(cfg)
    trainer.student = net
    trainer.ema = ema_state
    per_class, m = trainer.evaluate()
    print(_eval_header(cfg.num_classes))
    print(_eval_row(int(meta.get("step", 0)), "ema" if cfg.ema_eval else "student",
                    per_class, m))
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    seeds = [int(s) for s in args.seeds.split(",")]
    variants = LOSS_VARIANTS if args.grid == "loss" else EMA_VARIANTS
    rows = run_ablation(cfg, variants, seeds)
    lines = ablation_csv_rows(rows)
    out_dir = Path(args.out_dir or "runs")
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / f"ablation-{args.grid}.csv"
    out_path.write_text("\n".join(lines) + "\n")
    for line in lines:
        print(line)
    print(f"wrote {out_path}")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    if args.corrupt_op:
        tensor_mod.set_corrupt_backward(args.corrupt_op)
    try:
        report = run_gradcheck(n_seeds=args.seeds_count, seed0=args.seed or 0)
    finally:
        tensor_mod.set_corrupt_backward(None)
    ok = True
    for name, err in report.items():
        status = "PASS" if err < GRAD_TOLERANCE else "FAIL"
        ok = ok and err < GRAD_TOLERANCE
        print(f"{name}: max relative error {err:.3e} ({status}, tolerance {GRAD_TOLERANCE})")
    return 0 if ok else 1


def cmd_oracle(args: argparse.Namespace) -> int:
    deviation = run_oracle(n_seeds=args.seeds_count, seed0=args.seed or 0)
    status = "PASS" if deviation < ORACLE_TOLERANCE else "FAIL"
    print(f"box-restricted vs full-enumeration pairwise loss: max absolute "
          f"deviation {deviation:.3e} ({status}, tolerance {ORACLE_TOLERANCE})")
    for line in pair_reduction_report():
        print(line)
    return 0 if deviation < ORACLE_TOLERANCE else 1


def cmd_dump(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    out_dir = Path(args.out_dir or "dumps")
    out_dir.mkdir(parents=True, exist_ok=True)
    ds = cfg.make_dataset()
    n = min(args.count, cfg.n_labeled)
    for i in range(n):
        s = ds.labeled(i)
        save_ppm(out_dir / f"labeled{i}.ppm", s.image)
        save_pgm(out_dir / f"labeled{i}-labels.pgm", s.labels, cfg.num_classes)
    rng = np.random.default_rng(cfg.seed)
    boxset = generate_boxes(rng, cfg.height, cfg.width, cfg.num_boxes,
                            n_box=cfg.num_active_boxes)
    ua = ds.unlabeled_image(0)
    ub = ds.unlabeled_image(1)
    save_ppm(out_dir / "cutmix-composed.ppm", compose_image(ua, ub, boxset))
    save_pgm(out_dir / "cutmix-mask.pgm", boxset.mask.astype(np.int64), 2)
    (out_dir / "cutmix-boxes.json").write_text(boxset.to_json())
    if args.checkpoint:
        net, ema_state, meta = load_checkpoint(args.checkpoint)
        with no_grad():
            for i in range(min(args.count, cfg.n_validation)):
                scene = ds.validation(i)
                pred = np.argmax(net.forward(scene.image).data, axis=2)
                save_pgm(out_dir / f"val{i}-pred.pgm", pred, cfg.num_classes)
                save_pgm(out_dir / f"val{i}-truth.pgm", scene.labels, cfg.num_classes)
    print(f"wrote dumps to {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="structseg",
        description="Semi-supervised segmentation with CutMix-restricted "
                    "structured consistency at desk scale.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out-dir", help="output directory")
        _add_config_overrides(p)

    p_train = sub.add_parser("train", help="run a training job")
    common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="score a checkpoint on validation data")
    common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.set_defaults(func=cmd_evaluate)

    p_abl = sub.add_parser("ablate", help="run an ablation grid")
    common(p_abl)
    p_abl.add_argument("--grid", choices=("loss", "ema"), default="loss")
    p_abl.add_argument("--seeds", default="0,1,2", help="comma-separated run seeds")
    p_abl.set_defaults(func=cmd_ablate)

    p_gc = sub.add_parser("gradcheck", help="finite-difference check of all losses")
    common(p_gc)
    p_gc.add_argument("--seeds-count", type=int, default=20)
    p_gc.add_argument("--corrupt-op", help="test hook: corrupt one op's backward rule")
    p_gc.set_defaults(func=cmd_gradcheck)

    p_or = sub.add_parser("oracle", help="compare fast pairwise loss to enumeration")
    common(p_or)
    p_or.add_argument("--seeds-count", type=int, default=50)
    p_or.set_defaults(func=cmd_oracle)

    p_dump = sub.add_parser("dump", help="write PPM/PGM artifact dumps")
    common(p_dump)
    p_dump.add_argument("--count", type=int, default=4)
    p_dump.add_argument("--checkpoint", help="also dump predicted masks")
    p_dump.set_defaults(func=cmd_dump)

    return parser


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except NonFiniteError as e:
        print(f"numeric abort: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
