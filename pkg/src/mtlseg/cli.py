"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data/format/config error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .dataio import load_dataset, read_ppm, write_pgm
from .decoder import export_attention
from .encoder import AttentionCapture
from .errors import ConfigError, DimensionError, FormatError, MtlsegError, NumericError
from .metrics import evaluate_dataset
from .synth import generate_dataset
from .tiling import infer_full, labels_to_pgm_values
from .train import TrainConfig, ablate, build_model, load_train_config, train


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="mtlseg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--kind", choices=("crop", "leaf"), required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--iterations", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--encoder")
    p.add_argument("--channels", type=int)
    p.add_argument("--no-cross", action="store_true", help="drop cross-task attention")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    _add_model_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=("direct", "tiled"), default="direct")
    p.add_argument("--patch", type=int, default=None)
    p.add_argument("--distance", type=float, default=3.0)
    p.add_argument("--out", help="also write the report here")
    p.add_argument("--tsv", action="store_true", help="emit a tab-separated row")

    p = sub.add_parser("infer-tile", help="tiled inference over one image")
    _add_model_flags(p)
    p.add_argument("--image", required=True)
    p.add_argument("--patch", type=int, required=True)
    p.add_argument("--out", required=True, help="merged label PGM")
    p.add_argument("--skeleton-prefix", help="write per-class skeleton PGMs with this prefix")
    p.add_argument("--tasks", type=int, default=2)

    p = sub.add_parser("attn-dump", help="export one pixel's cross-task attention as PGM")
    _add_model_flags(p)
    p.add_argument("--image", required=True)
    p.add_argument("--task", type=int, required=True, help="query branch, 1-based")
    p.add_argument("--source", type=int, default=None, help="key/value branch, 1-based")
    p.add_argument("--pixel", required=True, help="row,col on the 1/4-scale branch grid")
    p.add_argument("--out", required=True)
    p.add_argument("--tasks", type=int, default=2)

    p = sub.add_parser("gradcheck", help="finite-difference check of ops and the full model")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("ablate", help="compare the cross-task decoder against independent branches")
    p.add_argument("--data", required=True)
    p.add_argument("--val-data")
    p.add_argument("--seeds", default="0,1,2", help="comma-separated")
    p.add_argument("--iterations", type=int, default=800)
    p.add_argument("--out", default="ablation")
    p.add_argument("--config")

    return parser


def _add_model_flags(p):
    p.add_argument("--ckpt", required=True)
    p.add_argument("--encoder", default=None)
    p.add_argument("--channels", type=int, default=None)
    p.add_argument("--heads", type=int, default=None)
    p.add_argument("--cross-reduction", type=int, default=None)
    p.add_argument("--no-cross", action="store_true")
    p.add_argument("--seed", type=int, default=0)


def _model_from_ckpt(args, tasks: int):
    """Rebuild the architecture next to a checkpoint.

    The flat checkpoint format stores parameters only, so the architecture
    comes from the run's sidecar config.txt when present, overridden by
    explicit flags.
    """
    cfg = TrainConfig()
    sidecar = Path(args.ckpt).parent / "config.txt"
    if sidecar.exists():
        cfg = load_train_config(sidecar, cfg)
    overrides = {
        "encoder": args.encoder,
        "channels": args.channels,
        "heads": args.heads,
        "cross_reduction": getattr(args, "cross_reduction", None),
    }
    cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    if args.no_cross:
        cfg = replace(cfg, cross_attention=False)
    model = build_model(cfg, tasks)
    model.load_state(load_checkpoint(args.ckpt))
    return model


def _cmd_gen_data(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stems = generate_dataset(args.kind, args.count, args.size, args.seed, out)
    print(f"wrote {len(stems)} samples to {out}")
    return 0


def _cmd_train(args) -> int:
    cfg = TrainConfig()
    if args.config:
        cfg = load_train_config(args.config, cfg)
    overrides = {k: getattr(args, k) for k in ("data", "out", "iterations", "seed", "encoder", "channels")}
    cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    if args.no_cross:
        cfg = replace(cfg, cross_attention=False)
    ckpt, log = train(cfg, stream=print)
    print(f"checkpoint={ckpt}")
    print(f"initial_loss={log.initial_loss:.6f}")
    print(f"final_loss={log.final_loss:.6f}")
    return 0


def _cmd_eval(args) -> int:
    dataset = load_dataset(args.data)
    model = _model_from_ckpt(args, tasks=len(dataset.tasks))
    report = evaluate_dataset(model, dataset, mode=args.mode, distance=args.distance, patch=args.patch)
    lines = report.lines()
    for line in lines:
        print(line)
    if args.tsv:
        print(report.tsv_header())
        print(report.tsv_row())
    if args.out:
        Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0


def _cmd_infer_tile(args) -> int:
    image = read_ppm(args.image)
    model = _model_from_ckpt(args, tasks=args.tasks)
    merged, skeletons = infer_full(image, model, args.patch)
    write_pgm(args.out, labels_to_pgm_values(merged, args.tasks))
    if args.skeleton_prefix:
        for k, skel in enumerate(skeletons, start=1):
            write_pgm(f"{args.skeleton_prefix}.task{k}.pgm", skel * 255)
    print(f"wrote {args.out}")
    return 0


def _cmd_attn_dump(args) -> int:
    image = read_ppm(args.image)
    model = _model_from_ckpt(args, tasks=args.tasks)
    try:
        row, col = (int(v) for v in args.pixel.split(","))
    except ValueError:
        raise ConfigError(f"--pixel expects 'row,col', got {args.pixel!r}") from None
    task = args.task - 1
    if not 0 <= task < args.tasks:
        raise ConfigError(f"--task must be in 1..{args.tasks}")
    if args.source is None:
        if args.tasks != 2:
            raise ConfigError("--source is required when more than two tasks exist")
        source = 1 - task
    else:
        source = args.source - 1

    capture = AttentionCapture()
    model.predict(image, capture=capture)
    record = next((r for r in capture.cross if r.task == task and r.source == source), None)
    if record is None:
        raise ConfigError(f"no cross-attention record for task {task + 1} over source {source + 1}")
    try:
        weights = export_attention(record, (row, col))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    write_pgm(args.out, np.rint(weights * 255).astype(np.uint8))
    print(f"wrote {args.out}")
    return 0


def _cmd_gradcheck(args) -> int:
    from .verification import run_gradient_suite

    results = run_gradient_suite(seed=args.seed)
    failed = False
    for name, err, bound in results:
        status = "ok" if err <= bound else "FAIL"
        failed |= err > bound
        print(f"{name}: max_rel_err={err:.3e} bound={bound:.0e} {status}")
    if failed:
        raise NumericError("gradient check failed")
    return 0


def _cmd_ablate(args) -> int:
    cfg = TrainConfig()
    if args.config:
        cfg = load_train_config(args.config, cfg)
    cfg = replace(cfg, data=args.data, out=args.out, iterations=args.iterations)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    result = ablate(cfg, seeds, eval_data=args.val_data, stream=print)
    for line in result.table():
        print(line)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    (Path(args.out) / "table.tsv").write_text("\n".join(result.table()) + "\n", encoding="utf-8")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "infer-tile": _cmd_infer_tile,
    "attn-dump": _cmd_attn_dump,
    "gradcheck": _cmd_gradcheck,
    "ablate": _cmd_ablate,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except (FormatError, ConfigError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MtlsegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
