"""Command-line driver.

Subcommands: synth, split, train, eval, bench-scan, check-grad, flops.
Diagnostics and timings go to stderr; artifacts (cubes, splits, checkpoints,
CSV/JSON reports) go to the paths the flags name. Exit status is nonzero on
any error, including a failed gradient audit.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import data as data_mod
from .checkpoint import CheckpointError, load_arrays, save_arrays
from .flops import count_flops
from .gradcheck import check_model_gradients
from .model import Model, ModelConfig
from .train import TrainConfig, evaluate_split, train, write_train_log

__all__ = ["main"]


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--patch-size", type=int, default=11)
    p.add_argument("--depth", type=int, default=8)
    p.add_argument("--embed-dim", type=int, default=64)
    p.add_argument("--state-dim", type=int, default=16)
    p.add_argument("--hops", type=int, default=2)
    p.add_argument("--gamma", type=float, default=0.2)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--no-mask", action="store_true",
                   help="disable the spectral mask branch")
    p.add_argument("--no-adaptive-filter", action="store_true",
                   help="use plain symmetric normalization instead of the edge filter")


def _model_config(args, bands: int, classes: int) -> ModelConfig:
    cfg = ModelConfig(bands=bands, classes=classes,
                      patch_size=args.patch_size, depth=args.depth,
                      embed_dim=args.embed_dim, state_dim=args.state_dim,
                      hops=args.hops, gamma=args.gamma, dropout=args.dropout,
                      mask_enabled=not args.no_mask,
                      adaptive_filter=not args.no_adaptive_filter)
    cfg.validate()
    return cfg


def _load_split_spec(path: str) -> tuple[dict | tuple, int]:
    spec = json.loads(Path(path).read_text())
    seed = int(spec["seed"])
    per_class = spec.get("per_class", {})
    default = spec.get("default")
    if not per_class and default is None:
        raise data_mod.DataError(f"split spec {path} names no counts")
    if per_class:
        counts = {int(k): (int(v["train"]), int(v["val"]))
                  for k, v in per_class.items()}
        if default is not None:
            counts["__default__"] = (int(default["train"]), int(default["val"]))
        return counts, seed
    return (int(default["train"]), int(default["val"])), seed


def cmd_synth(args) -> int:
    cube = data_mod.synth_cube(args.height, args.width, args.bands, args.classes,
                               args.separation, args.noise_sigma, args.seed,
                               min_class_pixels=args.min_class_pixels)
    data_mod.save_cube(cube, args.out)
    counts = np.bincount(cube.labels.ravel(), minlength=args.classes + 1)[1:]
    print(f"wrote {args.out}.json/.raw/.labels.raw "
          f"({args.height}x{args.width}x{args.bands}, "
          f"pixel counts for classes 1..{args.classes}: {counts.tolist()})")
    return 0


def cmd_split(args) -> int:
    cube = data_mod.load_cube(args.cube, normalize=False)
    if args.spec:
        counts, seed = _load_split_spec(args.spec)
        if isinstance(counts, dict) and "__default__" in counts:
            default = counts.pop("__default__")
            full = {int(k): counts.get(int(k), default)
                    for k in np.unique(cube.labels) if k != 0}
            counts = full
    else:
        counts, seed = (args.train_count, args.val_count), args.seed
    splits = data_mod.make_splits(cube.labels, counts, seed)
    Path(args.out).write_text(splits.to_json() + "\n")
    print(f"wrote {args.out} (train {len(splits.train)}, val {len(splits.val)}, "
          f"test {len(splits.test)})")
    return 0


def cmd_train(args) -> int:
    cube = data_mod.load_cube(args.cube)
    splits = data_mod.Splits.from_json(Path(args.splits).read_text())
    cfg = _model_config(args, cube.bands, cube.num_classes)
    model = Model(cfg, seed=args.seed)
    tcfg = TrainConfig(lr=args.lr, epochs=args.epochs, batch=args.batch,
                       seed=args.seed, eval_batch=args.eval_batch,
                       clip_norm=args.clip_norm,
                       early_stop_val_oa=args.early_stop_val_oa,
                       patience=args.patience)
    result = train(model, cube, splits, tcfg)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_arrays(out_dir / "checkpoint.bin", result.best_state)
    (out_dir / "model_config.json").write_text(
        json.dumps(cfg.to_dict(), sort_keys=True, indent=2) + "\n")
    write_train_log(out_dir / "train_log.csv", result.log)
    print(f"best val OA {result.best_val_oa:.4f} at epoch {result.best_epoch} "
          f"({result.epochs_run} epochs run"
          f"{', early stop' if result.stopped_early else ''})")
    print(f"train runtime {result.runtime_seconds:.1f}s", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    cube = data_mod.load_cube(args.cube)
    splits = data_mod.Splits.from_json(Path(args.splits).read_text())
    config_path = args.model_config or str(Path(args.checkpoint).parent / "model_config.json")
    cfg = ModelConfig.from_dict(json.loads(Path(config_path).read_text()))
    model = Model(cfg, seed=0)
    model.load_state_arrays(load_arrays(args.checkpoint))
    started = time.perf_counter()
    flops = count_flops(cfg, seq_len=cfg.patch_size ** 2)
    report = evaluate_split(model, cube, splits.test, batch=args.eval_batch,
                            config=cfg.to_dict(), flops=flops)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "eval_report.json").write_text(report.to_json())
    with open(out_dir / "confusion.csv", "w", newline="") as fh:
        for row in report.confusion:
            fh.write(",".join(str(int(v)) for v in row) + "\n")
    print(f"test OA {report.oa:.4f}  AA {report.aa:.4f}  kappa {report.kappa:.4f} "
          f"({report.test_count} samples)")
    print(f"eval runtime {time.perf_counter() - started:.1f}s", file=sys.stderr)
    return 0


def cmd_bench_scan(args) -> int:
    lengths = [int(tok) for tok in args.lengths.split(",") if tok]
    rows = bench_mod.bench_scan(lengths, channels=args.channels,
                                state_dim=args.state_dim, workers=args.workers,
                                repeats=args.repeats, seed=args.seed)
    bench_mod.write_bench_csv(args.out, rows)
    for r in rows:
        print(f"n={r.length:>7} workers={r.workers} median={r.median_ns}ns "
              f"p95={r.p95_ns}ns")
    if len(rows) >= 2:
        print(f"power-law exponent {bench_mod.fit_exponent(rows):.3f}")
    return 0


def cmd_check_grad(args) -> int:
    cfg = ModelConfig(bands=args.bands, classes=args.classes,
                      patch_size=args.patch_size, depth=args.depth,
                      embed_dim=args.embed_dim, state_dim=args.state_dim,
                      hops=args.hops, gamma=args.gamma, dropout=0.0)
    cfg.validate()
    model = Model(cfg, seed=args.seed)
    rng = np.random.Generator(np.random.PCG64(args.seed))
    patches = rng.uniform(0.0, 1.0, (args.batch, cfg.patch_size,
                                     cfg.patch_size, cfg.bands))
    targets = rng.integers(0, cfg.classes, args.batch)
    report = check_model_gradients(model, patches, targets, h=args.h,
                                   tolerance=args.tol, seed=args.seed)
    status = "PASS" if report.ok else "FAIL"
    print(f"{status}: {report.checked} parameter entries, worst rel err "
          f"{report.worst:.3e} ({report.worst_param}), tolerance {report.tolerance:g}")
    if not report.ok:
        for name, err in sorted(report.per_param.items(), key=lambda kv: -kv[1])[:8]:
            print(f"  {name}: {err:.3e}", file=sys.stderr)
    return 0 if report.ok else 1


def cmd_flops(args) -> int:
    cfg = ModelConfig(bands=args.bands, classes=args.classes,
                      patch_size=args.patch_size, depth=args.depth,
                      embed_dim=args.embed_dim, state_dim=args.state_dim,
                      hops=args.hops, gamma=args.gamma)
    cfg.validate()
    print(json.dumps(count_flops(cfg, args.seq_len, seed=args.seed),
                     sort_keys=True, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graphssm",
        description="Spectral-spatial state-space classifier for HSI cubes")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled cube")
    p.add_argument("--out", required=True, help="output base path (no extension)")
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--bands", type=int, default=16)
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--separation", type=float, default=0.5)
    p.add_argument("--noise-sigma", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-class-pixels", type=int, default=1)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="fixed-count per-class train/val/test split")
    p.add_argument("--cube", required=True)
    p.add_argument("--train-count", type=int, default=30)
    p.add_argument("--val-count", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--spec", help="JSON split spec (per-class counts + seed)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train and save the best-val checkpoint")
    p.add_argument("--cube", required=True)
    p.add_argument("--splits", required=True)
    p.add_argument("--out-dir", required=True)
    _add_model_flags(p)
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eval-batch", type=int, default=256)
    p.add_argument("--clip-norm", type=float, default=None,
                   help="global gradient-norm ceiling (off by default)")
    p.add_argument("--early-stop-val-oa", type=float, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on the test split")
    p.add_argument("--cube", required=True)
    p.add_argument("--splits", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--model-config", default=None,
                   help="defaults to model_config.json beside the checkpoint")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--eval-batch", type=int, default=256)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench-scan", help="time scan_parallel across lengths")
    p.add_argument("--lengths", default="1024,2048,4096,8192,16384,32768")
    p.add_argument("--channels", type=int, default=4)
    p.add_argument("--state-dim", type=int, default=16)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--repeats", type=int, default=9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="bench_scan.csv")
    p.set_defaults(func=cmd_bench_scan)

    p = sub.add_parser("check-grad", help="finite-difference audit of all parameters")
    p.add_argument("--patch-size", type=int, default=5)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--bands", type=int, default=4)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--embed-dim", type=int, default=8)
    p.add_argument("--state-dim", type=int, default=4)
    p.add_argument("--hops", type=int, default=1)
    p.add_argument("--gamma", type=float, default=0.2)
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_check_grad)

    p = sub.add_parser("flops", help="symbolic and instrumented op counts")
    p.add_argument("--seq-len", type=int, default=121)
    p.add_argument("--patch-size", type=int, default=11)
    p.add_argument("--depth", type=int, default=8)
    p.add_argument("--embed-dim", type=int, default=64)
    p.add_argument("--state-dim", type=int, default=16)
    p.add_argument("--hops", type=int, default=2)
    p.add_argument("--gamma", type=float, default=0.2)
    p.add_argument("--bands", type=int, default=16)
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_flops)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (data_mod.DataError, CheckpointError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
