"""Command line front end: train, eval, bench and gradcheck.

Exit codes are a stable contract: 0 success, 1 verification failure,
2 usage or config error, 3 runtime divergence.

Only the standard library is imported at module level. ``main`` pins the
BLAS thread count from ``--threads`` before anything touches numpy, so the
cap actually takes effect (thread pools are sized at import time).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_USAGE = 2
EXIT_DIVERGED = 3

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


def _set_thread_env(argv) -> None:
    """Export the --threads cap (default 1) before numpy is imported.

    An explicit flag overrides inherited environment variables; without the
    flag, already-set variables are left alone.
    """
    import os

    value = None
    for i, tok in enumerate(argv):
        if tok == "--threads" and i + 1 < len(argv):
            value = argv[i + 1]
        elif tok.startswith("--threads="):
            value = tok.split("=", 1)[1]
    for var in _THREAD_VARS:
        if value is not None:
            os.environ[var] = value
        else:
            os.environ.setdefault(var, "1")


class _UsageError(Exception):
    """Bad flags, paths or config values; maps to exit code 2."""


def _load_config(args) -> "NetworkConfig":
    from .errors import ConfigError
    from .network import config_from_dict

    fields = {}
    if args.config is not None:
        path = Path(args.config)
        if not path.is_file():
            raise _UsageError(f"--config: no such file: {path}")
        try:
            fields = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise _UsageError(f"--config: not valid JSON: {exc}") from exc
        if not isinstance(fields, dict):
            raise _UsageError("--config: top level must be a JSON object")
    if getattr(args, "num_classes", None) is not None:
        fields["num_classes"] = args.num_classes
    if getattr(args, "width", None) is not None:
        fields["width"] = args.width
    try:
        return config_from_dict(fields)
    except ConfigError as exc:
        raise _UsageError(f"--config: {exc}") from exc


def _load_dataset(args, require_labels: bool) -> list:
    """Read --data as one cloud file or a directory of them (sorted by name)."""
    from .data import read_cloud, read_cloud_csv
    from .errors import FormatError

    if args.data is None:
        raise _UsageError("--data is required")
    path = Path(args.data)
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix in (".pvcn", ".csv"))
        if not files:
            raise _UsageError(f"--data: no .pvcn or .csv files in {path}")
    elif path.is_file():
        files = [path]
    else:
        raise _UsageError(f"--data: no such path: {path}")
    clouds = []
    for f in files:
        try:
            cloud = read_cloud_csv(f) if f.suffix == ".csv" else read_cloud(f)
        except FormatError as exc:
            raise _UsageError(f"--data: {f.name}: {exc}") from exc
        if require_labels and cloud.labels is None:
            raise _UsageError(f"--data: {f.name} has no labels")
        clouds.append(cloud)
    return clouds


def _param_dtype(precision: int):
    import numpy as np

    return np.float64 if precision == 64 else np.float32


def cmd_train(args) -> int:
    from .errors import DomainError, TrainingError
    from .train import save_checkpoint, train

    config = _load_config(args)
    dataset = _load_dataset(args, require_labels=True)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "metrics.csv"
    ckpt_path = out_dir / "checkpoint.pvck"

    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "lr", "loss", "acc", "mIoU"])

        def log_fn(stats):
            writer.writerow(
                [stats.epoch, f"{stats.lr:.8g}", f"{stats.loss:.8g}",
                 f"{stats.accuracy:.6f}", f"{stats.mean_iou:.6f}"]
            )
            fh.flush()
            print(
                f"epoch {stats.epoch:4d}  lr {stats.lr:.2e}  loss {stats.loss:10.4f}"
                f"  acc {stats.accuracy:.4f}  mIoU {stats.mean_iou:.4f}"
            )

        try:
            result = train(
                config,
                dataset,
                epochs=args.epochs,
                seed=args.seed,
                batch_size=args.batch_size,
                target_accuracy=args.target_accuracy,
                dtype=_param_dtype(args.precision),
                log_fn=log_fn,
            )
        except TrainingError as exc:
            print(f"error: training diverged: {exc}", file=sys.stderr)
            return EXIT_DIVERGED
        except DomainError as exc:
            raise _UsageError(str(exc)) from exc

    save_checkpoint(ckpt_path, config, result.params)
    last = result.history[-1]
    print(f"wrote {ckpt_path} and {log_path}")
    print(
        f"final: acc {last.accuracy:.4f}  mIoU {last.mean_iou:.4f}"
        f"  best mIoU {result.best_mean_iou:.4f} (epoch {result.best_epoch})"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    import numpy as np

    from .errors import FormatError
    from .train import evaluate, load_checkpoint

    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.is_file():
        raise _UsageError(f"--checkpoint: no such file: {ckpt_path}")
    try:
        config, params = load_checkpoint(ckpt_path)
    except FormatError as exc:
        raise _UsageError(f"--checkpoint: {exc}") from exc
    dataset = _load_dataset(args, require_labels=True)

    metrics = evaluate(config, params, dataset)
    print(f"accuracy {metrics.accuracy:.4f}")
    print(f"mIoU     {metrics.mean_iou:.4f}")
    for c, iou in enumerate(metrics.per_class_iou):
        shown = "absent" if np.isnan(iou) else f"{iou:.4f}"
        print(f"class {c:2d} IoU {shown}")
    if args.per_head:
        for h, acc in enumerate(metrics.per_head_accuracy):
            print(f"head {h} accuracy {acc:.4f}")
    if args.csv is not None:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", "value"])
            writer.writerow(["accuracy", f"{metrics.accuracy:.6f}"])
            writer.writerow(["mIoU", f"{metrics.mean_iou:.6f}"])
            for c, iou in enumerate(metrics.per_class_iou):
                writer.writerow([f"iou_class_{c}", "" if np.isnan(iou) else f"{iou:.6f}"])
            if args.per_head:
                for h, acc in enumerate(metrics.per_head_accuracy):
                    writer.writerow([f"head_{h}_accuracy", f"{acc:.6f}"])
        print(f"wrote {args.csv}")
    return EXIT_OK


def _parse_floats(text: str, flag: str) -> tuple:
    try:
        return tuple(float(tok) for tok in text.split(","))
    except ValueError as exc:
        raise _UsageError(f"{flag}: expected comma-separated numbers, got {text!r}") from exc


def cmd_bench(args) -> int:
    from .bench import compare_knn, run_benchmark
    from .errors import FormatError
    from .train import load_checkpoint

    widths = _parse_floats(args.widths, "--widths")
    sizes = tuple(int(s) for s in _parse_floats(args.sizes, "--sizes"))
    base_config = None
    if args.checkpoint is not None:
        try:
            base_config, _ = load_checkpoint(Path(args.checkpoint))
        except (FormatError, OSError) as exc:
            raise _UsageError(f"--checkpoint: {exc}") from exc
    report = run_benchmark(
        widths=widths,
        sizes=sizes,
        runs=args.runs,
        warmup=args.warmup,
        seed=args.seed,
        base_config=base_config,
    )
    print(report.table())
    if args.csv is not None:
        Path(args.csv).write_text(report.to_csv())
        print(f"wrote {args.csv}")
    if args.knn:
        print(compare_knn().line())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .verify import gradcheck_suite

    if args.precision == 32:
        print(
            "warning: gradients are checked in 64-bit; at 32-bit the"
            " tolerances below are advisory only",
            file=sys.stderr,
        )
    result = gradcheck_suite(seed=args.seed)
    for line in result.lines():
        print(line)
    if not result.passed:
        names = ", ".join(c.name for c in result.failing())
        print(f"gradcheck FAILED: {names}", file=sys.stderr)
        return EXIT_VERIFY
    print("gradcheck passed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pvcnet",
        description="Point-voxel convolution networks: train, evaluate, "
        "benchmark and gradient-check on the CPU.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0, help="rng seed")
        p.add_argument(
            "--threads",
            default=None,
            help="cap BLAS/OpenMP threads (default 1 for reproducibility)",
        )

    p_train = sub.add_parser("train", help="train on labeled point clouds")
    common(p_train)
    p_train.add_argument("--config", help="JSON file of network config fields")
    p_train.add_argument("--data", help="cloud file or directory of .pvcn/.csv files")
    p_train.add_argument("--epochs", type=int, default=100)
    p_train.add_argument("--batch-size", type=int, default=16)
    p_train.add_argument("--width", type=float, help="override config width multiplier")
    p_train.add_argument("--num-classes", type=int, help="override config class count")
    p_train.add_argument(
        "--target-accuracy", type=float, default=None, help="stop early at this accuracy"
    )
    p_train.add_argument("--precision", type=int, choices=(32, 64), default=32)
    p_train.add_argument("--out", default=".", help="directory for checkpoint.pvck + metrics.csv")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on labeled clouds")
    common(p_eval)
    p_eval.add_argument("--checkpoint", required=True, help="checkpoint.pvck path")
    p_eval.add_argument("--data", help="cloud file or directory of .pvcn/.csv files")
    p_eval.add_argument("--per-head", action="store_true", help="also print each head's accuracy")
    p_eval.add_argument("--csv", help="write metrics to this CSV file")

    p_bench = sub.add_parser(
        "bench",
        help="forward-latency and memory sweep",
        description="Times one inference pass per run: voxelization, neighbor "
        "search and the forward network, with no gradient tape. Input "
        "generation and I/O sit outside the timed region.",
    )
    common(p_bench)
    p_bench.add_argument("--widths", default="0.5,0.75,1.0", help="comma-separated multipliers")
    p_bench.add_argument("--sizes", default="2048,8192", help="comma-separated point counts")
    p_bench.add_argument("--runs", type=int, default=20, help="timed runs per row (median/p95)")
    p_bench.add_argument("--warmup", type=int, default=3, help="untimed warm-up runs per row")
    p_bench.add_argument("--checkpoint", help="take base config from this checkpoint")
    p_bench.add_argument("--csv", help="write the report to this CSV file")
    p_bench.add_argument(
        "--knn", action="store_true", help="also compare grid KNN against brute force"
    )

    p_grad = sub.add_parser("gradcheck", help="finite-difference check of every gradient")
    common(p_grad)
    p_grad.add_argument("--precision", type=int, choices=(32, 64), default=64)

    return parser


_COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _set_thread_env(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
