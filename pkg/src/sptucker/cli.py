"""Command-line entry point: ``train``, ``eval``, ``predict``, ``bench`` and ``split``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
divergence.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys

import numpy as np

from .config import HyperParams, coerce, read_config_text
from .exceptions import (
    ConfigError,
    DataError,
    DomainError,
    InvariantError,
    ModelFormatError,
    NumericalDivergence,
    ParseError,
)
from .metrics import bench_rank_scaling, bench_speedup, rmse_mae, write_metrics_csv
from .model import deserialize, predict, serialize
from .sptensor import CooTensor, load_delimited, read_coords, save_delimited, train_test_split
from .train import fit

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4

log = logging.getLogger("sptucker")

# flag name -> HyperParams field
HYPER_FLAGS = {
    "ranks": "core_dims",
    "rcore": "r_core",
    "lr_a": "lr_a",
    "lr_b": "lr_b",
    "reg_a": "reg_a",
    "reg_b": "reg_b",
    "batch_m": "batch_m",
    "row_fraction": "row_fraction",
    "epochs": "epochs",
    "seed": "seed",
    "threads": "threads",
    "strategy": "strategy",
    "balance": "balance",
    "init_mean": "init_mean",
    "init_std": "init_std",
    "resample_per_mode": "resample_per_mode",
    "incremental_residual": "incremental_residual",
}
# config-file keys that are not hyperparameters
IO_KEYS = ("train", "test", "order", "shape", "zero_policy", "metrics_out", "model_out")


def _add_hyper_flags(p):
    g = p.add_argument_group("hyperparameters (override --config)")
    g.add_argument("--ranks", help="comma-separated multilinear ranks, e.g. 5,5,5,5")
    g.add_argument("--rcore", help="Kruskal rank of the core")
    g.add_argument("--lr-a", help="factor learning rate")
    g.add_argument("--lr-b", help="core learning rate")
    g.add_argument("--reg-a", help="factor regularization")
    g.add_argument("--reg-b", help="core regularization")
    g.add_argument("--batch-m", help="core-phase batch size")
    g.add_argument("--row-fraction", help="fraction of each factor row's entries per epoch")
    g.add_argument("--epochs")
    g.add_argument("--seed")
    g.add_argument("--threads")
    g.add_argument("--strategy", choices=("serial", "naive", "improved"))
    g.add_argument("--balance", choices=("static", "dynamic"))
    g.add_argument("--init-mean")
    g.add_argument("--init-std")
    g.add_argument("--resample-per-mode", action="store_const", const="true")
    g.add_argument("--incremental-residual", action="store_const", const="true")


def _add_data_flags(p):
    p.add_argument("--config", help="flat key = value file; flags win")
    p.add_argument("--train", required=False, help="training entries (1-based i_1 ... i_N value)")
    p.add_argument("--test", help="held-out entries, same format")
    p.add_argument("--order", type=int, help="tensor order N")
    p.add_argument("--shape", help="comma-separated dims; default: per-mode maxima")
    p.add_argument("--zero-policy", help="reject (default) or replace:VALUE")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sptucker", description="Sparse Tucker decomposition by SGD.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model and write metrics")
    _add_data_flags(p)
    _add_hyper_flags(p)
    p.add_argument("--metrics-out", help="per-epoch metrics CSV")
    p.add_argument("--model-out", help="binary model file")

    p = sub.add_parser("eval", help="RMSE and MAE of a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--zero-policy")

    p = sub.add_parser("predict", help="predict values at coordinates")
    p.add_argument("--model", required=True)
    p.add_argument("--coords", required=True, help="one 1-based coordinate per line")
    p.add_argument("--out", help="output file (default stdout)")
    p.add_argument("--clamp", help="MIN,MAX range applied to predictions")

    p = sub.add_parser("bench", help="rank-scaling or speedup table")
    _add_data_flags(p)
    _add_hyper_flags(p)
    p.add_argument("--kind", choices=("rank", "speedup"), default="rank")
    p.add_argument("--grid", default="3,5,7,9,11", help="rank values or worker counts")
    p.add_argument("--mode", type=int, default=1, help="1-based mode whose rank is swept")
    p.add_argument("--bench-epochs", type=int, default=2, help="timed epochs per setting")
    p.add_argument("--synthetic", help="generate a synthetic tensor of this shape instead of --train")
    p.add_argument("--nnz", type=int, default=100000)
    p.add_argument("--out", help="CSV output (default stdout)")

    p = sub.add_parser("split", help="random train/test split of a data file")
    p.add_argument("--input", required=True)
    p.add_argument("--order", type=int, required=True)
    p.add_argument("--test-fraction", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-out", required=True)
    p.add_argument("--test-out", required=True)
    p.add_argument("--zero-policy")
    return parser


def _parse_ints(text, what):
    try:
        return tuple(int(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"bad {what}: {text!r}") from None


def resolve(args, order=None) -> tuple:
    """Merge the config file and the flags.  Returns ``(hyper, io)``.

    `order` supplies the tensor order when it is not given by ``--order``.
    """
    raw = read_config_text(args.config) if getattr(args, "config", None) else {}
    io = {k: raw.pop(k) for k in IO_KEYS if k in raw}
    values = {k: coerce(k, v) for k, v in raw.items()}
    for flag, key in HYPER_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = coerce(key, v)
    for k in IO_KEYS:
        v = getattr(args, k, None)
        if v is not None:
            io[k] = v
    if "order" in io:
        io["order"] = int(io["order"])
    elif order is not None:
        io["order"] = order
    if "order" in io and "core_dims" not in values:
        values["core_dims"] = (5,) * io["order"]
    try:
        hyper = HyperParams(**values)
    except InvariantError as exc:
        raise ConfigError(str(exc)) from None
    return hyper, io


def _load_pair(io):
    if not io.get("train"):
        raise ConfigError("--train is required")
    if "order" not in io:
        raise ConfigError("--order is required")
    order = io["order"]
    policy = io.get("zero_policy", "reject")
    shape = _parse_ints(io["shape"], "shape") if io.get("shape") else None
    train = load_delimited(io["train"], order, zero_policy=policy, shape=shape)
    test = None
    if io.get("test"):
        test = load_delimited(io["test"], order, zero_policy=policy, shape=shape)
        if shape is None:
            shape = tuple(max(a, b) for a, b in zip(train.shape, test.shape))
            train = CooTensor(train.subs, train.vals, shape)
            test = CooTensor(test.subs, test.vals, shape)
    return train, test


def cmd_train(args) -> int:
    hyper, io = resolve(args)
    train, test = _load_pair(io)
    if len(hyper.core_dims) != train.order:
        raise ConfigError(f"{len(hyper.core_dims)} ranks given for an order-{train.order} tensor")
    model, history = fit(train, hyper, test=test)
    comments = [f"{k} = {v}" for k, v in hyper.to_items()]
    comments += [f"{k} = {v}" for k, v in sorted(io.items())]
    if io.get("metrics_out"):
        write_metrics_csv(history, io["metrics_out"], comments)
    else:
        w = csv.writer(sys.stdout)
        for m in history:
            w.writerow(m.row())
    if io.get("model_out"):
        serialize(model, io["model_out"])
    return EXIT_OK


def cmd_eval(args) -> int:
    model = deserialize(args.model)
    test = load_delimited(args.test, model.order, zero_policy=args.zero_policy or "reject")
    if any(a > b for a, b in zip(test.shape, model.shape)):
        raise DataError(f"test entries exceed model shape {model.shape}")
    test = CooTensor(test.subs, test.vals, model.shape)
    rmse, mae = rmse_mae(model, test)
    print(f"rmse,mae\n{rmse!r},{mae!r}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = deserialize(args.model)
    lo, hi = -np.inf, np.inf
    if args.clamp:
        try:
            lo, hi = (float(v) for v in args.clamp.split(","))
        except ValueError:
            raise ConfigError(f"bad --clamp {args.clamp!r}") from None
    records = read_coords(args.coords, model.order)
    failed = 0
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        for lineno, coord, err in records:
            if err is None and not all(1 <= c <= s for c, s in zip(coord, model.shape)):
                err = f"coordinate {coord} outside shape {model.shape}"
            if err is not None:
                failed += 1
                out.write(f"# error line {lineno}: {err}\n")
                print(f"line {lineno}: {err}", file=sys.stderr)
                continue
            v = float(predict(model, np.asarray([coord]) - 1)[0])
            v = min(max(v, lo), hi)
            out.write(" ".join(map(str, coord)) + f" {v!r}\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_DATA if failed else EXIT_OK


def cmd_bench(args) -> int:
    if args.synthetic:
        from .datasets import make_synthetic
        from .model import Ranks

        shape = _parse_ints(args.synthetic, "synthetic shape")
        hyper, io = resolve(args, order=len(shape))
        tensor, _ = make_synthetic(shape, Ranks((5,) * len(shape), 5), nnz=args.nnz, seed=hyper.seed)
    else:
        hyper, io = resolve(args)
        tensor, _ = _load_pair(io)
    if len(hyper.core_dims) != tensor.order:
        raise ConfigError(f"{len(hyper.core_dims)} ranks given for an order-{tensor.order} tensor")
    grid = _parse_ints(args.grid, "grid")
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out)
        if args.kind == "rank":
            if not 1 <= args.mode <= tensor.order:
                raise ConfigError(f"--mode must lie in 1..{tensor.order}")
            rows, fitres = bench_rank_scaling(tensor, grid, args.bench_epochs, hyper, args.mode - 1)
            w.writerow(("rank", "seconds_per_epoch", "peak_bytes"))
            w.writerows(rows)
            out.write(f"# slope = {fitres['slope']!r}\n# r2 = {fitres['r2']!r}\n"
                      f"# degenerate = {fitres['degenerate']}\n")
        else:
            rows = bench_speedup(tensor, grid, args.bench_epochs, hyper)
            w.writerow(("workers", "seconds", "speedup", "efficiency"))
            w.writerows(rows)
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_split(args) -> int:
    t = load_delimited(args.input, args.order, zero_policy=args.zero_policy or "reject")
    train, test = train_test_split(t, args.test_fraction, args.seed)
    save_delimited(train, args.train_out)
    save_delimited(test, args.test_out)
    log.info("split %d entries into %d / %d", t.nnz, train.nnz, test.nnz)
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "predict": cmd_predict,
            "bench": cmd_bench, "split": cmd_split}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, InvariantError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalDivergence as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, ParseError, ModelFormatError, DomainError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
