"""Command-line entry point.

Subcommands: generate, pretrain, adapt, evaluate, ablate, sweep.

Adaptation options can also come from a ``--config`` file of flat
``key = value`` lines (``#`` starts a comment).  Precedence is
command-line flag > SFUDA_SEED environment variable (seed only) > config
file > built-in default.

Exit codes: 0 success, 2 user or configuration error, 3 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .data import (STANDARD_SHIFT, STANDARD_TASK, ShiftSpec, apply_shift, gen_blobs,
                   load_dataset, save_dataset)
from .errors import ParseError, SfudaError
from .model import load_model, predict_with_entropy, pretrain_source, save_model
from .mvcl import default_views, extract_features
from .pipeline import (AdaptConfig, Adapter, Evaluator, ablation_grid, config_dict,
                       emit_metrics, simplex_grid, sweep_lambda, write_ablation)

log = logging.getLogger("sfuda")

EXIT_OK, EXIT_USAGE, EXIT_IO = 0, 2, 3


class UsageError(ValueError):
    pass


def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def _optional_int(text):
    return None if str(text).strip().lower() in ("", "none", "all") else int(text)


def _lambda_triple(text):
    try:
        vals = tuple(float(v) for v in str(text).split(","))
    except ValueError as exc:
        raise UsageError(f"--lambda expects three comma-separated numbers: {exc}") from exc
    if len(vals) != 3:
        raise UsageError("--lambda expects exactly three values")
    return vals


# name -> (parser, default); names double as config-file keys
ADAPT_OPTIONS = {
    "epochs": (int, 50),
    "batch_size": (int, 64),
    "lr": (float, 0.05),
    "momentum": (float, 0.9),
    "lambda": (_lambda_triple, None),
    "lambda_schedule": (str, "linear"),
    "tau": (float, 0.5),
    "views": (int, 2),
    "rho": (int, 5),
    "rsm_window": (_optional_int, None),
    "seed": (int, 0),
    "strict_rho": (_bool, False),
    "multiplicative_attention": (_bool, False),
    "entropy_scale": (str, "log_classes"),
    "kmeans_iters": (int, 50),
    "pa": (_bool, True),
    "pla": (_bool, True),
    "nf": (_bool, True),
}


def read_config_file(path) -> dict:
    values = {}
    lines = Path(path).read_text().splitlines()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in ADAPT_OPTIONS:
            raise UsageError(f"{path}:{lineno}: unknown config key '{key}'")
        try:
            values[key] = ADAPT_OPTIONS[key][0](value)
        except (ValueError, UsageError) as exc:
            raise UsageError(f"{path}:{lineno}: bad value for '{key}': {exc}") from exc
    return values


def resolve_adapt_config(args) -> AdaptConfig:
    file_values = read_config_file(args.config) if getattr(args, "config", None) else {}
    merged = {}
    for key, (_, default) in ADAPT_OPTIONS.items():
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
        elif key == "seed" and os.environ.get("SFUDA_SEED"):
            try:
                merged[key] = int(os.environ["SFUDA_SEED"])
            except ValueError as exc:
                raise UsageError(f"SFUDA_SEED must be an integer: {exc}") from exc
        elif key in file_values:
            merged[key] = file_values[key]
        else:
            merged[key] = default
    lam = merged.pop("lambda")
    n_views = merged.pop("views")
    if n_views < 1:
        raise UsageError("--views must be at least 1")
    cfg = AdaptConfig(**merged, views=tuple(default_views(n_views)),
                      fixed_eta=getattr(args, "fixed_eta", None))
    if lam is not None:
        cfg = replace(cfg, lambda_schedule="constant", lambdas=lam)
    cfg.validate()
    return cfg


def add_adapt_options(p):
    p.add_argument("--config", help="key = value file with adaptation options")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--lambda", dest="lambda", type=_lambda_triple,
                   help="constant loss weights l_con,l_ce,l_clu (must sum to 1)")
    p.add_argument("--lambda-schedule", dest="lambda_schedule", choices=["linear", "constant"])
    p.add_argument("--tau", type=float)
    p.add_argument("--views", type=int, help="number of augmented views (weak + strong)")
    p.add_argument("--rho", type=int, help="threshold history window")
    p.add_argument("--rsm-window", dest="rsm_window", type=_optional_int)
    p.add_argument("--seed", type=int)
    p.add_argument("--strict-rho", dest="strict_rho", action=argparse.BooleanOptionalAction,
                   help="divide the attention-averaged filter threshold by the window length")
    p.add_argument("--multiplicative-attention", dest="multiplicative_attention",
                   action=argparse.BooleanOptionalAction)
    p.add_argument("--entropy-scale", dest="entropy_scale", choices=["log_classes", "class_minmax"])
    p.add_argument("--kmeans-iters", dest="kmeans_iters", type=int)
    p.add_argument("--pa", action=argparse.BooleanOptionalAction, help="pseudo-label assignment")
    p.add_argument("--pla", action=argparse.BooleanOptionalAction, help="multi-view stage")
    p.add_argument("--nf", action=argparse.BooleanOptionalAction, help="noisy-label filtering")
    p.add_argument("--fixed-eta", dest="fixed_eta", type=float, help=argparse.SUPPRESS)


def read_truth(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"truth file not found: {path}")
    text = path.read_text()
    first = text.split("\n", 1)[0].strip()
    if first.startswith("{"):
        ds = load_dataset(path)
        if ds.labels is None:
            raise UsageError(f"{path} carries no labels")
        return ds.labels
    try:
        return np.array([int(line) for line in text.split() if line.strip()], dtype=int)
    except ValueError as exc:
        raise ParseError(f"truth file must hold one integer label per line: {exc}") from exc


def _load_frozen(path):
    model = load_model(path)
    if not model.frozen:
        raise UsageError(f"{path} is not a frozen source model")
    return model


def _truth_for(args, target):
    if getattr(args, "truth", None):
        truth = read_truth(args.truth)
    elif target.labels is not None:
        truth = target.labels
    else:
        return None
    if len(truth) != len(target):
        raise UsageError(f"truth has {len(truth)} labels for {len(target)} target samples")
    return truth


# --------------------------------------------------------------------------
# subcommands


def cmd_generate(args):
    task = dict(STANDARD_TASK)
    for key in ("n_classes", "per_class", "d_in", "spread"):
        if getattr(args, key) is not None:
            task[key] = getattr(args, key)
    shift = STANDARD_SHIFT
    if args.rotation is not None or args.translation is not None or args.noise is not None:
        shift = ShiftSpec(
            rotation=STANDARD_SHIFT.rotation if args.rotation is None else args.rotation,
            translation=STANDARD_SHIFT.translation if args.translation is None
            else tuple(float(v) for v in args.translation.split(",")),
            noise=STANDARD_SHIFT.noise if args.noise is None else args.noise,
        )
    source = gen_blobs(seed=args.seed, **task)
    target = apply_shift(gen_blobs(seed=args.seed + 10_000, **task), shift, args.seed + 20_000)
    save_dataset(source, args.source)
    save_dataset(target, args.target)
    print(f"wrote {len(source)} source samples to {args.source} and {len(target)} target samples to {args.target}")
    return EXIT_OK


def cmd_pretrain(args):
    ds = load_dataset(args.source)
    if ds.labels is None:
        raise UsageError(f"{args.source} is unlabeled; pretraining needs labels")
    params = pretrain_source(ds.inputs, ds.labels, ds.n_classes, d_h=args.hidden, d_f=args.features,
                             epochs=args.epochs, lr=args.lr, seed=args.seed)
    save_model(params, args.out)
    acc = float(np.mean(predict_with_entropy(params, ds.inputs)[0] == ds.labels))
    print(f"source train accuracy: {acc:.4f}")
    return EXIT_OK


def cmd_adapt(args):
    cfg = resolve_adapt_config(args)
    source = _load_frozen(args.model)
    target = load_dataset(args.target)
    truth = _truth_for(args, target)
    evaluator = None if truth is None else Evaluator(truth)
    adapter = Adapter(source, cfg, evaluator)
    params, history = adapter.run(target.unlabeled())
    save_model(params, args.out_model)
    out = Path(args.metrics)
    out.mkdir(parents=True, exist_ok=True)
    if history:
        emit_metrics(history, out)
        adapter.entropy_matrix.to_csv(out / "entropy_matrix.csv")
    else:
        (out / "summary.json").write_text(json.dumps(
            {"final_accuracy": None, "final_labeling_rate": None, "epochs": 0}, indent=2) + "\n")
    (out / "config.json").write_text(json.dumps(config_dict(cfg), indent=2) + "\n")
    _dump_features(out / "features_before.csv", source, target.inputs, truth)
    _dump_features(out / "features_after.csv", params, target.inputs, truth)
    if history and history[-1].model_accuracy is not None:
        print(f"final target accuracy: {history[-1].model_accuracy:.4f}")
    return EXIT_OK


def _dump_features(path, params, inputs, truth):
    feats = extract_features(params, inputs)[1]
    header = ",".join([f"f{j}" for j in range(feats.shape[1])] + ["label"])
    labels = np.full(len(feats), -1) if truth is None else truth
    np.savetxt(path, np.column_stack([feats, labels]), delimiter=",", header=header, comments="",
               fmt=["%.17g"] * feats.shape[1] + ["%d"])


def cmd_evaluate(args):
    model = load_model(args.model)
    ds = load_dataset(args.data)
    truth = _truth_for(args, ds)
    if truth is None:
        raise UsageError("evaluation needs labels (in the data file or via --truth)")
    acc = Evaluator(truth).accuracy(predict_with_entropy(model, ds.inputs)[0])
    print(f"accuracy: {acc:.4f}")
    return EXIT_OK


def cmd_ablate(args):
    cfg = resolve_adapt_config(args)
    truth = read_truth(args.truth)
    source = _load_frozen(args.model)
    target = load_dataset(args.target)
    if len(truth) != len(target):
        raise UsageError(f"truth has {len(truth)} labels for {len(target)} target samples")
    seeds = [cfg.seed + i for i in range(args.seeds)]
    table = ablation_grid(source, target.inputs, truth, cfg, seeds=seeds, workers=args.workers)
    _, txt = write_ablation(table, args.metrics)
    print(txt.read_text(), end="")
    return EXIT_OK


def cmd_sweep(args):
    cfg = resolve_adapt_config(args)
    try:
        simplex_grid(args.grid)
    except SfudaError as exc:
        raise UsageError(str(exc)) from exc
    truth = read_truth(args.truth)
    source = _load_frozen(args.model)
    target = load_dataset(args.target)
    rows = sweep_lambda(source, target.inputs, truth, cfg, args.grid)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    lines = ["lambda_1,lambda_2,lambda_3,accuracy"]
    lines += [f"{a!r},{b!r},{c!r},{acc!r}" for a, b, c, acc in rows]
    out.write_text("\n".join(lines) + "\n")
    print(f"wrote {len(rows)} grid points to {out}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="sfuda", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic source/target dataset pair")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", dest="n_classes", type=int)
    p.add_argument("--per-class", dest="per_class", type=int)
    p.add_argument("--d-in", dest="d_in", type=int)
    p.add_argument("--spread", type=float)
    p.add_argument("--rotation", type=float)
    p.add_argument("--translation", help="comma-separated translation vector")
    p.add_argument("--noise", type=float)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("pretrain", help="train and freeze the source model")
    p.add_argument("--source", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=int(os.environ.get("SFUDA_SEED", 0) or 0))
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--features", type=int, default=8)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("adapt", help="adapt a frozen source model to target data")
    p.add_argument("--model", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out-model", dest="out_model", required=True)
    p.add_argument("--metrics", required=True, help="output directory")
    p.add_argument("--truth", help="evaluation labels (defaults to labels in the target file)")
    add_adapt_options(p)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("evaluate", help="accuracy of a model on labelled data")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--truth")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="Base / +PA / +PA+PLA / +PA+PLA+NF table")
    p.add_argument("--model", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--metrics", required=True, help="output directory")
    p.add_argument("--seeds", type=int, default=5, help="number of consecutive seeds")
    p.add_argument("--workers", type=int, default=1)
    add_adapt_options(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", aliases=["sweep-lambda"], help="accuracy over a lambda simplex grid")
    p.add_argument("--grid", type=float, required=True, help="grid step, e.g. 0.25")
    p.add_argument("--model", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True, help="output CSV path")
    add_adapt_options(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, SfudaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
