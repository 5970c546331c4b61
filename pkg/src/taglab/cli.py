"""Command-line pipeline: generate -> split -> train -> eval -> sweep.

Exit codes: 0 success, 1 runtime failure, 2 validation failure.
Config files are strict JSON: unknown fields are rejected.
"""

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .backbones import load_checkpoint, make_model, save_checkpoint
from .data import DatasetError, load_dataset, save_dataset
from .metrics import evaluate
from .optim import OptimConfig
from .sweeps import sweep_intervention, sweep_ns, write_csv
from .synth import GenConfig, InterventionSpec, generate, intervened_split, topic_counts
from .training import TrainConfig, UploaderPool, train_pipeline

OUT_ROOT_ENV = "TAGLAB_OUT_ROOT"


class ValidationFailure(Exception):
    pass


def _resolve_out(out, default_name):
    if out:
        return Path(out)
    root = os.environ.get(OUT_ROOT_ENV)
    if not root:
        raise ValidationFailure(
            f"--out not given and {OUT_ROOT_ENV} is not set"
        )
    return Path(root) / default_name


def _load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ValidationFailure(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationFailure(f"{path}: invalid JSON: {exc}") from exc


def _strict_fields(data, cls, context):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ValidationFailure(f"{context}: unknown fields {unknown}")


def _gen_config(data):
    _strict_fields(data, GenConfig, "generate config")
    for key in ("ugc_per_uploader", "tags_per_ugc"):
        if key in data:
            data[key] = tuple(data[key])
    try:
        config = GenConfig(**data)
        config.validate()
    except (TypeError, ValueError) as exc:
        raise ValidationFailure(str(exc)) from exc
    return config


_TRAIN_EXTRA = {"backbone", "embed_dim", "n_layers", "learning_rate"}


def _train_config(data, args):
    extra = {k: data.pop(k) for k in list(data) if k in _TRAIN_EXTRA}
    _strict_fields(data, TrainConfig, "train config")
    if args.strategy:
        data["strategy"] = args.strategy
    if args.seed is not None:
        data["seed"] = args.seed
    if args.ns is not None:
        data["n_samples"] = args.ns
    optimizer = OptimConfig(learning_rate=extra.get("learning_rate", 1e-3))
    try:
        config = TrainConfig(**data, optimizer=optimizer)
        config.validate()
    except (TypeError, ValueError) as exc:
        raise ValidationFailure(str(exc)) from exc
    backbone = args.backbone or extra.get("backbone", "nfm")
    model_kwargs = {"embed_dim": extra.get("embed_dim", 16)}
    if backbone == "lightgcn":
        model_kwargs["n_layers"] = extra.get("n_layers", 2)
    return config, backbone, model_kwargs


def _dataset_hash(path):
    digest = hashlib.sha256()
    for name in sorted(p.name for p in Path(path).iterdir() if p.is_file()):
        digest.update(name.encode())
        digest.update((Path(path) / name).read_bytes())
    return digest.hexdigest()


def cmd_generate(args):
    config = _gen_config(_load_json(args.config))
    out = _resolve_out(args.out, "dataset")
    dataset = generate(config)
    save_dataset(dataset, out)
    print(f"wrote dataset with {len(dataset.ugcs)} UGCs, "
          f"{len(dataset.triplets)} triplets to {out}")
    return 0


def cmd_split(args):
    if not (1 <= args.x <= 9):
        raise ValidationFailure("--x must lie in [1, 9]")
    try:
        dataset = load_dataset(args.dataset_dir)
    except DatasetError as exc:
        raise ValidationFailure(str(exc)) from exc
    spec = InterventionSpec(x=args.x, seed=args.seed)
    try:
        train, valid, test = intervened_split(dataset, spec)
    except ValueError as exc:
        raise ValidationFailure(str(exc)) from exc
    out = _resolve_out(args.out, "splits")
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"x": args.x, "seed": args.seed, "split_fractions": list(spec.split_fractions)}
    for name, split in (("train", train), ("valid", valid), ("test", test)):
        save_dataset(split, out / name)
        counts = topic_counts(split)
        manifest[name] = {
            "n_ugcs": len(split.ugcs),
            "topic_counts": [int(c) for c in counts],
            "topic_ratio": [float(c) / max(1, counts.sum()) for c in counts],
        }
    (out / "split.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote splits to {out}")
    return 0


def cmd_train(args):
    config, backbone, model_kwargs = _train_config(_load_json(args.config), args)
    try:
        train = load_dataset(args.train_dir)
        valid = load_dataset(args.valid_dir) if args.valid_dir else None
    except DatasetError as exc:
        raise ValidationFailure(str(exc)) from exc
    out = _resolve_out(args.out, "run")
    out.mkdir(parents=True, exist_ok=True)
    model = make_model(
        backbone, train.feature_dim, train.tag_count, train.n_topics,
        seed=config.seed, **model_kwargs,
    )
    started = time.time()
    result = train_pipeline(model, train, config, valid=valid)
    wall = time.time() - started
    if not all(np.isfinite(v) for v in result.train_losses):
        print("training diverged: non-finite loss", file=sys.stderr)
        return 1
    save_checkpoint(model, out / "checkpoint_final.json")
    if result.best_params is not None:
        final = {k: p.value.copy() for k, p in model.store.params.items()}
        for k, p in model.store.params.items():
            p.value = result.best_params[k]
        save_checkpoint(model, out / "checkpoint_best.json")
        for k, p in model.store.params.items():
            p.value = final[k]
    run = {
        "strategy": config.strategy,
        "backbone": backbone,
        "config": {
            **{
                f.name: getattr(config, f.name)
                for f in dataclasses.fields(config)
                if f.name != "optimizer"
            },
            "learning_rate": config.optimizer.learning_rate,
            **model_kwargs,
        },
        "dataset_hash": _dataset_hash(args.train_dir),
        "final_epoch": result.epochs_run,
        "best_epoch": result.best_epoch,
        "valid_history": result.history,
        "train_losses": result.train_losses,
    }
    (out / "run.json").write_text(json.dumps(run, indent=2, sort_keys=True) + "\n")
    # Wall time lives outside run.json so reruns stay byte-identical.
    (out / "timing.json").write_text(json.dumps({"wall_time_sec": wall}) + "\n")
    print(f"trained {backbone}/{config.strategy} for {result.epochs_run} epochs -> {out}")
    return 0


def cmd_eval(args):
    try:
        model = load_checkpoint(args.checkpoint)
    except FileNotFoundError as exc:
        raise ValidationFailure(str(exc)) from exc
    try:
        test = load_dataset(args.test_dir)
        pool_ds = load_dataset(args.pool_dir)
    except DatasetError as exc:
        raise ValidationFailure(str(exc)) from exc
    if test.feature_dim != model.feature_dim or test.tag_count != model.tag_count:
        raise ValidationFailure("checkpoint dimensions do not match dataset")
    cutoffs = tuple(int(k) for k in args.k.split(","))
    pool = UploaderPool.from_dataset(pool_ds)
    metrics = evaluate(
        model, args.strategy, test, pool,
        n_samples=args.ns if args.ns is not None else 1,
        cutoffs=cutoffs, seed=args.seed if args.seed is not None else 0,
        # Identify the checkpoint by name and content hash, not by path, so
        # reruns into different directories stay byte-identical.
        meta={
            "backbone": model.backbone,
            "checkpoint": Path(args.checkpoint).name,
            "checkpoint_sha256": hashlib.sha256(
                Path(args.checkpoint).read_bytes()
            ).hexdigest(),
        },
    )
    out = _resolve_out(args.out, "metrics.json")
    if out.is_dir():
        out = out / "metrics.json"
    metrics.save(out)
    summary = " ".join(
        f"R@{k}={metrics.recall_at[k]:.4f} N@{k}={metrics.ndcg_at[k]:.4f}"
        for k in cutoffs
    )
    print(summary)
    return 0


_SWEEP_FIELDS = {
    "dataset_dir", "mode", "x_values", "ns_values", "strategies", "backbones",
    "seeds", "x", "train", "split_fractions", "cutoffs",
}


def cmd_sweep(args):
    data = _load_json(args.config)
    unknown = sorted(set(data) - _SWEEP_FIELDS)
    if unknown:
        raise ValidationFailure(f"sweep config: unknown fields {unknown}")
    if "dataset_dir" not in data:
        raise ValidationFailure("sweep config: dataset_dir is required")
    try:
        dataset = load_dataset(data["dataset_dir"])
    except DatasetError as exc:
        raise ValidationFailure(str(exc)) from exc
    mode = data.get("mode", "x")
    train_data = dict(data.get("train", {}))

    class _Empty:
        strategy = None
        seed = None
        ns = None
        backbone = None

    config, backbone, model_kwargs = _train_config(train_data, _Empty())
    out = _resolve_out(args.out, "sweep")
    out.mkdir(parents=True, exist_ok=True)
    kwargs = dict(
        base_config=config,
        model_kwargs=model_kwargs,
        split_fractions=tuple(data.get("split_fractions", (0.7, 0.15, 0.15))),
        cell_dir=out / "cells",
    )
    if mode == "x":
        report = sweep_intervention(
            dataset,
            x_values=tuple(data.get("x_values", (1, 3, 5))),
            strategies=tuple(data.get("strategies", ("none", "mc"))),
            backbones=tuple(data.get("backbones", (backbone,))),
            seeds=tuple(data.get("seeds", (0, 1, 2, 3, 4))),
            **kwargs,
        )
    elif mode == "ns":
        report = sweep_ns(
            dataset,
            ns_values=tuple(data.get("ns_values", (2, 5, 10, 25, 50, 100))),
            backbone=backbone,
            seeds=tuple(data.get("seeds", (0,))),
            x=data.get("x", 3),
            **kwargs,
        )
    else:
        raise ValidationFailure(f"sweep config: unknown mode {mode!r}")
    write_csv(report["rows"], out / "sweep.csv")
    (out / "aggregate.json").write_text(
        json.dumps(report["aggregate"], indent=2, sort_keys=True) + "\n"
    )
    errors = [r["error"] for r in report["rows"] if "error" in r]
    for err in errors:
        print(f"cell failed: {err}", file=sys.stderr)
    print(f"wrote {out / 'sweep.csv'}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="taglab",
        description="Deconfounded tag recommendation laboratory",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthesize a confounded dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("split", help="build intervened train/valid/test splits")
    p.add_argument("dataset_dir")
    p.add_argument("--x", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_split)

    p = sub.add_parser("train", help="burn-in then adjustment training")
    p.add_argument("train_dir")
    p.add_argument("valid_dir", nargs="?")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--strategy", choices=("none", "unawareness", "averaged", "mc"))
    p.add_argument("--backbone", choices=("nfm", "lightgcn"))
    p.add_argument("--seed", type=int)
    p.add_argument("--ns", type=int)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a test split")
    p.add_argument("checkpoint")
    p.add_argument("test_dir")
    p.add_argument("pool_dir")
    p.add_argument("--k", default="10,20")
    p.add_argument("--ns", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--strategy", default="mc",
                   choices=("none", "unawareness", "averaged", "mc"))
    p.add_argument("--out")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sweep", help="factorial X or sample-size sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_sweep)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ValidationFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
