"""Multi-seed sweeps over intervention strength X and MC sample size.

Each sweep cell regenerates splits, trains, and evaluates; rows land in
a flat (backbone, strategy, x, n_samples, seed, metric, value) table
that aggregates into mean +/- std groups.
"""

import csv
import dataclasses
import json
from pathlib import Path

import numpy as np

from .backbones import make_model
from .metrics import evaluate
from .synth import InterventionSpec, intervened_split
from .training import TrainConfig, UploaderPool, train_pipeline

SWEEP_SCHEMA_VERSION = 1

CSV_COLUMNS = (
    "schema_version",
    "backbone",
    "strategy",
    "x",
    "n_samples",
    "seed",
    "metric",
    "value",
)


def run_cell(
    dataset,
    x,
    strategy,
    backbone,
    seed,
    base_config: TrainConfig,
    model_kwargs=None,
    split_fractions=(0.7, 0.15, 0.15),
    cutoffs=(10, 20),
):
    """Train and evaluate one sweep cell; returns metric rows."""
    train, valid, test = intervened_split(
        dataset, InterventionSpec(x=x, split_fractions=split_fractions, seed=seed)
    )
    config = dataclasses.replace(base_config, strategy=strategy, seed=seed)
    model = make_model(
        backbone,
        dataset.feature_dim,
        dataset.tag_count,
        dataset.n_topics,
        seed=seed,
        **(model_kwargs or {}),
    )
    train_pipeline(model, train, config, valid=valid)
    pool = UploaderPool.from_dataset(train)
    metrics = evaluate(
        model, strategy, test, pool,
        n_samples=config.n_samples, cutoffs=cutoffs, seed=seed,
    )
    rows = []
    for k, v in metrics.recall_at.items():
        rows.append(_row(backbone, strategy, x, config.n_samples, seed, f"recall@{k}", v))
    for k, v in metrics.ndcg_at.items():
        rows.append(_row(backbone, strategy, x, config.n_samples, seed, f"ndcg@{k}", v))
    return rows


def _row(backbone, strategy, x, n_samples, seed, metric, value):
    return {
        "schema_version": SWEEP_SCHEMA_VERSION,
        "backbone": backbone,
        "strategy": strategy,
        "x": x,
        "n_samples": n_samples,
        "seed": seed,
        "metric": metric,
        "value": value,
    }


def _cell_key(kind, backbone, strategy, x, n_samples, seed):
    return f"{kind}_{backbone}_{strategy}_x{x}_ns{n_samples}_s{seed}"


def _run_cells(cells, cell_dir=None):
    """Run sweep cells, skipping any with completed on-disk results."""
    rows = []
    for key, runner in cells:
        if cell_dir is not None:
            cell_path = Path(cell_dir) / f"{key}.json"
            if cell_path.exists():
                rows.extend(json.loads(cell_path.read_text()))
                continue
        try:
            cell_rows = runner()
        except Exception as exc:  # mark failed cells, keep sweeping
            rows.append({"error": f"{key}: {exc}"})
            continue
        if cell_dir is not None:
            Path(cell_dir).mkdir(parents=True, exist_ok=True)
            (Path(cell_dir) / f"{key}.json").write_text(
                json.dumps(cell_rows, sort_keys=True)
            )
        rows.extend(cell_rows)
    return rows


def sweep_intervention(
    dataset,
    x_values=(1, 3, 5),
    strategies=("none", "mc"),
    backbones=("nfm",),
    seeds=(0, 1, 2, 3, 4),
    base_config: TrainConfig = None,
    model_kwargs=None,
    split_fractions=(0.7, 0.15, 0.15),
    cell_dir=None,
):
    base_config = base_config or TrainConfig()
    cells = []
    for x in x_values:
        for backbone in backbones:
            for strategy in strategies:
                for seed in seeds:
                    key = _cell_key("x", backbone, strategy, x, base_config.n_samples, seed)
                    cells.append(
                        (
                            key,
                            lambda x=x, b=backbone, s=strategy, sd=seed: run_cell(
                                dataset, x, s, b, sd, base_config,
                                model_kwargs, split_fractions,
                            ),
                        )
                    )
    rows = _run_cells(cells, cell_dir)
    return {"rows": rows, "aggregate": aggregate(rows)}


def sweep_ns(
    dataset,
    ns_values=(2, 5, 10, 25, 50, 100),
    backbone="nfm",
    seeds=(0,),
    x=3,
    base_config: TrainConfig = None,
    model_kwargs=None,
    split_fractions=(0.7, 0.15, 0.15),
    cell_dir=None,
):
    base_config = base_config or TrainConfig()
    cells = []
    for ns in ns_values:
        config = dataclasses.replace(base_config, n_samples=ns, strategy="mc")
        for seed in seeds:
            key = _cell_key("ns", backbone, "mc", x, ns, seed)
            cells.append(
                (
                    key,
                    lambda c=config, sd=seed: run_cell(
                        dataset, x, "mc", backbone, sd, c,
                        model_kwargs, split_fractions,
                    ),
                )
            )
    rows = _run_cells(cells, cell_dir)
    return {"rows": rows, "aggregate": aggregate(rows)}


def aggregate(rows):
    """Group metric rows into mean +/- std over seeds."""
    groups = {}
    for row in rows:
        if "error" in row:
            continue
        key = (row["backbone"], row["strategy"], row["x"], row["n_samples"], row["metric"])
        groups.setdefault(key, []).append(row["value"])
    out = []
    for (backbone, strategy, x, ns, metric), values in sorted(groups.items()):
        arr = np.asarray(values)
        out.append(
            {
                "backbone": backbone,
                "strategy": strategy,
                "x": x,
                "n_samples": ns,
                "metric": metric,
                "mean": float(arr.mean()),
                "std": float(arr.std(ddof=1)) if len(arr) > 1 else 0.0,
                "n": len(arr),
            }
        )
    return out


def write_csv(rows, path):
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            if "error" in row:
                continue
            writer.writerow(row)
