"""Dataset entities, invariants, and directory-based JSONL persistence.

A dataset directory holds ``meta.json`` plus ``uploaders.jsonl``,
``ugcs.jsonl`` and ``triplets.jsonl``, all sorted by primary id and
written with fixed numeric formatting so saves are bit-deterministic.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

HISTOGRAM_ATOL = 1e-9


class DatasetError(ValueError):
    """Invariant violation or malformed dataset file."""


@dataclass
class Triplet:
    uploader_id: int
    ugc_id: int
    tag_id: int


@dataclass
class UgcRecord:
    ugc_id: int
    uploader_id: int
    topic: int
    features: np.ndarray


@dataclass
class UploaderProfile:
    uploader_id: int
    topic_histogram: np.ndarray


@dataclass
class Dataset:
    uploaders: list
    ugcs: list
    triplets: list
    n_topics: int
    feature_dim: int
    tag_count: int
    # Split datasets keep the pre-split (population) histograms, where
    # histogram recomputation and the >=2-UGC ownership rule do not apply.
    population_histograms: bool = False
    generator_config: dict | None = None

    def ugc_by_id(self):
        return {u.ugc_id: u for u in self.ugcs}

    def uploader_by_id(self):
        return {u.uploader_id: u for u in self.uploaders}

    def validate(self):
        uploader_ids = {u.uploader_id for u in self.uploaders}
        ugc_ids = {c.ugc_id for c in self.ugcs}
        for profile in self.uploaders:
            h = np.asarray(profile.topic_histogram, dtype=np.float64)
            if h.shape != (self.n_topics,):
                raise DatasetError(
                    f"uploader {profile.uploader_id}: histogram length "
                    f"{h.shape} != n_topics {self.n_topics}"
                )
            if np.any(h < 0) or abs(h.sum() - 1.0) > HISTOGRAM_ATOL:
                raise DatasetError(
                    f"uploader {profile.uploader_id}: histogram entries must be "
                    ">= 0 and sum to 1"
                )
        owned = {}
        for c in self.ugcs:
            if c.uploader_id not in uploader_ids:
                raise DatasetError(f"ugc {c.ugc_id}: unknown uploader {c.uploader_id}")
            if not (0 <= c.topic < self.n_topics):
                raise DatasetError(f"ugc {c.ugc_id}: topic {c.topic} >= n_topics")
            if np.asarray(c.features).shape != (self.feature_dim,):
                raise DatasetError(f"ugc {c.ugc_id}: feature dim != {self.feature_dim}")
            owned.setdefault(c.uploader_id, set()).add(c.ugc_id)
        if not self.population_histograms:
            for uid in uploader_ids:
                n_owned = len(owned.get(uid, ()))
                if n_owned == 0:
                    raise DatasetError(f"uploader {uid} has no UGCs")
                if n_owned < 2:
                    raise DatasetError(f"uploader {uid} has < 2 UGCs")
        seen_pairs = set()
        for t in self.triplets:
            if t.uploader_id not in uploader_ids:
                raise DatasetError(f"triplet references unknown uploader {t.uploader_id}")
            if t.ugc_id not in ugc_ids:
                raise DatasetError(f"triplet references unknown ugc {t.ugc_id}")
            if not (0 <= t.tag_id < self.tag_count):
                raise DatasetError(f"triplet tag_id {t.tag_id} >= tag_count {self.tag_count}")
            pair = (t.ugc_id, t.tag_id)
            if pair in seen_pairs:
                raise DatasetError(f"duplicate (ugc_id, tag_id) pair {pair}")
            seen_pairs.add(pair)
        if not self.population_histograms:
            by_id = self.uploader_by_id()
            for uid, ugc_set in owned.items():
                ugcs = [c for c in self.ugcs if c.ugc_id in ugc_set]
                recomputed = compute_topic_histogram(ugcs, self.n_topics)
                stored = np.asarray(by_id[uid].topic_histogram, dtype=np.float64)
                if np.max(np.abs(recomputed - stored)) > HISTOGRAM_ATOL:
                    raise DatasetError(
                        f"uploader {uid}: stored topic_histogram does not match "
                        "recomputation from owned UGCs"
                    )


def compute_topic_histogram(ugcs_of_uploader, n_topics):
    """Fraction of the uploader's UGCs falling in each topic."""
    if not ugcs_of_uploader:
        raise DatasetError("uploader has no UGCs")
    topics = np.array([c.topic for c in ugcs_of_uploader])
    if np.any(topics < 0) or np.any(topics >= n_topics):
        raise DatasetError("topic index out of range")
    counts = np.bincount(topics, minlength=n_topics).astype(np.float64)
    return counts / counts.sum()


def _fmt(x):
    """17-significant-digit float formatting (lossless double round-trip)."""
    return format(float(x), ".17g")


def _vec_json(vec):
    return "[" + ",".join(_fmt(v) for v in vec) + "]"


def save_dataset(dataset: Dataset, path):
    """Write `dataset` to directory `path` in canonical, deterministic form."""
    dataset.validate()
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = {
        "format_version": 1,
        "n_topics": dataset.n_topics,
        "feature_dim": dataset.feature_dim,
        "tag_count": dataset.tag_count,
        "n_uploaders": len(dataset.uploaders),
        "n_ugcs": len(dataset.ugcs),
        "n_triplets": len(dataset.triplets),
        "population_histograms": dataset.population_histograms,
        "generator_config": dataset.generator_config,
    }
    (path / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    with open(path / "uploaders.jsonl", "w") as f:
        for u in sorted(dataset.uploaders, key=lambda u: u.uploader_id):
            f.write(
                '{"uploader_id":%d,"topic_histogram":%s}\n'
                % (u.uploader_id, _vec_json(u.topic_histogram))
            )
    with open(path / "ugcs.jsonl", "w") as f:
        for c in sorted(dataset.ugcs, key=lambda c: c.ugc_id):
            f.write(
                '{"ugc_id":%d,"uploader_id":%d,"topic":%d,"features":%s}\n'
                % (c.ugc_id, c.uploader_id, c.topic, _vec_json(c.features))
            )
    with open(path / "triplets.jsonl", "w") as f:
        for t in sorted(
            dataset.triplets, key=lambda t: (t.ugc_id, t.tag_id, t.uploader_id)
        ):
            f.write(
                '{"uploader_id":%d,"ugc_id":%d,"tag_id":%d}\n'
                % (t.uploader_id, t.ugc_id, t.tag_id)
            )


def _read_jsonl(path):
    records = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path.name}:{lineno}: parse failure: {exc}") from exc
    return records


def load_dataset(path) -> Dataset:
    """Load and validate a dataset directory; violations are rejected."""
    path = Path(path)
    meta_path = path / "meta.json"
    if not meta_path.exists():
        raise DatasetError(f"missing {meta_path}")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"meta.json: parse failure: {exc}") from exc
    uploaders = [
        UploaderProfile(r["uploader_id"], np.array(r["topic_histogram"], dtype=np.float64))
        for r in _read_jsonl(path / "uploaders.jsonl")
    ]
    ugcs = [
        UgcRecord(
            r["ugc_id"],
            r["uploader_id"],
            r["topic"],
            np.array(r["features"], dtype=np.float64),
        )
        for r in _read_jsonl(path / "ugcs.jsonl")
    ]
    triplets = [
        Triplet(r["uploader_id"], r["ugc_id"], r["tag_id"])
        for r in _read_jsonl(path / "triplets.jsonl")
    ]
    dataset = Dataset(
        uploaders=uploaders,
        ugcs=ugcs,
        triplets=triplets,
        n_topics=meta["n_topics"],
        feature_dim=meta["feature_dim"],
        tag_count=meta["tag_count"],
        population_histograms=meta.get("population_histograms", False),
        generator_config=meta.get("generator_config"),
    )
    dataset.validate()
    return dataset
