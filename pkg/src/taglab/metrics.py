"""Ranking metrics and strategy evaluation on intervened test splits."""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .training import bootstrap_sample, strategy_scores, rank_tags
from . import autodiff as ad

METRICS_SCHEMA_VERSION = 1


@dataclass
class RankedPrediction:
    ugc_id: int
    ranked_tags: np.ndarray
    relevant_tags: set

    def validate(self):
        ranked = np.asarray(self.ranked_tags)
        if len(np.unique(ranked)) != len(ranked):
            raise ValueError("ranked_tags contains duplicates")
        if not self.relevant_tags:
            raise ValueError("relevant set is empty")


def recall_at_k(pred: RankedPrediction, k_cut) -> float:
    """Hits in the top k over min(k, number of relevant tags)."""
    if k_cut < 1:
        raise ValueError("k_cut must be >= 1")
    pred.validate()
    top = np.asarray(pred.ranked_tags)[:k_cut]
    hits = sum(1 for t in top if t in pred.relevant_tags)
    return hits / min(k_cut, len(pred.relevant_tags))


def ndcg_at_k(pred: RankedPrediction, k_cut) -> float:
    """Log2-discounted gain over the ideal ranking of the relevant set."""
    if k_cut < 1:
        raise ValueError("k_cut must be >= 1")
    pred.validate()
    top = np.asarray(pred.ranked_tags)[:k_cut]
    dcg = sum(
        1.0 / np.log2(r + 2) for r, t in enumerate(top) if t in pred.relevant_tags
    )
    n_ideal = min(k_cut, len(pred.relevant_tags))
    idcg = sum(1.0 / np.log2(r + 2) for r in range(n_ideal))
    return dcg / idcg


@dataclass
class Metrics:
    recall_at: dict
    ndcg_at: dict
    per_ugc_recall: dict
    per_ugc_ndcg: dict
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "schema_version": METRICS_SCHEMA_VERSION,
            "recall_at": {str(k): v for k, v in sorted(self.recall_at.items())},
            "ndcg_at": {str(k): v for k, v in sorted(self.ndcg_at.items())},
            "meta": self.meta,
        }

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n")


def _eval_rng(seed, ugc_id):
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, 0xEA, ugc_id]))


def evaluate(
    model,
    strategy,
    test,
    pool,
    n_samples=1,
    cutoffs=(10, 20),
    seed=0,
    meta=None,
    chunk_size=256,
):
    """Score every test UGC with >= 1 ground-truth tag and average metrics.

    Per-UGC rng streams derive from (seed, ugc_id), so results do not
    depend on evaluation order or chunking.
    """
    relevant = {}
    for t in test.triplets:
        relevant.setdefault(t.ugc_id, set()).add(t.tag_id)
    ugcs = [c for c in sorted(test.ugcs, key=lambda c: c.ugc_id) if relevant.get(c.ugc_id)]
    if not ugcs:
        raise ValueError("empty test set")
    up_hist = {u.uploader_id: u.topic_histogram for u in test.uploaders}
    n_tags = model.tag_count
    all_tags = np.arange(n_tags)
    max_k = max(cutoffs)
    per_recall = {k: [] for k in cutoffs}
    per_ndcg = {k: [] for k in cutoffs}

    for start in range(0, len(ugcs), chunk_size):
        chunk = ugcs[start : start + chunk_size]
        b = len(chunk)
        feats = np.stack([c.features for c in chunk])
        feat_flat = np.repeat(feats, n_tags, axis=0)
        tag_flat = np.tile(all_tags, b)
        with ad.no_grad():
            s_c = model.content_scores(feat_flat, tag_flat).value.reshape(b, n_tags)
            if strategy == "unawareness":
                scores = s_c
            elif strategy == "none":
                hists = np.stack([up_hist[c.uploader_id] for c in chunk])
                reprs = model.uploader_reprs(hists).value
                g = model.gates(
                    np.repeat(reprs, n_tags, axis=0), tag_flat
                ).value.reshape(b, n_tags)
                scores = s_c * g
            elif strategy == "averaged":
                u_bar = model.uploader_reprs(pool.mean_histogram[None, :]).value
                g = model.gates(np.repeat(u_bar, n_tags, axis=0), all_tags).value
                scores = s_c * g[None, :]
            elif strategy == "mc":
                rows = np.concatenate(
                    [
                        bootstrap_sample(pool, n_samples, _eval_rng(seed, c.ugc_id))
                        for c in chunk
                    ]
                )
                reprs = model.uploader_reprs(pool.histograms[rows]).value
                u_idx = np.repeat(np.arange(b * n_samples), n_tags)
                g = model.gates(
                    reprs[u_idx], np.tile(all_tags, b * n_samples)
                ).value.reshape(b, n_samples, n_tags)
                scores = s_c * g.mean(axis=1)
            else:
                raise ValueError(f"unknown strategy {strategy!r}")
        for i, c in enumerate(chunk):
            ranked = rank_tags(scores[i], max_k)
            pred = RankedPrediction(c.ugc_id, ranked, relevant[c.ugc_id])
            for k in cutoffs:
                per_recall[k].append(recall_at_k(pred, k))
                per_ndcg[k].append(ndcg_at_k(pred, k))

    return Metrics(
        recall_at={k: float(np.mean(per_recall[k])) for k in cutoffs},
        ndcg_at={k: float(np.mean(per_ndcg[k])) for k in cutoffs},
        per_ugc_recall={k: np.array(v) for k, v in per_recall.items()},
        per_ugc_ndcg={k: np.array(v) for k, v in per_ndcg.items()},
        meta=dict(meta or {}, strategy=strategy, n_samples=n_samples, seed=seed,
                  n_evaluated=len(ugcs)),
    )


def compare_significance(runs_a, runs_b) -> float:
    """One-sided Welch t-test p-value for mean(runs_a) > mean(runs_b)."""
    a = np.asarray(runs_a, dtype=np.float64)
    b = np.asarray(runs_b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("need at least 2 samples per side")
    if a.var(ddof=1) == 0.0 and b.var(ddof=1) == 0.0:
        diff = a.mean() - b.mean()
        return 0.5 if diff == 0 else (0.0 if diff > 0 else 1.0)
    result = stats.ttest_ind(a, b, equal_var=False, alternative="greater")
    return float(result.pvalue)
