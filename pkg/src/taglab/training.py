"""Estimation strategies, burn-in and adjustment training, prediction.

Four strategies are supported:

* ``none``        -- plain conditional scoring with the true uploader
* ``unawareness`` -- content scores only (gate forced to 1)
* ``averaged``    -- gate of the pool-mean uploader representation
* ``mc``          -- Monte-Carlo average of gates over uploaders drawn
                     with replacement from the empirical training pool

The ``mc`` strategy replaces the biased true uploader with random
surrogates from the population, first warming up on the plain
conditional for a few epochs.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .optim import OptimConfig

STRATEGIES = ("none", "unawareness", "averaged", "mc")


@dataclass
class TrainConfig:
    strategy: str = "mc"
    batch_size: int = 1024
    n_warm: int = 5
    max_epochs: int = 200
    n_samples: int = 1
    negatives_per_positive: int = 50
    seed: int = 0
    eval_every: int = 1
    patience: int = 20
    eval_n_samples: int | None = None
    optimizer: OptimConfig = field(default_factory=OptimConfig)

    def validate(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.n_samples < 1 or self.batch_size < 1 or self.n_warm < 0:
            raise ValueError("n_samples >= 1, batch_size >= 1, n_warm >= 0 required")
        if self.eval_n_samples is not None and self.eval_n_samples < 1:
            raise ValueError("eval_n_samples must be >= 1 when set")
        if self.negatives_per_positive < 1:
            raise ValueError("need at least one negative per positive")
        self.optimizer.validate()


class UploaderPool:
    """Empirical uploader distribution of a training split.

    One entry per training triplet, so draws follow the per-triplet
    empirical distribution of uploaders.
    """

    def __init__(self, histograms, entry_rows):
        self.histograms = np.asarray(histograms, dtype=np.float64)
        self.entry_rows = np.asarray(entry_rows, dtype=np.int64)
        if len(self.entry_rows) == 0:
            raise ValueError("empty uploader pool")

    @classmethod
    def from_dataset(cls, dataset):
        uploaders = sorted(dataset.uploaders, key=lambda u: u.uploader_id)
        row_of = {u.uploader_id: i for i, u in enumerate(uploaders)}
        hists = np.stack([u.topic_histogram for u in uploaders])
        entries = [row_of[t.uploader_id] for t in dataset.triplets]
        return cls(hists, entries)

    def __len__(self):
        return len(self.entry_rows)

    @property
    def mean_histogram(self):
        return self.histograms[self.entry_rows].mean(axis=0)


def bootstrap_sample(pool: UploaderPool, n, rng):
    """n uniform draws with replacement from the pool; returns histogram rows."""
    if n < 1:
        raise ValueError("n must be >= 1")
    draws = rng.integers(0, len(pool.entry_rows), size=n)
    return pool.entry_rows[draws]


def _content_scores_np(model, c, tag_ids):
    tag_ids = np.asarray(tag_ids)
    feats = np.broadcast_to(np.asarray(c, dtype=np.float64), (len(tag_ids), len(c)))
    with ad.no_grad():
        return model.content_scores(feats, tag_ids).value


def _gates_np(model, reprs, tag_ids):
    """Gate matrix of shape (n_uploaders, n_tags)."""
    m, t = len(reprs), len(tag_ids)
    u_rows = np.repeat(np.arange(m), t)
    tags = np.tile(np.asarray(tag_ids), m)
    with ad.no_grad():
        g = model.gates(np.asarray(reprs)[u_rows], tags).value
    return g.reshape(m, t)


def _reprs_np(model, histograms):
    with ad.no_grad():
        return model.uploader_reprs(np.atleast_2d(histograms)).value


def mc_estimate(
    model, c, tag_ids, pool, n_samples, rng, exhaustive=False, path="factorized"
):
    """Backdoor-adjusted scores: average joint scores over sampled uploaders.

    ``exhaustive`` averages over the whole pool (with multiplicity)
    instead of sampling.  The two paths are algebraically identical and
    exist to cross-check the factorization: ``factorized`` computes
    content * mean(gates); ``average_of_products`` averages the per
    -uploader joint scores.
    """
    if path not in ("factorized", "average_of_products"):
        raise ValueError(f"unknown path {path!r}")
    if exhaustive:
        rows = pool.entry_rows
    else:
        rows = bootstrap_sample(pool, n_samples, rng)
    reprs = _reprs_np(model, pool.histograms[rows])
    s_c = _content_scores_np(model, c, tag_ids)
    gates = _gates_np(model, reprs, tag_ids)
    if path == "factorized":
        return s_c * gates.mean(axis=0)
    return (s_c[None, :] * gates).mean(axis=0)


def averaged_estimate(model, c, tag_ids, pool):
    """Scores gated by the hypothetical averaged uploader (pool mean)."""
    reprs = _reprs_np(model, pool.mean_histogram)
    s_c = _content_scores_np(model, c, tag_ids)
    gates = _gates_np(model, reprs, tag_ids)
    return s_c * gates[0]


def strategy_scores(
    strategy, model, u_true_hist, c, tag_ids, pool, n_samples=1, rng=None
):
    """Per-strategy score vector over `tag_ids` for one UGC."""
    if strategy == "unawareness":
        return _content_scores_np(model, c, tag_ids)
    if strategy == "none":
        if u_true_hist is None:
            raise ValueError("strategy 'none' requires the true uploader histogram")
        reprs = _reprs_np(model, u_true_hist)
        s_c = _content_scores_np(model, c, tag_ids)
        return s_c * _gates_np(model, reprs, tag_ids)[0]
    if strategy == "averaged":
        return averaged_estimate(model, c, tag_ids, pool)
    if strategy == "mc":
        return mc_estimate(model, c, tag_ids, pool, n_samples, rng)
    raise ValueError(f"unknown strategy {strategy!r}")


def training_loss(scores, positive_index):
    """Softmax cross-entropy of the positive among the candidates."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or len(scores) < 2:
        raise ValueError("need one positive and at least one negative")
    z = scores - scores.max()
    return float(np.log(np.exp(z).sum()) - z[positive_index])


def rank_tags(scores, k_cut):
    """Descending-score ranking; ties broken by ascending tag id."""
    scores = np.asarray(scores)
    order = np.lexsort((np.arange(len(scores)), -scores))
    return order[:k_cut]


def predict_topk(model, c_new, pool, n_samples, k_cut, rng):
    """Top-K tags for a new UGC by the Monte-Carlo adjusted estimator."""
    if k_cut > model.tag_count:
        raise ValueError("k_cut exceeds tag_count")
    scores = mc_estimate(
        model, c_new, np.arange(model.tag_count), pool, n_samples, rng
    )
    return rank_tags(scores, k_cut)


# -- training ---------------------------------------------------------


class _TrainData:
    """Array views of a training split used by the mini-batch loop."""

    def __init__(self, dataset):
        ugcs = sorted(dataset.ugcs, key=lambda c: c.ugc_id)
        ugc_row = {c.ugc_id: i for i, c in enumerate(ugcs)}
        self.ugc_features = np.stack([c.features for c in ugcs])
        uploaders = sorted(dataset.uploaders, key=lambda u: u.uploader_id)
        up_row = {u.uploader_id: i for i, u in enumerate(uploaders)}
        self.uploader_hists = np.stack([u.topic_histogram for u in uploaders])
        self.triplet_ugc = np.array([ugc_row[t.ugc_id] for t in dataset.triplets])
        self.triplet_uploader = np.array(
            [up_row[t.uploader_id] for t in dataset.triplets]
        )
        self.triplet_tag = np.array([t.tag_id for t in dataset.triplets])
        self.tag_count = dataset.tag_count
        tag_sets = [set() for _ in ugcs]
        for t in dataset.triplets:
            tag_sets[ugc_row[t.ugc_id]].add(t.tag_id)
        self.ugc_tag_sets = tag_sets
        self.n_triplets = len(dataset.triplets)


def _sample_negatives(rng, data, ugc_rows, n_neg):
    out = rng.integers(0, data.tag_count, size=(len(ugc_rows), n_neg))
    for b, row_id in enumerate(ugc_rows):
        forbidden = data.ugc_tag_sets[row_id]
        row = out[b]
        bad = [i for i in range(n_neg) if row[i] in forbidden]
        while bad:
            row[bad] = rng.integers(0, data.tag_count, size=len(bad))
            bad = [i for i in bad if row[i] in forbidden]
    return out


def _batch_loss(model, data, batch_idx, strategy, config, rng, pool):
    b = len(batch_idx)
    ugc_rows = data.triplet_ugc[batch_idx]
    negatives = _sample_negatives(rng, data, ugc_rows, config.negatives_per_positive)
    cand = np.concatenate(
        [data.triplet_tag[batch_idx][:, None], negatives], axis=1
    )
    n_cand = cand.shape[1]
    tag_flat = cand.ravel()
    feat_flat = data.ugc_features[np.repeat(ugc_rows, n_cand)]
    s_c = ad.reshape(model.content_scores(feat_flat, tag_flat), (b, n_cand))
    if strategy == "unawareness":
        logits = s_c
    elif strategy == "none":
        hists = data.uploader_hists[data.triplet_uploader[batch_idx]]
        u = model.uploader_reprs(hists)
        u_rows = ad.gather_rows(u, np.repeat(np.arange(b), n_cand))
        gates = ad.reshape(model.gates(u_rows, tag_flat), (b, n_cand))
        logits = ad.mul(s_c, gates)
    elif strategy == "averaged":
        u_bar = model.uploader_reprs(pool.mean_histogram[None, :])
        u_rows = ad.gather_rows(u_bar, np.zeros(b * n_cand, dtype=np.int64))
        gates = ad.reshape(model.gates(u_rows, tag_flat), (b, n_cand))
        logits = ad.mul(s_c, gates)
    elif strategy == "mc":
        ns = config.n_samples
        rows = bootstrap_sample(pool, b * ns, rng)
        u = model.uploader_reprs(pool.histograms[rows])
        b_idx = np.repeat(np.arange(b), n_cand * ns)
        s_idx = np.tile(np.arange(ns), b * n_cand)
        u_idx = b_idx * ns + s_idx
        tag_mc = np.repeat(tag_flat, ns)
        u_rows = ad.gather_rows(u, u_idx)
        g = ad.reshape(model.gates(u_rows, tag_mc), (b * n_cand, ns))
        g_mean = ad.reshape(ad.mean(g, axis=1), (b, n_cand))
        logits = ad.mul(s_c, g_mean)
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    return ad.cross_entropy_with_logits(logits, 0)


def _run_epoch(model, data, strategy, config, epoch_tag, pool):
    rng = np.random.default_rng(
        np.random.SeedSequence([config.seed & 0xFFFFFFFF, 0xE, epoch_tag])
    )
    order = rng.permutation(data.n_triplets)
    losses = []
    for start in range(0, data.n_triplets, config.batch_size):
        batch = order[start : start + config.batch_size]
        if len(batch) < 2:
            continue
        loss = _batch_loss(model, data, batch, strategy, config, rng, pool)
        losses.append(float(loss.value))
        model.store.backward(loss)
        model.store.adam_step(config.optimizer)
    return float(np.mean(losses)) if losses else float("nan")


def burn_in(model, train, config: TrainConfig, data=None):
    """Warm-up: fit the plain conditional (strategy 'none') for n_warm epochs."""
    config.validate()
    if config.n_warm == 0:
        return model
    if data is None:
        data = _TrainData(train)
    model.set_graph(train)
    pool = UploaderPool.from_dataset(train)
    for e in range(config.n_warm):
        _run_epoch(model, data, "none", config, e, pool)
    return model


@dataclass
class TrainResult:
    history: list
    epochs_run: int
    best_epoch: int | None
    best_metric: float | None
    best_params: dict | None
    train_losses: list


def backdoor_adjust_train(model, train, config: TrainConfig, valid=None, data=None):
    """Adjustment phase: per-strategy training with optional early stopping.

    Early stopping monitors validation NDCG@10 with the configured
    patience (in evaluations); `max_epochs` is the hard cap.  Validation
    scoring for the Monte-Carlo strategy uses `eval_n_samples` draws
    when set (training itself keeps using `n_samples`), which makes the
    model-selection signal less noisy without changing the gradients.
    """
    config.validate()
    if data is None:
        data = _TrainData(train)
    model.set_graph(train)
    pool = UploaderPool.from_dataset(train)
    history = []
    train_losses = []
    best_metric, best_epoch, best_params = None, None, None
    stale = 0
    epochs_run = 0
    for e in range(config.max_epochs):
        loss = _run_epoch(model, data, config.strategy, config, 1_000_000 + e, pool)
        train_losses.append(loss)
        epochs_run = e + 1
        if valid is not None and (e + 1) % config.eval_every == 0:
            from .metrics import evaluate

            metrics = evaluate(
                model,
                config.strategy,
                valid,
                pool,
                n_samples=(
                    config.eval_n_samples
                    if config.eval_n_samples is not None
                    else config.n_samples
                ),
                cutoffs=(10,),
                seed=config.seed,
            )
            n10 = metrics.ndcg_at[10]
            history.append({"epoch": e + 1, "valid_ndcg10": n10})
            if best_metric is None or n10 > best_metric:
                best_metric, best_epoch = n10, e + 1
                best_params = {
                    k: p.value.copy() for k, p in model.store.params.items()
                }
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
    return TrainResult(
        history=history,
        epochs_run=epochs_run,
        best_epoch=best_epoch,
        best_metric=best_metric,
        best_params=best_params,
        train_losses=train_losses,
    )


def train_pipeline(model, train, config: TrainConfig, valid=None):
    """Burn-in followed by the adjustment phase; returns the TrainResult."""
    data = _TrainData(train)
    burn_in(model, train, config, data=data)
    return backdoor_adjust_train(model, train, config, valid=valid, data=data)
