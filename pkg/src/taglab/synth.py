"""Confounded dataset synthesis and topic-ratio intervention splits.

The generator samples an explicit causal graph: an uploader's latent
propensity drives both the topics of her UGCs (and hence their content
features) and, through a tag-bias vector whose direction follows her
dominant topic, the tags she attaches.  ``bias_strength`` scales the
uploader-to-tag edge; zero severs it.
"""

import math
from dataclasses import dataclass, asdict

import numpy as np

from .data import Dataset, DatasetError, Triplet, UgcRecord, UploaderProfile, compute_topic_histogram


@dataclass
class GenConfig:
    n_uploaders: int
    n_tags: int
    ugc_per_uploader: tuple = (2, 6)
    tags_per_ugc: tuple = (1, 3)
    n_topics: int = 2
    feature_dim: int = 32
    bias_strength: float = 1.0
    noise_sigma: float = 0.5
    seed: int = 0
    # Invented mechanism knobs, echoed into meta.json.
    dirichlet_concentration: float = 1.5
    style_scale: float = 0.5
    affinity_scale: float = 3.0
    bias_noise: float = 0.5

    def validate(self):
        if min(self.n_uploaders, self.n_tags, self.n_topics, self.feature_dim) < 1:
            raise ValueError("all counts must be >= 1")
        lo, hi = self.ugc_per_uploader
        if lo < 2 or hi < lo:
            raise ValueError("ugc_per_uploader range must satisfy 2 <= min <= max")
        tlo, thi = self.tags_per_ugc
        if tlo < 1 or thi < tlo:
            raise ValueError("tags_per_ugc range must satisfy 1 <= min <= max")
        if thi > self.n_tags:
            raise ValueError(
                f"tags_per_ugc max {thi} exceeds n_tags {self.n_tags}"
            )
        if self.bias_strength < 0 or self.noise_sigma < 0:
            raise ValueError("bias_strength and noise_sigma must be >= 0")


@dataclass
class InterventionSpec:
    x: int
    split_fractions: tuple = (0.7, 0.15, 0.15)
    seed: int = 0

    def validate(self):
        if not (1 <= self.x <= 9):
            raise ValueError("x must lie in [1, 9]")
        f = self.split_fractions
        if len(f) != 3 or any(v <= 0 for v in f) or abs(sum(f) - 1.0) > 1e-9:
            raise ValueError("split_fractions must be three positive values summing to 1")


def sample_latents(config: GenConfig, rng) -> dict:
    """Draw the latent variables of the causal graph (exposed for inspection)."""
    n_tp, d = config.n_topics, config.feature_dim
    topic_prototypes = rng.normal(size=(n_tp, d))
    tag_prototypes = rng.normal(size=(config.n_tags, d)) / math.sqrt(d)
    # One systematic bias direction per topic; an uploader inherits the
    # direction of their dominant topic, so bias is systematic, not noise.
    topic_bias_dirs = rng.normal(size=(n_tp, config.n_tags))
    if n_tp == 2:
        topic_bias_dirs[1] = -topic_bias_dirs[0]

    propensities = rng.dirichlet([config.dirichlet_concentration] * n_tp, size=config.n_uploaders)
    styles = rng.normal(scale=config.style_scale, size=(config.n_uploaders, d))
    bias_mags = np.abs(rng.normal(size=config.n_uploaders))
    bias_eps = rng.normal(scale=config.bias_noise, size=(config.n_uploaders, config.n_tags))
    dominant = propensities.argmax(axis=1)
    tag_biases = bias_mags[:, None] * topic_bias_dirs[dominant] + bias_eps
    return {
        "topic_prototypes": topic_prototypes,
        "tag_prototypes": tag_prototypes,
        "topic_bias_dirs": topic_bias_dirs,
        "propensities": propensities,
        "styles": styles,
        "tag_biases": tag_biases,
    }


def generate(config: GenConfig) -> Dataset:
    """Sample a confounded dataset; a pure function of `config`."""
    config.validate()
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    n_tp, d = config.n_topics, config.feature_dim
    latents = sample_latents(config, rng)
    topic_prototypes = latents["topic_prototypes"]
    tag_prototypes = latents["tag_prototypes"]
    propensities = latents["propensities"]
    styles = latents["styles"]
    tag_biases = latents["tag_biases"]

    ugcs, triplets = [], []
    ugc_id = 0
    lo, hi = config.ugc_per_uploader
    tlo, thi = config.tags_per_ugc
    for uid in range(config.n_uploaders):
        n_ugc = int(rng.integers(lo, hi + 1))
        topics = rng.choice(n_tp, size=n_ugc, p=propensities[uid])
        for topic in topics:
            features = (
                topic_prototypes[topic]
                + styles[uid]
                + rng.normal(scale=config.noise_sigma, size=d)
            )
            affinity = config.affinity_scale * (tag_prototypes @ features)
            logits = affinity + config.bias_strength * tag_biases[uid]
            n_sel = int(rng.integers(tlo, thi + 1))
            # Gumbel top-k: sampling without replacement from softmax(logits).
            gumbel = -np.log(-np.log(rng.uniform(size=config.n_tags)))
            selected = np.argsort(logits + gumbel)[::-1][:n_sel]
            ugcs.append(UgcRecord(ugc_id, uid, int(topic), features))
            for tag in sorted(int(t) for t in selected):
                triplets.append(Triplet(uid, ugc_id, tag))
            ugc_id += 1

    owned = {}
    for c in ugcs:
        owned.setdefault(c.uploader_id, []).append(c)
    uploaders = [
        UploaderProfile(uid, compute_topic_histogram(owned[uid], n_tp))
        for uid in range(config.n_uploaders)
    ]
    dataset = Dataset(
        uploaders=uploaders,
        ugcs=ugcs,
        triplets=triplets,
        n_topics=n_tp,
        feature_dim=d,
        tag_count=config.n_tags,
        generator_config=asdict(config),
    )
    dataset.validate()
    return dataset


def apply_filters(dataset: Dataset, min_tag_usage=None, min_uploader_ugcs=None) -> Dataset:
    """Optional post-generation filters; ids are re-densified afterwards."""
    ugcs = list(dataset.ugcs)
    triplets = list(dataset.triplets)
    if min_tag_usage is not None:
        usage = {}
        for t in triplets:
            usage[t.tag_id] = usage.get(t.tag_id, 0) + 1
        keep_tags = {tag for tag, n in usage.items() if n >= min_tag_usage}
        triplets = [t for t in triplets if t.tag_id in keep_tags]
        tagged = {t.ugc_id for t in triplets}
        ugcs = [c for c in ugcs if c.ugc_id in tagged]
    if min_uploader_ugcs is not None:
        counts = {}
        for c in ugcs:
            counts[c.uploader_id] = counts.get(c.uploader_id, 0) + 1
        keep_up = {uid for uid, n in counts.items() if n >= min_uploader_ugcs}
        ugcs = [c for c in ugcs if c.uploader_id in keep_up]
        kept_ugc_ids = {c.ugc_id for c in ugcs}
        triplets = [t for t in triplets if t.ugc_id in kept_ugc_ids]

    uploader_map = {uid: i for i, uid in enumerate(sorted({c.uploader_id for c in ugcs}))}
    ugc_map = {cid: i for i, cid in enumerate(sorted({c.ugc_id for c in ugcs}))}
    tag_map = {tag: i for i, tag in enumerate(sorted({t.tag_id for t in triplets}))}
    new_ugcs = [
        UgcRecord(ugc_map[c.ugc_id], uploader_map[c.uploader_id], c.topic, c.features)
        for c in ugcs
    ]
    new_triplets = [
        Triplet(uploader_map[t.uploader_id], ugc_map[t.ugc_id], tag_map[t.tag_id])
        for t in triplets
    ]
    owned = {}
    for c in new_ugcs:
        owned.setdefault(c.uploader_id, []).append(c)
    uploaders = [
        UploaderProfile(uid, compute_topic_histogram(owned[uid], dataset.n_topics))
        for uid in sorted(owned)
    ]
    filtered = Dataset(
        uploaders=uploaders,
        ugcs=new_ugcs,
        triplets=new_triplets,
        n_topics=dataset.n_topics,
        feature_dim=dataset.feature_dim,
        tag_count=len(tag_map),
        generator_config=dataset.generator_config,
    )
    filtered.validate()
    return filtered


def topic_counts(dataset: Dataset):
    counts = np.zeros(dataset.n_topics, dtype=int)
    for c in dataset.ugcs:
        counts[c.topic] += 1
    return counts


def _subset(dataset: Dataset, ugc_ids) -> Dataset:
    ugc_ids = set(ugc_ids)
    ugcs = [c for c in dataset.ugcs if c.ugc_id in ugc_ids]
    triplets = [t for t in dataset.triplets if t.ugc_id in ugc_ids]
    present = {c.uploader_id for c in ugcs}
    # Histograms stay population statistics from the pre-split dataset.
    uploaders = [u for u in dataset.uploaders if u.uploader_id in present]
    return Dataset(
        uploaders=uploaders,
        ugcs=ugcs,
        triplets=triplets,
        n_topics=dataset.n_topics,
        feature_dim=dataset.feature_dim,
        tag_count=dataset.tag_count,
        population_histograms=True,
        generator_config=dataset.generator_config,
    )


def intervened_split(dataset: Dataset, spec: InterventionSpec):
    """UGC-disjoint train/valid/test with topic ratios X:(10-X) vs (10-X):X."""
    spec.validate()
    if dataset.n_topics != 2:
        raise ValueError("intervened_split requires exactly 2 topics")
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    pools = [
        [c.ugc_id for c in dataset.ugcs if c.topic == topic] for topic in (0, 1)
    ]
    for topic in (0, 1):
        rng.shuffle(pools[topic])
    n0, n1 = len(pools[0]), len(pools[1])
    x = spec.x
    ftr, fva, fte = spec.split_fractions
    p_train0, p_eval0 = x / 10.0, (10 - x) / 10.0
    need0 = ftr * p_train0 + (fva + fte) * p_eval0
    need1 = ftr * (1 - p_train0) + (fva + fte) * (1 - p_eval0)
    total = min(n0 / need0 if need0 > 0 else np.inf,
                n1 / need1 if need1 > 0 else np.inf,
                n0 + n1)
    total = int(math.floor(total))
    while total > 0:
        t = int(round(ftr * total))
        v = int(round(fva * total))
        s = total - t - v
        a0 = int(round(t * p_train0))
        v0 = int(round(v * p_eval0))
        s0 = int(round(s * p_eval0))
        if a0 + v0 + s0 <= n0 and (t - a0) + (v - v0) + (s - s0) <= n1:
            break
        total -= 1
    else:
        raise ValueError(
            f"insufficient UGCs to realize X={x}: topic counts are {n0} and {n1}"
        )
    if min(t, v, s) < 1 or min(a0, v0, s0, t - a0, v - v0, s - s0) < 0:
        raise ValueError(
            f"insufficient UGCs to realize X={x}: topic counts are {n0} and {n1}"
        )
    it0 = iter(pools[0])
    it1 = iter(pools[1])
    def take(it, n):
        return [next(it) for _ in range(n)]
    train_ids = take(it0, a0) + take(it1, t - a0)
    valid_ids = take(it0, v0) + take(it1, v - v0)
    test_ids = take(it0, s0) + take(it1, s - s0)
    return _subset(dataset, train_ids), _subset(dataset, valid_ids), _subset(dataset, test_ids)
