"""Conditional scorers: NFM and LightGCN backbones.

Both expose the same contract: an unnormalized content score (real) and
an uploader gate in (0, 1); the joint score is their product.  Uploader
representations are weighted sums of trainable topic embeddings with the
uploader's topic histogram as weights.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import Tensor
from .optim import ParamStore

CHECKPOINT_FORMAT = 1


@dataclass
class Score:
    content_score: float
    uploader_gate: float

    @property
    def joint(self):
        return self.content_score * self.uploader_gate


def joint_score(content_score, gate) -> Score:
    if not (0.0 < gate < 1.0):
        raise ValueError("gate must lie strictly in (0, 1)")
    return Score(content_score, gate)


def uploader_repr(topic_table: Tensor, histogram) -> np.ndarray:
    """W_t @ histogram for a single histogram; exactly linear."""
    h = np.asarray(histogram, dtype=np.float64)
    table = topic_table.value if isinstance(topic_table, Tensor) else np.asarray(topic_table)
    if h.shape != (table.shape[1],):
        raise ValueError(
            f"histogram length {h.shape} does not match topic table {table.shape}"
        )
    return table @ h


def _init_mlp(params, rng, prefix, d_in, d_hidden, d_out):
    params[f"{prefix}_W1"] = Tensor(
        rng.normal(scale=np.sqrt(2.0 / d_in), size=(d_in, d_hidden)), requires_grad=True
    )
    params[f"{prefix}_b1"] = Tensor(np.zeros(d_hidden), requires_grad=True)
    params[f"{prefix}_W2"] = Tensor(
        rng.normal(scale=np.sqrt(2.0 / d_hidden), size=(d_hidden, d_out)),
        requires_grad=True,
    )
    params[f"{prefix}_b2"] = Tensor(np.zeros(d_out), requires_grad=True)


def _mlp(store, prefix, x):
    h = ad.relu(ad.matmul(x, store[f"{prefix}_W1"]) + store[f"{prefix}_b1"])
    return ad.matmul(h, store[f"{prefix}_W2"]) + store[f"{prefix}_b2"]


class NfmModel:
    """Neural factorization machine scorer with content and uploader branches.

    Each MLP has one ReLU hidden layer of width `embed_dim`; product and
    concatenation branches both map to `embed_dim` before the output MLP.
    The tag embedding table is shared by the two branches (one embedding
    per feature, factorization-machine style); only the branch MLPs and
    the output nonlinearity differ.
    """

    backbone = "nfm"

    def __init__(self, feature_dim, tag_count, n_topics, embed_dim=16, seed=0):
        self.feature_dim = feature_dim
        self.tag_count = tag_count
        self.n_topics = n_topics
        self.embed_dim = embed_dim
        self.seed = seed
        k = embed_dim
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF17]))
        bound = 1.0 / np.sqrt(k)
        params = {
            "topic_table": Tensor(
                rng.uniform(-bound, bound, size=(k, n_topics)), requires_grad=True
            )
        }
        params["tag_emb"] = Tensor(
            rng.uniform(-bound, bound, size=(tag_count, k)), requires_grad=True
        )
        for branch, d_x in (("c", feature_dim), ("u", k)):
            _init_mlp(params, rng, f"proj_{branch}", d_x, k, k)
            _init_mlp(params, rng, f"prod_{branch}", k, k, k)
            _init_mlp(params, rng, f"cat_{branch}", 2 * k, k, k)
            _init_mlp(params, rng, f"out_{branch}", 2 * k, k, 1)
        self.store = ParamStore(params)

    def config(self):
        return {
            "feature_dim": self.feature_dim,
            "tag_count": self.tag_count,
            "n_topics": self.n_topics,
            "embed_dim": self.embed_dim,
            "seed": self.seed,
        }

    def _branch(self, branch, x, tag_ids):
        e_t = ad.gather_rows(self.store["tag_emb"], tag_ids)
        x = ad.as_tensor(x)
        xp = _mlp(self.store, f"proj_{branch}", x)
        p = _mlp(self.store, f"prod_{branch}", ad.mul(e_t, xp))
        q = _mlp(self.store, f"cat_{branch}", ad.concat([e_t, xp], axis=1))
        out = _mlp(self.store, f"out_{branch}", ad.concat([p, q], axis=1))
        return ad.tensor_sum(out, axis=1)

    def content_scores(self, features, tag_ids) -> Tensor:
        """Unnormalized scores for row-aligned (features, tag_id) pairs."""
        return self._branch("c", features, tag_ids)

    def gates(self, uploader_reprs, tag_ids) -> Tensor:
        """Gates in (0, 1) for row-aligned (uploader repr, tag_id) pairs."""
        return ad.sigmoid(self._branch("u", uploader_reprs, tag_ids))

    def uploader_reprs(self, histograms) -> Tensor:
        return ad.matmul(ad.as_tensor(histograms), ad.transpose(self.store["topic_table"]))

    def set_graph(self, dataset):
        pass  # graph-free backbone


def build_bipartite_graph(tag_count, ugcs, triplets):
    """Symmetric degree-normalized tag-UGC adjacency from training triplets.

    Node order: tags [0, tag_count) then UGCs in the order of `ugcs`.
    Isolated nodes get zero rows (propagation yields zero vectors).
    """
    ugc_index = {c.ugc_id: i for i, c in enumerate(ugcs)}
    n = tag_count + len(ugcs)
    rows, cols = [], []
    for t in triplets:
        rows.append(t.tag_id)
        cols.append(tag_count + ugc_index[t.ugc_id])
    adj = sp.coo_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(n, n)
    )
    adj = adj + adj.T
    deg = np.asarray(adj.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    d_mat = sp.diags(inv_sqrt)
    return (d_mat @ adj @ d_mat).tocsr()


def lightgcn_propagate(adj_norm, embeddings):
    """One propagation step: normalized-adjacency product, nothing else."""
    return ad.spmm(adj_norm, embeddings)


class LightGcnModel:
    """LightGCN scorer over the tag-UGC bipartite graph of the train split.

    Tag representations average propagation layers 0..n_layers; unseen
    UGCs are scored through the content projection alone (cold start).
    The uploader gate uses layer-1 tag embeddings.
    """

    backbone = "lightgcn"

    def __init__(self, feature_dim, tag_count, n_topics, embed_dim=16, n_layers=2, seed=0):
        self.feature_dim = feature_dim
        self.tag_count = tag_count
        self.n_topics = n_topics
        self.embed_dim = embed_dim
        self.n_layers = n_layers
        self.seed = seed
        k = embed_dim
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x16C]))
        bound = 1.0 / np.sqrt(k)
        params = {
            "topic_table": Tensor(
                rng.uniform(-bound, bound, size=(k, n_topics)), requires_grad=True
            ),
            "tag_emb0": Tensor(
                rng.uniform(-bound, bound, size=(tag_count, k)), requires_grad=True
            ),
            # Small scale keeps initial bilinear scores moderate: propagated
            # features enter the score quadratically through proj_W, so a
            # fan-in style init would start with huge logits and an unstable
            # first few epochs.
            "proj_W": Tensor(
                rng.normal(scale=4.0 / feature_dim, size=(feature_dim, k)),
                requires_grad=True,
            ),
        }
        self.store = ParamStore(params)
        self.adj_norm = None
        self.graph_ugc_features = None
        self.graph_edges = None

    def config(self):
        return {
            "feature_dim": self.feature_dim,
            "tag_count": self.tag_count,
            "n_topics": self.n_topics,
            "embed_dim": self.embed_dim,
            "n_layers": self.n_layers,
            "seed": self.seed,
        }

    def set_graph(self, dataset):
        """Cache the bipartite graph built from the training split only."""
        ugcs = sorted(dataset.ugcs, key=lambda c: c.ugc_id)
        self.adj_norm = build_bipartite_graph(self.tag_count, ugcs, dataset.triplets)
        self.graph_ugc_features = np.stack([c.features for c in ugcs])
        ugc_index = {c.ugc_id: i for i, c in enumerate(ugcs)}
        self.graph_edges = [(t.tag_id, ugc_index[t.ugc_id]) for t in dataset.triplets]

    def _require_graph(self):
        if self.adj_norm is None:
            raise RuntimeError("LightGCN graph not set; call set_graph(train_dataset)")

    def _tag_reprs(self):
        """(final tag representations, layer-1 tag embeddings) as Tensors."""
        self._require_graph()
        x_ugc = ad.matmul(ad.as_tensor(self.graph_ugc_features), self.store["proj_W"])
        layer = ad.concat([self.store["tag_emb0"], x_ugc], axis=0)
        acc = layer
        layer1_tags = None
        for k in range(self.n_layers):
            layer = lightgcn_propagate(self.adj_norm, layer)
            if k == 0:
                layer1_tags = layer
            acc = ad.add(acc, layer)
        final = ad.mul(acc, 1.0 / (self.n_layers + 1))
        n_t = self.tag_count
        final_tags = ad.gather_rows(final, np.arange(n_t))
        if layer1_tags is None:  # n_layers == 0
            layer1_tags = self.store["tag_emb0"]
        else:
            layer1_tags = ad.gather_rows(layer1_tags, np.arange(n_t))
        return final_tags, layer1_tags

    def content_scores(self, features, tag_ids) -> Tensor:
        final_tags, _ = self._tag_reprs()
        t_rows = ad.gather_rows(final_tags, tag_ids)
        x = ad.matmul(ad.as_tensor(features), self.store["proj_W"])
        return ad.tensor_sum(ad.mul(t_rows, x), axis=1)

    def gates(self, uploader_reprs, tag_ids) -> Tensor:
        _, layer1_tags = self._tag_reprs()
        t_rows = ad.gather_rows(layer1_tags, tag_ids)
        u = ad.as_tensor(uploader_reprs)
        return ad.sigmoid(ad.tensor_sum(ad.mul(t_rows, u), axis=1))

    def uploader_reprs(self, histograms) -> Tensor:
        return ad.matmul(ad.as_tensor(histograms), ad.transpose(self.store["topic_table"]))


def save_checkpoint(model, path):
    path = Path(path)
    blob = {
        "format_version": CHECKPOINT_FORMAT,
        "backbone": model.backbone,
        "config": model.config(),
        "params": {
            name: {"shape": list(p.value.shape), "data": p.value.ravel().tolist()}
            for name, p in sorted(model.store.params.items())
        },
    }
    if model.backbone == "lightgcn" and model.adj_norm is not None:
        blob["graph"] = {
            "edges": [[int(a), int(b)] for a, b in model.graph_edges],
            "ugc_features": model.graph_ugc_features.tolist(),
        }
    path.write_text(json.dumps(blob, sort_keys=True) + "\n")


def load_checkpoint(path):
    blob = json.loads(Path(path).read_text())
    if blob.get("format_version") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format: {blob.get('format_version')}")
    cfg = blob["config"]
    if blob["backbone"] == "nfm":
        model = NfmModel(**cfg)
    elif blob["backbone"] == "lightgcn":
        model = LightGcnModel(**cfg)
    else:
        raise ValueError(f"unknown backbone {blob['backbone']!r}")
    for name, rec in blob["params"].items():
        model.store[name].value = np.array(rec["data"], dtype=np.float64).reshape(
            rec["shape"]
        )
    if blob["backbone"] == "lightgcn" and "graph" in blob:
        feats = np.array(blob["graph"]["ugc_features"], dtype=np.float64)
        edges = blob["graph"]["edges"]
        n = model.tag_count + len(feats)
        rows = [e[0] for e in edges]
        cols = [model.tag_count + e[1] for e in edges]
        adj = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        adj = adj + adj.T
        deg = np.asarray(adj.sum(axis=1)).ravel()
        inv_sqrt = np.zeros_like(deg)
        nz = deg > 0
        inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
        d_mat = sp.diags(inv_sqrt)
        model.adj_norm = (d_mat @ adj @ d_mat).tocsr()
        model.graph_ugc_features = feats
        model.graph_edges = [(int(a), int(b)) for a, b in edges]
    return model


def make_model(backbone, feature_dim, tag_count, n_topics, embed_dim=16, n_layers=2, seed=0):
    if backbone == "nfm":
        return NfmModel(feature_dim, tag_count, n_topics, embed_dim=embed_dim, seed=seed)
    if backbone == "lightgcn":
        return LightGcnModel(
            feature_dim, tag_count, n_topics, embed_dim=embed_dim, n_layers=n_layers, seed=seed
        )
    raise ValueError(f"unknown backbone {backbone!r}")
