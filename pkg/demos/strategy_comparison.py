"""Train all four strategies on one intervened corpus and compare.

Small scale (500 uploaders, 125 tags) so the whole script runs in a few
minutes on one CPU core. The four strategies differ only in how the
uploader gate is used at training and scoring time:

  none         plain conditional with the true uploader
  unawareness  content only, gate forced to 1
  averaged     gate of the pool-mean uploader representation
  mc           Monte-Carlo average of gates over pool draws

Run: python3 demos/strategy_comparison.py [backbone]  (default lightgcn)
"""

import sys
import time

import numpy as np

from taglab.backbones import make_model
from taglab.metrics import evaluate
from taglab.synth import GenConfig, InterventionSpec, generate, intervened_split
from taglab.training import TrainConfig, UploaderPool, train_pipeline

STRATEGIES = ("none", "unawareness", "averaged", "mc")


def main():
    backbone = sys.argv[1] if len(sys.argv) > 1 else "lightgcn"
    d = generate(GenConfig(n_uploaders=500, n_tags=125, ugc_per_uploader=(2, 8),
                           bias_strength=4.0, seed=0))
    train, valid, test = intervened_split(d, InterventionSpec(x=3, seed=0))
    pool = UploaderPool.from_dataset(train)
    print(f"backbone {backbone}: train {len(train.ugcs)} UGCs, "
          f"test {len(test.ugcs)} UGCs, topic mix flipped 3:7 -> 7:3\n")

    t0 = time.time()
    rows = []
    for strategy in STRATEGIES:
        model = make_model(backbone, d.feature_dim, d.tag_count, d.n_topics, seed=0)
        cfg = TrainConfig(strategy=strategy, batch_size=1024, n_warm=5,
                          max_epochs=30, eval_every=2, patience=100,
                          eval_n_samples=25, seed=0)
        result = train_pipeline(model, train, cfg, valid=valid)
        for name, p in model.store.params.items():
            p.value = result.best_params[name]
        ns = 25 if strategy == "mc" else 1
        m = evaluate(model, strategy, test, pool, n_samples=ns, cutoffs=(10, 20),
                     seed=0)
        rows.append((strategy, result.best_epoch, m))
        print(f"{strategy:12s} best epoch {result.best_epoch:3d}  "
              f"test N@10 {m.ndcg_at[10]:.4f}  R@10 {m.recall_at[10]:.4f}  "
              f"[{time.time() - t0:.0f}s]")

    best = max(rows, key=lambda r: r[2].ndcg_at[10])
    print(f"\nbest on the intervened test split: {best[0]} "
          f"(N@10 {best[2].ndcg_at[10]:.4f})")
    print("Note: with the population-level uploader histograms used here,")
    print("the topic-ratio intervention is a covariate shift -- per-example")
    print("conditional scoring transfers, so 'none' is a strong baseline;")
    print("gaps between strategies are small and seed-dependent.")


if __name__ == "__main__":
    main()
