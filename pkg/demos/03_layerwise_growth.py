"""
Growing a deep model one layer at a time
========================================

Start from a generous first-layer width, train, drop the topics whose
top-layer weight ``r`` has shrunk below a threshold, then stack a new layer
on top and repeat.  The corpus here comes from a two-layer ground truth with
eight word-level topics and three themes.
"""

import numpy as np

from datm import distributions as D
from datm.decoder import GlobalParams, generate_synthetic
from datm.evaluation import export_topic_tree, match_topics
from datm.trainer import TrainConfig, train_layerwise

rng = D.rng_stream(3)
V, K1, K2 = 60, 8, 3
phi1 = np.full((V, K1), 1e-3)
for k in range(K1):
    phi1[rng.choice(V, 8, replace=False), k] += rng.dirichlet(np.ones(8))
phi1 /= phi1.sum(axis=0)
# each theme mixes a few word-level topics
phi2 = np.full((K1, K2), 0.02)
phi2[[0, 1, 2], 0] = 1.0
phi2[[3, 4, 5], 1] = 1.0
phi2[[5, 6, 7], 2] = 1.0
phi2 /= phi2.sum(axis=0)
truth = GlobalParams([phi1, phi2], np.full(K2, 1.0), c=[0.5, 0.2])
corpus, _ = generate_synthetic(truth, 1500, rng)

cfg = TrainConfig(K1_max=24, num_layers=2, prune_u=0.05, stage_iterations=3000, burn_in=1500,
                  batch_size=100, num_samples=5, step_a=0.1, seed=0)
res = train_layerwise(corpus, cfg)
for st in res.stages:
    print(f"layer {st['layer']}: kept {st['width']} of {st['max_width']} topics")

# pruning should land near the true width; the true topics share words, so
# individual matches are looser than on disjoint blocks (see demo 02)
cos = match_topics(res.g.phi[0], phi1)
print("best cosine per true layer-1 topic:", np.round(cos, 2))
print("top-layer weights r:", np.round(np.sort(res.g.r)[::-1], 2))

# a shrunk top-layer r marks a topic the data barely uses; the surviving
# second-layer topics should each load on a handful of layer-1 topics
tree = export_topic_tree(res.g, [f"w{v}" for v in range(V)], top_words=4, threshold=0.15)
for node in tree.nodes:
    if node.layer == 2:
        kids = tree.children(2, node.topic)
        print(f"theme {node.topic} (r={node.r:.2f}) -> layer-1 topics",
              [ck for _, ck, _ in kids])
