"""
Recovering planted topics
=========================

Generate a corpus from known topics, train the hybrid sampler/encoder model
on it, and compare what it learned against the truth and against the batch
Gibbs sampler.  Takes about a minute on one core.
"""

import time

import numpy as np

from datm import distributions as D
from datm.corpus import split_heldout
from datm.decoder import GlobalParams, generate_synthetic
from datm.evaluation import export_topic_tree, match_topics, perplexity
from datm.gibbs import gibbs_perplexity
from datm.trainer import TrainConfig, Trainer

# ten topics, each living on its own block of ten words
V, K = 100, 10
rng = D.rng_stream(0)
phi = np.full((V, K), 1e-3)
for k in range(K):
    phi[10 * k:10 * (k + 1), k] += rng.dirichlet(np.ones(10))
phi /= phi.sum(axis=0)
truth = GlobalParams([phi], np.full(K, 0.3), c=[0.3 / 20])
corpus, _ = generate_synthetic(truth, 2000, rng)
print(corpus.num_docs, "documents,", int(corpus.counts.sum()), "tokens")

# hold out 30% of every document's tokens for perplexity
split = split_heldout(corpus, 0.7, D.rng_stream(0, 1))

cfg = TrainConfig(widths=(10,), batch_size=200, step_a=0.1, iterations=5000, burn_in=2500,
                  num_samples=5, seed=0)
tr = Trainer(split.train, cfg)
t0 = time.perf_counter()
tr.run(callback=lambda t: t.iteration % 1000 == 0 and print(
    f"  iter {t.iteration:5d}  ELBO/doc {np.mean(t.trace[-100:]):9.2f}"))
print(f"trained in {time.perf_counter() - t0:.0f}s")

learned = np.mean([s.phi[0] for s in tr.samples], axis=0)
cos = match_topics(learned, phi)
print("cosine to each true topic:", np.round(np.sort(cos)[::-1], 3))
# a miss usually shows up as two true topics merged into one learned topic
# plus a learned topic with almost no weight

print("held-out perplexity, encoder:", round(perplexity(split, tr.samples, tr.enc), 2))
print("held-out perplexity, Gibbs:  ",
      round(gibbs_perplexity(split, [10], 300, D.rng_stream(1), burn_in=150, stride=5), 2))

tree = export_topic_tree(tr.g, [f"w{v}" for v in range(V)], top_words=5)
for node in tree.nodes[:3]:
    print(f"topic {node.topic}: r={node.r:.2f}", " ".join(node.words))
