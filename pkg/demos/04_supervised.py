"""
Topic features for classification
=================================

Three classes that differ only in which topics they favour.  The supervised
model concatenates every layer's topic weights and feeds them to a Bayesian
softmax; predictions average over draws of both the topic weights and the
class weights.
"""

import numpy as np
from scipy import sparse

from datm import distributions as D
from datm.corpus import Corpus
from datm.decoder import GlobalParams, generate_synthetic
from datm.evaluation import classification_error
from datm.supervised import SupervisedConfig, SupervisedTrainer, predict
from datm.trainer import TrainConfig

rng = D.rng_stream(11)
phi = rng.dirichlet(np.full(100, 0.1), size=10).T
rows, labels = [], []
for c in range(3):
    r = np.full(10, 0.05)
    r[3 * c:3 * c + 3] = 1.0  # class c leans on topics 3c..3c+2
    docs, _ = generate_synthetic(GlobalParams([phi], r, c=[0.1]), 600, rng)
    rows.append(docs.counts)
    labels += [c + 1] * 600
perm = rng.permutation(len(labels))
counts, labels = sparse.vstack(rows).tocsr()[perm], np.array(labels)[perm]
train = Corpus(counts[:1200], labels=labels[:1200])
test = Corpus(counts[1200:], labels=labels[1200:])

cfg = TrainConfig(widths=(10,), batch_size=100, step_a=0.1, iterations=0, burn_in=0, seed=0)
for head in ("linear", "nonlinear"):
    sup = SupervisedTrainer(train, cfg, SupervisedConfig(head=head, unsup_epochs=30,
                                                         sup_epochs=60, warmup_epochs=10))
    sup.run()
    tr = sup.trainer
    pred, probs = predict(test.counts, tr.enc, tr.g, sup.cls, n_collect=50,
                          rng=D.rng_stream(0), return_probs=True)
    print(f"{head:9s} head: test error {classification_error(pred, test.labels):.2f}%,"
          f" mean confidence {probs.max(axis=1).mean():.2f}")
