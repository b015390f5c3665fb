"""The deep gamma-Poisson decoder (DLDA / PGBN).

Layer indices in code are 0-based: ``phi[0]`` is the word-topic matrix
(V x K_1), ``phi[l]`` maps layer l+1 topics onto layer l topics
(K_l x K_{l+1}), and ``theta[l]`` holds the layer-(l+1) topic weights with
documents as rows.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse, special

from .corpus import Corpus

RATE_FLOOR = 1e-10


@dataclass
class GlobalParams:
    """Topic matrices, top-layer shapes and the model hyperparameters.

    ``c[l]`` is the gamma rate of the prior on ``theta[l]`` (fixed, default 1).
    ``eta[l]`` is the Dirichlet concentration of the columns of ``phi[l]``.
    """

    phi: list
    r: np.ndarray
    eta: list = None
    gamma0: float = 1.0
    c0: float = 1.0
    c: list = None

    def __post_init__(self):
        self.phi = [np.asarray(p, dtype=float) for p in self.phi]
        self.r = np.asarray(self.r, dtype=float)
        if self.eta is None:
            self.eta = [1.0 / p.shape[1] for p in self.phi]
        if self.c is None:
            self.c = [1.0] * len(self.phi)
        for a, b in zip(self.phi[:-1], self.phi[1:]):
            if a.shape[1] != b.shape[0]:
                raise ValueError("adjacent topic matrices have inconsistent shapes")
        if self.r.shape != (self.phi[-1].shape[1],):
            raise ValueError("r must have one entry per top-layer topic")

    @property
    def num_layers(self):
        return len(self.phi)

    @property
    def widths(self):
        return [p.shape[1] for p in self.phi]

    @property
    def vocab_size(self):
        return self.phi[0].shape[0]

    def copy(self):
        return GlobalParams([p.copy() for p in self.phi], self.r.copy(), list(self.eta),
                            self.gamma0, self.c0, list(self.c))

    def check(self, atol=1e-9):
        for l, p in enumerate(self.phi):
            if p.min() < 0 or np.abs(p.sum(axis=0) - 1.0).max() > atol:
                raise AssertionError(f"phi[{l}] has a column off the simplex")
        if not np.all(self.r > 0):
            raise AssertionError("r must be strictly positive")


def init_global_params(vocab_size, widths, rng, eta=None, gamma0=1.0, c0=1.0, r0=1.0):
    """Random simplex columns (uniform plus jitter) and ``r = r0``."""
    dims = [vocab_size] + list(widths)
    if min(dims) < 1:
        raise ValueError("all widths must be >= 1")
    phi = []
    for rows, cols in zip(dims[:-1], dims[1:]):
        p = 0.2 + rng.random((rows, cols))
        phi.append(p / p.sum(axis=0))
    return GlobalParams(phi, np.full(widths[-1], float(r0)), eta, gamma0, c0)


def project_topic(g, layer, topic):
    """Project topic ``topic`` of ``layer`` (both 1-based) onto the vocabulary."""
    if not 1 <= layer <= g.num_layers:
        raise IndexError("layer out of range")
    if not 1 <= topic <= g.widths[layer - 1]:
        raise IndexError("topic out of range")
    v = g.phi[layer - 1][:, topic - 1]
    for t in range(layer - 2, -1, -1):
        v = g.phi[t] @ v
    return v / v.sum()


def projected_topics(g, layer):
    """All topics of ``layer`` (1-based) projected to words, as a V x K_l matrix."""
    m = g.phi[layer - 1]
    for t in range(layer - 2, -1, -1):
        m = g.phi[t] @ m
    return m / m.sum(axis=0)


def poisson_loglik(x, g, theta1):
    """Poisson log-likelihood of counts ``x`` given layer-1 weights.

    Works on a single document (1-d) or on rows of a matrix (returns one value
    per row).  Rates are floored at ``RATE_FLOOR`` before the log.
    """
    x = np.asarray(x, dtype=float)
    rate = np.maximum(np.asarray(theta1, dtype=float) @ g.phi[0].T, RATE_FLOOR)
    return np.sum(x * np.log(rate) - rate - special.gammaln(x + 1.0), axis=-1)


def conditional_theta_shape(g, theta_next, layer):
    """Gamma shape of the prior on ``theta[layer]`` (0-based).

    For the top layer this is ``r``; otherwise ``theta_next @ phi[layer+1].T``.
    """
    if layer == g.num_layers - 1:
        return g.r
    return np.asarray(theta_next) @ g.phi[layer + 1].T


def generate_synthetic(g, num_docs, rng, return_latents=True):
    """Ancestral sampling of ``num_docs`` documents.

    Returns ``(corpus, thetas)`` where ``thetas[l]`` is the ``num_docs x K``
    matrix of true layer-(l+1) weights.
    """
    L = g.num_layers
    thetas = [None] * L
    shape = np.broadcast_to(g.r, (num_docs, g.widths[-1]))
    for l in range(L - 1, -1, -1):
        if l < L - 1:
            shape = thetas[l + 1] @ g.phi[l + 1].T
        thetas[l] = rng.gamma(np.maximum(shape, 1e-300)) / g.c[l]
    counts = rng.poisson(thetas[0] @ g.phi[0].T)
    corpus = Corpus(sparse.csr_matrix(counts))
    return (corpus, thetas) if return_latents else corpus
