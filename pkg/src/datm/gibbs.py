"""Batch upward-downward Gibbs sampler for the deep gamma-Poisson model.

Intended as a correctness oracle on tiny corpora, not for real data.  The
theta conditional uses the rate ``c + q^(l)``, i.e. ``c - ln(1 - p^(l))`` with
``p^(l) = 1 - exp(-q^(l))``; this is the negative-binomial augmentation rate
implied by the q-recursion and is an interpretive choice, checked against
the conjugate single-topic case in the tests.
"""

from dataclasses import dataclass

import numpy as np

from .decoder import GlobalParams, init_global_params
from .sampler import _scatter_sum, _split_rows, q_chain
from .distributions import crt_sample


@dataclass
class GibbsState:
    """Local state: ``theta[l]`` (N x K_l), layer counts and table counts.

    ``x[l]`` is the K_{l-1} x K_l count matrix of layer l, ``m[l]`` the N x K_l
    per-document usage of layer-l topics, ``top`` the N x K_L table counts.
    """

    theta: list
    x: list = None
    m: list = None
    top: np.ndarray = None


def init_gibbs_state(num_docs, g, rng):
    L = g.num_layers
    theta = [None] * L
    shape = np.broadcast_to(g.r, (num_docs, g.widths[-1]))
    for l in range(L - 1, -1, -1):
        if l < L - 1:
            shape = theta[l + 1] @ g.phi[l + 1].T
        theta[l] = np.maximum(rng.gamma(np.maximum(shape, 1e-300)) / g.c[l], 1e-300)
    return GibbsState(theta)


def _upward(X, state, g, rng):
    L = g.num_layers
    N = X.shape[0]
    xs, ms = [], []
    below = X.astype(np.int64)
    for l in range(L):
        phi, th = g.phi[l], state.theta[l]
        if l > 0:
            below = crt_sample(below, np.maximum(th @ phi.T, 1e-300), rng)
        rows, cols, parts = _split_rows(below, lambda n, j: phi[j] * th[n], rng)
        xs.append(_scatter_sum(cols, parts, phi.shape[0]))
        m = _scatter_sum(rows, parts, N).astype(np.int64)
        ms.append(m)
        below = m
    top = crt_sample(below, np.maximum(g.r, 1e-300)[None, :], rng)
    return xs, ms, top


def gibbs_sweep(state, X, g, rng, update_phi=True, update_r=True):
    """One upward (counts) then downward (globals, theta) sweep, in place."""
    X = np.asarray(X.toarray() if hasattr(X, "toarray") else X)
    L = g.num_layers
    xs, ms, top = _upward(X, state, g, rng)
    state.x, state.m, state.top = xs, ms, top
    if update_phi:
        for l in range(L):
            a = g.eta[l] + xs[l]
            # column-wise Dirichlet via normalised gammas
            draw = rng.gamma(a)
            s = draw.sum(axis=0)
            bad = s <= 0
            draw[:, bad] = 1.0
            s[bad] = draw.shape[0]
            g.phi[l] = draw / s
    q = q_chain(g.c, L)
    N = X.shape[0]
    if update_r:
        K = g.widths[-1]
        shape = g.gamma0 / K + top.sum(axis=0)
        rate = g.c0 + N * q[L]
        g.r = np.maximum(rng.gamma(shape) / rate, 1e-300)
    for l in range(L - 1, -1, -1):
        prior = np.broadcast_to(g.r, ms[l].shape) if l == L - 1 else state.theta[l + 1] @ g.phi[l + 1].T
        rate = g.c[l] + q[l]
        state.theta[l] = np.maximum(rng.gamma(prior + ms[l]) / rate, 1e-300)
    return state


def gibbs_fit(X, g, sweeps, rng, burn_in=None, stride=1, state=None, update_phi=True,
              update_r=True, callback=None):
    """Run ``sweeps`` sweeps; return ``(state, samples)`` of post-burn-in snapshots.

    Each sample is ``(GlobalParams copy, layer-1 theta copy)``.
    """
    X = np.asarray(X.toarray() if hasattr(X, "toarray") else X)
    burn_in = sweeps // 2 if burn_in is None else burn_in
    state = state or init_gibbs_state(X.shape[0], g, rng)
    samples = []
    for it in range(sweeps):
        gibbs_sweep(state, X, g, rng, update_phi, update_r)
        if it >= burn_in and (it - burn_in) % stride == 0:
            samples.append((g.copy(), state.theta[0].copy()))
        if callback is not None:
            callback(it, state, g)
    return state, samples


def infer_theta(X, g, sweeps, rng, burn_in=None):
    """Gibbs inference of layer-1 weights for new documents with globals fixed.

    Returns the posterior-mean estimate averaged over post-burn-in sweeps.
    """
    g = g.copy()
    _, samples = gibbs_fit(X, g, sweeps, rng, burn_in, update_phi=False, update_r=False)
    return np.mean([th for _, th in samples], axis=0)


def gibbs_perplexity(split, widths, sweeps, rng, burn_in=None, stride=1, eta=None):
    """Train by Gibbs on the training part of ``split``; perplexity on its test part."""
    from .evaluation import perplexity_from_rates

    X = split.train.counts.toarray()
    g = init_global_params(X.shape[1], widths, rng, eta=eta)
    _, samples = gibbs_fit(X, g, sweeps, rng, burn_in, stride)
    rates = [th @ s.phi[0].T for s, th in samples]
    return perplexity_from_rates(split.test.counts, rates)
