"""Topic-layer-adaptive stochastic-gradient Riemannian MCMC for the globals.

Each topic column is preconditioned by the inverse of its Fisher block, which
reduces to dividing a single step size by the running count statistic M_k of
that topic.  Layer statistics come from augmenting the observed counts given
encoder samples of theta (one upward pass per mini-batch).
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .distributions import crt_sample


@dataclass
class SamplerState:
    """Running Fisher statistics and the step-size schedule.

    ``M[l]`` holds one value per topic of layer l (0-based); ``M_top`` is the
    statistic used for ``r``.
    """

    M: list = field(default_factory=list)
    M_top: float = 0.0
    t: int = 0
    step_a: float = 0.01
    step_b: float = 1000.0
    step_c: float = 0.75
    M_floor: float = 1e-3
    initialized: bool = False

    def copy(self):
        return SamplerState([m.copy() for m in self.M], self.M_top, self.t, self.step_a,
                            self.step_b, self.step_c, self.M_floor, self.initialized)


@dataclass
class AugmentedCounts:
    """Mini-batch latent counts.

    ``x[l]`` is the K_{l-1} x K_l matrix of counts allocated to each topic of
    layer l (0-based), ``totals[l]`` its column sums, ``top_x`` the top-layer
    table counts summed over documents and ``top_q`` the matching sum of
    q^(L+1).
    """

    x: list
    totals: list
    top_x: np.ndarray
    top_q: float
    doc_counts: list = None  # per-document m^{(l)(l+1)}, N x K_l


def step_size(state, t=None):
    t = state.t if t is None else t
    if t < 0:
        raise ValueError("t must be nonnegative")
    return state.step_a * (1.0 + t / state.step_b) ** (-state.step_c)


def q_chain(c, num_layers):
    """q^(1..L+1) with q^(1)=1 and q^(l+1) = ln(1 + q^(l)/c^(l+1))."""
    q = [1.0]
    for l in range(num_layers):
        q.append(float(np.log1p(q[-1] / c[l])))
    return q


def _split_rows(counts, weights, rng):
    """Multinomially split each nonzero ``counts[n, j]`` over topics.

    ``weights(rows, cols)`` returns the unnormalised allocation weights for the
    listed nonzero cells.  Returns the per-cell parts (nnz x K) with the cell
    coordinates.
    """
    rows, cols = np.nonzero(counts)
    vals = counts[rows, cols].astype(np.int64)
    w = weights(rows, cols)
    s = w.sum(axis=1, keepdims=True)
    w = np.where(s > 0, w / np.where(s > 0, s, 1.0), 1.0 / w.shape[1])
    parts = rng.multinomial(vals, w)
    return rows, cols, parts


def _scatter_sum(index, parts, size):
    """Sum rows of ``parts`` grouped by ``index`` into ``size`` buckets."""
    if index.size == 0:
        return np.zeros((size, parts.shape[1]))
    S = sparse.csr_matrix((np.ones(index.size), (index, np.arange(index.size))),
                          shape=(size, index.size))
    return np.asarray(S @ parts, dtype=float)


def allocate_counts(X, thetas, g, rng):
    """Upward count augmentation for a mini-batch given theta samples.

    Word counts are split over layer-1 topics with probabilities proportional
    to ``phi_vk * theta_kn``.  Each deeper layer draws CRT table counts from
    the per-document topic usage below it (the NB -> Poisson augmentation)
    and splits them through the next topic matrix.
    """
    X = np.asarray(X)
    N = X.shape[0]
    L = g.num_layers
    xs, totals, docs = [], [], []
    below = X
    for l in range(L):
        phi, th = g.phi[l], thetas[l]
        if l > 0:
            # customers = usage of layer-l topics, concentration = prior shape
            below = crt_sample(below.astype(np.int64), np.maximum(th @ phi.T, 1e-300), rng)
        rows, cols, parts = _split_rows(below, lambda n, j: phi[j] * th[n], rng)
        xl = _scatter_sum(cols, parts, phi.shape[0])
        m = _scatter_sum(rows, parts, N)
        xs.append(xl)
        totals.append(xl.sum(axis=0))
        docs.append(m)
        below = m
    top = crt_sample(below.astype(np.int64), np.maximum(g.r, 1e-300)[None, :], rng)
    q = q_chain(g.c, L)
    return AugmentedCounts(xs, totals, top.sum(axis=0).astype(float), N * q[L], docs)


def project_simplex(phi):
    """Clamp negatives to zero and renormalise each column.

    Columns with no positive mass are reset to the uniform point.
    """
    phi = np.maximum(phi, 0.0)
    s = phi.sum(axis=0)
    bad = s <= 0
    s = np.where(bad, 1.0, s)
    out = phi / s
    if np.any(bad):
        out[:, bad] = 1.0 / phi.shape[0]
    return out


def update_M(state, counts, rho, eps=None):
    """Annealed average of the expected per-topic counts."""
    eps = step_size(state) if eps is None else eps
    if not state.initialized:
        state.M = [np.maximum(rho * t, state.M_floor) for t in counts.totals]
        state.M_top = max(rho * counts.top_q, state.M_floor)
        state.initialized = True
        return state
    state.M = [np.maximum((1 - eps) * m + eps * rho * t, state.M_floor)
               for m, t in zip(state.M, counts.totals)]
    state.M_top = max((1 - eps) * state.M_top + eps * rho * counts.top_q, state.M_floor)
    return state


def update_phi(phi, x, total, M, eta, rho, eps, rng, noise=True):
    """One preconditioned Langevin step for every column of ``phi``.

    ``x`` are the mini-batch counts allocated to each column (same shape as
    ``phi``), ``total`` their column sums and ``M`` the per-column Fisher
    statistic.  The O(V) diagonal-noise form is used, then projected back
    onto the simplex.
    """
    V = phi.shape[0]
    step = eps / M
    drift = (rho * x + eta) - (rho * total + eta * V) * phi
    new = phi + step * drift
    if noise:
        new = new + np.sqrt(2.0 * step * np.maximum(phi, 0.0)) * rng.standard_normal(phi.shape)
    return project_simplex(new)


def update_r(r, top_x, top_q, M_top, gamma0, c0, rho, eps, rng, noise=True, floor=1e-10):
    """Preconditioned Langevin step for ``r`` with reflection at zero."""
    K = r.shape[0]
    step = eps / M_top
    new = r + step * ((rho * top_x + gamma0 / K) - r * (c0 + rho * top_q))
    if noise:
        new = new + np.sqrt(2.0 * step * r) * rng.standard_normal(K)
    return np.maximum(np.abs(new), floor)


def tlasgr_step(g, state, counts, rho, rng, noise=True):
    """Update M, every topic matrix and r in place; advance the step counter."""
    eps = step_size(state)
    update_M(state, counts, rho, eps)
    for l in range(g.num_layers):
        g.phi[l] = update_phi(g.phi[l], counts.x[l], counts.totals[l], state.M[l],
                              g.eta[l], rho, eps, rng, noise)
    g.r = update_r(g.r, counts.top_x, counts.top_q, state.M_top, g.gamma0, g.c0, rho, eps,
                   rng, noise)
    state.t += 1
    return g, state


def effective_step_sizes(state, t=None):
    """Per-layer arrays of eps_t / M_k."""
    eps = step_size(state, t)
    return [eps / m for m in state.M]


# ---------------------------------------------------------------------------
# Fisher blocks under the reduced-mean parameterisation


def fim_phi(varphi, M):
    """Fisher block of a topic in reduced-mean coordinates (first V-1 entries)."""
    varphi = np.asarray(varphi, dtype=float)
    last = 1.0 - varphi.sum()
    n = varphi.size
    return M * (np.diag(1.0 / varphi) + np.ones((n, n)) / last)


def fim_phi_inverse(varphi, M):
    varphi = np.asarray(varphi, dtype=float)
    return (np.diag(varphi) - np.outer(varphi, varphi)) / M


def fim_r(r, M_top):
    return M_top * np.diag(1.0 / np.asarray(r, dtype=float))


def gamma_phi(phi, M):
    """Gamma correction ``(1 - V phi_v) / M`` for a full simplex vector."""
    phi = np.asarray(phi, dtype=float)
    return (1.0 - phi.size * phi) / M


def gamma_r(r, M_top):
    return np.full(np.shape(r), 1.0 / M_top)
