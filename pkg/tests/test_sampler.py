import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from datm.decoder import GlobalParams, generate_synthetic, init_global_params
from datm.distributions import rng_stream
from datm.sampler import (AugmentedCounts, SamplerState, allocate_counts, effective_step_sizes,
                          fim_phi, fim_phi_inverse, fim_r, gamma_phi, gamma_r, project_simplex,
                          q_chain, step_size, tlasgr_step, update_M, update_phi, update_r)


def test_step_size_schedule():
    s = SamplerState(step_a=0.3, step_b=50.0, step_c=1.0)
    assert step_size(s, 0) == 0.3
    assert step_size(s, 50) == pytest.approx(0.15)
    d = SamplerState()
    vals = np.array([step_size(d, t) for t in range(0, 100001, 50)])
    assert np.all(vals > 0) and np.all(np.diff(vals) <= 0)
    with pytest.raises(ValueError):
        step_size(d, -1)


def test_q_chain_unit_scale():
    q = q_chain([1.0, 1.0, 1.0], 3)
    assert q[0] == 1.0
    for a, b in zip(q[:-1], q[1:]):
        assert b == pytest.approx(math.log(1 + a))


def test_project_simplex_rules():
    out = project_simplex(np.array([[0.5, -1.0], [-0.2, -2.0], [0.7, -3.0]]))
    np.testing.assert_allclose(out[:, 0], [0.5 / 1.2, 0.0, 0.7 / 1.2])
    np.testing.assert_allclose(out[:, 1], 1 / 3)


# ---------------------------------------------------------------------------
# count allocation


def test_allocate_single_topic_equals_word_sums():
    g = GlobalParams([np.full((5, 1), 0.2)], np.ones(1))
    X = np.random.default_rng(0).poisson(2.0, size=(8, 5))
    th = [np.ones((8, 1))]
    c = allocate_counts(X, th, g, rng_stream(0))
    np.testing.assert_array_equal(c.x[0][:, 0], X.sum(axis=0))
    assert c.totals[0][0] == X.sum()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_allocate_conserves_tokens(seed):
    rng = np.random.default_rng(seed)
    g = init_global_params(9, [4, 3], rng_stream(seed))
    X = rng.poisson(1.5, size=(6, 9))
    th = [rng.gamma(1.0, size=(6, 4)), rng.gamma(1.0, size=(6, 3))]
    c = allocate_counts(X, th, g, rng_stream(seed + 1))
    np.testing.assert_array_equal(c.x[0].sum(axis=1), X.sum(axis=0))
    np.testing.assert_array_equal(c.doc_counts[0].sum(axis=1), X.sum(axis=1))
    # layer-2 customers are CRT tables of layer-1 usage: never more than the usage
    assert np.all(c.x[1].sum(axis=1) <= c.doc_counts[0].sum(axis=0))
    assert c.x[1].sum() == c.doc_counts[1].sum()
    assert np.all(c.top_x <= c.doc_counts[1].sum(axis=0))
    assert np.all(c.top_x >= 0)
    assert c.top_q == pytest.approx(6 * q_chain(g.c, 2)[2])


def test_allocate_two_topics_matches_enumeration():
    phi = np.array([[0.6, 0.1], [0.4, 0.9]])
    g = GlobalParams([phi], np.ones(2))
    X = np.array([[4, 1]])
    th = [np.array([[1.0, 2.5]])]
    # exhaustive expectation of the count given to topic 1, per word
    expect = []
    for v in range(2):
        p = phi[v, 0] * th[0][0, 0] / (phi[v] @ th[0][0])
        n = X[0, v]
        expect.append(sum(j * math.comb(n, j) * p**j * (1 - p) ** (n - j) for j in range(n + 1)))
    rng = rng_stream(1)
    reps = np.array([allocate_counts(X, th, g, rng).x[0][:, 0] for _ in range(10**4)])
    se = reps.std(axis=0) / 100
    assert np.all(np.abs(reps.mean(axis=0) - expect) < 3 * se)


# ---------------------------------------------------------------------------
# global updates


def random_column_problem(seed, V=6, K=3):
    rng = np.random.default_rng(seed)
    phi = rng.dirichlet(np.ones(V), size=K).T
    x = rng.poisson(3.0, size=(V, K)).astype(float)
    return phi, x, x.sum(axis=0), rng.uniform(1, 50, K)


def test_update_phi_zero_step_is_identity():
    phi, x, tot, M = random_column_problem(0)
    out = update_phi(phi, x, tot, M, 0.1, 5.0, 0.0, rng_stream(0))
    np.testing.assert_allclose(out, phi, atol=1e-15)


def test_update_phi_fixed_point():
    _, x, tot, M = random_column_problem(1)
    rho, eta, V = 3.0, 0.05, x.shape[0]
    star = (rho * x + eta) / (rho * tot + eta * V)
    out = update_phi(star, x, tot, M, eta, rho, 0.5, rng_stream(0), noise=False)
    np.testing.assert_allclose(out, star, atol=1e-14)


def test_update_phi_ten_thousand_steps_stay_on_simplex():
    rng = rng_stream(2)
    phi, x, tot, M = random_column_problem(2, V=20, K=5)
    for i in range(10**4):
        if i % 100 == 0:
            x = rng.poisson(rng.uniform(0, 5), size=x.shape).astype(float)
            tot = x.sum(axis=0)
        phi = update_phi(phi, x, tot, M, 0.01, rng.uniform(0.5, 100), rng.uniform(0, 0.5), rng)
        assert phi.min() >= 0
        assert np.abs(phi.sum(axis=0) - 1).max() < 1e-9


def test_update_r_identity_fixed_point_and_positivity():
    r = np.array([0.5, 2.0, 0.01])
    x = np.array([3.0, 0.0, 7.0])
    out = update_r(r, x, 1.3, 10.0, 1.0, 1.0, 4.0, 0.0, rng_stream(0))
    np.testing.assert_allclose(out, r)
    rho, gamma0, c0, q = 4.0, 1.0, 1.0, 1.3
    star = (rho * x + gamma0 / 3) / (c0 + rho * q)
    out = update_r(star, x, q, 10.0, gamma0, c0, rho, 0.7, rng_stream(0), noise=False)
    np.testing.assert_allclose(out, star, rtol=1e-14)
    rng = rng_stream(3)
    for _ in range(10**4):
        r = update_r(r, rng.poisson(1.0, 3).astype(float), 0.7, 35.0, 1.0, 1.0, 50.0, 0.5, rng)
        assert np.all(r > 0)


def counts_with(totals, top_q=1.0):
    return AugmentedCounts(x=[None] * len(totals), totals=[np.asarray(t, float) for t in totals],
                           top_x=np.zeros(1), top_q=top_q)


def test_update_M_rules():
    s = SamplerState()
    update_M(s, counts_with([[4.0, 0.0]], 2.0), rho=3.0, eps=0.5)
    np.testing.assert_allclose(s.M[0], [12.0, s.M_floor])
    assert s.M_top == 6.0
    before = s.M[0].copy()
    update_M(s, counts_with([[100.0, 100.0]]), rho=3.0, eps=0.0)
    np.testing.assert_array_equal(s.M[0], before)
    update_M(s, counts_with([[1.0, 2.0]], 5.0), rho=2.0, eps=1.0)
    np.testing.assert_allclose(s.M[0], [2.0, 4.0])
    assert s.M_top == 10.0
    for _ in range(2000):
        update_M(s, counts_with([[7.0, 0.5]], 1.0), rho=2.0, eps=0.01)
    np.testing.assert_allclose(s.M[0], [14.0, 1.0], rtol=1e-6)


def test_tlasgr_step_keeps_invariants_and_advances():
    g = init_global_params(30, [6, 3], rng_stream(4))
    X = np.random.default_rng(4).poisson(1.0, size=(20, 30))
    rng = rng_stream(5)
    s = SamplerState(step_a=0.5)
    for t in range(200):
        th = [rng.gamma(1.0, size=(20, 6)), rng.gamma(1.0, size=(20, 3))]
        c = allocate_counts(X, th, g, rng)
        tlasgr_step(g, s, c, 10.0, rng)
        g.check()
    assert s.t == 200


def test_effective_step_sizes_differ_across_layers():
    true = init_global_params(40, [8, 4], rng_stream(6))
    corpus, thetas = generate_synthetic(true, 60, rng_stream(7))
    X = corpus.counts.toarray()
    g = init_global_params(40, [8, 4], rng_stream(8))
    s = SamplerState()
    rng = rng_stream(9)
    for _ in range(50):
        tlasgr_step(g, s, allocate_counts(X, thetas, g, rng), 1.0, rng)
    e1, e2 = effective_step_sizes(s)
    assert e1.mean() != pytest.approx(e2.mean(), rel=0.05)
    assert e1.shape == (8,) and e2.shape == (4,)


# ---------------------------------------------------------------------------
# Fisher blocks


def test_fim_inverse_identity_on_random_points():
    rng = np.random.default_rng(10)
    for _ in range(100):
        V = rng.integers(3, 12)
        phi = rng.dirichlet(np.ones(V))
        M = rng.uniform(0.1, 100)
        prod = fim_phi(phi[:-1], M) @ fim_phi_inverse(phi[:-1], M)
        np.testing.assert_allclose(prod, np.eye(V - 1), atol=1e-8)


def test_gamma_corrections():
    phi = np.array([0.1, 0.2, 0.7])
    np.testing.assert_allclose(gamma_phi(phi, 4.0), (1 - 3 * phi) / 4.0)
    np.testing.assert_allclose(gamma_phi(np.full(5, 0.2), 3.0), 0.0, atol=1e-15)
    np.testing.assert_array_equal(gamma_r(np.array([0.3, 9.0]), 8.0), [0.125, 0.125])
    np.testing.assert_allclose(fim_r(np.array([0.5, 2.0]), 3.0), np.diag([6.0, 1.5]))


def test_gamma_phi_is_divergence_of_inverse_fim():
    # reduced-mean coordinates (first V-1 entries): Gamma_v = sum_j dG_vj / dvarphi_j
    phi = np.array([0.15, 0.25, 0.1, 0.5])
    M, h = 2.5, 1e-6
    vp = phi[:-1]
    div = np.zeros(vp.size)
    for j in range(vp.size):
        e = np.zeros(vp.size)
        e[j] = h
        div += (fim_phi_inverse(vp + e, M)[:, j] - fim_phi_inverse(vp - e, M)[:, j]) / (2 * h)
    np.testing.assert_allclose(gamma_phi(phi, M)[:-1], div, atol=1e-8)
