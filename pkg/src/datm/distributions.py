"""Special functions, random variates and closed-form divergences.

Everything here is vectorised over numpy arrays.  Random draws take an explicit
``numpy.random.Generator``; use :func:`rng_stream` to derive independent,
reproducible substreams from a ``(seed, stream_id)`` pair.
"""

import numpy as np
from scipy import special

EULER_GAMMA = float(np.euler_gamma)

# Weibull shapes below this are clamped before Gamma(1 + 1/k) is evaluated.
WEIBULL_K_MIN = 0.05

# default shape augmentation for the rejection-sampling reparameterisation
RSVI_B = 10


def rng_stream(seed, stream_id=0):
    """Return a generator for substream ``stream_id`` of ``seed``.

    Equal ``(seed, stream_id)`` pairs give bit-identical sequences; distinct
    stream ids are independent (``SeedSequence`` spawn keys).
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.PCG64(ss))


def softplus(x):
    """ln(1 + e^x) without overflow."""
    x = np.asarray(x, dtype=float)
    return np.where(x > 0, x + np.log1p(np.exp(-np.abs(x))), np.log1p(np.exp(np.minimum(x, 0.0))))


def softplus_inv(y):
    """Inverse of :func:`softplus` for y > 0."""
    y = np.asarray(y, dtype=float)
    return np.where(y > 30, y + np.log(-np.expm1(-y)), np.log(np.expm1(y)))


def sigmoid(x):
    return special.expit(x)


def _check_positive(x, name):
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError(f"{name} must be > 0")
    return x


def lgamma(x):
    return special.gammaln(_check_positive(x, "x"))


def digamma(x):
    return special.digamma(_check_positive(x, "x"))


def uniform_open(rng, size):
    """Uniform(0, 1) draws with exact zeros redrawn."""
    eps = rng.random(size)
    bad = eps == 0.0
    while np.any(bad):
        eps[bad] = rng.random(int(bad.sum()))
        bad = eps == 0.0
    return eps


# ---------------------------------------------------------------------------
# Weibull


def weibull_sample(k, lam, eps):
    """Reparameterised Weibull draw ``lam * (-ln(1 - eps)) ** (1/k)``."""
    eps = np.asarray(eps, dtype=float)
    if np.any((eps <= 0.0) | (eps >= 1.0)):
        raise ValueError("eps must lie in the open interval (0, 1)")
    return lam * (-np.log1p(-eps)) ** (1.0 / np.asarray(k, dtype=float))


def weibull_mean(k, lam):
    k = np.maximum(np.asarray(k, dtype=float), WEIBULL_K_MIN)
    return lam * np.exp(special.gammaln(1.0 + 1.0 / k))


def weibull_logpdf(x, k, lam):
    z = x / lam
    return np.log(k) - np.log(lam) + (k - 1.0) * np.log(z) - z**k


def weibull_cdf(x, k, lam):
    return -np.expm1(-((np.asarray(x, dtype=float) / lam) ** k))


def weibull_gamma_kl(k, lam, alpha, beta):
    """KL(Weibull(k, lam) || Gamma(alpha, rate=beta)), analytic."""
    k = np.asarray(k, dtype=float)
    lam = np.asarray(lam, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    return (
        -alpha * np.log(lam)
        + EULER_GAMMA * alpha / k
        + np.log(k)
        + beta * lam * np.exp(special.gammaln(1.0 + 1.0 / k))
        - EULER_GAMMA
        - 1.0
        - alpha * np.log(beta)
        + special.gammaln(alpha)
    )


def weibull_gamma_kl_grad(k, lam, alpha, beta):
    """Partials of :func:`weibull_gamma_kl` w.r.t. ``(k, lam, alpha)``."""
    inv_k = 1.0 / k
    g = np.exp(special.gammaln(1.0 + inv_k))
    d_k = -EULER_GAMMA * alpha * inv_k**2 + inv_k - beta * lam * g * special.digamma(1.0 + inv_k) * inv_k**2
    d_lam = -alpha / lam + beta * g
    d_alpha = -np.log(lam) + EULER_GAMMA * inv_k - np.log(beta) + special.digamma(alpha)
    return d_k, d_lam, d_alpha


# ---------------------------------------------------------------------------
# Gamma


def gamma_logpdf(x, alpha, beta):
    return alpha * np.log(beta) - special.gammaln(alpha) + (alpha - 1.0) * np.log(x) - beta * x


def gamma_gamma_kl(alpha_q, beta_q, alpha_p, beta_p):
    """KL(Gamma(alpha_q, rate beta_q) || Gamma(alpha_p, rate beta_p))."""
    return (
        (alpha_q - alpha_p) * special.digamma(alpha_q)
        - special.gammaln(alpha_q)
        + special.gammaln(alpha_p)
        + alpha_p * (np.log(beta_q) - np.log(beta_p))
        + alpha_q * (beta_p - beta_q) / beta_q
    )


def gamma_gamma_kl_grad(alpha_q, scale_q, alpha_p, beta_p):
    """Partials of the gamma KL w.r.t. ``(alpha_q, scale_q, alpha_p)``.

    The variational gamma is parameterised by its scale here because that is
    how the encoder produces it.
    """
    d_aq = (alpha_q - alpha_p) * special.polygamma(1, alpha_q) + beta_p * scale_q - 1.0
    d_scale = -alpha_p / scale_q + alpha_q * beta_p
    d_ap = special.digamma(alpha_p) - special.digamma(alpha_q) - np.log(scale_q) - np.log(beta_p)
    return d_aq, d_scale, d_ap


def mt_proposal(a, eps):
    """Marsaglia-Tsang proposal for Gamma(a, 1) at standard-normal ``eps``."""
    return (a - 1.0 / 3.0) * (1.0 + eps / np.sqrt(9.0 * a - 3.0)) ** 3


def _mt_accepted_noise(a, rng):
    """Accepted normal noise of the Marsaglia-Tsang sampler, per entry of ``a``."""
    a = np.asarray(a, dtype=float)
    if np.any(a < 1.0):
        raise ValueError("Marsaglia-Tsang needs shape >= 1; increase B")
    d = a - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    eps = np.empty(a.shape)
    todo = np.ones(a.shape, dtype=bool)
    while np.any(todo):
        n = int(todo.sum())
        e = rng.standard_normal(n)
        log_u = np.log(uniform_open(rng, n))
        dd, cc = d[todo], c[todo]
        v = (1.0 + cc * e) ** 3
        with np.errstate(invalid="ignore", divide="ignore"):
            ok = (v > 0) & (log_u < 0.5 * e**2 + dd - dd * v + dd * np.log(v))
        idx = np.flatnonzero(todo)
        eps.flat[idx[ok]] = e[ok]
        todo.flat[idx[ok]] = False
    return eps


def gamma_reparam_value(alpha, scale, eps, u):
    """Gamma(alpha, scale) value rebuilt from recorded noise.

    ``u`` has a trailing axis of length B holding the boosting uniforms.
    """
    alpha = np.asarray(alpha, dtype=float)
    B = u.shape[-1]
    z = mt_proposal(alpha + B, eps)
    if B:
        i = np.arange(B)
        z = z * np.exp(np.sum(np.log(u) / (alpha[..., None] + i), axis=-1))
    return scale * z


def gamma_reparam_grad(alpha, scale, eps, u):
    """Pathwise partials ``(dz/dalpha, dz/dscale)`` holding the noise fixed."""
    alpha = np.asarray(alpha, dtype=float)
    B = u.shape[-1]
    z = gamma_reparam_value(alpha, scale, eps, u)
    a = alpha + B
    s = np.sqrt(9.0 * a - 3.0)
    v = 1.0 + eps / s
    dv = -4.5 * eps / s**3
    h = (a - 1.0 / 3.0) * v**3
    dh = v**3 + (a - 1.0 / 3.0) * 3.0 * v**2 * dv
    dlog = dh / h
    if B:
        i = np.arange(B)
        dlog = dlog - np.sum(np.log(u) / (alpha[..., None] + i) ** 2, axis=-1)
    return z * dlog, z / scale


def gamma_sample_reparam(alpha, beta, rng, B=RSVI_B):
    """Gamma(alpha, rate beta) draw plus the noise that produced it.

    Returns ``(value, (eps, u))``; replaying ``gamma_reparam_value(alpha,
    1/beta, eps, u)`` reproduces ``value`` exactly.
    """
    alpha = np.asarray(alpha, dtype=float)
    if B < 0 or int(B) != B:
        raise ValueError("B must be a nonnegative integer")
    eps = _mt_accepted_noise(alpha + B, rng)
    u = uniform_open(rng, alpha.shape + (int(B),))
    value = gamma_reparam_value(alpha, 1.0 / np.asarray(beta, dtype=float), eps, u)
    return value, (eps, u)


def gamma_sample(alpha, beta, rng, B=RSVI_B):
    """Exact Gamma(alpha, rate beta) variates via shape-augmented Marsaglia-Tsang."""
    return gamma_sample_reparam(alpha, beta, rng, B)[0]


# ---------------------------------------------------------------------------
# count augmentation kernels


def crt_sample(m, r, rng):
    """Chinese restaurant table counts: sum_i Bernoulli(r / (r + i)), i < m."""
    m = np.asarray(m, dtype=np.int64)
    r = np.broadcast_to(np.asarray(r, dtype=float), m.shape)
    if np.any(m < 0):
        raise ValueError("customer counts must be nonnegative")
    flat_m = m.ravel()
    total = int(flat_m.sum())
    out = np.zeros(flat_m.shape, dtype=np.int64)
    if total == 0:
        return out.reshape(m.shape)
    owner = np.repeat(np.arange(flat_m.size), flat_m)
    starts = np.cumsum(flat_m) - flat_m
    i = np.arange(total) - np.repeat(starts, flat_m)
    rr = r.ravel()[owner]
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(i == 0, 1.0, rr / (rr + i))
    hits = rng.random(total) < p
    out += np.bincount(owner[hits], minlength=flat_m.size)
    return out.reshape(m.shape)


def sumlog_sample(x, p, rng):
    """Sum of ``x`` iid logarithmic(p) variates."""
    x = np.asarray(x, dtype=np.int64)
    p = np.broadcast_to(np.asarray(p, dtype=float), x.shape)
    flat = x.ravel()
    out = np.zeros(flat.shape, dtype=np.int64)
    total = int(flat.sum())
    if total:
        owner = np.repeat(np.arange(flat.size), flat)
        draws = rng.logseries(p.ravel()[owner])
        out += np.bincount(owner, weights=draws, minlength=flat.size).astype(np.int64)
    return out.reshape(x.shape)


def multinomial_split(total, probs, rng, atol=1e-8):
    """Split integer ``total`` into parts with probabilities ``probs``.

    ``probs`` may carry leading batch axes that broadcast against ``total``.
    """
    probs = np.asarray(probs, dtype=float)
    s = probs.sum(axis=-1)
    if np.any(probs < 0) or np.any(np.abs(s - 1.0) > atol):
        raise ValueError("probs must lie on the simplex")
    probs = probs / s[..., None]
    return rng.multinomial(np.asarray(total, dtype=np.int64), probs)


def gaussian_kl_std(mu, sigma):
    """KL(N(mu, diag(sigma^2)) || N(0, I)) summed over all entries."""
    return 0.5 * float(np.sum(mu**2 + sigma**2 - 1.0 - 2.0 * np.log(sigma)))
