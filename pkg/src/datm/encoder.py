"""Weibull upward-downward variational encoder and its ELBO gradients.

The upward path is a deterministic softplus network starting from
``log(1 + x)``; each layer has two heads producing the Weibull shape ``k`` and
scale ``lam``.  The downward path samples the top layer first and adds
``phi[l+1] @ theta[l+1]`` to the shape of layer l (except for ``iwhai``).
``ghai`` swaps the Weibull for a gamma with the same parameters, sampled via
the shape-augmented rejection sampler and differentiated along the accepted
noise.

Gradients are derived by hand; nothing here depends on an autodiff package.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import distributions as D
from .decoder import RATE_FLOOR

VARIANTS = ("whai", "wai", "ghai", "iwhai")

LAM_MIN = 1e-10
ALPHA_MIN = 1e-6


@dataclass
class EncoderLayer:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray

    NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")

    def arrays(self):
        return [getattr(self, n) for n in self.NAMES]

    def copy(self):
        return EncoderLayer(*[a.copy() for a in self.arrays()])


@dataclass
class EncoderParams:
    layers: list

    @property
    def widths(self):
        return [lay.b1.shape[0] for lay in self.layers]

    def named_arrays(self):
        for l, lay in enumerate(self.layers):
            for n in EncoderLayer.NAMES:
                yield f"{n}_{l + 1}", getattr(lay, n)

    def copy(self):
        return EncoderParams([lay.copy() for lay in self.layers])

    def zeros_like(self):
        return EncoderParams([EncoderLayer(*[np.zeros_like(a) for a in lay.arrays()])
                              for lay in self.layers])


def _glorot(rng, rows, cols):
    s = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-s, s, size=(rows, cols))


def init_encoder_layer(fan_in, width, rng):
    b_head = np.full(width, float(D.softplus_inv(1.0)))
    return EncoderLayer(
        W1=_glorot(rng, width, width), b1=b_head.copy(),
        W2=_glorot(rng, width, width), b2=b_head.copy(),
        W3=_glorot(rng, width, fan_in), b3=np.zeros(width),
    )


def init_encoder(vocab_size, widths, rng):
    dims = [vocab_size] + list(widths)
    return EncoderParams([init_encoder_layer(a, b, rng) for a, b in zip(dims[:-1], dims[1:])])


@dataclass
class Encoded:
    """Forward-pass record for a batch (rows are documents).

    Per layer: upward activations ``h``; head pre-activations ``a1``/``a2``;
    Weibull parameters ``k_total`` (shape after the downward augmentation and
    clamping) and ``lam``; prior shape ``alpha``; the draw ``theta``; and the
    noise that produced it.
    """

    variant: str
    mode: str
    h: list
    a3: list
    a1: list
    a2: list
    k: list
    lam: list
    k_total: list
    k_mask: list
    lam_mask: list
    alpha: list
    alpha_mask: list
    theta: list
    noise: list
    kl: list = field(default_factory=list)


def _check_variant(variant):
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")


def encode(X, enc, g, variant="whai", noise=None, rng=None, mode="sample",
           k_min=D.WEIBULL_K_MIN, B=D.RSVI_B):
    """Run the upward then downward pass for a batch of count rows.

    ``noise`` replays a previous draw (list per layer, as stored in
    ``Encoded.noise``); otherwise ``rng`` supplies fresh noise.  ``mode="mean"``
    uses the mean of each conditional instead of a draw.
    """
    _check_variant(variant)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    L = len(enc.layers)
    h_prev = np.log1p(X)
    hs, a3s, a1s, a2s, ks, lams, lam_masks = [h_prev], [], [], [], [], [], []
    for lay in enc.layers:
        a3 = h_prev @ lay.W3.T + lay.b3
        h = D.softplus(a3)
        a1 = h @ lay.W1.T + lay.b1
        a2 = h @ lay.W2.T + lay.b2
        lam = D.softplus(a2)
        lam_masks.append(lam > LAM_MIN)
        a3s.append(a3)
        hs.append(h)
        a1s.append(a1)
        a2s.append(a2)
        ks.append(D.softplus(a1))
        lams.append(np.maximum(lam, LAM_MIN))
        h_prev = h
    if not all(np.all(np.isfinite(h)) for h in hs):
        raise FloatingPointError("non-finite encoder activations")

    N = X.shape[0]
    thetas, k_tot, k_masks, alphas, alpha_masks = [None] * L, [None] * L, [None] * L, [None] * L, [None] * L
    drawn = [None] * L
    for l in range(L - 1, -1, -1):
        if l == L - 1:
            prior = np.broadcast_to(g.r, (N, g.widths[-1]))
            aug = 0.0
        else:
            prior = thetas[l + 1] @ g.phi[l + 1].T
            aug = 0.0 if variant == "iwhai" else prior
        raw = ks[l] + aug
        k_masks[l] = raw > k_min
        k_tot[l] = np.maximum(raw, k_min)
        alpha_masks[l] = prior > ALPHA_MIN
        alphas[l] = np.maximum(prior, ALPHA_MIN)
        lam = lams[l]
        if mode == "mean":
            thetas[l] = k_tot[l] * lam if variant == "ghai" else D.weibull_mean(k_tot[l], lam)
            continue
        if variant == "ghai":
            if noise is not None:
                eps, u = noise[l]
            else:
                _, (eps, u) = D.gamma_sample_reparam(k_tot[l], 1.0 / lam, rng, B)
            drawn[l] = (eps, u)
            thetas[l] = D.gamma_reparam_value(k_tot[l], lam, eps, u)
        else:
            eps = noise[l] if noise is not None else D.uniform_open(rng, k_tot[l].shape)
            drawn[l] = eps
            thetas[l] = D.weibull_sample(k_tot[l], lam, eps)
    return Encoded(variant, mode, hs, a3s, a1s, a2s, ks, lams, k_tot, k_masks, lam_masks,
                   alphas, alpha_masks, thetas, drawn)


def layer_kl(enc_out, g):
    """Per-document KL of every layer, list of length-N arrays."""
    out = []
    for l in range(len(enc_out.theta)):
        beta = g.c[l]
        if enc_out.variant == "ghai":
            kl = D.gamma_gamma_kl(enc_out.k_total[l], 1.0 / enc_out.lam[l], enc_out.alpha[l], beta)
        else:
            kl = D.weibull_gamma_kl(enc_out.k_total[l], enc_out.lam[l], enc_out.alpha[l], beta)
        out.append(kl.sum(axis=1))
    return out


def reconstruction(X, g, theta1):
    rate = np.maximum(theta1 @ g.phi[0].T, RATE_FLOOR)
    return np.sum(X * np.log(rate) - rate - special.gammaln(X + 1.0), axis=1)


def elbo(X, enc, g, variant="whai", noise=None, rng=None, rho=1.0, kl_weight=1.0,
         encoded=None, **kw):
    """Monte-Carlo ELBO of a mini-batch, scaled by ``rho``.

    Returns ``(value, parts, encoded)`` where ``parts`` holds per-document
    ``recon`` and per-layer ``kl`` arrays.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = encoded if encoded is not None else encode(X, enc, g, variant, noise, rng, **kw)
    rec = reconstruction(X, g, out.theta[0])
    kls = layer_kl(out, g)
    out.kl = kls
    value = rho * float(np.sum(rec) - kl_weight * sum(float(np.sum(k)) for k in kls))
    return value, {"recon": rec, "kl": kls}, out


def backward(X, enc, g, out, rho=1.0, kl_weight=1.0, dtheta_extra=None, wrt_globals=False):
    """Gradient of the ELBO in ``out`` w.r.t. encoder (and optionally global) params.

    ``dtheta_extra`` adds upstream gradients of extra per-document objective
    terms with respect to each ``theta[l]`` (unscaled; ``rho`` is applied
    here).  With ``wrt_globals`` the gradients for ``phi`` and ``r`` are also
    returned, otherwise ``None``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    L = len(enc.layers)
    ghai = out.variant == "ghai"
    aug_on = out.variant != "iwhai"

    rate_raw = out.theta[0] @ g.phi[0].T
    rate = np.maximum(rate_raw, RATE_FLOOR)
    d_rate = (X / rate - 1.0) * (rate_raw > RATE_FLOOR)
    d_theta = [np.zeros_like(t) for t in out.theta]
    d_theta[0] += d_rate @ g.phi[0]
    if dtheta_extra is not None:
        for l, e in enumerate(dtheta_extra):
            if e is not None:
                d_theta[l] += e
    d_phi = [None] * L
    d_r = None
    if wrt_globals:
        d_phi[0] = d_rate.T @ out.theta[0]

    d_k = [None] * L
    d_lam = [None] * L
    for l in range(L):
        kt, lam, alpha, theta = out.k_total[l], out.lam[l], out.alpha[l], out.theta[l]
        beta = g.c[l]
        if ghai:
            eps, u = out.noise[l]
            dth_dk, dth_dlam = D.gamma_reparam_grad(kt, lam, eps, u)
            dkl_dk, dkl_dlam, dkl_da = D.gamma_gamma_kl_grad(kt, lam, alpha, beta)
        else:
            logu = np.log(-np.log1p(-out.noise[l]))
            dth_dk = -theta * logu / kt**2
            dth_dlam = np.exp(logu / kt)
            dkl_dk, dkl_dlam, dkl_da = D.weibull_gamma_kl_grad(kt, lam, alpha, beta)
        gk = (d_theta[l] * dth_dk - kl_weight * dkl_dk) * out.k_mask[l]
        glam = (d_theta[l] * dth_dlam - kl_weight * dkl_dlam) * out.lam_mask[l]
        galpha = -kl_weight * dkl_da * out.alpha_mask[l]
        if l < L - 1:
            g_prior = galpha + (gk if aug_on else 0.0)
            d_theta[l + 1] += g_prior @ g.phi[l + 1]
            if wrt_globals:
                d_phi[l + 1] = g_prior.T @ out.theta[l + 1]
        elif wrt_globals:
            d_r = galpha.sum(axis=0)
        d_k[l] = gk
        d_lam[l] = glam

    grads = enc.zeros_like()
    d_h_above = None
    for l in range(L - 1, -1, -1):
        lay, gl = enc.layers[l], grads.layers[l]
        h, h_prev = out.h[l + 1], out.h[l]
        ga1 = d_k[l] * D.sigmoid(out.a1[l])
        ga2 = d_lam[l] * D.sigmoid(out.a2[l])
        gl.W1[...] = ga1.T @ h
        gl.b1[...] = ga1.sum(axis=0)
        gl.W2[...] = ga2.T @ h
        gl.b2[...] = ga2.sum(axis=0)
        gh = ga1 @ lay.W1 + ga2 @ lay.W2
        if d_h_above is not None:
            gh = gh + d_h_above
        ga3 = gh * D.sigmoid(out.a3[l])
        gl.W3[...] = ga3.T @ h_prev
        gl.b3[...] = ga3.sum(axis=0)
        d_h_above = ga3 @ lay.W3

    for gl in grads.layers:
        for a in gl.arrays():
            a *= rho
    if wrt_globals:
        d_phi = [rho * p for p in d_phi]
        d_r = rho * d_r
    for gl in grads.layers:
        for a in gl.arrays():
            if not np.all(np.isfinite(a)):
                raise FloatingPointError("non-finite encoder gradient")
    return grads, (d_phi if wrt_globals else None), d_r


def elbo_grad(X, enc, g, variant="whai", noise=None, rng=None, rho=1.0, kl_weight=1.0,
              wrt_globals=False, **kw):
    """ELBO value and its gradient w.r.t. every encoder array.

    Returns ``(value, grads, encoded)``; with ``wrt_globals`` the ``grads``
    entry is a tuple ``(encoder_grads, phi_grads, r_grad)``.
    """
    value, _, out = elbo(X, enc, g, variant, noise, rng, rho, kl_weight, **kw)
    grads, d_phi, d_r = backward(X, enc, g, out, rho, kl_weight, wrt_globals=wrt_globals)
    if wrt_globals:
        return value, (grads, d_phi, d_r), out
    return value, grads, out


def grad_global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(a * a)) for _, a in grads.named_arrays())))


def clip_grads(grads, max_norm):
    """Scale ``grads`` in place so their global norm is at most ``max_norm``."""
    norm = grad_global_norm(grads)
    if max_norm is not None and norm > max_norm:
        for _, a in grads.named_arrays():
            a *= max_norm / norm
    return norm


def prune_layer(enc, layer, keep):
    """Drop units of ``layer`` (0-based) not in ``keep``; fix the layer above."""
    keep = np.asarray(keep)
    lay = enc.layers[layer]
    enc.layers[layer] = EncoderLayer(
        lay.W1[np.ix_(keep, keep)], lay.b1[keep],
        lay.W2[np.ix_(keep, keep)], lay.b2[keep],
        lay.W3[keep], lay.b3[keep],
    )
    if layer + 1 < len(enc.layers):
        up = enc.layers[layer + 1]
        up.W3 = up.W3[:, keep]
    return enc
