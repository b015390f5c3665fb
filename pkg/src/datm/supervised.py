"""Supervised extension: Bayesian softmax head on concatenated topic weights.

Every layer's theta is concatenated into a feature vector ``s``.  The linear
head scores ``w_c . s``; the nonlinear head first maps each layer block
through ``softplus(Wm1 theta + bm1)`` and then scores ``w_c . g2(s)`` with a
two-layer softplus MLP ``g2``.  Class weights have a diagonal Gaussian
posterior ``N(mu, softplus(rho)^2)`` against a standard normal prior.
"""

from dataclasses import dataclass, field

import numpy as np

from . import distributions as D
from .encoder import backward, clip_grads, elbo, encode
from .optim import Adam
from .trainer import STREAM_LABEL, Trainer

HIDDEN_1 = 400
HIDDEN_2 = 200


@dataclass
class ClassifierParams:
    """Variational class weights plus the optional MLP of the nonlinear head."""

    mu: np.ndarray
    rho: np.ndarray
    head: str = "linear"
    Wm1: list = field(default_factory=list)
    bm1: list = field(default_factory=list)
    Wm2: np.ndarray = None
    bm2: np.ndarray = None
    Wm3: np.ndarray = None
    bm3: np.ndarray = None

    @property
    def num_classes(self):
        return self.mu.shape[0]

    @property
    def sigma(self):
        return D.softplus(self.rho)

    def named_arrays(self):
        out = [("mu", self.mu), ("rho", self.rho)]
        if self.head == "nonlinear":
            for l, (W, b) in enumerate(zip(self.Wm1, self.bm1)):
                out += [(f"Wm1_{l + 1}", W), (f"bm1_{l + 1}", b)]
            out += [("Wm2", self.Wm2), ("bm2", self.bm2), ("Wm3", self.Wm3), ("bm3", self.bm3)]
        return out

    def copy(self):
        c = lambda a: None if a is None else a.copy()
        return ClassifierParams(self.mu.copy(), self.rho.copy(), self.head,
                                [w.copy() for w in self.Wm1], [b.copy() for b in self.bm1],
                                c(self.Wm2), c(self.bm2), c(self.Wm3), c(self.bm3))

    def zeros_like(self):
        z = self.copy()
        for _, a in z.named_arrays():
            a[...] = 0.0
        return z


def _glorot(rng, rows, cols):
    s = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-s, s, size=(rows, cols))


def init_classifier(widths, num_classes, rng, head="linear", a1=HIDDEN_1, a2=HIDDEN_2,
                    sigma0=0.1):
    """Small random means and ``sigma = sigma0`` for every class weight."""
    if head not in ("linear", "nonlinear"):
        raise ValueError("head must be 'linear' or 'nonlinear'")
    dim = sum(widths) if head == "linear" else a2
    mu = 0.01 * rng.standard_normal((num_classes, dim))
    rho = np.full((num_classes, dim), D.softplus_inv(sigma0))
    if head == "linear":
        return ClassifierParams(mu, rho)
    Wm1 = [_glorot(rng, k, k) for k in widths]
    bm1 = [np.zeros(k) for k in widths]
    return ClassifierParams(mu, rho, head, Wm1, bm1, _glorot(rng, a1, sum(widths)), np.zeros(a1),
                            _glorot(rng, a2, a1), np.zeros(a2))


def concat_features(thetas, cls=None, cache=None):
    """Feature vector per document: raw theta blocks, or per-layer softplus maps."""
    thetas = [np.atleast_2d(t) for t in thetas]
    if cls is None or cls.head == "linear":
        return np.concatenate(thetas, axis=1)
    pre = [t @ W.T + b for t, W, b in zip(thetas, cls.Wm1, cls.bm1)]
    if cache is not None:
        cache["pre1"] = pre
    return np.concatenate([D.softplus(p) for p in pre], axis=1)


def head_features(s, cls, cache=None):
    """Input to the class scores: ``s`` itself or the MLP output ``g2(s)``."""
    if cls is None or cls.head == "linear":
        return s
    a2 = s @ cls.Wm2.T + cls.bm2
    u = D.softplus(a2)
    a3 = u @ cls.Wm3.T + cls.bm3
    if cache is not None:
        cache.update(a2=a2, u=u, a3=a3)
    return D.softplus(a3)


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def class_probs(s, w, cls=None):
    """Softmax class probabilities for features ``s`` under weight draw ``w`` (C x D)."""
    f = head_features(np.atleast_2d(s), cls)
    return softmax(f @ np.asarray(w).T)


def gaussian_weight_kl(cls, norm_kl=False):
    """KL of the class-weight posterior from the standard normal prior.

    The default is the exact diagonal-Gaussian divergence.  ``norm_kl``
    evaluates the per-class expression ``0.5 (|mu|^2 + |sigma|^2) - log|sigma|``
    instead, kept for comparison.
    """
    mu, sigma = cls.mu, cls.sigma
    if norm_kl:
        return float(np.sum(0.5 * (np.sum(mu**2, axis=1) + np.sum(sigma**2, axis=1))
                            - np.log(np.linalg.norm(sigma, axis=1))))
    return D.gaussian_kl_std(mu, sigma)


def _weight_kl_grad(cls, norm_kl=False):
    mu, sigma = cls.mu, cls.sigma
    if norm_kl:
        d_sigma = sigma - sigma / np.sum(sigma**2, axis=1, keepdims=True)
    else:
        d_sigma = sigma - 1.0 / sigma
    return mu, d_sigma * D.sigmoid(cls.rho)


def _label_index(labels, C):
    y = np.asarray(labels)
    if y.size == 0 or y.min() < 1 or y.max() > C:
        raise ValueError(f"labels must be integers in 1..{C}")
    return y.astype(np.int64) - 1


def label_loglik(thetas, labels, cls, w_noise):
    """Per-document ``log p(y | theta, w)`` for one reparameterised weight draw."""
    if labels is None:
        raise ValueError("supervised objective needs labels")
    cache = {}
    s = concat_features(thetas, cls, cache)
    f = head_features(s, cls, cache)
    w = cls.mu + cls.sigma * w_noise
    z = f @ w.T
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    y = _label_index(labels, cls.num_classes)
    cache.update(s=s, f=f, w=w, p=np.exp(logp), y=y)
    return logp[np.arange(y.size), y], cache


def _label_backward(thetas, cls, cache, w_noise):
    """Gradients of the summed label log-likelihood w.r.t. theta and head params."""
    p, y, f, w = cache["p"], cache["y"], cache["f"], cache["w"]
    dz = -p
    dz[np.arange(y.size), y] += 1.0
    gcls = cls.zeros_like()
    dw = dz.T @ f
    gcls.mu[...] = dw
    gcls.rho[...] = dw * w_noise * D.sigmoid(cls.rho)
    df = dz @ w
    if cls.head == "linear":
        ds = df
    else:
        ga3 = df * D.sigmoid(cache["a3"])
        gcls.Wm3[...] = ga3.T @ cache["u"]
        gcls.bm3[...] = ga3.sum(axis=0)
        ga2 = (ga3 @ cls.Wm3) * D.sigmoid(cache["a2"])
        gcls.Wm2[...] = ga2.T @ cache["s"]
        gcls.bm2[...] = ga2.sum(axis=0)
        ds = ga2 @ cls.Wm2
    dthetas, start = [], 0
    for l, t in enumerate(thetas):
        k = t.shape[1]
        block = ds[:, start:start + k]
        start += k
        if cls.head == "nonlinear":
            gp = block * D.sigmoid(cache["pre1"][l])
            gcls.Wm1[l][...] = gp.T @ t
            gcls.bm1[l][...] = gp.sum(axis=0)
            block = gp @ cls.Wm1[l]
        dthetas.append(block)
    return dthetas, gcls


def supervised_elbo(X, labels, enc, g, cls, variant="whai", noise=None, w_noise=None, rng=None,
                    rho=1.0, kl_weight=1.0, label_weight=1.0, norm_kl=False, **kw):
    """Mini-batch ELBO of counts and labels.

    Returns ``(value, parts, (encoded, cache))``.  The reconstruction, label
    and theta-KL terms are scaled by ``rho``; ``kl_weight`` multiplies every
    KL term including the class-weight KL.
    """
    value, parts, out = elbo(X, enc, g, variant, noise, rng, rho, kl_weight, **kw)
    if w_noise is None:
        w_noise = (rng or np.random.default_rng()).standard_normal(cls.mu.shape)
    ll, cache = label_loglik(out.theta, labels, cls, w_noise)
    cache["w_noise"] = w_noise
    wkl = gaussian_weight_kl(cls, norm_kl)
    value += rho * label_weight * float(ll.sum()) - kl_weight * wkl
    parts.update(label=ll, weight_kl=wkl)
    return value, parts, (out, cache)


def supervised_elbo_grad(X, labels, enc, g, cls, variant="whai", noise=None, w_noise=None,
                         rng=None, rho=1.0, kl_weight=1.0, label_weight=1.0, norm_kl=False,
                         **kw):
    """Value plus gradients ``(encoder_grads, classifier_grads)``."""
    value, parts, (out, cache) = supervised_elbo(X, labels, enc, g, cls, variant, noise, w_noise,
                                                 rng, rho, kl_weight, label_weight, norm_kl,
                                                 **kw)
    genc, gcls = _supervised_backward(X, enc, g, cls, out, cache, rho, kl_weight, label_weight,
                                      norm_kl)
    return value, (genc, gcls), (out, cache)


def _supervised_backward(X, enc, g, cls, out, cache, rho, kl_weight, label_weight, norm_kl):
    dthetas, gcls = _label_backward(out.theta, cls, cache, cache["w_noise"])
    genc, _, _ = backward(X, enc, g, out, rho, kl_weight,
                          [label_weight * d for d in dthetas])
    dmu, drho = _weight_kl_grad(cls, norm_kl)
    for name, a in gcls.named_arrays():
        a *= rho * label_weight
    gcls.mu -= kl_weight * dmu
    gcls.rho -= kl_weight * drho
    return genc, gcls


@dataclass
class SupervisedConfig:
    head: str = "linear"
    unsup_epochs: int = 100
    sup_epochs: int = 300
    warmup_epochs: int = 20
    label_weight: float = 1.0
    lr: float = 1e-3
    grad_clip: float = 10.0
    a1: int = HIDDEN_1
    a2: int = HIDDEN_2
    norm_kl: bool = False
    n_collect: int = 50


class SupervisedTrainer:
    """Unsupervised epochs, then epochs with the label term and KL warm-up.

    Topic matrices keep moving by the same global update as the unsupervised
    model (counts only); labels reach the encoder and the classifier.
    """

    def __init__(self, corpus, cfg, scfg, g=None, enc=None):
        if corpus.labels is None:
            raise ValueError("supervised training needs labels")
        self.trainer = Trainer(corpus, cfg, g, enc)
        self.scfg = scfg
        rng = self.trainer.rngs[STREAM_LABEL]
        self.cls = init_classifier(self.trainer.g.widths, corpus.num_classes, rng, scfg.head,
                                   scfg.a1, scfg.a2)
        self.opt = Adam(scfg.lr)
        self.epoch = 0

    @property
    def iters_per_epoch(self):
        tr = self.trainer
        return max(1, int(np.ceil(tr.corpus.num_docs / min(tr.cfg.batch_size, tr.corpus.num_docs))))

    def _hook(self, batch, out, trainer):
        scfg, cls = self.scfg, self.cls
        rng = trainer.rngs[STREAM_LABEL]
        w_noise = rng.standard_normal(cls.mu.shape)
        ll, cache = label_loglik(out.theta, batch.labels, cls, w_noise)
        dthetas, gcls = _label_backward(out.theta, cls, cache, w_noise)
        dmu, drho = _weight_kl_grad(cls, scfg.norm_kl)
        for _, a in gcls.named_arrays():
            a *= batch.rho * scfg.label_weight
        gcls.mu -= trainer.kl_weight * dmu
        gcls.rho -= trainer.kl_weight * drho
        norm = np.sqrt(sum(float(np.sum(a * a)) for _, a in gcls.named_arrays()))
        if scfg.grad_clip is not None and norm > scfg.grad_clip:
            for _, a in gcls.named_arrays():
                a *= scfg.grad_clip / norm
        self.opt.step([a for _, a in cls.named_arrays()], [a for _, a in gcls.named_arrays()])
        value = (batch.rho * scfg.label_weight * float(ll.sum())
                 - trainer.kl_weight * gaussian_weight_kl(cls, scfg.norm_kl))
        return value, [scfg.label_weight * d for d in dthetas]

    def run(self, callback=None):
        tr, scfg = self.trainer, self.scfg
        n = self.iters_per_epoch
        tr.label_hook = None
        for _ in range(scfg.unsup_epochs):
            tr.run(n, snapshots=[])
            self.epoch += 1
        tr.label_hook = self._hook
        for e in range(scfg.sup_epochs):
            tr.kl_weight = min(1.0, (e + 1) / scfg.warmup_epochs) if scfg.warmup_epochs else 1.0
            tr.run(n, snapshots=[])
            self.epoch += 1
            if callback is not None:
                callback(self)
        tr.kl_weight = 1.0
        return self


def predict(X, enc, g, cls, variant="whai", n_collect=50, rng=None, return_probs=False):
    """Monte-Carlo class prediction, labels in ``1..C``.

    Averages class probabilities over ``n_collect`` joint draws of theta and
    the class weights; ties go to the lowest class index.
    """
    X = np.atleast_2d(np.asarray(X.toarray() if hasattr(X, "toarray") else X, dtype=float))
    rng = rng or np.random.default_rng(0)
    acc = np.zeros((X.shape[0], cls.num_classes))
    for _ in range(n_collect):
        out = encode(X, enc, g, variant, rng=rng)
        w = cls.mu + cls.sigma * rng.standard_normal(cls.mu.shape)
        acc += class_probs(concat_features(out.theta, cls), w, cls)
    probs = acc / n_collect
    pred = np.argmax(probs, axis=1) + 1
    return (pred, probs) if return_probs else pred
