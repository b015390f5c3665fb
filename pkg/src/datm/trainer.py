"""Joint training of encoder and globals, layer-wise width inference, checkpoints.

One iteration draws a mini-batch, takes an Adam step on the encoder along the
reparameterised ELBO gradient, samples theta from the updated encoder, and
then moves the globals: TLASGR-MCMC on augmented counts for ``whai``,
``ghai`` and ``iwhai``; Adam on softmax logits of each topic column and on
``log r`` for ``wai``.
"""

import dataclasses
import json
import logging
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import distributions as D
from .corpus import next_batch
from .decoder import GlobalParams, init_global_params
from .encoder import (VARIANTS, EncoderLayer, EncoderParams, backward, clip_grads, elbo, encode,
                      init_encoder, init_encoder_layer, prune_layer)
from .optim import Adam
from .sampler import SamplerState, allocate_counts, tlasgr_step

log = logging.getLogger(__name__)

MAGIC = b"DATM"
FORMAT_VERSION = 1

# substreams of the master seed
STREAM_BATCH, STREAM_NOISE, STREAM_SAMPLER, STREAM_INIT, STREAM_LABEL = range(5)


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    variant: str = "whai"
    widths: tuple = (128,)
    batch_size: int = 200
    iterations: int = 2000
    burn_in: int = 1000
    num_samples: int = 10
    seed: int = 0
    lr: float = 1e-3
    grad_clip: float = 10.0
    mc_samples: int = 1
    step_a: float = 0.01
    step_b: float = 1000.0
    step_c: float = 0.75
    M_floor: float = 1e-3
    rsvi_B: int = D.RSVI_B
    k_min: float = D.WEIBULL_K_MIN
    eta: float | None = None
    gamma0: float = 1.0
    c0: float = 1.0
    r0: float = 1.0
    wai_lr: float = 1e-2
    kl_warmup: int = 0
    # layer-wise structure learning
    K1_max: int = 128
    num_layers: int = 3
    prune_u: float = 0.01
    stage_iterations: int = 2000

    def __post_init__(self):
        self.widths = tuple(int(k) for k in self.widths)
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")
        if self.prune_u < 0:
            raise ValueError("prune_u must be >= 0")
        if self.iterations > 0 and not 0 <= self.burn_in < self.iterations:
            raise ValueError("burn_in must be smaller than iterations")

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["widths"] = list(self.widths)
        return d


def snapshot_iterations(cfg):
    """Iterations (0-based) after which posterior snapshots are taken."""
    span = cfg.iterations - cfg.burn_in
    if span <= 0:
        return []
    S = min(cfg.num_samples, span)
    return sorted({cfg.burn_in + int(round((i + 1) * span / S)) - 1 for i in range(S)})


@dataclass
class TrainResult:
    samples: list
    enc: EncoderParams
    state: SamplerState
    g: GlobalParams
    trace: list = field(default_factory=list)


class Trainer:
    """Stateful driver of the hybrid sampler / autoencoder loop.

    ``label_hook(batch, encoded, trainer)`` (optional) returns extra
    per-document theta gradients ``(value, dtheta_list)`` to fold into the
    encoder update; the supervised head uses it.
    """

    def __init__(self, corpus, cfg, g=None, enc=None, state=None):
        self.corpus = corpus
        self.cfg = cfg
        self.rngs = [D.rng_stream(cfg.seed, s) for s in range(5)]
        init_rng = self.rngs[STREAM_INIT]
        V = corpus.vocab_size
        if g is None:
            g = init_global_params(V, cfg.widths, init_rng, gamma0=cfg.gamma0, c0=cfg.c0, r0=cfg.r0)
            if cfg.eta is not None:
                g.eta = [cfg.eta] * g.num_layers
        self.g = g
        self.enc = enc if enc is not None else init_encoder(V, g.widths, init_rng)
        self.state = state or SamplerState(step_a=cfg.step_a, step_b=cfg.step_b,
                                           step_c=cfg.step_c, M_floor=cfg.M_floor)
        self.opt = Adam(cfg.lr)
        self.glob_opt = Adam(cfg.wai_lr)
        self.logits = None
        self.iteration = 0
        self.kl_weight = 1.0
        self.samples = []
        self.trace = []
        self.label_hook = None

    # -- one step of the hybrid algorithm ---------------------------------

    def _encoder_step(self, batch):
        cfg, g, enc = self.cfg, self.g, self.enc
        rng = self.rngs[STREAM_NOISE]
        want_globals = cfg.variant == "wai"
        grads = None
        d_phi = d_r = None
        value = 0.0
        for _ in range(cfg.mc_samples):
            v, _, out = elbo(batch.counts, enc, g, cfg.variant, rng=rng, rho=batch.rho,
                             kl_weight=self.kl_weight, k_min=cfg.k_min, B=cfg.rsvi_B)
            extra = None
            if self.label_hook is not None:
                lv, extra = self.label_hook(batch, out, self)
                v += lv
            gr, dp, dr = backward(batch.counts, enc, g, out, batch.rho, self.kl_weight, extra,
                                  wrt_globals=want_globals)
            value += v / cfg.mc_samples
            if grads is None:
                grads, d_phi, d_r = gr, dp, dr
            else:
                for (_, a), (_, b) in zip(grads.named_arrays(), gr.named_arrays()):
                    a += b
                if want_globals:
                    d_phi = [a + b for a, b in zip(d_phi, dp)]
                    d_r = d_r + dr
        if cfg.mc_samples > 1:
            for _, a in grads.named_arrays():
                a /= cfg.mc_samples
            if want_globals:
                d_phi = [a / cfg.mc_samples for a in d_phi]
                d_r = d_r / cfg.mc_samples
        if not np.isfinite(value):
            raise FloatingPointError(
                f"non-finite ELBO at iteration {self.iteration}: widths={g.widths}, "
                f"r range=({g.r.min():.3g}, {g.r.max():.3g})")
        clip_grads(grads, cfg.grad_clip)
        self.opt.step([a for _, a in enc.named_arrays()], [a for _, a in grads.named_arrays()])
        return value, d_phi, d_r

    def _wai_step(self, d_phi, d_r):
        g = self.g
        if self.logits is None:
            self.logits = [np.log(np.maximum(p, 1e-300)) for p in g.phi] + [np.log(g.r)]
        grads = []
        for l, (p, gp) in enumerate(zip(g.phi, d_phi)):
            gp = gp + (g.eta[l] - 1.0) / np.maximum(p, 1e-300)  # Dirichlet log prior
            grads.append(p * (gp - np.sum(p * gp, axis=0, keepdims=True)))
        K = g.widths[-1]
        a = g.gamma0 / K
        grads.append(g.r * d_r + (a - 1.0) - g.c0 * g.r)
        self.glob_opt.step(self.logits, grads)
        for l in range(g.num_layers):
            z = self.logits[l] - self.logits[l].max(axis=0, keepdims=True)
            e = np.exp(z)
            g.phi[l] = e / e.sum(axis=0)
        self.logits[-1] = np.clip(self.logits[-1], -700.0, 700.0)
        g.r = np.exp(self.logits[-1])

    def step(self):
        cfg = self.cfg
        if cfg.kl_warmup > 0 and self.label_hook is None:
            self.kl_weight = min(1.0, (self.iteration + 1) / cfg.kl_warmup)
        batch = next_batch(self.corpus, min(cfg.batch_size, self.corpus.num_docs),
                           self.rngs[STREAM_BATCH])
        value, d_phi, d_r = self._encoder_step(batch)
        if cfg.variant == "wai":
            self._wai_step(d_phi, d_r)
        else:
            out = encode(batch.counts, self.enc, self.g, cfg.variant, rng=self.rngs[STREAM_NOISE],
                         k_min=cfg.k_min, B=cfg.rsvi_B)
            counts = allocate_counts(batch.counts, out.theta, self.g, self.rngs[STREAM_SAMPLER])
            tlasgr_step(self.g, self.state, counts, batch.rho, self.rngs[STREAM_SAMPLER])
        self.trace.append(value / self.corpus.num_docs)
        self.iteration += 1
        return value

    def run(self, iterations=None, snapshots=None, callback=None):
        """Run iterations; snapshot ``g`` after each iteration listed in ``snapshots``."""
        iterations = self.cfg.iterations if iterations is None else iterations
        snaps = set(snapshot_iterations(self.cfg) if snapshots is None else snapshots)
        for _ in range(iterations):
            it = self.iteration
            self.step()
            if it in snaps:
                self.samples.append(self.g.copy())
            if callback is not None:
                callback(self)
        return self

    def result(self):
        samples = self.samples or [self.g.copy()]
        return TrainResult(samples, self.enc, self.state, self.g, self.trace)


def train_joint(corpus, cfg, callback=None):
    """Train a fixed-shape model; returns posterior snapshots plus final params."""
    trainer = Trainer(corpus, cfg)
    trainer.run(callback=callback)
    return trainer.result()


@dataclass
class LayerwiseResult:
    g: GlobalParams
    enc: EncoderParams
    widths: list
    samples: list
    stages: list


def _grow(g, enc, width, vocab_size, rng, cfg):
    """Append a fresh top layer of ``width`` units to ``g`` and ``enc``."""
    if g is None:
        g = init_global_params(vocab_size, [width], rng, gamma0=cfg.gamma0, c0=cfg.c0, r0=cfg.r0)
        return g, init_encoder(vocab_size, [width], rng)
    below = g.widths[-1]
    p = 0.2 + rng.random((below, width))
    phi = g.phi + [p / p.sum(axis=0)]
    new = GlobalParams(phi, np.full(width, float(cfg.r0)), g.eta + [1.0 / width], g.gamma0, g.c0,
                       g.c + [1.0])
    layers = [lay.copy() for lay in enc.layers] + [init_encoder_layer(below, width, rng)]
    return new, EncoderParams(layers)


def _prune_top(g, keep):
    g.phi[-1] = g.phi[-1][:, keep]
    g.r = g.r[keep]
    return g


def train_layerwise(corpus, cfg, callback=None):
    """Greedy layer-wise growth with shrinkage-based pruning of each new layer.

    Stage l adds a top layer whose width is the inferred width of layer l-1
    (``K1_max`` for the first), retrains all layers jointly, and drops top
    topics with ``r_k < prune_u``.
    """
    rng = D.rng_stream(cfg.seed, STREAM_INIT + 100)
    g = enc = None
    widths, stages, samples = [], [], []
    for l in range(cfg.num_layers):
        k_max = cfg.K1_max if l == 0 else widths[-1]
        g, enc = _grow(g, enc, k_max, corpus.vocab_size, rng, cfg)
        stage_cfg = cfg.replace(widths=tuple(g.widths), iterations=cfg.stage_iterations,
                                burn_in=min(cfg.burn_in, max(cfg.stage_iterations - 1, 0)),
                                seed=cfg.seed + 7919 * l)
        trainer = Trainer(corpus, stage_cfg, g, enc)
        trainer.run(callback=callback)
        keep = np.flatnonzero(g.r >= cfg.prune_u)
        if keep.size == 0:
            raise RuntimeError(f"every topic of layer {l + 1} fell below u={cfg.prune_u}")
        _prune_top(g, keep)
        prune_layer(enc, l, keep)
        samples = [_prune_top(s, keep) for s in trainer.samples]
        widths.append(int(keep.size))
        stages.append({"layer": l + 1, "max_width": k_max, "width": int(keep.size),
                       "trace": trainer.trace})
        log.info("stage %d: kept %d of %d topics", l + 1, keep.size, k_max)
    return LayerwiseResult(g, enc, widths, samples or [g.copy()], stages)


# ---------------------------------------------------------------------------
# checkpoints


def _collect_arrays(trainer, extra=None):
    arrays = {}
    g = trainer.g
    for l, p in enumerate(g.phi):
        arrays[f"decoder/phi/{l + 1}"] = p
    arrays["decoder/r"] = g.r
    for name, a in trainer.enc.named_arrays():
        arrays[f"encoder/{name}"] = a
    for l, m in enumerate(trainer.state.M):
        arrays[f"sampler/M/{l + 1}"] = m
    for tag, opt in (("encoder", trainer.opt), ("globals", trainer.glob_opt)):
        for kind in ("m", "v"):
            for i, a in enumerate(getattr(opt, kind) or []):
                arrays[f"optim/{tag}/{kind}/{i}"] = a
    if trainer.logits is not None:
        for i, a in enumerate(trainer.logits):
            arrays[f"optim/logits/{i}"] = a
    for s, snap in enumerate(trainer.samples):
        for l, p in enumerate(snap.phi):
            arrays[f"samples/{s}/phi/{l + 1}"] = p
        arrays[f"samples/{s}/r"] = snap.r
    arrays["trace"] = np.asarray(trainer.trace, dtype=float)
    arrays.update(extra or {})
    return arrays


def save_checkpoint(path, trainer, extra_arrays=None, extra_meta=None):
    """Write ``trainer`` (params, sampler, optimiser and RNG state) atomically."""
    arrays = _collect_arrays(trainer, extra_arrays)
    g, st = trainer.g, trainer.state
    meta = {
        "iteration": trainer.iteration,
        "kl_weight": trainer.kl_weight,
        "eta": list(g.eta), "gamma0": g.gamma0, "c0": g.c0, "c": list(g.c),
        "sampler": {"M_top": st.M_top, "t": st.t, "step_a": st.step_a, "step_b": st.step_b,
                    "step_c": st.step_c, "M_floor": st.M_floor, "initialized": st.initialized},
        "adam_t": [trainer.opt.t, trainer.glob_opt.t],
        "num_samples": len(trainer.samples),
        "extra": extra_meta or {},
    }
    entries, blobs, offset = [], [], 0
    for name, a in arrays.items():
        buf = np.ascontiguousarray(a, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(np.shape(a)), "offset": offset})
        blobs.append(buf)
        offset += len(buf)
    header = {
        "config": trainer.cfg.to_dict(),
        "meta": meta,
        "rng": [r.bit_generator.state for r in trainer.rngs],
        "arrays": entries,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(hbytes)) + hbytes + b"".join(blobs)
    body += struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(body)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def read_checkpoint(path):
    """Parse a checkpoint file into ``(header, arrays)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 20 or raw[:4] != MAGIC:
        raise CheckpointError("not a DATM checkpoint")
    version, hlen = struct.unpack("<IQ", raw[4:16])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (crc,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(raw[:-4]) & 0xFFFFFFFF != crc:
        raise CheckpointError("checkpoint is truncated or corrupt")
    header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    blob = raw[16 + hlen:-4]
    arrays = {}
    for e in header["arrays"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        a = np.frombuffer(blob, dtype="<f8", count=n, offset=e["offset"]).astype(float)
        arrays[e["name"]] = a.reshape(e["shape"]) if e["shape"] else a[0]
    return header, arrays


def load_checkpoint(path, corpus=None):
    """Rebuild a :class:`Trainer` from ``path``.

    ``corpus`` is needed only to continue training; without it the trainer
    can still encode and evaluate.
    """
    header, arrays = read_checkpoint(path)
    cfg = TrainConfig(**{**header["config"], "widths": tuple(header["config"]["widths"])})
    meta = header["meta"]
    L = len(cfg.widths)
    phi = [arrays[f"decoder/phi/{l + 1}"] for l in range(L)]
    g = GlobalParams(phi, np.atleast_1d(arrays["decoder/r"]), meta["eta"], meta["gamma0"],
                     meta["c0"], meta["c"])
    layers = []
    for l in range(L):
        layers.append(EncoderLayer(*[np.asarray(arrays[f"encoder/{n}_{l + 1}"])
                                     for n in EncoderLayer.NAMES]))
    enc = EncoderParams(layers)
    sm = meta["sampler"]
    M = [np.atleast_1d(arrays[f"sampler/M/{l + 1}"]) for l in range(L) if f"sampler/M/{l + 1}" in arrays]
    state = SamplerState(M, sm["M_top"], sm["t"], sm["step_a"], sm["step_b"], sm["step_c"],
                         sm["M_floor"], sm["initialized"])
    trainer = Trainer.__new__(Trainer)
    trainer.corpus = corpus
    trainer.cfg = cfg
    trainer.g, trainer.enc, trainer.state = g, enc, state
    trainer.rngs = []
    for st in header["rng"]:
        bg = np.random.PCG64()
        bg.state = st
        trainer.rngs.append(np.random.Generator(bg))
    trainer.opt, trainer.glob_opt = Adam(cfg.lr), Adam(cfg.wai_lr)
    for tag, opt, t in (("encoder", trainer.opt, meta["adam_t"][0]),
                        ("globals", trainer.glob_opt, meta["adam_t"][1])):
        opt.t = t
        for kind in ("m", "v"):
            keys = sorted((k for k in arrays if k.startswith(f"optim/{tag}/{kind}/")),
                          key=lambda k: int(k.rsplit("/", 1)[1]))
            setattr(opt, kind, [np.array(arrays[k]) for k in keys] or None)
    keys = sorted((k for k in arrays if k.startswith("optim/logits/")),
                  key=lambda k: int(k.rsplit("/", 1)[1]))
    trainer.logits = [np.array(arrays[k]) for k in keys] or None
    trainer.samples = []
    for s in range(meta["num_samples"]):
        sp = [arrays[f"samples/{s}/phi/{l + 1}"] for l in range(L)]
        trainer.samples.append(GlobalParams(sp, np.atleast_1d(arrays[f"samples/{s}/r"]),
                                            meta["eta"], meta["gamma0"], meta["c0"], meta["c"]))
    trainer.iteration = meta["iteration"]
    trainer.kl_weight = meta["kl_weight"]
    trainer.trace = list(np.atleast_1d(arrays["trace"]))
    trainer.label_hook = None
    trainer.extra_meta = meta.get("extra", {})
    trainer.extra_arrays = {k: v for k, v in arrays.items() if k.startswith("extra/")}
    return trainer
