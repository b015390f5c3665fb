"""Command-line interface: ``python -m datm <command> ...``."""

import argparse
import csv
import dataclasses
import json
import logging
import sys

import numpy as np

from . import distributions as D
from .corpus import Corpus, load_uci_bow, split_heldout, write_uci_bow
from .decoder import generate_synthetic, init_global_params
from .encoder import VARIANTS, encode
from .evaluation import export_topic_tree, perplexity, timing_report, write_topic_tree
from .gibbs import gibbs_fit, gibbs_perplexity
from .supervised import ClassifierParams, SupervisedConfig, SupervisedTrainer, predict
from .trainer import (TrainConfig, Trainer, load_checkpoint, save_checkpoint, train_layerwise)

log = logging.getLogger("datm")

CONFIG_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}
SUP_FIELDS = {f.name: f for f in dataclasses.fields(SupervisedConfig)}


def read_config(path):
    """Parse a ``key = value`` file; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _kind(field):
    """Python type of a config field, judged by its default."""
    if field.name == "widths":
        return tuple
    if field.default is None:
        return float
    return type(field.default)


def _coerce(field, value):
    if not isinstance(value, str):
        return value
    kind = _kind(field)
    if kind is tuple:
        return tuple(int(v) for v in value.replace(",", " ").split())
    if kind is bool:
        return value.lower() in ("1", "true", "yes", "on")
    if value.lower() == "none" and field.default is None:
        return None
    return kind(value)


def build_config(args, fields=CONFIG_FIELDS, cls=TrainConfig, base=None):
    """Merge config-file values with command-line overrides into ``cls``."""
    values = dict(base or {})
    if getattr(args, "config", None):
        values.update({k: v for k, v in read_config(args.config).items() if k in fields})
    for name in fields:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    return cls(**{k: _coerce(fields[k], v) for k, v in values.items()})


def _load_corpus(args, prefix="input"):
    return load_uci_bow(getattr(args, prefix), getattr(args, "vocab", None),
                        getattr(args, "labels", None))


def _add_train_flags(p):
    for name, f in CONFIG_FIELDS.items():
        if name in ("variant", "seed"):
            continue
        kind = _kind(f)
        p.add_argument("--" + name.lower().replace("_", "-"), dest=name,
                       type=str if kind is tuple else kind, default=None)


def _classifier_arrays(cls):
    return {f"extra/cls/{n}": a for n, a in cls.named_arrays()}


def _classifier_from(trainer):
    meta = trainer.extra_meta.get("classifier")
    if meta is None:
        raise SystemExit("checkpoint has no classifier; train with --labels")
    arr = {k[len("extra/cls/"):]: np.atleast_1d(v) for k, v in trainer.extra_arrays.items()
           if k.startswith("extra/cls/")}
    L = len(trainer.g.widths)
    if meta["head"] == "linear":
        return ClassifierParams(np.atleast_2d(arr["mu"]), np.atleast_2d(arr["rho"]))
    return ClassifierParams(np.atleast_2d(arr["mu"]), np.atleast_2d(arr["rho"]), "nonlinear",
                            [np.atleast_2d(arr[f"Wm1_{l + 1}"]) for l in range(L)],
                            [arr[f"bm1_{l + 1}"] for l in range(L)],
                            np.atleast_2d(arr["Wm2"]), arr["bm2"], np.atleast_2d(arr["Wm3"]),
                            arr["bm3"])


def cmd_train(args):
    corpus = _load_corpus(args)
    cfg = build_config(args)
    if args.labels:
        scfg = build_config(args, SUP_FIELDS, SupervisedConfig)
        st = SupervisedTrainer(corpus, cfg, scfg)
        st.run()
        tr = st.trainer
        save_checkpoint(args.out, tr, _classifier_arrays(st.cls),
                        {"classifier": {"head": scfg.head}})
    else:
        tr = Trainer(corpus, cfg)
        tr.run()
        save_checkpoint(args.out, tr)
    print(json.dumps({"checkpoint": args.out, "iterations": tr.iteration,
                      "final_elbo_per_doc": tr.trace[-1] if tr.trace else None,
                      "samples": len(tr.samples)}))


def cmd_train_layerwise(args):
    corpus = _load_corpus(args)
    cfg = build_config(args)
    res = train_layerwise(corpus, cfg)
    tr = Trainer(corpus, cfg.replace(widths=tuple(res.widths)), res.g, res.enc)
    tr.samples = res.samples
    save_checkpoint(args.out, tr, extra_meta={"widths": res.widths})
    print(json.dumps({"checkpoint": args.out, "widths": res.widths}))


def cmd_eval_ppl(args):
    tr = load_checkpoint(args.model)
    corpus = _load_corpus(args)
    split = split_heldout(corpus, 1.0 - args.test_frac, D.rng_stream(args.seed, 50))
    samples = tr.samples or [tr.g]
    ppl = perplexity(split, samples, tr.enc, args.variant or tr.cfg.variant, mode=args.mode,
                     rng=D.rng_stream(args.seed, 51), S=args.S)
    print(json.dumps({"perplexity": ppl, "samples": min(len(samples), args.S or len(samples))}))


def cmd_classify(args):
    tr = load_checkpoint(args.model)
    cls = _classifier_from(tr)
    corpus = _load_corpus(args)
    pred, probs = predict(corpus.counts, tr.enc, tr.g, cls, args.variant or tr.cfg.variant,
                          args.n_collect, D.rng_stream(args.seed, 60), return_probs=True)
    out = open(args.output, "w", newline="") if args.output else sys.stdout
    w = csv.writer(out)
    w.writerow(["doc", "predicted"] + [f"p{c + 1}" for c in range(probs.shape[1])])
    for i, (p, row) in enumerate(zip(pred, probs)):
        w.writerow([i + 1, int(p)] + [f"{v:.6g}" for v in row])
    if args.output:
        out.close()


def cmd_encode(args):
    tr = load_checkpoint(args.model)
    corpus = _load_corpus(args)
    out = encode(corpus.counts.toarray().astype(float), tr.enc, tr.g,
                 args.variant or tr.cfg.variant, rng=D.rng_stream(args.seed, 70), mode=args.mode)
    theta = out.theta[args.layer - 1]
    with (open(args.output, "w", newline="") if args.output else sys.stdout) as fh:
        w = csv.writer(fh)
        w.writerow(["doc"] + [f"t{k + 1}" for k in range(theta.shape[1])])
        for i, row in enumerate(theta):
            w.writerow([i + 1] + [f"{v:.6g}" for v in row])


def cmd_topics(args):
    tr = load_checkpoint(args.model)
    vocab = None
    if args.vocab:
        with open(args.vocab, encoding="utf-8") as fh:
            vocab = [line.strip() for line in fh]
    tree = export_topic_tree(tr.g, vocab, top_words=args.top_words, threshold=args.threshold)
    write_topic_tree(tree, args.out_prefix + ".txt", args.out_prefix + ".dot")
    print(json.dumps({"text": args.out_prefix + ".txt", "dot": args.out_prefix + ".dot",
                      "nodes": len(tree.nodes), "edges": len(tree.edges)}))


def cmd_oracle_gibbs(args):
    corpus = _load_corpus(args)
    widths = [int(k) for k in args.widths.replace(",", " ").split()]
    rng = D.rng_stream(args.seed, 80)
    if args.test_frac:
        split = split_heldout(corpus, 1.0 - args.test_frac, D.rng_stream(args.seed, 50))
        ppl = gibbs_perplexity(split, widths, args.sweeps, rng, args.burn_in, args.stride)
        print(json.dumps({"perplexity": ppl}))
        return
    g = init_global_params(corpus.vocab_size, widths, rng)
    gibbs_fit(corpus.counts, g, args.sweeps, rng, args.burn_in, args.stride)
    if args.out:
        tr = Trainer(corpus, TrainConfig(widths=tuple(widths), seed=args.seed, iterations=0,
                                         burn_in=0), g)
        save_checkpoint(args.out, tr)
    print(json.dumps({"widths": widths, "r": g.r.tolist(), "checkpoint": args.out}))


def cmd_generate(args):
    rng = D.rng_stream(args.seed, 90)
    widths = [int(k) for k in args.widths.replace(",", " ").split()]
    g = init_global_params(args.vocab_size, widths, rng, r0=args.r)
    g.phi = [rng.dirichlet(np.full(p.shape[0], args.concentration), size=p.shape[1]).T
             for p in g.phi]
    g.c = [1.0] * (len(widths) - 1) + [args.top_rate]
    corpus, thetas = generate_synthetic(g, args.num_docs, rng)
    write_uci_bow(corpus, args.out)
    if args.truth:
        np.savez(args.truth, r=g.r, **{f"phi{l + 1}": p for l, p in enumerate(g.phi)},
                 **{f"theta{l + 1}": t for l, t in enumerate(thetas)})
    print(json.dumps({"docword": args.out, "num_docs": corpus.num_docs,
                      "tokens": int(corpus.counts.sum())}))


def cmd_bench(args):
    tr = load_checkpoint(args.model)
    corpus = _load_corpus(args)
    modes = ["encode", "gibbs"] if args.mode == "both" else [args.mode]
    rep = {m: timing_report(tr.g, tr.enc, corpus, m, args.variant or tr.cfg.variant,
                            args.n_docs, args.gibbs_sweeps, D.rng_stream(args.seed, 95))
           for m in modes}
    print(json.dumps(rep))


def build_parser():
    p = argparse.ArgumentParser(prog="datm", description="Deep autoencoding topic model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None, help="key = value file; flags take precedence")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--variant", choices=VARIANTS, default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def corpus_args(sp, labels=False):
        sp.add_argument("--input", required=True, help="UCI docword file (gzip ok)")
        sp.add_argument("--vocab", default=None)
        if labels:
            sp.add_argument("--labels", default=None, help="one 1-based label per line")

    sp = sub.add_parser("train", help="joint training of encoder and globals")
    corpus_args(sp, labels=True)
    sp.add_argument("--out", required=True)
    _add_train_flags(sp)
    sp.add_argument("--head", choices=["linear", "nonlinear"], default=None)
    for name in ("unsup_epochs", "sup_epochs", "warmup_epochs", "n_collect"):
        sp.add_argument("--" + name.lower().replace("_", "-"), dest=name, type=int, default=None)
    sp.add_argument("--label-weight", dest="label_weight", type=float, default=None)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("train-layerwise", help="grow and prune layers one at a time")
    corpus_args(sp)
    sp.add_argument("--out", required=True)
    _add_train_flags(sp)
    sp.set_defaults(func=cmd_train_layerwise)

    sp = sub.add_parser("eval-ppl", help="held-out perplexity of a checkpoint")
    corpus_args(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--test-frac", type=float, default=0.3,
                    help="fraction of each document's tokens held out")
    sp.add_argument("--mode", choices=["mean", "sample"], default="mean")
    sp.add_argument("-S", type=int, default=None)
    sp.set_defaults(func=cmd_eval_ppl)

    sp = sub.add_parser("classify", help="predict labels (CSV)")
    corpus_args(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--n-collect", type=int, default=50)
    sp.add_argument("--output", default=None)
    sp.set_defaults(func=cmd_classify)

    sp = sub.add_parser("encode", help="per-document topic weights (CSV)")
    corpus_args(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--layer", type=int, default=1)
    sp.add_argument("--mode", choices=["mean", "sample"], default="mean")
    sp.add_argument("--output", default=None)
    sp.set_defaults(func=cmd_encode)

    sp = sub.add_parser("topics", help="export the topic hierarchy")
    sp.add_argument("--model", required=True)
    sp.add_argument("--vocab", default=None)
    sp.add_argument("--out-prefix", required=True)
    sp.add_argument("--top-words", type=int, default=15)
    sp.add_argument("--threshold", type=float, default=0.05)
    sp.set_defaults(func=cmd_topics)

    sp = sub.add_parser("oracle-gibbs", help="batch Gibbs sampler for small corpora")
    corpus_args(sp)
    sp.add_argument("--widths", required=True)
    sp.add_argument("--sweeps", type=int, default=1000)
    sp.add_argument("--burn-in", type=int, default=None)
    sp.add_argument("--stride", type=int, default=1)
    sp.add_argument("--test-frac", type=float, default=None)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_oracle_gibbs)

    sp = sub.add_parser("generate", help="sample a synthetic corpus")
    sp.add_argument("--vocab-size", type=int, default=100)
    sp.add_argument("--widths", default="10")
    sp.add_argument("--num-docs", type=int, default=1000)
    sp.add_argument("--r", type=float, default=0.3)
    sp.add_argument("--top-rate", type=float, default=0.015)
    sp.add_argument("--concentration", type=float, default=0.1)
    sp.add_argument("--out", required=True)
    sp.add_argument("--truth", default=None, help="optional .npz with the true parameters")
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("bench", help="seconds per document for inference")
    corpus_args(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--mode", choices=["encode", "gibbs", "both"], default="both")
    sp.add_argument("--n-docs", type=int, default=100)
    sp.add_argument("--gibbs-sweeps", type=int, default=100)
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads:
        from threadpoolctl import threadpool_limits
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    return args.func(args)
