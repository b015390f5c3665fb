"""Held-out perplexity, classification error, topic trees and timing."""

import time
from dataclasses import dataclass, field

import numpy as np

from .decoder import projected_topics
from .encoder import encode


def perplexity_from_rates(test_counts, rates):
    """Per-held-out-word perplexity from per-sample layer-1 Poisson rates.

    ``rates`` is a list (one entry per posterior sample) of N x V matrices
    ``theta1 @ phi1.T``.  Rates are summed over samples and normalised per
    document before the log, matching the usual posterior-averaged predictive.
    """
    Y = test_counts.tocoo() if hasattr(test_counts, "tocoo") else None
    if Y is None:
        from scipy import sparse
        Y = sparse.coo_matrix(np.asarray(test_counts))
    total = Y.data.sum()
    if total <= 0:
        raise ValueError("test split holds no tokens")
    num = np.zeros(Y.nnz)
    den = np.zeros(Y.shape[0])
    for rate in rates:
        num += rate[Y.row, Y.col]
        den += rate.sum(axis=1)
    with np.errstate(divide="ignore"):
        logp = np.log(num) - np.log(den[Y.row])
    return float(np.exp(-np.sum(Y.data * logp) / total))


def perplexity(split, samples, enc, variant="whai", mode="mean", rng=None, S=None):
    """Perplexity of ``split.test`` given posterior samples of the globals.

    Each training-part document is encoded under every sample ``s`` (mean of
    the variational conditionals by default, or one draw with
    ``mode="sample"``) and the resulting layer-1 rates are pooled.
    """
    if S is not None:
        samples = samples[-S:]
    X = split.train.counts.toarray().astype(float)
    rates = []
    for g in samples:
        out = encode(X, enc, g, variant, rng=rng, mode=mode)
        rates.append(out.theta[0] @ g.phi[0].T)
    return perplexity_from_rates(split.test.counts, rates)


def classification_error(predictions, labels):
    """Percentage of mismatched labels."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape or labels.size == 0:
        raise ValueError("predictions and labels must be non-empty and aligned")
    return 100.0 * float(np.mean(predictions != labels))


@dataclass
class TopicNode:
    layer: int
    topic: int
    words: list
    weights: list
    r: float | None = None


@dataclass
class TopicTree:
    nodes: list = field(default_factory=list)
    edges: list = field(default_factory=list)  # (layer, parent, layer-1, child, weight)

    def children(self, layer, topic):
        return [(cl, ck, w) for (pl, pk, cl, ck, w) in self.edges if pl == layer and pk == topic]


def export_topic_tree(g, vocab=None, layers=None, top_words=15, threshold=0.05):
    """Build the topic hierarchy with projected word lists and edges.

    Topics are 1-based.  An edge joins topic k of layer l to topic k' of
    layer l-1 when ``phi[l-1][k'-1, k-1]`` exceeds ``threshold``.
    """
    L = g.num_layers
    layers = list(range(1, L + 1)) if layers is None else sorted(layers)
    vocab = vocab or [f"w{v}" for v in range(g.vocab_size)]
    tree = TopicTree()
    for l in layers:
        proj = projected_topics(g, l)
        for k in range(g.widths[l - 1]):
            order = np.argsort(-proj[:, k], kind="stable")[:top_words]
            r = float(g.r[k]) if l == L else None
            tree.nodes.append(TopicNode(l, k + 1, [vocab[i] for i in order],
                                        [float(proj[i, k]) for i in order], r))
    for l in layers:
        if l == 1 or (l - 1) not in layers:
            continue
        phi = g.phi[l - 1]
        child, parent = np.nonzero(phi > threshold)
        for kp, kc in sorted(zip(parent, child)):
            tree.edges.append((l, int(kp) + 1, l - 1, int(kc) + 1, float(phi[kc, kp])))
    return tree


def write_topic_tree(tree, text_path, dot_path=None):
    """Indented text outline plus an optional Graphviz description."""
    top = max(n.layer for n in tree.nodes)
    by_key = {(n.layer, n.topic): n for n in tree.nodes}
    lines = []

    def emit(node, depth, weight=None):
        head = f"L{node.layer}-T{node.topic}"
        if weight is not None:
            head += f" [{weight:.3f}]"
        if node.r is not None:
            head += f" r={node.r:.4g}"
        lines.append("  " * depth + head + ": " + " ".join(node.words))
        for cl, ck, w in tree.children(node.layer, node.topic):
            emit(by_key[(cl, ck)], depth + 1, w)

    for n in tree.nodes:
        if n.layer == top:
            emit(n, 0)
    with open(text_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    if dot_path is not None:
        with open(dot_path, "w", encoding="utf-8") as fh:
            fh.write("digraph topics {\n  rankdir=TB;\n")
            for n in tree.nodes:
                label = f"L{n.layer}-T{n.topic}\\n" + " ".join(n.words[:5])
                fh.write(f'  "L{n.layer}_{n.topic}" [label="{label}"];\n')
            for pl, pk, cl, ck, w in tree.edges:
                fh.write(f'  "L{pl}_{pk}" -> "L{cl}_{ck}" [weight={w:.4f}, penwidth={1 + 4 * w:.2f}];\n')
            fh.write("}\n")


def timing_report(g, enc, corpus, mode="encode", variant="whai", n_docs=100, gibbs_sweeps=100,
                  rng=None):
    """Seconds per document for out-of-sample inference.

    ``mode="encode"`` times one encoder pass per document; ``mode="gibbs"``
    times ``gibbs_sweeps`` sweeps with the globals fixed.  Returns a dict with
    the median per-document time, the first (warm-up) call and the batched
    marginal cost.
    """
    from .gibbs import infer_theta

    rng = rng or np.random.default_rng(0)
    n = min(n_docs, corpus.num_docs)
    X = corpus.counts[:n].toarray().astype(float)

    def run(rows):
        if mode == "encode":
            encode(rows, enc, g, variant, mode="mean")
        elif mode == "gibbs":
            infer_theta(rows, g, gibbs_sweeps, rng)
        else:
            raise ValueError("mode must be 'encode' or 'gibbs'")

    t0 = time.perf_counter()
    run(X[:1])
    warm = time.perf_counter() - t0
    per_doc = []
    for i in range(n):
        t0 = time.perf_counter()
        run(X[i:i + 1])
        per_doc.append(time.perf_counter() - t0)
    t0 = time.perf_counter()
    run(X)
    batched = (time.perf_counter() - t0) / n
    return {"median": float(np.median(per_doc)), "warmup": warm, "batched": batched,
            "n_docs": n}


def match_topics(learned, truth, greedy=False):
    """One-to-one matching of learned topic columns to reference columns.

    Returns the cosine similarity of each reference column (``truth``) to its
    matched learned column, ``-inf``-free: unmatched references (when fewer
    learned topics exist) get 0.  ``greedy=True`` repeatedly takes the best
    remaining pair instead of the optimal assignment.
    """
    from scipy.optimize import linear_sum_assignment

    A = learned / np.linalg.norm(learned, axis=0, keepdims=True)
    B = truth / np.linalg.norm(truth, axis=0, keepdims=True)
    cos = B.T @ A
    out = np.zeros(B.shape[1])
    if greedy:
        c = cos.copy()
        for _ in range(min(c.shape)):
            i, j = np.unravel_index(np.argmax(c), c.shape)
            out[i] = cos[i, j]
            c[i, :] = -np.inf
            c[:, j] = -np.inf
        return out
    rows, cols = linear_sum_assignment(-cos)
    out[rows] = cos[rows, cols]
    return out
