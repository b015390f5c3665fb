"""Bag-of-words corpora: UCI docword/vocab IO, held-out splits, mini-batches."""

import gzip
import os
from dataclasses import dataclass

import numpy as np
from scipy import sparse


class CorpusFormatError(ValueError):
    pass


@dataclass
class Corpus:
    """Document-term counts (rows are documents) plus optional vocab and labels.

    Labels, when present, are integers in ``1..C``.
    """

    counts: sparse.csr_matrix
    vocab: list | None = None
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.counts = sparse.csr_matrix(self.counts, dtype=np.int64)
        self.counts.sum_duplicates()
        self.counts.eliminate_zeros()
        if self.counts.data.size and self.counts.data.min() < 0:
            raise ValueError("counts must be nonnegative")
        if self.vocab is not None and len(self.vocab) != self.vocab_size:
            raise ValueError("vocab length does not match the number of columns")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.num_docs,):
                raise ValueError("one label per document required")
            if self.labels.min() < 1:
                raise ValueError("labels are 1-based")

    @property
    def num_docs(self):
        return self.counts.shape[0]

    @property
    def vocab_size(self):
        return self.counts.shape[1]

    @property
    def num_classes(self):
        return 0 if self.labels is None else int(self.labels.max())

    def subset(self, idx):
        idx = np.asarray(idx)
        labels = None if self.labels is None else self.labels[idx]
        return Corpus(self.counts[idx], self.vocab, labels)

    def with_counts(self, counts):
        return Corpus(counts, self.vocab, self.labels)


@dataclass
class HeldoutSplit:
    train: Corpus
    test: Corpus


@dataclass
class MiniBatch:
    doc_indices: np.ndarray
    counts: np.ndarray  # dense (m, V) float
    rho: float
    labels: np.ndarray | None = None


def _open_text(path):
    path = os.fspath(path)
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"\x1f\x8b":
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, "r", encoding="utf-8")


def _parse_ints(line, n, lineno):
    parts = line.split()
    if len(parts) != n:
        raise CorpusFormatError(f"line {lineno}: expected {n} integers, got {line!r}")
    try:
        return [int(p) for p in parts]
    except ValueError as exc:
        raise CorpusFormatError(f"line {lineno}: {exc}") from None


def load_uci_bow(docword_path, vocab_path=None, labels_path=None):
    """Read a UCI bag-of-words corpus (gzip or plain text).

    The docword file starts with three header lines ``N``, ``V``, ``NNZ``
    followed by ``NNZ`` lines ``doc term count`` with 1-based ids.  The
    optional label file holds one integer in ``1..C`` per document.
    """
    with _open_text(docword_path) as fh:
        lines = [ln for ln in (raw.strip() for raw in fh) if ln]
    if len(lines) < 3:
        raise CorpusFormatError("missing N/V/NNZ header")
    (n_docs,) = _parse_ints(lines[0], 1, 1)
    (n_vocab,) = _parse_ints(lines[1], 1, 2)
    (nnz,) = _parse_ints(lines[2], 1, 3)
    body = lines[3:]
    if len(body) != nnz:
        raise CorpusFormatError(f"header says {nnz} entries, body has {len(body)}")
    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz, dtype=np.int64)
    for i, line in enumerate(body):
        d, w, c = _parse_ints(line, 3, i + 4)
        if not (1 <= d <= n_docs and 1 <= w <= n_vocab):
            raise CorpusFormatError(f"line {i + 4}: index out of range")
        if c <= 0:
            raise CorpusFormatError(f"line {i + 4}: count must be positive")
        rows[i], cols[i], vals[i] = d - 1, w - 1, c
    counts = sparse.csr_matrix((vals, (rows, cols)), shape=(n_docs, n_vocab))

    vocab = None
    if vocab_path is not None:
        with _open_text(vocab_path) as fh:
            vocab = [ln.rstrip("\n") for ln in fh]
        while vocab and vocab[-1] == "":
            vocab.pop()
        if len(vocab) != n_vocab:
            raise CorpusFormatError(f"vocab has {len(vocab)} lines, expected {n_vocab}")

    labels = None
    if labels_path is not None:
        with _open_text(labels_path) as fh:
            labels = np.array([int(ln) for ln in fh if ln.strip()], dtype=np.int64)
        if labels.size != n_docs:
            raise CorpusFormatError("label file length does not match N")
    return Corpus(counts, vocab, labels)


def write_uci_bow(corpus, docword_path, vocab_path=None, labels_path=None):
    coo = corpus.counts.tocoo()
    order = np.lexsort((coo.col, coo.row))
    opener = gzip.open if os.fspath(docword_path).endswith(".gz") else open
    with opener(docword_path, "wt", encoding="utf-8") as fh:
        fh.write(f"{corpus.num_docs}\n{corpus.vocab_size}\n{coo.nnz}\n")
        for i in order:
            fh.write(f"{coo.row[i] + 1} {coo.col[i] + 1} {coo.data[i]}\n")
    if vocab_path is not None:
        vocab = corpus.vocab or [f"w{v}" for v in range(corpus.vocab_size)]
        with open(vocab_path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(vocab) + "\n")
    if labels_path is not None and corpus.labels is not None:
        with open(labels_path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(str(int(y)) for y in corpus.labels) + "\n")


def split_heldout(corpus, frac, rng):
    """Per-token split: each token goes to the training part with prob ``frac``."""
    if not 0.0 < frac < 1.0:
        raise ValueError("frac must lie in (0, 1)")
    c = corpus.counts
    train_data = rng.binomial(c.data, frac)
    train = sparse.csr_matrix((train_data, c.indices.copy(), c.indptr.copy()), shape=c.shape)
    test = sparse.csr_matrix((c.data - train_data, c.indices.copy(), c.indptr.copy()), shape=c.shape)
    return HeldoutSplit(corpus.with_counts(train), corpus.with_counts(test))


def next_batch(corpus, batch_size, rng):
    """Draw ``batch_size`` distinct documents; ``rho = N / batch_size``."""
    n = corpus.num_docs
    if not 1 <= batch_size <= n:
        raise ValueError(f"batch size must be in [1, {n}]")
    if batch_size == n:
        idx = np.arange(n)
    else:
        idx = np.sort(rng.choice(n, size=batch_size, replace=False))
    dense = corpus.counts[idx].toarray().astype(float)
    labels = None if corpus.labels is None else corpus.labels[idx]
    return MiniBatch(idx, dense, n / batch_size, labels)
