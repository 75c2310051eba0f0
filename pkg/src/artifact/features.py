"""Token vocabulary, word2vec embeddings and bag-of-words features."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from numba import njit
from scipy import sparse
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigError, EmptyCorpus, VersionMismatch
from .ingest import PAD, UNK, TokenSequence
from .serialization import BlockReader, BlockWriter, read_bytes, write_bytes

EMBEDDING_MAGIC = b"ARH1"


def _tokens(seq):
    return seq.tokens if isinstance(seq, TokenSequence) else seq


class Vocabulary:
    """Ordered token list with ``<PAD>`` at 0 and ``<UNK>`` at 1."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tokens[:2] != [PAD, UNK]:
            raise ConfigError("vocabulary must start with <PAD>, <UNK>")
        if len(set(tokens)) != len(tokens):
            raise ConfigError("vocabulary tokens must be distinct")
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}

    def __len__(self):
        return len(self.tokens)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def __repr__(self):
        return f"Vocabulary(size={len(self)})"

    def encode(self, tokens: Iterable[str]) -> np.ndarray:
        get = self.index.get
        return np.fromiter((get(t, 1) for t in tokens), dtype=np.int64)

    def encode_many(self, windows) -> np.ndarray:
        """Encode equal-length windows into an ``(N, n)`` index matrix."""
        get = self.index.get
        rows = [[get(t, 1) for t in _tokens(w)] for w in windows]
        return np.asarray(rows, dtype=np.int64).reshape(len(rows), -1)


def build_vocabulary(corpus: Iterable, max_size: int = 10_000, min_count: int = 1) -> Vocabulary:
    """Most frequent tokens (ties by first occurrence) after ``<PAD>``, ``<UNK>``.

    ``max_size`` bounds the number of regular tokens kept.
    """
    counts = Counter()
    seen = 0
    for seq in corpus:
        seen += 1
        counts.update(_tokens(seq))
    if not seen:
        raise EmptyCorpus("cannot build a vocabulary from an empty corpus")
    counts.pop(PAD, None)
    counts.pop(UNK, None)
    # Counter preserves first-insertion order, so a stable sort on count breaks ties by first occurrence
    ranked = sorted(counts.items(), key=lambda kv: -kv[1])
    kept = [t for t, c in ranked if c >= min_count][:max_size]
    return Vocabulary([PAD, UNK] + kept)


@dataclass
class EmbeddingTable:
    vocab: Vocabulary
    vectors: np.ndarray

    @property
    def k(self) -> int:
        return self.vectors.shape[1]

    def __post_init__(self):
        if self.vectors.shape[0] != len(self.vocab):
            raise ConfigError("embedding rows must equal vocabulary size")

    def to_bytes(self) -> bytes:
        w = BlockWriter()
        w.raw(EMBEDDING_MAGIC)
        w.u64(len(self.vocab))
        w.u64(self.k)
        for t in self.vocab.tokens:
            w.string(t)
        w.raw(np.ascontiguousarray(self.vectors, dtype="<f8").tobytes())
        return w.getvalue()

    @classmethod
    def read_from(cls, reader: BlockReader) -> "EmbeddingTable":
        if reader.raw(4) != EMBEDDING_MAGIC:
            raise VersionMismatch("not an ARH1 embedding block")
        V, k = reader.u64(), reader.u64()
        tokens = [reader.string() for _ in range(V)]
        vectors = np.frombuffer(reader.raw(8 * V * k), dtype="<f8").astype(np.float64).reshape(V, k)
        return cls(Vocabulary(tokens), vectors)

    @classmethod
    def from_bytes(cls, data: bytes) -> "EmbeddingTable":
        return cls.read_from(BlockReader(data))

    def save(self, path):
        write_bytes(path, self.to_bytes())

    @classmethod
    def load(cls, path) -> "EmbeddingTable":
        return cls.from_bytes(read_bytes(path))


@njit(cache=True)
def _sgns_epoch(w_in, w_out, centers, targets, lr0, lr1):
    """Sequential skip-gram negative-sampling SGD over one epoch of pairs.

    ``targets[i, 0]`` is the true context, the rest are negatives. Returns
    the summed loss. Learning rate decays linearly from ``lr0`` to ``lr1``.
    """
    n_pairs, n_t = targets.shape
    k = w_in.shape[1]
    grad_in = np.zeros(k)
    total = 0.0
    for i in range(n_pairs):
        lr = lr0 + (lr1 - lr0) * i / max(1, n_pairs)
        c = centers[i]
        grad_in[:] = 0.0
        for j in range(n_t):
            t = targets[i, j]
            if j > 0 and t == targets[i, 0]:
                continue
            label = 1.0 if j == 0 else 0.0
            f = 0.0
            for d in range(k):
                f += w_in[c, d] * w_out[t, d]
            if f > 30.0:
                s = 1.0
            elif f < -30.0:
                s = 0.0
            else:
                s = 1.0 / (1.0 + np.exp(-f))
            if label == 1.0:
                total -= np.log(max(s, 1e-300))
            else:
                total -= np.log(max(1.0 - s, 1e-300))
            g = (label - s) * lr
            for d in range(k):
                grad_in[d] += g * w_out[t, d]
                w_out[t, d] += g * w_in[c, d]
        for d in range(k):
            w_in[c, d] += grad_in[d]
    return total


def train_word2vec(corpus, vocab: Vocabulary, k: int = 20, window: int = 5, negatives: int = 5,
                   epochs: int = 5, seed: int = 0, learning_rate: float = 0.025,
                   sample: float = 1e-3, return_losses: bool = False):
    """Skip-gram with negative sampling.

    Each window is one sentence. Pair extraction, frequent-token subsampling
    and negative draws come from one seeded generator; the SGD sweep itself
    is sequential, so results are deterministic per seed. ``<PAD>`` never
    acts as centre, context or negative and its row stays zero.
    """
    if k < 1:
        raise ConfigError("embedding dimension must be >= 1")
    sentences = [vocab.encode(_tokens(s)) for s in corpus]
    if not sentences:
        raise EmptyCorpus("cannot train embeddings on an empty corpus")
    V = len(vocab)
    rng = np.random.default_rng(seed)
    w_in = rng.uniform(-0.5 / k, 0.5 / k, size=(V, k))
    w_in[0] = 0.0
    w_out = np.zeros((V, k))

    flat = np.concatenate(sentences)
    sent_id = np.concatenate([np.full(len(s), i) for i, s in enumerate(sentences)])
    counts = np.bincount(flat, minlength=V).astype(np.float64)
    counts[0] = 0.0
    noise = counts ** 0.75
    if noise.sum() == 0:
        raise EmptyCorpus("corpus holds only padding")
    noise_cdf = np.cumsum(noise / noise.sum())
    if sample > 0:
        freq = counts / counts.sum()
        with np.errstate(divide="ignore", invalid="ignore"):
            keep_prob = np.where(freq > 0, np.minimum(1.0, (np.sqrt(freq / sample) + 1) * sample / freq), 0.0)
    else:
        keep_prob = (counts > 0).astype(np.float64)

    losses = []
    for epoch in range(epochs):
        keep = (flat != 0) & (rng.random(flat.size) < keep_prob[flat])
        pos = np.flatnonzero(keep)
        toks, sids = flat[pos], sent_id[pos]
        reach = rng.integers(1, window + 1, size=pos.size)
        centers, contexts = [], []
        for d in range(1, window + 1):
            same = sids[:-d] == sids[d:]
            ok = same & (reach[:-d] >= d)
            centers.append(toks[:-d][ok])
            contexts.append(toks[d:][ok])
            ok = same & (reach[d:] >= d)
            centers.append(toks[d:][ok])
            contexts.append(toks[:-d][ok])
        centers = np.concatenate(centers)
        contexts = np.concatenate(contexts)
        if centers.size == 0:
            losses.append(0.0)
            continue
        order = rng.permutation(centers.size)
        centers, contexts = centers[order], contexts[order]
        neg = np.minimum(np.searchsorted(noise_cdf, rng.random((centers.size, negatives))), V - 1)
        targets = np.ascontiguousarray(np.concatenate([contexts[:, None], neg], axis=1))
        lr0 = learning_rate * (1.0 - epoch / epochs)
        lr1 = max(learning_rate * 1e-4, learning_rate * (1.0 - (epoch + 1) / epochs))
        total = _sgns_epoch(w_in, w_out, centers, targets, lr0, lr1)
        losses.append(total / centers.size)
    w_in[0] = 0.0
    table = EmbeddingTable(vocab, w_in)
    return (table, losses) if return_losses else table


def embed_sequence(seq, table: EmbeddingTable) -> np.ndarray:
    """``n x k`` matrix whose row i is the embedding of token i (OOV -> ``<UNK>``)."""
    return table.vectors[table.vocab.encode(_tokens(seq))]


def bow_featurize(seq, vocab: Vocabulary) -> np.ndarray:
    """Raw token counts over ``vocab``; unseen tokens land in the ``<UNK>`` bucket."""
    return np.bincount(vocab.encode(_tokens(seq)), minlength=len(vocab)).astype(np.float64)


def bow_matrix(windows, vocab: Vocabulary) -> sparse.csr_matrix:
    """Sparse ``(N, V)`` count matrix; duplicate entries are summed on construction."""
    idx = vocab.encode_many(windows)
    rows = np.repeat(np.arange(idx.shape[0]), idx.shape[1])
    data = np.ones(idx.size)
    out = sparse.csr_matrix((data, (rows, idx.reshape(-1))), shape=(idx.shape[0], len(vocab)))
    out.sum_duplicates()
    return out


class Word2Vec(TransformerMixin, BaseEstimator):
    """Vocabulary + skip-gram embeddings as a transformer.

    ``transform`` maps windows to an ``(N, n, k)`` array of stacked embeddings.
    """

    def __init__(self, k=20, window=5, negatives=5, epochs=5, max_size=10_000, min_count=1,
                 learning_rate=0.025, random_state=0):
        self.k = k
        self.window = window
        self.negatives = negatives
        self.epochs = epochs
        self.max_size = max_size
        self.min_count = min_count
        self.learning_rate = learning_rate
        self.random_state = random_state

    def fit(self, X, y=None):
        X = list(X)
        self.vocab_ = build_vocabulary(X, self.max_size, self.min_count)
        self.table_ = train_word2vec(X, self.vocab_, k=self.k, window=self.window,
                                     negatives=self.negatives, epochs=self.epochs,
                                     seed=self.random_state, learning_rate=self.learning_rate)
        return self

    def transform(self, X):
        check_is_fitted(self, "table_")
        idx = self.vocab_.encode_many(list(X))
        return self.table_.vectors[idx]


class BowVectorizer(TransformerMixin, BaseEstimator):
    """Raw bag-of-words counts over the ``max_features`` most frequent tokens."""

    def __init__(self, max_features=10_000, min_count=1):
        self.max_features = max_features
        self.min_count = min_count

    def fit(self, X, y=None):
        self.vocab_ = build_vocabulary(list(X), self.max_features, self.min_count)
        return self

    def transform(self, X):
        check_is_fitted(self, "vocab_")
        return bow_matrix(list(X), self.vocab_)
