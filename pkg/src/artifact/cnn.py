"""Convolutional window classifier.

Embedded window -> parallel convolution filters with ReLU -> max-over-time
pooling -> dropout -> dense ReLU -> one sigmoid unit giving P(malicious).
Forward and backward passes are written out by hand over minibatches.
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import (
    ConfigError,
    EmptyFeatureMap,
    KernelTooLarge,
    SingleClassDataset,
    SpecMismatch,
)
from .features import EmbeddingTable, build_vocabulary, train_word2vec
from .ingest import WindowSpec
from .metrics import Curve, EpochRecord, encode_labels
from .nn import OptimizerConfig, dropout_mask, glorot_uniform, optimizer_step, relu, sigmoid
from .serialization import BlockWriter, frame, read_bytes, unframe, write_bytes

MODEL_MAGIC = b"ARHC"


def conv_feature_map(x, kernel, bias: float, h: int) -> np.ndarray:
    """Feature map ``z_i = relu(<G, rows i..i+h-1 flattened> + b)``.

    ``kernel`` holds ``h * k`` coefficients in row-major window order. Terms
    are accumulated in that order for every position, so the result is
    reproducible term-for-term by a scalar loop.
    """
    x = np.asarray(x, dtype=np.float64)
    n, k = x.shape
    if h > n:
        raise KernelTooLarge(f"filter height {h} exceeds window length {n}")
    g = np.asarray(kernel, dtype=np.float64).reshape(h * k)
    L = n - h + 1
    acc = np.zeros(L)
    for r in range(h):
        for c in range(k):
            acc += g[r * k + c] * x[r:r + L, c]
    return relu(acc + bias)


def rowwise_matmul(A, W) -> np.ndarray:
    """``A @ W`` with a summation order that does not depend on the row count.

    BLAS kernels change their blocking with the batch shape, so the same
    window could score differently depending on its neighbours. einsum's
    unoptimized path reduces each output element on its own.
    """
    return np.einsum("ij,jk->ik", A, W)


def max_over_time_pool(z):
    """Return ``(max(z), argmax)``; ties resolve to the first index."""
    z = np.asarray(z, dtype=np.float64)
    if z.size == 0:
        raise EmptyFeatureMap("cannot pool an empty feature map")
    i = int(np.argmax(z))
    return float(z[i]), i


def split_filters(total: int, sizes, mode: str = "total") -> list:
    """Filter count per size: ``total`` spread evenly (remainder to the
    smallest sizes) or, with ``mode="per_size"``, ``total`` for each size."""
    sizes = list(sizes)
    if mode == "per_size":
        return [total] * len(sizes)
    if mode != "total":
        raise ConfigError(f"unknown filter mode {mode!r}")
    if total < len(sizes):
        raise ConfigError("need at least one filter per size")
    base, extra = divmod(total, len(sizes))
    return [base + (1 if i < extra else 0) for i in range(len(sizes))]


@dataclass
class CnnConfig:
    m: int = 7
    l: int = 6
    k: int = 20
    filter_sizes: tuple = (3, 4, 5)
    total_filters: int = 20
    filter_mode: str = "total"
    dense_units: int = 64
    dropout_rate: float = 0.5
    optimizer: OptimizerConfig = field(default_factory=lambda: OptimizerConfig())
    threshold: float = 0.5
    fine_tune_embeddings: bool = True

    def __post_init__(self):
        if isinstance(self.optimizer, dict):
            self.optimizer = OptimizerConfig(**self.optimizer)
        self.filter_sizes = tuple(int(h) for h in self.filter_sizes)
        n = self.m * self.l
        if any(h > n or h < 1 for h in self.filter_sizes):
            raise KernelTooLarge(f"filter sizes {self.filter_sizes} must lie in [1, n={n}]")
        if not 0 < self.threshold < 1:
            raise ConfigError("threshold must be in (0, 1)")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError("dropout_rate must be in [0, 1)")
        self.filters_per_size = split_filters(self.total_filters, self.filter_sizes, self.filter_mode)

    @property
    def window_spec(self) -> WindowSpec:
        return WindowSpec(self.m, self.l)

    @property
    def n(self) -> int:
        return self.m * self.l

    def to_dict(self) -> dict:
        d = asdict(self)
        d["filter_sizes"] = list(self.filter_sizes)
        d.pop("filters_per_size", None)
        return d


# architecture plus training schedule; the 3-filter network model needs
# small batches to make progress at learning rate 0.001
SYSCALL_CNN = dict(m=7, l=6, k=20, filter_sizes=(3, 4, 5), total_filters=20, epochs=15, batch_size=32)
NETWORK_CNN = dict(m=5, l=1, k=10, filter_sizes=(2, 3), total_filters=3, epochs=30, batch_size=8)


class CnnNet:
    """Parameters plus the batched forward/backward passes."""

    def __init__(self, config: CnnConfig, embedding: EmbeddingTable, params: Optional[dict] = None,
                 rng=None):
        self.config = config
        self.vocab = embedding.vocab
        if embedding.k != config.k:
            raise ConfigError(f"embedding has k={embedding.k}, config wants k={config.k}")
        if params is None:
            params = self._init_params(embedding.vectors, np.random.default_rng(rng))
        self.params = params

    def _init_params(self, vectors, rng) -> dict:
        cfg = self.config
        k = cfg.k
        p = {"embedding": np.array(vectors, dtype=np.float64, copy=True)}
        p["embedding"][0] = 0.0
        for h, f in zip(cfg.filter_sizes, cfg.filters_per_size):
            # Glorot over the (h*k) -> f map, conv-style fans
            p[f"conv{h}_G"] = glorot_uniform(rng, h * k, f, (h * k, f))
            p[f"conv{h}_b"] = np.zeros(f)
        F = sum(cfg.filters_per_size)
        p["dense_W"] = glorot_uniform(rng, F, cfg.dense_units, (F, cfg.dense_units))
        p["dense_b"] = np.zeros(cfg.dense_units)
        p["out_w"] = glorot_uniform(rng, cfg.dense_units, 1, (cfg.dense_units,))
        p["out_b"] = np.zeros(1)
        return p

    def zero_(self):
        for v in self.params.values():
            v[...] = 0.0

    @property
    def embedding(self) -> EmbeddingTable:
        return EmbeddingTable(self.vocab, self.params["embedding"])

    def encode(self, windows) -> np.ndarray:
        idx = self.vocab.encode_many(windows)
        if idx.shape[1] != self.config.n:
            raise SpecMismatch(f"windows have {idx.shape[1]} tokens, model expects n={self.config.n}")
        return idx

    def _stacked_kernels(self):
        """All (filter size, offset) slices as one ``(k, C)`` matrix."""
        cfg, p, k = self.config, self.params, self.config.k
        blocks, layout, col = [], [], 0
        for h, f in zip(cfg.filter_sizes, cfg.filters_per_size):
            G = p[f"conv{h}_G"].reshape(h, k, f)
            offs = []
            for j in range(h):
                blocks.append(G[j])
                offs.append(col)
                col += f
            layout.append((h, f, offs))
        return np.concatenate(blocks, axis=1), layout

    def forward(self, idx, training=False, rng=None, keep_cache=False):
        cfg, p = self.config, self.params
        B, n = idx.shape
        k = cfg.k
        X = p["embedding"][idx]                       # (B, n, k)
        Gall, layout = self._stacked_kernels()
        # cached passes feed training, where BLAS speed matters more
        mm = np.matmul if keep_cache else rowwise_matmul
        Y = mm(X.reshape(B * n, k), Gall).reshape(B, n, -1)
        pooled, routes = [], []
        for (h, f, offs) in layout:
            L = n - h + 1
            A = np.broadcast_to(p[f"conv{h}_b"], (B, L, f)).copy()
            for j, c0 in enumerate(offs):
                A += Y[:, j:j + L, c0:c0 + f]
            arg = A.argmax(axis=1)                     # (B, f), first index on ties
            amax = np.take_along_axis(A, arg[:, None, :], axis=1)[:, 0, :]
            pooled.append(relu(amax))
            routes.append((h, f, offs, L, arg, amax > 0))
        P = np.concatenate(pooled, axis=1)             # (B, F)
        mask = None
        if training and cfg.dropout_rate > 0:
            mask = dropout_mask(P.shape, cfg.dropout_rate, rng)
            Pd = P * mask
        else:
            Pd = P
        Z1 = mm(Pd, p["dense_W"]) + p["dense_b"]
        H1 = relu(Z1)
        logit = mm(H1, p["out_w"][:, None])[:, 0] + p["out_b"][0]
        prob = sigmoid(logit)
        cache = (idx, X, Gall, routes, mask, Pd, Z1, H1) if keep_cache else None
        return logit, prob, cache

    def backward(self, dlogit, cache) -> dict:
        """Gradients of ``sum(dlogit * logit)`` w.r.t. every parameter."""
        cfg, p = self.config, self.params
        idx, X, Gall, routes, mask, Pd, Z1, H1 = cache
        B, n = idx.shape
        k = cfg.k
        g = {"out_w": H1.T @ dlogit, "out_b": np.array([dlogit.sum()])}
        dZ1 = np.outer(dlogit, p["out_w"]) * (Z1 > 0)
        g["dense_W"] = Pd.T @ dZ1
        g["dense_b"] = dZ1.sum(axis=0)
        dP = dZ1 @ p["dense_W"].T
        if mask is not None:
            dP = dP * mask
        dY = np.zeros((B, n, Gall.shape[1]))
        col = 0
        rows = np.arange(B)[:, None]
        for (h, f, offs, L, arg, alive) in routes:
            dA = np.zeros((B, L, f))
            # all pooling gradient goes to the argmax position
            dA[rows, arg, np.arange(f)[None, :]] = dP[:, col:col + f] * alive
            col += f
            g[f"conv{h}_b"] = dA.sum(axis=(0, 1))
            for j, c0 in enumerate(offs):
                dY[:, j:j + L, c0:c0 + f] += dA
        dYf = dY.reshape(B * n, -1)
        dGall = X.reshape(B * n, k).T @ dYf            # (k, C)
        for (h, f, offs, L, arg, alive) in routes:
            g[f"conv{h}_G"] = np.stack([dGall[:, c0:c0 + f] for c0 in offs]).reshape(h * k, f)
        if cfg.fine_tune_embeddings:
            dX = dYf @ Gall.T
            dE = np.zeros_like(p["embedding"])
            np.add.at(dE, idx.reshape(-1), dX)
            g["embedding"] = dE
        return g

    def loss_and_grads(self, idx, y, sample_weight=None, training=False, rng=None):
        """Weighted mean binary cross-entropy and its gradients."""
        logit, prob, cache = self.forward(idx, training=training, rng=rng, keep_cache=True)
        y = np.asarray(y, dtype=np.float64)
        w = np.ones_like(y) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
        # -[y log s(x) + (1-y) log(1-s(x))] = logaddexp(0, x) - y x
        per = np.logaddexp(0.0, logit) - y * logit
        denom = w.sum()
        loss = float((w * per).sum() / denom)
        dlogit = w * (prob - y) / denom
        return loss, self.backward(dlogit, cache), prob

    def predict_proba(self, idx, batch_size=4096) -> np.ndarray:
        out = np.empty(idx.shape[0])
        for s in range(0, idx.shape[0], batch_size):
            out[s:s + batch_size] = self.forward(idx[s:s + batch_size])[1]
        return out


def _balanced_weights(y: np.ndarray, class_weight) -> np.ndarray:
    if class_weight is None:
        return np.ones(len(y))
    if class_weight == "balanced":
        counts = np.bincount(y, minlength=2).astype(np.float64)
        cw = len(y) / (2.0 * counts)
    elif isinstance(class_weight, dict):
        cw = np.array([class_weight.get(0, 1.0), class_weight.get(1, 1.0)], dtype=np.float64)
    else:
        raise ConfigError(f"bad class_weight {class_weight!r}")
    return cw[y]


def stratified_holdout(y: np.ndarray, fraction: float, rng) -> tuple:
    """Indices ``(train, holdout)`` with ``fraction`` of each class held out."""
    train, hold = [], []
    for c in (0, 1):
        idx = np.flatnonzero(y == c)
        idx = idx[rng.permutation(idx.size)]
        cut = int(round(fraction * idx.size))
        hold.append(idx[:cut])
        train.append(idx[cut:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(hold))


class CnnClassifier(ClassifierMixin, BaseEstimator):
    """Window classifier; ``X`` is a sequence of token windows (lists or
    :class:`TokenSequence`), ``y`` labels (1/"malicious" vs 0/"normal").

    When no ``embedding`` is given, ``fit`` builds the vocabulary and trains
    skip-gram embeddings on the training windows first.
    """

    def __init__(self, m=7, l=6, k=20, filter_sizes=(3, 4, 5), total_filters=20, filter_mode="total",
                 dense_units=64, dropout_rate=0.5, optimizer="sgd_momentum", learning_rate=0.001,
                 momentum=0.80, decay=1e-5, threshold=0.5, fine_tune_embeddings=True, epochs=10,
                 batch_size=32, validation_fraction=0.1, class_weight="balanced", restore_best=True,
                 embedding=None, w2v_epochs=5, w2v_window=5, w2v_negatives=5, w2v_max_windows=20_000,
                 max_vocab=10_000, min_count=1, random_state=0, verbose=False):
        self.m = m
        self.l = l
        self.k = k
        self.filter_sizes = filter_sizes
        self.total_filters = total_filters
        self.filter_mode = filter_mode
        self.dense_units = dense_units
        self.dropout_rate = dropout_rate
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.decay = decay
        self.threshold = threshold
        self.fine_tune_embeddings = fine_tune_embeddings
        self.epochs = epochs
        self.batch_size = batch_size
        self.validation_fraction = validation_fraction
        self.class_weight = class_weight
        self.restore_best = restore_best
        self.embedding = embedding
        self.w2v_epochs = w2v_epochs
        self.w2v_window = w2v_window
        self.w2v_negatives = w2v_negatives
        self.w2v_max_windows = w2v_max_windows
        self.max_vocab = max_vocab
        self.min_count = min_count
        self.random_state = random_state
        self.verbose = verbose

    def _config(self) -> CnnConfig:
        opt = OptimizerConfig(kind=self.optimizer, learning_rate=self.learning_rate,
                              momentum=self.momentum, decay=self.decay)
        return CnnConfig(m=self.m, l=self.l, k=self.k, filter_sizes=tuple(self.filter_sizes),
                         total_filters=self.total_filters, filter_mode=self.filter_mode,
                         dense_units=self.dense_units, dropout_rate=self.dropout_rate, optimizer=opt,
                         threshold=self.threshold, fine_tune_embeddings=self.fine_tune_embeddings)

    def _embedding(self, windows, seed) -> EmbeddingTable:
        if self.embedding is not None:
            return self.embedding
        vocab = build_vocabulary(windows, self.max_vocab, self.min_count)
        corpus = windows
        if self.w2v_max_windows and len(windows) > self.w2v_max_windows:
            pick = np.random.default_rng(seed).choice(len(windows), self.w2v_max_windows, replace=False)
            corpus = [windows[i] for i in np.sort(pick)]
        return train_word2vec(corpus, vocab, k=self.k, window=self.w2v_window,
                              negatives=self.w2v_negatives, epochs=self.w2v_epochs, seed=seed)

    def fit(self, X, y, X_val=None, y_val=None):
        X = list(X)
        y = encode_labels(y)
        if len(np.unique(y)) < 2:
            raise SingleClassDataset("training data must contain both normal and malicious windows")
        rng = np.random.default_rng(self.random_state)
        seeds = rng.integers(0, 2**31, size=4)
        config = self._config()
        if X_val is None and self.validation_fraction:
            tr, va = stratified_holdout(y, self.validation_fraction, np.random.default_rng(seeds[0]))
            X_val, y_val = [X[i] for i in va], y[va]
            X, y = [X[i] for i in tr], y[tr]
        elif X_val is not None:
            y_val = encode_labels(y_val)
        net = CnnNet(config, self._embedding(X, int(seeds[1])), rng=int(seeds[2]))
        idx = net.encode(X)
        idx_val = net.encode(X_val) if X_val is not None and len(X_val) else None
        weights = _balanced_weights(y, self.class_weight)
        train_rng = np.random.default_rng(seeds[3])
        state: dict = {}
        curve = Curve()
        best = (-1.0, None)
        bs = self.batch_size
        for epoch in range(1, self.epochs + 1):
            order = train_rng.permutation(len(y))
            tot_loss = tot_w = correct = 0.0
            for s in range(0, len(order), bs):
                b = order[s:s + bs]
                loss, grads, prob = net.loss_and_grads(idx[b], y[b], weights[b], training=True,
                                                       rng=train_rng)
                if "embedding" in grads:
                    grads["embedding"][0] = 0.0     # padding row stays frozen at zero
                optimizer_step(net.params, grads, state, config.optimizer)
                wsum = weights[b].sum()
                tot_loss += loss * wsum
                tot_w += wsum
                correct += np.sum((prob >= config.threshold) == (y[b] == 1))
            rec = EpochRecord(epoch, tot_loss / tot_w, correct / len(y))
            if idx_val is not None:
                pv = net.predict_proba(idx_val)
                yv = y_val.astype(np.float64)
                logit = np.log(np.clip(pv, 1e-300, None)) - np.log(np.clip(1 - pv, 1e-300, None))
                rec.val_loss = float(np.mean(np.logaddexp(0.0, logit) - yv * logit))
                rec.val_acc = float(np.mean((pv >= config.threshold) == (y_val == 1)))
                if rec.val_acc > best[0]:
                    best = (rec.val_acc, copy.deepcopy(net.params))
            curve.append(rec)
            if self.verbose:
                print(f"epoch {epoch}: loss={rec.train_loss:.4f} acc={rec.train_acc:.4f} "
                      f"val_loss={rec.val_loss:.4f} val_acc={rec.val_acc:.4f}")
        if self.restore_best and best[1] is not None:
            net.params = best[1]
        self.net_ = net
        self.curve_ = curve
        self.best_val_acc_ = best[0] if best[1] is not None else None
        self.classes_ = np.array([0, 1])
        return self

    # inference

    def _idx(self, X):
        check_is_fitted(self, "net_")
        if isinstance(X, np.ndarray) and X.dtype.kind in "iu":
            return X
        return self.net_.encode(list(X))

    def predict_proba(self, X) -> np.ndarray:
        p = self.net_.predict_proba(self._idx(X))
        return np.column_stack([1.0 - p, p])

    def decision_function(self, X) -> np.ndarray:
        return self.net_.predict_proba(self._idx(X))

    def predict(self, X) -> np.ndarray:
        return (self.decision_function(X) >= self.net_.config.threshold).astype(np.int64)

    def forward(self, seq, training=False, seed=None) -> float:
        """Probability of malicious for a single window."""
        idx = self._idx([seq])
        return float(self.net_.forward(idx, training=training, rng=np.random.default_rng(seed))[1][0])

    def predict_one(self, seq) -> dict:
        p = self.forward(seq)
        label = "malicious" if p >= self.net_.config.threshold else "normal"
        return {"label": label, "probability": p}

    @property
    def window_spec(self) -> WindowSpec:
        return self.net_.config.window_spec

    # persistence

    def to_bytes(self) -> bytes:
        check_is_fitted(self, "net_")
        w = BlockWriter()
        w.json(self.net_.config.to_dict())
        w.raw(self.net_.embedding.to_bytes())
        names = sorted(k for k in self.net_.params if k != "embedding")
        w.u64(len(names))
        for name in names:
            w.array(name, self.net_.params[name])
        return frame(MODEL_MAGIC, w.getvalue())

    @classmethod
    def from_bytes(cls, data: bytes) -> "CnnClassifier":
        r = unframe(MODEL_MAGIC, data)
        cfg_dict = r.json()
        config = CnnConfig(**cfg_dict)
        table = EmbeddingTable.read_from(r)
        params = {"embedding": table.vectors.copy()}
        for _ in range(r.u64()):
            name, arr = r.array()
            params[name] = arr.copy()
        opt = config.optimizer
        est = cls(m=config.m, l=config.l, k=config.k, filter_sizes=config.filter_sizes,
                  total_filters=config.total_filters, filter_mode=config.filter_mode,
                  dense_units=config.dense_units, dropout_rate=config.dropout_rate,
                  optimizer=opt.kind, learning_rate=opt.learning_rate, momentum=opt.momentum,
                  decay=opt.decay, threshold=config.threshold,
                  fine_tune_embeddings=config.fine_tune_embeddings)
        est.net_ = CnnNet(config, table, params=params)
        est.classes_ = np.array([0, 1])
        return est

    def save(self, path):
        write_bytes(path, self.to_bytes())

    @classmethod
    def load(cls, path) -> "CnnClassifier":
        return cls.from_bytes(read_bytes(path))


def save_model(model: CnnClassifier, path):
    model.save(path)


def load_model(path) -> CnnClassifier:
    return CnnClassifier.load(path)
