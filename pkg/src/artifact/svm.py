"""Linear SVM over bag-of-words counts, trained by minibatch subgradient
descent on the averaged regularized hinge loss with Adadelta."""
from __future__ import annotations

import copy

import numpy as np
from scipy import sparse
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .cnn import _balanced_weights, stratified_holdout
from .exceptions import DimensionMismatch, InvalidLabel, SingleClassDataset
from .features import Vocabulary, bow_matrix, build_vocabulary
from .ingest import WindowSpec
from .metrics import Curve, EpochRecord, encode_labels
from .nn import OptimizerConfig, optimizer_step
from .serialization import BlockWriter, frame, read_bytes, unframe, write_bytes

MODEL_MAGIC = b"ARHS"


def decision_function(w, b: float, x) -> float:
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x.shape != w.shape:
        raise DimensionMismatch(f"feature vector has length {x.shape}, model expects {w.shape}")
    return float(w @ x + b)


def hinge_loss(w, b: float, x, c: int, lam: float = 0.0) -> float:
    """``max(0, 1 - c (w.x + b)) + lam * ||w||^2 / 2`` with ``c`` in {-1, +1}."""
    if c not in (-1, 1):
        raise InvalidLabel(f"hinge label must be -1 or +1, got {c!r}")
    w = np.asarray(w, dtype=np.float64)
    margin = c * decision_function(w, b, x)
    return max(0.0, 1.0 - margin) + lam * 0.5 * float(w @ w)


def batch_hinge(w, b, X, c, lam, sample_weight=None):
    """Weighted average regularized hinge loss over rows of ``X`` and its subgradient.

    At the kink (margin exactly 1) the subgradient is taken as 0.
    """
    c = np.asarray(c, dtype=np.float64)
    sw = np.ones_like(c) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
    denom = sw.sum()
    margin = c * (X @ w + b)
    active = margin < 1.0
    loss = float((sw * np.maximum(0.0, 1.0 - margin)).sum() / denom) + lam * 0.5 * float(w @ w)
    coeff = np.where(active, -c * sw, 0.0) / denom
    gw = X.T @ coeff + lam * w
    gb = np.array([coeff.sum()])
    return loss, {"w": np.asarray(gw).reshape(-1), "b": gb}


class SvmClassifier(ClassifierMixin, BaseEstimator):
    """Linear SVM on raw bag-of-words counts of token windows.

    ``fit`` builds the reduced vocabulary (``max_features`` most frequent
    tokens) from the training windows. Labels: malicious = +1, normal = -1,
    and a decision value of exactly 0 counts as malicious.
    """

    def __init__(self, lam=1e-4, epochs=10, batch_size=32, max_features=10_000, min_count=1,
                 rho=0.95, epsilon=1e-6, learning_rate=1.0, class_weight=None,
                 validation_fraction=0.1, restore_best=True, random_state=0, verbose=False):
        self.lam = lam
        self.epochs = epochs
        self.batch_size = batch_size
        self.max_features = max_features
        self.min_count = min_count
        self.rho = rho
        self.epsilon = epsilon
        self.learning_rate = learning_rate
        self.class_weight = class_weight
        self.validation_fraction = validation_fraction
        self.restore_best = restore_best
        self.random_state = random_state
        self.verbose = verbose

    def _features(self, X):
        if sparse.issparse(X) or isinstance(X, np.ndarray) and X.dtype.kind == "f":
            if X.shape[1] != len(self.vocab_):
                raise DimensionMismatch(f"BoW matrix has {X.shape[1]} columns, model expects {len(self.vocab_)}")
            return sparse.csr_matrix(X)
        return bow_matrix(list(X), self.vocab_)

    def fit(self, X, y, X_val=None, y_val=None):
        X = list(X)
        y = encode_labels(y)
        if len(np.unique(y)) < 2:
            raise SingleClassDataset("training data must contain both normal and malicious windows")
        rng = np.random.default_rng(self.random_state)
        seeds = rng.integers(0, 2**31, size=2)
        if X_val is None and self.validation_fraction:
            tr, va = stratified_holdout(y, self.validation_fraction, np.random.default_rng(seeds[0]))
            X_val, y_val = [X[i] for i in va], y[va]
            X, y = [X[i] for i in tr], y[tr]
        elif X_val is not None:
            y_val = encode_labels(y_val)
        spec = getattr(X[0], "spec", None) if X else None
        self.window_spec_ = WindowSpec(spec.m, spec.l) if spec is not None else None
        self.vocab_ = build_vocabulary(X, self.max_features, self.min_count)
        F = bow_matrix(X, self.vocab_)
        F_val = bow_matrix(list(X_val), self.vocab_) if X_val is not None and len(X_val) else None
        c = np.where(y == 1, 1.0, -1.0)
        weights = _balanced_weights(y, self.class_weight)
        params = {"w": np.zeros(F.shape[1]), "b": np.zeros(1)}
        cfg = OptimizerConfig("adadelta", learning_rate=self.learning_rate, momentum=0.0, decay=0.0,
                              rho=self.rho, epsilon=self.epsilon)
        state: dict = {}
        train_rng = np.random.default_rng(seeds[1])
        curve = Curve()
        best = (-1.0, None)
        bs = self.batch_size
        for epoch in range(1, self.epochs + 1):
            order = train_rng.permutation(len(y))
            for s in range(0, len(order), bs):
                bidx = order[s:s + bs]
                _, grads = batch_hinge(params["w"], params["b"][0], F[bidx], c[bidx], self.lam, weights[bidx])
                optimizer_step(params, grads, state, cfg)
            loss, _ = batch_hinge(params["w"], params["b"][0], F, c, self.lam, weights)
            acc = float(np.mean(((F @ params["w"] + params["b"][0]) >= 0) == (y == 1)))
            rec = EpochRecord(epoch, loss, acc)
            if F_val is not None:
                cv = np.where(y_val == 1, 1.0, -1.0)
                rec.val_loss, _ = batch_hinge(params["w"], params["b"][0], F_val, cv, self.lam)
                rec.val_acc = float(np.mean(((F_val @ params["w"] + params["b"][0]) >= 0) == (y_val == 1)))
                if rec.val_acc > best[0]:
                    best = (rec.val_acc, copy.deepcopy(params))
            curve.append(rec)
            if self.verbose:
                print(f"epoch {epoch}: loss={rec.train_loss:.4f} acc={rec.train_acc:.4f} "
                      f"val_acc={rec.val_acc:.4f}")
        if self.restore_best and best[1] is not None:
            params = best[1]
        self.coef_ = params["w"]
        self.intercept_ = float(params["b"][0])
        self.curve_ = curve
        self.classes_ = np.array([0, 1])
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "coef_")
        return np.asarray(self._features(X) @ self.coef_ + self.intercept_).reshape(-1)

    def predict(self, X) -> np.ndarray:
        return (self.decision_function(X) >= 0).astype(np.int64)

    def predict_one(self, seq) -> dict:
        value = float(self.decision_function([seq])[0])
        return {"label": "malicious" if value >= 0 else "normal", "decision": value}

    def hinge_loss(self, X, y) -> float:
        c = np.where(encode_labels(y) == 1, 1.0, -1.0)
        loss, _ = batch_hinge(self.coef_, self.intercept_, self._features(X), c, self.lam)
        return loss

    # persistence

    def to_bytes(self) -> bytes:
        check_is_fitted(self, "coef_")
        w = BlockWriter()
        w.json(self.get_params())
        spec = self.window_spec_
        w.json(None if spec is None else [spec.m, spec.l])
        w.u64(len(self.vocab_))
        for t in self.vocab_.tokens:
            w.string(t)
        w.array("w", self.coef_)
        w.array("b", np.array([self.intercept_]))
        return frame(MODEL_MAGIC, w.getvalue())

    @classmethod
    def from_bytes(cls, data: bytes) -> "SvmClassifier":
        r = unframe(MODEL_MAGIC, data)
        est = cls(**r.json())
        spec = r.json()
        est.window_spec_ = None if spec is None else WindowSpec(*spec)
        est.vocab_ = Vocabulary([r.string() for _ in range(r.u64())])
        est.coef_ = r.array()[1].copy()
        est.intercept_ = float(r.array()[1][0])
        est.classes_ = np.array([0, 1])
        return est

    def save(self, path):
        write_bytes(path, self.to_bytes())

    @classmethod
    def load(cls, path) -> "SvmClassifier":
        return cls.from_bytes(read_bytes(path))
