"""Finite-difference checks of every analytic backward pass."""
from __future__ import annotations

import numpy as np

from .cnn import CnnConfig, CnnNet
from .features import EmbeddingTable, Vocabulary
from .generator import init_lstm_params, sequence_loss
from .ingest import PAD, UNK
from .nn import finite_diff_check
from .svm import batch_hinge

TOLERANCE = 1e-4


def _per_param(loss_fn, params, **kw) -> dict:
    out = {}
    for name in params:
        def partial(sub, name=name):
            full = dict(params, **sub)
            loss, grads = loss_fn(full)
            return loss, {name: grads[name]}
        out[name] = finite_diff_check(partial, {name: params[name]}, **kw)
    return out


def check_cnn(seed: int, profile: str = "syscall", batch: int = 4, max_entries=None, epsilon=1e-6) -> dict:
    """Conv, pooling, dense, sigmoid and embedding gradients of a random small CNN.

    Dropout is off so the loss is a deterministic function of the parameters.
    """
    rng = np.random.default_rng(seed)
    if profile == "syscall":
        cfg = CnnConfig(m=7, l=6, k=6, filter_sizes=(3, 4, 5), total_filters=6, dense_units=8)
    else:
        cfg = CnnConfig(m=5, l=1, k=4, filter_sizes=(2, 3), total_filters=3, dense_units=8)
    vocab = Vocabulary([PAD, UNK] + [f"t{i}" for i in range(12)])
    vectors = rng.normal(0.0, 0.5, (len(vocab), cfg.k))
    vectors[0] = 0.0
    net = CnnNet(cfg, EmbeddingTable(vocab, vectors), rng=rng)
    for v in net.params.values():
        v += rng.normal(0.0, 0.1, v.shape)
    net.params["embedding"][0] = 0.0
    idx = rng.integers(0, len(vocab), (batch, cfg.n))
    y = rng.integers(0, 2, batch).astype(float)

    def loss_fn(params):
        saved = net.params
        net.params = params
        try:
            loss, grads, _ = net.loss_and_grads(idx, y, training=False)
            return loss, grads
        finally:
            net.params = saved

    return {f"cnn.{k}": v for k, v in _per_param(loss_fn, net.params, max_entries=max_entries, epsilon=epsilon,
                                                   rng=seed).items()}


def check_svm(seed: int, dim: int = 12, rows: int = 16, lam: float = 1e-2) -> dict:
    """Averaged regularized hinge loss, sampled away from the margin kink."""
    rng = np.random.default_rng(seed)
    X = rng.poisson(1.0, (rows, dim)).astype(float)
    c = np.where(rng.random(rows) < 0.5, -1.0, 1.0)
    params = {"w": rng.normal(0, 0.3, dim), "b": rng.normal(0, 0.3, 1)}
    # nudge any sample sitting near margin 1 so the probe never straddles the kink
    for _ in range(100):
        margin = c * (X @ params["w"] + params["b"][0])
        if np.all(np.abs(margin - 1.0) > 1e-3):
            break
        params["b"] += 0.01
    sw = rng.uniform(0.5, 2.0, rows)

    def loss_fn(p):
        return batch_hinge(p["w"], p["b"][0], X, c, lam, sw)

    return {f"svm.{k}": v for k, v in _per_param(loss_fn, params).items()}


def check_lstm(seed: int, steps: int = 10, vocab: int = 6, hidden: int = 8, batch: int = 2) -> dict:
    """LSTM cell plus softmax output over a ``steps``-long BPTT window."""
    rng = np.random.default_rng(seed)
    params = init_lstm_params(vocab, hidden, rng)
    for v in params.values():
        v += rng.normal(0.0, 0.5, v.shape)
    inputs = rng.integers(0, vocab, (batch, steps))
    targets = rng.integers(0, vocab, (batch, steps))

    def loss_fn(p):
        return sequence_loss(p, inputs, targets)

    # some recurrent entries are ~1e-8; a wider step keeps their roundoff small
    return {f"lstm.{k}": v for k, v in _per_param(loss_fn, params, epsilon=1e-4).items()}


def gradient_report(seed: int = 0) -> dict:
    report = {}
    report.update(check_cnn(seed, "syscall"))
    report.update({k.replace("cnn.", "cnn_net."): v for k, v in check_cnn(seed, "network").items()})
    report.update(check_svm(seed))
    report.update(check_lstm(seed))
    return report
