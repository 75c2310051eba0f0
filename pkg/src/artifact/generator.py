"""Character-level LSTM language model for synthesizing trace lines.

Gates use the logistic sigmoid, cell input and output use tanh:

    f = s(W_f x + U_f h + b_f)      i = s(W_i x + U_i h + b_i)
    o = s(W_o x + U_o h + b_o)      c' = f * c + i * tanh(W_c x + U_c h + b_c)
    h' = o * tanh(c')               logits = V h' + d

Training maximises the log-likelihood of the next character with truncated
backpropagation through time and RMSprop.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import (
    ConfigError,
    CorpusTooShort,
    DataError,
    EmptyLine,
    GenerationStarvation,
    MalformedLine,
    ShapeMismatch,
    UnknownPrimeChar,
)
from .ingest import DEFAULT_SPECS, Record, parse_line
from .metrics import Curve, EpochRecord
from .nn import OptimizerConfig, glorot_uniform, log_softmax, optimizer_step, sigmoid, softmax
from .serialization import BlockWriter, frame, read_bytes, unframe, write_bytes

MODEL_MAGIC = b"ARHL"
GATES = ("f", "i", "o", "c")


class CharVocabulary:
    def __init__(self, chars):
        chars = list(chars)
        if "\n" not in chars:
            chars.append("\n")
        if len(set(chars)) != len(chars):
            raise ConfigError("characters must be distinct")
        self.chars = chars
        self.index = {c: i for i, c in enumerate(chars)}

    @classmethod
    def from_text(cls, text: str) -> "CharVocabulary":
        return cls(sorted(set(text) | {"\n"}))

    def __len__(self):
        return len(self.chars)

    def encode(self, text: str) -> np.ndarray:
        try:
            return np.array([self.index[c] for c in text], dtype=np.int64)
        except KeyError as exc:
            raise UnknownPrimeChar(f"character {exc.args[0]!r} is not in the vocabulary") from None

    def decode(self, ids) -> str:
        return "".join(self.chars[i] for i in ids)


def init_lstm_params(vocab_size: int, hidden: int, rng) -> dict:
    """Packed parameters: ``W`` (V, 4H), ``U`` (H, 4H), ``b`` (4H,), gate order f, i, o, c."""
    rng = np.random.default_rng(rng)
    H = hidden
    return {
        "W": glorot_uniform(rng, vocab_size, 4 * H, (vocab_size, 4 * H)),
        "U": glorot_uniform(rng, H, 4 * H, (H, 4 * H)),
        "b": np.zeros(4 * H),
        "V": glorot_uniform(rng, H, vocab_size, (H, vocab_size)),
        "d": np.zeros(vocab_size),
    }


def gate_matrices(params: dict) -> dict:
    """Split packed parameters into ``W_f .. b_c`` views (matrices act on column vectors)."""
    H = params["U"].shape[0]
    out = {}
    for j, g in enumerate(GATES):
        sl = slice(j * H, (j + 1) * H)
        out[f"W_{g}"] = params["W"][:, sl].T
        out[f"U_{g}"] = params["U"][:, sl].T
        out[f"b_{g}"] = params["b"][sl]
    return out


def lstm_cell_step(params: dict, x_t, h_prev, c_prev):
    """One LSTM step on a batch.

    ``x_t`` is one-hot ``(B, V)`` (or ``(V,)``); returns ``(h_t, c_t, logits)``.
    Gate activations are available from :func:`lstm_gates`.
    """
    h, c, logits, _ = _step(params, np.atleast_2d(x_t) @ params["W"], np.atleast_2d(h_prev),
                            np.atleast_2d(c_prev))
    if np.ndim(x_t) == 1:
        return h[0], c[0], logits[0]
    return h, c, logits


def lstm_gates(params: dict, x_t, h_prev, c_prev) -> dict:
    _, _, _, cache = _step(params, np.atleast_2d(x_t) @ params["W"], np.atleast_2d(h_prev),
                           np.atleast_2d(c_prev))
    f, i, o, g = cache[2:6]
    return {"f": f, "i": i, "o": o, "g": g}


def _step(params, wx, h_prev, c_prev):
    H = params["U"].shape[0]
    if h_prev.shape[-1] != H or c_prev.shape[-1] != H or wx.shape[-1] != 4 * H:
        raise ShapeMismatch("state or input does not match the hidden size")
    z = wx + h_prev @ params["U"] + params["b"]
    f = sigmoid(z[:, :H])
    i = sigmoid(z[:, H:2 * H])
    o = sigmoid(z[:, 2 * H:3 * H])
    g = np.tanh(z[:, 3 * H:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    logits = h @ params["V"] + params["d"]
    return h, c, logits, (h_prev, c_prev, f, i, o, g, tc, h)


def sequence_loss(params: dict, inputs, targets, h0=None, c0=None):
    """Mean next-character cross-entropy over a ``(B, T)`` batch and its BPTT gradients."""
    inputs = np.atleast_2d(inputs)
    targets = np.atleast_2d(targets)
    B, T = inputs.shape
    H = params["U"].shape[0]
    h = np.zeros((B, H)) if h0 is None else h0
    c = np.zeros((B, H)) if c0 is None else c0
    caches, probs = [], []
    loss = 0.0
    rows = np.arange(B)
    for t in range(T):
        h, c, logits, cache = _step(params, params["W"][inputs[:, t]], h, c)
        lp = log_softmax(logits)
        loss -= lp[rows, targets[:, t]].sum()
        caches.append(cache)
        probs.append(np.exp(lp))
    N = B * T
    loss /= N
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in reversed(range(T)):
        h_prev, c_prev, f, i, o, g, tc, h = caches[t]
        dlogits = probs[t].copy()
        dlogits[rows, targets[:, t]] -= 1.0
        dlogits /= N
        grads["V"] += h.T @ dlogits
        grads["d"] += dlogits.sum(axis=0)
        dh = dlogits @ params["V"].T + dh_next
        do = dh * tc
        dc = dh * o * (1.0 - tc * tc) + dc_next
        df = dc * c_prev
        di = dc * g
        dg = dc * i
        dz = np.concatenate([df * f * (1 - f), di * i * (1 - i), do * o * (1 - o), dg * (1 - g * g)], axis=1)
        np.add.at(grads["W"], inputs[:, t], dz)
        grads["U"] += h_prev.T @ dz
        grads["b"] += dz.sum(axis=0)
        dh_next = dz @ params["U"].T
        dc_next = dc * f
    return loss, grads


def _clip(grads, max_norm):
    if not max_norm:
        return grads
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return grads


class CharLSTM(BaseEstimator):
    """Character language model; ``fit`` takes raw text (lines joined by ``\\n``)."""

    def __init__(self, hidden_size=128, seq_len=100, batch_size=32, epochs=20, learning_rate=0.01,
                 rho=0.9, epsilon=1e-8, clip_norm=5.0, random_state=0, verbose=False):
        self.hidden_size = hidden_size
        self.seq_len = seq_len
        self.batch_size = batch_size
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.rho = rho
        self.epsilon = epsilon
        self.clip_norm = clip_norm
        self.random_state = random_state
        self.verbose = verbose

    def fit(self, text, y=None):
        if not isinstance(text, str):
            text = "\n".join(text) + "\n"
        if len(text) <= self.seq_len:
            raise CorpusTooShort(f"corpus has {len(text)} characters, need more than seq_len={self.seq_len}")
        rng = np.random.default_rng(self.random_state)
        self.vocab_ = CharVocabulary.from_text(text)
        self.params_ = init_lstm_params(len(self.vocab_), self.hidden_size, rng)
        data = self.vocab_.encode(text)
        cfg = OptimizerConfig("rmsprop", learning_rate=self.learning_rate, momentum=0.0, decay=0.0,
                              rho=self.rho, epsilon=self.epsilon)
        state: dict = {}
        curve = Curve()
        T = self.seq_len
        for epoch in range(1, self.epochs + 1):
            offset = int(rng.integers(0, T)) if len(data) > 2 * T + 1 else 0
            starts = np.arange(offset, len(data) - T, T)
            if starts.size == 0:
                starts = np.array([0])
            starts = starts[rng.permutation(starts.size)]
            tot = 0.0
            count = 0
            for s in range(0, starts.size, self.batch_size):
                st = starts[s:s + self.batch_size]
                win = np.stack([data[a:a + T + 1] for a in st])
                loss, grads = sequence_loss(self.params_, win[:, :-1], win[:, 1:])
                optimizer_step(self.params_, _clip(grads, self.clip_norm), state, cfg)
                tot += loss * win.shape[0] * T
                count += win.shape[0] * T
            rec = EpochRecord(epoch, tot / count, float("nan"))
            curve.append(rec)
            if self.verbose:
                print(f"epoch {epoch}: loss={rec.train_loss:.4f}")
        self.curve_ = curve
        return self

    def next_char_accuracy(self, text: str) -> float:
        """Greedy next-character accuracy when reading ``text`` left to right."""
        check_is_fitted(self, "params_")
        ids = self.vocab_.encode(text)
        H = self.hidden_size
        h, c = np.zeros((1, H)), np.zeros((1, H))
        hits = 0
        for t in range(len(ids) - 1):
            h, c, logits, _ = _step(self.params_, self.params_["W"][ids[t:t + 1]], h, c)
            hits += int(np.argmax(logits[0]) == ids[t + 1])
        return hits / max(1, len(ids) - 1)

    def cross_entropy(self, text: str) -> float:
        check_is_fitted(self, "params_")
        ids = self.vocab_.encode(text)
        loss, _ = sequence_loss(self.params_, ids[None, :-1], ids[None, 1:])
        return loss

    def sample(self, prime: str = "\n", length: int = 200, temperature: float = 1.0, seed=None) -> str:
        """Autoregressive sample of ``length`` characters following ``prime``."""
        check_is_fitted(self, "params_")
        if not temperature > 0:
            raise ConfigError("temperature must be > 0")
        if not prime:
            prime = "\n"
        ids = self.vocab_.encode(prime)
        rng = np.random.default_rng(seed)
        H = self.hidden_size
        h, c = np.zeros((1, H)), np.zeros((1, H))
        for t in ids:
            h, c, logits, _ = _step(self.params_, self.params_["W"][[t]], h, c)
        out = []
        V = len(self.vocab_)
        for _ in range(length):
            p = softmax(logits[0] / temperature)
            nxt = int(min(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"), V - 1))
            out.append(nxt)
            h, c, logits, _ = _step(self.params_, self.params_["W"][[nxt]], h, c)
        return self.vocab_.decode(out)

    # persistence

    def to_bytes(self) -> bytes:
        check_is_fitted(self, "params_")
        w = BlockWriter()
        w.json(self.get_params())
        w.json(self.vocab_.chars)
        names = sorted(self.params_)
        w.u64(len(names))
        for name in names:
            w.array(name, self.params_[name])
        return frame(MODEL_MAGIC, w.getvalue())

    @classmethod
    def from_bytes(cls, data: bytes) -> "CharLSTM":
        r = unframe(MODEL_MAGIC, data)
        est = cls(**r.json())
        est.vocab_ = CharVocabulary(r.json())
        est.params_ = {}
        for _ in range(r.u64()):
            name, arr = r.array()
            est.params_[name] = arr.copy()
        return est

    def save(self, path):
        write_bytes(path, self.to_bytes())

    @classmethod
    def load(cls, path) -> "CharLSTM":
        return cls.from_bytes(read_bytes(path))


def corpus_text(records, label=None, source=None) -> str:
    lines = [ln.rstrip("\n") for r in records
             if (label is None or r.label == label) and (source is None or r.source == source)
             for ln in r.lines]
    return "\n".join(lines) + "\n"


@dataclass
class AugmentReport:
    requested: int
    admitted: int
    malformed: int
    sampled_lines: int


def generate_lines(model: CharLSTM, count: int, source: str, strict: bool = True,
                   temperature: float = 1.0, seed=0, chunk: int = 2000, budget=None):
    """Sample until ``count`` lines pass the ingest parser.

    Returns ``(lines, report)``. Raises :class:`GenerationStarvation` when the
    sampling budget (default ``10 * count + 10`` lines) runs out while more
    than 90% of sampled lines were malformed.
    """
    budget = budget or 10 * count + 10
    rng = np.random.default_rng(seed)
    admitted, malformed, sampled = [], 0, 0
    context = "\n"
    pending = ""
    while len(admitted) < count and sampled < budget:
        text = model.sample(prime=context, length=chunk, temperature=temperature,
                            seed=int(rng.integers(0, 2**63)))
        context = (context + text)[-model.seq_len:]
        *complete, pending = (pending + text).split("\n")
        for line in complete:
            sampled += 1
            try:
                parse_line(line, source, strict=strict)
            except (EmptyLine, MalformedLine):
                malformed += 1
            else:
                admitted.append(line)
            if len(admitted) == count or sampled >= budget:
                break
    report = AugmentReport(count, len(admitted), malformed, sampled)
    if len(admitted) < count:
        rate = malformed / max(1, sampled)
        raise GenerationStarvation(
            f"admitted {len(admitted)}/{count} lines; malformed rate {rate:.2%} over {sampled} sampled lines")
    return admitted, report


def augment_dataset(records, model: CharLSTM, fraction: float, label: str = "malicious",
                    source: str = "network", lines_per_record=None, strict: bool = True,
                    temperature: float = 1.0, seed=0):
    """Append ``ceil(fraction * class line count)`` generated lines to ``records``.

    Originals are returned unchanged and in order; generated lines are grouped
    into records of ``lines_per_record`` lines (the source's window height by
    default) labelled ``label``. Returns ``(augmented, report)``.
    """
    if not fraction > 0:
        raise ConfigError("augmentation fraction must be > 0")
    records = list(records)
    class_lines = sum(len(r.lines) for r in records if r.label == label and r.source == source)
    if class_lines == 0:
        raise DataError(f"no {label} {source} lines to augment")
    need = math.ceil(fraction * class_lines)
    lines, report = generate_lines(model, need, source, strict=strict, temperature=temperature, seed=seed)
    per = lines_per_record or DEFAULT_SPECS[source].l
    extra = [Record(source, label, lines[i:i + per]) for i in range(0, len(lines), per)]
    return records + extra, report
