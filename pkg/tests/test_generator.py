import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from artifact.exceptions import (
    ChecksumMismatch,
    ConfigError,
    CorpusTooShort,
    GenerationStarvation,
    ShapeMismatch,
    UnknownPrimeChar,
)
from artifact.generator import (
    CharLSTM,
    CharVocabulary,
    augment_dataset,
    corpus_text,
    gate_matrices,
    generate_lines,
    init_lstm_params,
    lstm_cell_step,
    lstm_gates,
    sequence_loss,
)
from artifact.gradcheck import TOLERANCE, check_lstm
from artifact.ingest import Record, parse_line
from artifact.synth import CorpusSpec, make_corpus, synth_malicious_corpus


@pytest.fixture(scope="module")
def periodic():
    return CharLSTM(hidden_size=16, seq_len=20, epochs=60, random_state=0).fit("ab" * 200)


def one_hot(i, V):
    x = np.zeros(V)
    x[i] = 1.0
    return x


class TestVocabulary:
    def test_newline_always_present(self):
        assert "\n" in CharVocabulary.from_text("abc").chars
        assert "\n" in CharVocabulary(["x"]).chars

    def test_round_trip_and_unknown(self):
        v = CharVocabulary.from_text("hello world\n")
        assert v.decode(v.encode("world")) == "world"
        with pytest.raises(UnknownPrimeChar):
            v.encode("z")
        with pytest.raises(ConfigError):
            CharVocabulary(["a", "a"])


class TestCell:
    def test_zero_params(self):
        params = {k: np.zeros_like(v) for k, v in init_lstm_params(4, 3, 0).items()}
        gates = lstm_gates(params, one_hot(1, 4), np.zeros(3), np.zeros(3))
        for g in ("f", "i", "o"):
            np.testing.assert_array_equal(gates[g], 0.5)
        h, c, logits = lstm_cell_step(params, one_hot(1, 4), np.zeros(3), np.zeros(3))
        assert not h.any() and not c.any() and logits.shape == (4,)

    def test_gate_views(self):
        params = init_lstm_params(5, 3, 0)
        views = gate_matrices(params)
        assert views["W_f"].shape == (3, 5) and views["U_c"].shape == (3, 3) and views["b_o"].shape == (3,)
        x, h, c = one_hot(2, 5), np.full(3, 0.1), np.full(3, -0.2)
        z_f = views["W_f"] @ x + views["U_f"] @ h + views["b_f"]
        np.testing.assert_allclose(lstm_gates(params, x, h, c)["f"][0], 1 / (1 + np.exp(-z_f)))

    @given(st.integers(0, 2**31), hnp.arrays(np.float64, 3, elements=st.floats(-20, 20)),
           hnp.arrays(np.float64, 3, elements=st.floats(-1, 1)))
    def test_gate_ranges_and_cell_bound(self, seed, c_prev, h_prev):
        params = init_lstm_params(4, 3, seed)
        for v in params.values():
            v += np.random.default_rng(seed).normal(0, 2, v.shape)
        x = one_hot(seed % 4, 4)
        gates = lstm_gates(params, x, h_prev, c_prev)
        for g in ("f", "i", "o"):
            assert ((gates[g] > 0) & (gates[g] < 1)).all()
        _, c, _ = lstm_cell_step(params, x, h_prev, c_prev)
        bound = np.abs(gates["f"][0]) * np.abs(c_prev) + np.abs(gates["i"][0])
        assert (np.abs(c) <= bound + 1e-12).all()
        assert (np.abs(c) <= np.abs(c_prev) + 1).all()

    def test_shape_mismatch(self):
        params = init_lstm_params(4, 3, 0)
        with pytest.raises(ShapeMismatch):
            lstm_cell_step(params, one_hot(0, 4), np.zeros(2), np.zeros(3))

    def test_gradients(self):
        report = check_lstm(0)
        assert max(report.values()) <= TOLERANCE
        assert max(check_lstm(1, steps=1).values()) <= TOLERANCE

    def test_loss_at_uniform(self):
        params = {k: np.zeros_like(v) for k, v in init_lstm_params(5, 3, 0).items()}
        loss, _ = sequence_loss(params, [[0, 1, 2]], [[1, 2, 3]])
        assert loss == pytest.approx(math.log(5))


class TestTraining:
    def test_periodic_corpus(self, periodic):
        assert periodic.next_char_accuracy("ab" * 20) == 1.0
        assert periodic.cross_entropy("ab" * 20) < 0.05
        losses = periodic.curve_.column("train_loss")
        assert losses[-1] < losses[0]
        # per-epoch values jitter once the loss is tiny; block means must not rise
        blocks = [np.mean(losses[i:i + 5]) for i in range(0, len(losses), 5)]
        assert all(b <= a for a, b in zip(blocks, blocks[1:]))

    def test_deterministic(self):
        a = CharLSTM(hidden_size=8, seq_len=10, epochs=2, random_state=3).fit("abcab" * 20)
        b = CharLSTM(hidden_size=8, seq_len=10, epochs=2, random_state=3).fit("abcab" * 20)
        assert a.to_bytes() == b.to_bytes()

    def test_corpus_too_short(self):
        with pytest.raises(CorpusTooShort):
            CharLSTM(seq_len=100).fit("a" * 100)


class TestSampling:
    def test_alternation(self, periodic):
        text = periodic.sample("a", 20, temperature=0.05, seed=1)
        assert text == "ba" * 10

    def test_length_and_determinism(self, periodic):
        a = periodic.sample("ab", 37, seed=5)
        assert len(a) == 37 and a == periodic.sample("ab", 37, seed=5)

    def test_errors(self, periodic):
        with pytest.raises(UnknownPrimeChar):
            periodic.sample("abz", 5)
        with pytest.raises(ConfigError):
            periodic.sample("a", 5, temperature=0.0)

    def test_low_temperature_is_greedy(self, small_lm):
        greedy = small_lm.sample("\n", 60, temperature=1e-3, seed=0)
        assert greedy == small_lm.sample("\n", 60, temperature=1e-3, seed=99)

    def test_persistence(self, tmp_path, small_lm):
        path = tmp_path / "lm.arhl"
        small_lm.save(path)
        back = CharLSTM.load(path)
        assert back.sample("\n", 200, seed=3) == small_lm.sample("\n", 200, seed=3)
        data = path.read_bytes()
        with pytest.raises(ChecksumMismatch):
            CharLSTM.from_bytes(data[:-3])


class TestAugment:
    def test_counts_and_originals_untouched(self, small_lm):
        records = synth_malicious_corpus(CorpusSpec(source="network", lines=1000, seed=1))
        records = records + [Record("network", "normal", ["10.0.0.1 10.0.0.2 a.b 1 C_INTERNET"])]
        snapshot = [Record(r.source, r.label, list(r.lines)) for r in records]
        assert sum(len(r.lines) for r in records if r.label == "malicious") == 1000
        out, report = augment_dataset(records, small_lm, 0.2, seed=0)
        assert out[:len(records)] == snapshot and records == snapshot
        new = out[len(records):]
        assert sum(len(r.lines) for r in new) == 200 == report.admitted
        assert sum(len(r.lines) for r in out) == 1201
        assert all(r.label == "malicious" and r.source == "network" for r in new)
        for r in new:
            for line in r.lines:
                parse_line(line, "network", strict=True)
        assert report.sampled_lines == report.admitted + report.malformed

    def test_fraction_formula(self, small_lm):
        records = [Record("network", "malicious", ["10.0.0.1 10.0.0.2 a.b 1"]) for _ in range(7)]
        out, report = augment_dataset(records, small_lm, 0.3, seed=1)
        assert report.requested == math.ceil(0.3 * 7) == len(out) - 7

    def test_zero_fraction_rejected(self, small_lm):
        with pytest.raises(ConfigError):
            augment_dataset([], small_lm, 0.0)

    def test_untrained_model_starves(self):
        text = corpus_text(make_corpus("network", 200, 0), "malicious")
        model = CharLSTM(hidden_size=16, seq_len=50)
        model.vocab_ = CharVocabulary.from_text(text)
        model.params_ = init_lstm_params(len(model.vocab_), 16, 0)
        with pytest.raises(GenerationStarvation):
            generate_lines(model, 20, "network", strict=True, seed=0)

    def test_corpus_text(self):
        recs = [Record("network", "malicious", ["a b", "c d"]), Record("network", "normal", ["x y"])]
        assert corpus_text(recs, "malicious") == "a b\nc d\n"
        assert corpus_text(recs) == "a b\nc d\nx y\n"
