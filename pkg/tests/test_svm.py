import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from artifact.exceptions import ChecksumMismatch, DimensionMismatch, InvalidLabel, SingleClassDataset, VersionMismatch
from artifact.gradcheck import TOLERANCE, check_svm
from artifact.ingest import TokenSequence, WindowSpec
from artifact.svm import SvmClassifier, batch_hinge, decision_function, hinge_loss

vectors = hnp.arrays(np.float64, 6, elements=st.floats(-5, 5))


def toy(count=100, seed=0):
    rng = np.random.default_rng(seed)
    X = [["bad" if i % 2 else "good", str(rng.integers(3))] for i in range(count)]
    return X, np.arange(count) % 2


class TestDecision:
    def test_examples(self):
        assert decision_function([0.0, 0.0], 0.0, [3.0, 1.0]) == 0.0
        assert decision_function([1.0, 0.0], -0.5, [1.0, 0.0]) == 0.5
        with pytest.raises(DimensionMismatch):
            decision_function([1.0, 0.0], 0.0, [1.0])

    @given(vectors, vectors, st.floats(0.01, 100))
    def test_positive_scaling_keeps_sign(self, w, x, scale):
        d = decision_function(w, 0.0, x)
        scaled = decision_function(w, 0.0, scale * x)
        assert scaled == pytest.approx(scale * d, rel=1e-9, abs=1e-9)
        if abs(d) > 1e-9:
            assert np.sign(scaled) == np.sign(d)


class TestHinge:
    def test_examples(self):
        assert hinge_loss([2.0], 0.0, [1.0], +1, 0.0) == 0.0
        assert hinge_loss([0.0], 0.0, [1.0], +1, 0.0) == 1.0
        assert hinge_loss([1.0, 0.0], -0.5, [1.0, 0.0], -1, 1.0) == 2.0
        with pytest.raises(InvalidLabel):
            hinge_loss([1.0], 0.0, [1.0], 0)

    @given(vectors, vectors, st.floats(-3, 3), st.sampled_from([-1, 1]))
    def test_zero_iff_margin_met(self, w, x, b, c):
        margin = c * decision_function(w, b, x)
        loss = hinge_loss(w, b, x, c, 0.0)
        assert (loss == 0.0) == (margin >= 1.0)
        assert loss >= 0

    def test_batch_matches_single(self, rng):
        X = rng.normal(size=(8, 4))
        c = np.where(rng.random(8) < 0.5, -1.0, 1.0)
        w, b = rng.normal(size=4), 0.2
        loss, _ = batch_hinge(w, b, X, c, 0.1)
        singles = [hinge_loss(w, b, X[i], int(c[i]), 0.1) for i in range(8)]
        assert loss == pytest.approx(np.mean(singles))

    def test_kink_subgradient_is_zero(self):
        _, g = batch_hinge(np.array([1.0]), 0.0, np.array([[1.0]]), np.array([1.0]), 0.0)
        assert g["w"][0] == 0.0 and g["b"][0] == 0.0

    def test_gradients(self):
        for seed in range(3):
            assert max(check_svm(seed).values()) <= TOLERANCE


class TestTraining:
    def test_separable_margins(self):
        X, y = toy()
        model = SvmClassifier(lam=1e-9, epochs=300, validation_fraction=0, restore_best=False).fit(X, y)
        c = np.where(y == 1, 1.0, -1.0)
        assert np.mean(model.predict(X) == y) == 1.0
        assert (c * model.decision_function(X)).min() >= 1.0 - 1e-3

    def test_strong_regularization_shrinks_weights(self):
        X, y = toy()
        model = SvmClassifier(lam=1e4, epochs=50, validation_fraction=0, restore_best=False).fit(X, y)
        assert np.abs(model.coef_).max() < 0.05

    def test_deterministic(self):
        X, y = toy()
        a = SvmClassifier(epochs=3, random_state=4).fit(X, y)
        b = SvmClassifier(epochs=3, random_state=4).fit(X, y)
        assert a.to_bytes() == b.to_bytes()

    def test_single_class(self):
        X, _ = toy(10)
        with pytest.raises(SingleClassDataset):
            SvmClassifier().fit(X, np.zeros(10))

    def test_curve(self):
        X, y = toy(60)
        model = SvmClassifier(epochs=4, validation_fraction=0.2).fit(X, y)
        assert model.curve_.column("epoch") == [1, 2, 3, 4]
        assert not np.isnan(model.curve_.column("val_acc")).any()


class TestPredict:
    def test_negative_bias_model(self):
        X, y = toy(20)
        model = SvmClassifier(epochs=1).fit(X, y)
        model.coef_ = np.zeros_like(model.coef_)
        model.intercept_ = -1.0
        assert model.predict_one(X[0])["label"] == "normal"
        model.intercept_ = 0.0
        assert model.predict_one(X[0]) == {"label": "malicious", "decision": 0.0}

    def test_toy_labels(self):
        X, y = toy()
        model = SvmClassifier(lam=1e-6, epochs=50, validation_fraction=0).fit(X, y)
        assert model.predict_one(["bad", "1"])["label"] == "malicious"
        assert model.predict_one(["good", "1"])["label"] == "normal"

    def test_dimension_mismatch(self, syscall_svm):
        with pytest.raises(DimensionMismatch):
            syscall_svm.decision_function(np.zeros((2, 3)))

    def test_spec_recorded(self, syscall_svm, network_svm):
        assert syscall_svm.window_spec_ == WindowSpec(7, 6)
        assert network_svm.window_spec_ == WindowSpec(5, 1)

    def test_windows_and_lists_agree(self, network_svm, network_split):
        wins = network_split[2][:50]
        np.testing.assert_array_equal(network_svm.decision_function(wins),
                                      network_svm.decision_function([w.tokens for w in wins]))
        assert isinstance(wins[0], TokenSequence)


class TestPersistence:
    def test_round_trip(self, tmp_path, syscall_svm, syscall_split):
        path = tmp_path / "m.arhs"
        syscall_svm.save(path)
        back = SvmClassifier.load(path)
        test = syscall_split[2]
        np.testing.assert_array_equal(back.decision_function(test), syscall_svm.decision_function(test))
        assert back.window_spec_ == syscall_svm.window_spec_
        assert back.to_bytes() == syscall_svm.to_bytes()

    def test_corruption(self, syscall_svm):
        data = syscall_svm.to_bytes()
        with pytest.raises(ChecksumMismatch):
            SvmClassifier.from_bytes(data[:-1])
        with pytest.raises(VersionMismatch):
            SvmClassifier.from_bytes(b"ARHC" + data[4:])
