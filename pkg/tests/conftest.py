from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from artifact.cnn import NETWORK_CNN, SYSCALL_CNN, CnnClassifier
from artifact.generator import CharLSTM, corpus_text
from artifact.ingest import DEFAULT_SPECS, records_to_windows, window_labels
from artifact.svm import SvmClassifier
from artifact.synth import make_corpus, split_dataset

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


def _split(source: str, windows: int, seed: int = 0):
    recs = make_corpus(source, windows, seed)
    wins = records_to_windows(recs, DEFAULT_SPECS[source])
    return split_dataset(wins, 0.8, seed)


@pytest.fixture(scope="session")
def syscall_split():
    return _split("syscall", 12_000)


@pytest.fixture(scope="session")
def network_split():
    return _split("network", 3000)


@pytest.fixture(scope="session")
def syscall_cnn(syscall_split):
    tr, va, _ = syscall_split
    return CnnClassifier(**SYSCALL_CNN, random_state=0).fit(tr, window_labels(tr), va, window_labels(va))


@pytest.fixture(scope="session")
def network_cnn(network_split):
    tr, va, _ = network_split
    return CnnClassifier(**NETWORK_CNN, random_state=0).fit(tr, window_labels(tr), va, window_labels(va))


@pytest.fixture(scope="session")
def syscall_svm(syscall_split):
    tr, va, _ = syscall_split
    return SvmClassifier(random_state=0).fit(tr, window_labels(tr), va, window_labels(va))


@pytest.fixture(scope="session")
def network_svm(network_split):
    tr, va, _ = network_split
    return SvmClassifier(random_state=0).fit(tr, window_labels(tr), va, window_labels(va))


@pytest.fixture(scope="session")
def small_lm():
    recs = make_corpus("network", 1500, 0)
    text = corpus_text(recs, "malicious")
    return CharLSTM(hidden_size=64, seq_len=50, epochs=30, random_state=0).fit(text)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# criterion id -> one-line verdict, printed after the run
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
