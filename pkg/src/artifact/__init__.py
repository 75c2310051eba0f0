"""Streaming trace classification for isolated compute jobs.

System-call and network-connection traces are windowed into token sequences,
embedded, and classified as normal or malicious by a convolutional text
classifier (a linear SVM over bag-of-words is included as a baseline). A
character-level LSTM can synthesize extra training lines, and a streaming
engine turns window verdicts into alerts, stop requests and forensic bundles.
"""

__version__ = "0.1.0"

from .cnn import CnnClassifier, CnnConfig, NETWORK_CNN, SYSCALL_CNN  # noqa: E402
from .engine import DetectionPolicy, Engine, JobStream, ResponseAction  # noqa: E402
from .features import BowVectorizer, EmbeddingTable, Vocabulary, Word2Vec  # noqa: E402
from .generator import CharLSTM, augment_dataset  # noqa: E402
from .ingest import TokenSequence, TraceWindower, WindowSpec  # noqa: E402
from .svm import SvmClassifier  # noqa: E402

__all__ = [
    "__version__", "CnnClassifier", "CnnConfig", "NETWORK_CNN", "SYSCALL_CNN", "DetectionPolicy",
    "Engine", "JobStream", "ResponseAction", "BowVectorizer", "EmbeddingTable", "Vocabulary",
    "Word2Vec", "CharLSTM", "augment_dataset", "TokenSequence", "TraceWindower", "WindowSpec",
    "SvmClassifier",
]
