"""Trace parsing and windowing.

Raw system-call and network-connection lines are normalized into token lists
and grouped into fixed-length token windows of ``n = m * l`` tokens, the unit
every classifier consumes.
"""
from __future__ import annotations

import io
import json
import re
import sys
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator, Optional, Sequence, Union

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import (
    ConfigError,
    DataError,
    EmptyLine,
    IoError,
    MalformedLine,
    MixedSources,
    WrongLineCount,
)

PAD = "<PAD>"
UNK = "<UNK>"

SOURCES = ("syscall", "network")
LABELS = ("normal", "malicious")

_STRIP_RE = re.compile(r"[()\[\]{},;\"']")

# structural checks used when admitting generated lines
_WORD_RE = re.compile(r"^[a-z_]+$")
_IP_RE = re.compile(r"^(IP\.\w+|\d{1,3}(\.\d{1,3}){3})$")


@dataclass(frozen=True)
class TraceLine:
    source: str
    raw: str
    tokens: tuple


@dataclass(frozen=True)
class WindowSpec:
    m: int
    l: int

    def __post_init__(self):
        if self.m < 1 or self.l < 1:
            raise ConfigError(f"window spec needs m >= 1 and l >= 1, got m={self.m} l={self.l}")

    @property
    def n(self) -> int:
        return self.m * self.l


# window shapes per source
SYSCALL_SPEC = WindowSpec(m=7, l=6)
NETWORK_SPEC = WindowSpec(m=5, l=1)
DEFAULT_SPECS = {"syscall": SYSCALL_SPEC, "network": NETWORK_SPEC}


@dataclass
class TokenSequence:
    spec: WindowSpec
    tokens: list
    label: Optional[str] = None
    source: Optional[str] = None
    raw: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.tokens) != self.spec.n:
            raise WrongLineCount(f"window has {len(self.tokens)} tokens, spec needs {self.spec.n}")
        if self.label is not None and self.label not in LABELS:
            raise DataError(f"unknown label {self.label!r}")

    def lines(self) -> list:
        """Split back into ``l`` lists of ``m`` tokens."""
        m = self.spec.m
        return [self.tokens[i * m:(i + 1) * m] for i in range(self.spec.l)]


def normalize(raw) -> str:
    if isinstance(raw, (bytes, bytearray)):
        raw = bytes(raw).decode("utf-8", errors="replace")
    return " ".join(_STRIP_RE.sub(" ", raw).split())


def _parse(raw, source: str) -> TraceLine:
    text = raw.decode("utf-8", errors="replace") if isinstance(raw, (bytes, bytearray)) else raw
    tokens = normalize(text).split()
    if not tokens:
        raise EmptyLine("blank trace line")
    if len(tokens) < 2:
        raise MalformedLine(f"{source} line has fewer than 2 fields: {text!r}")
    return TraceLine(source=source, raw=text.rstrip("\r\n"), tokens=tuple(tokens))


def parse_syscall_line(raw) -> TraceLine:
    return _parse(raw, "syscall")


def parse_network_line(raw) -> TraceLine:
    return _parse(raw, "network")


def parse_line(raw, source: str, strict: bool = False) -> TraceLine:
    """Parse one line of the given source.

    ``strict`` additionally enforces the field shape of each source: syscall
    lines need at least three fields starting with two lower-case words
    (category, operation); network lines need at least four fields starting
    with two addresses. Used as a quality gate for generated text.
    """
    if source == "syscall":
        line = parse_syscall_line(raw)
    elif source == "network":
        line = parse_network_line(raw)
    else:
        raise ConfigError(f"unknown source {source!r}")
    if strict:
        t = line.tokens
        if source == "syscall":
            ok = len(t) >= 3 and bool(_WORD_RE.match(t[0])) and bool(_WORD_RE.match(t[1]))
        else:
            ok = len(t) >= 4 and bool(_IP_RE.match(t[0])) and bool(_IP_RE.match(t[1]))
        if not ok:
            raise MalformedLine(f"{source} line fails strict shape check: {line.raw!r}")
    return line


def truncate_pad_line(line, m: int, pad: str = PAD) -> list:
    if m < 1:
        raise ConfigError("m must be >= 1")
    tokens = list(line.tokens if isinstance(line, TraceLine) else line)[:m]
    return tokens + [pad] * (m - len(tokens))


def build_window(lines: Sequence[TraceLine], spec: WindowSpec, label: Optional[str] = None) -> TokenSequence:
    if len(lines) != spec.l:
        raise WrongLineCount(f"got {len(lines)} lines, spec needs {spec.l}")
    sources = {ln.source for ln in lines}
    if len(sources) > 1:
        raise MixedSources(f"window mixes sources {sorted(sources)}")
    tokens = []
    for ln in lines:
        tokens.extend(truncate_pad_line(ln, spec.m))
    return TokenSequence(spec=spec, tokens=tokens, label=label,
                         source=lines[0].source, raw=[ln.raw for ln in lines])


class StreamStats:
    """Diagnostics counters for a windowed stream."""

    def __init__(self):
        self.lines = 0
        self.empty = 0
        self.malformed = 0
        self.windows = 0

    @property
    def skipped(self) -> int:
        return self.empty + self.malformed

    def as_dict(self) -> dict:
        return {"lines": self.lines, "empty": self.empty,
                "malformed": self.malformed, "windows": self.windows}


class Windower:
    """Incremental windowing of one line stream.

    A window is emitted every ``stride`` parsed lines once ``l`` lines are
    buffered (tumbling when ``stride == l``, the default). Unparseable lines
    are counted in ``stats`` and dropped.
    """

    def __init__(self, spec: WindowSpec, stride: Optional[int] = None, kind: str = "syscall",
                 label: Optional[str] = None, stats: Optional[StreamStats] = None):
        self.stride = spec.l if stride is None else stride
        if self.stride < 1:
            raise ConfigError("stride must be >= 1")
        if kind not in SOURCES:
            raise ConfigError(f"unknown source {kind!r}")
        self.spec = spec
        self.kind = kind
        self.label = label
        self.stats = stats if stats is not None else StreamStats()
        self._buf = deque(maxlen=spec.l)
        self._since_last = 0
        self.emitted = 0

    def push(self, raw) -> Optional[TokenSequence]:
        stats = self.stats
        stats.lines += 1
        try:
            line = parse_line(raw, self.kind)
        except EmptyLine:
            stats.empty += 1
            return None
        except MalformedLine:
            stats.malformed += 1
            return None
        buf = self._buf
        buf.append(line)
        self._since_last += 1
        if len(buf) == self.spec.l and (self.emitted == 0 or self._since_last >= self.stride):
            self._since_last = 0
            self.emitted += 1
            stats.windows += 1
            return build_window(list(buf), self.spec, self.label)
        return None


def stream_windows(source: Iterable, spec: WindowSpec, stride: Optional[int] = None,
                   kind: str = "syscall", label: Optional[str] = None,
                   stats: Optional[StreamStats] = None) -> Iterator[TokenSequence]:
    """Yield windows from a line stream (see :class:`Windower`); an incomplete tail is discarded."""
    w = Windower(spec, stride, kind, label, stats)
    for raw in source:
        seq = w.push(raw)
        if seq is not None:
            yield seq


def render_lines(seq: TokenSequence) -> list:
    """Render a window back to ``l`` text lines of ``m`` tokens each."""
    return [" ".join(tokens) for tokens in seq.lines()]


def open_lines(path) -> Iterator[str]:
    """Iterate over lines of a file, named pipe, or ``-`` for standard input.

    Invalid UTF-8 is replaced rather than raising.
    """
    if path in (None, "-"):
        stream = io.TextIOWrapper(sys.stdin.buffer, encoding="utf-8", errors="replace")
        yield from stream
        return
    try:
        with open(path, "r", encoding="utf-8", errors="replace", newline="") as fh:
            yield from fh
    except OSError as exc:
        raise IoError(str(exc)) from exc


# labeled dataset JSONL

@dataclass
class Record:
    source: str
    label: str
    lines: list

    def to_json(self) -> str:
        return json.dumps({"source": self.source, "label": self.label, "lines": self.lines},
                          ensure_ascii=False)


def read_dataset(path) -> list:
    records = []
    try:
        with open(path, "r", encoding="utf-8", errors="replace") as fh:
            for i, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    rec = Record(source=obj["source"], label=obj["label"], lines=list(obj["lines"]))
                except (ValueError, KeyError, TypeError) as exc:
                    raise DataError(f"{path}:{i}: bad dataset record ({exc})") from exc
                if rec.source not in SOURCES or rec.label not in LABELS:
                    raise DataError(f"{path}:{i}: bad source/label {rec.source!r}/{rec.label!r}")
                records.append(rec)
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return records


def write_dataset(records: Iterable[Record], path: Union[str, Path, IO]) -> int:
    count = 0
    if hasattr(path, "write"):
        for rec in records:
            path.write(rec.to_json() + "\n")
            count += 1
        return count
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(rec.to_json() + "\n")
                count += 1
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return count


def records_to_windows(records: Iterable[Record], spec: WindowSpec, stride: Optional[int] = None,
                       source: Optional[str] = None, stats: Optional[StreamStats] = None) -> list:
    """Window every record independently; windows never span two records."""
    out = []
    for rec in records:
        if source is not None and rec.source != source:
            continue
        out.extend(stream_windows(rec.lines, spec, stride, kind=rec.source,
                                  label=rec.label, stats=stats))
    return out


class TraceWindower(TransformerMixin, BaseEstimator):
    """Turn labeled records (or raw line lists) into token windows.

    ``transform`` returns a list of :class:`TokenSequence`; labels are kept on
    each window so ``window_labels`` can recover ``y``.
    """

    def __init__(self, source="syscall", m=7, l=6, stride=None):
        self.source = source
        self.m = m
        self.l = l
        self.stride = stride

    def fit(self, X=None, y=None):
        self.spec_ = WindowSpec(self.m, self.l)
        return self

    def transform(self, X):
        spec = WindowSpec(self.m, self.l)
        out = []
        for item in X:
            if isinstance(item, Record):
                if item.source != self.source:
                    continue
                out.extend(stream_windows(item.lines, spec, self.stride, kind=self.source, label=item.label))
            else:
                out.extend(stream_windows(item, spec, self.stride, kind=self.source))
        return out


def window_labels(windows: Iterable[TokenSequence]) -> np.ndarray:
    return np.array([1 if w.label == "malicious" else 0 for w in windows], dtype=np.int64)
