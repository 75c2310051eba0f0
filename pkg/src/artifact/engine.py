"""Streaming detection and response engine.

Jobs are served in a fixed round-robin order. In each round every job reads
up to ``chunk_lines`` lines from its network stream and then its syscall
stream, windows them, scores the windows in one batch per stream and feeds
the verdicts through the per-job alarm logic. Timestamps are a logical clock
(one tick per emitted event), which makes a run reproducible byte for byte.
"""
from __future__ import annotations

import hashlib
import io
import json
import os
import time
from collections import deque
from dataclasses import dataclass, field
from itertools import islice
from pathlib import Path
from typing import IO, Iterable, Optional, Union

from . import __version__
from .exceptions import (
    ActionFailure,
    ArtifactError,
    ConfigError,
    DataError,
    IoError,
    ModelSpecMismatch,
)
from .ingest import (
    DEFAULT_SPECS,
    SOURCES,
    StreamStats,
    TokenSequence,
    Windower,
    WindowSpec,
    build_window,
    open_lines,
    parse_line,
)

MODES = ("secure_full", "network_first", "random_sample")
ACTIONS = ("alert", "stop_job", "forensics")


@dataclass(frozen=True)
class ResponseAction:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ACTIONS:
            raise ConfigError(f"unknown response action {self.kind!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}


@dataclass
class DetectionPolicy:
    """How verdicts are produced and turned into incidents.

    An alarm fires when at least ``alarm_threshold`` of a job's last
    ``alarm_window`` verdicts are malicious; the window is then cleared so the
    next alarm needs fresh evidence.
    """

    mode: str = "secure_full"
    sample_probability: Optional[float] = None
    alarm_threshold: int = 3
    alarm_window: int = 20
    responses: list = field(default_factory=lambda: [ResponseAction("alert")])

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown detection mode {self.mode!r}")
        if (self.mode == "random_sample") != (self.sample_probability is not None):
            raise ConfigError("sample_probability is required for, and only for, random_sample mode")
        if self.sample_probability is not None and not 0.0 <= self.sample_probability <= 1.0:
            raise ConfigError("sample_probability must lie in [0, 1]")
        if self.alarm_threshold < 1 or self.alarm_window < self.alarm_threshold:
            raise ConfigError("need 1 <= alarm_threshold <= alarm_window")
        self.responses = [r if isinstance(r, ResponseAction) else ResponseAction(**r) for r in self.responses]
        if not self.responses:
            raise ConfigError("at least one response action must be configured")

    def to_dict(self) -> dict:
        return {"mode": self.mode, "sample_probability": self.sample_probability,
                "alarm_threshold": self.alarm_threshold, "alarm_window": self.alarm_window,
                "responses": [r.to_dict() for r in self.responses]}


@dataclass
class JobStream:
    """One monitored job. Streams are paths (``-`` for stdin) or iterables of lines."""

    job_id: str
    syscall: Union[str, Path, Iterable, None] = None
    network: Union[str, Path, Iterable, None] = None
    windows_seen: int = 0
    alarms: int = 0

    def stream(self, source: str):
        handle = getattr(self, source)
        if handle is None:
            return iter(())
        if isinstance(handle, (str, Path)):
            return open_lines(handle)
        return iter(handle)


@dataclass
class SourceCounters:
    lines: int = 0
    windows: int = 0
    verdicts: int = 0
    skipped: int = 0
    malformed: int = 0

    @property
    def windows_in(self) -> int:
        # every rejected line is one rejected input unit
        return self.windows + self.malformed

    def to_dict(self) -> dict:
        return {"lines": self.lines, "windows_in": self.windows_in, "verdicts": self.verdicts,
                "skipped": self.skipped, "malformed": self.malformed}


def model_window_spec(model):
    spec = getattr(model, "window_spec", None)
    if callable(spec):
        spec = spec()
    if spec is None:
        spec = getattr(model, "window_spec_", None)
    return spec


def model_fingerprint(model) -> dict:
    data = model.to_bytes()
    return {"type": type(model).__name__, "sha256": hashlib.sha256(data).hexdigest()}


def score_windows(model, windows) -> tuple:
    """Batch scores and labels: CNN probabilities or SVM decision values."""
    if hasattr(model, "net_"):
        p = model.decision_function(windows)
        return "probability", p, p >= model.net_.config.threshold
    d = model.decision_function(windows)
    return "decision", d, d >= 0


def sample_job(seed: int, job_id: str, probability: float) -> bool:
    """Seeded per-job coin: the same (seed, job) always gets the same answer."""
    digest = hashlib.sha256(f"{seed}:{job_id}".encode()).digest()
    u = int.from_bytes(digest[:8], "little") / 2.0 ** 64
    return u < probability


class EventSink:
    """Ordered JSON-lines writer stamping each event with the logical clock."""

    def __init__(self, out: Optional[IO] = None):
        self.out = out
        self.clock = 0
        self.events = 0

    def emit(self, event: dict) -> dict:
        self.clock += 1
        event = {"ts": self.clock, **event}
        self.events += 1
        if self.out is not None:
            self.out.write(json.dumps(event, sort_keys=True) + "\n")
        return event


class _JobState:
    def __init__(self, job: JobStream, specs, stride, policy: DetectionPolicy, seed: int, retention: int):
        self.job = job
        self.counters = {s: SourceCounters() for s in SOURCES}
        self.stats = {s: StreamStats() for s in SOURCES}
        self.windowers = {s: Windower(specs[s], stride.get(s), kind=s, stats=self.stats[s]) for s in SOURCES}
        self.iters = {s: job.stream(s) for s in SOURCES}
        self.done = {s: False for s in SOURCES}
        self.window_index = {s: 0 for s in SOURCES}
        self.recent = deque(maxlen=policy.alarm_window)
        self.ring = deque(maxlen=retention)
        self.episodes = 0
        self.escalated = policy.mode != "network_first"
        self.monitored = (sample_job(seed, job.job_id, policy.sample_probability)
                          if policy.mode == "random_sample" else True)

    def analyzes(self, source: str) -> bool:
        if not self.monitored:
            return False
        return source == "network" or self.escalated


class Engine:
    """Multi-job detection engine.

    ``models`` maps ``"syscall"``/``"network"`` to a trained CNN or SVM. A
    source without a model is windowed and counted but never classified.
    """

    def __init__(self, models: dict, policy: DetectionPolicy, seed: int = 0, sink: Optional[IO] = None,
                 control: Optional[IO] = None, forensics_dir=None, specs: Optional[dict] = None,
                 stride: Optional[dict] = None, chunk_lines: int = 1200):
        self.specs = dict(DEFAULT_SPECS if specs is None else specs)
        for source, model in models.items():
            if source not in SOURCES:
                raise ConfigError(f"unknown source {source!r}")
            ms = model_window_spec(model)
            want = self.specs[source]
            if ms is not None and (ms.m, ms.l) != (want.m, want.l):
                raise ModelSpecMismatch(
                    f"{source} model expects m={ms.m}, l={ms.l}; engine is configured for m={want.m}, l={want.l}")
        if chunk_lines < 1:
            raise ConfigError("chunk_lines must be >= 1")
        self.models = models
        self.policy = policy
        self.seed = seed
        self.sink = EventSink(sink)
        self.control = control
        self.forensics_dir = Path(forensics_dir) if forensics_dir is not None else None
        self.stride = dict(stride or {})
        self.chunk_lines = chunk_lines
        self.retention = max([int(a.params.get("retention", 100)) for a in policy.responses
                              if a.kind == "forensics"] or [100])
        self.jobs: dict = {}
        self.escalated_jobs: list = []
        self.bundles: list = []

    def add_job(self, job: JobStream):
        if job.job_id in self.jobs:
            raise ConfigError(f"duplicate job id {job.job_id!r}")
        self.jobs[job.job_id] = _JobState(job, self.specs, self.stride, self.policy, self.seed, self.retention)

    # main loop

    def run(self) -> dict:
        active = list(self.jobs.values())
        while active:
            for state in active:
                for source in ("network", "syscall"):
                    if not state.done[source]:
                        self._advance(state, source)
            active = [s for s in active if not all(s.done.values())]
        return self.summary()

    def _advance(self, state: _JobState, source: str):
        chunk = list(islice(state.iters[source], self.chunk_lines))
        if len(chunk) < self.chunk_lines:
            state.done[source] = True
        windower = state.windowers[source]
        windows = []
        for raw in chunk:
            seq = windower.push(raw)
            if seq is not None:
                windows.append(seq)
        st, c = state.stats[source], state.counters[source]
        c.lines, c.windows, c.malformed = st.lines, st.windows, st.empty + st.malformed
        state.job.windows_seen += len(windows)
        model = self.models.get(source)
        # the gate is checked per batch: only network verdicts can open it
        if model is None or not state.analyzes(source):
            c.skipped += len(windows)
            state.window_index[source] += len(windows)
            return
        if not windows:
            return
        kind, scores, labels = score_windows(model, windows)
        for seq, score, mal in zip(windows, scores, labels):
            self._verdict(state, source, seq, kind, float(score), bool(mal))
            if source == "network" and mal and not state.escalated:
                state.escalated = True
                self.escalated_jobs.append(state.job.job_id)

    def _verdict(self, state, source, seq: TokenSequence, kind, score, mal):
        idx = state.window_index[source]
        state.window_index[source] += 1
        state.counters[source].verdicts += 1
        event = self.sink.emit({"type": "verdict", "job_id": state.job.job_id, "source": source,
                                "window": idx, kind: score, "label": "malicious" if mal else "normal"})
        state.ring.append((source, seq.raw, event))
        state.recent.append(mal)
        if sum(state.recent) >= self.policy.alarm_threshold:
            state.recent.clear()
            state.episodes += 1
            state.job.alarms += 1
            self._fire(state, source, idx)

    def _fire(self, state: _JobState, source: str, idx: int):
        job_id = state.job.job_id
        for action in self.policy.responses:
            try:
                extra = self._execute(action, state)
            except (ArtifactError, OSError) as exc:
                self.sink.emit({"type": "action_error", "action": action.kind, "job_id": job_id,
                                "episode": state.episodes, "error": str(ActionFailure(str(exc)))})
                continue
            self.sink.emit({"type": "action", "action": action.kind, "job_id": job_id,
                            "episode": state.episodes, "source": source, "window": idx, **extra})

    def _execute(self, action: ResponseAction, state: _JobState) -> dict:
        job_id = state.job.job_id
        if action.kind == "alert":
            return {}
        if action.kind == "stop_job":
            if self.control is not None:
                self.control.write(json.dumps({"action": "stop", "job_id": job_id,
                                               "episode": state.episodes}, sort_keys=True) + "\n")
                self.control.flush()
            return {}
        if self.forensics_dir is None:
            raise IoError("forensics action configured without a forensics directory")
        retention = int(action.params.get("retention", self.retention))
        path = self.forensics_dir / f"{_safe(job_id)}-{state.episodes:04d}"
        entries = list(state.ring)[-retention:]
        emit_forensics(path, job_id, entries, self._meta())
        self.bundles.append(str(path))
        return {"bundle": path.name}

    def _meta(self) -> dict:
        return {"version": __version__, "seed": self.seed, "policy": self.policy.to_dict(),
                "specs": {s: [sp.m, sp.l] for s, sp in self.specs.items()},
                "models": {s: model_fingerprint(m) for s, m in sorted(self.models.items())}}

    def summary(self) -> dict:
        jobs = {}
        for job_id, st in self.jobs.items():
            jobs[job_id] = {"alarms": st.job.alarms, "monitored": st.monitored, "escalated": st.escalated,
                            **{s: st.counters[s].to_dict() for s in SOURCES}}
        return {"jobs": jobs, "events": self.sink.events, "escalated_jobs": list(self.escalated_jobs),
                "bundles": list(self.bundles)}


def _safe(job_id: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in job_id)


def emit_forensics(path, job_id: str, entries, meta: dict) -> Path:
    """Write a bundle: ``raw_windows.txt`` (windows separated by a blank line),
    ``verdicts.jsonl`` and ``meta.json``."""
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        with open(path / "raw_windows.txt", "w", encoding="utf-8", newline="\n") as fh:
            for _, raw, _ in entries:
                for line in raw:
                    fh.write(line + "\n")
                fh.write("\n")
        with open(path / "verdicts.jsonl", "w", encoding="utf-8", newline="\n") as fh:
            for _, _, event in entries:
                fh.write(json.dumps(event, sort_keys=True) + "\n")
        bundle_meta = {"job_id": job_id, "windows": len(entries),
                       "sources": [src for src, _, _ in entries], **meta}
        with open(path / "meta.json", "w", encoding="utf-8") as fh:
            json.dump(bundle_meta, fh, sort_keys=True, indent=2)
    except OSError as exc:
        raise IoError(f"cannot write forensic bundle {path}: {exc}") from exc
    return path


def load_bundle(path) -> tuple:
    """Return ``(meta, windows, verdicts)`` where windows are lists of raw lines."""
    path = Path(path)
    try:
        meta = json.loads((path / "meta.json").read_text(encoding="utf-8"))
        with open(path / "raw_windows.txt", encoding="utf-8", newline="\n") as fh:
            text = fh.read()
        verdicts = [json.loads(ln) for ln in (path / "verdicts.jsonl").read_text(encoding="utf-8").splitlines()
                    if ln.strip()]
    except (OSError, ValueError) as exc:
        raise IoError(f"cannot read forensic bundle {path}: {exc}") from exc
    blocks = text.split("\n\n")
    windows = [b.split("\n") for b in blocks[:-1]] if blocks and blocks[-1] == "" else None
    if windows is None or len(windows) != meta["windows"]:
        raise DataError(f"bundle {path} is inconsistent")
    return meta, windows, verdicts


def replay_bundle(path, models: dict) -> list:
    """Re-classify a bundle's raw windows; returns ``(source, label, score)`` triples."""
    meta, windows, _ = load_bundle(path)
    out = []
    for source, raw in zip(meta["sources"], windows):
        seq = build_window([parse_line(r, source) for r in raw], WindowSpec(*meta["specs"][source]))
        kind, scores, labels = score_windows(models[source], [seq])
        out.append((source, "malicious" if labels[0] else "normal", float(scores[0])))
    return out


def read_job_manifest(path) -> list:
    """Jobs from JSON: a list (or ``{"jobs": [...]}``) of ``{job_id, syscall_path, network_path}``."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise IoError(str(exc)) from exc
    except ValueError as exc:
        raise ConfigError(f"job manifest is not valid JSON: {exc}") from exc
    entries = data.get("jobs") if isinstance(data, dict) else data
    if not isinstance(entries, list):
        raise ConfigError("job manifest must hold a list of jobs")
    base = Path(path).parent
    jobs = []
    for e in entries:
        if not isinstance(e, dict) or "job_id" not in e:
            raise ConfigError(f"job entry needs a job_id: {e!r}")
        unknown = set(e) - {"job_id", "syscall_path", "network_path"}
        if unknown:
            raise ConfigError(f"unknown job manifest keys: {sorted(unknown)}")

        def resolve(p):
            if p is None or p == "-":
                return p
            return p if os.path.isabs(p) else str(base / p)

        jobs.append(JobStream(str(e["job_id"]), resolve(e.get("syscall_path")), resolve(e.get("network_path"))))
    return jobs


def benchmark(model, lines: int = 60_000, seed: int = 0, chunk_lines: int = 1200) -> dict:
    """Throughput of the full engine path on a synthetic benign syscall stream."""
    from .synth import CorpusSpec, synth_benign_corpus

    records = synth_benign_corpus(CorpusSpec(source="syscall", lines=lines, seed=seed))
    stream = [ln for r in records for ln in r.lines]
    engine = Engine({"syscall": model}, DetectionPolicy(), seed=seed, sink=io.StringIO(),
                    chunk_lines=chunk_lines)
    engine.add_job(JobStream("bench", syscall=stream))
    t0 = time.perf_counter()
    summary = engine.run()
    elapsed = time.perf_counter() - t0
    return {"lines": len(stream), "seconds": elapsed, "lines_per_second": len(stream) / elapsed,
            "verdicts": summary["jobs"]["bench"]["syscall"]["verdicts"]}
