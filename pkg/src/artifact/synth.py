"""Seeded synthetic trace corpora shaped like grid-job and malware traces.

Benign lines follow a grid-job grammar (CVMFS reads, scratch output, storage
element lookups). Malicious records add motifs at a configurable rate. Two
motif families exist:

* lexical motifs introduce tokens benign jobs never emit (``/etc/shadow``,
  IRC / C2 domains, dropped binaries), visible to any bag-of-words model;
* order motifs reuse only benign tokens in a different arrangement (writing
  ``/etc/passwd`` while reading scratch output, inbound instead of outbound
  connections), so only an order-aware model can see them.
"""
from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .exceptions import ConfigError, TooSmallForSplit
from .ingest import DEFAULT_SPECS, Record

# literals from real grid-job and malware traces
CVMFS_PATHS = [
    "/cvmfs/alice.cern.ch/x86", "/cvmfs/alice.cern.ch/x86_64-2.6-gnu-4.1.2/Packages",
    "/cvmfs/alice.cern.ch/etc/login.sh", "/cvmfs/alice-ocdb.cern.ch/calibration",
    "/cvmfs/alice.cern.ch/bin/alienv", "/cvmfs/grid.cern.ch/etc/grid-security/certificates",
    "/cvmfs/sft.cern.ch/lcg/releases/ROOT", "/cvmfs/alice.cern.ch/lib/libAliRoot.so",
]
SCRATCH_PATHS = [
    "/scratch/job/AliESDs.root", "/scratch/job/stdout", "/scratch/job/stderr",
    "/scratch/job/validation.log", "/scratch/job/AnalysisResults.root", "/scratch/job/sim.log",
]
SYSTEM_PATHS = ["/etc/ld.so.cache", "/lib64/libc.so.6", "/usr/lib64/libstdc++.so.6",
                "/etc/hosts", "/etc/resolv.conf", "/proc/self/maps", "/dev/urandom"]
SE_DOMAINS = [
    "alice-disk-se.gridka.de", "alice.cern.ch", "alimonitor.cern.ch", "eosalice.cern.ch",
    "alice-se.grid.kit.edu", "cvmfs-stratum-one.cern.ch", "alien.cern.ch", "xrootd.gsi.de",
]
# C2 names are composed from a service prefix and a base domain, so the pool
# has a long tail that a character model can recombine
C2_PREFIXES = ["irc", "c2", "cnc", "bot", "dl", "upd"]
C2_BASES = [
    "qeast.net", "darkupdate.ru", "minexmr.com", "kernel-patch.cn", "botmaster.biz", "linuxsys.top",
    "sshscan.su", "tsunami-irc.info", "crypto-pool.fr", "fastflux.pw", "panelx.su", "xorddos.cn",
]
MALWARE_DOMAINS = [f"{p}.{b}" for b in C2_BASES for p in C2_PREFIXES]
DROPPED_BINARIES = ["/tmp/.x/kworkerd", "/tmp/.ICE-unix/sshd", "/var/tmp/.m/xmrig",
                    "/dev/shm/.b/tsunami", "/tmp/.font-unix/bash", "/var/tmp/dbus-daemon"]
SENSITIVE_PATHS = ["/etc/shadow", "/root/.ssh/authorized_keys", "/etc/sudoers",
                   "/etc/crontab", "/root/.bash_history"]
BRK_ADDRS = ["6a1000", "6a2000", "6c3000", "6c4000", "6e0000", "70f000", "711000", "7a2000"]
C2_PORTS = ["6667", "4444", "1337", "3333", "31337", "6697"]


@dataclass
class CorpusSpec:
    """Knobs for one synthetic corpus.

    ``motif_rate`` is the probability that a malicious record carries a
    motif. ``order_motif_share`` is the share of motif-carrying records whose
    only motif is an order motif.
    """

    source: str = "syscall"
    lines: int = 10_000
    seed: int = 0
    lines_per_record: Optional[int] = None
    motif_rate: float = 0.97
    order_motif_share: float = 0.25
    pair_rate: float = 0.3
    malware_domains: list = field(default_factory=lambda: list(MALWARE_DOMAINS))

    def __post_init__(self):
        if self.source not in DEFAULT_SPECS:
            raise ConfigError(f"unknown source {self.source!r}")
        if self.lines < 1:
            raise ConfigError("corpus needs at least one line")
        if not 0 <= self.motif_rate <= 1 or not 0 <= self.order_motif_share <= 1:
            raise ConfigError("rates must lie in [0, 1]")
        if self.lines_per_record is None:
            self.lines_per_record = DEFAULT_SPECS[self.source].l

    def to_dict(self) -> dict:
        return asdict(self)


class _Grammar:
    def __init__(self, spec: CorpusSpec, rng: random.Random):
        self.spec = spec
        self.r = rng
        # each service resolves to a couple of fixed addresses
        self.se_ips = {d: [f"188.184.{i * 7 % 250}.{(i * 37 + j * 11) % 250 + 1}" for j in range(2)]
                       for i, d in enumerate(SE_DOMAINS)}
        self.c2_ips = {d: [self._c2_ip(i, d, j) for j in range(2)] for i, d in enumerate(spec.malware_domains)}
        self.workers = [f"10.10.0.{i}" for i in range(11, 27)]

    @staticmethod
    def _c2_ip(i, domain, j):
        # hosts of one base domain share a /16, the prefix picks the /24
        head, _, base = domain.partition(".")
        bi = C2_BASES.index(base) if base in C2_BASES else i
        pi = C2_PREFIXES.index(head) if head in C2_PREFIXES else i
        return f"{45 + bi}.{(bi * 53) % 250}.{pi * 17 + 3}.{(bi * 29 + pi * 7 + j * 3) % 250 + 1}"

    # syscall ----------------------------------------------------------
    def fd(self):
        return str(self.r.randint(3, 15))

    def benign_syscall(self):
        r = self.r
        choice = r.random()
        if choice < 0.18:
            return f"file open fd {self.fd()} name {r.choice(CVMFS_PATHS)} flags O_RDONLY"
        if choice < 0.30:
            return f"file access res 2 ENOENT name {r.choice(CVMFS_PATHS)}"
        if choice < 0.42:
            return f"file read fd {self.fd()} size {r.choice(['4096', '8192', '65536', '512'])}"
        if choice < 0.50:
            return f"file close fd {self.fd()} res 0"
        if choice < 0.58:
            return f"file stat res 0 name {r.choice(SYSTEM_PATHS + CVMFS_PATHS)}"
        if choice < 0.66:
            return f"mem mmap len {r.choice(['4096', '1048576', '65536'])} prot PROT_READ res 0"
        if choice < 0.72:
            return f"mem brk addr 0x{r.choice(BRK_ADDRS)} res 0"
        if choice < 0.78:
            return f"proc clone res {r.randint(1000, 1040)} flags CLONE_VM"
        if choice < 0.86:
            d = r.choice(SE_DOMAINS)
            return f"net connect fd {self.fd()} addr {r.choice(self.se_ips[d])} port 1094"
        if choice < 0.92:
            return f"file write fd {self.fd()} size {r.choice(['4096', '512'])} name {r.choice(SCRATCH_PATHS)}"
        if choice < 0.96:
            return "time clock_gettime res 0 clk CLOCK_MONOTONIC"
        return f"file open fd {self.fd()} name {r.choice(SYSTEM_PATHS)} flags O_RDONLY"

    def syscall_pair(self, swapped: bool):
        """Read of /etc/passwd plus a scratch write; swapped writes /etc/passwd."""
        r = self.r
        scratch = r.choice(SCRATCH_PATHS)
        a, b = ("write", "read") if swapped else ("read", "write")
        return [f"file {a} fd {self.fd()} name /etc/passwd size {r.choice(['512', '4096'])}",
                f"file {b} fd {self.fd()} name {scratch} size {r.choice(['512', '4096'])}"]

    def lexical_syscall(self):
        r = self.r
        choice = r.random()
        if choice < 0.25:
            return f"file open fd {self.fd()} name {r.choice(SENSITIVE_PATHS)} flags O_RDONLY"
        if choice < 0.45:
            return f"proc execve name {r.choice(DROPPED_BINARIES)} res 0"
        if choice < 0.65:
            d = r.choice(self.spec.malware_domains)
            return f"net connect fd {self.fd()} addr {r.choice(self.c2_ips[d])} port {r.choice(C2_PORTS)}"
        if choice < 0.80:
            return f"file chmod name {r.choice(DROPPED_BINARIES)} mode 0777 res 0"
        if choice < 0.90:
            return f"proc ptrace res 0 pid {r.randint(1000, 1040)} request PTRACE_ATTACH"
        return f"file unlink name /var/log/{r.choice(['wtmp', 'secure', 'auth.log'])} res 0"

    # network ----------------------------------------------------------
    def benign_network(self, inbound=False):
        r = self.r
        d = r.choice(SE_DOMAINS)
        local, remote = r.choice(self.workers), r.choice(self.se_ips[d])
        src, dst = (remote, local) if inbound else (local, remote)
        qtype = r.choice(["1", "1", "1", "28"])
        return f"{src} {dst} {d} {qtype} C_INTERNET {r.choice(['1094', '443', '80'])} tcp"

    def lexical_network(self):
        r = self.r
        d = r.choice(self.spec.malware_domains)
        qtype = r.choice(["1", "1", "1", "16"])
        port = r.choice(C2_PORTS) if r.random() < 0.4 else r.choice(["443", "80"])
        return f"{r.choice(self.workers)} {r.choice(self.c2_ips[d])} {d} {qtype} C_INTERNET {port} tcp"

    # records ----------------------------------------------------------
    def benign_record(self, size):
        src = self.spec.source
        if src == "network":
            return [self.benign_network() for _ in range(size)]
        lines = [self.benign_syscall() for _ in range(size)]
        if size >= 2 and self.r.random() < self.spec.pair_rate:
            at = self.r.randrange(size - 1)
            lines[at:at + 2] = self.syscall_pair(swapped=False)
        return lines

    def malicious_record(self, size):
        r, spec = self.r, self.spec
        src = spec.source
        lines = self.benign_record(size)
        if r.random() >= spec.motif_rate:
            return lines
        if r.random() < spec.order_motif_share:
            if src == "network":
                at = r.randrange(size)
                lines[at] = self.benign_network(inbound=True)
            elif size >= 2:
                at = r.randrange(size - 1)
                lines[at:at + 2] = self.syscall_pair(swapped=True)
            return lines
        count = 1 if size == 1 else r.randint(1, 2)
        for at in r.sample(range(size), count):
            lines[at] = self.lexical_network() if src == "network" else self.lexical_syscall()
        return lines


def _corpus(spec: CorpusSpec, label: str) -> list:
    rng = random.Random(f"{label}:{spec.seed}")
    g = _Grammar(spec, rng)
    make = g.malicious_record if label == "malicious" else g.benign_record
    out, left = [], spec.lines
    while left > 0:
        size = min(spec.lines_per_record, left)
        out.append(Record(spec.source, label, make(size)))
        left -= size
    return out


def synth_benign_corpus(spec: CorpusSpec) -> list:
    return _corpus(spec, "normal")


def synth_malicious_corpus(spec: CorpusSpec) -> list:
    return _corpus(spec, "malicious")


def reference_split(total_windows: int, source: str) -> tuple:
    """(normal, malicious) window counts at the reference class ratio for source."""
    if source == "network":
        mal = round(total_windows * 2937 / (20733 + 2937))
    else:
        mal = round(total_windows * 127_054_763 / (127_100_000 + 127_054_763))
    return total_windows - mal, mal


def make_corpus(source: str, windows: int, seed: int, **knobs) -> list:
    """Benign + malicious records totalling ``windows`` windows at the reference class ratio."""
    n_norm, n_mal = reference_split(windows, source)
    l = DEFAULT_SPECS[source].l
    benign = synth_benign_corpus(CorpusSpec(source=source, lines=n_norm * l, seed=seed, **knobs))
    bad = synth_malicious_corpus(CorpusSpec(source=source, lines=n_mal * l, seed=seed, **knobs))
    return benign + bad


def _apportion(total: int, sizes: dict) -> dict:
    """Split ``total`` across groups proportionally to ``sizes`` (largest remainder)."""
    whole = sum(sizes.values())
    if whole == 0:
        return {k: 0 for k in sizes}
    exact = {k: total * n / whole for k, n in sizes.items()}
    share = {k: min(int(v), sizes[k]) for k, v in exact.items()}
    order = sorted(sizes, key=lambda k: (-(exact[k] - share[k]), k))
    left = total - sum(share.values())
    for k in order:
        if left <= 0:
            break
        if share[k] < sizes[k]:
            share[k] += 1
            left -= 1
    return share


def split_dataset(dataset, train_fraction: float = 0.8, seed: int = 0, label=None) -> tuple:
    """Stratified, seeded ``(train, validation, test)`` split.

    The part not used for training is halved between validation and test.
    ``label`` extracts an item's label (defaults to ``item.label``).
    """
    if not 0 < train_fraction < 1:
        raise ConfigError("train_fraction must lie in (0, 1)")
    items = list(dataset)
    get = label or (lambda it: it.label)
    labels = [get(it) for it in items]
    rng = np.random.default_rng(seed)
    groups = {lab: [i for i, v in enumerate(labels) if v == lab] for lab in sorted(set(labels))}
    n_train = int(round(train_fraction * len(items)))
    n_val = (len(items) - n_train) // 2
    train_share = _apportion(n_train, {k: len(v) for k, v in groups.items()})
    val_share = _apportion(n_val, {k: len(v) - train_share[k] for k, v in groups.items()})
    parts = ([], [], [])
    for lab, idx in groups.items():
        idx = [idx[j] for j in rng.permutation(len(idx))]
        a, b = train_share[lab], train_share[lab] + val_share[lab]
        parts[0].extend(idx[:a])
        parts[1].extend(idx[a:b])
        parts[2].extend(idx[b:])
    if any(len(p) == 0 for p in parts):
        raise TooSmallForSplit(f"{len(items)} items cannot fill train/validation/test")
    return tuple([items[i] for i in sorted(p)] for p in parts)


def manifest(spec: CorpusSpec, label: str, count: int) -> str:
    return json.dumps({"spec": spec.to_dict(), "label": label, "records": count}, sort_keys=True)
