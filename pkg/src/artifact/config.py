"""Run configuration: profile defaults, a TOML file, then command-line overrides.

The file is plain TOML with one table per component::

    profile = "network"
    seed = 7

    [cnn]
    epochs = 20

    [policy]
    mode = "network_first"
    responses = ["alert", "forensics"]

Every key is checked against the schema below before any work starts;
unknown tables or keys are rejected.
"""
from __future__ import annotations

import copy
import sys
from typing import Optional

from .cnn import NETWORK_CNN, SYSCALL_CNN
from .engine import DetectionPolicy, ResponseAction
from .exceptions import ConfigError, IoError
from .ingest import WindowSpec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

# section -> key -> accepted python type(s); ``None`` values in the defaults
# are allowed to stay unset
SCHEMA: dict = {
    "": {"profile": str, "seed": int},
    "window": {"m": int, "l": int, "stride": int},
    "embedding": {"k": int, "window": int, "negatives": int, "epochs": int, "max_vocab": int,
                  "min_count": int, "max_windows": int},
    "cnn": {"filter_sizes": list, "total_filters": int, "filter_mode": str, "dense_units": int,
            "dropout_rate": float, "learning_rate": float, "momentum": float, "decay": float,
            "threshold": float, "epochs": int, "batch_size": int, "class_weight": str,
            "validation_fraction": float, "restore_best": bool, "fine_tune_embeddings": bool},
    "svm": {"lam": float, "epochs": int, "batch_size": int, "max_features": int, "rho": float,
            "epsilon": float, "learning_rate": float, "class_weight": str, "validation_fraction": float,
            "restore_best": bool},
    "lm": {"hidden_size": int, "seq_len": int, "batch_size": int, "epochs": int, "learning_rate": float,
           "rho": float, "epsilon": float, "clip_norm": float, "label": str, "temperature": float},
    "augment": {"fraction": float, "strict": bool},
    "synth": {"windows": int, "motif_rate": float, "order_motif_share": float, "pair_rate": float,
              "train_fraction": float},
    "policy": {"mode": str, "sample_probability": float, "alarm_threshold": int, "alarm_window": int,
               "responses": list, "retention": int},
    "engine": {"chunk_lines": int},
}


def _profile_defaults(profile: str) -> dict:
    if profile not in ("syscall", "network"):
        raise ConfigError(f"unknown profile {profile!r}; expected 'syscall' or 'network'")
    cnn = SYSCALL_CNN if profile == "syscall" else NETWORK_CNN
    return {
        "profile": profile,
        "seed": 0,
        "window": {"m": cnn["m"], "l": cnn["l"], "stride": 0},
        "embedding": {"k": cnn["k"], "window": 5, "negatives": 5, "epochs": 5, "max_vocab": 10_000,
                      "min_count": 1, "max_windows": 20_000},
        "cnn": {"filter_sizes": list(cnn["filter_sizes"]), "total_filters": cnn["total_filters"],
                "filter_mode": "total", "dense_units": 64, "dropout_rate": 0.5, "learning_rate": 0.001,
                "momentum": 0.8, "decay": 1e-5, "threshold": 0.5, "epochs": cnn["epochs"],
                "batch_size": cnn["batch_size"], "class_weight": "balanced", "validation_fraction": 0.1,
                "restore_best": True, "fine_tune_embeddings": True},
        "svm": {"lam": 1e-4, "epochs": 10, "batch_size": 32, "max_features": 10_000, "rho": 0.95,
                "epsilon": 1e-6, "learning_rate": 1.0, "class_weight": "none", "validation_fraction": 0.1,
                "restore_best": True},
        "lm": {"hidden_size": 128, "seq_len": 100, "batch_size": 32, "epochs": 50, "learning_rate": 0.01,
               "rho": 0.9, "epsilon": 1e-8, "clip_norm": 5.0, "label": "malicious", "temperature": 1.0},
        "augment": {"fraction": 0.2, "strict": True},
        "synth": {"windows": 50_000 if profile == "syscall" else 10_000, "motif_rate": 0.97,
                  "order_motif_share": 0.25, "pair_rate": 0.3, "train_fraction": 0.8},
        "policy": {"mode": "secure_full", "sample_probability": None, "alarm_threshold": 3,
                   "alarm_window": 20, "responses": ["alert"], "retention": 100},
        "engine": {"chunk_lines": 1200},
    }


def _check_value(section: str, key: str, value):
    want = SCHEMA[section][key]
    where = f"{section}.{key}" if section else key
    if want is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if want is int and isinstance(value, bool) or not isinstance(value, want):
        raise ConfigError(f"{where} must be of type {want.__name__}, got {type(value).__name__}")
    return value


class RunConfig:
    """Fully validated, nested configuration."""

    def __init__(self, data: dict):
        self.data = data
        self.validate()

    def __getitem__(self, section: str) -> dict:
        return self.data[section]

    @property
    def profile(self) -> str:
        return self.data["profile"]

    @property
    def seed(self) -> int:
        return self.data["seed"]

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def validate(self):
        d = self.data
        w = d["window"]
        if w["m"] < 1 or w["l"] < 1 or w["stride"] < 0:
            raise ConfigError("window.m and window.l must be >= 1, window.stride >= 0")
        for name, frac in (("cnn.validation_fraction", d["cnn"]["validation_fraction"]),
                           ("svm.validation_fraction", d["svm"]["validation_fraction"]),
                           ("synth.train_fraction", d["synth"]["train_fraction"]),
                           ("cnn.dropout_rate", d["cnn"]["dropout_rate"])):
            if not 0.0 <= frac < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1)")
        for sec in ("cnn", "svm"):
            if d[sec]["class_weight"] not in ("balanced", "none"):
                raise ConfigError(f"{sec}.class_weight must be 'balanced' or 'none'")
        if not all(isinstance(h, int) and h >= 1 for h in d["cnn"]["filter_sizes"]):
            raise ConfigError("cnn.filter_sizes must be positive integers")
        if d["augment"]["fraction"] <= 0:
            raise ConfigError("augment.fraction must be > 0")
        if d["lm"]["temperature"] <= 0:
            raise ConfigError("lm.temperature must be > 0")
        if d["lm"]["label"] not in ("normal", "malicious"):
            raise ConfigError("lm.label must be 'normal' or 'malicious'")
        for k in ("epochs", "batch_size"):
            for sec in ("cnn", "svm", "lm"):
                if d[sec][k] < 1:
                    raise ConfigError(f"{sec}.{k} must be >= 1")
        self.policy()

    # component views

    def window_spec(self) -> WindowSpec:
        return WindowSpec(self.data["window"]["m"], self.data["window"]["l"])

    def stride(self) -> Optional[int]:
        return self.data["window"]["stride"] or None

    def cnn_params(self) -> dict:
        c, e, w = self.data["cnn"], self.data["embedding"], self.data["window"]
        return dict(m=w["m"], l=w["l"], k=e["k"], filter_sizes=tuple(c["filter_sizes"]),
                    total_filters=c["total_filters"], filter_mode=c["filter_mode"],
                    dense_units=c["dense_units"], dropout_rate=c["dropout_rate"],
                    learning_rate=c["learning_rate"], momentum=c["momentum"], decay=c["decay"],
                    threshold=c["threshold"], fine_tune_embeddings=c["fine_tune_embeddings"],
                    epochs=c["epochs"], batch_size=c["batch_size"],
                    class_weight=None if c["class_weight"] == "none" else c["class_weight"],
                    validation_fraction=c["validation_fraction"], restore_best=c["restore_best"],
                    w2v_epochs=e["epochs"], w2v_window=e["window"], w2v_negatives=e["negatives"],
                    w2v_max_windows=e["max_windows"], max_vocab=e["max_vocab"], min_count=e["min_count"],
                    random_state=self.seed)

    def svm_params(self) -> dict:
        s = self.data["svm"]
        return dict(lam=s["lam"], epochs=s["epochs"], batch_size=s["batch_size"],
                    max_features=s["max_features"], rho=s["rho"], epsilon=s["epsilon"],
                    learning_rate=s["learning_rate"],
                    class_weight=None if s["class_weight"] == "none" else s["class_weight"],
                    validation_fraction=s["validation_fraction"], restore_best=s["restore_best"],
                    random_state=self.seed)

    def lm_params(self) -> dict:
        p = dict(self.data["lm"])
        p.pop("label")
        p.pop("temperature")
        return dict(p, random_state=self.seed)

    def policy(self) -> DetectionPolicy:
        p = self.data["policy"]
        responses = []
        for kind in p["responses"]:
            if not isinstance(kind, str):
                raise ConfigError("policy.responses must be a list of action names")
            params = {"retention": p["retention"]} if kind == "forensics" else {}
            responses.append(ResponseAction(kind, params))
        return DetectionPolicy(mode=p["mode"], sample_probability=p["sample_probability"],
                               alarm_threshold=p["alarm_threshold"], alarm_window=p["alarm_window"],
                               responses=responses)


def load_config_file(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc


def _merge(base: dict, doc: dict, origin: str):
    for key, value in doc.items():
        if key in SCHEMA and key != "":
            if not isinstance(value, dict):
                raise ConfigError(f"[{key}] must be a table ({origin})")
            for sub, v in value.items():
                if sub not in SCHEMA[key]:
                    raise ConfigError(f"unknown key {key}.{sub} ({origin})")
                base[key][sub] = _check_value(key, sub, v)
        elif key in SCHEMA[""]:
            base[key] = _check_value("", key, value)
        else:
            raise ConfigError(f"unknown key {key!r} ({origin})")


def parse_override(item: str) -> tuple:
    """``section.key=value`` with ``value`` written as a TOML value (bare words become strings)."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like section.key=value")
    key, raw = item.split("=", 1)
    key = key.strip()
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return key, value


def resolve_config(profile: Optional[str] = None, path=None, overrides: Optional[dict] = None) -> RunConfig:
    """Profile defaults <- config file <- ``overrides`` (dotted keys)."""
    doc = load_config_file(path) if path else {}
    overrides = dict(overrides or {})
    chosen = overrides.pop("profile", None) or profile or doc.get("profile") or "syscall"
    if not isinstance(chosen, str):
        raise ConfigError("profile must be a string")
    data = _profile_defaults(chosen)
    _merge(data, {k: v for k, v in doc.items() if k != "profile"}, str(path))
    nested: dict = {}
    for dotted, value in overrides.items():
        if value is None:
            continue
        section, _, key = dotted.rpartition(".")
        if section:
            nested.setdefault(section, {})[key] = value
        else:
            nested[key] = value
    _merge(data, nested, "command line")
    return RunConfig(data)
