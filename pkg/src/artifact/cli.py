"""Command-line entry point: ``artifact <subcommand> [options]``.

Exit codes: 0 success, 1 failed check, 2 configuration error, 3 data error,
4 I/O error. Every run writes ``<output>.manifest.json`` (or
``<subcommand>.manifest.json`` when it has no output file). Relative output
paths resolve against ``$ARTIFACT_OUTPUT_DIR`` when it is set.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import platform
import sys
from pathlib import Path
from typing import Optional

from . import __version__
from .config import parse_override, resolve_config
from .exceptions import ArtifactError, ConfigError, DataError, IoError
from .ingest import read_dataset, records_to_windows, window_labels, write_dataset
from .metrics import confusion_from_arrays, evaluation_summary, export_curves, summary_json

ENV_OUTPUT_DIR = "ARTIFACT_OUTPUT_DIR"


def _out(path) -> Optional[Path]:
    if path is None or path == "-":
        return None if path is None else Path("-")
    p = Path(path)
    base = os.environ.get(ENV_OUTPUT_DIR)
    if base and not p.is_absolute():
        p = Path(base) / p
    if p.parent and not p.parent.exists():
        try:
            p.parent.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise IoError(str(exc)) from exc
    return p


def _clean(obj):
    """Replace NaN/inf with ``None`` so the output stays strict JSON."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _emit(result: dict):
    print(json.dumps(_clean(result), sort_keys=True))


def _digest(path) -> Optional[str]:
    p = Path(path)
    if p.is_dir():
        h = hashlib.sha256()
        for f in sorted(q for q in p.rglob("*") if q.is_file()):
            h.update(str(f.relative_to(p)).encode())
            h.update(f.read_bytes())
        return h.hexdigest()
    if not p.is_file():
        return None
    return hashlib.sha256(p.read_bytes()).hexdigest()


def _versions() -> dict:
    import numba
    import numpy
    import scipy
    import sklearn

    return {"artifact": __version__, "python": platform.python_version(), "numpy": numpy.__version__,
            "scipy": scipy.__version__, "scikit-learn": sklearn.__version__, "numba": numba.__version__}


def write_manifest(args, cfg, inputs: list, outputs: list, extra: Optional[dict] = None) -> Path:
    first = next((Path(o) for o in outputs if o is not None and str(o) != "-"), None)
    if args.manifest:
        path = _out(args.manifest)
    elif first is not None:
        path = first.with_name(first.name + ".manifest.json")
    else:
        path = _out(f"{args.command}.manifest.json")
    doc = {
        "command": args.command,
        "argv": [a for a in getattr(args, "argv", [])],
        "config": cfg.to_dict() if cfg is not None else None,
        "seed": cfg.seed if cfg is not None else None,
        "inputs": {str(p): _digest(p) for p in inputs if p is not None and str(p) != "-"},
        "outputs": {str(p): _digest(p) for p in outputs if p is not None and str(p) != "-"},
        "versions": _versions(),
    }
    if extra:
        doc["result"] = _clean(extra)
    try:
        path.write_text(json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write manifest {path}: {exc}") from exc
    return path


def _config(args):
    overrides = {}
    for item in args.set or []:
        key, value = parse_override(item)
        overrides[key] = value
    overrides["seed"] = args.seed
    for dotted, attr in getattr(args, "_flag_map", {}).items():
        overrides[dotted] = getattr(args, attr, None)
    return resolve_config(args.profile, args.config, overrides)


def _records(path, source=None, required=True):
    records = read_dataset(path)
    if source is not None:
        records = [r for r in records if r.source == source]
    if required and not records:
        raise DataError(f"{path} holds no {source or ''} records")
    return records


def _windows(cfg, records, spec=None):
    return records_to_windows(records, spec or cfg.window_spec(), cfg.stride(), source=cfg.profile)


def load_model(path):
    from .cnn import CnnClassifier
    from .generator import CharLSTM
    from .serialization import read_bytes
    from .svm import SvmClassifier

    data = read_bytes(path)
    kinds = {b"ARHC": CnnClassifier, b"ARHS": SvmClassifier, b"ARHL": CharLSTM}
    cls = kinds.get(data[:4])
    if cls is None:
        raise IoError(f"{path} is not a model file (magic {data[:4]!r})")
    return cls.from_bytes(data)


# subcommands


def cmd_synth(args, cfg):
    from .synth import make_corpus, split_dataset

    s = cfg["synth"]
    records = make_corpus(cfg.profile, s["windows"], cfg.seed, motif_rate=s["motif_rate"],
                          order_motif_share=s["order_motif_share"], pair_rate=s["pair_rate"])
    out = _out(args.out)
    outputs = [out]
    write_dataset(records, out)
    if args.split:
        parts = split_dataset(records, s["train_fraction"], cfg.seed)
        for name, part in zip(("train", "val", "test"), parts):
            p = out.with_name(f"{out.stem}.{name}.jsonl")
            write_dataset(part, p)
            outputs.append(p)
    write_manifest(args, cfg, [], outputs, {"records": len(records)})
    _emit({"records": len(records), "outputs": [str(o) for o in outputs]})


def cmd_vocab(args, cfg):
    from .features import build_vocabulary

    windows = _windows(cfg, _records(args.data, cfg.profile))
    e = cfg["embedding"]
    vocab = build_vocabulary(windows, e["max_vocab"], e["min_count"])
    out = _out(args.out)
    try:
        out.write_text("\n".join(vocab.tokens) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(str(exc)) from exc
    write_manifest(args, cfg, [args.data], [out], {"size": len(vocab)})
    _emit({"size": len(vocab)})


def _read_vocab(path):
    from .features import Vocabulary

    try:
        tokens = Path(path).read_text(encoding="utf-8").split("\n")
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return Vocabulary([t for t in tokens if t])


def cmd_embed(args, cfg):
    from .features import build_vocabulary, train_word2vec

    windows = _windows(cfg, _records(args.data, cfg.profile))
    e = cfg["embedding"]
    vocab = _read_vocab(args.vocab) if args.vocab else build_vocabulary(windows, e["max_vocab"], e["min_count"])
    table = train_word2vec(windows, vocab, k=e["k"], window=e["window"], negatives=e["negatives"],
                           epochs=e["epochs"], seed=cfg.seed)
    out = _out(args.out)
    table.save(out)
    write_manifest(args, cfg, [args.data, args.vocab], [out], {"vocab": len(vocab), "k": e["k"]})
    _emit({"vocab": len(vocab), "k": e["k"]})


def _train_classifier(args, cfg, model):
    train = _windows(cfg, _records(args.data, cfg.profile))
    val = _windows(cfg, _records(args.val, cfg.profile)) if args.val else None
    if not train:
        raise DataError(f"{args.data} yields no {cfg.profile} windows")
    model.fit(train, window_labels(train), val, None if val is None else window_labels(val))
    out = _out(args.out)
    model.save(out)
    outputs = [out]
    if args.curves:
        curves = _out(args.curves)
        export_curves(model.curve_, curves)
        outputs.append(curves)
    last = model.curve_.records[-1]
    result = {"epochs": len(model.curve_), "train_acc": last.train_acc, "val_acc": last.val_acc}
    write_manifest(args, cfg, [args.data, args.val, args.embedding if hasattr(args, "embedding") else None],
                   outputs, result)
    _emit(result)


def cmd_train_cnn(args, cfg):
    from .cnn import CnnClassifier
    from .features import EmbeddingTable

    params = cfg.cnn_params()
    if args.embedding:
        params["embedding"] = EmbeddingTable.load(args.embedding)
    _train_classifier(args, cfg, CnnClassifier(**params, verbose=args.verbose))


def cmd_train_svm(args, cfg):
    from .svm import SvmClassifier

    _train_classifier(args, cfg, SvmClassifier(**cfg.svm_params(), verbose=args.verbose))


def cmd_train_lm(args, cfg):
    from .generator import CharLSTM, corpus_text

    label = cfg["lm"]["label"]
    text = corpus_text(_records(args.data, cfg.profile), label=label)
    model = CharLSTM(**cfg.lm_params(), verbose=args.verbose).fit(text)
    out = _out(args.out)
    model.save(out)
    outputs = [out]
    if args.curves:
        curves = _out(args.curves)
        export_curves(model.curve_, curves)
        outputs.append(curves)
    result = {"characters": len(text), "final_loss": model.curve_.records[-1].train_loss}
    write_manifest(args, cfg, [args.data], outputs, result)
    _emit(result)


def cmd_augment(args, cfg):
    from .generator import CharLSTM, augment_dataset

    records = read_dataset(args.data)
    model = CharLSTM.load(args.model)
    a = cfg["augment"]
    augmented, report = augment_dataset(records, model, a["fraction"], label=cfg["lm"]["label"],
                                        source=cfg.profile, lines_per_record=cfg.window_spec().l,
                                        strict=a["strict"], temperature=cfg["lm"]["temperature"],
                                        seed=cfg.seed)
    out = _out(args.out)
    write_dataset(augmented, out)
    result = {"requested": report.requested, "admitted": report.admitted, "malformed": report.malformed,
              "sampled_lines": report.sampled_lines}
    write_manifest(args, cfg, [args.data, args.model], [out], result)
    _emit(result)


def cmd_evaluate(args, cfg):
    from .engine import model_window_spec

    model = load_model(args.model)
    if not hasattr(model, "predict"):
        raise ConfigError(f"{args.model} is a language model, not a classifier")
    spec = model_window_spec(model) or cfg.window_spec()
    source = cfg.profile
    records = read_dataset(args.data)
    windows = records_to_windows(records, spec, cfg.stride(), source=source)
    if not windows:
        raise DataError(f"{args.data} yields no {source} windows")
    y = window_labels(windows)
    counts = confusion_from_arrays(model.predict(windows), y)
    summary = evaluation_summary(args.name or Path(args.data).stem, type(model).__name__, counts)
    text = summary_json(summary)
    out = _out(args.out) if args.out else None
    if out is not None:
        try:
            out.write_text(text + "\n", encoding="utf-8")
        except OSError as exc:
            raise IoError(str(exc)) from exc
    write_manifest(args, cfg, [args.model, args.data], [out], summary)
    print(text)


def cmd_monitor(args, cfg):
    from .engine import Engine, benchmark, read_job_manifest
    from .ingest import DEFAULT_SPECS

    models = {}
    if args.syscall_model:
        models["syscall"] = load_model(args.syscall_model)
    if args.network_model:
        models["network"] = load_model(args.network_model)
    if args.benchmark:
        if "syscall" not in models:
            raise ConfigError("--benchmark needs --syscall-model")
        result = benchmark(models["syscall"], lines=args.bench_lines, seed=cfg.seed,
                           chunk_lines=cfg["engine"]["chunk_lines"])
        write_manifest(args, cfg, [args.syscall_model], [], result)
        _emit(result)
        return
    if not args.jobs:
        raise ConfigError("monitor needs --jobs (or --benchmark)")
    if not models:
        raise ConfigError("monitor needs at least one of --syscall-model / --network-model")
    specs = dict(DEFAULT_SPECS)
    specs[cfg.profile] = cfg.window_spec()
    events_path = _out(args.events) if args.events else Path("-")
    control_path = _out(args.control) if args.control else None
    forensics = _out(args.forensics) if args.forensics else None
    try:
        sink = sys.stdout if str(events_path) == "-" else open(events_path, "w", encoding="utf-8", newline="\n")
        control = open(control_path, "w", encoding="utf-8", newline="\n") if control_path else None
    except OSError as exc:
        raise IoError(str(exc)) from exc
    try:
        engine = Engine(models, cfg.policy(), seed=cfg.seed, sink=sink, control=control,
                        forensics_dir=forensics, specs=specs,
                        stride={cfg.profile: cfg.stride()} if cfg.stride() else None,
                        chunk_lines=cfg["engine"]["chunk_lines"])
        jobs = read_job_manifest(args.jobs)
        for job in jobs:
            engine.add_job(job)
        summary = engine.run()
    finally:
        if sink is not sys.stdout:
            sink.close()
        if control is not None:
            control.close()
    inputs = [args.jobs, args.syscall_model, args.network_model]
    inputs += [getattr(j, s) for j in jobs for s in ("syscall", "network") if isinstance(getattr(j, s), str)]
    outputs = [events_path, control_path] + ([forensics] if forensics and forensics.exists() else [])
    write_manifest(args, cfg, inputs, outputs, summary)
    if str(events_path) != "-":
        _emit(summary)


def cmd_gradcheck(args, cfg):
    from .gradcheck import TOLERANCE, gradient_report

    worst = {}
    for seed in range(cfg.seed, cfg.seed + args.seeds):
        for name, err in gradient_report(seed).items():
            worst[name] = max(worst.get(name, 0.0), err)
    failed = sorted(k for k, v in worst.items() if v > TOLERANCE)
    for name in sorted(worst):
        mark = "FAIL" if name in failed else "ok"
        print(f"{name:24s} {worst[name]:.3e} {mark}")
    write_manifest(args, cfg, [], [], {"max_relative_error": worst, "failed": failed})
    return 1 if failed else 0


COMMANDS = {
    "synth": cmd_synth, "vocab": cmd_vocab, "embed": cmd_embed, "train-cnn": cmd_train_cnn,
    "train-svm": cmd_train_svm, "train-lm": cmd_train_lm, "augment": cmd_augment,
    "evaluate": cmd_evaluate, "monitor": cmd_monitor, "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--profile", choices=("syscall", "network"), help="dataset profile (default syscall)")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override any configuration key (repeatable)")
    common.add_argument("--manifest", help="where to write the run manifest")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="artifact", description="Trace classification toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, flag_map=None):
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        p.set_defaults(_flag_map=flag_map or {})
        return p

    p = add("synth", "write a seeded synthetic labeled corpus", {"synth.windows": "windows"})
    p.add_argument("--windows", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--split", action="store_true", help="also write .train/.val/.test splits")

    p = add("vocab", "build the token vocabulary")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = add("embed", "train word2vec embeddings")
    p.add_argument("--data", required=True)
    p.add_argument("--vocab")
    p.add_argument("--out", required=True)

    for name, what in (("train-cnn", "convolutional classifier"), ("train-svm", "linear SVM baseline")):
        section = "cnn" if name == "train-cnn" else "svm"
        p = add(name, f"train the {what}", {f"{section}.epochs": "epochs"})
        p.add_argument("--data", required=True)
        p.add_argument("--val")
        p.add_argument("--out", required=True)
        p.add_argument("--curves", help="per-epoch CSV")
        p.add_argument("--epochs", type=int)
        if name == "train-cnn":
            p.add_argument("--embedding", help="pre-trained embedding file")

    p = add("train-lm", "train the character-level language model",
            {"lm.epochs": "epochs", "lm.label": "label"})
    p.add_argument("--data", required=True)
    p.add_argument("--label", choices=("normal", "malicious"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--curves")

    p = add("augment", "append generated lines to a training set",
            {"augment.fraction": "fraction", "lm.temperature": "temperature", "lm.label": "label"})
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--fraction", type=float)
    p.add_argument("--temperature", type=float)
    p.add_argument("--label", choices=("normal", "malicious"))
    p.add_argument("--out", required=True)

    p = add("evaluate", "accuracy and false positive rate of a classifier on a labeled set")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--name", help="dataset name in the summary")
    p.add_argument("--out", help="also write the JSON summary here")

    p = add("monitor", "run the detection engine over job streams",
            {"policy.mode": "mode", "policy.sample_probability": "sample_probability",
             "policy.alarm_threshold": "alarm_threshold", "policy.alarm_window": "alarm_window"})
    p.add_argument("--jobs", help="JSON job manifest")
    p.add_argument("--syscall-model")
    p.add_argument("--network-model")
    p.add_argument("--events", help="verdict/action JSON lines (default stdout)")
    p.add_argument("--control", help="control channel for stop requests")
    p.add_argument("--forensics", help="directory for forensic bundles")
    p.add_argument("--mode", choices=("secure_full", "network_first", "random_sample"))
    p.add_argument("--sample-probability", type=float)
    p.add_argument("--alarm-threshold", type=int)
    p.add_argument("--alarm-window", type=int)
    p.add_argument("--benchmark", action="store_true", help="measure syscall throughput and exit")
    p.add_argument("--bench-lines", type=int, default=60_000)

    p = add("gradcheck", "finite-difference check of every backward pass")
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds to check")
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    try:
        cfg = _config(args)
        code = COMMANDS[args.command](args, cfg)
        return int(code or 0)
    except ArtifactError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
