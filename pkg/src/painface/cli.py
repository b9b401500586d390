"""Command-line interface.

Commands: ``validate`` (parse-check a data tree), ``featurize`` (write
per-sequence feature caches), ``synth`` (emit a synthetic tree), ``run``
(execute an experiment from a declarative JSON config), ``report``
(re-render files from a saved report.json).

Exit codes: 0 success, 1 validation or experiment failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import jsonschema

from .codec import FormatError, discover_recordings, load_recording, validate_tree
from .dataset import (
    FeatureKind,
    attach_labels,
    build_sequences,
    read_label_table,
    write_feature_matrix,
)
from .evaluate import (
    ALL_METHODS,
    ExperimentConfig,
    FoldError,
    run_experiment,
)
from .report import render_text_table, report_from_dict, write_report_files
from .synth import SynthConfig, generate, generate_dataset

KIND_KEYS = tuple(k.key for k in FeatureKind)

USAGE_ERROR = 2

RUN_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kinds", "methods"],
    "properties": {
        "kinds": {
            "type": "array", "minItems": 1, "uniqueItems": True,
            "items": {"enum": list(KIND_KEYS)},
        },
        "methods": {
            "type": "array", "minItems": 1, "uniqueItems": True,
            "items": {"enum": list(ALL_METHODS)},
        },
        "scheme": {"enum": ["loso", "random"]},
        "ratio": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "repetitions": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "workers": {"type": "integer", "minimum": 1},
        "svm_c": {"type": "number", "exclusiveMinimum": 0},
        "svm_gamma": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "svr_epsilon": {"type": "number", "minimum": 0},
        "gp_steps": {"type": "integer", "minimum": 0},
        "sampler_k": {"type": "integer", "minimum": 1},
        "mlp": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epochs": {"type": "integer", "minimum": 1},
                "hidden": {
                    "type": "array", "minItems": 1,
                    "items": {"type": "integer", "minimum": 1},
                },
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "dropout": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "batch_size": {"type": "integer", "minimum": 1},
                "frames_per_sequence": {"type": "integer", "minimum": 1},
            },
        },
        "synth": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "patients": {"type": "integer", "minimum": 1},
                "sequences_per_patient": {"type": "integer", "minimum": 1},
                "frames_per_sequence": {"type": "integer", "minimum": 1},
                "witness_fraction": {
                    "type": "number", "exclusiveMinimum": 0, "maximum": 1,
                },
                "noise_scale": {"type": "number", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "data_root": {"type": "string"},
        "labels": {"type": "string"},
    },
}

_MLP_KEYS = {
    "epochs": "mlp_epochs",
    "hidden": "mlp_hidden",
    "learning_rate": "mlp_learning_rate",
    "dropout": "mlp_dropout",
    "batch_size": "mlp_batch_size",
    "frames_per_sequence": "mlp_frames_per_sequence",
}


def _fail(message: str, code: int) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------

def cmd_validate(args) -> int:
    root = Path(args.data_root)
    if not root.is_dir():
        return _fail(f"{root} is not a directory", USAGE_ERROR)
    report = validate_tree(root)
    failed = {}
    for issue in report.issues:
        failed.setdefault(issue.path, []).append(issue.message)
    for path in report.checked:
        if path in failed:
            for message in failed.pop(path):
                print(f"FAIL {path}: {message}")
        else:
            print(f"PASS {path}")
    for path, messages in failed.items():  # cross-file issues (chunk merges)
        for message in messages:
            print(f"FAIL {path}: {message}")
    if report.files_checked == 0:
        print(f"warning: no recognized files under {root}")
    print(
        f"checked {report.files_checked} files across {report.recordings} "
        f"recordings: {'PASS' if report.ok else 'FAIL'}"
    )
    return 0 if report.ok else 1


# ---------------------------------------------------------------------------
# featurize
# ---------------------------------------------------------------------------

def cmd_featurize(args) -> int:
    root = Path(args.data_root)
    if not root.is_dir():
        return _fail(f"{root} is not a directory", USAGE_ERROR)
    labels_path = Path(args.labels) if args.labels else root / "labels.csv"
    try:
        table = read_label_table(labels_path)
    except (OSError, FormatError) as exc:
        return _fail(f"label table {labels_path}: {exc}", USAGE_ERROR)

    kind = FeatureKind.from_key(args.kind)
    try:
        recordings = attach_labels(
            (load_recording(p) for p in discover_recordings(root)), table
        )
        samples, excluded = build_sequences(recordings, kind)
    except FormatError as exc:
        return _fail(str(exc), 1)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    frames = 0
    for sample in samples:
        write_feature_matrix(
            out / f"{sample.sequence_id}.{kind.key}.pfm", sample.frames, kind
        )
        frames += sample.frames.shape[0]
    for record in excluded:
        print(f"warning: skipped {record.sequence_id}: {record.reason}")
    print(
        f"wrote {len(samples)} sequences ({frames} frames, "
        f"{len(excluded)} skipped) to {out}"
    )
    return 0


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    try:
        config = SynthConfig(
            patients=args.patients,
            sequences_per_patient=args.sequences,
            frames_per_sequence=args.frames,
            kinds=tuple(args.kinds),
            witness_fraction=args.witness_fraction,
            noise_scale=args.noise_scale,
            seed=args.seed,
        )
    except ValueError as exc:
        return _fail(str(exc), USAGE_ERROR)
    try:
        truth = generate(config, args.out, force=args.force)
    except FileExistsError as exc:
        return _fail(str(exc), 1)
    print(
        f"wrote {len(truth.sequences)} sequences "
        f"({config.patients} patients) to {args.out}"
    )
    return 0


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def _load_config_doc(path: Path) -> dict:
    doc = json.loads(path.read_text())
    jsonschema.validate(doc, RUN_SCHEMA)
    if ("synth" in doc) == ("data_root" in doc):
        raise jsonschema.ValidationError(
            "config must name exactly one input: 'synth' or 'data_root'"
        )
    return doc


def _experiment_config(doc: dict, args) -> ExperimentConfig:
    kwargs = {
        "kinds": tuple(doc["kinds"]),
        "methods": tuple(doc["methods"]),
    }
    for key in ("scheme", "ratio", "repetitions", "seed", "workers", "svm_c",
                "svm_gamma", "svr_epsilon", "gp_steps", "sampler_k"):
        if key in doc:
            kwargs[key] = doc[key]
    for key, target in _MLP_KEYS.items():
        if key in doc.get("mlp", {}):
            value = doc["mlp"][key]
            kwargs[target] = tuple(value) if key == "hidden" else value
    if args.seed is not None:
        kwargs["seed"] = args.seed
    if args.workers is not None:
        kwargs["workers"] = args.workers
    if args.allow_partial:
        kwargs["allow_partial"] = True
    return ExperimentConfig(**kwargs)


def _load_samples(doc: dict, config: ExperimentConfig) -> dict:
    if "synth" in doc:
        synth_config = SynthConfig(kinds=config.kinds, **doc["synth"])
        samples, _ = generate_dataset(synth_config)
        return samples
    root = Path(doc["data_root"])
    labels_path = Path(doc["labels"]) if "labels" in doc else root / "labels.csv"
    table = read_label_table(labels_path)
    recordings = attach_labels(
        [load_recording(p) for p in discover_recordings(root)], table
    )
    samples = {}
    for kind_key in config.kinds:
        kind_samples, excluded = build_sequences(
            recordings, FeatureKind.from_key(kind_key)
        )
        for record in excluded:
            print(f"warning: {kind_key}: skipped {record.sequence_id}: "
                  f"{record.reason}")
        samples[kind_key] = kind_samples
    return samples


def cmd_run(args) -> int:
    config_path = Path(args.config)
    try:
        doc = _load_config_doc(config_path)
    except OSError as exc:
        return _fail(f"cannot read config {config_path}: {exc}", USAGE_ERROR)
    except json.JSONDecodeError as exc:
        return _fail(f"config {config_path} is not valid JSON: {exc}", USAGE_ERROR)
    except jsonschema.ValidationError as exc:
        return _fail(f"config {config_path}: {exc.message}", USAGE_ERROR)

    try:
        config = _experiment_config(doc, args)
    except ValueError as exc:
        return _fail(f"config {config_path}: {exc}", USAGE_ERROR)

    try:
        samples = _load_samples(doc, config)
    except (OSError, FormatError, ValueError) as exc:
        return _fail(f"loading data: {exc}", 1)

    try:
        report = run_experiment(samples, config)
    except FoldError as exc:
        return _fail(str(exc), 1)

    written = write_report_files(report, args.out, figures=not args.no_figures)
    print(render_text_table(report))
    for value in written.values():
        for path in value if isinstance(value, list) else [value]:
            print(f"wrote {path}")

    n_failures = sum(len(c.failures) for c in report.cells)
    if n_failures and not config.allow_partial:
        return _fail(
            f"{n_failures} fold(s) failed; rerun with --allow-partial to accept",
            1,
        )
    return 0


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def cmd_report(args) -> int:
    path = Path(args.report)
    try:
        report = report_from_dict(json.loads(path.read_text()))
    except OSError as exc:
        return _fail(f"cannot read report {path}: {exc}", USAGE_ERROR)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        return _fail(f"report {path} is malformed: {exc!r}", USAGE_ERROR)
    print(render_text_table(report))
    if args.out:
        written = write_report_files(report, args.out, figures=not args.no_figures)
        for value in written.values():
            for p in value if isinstance(value, list) else [value]:
                print(f"wrote {p}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="painface",
        description="Facial pain-intensity modeling: data tools and experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="parse-check every file in a data tree")
    p.add_argument("data_root")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("featurize", help="write per-sequence feature caches")
    p.add_argument("data_root")
    p.add_argument("out")
    p.add_argument("--kind", required=True, choices=KIND_KEYS)
    p.add_argument("--labels", help="label CSV (default: DATA_ROOT/labels.csv)")
    p.set_defaults(fn=cmd_featurize)

    p = sub.add_parser("synth", help="emit a synthetic dataset tree")
    p.add_argument("out")
    p.add_argument("--patients", type=int, default=12)
    p.add_argument("--sequences", type=int, default=10,
                   help="sequences per patient")
    p.add_argument("--frames", type=int, default=300,
                   help="frames per sequence (after clipping)")
    p.add_argument("--witness-fraction", type=float, default=0.05)
    p.add_argument("--noise-scale", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kinds", nargs="+", choices=KIND_KEYS,
                   default=list(KIND_KEYS))
    p.add_argument("--force", action="store_true",
                   help="overwrite a non-empty target")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("run", help="run an experiment from a JSON config")
    p.add_argument("config")
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--workers", type=int, help="fold-level worker processes")
    p.add_argument("--allow-partial", action="store_true",
                   help="tolerate degenerate folds")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("report", help="re-render files from a report.json")
    p.add_argument("report")
    p.add_argument("--out", help="directory for re-rendered files")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
