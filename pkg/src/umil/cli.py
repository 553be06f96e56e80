"""Command-line entry point: generate, train, eval, ablate.

Configuration is a single flat YAML mapping.  Every key is optional; absent
keys take the defaults listed in ``DEFAULTS``.  Unknown keys are rejected.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from dataclasses import fields
from pathlib import Path

import yaml

from .datamodel import DatasetError, load_dataset
from .division import DivisionConfig
from .evaluation import SCHEMES, evaluate
from .model import Model
from .numerics import NumericalError, OptimizerConfig
from .objectives import ObjectiveWeights
from .synthgen import GeneratorConfig, generate
from .trainer import RunConfig, run

log = logging.getLogger("umil")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

SWEEPS = {
    "confident_fraction": [0.1, 0.3, 0.5, 0.7, 0.9],
    "tau": [0.5, 0.6, 0.7, 0.8, 0.9],
    "delta": [0.3, 0.5, 0.7, 0.8, 0.9, 1.0],
    "alpha_beta": [0.01, 0.1, 1.0],
}

# flat key -> owning section; total_epochs is derived from the epoch counts
_SECTIONS = {
    "run": (RunConfig, {"optimizer", "weights", "division"}),
    "optimizer": (OptimizerConfig, {"total_epochs"}),
    "weights": (ObjectiveWeights, set()),
    "division": (DivisionConfig, set()),
    "generator": (GeneratorConfig, {"seed"}),
}


class ConfigError(ValueError):
    pass


def _defaults() -> dict:
    out = {}
    for section, (cls, skip) in _SECTIONS.items():
        inst = cls()
        for f in fields(cls):
            if f.name not in skip and f.name not in out:
                out[f.name] = (section, getattr(inst, f.name))
    return out


DEFAULTS = _defaults()


def _coerce(key, value, default):
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or int(value) != value:
                raise TypeError
            return int(value)
        if isinstance(default, float):
            if isinstance(value, bool):
                raise TypeError
            return float(value)  # YAML 1.1 reads "8e-6" as a string
        if isinstance(default, list):
            return [int(v) for v in value]
        if isinstance(default, str):
            if not isinstance(value, str):
                raise TypeError
            return value
    except (TypeError, ValueError):
        pass
    else:
        return value
    raise ConfigError(f"config key {key!r}: cannot use {value!r} (expected {type(default).__name__})")


def parse_config(text: str) -> dict:
    """Flat YAML text -> complete flat dict with defaults filled in."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from None
    doc = {} if doc is None else doc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a flat key: value mapping")
    flat = {k: v for k, (_, v) in DEFAULTS.items()}
    for key, value in doc.items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(value, dict):
            raise ConfigError(f"config key {key!r}: nested values are not allowed")
        flat[key] = _coerce(key, value, DEFAULTS[key][1])
    return flat


def load_config(path) -> dict:
    if path is None:
        return parse_config("")
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def _pick(flat, section):
    return {k: flat[k] for k, (s, _) in DEFAULTS.items() if s == section}


def build_configs(flat: dict) -> tuple[GeneratorConfig, RunConfig]:
    """One ``seed`` drives both the generator and the training run."""
    try:
        gen = GeneratorConfig(seed=flat["seed"], **_pick(flat, "generator"))
        cfg = RunConfig(
            optimizer=OptimizerConfig(**_pick(flat, "optimizer")),
            weights=ObjectiveWeights(**_pick(flat, "weights")),
            division=DivisionConfig(**_pick(flat, "division")),
            **_pick(flat, "run"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.scheme not in SCHEMES:
        raise ConfigError(f"config key 'scheme': unknown scheme {cfg.scheme!r}")
    return gen, cfg


def sweep_configs(flat: dict, sweep: str):
    """Yield ``(value, flat_config)`` for every grid point of ``sweep``."""
    if sweep not in SWEEPS:
        raise ConfigError(f"unknown sweep {sweep!r}; choose from {', '.join(SWEEPS)}")
    for value in SWEEPS[sweep]:
        sub = dict(flat)
        if sweep == "alpha_beta":
            sub["alpha"] = sub["beta"] = value
        else:
            sub[sweep] = value
        yield value, sub


# --------------------------------------------------------------------------- commands


def cmd_generate(args) -> int:
    gen, _ = build_configs(load_config(args.config))
    out = generate(gen, args.out_dir)
    print(f"wrote {gen.n_train_normal + gen.n_train_abnormal + gen.n_test_normal + gen.n_test_abnormal} videos to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    _, cfg = build_configs(load_config(args.config))
    report = run(cfg, load_dataset(args.dataset_dir), args.out_dir, mil_only=args.mil_only)
    sys.stdout.write(report.dumps())
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        model = Model.load(args.checkpoint)
    except (KeyError, ValueError, TypeError) as exc:
        raise DatasetError(f"{args.checkpoint}: not a model checkpoint ({exc})") from None
    report = evaluate(model, load_dataset(args.dataset_dir), args.scheme, args.coarse_segments)
    text = report.dumps()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_ablate(args) -> int:
    flat = load_config(args.config)
    grid = list(sweep_configs(flat, args.sweep))
    configs = [(value, build_configs(sub)[1]) for value, sub in grid]
    dataset = load_dataset(args.dataset_dir)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["value", "auc_overall", "auc_abnormal"])
    for value, cfg in configs:
        log.info("sweep %s = %s", args.sweep, value)
        rep = run(cfg, dataset)
        w.writerow([repr(value), repr(rep.auc_overall), "" if rep.auc_abnormal is None else repr(rep.auc_abnormal)])
    if args.out:
        Path(args.out).write_text(buf.getvalue(), encoding="utf-8")
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="umil", description="Unbiased multiple instance learning on snippet features.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic context-bias dataset")
    p.add_argument("out_dir")
    p.add_argument("--config", help="flat YAML config (defaults if omitted)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="MIL pretraining, then UMIL epochs")
    p.add_argument("dataset_dir")
    p.add_argument("out_dir")
    p.add_argument("--config")
    p.add_argument("--mil-only", action="store_true", help="stop after MIL pretraining")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on the test split")
    p.add_argument("checkpoint")
    p.add_argument("dataset_dir")
    p.add_argument("--scheme", choices=SCHEMES, default="avg_prediction")
    p.add_argument("--coarse-segments", type=int, default=32)
    p.add_argument("--out", help="also write the metrics JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="rerun training over a parameter grid, emit CSV")
    p.add_argument("dataset_dir")
    p.add_argument("--sweep", required=True, choices=sorted(SWEEPS))
    p.add_argument("--config")
    p.add_argument("--out", help="also write the CSV here")
    p.set_defaults(func=cmd_ablate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, DatasetError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
