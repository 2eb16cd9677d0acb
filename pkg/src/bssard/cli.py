"""Command-line surface: gen-data, train, eval, analyze-bias.

One YAML config file feeds every command through per-command sections
(`corpus:`, `train:`, `eval:`, `analysis:`) plus a top-level `seed`;
command-line flags override file values.  Every run writes a
manifest_run.json into its output directory before doing any work and
finalizes it afterwards, so a completed run can be reproduced from the
manifest alone.

Exit codes: 0 success, 1 usage or config error, 2 data or shape error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

import yaml

from . import __version__, analysis, synthdata
from .backbone import Injection
from .evaluation import evaluate, write_report
from .synthdata import (ConfigError, CorpusFormatError, config_from_dict,
                        generate_corpus, read_corpus, write_corpus)
from .trainer import MODES, SCHEDULES, TrainConfig, TrainingDiverged, fit

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

OUT_ROOT_ENV = "BSSARD_OUT"


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    # usage errors exit 1 here; argparse's default of 2 is kept for data errors
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(message, EXIT_USAGE)


# -- config file handling ----------------------------------------------------


def load_config_file(path):
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc}", EXIT_USAGE)
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        where = ""
        mark = getattr(exc, "problem_mark", None)
        if mark is not None:
            where = f" (line {mark.line + 1}, column {mark.column + 1})"
        raise CliError(f"config parse error in {path}{where}: {exc}",
                       EXIT_USAGE)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise CliError(f"config {path} must be a mapping at top level",
                       EXIT_USAGE)
    return data


def section(config, name):
    value = config.get(name, {})
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise CliError(f"config section {name!r} must be a mapping",
                       EXIT_USAGE)
    return dict(value)


def resolve_seed(args, config):
    if args.seed is not None:
        return args.seed
    seed = config.get("seed", 0)
    if not isinstance(seed, int):
        raise CliError(f"seed must be an integer, got {seed!r}",
                       EXIT_USAGE)
    return seed


def resolve_out(args, default_name):
    if args.out is not None:
        return Path(args.out)
    return Path(os.environ.get(OUT_ROOT_ENV, ".")) / default_name


def build_train_config(train_section, mode, seed):
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    kwargs = {}
    for key, value in train_section.items():
        if key == "injection":
            if not isinstance(value, dict):
                raise CliError("train.injection must be a mapping with "
                               "'visual' and 'query'", EXIT_USAGE)
            try:
                kwargs["injection"] = Injection(**value)
            except (TypeError, ValueError) as exc:
                raise CliError(f"train.injection: {exc}", EXIT_USAGE)
            continue
        if key in ("mode", "seed"):
            continue  # supplied by --mode and the common seed handling
        if key not in fields:
            raise CliError(f"unknown train config key {key!r}", EXIT_USAGE)
        kwargs[key] = value
    try:
        config = TrainConfig(mode=mode, seed=seed, **kwargs)
        config.validate()
    except (TypeError, ValueError) as exc:
        raise CliError(f"train config: {exc}", EXIT_USAGE)
    return config


# -- run manifests -----------------------------------------------------------


class RunManifest:
    def __init__(self, command, out_dir, resolved_config, seed, inputs):
        self.path = Path(out_dir) / "manifest_run.json"
        self.started = time.time()
        self.record = {
            "command": command,
            "argv": sys.argv[1:],
            "version": __version__,
            "seed": seed,
            "resolved_config": resolved_config,
            "inputs": {k: str(v) for k, v in inputs.items()},
            "outputs": {},
            "started_at": _stamp(self.started),
            "finished_at": None,
            "duration_s": None,
            "status": "running",
        }
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        self._write()

    def _write(self):
        with open(self.path, "w") as fh:
            json.dump(self.record, fh, indent=1, sort_keys=True)
            fh.write("\n")

    def finalize(self, status, outputs=None):
        now = time.time()
        self.record["status"] = status
        self.record["finished_at"] = _stamp(now)
        self.record["duration_s"] = round(now - self.started, 3)
        if outputs:
            self.record["outputs"] = {k: str(v)
                                      for k, v in outputs.items()}
        self._write()


def _stamp(t):
    return time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(t)) + "Z"


# -- commands ----------------------------------------------------------------


def cmd_gen_data(args):
    config = load_config_file(args.config)
    seed = resolve_seed(args, config)
    out = resolve_out(args, "corpus")
    corpus_section = section(config, "corpus")
    corpus_section["seed"] = seed
    known = {f.name for f in dataclasses.fields(synthdata.CorpusConfig)}
    unknown = sorted(set(corpus_section) - known)
    if unknown:
        raise CliError(f"unknown corpus config keys: {', '.join(unknown)}",
                       EXIT_USAGE)
    try:
        corpus_config = config_from_dict(corpus_section)
        corpus_config.validate()
    except (ConfigError, TypeError, KeyError) as exc:
        raise CliError(f"corpus config: {exc}", EXIT_USAGE)
    manifest = RunManifest("gen-data", out,
                           {"corpus": synthdata._config_to_dict(
                               corpus_config)},
                           seed, {"config": args.config or "<defaults>"})
    corpus = generate_corpus(corpus_config)
    manifest_path = write_corpus(corpus, out)
    manifest.finalize("completed", {"corpus_dir": out,
                                    "manifest": manifest_path})
    print(f"wrote corpus to {out}")
    return EXIT_OK


def _read_corpus_or_die(path):
    try:
        return read_corpus(Path(path))
    except FileNotFoundError as exc:
        raise CliError(f"corpus: {exc}", EXIT_DATA)
    except CorpusFormatError as exc:
        raise CliError(f"corpus: {exc}", EXIT_DATA)
    except ConfigError as exc:
        raise CliError(f"corpus config: {exc}", EXIT_USAGE)


def cmd_train(args):
    config = load_config_file(args.config)
    seed = resolve_seed(args, config)
    out = resolve_out(args, "train")
    train_section = section(config, "train")
    if args.epochs is not None:
        train_section["epochs"] = args.epochs
    if args.schedule is not None:
        train_section["schedule"] = args.schedule
    mode = args.mode or train_section.get("mode", "bssard")
    train_config = build_train_config(train_section, mode, seed)
    corpus = _read_corpus_or_die(args.corpus)
    manifest = RunManifest("train", out,
                           {"train": dataclasses.asdict(train_config)},
                           seed, {"corpus": args.corpus,
                                  "config": args.config or "<defaults>"})
    try:
        result = fit(corpus, train_config, out, resume=args.resume)
    except TrainingDiverged as exc:
        manifest.finalize("diverged")
        raise CliError(f"training diverged: {exc}", EXIT_NUMERIC)
    except ValueError as exc:
        manifest.finalize("failed")
        raise CliError(f"train: {exc}", EXIT_DATA)
    manifest.finalize("completed", {
        "metrics": result.metrics_path,
        "best_checkpoint": result.best_checkpoint,
        "final_checkpoint": result.final_checkpoint})
    print(f"best val mIoU {result.best_val_miou:.4f} "
          f"(epoch {result.best_epoch}); checkpoints in {out}")
    return EXIT_OK


def cmd_eval(args):
    config = load_config_file(args.config)
    seed = resolve_seed(args, config)
    out = resolve_out(args, "eval")
    eval_section = section(config, "eval")
    probe = args.shuffle_probe or bool(eval_section.get("shuffle_probe"))
    corpus = _read_corpus_or_die(args.corpus)
    manifest = RunManifest("eval", out, {"eval": {"shuffle_probe": probe}},
                           seed, {"checkpoint": args.checkpoint,
                                  "corpus": args.corpus})
    try:
        report, dump_rows = evaluate(Path(args.checkpoint), corpus,
                                     shuffle_seed=seed if probe else None)
    except FileNotFoundError as exc:
        manifest.finalize("failed")
        raise CliError(f"checkpoint: {exc}", EXIT_DATA)
    except (ValueError, KeyError) as exc:
        manifest.finalize("failed")
        raise CliError(f"eval: {exc}", EXIT_DATA)
    report_path = write_report(report, dump_rows, out)
    manifest.finalize("completed", {"report": report_path})
    print(report_path.read_text(), end="")
    return EXIT_OK


def cmd_analyze_bias(args):
    config = load_config_file(args.config)
    seed = resolve_seed(args, config)
    out = resolve_out(args, "analysis")
    analysis_section = section(config, "analysis")
    split = args.split or analysis_section.get("split", "train")
    trigger = args.trigger or analysis_section.get("trigger")
    grid_size = analysis_section.get("grid_size", 100)
    bandwidths = analysis_section.get("bandwidths")
    if bandwidths is not None:
        bandwidths = tuple(float(b) for b in bandwidths)
    corpus = _read_corpus_or_die(args.corpus)
    manifest = RunManifest(
        "analyze-bias", out,
        {"analysis": {"split": split, "trigger": trigger,
                      "grid_size": grid_size,
                      "bandwidths": list(bandwidths) if bandwidths
                      else None}},
        seed, {"corpus": args.corpus})
    triggers = None if trigger is None else [trigger]
    try:
        reports = analysis.analyze_corpus(corpus, out, split=split,
                                          triggers=triggers,
                                          bandwidths=bandwidths,
                                          grid_size=grid_size)
    except ValueError as exc:
        manifest.finalize("failed")
        raise CliError(f"analyze-bias: {exc}", EXIT_USAGE)
    outputs = {"summary": out / f"summary_{split}.csv"}
    for name, report in reports.items():
        if report.no_samples:
            print(f"{name} ({split}): no samples")
        else:
            print(f"{name} ({split}): {report.count} samples, "
                  f"mean start {report.mean[0]:.3f}, "
                  f"mean duration {report.mean[1]:.3f}")
    manifest.finalize("completed", outputs)
    return EXIT_OK


# -- entry point -------------------------------------------------------------


def build_parser():
    parser = _Parser(prog="bssard",
                     description="Adversarial debiasing for temporal "
                                 "grounding, desk scale.")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    def common(p):
        p.add_argument("--seed", type=int, default=None,
                       help="overrides the config file seed")
        p.add_argument("--config", default=None,
                       help="YAML config file")
        p.add_argument("--out", default=None,
                       help=f"output directory (default: "
                            f"${OUT_ROOT_ENV}/<command>)")

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a grounding model")
    p.add_argument("corpus", help="corpus directory")
    p.add_argument("--mode", choices=MODES, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--schedule", choices=SCHEDULES, default=None)
    p.add_argument("--resume", action="store_true",
                   help="continue from the latest checkpoint in --out")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("checkpoint", help="checkpoint .npz path")
    p.add_argument("corpus", help="corpus directory")
    p.add_argument("--shuffle-probe", action="store_true",
                   help="also measure the query word-shuffle drop")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze-bias",
                       help="KDE density of target moments per trigger")
    p.add_argument("corpus", help="corpus directory")
    p.add_argument("--trigger", default=None,
                   help="rule name or kind:id (default: all rules)")
    p.add_argument("--split", default=None,
                   choices=synthdata.SPLITS)
    common(p)
    p.set_defaults(func=cmd_analyze_bias)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
