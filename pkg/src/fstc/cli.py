"""``fstc`` command line: one subcommand per pipeline stage.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 checkpoint error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import checkpoint
from .checkpoint import Checkpoint
from .config import DATA_DIR_ENV, RunConfig, dump_defaults, load_config
from .errors import ConfigError, DataError, FstcError
from .evalkit import (
    ExperimentData,
    accuracy,
    default_target_classes,
    emit_report,
    prepare_experiment,
    run_ablation,
    run_comparison,
)
from .metalearn import PrototypeClassifier, meta_train, protonet_train
from .nnmodel import Model
from .textpipe import Corpus, load_20news
from .transfer import finetune, pretrain
from .tsneproj import emit_projection, project_corpus

logger = logging.getLogger("fstc")

DEFAULT_OUT = {
    "ingest": "ingest.json",
    "pretrain": "pretrain.fstc",
    "finetune": "finetune.fstc",
    "meta-train": "meta.fstc",
    "compare": "compare.csv",
    "ablate": "ablate.csv",
    "project": "projection.csv",
}


def _out_path(args, run: RunConfig) -> Path:
    return Path(args.out) if args.out else Path(run.paths.out_dir) / DEFAULT_OUT[args.command]


def _target_names(run: RunConfig, corpus: Corpus) -> list[str]:
    wanted = run.data.target_classes
    if isinstance(wanted, int):
        return default_target_classes(corpus.class_names, wanted)
    missing = [c for c in wanted if c not in corpus.class_names]
    if missing:
        raise ConfigError(f"data.target_classes names classes absent from the corpus: {missing}")
    return list(wanted)


def _load_data(run: RunConfig, corpus_dir: str | None = None) -> tuple[Corpus, ExperimentData]:
    corpus = load_20news(run.corpus_dir(corpus_dir))
    d = run.data
    data = prepare_experiment(
        corpus,
        _target_names(run, corpus),
        split_seed=d.split_seed,
        test_fraction=d.test_fraction,
        min_df=d.min_df,
        max_vocab=d.max_vocab,
    )
    return corpus, data


def _load_ckpt(args, data: ExperimentData, required: bool = True) -> Checkpoint | None:
    if not args.ckpt:
        if required:
            raise ConfigError(f"{args.command} needs --ckpt")
        return None
    ckpt = checkpoint.load(args.ckpt)
    checkpoint.require_fingerprint(ckpt, data.fingerprint, str(args.ckpt))
    return ckpt


def _save(args, run: RunConfig, model: Model, data: ExperimentData) -> Path:
    path = checkpoint.save(Checkpoint(model, data.fingerprint, args.command, run.seed), _out_path(args, run))
    print(f"checkpoint: {path}")
    return path


def _emit(key: str, value) -> None:
    print(f"{key}: {value}")


# ---------------------------------------------------------------- commands


def cmd_ingest(args, run: RunConfig) -> int:
    corpus, data = _load_data(run, args.corpus_dir)
    summary = {
        "classes": corpus.num_classes,
        "documents": len(corpus),
        "vocab_size": len(data.vocab),
        "corpus_fingerprint": data.fingerprint,
        "source_classes": list(data.source.class_names),
        "target_classes": list(data.target_train.class_names),
        "source_documents": len(data.source),
        "target_train_documents": len(data.target_train),
        "target_test_documents": len(data.target_test),
    }
    for key in ("classes", "documents", "vocab_size", "corpus_fingerprint"):
        _emit(key, summary[key])
    if args.out:
        path = Path(args.out)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
        except OSError as exc:
            raise DataError(f"cannot write summary {path}: {exc}") from exc
    return 0


def cmd_pretrain(args, run: RunConfig) -> int:
    _, data = _load_data(run)
    config = run.experiment_config().model_config(data.input_dim, data.source.num_classes)
    model = pretrain(config, run.train("pretrain"), data.source)
    if model.trace:
        _emit("final_loss", f"{model.trace[-1]:.6f}")
    _save(args, run, model, data)
    return 0


def cmd_finetune(args, run: RunConfig) -> int:
    _, data = _load_data(run)
    ckpt = _load_ckpt(args, data)
    model = finetune(ckpt.model, run.train("finetune"), data.target_train, data.target_train.num_classes)
    _emit("test_accuracy", f"{accuracy(model, data.target_test):.6f}")
    _save(args, run, model, data)
    return 0


def cmd_metatrain(args, run: RunConfig) -> int:
    _, data = _load_data(run)
    ckpt = _load_ckpt(args, data, required=False)
    exp = run.experiment_config()
    meta = run.meta_config()
    config = exp.model_config(data.input_dim, meta.way)
    init = ckpt.model if ckpt else None
    if exp.meta_algorithm == "protonet":
        model = protonet_train(config, replace(meta, outer_lr=exp.proto_lr), data.source, init)
        _emit("prototype_test_accuracy", f"{accuracy(PrototypeClassifier(model, data.target_train), data.target_test):.6f}")
    else:
        model = meta_train(config, meta, data.source, init)
    if model.trace:
        _emit("final_episode_loss", f"{model.trace[-1]:.6f}")
    _save(args, run, model, data)
    return 0


def _cmd_grid(args, run: RunConfig, runner) -> int:
    _, data = _load_data(run)
    report = runner(data, run.experiment_config())
    report.metadata["run_config"] = run.to_dict()
    report.metadata["command"] = args.command
    path = emit_report(report, _out_path(args, run))
    for model, regimes in report.summary().items():
        cells = "  ".join(f"{name}={s['mean']:.4f}+/-{s['std']:.4f}" for name, s in regimes.items())
        print(f"{model:10s} {cells}")
    _emit("report", path)
    if args.figures:
        from .plots import figure_path, plot_report

        _emit("figure", plot_report(report, figure_path(path), title=args.command))
    return 0


def cmd_compare(args, run: RunConfig) -> int:
    return _cmd_grid(args, run, run_comparison)


def cmd_ablate(args, run: RunConfig) -> int:
    return _cmd_grid(args, run, run_ablation)


def cmd_project(args, run: RunConfig) -> int:
    _, data = _load_data(run)
    ckpt = _load_ckpt(args, data)
    proj = project_corpus(ckpt.model, data.target_test, run.tsne_config())
    path = emit_projection(proj, _out_path(args, run))
    _emit("points", len(proj.points))
    _emit("kl_initial", f"{proj.kl_trace[0]:.6f}")
    _emit("kl_final", f"{proj.kl_trace[-1]:.6f}")
    _emit("projection", path)
    if args.figures:
        from .plots import figure_path, plot_projection

        _emit("figure", plot_projection(proj, figure_path(path)))
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "meta-train": cmd_metatrain,
    "compare": cmd_compare,
    "ablate": cmd_ablate,
    "project": cmd_project,
}


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fstc",
        description="Few-shot text classification: transfer learning plus meta-learning.",
        epilog=f"The corpus root defaults to ${DATA_DIR_ENV} unless paths.corpus_dir is set.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    parser.add_argument("--print-defaults", action="store_true", help="print the default config as YAML and exit")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    helps = {
        "ingest": "load the corpus, print class/document/vocab counts and the fingerprint",
        "pretrain": "train on the source classes and save a checkpoint",
        "finetune": "fine-tune a checkpoint on the target training split",
        "meta-train": "episodic meta-training (ProtoNet or MAML), optionally from --ckpt",
        "compare": "linear baselines vs the full method across regimes and seeds",
        "ablate": "the four transfer/meta arms across regimes and seeds",
        "project": "t-SNE of a checkpoint's test-set embeddings",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", help="YAML run config (defaults apply when omitted)")
        p.add_argument("--seed", type=_seed, help="override the config seed")
        p.add_argument("--out", help=f"output path (default: <paths.out_dir>/{DEFAULT_OUT[name]})")
        if name in ("finetune", "meta-train", "project"):
            p.add_argument("--ckpt", help="input checkpoint")
        else:
            p.set_defaults(ckpt=None)
        if name in ("compare", "ablate", "project"):
            p.add_argument("--figures", action="store_true", help="also render a PNG next to the CSV")
        if name == "ingest":
            p.add_argument("corpus_dir", nargs="?", help="corpus root (overrides config and environment)")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    if args.print_defaults:
        sys.stdout.write(dump_defaults())
        return 0
    if not args.command:
        parser.print_help(sys.stderr)
        return 2
    try:
        run = load_config(args.config)
        if args.seed is not None:
            run = run.with_seed(args.seed)
        return COMMANDS[args.command](args, run)
    except FstcError as exc:
        print(f"fstc {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
