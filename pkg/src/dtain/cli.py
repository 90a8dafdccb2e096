"""Command-line surface: prepare, synth, train, eval, explain.

Every option can also come from a JSON config file (--config); explicit
command-line flags win, unknown config keys are rejected, and the
effective configuration is echoed into each command's report artifact.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict

import numpy as np

from .baselines import BASELINE_KINDS, BaselineConfig, BaselineModel
from .checkpoint import check_vocab_compatibility, load_checkpoint, save_checkpoint
from .data import prepare_dataset, read_trails, read_vocab, write_trails, write_vocab
from .errors import ConfigurationError, DtainError
from .explain import export_explanations
from .metrics import ScoredSet, evaluate_scored, multitask_report, write_report_csv
from .model import DtainConfig, DtainModel
from .synth import SynthSpec, build_synth_dataset
from .training import TrainConfig, score_trails, train

MODEL_KINDS = ("dtain",) + BASELINE_KINDS


def _int_list(text):
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    return tuple(int(v) for v in str(text).split(",") if v.strip())


def _str_list(text):
    if isinstance(text, (list, tuple)):
        return tuple(str(v) for v in text)
    return tuple(v.strip() for v in str(text).split(",") if v.strip())


def _float_or_none(text):
    if text is None or (isinstance(text, str) and text.lower() in ("none", "")):
        return None
    return float(text)


def _tasks(text):
    return "auto" if str(text) == "auto" else int(text)


# name -> (type, default, help); None type means plain string
_OPTIONS = {
    "prepare": {
        "clicks": (str, None, "clicks CSV (session,timestamp,item,category)"),
        "buys": (str, None, "buys CSV (session,timestamp,item,price,quantity)"),
        "out": (str, None, "output directory"),
        "blacklist": (_str_list, (), "retargeting event keys, comma separated"),
        "target_positive_rate": (float, 0.1, "negative downsampling target"),
        "min_count": (int, 1, "vocabulary frequency threshold"),
        "max_len": (int, 64, "keep at most this many most-recent events"),
        "test_fraction": (float, 0.2, "held-out share, split by id hash"),
        "seed": (int, 7, "random seed"),
    },
    "synth": {
        "spec": (str, None, "JSON generator spec"),
        "out": (str, None, "output directory"),
        "test_fraction": (float, 0.2, "held-out share"),
        "seed": (int, 7, "random seed"),
    },
    "train": {
        "data": (str, None, "prepared dataset directory"),
        "out": (str, None, "output directory"),
        "model": (str, "dtain", f"one of {MODEL_KINDS}"),
        "epochs": (int, 10, "training epochs"),
        "batch_size": (int, 256, "minibatch size"),
        "learning_rate": (float, 1e-3, "initial Adam step"),
        "decay": (float, 0.95, "per-epoch step decay"),
        "clip_norm": (_float_or_none, 5.0, "global gradient-norm clip (none disables)"),
        "val_fraction": (float, 0.1, "held out for threshold selection"),
        "seed": (int, 0, "random seed"),
        "d_w": (int, 300, "embedding width"),
        "d_m": (int, 200, "recurrent output width"),
        "attention_hidden": (int, 64, "attention scorer hidden width"),
        "head_layers": (_int_list, (128, 64), "MLP head widths, comma separated"),
        "max_len": (int, 64, "maximum trail length"),
        "num_tasks": (_tasks, "auto", "1, K>=2, or auto (from labels)"),
        "time_unit": (float, 3600.0, "seconds per delta-t unit"),
        "conv_filters": (int, 128, "CNN filters"),
        "kernel_sizes": (_int_list, (3,), "CNN kernel sizes, comma separated"),
        "self_attn_heads": (int, 1, "self-attention heads"),
    },
    "eval": {
        "checkpoint": (str, None, "model checkpoint (npz)"),
        "data": (str, None, "prepared dataset directory"),
        "split": (str, "test", "train or test"),
        "out": (str, None, "metrics CSV path"),
    },
    "explain": {
        "checkpoint": (str, None, "dtain or gru_attn checkpoint"),
        "data": (str, None, "prepared dataset directory"),
        "split": (str, "test", "train or test"),
        "out": (str, None, "output directory for matrices"),
        "num_users": (int, 100, "converters to sample"),
        "seed": (int, 0, "sampling seed"),
    },
}

_REQUIRED = {
    "prepare": ("clicks", "buys", "out"),
    "synth": ("spec", "out"),
    "train": ("data", "out"),
    "eval": ("checkpoint", "data", "out"),
    "explain": ("checkpoint", "data", "out"),
}


def _build_parser():
    parser = argparse.ArgumentParser(prog="dtain",
                                     description="Time-aware conversion prediction toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for command, options in _OPTIONS.items():
        p = sub.add_parser(command)
        p.add_argument("--config", default=None, help="JSON file of option values")
        for name, (typ, default, help_text) in options.items():
            p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=typ or str,
                           default=argparse.SUPPRESS, help=f"{help_text} (default: {default})")
    return parser


def _effective_config(command, args):
    """defaults < config file < explicit flags; unknown file keys rejected."""
    options = _OPTIONS[command]
    config = {name: default for name, (_, default, _h) in options.items()}
    if args.config:
        with open(args.config) as fh:
            loaded = json.load(fh)
        unknown = sorted(set(loaded) - set(options))
        if unknown:
            raise ConfigurationError(f"unknown config keys for {command}: {unknown}")
        for name, value in loaded.items():
            typ = options[name][0]
            config[name] = typ(value) if typ else value
    for name in options:
        if hasattr(args, name):
            config[name] = getattr(args, name)
    missing = [name for name in _REQUIRED[command] if config.get(name) is None]
    if missing:
        raise ConfigurationError(f"{command}: missing required options {missing}")
    return config


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2, default=_jsonable)
        fh.write("\n")


def _jsonable(value):
    if isinstance(value, tuple):
        return list(value)
    if isinstance(value, (np.integer, np.floating)):
        return value.item()
    raise TypeError(f"not JSON serializable: {type(value)}")


def _write_dataset(out_dir, train_set, test_set, vocab):
    os.makedirs(out_dir, exist_ok=True)
    write_trails(train_set, os.path.join(out_dir, "train.trails"))
    write_trails(test_set, os.path.join(out_dir, "test.trails"))
    write_vocab(vocab, os.path.join(out_dir, "vocab.tsv"))


def cmd_prepare(config):
    train_set, test_set, vocab, summary = prepare_dataset(
        config["clicks"], config["buys"], blacklist=set(config["blacklist"]),
        target_positive_rate=config["target_positive_rate"], min_count=config["min_count"],
        max_len=config["max_len"], test_fraction=config["test_fraction"], seed=config["seed"],
    )
    _write_dataset(config["out"], train_set, test_set, vocab)
    summary.update({"command": "prepare", "config": config, "seed": config["seed"]})
    _write_json(os.path.join(config["out"], "summary.json"), summary)
    return 0


def cmd_synth(config):
    spec = SynthSpec.from_json(config["spec"])
    train_set, test_set, vocab, ground_truth, summary = build_synth_dataset(
        spec, config["seed"], config["test_fraction"])
    _write_dataset(config["out"], train_set, test_set, vocab)
    _write_json(os.path.join(config["out"], "ground_truth.json"), ground_truth)
    summary.update({"command": "synth", "config": config, "seed": config["seed"]})
    _write_json(os.path.join(config["out"], "summary.json"), summary)
    return 0


def _infer_num_tasks(setting, trails):
    if setting != "auto":
        return setting
    top = max((t.label for t in trails), default=0)
    return top + 1 if top > 1 else 1


def build_model(kind, vocab_size, num_tasks, config, seed):
    shared = dict(
        vocab_size=vocab_size, d_w=config["d_w"], d_m=config["d_m"],
        attention_hidden=config["attention_hidden"], head_layers=config["head_layers"],
        max_len=config["max_len"], num_tasks=num_tasks,
    )
    if kind == "dtain":
        return DtainModel.build(DtainConfig(time_unit=config["time_unit"], **shared), seed)
    if kind not in BASELINE_KINDS:
        raise ConfigurationError(f"unknown model kind {kind!r}")
    return BaselineModel.build(BaselineConfig(
        kind=kind, conv_filters=config["conv_filters"], kernel_sizes=config["kernel_sizes"],
        self_attn_heads=config["self_attn_heads"], **shared), seed)


def cmd_train(config):
    data_dir = config["data"]
    trails = read_trails(os.path.join(data_dir, "train.trails"))
    vocab = read_vocab(os.path.join(data_dir, "vocab.tsv"))
    num_tasks = _infer_num_tasks(config["num_tasks"], trails)
    model = build_model(config["model"], vocab.size, num_tasks, config, config["seed"])
    train_config = TrainConfig(
        learning_rate=config["learning_rate"], decay=config["decay"],
        batch_size=config["batch_size"], epochs=config["epochs"], seed=config["seed"],
        gradient_clip_norm=config["clip_norm"], val_fraction=config["val_fraction"],
    )
    history = train(model, trails, train_config)

    os.makedirs(config["out"], exist_ok=True)
    meta = {
        "vocab_digest": vocab.digest(),
        "num_tasks": num_tasks,
        "thresholds": history["thresholds"],
        "threshold_rule": history["threshold_rule"],
        "seed": config["seed"],
        "train_config": asdict(train_config),
    }
    save_checkpoint(os.path.join(config["out"], "checkpoint.npz"), model, meta)
    report = {
        "command": "train",
        "config": config,
        "model": config["model"],
        "seed": config["seed"],
        "num_tasks": num_tasks,
        "epoch_losses": history["epoch_losses"],
        "thresholds": history["thresholds"],
        "threshold_rule": history["threshold_rule"],
        "n_train": history["n_train"],
        "n_val": history["n_val"],
        "wall_time_sec": history["wall_time_sec"],
    }
    _write_json(os.path.join(config["out"], "report.json"), report)
    return 0


def _load_eval_inputs(config):
    model, meta = load_checkpoint(config["checkpoint"])
    vocab = read_vocab(os.path.join(config["data"], "vocab.tsv"))
    check_vocab_compatibility(meta, vocab)
    if config["split"] not in ("train", "test"):
        raise ConfigurationError(f"split must be train or test, got {config['split']!r}")
    trails = read_trails(os.path.join(config["data"], f"{config['split']}.trails"))
    return model, meta, trails


def cmd_eval(config):
    model, meta, trails = _load_eval_inputs(config)
    scores = score_trails(model, trails)
    labels = np.array([t.label for t in trails])
    thresholds = meta.get("thresholds") or [0.5]
    if model.config.num_tasks == 1:
        rows = [evaluate_scored(ScoredSet(scores, labels), model.kind, "binary", thresholds[0])]
    else:
        rows = multitask_report(scores, labels, model.kind, thresholds)
    write_report_csv(rows, config["out"])
    _write_json(os.path.splitext(config["out"])[0] + "_report.json", {
        "command": "eval", "config": config, "seed": meta.get("seed"),
        "n_trails": len(trails), "csv": os.path.basename(config["out"]),
    })
    return 0


def cmd_explain(config):
    model, meta, trails = _load_eval_inputs(config)
    os.makedirs(config["out"], exist_ok=True)
    user_ids, paths = export_explanations(model, trails, config["out"],
                                          n=config["num_users"], seed=config["seed"])
    _write_json(os.path.join(config["out"], "explain_report.json"), {
        "command": "explain", "config": config, "seed": config["seed"],
        "sampled_users": len(user_ids), "matrices": sorted(paths),
    })
    return 0


_COMMANDS = {
    "prepare": cmd_prepare,
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "explain": cmd_explain,
}


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        config = _effective_config(args.command, args)
        return _COMMANDS[args.command](config)
    except (DtainError, OSError) as e:
        print(f"dtain {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
