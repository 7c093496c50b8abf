"""Experiment runner: ``fatlab train | eval | export-curves``.

Config files are flat ``key = value`` text ('#' starts a comment).
Unknown keys are rejected with their line number; ``--print-config``
echoes the full effective configuration in the same grammar, and feeding
that echo back reproduces the identical run.

The per-epoch metrics log is JSONL, one record per line with fields
``epoch, clean_acc, robust_acc_pgd10, asr_train, mean_delta_l2, loss``
(schema v1). Wall-clock times are deliberately kept out of the JSONL so
equal seeds produce byte-identical logs; they land in summary.json.

Exit codes: 0 success, 2 config error, 3 numeric failure, 4 I/O or
format error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .attacks import AttackConfig, pgd10_config
from .checkpoint import load_model, save_checkpoint
from .data import Dataset, load_cifar_binary, load_idx, synth_blobs, synth_shapes
from .errors import ConfigError, FatlabError, FormatError, NumericError
from .models import init_model, model_from_arrays
from .optim import make_sgd
from .priors import BatchPrior, EpochPrior, MomentumEpochPrior
from .trainer import RunRecord, TrainConfig, evaluate, run_training

JSONL_SCHEMA_VERSION = 1
JSONL_FIELDS = ("epoch", "clean_acc", "robust_acc_pgd10", "asr_train", "mean_delta_l2", "loss")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def _parse_bool(s: str) -> bool:
    if s.lower() in ("true", "1", "yes"):
        return True
    if s.lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"expected true/false, got {s!r}")


def _parse_opt_float(s: str):
    return None if s == "" else float(s)


def _parse_opt_str(s: str):
    return None if s == "" else s


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


# key -> (parser, default). Order here is the --print-config order.
CONFIG_SPEC: dict[str, tuple] = {
    # variant / attack
    "variant": (str, "fgsm_mep"),
    "use_regularizer": (_parse_bool, True),
    "lambda": (float, 10.0),
    "epsilon": (float, 8 / 255),
    "alpha": (_parse_opt_float, None),
    "mu": (float, 0.3),
    "pgd_k": (int, 2),
    "clamp_input": (_parse_bool, True),
    "augment": (_parse_bool, False),
    # loop
    "epochs": (int, 30),
    "batch_size": (int, 128),
    "seed": (int, 0),
    # optimizer
    "lr": (float, 0.1),
    "momentum": (float, 0.9),
    "weight_decay": (float, 5e-4),
    # evaluation attack
    "eval_steps": (int, 10),
    "eval_epsilon": (_parse_opt_float, None),
    "eval_alpha": (_parse_opt_float, None),
    # model
    "model": (str, "smallcnn"),
    "hidden": (int, 128),
    "conv_channels": (str, "16,32"),
    # dataset
    "dataset": (str, "synth_shapes"),
    "data_seed": (int, 0),
    "classes": (int, 10),
    "train_n": (int, 10000),
    "test_n": (int, 2000),
    "shape_size": (int, 28),
    "shape_noise": (float, 0.1),
    "blob_d": (int, 32),
    "blob_spread": (float, 0.08),
    "idx_images": (_parse_opt_str, None),
    "idx_labels": (_parse_opt_str, None),
    "idx_test_images": (_parse_opt_str, None),
    "idx_test_labels": (_parse_opt_str, None),
    "cifar_train_files": (_parse_opt_str, None),
    "cifar_test_files": (_parse_opt_str, None),
    # output
    "out": (str, "runs/latest"),
    "checkpoint_every": (int, 0),
}


def parse_config_text(text: str) -> dict[str, str]:
    """Raw key -> value strings; rejects unknown keys with line numbers."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key not in CONFIG_SPEC:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate config key {key!r}")
        raw[key] = value
    return raw


def resolve_config(raw: dict[str, str]) -> dict:
    cfg = {}
    for key, (parse, default) in CONFIG_SPEC.items():
        if key in raw:
            try:
                cfg[key] = parse(raw[key])
            except ValueError as err:
                raise ConfigError(f"config key {key!r}: {err}") from err
        else:
            cfg[key] = default
    return cfg


def format_config(cfg: dict) -> str:
    return "\n".join(f"{key} = {_fmt(cfg[key])}" for key in CONFIG_SPEC) + "\n"


def load_config(path: str | None, overrides: dict | None = None) -> dict:
    raw = parse_config_text(Path(path).read_text()) if path else {}
    cfg = resolve_config(raw)
    for key, value in (overrides or {}).items():
        if value is not None:
            cfg[key] = value
    return cfg


# -- building blocks -------------------------------------------------------


def _split_paths(value: str) -> list[str]:
    return [p.strip() for p in value.split(",") if p.strip()]


def build_datasets(cfg: dict) -> tuple[Dataset, Dataset]:
    kind = cfg["dataset"]
    if kind == "synth_blobs":
        train = synth_blobs(cfg["train_n"], cfg["blob_d"], cfg["classes"],
                            cfg["blob_spread"], seed=cfg["data_seed"],
                            centers_seed=cfg["data_seed"])
        test = synth_blobs(cfg["test_n"], cfg["blob_d"], cfg["classes"],
                           cfg["blob_spread"], seed=cfg["data_seed"] + 1,
                           centers_seed=cfg["data_seed"])
    elif kind == "synth_shapes":
        train = synth_shapes(cfg["train_n"], cfg["shape_size"], cfg["classes"],
                             seed=cfg["data_seed"], noise=cfg["shape_noise"])
        test = synth_shapes(cfg["test_n"], cfg["shape_size"], cfg["classes"],
                            seed=cfg["data_seed"] + 1, noise=cfg["shape_noise"])
    elif kind == "idx":
        for key in ("idx_images", "idx_labels", "idx_test_images", "idx_test_labels"):
            if not cfg[key]:
                raise ConfigError(f"dataset 'idx' needs config key {key!r}")
        train = load_idx(cfg["idx_images"], cfg["idx_labels"], cfg["classes"])
        test = load_idx(cfg["idx_test_images"], cfg["idx_test_labels"], cfg["classes"])
        train = train.subset(min(cfg["train_n"], len(train)))
        test = test.subset(min(cfg["test_n"], len(test)))
    elif kind == "cifar10":
        if not cfg["cifar_train_files"] or not cfg["cifar_test_files"]:
            raise ConfigError("dataset 'cifar10' needs cifar_train_files and cifar_test_files")
        train = load_cifar_binary(_split_paths(cfg["cifar_train_files"]), n=cfg["train_n"],
                                  num_classes=cfg["classes"])
        test = load_cifar_binary(_split_paths(cfg["cifar_test_files"]), n=cfg["test_n"],
                                 num_classes=cfg["classes"])
    else:
        raise ConfigError(f"unknown dataset kind {cfg['dataset']!r}")
    return train, test


def build_descriptor(cfg: dict, sample_shape) -> dict:
    c, h, w = sample_shape
    if cfg["model"] == "mlp":
        return {"kind": "mlp", "in_dim": int(c * h * w), "hidden": cfg["hidden"],
                "classes": cfg["classes"]}
    if cfg["model"] == "smallcnn":
        try:
            c1, c2 = (int(v) for v in cfg["conv_channels"].split(","))
        except ValueError as err:
            raise ConfigError(f"conv_channels must be 'c1,c2', got {cfg['conv_channels']!r}") from err
        return {"kind": "smallcnn", "in_channels": int(c), "image_hw": [int(h), int(w)],
                "channels": [c1, c2], "fc_dim": cfg["hidden"], "classes": cfg["classes"]}
    raise ConfigError(f"unknown model kind {cfg['model']!r}")


def build_train_config(cfg: dict) -> TrainConfig:
    eval_eps = cfg["eval_epsilon"] if cfg["eval_epsilon"] is not None else cfg["epsilon"]
    eval_attack = pgd10_config(eval_eps, steps=cfg["eval_steps"], alpha=cfg["eval_alpha"],
                               clamp_input=cfg["clamp_input"])
    return TrainConfig(
        variant=cfg["variant"], use_regularizer=cfg["use_regularizer"], lam=cfg["lambda"],
        epsilon=cfg["epsilon"], alpha=cfg["alpha"], mu=cfg["mu"], epochs=cfg["epochs"],
        batch_size=cfg["batch_size"], seed=cfg["seed"], pgd_k=cfg["pgd_k"],
        clamp_input=cfg["clamp_input"], augment=cfg["augment"], eval_attack=eval_attack)


def record_jsonl(record: RunRecord) -> str:
    row = {field: getattr(record, field) for field in JSONL_FIELDS}
    return json.dumps(row)


def prior_arrays(priors) -> dict[str, np.ndarray]:
    """Buffer arrays to embed in a checkpoint, keyed by prior kind."""
    if isinstance(priors, BatchPrior):
        return {"prior/delta_B": priors.delta} if priors.delta is not None else {}
    if isinstance(priors, EpochPrior):
        return {"prior/delta_E": priors.delta}
    if isinstance(priors, MomentumEpochPrior):
        return {"prior/eta_E": priors.eta, "prior/g_E": priors.g}
    return {}


# -- subcommands ------------------------------------------------------------


def run_train(cfg: dict, print_config: bool = False, stdout=None) -> int:
    stdout = stdout or sys.stdout
    if print_config:
        stdout.write(format_config(cfg))
        return EXIT_OK
    train_cfg = build_train_config(cfg)
    train_data, test_data = build_datasets(cfg)
    descriptor = build_descriptor(cfg, train_data.sample_shape)
    model = init_model(descriptor, seed=cfg["seed"])
    optim = make_sgd(lr=cfg["lr"], momentum=cfg["momentum"],
                     weight_decay=cfg["weight_decay"], epochs=cfg["epochs"])

    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / "metrics.jsonl"
    started = time.perf_counter()

    with open(metrics_path, "w") as metrics:
        def sink(record: RunRecord):
            metrics.write(record_jsonl(record) + "\n")
            metrics.flush()

        def on_epoch(epoch, live_model, record):
            every = cfg["checkpoint_every"]
            if every > 0 and (epoch + 1) % every == 0:
                save_checkpoint(out_dir / f"epoch_{epoch:04d}.ckpt", live_model)

        try:
            result = run_training(model, train_data, test_data, train_cfg, optim,
                                  sink=sink, on_epoch=on_epoch)
        except NumericError:
            metrics.flush()  # keep the partial log
            raise

    extras = {f"optim/{name}": v for name, v in optim.velocity.items()}
    extras.update(prior_arrays(result.priors))
    save_checkpoint(out_dir / "last.ckpt", model, extras=extras)
    if result.best_params is not None:
        save_checkpoint(out_dir / "best.ckpt",
                        model_from_arrays(descriptor, result.best_params))

    summary = {
        "jsonl_schema_version": JSONL_SCHEMA_VERSION,
        "config": {key: cfg[key] for key in CONFIG_SPEC},
        "epochs_run": len(result.history),
        "catastrophic_overfitting_epoch": result.co_epoch,
        "best_epoch": result.choice.best if result.choice else None,
        "last_epoch": result.choice.last if result.choice else None,
        "final": (
            {"clean_acc": result.history[-1].clean_acc,
             "robust_acc_pgd10": result.history[-1].robust_acc_pgd10}
            if result.history else None),
        "wall_ms_per_epoch": [rec.wall_ms for rec in result.history],
        "wall_ms_total": int((time.perf_counter() - started) * 1000),
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    verdict = (f"catastrophic overfitting at epoch {result.co_epoch}"
               if result.co_epoch is not None else "no catastrophic overfitting")
    stdout.write(f"trained {len(result.history)} epochs; {verdict}\n")
    return EXIT_OK


def _eval_attack_config(name: str, epsilon: float, clamp: bool) -> AttackConfig:
    if name == "fgsm":
        alpha = epsilon if epsilon > 0 else 1.0
        return AttackConfig(epsilon=epsilon, alpha=alpha, steps=1, init="zero",
                            clamp_input=clamp)
    if name.startswith("pgd") and name[3:].isdigit():
        return pgd10_config(epsilon, steps=int(name[3:]), clamp_input=clamp)
    raise ConfigError(f"unknown attack {name!r} (use fgsm or pgd<steps>)")


def run_eval(checkpoint_path: str, cfg: dict, attacks: list[str], stdout=None) -> int:
    stdout = stdout or sys.stdout
    model, _ = load_model(checkpoint_path)
    _, test_data = build_datasets(cfg)
    epsilon = cfg["eval_epsilon"] if cfg["eval_epsilon"] is not None else cfg["epsilon"]
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([0xE7A1, cfg["seed"]])))
    stdout.write("attack\tclean_acc\trobust_acc\n")
    for name in attacks:
        attack = _eval_attack_config(name, epsilon, cfg["clamp_input"])
        clean, robust = evaluate(model, test_data, attack, rng)
        stdout.write(f"{name}\t{clean:.6f}\t{robust:.6f}\n")
    return EXIT_OK


def export_curves(jsonl_path: str, out_path: str | None = None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    columns = ("epoch", "asr_train", "robust_acc_pgd10", "clean_acc", "mean_delta_l2")
    lines = Path(jsonl_path).read_text().splitlines()
    rows = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            rows.append([record[c] for c in columns])
        except (json.JSONDecodeError, KeyError, TypeError) as err:
            raise FormatError(f"{jsonl_path}:{lineno}: malformed metrics line ({err})") from err
    csv_text = ",".join(columns) + "\n"
    for row in rows:
        csv_text += ",".join(json.dumps(v) for v in row) + "\n"
    if out_path:
        Path(out_path).write_text(csv_text)
    else:
        stdout.write(csv_text)
    return EXIT_OK


# -- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fatlab",
                                     description="fast adversarial training laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run one training experiment")
    train.add_argument("--config", help="path to a key = value config file")
    train.add_argument("--seed", type=int, help="override the config seed")
    train.add_argument("--out", help="override the output directory")
    train.add_argument("--print-config", action="store_true",
                       help="echo the effective config and exit")

    ev = sub.add_parser("eval", help="evaluate a checkpoint under attacks")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--config", help="config for dataset/attack settings")
    ev.add_argument("--seed", type=int, help="override the config seed")
    ev.add_argument("--attacks", default="pgd10,pgd20,pgd50,fgsm",
                    help="comma-separated list, e.g. pgd10,fgsm")

    ex = sub.add_parser("export-curves", help="convert a metrics JSONL to CSV")
    ex.add_argument("jsonl", help="path to metrics.jsonl")
    ex.add_argument("--out", help="CSV output path (default: stdout)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            cfg = load_config(args.config, {"seed": args.seed, "out": args.out})
            return run_train(cfg, print_config=args.print_config)
        if args.command == "eval":
            cfg = load_config(args.config, {"seed": args.seed})
            return run_eval(args.checkpoint, cfg, _split_paths(args.attacks))
        if args.command == "export-curves":
            return export_curves(args.jsonl, args.out)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO
    except FatlabError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
