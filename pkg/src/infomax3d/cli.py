"""Command-line entry point: pretrain / pretrain-distance / finetune / embed /
selftest, wiring config files, flag overrides, datasets and checkpoints.

Config files are `key = value` lines (# comments allowed); values are parsed
as JSON when possible, else kept as strings. Flags override file values.
Every run echoes its full effective configuration into the output directory.
Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

COMMANDS = ("pretrain", "pretrain-distance", "finetune", "embed", "selftest")

# every key with its documented default (paper-published choices where they exist)
CONFIG_DEFAULTS = {
    "seed": 1,
    "max_epochs": 100,
    "loss": "ntxent_eq1",
    "tau": 0.1,
    "num_conformers": 3,
    "conformer_strategy": "lowest",
    "node_drop_ratio": 0.0,
    "batch_size": 500,
    "pretrain_lr": 8e-5,
    "pretrain_warmup_steps": 700,
    "pretrain_plateau_factor": 0.6,
    "plateau_patience": 25,
    "plateau_cooldown": 20,
    "finetune_lr": 7e-5,
    "finetune_weight_decay": 1e-11,
    "finetune_batch_size": 128,
    "finetune_warmup_spans": [700, 700, 350],
    "finetune_plateau_factor": 0.5,
    "metric_kind": "mae",
    "temperature_K": 298.15,
    "split_ratios": [0.8, 0.1, 0.1],
    "split_seed": 1,
    # 2D network
    "net2d_depth": 7,
    "net2d_hidden_dim": 200,
    "net2d_message_mlp_layers": 2,
    "net2d_update_mlp_layers": 1,
    "net2d_aggregators": ["mean", "max", "min", "std"],
    "net2d_scalers": ["identity", "amplification", "attenuation"],
    "net2d_readout_aggregators": ["mean", "max", "min", "sum"],
    "net2d_readout_mlp_layers": 2,
    "net2d_dropout": 0.0,
    "net2d_batchnorm": True,
    "net2d_batchnorm_momentum": 0.1,
    "d_z": 64,
    # 3D network
    "net3d_depth": 1,
    "net3d_hidden_dim": 20,
    "net3d_edge_hidden_dim": 20,
    "net3d_num_frequencies": 4,
    "net3d_readout_aggregators": ["mean", "max", "std"],
    "net3d_readout_mlp_layers": 1,
    "net3d_dropout": 0.0,
    "net3d_batchnorm": True,
    "net3d_batchnorm_momentum": 0.93,
    "net3d_max_atoms": 128,
}


class ConfigError(ValueError):
    pass


def parse_config_file(path) -> dict:
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected key = value, got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in CONFIG_DEFAULTS:
                raise ConfigError(f"{path}:{line_no}: unknown config key {key!r}")
            try:
                values[key] = json.loads(value)
            except json.JSONDecodeError:
                values[key] = value
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="infomax3d", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    specs = {
        "pretrain": "contrastive 2D/3D pre-training",
        "pretrain-distance": "pre-training by pairwise-distance prediction",
        "finetune": "transfer + fine-tune on one target",
        "embed": "export eval-mode embeddings",
        "selftest": "run the built-in invariant suite",
    }
    for name, help_text in specs.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--data", help="dataset file")
        p.add_argument("--val-data", help="validation dataset file (default: split from --data)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--checkpoint", help="checkpoint to load")
        p.add_argument("--target", help="target name for finetune")
        p.add_argument("--loss", help="loss kind")
        p.add_argument("--tau", type=float, help="contrastive temperature")
        p.add_argument("--num-conformers", type=int, dest="num_conformers")
        p.add_argument("--batch-size", type=int, dest="batch_size")
        p.add_argument("--seed", type=int)
        p.add_argument("--max-epochs", type=int, dest="max_epochs")
        p.add_argument("--rand-init", action="store_true", dest="rand_init",
                       help="finetune from random initialization instead of a checkpoint")
    return parser


def merge_config(args) -> dict:
    cfg = dict(CONFIG_DEFAULTS)
    if args.config:
        if not os.path.exists(args.config):
            raise ConfigError(f"config file not found: {args.config}")
        cfg.update(parse_config_file(args.config))
    flag_keys = ("loss", "tau", "num_conformers", "batch_size", "seed", "max_epochs")
    for key in flag_keys:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def echo_config(cfg: dict, args, out_dir: str):
    lines = [f"command = {args.command}"]
    for key in ("data", "val_data", "out", "checkpoint", "target", "rand_init"):
        val = getattr(args, key, None)
        if val not in (None, False):
            lines.append(f"{key} = {val}")
    for key in sorted(cfg):
        lines.append(f"{key} = {json.dumps(cfg[key])}")
    with open(os.path.join(out_dir, "config_used.cfg"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _train_config(cfg: dict):
    from .training import TrainConfig

    try:
        return _build_train_config(TrainConfig, cfg)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc))


def _build_train_config(TrainConfig, cfg: dict):
    return TrainConfig(
        loss=cfg["loss"],
        tau=float(cfg["tau"]),
        num_conformers=int(cfg["num_conformers"]),
        conformer_strategy=cfg["conformer_strategy"],
        node_drop_ratio=float(cfg["node_drop_ratio"]),
        batch_size=int(cfg["batch_size"]),
        max_epochs=int(cfg["max_epochs"]),
        seed=int(cfg["seed"]),
        pretrain_lr=float(cfg["pretrain_lr"]),
        pretrain_warmup_steps=int(cfg["pretrain_warmup_steps"]),
        pretrain_plateau_factor=float(cfg["pretrain_plateau_factor"]),
        plateau_patience=int(cfg["plateau_patience"]),
        plateau_cooldown=int(cfg["plateau_cooldown"]),
        finetune_lr=float(cfg["finetune_lr"]),
        finetune_weight_decay=float(cfg["finetune_weight_decay"]),
        finetune_batch_size=int(cfg["finetune_batch_size"]),
        finetune_warmup_spans=tuple(cfg["finetune_warmup_spans"]),
        finetune_plateau_factor=float(cfg["finetune_plateau_factor"]),
        metric_kind=cfg["metric_kind"],
        temperature_K=float(cfg["temperature_K"]),
    )


def _net_configs(cfg: dict):
    from .net2d import Net2DConfig
    from .net3d import Net3DConfig

    try:
        return _build_net_configs(Net2DConfig, Net3DConfig, cfg)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc))


def _build_net_configs(Net2DConfig, Net3DConfig, cfg: dict):
    n2 = Net2DConfig(
        depth=int(cfg["net2d_depth"]),
        hidden_dim=int(cfg["net2d_hidden_dim"]),
        message_mlp_layers=int(cfg["net2d_message_mlp_layers"]),
        update_mlp_layers=int(cfg["net2d_update_mlp_layers"]),
        aggregators=tuple(cfg["net2d_aggregators"]),
        scalers=tuple(cfg["net2d_scalers"]),
        readout_aggregators=tuple(cfg["net2d_readout_aggregators"]),
        readout_mlp_layers=int(cfg["net2d_readout_mlp_layers"]),
        dropout=float(cfg["net2d_dropout"]),
        batchnorm=bool(cfg["net2d_batchnorm"]),
        batchnorm_momentum=float(cfg["net2d_batchnorm_momentum"]),
        d_z=int(cfg["d_z"]),
    )
    n3 = Net3DConfig(
        depth=int(cfg["net3d_depth"]),
        hidden_dim=int(cfg["net3d_hidden_dim"]),
        edge_hidden_dim=int(cfg["net3d_edge_hidden_dim"]),
        num_frequencies=int(cfg["net3d_num_frequencies"]),
        readout_aggregators=tuple(cfg["net3d_readout_aggregators"]),
        readout_mlp_layers=int(cfg["net3d_readout_mlp_layers"]),
        dropout=float(cfg["net3d_dropout"]),
        batchnorm=bool(cfg["net3d_batchnorm"]),
        batchnorm_momentum=float(cfg["net3d_batchnorm_momentum"]),
        d_z=int(cfg["d_z"]),
        max_atoms=int(cfg["net3d_max_atoms"]),
    )
    return n2, n3


class OutputLock:
    """One run per output directory, enforced by an exclusive lock file."""

    def __init__(self, out_dir: str):
        self.path = os.path.join(out_dir, "run.lock")

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigError(
                f"output directory is locked by another run (remove {self.path} if stale)"
            )
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        try:
            os.remove(self.path)
        except FileNotFoundError:
            pass
        return False


def _load_split(args, cfg):
    from .molgraph import parse_dataset, split_random

    if not args.data:
        raise ConfigError("--data is required")
    if not os.path.exists(args.data):
        raise ConfigError(f"dataset file not found: {args.data}")
    data = parse_dataset(args.data)
    if args.val_data:
        if not os.path.exists(args.val_data):
            raise ConfigError(f"dataset file not found: {args.val_data}")
        val = parse_dataset(args.val_data)
        return data, val, None
    train, val, test = split_random(data, tuple(cfg["split_ratios"]), int(cfg["split_seed"]))
    return train, val, test


def cmd_pretrain(args, cfg) -> int:
    from .training import pretrain

    train, val, _ = _load_split(args, cfg)
    tcfg = _train_config(cfg)
    n2, n3 = _net_configs(cfg)
    result = pretrain(train, val, n2, n3, tcfg, out_dir=args.out)
    print(f"pretrain done: best epoch {result.best_epoch}, best val loss {result.best_val:.6g}")
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def cmd_pretrain_distance(args, cfg) -> int:
    from .training import pretrain_distance

    train, val, _ = _load_split(args, cfg)
    tcfg = _train_config(cfg)
    n2, _ = _net_configs(cfg)
    result = pretrain_distance(train, val, n2, tcfg, out_dir=args.out)
    print(f"pretrain-distance done: best epoch {result.best_epoch}, best val mse {result.best_val:.6g}")
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def cmd_finetune(args, cfg) -> int:
    from .training import finetune

    if not args.target:
        raise ConfigError("--target is required for finetune")
    if not args.rand_init and not args.checkpoint:
        raise ConfigError("finetune needs --checkpoint (or --rand-init)")
    if args.checkpoint and not os.path.exists(args.checkpoint):
        raise ConfigError(f"checkpoint not found: {args.checkpoint}")
    train, val, test = _load_split(args, cfg)
    if test is None:
        raise ConfigError("finetune needs a train/val/test split; drop --val-data and let --data be split")
    tcfg = _train_config(cfg)
    n2, _ = _net_configs(cfg)
    ckpt = None if args.rand_init else args.checkpoint
    result = finetune(ckpt, train, val, test, args.target, n2, tcfg, out_dir=args.out)
    parts = ", ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in result.summary.items())
    print(f"finetune done: {parts}")
    return 0


def cmd_embed(args, cfg) -> int:
    from .molgraph import parse_dataset
    from .training import embed

    if not args.checkpoint:
        raise ConfigError("embed needs --checkpoint")
    if not os.path.exists(args.checkpoint):
        raise ConfigError(f"checkpoint not found: {args.checkpoint}")
    if not args.data or not os.path.exists(args.data):
        raise ConfigError("embed needs an existing --data file")
    dataset = parse_dataset(args.data)
    out_path = os.path.join(args.out, "embeddings.tsv")
    z = embed(args.checkpoint, dataset, out_path, batch_size=int(cfg["finetune_batch_size"]))
    print(f"wrote {z.shape[0]} embeddings of dim {z.shape[1]} to {out_path}")
    return 0


def cmd_selftest(args, cfg) -> int:
    from .selftest import run_selftest

    failures = run_selftest(seed=int(cfg["seed"]))
    return 0 if failures == 0 else 2


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        cfg = merge_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    needs_out = args.command in ("pretrain", "pretrain-distance", "finetune", "embed")
    if needs_out and not args.out:
        print("config error: --out is required", file=sys.stderr)
        return 1

    handlers = {
        "pretrain": cmd_pretrain,
        "pretrain-distance": cmd_pretrain_distance,
        "finetune": cmd_finetune,
        "embed": cmd_embed,
        "selftest": cmd_selftest,
    }
    try:
        if needs_out:
            os.makedirs(args.out, exist_ok=True)
            with OutputLock(args.out):
                echo_config(cfg, args, args.out)
                return handlers[args.command](args, cfg)
        return handlers[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
