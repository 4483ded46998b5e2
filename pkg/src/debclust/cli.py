"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 verification
failure, 3 I/O error (including a missing checkpoint).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import plots, verify
from .config import ConfigError, ExperimentConfig
from .container import ContainerError
from .data import (Dataset, FormatError, LongTailSpec, blob_means, gen_blobs, load_dataset, long_tail_counts,
                   read_cifar10, save_dataset)
from .encoder import MLPConfig
from .evaluation import knn_probe, linear_probe, write_metrics
from .lambda_analysis import LambdaScene, sweep
from .training import Checkpoint, config_hash, derive_seed, embed, fit, write_history

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY, EXIT_IO = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(message)


# data and model plumbing ---------------------------------------------------------

def build_splits(cfg: ExperimentConfig) -> tuple[Dataset, Dataset, str]:
    """Train/test datasets from a saved directory, CIFAR batches, or long-tailed blobs."""
    d = cfg.data
    if d.path:
        root = Path(d.path)
        return load_dataset(root / "train"), load_dataset(root / "test"), root.name
    if d.source == "cifar":
        if not d.cifar_train or not d.cifar_test:
            raise ConfigError("data.cifar_train", "CIFAR source needs cifar_train and cifar_test files")
        return read_cifar10(d.cifar_train, d.cifar_limit), read_cifar10(d.cifar_test, d.cifar_limit), "cifar10"
    means = blob_means(d.class_count, d.dim, d.separation)
    train_counts = long_tail_counts(LongTailSpec(d.class_count, d.max_per_class, d.imbalance_ratio))
    test_counts = long_tail_counts(LongTailSpec(d.class_count, d.test_max_per_class, d.imbalance_ratio))
    train = gen_blobs(means, d.sigma, train_counts, seed=derive_seed(cfg.seed, 1))
    test = gen_blobs(means, d.sigma, test_counts, seed=derive_seed(cfg.seed, 2))
    return train, test, f"blobs-lt{d.imbalance_ratio:g}"


def encoder_for(cfg: ExperimentConfig, ds: Dataset):
    enc = cfg.encoder_config()
    if isinstance(enc, MLPConfig):
        if ds.is_image or ds.samples.shape[1] != enc.in_dim:
            raise ConfigError("mlp.in_dim", f"does not match data of shape {ds.samples.shape[1:]}")
    elif not ds.is_image or ds.samples.shape[1] != enc.in_channels:
        raise ConfigError("mixer.in_channels", f"does not match data of shape {ds.samples.shape[1:]}")
    return enc


def _out(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfgmod.dumps(cfg))
    return out


def load_checkpoint(cfg: ExperimentConfig, train: Dataset) -> Checkpoint:
    path = Path(cfg.output_dir) / "checkpoint.bin"
    if not path.exists():
        raise CliError(EXIT_IO, f"missing checkpoint {path}; run pretrain first")
    enc = encoder_for(cfg, train)
    ckpt = Checkpoint.load(path, enc, cfg.adam)
    if ckpt.config_hash != config_hash(enc, cfg.train_config()):
        raise CliError(EXIT_CONFIG, f"{path} was trained with a different encoder/training config")
    return ckpt


# subcommands ----------------------------------------------------------------------

def cmd_gen_data(cfg: ExperimentConfig) -> int:
    out = _out(cfg)
    train, test, name = build_splits(cfg)
    (out / "data").mkdir(exist_ok=True)
    save_dataset(train, out / "data" / "train")
    save_dataset(test, out / "data" / "test")
    print(f"{name}: train {len(train)} samples, test {len(test)} samples, counts "
          f"{np.bincount(train.labels, minlength=train.class_count).tolist()} -> {out / 'data'}")
    return EXIT_OK


def cmd_pretrain(cfg: ExperimentConfig) -> int:
    out = _out(cfg)
    train, _, _ = build_splits(cfg)
    enc = encoder_for(cfg, train)

    def save_intermediate(ckpt):
        ckpt.save(out / f"checkpoint_epoch{ckpt.epoch}.bin")

    ckpt, history = fit(train, enc, cfg.train_config(), on_checkpoint=save_intermediate)
    ckpt.save(out / "checkpoint.bin")
    write_history(history, out / "history.csv")
    plots.loss_curves(history, out / "loss_curves.png")
    last = history[-1] if history else None
    summary = "no epochs run" if last is None else (
        f"epoch {last[0]}: contrastive {last[1]:.5f} clustering {last[2]:.5f} total {last[3]:.5f}")
    print(f"pretrain done ({summary}) -> {out / 'checkpoint.bin'}")
    return EXIT_OK


def _evaluate(cfg: ExperimentConfig, protocol: str) -> int:
    out = _out(cfg)
    train, test, name = build_splits(cfg)
    ckpt = load_checkpoint(cfg, train)
    tr, te = embed(ckpt.model, train.samples), embed(ckpt.model, test.samples)
    if protocol == "knn":
        m = knn_probe(tr, train.labels, te, test.labels, train.class_count, cfg.knn.k)
    else:
        fraction = 1.0 if protocol == "linear" else cfg.probe.semi_fraction
        m = linear_probe(tr, train.labels, te, test.labels, train.class_count, cfg.probe_config(fraction))
    write_metrics([(protocol, name, cfg.seed, m)], out / f"metrics_{protocol}.csv")
    print(f"{protocol}: top1 {m.top1:.4f} f1 {m.f1:.4f}")
    return EXIT_OK


def cmd_grad_check(cfg: ExperimentConfig) -> int:
    out = _out(cfg)
    g = cfg.gradcheck
    results = verify.run_all(g.instances, g.step, g.tolerance)
    with open(out / "gradcheck.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["suite", "instances", "max_rel_error", "tolerance", "passed"])
        for r in results:
            w.writerow([r.name, r.instances, repr(r.max_rel_error), repr(r.tolerance), r.passed])
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.name}: {r.instances} instances, max relative error {r.max_rel_error:.3e} "
              f"(tolerance {r.tolerance:g})")
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


def cmd_lambda_sweep(cfg: ExperimentConfig) -> int:
    out = _out(cfg)
    s = cfg.lambda_sweep
    try:
        scene = LambdaScene(s.sim_pos, s.sim_negs, s.tau)
    except ValueError as exc:
        raise ConfigError("lambda_sweep", str(exc)) from None
    rows = sweep(scene, s.lambdas)
    with open(out / "lambda_sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda", "loss", "dloss_dlambda", "d2loss_dlambda2"])
        w.writerows([[repr(v) for v in row] for row in rows])
    plots.lambda_sweep(rows, out / "lambda_sweep.png")
    for lam, loss, d1, d2 in rows:
        print(f"lambda {lam:g}: L {loss:.6f}  L' {d1:.6f}  L'' {d2:.6f}")
    return EXIT_OK


def cmd_ablate(cfg: ExperimentConfig) -> int:
    """KNN probe over the (lambda, gamma) grid, repeated over seeds."""
    out = _out(cfg)
    a = cfg.ablate
    rows = []
    for lam in a.lambdas:
        for gamma in a.gammas:
            for seed in a.seeds:
                run = replace(cfg, seed=seed, contrastive=replace(cfg.contrastive, lam=lam),
                              train=replace(cfg.train, gamma=gamma, epochs=a.epochs))
                train, test, _ = build_splits(run)
                ckpt, _ = fit(train, encoder_for(run, train), run.train_config())
                m = knn_probe(embed(ckpt.model, train.samples), train.labels,
                              embed(ckpt.model, test.samples), test.labels, train.class_count, cfg.knn.k)
                rows.append((lam, gamma, seed, m))
                print(f"lambda {lam:g} gamma {gamma:g} seed {seed}: top1 {m.top1:.4f} f1 {m.f1:.4f}")
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda", "gamma", "seed", "top1", "f1"])
        for lam, gamma, seed, m in rows:
            w.writerow([repr(lam), repr(gamma), seed, repr(m.top1), repr(m.f1)])
    grid_f1 = []
    with open(out / "ablation_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda", "gamma", "mean_top1", "std_top1", "mean_f1", "std_f1"])
        for lam in a.lambdas:
            line = []
            for gamma in a.gammas:
                ms = [m for la, ga, _, m in rows if la == lam and ga == gamma]
                t1 = np.array([m.top1 for m in ms])
                f1 = np.array([m.f1 for m in ms])
                w.writerow([repr(lam), repr(gamma), repr(t1.mean()), repr(t1.std()), repr(f1.mean()), repr(f1.std())])
                line.append(float(f1.mean()))
            grid_f1.append(line)
    plots.ablation_heatmap(a.lambdas, a.gammas, grid_f1, out / "ablation.png")
    print("\nmean F1 (rows lambda, columns gamma " + " ".join(f"{g:g}" for g in a.gammas) + ")")
    for lam, line in zip(a.lambdas, grid_f1):
        print(f"  lambda {lam:g}: " + " ".join(f"{v:.4f}" for v in line))
    return EXIT_OK


COMMANDS = {
    "gen-data": (cmd_gen_data, "write the train/test dataset containers"),
    "pretrain": (cmd_pretrain, "joint training; writes checkpoint.bin, history.csv, loss_curves.png"),
    "linear-eval": (lambda c: _evaluate(c, "linear"), "linear probe on frozen embeddings (all labels)"),
    "semi-eval": (lambda c: _evaluate(c, "semi"), "linear probe on a stratified label subset"),
    "knn-eval": (lambda c: _evaluate(c, "knn"), "k-nearest-neighbour probe on frozen embeddings"),
    "grad-check": (cmd_grad_check, "analytic vs finite-difference gradient suites"),
    "lambda-sweep": (cmd_lambda_sweep, "loss and its lambda-derivatives over a lambda grid"),
    "ablate": (cmd_ablate, "lambda x gamma grid over seeds with the KNN probe"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="debclust",
        description="Joint debiased contrastive representation learning and deep clustering.",
        epilog=f"Exit codes: 0 ok, 1 usage/config, 2 verification failure, 3 I/O. "
               f"${cfgmod.OUTPUT_ENV} overrides output_dir from the config file.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("-c", "--config", metavar="PATH", help="JSON experiment config (defaults if omitted)")
        p.add_argument("-s", "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config value by dotted key, e.g. train.gamma=1 (repeatable)")
        p.add_argument("--seed", type=int, help="shorthand for --set seed=N")
        p.add_argument("-o", "--output-dir", help="shorthand for --set output_dir=PATH")
        p.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.output_dir is not None:
        overrides.append(f"output_dir={json.dumps(args.output_dir)}")
    try:
        cfg = cfgmod.resolve(args.config, overrides)
        if args.print_config:
            sys.stdout.write(cfgmod.dumps(cfg))
            return EXIT_OK
        return COMMANDS[args.command][0](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (OSError, FormatError, ContainerError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
