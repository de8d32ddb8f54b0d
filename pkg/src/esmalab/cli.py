"""Command-line entry point: ``esmalab <subcommand> [options]``.

Every option can also come from a flat ``key = value`` file given with
``--config``; command-line flags win over the file, the file wins over the
defaults.  Each run writes its resolved options to ``<out>/config.txt`` so
``esmalab <subcommand> --config <out>/config.txt --out <other>`` repeats it
exactly.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .attacks import (ANCHOR_SQ, ATTACK_CSV_HEADER, CE_TARGETED, AttackConfig, AttackResult,
                      attack_rows, momentum_iterative_attack, transfer_success_rate)
from .data import (gen_gaussian_mixture, load_dataset_csv, save_dataset_csv, three_gaussians,
                   two_gaussians)
from .density import DensityIndex
from .embedding import (EmbeddingTable, class_prototypes, matrix_rows, mean_offdiag_cosine,
                        pairwise_matrices, pretrain_embeddings)
from .errors import InvalidConfigError
from .experiments import (ExperimentConfig, attack_pairs, consistency_experiment,
                          density_shift_eval, difficulty_experiment, esma_experiment,
                          q_ablation, random_anchors, table1_protocol)
from .generator import PerturbationGenerator, esma_attack, train_esma
from .nn import MlpClassifier, TrainConfig, early_stop_train, load_model, save_model
from .reporting import ExperimentReport, dump_config_text, parse_config_text, read_csv
from .screening import AnchorBook, screen_dataset

# option name -> (type, default, help); ``None`` defaults mark required inputs
COMMON = {
    "out": (str, None, "output directory"),
    "seed": (int, 0, "random seed"),
}

COMMANDS = {
    "gen-data": {
        "data": (str, "two", "two | three"),
        "n_samples": (int, 200, "number of points"),
        "separation": (float, 1.5, "half distance between the two class means"),
    },
    "train": {
        "dataset": (str, None, "dataset CSV"),
        "arch": (str, "2-500-500-2", "layer widths joined by '-'"),
        "steps": (int, 4000, "maximum SGD steps"),
        "lr": (float, 0.05, "base step size"),
        "lr_schedule": (str, "inverse_sqrt", "constant | inverse_t | inverse_sqrt"),
        "batch_size": (int, 32, "mini-batch size"),
        "tolerance": (int, 30, "early-stopping patience in evaluations"),
        "validation_fraction": (float, 0.2, "held-out fraction for early stopping"),
    },
    "screen": {
        "model": (str, None, "surrogate checkpoint"),
        "dataset": (str, None, "dataset CSV"),
        "q": (int, 10, "screening parameter"),
        "strict": (int, 1, "1 for strict '<' comparisons, 0 for '<='"),
    },
    "pretrain-embed": {
        "model": (str, None, "surrogate checkpoint"),
        "dataset": (str, None, "dataset CSV"),
        "embed_dim": (int, 32, "embedding width"),
        "steps": (int, 15000, "optimiser steps"),
        "lr": (float, 1.5e-5, "learning rate"),
        "lambda1": (float, 5.0, "cosine-term weight"),
        "lambda2": (float, 0.01, "norm-penalty weight"),
    },
    "attack": {
        "model": (str, None, "surrogate checkpoint"),
        "dataset": (str, None, "points to attack (CSV)"),
        "method": (str, "screened_anchor", "ce | random_anchor | screened_anchor | esma"),
        "anchors": (str, "", "anchor book JSON (screened_anchor)"),
        "train_dataset": (str, "", "training CSV (random_anchor draws from it)"),
        "generator": (str, "", "generator checkpoint (esma)"),
        "eps": (float, 0.5, "l-inf budget"),
        "steps": (int, 20, "attack iterations"),
        "momentum": (float, 1.0, "momentum factor"),
    },
    "train-esma": {
        "model": (str, None, "surrogate checkpoint"),
        "dataset": (str, None, "training CSV"),
        "anchors": (str, None, "anchor book JSON"),
        "embedding": (str, None, "pretrained embedding table"),
        "steps": (int, 300, "epochs"),
        "lr": (float, 1e-4, "learning rate"),
        "eps": (float, 0.5, "l-inf budget"),
        "hidden": (int, 32, "generator width"),
        "blocks": (int, 3, "conditional blocks"),
    },
    "eval-transfer": {
        "adversarial": (str, None, "adversarial CSV written by 'attack'"),
        "victims": (str, None, "comma-separated victim checkpoints"),
    },
    "eval-density-shift": {
        "dataset": (str, None, "reference CSV whose class densities are measured"),
        "adversarial": (str, None, "adversarial CSV written by 'attack'"),
        "r": (float, 0.4, "neighbourhood radius"),
    },
}

EXPERIMENTS = {
    "exp-consistency": consistency_experiment,
    "exp-difficulty": difficulty_experiment,
    "exp-table1": table1_protocol,
    "exp-qablation": q_ablation,
    "exp-esma": esma_experiment,
}


def _experiment_options():
    opts = {}
    for f in fields(ExperimentConfig):
        default = f.default
        if f.name == "seeds":
            opts["seeds"] = (str, "", "comma-separated seed list (default: --seed only)")
        else:
            opts[f.name] = (type(default), default, f"experiment setting (default {default})")
    opts["steps"] = (int, None, "alias for --train-steps")
    opts["q_values"] = (str, "1,2,5,10,20,all", "q grid for exp-qablation")
    return opts


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="esmalab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    specs = dict(COMMANDS)
    for name in EXPERIMENTS:
        specs[name] = _experiment_options()
    for name, opts in specs.items():
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="flat key = value option file")
        for key, (typ, default, text) in {**COMMON, **opts}.items():
            p.add_argument("--" + key.replace("_", "-"), dest=key, type=typ, default=None,
                           help=text if default is None else f"{text} [{default}]")
    return parser


def resolve(command: str, args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    opts = {**COMMON, **(COMMANDS.get(command) or _experiment_options())}
    values = {k: d for k, (_, d, _) in opts.items()}
    if args.config:
        for key, raw in parse_config_text(Path(args.config).read_text()).items():
            if key not in opts:
                raise InvalidConfigError(f"unknown option {key!r} in {args.config}")
            values[key] = opts[key][0](raw)
    for key in opts:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    if values["out"] is None:
        values["out"] = str(Path("out") / command)
    missing = [k for k, v in values.items() if v is None and k != "steps"]
    if missing:
        raise InvalidConfigError("missing required option(s): " +
                                 ", ".join("--" + k.replace("_", "-") for k in missing))
    return values


def _save_config(out: Path, values: dict):
    out.mkdir(parents=True, exist_ok=True)
    keep = {k: v for k, v in values.items() if k != "out"}
    (out / "config.txt").write_text(dump_config_text(keep))


def _arch(text):
    return tuple(int(w) for w in str(text).split("-"))


def _adversarial_rows(result: AttackResult, src_ids, sources):
    d = result.x_orig.shape[1]
    header = (["sample_id", "source_class", "target_class"] + [f"x{j}" for j in range(d)]
              + [f"adv{j}" for j in range(d)])
    rows = [[int(src_ids[i]), int(sources[i]), int(result.targets[i])]
            + list(result.x_orig[i]) + list(result.x_adv[i]) for i in range(len(result))]
    return header, rows


def _load_adversarial(path):
    rows = read_csv(path)
    if not rows:
        raise InvalidConfigError(f"{path} holds no adversarial points")
    d = sum(1 for k in rows[0] if k.startswith("adv"))
    ids = np.array([int(r["sample_id"]) for r in rows])
    src = np.array([int(r["source_class"]) for r in rows])
    tg = np.array([int(r["target_class"]) for r in rows])
    x = np.array([[float(r[f"x{j}"]) for j in range(d)] for r in rows])
    adv = np.array([[float(r[f"adv{j}"]) for j in range(d)] for r in rows])
    return ids, src, AttackResult(x, adv, tg, np.zeros((1, len(tg))))


# --------------------------------------------------------------------------
# single-step commands
# --------------------------------------------------------------------------


def cmd_gen_data(v, out):
    if v["data"] == "two":
        spec = two_gaussians(v["n_samples"], v["seed"], v["separation"])
    elif v["data"] == "three":
        spec = three_gaussians(v["n_samples"], v["seed"])
    else:
        raise InvalidConfigError("data must be 'two' or 'three'")
    ds = gen_gaussian_mixture(spec)
    save_dataset_csv(ds, out / "dataset.csv")
    report = ExperimentReport("gen-data", v, [v["seed"]])
    report.add_table("class_counts", ["class", "count"],
                     [[k, len(ds.class_indices(k))] for k in range(ds.n_classes)])
    return report


def cmd_train(v, out):
    ds = load_dataset_csv(v["dataset"])
    arch = _arch(v["arch"])
    cfg = TrainConfig(v["batch_size"], v["steps"], v["lr_schedule"], v["lr"], v["tolerance"],
                      v["seed"], v["validation_fraction"])
    res = early_stop_train(MlpClassifier.init(arch, seed=v["seed"]), ds, cfg)
    save_model(res.model, out / "model.npz")
    report = ExperimentReport("train", v, [v["seed"]])
    report.add_table("train_trace", ["step", "loss"],
                     [[t + 1, l] for t, l in enumerate(res.loss_trace)])
    report.add_table("val_trace", ["step", "val_loss"],
                     [[int(s), l] for s, l in zip(res.eval_steps, res.val_trace)])
    report.summary = {"best_step": res.best_step, "steps_run": res.steps_run,
                      "model": "model.npz"}
    return report


def cmd_screen(v, out):
    model, ds = load_model(v["model"]), load_dataset_csv(v["dataset"])
    scores, book = screen_dataset(model, ds, v["q"], strict=bool(v["strict"]))
    book.save(out / "anchors.json")
    report = ExperimentReport("screen", v, [v["seed"]])
    report.add_table("scores", scores.CSV_HEADER, scores.rows())
    report.summary = {"members": {k: len(m) for k, m in book.members.items()},
                      "fallback": book.fallback, "anchors": "anchors.json"}
    return report


def cmd_pretrain_embed(v, out):
    model, ds = load_model(v["model"]), load_dataset_csv(v["dataset"])
    protos = class_prototypes(model, ds)
    init = EmbeddingTable.random(ds.n_classes, v["embed_dim"], seed=v["seed"])
    res = pretrain_embeddings(init, protos, v["lambda1"], v["lambda2"], steps=v["steps"],
                              lr=v["lr"])
    res.table.save(out / "embedding.npz")
    report = ExperimentReport("pretrain-embed", v, [v["seed"]])
    report.add_table("manifold_trace", ["step", "loss"], list(enumerate(res.loss_trace)))
    report.add_table("collapse_guard", ["step", "min_entry", "floor"],
                     zip(res.guard_steps, res.guard_min_entry, res.guard_floor))
    report.add_table("embedding_euclid", ["i", "j", "value"],
                     matrix_rows(pairwise_matrices(res.table.vectors)[0]))
    report.summary = {"guard_ok": res.guard_ok, "initial_loss": res.loss_trace[0],
                      "final_loss": res.loss_trace[-1],
                      "cosine_before": mean_offdiag_cosine(init.vectors),
                      "cosine_after": mean_offdiag_cosine(res.table.vectors)}
    return report


def cmd_attack(v, out):
    model, ds = load_model(v["model"]), load_dataset_csv(v["dataset"])
    src_ids, tg = attack_pairs(ds.y, model.output_dim)
    x = ds.X[src_ids]
    method = v["method"]
    if method == "esma":
        if not v["generator"]:
            raise InvalidConfigError("--generator is required for the esma method")
        res = esma_attack(PerturbationGenerator.load(v["generator"]), x, tg, v["eps"])
    else:
        if method == "ce":
            kind, anc = CE_TARGETED, None
        elif method == "screened_anchor":
            if not v["anchors"]:
                raise InvalidConfigError("--anchors is required for screened_anchor")
            kind, anc = ANCHOR_SQ, AnchorBook.load(v["anchors"]).anchors[tg]
        elif method == "random_anchor":
            if not v["train_dataset"]:
                raise InvalidConfigError("--train-dataset is required for random_anchor")
            pool = load_dataset_csv(v["train_dataset"], model.output_dim)
            kind = ANCHOR_SQ
            anc = random_anchors(model, pool, tg, np.random.default_rng([v["seed"], 3]))
        else:
            raise InvalidConfigError(f"unknown attack method {method!r}")
        cfg = AttackConfig(v["eps"], steps=v["steps"], momentum=v["momentum"], loss_kind=kind)
        res = momentum_iterative_attack(model, x, tg, cfg, anc)
    header, rows = _adversarial_rows(res, src_ids, ds.y[src_ids])
    report = ExperimentReport("attack", v, [v["seed"]])
    report.add_table("adversarial", header, rows)
    report.add_table("attack_results", ATTACK_CSV_HEADER,
                     attack_rows(res, ds.y[src_ids], {"surrogate": model}, src_ids))
    report.summary = {"n_points": len(res),
                      "white_box_rate": float(transfer_success_rate([model], res)[0])}
    return report


def cmd_train_esma(v, out):
    model, ds = load_model(v["model"]), load_dataset_csv(v["dataset"])
    book = AnchorBook.load(v["anchors"])
    table = EmbeddingTable.load(v["embedding"])
    G = PerturbationGenerator.init(ds.dim, table, hidden=v["hidden"], n_blocks=v["blocks"],
                                   seed=v["seed"])
    res = train_esma(G, model, ds, book, epochs=v["steps"], lr=v["lr"], epsilon=v["eps"],
                     seed=v["seed"])
    res.generator.save(out / "generator.npz")
    report = ExperimentReport("train-esma", v, [v["seed"]])
    report.add_table("esma_trace", ["epoch", "loss"], list(enumerate(res.loss_trace)))
    report.summary = {"updates": res.n_updates, "generator": "generator.npz"}
    return report


def cmd_eval_transfer(v, out):
    ids, src, res = _load_adversarial(v["adversarial"])
    paths = [p for p in v["victims"].split(",") if p]
    stems = [Path(p).stem for p in paths]
    names = stems if len(set(stems)) == len(stems) else paths
    victims = {name: load_model(p) for name, p in zip(names, paths)}
    report = ExperimentReport("eval-transfer", v, [v["seed"]])
    rates = transfer_success_rate(list(victims.values()), res)
    report.add_table("transfer", ["victim", "rate", "n_points"],
                     [[name, r, len(res)] for name, r in zip(victims, rates)])
    report.add_table("attack_results", ATTACK_CSV_HEADER, attack_rows(res, src, victims, ids))
    report.summary = {"mean_rate": float(rates.mean()) if len(rates) else float("nan")}
    return report


def cmd_eval_density_shift(v, out):
    ds = load_dataset_csv(v["dataset"])
    ids, _, res = _load_adversarial(v["adversarial"])
    report = density_shift_eval(DensityIndex.from_dataset(ds), res, v["r"], sample_ids=ids,
                                config=v)
    report.seeds = [v["seed"]]
    return report


def cmd_experiment(command, v, out):
    cfg_keys = {f.name for f in fields(ExperimentConfig)}
    mapping = {k: val for k, val in v.items() if k in cfg_keys and k != "seeds"}
    if v.get("steps") is not None:
        mapping["train_steps"] = v["steps"]
    mapping["seeds"] = v["seeds"] if v["seeds"] else str(v["seed"])
    cfg = ExperimentConfig.from_mapping(mapping)
    if command == "exp-qablation":
        qs = [q if q == "all" else int(q) for q in v["q_values"].split(",") if q]
        return q_ablation(cfg, q_values=qs)
    return EXPERIMENTS[command](cfg)


HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "screen": cmd_screen,
    "pretrain-embed": cmd_pretrain_embed,
    "attack": cmd_attack,
    "train-esma": cmd_train_esma,
    "eval-transfer": cmd_eval_transfer,
    "eval-density-shift": cmd_eval_density_shift,
}


def run(argv=None) -> Path:
    args = build_parser().parse_args(argv)
    values = resolve(args.command, args)
    out = Path(values["out"])
    _save_config(out, values)
    if args.command in HANDLERS:
        report = HANDLERS[args.command](values, out)
    else:
        report = cmd_experiment(args.command, values, out)
    report.experiment = args.command
    report.config = {k: val for k, val in values.items() if k != "out"}
    return report.write(out)


def main(argv=None) -> int:
    try:
        path = run(argv)
    except (InvalidConfigError, ValueError, FileNotFoundError) as exc:
        print(f"esmalab: error: {exc}", file=sys.stderr)
        return 2
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
