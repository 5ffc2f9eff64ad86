"""Command-line front end.

Subcommands: gen-data, train, attack, diagnose, ablate, search, report.
Global flags: --config <json>, --seed, --out, --jobs. Usage errors exit
with 2; failed runs exit with 1 and print a structured JSON error line
on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import diagnostics
from .attacks import save_results
from .data import save_dataset
from .ensembles import EnsembleSpec, build, load_ensemble, save_ensemble
from .experiments import (AblationPlan, ExperimentConfig, budgets, build_surrogate,
                          default_hyperparams, model_spec, prepare_data, run_ablation,
                          run_search, write_report)
from .attacks import evaluate_query_attack, evaluate_transfer_attack
from .nsga2 import SearchConfig
from .training import HyperParams


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robtune",
                                     description="train, attack, diagnose and tune "
                                                 "small classifiers against black-box evasion")
    parser.add_argument("--config", help="JSON experiment configuration")
    parser.add_argument("--seed", type=int, help="master seed override")
    parser.add_argument("--out", help="output directory or file")
    parser.add_argument("--jobs", type=int, default=1, help="parallel worker count")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", help="generate the configured dataset and write it to --out")

    p = sub.add_parser("train", help="train one instantiation on the defender split")
    p.add_argument("--kind", default="centralized",
                   choices=("centralized", "full", "iid", "non-iid"))
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--eta", type=float)
    p.add_argument("--lam", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--batch", type=int)

    p = sub.add_parser("attack", help="attack a trained ensemble checkpoint")
    p.add_argument("--model", required=True, help="ensemble checkpoint directory")
    p.add_argument("--family", default="both", choices=("query", "transfer", "both"))
    p.add_argument("--steps", type=int, help="transfer attack iteration count")
    p.add_argument("--rho", type=float, help="transfer attack inner-ascent radius")

    p = sub.add_parser("diagnose", help="curvature/similarity/bound diagnostics")
    p.add_argument("--model", required=True, help="ensemble checkpoint directory")
    p.add_argument("--surrogate", help="second checkpoint for similarity and the bound")
    p.add_argument("--samples", type=int, default=40)

    p = sub.add_parser("ablate", help="single-parameter ablation across instantiations")
    p.add_argument("--param", required=True, choices=("eta", "lam", "mu", "batch"))
    p.add_argument("--values", required=True,
                   help="comma-separated list of parameter values")
    p.add_argument("--repeats", type=int, default=3)

    p = sub.add_parser("search", help="multi-objective hyperparameter search")
    p.add_argument("--population", type=int, default=20)
    p.add_argument("--generations", type=int, default=5)

    p = sub.add_parser("report", help="regenerate tables and plots from run artifacts")
    p.add_argument("--run", required=True, help="existing run directory")

    return parser


def _load_config(args) -> ExperimentConfig:
    if args.config:
        if not os.path.exists(args.config):
            print(f"robtune: config file not found: {args.config}", file=sys.stderr)
            raise SystemExit(2)
        cfg = ExperimentConfig.load(args.config)
    else:
        cfg = ExperimentConfig()
    if args.seed is not None:
        cfg = ExperimentConfig.from_json_dict({**cfg.to_json_dict(), "seed": args.seed})
    return cfg


def _out_dir(args) -> str:
    if args.out:
        path = args.out
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S", time.gmtime())
        path = os.path.join("runs", stamp)
    os.makedirs(path, exist_ok=True)
    return path


def _cmd_gen_data(args, cfg: ExperimentConfig) -> int:
    from .data import generate
    out = args.out or "dataset.dset"
    ds = generate(cfg.classes, cfg.dims, cfg.per_class, cfg.spread, cfg.data_seed,
                  mean_dim=cfg.mean_dim)
    save_dataset(out, ds)
    print(out)
    return 0


def _hp_from_args(args, cfg: ExperimentConfig) -> HyperParams:
    hp = default_hyperparams(cfg)
    overrides = {k: getattr(args, k) for k in ("eta", "lam", "mu", "batch")
                 if getattr(args, k, None) is not None}
    if overrides:
        hp = HyperParams(eta=overrides.get("eta", hp.eta),
                         lam=overrides.get("lam", hp.lam),
                         mu=overrides.get("mu", hp.mu),
                         batch=overrides.get("batch", hp.batch),
                         epochs=hp.epochs, patience=hp.patience)
    return hp


def _cmd_train(args, cfg: ExperimentConfig) -> int:
    out = _out_dir(args)
    defender, _, Xe, ye = prepare_data(cfg)
    espec = EnsembleSpec(args.kind, args.n, alpha=cfg.alpha)
    hp = _hp_from_args(args, cfg)
    model, logs = build(espec, defender, hp, cfg.master_seed,
                        model_spec=model_spec(cfg, defender),
                        val_fraction=cfg.val_fraction)
    save_ensemble(out, model)
    for i, log in enumerate(logs):
        with open(os.path.join(out, f"trainlog_{i:03d}.csv"), "w", encoding="utf-8") as fh:
            fh.write(log.to_csv())
    ca = diagnostics.clean_accuracy(model, Xe, ye)
    print(json.dumps({"checkpoint": out, "clean_accuracy": ca,
                      "members": len(model.members)}, sort_keys=True))
    return 0


def _cmd_attack(args, cfg: ExperimentConfig) -> int:
    out = _out_dir(args)
    target = load_ensemble(args.model)
    defender, attacker, Xe, ye = prepare_data(cfg)
    tb, qb = budgets(cfg)
    if args.steps is not None:
        tb = type(tb)(epsilon=tb.epsilon, queries=tb.queries, steps=args.steps)
    summary = {}
    if args.family in ("transfer", "both"):
        surrogate = build_surrogate(cfg, attacker, 0)
        results = evaluate_transfer_attack(target, surrogate, Xe, ye, tb,
                                           rho=args.rho if args.rho is not None else cfg.transfer_rho)
        save_results(os.path.join(out, "transfer.jsonl"), results)
        summary["ra_t"] = diagnostics.robust_accuracy_from_records(
            [r.to_record() for r in results])
    if args.family in ("query", "both"):
        results = evaluate_query_attack(target, Xe, ye, qb, seed=cfg.master_seed)
        save_results(os.path.join(out, "query.jsonl"), results)
        summary["ra_q"] = diagnostics.robust_accuracy_from_records(
            [r.to_record() for r in results])
    summary["ca"] = diagnostics.clean_accuracy(target, Xe, ye)
    print(json.dumps(summary, sort_keys=True))
    return 0


def _cmd_diagnose(args, cfg: ExperimentConfig) -> int:
    out = _out_dir(args)
    model = load_ensemble(args.model)
    _, _, Xe, ye = prepare_data(cfg)
    Xs, ys = Xe[:args.samples], ye[:args.samples]
    smooth = diagnostics.input_smoothness(model, Xs, ys)
    payload = {
        "clean_accuracy": diagnostics.clean_accuracy(model, Xe, ye),
        "input_smoothness": {"per_sample": smooth.eigenvalues, "mean": smooth.mean,
                             "max": smooth.max, "residuals": smooth.residuals,
                             "failed": smooth.failed},
    }
    rows = [{"sample_id": i, "eigenvalue": v, "residual": r}
            for i, (v, r) in enumerate(zip(smooth.eigenvalues, smooth.residuals))]
    if args.surrogate:
        surrogate = load_ensemble(args.surrogate)
        sim = diagnostics.gradient_similarity(surrogate, model, Xs, ys)
        eps_l2 = cfg.transfer_epsilon * np.sqrt(cfg.dims)
        inputs = diagnostics.estimate_bound_inputs(surrogate, model, Xs, ys,
                                                   float(eps_l2), cfg.classes)
        bound = diagnostics.transfer_bound(inputs)
        payload["gradient_similarity"] = {"per_sample": sim.values, "mean": sim.mean,
                                          "max": sim.max,
                                          "zero_grad_samples": sim.zero_grad_samples}
        payload["transfer_bound"] = {"vacuous": bound.vacuous, "raw": bound.raw,
                                     "value": bound.value}
        for row, s in zip(rows, sim.values):
            row["similarity"] = s
    json_path = os.path.join(out, "diagnostics.json")
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    csv_path = os.path.join(out, "diagnostics.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        cols = sorted({k for row in rows for k in row})
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(repr(row[c]) if isinstance(row.get(c), float)
                              else str(row.get(c, "")) for c in cols) + "\n")
    print(json_path)
    return 0


def _cmd_ablate(args, cfg: ExperimentConfig) -> int:
    out = _out_dir(args)
    values = tuple(float(v) for v in args.values.split(","))
    if args.param == "batch":
        values = tuple(int(v) for v in values)
    plan = AblationPlan(param=args.param, values=values, repeats=args.repeats)
    run_ablation(cfg, plan, out, jobs=args.jobs)
    print(out)
    return 0


def _cmd_search(args, cfg: ExperimentConfig) -> int:
    out = _out_dir(args)
    search = SearchConfig(population=args.population, generations=args.generations,
                          seed=cfg.master_seed)
    summary = run_search(cfg, search, out, jobs=args.jobs)
    print(json.dumps({tag: {"evaluations": s["evaluations"],
                            "front_size": len(s["front"])}
                      for tag, s in summary.items()}, sort_keys=True))
    return 0


def _cmd_report(args, cfg: ExperimentConfig) -> int:
    write_report(args.run)
    print(args.run)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = _load_config(args)
        handler = {
            "gen-data": _cmd_gen_data,
            "train": _cmd_train,
            "attack": _cmd_attack,
            "diagnose": _cmd_diagnose,
            "ablate": _cmd_ablate,
            "search": _cmd_search,
            "report": _cmd_report,
        }[args.command]
        return handler(args, cfg)
    except SystemExit as exc:
        return int(exc.code or 0)
    except Exception as err:
        print(json.dumps({"error": type(err).__name__, "detail": str(err)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
