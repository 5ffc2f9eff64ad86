"""Experiment orchestration: ablations, the multi-objective search, reports.

A run directory looks like

    runs/<stamp>/
        config.json          effective configuration
        cells/*.jsonl        one file per (instantiation, value, repeat) cell
        tables/*.csv         aggregated means/stds, per-N and N-averaged
        plots/*.svg          metric-vs-value line charts per instantiation
        search/*.jsonl|csv   search traces and Pareto fronts (search runs)

Cell files are the audit trail: the header line stores the cell context
plus per-sample truth/predictions, followed by one line per adversarial
result. Every table and plot is regenerated purely from these artifacts,
so `report` on a finished run reproduces them byte-for-byte.

The threat model keeps attacker and defender data disjoint: the configured
surrogate ensemble trains at default hyperparameters on the attacker
split, targets train on the defender split, and both are evaluated on a
held-out test slice.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import svgplot
from .attacks import AttackBudget, evaluate_query_attack, evaluate_transfer_attack
from .data import Dataset, generate, split_validation
from .diagnostics import clean_accuracy, robust_accuracy_from_records
from .ensembles import KINDS, EnsembleSpec, build
from .nets import ModelSpec
from .nsga2 import Individual, SearchConfig, dominates, evolve, nondominated_sort
from .rng import stream_key
from .training import DEFAULT_HP, SEARCH_RANGES, HyperParams

logger = logging.getLogger(__name__)

PARAM_NAMES = ("eta", "lam", "mu", "batch")


@dataclass(frozen=True)
class ExperimentConfig:
    # dataset
    classes: int = 10
    dims: int = 32
    per_class: int = 400
    spread: float = 0.25
    mean_dim: int | None = 6
    data_seed: int = 101
    # model
    arch: str = "mlp"
    hidden: tuple = (64, 64)
    # splits
    test_fraction: float = 0.2
    attacker_fraction: float = 0.5
    # training schedule (H itself comes from plans / genes)
    epochs: int = 80
    patience: int = 80
    val_fraction: float = 0.2
    # instantiations under test: (kind, n) pairs
    instantiations: tuple = (("centralized", 1), ("full", 3), ("iid", 3), ("non-iid", 3))
    alpha: float = 0.9
    # attacker's surrogate ensemble
    surrogate_kind: str = "full"
    surrogate_n: int = 5
    # attack budgets (per family; the query attack must not saturate)
    transfer_epsilon: float = 24.0 / 255.0
    transfer_steps: int = 20
    transfer_rho: float | None = None
    query_epsilon: float = 8.0 / 255.0
    query_budget: int = 500
    # evaluation
    eval_samples: int = 200
    master_seed: int = 0

    def to_json_dict(self) -> dict:
        return {
            "dataset": {"classes": self.classes, "dims": self.dims,
                        "per_class": self.per_class, "spread": self.spread,
                        "mean_dim": self.mean_dim, "seed": self.data_seed},
            "model": {"arch": self.arch, "hidden": list(self.hidden)},
            "splits": {"test_fraction": self.test_fraction,
                       "attacker_fraction": self.attacker_fraction,
                       "val_fraction": self.val_fraction},
            "training": {"epochs": self.epochs, "patience": self.patience},
            "ensembles": [{"kind": k, "n": n} for k, n in self.instantiations],
            "alpha": self.alpha,
            "surrogate": {"kind": self.surrogate_kind, "n": self.surrogate_n},
            "attacks": {"transfer_epsilon": self.transfer_epsilon,
                        "transfer_steps": self.transfer_steps,
                        "transfer_rho": self.transfer_rho,
                        "query_epsilon": self.query_epsilon,
                        "query_budget": self.query_budget,
                        "eval_samples": self.eval_samples},
            "seed": self.master_seed,
        }

    @staticmethod
    def from_json_dict(d: dict) -> "ExperimentConfig":
        cfg = ExperimentConfig()
        ds = d.get("dataset", {})
        model = d.get("model", {})
        splits = d.get("splits", {})
        tr = d.get("training", {})
        sur = d.get("surrogate", {})
        atk = d.get("attacks", {})
        ens = d.get("ensembles")
        return replace(
            cfg,
            classes=int(ds.get("classes", cfg.classes)),
            dims=int(ds.get("dims", cfg.dims)),
            per_class=int(ds.get("per_class", cfg.per_class)),
            spread=float(ds.get("spread", cfg.spread)),
            mean_dim=None if ds.get("mean_dim", cfg.mean_dim) is None else int(ds.get("mean_dim", cfg.mean_dim)),
            data_seed=int(ds.get("seed", cfg.data_seed)),
            arch=model.get("arch", cfg.arch),
            hidden=tuple(model.get("hidden", cfg.hidden)),
            test_fraction=float(splits.get("test_fraction", cfg.test_fraction)),
            attacker_fraction=float(splits.get("attacker_fraction", cfg.attacker_fraction)),
            val_fraction=float(splits.get("val_fraction", cfg.val_fraction)),
            epochs=int(tr.get("epochs", cfg.epochs)),
            patience=int(tr.get("patience", cfg.patience)),
            instantiations=tuple((e["kind"], int(e["n"])) for e in ens) if ens else cfg.instantiations,
            alpha=float(d.get("alpha", cfg.alpha)),
            surrogate_kind=sur.get("kind", cfg.surrogate_kind),
            surrogate_n=int(sur.get("n", cfg.surrogate_n)),
            transfer_epsilon=float(atk.get("transfer_epsilon", cfg.transfer_epsilon)),
            transfer_steps=int(atk.get("transfer_steps", cfg.transfer_steps)),
            transfer_rho=atk.get("transfer_rho", cfg.transfer_rho),
            query_epsilon=float(atk.get("query_epsilon", cfg.query_epsilon)),
            query_budget=int(atk.get("query_budget", cfg.query_budget)),
            eval_samples=int(atk.get("eval_samples", cfg.eval_samples)),
            master_seed=int(d.get("seed", cfg.master_seed)),
        )

    @staticmethod
    def load(path) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return ExperimentConfig.from_json_dict(json.load(fh))


@dataclass(frozen=True)
class AblationPlan:
    """Vary exactly one hyperparameter, all others pinned at the defaults."""

    param: str
    values: tuple
    repeats: int = 3
    defaults: tuple = (DEFAULT_HP["eta"], DEFAULT_HP["lam"], DEFAULT_HP["mu"], DEFAULT_HP["batch"])

    def __post_init__(self):
        if self.param not in PARAM_NAMES:
            raise ValueError(f"unknown ablation parameter {self.param!r}")
        if not self.values:
            raise ValueError("ablation needs at least one value")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        lo, hi = SEARCH_RANGES[self.param]
        for v in self.values:
            if not lo <= v <= hi:
                raise ValueError(f"{self.param}={v} outside the search range [{lo}, {hi}]")

    def hyperparams(self, value, cfg: ExperimentConfig) -> HyperParams:
        base = dict(zip(PARAM_NAMES, self.defaults))
        base[self.param] = value
        return HyperParams(eta=base["eta"], lam=base["lam"], mu=base["mu"],
                           batch=int(base["batch"]), epochs=cfg.epochs,
                           patience=cfg.patience)


# ---------------------------------------------------------------------------
# shared data pipeline
# ---------------------------------------------------------------------------


def prepare_data(cfg: ExperimentConfig):
    """(defender, attacker, eval X, eval y), disjoint and deterministic."""
    full = generate(cfg.classes, cfg.dims, cfg.per_class, cfg.spread, cfg.data_seed,
                    mean_dim=cfg.mean_dim)
    rest, test = split_validation(full, cfg.test_fraction)
    defender, attacker = split_validation(rest, cfg.attacker_fraction)
    n = min(cfg.eval_samples, len(test))
    return defender, attacker, test.X[:n], test.y[:n]


def model_spec(cfg: ExperimentConfig, ds: Dataset) -> ModelSpec:
    return ModelSpec(cfg.arch, ds.dim, ds.num_classes, hidden=tuple(cfg.hidden))


def default_hyperparams(cfg: ExperimentConfig) -> HyperParams:
    return HyperParams(epochs=cfg.epochs, patience=cfg.patience, **DEFAULT_HP)


def build_surrogate(cfg: ExperimentConfig, attacker: Dataset, repeat: int):
    spec = EnsembleSpec(cfg.surrogate_kind, cfg.surrogate_n, alpha=cfg.alpha)
    seed = stream_key("surrogate-seed", cfg.master_seed, repeat) % (2 ** 62)
    mspec = model_spec(cfg, attacker)
    model, _ = build(spec, attacker, default_hyperparams(cfg), seed,
                     model_spec=mspec, val_fraction=cfg.val_fraction)
    return model


def budgets(cfg: ExperimentConfig):
    tb = AttackBudget(epsilon=cfg.transfer_epsilon, queries=cfg.query_budget,
                      steps=cfg.transfer_steps)
    qb = AttackBudget(epsilon=cfg.query_epsilon, queries=cfg.query_budget,
                      steps=cfg.transfer_steps)
    return tb, qb


# ---------------------------------------------------------------------------
# one ablation cell
# ---------------------------------------------------------------------------


def run_cell(cfg: ExperimentConfig, kind: str, n: int, hp: HyperParams,
             param: str, value, repeat: int, surrogate, defender: Dataset,
             Xe: np.ndarray, ye: np.ndarray) -> list:
    """Train one target, attack it both ways, return the cell's JSONL lines."""
    cell_seed = stream_key("cell-seed", cfg.master_seed, KINDS.index(kind), n,
                           int(repeat), int(round(float(value) * 1e9))) % (2 ** 62)
    espec = EnsembleSpec(kind, n, alpha=cfg.alpha)
    target, _ = build(espec, defender, hp, cell_seed,
                      model_spec=model_spec(cfg, defender),
                      val_fraction=cfg.val_fraction)
    tb, qb = budgets(cfg)
    transfer = evaluate_transfer_attack(target, surrogate, Xe, ye, tb, rho=cfg.transfer_rho)
    query = evaluate_query_attack(target, Xe, ye, qb, seed=cell_seed)

    preds = target.predict(Xe)
    header = {
        "kind": "header",
        "cell": cell_id(kind, n, param, value, repeat),
        "instantiation": {"kind": kind, "n": n},
        "param": param,
        "value": value,
        "repeat": repeat,
        "hp": {"eta": hp.eta, "lam": hp.lam, "mu": hp.mu, "batch": hp.batch,
               "epochs": hp.epochs, "patience": hp.patience},
        "transfer_epsilon": cfg.transfer_epsilon,
        "query_epsilon": cfg.query_epsilon,
        "query_budget": cfg.query_budget,
        "samples": [{"id": i, "true": int(t), "pred": int(p)}
                    for i, (t, p) in enumerate(zip(ye, preds))],
    }
    lines = [json.dumps(header, sort_keys=True)]
    for family, results in (("transfer", transfer), ("query", query)):
        for r in results:
            rec = {"kind": family}
            rec.update(r.to_record())
            lines.append(json.dumps(rec, sort_keys=True))
    return lines


def cell_id(kind: str, n: int, param: str, value, repeat: int) -> str:
    return f"{kind}-n{n}__{param}-{value:g}__rep{repeat}"


def _cell_worker(args):
    cfg_dict, kind, n, hp_fields, param, value, repeat, surrogate, defender = args
    cfg = ExperimentConfig.from_json_dict(cfg_dict)
    hp = HyperParams(**hp_fields)
    _, _, Xe, ye = prepare_data(cfg)
    return run_cell(cfg, kind, n, hp, param, value, repeat, surrogate, defender, Xe, ye)


# ---------------------------------------------------------------------------
# ablation driver
# ---------------------------------------------------------------------------


def run_ablation(cfg: ExperimentConfig, plan: AblationPlan, out_dir, jobs: int = 1):
    """Sweep one hyperparameter, all others pinned, across every
    configured instantiation with the planned number of repeats.

    Writes cells, tables and plots under ``out_dir`` and returns the
    aggregated rows. Cell failures are recorded and skipped by the
    aggregation; the run continues.
    """
    os.makedirs(os.path.join(out_dir, "cells"), exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
        payload = cfg.to_json_dict()
        payload["ablation"] = {"param": plan.param, "values": list(plan.values),
                               "repeats": plan.repeats, "defaults": list(plan.defaults)}
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")

    defender, attacker, Xe, ye = prepare_data(cfg)
    surrogates = {rep: build_surrogate(cfg, attacker, rep) for rep in range(plan.repeats)}

    tasks = []
    for kind, n in cfg.instantiations:
        for value in plan.values:
            for rep in range(plan.repeats):
                hp = plan.hyperparams(value, cfg)
                hp_fields = dataclasses.asdict(hp)
                tasks.append((cfg.to_json_dict(), kind, n, hp_fields, plan.param,
                              value, rep, surrogates[rep], defender))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_cell_worker_safe, tasks))
    else:
        outcomes = [_cell_worker_safe(t) for t in tasks]

    for task, (lines, error) in zip(tasks, outcomes):
        _, kind, n, hp_fields, param, value, rep = task[:7]
        cid = cell_id(kind, n, param, value, rep)
        if error is not None:
            logger.warning("cell %s failed: %s", cid, error)
            lines = [json.dumps({"kind": "header", "cell": cid, "failed": True,
                                 "error": error, "param": param, "value": value,
                                 "repeat": rep,
                                 "instantiation": {"kind": kind, "n": n}},
                                sort_keys=True)]
        with open(os.path.join(out_dir, "cells", cid + ".jsonl"), "w",
                  encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")

    return write_report(out_dir)


def _cell_worker_safe(args):
    try:
        return _cell_worker(args), None
    except Exception as err:  # cell failures must not kill the run
        return None, f"{type(err).__name__}: {err}"


# ---------------------------------------------------------------------------
# report generation (pure function of the persisted artifacts)
# ---------------------------------------------------------------------------


def _load_cells(out_dir) -> list:
    cells = []
    cell_dir = os.path.join(out_dir, "cells")
    for name in sorted(os.listdir(cell_dir)):
        if not name.endswith(".jsonl"):
            continue
        with open(os.path.join(cell_dir, name), "r", encoding="utf-8") as fh:
            lines = [json.loads(line) for line in fh if line.strip()]
        header = lines[0]
        records = lines[1:]
        cells.append((header, records))
    return cells


def cell_metrics(header: dict, records: list) -> dict | None:
    """Recompute CA and per-family RA from one cell's persisted artifacts."""
    if header.get("failed"):
        return None
    samples = header["samples"]
    ca = sum(1 for s in samples if s["true"] == s["pred"]) / len(samples)
    out = {"instantiation": header["instantiation"], "param": header["param"],
           "value": header["value"], "repeat": header["repeat"], "hp": header["hp"],
           "ca": ca}
    for family, key in (("transfer", "ra_t"), ("query", "ra_q")):
        recs = [r for r in records if r["kind"] == family]
        out[key] = robust_accuracy_from_records(recs)
    return out


def _fmt_float(v) -> str:
    return "" if v is None else repr(float(v))


def _aggregate(rows: list, group_key) -> list:
    groups: dict = {}
    for row in rows:
        groups.setdefault(group_key(row), []).append(row)
    out = []
    for key in sorted(groups):
        rs = groups[key]
        agg = {"key": key, "repeats": len(rs), "hp": rs[0]["hp"], "param": rs[0]["param"],
               "value": rs[0]["value"]}
        for metric in ("ca", "ra_t", "ra_q"):
            vals = [r[metric] for r in rs if r[metric] is not None]
            agg[metric + "_mean"] = float(np.mean(vals)) if vals else None
            agg[metric + "_std"] = float(np.std(vals)) if vals else None
        out.append(agg)
    return out


def write_report(out_dir) -> dict:
    """Regenerate tables and plots from the cell artifacts alone."""
    cells = _load_cells(out_dir)
    rows = [m for header, records in cells if (m := cell_metrics(header, records))]
    if not rows:
        raise RuntimeError(f"no successful cells found under {out_dir}")
    param = rows[0]["param"]

    tables_dir = os.path.join(out_dir, "tables")
    plots_dir = os.path.join(out_dir, "plots")
    os.makedirs(tables_dir, exist_ok=True)
    os.makedirs(plots_dir, exist_ok=True)

    per_n = _aggregate(rows, lambda r: (r["instantiation"]["kind"], r["instantiation"]["n"],
                                        float(r["value"])))
    header_cols = ["instantiation", "n", "param", "value", "eta", "lam", "mu", "batch",
                   "repeats", "ca_mean", "ca_std", "ra_t_mean", "ra_t_std",
                   "ra_q_mean", "ra_q_std"]
    lines = [",".join(header_cols)]
    for agg in per_n:
        kind, n, value = agg["key"]
        hp = agg["hp"]
        lines.append(",".join([
            kind, str(n), param, repr(float(value)), repr(float(hp["eta"])),
            repr(float(hp["lam"])), repr(float(hp["mu"])), str(hp["batch"]),
            str(agg["repeats"]), _fmt_float(agg["ca_mean"]), _fmt_float(agg["ca_std"]),
            _fmt_float(agg["ra_t_mean"]), _fmt_float(agg["ra_t_std"]),
            _fmt_float(agg["ra_q_mean"]), _fmt_float(agg["ra_q_std"]),
        ]))
    per_n_csv = os.path.join(tables_dir, f"ablation_{param}_per_n.csv")
    with open(per_n_csv, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")

    # N-averaged view: mean across node counts per kind
    averaged = _aggregate(rows, lambda r: (r["instantiation"]["kind"], float(r["value"])))
    lines = [",".join(["instantiation", "param", "value", "repeats", "ca_mean", "ca_std",
                       "ra_t_mean", "ra_t_std", "ra_q_mean", "ra_q_std"])]
    for agg in averaged:
        kind, value = agg["key"]
        lines.append(",".join([
            kind, param, repr(float(value)), str(agg["repeats"]),
            _fmt_float(agg["ca_mean"]), _fmt_float(agg["ca_std"]),
            _fmt_float(agg["ra_t_mean"]), _fmt_float(agg["ra_t_std"]),
            _fmt_float(agg["ra_q_mean"]), _fmt_float(agg["ra_q_std"]),
        ]))
    avg_csv = os.path.join(tables_dir, f"ablation_{param}_n_averaged.csv")
    with open(avg_csv, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")

    # one chart per instantiation
    log_x = param in ("eta", "lam", "batch")
    kinds = sorted({(r["instantiation"]["kind"], r["instantiation"]["n"]) for r in rows})
    for kind, n in kinds:
        sub = [a for a in per_n if a["key"][0] == kind and a["key"][1] == n]
        xs = [a["key"][2] for a in sub]
        series = {"CA": [a["ca_mean"] for a in sub],
                  "RA_T": [a["ra_t_mean"] for a in sub],
                  "RA_Q": [a["ra_q_mean"] for a in sub]}
        svg = svgplot.line_chart(xs, series, f"{kind} (N={n}) vs {param}", param, log_x=log_x)
        with open(os.path.join(plots_dir, f"{kind}-n{n}_{param}.svg"), "w",
                  encoding="utf-8") as fh:
            fh.write(svg)

    return {"param": param, "rows": rows, "per_n": per_n, "averaged": averaged,
            "tables": [per_n_csv, avg_csv]}


# ---------------------------------------------------------------------------
# NSGA-II search driver
# ---------------------------------------------------------------------------


class SearchObjective:
    """Evaluator for the search: genes -> ((CA, min RA), extras).

    A plain picklable object so offspring evaluations can run in a
    process pool. Deterministic given the genes: the trial seed is
    derived from them, so identical gene tuples always score alike.
    """

    def __init__(self, cfg: ExperimentConfig, kind: str, n: int, defender: Dataset,
                 surrogate, Xe: np.ndarray, ye: np.ndarray):
        self.cfg = cfg
        self.kind = kind
        self.n = n
        self.defender = defender
        self.surrogate = surrogate
        self.Xe = Xe
        self.ye = ye

    def __call__(self, genes):
        cfg = self.cfg
        eta, lam, mu, batch = genes
        hp = HyperParams(eta=eta, lam=lam, mu=mu, batch=int(batch),
                         epochs=cfg.epochs, patience=cfg.patience)
        seed = stream_key("search-trial", cfg.master_seed,
                          stream_key("genes", int(eta * 1e12), int(lam * 1e12),
                                     int(mu * 1e6), int(batch))) % (2 ** 62)
        espec = EnsembleSpec(self.kind, self.n, alpha=cfg.alpha)
        target, _ = build(espec, self.defender, hp, seed,
                          model_spec=model_spec(cfg, self.defender),
                          val_fraction=cfg.val_fraction)
        tb, qb = budgets(cfg)
        ca = clean_accuracy(target, self.Xe, self.ye)
        tr = evaluate_transfer_attack(target, self.surrogate, self.Xe, self.ye, tb,
                                      rho=cfg.transfer_rho)
        qr = evaluate_query_attack(target, self.Xe, self.ye, qb, seed=seed)
        ra_t = robust_accuracy_from_records([r.to_record() for r in tr])
        ra_q = robust_accuracy_from_records([r.to_record() for r in qr])
        return (ca, min(ra_t, ra_q)), {"ca": ca, "ra_t": ra_t, "ra_q": ra_q}


def make_objective(cfg: ExperimentConfig, kind: str, n: int, defender: Dataset,
                   surrogate, Xe: np.ndarray, ye: np.ndarray) -> SearchObjective:
    return SearchObjective(cfg, kind, n, defender, surrogate, Xe, ye)


def run_search(cfg: ExperimentConfig, search: SearchConfig, out_dir, jobs: int = 1):
    """One evolve() per configured instantiation; emits traces and fronts."""
    os.makedirs(os.path.join(out_dir, "search"), exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
        payload = cfg.to_json_dict()
        payload["search"] = {"population": search.population,
                             "generations": search.generations, "seed": search.seed}
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")

    defender, attacker, Xe, ye = prepare_data(cfg)
    surrogate = build_surrogate(cfg, attacker, 0)

    mapper = map
    pool = None
    if jobs > 1:
        pool = ProcessPoolExecutor(max_workers=jobs)
        mapper = pool.map

    summary = {}
    recommended_rows = []
    try:
        for kind, n in cfg.instantiations:
            evaluator = make_objective(cfg, kind, n, defender, surrogate, Xe, ye)
            history, front = evolve(search, evaluator, mapper=mapper)
            tag = f"{kind}-n{n}"
            _write_search_trace(out_dir, tag, history)
            front_rows = _write_front_csv(out_dir, tag, front)
            summary[tag] = {"evaluations": len(history), "front": front_rows}
            if front_rows:
                recommended_rows.append(_recommend(kind, n, front_rows))
    finally:
        if pool is not None:
            pool.shutdown()

    _write_recommended_csv(out_dir, recommended_rows)
    return summary


def _write_search_trace(out_dir, tag: str, history: list):
    fronts = nondominated_sort([ind.objectives for ind in history])
    rank_of = {}
    for r, front in enumerate(fronts):
        for i in front:
            rank_of[i] = r
    path = os.path.join(out_dir, "search", f"trace_{tag}.jsonl")
    with open(path, "w", encoding="utf-8") as fh:
        for i, ind in enumerate(history):
            eta, lam, mu, batch = ind.genes
            rec = {"trial": ind.trial, "generation": ind.generation,
                   "genes": {"eta": eta, "lam": lam, "mu": mu, "batch": batch},
                   "objectives": list(ind.objectives), "rank": rank_of[i],
                   "failed": ind.failed}
            rec.update({k: ind.extras[k] for k in sorted(ind.extras)})
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _front_sort_key(ind: Individual):
    return (-ind.objectives[0], -ind.objectives[1], ind.trial)


def _write_front_csv(out_dir, tag: str, front: list) -> list:
    rows = []
    path = os.path.join(out_dir, "search", f"front_{tag}.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("trial,eta,lam,mu,batch,ca,min_ra,ra_t,ra_q\n")
        for ind in sorted(front, key=_front_sort_key):
            eta, lam, mu, batch = ind.genes
            row = {"trial": ind.trial, "eta": eta, "lam": lam, "mu": mu,
                   "batch": int(batch), "ca": ind.objectives[0],
                   "min_ra": ind.objectives[1],
                   "ra_t": ind.extras.get("ra_t"), "ra_q": ind.extras.get("ra_q")}
            rows.append(row)
            fh.write(",".join([str(row["trial"]), repr(row["eta"]), repr(row["lam"]),
                               repr(row["mu"]), str(row["batch"]), repr(row["ca"]),
                               repr(row["min_ra"]), _fmt_float(row["ra_t"]),
                               _fmt_float(row["ra_q"])]) + "\n")
    return rows


def _recommend(kind: str, n: int, front_rows: list) -> dict:
    """Best min-RA row whose CA stays within 0.05 of the front's best CA."""
    best_ca = max(r["ca"] for r in front_rows)
    eligible = [r for r in front_rows if r["ca"] >= best_ca - 0.05]
    pick = max(eligible, key=lambda r: (r["min_ra"], r["ca"], -r["trial"]))
    return {"instantiation": kind, "n": n, **pick}


def _write_recommended_csv(out_dir, rows: list):
    path = os.path.join(out_dir, "search", "recommended.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("instantiation,n,trial,eta,lam,mu,batch,ca,min_ra,ra_t,ra_q\n")
        for r in rows:
            fh.write(",".join([r["instantiation"], str(r["n"]), str(r["trial"]),
                               repr(r["eta"]), repr(r["lam"]), repr(r["mu"]),
                               str(r["batch"]), repr(r["ca"]), repr(r["min_ra"]),
                               _fmt_float(r["ra_t"]), _fmt_float(r["ra_q"])]) + "\n")


def front_is_antichain(front_rows: list) -> bool:
    """No emitted front point may dominate another (maximal antichain check)."""
    objs = [(r["ca"], r["min_ra"]) for r in front_rows]
    return not any(dominates(a, b) for a in objs for b in objs if a is not b)
