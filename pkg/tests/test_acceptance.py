"""Acceptance gate: every criterion at its stated tolerance.

The heavyweight artifact-producing runs (the learning-rate ablation on
the reference fixture) are session-scoped and shared between the
constraint audit, the trend criterion, and the determinism criterion.
A one-line PASS/FAIL summary per criterion is printed at the end of the
session (see conftest).
"""

import json
import os
import time

import numpy as np
import pytest
from scipy.stats import spearmanr

from robtune import attacks, autodiff as ad, data, diagnostics, ensembles, nets, nsga2, training
from robtune.experiments import AblationPlan, ExperimentConfig, run_ablation
from robtune.cli import main as cli_main

DEFAULT_BUDGET = attacks.AttackBudget()  # epsilon 8/255, Q=500, 20 steps


def trend_config() -> ExperimentConfig:
    """Reference fixture: c=10, d=32 Gaussian mixture, ENS-IID N=3 target."""
    return ExperimentConfig(instantiations=(("iid", 3),))


TREND_PLAN = AblationPlan(param="eta", values=(0.005, 0.02, 0.1, 0.2), repeats=3)


@pytest.fixture(scope="session")
def trend_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance") / "trend-run"
    summary = run_ablation(trend_config(), TREND_PLAN, str(out))
    return str(out), summary


# -- 1. autodiff correctness ---------------------------------------------------------


def test_c01_autodiff_correctness(rng):
    start = time.monotonic()
    worst_grad, worst_hvp = 0.0, 0.0
    for _ in range(100):
        d, hdim, c = 5, 4, 3
        W1 = rng.normal(size=(d, hdim))
        b1 = rng.normal(size=(hdim,))
        W2 = rng.normal(size=(hdim, c))
        y = int(rng.integers(0, c))

        def loss_t(t):
            h = ad.relu(ad.add(ad.matmul(t, ad.Tensor(W1)), ad.Tensor(b1)))
            return ad.softmax_cross_entropy(ad.matmul(h, ad.Tensor(W2)), y)

        # the finite-difference oracle is only valid where the loss is twice
        # differentiable: resample points whose ReLU preactivations sit
        # within the probe radius of the kink
        xv = rng.normal(size=(1, d))
        while np.min(np.abs(xv @ W1 + b1)) < 1e-3:
            xv = rng.normal(size=(1, d))
        xt = ad.Tensor(xv, requires_grad=True)
        g = ad.grad(loss_t(xt), [xt])[0].data
        num = np.zeros_like(xv)
        h = 1e-5
        for i in range(d):
            e = np.zeros_like(xv)
            e[0, i] = h
            num[0, i] = (loss_t(ad.Tensor(xv + e)).item()
                         - loss_t(ad.Tensor(xv - e)).item()) / (2 * h)
        # relative error with an absolute floor: at saturated-softmax points
        # the true derivative scale underflows and pure rounding noise would
        # otherwise masquerade as relative error
        worst_grad = max(worst_grad, np.max(np.abs(g - num)) / max(np.max(np.abs(num)), 1e-6))

        v = rng.normal(size=(1, d))
        hv = ad.hvp(loss_t, ad.Tensor(xv, requires_grad=True), v).data

        def grad_at(x0):
            t = ad.Tensor(x0, requires_grad=True)
            return ad.grad(loss_t(t), [t])[0].data

        hnum = (grad_at(xv + h * v) - grad_at(xv - h * v)) / (2 * h)
        worst_hvp = max(worst_hvp, np.max(np.abs(hv - hnum)) / max(np.max(np.abs(hnum)), 1e-6))

    elapsed = time.monotonic() - start
    assert worst_grad < 1e-4, f"gradient error {worst_grad}"
    assert worst_hvp < 1e-3, f"hvp error {worst_hvp}"
    assert elapsed < 60.0, f"took {elapsed:.1f}s"


# -- 2. SGD step exactness ------------------------------------------------------------


def test_c02_sgd_two_step_recursion():
    p = ad.Tensor(np.array([1.0]), requires_grad=True)
    params = nets.ModelParams(["theta"], [p])
    state = training.OptimizerState.for_params(params)
    hp = training.HyperParams(eta=0.1, lam=0.5, mu=0.9, batch=1, epochs=1)

    def loss():
        return ad.mul(ad.tsum(ad.mul(p, p)), 0.5)

    training.sgd_step(params, loss, hp, state, eta_t=0.1)
    # g1 = 1 + 0.5 = 1.5; v1 = 1.5; theta1 = 1 - 0.15 = 0.85
    assert abs(p.data[0] - 0.85) < 1e-12
    training.sgd_step(params, loss, hp, state, eta_t=0.1)
    g2 = 0.85 + 0.5 * 0.85
    v2 = 0.9 * 1.5 + g2
    theta2 = 0.85 - 0.1 * v2
    assert abs(p.data[0] - theta2) < 1e-12


# -- 3. eigenvalue oracle ---------------------------------------------------------------


def test_c03_eigenvalue_oracle(rng):
    checked = 0
    # input-space: 25 random MLPs with input dimension <= 16
    for trial in range(25):
        d = int(rng.integers(4, 17))
        c = int(rng.integers(2, 5))
        spec = nets.ModelSpec("mlp", d, c, hidden=(6, 6))
        net = nets.Net(spec, nets.init_params(spec, seed=int(rng.integers(1 << 30))))
        x = rng.uniform(0, 1, size=d)
        y = int(rng.integers(0, c))
        est = diagnostics.input_smoothness(net, x[None], np.array([y]),
                                           max_iters=5000, seed=trial)
        assert est.failed == [], f"power iteration failed on input model {trial}"
        dense = np.stack([net.input_hvp(x, y, e) for e in np.eye(d)])
        top = np.max(np.abs(np.linalg.eigvalsh((dense + dense.T) / 2)))
        assert est.max == pytest.approx(top, rel=1e-3), f"input model {trial}"
        checked += 1

    # parameter-space: 25 random models with at most 16 parameters
    for trial in range(25):
        d = int(rng.integers(3, 6))
        c = 2
        spec = nets.ModelSpec("mlp", d, c, hidden=(1, 1))
        net = nets.Net(spec, nets.init_params(spec, seed=int(rng.integers(1 << 30))))
        dim = sum(int(np.prod(s)) for s in net.param_shapes())
        assert dim <= 16
        X = rng.uniform(0, 1, size=(8, d))
        y = rng.integers(0, c, size=8)

        def unflatten(v):
            return diagnostics._unflatten(v, net.param_shapes())

        dense = np.stack([diagnostics._flatten(net.param_hvp(X, y, unflatten(e)))
                          for e in np.eye(dim)])
        top = np.max(np.abs(np.linalg.eigvalsh((dense + dense.T) / 2)))
        got = diagnostics.param_sharpness(net, X, y, max_iters=5000, seed=trial)
        assert got == pytest.approx(top, rel=1e-3), f"param model {trial}"
        checked += 1
    assert checked == 50


# -- 4. NSGA-II machinery -------------------------------------------------------------


def test_c04_nsga_machinery(rng):
    for case in range(1000):
        n = int(rng.integers(1, 201))
        grid = rng.choice([10, 4, 100])  # coarse grids force ties and duplicates
        pts = [tuple(np.round(rng.uniform(0, 1, 2) * grid) / grid) for _ in range(n)]
        brute = [p for i, p in enumerate(pts)
                 if not any(nsga2.dominates(q, p) for j, q in enumerate(pts) if j != i)]
        assert nsga2.pareto_front(pts) == brute, f"case {case}"

        fronts = nsga2.nondominated_sort(pts)
        remaining = list(range(n))
        for front in fronts:
            sub = [pts[i] for i in remaining]
            keep = set(nsga2.pareto_indices(sub))
            assert sorted(front) == sorted(remaining[i] for i in keep), f"case {case}"
            remaining = [remaining[i] for i in range(len(remaining)) if i not in keep]
        assert not remaining

    d = nsga2.crowding_distance([(0.0, 0.0), (0.5, 0.5), (1.0, 1.0)])
    assert d[1] == pytest.approx(2.0) and np.isinf(d[0]) and np.isinf(d[2])
    d = nsga2.crowding_distance([(0.1, 0.9), (0.9, 0.1)])
    assert np.all(np.isinf(d))

    a, b = 0.85, 0.95

    def toy(genes):
        mu = genes[2]
        return (1.0 - 40 * (mu - a) ** 2, 1.0 - 40 * (mu - b) ** 2)

    history, front = nsga2.evolve(nsga2.SearchConfig(population=20, generations=5, seed=3), toy)
    mus = sorted(ind.genes[2] for ind in front)
    assert mus[0] <= a + 0.05 and mus[-1] >= b - 0.05
    assert all(a - 0.05 <= m <= b + 0.05 for m in mus)


# -- 5. attack constraint audit ----------------------------------------------------------


def test_c05_attack_constraint_audit(trend_run):
    out_dir, _ = trend_run
    cfg = trend_config()
    audited = 0
    for name in sorted(os.listdir(os.path.join(out_dir, "cells"))):
        lines = [json.loads(l) for l in
                 open(os.path.join(out_dir, "cells", name), encoding="utf-8")]
        assert not lines[0].get("failed"), f"cell {name} failed"
        for rec in lines[1:]:
            eps = cfg.transfer_epsilon if rec["kind"] == "transfer" else cfg.query_epsilon
            assert rec["linf"] <= eps + 1e-12, f"{name}: linf {rec['linf']} > {eps}"
            assert rec["queries"] <= 500, f"{name}: queries {rec['queries']}"
            audited += 1
    # 12 cells x 200 eval samples x 2 families
    assert audited == 12 * 200 * 2


# -- 6. linear-model attack oracle -------------------------------------------------------


class _Linear:
    def __init__(self, W):
        self.W = W

    def logits(self, x):
        x = np.asarray(x, dtype=np.float64)
        return x @ self.W.T if x.ndim > 1 else self.W @ x


def test_c06_linear_model_attack_oracle():
    rng = np.random.default_rng(5)
    eps = DEFAULT_BUDGET.epsilon
    feas_ok = feas_total = infeas_ok = infeas_total = 0
    while feas_total < 100 or infeas_total < 100:
        W = rng.normal(size=(2, 32))
        x = rng.uniform(0.2, 0.8, size=32)
        z = W @ x
        y = int(np.argmax(z))
        margin = z[y] - z[1 - y]
        cap = eps * np.sum(np.abs(W[y] - W[1 - y]))
        if margin < cap and feas_total < 100:
            feas_total += 1
            res = attacks.square_attack(_Linear(W).logits, x, y, DEFAULT_BUDGET,
                                        seed=7, sample_id=feas_total)
            feas_ok += res.success
        elif margin > cap and infeas_total < 100:
            infeas_total += 1
            res = attacks.square_attack(_Linear(W).logits, x, y, DEFAULT_BUDGET,
                                        seed=7, sample_id=1000 + infeas_total)
            infeas_ok += res.success
    assert feas_ok >= 95, f"feasible success {feas_ok}/100"
    assert infeas_ok == 0, f"infeasible success must be impossible, got {infeas_ok}"


# -- 7. trend reproduction ----------------------------------------------------------------


def test_c07_learning_rate_trend(trend_run):
    start = time.monotonic()
    _, summary = trend_run
    pairs_t, pairs_q = [], []
    for row in summary["rows"]:
        pairs_t.append((row["value"], row["ra_t"]))
        pairs_q.append((row["value"], row["ra_q"]))
    assert len(pairs_t) == 12  # 4 values x 3 repeats
    rho_t = spearmanr([p[0] for p in pairs_t], [p[1] for p in pairs_t]).statistic
    rho_q = spearmanr([p[0] for p in pairs_q], [p[1] for p in pairs_q]).statistic
    assert rho_t < 0.0, f"rho(eta, RA_T) = {rho_t}"
    assert rho_q > 0.0, f"rho(eta, RA_Q) = {rho_q}"
    assert time.monotonic() - start < 45 * 60


# -- 8. sharpness vs learning rate ---------------------------------------------------------


def test_c08_sharpness_learning_rate_direction():
    cfg = trend_config()
    from robtune.experiments import prepare_data
    defender, _, _, _ = prepare_data(cfg)
    spec = nets.ModelSpec("mlp", cfg.dims, cfg.classes)
    wins = 0
    for seed in (11, 12, 13):
        values = {}
        for eta in (0.005, 0.2):
            hp = training.HyperParams(eta=eta, epochs=300, patience=60)
            net, _ = training.train(spec, defender, hp, seed=seed)
            values[eta] = diagnostics.param_sharpness(net, defender.X[:400],
                                                      defender.y[:400], max_iters=2000)
        wins += values[0.005] > values[0.2]
    assert wins >= 2, f"low-eta sharper in only {wins}/3 seeds"


# -- 9. bound dominance ----------------------------------------------------------------------


def test_c09_transfer_bound_dominates_empirical_rate():
    full = data.generate(10, 32, 200, 0.18, 7, mean_dim=8)
    rest, test_slice = data.split_validation(full, 0.3)
    d_a, d_b = data.split_validation(rest, 0.5)
    mspec = nets.ModelSpec("mlp", 32, 10)
    hp = training.HyperParams(eta=0.1, epochs=120, patience=40)
    budget = attacks.AttackBudget(epsilon=1 / 255, steps=20)

    non_vacuous = 0
    for pair_seed in range(5):
        sur, _ = ensembles.build(ensembles.EnsembleSpec("full", 3), d_a, hp,
                                 100 + pair_seed, mspec)
        tgt, _ = ensembles.build(ensembles.EnsembleSpec("iid", 3), d_b, hp,
                                 200 + pair_seed, mspec)
        keep = [i for i, (x, y) in enumerate(zip(test_slice.X, test_slice.y))
                if sur.predict(x) == y and tgt.predict(x) == y][:200]
        Xs, ys = test_slice.X[keep], test_slice.y[keep]
        res = attacks.evaluate_transfer_attack(tgt, sur, Xs, ys, budget)
        X_adv = np.stack([r.x_adv for r in res])
        empirical = diagnostics.transfer_rate(sur, tgt, Xs, ys, X_adv)
        eps_l2 = max(float(np.linalg.norm(r.delta)) for r in res)
        inputs = diagnostics.estimate_bound_inputs(sur, tgt, Xs[:60], ys[:60],
                                                   eps_l2, 10, max_iters=400)
        bound = diagnostics.transfer_bound(inputs)
        if not bound.vacuous:
            non_vacuous += 1
            assert bound.value >= empirical, \
                f"pair {pair_seed}: bound {bound.value} < empirical {empirical}"
    assert non_vacuous >= 1, "fixture produced no non-vacuous bound to check"


# -- 10. determinism --------------------------------------------------------------------------


def test_c10_ablation_determinism(trend_run, tmp_path):
    first_dir, _ = trend_run
    repeat_dir = tmp_path / "trend-repeat"
    run_ablation(trend_config(), TREND_PLAN, str(repeat_dir))
    for rel in ("tables/ablation_eta_per_n.csv", "tables/ablation_eta_n_averaged.csv"):
        a = open(os.path.join(first_dir, rel), "rb").read()
        b = open(os.path.join(repeat_dir, rel), "rb").read()
        assert a == b, f"{rel} differs between identical runs"


# -- 11. search accounting ---------------------------------------------------------------------


def test_c11_search_accounting(tmp_path, capsys):
    cfg = {
        "dataset": {"classes": 3, "dims": 8, "per_class": 40, "spread": 0.3,
                    "mean_dim": 4, "seed": 5},
        "model": {"arch": "mlp", "hidden": [12, 12]},
        "training": {"epochs": 5, "patience": 5},
        "ensembles": [{"kind": "centralized", "n": 1}],
        "surrogate": {"kind": "full", "n": 2},
        "attacks": {"transfer_epsilon": 0.1, "transfer_steps": 4,
                    "query_epsilon": 0.05, "query_budget": 30, "eval_samples": 8},
        "seed": 9,
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    out = tmp_path / "search-run"
    rc = cli_main(["--config", str(cfg_path), "--out", str(out), "search",
                   "--population", "20", "--generations", "5"])
    assert rc == 0
    trace_path = out / "search" / "trace_centralized-n1.jsonl"
    trace = [json.loads(l) for l in trace_path.read_text().splitlines()]
    assert len(trace) == 100, f"expected exactly 100 evaluations, got {len(trace)}"
    assert {t["trial"] for t in trace} == set(range(100))

    front_rows = []
    with open(out / "search" / "front_centralized-n1.csv", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        for line in fh:
            vals = dict(zip(header, line.strip().split(",")))
            front_rows.append((float(vals["ca"]), float(vals["min_ra"])))
    assert front_rows, "front must be non-empty"
    for i, p in enumerate(front_rows):
        for j, q in enumerate(front_rows):
            if i != j:
                assert not nsga2.dominates(p, q), "front is not an antichain"
    # maximality: no evaluated point dominates a front member
    objs = [tuple(t["objectives"]) for t in trace]
    for p in front_rows:
        assert not any(nsga2.dominates(q, p) for q in objs)
