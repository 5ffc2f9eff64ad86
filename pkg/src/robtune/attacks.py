"""Black-box evasion attacks and a white-box PGD building block.

All attacks are untargeted, work on flat feature vectors in [0, 1]^d
under an l-infinity budget, and are deterministic given (seed, sample
id). Query-based attacks interact with the target only through a logit
oracle; the transfer attack crafts examples on a surrogate ensemble and
is evaluated on an unseen target.

For flat vectors the square attack's "square" is a contiguous
coordinate window whose length is the usual area fraction p * d; the
fraction starts at 0.8 and follows the attack's published halving
schedule over the query budget.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .rng import stream

BOX_TOL = 1e-12


class OracleError(RuntimeError):
    def __init__(self, message: str, query_index: int):
        super().__init__(f"oracle failed at query {query_index}: {message}")
        self.query_index = query_index


@dataclass(frozen=True)
class AttackBudget:
    epsilon: float = 8.0 / 255.0
    queries: int = 500
    steps: int = 20

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.queries < 1 or self.steps < 1:
            raise ValueError("queries and steps must be >= 1")


@dataclass
class AdvResult:
    """Per-sample outcome; constraints are asserted at construction."""

    sample_id: int
    x: np.ndarray
    x_adv: np.ndarray
    epsilon: float
    queries_used: int
    success: bool           # attacked prediction differs from the true label
    clean_label: int        # evaluated model's prediction on x
    adv_label: int          # evaluated model's prediction on x_adv
    margin_trace: list = field(default_factory=list)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.x_adv = np.asarray(self.x_adv, dtype=np.float64)
        if self.linf > self.epsilon + BOX_TOL:
            raise ValueError(f"perturbation {self.linf} exceeds budget {self.epsilon}")
        if self.x_adv.min() < -BOX_TOL or self.x_adv.max() > 1.0 + BOX_TOL:
            raise ValueError("adversarial candidate escapes the [0, 1] box")

    @property
    def delta(self) -> np.ndarray:
        return self.x_adv - self.x

    @property
    def linf(self) -> float:
        return float(np.max(np.abs(self.x_adv - self.x)))

    def to_record(self) -> dict:
        return {"sample_id": int(self.sample_id), "success": bool(self.success),
                "queries": int(self.queries_used), "linf": self.linf,
                "clean_label": int(self.clean_label), "adv_label": int(self.adv_label)}


def save_results(path, results):
    """One JSON object per line: sample_id, success, queries, linf, labels."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in results:
            fh.write(json.dumps(r.to_record(), sort_keys=True) + "\n")


def load_result_records(path) -> list:
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def margin(logits: np.ndarray, y: int) -> float:
    """f_y - max_{k != y} f_k; negative means misclassified."""
    z = np.asarray(logits, dtype=np.float64)
    rival = np.max(np.delete(z, y))
    return float(z[y] - rival)


def _project(x_new: np.ndarray, x: np.ndarray, eps: float) -> np.ndarray:
    return np.clip(np.clip(x_new, x - eps, x + eps), 0.0, 1.0)


def _predicted(logits: np.ndarray) -> int:
    return int(np.argmax(logits))


# ---------------------------------------------------------------------------
# white-box PGD
# ---------------------------------------------------------------------------


def pgd(model, x: np.ndarray, y: int, budget: AttackBudget, sample_id: int = 0) -> AdvResult:
    """Projected gradient ascent with sign steps, alpha = 2 eps / steps,
    started at x. Records the model loss after every step."""
    x = np.asarray(x, dtype=np.float64)
    clean_label = int(model.predict(x))
    trace = []
    if budget.epsilon == 0.0:
        x_adv = x.copy()
    else:
        alpha = 2.0 * budget.epsilon / budget.steps
        x_adv = x.copy()
        for _ in range(budget.steps):
            g = model.input_grad(x_adv, y)
            x_adv = _project(x_adv + alpha * np.sign(g), x, budget.epsilon)
            trace.append(model.loss(x_adv[None, :], np.asarray([y])))
    adv_label = int(model.predict(x_adv))
    return AdvResult(sample_id, x, x_adv, budget.epsilon, 0, adv_label != y,
                     clean_label, adv_label, trace)


# ---------------------------------------------------------------------------
# query-based square attack
# ---------------------------------------------------------------------------

_P_INIT = 0.8
# published default schedule, normalized to fractions of the query budget
_P_MILESTONES = (0.001, 0.005, 0.02, 0.05, 0.1, 0.2, 0.4, 0.6, 0.8)


def _window_fraction(used: int, total: int) -> float:
    frac = used / total
    p = _P_INIT
    for m in _P_MILESTONES:
        if frac >= m:
            p /= 2.0
    return p


def square_attack(oracle, x: np.ndarray, y: int, budget: AttackBudget,
                  seed: int = 0, sample_id: int = 0) -> AdvResult:
    """Random-search score attack through a logits-only oracle.

    Starts from a random +/-eps stripe initialization, then proposes
    contiguous windows reset to a fresh +/-eps offset from the clean
    input, accepting only strict decreases of the margin f_y - max f_k.
    Stops early on misclassification and never exceeds the query budget.
    """
    x = np.asarray(x, dtype=np.float64)
    d = x.size
    rs = stream("square-attack", seed, sample_id)
    queries = 0

    def ask(point):
        nonlocal queries
        queries += 1
        try:
            return np.asarray(oracle(point), dtype=np.float64)
        except Exception as err:  # pragma: no cover - exercised via stub oracle
            raise OracleError(str(err), queries) from err

    z = ask(x)
    clean_label = _predicted(z)
    m_clean = margin(z, y)
    trace = [m_clean]
    if clean_label != y:
        return AdvResult(sample_id, x, x.copy(), budget.epsilon, queries, True,
                         clean_label, clean_label, trace)
    if budget.epsilon == 0.0 or queries >= budget.queries:
        return AdvResult(sample_id, x, x.copy(), budget.epsilon, queries, False,
                         clean_label, clean_label, trace)

    signs = rs.integers(0, 2, size=d) * 2.0 - 1.0
    best = _project(x + budget.epsilon * signs, x, budget.epsilon)
    z = ask(best)
    best_margin = margin(z, y)
    best_label = _predicted(z)
    trace.append(best_margin)

    while queries < budget.queries and best_label == y:
        p = _window_fraction(queries, budget.queries)
        w = max(1, min(d, int(p * d)))
        start = int(rs.integers(0, d - w + 1))
        sign = float(rs.integers(0, 2) * 2 - 1)
        cand = best.copy()
        cand[start:start + w] = x[start:start + w] + sign * budget.epsilon
        cand = _project(cand, x, budget.epsilon)
        z = ask(cand)
        m = margin(z, y)
        label = _predicted(z)
        if m < best_margin or label != y:
            best, best_margin, best_label = cand, m, label
            trace.append(m)

    return AdvResult(sample_id, x, best, budget.epsilon, queries, best_label != y,
                     clean_label, best_label, trace)


# ---------------------------------------------------------------------------
# transfer attack on a surrogate ensemble (momentum + sharpness-seeking step)
# ---------------------------------------------------------------------------


def transfer_attack(surrogates, x: np.ndarray, y: int, budget: AttackBudget,
                    rho: float | None = None, sample_id: int = 0) -> AdvResult:
    """Iterative ensemble attack: an inner ascent of radius rho moves to a
    nearby high-loss point, the gradient there feeds an l1-normalized
    momentum accumulator, and the sign of the accumulator drives the
    outer step (alpha = 2 eps / steps). rho defaults to eps / 2; with
    rho = 0 and a single surrogate this is exactly momentum-PGD."""
    x = np.asarray(x, dtype=np.float64)
    if rho is None:
        rho = budget.epsilon / 2.0
    clean_label = int(surrogates.predict(x))
    trace = []
    if budget.epsilon == 0.0:
        x_adv = x.copy()
    else:
        alpha = 2.0 * budget.epsilon / budget.steps
        x_adv = x.copy()
        momentum = np.zeros_like(x)
        for _ in range(budget.steps):
            if rho > 0.0:
                g_here = surrogates.input_grad(x_adv, y)
                probe = np.clip(x_adv + rho * np.sign(g_here), 0.0, 1.0)
            else:
                probe = x_adv
            g = surrogates.input_grad(probe, y)
            l1 = float(np.sum(np.abs(g)))
            momentum = momentum + (g / l1 if l1 > 0.0 else g)
            x_adv = _project(x_adv + alpha * np.sign(momentum), x, budget.epsilon)
            trace.append(margin(np.atleast_2d(surrogates.logits(x_adv))[0], y))
    adv_label = int(surrogates.predict(x_adv))
    return AdvResult(sample_id, x, x_adv, budget.epsilon, 0, adv_label != y,
                     clean_label, adv_label, trace)


# ---------------------------------------------------------------------------
# per-sample evaluation drivers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QueryAttack:
    seed: int = 0


@dataclass(frozen=True)
class TransferAttack:
    surrogates: object
    rho: float | None = None


def evaluate_query_attack(target, X: np.ndarray, y: np.ndarray, budget: AttackBudget,
                          seed: int = 0, sample_ids=None) -> list:
    """Square attack against the target's logit oracle, one independent
    query counter per sample, deterministic per (seed, sample id)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y))
    ids = list(range(len(y))) if sample_ids is None else list(sample_ids)
    results = []
    for xi, yi, sid in zip(X, y, ids):
        results.append(square_attack(target.logits, xi, int(yi), budget,
                                     seed=seed, sample_id=int(sid)))
    return results


def evaluate_transfer_attack(target, surrogates, X: np.ndarray, y: np.ndarray,
                             budget: AttackBudget, rho: float | None = None,
                             sample_ids=None) -> list:
    """Craft on the surrogates, evaluate labels on the target."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y))
    ids = list(range(len(y))) if sample_ids is None else list(sample_ids)
    results = []
    for xi, yi, sid in zip(X, y, ids):
        crafted = transfer_attack(surrogates, xi, int(yi), budget, rho=rho,
                                  sample_id=int(sid))
        clean_label = int(target.predict(xi))
        adv_label = int(target.predict(crafted.x_adv))
        results.append(AdvResult(int(sid), xi, crafted.x_adv, budget.epsilon, 0,
                                 adv_label != int(yi), clean_label, adv_label,
                                 crafted.margin_trace))
    return results


def evaluate_attack(target, X: np.ndarray, y: np.ndarray, attack, budget: AttackBudget,
                    sample_ids=None) -> list:
    """Dispatch on the attack family; empty sample lists yield empty results."""
    if isinstance(attack, QueryAttack):
        return evaluate_query_attack(target, X, y, budget, seed=attack.seed,
                                     sample_ids=sample_ids)
    if isinstance(attack, TransferAttack):
        return evaluate_transfer_attack(target, attack.surrogates, X, y, budget,
                                        rho=attack.rho, sample_ids=sample_ids)
    raise TypeError(f"unknown attack family: {attack!r}")
