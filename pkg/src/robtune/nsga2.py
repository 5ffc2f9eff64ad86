"""NSGA-II over the SGD hyperparameter tuple, maximizing (CA, min RA).

Genes are (eta, lam, mu, batch). Learning rate and weight decay evolve
in log10 space (their ranges span several orders of magnitude), momentum
linearly, and batch size on the power-of-two lattice 32..2048 via its
log2 exponent. Crossover is simulated binary (distribution index 15),
mutation is polynomial (index 20, per-gene probability 0.25); both are
the canonical bounded variants, and every child is clamped back into the
search box.

Dominance is the strict Pareto refinement: at least as good everywhere
and strictly better somewhere, so equal points never dominate each
other.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .rng import stream
from .training import SEARCH_RANGES

logger = logging.getLogger(__name__)

GENE_NAMES = ("eta", "lam", "mu", "batch")

# internal evolution space: (log10 eta, log10 lam, mu, log2 batch)
_Z_LO = np.array([math.log10(SEARCH_RANGES["eta"][0]),
                  math.log10(SEARCH_RANGES["lam"][0]),
                  SEARCH_RANGES["mu"][0],
                  math.log2(SEARCH_RANGES["batch"][0])])
_Z_HI = np.array([math.log10(SEARCH_RANGES["eta"][1]),
                  math.log10(SEARCH_RANGES["lam"][1]),
                  SEARCH_RANGES["mu"][1],
                  math.log2(SEARCH_RANGES["batch"][1])])


@dataclass
class Individual:
    genes: tuple                 # (eta, lam, mu, batch)
    objectives: tuple | None = None
    rank: int | None = None
    crowding: float = 0.0
    trial: int = -1
    generation: int = -1
    failed: bool = False
    extras: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SearchConfig:
    population: int = 20
    generations: int = 5
    crossover_prob: float = 0.9
    crossover_index: float = 15.0
    mutation_index: float = 20.0
    mutation_prob: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.population < 2 or self.population % 2:
            raise ValueError("population must be even and >= 2")
        if self.generations < 1:
            raise ValueError("generations must be >= 1")


# ---------------------------------------------------------------------------
# dominance, sorting, crowding
# ---------------------------------------------------------------------------


def dominates(a, b) -> bool:
    """a dominates b under maximization: >= everywhere, > somewhere."""
    a, b = tuple(a), tuple(b)
    return all(x >= y for x, y in zip(a, b)) and any(x > y for x, y in zip(a, b))


def pareto_indices(points) -> list:
    pts = [tuple(p) for p in points]
    return [i for i, p in enumerate(pts)
            if not any(dominates(q, p) for j, q in enumerate(pts) if j != i)]


def pareto_front(points) -> list:
    """Points not dominated by any other; duplicates are all retained."""
    pts = list(points)
    return [pts[i] for i in pareto_indices(pts)]


def nondominated_sort(points) -> list:
    """Fast non-dominated sorting; returns fronts as lists of indices."""
    pts = [tuple(p) for p in points]
    n = len(pts)
    dominated_by = [[] for _ in range(n)]
    counts = [0] * n
    fronts = [[]]
    for i in range(n):
        for j in range(i + 1, n):
            if dominates(pts[i], pts[j]):
                dominated_by[i].append(j)
                counts[j] += 1
            elif dominates(pts[j], pts[i]):
                dominated_by[j].append(i)
                counts[i] += 1
    for i in range(n):
        if counts[i] == 0:
            fronts[0].append(i)
    k = 0
    while fronts[k]:
        nxt = []
        for i in fronts[k]:
            for j in dominated_by[i]:
                counts[j] -= 1
                if counts[j] == 0:
                    nxt.append(j)
        fronts.append(nxt)
        k += 1
    fronts.pop()
    return fronts


def crowding_distance(points) -> np.ndarray:
    """Boundary points get +inf; interior points sum normalized neighbor
    gaps per objective. Affine rescaling of an objective changes nothing."""
    pts = [tuple(p) for p in points]
    n = len(pts)
    if n == 0:
        raise ValueError("crowding_distance needs a non-empty front")
    dist = np.zeros(n)
    if n <= 2:
        dist[:] = np.inf
        return dist
    m = len(pts[0])
    for k in range(m):
        vals = np.array([p[k] for p in pts])
        order = np.argsort(vals, kind="stable")
        span = vals[order[-1]] - vals[order[0]]
        dist[order[0]] = dist[order[-1]] = np.inf
        if span <= 0:
            continue
        for pos in range(1, n - 1):
            i = order[pos]
            dist[i] += (vals[order[pos + 1]] - vals[order[pos - 1]]) / span
    return dist


# ---------------------------------------------------------------------------
# gene encoding and variation operators
# ---------------------------------------------------------------------------


def encode(genes) -> np.ndarray:
    eta, lam, mu, batch = genes
    return np.array([math.log10(eta), math.log10(lam), float(mu), math.log2(batch)])


def decode(z: np.ndarray) -> tuple:
    z = np.clip(z, _Z_LO, _Z_HI)
    eta = min(max(10.0 ** z[0], SEARCH_RANGES["eta"][0]), SEARCH_RANGES["eta"][1])
    lam = min(max(10.0 ** z[1], SEARCH_RANGES["lam"][0]), SEARCH_RANGES["lam"][1])
    mu = float(z[2])
    batch = int(2 ** int(round(z[3])))
    return (float(eta), float(lam), mu, batch)


def sample_genes(rs: np.random.Generator) -> tuple:
    """Log-uniform eta/lam, uniform mu, uniform power-of-two batch."""
    z = np.array([
        rs.uniform(_Z_LO[0], _Z_HI[0]),
        rs.uniform(_Z_LO[1], _Z_HI[1]),
        rs.uniform(_Z_LO[2], _Z_HI[2]),
        float(rs.integers(int(_Z_LO[3]), int(_Z_HI[3]) + 1)),
    ])
    return decode(z)


def _sbx(z1: np.ndarray, z2: np.ndarray, rs: np.random.Generator,
         eta_c: float, p_cross: float):
    c1, c2 = z1.copy(), z2.copy()
    if rs.random() > p_cross:
        return c1, c2
    for i in range(len(z1)):
        if rs.random() > 0.5 or abs(z1[i] - z2[i]) < 1e-14:
            continue
        lo, hi = _Z_LO[i], _Z_HI[i]
        x1, x2 = min(z1[i], z2[i]), max(z1[i], z2[i])
        u = rs.random()

        def child(beta_bound):
            alpha = 2.0 - beta_bound ** -(eta_c + 1.0)
            if u <= 1.0 / alpha:
                return (u * alpha) ** (1.0 / (eta_c + 1.0))
            return (1.0 / (2.0 - u * alpha)) ** (1.0 / (eta_c + 1.0))

        beta1 = 1.0 + 2.0 * (x1 - lo) / (x2 - x1)
        beta2 = 1.0 + 2.0 * (hi - x2) / (x2 - x1)
        bq1, bq2 = child(beta1), child(beta2)
        c1[i] = np.clip(0.5 * ((x1 + x2) - bq1 * (x2 - x1)), lo, hi)
        c2[i] = np.clip(0.5 * ((x1 + x2) + bq2 * (x2 - x1)), lo, hi)
        if rs.random() < 0.5:
            c1[i], c2[i] = c2[i], c1[i]
    return c1, c2


def _polynomial_mutation(z: np.ndarray, rs: np.random.Generator,
                         eta_m: float, p_gene: float) -> np.ndarray:
    out = z.copy()
    for i in range(len(z)):
        if rs.random() > p_gene:
            continue
        lo, hi = _Z_LO[i], _Z_HI[i]
        span = hi - lo
        u = rs.random()
        d1 = (out[i] - lo) / span
        d2 = (hi - out[i]) / span
        if u < 0.5:
            dq = (2.0 * u + (1.0 - 2.0 * u) * (1.0 - d1) ** (eta_m + 1.0)) ** (1.0 / (eta_m + 1.0)) - 1.0
        else:
            dq = 1.0 - (2.0 * (1.0 - u) + 2.0 * (u - 0.5) * (1.0 - d2) ** (eta_m + 1.0)) ** (1.0 / (eta_m + 1.0))
        out[i] = np.clip(out[i] + dq * span, lo, hi)
    return out


def _tournament(pop: list, rs: np.random.Generator) -> Individual:
    i, j = rs.integers(0, len(pop)), rs.integers(0, len(pop))
    a, b = pop[i], pop[j]
    if a.rank != b.rank:
        return a if a.rank < b.rank else b
    if a.crowding != b.crowding:
        return a if a.crowding > b.crowding else b
    return a if a.trial <= b.trial else b


def _rank_population(pop: list):
    fronts = nondominated_sort([ind.objectives for ind in pop])
    for r, front in enumerate(fronts):
        dists = crowding_distance([pop[i].objectives for i in front])
        for i, d in zip(front, dists):
            pop[i].rank = r
            pop[i].crowding = float(d)
    return fronts


def select_survivors(merged: list, size: int) -> list:
    """Environmental selection: fill whole fronts in rank order, then split
    the overflowing front by descending crowding (trial id breaks ties).
    A front-0 individual is never dropped in favour of a worse rank."""
    fronts = _rank_population(merged)
    survivors: list = []
    for front in fronts:
        members = [merged[i] for i in front]
        if len(survivors) + len(members) <= size:
            survivors.extend(members)
        else:
            members.sort(key=lambda ind: (-ind.crowding, ind.trial))
            survivors.extend(members[:size - len(survivors)])
            break
    return survivors


# ---------------------------------------------------------------------------
# the main loop
# ---------------------------------------------------------------------------


def evolve(config: SearchConfig, evaluator, mapper=map):
    """Run the search; returns (all evaluated Individuals, history front).

    ``evaluator(genes)`` must deterministically return the objective
    tuple (optionally ``(objectives, extras_dict)``). Exactly
    ``population * generations`` evaluations are performed: the initial
    population counts as the first batch. Failures score (0, 0) and are
    flagged. ``mapper`` may be a parallel map; result order is what
    matters, so scheduling cannot change the outcome.
    """
    rs = stream("nsga2", config.seed)
    trial = 0
    history: list = []

    def evaluate_batch(genes_list, generation):
        nonlocal trial
        outcomes = list(mapper(_call_evaluator, [(evaluator, g) for g in genes_list]))
        batch = []
        for genes, (objectives, extras, failed) in zip(genes_list, outcomes):
            ind = Individual(genes=genes, objectives=objectives, trial=trial,
                             generation=generation, failed=failed, extras=extras)
            trial += 1
            history.append(ind)
            batch.append(ind)
        return batch

    population = evaluate_batch([sample_genes(rs) for _ in range(config.population)], 0)
    _rank_population(population)

    for generation in range(1, config.generations):
        offspring_genes = []
        while len(offspring_genes) < config.population:
            pa, pb = _tournament(population, rs), _tournament(population, rs)
            z1, z2 = _sbx(encode(pa.genes), encode(pb.genes), rs,
                          config.crossover_index, config.crossover_prob)
            for z in (z1, z2):
                if len(offspring_genes) < config.population:
                    zm = _polynomial_mutation(z, rs, config.mutation_index,
                                              config.mutation_prob)
                    offspring_genes.append(decode(zm))
        offspring = evaluate_batch(offspring_genes, generation)
        population = select_survivors(population + offspring, config.population)
        _rank_population(population)

    front_idx = pareto_indices([ind.objectives for ind in history])
    return history, [history[i] for i in front_idx]


def _call_evaluator(args):
    evaluator, genes = args
    try:
        result = evaluator(genes)
    except Exception as err:
        logger.warning("evaluator failed for genes %s: %s", genes, err)
        return (0.0, 0.0), {}, True
    if isinstance(result, tuple) and len(result) == 2 and isinstance(result[1], dict):
        objectives, extras = result
        return tuple(float(v) for v in objectives), extras, False
    return tuple(float(v) for v in result), {}, False
