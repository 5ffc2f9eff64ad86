"""Measured quantities: accuracies, curvature, gradient alignment, bounds.

Curvature estimates run power iteration on Hessian-vector products (the
Hessian is only ever touched through products, in input space per sample
or in parameter space on the full training loss). Acceptance requires
both stabilized Rayleigh quotients and a small relative residual;
stagnating runs restart from fresh vectors and are flagged if they still
fail.

The transferability bound combines empirical risks, gradient-norm
bounds, minimum wrong-label losses, per-model curvature maxima and the
gradient-similarity supremum; whenever a denominator is non-positive the
bound is reported as vacuous. The query-robustness bounds translate the
loss gap at a point into lower/upper perturbation norms via the gradient
and the dominant curvature direction (l2 norms throughout).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .rng import stream


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


# ---------------------------------------------------------------------------
# accuracies and transferability counts
# ---------------------------------------------------------------------------


def clean_accuracy(model, X: np.ndarray, y: np.ndarray) -> float:
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("clean_accuracy needs at least one sample")
    return float(Fraction(int(np.sum(model.predict(X) == y)), len(y)))


def robust_accuracy(model, X: np.ndarray, X_adv: np.ndarray, y=None,
                    mode: str = "literal") -> float:
    """Fraction of pairs whose prediction is unchanged.

    'literal' counts C(x) == C(x') over all pairs. 'conditioned'
    restricts to pairs whose clean prediction was correct (requires y).
    """
    pred_clean = np.asarray(model.predict(X))
    pred_adv = np.asarray(model.predict(X_adv))
    if mode == "literal":
        kept = int(np.sum(pred_clean == pred_adv))
        return float(Fraction(kept, len(pred_clean)))
    if mode != "conditioned":
        raise ValueError(f"unknown mode {mode!r}")
    if y is None:
        raise ValueError("conditioned mode needs true labels")
    ok = pred_clean == np.asarray(y)
    if not np.any(ok):
        raise ValueError("no correctly classified pairs to condition on")
    kept = int(np.sum(pred_adv[ok] == pred_clean[ok]))
    return float(Fraction(kept, int(np.sum(ok))))


def robust_accuracy_from_records(records, mode: str = "literal") -> float | None:
    """Same counts, from persisted AdvResult records; None when empty."""
    if not records:
        return None
    if mode == "literal":
        kept = sum(1 for r in records if r["clean_label"] == r["adv_label"])
        return float(Fraction(kept, len(records)))
    raise ValueError(f"unknown mode {mode!r}")


def transfer_indicator(surrogate, target, x: np.ndarray, y: int, x_adv: np.ndarray) -> int:
    """1 iff both models are right on x and both are fooled by x_adv."""
    return int(surrogate.predict(x) == y and target.predict(x) == y
               and surrogate.predict(x_adv) != y and target.predict(x_adv) != y)


def transfer_rate(surrogate, target, X: np.ndarray, y: np.ndarray,
                  X_adv: np.ndarray) -> float:
    hits = sum(transfer_indicator(surrogate, target, xi, int(yi), ai)
               for xi, yi, ai in zip(X, y, X_adv))
    return float(Fraction(hits, len(np.asarray(y))))


# ---------------------------------------------------------------------------
# power iteration on Hessian-vector products
# ---------------------------------------------------------------------------


@dataclass
class PowerIterationResult:
    value: float            # Rayleigh quotient at the final vector
    vector: np.ndarray
    residual: float         # ||Hv - value * v|| / max(|value|, tiny)
    converged: bool
    iterations: int


def power_iteration(matvec, dim: int, tol: float = 1e-6, max_iters: int = 500,
                    seed: int = 0, restarts: int = 3,
                    residual_tol: float | None = None) -> PowerIterationResult:
    """Dominant-|eigenvalue| estimate of a symmetric operator.

    Converged means successive Rayleigh quotients agree to tol (relative)
    and the relative residual is below residual_tol (default
    10 * sqrt(tol)). Stagnating runs restart from a fresh seeded vector.
    """
    if residual_tol is None:
        residual_tol = 10.0 * math.sqrt(tol)
    tiny = 1e-300
    best = None
    for attempt in range(restarts):
        v = stream("power-iteration", seed, attempt).normal(size=dim)
        v /= np.linalg.norm(v)
        rayleigh = None
        for it in range(1, max_iters + 1):
            hv = np.asarray(matvec(v), dtype=np.float64).reshape(dim)
            current = float(v @ hv)
            scale = np.linalg.norm(hv)
            residual = float(np.linalg.norm(hv - current * v) / max(abs(current), tiny))
            if scale < 1e-14:
                # the image of v vanished: treat the operator as zero here
                # (|current| <= scale by Cauchy-Schwarz, so the quotient is 0 too)
                return PowerIterationResult(0.0, v, 0.0, True, it)
            if rayleigh is not None and abs(current - rayleigh) <= tol * max(abs(current), tiny):
                if residual <= residual_tol:
                    return PowerIterationResult(current, v, residual, True, it)
            rayleigh = current
            v = hv / scale
        candidate = PowerIterationResult(rayleigh if rayleigh is not None else 0.0,
                                         v, residual, False, max_iters)
        if best is None or candidate.residual < best.residual:
            best = candidate
    return best


@dataclass
class SmoothnessEstimate:
    eigenvalues: list       # per-sample |lambda|, NaN where not converged
    mean: float             # mean over converged samples
    max: float              # max over converged samples
    residuals: list
    failed: list = field(default_factory=list)  # sample indices flagged


def input_smoothness(model, X: np.ndarray, y: np.ndarray, tol: float = 1e-6,
                     max_iters: int = 500, seed: int = 0) -> SmoothnessEstimate:
    """Per-sample largest |eigenvalue| of the input-space loss Hessian."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y))
    values, residuals, failed = [], [], []
    for i, (xi, yi) in enumerate(zip(X, y)):
        res = power_iteration(lambda v: model.input_hvp(xi, int(yi), v), xi.size,
                              tol=tol, max_iters=max_iters,
                              seed=stream("smoothness-seed", seed, i).integers(2 ** 62))
        residuals.append(res.residual)
        if res.converged:
            values.append(abs(res.value))
        else:
            values.append(float("nan"))
            failed.append(i)
    good = [v for v in values if not math.isnan(v)]
    if not good:
        raise ConvergenceError("no sample converged in input_smoothness",
                               residual=min(residuals))
    return SmoothnessEstimate(values, float(np.mean(good)), float(np.max(good)),
                              residuals, failed)


def _flatten(vs) -> np.ndarray:
    return np.concatenate([np.asarray(v).ravel() for v in vs])


def _unflatten(v: np.ndarray, shapes) -> list:
    out, offset = [], 0
    for shape in shapes:
        size = int(np.prod(shape)) if shape else 1
        out.append(v[offset:offset + size].reshape(shape))
        offset += size
    return out


def param_sharpness(model, X: np.ndarray, y: np.ndarray, tol: float = 1e-6,
                    max_iters: int = 500, seed: int = 0) -> float:
    """Largest |eigenvalue| of the parameter-space Hessian of the mean loss."""
    shapes = model.param_shapes()
    dim = sum(int(np.prod(s)) if s else 1 for s in shapes)
    X = np.asarray(X, dtype=np.float64)

    def matvec(v):
        return _flatten(model.param_hvp(X, y, _unflatten(v, shapes)))

    res = power_iteration(matvec, dim, tol=tol, max_iters=max_iters, seed=seed)
    if not res.converged:
        raise ConvergenceError("param_sharpness power iteration did not converge",
                               residual=res.residual)
    return abs(res.value)


# ---------------------------------------------------------------------------
# gradient similarity
# ---------------------------------------------------------------------------


@dataclass
class SimilarityStats:
    values: list            # per-sample cosine similarity in [-1, 1]
    mean: float
    max: float
    zero_grad_samples: list = field(default_factory=list)


def gradient_similarity(model_f, model_g, X: np.ndarray, y: np.ndarray) -> SimilarityStats:
    """Cosine similarity of input-space loss gradients, per sample.

    Samples where either gradient vanishes contribute similarity 0 and
    are flagged.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y))
    values, zeros = [], []
    for i, (xi, yi) in enumerate(zip(X, y)):
        gf = model_f.input_grad(xi, int(yi)).ravel()
        gg = model_g.input_grad(xi, int(yi)).ravel()
        nf, ng = np.linalg.norm(gf), np.linalg.norm(gg)
        if nf < 1e-300 or ng < 1e-300:
            values.append(0.0)
            zeros.append(i)
            continue
        values.append(float(np.clip(gf @ gg / (nf * ng), -1.0, 1.0)))
    return SimilarityStats(values, float(np.mean(values)), float(np.max(values)), zeros)


# ---------------------------------------------------------------------------
# transferability upper bound
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundInputs:
    xi_f: float       # empirical risks (mean held-out loss)
    xi_g: float
    b_f: float        # gradient-norm bounds (max l2 over the evaluation set)
    b_g: float
    lmin_f: float     # minimum wrong-label losses
    lmin_g: float
    sigma_f: float    # curvature maxima (largest |eigenvalue| over samples)
    sigma_g: float
    s_bar: float      # gradient-similarity supremum estimate
    epsilon: float    # l2 attack radius

    def __post_init__(self):
        nonneg = (self.xi_f, self.xi_g, self.b_f, self.b_g, self.lmin_f,
                  self.lmin_g, self.sigma_f, self.sigma_g, self.epsilon)
        if any(v < 0 for v in nonneg):
            raise ValueError("bound inputs other than s_bar must be non-negative")
        if not -1.0 <= self.s_bar <= 1.0:
            raise ValueError("s_bar must lie in [-1, 1]")


@dataclass(frozen=True)
class TransferBound:
    vacuous: bool
    raw: float | None = None        # unclamped sum of the two terms
    value: float | None = None      # raw clamped to [0, 1] for reporting
    denom_f: float = 0.0
    denom_g: float = 0.0


def transfer_bound(inputs: BoundInputs) -> TransferBound:
    """Two-term transferability bound; vacuous when a denominator dies."""
    coef = 1.0 + math.sqrt((1.0 + inputs.s_bar) / 2.0)
    den_f = inputs.lmin_f - inputs.epsilon * inputs.b_f * coef - inputs.sigma_f * inputs.epsilon ** 2
    den_g = inputs.lmin_g - inputs.epsilon * inputs.b_g * coef - inputs.sigma_g * inputs.epsilon ** 2
    if den_f <= 0.0 or den_g <= 0.0:
        return TransferBound(vacuous=True, denom_f=den_f, denom_g=den_g)
    raw = inputs.xi_f / den_f + inputs.xi_g / den_g
    return TransferBound(vacuous=False, raw=raw, value=min(max(raw, 0.0), 1.0),
                         denom_f=den_f, denom_g=den_g)


def min_wrong_label_loss(model, X: np.ndarray, y: np.ndarray, num_classes: int) -> float:
    """Exact min over samples and wrong labels of the per-sample loss."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y))
    best = math.inf
    for xi, yi in zip(X, y):
        for label in range(num_classes):
            if label == int(yi):
                continue
            best = min(best, model.loss(xi[None, :], np.asarray([label])))
    return best


def max_grad_norm(model, X: np.ndarray, y: np.ndarray) -> float:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y))
    return max(float(np.linalg.norm(model.input_grad(xi, int(yi)))) for xi, yi in zip(X, y))


def empirical_risk(model, X: np.ndarray, y: np.ndarray) -> float:
    return float(model.loss(X, y))


def estimate_bound_inputs(model_f, model_g, X: np.ndarray, y: np.ndarray,
                          epsilon_l2: float, num_classes: int,
                          tol: float = 1e-6, max_iters: int = 500) -> BoundInputs:
    """Sample-based estimates of every bound ingredient on one eval set."""
    sim = gradient_similarity(model_f, model_g, X, y)
    smooth_f = input_smoothness(model_f, X, y, tol=tol, max_iters=max_iters)
    smooth_g = input_smoothness(model_g, X, y, tol=tol, max_iters=max_iters)
    return BoundInputs(
        xi_f=empirical_risk(model_f, X, y),
        xi_g=empirical_risk(model_g, X, y),
        b_f=max_grad_norm(model_f, X, y),
        b_g=max_grad_norm(model_g, X, y),
        lmin_f=min_wrong_label_loss(model_f, X, y, num_classes),
        lmin_g=min_wrong_label_loss(model_g, X, y, num_classes),
        sigma_f=smooth_f.max,
        sigma_g=smooth_g.max,
        s_bar=sim.max,
        epsilon=epsilon_l2,
    )


# ---------------------------------------------------------------------------
# query-robustness perturbation bounds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QueryBounds:
    lower: float
    upper: float            # inf when the curvature direction is degenerate
    upper_finite: bool
    sigma: float            # dominant signed eigenvalue clamped at 0
    grad_norm: float
    gap: float              # c = threshold - loss(x, y)


def query_bounds(model, x: np.ndarray, y: int, threshold: float,
                 tol: float = 1e-6, max_iters: int = 500, seed: int = 0) -> QueryBounds:
    """Lower/upper l2 perturbation norms needed to push the loss to the
    threshold: c/||g|| - 2 sigma c^2/||g||^3 <= ||delta|| <= c / <g, u>."""
    x = np.asarray(x, dtype=np.float64)
    loss = model.loss(x[None, :], np.asarray([y]))
    c = threshold - loss
    if c < 0:
        raise ValueError(f"loss {loss} already above threshold {threshold}")
    g = model.input_grad(x, int(y)).ravel()
    gn = float(np.linalg.norm(g))
    if gn <= 0.0:
        raise ValueError("gradient vanished; bounds undefined")

    top = power_iteration(lambda v: model.input_hvp(x, int(y), v), x.size,
                          tol=tol, max_iters=max_iters, seed=seed)
    lam_abs = abs(top.value)
    if lam_abs < 1e-12:
        # flat model: curvature term vanishes, no usable eigen-direction
        lower = c / gn
        return QueryBounds(lower, math.inf, False, 0.0, gn, c)

    if top.value > 0:
        lam_max, u = top.value, top.vector
    else:
        shifted = power_iteration(
            lambda v: model.input_hvp(x, int(y), v) + lam_abs * np.asarray(v), x.size,
            tol=tol, max_iters=max_iters, seed=seed + 1)
        lam_max, u = shifted.value - lam_abs, shifted.vector
    sigma = max(lam_max, 0.0)

    lower = c / gn - 2.0 * sigma * c ** 2 / gn ** 3
    gu = float(g @ u)
    if gu < 0:
        u, gu = -u, -gu  # eigenvector sign is arbitrary; face the gradient
    if gu <= 1e-14:
        return QueryBounds(lower, math.inf, False, sigma, gn, c)
    return QueryBounds(lower, c / gu, True, sigma, gn, c)


# ---------------------------------------------------------------------------
# report assembly
# ---------------------------------------------------------------------------


@dataclass
class RobustnessReport:
    ca: float
    ra_t: float | None
    ra_q: float | None
    asr_t: float | None
    asr_q: float | None
    n_eval: int
    n_transfer: int
    n_query: int
    diagnostics: dict = field(default_factory=dict)


def build_report(target, X: np.ndarray, y: np.ndarray, transfer_results,
                 query_results, diagnostics: dict | None = None) -> RobustnessReport:
    """Aggregate CA plus per-family RA/ASR from attack results.

    Counts are combined with exact rational arithmetic before the final
    division; ASR is defined as the float complement of RA so the two
    always sum to exactly 1. Missing families are reported as absent,
    not zero.
    """
    ca = clean_accuracy(target, X, y)

    def ra_of(results):
        if not results:
            return None, None, 0
        kept = sum(1 for r in results if r.clean_label == r.adv_label)
        ra = float(Fraction(kept, len(results)))
        return ra, 1.0 - ra, len(results)

    ra_t, asr_t, n_t = ra_of(transfer_results)
    ra_q, asr_q, n_q = ra_of(query_results)
    return RobustnessReport(ca, ra_t, ra_q, asr_t, asr_q, len(np.asarray(y)),
                            n_t, n_q, diagnostics or {})
