"""SGD with momentum and decoupled-into-the-gradient weight decay.

The update per step is

    g = (1/B) sum grad_theta L + lam * theta
    v = mu * v + g
    theta = theta - eta_t * v

with eta_t following cosine annealing over epochs and early stopping on
validation loss. Minibatches are drawn by shuffling without replacement
each epoch; the best-validation checkpoint is restored at the end.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import Dataset, split_validation
from .nets import ModelParams, ModelSpec, Net, init_params
from .rng import stream

logger = logging.getLogger(__name__)

# Typical SGD hyperparameter box used by ablations and the search.
SEARCH_RANGES = {
    "eta": (1e-4, 0.4),
    "lam": (1e-6, 1e-2),
    "mu": (0.8, 0.99),
    "batch": (32, 2048),
}
DEFAULT_HP = {"eta": 0.1, "lam": 5e-4, "mu": 0.9, "batch": 128}


class TrainingError(RuntimeError):
    def __init__(self, message: str, step: int = -1, log: "TrainLog | None" = None):
        super().__init__(message)
        self.step = step
        self.log = log


@dataclass(frozen=True)
class HyperParams:
    eta: float = 0.1
    lam: float = 5e-4
    mu: float = 0.9
    batch: int = 128
    epochs: int = 200
    patience: int = 20
    min_delta: float = 1e-4

    def __post_init__(self):
        if self.eta <= 0 or self.lam < 0 or self.mu < 0 or self.mu >= 1:
            raise ValueError("require eta > 0, lam >= 0, 0 <= mu < 1")
        if self.batch < 1 or self.epochs < 1 or self.patience < 0:
            raise ValueError("require batch >= 1, epochs >= 1, patience >= 0")

    def in_search_ranges(self) -> bool:
        return all(SEARCH_RANGES[k][0] <= getattr(self, k) <= SEARCH_RANGES[k][1]
                   for k in SEARCH_RANGES)

    def astuple(self):
        return (self.eta, self.lam, self.mu, self.batch)


@dataclass
class OptimizerState:
    velocities: list
    t: int = 0

    @staticmethod
    def for_params(params: ModelParams) -> "OptimizerState":
        return OptimizerState([np.zeros_like(p.data) for p in params.tensors])


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)  # (epoch, eta_t, train_loss, val_loss)
    stopped_early: bool = False
    best_epoch: int = -1
    best_val: float = float("inf")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "eta_t", "train_loss", "val_loss", "stopped_early"])
        last = len(self.epochs) - 1
        for i, (epoch, eta_t, tr, va) in enumerate(self.epochs):
            w.writerow([epoch, repr(eta_t), repr(tr), repr(va),
                        int(self.stopped_early and i == last)])
        return buf.getvalue()


def cosine_eta(eta_max: float, epoch: int, total_epochs: int) -> float:
    """Cosine annealing from eta_max at epoch 0 down to 0 at total_epochs."""
    if not 0 <= epoch <= total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs}]")
    return 0.5 * eta_max * (1.0 + np.cos(np.pi * epoch / total_epochs))


def sgd_step(params: ModelParams, loss_fn, hp: HyperParams, state: OptimizerState,
             eta_t: float) -> float:
    """One SGD update; ``loss_fn()`` must return the minibatch-mean loss
    as a scalar Tensor built from the current parameters."""
    if eta_t <= 0:
        raise ValueError("eta_t must be > 0")
    loss = loss_fn()
    grads = ad.grad(loss, params.tensors)
    for i, (p, g) in enumerate(zip(params.tensors, grads)):
        gi = g.data + hp.lam * p.data
        if not np.all(np.isfinite(gi)):
            raise TrainingError(f"non-finite gradient in tensor {params.names[i]}",
                                step=state.t)
        state.velocities[i] = hp.mu * state.velocities[i] + gi
        p.data = p.data - eta_t * state.velocities[i]
    state.t += 1
    return loss.item()


def train(spec: ModelSpec, ds: Dataset, hp: HyperParams, seed: int,
          val: Dataset | None = None, val_fraction: float = 0.2):
    """Train a classifier; returns (Net, TrainLog).

    When no validation set is supplied, a stratified ``val_fraction``
    split is carved from ``ds``. Early stopping triggers once the
    validation loss has failed to improve by more than ``min_delta`` for
    ``patience`` consecutive epochs; the returned parameters are the
    best-validation checkpoint, never worse than the minimum observed.
    """
    if val is None:
        ds, val = split_validation(ds, val_fraction)
    batch = hp.batch
    if batch > len(ds):
        logger.warning("batch size %d exceeds dataset size %d; clamping", batch, len(ds))
        batch = len(ds)

    params = init_params(spec, seed)
    net = Net(spec, params)
    state = OptimizerState.for_params(params)
    log = TrainLog()
    best_params = params.clone()
    best_for_patience = float("inf")
    streak = 0

    n = len(ds)
    for epoch in range(hp.epochs):
        eta_t = cosine_eta(hp.eta, epoch, hp.epochs)
        order = stream("train-shuffle", seed, epoch).permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            bx, by = ds.X[idx], ds.y[idx]

            def batch_loss():
                return net.loss_t(ad.Tensor(bx), by)

            try:
                value = sgd_step(params, batch_loss, hp, state, eta_t)
            except TrainingError as err:
                raise TrainingError(str(err), step=err.step, log=log) from None
            total += value * len(idx)
            seen += len(idx)
        train_loss = total / seen
        val_loss = net.loss(val.X, val.y)
        log.epochs.append((epoch, float(eta_t), float(train_loss), float(val_loss)))
        if not np.isfinite(train_loss) or not np.isfinite(val_loss):
            raise TrainingError("training diverged to a non-finite loss",
                                step=state.t, log=log)

        if val_loss < log.best_val:
            log.best_val = float(val_loss)
            log.best_epoch = epoch
            best_params = params.clone()
        if val_loss < best_for_patience - hp.min_delta:
            best_for_patience = float(val_loss)
            streak = 0
        else:
            streak += 1
            if streak > hp.patience:
                log.stopped_early = True
                break

    return Net(spec, best_params), log
