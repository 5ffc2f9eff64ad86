"""The four training instantiations and logit-averaged inference.

Kinds:
  centralized      one model on the full training split (N = 1)
  full             N models on the full split, distinct init seeds
  iid              N models on disjoint IID shards
  non-iid          N models on disjoint Dirichlet(alpha) shards

Inference averages member logits (before softmax) and takes the argmax
with lowest-index tie-breaking. The ensemble loss used for attack and
diagnostic gradients is the cross-entropy of the averaged logits, which
makes the ensemble a single differentiable model.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import Dataset, PartitionSpec, partition, split_validation
from .nets import ModelSpec, load_model, save_model
from .nets import _forward as _net_forward
from .rng import stream
from .training import HyperParams, train

KINDS = ("centralized", "full", "iid", "non-iid")


class EnsembleBuildError(RuntimeError):
    def __init__(self, message: str, member: int):
        super().__init__(f"member {member}: {message}")
        self.member = member


@dataclass(frozen=True)
class EnsembleSpec:
    kind: str
    n: int = 1
    alpha: float = 0.9
    partition_seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown ensemble kind {self.kind!r}")
        if self.n < 1:
            raise ValueError("node count must be >= 1")
        if self.kind == "centralized" and self.n != 1:
            raise ValueError("centralized means a single node")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "n": self.n, "alpha": self.alpha,
                "partition_seed": self.partition_seed}

    @staticmethod
    def from_dict(d: dict) -> "EnsembleSpec":
        return EnsembleSpec(kind=d["kind"], n=int(d.get("n", 1)),
                            alpha=float(d.get("alpha", 0.9)),
                            partition_seed=int(d.get("partition_seed", 0)))


class EnsembleModel:
    """Immutable bag of trained members.

    Members carry explicit ids (defaulting to list position); every
    aggregation runs in ascending id order, so the model is exactly
    permutation-invariant in how the member list was supplied.
    """

    def __init__(self, members: list, spec: EnsembleSpec, member_ids: list | None = None):
        if not members:
            raise ValueError("ensemble needs at least one member")
        ids = list(range(len(members))) if member_ids is None else list(member_ids)
        if sorted(ids) != sorted(set(ids)) or len(ids) != len(members):
            raise ValueError("member_ids must be unique and match the member count")
        order = np.argsort(ids)
        self.members = [members[i] for i in order]
        self.member_ids = [ids[i] for i in order]
        self.spec = spec

    @property
    def num_classes(self) -> int:
        return self.members[0].spec.num_classes

    @property
    def input_dim(self) -> int:
        return self.members[0].spec.input_dim

    def member_logits(self, X: np.ndarray) -> np.ndarray:
        """(n_members, ...) logits; raises naming any member that yields NaN."""
        outs = []
        for i, net in enumerate(self.members):
            z = net.logits(X)
            if np.any(np.isnan(z)):
                raise ValueError(f"member {i} produced NaN logits")
            outs.append(z)
        return np.stack(outs)

    def logits(self, X: np.ndarray) -> np.ndarray:
        """Mean of member logits, accumulated in member-id order."""
        per_member = self.member_logits(X)
        total = per_member[0].copy()
        for z in per_member[1:]:
            total += z
        return total / len(self.members)

    def predict(self, X: np.ndarray):
        z = np.atleast_2d(self.logits(X))
        labels = np.argmax(z, axis=1)
        return labels if np.asarray(X).ndim > 1 else int(labels[0])

    # -- differentiable paths --------------------------------------------

    def logits_t(self, x: ad.Tensor) -> ad.Tensor:
        acc = None
        for net in self.members:
            z = net.logits_t(x)
            acc = z if acc is None else ad.add(acc, z)
        return ad.mul(acc, 1.0 / len(self.members))

    def loss_t(self, x: ad.Tensor, y) -> ad.Tensor:
        return ad.softmax_cross_entropy(self.logits_t(x), y)

    def loss(self, X: np.ndarray, y) -> float:
        return ad.softmax_cross_entropy(ad.Tensor(self.logits(X)), y).item()

    def input_grad(self, x: np.ndarray, y) -> np.ndarray:
        xt = ad.Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)
        return ad.grad(self.loss_t(xt, y), [xt])[0].data.reshape(np.asarray(x).shape)

    def input_hvp(self, x: np.ndarray, y, v: np.ndarray) -> np.ndarray:
        xv = np.asarray(x, dtype=np.float64)
        return ad.hvp(lambda t: self.loss_t(t, y), ad.Tensor(xv, requires_grad=True),
                      np.asarray(v, dtype=np.float64).reshape(xv.shape)).data

    def param_tensors(self) -> list:
        out = []
        for net in self.members:
            out.extend(net.params.tensors)
        return out

    def param_shapes(self):
        return [t.shape for t in self.param_tensors()]

    def param_hvp(self, X: np.ndarray, y, vs: list) -> list:
        tensors = self.param_tensors()

        def loss_of(ts):
            offset, acc = 0, None
            for net in self.members:
                k = len(net.params.tensors)
                z = _net_forward(net.spec, list(ts[offset:offset + k]), ad.Tensor(X))
                acc = z if acc is None else ad.add(acc, z)
                offset += k
            mean_logits = ad.mul(acc, 1.0 / len(self.members))
            return ad.softmax_cross_entropy(mean_logits, y)

        return [h.data for h in ad.hvp(loss_of, tensors, vs)]


def build(espec: EnsembleSpec, ds: Dataset, hp: HyperParams, master_seed: int,
          model_spec: ModelSpec | None = None, val_fraction: float = 0.2):
    """Train all members; returns (EnsembleModel, list[TrainLog]).

    The validation split is carved from the full dataset once and shared
    by every member, so early stopping of non-IID members is judged on
    the same distribution. Member i trains on shard i (or the full split
    for centralized/full) with a run-specific seed derived from
    (master_seed, i); members are trained in member-id order.
    """
    if model_spec is None:
        model_spec = ModelSpec("mlp", ds.dim, ds.num_classes)
    train_part, val = split_validation(ds, val_fraction)

    pseed = int(stream("ens-partition", master_seed, espec.partition_seed).integers(2 ** 62))
    if espec.kind in ("centralized", "full"):
        shards = [train_part] * espec.n
    elif espec.kind == "iid":
        shards = partition(train_part, PartitionSpec("iid-disjoint", espec.n, seed=pseed))
    else:
        shards = partition(train_part, PartitionSpec("dirichlet", espec.n,
                                                     alpha=espec.alpha, seed=pseed))

    members, logs = [], []
    for i in range(espec.n):
        member_seed = int(stream("ens-member", master_seed, i).integers(2 ** 62))
        try:
            net, log = train(model_spec, shards[i], hp, seed=member_seed, val=val)
        except Exception as err:
            raise EnsembleBuildError(str(err), member=i) from err
        members.append(net)
        logs.append(log)
    return EnsembleModel(members, espec), logs


def save_ensemble(directory, model: EnsembleModel):
    """Manifest JSON plus one 'RTCK' checkpoint per member."""
    os.makedirs(directory, exist_ok=True)
    manifest = {"spec": model.spec.to_dict(),
                "members": [f"member_{i:03d}.rtck" for i in range(len(model.members))]}
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    for name, net in zip(manifest["members"], model.members):
        save_model(os.path.join(directory, name), net)


def load_ensemble(directory) -> EnsembleModel:
    with open(os.path.join(directory, "manifest.json"), "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    spec = EnsembleSpec.from_dict(manifest["spec"])
    members = [load_model(os.path.join(directory, name)) for name in manifest["members"]]
    return EnsembleModel(members, spec)
