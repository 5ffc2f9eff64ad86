"""Small classifier architectures with deterministic seeded initialization.

Two desk-scale architectures are provided: a two-hidden-layer ReLU MLP
and a tiny two-layer CNN ("cnn" expects inputs that reshape to a square
single-channel image). Both expose logits, argmax prediction with
lowest-index tie-breaking, and softmax cross-entropy loss, all built on
the autodiff tensors so losses can be differentiated with respect to
inputs and parameters.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .rng import stream

CHECKPOINT_MAGIC = b"RTCK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    kind: str  # "mlp" | "cnn"
    input_dim: int
    num_classes: int
    hidden: tuple = (64, 64)
    channels: tuple = (8, 16)
    kernel: int = 3

    def __post_init__(self):
        if self.kind not in ("mlp", "cnn"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.input_dim < 2 or self.num_classes < 2:
            raise ValueError("input_dim and num_classes must be at least 2")
        if any(h < 1 for h in self.hidden) or any(c < 1 for c in self.channels):
            raise ValueError("layer sizes must be positive")
        if self.kind == "cnn":
            side = math.isqrt(self.input_dim)
            if side * side != self.input_dim:
                raise ValueError("cnn input_dim must be a perfect square")
            if side - 2 * (self.kernel - 1) < 1:
                raise ValueError("cnn input side too small for two valid convolutions")

    @property
    def side(self) -> int:
        return math.isqrt(self.input_dim)

    def layer_plan(self):
        """Ordered (name, shape, fan_in) triples; biases have fan_in 0."""
        if self.kind == "mlp":
            h1, h2 = self.hidden
            dims = [(self.input_dim, h1), (h1, h2), (h2, self.num_classes)]
            plan = []
            for i, (fi, fo) in enumerate(dims):
                plan.append((f"w{i}", (fi, fo), fi))
                plan.append((f"b{i}", (fo,), 0))
            return plan
        c1, c2 = self.channels
        k, s = self.kernel, self.side
        o2 = s - 2 * (k - 1)
        flat = c2 * o2 * o2
        return [
            ("conv0_w", (c1, 1, k, k), k * k),
            ("conv0_b", (c1,), 0),
            ("conv1_w", (c2, c1, k, k), c1 * k * k),
            ("conv1_b", (c2,), 0),
            ("w_out", (flat, self.num_classes), flat),
            ("b_out", (self.num_classes,), 0),
        ]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "input_dim": self.input_dim,
            "num_classes": self.num_classes,
            "hidden": list(self.hidden),
            "channels": list(self.channels),
            "kernel": self.kernel,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelSpec":
        return ModelSpec(
            kind=d["kind"],
            input_dim=int(d["input_dim"]),
            num_classes=int(d["num_classes"]),
            hidden=tuple(d.get("hidden", (64, 64))),
            channels=tuple(d.get("channels", (8, 16))),
            kernel=int(d.get("kernel", 3)),
        )


@dataclass
class ModelParams:
    """Ordered, named parameter tensors of one model."""

    names: list
    tensors: list

    def clone(self) -> "ModelParams":
        fresh = [ad.Tensor(t.data.copy(), requires_grad=t.requires_grad) for t in self.tensors]
        return ModelParams(list(self.names), fresh)

    def zero_grad(self):
        for t in self.tensors:
            t.grad = None

    def check_finite(self):
        for name, t in zip(self.names, self.tensors):
            if not np.all(np.isfinite(t.data)):
                raise ValueError(f"parameter {name} contains non-finite values")


def init_params(spec: ModelSpec, seed: int) -> ModelParams:
    """Fan-in scaled uniform weights, zero biases.

    Weights of layer i are drawn U(-sqrt(6/fan_in), +sqrt(6/fan_in))
    from a counter-based stream keyed by (seed, i), so identical
    (spec, seed) pairs give bit-identical parameters.
    """
    names, tensors = [], []
    for i, (name, shape, fan_in) in enumerate(spec.layer_plan()):
        if fan_in == 0:
            data = np.zeros(shape)
        else:
            lim = math.sqrt(6.0 / fan_in)
            data = stream("net-init", seed, i).uniform(-lim, lim, size=shape)
        names.append(name)
        tensors.append(ad.Tensor(data, requires_grad=True))
    return ModelParams(names, tensors)


def _forward(spec: ModelSpec, tensors: list, x: ad.Tensor) -> ad.Tensor:
    if x.ndim == 1:
        x = ad.reshape(x, (1, x.shape[0]))
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ad.ShapeError("forward", x.shape, (spec.input_dim,))
    if spec.kind == "mlp":
        w0, b0, w1, b1, w2, b2 = tensors
        h = ad.relu(ad.add(ad.matmul(x, w0), b0))
        h = ad.relu(ad.add(ad.matmul(h, w1), b1))
        return ad.add(ad.matmul(h, w2), b2)
    cw0, cb0, cw1, cb1, wo, bo = tensors
    s = spec.side
    img = ad.reshape(x, (x.shape[0], 1, s, s))
    h = ad.relu(ad.conv2d(img, cw0, cb0, padding="valid"))
    h = ad.relu(ad.conv2d(h, cw1, cb1, padding="valid"))
    flat = ad.reshape(h, (x.shape[0], int(np.prod(h.shape[1:]))))
    return ad.add(ad.matmul(flat, wo), bo)


class Net:
    """A classifier: ModelSpec plus its trained/initialized parameters."""

    def __init__(self, spec: ModelSpec, params: ModelParams):
        self.spec = spec
        self.params = params

    # -- graph-free inference -------------------------------------------

    def logits(self, X: np.ndarray) -> np.ndarray:
        """Logits for a batch (or single flat input), without building a graph."""
        frozen = [ad.Tensor(t.data) for t in self.params.tensors]
        out = _forward(self.spec, frozen, ad.Tensor(np.asarray(X, dtype=np.float64)))
        return out.data if np.asarray(X).ndim > 1 else out.data[0]

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Argmax labels, ties to the lowest index. Raises on NaN logits."""
        z = np.atleast_2d(self.logits(X))
        if np.any(np.isnan(z)):
            raise ValueError("NaN logits: model looks diverged")
        labels = np.argmax(z, axis=1)
        return labels if np.asarray(X).ndim > 1 else int(labels[0])

    def loss(self, X: np.ndarray, y) -> float:
        frozen = [ad.Tensor(t.data) for t in self.params.tensors]
        z = _forward(self.spec, frozen, ad.Tensor(np.asarray(X, dtype=np.float64)))
        return ad.softmax_cross_entropy(z, y).item()

    # -- differentiable paths --------------------------------------------

    def logits_t(self, x: ad.Tensor) -> ad.Tensor:
        return _forward(self.spec, self.params.tensors, x)

    def loss_t(self, x: ad.Tensor, y) -> ad.Tensor:
        return ad.softmax_cross_entropy(self.logits_t(x), y)

    def input_grad(self, x: np.ndarray, y) -> np.ndarray:
        """Gradient of the loss with respect to a single flat input."""
        xt = ad.Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)
        g = ad.grad(self.loss_t(xt, y), [xt])[0]
        return g.data.reshape(np.asarray(x).shape)

    def input_hvp(self, x: np.ndarray, y, v: np.ndarray) -> np.ndarray:
        xv = np.asarray(x, dtype=np.float64)

        def loss_of(t):
            return self.loss_t(t, y)

        xt = ad.Tensor(xv, requires_grad=True)
        return ad.hvp(loss_of, xt, np.asarray(v, dtype=np.float64).reshape(xv.shape)).data

    def param_shapes(self):
        return [t.shape for t in self.params.tensors]

    def param_hvp(self, X: np.ndarray, y, vs: list) -> list:
        """Hessian-vector product of the mean loss over (X, y) w.r.t. parameters."""

        def loss_of(ts):
            return ad.softmax_cross_entropy(_forward(self.spec, list(ts), ad.Tensor(X)), y)

        out = ad.hvp(loss_of, list(self.params.tensors), vs)
        return [h.data for h in out]


def save_model(path, net: Net):
    """Checkpoint format: magic 'RTCK', u16 LE version, u32 LE JSON length,
    JSON header (spec plus tensor names/shapes), then each tensor's raw
    little-endian float64 bytes in declaration order."""
    header = {
        "spec": net.spec.to_dict(),
        "tensors": [
            {"name": n, "shape": list(t.shape)}
            for n, t in zip(net.params.names, net.params.tensors)
        ],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<H", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for t in net.params.tensors:
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_model(path) -> Net:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a model checkpoint: bad magic {magic!r}")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (jlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(jlen).decode("utf-8"))
        spec = ModelSpec.from_dict(header["spec"])
        names, tensors = [], []
        for rec in header["tensors"]:
            shape = tuple(int(s) for s in rec["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(8 * count)
            if len(raw) != 8 * count:
                raise ValueError("truncated checkpoint")
            data = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
            names.append(rec["name"])
            tensors.append(ad.Tensor(data, requires_grad=True))
    params = ModelParams(names, tensors)
    params.check_finite()
    expected = [(n, s) for n, s, _ in spec.layer_plan()]
    if [(n, tuple(t.shape)) for n, t in zip(names, tensors)] != [(n, tuple(s)) for n, s in expected]:
        raise ValueError("checkpoint tensors do not match the declared spec")
    return Net(spec, params)
