"""Encoder (tanh MLP), anomaly head f and cluster head g, with analytic backward passes."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .numerics import (
    DimensionError,
    Parameter,
    affine_backward,
    affine_forward,
    sigmoid,
    softmax2_backward,
    softmax2_rows,
)


@dataclass
class EncoderSpec:
    input_dim: int
    hidden_dims: list[int] = field(default_factory=lambda: [64])
    output_dim: int = 32
    frozen: bool = False

    def __post_init__(self):
        self.hidden_dims = [int(h) for h in self.hidden_dims]
        if min([self.input_dim, self.output_dim, *self.hidden_dims]) < 1:
            raise ValueError("all encoder dimensions must be >= 1")

    @property
    def dims(self) -> list[int]:
        return [self.input_dim, *self.hidden_dims, self.output_dim]


@dataclass
class ForwardCache:
    inputs: list  # input to each encoder layer
    outputs: list  # tanh output of each encoder layer
    z: np.ndarray
    p: np.ndarray
    q: np.ndarray | None


class Model:
    """Parameters live in ``self.params`` keyed ``enc{k}.W``, ``enc{k}.b``, ``f.W``, ``f.b``, ``g.W``, ``g.b``."""

    def __init__(self, spec: EncoderSpec, params: dict[str, Parameter]):
        self.spec = spec
        self.params = params
        self.step = 0

    @classmethod
    def init(cls, spec: EncoderSpec, rng: np.random.Generator) -> "Model":
        params = {}

        def layer(name, fan_in, fan_out):
            s = 1.0 / np.sqrt(fan_in)
            params[f"{name}.W"] = Parameter(rng.uniform(-s, s, size=(fan_in, fan_out)))
            params[f"{name}.b"] = Parameter(np.zeros(fan_out))

        dims = spec.dims
        for k in range(len(dims) - 1):
            layer(f"enc{k}", dims[k], dims[k + 1])
        layer("f", spec.output_dim, 1)
        layer("g", spec.output_dim, 2)
        return cls(spec, params)

    @property
    def n_layers(self) -> int:
        return len(self.spec.dims) - 1

    def encoder_params(self) -> list[Parameter]:
        return [self.params[f"enc{k}.{t}"] for k in range(self.n_layers) for t in ("W", "b")]

    def head_params(self) -> list[Parameter]:
        return [self.params[n] for n in ("f.W", "f.b", "g.W", "g.b")]

    def trainable(self) -> list[Parameter]:
        heads = self.head_params()
        return heads if self.spec.frozen else self.encoder_params() + heads

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    # ------------------------------------------------------------------ forward

    def forward(self, X, with_g: bool = True) -> ForwardCache:
        h = np.asarray(X, dtype=np.float64)
        if h.ndim == 1:
            h = h.reshape(1, -1)
        if h.shape[1] != self.spec.input_dim:
            raise DimensionError(f"input has {h.shape[1]} features, encoder expects {self.spec.input_dim}")
        inputs, outputs = [], []
        for k in range(self.n_layers):
            inputs.append(h)
            h = np.tanh(affine_forward(self.params[f"enc{k}.W"].value, self.params[f"enc{k}.b"].value, h))
            outputs.append(h)
        z = h
        p = sigmoid(affine_forward(self.params["f.W"].value, self.params["f.b"].value, z)[:, 0])
        q = softmax2_rows(affine_forward(self.params["g.W"].value, self.params["g.b"].value, z)) if with_g else None
        return ForwardCache(inputs, outputs, z, np.atleast_1d(p), q)

    def encode(self, X) -> np.ndarray:
        return self.forward(X, with_g=False).z

    def forward_f(self, Z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
        return np.atleast_1d(sigmoid(affine_forward(self.params["f.W"].value, self.params["f.b"].value, Z)[:, 0]))

    def forward_g(self, Z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
        return softmax2_rows(affine_forward(self.params["g.W"].value, self.params["g.b"].value, Z))

    def predict(self, X) -> np.ndarray:
        """Anomaly probabilities for rows of X."""
        return self.forward(X, with_g=False).p

    # ------------------------------------------------------------------ backward

    def backward(self, cache: ForwardCache, dp=None, dq=None) -> None:
        """Accumulate parameter gradients given dL/dp (n,) and/or dL/dq (n, 2)."""
        z = cache.z
        dz = np.zeros_like(z)
        if dp is not None:
            dlogit = (np.asarray(dp) * cache.p * (1.0 - cache.p)).reshape(-1, 1)
            dW, db, dzf = affine_backward(self.params["f.W"].value, z, dlogit)
            self.params["f.W"].grad += dW
            self.params["f.b"].grad += db
            dz += dzf
        if dq is not None:
            dlogit = softmax2_backward(cache.q, np.asarray(dq))
            dW, db, dzg = affine_backward(self.params["g.W"].value, z, dlogit)
            self.params["g.W"].grad += dW
            self.params["g.b"].grad += db
            dz += dzg
        if self.spec.frozen:
            return
        dh = dz
        for k in reversed(range(self.n_layers)):
            dpre = dh * (1.0 - cache.outputs[k] ** 2)
            dW, db, dh = affine_backward(self.params[f"enc{k}.W"].value, cache.inputs[k], dpre)
            self.params[f"enc{k}.W"].grad += dW
            self.params[f"enc{k}.b"].grad += db

    # ------------------------------------------------------------------ checkpoints

    def state_dict(self) -> dict:
        def mat(a):
            return {"shape": list(a.shape), "data": a.reshape(-1).tolist()}

        return {
            "encoder": asdict(self.spec),
            "step": self.step,
            "params": {
                n: {"value": mat(p.value), "m1": mat(p.m1), "m2": mat(p.m2)} for n, p in self.params.items()
            },
        }

    @classmethod
    def from_state_dict(cls, doc: dict) -> "Model":
        def arr(m):
            return np.array(m["data"], dtype=np.float64).reshape(m["shape"])

        spec = EncoderSpec(**doc["encoder"])
        params = {
            n: Parameter(arr(d["value"]), m1=arr(d["m1"]), m2=arr(d["m2"])) for n, d in doc["params"].items()
        }
        model = cls(spec, params)
        model.step = int(doc.get("step", 0))
        return model

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.state_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Model":
        return cls.from_state_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def copy(self) -> "Model":
        return Model.from_state_dict(self.state_dict())
