"""Multilayer perceptrons and the mark-embedding table.

Parameters are autodiff Vars so the same objects serve taped training and
plain evaluation. Initialization: weights and biases uniform in
[-1/sqrt(fan_in), 1/sqrt(fan_in)], embedding rows 0.1 * standard normal.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

CHECKPOINT_VERSION = 1


@dataclass
class Mlp:
    """Dense chain with tanh or softplus hidden activations, linear output."""

    weights: list[ad.Var]
    biases: list[ad.Var]
    activation: str = "tanh"

    @classmethod
    def create(cls, widths: list[int], rng: np.random.Generator, activation: str = "tanh", name: str = "mlp") -> "Mlp":
        if len(widths) < 2:
            raise ValueError("an Mlp needs at least input and output widths")
        if activation not in ("tanh", "softplus"):
            raise ValueError(f"unsupported activation {activation!r}")
        weights, biases = [], []
        for layer, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            bound = 1.0 / np.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            b = rng.uniform(-bound, bound, size=(fan_out,))
            weights.append(ad.parameter(w, name=f"{name}.w{layer}"))
            biases.append(ad.parameter(b, name=f"{name}.b{layer}"))
        return cls(weights, biases, activation)

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].value.shape[0]] + [w.value.shape[1] for w in self.weights]

    def __call__(self, x) -> ad.Var:
        expected = self.weights[0].value.shape[0]
        got = ad.raw(x).shape[-1]
        if got != expected:
            raise ValueError(f"input width {got} does not match first layer width {expected}")
        return ad.mlp(x, self.weights, self.biases, self.activation)

    def apply_raw(self, x: np.ndarray) -> np.ndarray:
        """Untaped fast path for evaluation loops."""
        out, _ = _kernel_forward(x, self.weights, self.biases, self.activation)
        return out

    def parameters(self) -> list[ad.Var]:
        return list(self.weights) + list(self.biases)


def _kernel_forward(x, weights, biases, activation):
    from . import kernels

    return kernels.mlp_forward(
        np.asarray(x, dtype=np.float64),
        [w.value for w in weights],
        [b.value for b in biases],
        activation,
    )


@dataclass
class Embedding:
    """K x d table of per-mark initial hidden states."""

    table: ad.Var

    @classmethod
    def create(cls, num_marks: int, dim: int, rng: np.random.Generator, scale: float = 0.1, name: str = "embedding") -> "Embedding":
        return cls(ad.parameter(scale * rng.standard_normal((num_marks, dim)), name=name))

    @property
    def num_marks(self) -> int:
        return self.table.value.shape[0]

    @property
    def dim(self) -> int:
        return self.table.value.shape[1]

    def __call__(self, marks) -> ad.Var:
        marks = np.atleast_1d(np.asarray(marks, dtype=np.intp))
        if marks.size and (marks.min() < 0 or marks.max() >= self.num_marks):
            bad = marks[(marks < 0) | (marks >= self.num_marks)][0]
            raise IndexError(f"mark {bad} outside [0, {self.num_marks})")
        return ad.embedding_lookup(self.table, marks)

    def rows_raw(self, marks: np.ndarray) -> np.ndarray:
        return self(marks).value

    def parameters(self) -> list[ad.Var]:
        return [self.table]


# ---------------------------------------------------------------------------
# parameter checkpointing


def save_params(path: str, params: list[ad.Var], extra: dict | None = None) -> None:
    """Write named parameters (shapes + flat data) as versioned JSON."""
    blob = {
        "version": CHECKPOINT_VERSION,
        "params": {
            p.name: {"shape": list(p.value.shape), "data": p.value.ravel().tolist()}
            for p in params
        },
    }
    if extra:
        blob.update(extra)
    with open(path, "w") as fh:
        json.dump(blob, fh)


def load_params(path: str, params: list[ad.Var]) -> dict:
    """Load a checkpoint in place; returns the non-parameter payload."""
    with open(path) as fh:
        blob = json.load(fh)
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {blob.get('version')!r}")
    stored = blob["params"]
    for p in params:
        if p.name not in stored:
            raise KeyError(f"checkpoint is missing parameter {p.name!r}")
        entry = stored[p.name]
        arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        if arr.shape != p.value.shape:
            raise ValueError(f"shape mismatch for {p.name!r}: {arr.shape} vs {p.value.shape}")
        p.value[...] = arr
    return {k: v for k, v in blob.items() if k not in ("version", "params")}
