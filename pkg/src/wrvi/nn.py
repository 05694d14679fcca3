"""Multilayer perceptrons on top of :mod:`wrvi.autodiff`."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

ACTIVATIONS = {
    "swish": ad.swish,
    "tanh": ad.tanh,
    "identity": lambda x: x,
}


@dataclass
class MlpParams:
    """Dense layers ``(W, b)`` with ``W`` of shape (fan_in, fan_out).

    The activation is applied after every layer except the last one.
    Entries may be numpy arrays or taped tensors.
    """

    layers: list = field(default_factory=list)
    activation: str = "swish"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; expected one of {sorted(ACTIVATIONS)}")
        for i in range(1, len(self.layers)):
            prev_out = ad.value(self.layers[i - 1][0]).shape[1]
            fan_in = ad.value(self.layers[i][0]).shape[0]
            if prev_out != fan_in:
                raise ad.ShapeError(f"layer {i}: fan_in {fan_in} does not chain with previous fan_out {prev_out}")
        for i, (w, b) in enumerate(self.layers):
            if ad.value(b).shape != (ad.value(w).shape[1],):
                raise ad.ShapeError(f"layer {i}: bias shape {ad.value(b).shape} does not match weight {ad.value(w).shape}")

    @property
    def sizes(self) -> list[int]:
        if not self.layers:
            return []
        return [ad.value(self.layers[0][0]).shape[0]] + [ad.value(w).shape[1] for w, _ in self.layers]

    def flat(self) -> list:
        return [p for layer in self.layers for p in layer]

    def with_flat(self, flat) -> "MlpParams":
        flat = list(flat)
        layers = [(flat[2 * i], flat[2 * i + 1]) for i in range(len(flat) // 2)]
        return MlpParams(layers, self.activation)


def init_mlp(sizes, rng: np.random.Generator, activation: str = "swish", last_scale: float = 1.0) -> MlpParams:
    """Glorot-normal weights, zero biases; ``last_scale`` shrinks the output layer."""
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        w = rng.normal(0.0, np.sqrt(2.0 / (n_in + n_out)), size=(n_in, n_out))
        if i == len(sizes) - 2:
            w = w * last_scale
        layers.append((w, np.zeros(n_out)))
    return MlpParams(layers, activation)


def mlp_apply(params: MlpParams, x):
    """Apply the network to ``x`` of shape (..., fan_in); batched over rows."""
    if not params.layers:
        raise ValueError("empty network")
    fan_in = ad.value(params.layers[0][0]).shape[0]
    shape = ad.value(x).shape
    if not shape or shape[-1] != fan_in:
        raise ad.ShapeError(f"input last dimension {shape[-1] if shape else None} != fan_in {fan_in}")
    act = ACTIVATIONS[params.activation]
    squeeze = len(shape) == 1
    h = ad.reshape(x, (1, fan_in)) if squeeze else x
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        h = ad.add(ad.matmul(h, w), b)
        if i < last:
            h = act(h)
    return ad.reshape(h, (h.shape[-1],)) if squeeze else h
