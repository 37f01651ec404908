"""Fully connected tanh network f(t, x, v) on the traced engine."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tape, TracedValue

PAPER_WIDTHS = (3, 256, 256, 256, 1)


@dataclass(frozen=True)
class NetworkConfig:
    """Layer widths (inputs ``(t, x, v)`` first, scalar output last) and seed.

    Hidden layers use tanh, the output layer is linear.
    """

    layer_widths: tuple[int, ...] = PAPER_WIDTHS
    seed: int = 0

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise ValueError("need at least an input and an output layer")
        if widths[0] != 3 or widths[-1] != 1:
            raise ValueError(f"widths must start with 3 and end with 1, got {widths}")
        if min(widths) < 1:
            raise ValueError("all widths must be positive")

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        w = self.layer_widths
        return [(w[i], w[i + 1]) for i in range(len(w) - 1)]

    @property
    def n_params(self) -> int:
        return sum(r * c + c for r, c in self.layer_shapes)


def init_parameters(config: NetworkConfig) -> ParameterStore:
    """Glorot-uniform weights, zero biases; a pure function of the config."""
    store = ParameterStore.for_layers(config.layer_shapes)
    rng = np.random.default_rng(config.seed)
    for k, (fan_in, fan_out) in enumerate(config.layer_shapes):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        lay = store.layout[k]
        store.values[lay.weight_slice] = rng.uniform(-bound, bound, size=fan_in * fan_out)
    return store


def _check_layout(store: ParameterStore, config: NetworkConfig) -> None:
    shapes = [(lay.rows, lay.cols) for lay in store.layout]
    if shapes != config.layer_shapes:
        raise ValueError(f"store layout {shapes} does not match network {config.layer_shapes}")


def forward(store: ParameterStore, config: NetworkConfig, t, x, v) -> TracedValue:
    """Network output for traced inputs of shape ``(n, 1)`` (or scalars).

    The result carries ``t``/``x`` tangents, i.e. ∂f/∂t and ∂f/∂x.
    """
    _check_layout(store, config)
    scalar = np.ndim(t.primal) == 0
    if scalar:
        t, x, v = (ad.reshape(a, (1, 1)) for a in (t, x, v))

    first = store.layout[0]
    cols = first.cols
    z = None
    for row, inp in enumerate((t, x, v)):
        start = first.offset + row * cols
        w_row = ad.lift_param(store, slice(start, start + cols), shape=(1, cols))
        term = inp * w_row
        z = term if z is None else z + term
    z = z + ad.lift_param(store, first.bias_slice, shape=(1, cols))

    for lay in store.layout[1:]:
        h = ad.tanh(z)
        w = ad.lift_param(store, lay.weight_slice, shape=(lay.rows, lay.cols))
        b = ad.lift_param(store, lay.bias_slice, shape=(1, lay.cols))
        z = h @ w + b

    if scalar:
        return ad.reshape(z, ())
    return z


def evaluate_grid(store: ParameterStore, config: NetworkConfig, points) -> np.ndarray:
    """``(f, f_t, f_x)`` rows for an ``(n, 3)`` array of ``(t, x, v)`` points."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise ValueError("need at least one point")
    with Tape():
        t = ad.lift_input(pts[:, 0:1], "t")
        x = ad.lift_input(pts[:, 1:2], "x")
        v = ad.lift_input(pts[:, 2:3], "v")
        out = forward(store, config, t, x, v)
        return np.column_stack([out.primal[:, 0], out.tangent_t[:, 0], out.tangent_x[:, 0]])


def predict(store: ParameterStore, config: NetworkConfig, points) -> np.ndarray:
    """Plain numpy forward pass (no tape); returns f at each point."""
    _check_layout(store, config)
    h = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n_layers = len(store.layout)
    for k in range(n_layers):
        h = h @ store.weight(k) + store.bias(k)
        if k < n_layers - 1:
            h = np.tanh(h)
    return h[:, 0]


# ---------------------------------------------------------------------------
# checkpoints


def to_checkpoint(store: ParameterStore, config: NetworkConfig) -> dict:
    layers = []
    for k in range(len(store.layout)):
        layers.append({"w": store.weight(k).reshape(-1).tolist(), "b": store.bias(k).tolist()})
    return {"widths": list(config.layer_widths), "seed": config.seed, "layers": layers}


def from_checkpoint(doc: dict) -> tuple[ParameterStore, NetworkConfig]:
    config = NetworkConfig(tuple(doc["widths"]), int(doc.get("seed", 0)))
    store = ParameterStore.for_layers(config.layer_shapes)
    if len(doc["layers"]) != len(store.layout):
        raise ValueError("checkpoint layer count does not match widths")
    for lay, layer in zip(store.layout, doc["layers"]):
        w = np.asarray(layer["w"], dtype=np.float64)
        b = np.asarray(layer["b"], dtype=np.float64)
        if w.size != lay.rows * lay.cols or b.size != lay.cols:
            raise ValueError("checkpoint layer shape mismatch")
        store.values[lay.weight_slice] = w
        store.values[lay.bias_slice] = b
    return store, config


def save_checkpoint(path, store: ParameterStore, config: NetworkConfig) -> None:
    # repr-exact floats: json writes the shortest round-tripping representation
    Path(path).write_text(json.dumps(to_checkpoint(store, config)))


def load_checkpoint(path) -> tuple[ParameterStore, NetworkConfig]:
    return from_checkpoint(json.loads(Path(path).read_text()))
