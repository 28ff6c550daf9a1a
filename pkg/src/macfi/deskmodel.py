"""Bundled desk-scale model and synthetic dataset.

A small residual CNN (8x8x8 input, two 3x3 convs, maxpool, skip add, global
average pool, 8-class fc) whose weights come from a fixed SplitMix64 stream,
so every build is identical. Dataset labels are the model's own fault-free
predictions, which pins the baseline accuracy to exactly 1.0.

All scales are powers of two and every conv keeps weight_scale == m, so the
residual add sees bitwise-equal operand scales.
"""

from __future__ import annotations

import os

import numpy as np

from .faultctl import SplitMix64
from .model import Dataset, LayerSpec, ModelGraph, reference_forward, save_dataset, save_model
from .qtensor import QTensor

_WEIGHT_SEED = 0x5EED_D00D
_DATA_SEED = 0xDA7A_5E7


def _draw(rng: SplitMix64, n: int, lo: int, hi: int) -> np.ndarray:
    """n ints uniform in [lo, hi)."""
    span = hi - lo
    return np.array([lo + rng.bounded(span) for _ in range(n)], dtype=np.int64)


def _mac_layer(rng, lid, kind, src, cin, cout, k, pad) -> LayerSpec:
    w = _draw(rng, cout * cin * k * k, -16, 17).reshape(cout, cin, k, k).astype(np.int8)
    b = _draw(rng, cout, -64, 65).astype(np.int32)
    return LayerSpec(
        id=lid, kind=kind, inputs=[src], k=k, stride=1, pad=pad,
        cout=cout, m=2.0 ** -7, weight_scale=2.0 ** -7,
        weights=w, bias=b,
    )


def build_desk_model() -> ModelGraph:
    rng = SplitMix64(_WEIGHT_SEED)
    layers = [
        _mac_layer(rng, "conv1", "conv", "input", 8, 8, 3, 1),
        LayerSpec(id="relu1", kind="relu", inputs=["conv1"]),
        LayerSpec(id="pool1", kind="maxpool", inputs=["relu1"], k=2, stride=2),
        _mac_layer(rng, "conv2", "conv", "pool1", 8, 8, 3, 1),
        LayerSpec(id="relu2", kind="relu", inputs=["conv2"]),
        LayerSpec(id="add1", kind="add", inputs=["relu2", "pool1"]),
        LayerSpec(id="gap", kind="gavgpool", inputs=["add1"]),
        _mac_layer(rng, "fc", "fc", "gap", 8, 8, 1, 0),
    ]
    # Zero fc bias: with all products stuck at zero the logits collapse to the
    # bias vector, making the bias-only accuracy an easy analytical oracle.
    layers[-1].bias = np.zeros(8, dtype=np.int32)
    return ModelGraph(layers, (8, 8, 8), 2.0 ** -6, "fc", 8)


def build_desk_dataset(g: ModelGraph, n: int = 32) -> Dataset:
    rng = SplitMix64(_DATA_SEED)
    c, h, w = g.input_shape
    samples = _draw(rng, n * c * h * w, -128, 128).reshape(n, c, h, w).astype(np.int8)
    labels = np.empty(n, dtype=np.uint16)
    for i in range(n):
        _, logits = reference_forward(g, QTensor(samples[i], g.input_scale))
        labels[i] = int(np.argmax(logits))
    return Dataset(samples, labels, g.input_scale)


def write_desk_bundle(out_dir, n_samples: int = 32) -> dict[str, str]:
    """Write model.json + weights.bin + dataset.qds; returns their paths."""
    os.makedirs(out_dir, exist_ok=True)
    g = build_desk_model()
    paths = {
        "manifest": os.path.join(out_dir, "model.json"),
        "weights": os.path.join(out_dir, "weights.bin"),
        "dataset": os.path.join(out_dir, "dataset.qds"),
    }
    save_model(g, paths["manifest"], paths["weights"])
    save_dataset(build_desk_dataset(g, n_samples), paths["dataset"])
    return paths
