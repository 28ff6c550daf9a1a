"""Shared builders for test models and oracles."""

from __future__ import annotations

import numpy as np

from macfi.model import Dataset, LayerSpec, ModelGraph, reference_forward
from macfi.qtensor import QTensor


def mac_layer(rng, lid, kind, src, cin, cout, k, stride=1, pad=0, m=None):
    """conv/fc LayerSpec with random weights; m == weight_scale so the tensor
    scale is preserved, which keeps residual adds valid anywhere."""
    m = m if m is not None else 2.0 ** -int(rng.integers(6, 9))
    w = rng.integers(-16, 17, size=(cout, cin, k, k)).astype(np.int8)
    b = rng.integers(-1024, 1025, size=cout).astype(np.int32)
    return LayerSpec(id=lid, kind=kind, inputs=[src], k=k, stride=stride, pad=pad,
                     cout=cout, m=m, weight_scale=m, weights=w, bias=b)


def make_random_model(rng: np.random.Generator) -> ModelGraph:
    """Random small DAG: conv/relu/maxpool/residual-add body, gavgpool + fc head.

    Dims and channel counts stay <= 16. All scales are powers of two and every
    conv keeps m == weight_scale, so scales match wherever an add appears.
    """
    c = int(rng.integers(1, 9))
    h = int(rng.integers(3, 13))
    w = int(rng.integers(3, 13))
    scale = 2.0 ** -int(rng.integers(4, 8))
    layers: list[LayerSpec] = []
    cur, cur_c, cur_h, cur_w = "input", c, h, w
    idx = 0

    def push(layer, out_c, out_h, out_w):
        nonlocal cur, cur_c, cur_h, cur_w, idx
        layers.append(layer)
        cur, cur_c, cur_h, cur_w = layer.id, out_c, out_h, out_w
        idx += 1

    for _ in range(int(rng.integers(1, 5))):
        kind = rng.choice(["conv", "relu", "maxpool", "res"])
        if kind == "conv":
            pad = int(rng.integers(0, 2))
            kmax = min(cur_h, cur_w) + 2 * pad
            k = int(rng.integers(1, min(3, kmax) + 1))
            stride = int(rng.integers(1, 3))
            cout = int(rng.integers(1, 17))
            push(mac_layer(rng, f"l{idx}", "conv", cur, cur_c, cout, k, stride, pad),
                 cout,
                 (cur_h + 2 * pad - k) // stride + 1,
                 (cur_w + 2 * pad - k) // stride + 1)
        elif kind == "relu":
            push(LayerSpec(id=f"l{idx}", kind="relu", inputs=[cur]), cur_c, cur_h, cur_w)
        elif kind == "maxpool" and cur_h >= 2 and cur_w >= 2:
            push(LayerSpec(id=f"l{idx}", kind="maxpool", inputs=[cur], k=2, stride=2),
                 cur_c, cur_h // 2, cur_w // 2)
        elif kind == "res":
            skip = cur
            push(mac_layer(rng, f"l{idx}", "conv", cur, cur_c, cur_c, 3, 1, 1),
                 cur_c, cur_h, cur_w)
            push(LayerSpec(id=f"l{idx}", kind="relu", inputs=[cur]), cur_c, cur_h, cur_w)
            push(LayerSpec(id=f"l{idx}", kind="add", inputs=[cur, skip]),
                 cur_c, cur_h, cur_w)

    push(LayerSpec(id=f"l{idx}", kind="gavgpool", inputs=[cur]), cur_c, 1, 1)
    classes = int(rng.integers(2, 17))
    push(mac_layer(rng, f"l{idx}", "fc", cur, cur_c, classes, 1), classes, 1, 1)
    return ModelGraph(layers, (c, h, w), scale, cur, classes)


def random_input(rng: np.random.Generator, g: ModelGraph) -> QTensor:
    data = rng.integers(-128, 128, size=g.input_shape).astype(np.int8)
    return QTensor(data, g.input_scale)


def make_cin4_model() -> ModelGraph:
    """Every MAC layer has Cin=4, so lanes 4..7 never carry operands."""
    rng = np.random.default_rng(41)
    layers = [
        mac_layer(rng, "conv1", "conv", "input", 4, 4, 3, 1, 1, m=2.0 ** -7),
        LayerSpec(id="relu1", kind="relu", inputs=["conv1"]),
        LayerSpec(id="gap", kind="gavgpool", inputs=["relu1"]),
        mac_layer(rng, "fc", "fc", "gap", 4, 4, 1, m=2.0 ** -7),
    ]
    return ModelGraph(layers, (4, 6, 6), 2.0 ** -6, "fc", 4)


def make_dataset_for(g: ModelGraph, n: int, seed: int) -> Dataset:
    """Synthetic dataset labeled by the model's own fault-free predictions."""
    rng = np.random.default_rng(seed)
    samples = rng.integers(-128, 128, size=(n, *g.input_shape)).astype(np.int8)
    labels = np.empty(n, dtype=np.uint16)
    for i in range(n):
        _, logits = reference_forward(g, QTensor(samples[i], g.input_scale))
        labels[i] = int(np.argmax(logits))
    return Dataset(samples, labels, g.input_scale)


def zero_weight_copy(g: ModelGraph) -> ModelGraph:
    """Same graph with all conv/fc weights zeroed: the bias-only oracle.

    With every product forced to zero (all lanes StuckZero) the emulator
    must behave exactly like this model.
    """
    layers = []
    for layer in g.layers:
        if layer.kind in ("conv", "fc"):
            copy = LayerSpec(id=layer.id, kind=layer.kind, inputs=list(layer.inputs),
                             k=layer.k, stride=layer.stride, pad=layer.pad,
                             cout=layer.cout, m=layer.m, weight_scale=layer.weight_scale,
                             weights=np.zeros_like(layer.weights), bias=layer.bias.copy())
        else:
            copy = LayerSpec(id=layer.id, kind=layer.kind, inputs=list(layer.inputs),
                             k=layer.k, stride=layer.stride, pad=layer.pad)
        layers.append(copy)
    return ModelGraph(layers, g.input_shape, g.input_scale, g.output, g.classes)


def bias_only_accuracy(g: ModelGraph, ds: Dataset, indices=None) -> float:
    """Accuracy of the zero-weight (bias-only) reference model."""
    zg = zero_weight_copy(g)
    idx = range(len(ds)) if indices is None else indices
    correct = 0
    for i in idx:
        _, logits = reference_forward(zg, ds.sample(i))
        correct += int(np.argmax(logits)) == int(ds.labels[i])
    return correct / len(idx)
