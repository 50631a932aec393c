"""Shared utilities for the test suite.

Provides tiny per-layer-kind graphs for gradient checking, a central
finite-difference checker, and a numpy eigendecomposition oracle for
singular values (the production code never calls numpy's SVD/eigh; the
oracle exists only so tests can cross-check the hand-written kernels).
"""

from __future__ import annotations

import numpy as np

from energyprune.engine import cross_entropy, forward, backward, init_params, logits_node
from energyprune.graph import INPUT, LayerNode, ModelGraph
from energyprune.linalg import make_rng


# --- eigendecomposition oracle -------------------------------------------

def oracle_singular_values(a: np.ndarray) -> np.ndarray:
    """Singular values of a via eigvalsh of the Gram matrix."""
    a = np.asarray(a, dtype=np.float64)
    gram = a.T @ a if a.shape[0] >= a.shape[1] else a @ a.T
    ev = np.linalg.eigvalsh(gram)
    return np.sqrt(np.clip(ev, 0.0, None))[::-1]


def oracle_nuclear_norm(a: np.ndarray) -> float:
    return float(np.sum(oracle_singular_values(a)))


# --- tiny graphs, one per layer kind -------------------------------------

def _dense(g, nid, src, n_in, n_out):
    return g.add(LayerNode(nid, "Dense", {"in": n_in, "out": n_out},
                           {"w": np.zeros((n_out, n_in)),
                            "b": np.zeros(n_out)}, [src]))


def _conv(g, nid, src, c_in, c_out, k=3, stride=1, pad=1, bias=True):
    params = {"w": np.zeros((c_out, c_in, k, k))}
    if bias:
        params["b"] = np.zeros(c_out)
    return g.add(LayerNode(nid, "Conv2D",
                           {"in": c_in, "out": c_out, "k": k,
                            "stride": stride, "pad": pad,
                            "no_bias": not bias}, params, [src]))


def _bn(g, nid, src, c):
    return g.add(LayerNode(nid, "BatchNorm", {"channels": c, "eps": 1e-5},
                           {"gamma": np.ones(c), "beta": np.zeros(c),
                            "mean": np.zeros(c), "var": np.ones(c)}, [src]))


def _op(g, nid, kind, src, **attrs):
    srcs = src if isinstance(src, list) else [src]
    return g.add(LayerNode(nid, kind, attrs, {}, srcs))


def _finish(g, seed, n=4, classes=3):
    """Init params and draw a matching random batch."""
    init_params(g, seed)
    rng = make_rng(seed + 17)
    x = rng.normal(size=(n,) + g.input_shape)
    y = rng.integers(0, classes, size=n)
    return g, x, y


def graph_dense(seed, width=7):
    g = ModelGraph((5,))
    _dense(g, "h", INPUT, 5, width)
    _op(g, "r", "ReLU", "h")
    _dense(g, "out", "r", width, 3)
    return _finish(g, seed)


def graph_conv(seed, cfg=0):
    k, stride, pad, bias = [(3, 1, 1, True), (3, 2, 1, False),
                            (1, 1, 0, True)][cfg % 3]
    g = ModelGraph((2, 5, 5))
    _conv(g, "c", INPUT, 2, 4, k=k, stride=stride, pad=pad, bias=bias)
    _op(g, "gap", "GlobalAvgPool", "c")
    _dense(g, "out", "gap", 4, 3)
    return _finish(g, seed)


def graph_batchnorm(seed, cfg=0):
    # no ReLU after the BN: normalized activations cluster around zero,
    # so a ReLU here would put kinks inside the difference stencil
    g = ModelGraph((2, 4, 4))
    _conv(g, "c", INPUT, 2, 3 + cfg % 2)
    _bn(g, "bn", "c", 3 + cfg % 2)
    _op(g, "gap", "GlobalAvgPool", "bn")
    _dense(g, "out", "gap", 3 + cfg % 2, 3)
    return _finish(g, seed)


def graph_relu(seed, width=6):
    g = ModelGraph((4,))
    _dense(g, "h", INPUT, 4, width)
    _op(g, "r", "ReLU", "h")
    _dense(g, "out", "r", width, 3)
    return _finish(g, seed)


def graph_maxpool(seed, cfg=0):
    k, stride, pad = [(2, 2, 0), (3, 1, 1), (2, 1, 0)][cfg % 3]
    g = ModelGraph((2, 6, 6))
    _conv(g, "c", INPUT, 2, 3)
    _op(g, "p", "MaxPool", "c", k=k, stride=stride, pad=pad)
    _op(g, "gap", "GlobalAvgPool", "p")
    _dense(g, "out", "gap", 3, 3)
    return _finish(g, seed)


def graph_avgpool(seed, cfg=0):
    k, stride, pad = [(2, 2, 0), (3, 1, 1), (2, 1, 0)][cfg % 3]
    g = ModelGraph((2, 6, 6))
    _conv(g, "c", INPUT, 2, 3)
    _op(g, "p", "AvgPool", "c", k=k, stride=stride, pad=pad)
    _op(g, "gap", "GlobalAvgPool", "p")
    _dense(g, "out", "gap", 3, 3)
    return _finish(g, seed)


def graph_gap(seed, cfg=0):
    g = ModelGraph((2, 4 + cfg % 2, 4))
    _conv(g, "c", INPUT, 2, 4)
    _op(g, "gap", "GlobalAvgPool", "c")
    _dense(g, "out", "gap", 4, 3)
    return _finish(g, seed)


def graph_flatten(seed, cfg=0):
    g = ModelGraph((2, 4, 4))
    _conv(g, "c", INPUT, 2, 2 + cfg % 2)
    _op(g, "f", "Flatten", "c")
    _dense(g, "out", "f", (2 + cfg % 2) * 16, 3)
    return _finish(g, seed)


def graph_dropout(seed, cfg=0):
    g = ModelGraph((4,))
    _dense(g, "h", INPUT, 4, 8)
    _op(g, "r", "ReLU", "h")
    _op(g, "d", "Dropout", "r", p=[0.25, 0.5, 0.0][cfg % 3])
    _dense(g, "out", "d", 8, 3)
    return _finish(g, seed)


def graph_add(seed, cfg=0):
    g = ModelGraph((2, 4, 4))
    _conv(g, "a", INPUT, 2, 3)
    _conv(g, "b", INPUT, 2, 3, k=1, pad=0)
    _op(g, "add", "Add", ["a", "b"])
    _op(g, "gap", "GlobalAvgPool", "add")
    _dense(g, "out", "gap", 3, 3)
    return _finish(g, seed)


def graph_concat(seed, cfg=0):
    g = ModelGraph((2, 4, 4))
    _conv(g, "a", INPUT, 2, 2)
    _conv(g, "b", INPUT, 2, 3, k=1, pad=0)
    _op(g, "cat", "Concat", ["a", "b"], axis=1)
    _op(g, "gap", "GlobalAvgPool", "cat")
    _dense(g, "out", "gap", 5, 3)
    return _finish(g, seed)


def graph_softmax(seed, cfg=0):
    # mid-graph Softmax so its backward rule is exercised by the loss
    g = ModelGraph((4,))
    _dense(g, "h", INPUT, 4, 6)
    _op(g, "sm", "Softmax", "h")
    _dense(g, "out", "sm", 6, 3)
    return _finish(g, seed)


# Three configurations per kind. Seeds were checked to keep the central
# difference stencil clear of ReLU/MaxPool kinks at h=1e-5.
KIND_CONFIGS = {
    "Dense": [lambda: graph_dense(1), lambda: graph_dense(2, width=3),
              lambda: graph_dense(3, width=11)],
    "Conv2D": [lambda: graph_conv(4, 0), lambda: graph_conv(5, 1),
               lambda: graph_conv(6, 2)],
    "BatchNorm": [lambda: graph_batchnorm(7, 0), lambda: graph_batchnorm(8, 1),
                  lambda: graph_batchnorm(9, 0)],
    "ReLU": [lambda: graph_relu(10), lambda: graph_relu(11, width=4),
             lambda: graph_relu(12, width=9)],
    "MaxPool": [lambda: graph_maxpool(13, 0), lambda: graph_maxpool(14, 1),
                lambda: graph_maxpool(15, 2)],
    "AvgPool": [lambda: graph_avgpool(16, 0), lambda: graph_avgpool(17, 1),
                lambda: graph_avgpool(18, 2)],
    "GlobalAvgPool": [lambda: graph_gap(19, 0), lambda: graph_gap(20, 1),
                      lambda: graph_gap(21, 0)],
    "Flatten": [lambda: graph_flatten(22, 0), lambda: graph_flatten(23, 1),
                lambda: graph_flatten(24, 0)],
    "Dropout": [lambda: graph_dropout(25, 0), lambda: graph_dropout(26, 1),
                lambda: graph_dropout(27, 2)],
    "Add": [lambda: graph_add(28), lambda: graph_add(29),
            lambda: graph_add(30)],
    "Concat": [lambda: graph_concat(31), lambda: graph_concat(32),
               lambda: graph_concat(33)],
    "Softmax": [lambda: graph_softmax(34), lambda: graph_softmax(35),
                lambda: graph_softmax(36)],
}


def _loss(g, x, y, mode, seed):
    fwd = forward(g, x, mode=mode, seed=seed)
    return cross_entropy(fwd.activations[logits_node(g)], y)


def fd_max_rel_err(g, x, y, mode="train", seed=0, h=1e-5):
    """Worst per-tensor relative error between analytic and central
    finite-difference gradients over every trainable parameter."""
    _, pgrads, _, _ = backward(g, x, y, mode=mode, seed=seed)
    worst = 0.0
    for nid, name, arr in g.parameters():
        if name in ("mean", "var"):
            continue
        analytic = pgrads.get((nid, name))
        if analytic is None:
            continue
        numeric = np.zeros_like(arr)
        flat = arr.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = _loss(g, x, y, mode, seed)
            flat[i] = orig - h
            lm = _loss(g, x, y, mode, seed)
            flat[i] = orig
            nflat[i] = (lp - lm) / (2 * h)
        denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-8)
        worst = max(worst, np.linalg.norm(analytic - numeric) / denom)
    return worst
