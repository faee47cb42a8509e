"""Central finite-difference checks for every layer's hand-written backward pass.

All checks run in float64. A layer is probed through the scalar objective
``L = sum(R * forward(x))`` with a random ``R``, so ``dL/dout = R``.
"""
from __future__ import annotations

import time

import numpy as np

from .layers import (
    LRN,
    Conv,
    Dense,
    Dropout,
    Flatten,
    LayerSpec,
    MaxPool,
    Network,
    NetworkSpec,
    ReLU,
    Softmax,
    cross_entropy_loss,
    dropout_mask,
    l2_penalty,
    squared_error_loss,
)

STEP = 1e-3
TOLERANCE = 1e-4


def numerical_gradient(f, x: np.ndarray, h: float = STEP) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. every entry of ``x`` (mutated and restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def relative_error(analytic, numeric) -> float:
    """||a - n|| / (||a|| + ||n||), 0 when both vanish."""
    a, n = np.asarray(analytic, dtype=float), np.asarray(numeric, dtype=float)
    denom = np.linalg.norm(a) + np.linalg.norm(n)
    return 0.0 if denom == 0 else float(np.linalg.norm(a - n) / denom)


def check_layer(layer, x, rng, h=STEP) -> float:
    """Worst relative error over the input and every parameter of ``layer``."""
    out = layer.forward(x, True, rng)
    r = np.random.default_rng(0).standard_normal(out.shape)
    dx = layer.backward(r)

    def objective():
        return float(np.sum(r * layer.forward(x, True, rng)))

    errors = []
    if dx is not None:
        errors.append(relative_error(dx, numerical_gradient(objective, x, h)))
    analytic = {k: v.copy() for k, v in layer.grads.items()}
    for name, p in layer.params.items():
        errors.append(relative_error(analytic[name], numerical_gradient(objective, p, h)))
    return max(errors)


def _spread_values(rng, shape, gap=0.05):
    """Distinct values spaced well beyond the FD step (no pooling ties, no ReLU kinks)."""
    n = int(np.prod(shape))
    vals = (rng.permutation(n) - n / 2) * gap + gap / 2
    return vals.reshape(shape)


def _conv_instance(rng):
    k = int(rng.choice([1, 3, 5]))
    padding = str(rng.choice(["same", "valid"]))
    h, w = int(rng.integers(k, 7)), int(rng.integers(k, 7))
    cin, cout, stride = int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 3))
    layer = Conv(LayerSpec("conv", channels=cout, kernel=k, stride=stride, padding=padding),
                 (h, w, cin), None)
    layer.init_params(rng, np.float64)
    layer.params["b"] = rng.standard_normal(cout)
    return layer, rng.standard_normal((2, h, w, cin))


def _pool_instance(rng):
    window, stride = int(rng.integers(2, 4)), int(rng.integers(1, 4))
    h, w = int(rng.integers(window, 8)), int(rng.integers(window, 8))
    layer = MaxPool(LayerSpec("maxpool", window=window, stride=stride), (h, w, 2), None)
    return layer, _spread_values(rng, (2, h, w, 2))


def _dense_instance(rng):
    din, units = int(rng.integers(1, 8)), int(rng.integers(1, 6))
    layer = Dense(LayerSpec("dense", units=units), (din,), None)
    layer.init_params(rng, np.float64)
    layer.params["b"] = rng.standard_normal(units)
    return layer, rng.standard_normal((3, din))


def _relu_instance(rng):
    return ReLU(LayerSpec("relu"), None, None), _spread_values(rng, (2, 3, 4, 2))


def _lrn_instance(rng):
    n = int(rng.choice([1, 3, 5]))
    # large alpha so the normalising term is far from negligible
    spec = LayerSpec("lrn", lrn_n=n, lrn_k=float(rng.uniform(1, 3)), lrn_alpha=float(rng.uniform(0.05, 1)),
                     lrn_beta=float(rng.uniform(0.5, 1)))
    c = int(rng.integers(1, 8))
    return LRN(spec, None, None), rng.standard_normal((2, 3, 3, c))


def _dropout_instance(rng):
    p = float(rng.uniform(0.1, 0.9))
    layer = Dropout(LayerSpec("dropout", p=p), None, None)
    x = rng.standard_normal((4, 6))
    layer.fixed_mask = dropout_mask(x.shape, p, rng)
    return layer, x


def _flatten_instance(rng):
    return Flatten(LayerSpec("flatten"), None, None), rng.standard_normal((2, 3, 2, 2))


def _softmax_instance(rng):
    return Softmax(LayerSpec("softmax"), None, None), rng.standard_normal((3, 5)) * 2


LAYER_CASES = {
    "conv": _conv_instance,
    "maxpool": _pool_instance,
    "dense": _dense_instance,
    "relu": _relu_instance,
    "lrn": _lrn_instance,
    "dropout": _dropout_instance,
    "flatten": _flatten_instance,
    "softmax": _softmax_instance,
}


def check_cross_entropy(rng) -> float:
    n, k = int(rng.integers(1, 6)), int(rng.integers(2, 8))
    z = rng.standard_normal((n, k)) * 3
    y = rng.integers(0, k, n)
    _, g = cross_entropy_loss(z, y)
    return relative_error(g, numerical_gradient(lambda: cross_entropy_loss(z, y)[0], z))


def check_squared_error(rng) -> float:
    o = rng.standard_normal((3, 4))
    t = rng.standard_normal((3, 4))
    _, g = squared_error_loss(o, t)
    return relative_error(g, numerical_gradient(lambda: squared_error_loss(o, t)[0], o))


def check_l2(rng) -> float:
    params = {"a": rng.standard_normal((3, 2)), "b": rng.standard_normal(4)}
    lam = float(rng.uniform(0, 2))
    _, grads = l2_penalty(params, lam)
    return max(relative_error(grads[k], numerical_gradient(lambda: l2_penalty(params, lam)[0], params[k]))
               for k in params)


LOSS_CASES = {"cross-entropy": check_cross_entropy, "squared-error": check_squared_error, "l2": check_l2}


def small_network(loss="cross-entropy", seed=0) -> Network:
    spec = NetworkSpec.from_dict({
        "input_shape": [6, 6, 2],
        "loss": loss,
        "layers": [
            {"kind": "conv", "channels": 3, "kernel": 3},
            {"kind": "lrn", "lrn_alpha": 0.3},
            {"kind": "relu"},
            {"kind": "maxpool", "window": 2},
            {"kind": "flatten"},
            {"kind": "dense", "units": 4},
        ],
    })
    return Network(spec, dtype=np.float64, seed=seed)


def check_network(rng, loss="cross-entropy") -> float:
    """Whole-network parameter gradients (every layer type chained) vs finite differences."""
    net = small_network(loss, int(rng.integers(2**31)))
    x = rng.standard_normal((3, 6, 6, 2))
    y = rng.integers(0, 4, 3)

    def objective():
        return net.loss(net.forward(x, "train"), y)[0]

    logits = net.forward(x, "train")
    _, d = net.loss(logits, y)
    grads = net.backward(d)
    params = net.params
    return max(relative_error(grads[k], numerical_gradient(objective, params[k])) for k in params)


def run_suite(instances: int = 20, seed: int = 0) -> dict:
    """Worst relative error per case over ``instances`` random draws, plus wall time."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    worst = {}
    for name, make in LAYER_CASES.items():
        worst[name] = max(check_layer(*make(rng), rng) for _ in range(instances))
    for name, check in LOSS_CASES.items():
        worst[name] = max(check(rng) for _ in range(instances))
    worst["network"] = max(check_network(rng) for _ in range(max(2, instances // 10)))
    return {"worst": worst, "seconds": time.perf_counter() - t0, "instances": instances}
