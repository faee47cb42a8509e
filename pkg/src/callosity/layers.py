"""CNN layers with hand-derived backward passes, losses, and the network container.

Batches are ``[n, h, w, c]`` for spatial layers and ``[n, d]`` after ``flatten``.
Each layer caches what its backward pass needs during a *train* forward; an
*infer* forward drops those caches, so calling ``backward`` afterwards is a
``StateError``.
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError, DimensionError, NumericError, StateError

LAYER_KINDS = ("conv", "maxpool", "relu", "lrn", "dropout", "flatten", "dense", "softmax")
LOSSES = ("cross-entropy", "squared-error")

# Krizhevsky et al. constants; used whenever a config omits them.
LRN_DEFAULTS = dict(lrn_k=2.0, lrn_n=5, lrn_alpha=1e-4, lrn_beta=0.75)
BIAS_INIT = 0.1


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    channels: int | None = None  # conv output channels
    kernel: int | None = None  # conv kernel extent (square)
    window: int | None = None  # maxpool window
    stride: int | None = None  # conv default 1, maxpool default = window
    padding: str = "same"
    units: int | None = None  # dense
    p: float | None = None  # dropout probability
    lrn_k: float | None = None
    lrn_n: int | None = None
    lrn_alpha: float | None = None
    lrn_beta: float | None = None

    def __post_init__(self):
        k = self.kind
        if k not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {k!r}; expected one of {LAYER_KINDS}")
        if k == "conv":
            if not self.channels or self.channels < 1:
                raise ConfigError("conv layer needs channels >= 1")
            if not self.kernel or self.kernel < 1:
                raise ConfigError("conv layer needs kernel >= 1")
            if self.padding not in ("same", "valid"):
                raise ConfigError(f"conv padding must be same|valid, got {self.padding!r}")
            if self.padding == "same" and self.kernel % 2 == 0:
                raise ConfigError("'same' padding needs an odd kernel")
        if k == "maxpool" and (not self.window or self.window < 1):
            raise ConfigError("maxpool layer needs window >= 1")
        if self.stride is not None and self.stride < 1:
            raise ConfigError("stride must be >= 1")
        if k == "dense" and (not self.units or self.units < 1):
            raise ConfigError("dense layer needs units >= 1")
        if k == "dropout":
            if self.p is None or not 0.0 <= self.p < 1.0:
                raise ConfigError(f"dropout p must lie in [0, 1), got {self.p!r}")
        if k == "lrn":
            n = self.lrn_n if self.lrn_n is not None else LRN_DEFAULTS["lrn_n"]
            kk = self.lrn_k if self.lrn_k is not None else LRN_DEFAULTS["lrn_k"]
            if n < 1 or n % 2 == 0:
                raise ConfigError(f"LRN window n must be odd, got {n}")
            if kk <= 0:
                raise ConfigError(f"LRN k must be > 0, got {kk}")

    @property
    def effective_stride(self) -> int:
        if self.stride is not None:
            return self.stride
        return self.window if self.kind == "maxpool" else 1

    def lrn_params(self):
        return tuple(
            getattr(self, name) if getattr(self, name) is not None else default
            for name, default in LRN_DEFAULTS.items()
        )

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "kind" or v is None:
                continue
            if f.name == "padding" and self.kind != "conv":
                continue
            d[f.name] = v
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown layer fields {sorted(extra)} in {d}")
        return cls(**d)


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: tuple[int, int, int]
    layers: tuple[LayerSpec, ...]
    loss: str = "cross-entropy"
    name: str = "custom"
    description: str = ""
    shapes: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ConfigError(f"input_shape must be [h, w, c] positive, got {self.input_shape}")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if not self.layers:
            raise ConfigError("network needs at least one layer")
        for i, ls in enumerate(self.layers):
            if ls.kind == "softmax" and i != len(self.layers) - 1:
                raise ConfigError("softmax is only allowed as the final layer")
        object.__setattr__(self, "shapes", tuple(_infer_shapes(self)))
        if len(self.shapes[-1]) != 1:
            raise ConfigError(
                f"network must end in class scores of rank 1, got shape {self.shapes[-1]}"
            )

    @property
    def num_classes(self) -> int:
        return self.shapes[-1][0]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "input_shape": list(self.input_shape),
            "loss": self.loss,
            "layers": [ls.to_dict() for ls in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        try:
            layers = [LayerSpec.from_dict(x) for x in d["layers"]]
            return cls(
                input_shape=tuple(d["input_shape"]),
                layers=tuple(layers),
                loss=d.get("loss", "cross-entropy"),
                name=d.get("name", "custom"),
                description=d.get("description", ""),
            )
        except KeyError as e:
            raise ConfigError(f"network config missing field {e}") from None
        except TypeError as e:
            raise ConfigError(f"malformed network config: {e}") from None

    def hash(self) -> bytes:
        """SHA-256 over the topology (name/description excluded)."""
        d = self.to_dict()
        d.pop("name")
        d.pop("description")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).digest()

    def replace_layer(self, index: int, **changes) -> "NetworkSpec":
        layers = list(self.layers)
        layers[index] = LayerSpec(**{**asdict(layers[index]), **changes})
        return NetworkSpec(self.input_shape, tuple(layers), self.loss, self.name,
                           self.description)


def _infer_shapes(spec: NetworkSpec):
    shape = spec.input_shape
    out = []
    for i, ls in enumerate(spec.layers):
        where = f"layer {i} ({ls.kind})"
        if ls.kind in ("conv", "maxpool", "lrn") and len(shape) != 3:
            raise ConfigError(f"{where} needs a spatial [h,w,c] input, got {shape}")
        if ls.kind == "conv":
            h, w, _ = shape
            s = ls.effective_stride
            if ls.padding == "valid" and (ls.kernel > h or ls.kernel > w):
                raise ConfigError(f"{where}: kernel {ls.kernel} larger than input {shape}")
            shape = (T.conv_output_size(h, ls.kernel, s, ls.padding),
                     T.conv_output_size(w, ls.kernel, s, ls.padding), ls.channels)
        elif ls.kind == "maxpool":
            h, w, c = shape
            s = ls.effective_stride
            if ls.window > h or ls.window > w:
                raise ConfigError(f"{where}: window {ls.window} exceeds input {shape}")
            shape = ((h - ls.window) // s + 1, (w - ls.window) // s + 1, c)
        elif ls.kind == "flatten":
            shape = (math.prod(shape),)
        elif ls.kind == "dense":
            if len(shape) != 1:
                raise ConfigError(f"{where} needs a flat input; insert a flatten layer (got {shape})")
            shape = (ls.units,)
        out.append(shape)
    return out


# -- losses ------------------------------------------------------------------

def softmax(logits) -> np.ndarray:
    z = np.asarray(logits)
    if not np.all(np.isfinite(z)):
        raise NumericError("softmax got non-finite logits")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _labels_to_index(labels, n, k):
    labels = np.asarray(labels)
    if labels.ndim == 2:
        if labels.shape != (n, k):
            raise DimensionError(f"one-hot labels shape {labels.shape} != {(n, k)}")
        return labels.argmax(axis=1)
    labels = labels.astype(np.int64)
    if labels.shape != (n,):
        raise DimensionError(f"labels shape {labels.shape} != ({n},)")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise DataError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    return labels


def cross_entropy_loss(logits, labels):
    """Mean cross-entropy of softmax(logits) and its gradient w.r.t. the logits.

    ``labels`` are class indices or one-hot rows.
    """
    logits = np.asarray(logits)
    n, k = logits.shape
    idx = _labels_to_index(labels, n, k)
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsum - z[np.arange(n), idx]))
    grad = softmax(logits)
    grad[np.arange(n), idx] -= 1
    grad /= n
    return loss, grad


def squared_error_loss(output, target):
    """E = 1/2 * sum (t - o)^2 and dE/do = o - t."""
    output = np.asarray(output)
    target = np.asarray(target, dtype=output.dtype)
    if output.shape != target.shape:
        raise DimensionError(f"squared error shape mismatch {output.shape} vs {target.shape}")
    diff = output - target
    return 0.5 * float(np.sum(diff * diff)), diff


def l2_penalty(params, lam: float):
    """(lam/2) * sum w^2 over ``params`` and the matching gradient ``lam * w``."""
    if lam < 0:
        raise ConfigError(f"L2 lambda must be >= 0, got {lam}")
    arrays = params.values() if isinstance(params, dict) else params
    total = 0.5 * lam * sum(float(np.sum(np.square(w))) for w in arrays)
    if isinstance(params, dict):
        return total, {name: lam * w for name, w in params.items()}
    return total, [lam * w for w in params]


# -- layers ------------------------------------------------------------------

class Layer:
    kind = ""

    def __init__(self, spec: LayerSpec, in_shape, out_shape):
        self.spec = spec
        self.in_shape = in_shape
        self.out_shape = out_shape
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def init_params(self, rng, dtype):
        pass

    def forward(self, x, train: bool, rng=None):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def _cached(self):
        if self._cache is None:
            raise StateError(f"{self.kind}: backward called without a preceding train-mode forward")
        return self._cache


class Conv(Layer):
    kind = "conv"
    need_input_grad = True

    def init_params(self, rng, dtype):
        k, cin, cout = self.spec.kernel, self.in_shape[2], self.spec.channels
        std = math.sqrt(2.0 / (k * k * cin))
        self.params["w"] = (rng.standard_normal((k, k, cin, cout)) * std).astype(dtype)
        self.params["b"] = np.full(cout, BIAS_INIT, dtype=dtype)

    def forward(self, x, train, rng=None):
        s = self.spec
        out, cols = T.conv2d(x, self.params["w"], s.effective_stride, s.padding, return_cols=True)
        out += self.params["b"]
        self._cache = (cols, x.shape) if train else None
        return out

    def backward(self, dy):
        cols, x_shape = self._cached()
        s = self.spec
        dx, dw = T.conv2d_backward(dy, x_shape, self.params["w"], s.effective_stride, s.padding,
                                   cols=cols, need_input_grad=self.need_input_grad)
        self.grads["w"] = dw
        self.grads["b"] = dy.sum(axis=(0, 1, 2))
        return dx


class MaxPool(Layer):
    kind = "maxpool"

    def forward(self, x, train, rng=None):
        w, s = self.spec.window, self.spec.effective_stride
        out, arg = T.maxpool2d(x, w, s, local_argmax=True)
        self._cache = (arg, x.shape) if train else None
        return out

    def backward(self, dy):
        arg, x_shape = self._cached()
        return T.maxpool2d_backward(dy, arg, x_shape, self.spec.window, self.spec.effective_stride)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train, rng=None):
        self._cache = (x > 0) if train else None
        return np.maximum(x, 0)

    def backward(self, dy):
        return dy * self._cached()


def _channel_window_sum(sq, n):
    # sum over channels c-n//2 .. c+n//2 (clipped at the ends)
    half = n // 2
    c = sq.shape[-1]
    csum = np.cumsum(sq, axis=-1)
    csum = np.concatenate([np.zeros_like(csum[..., :1]), csum], axis=-1)
    hi = np.minimum(np.arange(c) + half + 1, c)
    lo = np.maximum(np.arange(c) - half, 0)
    return csum[..., hi] - csum[..., lo]


def lrn_forward(x, k=2.0, n=5, alpha=1e-4, beta=0.75):
    """Cross-channel local response normalization.

    b_c = a_c / (k + alpha * sum_{c' near c} a_{c'}^2) ** beta, window n centred on c.
    Returns ``(b, scale)`` where ``scale`` is the bracketed base, needed by backward.
    """
    scale = k + alpha * _channel_window_sum(x * x, n)
    return x * scale ** (-beta), scale


def lrn_backward(dy, x, scale, n=5, alpha=1e-4, beta=0.75):
    # d b_c / d a_j = delta_cj s_c^-beta - 2 alpha beta a_c a_j s_c^(-beta-1) [j in win(c)]
    # the window relation is symmetric, so the second term is a window sum too.
    t = dy * x * scale ** (-beta - 1)
    return dy * scale ** (-beta) - 2 * alpha * beta * x * _channel_window_sum(t, n)


class LRN(Layer):
    kind = "lrn"

    def forward(self, x, train, rng=None):
        k, n, alpha, beta = self.spec.lrn_params()
        with np.errstate(over="ignore"):
            out, scale = lrn_forward(x, k, n, alpha, beta)
        if not np.all(np.isfinite(scale)):
            raise NumericError("non-finite normalisation term in lrn layer")
        self._cache = (x, scale) if train else None
        return out.astype(x.dtype, copy=False)

    def backward(self, dy):
        x, scale = self._cached()
        _, n, alpha, beta = self.spec.lrn_params()
        return lrn_backward(dy, x, scale, n, alpha, beta).astype(dy.dtype, copy=False)


def dropout_mask(shape, p, rng, dtype=np.float64):
    """Inverted-dropout mask: 0 with probability p, 1/(1-p) otherwise."""
    keep = rng.random(shape) >= p
    return keep.astype(dtype) / (1.0 - p)


class Dropout(Layer):
    """Inverted dropout. ``fixed_mask`` pins the mask (used by gradient checks)."""

    kind = "dropout"
    fixed_mask = None

    def forward(self, x, train, rng=None):
        p = self.spec.p
        if not train or p == 0:
            self._cache = np.ones((), dtype=x.dtype) if train else None
            return x
        if self.fixed_mask is not None:
            mask = np.asarray(self.fixed_mask, dtype=x.dtype)
        else:
            if rng is None:
                raise StateError("dropout in train mode needs an rng")
            mask = dropout_mask(x.shape, p, rng, x.dtype)
        self._cache = mask
        return x * mask

    def backward(self, dy):
        return dy * self._cached()


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, train, rng=None):
        self._cache = x.shape if train else None
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._cached())


class Dense(Layer):
    kind = "dense"
    need_input_grad = True

    def init_params(self, rng, dtype):
        din, units = self.in_shape[0], self.spec.units
        std = math.sqrt(2.0 / din)
        self.params["w"] = (rng.standard_normal((din, units)) * std).astype(dtype)
        self.params["b"] = np.full(units, BIAS_INIT, dtype=dtype)

    def forward(self, x, train, rng=None):
        self._cache = x if train else None
        return x @ self.params["w"] + self.params["b"]

    def backward(self, dy):
        x = self._cached()
        self.grads["w"] = x.T @ dy
        self.grads["b"] = dy.sum(axis=0)
        if not self.need_input_grad:
            return None
        return dy @ self.params["w"].T


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x, train, rng=None):
        y = softmax(x)
        self._cache = y if train else None
        return y

    def backward(self, dy):
        y = self._cached()
        return y * (dy - np.sum(dy * y, axis=1, keepdims=True))


_LAYER_CLASSES = {c.kind: c for c in (Conv, MaxPool, ReLU, LRN, Dropout, Flatten, Dense, Softmax)}


class Network:
    """Layer stack plus parameters: the mutable training state of one model.

    With cross-entropy loss a trailing ``softmax`` layer is fused into the loss,
    so ``forward`` always returns pre-softmax logits in that case.
    """

    def __init__(self, spec: NetworkSpec, dtype=np.float64, seed: int | None = None):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.layers: list[Layer] = []
        shape = spec.input_shape
        for ls, out_shape in zip(spec.layers, spec.shapes):
            self.layers.append(_LAYER_CLASSES[ls.kind](ls, shape, out_shape))
            shape = out_shape
        fuse = spec.loss == "cross-entropy" and spec.layers[-1].kind == "softmax"
        self.body = self.layers[:-1] if fuse else self.layers
        # nothing below the first parametric layer needs a gradient
        self._stop = 0
        for i, layer in enumerate(self.body):
            if layer.kind in ("conv", "dense"):
                layer.need_input_grad = False
                self._stop = i
                break
        self.initialized = False
        self.rng = None
        if seed is not None:
            self.init_params(seed)

    def init_params(self, seed: int):
        ss = np.random.SeedSequence(seed)
        init_ss, drop_ss = ss.spawn(2)
        rng = np.random.default_rng(init_ss)
        for layer in self.layers:
            layer.init_params(rng, self.dtype)
        self.rng = np.random.default_rng(drop_ss)
        self.initialized = True
        return self

    @property
    def params(self) -> dict[str, np.ndarray]:
        """Parameter arrays in declaration order, keyed ``"<layer index>.<name>"``."""
        out = {}
        for i, layer in enumerate(self.layers):
            for name, arr in layer.params.items():
                out[f"{i}.{name}"] = arr
        return out

    def weight_names(self) -> list[str]:
        return [name for name in self.params if name.endswith(".w")]

    def set_params(self, values: dict[str, np.ndarray]):
        current = self.params
        if set(values) != set(current):
            raise DataError(f"parameter names differ: {sorted(values)} vs {sorted(current)}")
        for name, arr in values.items():
            i, pname = name.split(".")
            if arr.shape != current[name].shape:
                raise DimensionError(f"{name}: shape {arr.shape} != {current[name].shape}")
            self.layers[int(i)].params[pname] = np.array(arr, dtype=self.dtype)
        self.initialized = True

    def _require_init(self):
        if not self.initialized:
            raise StateError("network parameters are not initialized (call init_params or load a checkpoint)")

    def forward(self, batch, mode: str = "infer", rng=None, collect=False):
        """Run the batch ``[n, h, w, c]`` through the network.

        Returns logits ``[n, classes]``; with ``collect=True`` also the list of
        every layer's output.
        """
        self._require_init()
        if mode not in ("train", "infer"):
            raise ConfigError(f"mode must be train|infer, got {mode!r}")
        x = np.asarray(batch, dtype=self.dtype)
        if x.shape[1:] != self.spec.input_shape:
            raise DimensionError(
                f"batch shape {x.shape} does not match network input {self.spec.input_shape}"
            )
        train = mode == "train"
        if train and rng is None:
            rng = self.rng
        outs = []
        for i, layer in enumerate(self.body):
            x = layer.forward(x, train, rng)
            if not np.all(np.isfinite(x)):
                raise NumericError(f"non-finite activation in layer {i} ({layer.kind})")
            if collect:
                outs.append(x)
        if not train:
            for layer in self.body:
                layer._cache = None
        return (x, outs) if collect else x

    def backward(self, dlogits) -> dict[str, np.ndarray]:
        """Backpropagate d(loss)/d(logits); returns gradients for every parameter."""
        self._require_init()
        g = np.asarray(dlogits, dtype=self.dtype)
        for layer in reversed(self.body[self._stop :]):
            if layer._cache is None:
                raise StateError(f"backward before a train-mode forward ({layer.kind})")
            g = layer.backward(g)
        grads = {}
        for i, layer in enumerate(self.layers):
            for name in layer.params:
                grads[f"{i}.{name}"] = layer.grads[name]
        return grads

    def loss(self, output, labels):
        """Loss and d(loss)/d(output) for the configured loss.

        Squared error compares against one-hot targets and is averaged over the
        batch so both losses have comparable scale.
        """
        if self.spec.loss == "cross-entropy":
            return cross_entropy_loss(output, labels)
        n, k = output.shape
        idx = _labels_to_index(labels, n, k)
        target = np.zeros_like(output)
        target[np.arange(n), idx] = 1
        e, g = squared_error_loss(output, target)
        return e / n, g / n

    def predict_proba(self, batch, chunk: int = 500) -> np.ndarray:
        batch = np.asarray(batch)
        out = []
        for s in range(0, len(batch), chunk):
            logits = self.forward(batch[s : s + chunk], "infer")
            if self.spec.loss == "cross-entropy":
                logits = softmax(logits)
            out.append(logits)
        return np.concatenate(out) if out else np.zeros((0, self.spec.num_classes))

    def predict(self, batch, chunk: int = 500) -> np.ndarray:
        return self.predict_proba(batch, chunk).argmax(axis=1)

    def accuracy(self, images, labels, chunk: int = 500) -> float:
        return float(np.mean(self.predict(images, chunk) == np.asarray(labels)))


# -- config files & checkpoints ------------------------------------------------

PRESETS = ("mnist", "dumbnet-simple", "deepsense-like")


def load_network_spec(name_or_path) -> NetworkSpec:
    """Load a JSON network config, or a shipped preset by name."""
    if str(name_or_path) in PRESETS:
        text = resources.files("callosity").joinpath(f"presets/{name_or_path}.json").read_text()
    else:
        path = Path(name_or_path)
        if not path.exists():
            raise ConfigError(f"no preset or config file named {name_or_path!r} (presets: {PRESETS})")
        text = path.read_text()
    try:
        return NetworkSpec.from_dict(json.loads(text))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{name_or_path}: invalid JSON: {e}") from None


def save_network_spec(spec: NetworkSpec, path):
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2) + "\n")


MAGIC = b"CALLO1"
CHECKPOINT_VERSION = 1


def save_checkpoint(net: Network, path):
    """Binary checkpoint: magic, version, topology hash, then float32 LE tensors."""
    net._require_init()
    params = net.params
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<H", CHECKPOINT_VERSION))
        f.write(net.spec.hash())
        f.write(struct.pack("<I", len(params)))
        for arr in params.values():
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path, spec: NetworkSpec, dtype=np.float64) -> Network:
    data = Path(path).read_bytes()
    if data[:6] != MAGIC:
        raise DataError(f"{path}: not a checkpoint (bad magic)")
    try:
        (version,) = struct.unpack_from("<H", data, 6)
        if version != CHECKPOINT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        digest = data[8:40]
        if digest != spec.hash():
            raise DataError(f"{path}: checkpoint was written for a different network topology")
        (count,) = struct.unpack_from("<I", data, 40)
        off = 44
        arrays = []
        for _ in range(count):
            (ndim,) = struct.unpack_from("<B", data, off)
            shape = struct.unpack_from(f"<{ndim}I", data, off + 1)
            off += 1 + 4 * ndim
            size = math.prod(shape)
            if off + 4 * size > len(data):
                raise DataError(f"{path}: truncated checkpoint")
            arrays.append(np.frombuffer(data, "<f4", size, off).reshape(shape))
            off += 4 * size
    except struct.error:
        raise DataError(f"{path}: truncated checkpoint") from None
    if off != len(data):
        raise DataError(f"{path}: trailing bytes after last tensor")
    net = Network(spec, dtype=dtype, seed=0)
    names = list(net.params)
    if len(names) != len(arrays):
        raise DataError(f"{path}: expected {len(names)} tensors, found {len(arrays)}")
    net.set_params(dict(zip(names, arrays)))
    return net
