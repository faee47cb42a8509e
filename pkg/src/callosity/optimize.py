"""Parameter updates (SGD, Adam), the learning-rate schedule and the training loop."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, DataError, NumericError
from .layers import Network, l2_penalty, save_checkpoint

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    decay_rate: float = 0.95
    decay_steps: int = 1000
    batch_size: int = 50
    max_steps: int = 1000
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 42
    eval_every: int = 0  # 0 disables periodic validation
    checkpoint_every: int = 0
    checkpoint_path: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be > 0, got {self.lr}")
        if not 0 < self.decay_rate <= 1:
            raise ConfigError(f"decay_rate must lie in (0, 1], got {self.decay_rate}")
        if self.decay_steps < 1:
            raise ConfigError(f"decay_steps must be >= 1, got {self.decay_steps}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_steps < 0:
            raise ConfigError(f"max_steps must be >= 0, got {self.max_steps}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be sgd|adam, got {self.optimizer!r}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError(f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if not self.eps > 0:
            raise ConfigError(f"eps must be > 0, got {self.eps}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")

    def to_dict(self):
        return asdict(self)


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """lr0 * decay_rate ** (step / decay_steps), continuous exponent."""
    if step < 0:
        raise ConfigError(f"step must be >= 0, got {step}")
    return cfg.lr * cfg.decay_rate ** (step / cfg.decay_steps)


def sgd_step(w, grad, lr: float):
    grad = np.asarray(grad)
    if not np.all(np.isfinite(grad)):
        raise NumericError("sgd_step: non-finite gradient")
    if np.shape(w) != grad.shape:
        raise ConfigError(f"sgd_step: shape mismatch {np.shape(w)} vs {grad.shape}")
    return w - lr * grad


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def _adam_update(w, g, m, v, t, lr, beta1, beta2, eps):
    # in place on w, m, v; t is the index of this update (starts at 1)
    m *= beta1
    m += (1 - beta1) * g
    v *= beta2
    v += (1 - beta2) * (g * g)
    m_hat = m / (1 - beta1**t)
    v_hat = v / (1 - beta2**t)
    w -= lr * m_hat / (np.sqrt(v_hat) + eps)


def adam_step(w, grad, state: AdamState, cfg: TrainConfig, lr: float | None = None):
    """One Adam update; pure (inputs are not modified).

    ``w`` and ``grad`` may be single arrays or lists of arrays (one entry per
    parameter in ``state``). Returns ``(w_new, state_new)``.
    """
    if not cfg.eps > 0:
        raise ConfigError(f"Adam eps must be > 0, got {cfg.eps}")
    single = not isinstance(w, (list, tuple))
    ws = [np.array(w, dtype=float)] if single else [np.array(x, dtype=float) for x in w]
    gs = [np.asarray(grad)] if single else [np.asarray(g) for g in grad]
    if any(not np.all(np.isfinite(g)) for g in gs):
        raise NumericError("adam_step: non-finite gradient")
    m = [np.array(x) for x in state.m]
    v = [np.array(x) for x in state.v]
    t = state.t + 1
    step_lr = cfg.lr if lr is None else lr
    for wi, gi, mi, vi in zip(ws, gs, m, v):
        _adam_update(wi, gi, mi, vi, t, step_lr, cfg.beta1, cfg.beta2, cfg.eps)
    new_state = AdamState(m, v, t)
    return (ws[0] if single else ws), new_state


class Adam:
    """In-place Adam over a dict of named parameters (the training-loop path)."""

    def __init__(self, params: dict, cfg: TrainConfig):
        self.cfg = cfg
        self.state = AdamState.zeros_like(params.values())
        self.names = list(params)

    def step(self, params: dict, grads: dict, lr: float):
        self.state.t += 1
        c = self.cfg
        for name, m, v in zip(self.names, self.state.m, self.state.v):
            _adam_update(params[name], grads[name], m, v, self.state.t, lr, c.beta1, c.beta2, c.eps)


class SGD:
    def __init__(self, params: dict, cfg: TrainConfig):
        pass

    def step(self, params: dict, grads: dict, lr: float):
        for name, w in params.items():
            w -= lr * grads[name]


@dataclass
class History:
    records: list = field(default_factory=list)

    COLUMNS = ("step", "lr", "loss", "train_accuracy", "val_accuracy")

    def __len__(self):
        return len(self.records)

    def column(self, name):
        return [r[name] for r in self.records]

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(self.COLUMNS)
            for r in self.records:
                w.writerow(["" if r.get(c) is None else repr(r[c]) for c in self.COLUMNS])

    @classmethod
    def from_csv(cls, path) -> "History":
        recs = []
        with open(path, newline="") as f:
            for row in csv.DictReader(f):
                rec = {k: (None if v == "" else float(v)) for k, v in row.items()}
                rec["step"] = int(rec["step"])
                recs.append(rec)
        return cls(recs)


def iterate_minibatches(n: int, batch_size: int, seed: int):
    """Endless stream of index batches: a fresh permutation each epoch.

    The last, partial batch of an epoch is yielded as is.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    while True:
        perm = rng.permutation(n)
        for s in range(0, n, batch_size):
            yield perm[s : s + batch_size]


def train_loop(net: Network, images, labels, cfg: TrainConfig, callbacks=(),
               val=None, progress=None) -> History:
    """Mini-batch training of ``net`` in place.

    ``val`` is an optional ``(images, labels)`` pair scored every
    ``cfg.eval_every`` steps and at the end. Each callback is invoked as
    ``cb(step, record)`` with a copy of the history record. A non-finite loss
    aborts with ``NumericError`` after restoring the parameters of the last
    checkpoint (or of the initial state if none was written yet).
    """
    cfg.validate()
    images = np.asarray(images)
    labels = np.asarray(labels)
    if len(images) == 0:
        raise DataError("training set is empty")
    if len(images) != len(labels):
        raise DataError(f"{len(images)} images but {len(labels)} labels")
    history = History()
    if cfg.max_steps == 0:
        return history

    params = net.params
    opt = (Adam if cfg.optimizer == "adam" else SGD)(params, cfg)
    weights = {n: params[n] for n in net.weight_names()}
    drop_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[1])
    batches = iterate_minibatches(len(images), cfg.batch_size, cfg.seed)
    last_good = {k: v.copy() for k, v in params.items()}

    for step in range(cfg.max_steps):
        idx = next(batches)
        xb = images[idx]
        yb = labels[idx]
        lr = lr_schedule(step, cfg)
        logits = net.forward(xb, "train", rng=drop_rng)
        loss, dlogits = net.loss(logits, yb)
        if cfg.weight_decay:
            penalty, _ = l2_penalty(weights, cfg.weight_decay)
            loss += penalty
        if not math.isfinite(loss):
            net.set_params(last_good)
            raise NumericError(
                f"non-finite loss at step {step}; parameters restored to the last checkpoint"
            )
        grads = net.backward(dlogits)
        if cfg.weight_decay:
            for name, w in weights.items():
                grads[name] = grads[name] + cfg.weight_decay * w
        opt.step(params, grads, lr)

        rec = {
            "step": step + 1,
            "lr": lr,
            "loss": loss,
            "train_accuracy": float(np.mean(logits.argmax(axis=1) == yb)),
            "val_accuracy": None,
        }
        done = step + 1 == cfg.max_steps
        if val is not None and ((cfg.eval_every and (step + 1) % cfg.eval_every == 0) or done):
            rec["val_accuracy"] = net.accuracy(*val)
        history.records.append(rec)
        for cb in callbacks:
            cb(step + 1, dict(rec))
        if progress and (rec["val_accuracy"] is not None or (step + 1) % 100 == 0):
            progress(rec)
        if cfg.checkpoint_path and ((cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0) or done):
            save_checkpoint(net, cfg.checkpoint_path)
            last_good = {k: v.copy() for k, v in params.items()}
    return history
