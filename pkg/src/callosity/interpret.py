"""Model inspection: occlusion saliency, activation dumps, dead-unit detection."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .layers import Network

REFERENCE_SIZE = 256
REFERENCE_BOX = 16
REFERENCE_STRIDE = 8


def default_geometry(h: int, w: int) -> tuple[int, int]:
    """Box and stride scaled from 16/8 px at 256 px to the image's shorter side."""
    scale = min(h, w) / REFERENCE_SIZE
    return max(1, round(REFERENCE_BOX * scale)), max(1, round(REFERENCE_STRIDE * scale))


@dataclass
class SaliencyMap:
    heat: np.ndarray  # [gh, gw], p0 - p_occluded at each grid position
    box: int
    stride: int
    p0: float
    target: int
    overlay: np.ndarray = field(repr=False, default=None)  # [h, w] mean heat of covering boxes

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.heat.shape


def grid_positions(size: int, stride: int) -> np.ndarray:
    return np.arange(math.ceil(size / stride)) * stride


def saliency(net: Network, image, target: int, box: int | None = None, stride: int | None = None,
             fill: str = "zero", batch: int = 64) -> SaliencyMap:
    """Occlusion sensitivity of the ``target`` class probability.

    A ``box``-sized square (clipped at the border) is painted with 0 (or the
    image mean with ``fill="mean"``) at every grid position, top-left corners
    spaced ``stride`` apart. Positive heat means the region supports the class.
    """
    net._require_init()
    image = np.asarray(image, dtype=net.dtype)
    if image.ndim == 2:
        image = image[..., None]
    h, w = image.shape[:2]
    dbox, dstride = default_geometry(h, w)
    box = dbox if box is None else int(box)
    stride = dstride if stride is None else int(stride)
    if not 1 <= box <= min(h, w):
        raise ConfigError(f"box must lie in [1, {min(h, w)}], got {box}")
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    if not 0 <= target < net.spec.num_classes:
        raise ConfigError(f"target class {target} outside [0, {net.spec.num_classes})")
    if fill == "zero":
        value = 0.0
    elif fill == "mean":
        value = float(image.mean())
    else:
        raise ConfigError(f"fill must be zero|mean, got {fill!r}")

    p0 = float(net.predict_proba(image[None])[0, target])
    rows, cols = grid_positions(h, stride), grid_positions(w, stride)
    cells = [(r, c) for r in rows for c in cols]
    probs = np.empty(len(cells))
    for s in range(0, len(cells), batch):
        chunk = cells[s : s + batch]
        occluded = np.repeat(image[None], len(chunk), axis=0)
        for j, (r, c) in enumerate(chunk):
            occluded[j, r : r + box, c : c + box] = value
        probs[s : s + len(chunk)] = net.predict_proba(occluded)[:, target]
    heat = (p0 - probs).reshape(len(rows), len(cols))

    total = np.zeros((h, w))
    count = np.zeros((h, w))
    for (r, c), v in zip(cells, heat.ravel()):
        total[r : r + box, c : c + box] += v
        count[r : r + box, c : c + box] += 1
    overlay = np.divide(total, count, out=np.zeros_like(total), where=count > 0)
    return SaliencyMap(heat, box, stride, p0, int(target), overlay)


@dataclass
class LayerActivation:
    index: int
    kind: str
    raw: np.ndarray  # [h, w, c]

    @property
    def depth(self) -> int:
        return self.raw.shape[-1]

    def normalized(self) -> np.ndarray:
        """Each channel rescaled to [0, 1]; constant channels map to 0."""
        lo = self.raw.min(axis=(0, 1), keepdims=True)
        span = self.raw.max(axis=(0, 1), keepdims=True) - lo
        return np.divide(self.raw - lo, span, out=np.zeros_like(self.raw), where=span > 0)

    def stats(self) -> list[dict]:
        return [{"channel": c, "mean": float(self.raw[..., c].mean()), "max": float(self.raw[..., c].max())}
                for c in range(self.depth)]


@dataclass
class ActivationDump:
    layers: list  # LayerActivation, spatial layers in network order


def dump_activations(net: Network, image) -> ActivationDump:
    image = np.asarray(image, dtype=net.dtype)
    if image.ndim == 2:
        image = image[..., None]
    _, outs = net.forward(image[None], "infer", collect=True)
    layers = [LayerActivation(i, net.body[i].kind, out[0]) for i, out in enumerate(outs) if out.ndim == 4]
    return ActivationDump(layers)


@dataclass(frozen=True)
class UnitActivity:
    layer: int  # index of the conv/dense layer feeding the ReLU
    channel: int
    rate: float  # fraction of probes on which the unit fires anywhere
    dead: bool


def dead_neuron_report(net: Network, probes, batch: int = 100) -> list[UnitActivity]:
    """Activity of every channel of every ReLU-followed conv/dense layer.

    A channel is dead when its post-ReLU output is 0 for every probe (all
    spatial positions). Rates are per-probe "fired anywhere" frequencies.
    """
    probes = np.asarray(probes, dtype=net.dtype)
    if len(probes) == 0:
        raise DataError("probe set is empty")
    watched = [i for i in range(1, len(net.body))
               if net.body[i].kind == "relu" and net.body[i - 1].kind in ("conv", "dense")]
    fired = {i: [] for i in watched}
    peak = {i: None for i in watched}
    for s in range(0, len(probes), batch):
        _, outs = net.forward(probes[s : s + batch], "infer", collect=True)
        for i in watched:
            a = outs[i].reshape(len(outs[i]), -1, outs[i].shape[-1])
            fired[i].append((a > 0).any(axis=1))
            m = a.max(axis=(0, 1))
            peak[i] = m if peak[i] is None else np.maximum(peak[i], m)
    report = []
    for i in watched:
        f = np.concatenate(fired[i])
        for c in range(f.shape[1]):
            report.append(UnitActivity(i - 1, c, float(f[:, c].mean()), bool(peak[i][c] <= 0)))
    return report


# -- export -----------------------------------------------------------------------

def blue_red(values, limit: float | None = None) -> np.ndarray:
    """Map signed values to RGB: -limit -> blue, 0 -> white, +limit -> red."""
    v = np.asarray(values, dtype=np.float64)
    if limit is None:
        limit = float(np.abs(v).max())
    t = np.clip(v / limit, -1, 1) if limit > 0 else np.zeros_like(v)
    pos, neg = np.clip(t, 0, 1), np.clip(-t, 0, 1)
    return np.stack([1 - neg, 1 - pos - neg, 1 - pos], axis=-1)


def write_table(path, array):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        for row in np.atleast_2d(array):
            w.writerow([repr(float(x)) for x in row])


def tile_channels(act: np.ndarray, pad: int = 1) -> np.ndarray:
    """Arrange ``[h, w, c]`` channel images on a near-square grid (one 2-D image)."""
    h, w, c = act.shape
    cols = math.ceil(math.sqrt(c))
    rows = math.ceil(c / cols)
    out = np.zeros((rows * (h + pad) - pad, cols * (w + pad) - pad))
    for k in range(c):
        r, q = divmod(k, cols)
        out[r * (h + pad) : r * (h + pad) + h, q * (w + pad) : q * (w + pad) + w] = act[..., k]
    return out


def export_saliency(sm: SaliencyMap, out_dir, image=None, stem: str = "saliency") -> list[Path]:
    from .imaging import to_grayscale, write_image

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    limit = float(np.abs(sm.heat).max())
    written = [out / f"{stem}_grid.csv", out / f"{stem}_heat.png"]
    write_table(written[0], sm.heat)
    write_image(written[1], blue_red(sm.overlay, limit))
    if image is not None:
        gray = to_grayscale(np.asarray(image, dtype=np.float64))
        gray = (gray - gray.min()) / (np.ptp(gray) or 1.0)
        blend = 0.5 * blue_red(sm.overlay, limit) + 0.5 * gray[..., None]
        written.append(out / f"{stem}_overlay.png")
        write_image(written[-1], blend)
    return written


def export_activations(dump: ActivationDump, out_dir) -> list[Path]:
    from .imaging import write_image

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    stats_path = out / "activation_stats.csv"
    with open(stats_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["layer", "kind", "channel", "mean", "max"])
        for la in dump.layers:
            for s in la.stats():
                w.writerow([la.index, la.kind, s["channel"], repr(s["mean"]), repr(s["max"])])
            path = out / f"layer{la.index:02d}_{la.kind}.pgm"
            write_image(path, tile_channels(la.normalized()))
            written.append(path)
    written.append(stats_path)
    return written
