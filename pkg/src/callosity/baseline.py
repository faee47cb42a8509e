"""kNN classification on unrolled pixels, with PCA and LDA feature reduction."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, DegenerateDataError, DimensionError

METRICS = ("euclidean", "chebyshev", "minkowski")
VARIANTS = ("RAW", "PCA", "PCA+LDA", "PCA+LDA-Chebyshev")

# ITU-R BT.601 luma
LUMA = np.array([0.299, 0.587, 0.114])


def to_gray(images: np.ndarray) -> np.ndarray:
    images = np.asarray(images)
    if images.ndim >= 3 and images.shape[-1] == 3:
        return images @ LUMA
    if images.ndim >= 3 and images.shape[-1] == 1:
        return images[..., 0]
    return images


def unroll(image) -> np.ndarray:
    """Row-major flattening of a grayscale ``[h, w]`` image (or a batch of them)."""
    image = np.asarray(image)
    if image.ndim == 2:
        return image.reshape(-1)
    return image.reshape(image.shape[0], -1)


def features_from_images(images) -> np.ndarray:
    """Grayscale and unroll a batch ``[n, h, w(, c)]`` into ``[n, h*w]``."""
    return unroll(to_gray(images)).astype(np.float64)


def _check_metric(metric, p):
    if metric not in METRICS:
        raise ConfigError(f"unknown metric {metric!r}; expected one of {METRICS}")
    if metric == "minkowski" and not p >= 1:
        raise ConfigError(f"Minkowski p must be >= 1, got {p}")


def distance(a, b, metric: str = "euclidean", p: float = 2.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_metric(metric, p)
    if a.shape != b.shape:
        raise DimensionError(f"distance between vectors of length {a.shape} and {b.shape}")
    diff = np.abs(a - b)
    if metric == "euclidean":
        return float(np.sqrt(np.sum(diff * diff)))
    if metric == "chebyshev":
        return float(diff.max()) if diff.size else 0.0
    return float(np.sum(diff**p) ** (1.0 / p))


def _exact_rows(q, x, metric, p):
    # q [m, d], x [n, d] -> [m, n], computed from coordinate differences
    diff = np.abs(q[:, None, :] - x[None, :, :])
    if metric == "chebyshev":
        return diff.max(axis=2)
    if metric == "euclidean" or p == 2:
        return np.sqrt(np.einsum("mnd,mnd->mn", diff, diff))
    return np.sum(diff**p, axis=2) ** (1.0 / p)


def pairwise_distances(queries, train, metric="euclidean", p=2.0, budget=2**24):
    """Exact distance matrix ``[m, n]``, chunked to bound memory."""
    q = np.asarray(queries, dtype=np.float64)
    x = np.asarray(train, dtype=np.float64)
    _check_metric(metric, p)
    if q.shape[1] != x.shape[1]:
        raise DimensionError(f"feature length mismatch: {q.shape[1]} vs {x.shape[1]}")
    rows = max(1, budget // max(1, x.shape[0] * x.shape[1]))
    return np.concatenate([_exact_rows(q[s : s + rows], x, metric, p)
                           for s in range(0, len(q), rows)]) if len(q) else np.zeros((0, len(x)))


@dataclass(frozen=True)
class KnnModel:
    train: np.ndarray
    labels: np.ndarray
    k: int = 1
    metric: str = "euclidean"
    p: float = 2.0

    def __post_init__(self):
        _check_metric(self.metric, self.p)
        if self.train.ndim != 2:
            raise DimensionError(f"training matrix must be [n, d], got {self.train.shape}")
        if len(self.train) != len(self.labels):
            raise DataError(f"{len(self.train)} samples but {len(self.labels)} labels")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if len(self.train) and self.k > len(self.train):
            raise ConfigError(f"k={self.k} exceeds the {len(self.train)} training samples")


def knn_fit(train, labels, k=1, metric="euclidean", p=2.0) -> KnnModel:
    return KnnModel(np.asarray(train, dtype=np.float64), np.asarray(labels, dtype=np.int64), k, metric, p)


def _vote(labels, dists):
    """Majority label; ties -> smaller summed distance, then smaller class id."""
    classes = np.unique(labels)
    counts = np.array([np.sum(labels == c) for c in classes])
    sums = np.array([dists[labels == c].sum() for c in classes])
    best = counts.max()
    cand = np.flatnonzero(counts == best)
    cand = cand[sums[cand] == sums[cand].min()]
    return int(classes[cand].min())


def _neighbors(model: KnnModel, queries, k):
    """Indices and exact distances of the k nearest training points per query.

    Ordering is by (distance, training index). Euclidean-type metrics on many
    points prefilter candidates with the ||a||^2 + ||b||^2 - 2ab expansion and
    then re-rank them by exactly computed distances.
    """
    q = np.asarray(queries, dtype=np.float64)
    x = model.train
    n = len(x)
    l2 = model.metric == "euclidean" or (model.metric == "minkowski" and model.p == 2)
    if not l2 or n <= 2048:
        d = pairwise_distances(q, x, model.metric, model.p)
        order = np.argsort(d, axis=1, kind="stable")[:, :k]
        return order, np.take_along_axis(d, order, axis=1)
    pool = min(n, k + 16)
    xsq = np.einsum("nd,nd->n", x, x)
    idx_out = np.empty((len(q), k), dtype=np.int64)
    dist_out = np.empty((len(q), k))
    chunk = max(1, 2**24 // n)
    for s in range(0, len(q), chunk):
        qc = q[s : s + chunk]
        approx = xsq[None, :] - 2.0 * (qc @ x.T)
        cand = np.argpartition(approx, pool - 1, axis=1)[:, :pool]
        cand.sort(axis=1)
        diff = qc[:, None, :] - x[cand]
        exact = np.sqrt(np.einsum("mkd,mkd->mk", diff, diff))
        order = np.argsort(exact, axis=1, kind="stable")[:, :k]
        idx_out[s : s + chunk] = np.take_along_axis(cand, order, axis=1)
        dist_out[s : s + chunk] = np.take_along_axis(exact, order, axis=1)
    return idx_out, dist_out


def knn_classify(model: KnnModel, query):
    """Label of one query plus its neighbor list ``[(train index, distance, label), ...]``."""
    if len(model.train) == 0:
        raise DataError("kNN model has no training samples")
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (model.train.shape[1],):
        raise DimensionError(f"query length {query.shape} != feature length {model.train.shape[1]}")
    idx, dist = _neighbors(model, query[None], model.k)
    labs = model.labels[idx[0]]
    neighbors = [(int(i), float(d), int(c)) for i, d, c in zip(idx[0], dist[0], labs)]
    return _vote(labs, dist[0]), neighbors


def knn_predict(model: KnnModel, queries) -> np.ndarray:
    if len(model.train) == 0:
        raise DataError("kNN model has no training samples")
    queries = np.asarray(queries, dtype=np.float64)
    if queries.ndim != 2 or queries.shape[1] != model.train.shape[1]:
        raise DimensionError(f"queries {queries.shape} vs feature length {model.train.shape[1]}")
    idx, dist = _neighbors(model, queries, model.k)
    labs = model.labels[idx]
    return np.array([_vote(labs[i], dist[i]) for i in range(len(queries))], dtype=np.int64)


# -- PCA -----------------------------------------------------------------------

@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray  # [d]
    components: np.ndarray  # [d, r], orthonormal columns
    explained_variance: np.ndarray  # [r], descending
    total_variance: float

    @property
    def n_components(self) -> int:
        return self.components.shape[1]


def _fix_signs(vecs):
    # deterministic orientation: largest-magnitude entry of each column positive
    pivot = np.abs(vecs).argmax(axis=0)
    signs = np.sign(vecs[pivot, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1
    return vecs * signs


def pca_fit(data, n_components=None) -> PcaModel:
    """Principal components of ``data`` ``[n, d]`` from the sample covariance.

    ``n_components`` is a count, a variance fraction in (0, 1), or ``None`` for
    every component with non-zero variance. When d > n the n x n Gram matrix is
    decomposed instead of the d x d covariance.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"PCA data must be [n, d], got {x.shape}")
    n, d = x.shape
    if n < 2:
        raise DataError("PCA needs at least 2 samples")
    mean = x.mean(axis=0)
    xc = x - mean
    total = float(np.sum(xc * xc) / (n - 1))
    if total <= 0:
        raise DegenerateDataError("PCA: data has zero variance")
    if d > n:
        gram = xc @ xc.T / (n - 1)
        vals, u = np.linalg.eigh(gram)
        vals, u = vals[::-1], u[:, ::-1]
        keep = vals > vals[0] * 1e-12
        vals, u = vals[keep], u[:, keep]
        vecs = xc.T @ u / np.sqrt((n - 1) * vals)
    else:
        cov = xc.T @ xc / (n - 1)
        vals, vecs = np.linalg.eigh(cov)
        vals, vecs = vals[::-1], vecs[:, ::-1]
    vals = np.clip(vals, 0, None)
    max_r = min(n - 1, d)
    if n_components is None:
        r = min(max_r, int(np.sum(vals > vals[0] * 1e-12)))
    elif isinstance(n_components, float) and 0 < n_components < 1:
        frac = np.cumsum(vals) / total
        r = int(np.searchsorted(frac, n_components - 1e-12) + 1)
        r = min(r, max_r, len(vals))
    else:
        r = int(n_components)
        if not 1 <= r <= max_r:
            raise ConfigError(f"n_components must lie in [1, {max_r}], got {n_components}")
        if r > len(vals):
            raise DegenerateDataError(f"data spans only {len(vals)} dimensions, asked for {r}")
    return PcaModel(mean, _fix_signs(vecs[:, :r]), vals[:r].copy(), total)


def pca_transform(model: PcaModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.mean.shape[0]:
        raise DimensionError(f"vector length {x.shape[-1]} != PCA input length {model.mean.shape[0]}")
    return (x - model.mean) @ model.components


def pca_inverse_transform(model: PcaModel, z) -> np.ndarray:
    return np.asarray(z) @ model.components.T + model.mean


# -- LDA -----------------------------------------------------------------------

@dataclass(frozen=True)
class LdaModel:
    mean: np.ndarray  # [r]
    projection: np.ndarray  # [r, out_dim]
    class_means: np.ndarray  # [classes, out_dim], projected
    eigenvalues: np.ndarray  # Fisher ratios of the kept axes

    @property
    def out_dim(self) -> int:
        return self.projection.shape[1]


def scatter_matrices(x, labels):
    """Within-class and between-class scatter of ``x`` ``[n, r]``."""
    mean = x.mean(axis=0)
    r = x.shape[1]
    sw = np.zeros((r, r))
    sb = np.zeros((r, r))
    for c in np.unique(labels):
        xc = x[labels == c]
        mc = xc.mean(axis=0)
        dc = xc - mc
        sw += dc.T @ dc
        dm = (mc - mean)[:, None]
        sb += len(xc) * (dm @ dm.T)
    return sw, sb


def lda_fit(data, labels, out_dim: int | None = None, reg: float = 1e-6) -> LdaModel:
    """Multi-class Fisher discriminant.

    Solves S_b v = lambda S_w v by whitening the regularised within-class scatter
    (S_w + gamma I, gamma = reg * trace(S_w) / r) and diagonalising the whitened
    between-class scatter. Keeps the ``out_dim`` axes with the largest ratios
    (default: classes - 1, capped by r).
    """
    x = np.asarray(data, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim != 2 or len(x) != len(y):
        raise DimensionError(f"LDA data {x.shape} vs labels {y.shape}")
    classes, counts = np.unique(y, return_counts=True)
    if len(classes) < 2:
        raise DataError("LDA needs at least 2 classes")
    if counts.min() < 2:
        raise DataError(f"LDA needs >= 2 samples per class; class {classes[counts.argmin()]} has {counts.min()}")
    r = x.shape[1]
    max_dim = min(len(classes) - 1, r)
    out_dim = max_dim if out_dim is None else int(out_dim)
    if not 1 <= out_dim <= max_dim:
        raise ConfigError(f"LDA out_dim must lie in [1, {max_dim}], got {out_dim}")
    sw, sb = scatter_matrices(x, y)
    gamma = reg * np.trace(sw) / r
    if not gamma > 0:
        raise DegenerateDataError("LDA: within-class scatter is zero; reduce dimensionality with PCA first")
    lam, vec = np.linalg.eigh(sw + gamma * np.eye(r))
    if lam.min() <= 0 or lam.max() / lam.min() > 1e13:
        raise DegenerateDataError(
            "LDA: within-class scatter is singular even after regularisation; use fewer PCA components"
        )
    whiten = vec / np.sqrt(lam)  # W with W^T (S_w + gamma I) W = I
    m = whiten.T @ sb @ whiten
    evals, evecs = np.linalg.eigh((m + m.T) / 2)
    order = np.argsort(evals)[::-1][:out_dim]
    proj = _fix_signs(whiten @ evecs[:, order])
    mean = x.mean(axis=0)
    cmeans = np.stack([(x[y == c].mean(axis=0) - mean) @ proj for c in classes])
    return LdaModel(mean, proj, cmeans, evals[order])


def lda_transform(model: LdaModel, x) -> np.ndarray:
    return (np.asarray(x, dtype=np.float64) - model.mean) @ model.projection


def fisher_ratio(z, labels) -> float:
    """Between-class over within-class scatter of 1-D projections ``z``."""
    z = np.asarray(z, dtype=np.float64)
    mu = z.mean()
    sw = sb = 0.0
    for c in np.unique(labels):
        zc = z[labels == c]
        sw += np.sum((zc - zc.mean()) ** 2)
        sb += len(zc) * (zc.mean() - mu) ** 2
    return sb / sw


# -- pipeline ------------------------------------------------------------------

@dataclass(frozen=True)
class BaselineConfig:
    ks: tuple = (1, 3, 5)
    variants: tuple = VARIANTS
    pca_components: float | int = 0.95
    raw_metric: str = "euclidean"
    minkowski_p: float = 2.0
    lda_dim: int | None = None

    def __post_init__(self):
        bad = set(self.variants) - set(VARIANTS)
        if bad:
            raise ConfigError(f"unknown variants {sorted(bad)}; expected {VARIANTS}")
        if not self.ks or min(self.ks) < 1:
            raise ConfigError(f"k values must be >= 1, got {self.ks}")
        _check_metric(self.raw_metric, self.minkowski_p)


@dataclass
class BaselineReport:
    ks: tuple
    variants: tuple
    accuracy: dict = field(default_factory=dict)  # (k, variant) -> float
    details: dict = field(default_factory=dict)

    def table(self) -> list[list]:
        return [[k] + [self.accuracy[(k, v)] for v in self.variants] for k in self.ks]

    def to_tsv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f, delimiter="\t")
            w.writerow(["k"] + list(self.variants))
            for row in self.table():
                w.writerow([f"k={row[0]}"] + [f"{a:.4f}" for a in row[1:]])

    def format(self) -> str:
        lines = ["k\t" + "\t".join(self.variants)]
        for row in self.table():
            lines.append(f"k={row[0]}\t" + "\t".join(f"{a:.4f}" for a in row[1:]))
        return "\n".join(lines)


def baseline_pipeline(train_x, train_y, val_x, val_y, config: BaselineConfig = BaselineConfig()) -> BaselineReport:
    """kNN accuracy for every (k, feature variant) pair.

    PCA and LDA are fitted on the training features only. Inputs are feature
    matrices ``[n, d]`` (see ``features_from_images``).
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    val_x = np.asarray(val_x, dtype=np.float64)
    train_y = np.asarray(train_y, dtype=np.int64)
    val_y = np.asarray(val_y, dtype=np.int64)
    missing = sorted(set(val_y.tolist()) - set(train_y.tolist()))
    if missing:
        raise DataError(f"validation classes {missing} do not occur in the training set")
    n_classes = len(np.unique(train_y))
    report = BaselineReport(tuple(config.ks), tuple(config.variants))

    feats = {}
    if "RAW" in config.variants:
        feats["RAW"] = (train_x, val_x, config.raw_metric)
    needs_pca = any(v != "RAW" for v in config.variants)
    if needs_pca:
        pca = pca_fit(train_x, config.pca_components)
        report.details["pca_components"] = pca.n_components
        ptr, pva = pca_transform(pca, train_x), pca_transform(pca, val_x)
        if "PCA" in config.variants:
            feats["PCA"] = (ptr, pva, "euclidean")
        lda_variants = [v for v in config.variants if v.startswith("PCA+LDA")]
        if lda_variants:
            # within-class scatter has rank <= n - classes
            r = min(pca.n_components, len(train_x) - n_classes)
            lda = lda_fit(ptr[:, :r], train_y, config.lda_dim)
            report.details["lda_input_dim"] = r
            report.details["lda_dim"] = lda.out_dim
            ltr, lva = lda_transform(lda, ptr[:, :r]), lda_transform(lda, pva[:, :r])
            if "PCA+LDA" in config.variants:
                feats["PCA+LDA"] = (ltr, lva, "euclidean")
            if "PCA+LDA-Chebyshev" in config.variants:
                feats["PCA+LDA-Chebyshev"] = (ltr, lva, "chebyshev")

    for variant in config.variants:
        tr, va, metric = feats[variant]
        for k in config.ks:
            model = knn_fit(tr, train_y, k, metric, config.minkowski_p)
            pred = knn_predict(model, va)
            report.accuracy[(k, variant)] = float(np.mean(pred == val_y))
    return report


def make_correlated_blobs(n_classes=10, n_per_class=100, dim=40, nuisance_dims=6,
                          nuisance_scale=6.0, separation=1.5, seed=0):
    """Gaussian classes hidden under strong shared, correlated nuisance variation.

    Class means differ by ``separation`` (in units of the isotropic noise) while
    a handful of random directions carry ``nuisance_scale`` times larger noise,
    so raw Euclidean neighbours are dominated by irrelevant variation.
    Returns ``(x [n, dim], labels [n])``.
    """
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    scales = np.ones(dim)
    scales[:nuisance_dims] = nuisance_scale
    noise_map = basis * scales  # column j of basis scaled
    means = rng.standard_normal((n_classes, dim)) * separation
    x = []
    y = []
    for c in range(n_classes):
        z = rng.standard_normal((n_per_class, dim))
        x.append(means[c] + z @ noise_map.T)
        y.append(np.full(n_per_class, c))
    return np.concatenate(x), np.concatenate(y)
