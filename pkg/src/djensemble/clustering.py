"""k-means over GLD feature vectors, with k chosen by silhouette analysis."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .gld import FeatureMap

MAX_ITER = 300
TOL = 1e-6


class ClusteringError(ValueError):
    pass


@dataclass(frozen=True)
class ClusterMap:
    """Cluster id per grid point.

    ``labels`` has shape ``(lat, lon)``. ``centroids`` live in the
    standardized feature space the clustering ran in.
    """

    labels: np.ndarray
    k: int
    centroids: np.ndarray
    silhouette: float = float("nan")

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lat", "lon", "cid"])
            for (r, c), cid in np.ndenumerate(self.labels):
                w.writerow([r, c, int(cid)])

    def summary(self) -> dict:
        return {"k": self.k, "silhouette": self.silhouette}

    def save(self, csv_path: str | Path, summary_path: str | Path) -> None:
        self.to_csv(csv_path)
        Path(summary_path).write_text(
            json.dumps({**self.summary(), "centroids": self.centroids.tolist()}, indent=2)
        )

    @classmethod
    def load(cls, csv_path: str | Path, summary_path: str | Path) -> ClusterMap:
        rows = np.loadtxt(csv_path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
        labels = np.zeros(tuple(rows[:, :2].max(axis=0) + 1), dtype=np.int64)
        labels[rows[:, 0], rows[:, 1]] = rows[:, 2]
        meta = json.loads(Path(summary_path).read_text())
        return cls(labels, int(meta["k"]), np.asarray(meta["centroids"]), float(meta["silhouette"]))


def standardize(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    sd = x.std(axis=0)
    sd[sd == 0] = 1.0
    return (x - x.mean(axis=0)) / sd


def _sq_dists(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centroids = [x[rng.integers(len(x))]]
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = int(rng.choice(len(x), p=d2 / total)) if total > 0 else 0
        centroids.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return np.array(centroids)


def kmeans_array(x: np.ndarray, k: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's k-means with k-means++ seeding on the rows of ``x``.

    Rows are processed in lexicographic order and clusters are numbered by
    the lexicographic order of their centroids, so the result does not
    depend on how the points are enumerated. Ties in assignment go to the
    lowest cluster number; an empty cluster is re-seeded at the point
    farthest from its current centroid.
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if n == 0:
        raise ClusteringError("empty feature map")
    if k < 2:
        raise ClusteringError(f"k must be >= 2, got {k}")
    if k > n:
        raise ClusteringError(f"k={k} exceeds the number of points ({n})")

    order = np.lexsort(x.T[::-1])
    xs = x[order]
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp(xs, k, rng)
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(MAX_ITER):
        d2 = _sq_dists(xs, centroids)
        labels = np.argmin(d2, axis=1)
        new = centroids.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                new[j] = xs[members].mean(axis=0)
            else:
                far = int(np.argmax(d2[np.arange(n), labels]))
                new[j] = xs[far]
                labels[far] = j
        shift = np.sqrt(((new - centroids) ** 2).sum(axis=1)).max()
        centroids = new
        if shift < TOL:
            break
    labels = np.argmin(_sq_dists(xs, centroids), axis=1)

    rank = np.lexsort(centroids.T[::-1])
    relabel = np.empty(k, dtype=np.int64)
    relabel[rank] = np.arange(k)
    out = np.empty(n, dtype=np.int64)
    out[order] = relabel[labels]
    return out, centroids[rank]


def _pair_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d2 = (a * a).sum(axis=1)[:, None] + (b * b).sum(axis=1)[None, :] - 2.0 * a @ b.T
    return np.sqrt(np.maximum(d2, 0.0))


def silhouette_array(x: np.ndarray, labels: np.ndarray, chunk: int = 512) -> float:
    """Mean silhouette; points in singleton clusters contribute 0."""
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    ids, inv, counts = np.unique(labels, return_inverse=True, return_counts=True)
    if len(ids) < 2:
        raise ClusteringError("silhouette needs at least 2 non-empty clusters")
    onehot = np.zeros((len(x), len(ids)))
    onehot[np.arange(len(x)), inv] = 1.0
    scores = np.zeros(len(x))
    for lo in range(0, len(x), chunk):
        block = x[lo : lo + chunk]
        d = _pair_dists(block, x)
        sums = d @ onehot
        own = inv[lo : lo + chunk]
        rows = np.arange(len(block))
        own_count = counts[own]
        a = np.where(own_count > 1, sums[rows, own] / np.maximum(own_count - 1, 1), 0.0)
        mean_other = sums / counts[None, :]
        mean_other[rows, own] = np.inf
        b = mean_other.min(axis=1)
        denom = np.maximum(a, b)
        s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
        scores[lo : lo + chunk] = np.where(own_count > 1, s, 0.0)
    return float(scores.mean())


def kmeans(features: FeatureMap, k: int, seed: int = 0) -> ClusterMap:
    x = standardize(features.vectors)
    labels, centroids = kmeans_array(x, k, seed)
    try:
        score = silhouette_array(x, labels)
    except ClusteringError:
        score = float("nan")
    return ClusterMap(labels.reshape(features.lat_count, features.lon_count), k, centroids, score)


def silhouette_score(features: FeatureMap, clusters: ClusterMap) -> float:
    return silhouette_array(standardize(features.vectors), clusters.labels.ravel())


def choose_k_array(x: np.ndarray, k_min: int, k_max: int, seed: int = 0):
    """Return ``(k, labels, centroids, silhouette)`` maximizing silhouette."""
    if not 2 <= k_min <= k_max:
        raise ClusteringError(f"need 2 <= k_min <= k_max, got {k_min}..{k_max}")
    best = None
    for k in range(k_min, min(k_max, len(x)) + 1):
        labels, centroids = kmeans_array(x, k, seed)
        try:
            score = silhouette_array(x, labels)
        except ClusteringError:
            score = float("nan")
        if best is None or (np.isnan(best[3]) and not np.isnan(score)) or score > best[3]:
            best = (k, labels, centroids, score)
    if best is None:
        raise ClusteringError(f"k_min={k_min} exceeds the number of points ({len(x)})")
    return best


def choose_k(features: FeatureMap, k_min: int = 2, k_max: int = 10, seed: int = 0) -> ClusterMap:
    """k-means for every k in ``[k_min, k_max]``; keep the best silhouette.

    Ties go to the smaller k.
    """
    k, labels, centroids, score = choose_k_array(standardize(features.vectors), k_min, k_max, seed)
    return ClusterMap(labels.reshape(features.lat_count, features.lon_count), k, centroids, score)
