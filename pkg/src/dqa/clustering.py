"""Repository-level root-cause clustering over unit-norm embeddings.

Spherical k-means (unit-norm centroids) matches the cosine geometry the
retrieval layer uses; mixing geometries would distort assignment. Fitting is
deterministic given (inputs, seed). An average-linkage agglomerative variant
is provided behind the same interface.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError, DimensionMismatchError
from .util import dump_json

CLUSTER_FORMAT_VERSION = 1

_CONVERGENCE_SHIFT = 1e-6
_MAX_ITERATIONS = 100


def _cluster_id(i: int) -> str:
    return f"c{i:03d}"


@dataclass
class ClusterModel:
    k_clusters: int
    cluster_ids: list[str]
    centroids: np.ndarray  # (k, dim), unit rows, row i <-> cluster_ids[i]
    assignment: dict[str, str]  # ticket id -> cluster id
    sizes: dict[str, int]
    priors: dict[str, float]  # sizes[k]/total, reported for interpretability only
    label_text: dict[str, str]  # medoid root-cause text per cluster
    medoid_ids: dict[str, list[str]]  # tickets nearest the centroid, closest first
    method: str = "minibatch-kmeans"
    seed: int = 0
    objective_trace: list[float] = field(default_factory=list)

    def centroid(self, cluster_id: str) -> np.ndarray:
        return self.centroids[self.cluster_ids.index(cluster_id)]

    def members(self, cluster_id: str) -> list[str]:
        return sorted(t for t, c in self.assignment.items() if c == cluster_id)


def _kmeanspp_init(matrix: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded k-means++ on unit vectors (squared Euclidean == 2 * (1 - cos))."""
    n = matrix.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = 2.0 * np.clip(1.0 - matrix @ matrix[chosen[0]], 0.0, None)
    for _ in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            # All remaining points coincide with chosen centers; pick by index.
            remaining = [i for i in range(n) if i not in chosen]
            chosen.append(remaining[0] if remaining else chosen[-1])
        else:
            pick = int(rng.choice(n, p=d2 / total))
            chosen.append(pick)
        d2 = np.minimum(d2, 2.0 * np.clip(1.0 - matrix @ matrix[chosen[-1]], 0.0, None))
    return matrix[chosen].copy()


def _normalize_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return matrix / norms


def _assign_rows(matrix: np.ndarray, centroids: np.ndarray, batch_order: np.ndarray,
                 batch_size: int) -> np.ndarray:
    """Nearest-centroid assignment computed in fixed-order batches.

    Batching only chunks the computation; the result equals a full scan, and
    argmax resolves ties toward the lower cluster index.
    """
    labels = np.empty(matrix.shape[0], dtype=np.int64)
    for start in range(0, len(batch_order), batch_size):
        rows = batch_order[start:start + batch_size]
        sims = matrix[rows] @ centroids.T
        labels[rows] = np.argmax(sims, axis=1)
    return labels


def _dispersion(matrix: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> float:
    sims = np.einsum("ij,ij->i", matrix, centroids[labels])
    return float(np.mean(1.0 - sims))


def _fit_spherical_kmeans(matrix: np.ndarray, k: int, seed: int,
                          batch_size: int = 2048) -> tuple[np.ndarray, np.ndarray, list[float]]:
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_init(matrix, k, rng)
    batch_order = rng.permutation(matrix.shape[0])
    trace: list[float] = []
    monotone_baseline: float | None = None
    labels = _assign_rows(matrix, centroids, batch_order, batch_size)
    for _ in range(_MAX_ITERATIONS):
        obj = _dispersion(matrix, centroids, labels)
        trace.append(obj)
        if monotone_baseline is not None and obj > monotone_baseline + 1e-12:
            raise AssertionError(
                f"k-means dispersion increased: {monotone_baseline} -> {obj}"
            )
        monotone_baseline = obj

        new_centroids = np.zeros_like(centroids)
        counts = np.bincount(labels, minlength=k)
        np.add.at(new_centroids, labels, matrix)
        repaired = False
        for c in np.flatnonzero(counts == 0):
            # Empty cluster: re-seed from the point of the largest cluster that
            # is farthest from its centroid, then split that cluster.
            largest = int(np.argmax(counts))
            members = np.flatnonzero(labels == largest)
            sims = matrix[members] @ centroids[largest]
            far = members[int(np.argmin(sims))]
            new_centroids[c] = matrix[far]
            new_centroids[largest] -= matrix[far]
            labels[far] = c
            counts[c] += 1
            counts[largest] -= 1
            repaired = True
        new_centroids = _normalize_rows(new_centroids)
        shift = float(np.max(np.linalg.norm(new_centroids - centroids, axis=1)))
        centroids = new_centroids
        labels = _assign_rows(matrix, centroids, batch_order, batch_size)
        if repaired:
            monotone_baseline = None  # repair may transiently raise dispersion
        if shift < _CONVERGENCE_SHIFT:
            break
    trace.append(_dispersion(matrix, centroids, labels))
    return centroids, labels, trace


def _fit_agglomerative(matrix: np.ndarray, k: int) -> np.ndarray:
    """Average-linkage agglomerative clustering on cosine distance."""
    from scipy.cluster.hierarchy import fcluster, linkage

    if matrix.shape[0] == k:
        return np.arange(k, dtype=np.int64)
    link = linkage(matrix, method="average", metric="cosine")
    flat = fcluster(link, t=k, criterion="maxclust")
    return flat.astype(np.int64) - 1


def fit_clusters(
    tickets: Sequence[tuple[str, np.ndarray]],
    k_clusters: int,
    seed: int = 0,
    method: str = "minibatch-kmeans",
    texts: Mapping[str, str] | None = None,
    medoids_per_cluster: int = 3,
) -> ClusterModel:
    """Cluster ticket embeddings into k root-cause hypotheses.

    `texts` (ticket id -> root-cause text) supplies human-readable cluster
    labels via the medoid; without it, labels fall back to the medoid id.
    """
    if k_clusters <= 0:
        raise ConfigError(f"k_clusters must be positive, got {k_clusters}")
    if k_clusters > len(tickets):
        raise ConfigError(f"k_clusters {k_clusters} exceeds ticket count {len(tickets)}")
    ids = [t[0] for t in tickets]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate ticket ids in clustering input")
    matrix = _normalize_rows(np.vstack([np.asarray(v, dtype=np.float64) for _, v in tickets]))

    if method == "minibatch-kmeans":
        centroids, labels, trace = _fit_spherical_kmeans(matrix, k_clusters, seed)
    elif method == "agglomerative":
        labels = _fit_agglomerative(matrix, k_clusters)
        centroids = np.zeros((k_clusters, matrix.shape[1]))
        np.add.at(centroids, labels, matrix)
        centroids = _normalize_rows(centroids)
        trace = [_dispersion(matrix, centroids, labels)]
    else:
        raise ConfigError(f"unknown clustering method {method!r}")

    # Canonical relabeling: clusters ordered by size descending, then by the
    # smallest member ticket id, so ids are stable across internal orderings.
    # For k-means the converged centroids are kept verbatim, which makes the
    # stored assignment exactly reproducible by the nearest-centroid rule;
    # for agglomerative the centroid is the membership mean (average-linkage
    # partitions are not Voronoi cells, so that reproducibility is k-means-only).
    raw_groups: dict[int, list[int]] = {}
    for row, lab in enumerate(labels):
        raw_groups.setdefault(int(lab), []).append(row)
    ordered = sorted(
        raw_groups.items(),
        key=lambda kv: (-len(kv[1]), min(ids[r] for r in kv[1])),
    )

    cluster_ids: list[str] = []
    final_centroids = []
    assignment: dict[str, str] = {}
    sizes: dict[str, int] = {}
    label_text: dict[str, str] = {}
    medoid_ids: dict[str, list[str]] = {}
    total = len(ids)
    for new_idx, (raw_label, rows) in enumerate(ordered):
        cid = _cluster_id(new_idx)
        cluster_ids.append(cid)
        if method == "minibatch-kmeans":
            centroid = centroids[raw_label]
        else:
            centroid = _normalize_rows(matrix[rows].sum(axis=0, keepdims=True))[0]
        final_centroids.append(centroid)
        sizes[cid] = len(rows)
        for r in rows:
            assignment[ids[r]] = cid
        sims = matrix[rows] @ centroid
        ranked = sorted(zip(rows, sims), key=lambda p: (-p[1], ids[p[0]]))
        medoids = [ids[r] for r, _ in ranked[:medoids_per_cluster]]
        medoid_ids[cid] = medoids
        if texts and medoids and medoids[0] in texts:
            label_text[cid] = texts[medoids[0]]
        else:
            label_text[cid] = medoids[0] if medoids else cid

    priors = {cid: sizes[cid] / total for cid in cluster_ids}
    return ClusterModel(
        k_clusters=k_clusters,
        cluster_ids=cluster_ids,
        centroids=np.vstack(final_centroids),
        assignment=assignment,
        sizes=sizes,
        priors=priors,
        label_text=label_text,
        medoid_ids=medoid_ids,
        method=method,
        seed=seed,
        objective_trace=trace,
    )


def assign(model: ClusterModel, vec: np.ndarray) -> str:
    """Nearest-centroid rule; ties break toward the lowest cluster id."""
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (model.centroids.shape[1],):
        raise DimensionMismatchError(
            f"vector dimension {vec.shape} does not match centroids {model.centroids.shape[1]}"
        )
    sims = model.centroids @ vec
    return model.cluster_ids[int(np.argmax(sims))]


def empirical_priors(model: ClusterModel) -> dict[str, Fraction]:
    """Cluster mass |C_k| / |D| as exact rationals.

    Surfaced in reports and the UI for interpretability; never consumed by the
    online policy.
    """
    total = sum(model.sizes.values())
    return {cid: Fraction(model.sizes[cid], total) for cid in model.cluster_ids}


def rand_index(labels_a: Mapping[str, str], labels_b: Mapping[str, str]) -> float:
    """Plain Rand index between two labelings of the same item set."""
    items = sorted(labels_a)
    if sorted(labels_b) != items:
        raise DataError("labelings cover different item sets")
    n = len(items)
    if n < 2:
        return 1.0

    def comb2(x: int) -> int:
        return x * (x - 1) // 2

    from collections import Counter

    joint = Counter((labels_a[i], labels_b[i]) for i in items)
    marg_a = Counter(labels_a[i] for i in items)
    marg_b = Counter(labels_b[i] for i in items)
    sum_joint = sum(comb2(c) for c in joint.values())
    sum_a = sum(comb2(c) for c in marg_a.values())
    sum_b = sum(comb2(c) for c in marg_b.values())
    total_pairs = comb2(n)
    return (total_pairs + 2 * sum_joint - sum_a - sum_b) / total_pairs


def mean_silhouette(matrix: np.ndarray, labels: np.ndarray) -> float:
    """Mean silhouette under cosine distance; O(n^2), desk-scale only."""
    n = matrix.shape[0]
    dist = 1.0 - matrix @ matrix.T
    scores = np.zeros(n)
    unique = np.unique(labels)
    if len(unique) < 2:
        return 0.0
    for i in range(n):
        own = labels[i]
        same = (labels == own) & (np.arange(n) != i)
        if not same.any():
            scores[i] = 0.0
            continue
        a = float(dist[i, same].mean())
        b = min(float(dist[i, labels == other].mean()) for other in unique if other != own)
        scores[i] = (b - a) / max(a, b) if max(a, b) > 0 else 0.0
    return float(scores.mean())


def sweep_k(
    tickets: Sequence[tuple[str, np.ndarray]],
    seed: int = 0,
    k_min: int = 2,
    k_max: int = 20,
    method: str = "minibatch-kmeans",
) -> tuple[int, dict[int, float]]:
    """Pick k by max mean silhouette over [k_min, k_max] (for unlabeled corpora)."""
    matrix = _normalize_rows(np.vstack([np.asarray(v, dtype=np.float64) for _, v in tickets]))
    ids = [t[0] for t in tickets]
    scores: dict[int, float] = {}
    upper = min(k_max, len(tickets))
    for k in range(k_min, upper + 1):
        model = fit_clusters(tickets, k, seed=seed, method=method)
        labels = np.array([model.cluster_ids.index(model.assignment[i]) for i in ids])
        scores[k] = mean_silhouette(matrix, labels)
    best = max(scores, key=lambda k: (scores[k], -k))
    return best, scores


def save_cluster_model(model: ClusterModel, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CLUSTER_FORMAT_VERSION,
        "kind": "cluster_model",
        "k_clusters": model.k_clusters,
        "cluster_ids": model.cluster_ids,
        "centroids": [[float(x) for x in row] for row in model.centroids],
        "assignment": model.assignment,
        "sizes": model.sizes,
        "priors": model.priors,
        "label_text": model.label_text,
        "medoid_ids": model.medoid_ids,
        "method": model.method,
        "seed": model.seed,
    }
    path.write_text(dump_json(payload) + "\n", encoding="utf-8")


def load_cluster_model(path: str | Path) -> ClusterModel:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("kind") != "cluster_model":
        raise DataError(f"{path}: not a cluster model file")
    if payload.get("format_version") != CLUSTER_FORMAT_VERSION:
        raise DataError(f"{path}: unsupported cluster model version")
    return ClusterModel(
        k_clusters=payload["k_clusters"],
        cluster_ids=payload["cluster_ids"],
        centroids=np.asarray(payload["centroids"], dtype=np.float64),
        assignment=payload["assignment"],
        sizes={k: int(v) for k, v in payload["sizes"].items()},
        priors={k: float(v) for k, v in payload["priors"].items()},
        label_text=payload["label_text"],
        medoid_ids=payload["medoid_ids"],
        method=payload.get("method", "minibatch-kmeans"),
        seed=payload.get("seed", 0),
    )
