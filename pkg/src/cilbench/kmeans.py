"""Lloyd's algorithm with k-means++ seeding.

Deterministic given (features, k, seed): ties in nearest-centroid assignment
break toward the lowest centroid index, and an empty cluster is reseeded to
the point farthest from its currently assigned centroid.
"""

from __future__ import annotations

import numpy as np

from .errors import InfeasibleKError, InvalidFeatureError
from .manifest import FeatureMatrix
from .seeding import rng_for

DEFAULT_MAX_ITERS = 300
DEFAULT_TOL = 1e-6


def _check_matrix(x: np.ndarray, k: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidFeatureError("feature matrix must be 2-D")
    if not np.all(np.isfinite(x)):
        raise InvalidFeatureError("feature matrix contains non-finite values")
    if k < 2:
        raise InfeasibleKError(f"k must be >= 2, got {k}")
    if k > x.shape[0]:
        raise InfeasibleKError(f"k={k} exceeds number of points {x.shape[0]}")
    return x


def _sq_distances(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # (n, k) squared Euclidean distances; clamp tiny negatives from the
    # expansion so argmin tie-breaks are stable.
    d2 = (
        np.sum(x * x, axis=1)[:, None]
        - 2.0 * x @ centroids.T
        + np.sum(centroids * centroids, axis=1)[None, :]
    )
    return np.maximum(d2, 0.0)


def kmeans_plusplus_init(x: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Standard D^2 weighted seeding."""
    x = _check_matrix(x, k)
    rng = rng_for("kmeans++", seed)
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = x[first]
    d2 = _sq_distances(x, centroids[:1]).ravel()
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[j] = x[idx]
        d2 = np.minimum(d2, _sq_distances(x, centroids[j : j + 1]).ravel())
    return centroids


def lloyd(
    x: np.ndarray,
    init_centroids: np.ndarray,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Run Lloyd iterations from given centroids.

    Returns (assignments, centroids, inertia trace). The inertia trace is
    recorded after each assignment step and is non-increasing.
    """
    x = np.asarray(x, dtype=np.float64)
    centroids = np.array(init_centroids, dtype=np.float64, copy=True)
    k = centroids.shape[0]
    assign = np.zeros(x.shape[0], dtype=np.int64)
    inertia_trace: list[float] = []
    for _ in range(max_iters):
        d2 = _sq_distances(x, centroids)
        assign = np.argmin(d2, axis=1)  # argmin picks the lowest index on ties
        inertia_trace.append(float(d2[np.arange(x.shape[0]), assign].sum()))
        new_centroids = np.empty_like(centroids)
        for j in range(k):
            members = x[assign == j]
            if len(members) == 0:
                # reseed to the point farthest from its assigned centroid
                far = int(np.argmax(d2[np.arange(x.shape[0]), assign]))
                new_centroids[j] = x[far]
            else:
                new_centroids[j] = members.mean(axis=0)
        shift = np.linalg.norm(new_centroids - centroids)
        scale = max(np.linalg.norm(centroids), 1e-12)
        centroids = new_centroids
        if shift / scale < tol:
            break
    d2 = _sq_distances(x, centroids)
    assign = np.argmin(d2, axis=1)
    inertia_trace.append(float(d2[np.arange(x.shape[0]), assign].sum()))
    return assign, centroids, inertia_trace


def kmeans_cluster(
    features: FeatureMatrix,
    k: int,
    seed: int,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
) -> dict[str, int]:
    """Cluster feature rows; returns sample_id -> cluster index in [0, k)."""
    x = _check_matrix(features.features, k)
    init = kmeans_plusplus_init(x, k, seed)
    assign, _, _ = lloyd(x, init, max_iters=max_iters, tol=tol)
    return {sid: int(c) for sid, c in zip(features.sample_ids, assign)}
