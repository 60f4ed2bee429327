"""Spherical k-means: cosine-similarity clustering of L2-normalized embeddings.

Behavior pinned for reproducibility:

- seeded k-means++ initialization; the selection weight is the squared
  Euclidean distance between normalized vectors, i.e. 2 * (1 - cosine),
- assignment to the maximum-cosine centroid, ties to the lowest cluster id,
- centroids re-normalized to unit length every iteration,
- stop when the relative drop in total cosine dissimilarity falls below
  1e-6, or after 100 iterations,
- an empty cluster steals the point with the worst cosine to its own
  centroid (never emptying another cluster in the process).

After convergence a final per-point assignment pass is taken against the
final centroids (the exact computation ``nearest_cluster`` uses), so the
returned assignment is self-consistent; the repaired assignment is kept
instead only if that pass would empty a cluster.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

MAX_ITERATIONS = 100
RELATIVE_TOL = 1e-6


@dataclass
class ClusterAssignment:
    assignments: dict[str, int]
    centroids: np.ndarray | None
    G: int
    iterations_run: int = 0
    inertia_history: list[float] = field(default_factory=list)


def _argmax_cosine(centroids: np.ndarray, vector: np.ndarray) -> int:
    # argmax of cosine; the vector need not be normalized since a positive
    # rescale cannot reorder the dot products
    return int(np.argmax(centroids @ vector))


def nearest_cluster(vector, centroids) -> int:
    """Index of the maximum-cosine centroid; ties go to the lowest cluster id."""
    C = np.asarray(centroids, dtype=float)
    if C.ndim != 2 or C.shape[0] == 0:
        raise ValueError("centroids must be a non-empty 2-D array")
    norms = np.linalg.norm(C, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise ValueError("centroids must be unit length")
    v = np.asarray(vector, dtype=float)
    if float(np.linalg.norm(v)) == 0.0:
        raise ValueError("zero vector: cosine similarity undefined")
    return _argmax_cosine(C, v)


def _kmeanspp_init(Xn: np.ndarray, G: int, rng: np.random.Generator) -> np.ndarray:
    n = Xn.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = np.maximum(2.0 * (1.0 - Xn @ Xn[chosen[0]]), 0.0)
    for _ in range(1, G):
        total = float(d2.sum())
        if total <= 0.0:
            taken = set(chosen)
            idx = next(i for i in range(n) if i not in taken)
        else:
            idx = int(rng.choice(n, p=d2 / total))
        chosen.append(idx)
        d2 = np.minimum(d2, np.maximum(2.0 * (1.0 - Xn @ Xn[idx]), 0.0))
    return Xn[chosen].copy()


def _repair_empty_clusters(assign: np.ndarray, sims: np.ndarray, G: int) -> None:
    """Give every empty cluster the worst-fitting point of a multi-member cluster."""
    counts = np.bincount(assign, minlength=G)
    for cid in range(G):
        if counts[cid] != 0:
            continue
        own = sims[np.arange(len(assign)), assign]
        candidates = np.where(counts[assign] > 1)[0]
        victim = int(candidates[int(np.argmin(own[candidates]))])
        counts[assign[victim]] -= 1
        assign[victim] = cid
        counts[cid] += 1


def kmeans_cosine(vectors, G: int, seed: int) -> ClusterAssignment:
    """Cluster an id -> vector mapping into G groups by cosine similarity.

    Zero vectors are rejected (cosine undefined) and G must not exceed the
    number of distinct normalized vectors.  Fixed (vectors, G, seed) yields
    identical assignments.
    """
    ids = list(vectors)
    if not ids:
        raise ValueError("vectors must be non-empty")
    X = np.asarray([vectors[i] for i in ids], dtype=float)
    if X.ndim != 2:
        raise ValueError("all vectors must share one dimension")
    if not np.all(np.isfinite(X)):
        raise ValueError("vectors must be finite")
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms == 0.0):
        bad = ids[int(np.argmin(norms))]
        raise ValueError(f"zero vector for id {bad!r}: cosine similarity undefined")
    if G < 1:
        raise ValueError("G must be positive")
    Xn = X / norms[:, None]
    distinct = np.unique(Xn, axis=0).shape[0]
    if G > distinct:
        raise ValueError(f"G={G} exceeds the {distinct} distinct vectors")

    rng = np.random.Generator(np.random.PCG64(seed))
    centroids = _kmeanspp_init(Xn, G, rng)
    n = Xn.shape[0]
    assign = np.zeros(n, dtype=int)
    history: list[float] = []
    prev_inertia = None
    iterations = 0
    for iterations in range(1, MAX_ITERATIONS + 1):
        sims = Xn @ centroids.T
        assign = np.argmax(sims, axis=1)
        _repair_empty_clusters(assign, sims, G)
        for cid in range(G):
            mean = Xn[assign == cid].mean(axis=0)
            norm = float(np.linalg.norm(mean))
            if norm > 1e-12:
                centroids[cid] = mean / norm
            # else keep the previous centroid (antipodal cancellation)
        inertia = float(np.sum(1.0 - np.einsum("ij,ij->i", Xn, centroids[assign])))
        history.append(inertia)
        if prev_inertia is not None and prev_inertia - inertia <= RELATIVE_TOL * max(prev_inertia, 1e-12):
            break
        prev_inertia = inertia

    final = np.array([_argmax_cosine(centroids, Xn[i]) for i in range(n)])
    if np.bincount(final, minlength=G).min() > 0:
        assign = final
    return ClusterAssignment({ids[i]: int(assign[i]) for i in range(n)},
                             centroids, G, iterations, history)


def save_assignment(assignment: ClusterAssignment, path, centroids_path=None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sample_id, cid in assignment.assignments.items():
            fh.write(json.dumps({"id": sample_id, "cluster": cid}) + "\n")
    if centroids_path is not None and assignment.centroids is not None:
        with open(centroids_path, "w", encoding="utf-8") as fh:
            json.dump([list(map(float, row)) for row in assignment.centroids], fh)


def load_assignment(path, centroids_path=None) -> ClusterAssignment:
    assignments: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            assignments[str(obj["id"])] = int(obj["cluster"])
    if not assignments:
        raise ValueError(f"no cluster assignments in {path}")
    centroids = None
    if centroids_path is not None:
        with open(centroids_path, encoding="utf-8") as fh:
            centroids = np.asarray(json.load(fh), dtype=float)
    G = centroids.shape[0] if centroids is not None else max(assignments.values()) + 1
    return ClusterAssignment(assignments, centroids, G)
