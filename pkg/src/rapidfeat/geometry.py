"""Rigid transforms, range computation, and exact k-nearest-neighbor search.

Two KNN routes are provided with identical contracts: :func:`knn_brute` is a
straightforward chunked pairwise implementation that serves as the oracle, and
:func:`knn_indexed` is the accelerated path. Both rank neighbors by ascending
metric distance with ties broken by ascending point index, and the accelerated
path must agree with the oracle bit for bit.

Metrics are expressed as embeddings: a metric is a callable mapping
``(cloud, subset) -> (n, D) float64`` such that the metric distance between
two points is the Euclidean distance between their embedded rows. The plain
coordinate metric embeds into 3D; the reflectivity-augmented metric of the
feature pipeline embeds into 4D.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .cloud import PointCloud
from .errors import ContractError, InsufficientPointsError

MetricEmbedding = Callable[[PointCloud, np.ndarray], np.ndarray]

# Below this subset size the accelerated path falls back to brute force; tree
# construction overhead dominates for tiny regions.
BRUTE_FORCE_CUTOFF = 64

_ORTHONORMAL_TOL = 1e-12


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid motion p -> R p + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ContractError("rotation must be (3, 3) and translation (3,)")
        if not np.allclose(r.T @ r, np.eye(3), atol=_ORTHONORMAL_TOL, rtol=0.0):
            raise ContractError("rotation is not orthonormal within 1e-12")
        if abs(np.linalg.det(r) - 1.0) > _ORTHONORMAL_TOL:
            raise ContractError("rotation determinant must be +1 within 1e-12")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def random(
        cls, rng: np.random.Generator, max_translation: float = 50.0
    ) -> "RigidTransform":
        """Uniform random rotation (QR of a Gaussian matrix) plus a bounded translation."""
        q, r = np.linalg.qr(rng.normal(size=(3, 3)))
        q = q * np.sign(np.diag(r))
        if np.linalg.det(q) < 0:
            q[:, 0] = -q[:, 0]
        t = rng.uniform(-max_translation, max_translation, size=3)
        return cls(q, t)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation


def apply_transform(cloud: PointCloud, transform: RigidTransform) -> PointCloud:
    """Map coordinates through the rigid motion; remission, ring, label untouched."""
    return cloud.with_points(transform.apply(cloud.points))


def range_of(point: np.ndarray) -> np.ndarray | float:
    """Euclidean norm of (x, y, z); vectorized over an (m, 3) array."""
    p = np.asarray(point, dtype=np.float64)
    if p.ndim == 1:
        return float(np.sqrt(p @ p))
    return np.sqrt(np.einsum("ij,ij->i", p, p))


def euclidean_metric() -> MetricEmbedding:
    """Plain 3D coordinate metric."""

    def embed(cloud: PointCloud, subset: np.ndarray) -> np.ndarray:
        return cloud.points[np.asarray(subset)]

    return embed


@dataclass(frozen=True)
class NeighborList:
    """k nearest neighbors of one anchor, ascending distance, ties by index.

    Indices are cloud-level (not subset-relative).
    """

    anchor: int
    indices: np.ndarray
    distances: np.ndarray

    def __post_init__(self) -> None:
        if len(self.indices) != len(self.distances):
            raise ContractError("indices and distances must have equal length")
        if np.any(np.diff(self.distances) < 0):
            raise ContractError("distances must be nondecreasing")


# ---------------------------------------------------------------------------
# internal candidate machinery
#
# Both KNN routes reduce to "sorted candidate rows": per anchor, other points
# ordered by (squared distance, candidate row index). Squared distances are
# always recomputed by direct coordinate subtraction so the two routes produce
# identical bits; the tree is only trusted to *retrieve* a candidate superset.
# ---------------------------------------------------------------------------


def _refine_ties(
    idx_s: np.ndarray, d2_s: np.ndarray, idx: np.ndarray, d2: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Enforce the ascending-index tie-break on rows that contain ties.

    A single stable argsort by d2 leaves tied entries in retrieval order;
    only rows with adjacent equal finite distances need the full (d2, idx)
    ordering, which is restored per row with a lexsort. Tie rows are rare
    for continuous data, so this keeps the common path to one sort pass.
    """
    dup = (d2_s[:, 1:] == d2_s[:, :-1]) & np.isfinite(d2_s[:, :-1])
    for row in np.flatnonzero(dup.any(axis=1)):
        order = np.lexsort((idx[row], d2[row]))
        idx_s[row] = idx[row][order]
        d2_s[row] = d2[row][order]
    return idx_s, d2_s


def _brute_candidate_rows(
    x: np.ndarray, tie_break: bool, chunk: int = 512
) -> tuple[np.ndarray, np.ndarray]:
    """Full sorted candidate rows by exhaustive pairwise evaluation.

    Returns (idx, d2) of shape (u, u); the trailing column of each row is the
    anchor itself pushed to the end with d2 = inf. Candidates enumerate in
    index order, so a stable sort by d2 already breaks ties by index and the
    tie_break flag only matters for callers that reorder candidates first.
    """
    u, _ = x.shape
    idx_out = np.empty((u, u), dtype=np.int64)
    d2_out = np.empty((u, u), dtype=np.float64)
    base = np.arange(u, dtype=np.int64)
    for lo in range(0, u, chunk):
        hi = min(lo + chunk, u)
        diff = x[lo:hi, None, :] - x[None, :, :]
        d2 = np.einsum("abc,abc->ab", diff, diff)
        d2[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
        order = np.argsort(d2, axis=1, kind="stable")
        idx_out[lo:hi] = base[order]
        d2_out[lo:hi] = np.take_along_axis(d2, order, axis=1)
    return idx_out, d2_out


def _tree_candidate_rows(
    x: np.ndarray, n: int, tie_break: bool
) -> tuple[np.ndarray, np.ndarray]:
    """Sorted candidate rows via KD-tree retrieval plus exact re-ranking.

    The tree only retrieves a candidate superset; squared distances are
    recomputed by direct subtraction so both KNN routes produce identical
    bits. The retrieval widens until the n-th exact distance sits strictly
    inside the tree's horizon, which guarantees the first n entries are
    exactly the n smallest and that every candidate tied with the n-th
    distance was retrieved.
    """
    u = len(x)
    tree = cKDTree(x, leafsize=32)
    m = min(u, n + 4)
    self_idx = np.arange(u, dtype=np.int64)
    while True:
        d_tree, idx = tree.query(x, k=m)
        idx = idx.astype(np.int64)
        diff = x[idx] - x[:, None, :]
        d2 = np.einsum("abc,abc->ab", diff, diff)
        d2[idx == self_idx[:, None]] = np.inf
        order = np.argsort(d2, axis=1, kind="stable")
        d2_s = np.take_along_axis(d2, order, axis=1)
        idx_s = np.take_along_axis(idx, order, axis=1)
        if tie_break:
            idx_s, d2_s = _refine_ties(idx_s, d2_s, idx, d2)
        if m >= u:
            return idx_s, d2_s
        horizon = d_tree[:, -1] ** 2
        nth = d2_s[:, n - 1]
        if np.all(nth < horizon * (1.0 - 1e-12)):
            return idx_s, d2_s
        m = min(u, 2 * m)


def nearest_candidate_rows(
    x: np.ndarray, n: int, tie_break: bool = True
) -> tuple[np.ndarray, np.ndarray]:
    """Per-anchor candidates sorted by squared distance, exact to depth n.

    x is an (u, D) embedding; n must satisfy 1 <= n <= u - 1. Rows may be
    wider than n; entries beyond the guaranteed depth only serve tie
    inclusion at the n-th distance, which the retrieval bound covers. With
    tie_break=True equal distances are ordered by ascending candidate index;
    value-only consumers can skip that pass since tied entries carry equal
    distances either way.
    """
    u = len(x)
    if not 1 <= n <= u - 1:
        raise ContractError(f"need 1 <= n <= u-1, got n={n}, u={u}")
    if u <= BRUTE_FORCE_CUTOFF or n >= u - 1:
        return _brute_candidate_rows(x, tie_break)
    return _tree_candidate_rows(x, n, tie_break)


def _as_subset(subset: Sequence[int] | np.ndarray) -> np.ndarray:
    idx = np.asarray(subset, dtype=np.int64)
    if idx.ndim != 1:
        raise ContractError("subset must be a 1D index array")
    return idx


def _neighbor_lists(
    subset: np.ndarray, idx_rows: np.ndarray, d2_rows: np.ndarray, k: int
) -> list[NeighborList]:
    lists = []
    for a in range(len(subset)):
        rel = idx_rows[a, :k]
        lists.append(
            NeighborList(
                anchor=int(subset[a]),
                indices=subset[rel],
                distances=np.sqrt(d2_rows[a, :k]),
            )
        )
    return lists


def knn_brute(
    subset: Sequence[int] | np.ndarray,
    cloud: PointCloud,
    k: int,
    metric: Optional[MetricEmbedding] = None,
) -> list[NeighborList]:
    """Exact k nearest neighbors within a subset by exhaustive search.

    Ranks every other subset point by metric distance, ties broken by
    ascending point index. Raises InsufficientPointsError when the subset has
    fewer than k+1 points.
    """
    idx = _as_subset(subset)
    if len(idx) < k + 1:
        raise InsufficientPointsError(
            f"subset of {len(idx)} points cannot supply k={k} neighbors"
        )
    metric = metric or euclidean_metric()
    x = np.asarray(metric(cloud, idx), dtype=np.float64)
    # Tie-break is by cloud-level point index: evaluate candidates in that order.
    order = np.argsort(idx, kind="stable")
    if np.any(np.diff(idx[order]) == 0):
        raise ContractError("subset contains duplicate indices")
    idx_rows, d2_rows = _brute_candidate_rows(x[order], tie_break=True)
    inv = np.empty_like(order)
    inv[order] = np.arange(len(order))
    lists = _neighbor_lists(idx[order], idx_rows, d2_rows, k)
    return [lists[inv[a]] for a in range(len(idx))]


def knn_indexed(
    subset: Sequence[int] | np.ndarray,
    cloud: PointCloud,
    k: int,
    metric: Optional[MetricEmbedding] = None,
) -> list[NeighborList]:
    """Accelerated exact KNN; output equals knn_brute for any input.

    Uses a KD-tree over the metric embedding for candidate retrieval and
    re-ranks retrieved candidates with the same exact arithmetic as the brute
    route. Subsets below BRUTE_FORCE_CUTOFF go straight to brute force.
    """
    idx = _as_subset(subset)
    if len(idx) < k + 1:
        raise InsufficientPointsError(
            f"subset of {len(idx)} points cannot supply k={k} neighbors"
        )
    metric = metric or euclidean_metric()
    x = np.asarray(metric(cloud, idx), dtype=np.float64)
    order = np.argsort(idx, kind="stable")
    if np.any(np.diff(idx[order]) == 0):
        raise ContractError("subset contains duplicate indices")
    idx_rows, d2_rows = nearest_candidate_rows(x[order], k, tie_break=True)
    inv = np.empty_like(order)
    inv[order] = np.arange(len(order))
    lists = _neighbor_lists(idx[order], idx_rows, d2_rows, k)
    return [lists[inv[a]] for a in range(len(idx))]
