"""Range-aware pointwise distance distribution (RAPiD) matrices.

For a region of interest (a point subset), the RAPiD matrix stacks one row
per anchor point holding the k smallest 4D distances to its neighbors within
the region, where the fourth component is the difference of reflectivities
mapped onto the region's coordinate-distance range. Rows are ascending, the
matrix is sorted lexicographically by rows, entries beyond an outlier
threshold are substituted, and survivors are min-max normalized, which makes
the result invariant to rigid motions and to point storage order.

Neighbor selection is two-pass: a coordinate-only KNN defines the pair set
from which the reflectivity scale is computed (the map g needs the distance
range, which needs neighbor pairs), then candidates from a pool of the 4k
coordinate-nearest points are re-ranked under the full 4D metric. The pool is
tie-inclusive at its boundary so matrix values never depend on storage order.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .cloud import PointCloud
from .errors import ContractError, InsufficientPointsError
from .geometry import MetricEmbedding, NeighborList, nearest_candidate_rows

POOL_FACTOR = 4


@dataclass(frozen=True)
class RangeAwareConfig:
    """Per-range neighbor counts and the outlier threshold.

    band_edges  (close/mid boundary, mid/far boundary) in meters
    k_close, k_mid, k_far  neighbor counts per range band
    delta       outlier distance threshold, same units as the 4D distance
    """

    band_edges: tuple[float, float] = (20.0, 50.0)
    k_close: int = 10
    k_mid: int = 7
    k_far: int = 5
    delta: float = 2.0

    def __post_init__(self) -> None:
        lo, hi = self.band_edges
        if not 0.0 < lo < hi:
            raise ContractError("band_edges must satisfy 0 < close/mid < mid/far")
        if min(self.k_close, self.k_mid, self.k_far) < 1:
            raise ContractError("all k values must be >= 1")
        if self.delta <= 0:
            raise ContractError("delta must be positive")

    @property
    def ks(self) -> tuple[int, int, int]:
        return (self.k_close, self.k_mid, self.k_far)

    @property
    def k_max(self) -> int:
        return max(self.ks)

    def k_for_band(self, band: int) -> int:
        return self.ks[band]

    def fallback_chain(self, band: int) -> list[int]:
        """k values to try for a sparse band: the band's k, then every
        strictly smaller configured k in descending order."""
        k = self.k_for_band(band)
        smaller = sorted({v for v in self.ks if v < k}, reverse=True)
        return [k, *smaller]

    @classmethod
    def semantic_kitti(cls) -> "RangeAwareConfig":
        return cls(k_close=10, k_mid=7, k_far=5)

    @classmethod
    def nuscenes(cls) -> "RangeAwareConfig":
        return cls(k_close=8, k_mid=6, k_far=3)


@dataclass(frozen=True)
class ReflectivityScale:
    """Reflectivity extremes and coordinate-distance range of one region."""

    r_min: float
    r_max: float
    d_min: float
    d_max: float

    def __post_init__(self) -> None:
        if self.r_min > self.r_max:
            raise ContractError("r_min must not exceed r_max")
        if not 0.0 <= self.d_min <= self.d_max:
            raise ContractError("need 0 <= d_min <= d_max")


@dataclass(frozen=True)
class RapidMatrix:
    """u x k matrix of normalized sorted distances for one region of interest.

    values   (u, k) float64 in [0, 1]; each row ascending, rows in
             lexicographic ascending order
    roi_id   region identifier, e.g. "ring003-mid" or "class001-close"
    k        neighbor count
    scale    reflectivity/distance scale used by the 4D metric
    anchors  original point index of each row, in post-sort row order
    """

    values: np.ndarray
    roi_id: str
    k: int
    scale: ReflectivityScale
    anchors: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        a = np.asarray(self.anchors, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != self.k:
            raise ContractError(f"values must be (u, {self.k}), got {v.shape}")
        if a.shape != (v.shape[0],):
            raise ContractError("anchors must have one entry per row")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "anchors", a)

    @property
    def u(self) -> int:
        return self.values.shape[0]


def reflectivity_map(r: np.ndarray | float, scale: ReflectivityScale) -> np.ndarray | float:
    """Linear map of reflectivity onto [d_min, d_max].

    Degenerate scale (r_min == r_max, a constant-reflectivity region) maps
    everything to d_min so the 4D metric collapses to the 3D one.
    """
    r = np.asarray(r, dtype=np.float64)
    if scale.r_max == scale.r_min:
        out = np.full_like(r, scale.d_min)
    else:
        out = (r - scale.r_min) / (scale.r_max - scale.r_min) * (
            scale.d_max - scale.d_min
        ) + scale.d_min
    return float(out) if out.ndim == 0 else out


def rho(
    p_j: np.ndarray,
    p_l: np.ndarray,
    r_j: float,
    r_l: float,
    scale: ReflectivityScale,
) -> float:
    """4D distance: Euclidean norm of [p_j - p_l, g(r_j) - g(r_l)]."""
    dg = reflectivity_map(r_j, scale) - reflectivity_map(r_l, scale)
    diff = np.asarray(p_j, dtype=np.float64) - np.asarray(p_l, dtype=np.float64)
    return float(np.sqrt(diff @ diff + dg * dg))


def reflectivity_metric(scale: ReflectivityScale) -> MetricEmbedding:
    """4D metric embedding (x, y, z, g(r)) for the geometry KNN routines."""

    def embed(cloud: PointCloud, subset: np.ndarray) -> np.ndarray:
        idx = np.asarray(subset)
        g = reflectivity_map(cloud.remission[idx], scale)
        return np.column_stack([cloud.points[idx], g])

    return embed


def compute_scale(
    subset: Sequence[int] | np.ndarray,
    cloud: PointCloud,
    neighbor_lists: Sequence[NeighborList],
) -> ReflectivityScale:
    """Scale from exactly the (anchor, neighbor) pairs of the given lists.

    d_min/d_max are coordinate-only distances recomputed from the cloud (the
    lists may have been ranked under any metric); r_min/r_max are taken over
    the subset's reflectivities.
    """
    if len(neighbor_lists) == 0:
        raise InsufficientPointsError("no neighbor lists to derive a scale from")
    idx = np.asarray(subset, dtype=np.int64)
    d_min = np.inf
    d_max = -np.inf
    for nl in neighbor_lists:
        diff = cloud.points[nl.indices] - cloud.points[nl.anchor]
        d2 = np.einsum("ij,ij->i", diff, diff)
        d_min = min(d_min, float(d2.min()))
        d_max = max(d_max, float(d2.max()))
    refl = cloud.remission[idx]
    return ReflectivityScale(
        r_min=float(refl.min()),
        r_max=float(refl.max()),
        d_min=float(np.sqrt(d_min)),
        d_max=float(np.sqrt(d_max)),
    )


def select_k(point: np.ndarray, config: RangeAwareConfig) -> int:
    """Neighbor count for a point's range band; an exact edge hit falls in
    the farther band."""
    p = np.asarray(point, dtype=np.float64)
    r = float(np.sqrt(p @ p))
    if r < config.band_edges[0]:
        return config.k_close
    if r < config.band_edges[1]:
        return config.k_mid
    return config.k_far


def band_indices(ranges: np.ndarray, config: RangeAwareConfig) -> np.ndarray:
    """Vectorized band assignment: 0 close, 1 mid, 2 far."""
    r = np.asarray(ranges, dtype=np.float64)
    return np.searchsorted(np.asarray(config.band_edges), r, side="right").astype(
        np.int8
    )


def _tick(timings: Optional[dict], key: str, start: float) -> float:
    now = time.perf_counter()
    if timings is not None:
        timings[key] = timings.get(key, 0.0) + (now - start)
    return now


def _rapid_rows(
    subset: np.ndarray,
    cloud: PointCloud,
    k: int,
    timings: Optional[dict] = None,
) -> tuple[np.ndarray, np.ndarray, ReflectivityScale]:
    """Un-normalized sorted-per-row 4D distance rows in ascending-anchor order."""
    u = len(subset)
    if u < k + 1:
        raise InsufficientPointsError(
            f"region of {u} points cannot supply k={k} neighbors"
        )
    anchors = np.sort(np.asarray(subset, dtype=np.int64))
    if np.any(np.diff(anchors) == 0):
        raise ContractError("subset contains duplicate indices")
    pts = cloud.points[anchors]
    refl = cloud.remission[anchors]

    t0 = time.perf_counter()
    n_pool = min(POOL_FACTOR * k, u - 1)
    # Only distance values reach the matrix (tied candidates carry equal
    # values), so the index tie-break pass is unnecessary here.
    idx_rows, d2_rows = nearest_candidate_rows(pts, n_pool, tie_break=False)
    t0 = _tick(timings, "knn", t0)

    # Coordinate k-NN pairs define the scale of the reflectivity map.
    knn_d2 = d2_rows[:, :k]
    scale = ReflectivityScale(
        r_min=float(refl.min()),
        r_max=float(refl.max()),
        d_min=float(np.sqrt(knn_d2.min())),
        d_max=float(np.sqrt(knn_d2.max())),
    )
    g = np.asarray(reflectivity_map(refl, scale))

    # Tie-inclusive pool of coordinate-nearest candidates, re-ranked in 4D.
    pool_cut = d2_rows[:, n_pool - 1]
    in_pool = d2_rows <= pool_cut[:, None]
    dg = g[idx_rows] - g[:, None]
    rho2 = np.where(in_pool, d2_rows + dg * dg, np.inf)

    order = np.argsort(rho2, axis=1, kind="stable")
    rows = np.sqrt(np.take_along_axis(rho2, order[:, :k], axis=1))
    _tick(timings, "sort", t0)
    return rows, anchors, scale


def _lexsorted(rows: np.ndarray, anchors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    order = np.lexsort(rows[:, ::-1].T)
    return rows[order], anchors[order]


def rapid_unnormalized(
    subset: Sequence[int] | np.ndarray,
    cloud: PointCloud,
    k: int,
    timings: Optional[dict] = None,
) -> tuple[np.ndarray, np.ndarray, ReflectivityScale]:
    """Raw 4D distance matrix before outlier handling and normalization.

    Rows ascending and in lexicographic order; used by invariance checks that
    compare distances at double precision. Returns (rows, anchors, scale).
    """
    rows, anchors, scale = _rapid_rows(np.asarray(subset), cloud, k, timings)
    rows, anchors = _lexsorted(rows, anchors)
    return rows, anchors, scale


def rapid(
    subset: Sequence[int] | np.ndarray,
    cloud: PointCloud,
    k: int,
    delta: float,
    roi_id: str = "",
    timings: Optional[dict] = None,
) -> RapidMatrix:
    """Full RAPiD pipeline for one region of interest.

    Entries above delta are dropped from normalization and written back as
    exactly 1.0; survivors are min-max normalized over the whole matrix (a
    constant matrix normalizes to 0.0). Rows are sorted lexicographically by
    their final values.
    """
    rows, anchors, scale = _rapid_rows(np.asarray(subset), cloud, k, timings)
    t0 = time.perf_counter()
    outlier = rows > delta
    survivors = rows[~outlier]
    if survivors.size == 0:
        values = np.ones_like(rows)
    else:
        lo = float(survivors.min())
        hi = float(survivors.max())
        if hi > lo:
            values = np.where(outlier, 1.0, (rows - lo) / (hi - lo))
        else:
            values = np.where(outlier, 1.0, 0.0)
    values, anchors = _lexsorted(values, anchors)
    _tick(timings, "normalize", t0)
    return RapidMatrix(values=values, roi_id=roi_id, k=k, scale=scale, anchors=anchors)
