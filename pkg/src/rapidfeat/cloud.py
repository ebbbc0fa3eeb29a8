"""Core point cloud containers shared by every stage of the pipeline.

A :class:`PointCloud` is columnar and immutable: coordinates, remission and
the optional ring/label channels are stored as read-only numpy arrays, so a
cloud can be shared freely across parallel workers.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import ContractError


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(a)
    if out is a:
        out = a.copy()
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class PointCloud:
    """Columnar LiDAR scan.

    points    (m, 3) float64 coordinates in meters
    remission (m,) float64 scalar per point, used as the reflectivity r
              (nominally in [0, 1] on disk, not enforced)
    ring      optional (m,) int32 beam index
    label     optional (m,) int32 semantic class id
    """

    points: np.ndarray
    remission: np.ndarray
    ring: Optional[np.ndarray] = None
    label: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ContractError(f"points must have shape (m, 3), got {pts.shape}")
        if not np.isfinite(pts).all():
            bad = np.flatnonzero(~np.isfinite(pts).all(axis=1))
            raise ContractError(f"non-finite coordinates at indices {bad[:8].tolist()}")
        rem = np.asarray(self.remission, dtype=np.float64)
        if rem.shape != (len(pts),):
            raise ContractError(
                f"remission length {rem.shape} does not match {len(pts)} points"
            )
        if not np.isfinite(rem).all():
            raise ContractError("non-finite remission values")
        object.__setattr__(self, "points", _readonly(pts))
        object.__setattr__(self, "remission", _readonly(rem))
        for name in ("ring", "label"):
            chan = getattr(self, name)
            if chan is None:
                continue
            arr = np.asarray(chan, dtype=np.int32)
            if arr.shape != (len(pts),):
                raise ContractError(f"{name} length does not match point count")
            object.__setattr__(self, name, _readonly(arr))

    def __len__(self) -> int:
        return len(self.points)

    def with_labels(self, labels: np.ndarray) -> "PointCloud":
        return replace(self, label=np.asarray(labels, dtype=np.int32))

    def with_ring(self, ring: np.ndarray) -> "PointCloud":
        return replace(self, ring=np.asarray(ring, dtype=np.int32))

    def with_points(self, points: np.ndarray) -> "PointCloud":
        return replace(self, points=np.asarray(points, dtype=np.float64))

    def with_remission(self, remission: np.ndarray) -> "PointCloud":
        return replace(self, remission=np.asarray(remission, dtype=np.float64))

    def take(self, indices: np.ndarray) -> "PointCloud":
        """Row-subset of the cloud, preserving optional channels."""
        idx = np.asarray(indices)
        return PointCloud(
            points=self.points[idx],
            remission=self.remission[idx],
            ring=None if self.ring is None else self.ring[idx],
            label=None if self.label is None else self.label[idx],
        )


@dataclass(frozen=True)
class SensorGeometry:
    """Spinning LiDAR beam layout.

    beam_count             number of laser beams B
    delta_theta            mean horizontal angular resolution, radians
    delta_phi              mean vertical angular resolution, radians
    measurements_per_cycle measurements per scan cycle s
    """

    beam_count: int
    delta_theta: float
    delta_phi: float
    measurements_per_cycle: int = 1800

    def __post_init__(self) -> None:
        if self.beam_count <= 0:
            raise ContractError("beam_count must be positive")
        if self.delta_theta <= 0 or self.delta_phi <= 0:
            raise ContractError("angular resolutions must be positive")
        if self.measurements_per_cycle <= 0:
            raise ContractError("measurements_per_cycle must be positive")

    @classmethod
    def from_fov(
        cls,
        beam_count: int,
        vertical_fov: tuple[float, float],
        measurements_per_cycle: int = 1800,
    ) -> "SensorGeometry":
        """Derive angular resolutions from beam count and vertical field of view.

        vertical_fov is (low, high) elevation in radians. delta_phi spans the
        field of view over the beams; delta_theta divides the full circle by
        the per-cycle measurement count.
        """
        lo, hi = vertical_fov
        if hi <= lo:
            raise ContractError("vertical_fov must be (low, high) with high > low")
        return cls(
            beam_count=beam_count,
            delta_theta=2.0 * np.pi / measurements_per_cycle,
            delta_phi=(hi - lo) / beam_count,
            measurements_per_cycle=measurements_per_cycle,
        )
