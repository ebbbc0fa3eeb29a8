"""PointCloud and SensorGeometry validation."""

import numpy as np
import pytest

from rapidfeat import ContractError, PointCloud, SensorGeometry


class TestPointCloud:
    def test_rejects_non_finite_coordinates(self):
        pts = np.array([[0.0, 0, 0], [np.nan, 0, 0]])
        with pytest.raises(ContractError):
            PointCloud(points=pts, remission=np.zeros(2))

    def test_rejects_length_mismatch(self):
        with pytest.raises(ContractError):
            PointCloud(points=np.zeros((3, 3)), remission=np.zeros(2))
        with pytest.raises(ContractError):
            PointCloud(
                points=np.zeros((3, 3)),
                remission=np.zeros(3),
                label=np.zeros(4, dtype=np.int32),
            )

    def test_arrays_are_read_only(self):
        cloud = PointCloud(points=np.zeros((2, 3)), remission=np.zeros(2))
        with pytest.raises(ValueError):
            cloud.points[0, 0] = 1.0
        with pytest.raises(ValueError):
            cloud.remission[0] = 1.0

    def test_source_array_not_captured(self):
        pts = np.zeros((2, 3))
        cloud = PointCloud(points=pts, remission=np.zeros(2))
        pts[0, 0] = 9.0
        assert cloud.points[0, 0] == 0.0

    def test_take_preserves_channels(self, rng):
        cloud = PointCloud(
            points=rng.normal(size=(6, 3)),
            remission=rng.uniform(0, 1, 6),
            ring=np.arange(6, dtype=np.int32),
            label=np.arange(6, dtype=np.int32) % 3,
        )
        sub = cloud.take(np.array([4, 1]))
        assert sub.ring.tolist() == [4, 1]
        assert sub.label.tolist() == [1, 1]

    def test_with_labels_returns_new_cloud(self):
        cloud = PointCloud(points=np.zeros((2, 3)), remission=np.zeros(2))
        labeled = cloud.with_labels(np.array([1, 2]))
        assert cloud.label is None
        assert labeled.label.tolist() == [1, 2]


class TestSensorGeometry:
    def test_validation(self):
        with pytest.raises(ContractError):
            SensorGeometry(0, 0.1, 0.1)
        with pytest.raises(ContractError):
            SensorGeometry(4, -0.1, 0.1)
        with pytest.raises(ContractError):
            SensorGeometry(4, 0.1, 0.0)

    def test_from_fov_derivation(self):
        g = SensorGeometry.from_fov(64, (np.radians(-24.8), np.radians(2.0)), 1800)
        assert g.delta_theta == pytest.approx(2 * np.pi / 1800, abs=0)
        assert g.delta_phi == pytest.approx(np.radians(26.8) / 64, rel=1e-12)

    def test_from_fov_rejects_inverted_range(self):
        with pytest.raises(ContractError):
            SensorGeometry.from_fov(4, (0.5, 0.1))
