"""On-disk formats: KITTI scan/label decoding, containers, synthetic scenes."""

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rapidfeat import (
    EmptySceneError,
    FormatError,
    LabelMismatchError,
    MalformedScanError,
    PlanePrimitive,
    PointCloud,
    RapidMatrix,
    ReflectivityScale,
    SyntheticSceneSpec,
    load_features,
    load_kitti_labels,
    load_kitti_scan,
    save_features,
    save_kitti_labels,
    save_kitti_scan,
    synthesize_scene,
)
from rapidfeat.scene_io import (
    load_feature_file,
    save_feature_file,
    load_tensors,
    save_tensors,
    write_pgm,
)

from conftest import default_scene, small_geometry


class TestKittiScan:
    def test_two_point_decode(self, tmp_path):
        path = tmp_path / "scan.bin"
        path.write_bytes(struct.pack("<8f", 1, 2, 3, 0.5, 4, 5, 6, 0.25))
        cloud = load_kitti_scan(path)
        assert cloud.points.tolist() == [[1, 2, 3], [4, 5, 6]]
        assert cloud.remission.tolist() == [0.5, 0.25]

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.bin"
        path.write_bytes(b"")
        assert len(load_kitti_scan(path)) == 0

    def test_misaligned_size_rejected(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"\x00" * 17)
        with pytest.raises(MalformedScanError):
            load_kitti_scan(path)

    def test_non_finite_reports_index(self, tmp_path):
        path = tmp_path / "nan.bin"
        path.write_bytes(struct.pack("<8f", 1, 2, 3, 0.5, np.nan, 5, 6, 0.25))
        with pytest.raises(MalformedScanError, match="1"):
            load_kitti_scan(path)

    def test_roundtrip(self, tmp_path, rng):
        cloud = PointCloud(
            points=rng.normal(size=(40, 3)).astype(np.float32).astype(np.float64),
            remission=rng.uniform(0, 1, 40).astype(np.float32).astype(np.float64),
        )
        path = tmp_path / "rt.bin"
        save_kitti_scan(cloud, path)
        loaded = load_kitti_scan(path)
        assert np.array_equal(loaded.points, cloud.points)
        assert np.array_equal(loaded.remission, cloud.remission)

    @settings(max_examples=40, deadline=None)
    @given(
        n_points=st.integers(0, 50),
        seed=st.integers(0, 2 ** 31),
        extra=st.integers(0, 15),
    )
    def test_decode_totality(self, n_points, seed, extra):
        # every 16-byte-aligned finite file decodes; every misaligned errors
        import tempfile
        from pathlib import Path

        rng = np.random.default_rng(seed)
        data = rng.uniform(-1e6, 1e6, size=(n_points, 4)).astype("<f4")
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "scan.bin"
            path.write_bytes(data.tobytes())
            cloud = load_kitti_scan(path)
            assert len(cloud) == n_points
            if extra:
                path.write_bytes(data.tobytes() + b"\x01" * extra)
                if extra % 16:
                    with pytest.raises(MalformedScanError):
                        load_kitti_scan(path)


class TestKittiLabels:
    def test_low_16_bits(self, tmp_path):
        path = tmp_path / "l.label"
        path.write_bytes(struct.pack("<2I", 0x00010009, 0))
        cloud = PointCloud(points=np.ones((2, 3)), remission=np.zeros(2))
        labeled = load_kitti_labels(path, cloud)
        assert labeled.label.tolist() == [9, 0]

    def test_count_mismatch(self, tmp_path):
        path = tmp_path / "l.label"
        path.write_bytes(struct.pack("<3I", 1, 2, 3))
        cloud = PointCloud(points=np.ones((2, 3)), remission=np.zeros(2))
        with pytest.raises(LabelMismatchError):
            load_kitti_labels(path, cloud)

    def test_roundtrip(self, tmp_path):
        path = tmp_path / "rt.label"
        save_kitti_labels(np.array([3, 5, 250], dtype=np.int32), path)
        cloud = PointCloud(points=np.ones((3, 3)), remission=np.zeros(3))
        assert load_kitti_labels(path, cloud).label.tolist() == [3, 5, 250]


class TestSynthesizeScene:
    def test_zero_noise_plane_exact(self):
        spec = SyntheticSceneSpec(
            primitives=(
                PlanePrimitive((0, 0, -1.5), (1, 0, 0), (0, 1, 0), 10, 10, 200, 1, 0.5),
            ),
            geometry=small_geometry(),
            noise_sigma=0.0,
            seed=42,
        )
        cloud = synthesize_scene(spec)
        assert np.all(cloud.points[:, 2] == -1.5)

    def test_determinism(self):
        a = synthesize_scene(default_scene(seed=9))
        b = synthesize_scene(default_scene(seed=9))
        assert a.points.tobytes() == b.points.tobytes()
        assert a.remission.tobytes() == b.remission.tobytes()
        assert a.ring.tobytes() == b.ring.tobytes()
        assert a.label.tobytes() == b.label.tobytes()

    def test_different_seeds_differ(self):
        a = synthesize_scene(default_scene(seed=1))
        b = synthesize_scene(default_scene(seed=2))
        assert a.points.tobytes() != b.points.tobytes()

    def test_label_set_matches_primitives(self, scene_cloud):
        assert set(np.unique(scene_cloud.label)) == {1, 2, 3}

    def test_per_primitive_reflectivity(self, scene_cloud):
        assert set(np.unique(scene_cloud.remission)) == {0.2, 0.6, 0.9}

    def test_empty_scene_rejected(self):
        spec = SyntheticSceneSpec(
            primitives=(), geometry=small_geometry(), noise_sigma=0.0, seed=0
        )
        with pytest.raises(EmptySceneError):
            synthesize_scene(spec)


def random_matrix(rng, u, k, roi="ring000-close"):
    values = np.sort(rng.uniform(0, 1, size=(u, k)).astype(np.float32), axis=1)
    values = values[np.lexsort(values[:, ::-1].T)].astype(np.float64)
    return RapidMatrix(
        values=values,
        roi_id=roi,
        k=k,
        scale=ReflectivityScale(
            float(rng.uniform(0, 0.5)),
            float(rng.uniform(0.5, 1)),
            float(rng.uniform(0, 1)),
            float(rng.uniform(1, 2)),
        ),
        anchors=rng.permutation(u).astype(np.int64),
    )


class TestFeatureContainer:
    def test_roundtrip_field_by_field(self, tmp_path, rng):
        mats = [random_matrix(rng, 12, 4), random_matrix(rng, 7, 6, "ring001-far")]
        path = tmp_path / "f.rapd"
        save_features(mats, path)
        loaded = load_features(path)
        assert len(loaded) == 2
        for a, b in zip(mats, loaded):
            assert np.array_equal(a.values, b.values)  # f32-representable
            assert np.array_equal(a.anchors, b.anchors)
            assert a.roi_id == b.roi_id and a.k == b.k and a.scale == b.scale

    @settings(max_examples=25, deadline=None)
    @given(n_mats=st.integers(0, 4), seed=st.integers(0, 2 ** 31))
    def test_roundtrip_property(self, n_mats, seed):
        import tempfile
        from pathlib import Path

        rng = np.random.default_rng(seed)
        mats = [
            random_matrix(rng, int(rng.integers(1, 20)), int(rng.integers(1, 8)),
                          roi=f"ring{i:03d}-mid")
            for i in range(n_mats)
        ]
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "f.rapd"
            save_features(mats, path)
            loaded = load_features(path)
        assert len(loaded) == n_mats
        for a, b in zip(mats, loaded):
            assert np.array_equal(a.values, b.values)
            assert np.array_equal(a.anchors, b.anchors)
            assert (a.roi_id, a.k, a.scale) == (b.roi_id, b.k, b.scale)

    def test_empty_sequence(self, tmp_path):
        path = tmp_path / "empty.rapd"
        save_features([], path)
        assert load_features(path) == []

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "bad.rapd"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(FormatError):
            load_features(path)

    def test_unknown_version(self, tmp_path, rng):
        path = tmp_path / "v9.rapd"
        save_features([random_matrix(rng, 3, 2)], path)
        raw = bytearray(path.read_bytes())
        raw[4] = 9
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            load_features(path)

    def test_truncated_payload(self, tmp_path, rng):
        path = tmp_path / "trunc.rapd"
        save_features([random_matrix(rng, 8, 4)], path)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 10])
        with pytest.raises(FormatError):
            load_features(path)

    def test_pointwise_record_roundtrip(self, tmp_path, scene_cloud):
        from rapidfeat import RangeAwareConfig, r_rapid

        fs = r_rapid(scene_cloud, small_geometry(), RangeAwareConfig(k_close=5, k_mid=4, k_far=3))
        path = tmp_path / "full.rapd"
        save_feature_file(path, fs.matrices, fs, meta={"k": [5, 4, 3]})
        loaded = load_feature_file(path)
        assert loaded.meta == {"k": [5, 4, 3]}
        assert len(loaded.matrices) == len(fs.matrices)
        assert np.array_equal(
            loaded.pointwise.values, fs.values.astype(np.float32).astype(np.float64)
        )
        assert np.array_equal(loaded.pointwise.roi, fs.roi)
        assert np.array_equal(loaded.pointwise.valid_width, fs.valid_width)


class TestTensorContainer:
    def test_roundtrip(self, tmp_path, rng):
        tensors = {
            "a.weight": rng.normal(size=(4, 6)),
            "a.bias": rng.normal(size=6),
            "k": rng.normal(size=(2, 3, 3, 3, 3)),
        }
        path = tmp_path / "w.rapd"
        save_tensors(path, tensors, {"activation": "relu"})
        loaded, meta = load_tensors(path)
        assert meta == {"activation": "relu"}
        assert set(loaded) == set(tensors)
        for name in tensors:
            assert np.array_equal(loaded[name], tensors[name])

    def test_kind_mismatch(self, tmp_path, rng):
        path = tmp_path / "w.rapd"
        save_tensors(path, {"t": rng.normal(size=3)}, {})
        with pytest.raises(FormatError):
            load_features(path)


class TestCsvConverter:
    def test_full_columns(self, tmp_path):
        from rapidfeat import load_csv_cloud

        path = tmp_path / "cloud.csv"
        path.write_text(
            "x,y,z,remission,ring,label\n"
            "1.0,2.0,3.0,0.5,0,9\n"
            "4.0,5.0,6.0,0.25,1,4\n"
        )
        cloud = load_csv_cloud(path)
        assert cloud.points.tolist() == [[1, 2, 3], [4, 5, 6]]
        assert cloud.ring.tolist() == [0, 1]
        assert cloud.label.tolist() == [9, 4]

    def test_minimal_columns(self, tmp_path):
        from rapidfeat import load_csv_cloud

        path = tmp_path / "cloud.csv"
        path.write_text("x,y,z,remission\n1,2,3,0.5\n")
        cloud = load_csv_cloud(path)
        assert cloud.ring is None and cloud.label is None

    def test_missing_required_column(self, tmp_path):
        from rapidfeat import load_csv_cloud

        path = tmp_path / "cloud.csv"
        path.write_text("x,y,z\n1,2,3\n")
        with pytest.raises(MalformedScanError):
            load_csv_cloud(path)


class TestPgm:
    def test_header_and_payload(self, tmp_path):
        path = tmp_path / "img.pgm"
        write_pgm(np.array([[0.0, 1.0], [0.5, 1.0], [0.25, 0.75]]), path)
        raw = path.read_bytes()
        assert raw.startswith(b"P5\n2 3\n255\n")
        pixels = raw.split(b"255\n", 1)[1]
        assert list(pixels) == [0, 255, 128, 255, 64, 191]

    def test_all_ones_is_white(self, tmp_path):
        path = tmp_path / "white.pgm"
        write_pgm(np.ones((4, 3)), path)
        pixels = path.read_bytes().split(b"255\n", 1)[1]
        assert set(pixels) == {255}
