"""Command-line surface: config handling, commands, exit codes."""

import json

import numpy as np
import pytest

from rapidfeat import ConfusionMatrix, RunConfig, accumulate, miou, save_kitti_labels
from rapidfeat.cli import EXIT_DATA, EXIT_INVARIANT, EXIT_OK, EXIT_USAGE, main
from rapidfeat.scene_io import load_feature_file, load_features


SCENE = {
    "seed": 11,
    "noise_sigma": 0.02,
    "primitives": [
        {
            "type": "plane",
            "origin": [0, 0, -1.5],
            "u_axis": [1, 0, 0],
            "v_axis": [0, 1, 0],
            "extent_u": 14,
            "extent_v": 14,
            "count": 2200,
            "class_id": 1,
            "reflectivity": 0.2,
        },
        {
            "type": "box",
            "center": [8, 3, 0],
            "size": [4, 2, 1.6],
            "count": 600,
            "class_id": 2,
            "reflectivity": 0.6,
        },
    ],
}


@pytest.fixture
def config_file(tmp_path):
    def write(**extra):
        doc = {
            "input": {"synthetic": SCENE},
            "output": {"features": str(tmp_path / "r.rapd")},
            "sensor": {
                "beam_count": 16,
                "vertical_fov_deg": [-10, 10],
                "measurements_per_cycle": 360,
            },
        }
        for key, value in extra.items():
            if isinstance(value, dict) and isinstance(doc.get(key), dict):
                doc[key].update(value)
            else:
                doc[key] = value
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(doc))
        return path

    return write


class TestRunConfig:
    def test_defaults_without_file(self):
        config = RunConfig.load(None)
        assert config.rapid.ks == (10, 7, 5)
        assert config.rapid.band_edges == (20.0, 50.0)
        assert config.rapid.delta == 2.0
        assert config.alpha == 0.5 and config.lam == 0.1
        assert config.fusion_ratio == 4
        assert config.workers == 1

    def test_file_overrides_defaults(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"rapid": {"k_close": 8, "k_mid": 6, "k_far": 3}}))
        config = RunConfig.load(str(path))
        assert config.rapid.ks == (8, 6, 3)
        assert config.rapid.delta == 2.0  # untouched default

    def test_flag_overrides_beat_file(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"workers": 2}))
        config = RunConfig.load(str(path), {"workers": 4})
        assert config.workers == 4

    def test_every_pipeline_hyperparameter_settable(self, tmp_path):
        doc = {
            "rapid": {
                "k_close": 9,
                "k_mid": 6,
                "k_far": 4,
                "band_edges": [15.0, 40.0],
                "delta": 1.5,
            },
            "voxel_size": 0.4,
            "embedding": {"latents": 2, "width": 8, "reduced": 4, "stages": 1},
            "fusion": {"ratio": 2},
            "loss": {"alpha": 0.3, "lambda": 0.2, "sim": "dot"},
        }
        path = tmp_path / "c.json"
        path.write_text(json.dumps(doc))
        c = RunConfig.load(str(path))
        assert c.rapid.band_edges == (15.0, 40.0) and c.rapid.delta == 1.5
        assert c.voxel_size == 0.4
        assert (c.embedding.latents, c.embedding.width, c.embedding.reduced) == (2, 8, 4)
        assert c.fusion_ratio == 2
        assert (c.alpha, c.lam, c.sim) == (0.3, 0.2, "dot")

    def test_malformed_json_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{nope")
        from rapidfeat import ContractError

        with pytest.raises(ContractError):
            RunConfig.load(str(path))


class TestExtract:
    def test_row_count_equals_point_count(self, config_file, tmp_path):
        assert main(["extract", "--config", str(config_file())]) == EXIT_OK
        out = load_feature_file(tmp_path / "r.rapd")
        assert len(out.pointwise.values) == 2800
        assert out.meta["k"] == [10, 7, 5]

    def test_byte_identical_reruns(self, config_file, tmp_path):
        path = config_file()
        main(["extract", "--config", str(path)])
        first = (tmp_path / "r.rapd").read_bytes()
        main(["extract", "--config", str(path)])
        assert (tmp_path / "r.rapd").read_bytes() == first

    def test_no_class_output_by_default(self, config_file, tmp_path):
        main(["extract", "--config", str(config_file())])
        assert not (tmp_path / "c.rapd").exists()

    def test_class_output_when_requested(self, config_file, tmp_path):
        path = config_file(output={"class_features": str(tmp_path / "c.rapd")})
        assert main(["extract", "--config", str(path)]) == EXIT_OK
        mats = load_features(tmp_path / "c.rapd")
        assert {m.roi_id[:8] for m in mats} <= {"class001", "class002"}

    def test_missing_input_is_usage_error(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"output": {"features": str(tmp_path / "x.rapd")}}))
        assert main(["extract", "--config", str(path)]) == EXIT_USAGE

    def test_unreadable_scan_is_data_error(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(
            json.dumps(
                {
                    "input": {"scan": str(tmp_path / "missing.bin")},
                    "output": {"features": str(tmp_path / "x.rapd")},
                }
            )
        )
        assert main(["extract", "--config", str(path)]) == EXIT_DATA

    def test_workers_flag_same_bytes(self, config_file, tmp_path):
        path = config_file()
        main(["extract", "--config", str(path)])
        first = (tmp_path / "r.rapd").read_bytes()
        main(["extract", "--config", str(path), "--workers", "2"])
        assert (tmp_path / "r.rapd").read_bytes() == first

    def test_prints_region_statistics(self, config_file, capsys):
        main(["extract", "--config", str(config_file())])
        out = capsys.readouterr().out
        assert "pad_rate" in out and "histogram" in out

    def test_class_output_without_labels_is_data_error(self, tmp_path, config_file):
        import struct

        scan = tmp_path / "bare.bin"
        scan.write_bytes(
            struct.pack("<4f", 1, 2, 3, 0.5) * 60
        )  # 60 coincident points, no labels
        cfg = tmp_path / "c2.json"
        cfg.write_text(
            json.dumps(
                {
                    "input": {"scan": str(scan)},
                    "output": {
                        "features": str(tmp_path / "r2.rapd"),
                        "class_features": str(tmp_path / "c2.rapd"),
                    },
                }
            )
        )
        assert main(["extract", "--config", str(cfg)]) == EXIT_DATA


class TestCheckInvariance:
    def test_identity_zero_deviation(self, config_file, capsys):
        code = main(
            ["check-invariance", "--config", str(config_file()), "--trials", "1",
             "--identity"]
        )
        assert code == EXIT_OK
        assert "0.000e+00" in capsys.readouterr().out

    def test_rigid_trials_pass(self, config_file):
        code = main(
            ["check-invariance", "--config", str(config_file()), "--trials", "5"]
        )
        assert code == EXIT_OK

    def test_non_rigid_negative_control(self, config_file):
        code = main(
            ["check-invariance", "--config", str(config_file()), "--trials", "2",
             "--non-rigid"]
        )
        assert code == EXIT_INVARIANT

    def test_zero_trials_usage_error(self, config_file):
        code = main(
            ["check-invariance", "--config", str(config_file()), "--trials", "0"]
        )
        assert code == EXIT_USAGE


class TestEval:
    def write_labels(self, directory, name, values):
        directory.mkdir(exist_ok=True)
        save_kitti_labels(np.asarray(values, dtype=np.uint32), directory / name)

    def test_perfect_prediction(self, tmp_path, config_file, capsys):
        truth, pred = tmp_path / "truth", tmp_path / "pred"
        for scan in ("000000.label", "000001.label"):
            self.write_labels(truth, scan, [1, 2, 3, 1])
            self.write_labels(pred, scan, [1, 2, 3, 1])
        code = main(
            ["eval", "--config", str(config_file()), "--truth", str(truth),
             "--pred", str(pred)]
        )
        assert code == EXIT_OK
        assert "mIoU 1.0000" in capsys.readouterr().out

    def test_three_scan_hand_table(self, tmp_path, config_file, capsys):
        truth, pred = tmp_path / "t", tmp_path / "p"
        # accumulate per scan, oracle is one combined matrix
        scans = [
            ([1, 1, 2], [1, 2, 2]),
            ([2, 2, 1], [2, 2, 1]),
            ([1, 2, 1], [2, 2, 1]),
        ]
        cm = ConfusionMatrix.empty(20, ignore=(0,))
        for i, (t, p) in enumerate(scans):
            self.write_labels(truth, f"{i:06d}.label", t)
            self.write_labels(pred, f"{i:06d}.label", p)
            accumulate(cm, t, p)
        csv_path = tmp_path / "out.csv"
        code = main(
            ["eval", "--config", str(config_file()), "--truth", str(truth),
             "--pred", str(pred), "--csv", str(csv_path)]
        )
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert f"mIoU {miou(cm):.4f}" in out
        assert csv_path.read_text().strip().endswith(f"miou,{miou(cm):.6f}")

    def test_misaligned_lists_error(self, tmp_path, config_file):
        truth, pred = tmp_path / "t2", tmp_path / "p2"
        self.write_labels(truth, "a.label", [1])
        self.write_labels(pred, "b.label", [1])
        code = main(
            ["eval", "--config", str(config_file()), "--truth", str(truth),
             "--pred", str(pred)]
        )
        assert code == EXIT_DATA

    def test_length_mismatch_error(self, tmp_path, config_file):
        truth, pred = tmp_path / "t3", tmp_path / "p3"
        self.write_labels(truth, "a.label", [1, 2])
        self.write_labels(pred, "a.label", [1])
        code = main(
            ["eval", "--config", str(config_file()), "--truth", str(truth),
             "--pred", str(pred)]
        )
        assert code == EXIT_DATA

    def test_no_defined_class_surfaces_undefined_metric(self, tmp_path, config_file, capsys):
        # every point carries the ignored class: no IoU is defined
        truth, pred = tmp_path / "t4", tmp_path / "p4"
        self.write_labels(truth, "a.label", [0, 0, 0])
        self.write_labels(pred, "a.label", [0, 0, 0])
        code = main(
            ["eval", "--config", str(config_file()), "--truth", str(truth),
             "--pred", str(pred)]
        )
        assert code == EXIT_DATA
        assert "no class has a defined IoU" in capsys.readouterr().err


class TestBench:
    def test_reports_all_stages_and_identical_workers(self, config_file, capsys):
        code = main(
            ["bench", "--config", str(config_file()), "--workers-list", "1,2"]
        )
        assert code == EXIT_OK
        out = capsys.readouterr().out
        for stage in ("load", "partition", "knn", "sort", "normalize"):
            assert stage in out
        assert "NO" not in out

    def test_stable_point_counts(self, config_file, capsys):
        main(["bench", "--config", str(config_file()), "--workers-list", "1"])
        first = capsys.readouterr().out.splitlines()[0]
        main(["bench", "--config", str(config_file()), "--workers-list", "1"])
        second = capsys.readouterr().out.splitlines()[0]
        assert first.split("sha")[0] == second.split("sha")[0]


class TestHeatmap:
    def test_padded_matrix_renders_white(self, tmp_path, config_file):
        from rapidfeat import RapidMatrix, ReflectivityScale, save_features

        mat = RapidMatrix(
            values=np.ones((6, 4)),
            roi_id="ring000-far",
            k=4,
            scale=ReflectivityScale(0, 1, 0, 1),
            anchors=np.arange(6),
        )
        feat = tmp_path / "f.rapd"
        save_features([mat], feat)
        out = tmp_path / "img.pgm"
        code = main(["heatmap", str(feat), "--roi", "ring000-far", "--out", str(out)])
        assert code == EXIT_OK
        raw = out.read_bytes()
        assert raw.startswith(b"P5\n4 6\n255\n")
        assert set(raw.split(b"255\n", 1)[1]) == {255}

    def test_unknown_roi(self, tmp_path, config_file):
        main(["extract", "--config", str(config_file())])
        out = tmp_path / "img.pgm"
        code = main(
            ["heatmap", str(tmp_path / "r.rapd"), "--roi", "ring099-far",
             "--out", str(out)]
        )
        assert code == EXIT_DATA

    def test_invariant_under_rigid_motion(self, tmp_path, config_file):
        # recompute features from a rotated cloud; image bytes must match
        import rapidfeat as rf

        config = RunConfig.load(str(config_file()))
        spec = rf.scene_io.scene_spec_from_dict(SCENE, config.sensor)
        cloud = rf.synthesize_scene(spec)
        angle = 1.1
        rot = np.array(
            [
                [np.cos(angle), -np.sin(angle), 0],
                [np.sin(angle), np.cos(angle), 0],
                [0, 0, 1.0],
            ]
        )
        moved = cloud.with_points(cloud.points @ rot.T)
        base = rf.r_rapid(cloud, config.sensor, config.rapid)
        after = rf.r_rapid(moved, config.sensor, config.rapid)
        p1, p2 = tmp_path / "a.rapd", tmp_path / "b.rapd"
        rf.save_features(base.matrices, p1)
        rf.save_features(after.matrices, p2)
        roi = base.matrices[0].roi_id
        main(["heatmap", str(p1), "--roi", roi, "--out", str(tmp_path / "a.pgm")])
        main(["heatmap", str(p2), "--roi", roi, "--out", str(tmp_path / "b.pgm")])
        assert (tmp_path / "a.pgm").read_bytes() == (tmp_path / "b.pgm").read_bytes()


class TestUsage:
    def test_no_command_prints_help(self):
        assert main([]) == EXIT_USAGE

    def test_unknown_command(self):
        assert main(["frobnicate"]) == EXIT_USAGE

    def test_help_exits_zero(self):
        assert main(["--help"]) == EXIT_OK
