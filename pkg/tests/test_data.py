import math

import numpy as np
import pytest

from sctrack import kitti, synthetic
from sctrack.errors import ConfigError, MalformedFileError
from sctrack.geometry import Box3D, points_in_box
from sctrack.kernels import nearest_neighbors
from sctrack.tracklets import Frame, Tracklet, build_model_shape, crop_canonical


class TestScanIO:
    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.bin"
        path.write_bytes(b"")
        assert kitti.read_scan(path).shape == (0, 4)

    def test_two_point_file(self, tmp_path):
        path = tmp_path / "two.bin"
        np.arange(8, dtype="<f4").tofile(path)
        scan = kitti.read_scan(path)
        assert scan.shape == (2, 4)
        np.testing.assert_allclose(scan[1], [4.0, 5.0, 6.0, 7.0])

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"\x00" * 20)
        with pytest.raises(MalformedFileError, match="multiple of 16"):
            kitti.read_scan(path)

    def test_write_read_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        points = rng.normal(size=(50, 3)).astype(np.float32).astype(np.float64)
        intensity = rng.uniform(size=50).astype(np.float32).astype(np.float64)
        path = tmp_path / "rt.bin"
        kitti.write_scan(path, points, intensity)
        scan = kitti.read_scan(path)
        np.testing.assert_array_equal(scan[:, :3], points)
        np.testing.assert_array_equal(scan[:, 3], intensity)


class TestLabels:
    FIXTURE = (
        "3 7 Car 0.10 1 -1.5 100.0 110.0 200.0 180.0 "
        "1.52 1.80 4.20 2.5 1.6 12.0 0.25\n"
    )

    def test_empty_file(self, tmp_path):
        path = tmp_path / "labels.txt"
        path.write_text("")
        assert kitti.parse_labels(path) == []

    def test_hand_written_fixture(self, tmp_path):
        path = tmp_path / "labels.txt"
        path.write_text(self.FIXTURE)
        (label,) = kitti.parse_labels(path)
        assert label.frame == 3
        assert label.track_id == 7
        assert label.type == "Car"
        assert label.truncated == pytest.approx(0.10)
        assert label.occluded == 1
        assert label.alpha_obs == pytest.approx(-1.5)
        assert label.bbox2d == (100.0, 110.0, 200.0, 180.0)
        assert label.dimensions == (1.52, 1.80, 4.20)
        assert label.location == (2.5, 1.6, 12.0)
        assert label.rotation_y == pytest.approx(0.25)

    def test_dontcare_rows_parse(self, tmp_path):
        path = tmp_path / "labels.txt"
        path.write_text(
            "0 -1 DontCare -1 -1 -10 0 0 0 0 -1 -1 -1 -1000 -1000 -1000 -10\n"
        )
        (label,) = kitti.parse_labels(path)
        assert label.type == "DontCare"
        assert label.track_id == -1

    def test_wrong_column_count_reports_line(self, tmp_path):
        path = tmp_path / "labels.txt"
        path.write_text("0 1 Car 0 0\n")
        with pytest.raises(MalformedFileError, match="labels.txt:1"):
            kitti.parse_labels(path)


class TestCalibAndFrames:
    def test_identity_calibration(self):
        calib = kitti.Calibration.identity()
        cloud = np.random.default_rng(1).normal(size=(10, 3))
        np.testing.assert_allclose(kitti.lidar_to_label_frame(cloud, calib), cloud)

    def test_round_trip_random_rigid(self):
        rng = np.random.default_rng(2)
        # random rotation via QR, random translation
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        if np.linalg.det(q) < 0:
            q[:, 0] *= -1
        calib = kitti.Calibration(rect=np.eye(3), velo_to_cam=np.hstack([q, rng.normal(size=(3, 1))]))
        cloud = rng.normal(size=(100, 3)) * 10.0
        out = kitti.label_frame_to_lidar(kitti.lidar_to_label_frame(cloud, calib), calib)
        assert np.abs(out - cloud).max() <= 1e-9

    def test_translation_only(self):
        calib = kitti.Calibration(
            rect=np.eye(3),
            velo_to_cam=np.hstack([np.eye(3), [[1.0], [2.0], [3.0]]]),
        )
        out = kitti.lidar_to_label_frame([[0.0, 0.0, 0.0]], calib)
        np.testing.assert_allclose(out, [[1.0, 2.0, 3.0]])

    def test_non_orthonormal_rejected(self):
        with pytest.raises(MalformedFileError, match="orthonormal"):
            kitti.Calibration(rect=np.eye(3) * 2.0, velo_to_cam=np.hstack([np.eye(3), np.zeros((3, 1))]))

    def test_label_box_round_trip(self):
        box = Box3D(center=(3.0, 12.0, 0.4), size=(1.8, 1.5, 4.2), yaw=0.3)
        line = kitti.box_to_label_fields(box, frame=0, track_id=1)
        import io, tempfile, os

        with tempfile.NamedTemporaryFile("w", suffix=".txt", delete=False) as fh:
            fh.write(line + "\n")
            path = fh.name
        try:
            (label,) = kitti.parse_labels(path)
            back = kitti.label_to_box(label)
            np.testing.assert_allclose(back.center, box.center, atol=1e-8)
            np.testing.assert_allclose(back.size, box.size, atol=1e-8)
            assert back.yaw == pytest.approx(box.yaw, abs=1e-8)
        finally:
            os.unlink(path)

    def test_tracking_frame_is_rigid(self):
        rng = np.random.default_rng(3)
        cloud = rng.normal(size=(30, 3))
        out = kitti.camera_to_tracking(cloud)
        back = kitti.tracking_to_camera(out)
        np.testing.assert_allclose(back, cloud, atol=1e-12)
        # distances preserved
        d_before = np.linalg.norm(cloud[0] - cloud[1])
        d_after = np.linalg.norm(out[0] - out[1])
        assert d_after == pytest.approx(d_before)


class TestSyntheticGenerator:
    def test_reproducible(self):
        config = synthetic.SyntheticConfig(n_frames=5)
        a = synthetic.generate_synthetic_tracklet(config, np.random.default_rng(5))
        b = synthetic.generate_synthetic_tracklet(config, np.random.default_rng(5))
        for fa, fb in zip(a.frames, b.frames):
            np.testing.assert_array_equal(fa.cloud, fb.cloud)
            np.testing.assert_array_equal(fa.box.center, fb.box.center)

    def test_clean_static_frames_identical_canonical(self):
        config = synthetic.SyntheticConfig(
            n_frames=4, noise_sigma=0.0, dropout=0.0, speed=0.0,
            turn_rate=0.0, cull_backfaces=False,
        )
        tracklet = synthetic.generate_synthetic_tracklet(config, np.random.default_rng(6))
        crops = [crop_canonical(f.cloud, f.box) for f in tracklet.frames]
        for crop in crops[1:]:
            np.testing.assert_allclose(crop, crops[0], atol=1e-12)

    def test_culling_strict_subset(self):
        base = dict(n_frames=3, noise_sigma=0.0, dropout=0.0)
        rng_culled = np.random.default_rng(7)
        rng_full = np.random.default_rng(7)
        culled = synthetic.generate_synthetic_tracklet(
            synthetic.SyntheticConfig(cull_backfaces=True, **base), rng_culled
        )
        full = synthetic.generate_synthetic_tracklet(
            synthetic.SyntheticConfig(cull_backfaces=False, **base), rng_full
        )
        for fc, ff in zip(culled.frames, full.frames):
            assert 0 < len(fc.cloud) < len(ff.cloud)
            d2, _ = nearest_neighbors(fc.cloud, ff.cloud)
            assert d2.max() == 0.0  # every culled-frame point exists in the full shell

    def test_displacement_equals_speed(self):
        config = synthetic.SyntheticConfig(n_frames=6, speed=0.45, turn_rate=0.0)
        tracklet = synthetic.generate_synthetic_tracklet(config, np.random.default_rng(8))
        for move in tracklet.displacements():
            assert move == pytest.approx(0.45, abs=1e-9)

    def test_box_is_tight_bounding_box(self):
        config = synthetic.SyntheticConfig(
            n_frames=1, noise_sigma=0.0, dropout=0.0, cull_backfaces=False
        )
        tracklet = synthetic.generate_synthetic_tracklet(config, np.random.default_rng(9))
        frame = tracklet.frames[0]
        canonical = crop_canonical(frame.cloud, frame.box, scale=1.0 + 1e-9)
        assert len(canonical) == len(frame.cloud)
        spans = canonical.max(axis=0) - canonical.min(axis=0)
        w, h, l = frame.box.size
        np.testing.assert_allclose(spans, [l, w, h], rtol=0.02)

    def test_degenerate_config_rejected(self):
        with pytest.raises(ConfigError):
            synthetic.SyntheticConfig(n_frames=0)
        with pytest.raises(ConfigError):
            synthetic.SyntheticConfig(dropout=1.0)

    def test_dataset_split_sizes(self):
        config = synthetic.SyntheticDatasetConfig(
            n_train=3, n_val=2, n_test=1, seed=0,
            tracklet=synthetic.SyntheticConfig(n_frames=3),
        )
        splits = synthetic.generate_synthetic_dataset(config)
        assert [len(splits[k]) for k in ("train", "val", "test")] == [3, 2, 1]
        keys = {(t.scene_id, t.track_id) for split in splits.values() for t in split}
        assert len(keys) == 6  # globally unique identities


class TestModelShape:
    def test_single_frame_model_is_crop(self):
        rng = np.random.default_rng(10)
        cloud = rng.normal(size=(100, 3)) * 2.0
        box = Box3D(center=(0.0, 0.0, 0.0), size=(2.0, 2.0, 2.0), yaw=0.2)
        tracklet = Tracklet(0, 0, [Frame(cloud=cloud, box=box)])
        np.testing.assert_array_equal(
            build_model_shape(tracklet), crop_canonical(cloud, box)
        )

    def test_point_count_is_sum_of_crops(self):
        config = synthetic.SyntheticConfig(n_frames=4, noise_sigma=0.0)
        tracklet = synthetic.generate_synthetic_tracklet(config, np.random.default_rng(11))
        total = sum(
            len(crop_canonical(f.cloud, f.box)) for f in tracklet.frames
        )
        assert len(build_model_shape(tracklet)) == total

    def test_rigid_object_crops_coincide(self):
        # noiseless rigid motion: canonical crops from different frames align
        config = synthetic.SyntheticConfig(
            n_frames=5, noise_sigma=0.0, dropout=0.0, cull_backfaces=False
        )
        tracklet = synthetic.generate_synthetic_tracklet(config, np.random.default_rng(12))
        reference = crop_canonical(tracklet.frames[0].cloud, tracklet.frames[0].box)
        for frame in tracklet.frames[1:]:
            crop = crop_canonical(frame.cloud, frame.box)
            d2, _ = nearest_neighbors(crop, reference)
            assert d2.max() < 1e-18


class TestKittiLayoutRoundTrip:
    def test_synthetic_round_trip(self, tmp_path):
        config = synthetic.SyntheticConfig(n_frames=4)
        originals = [
            synthetic.generate_synthetic_tracklet(
                config, np.random.default_rng(s), scene_id=0, track_id=0
            )
            for s in (13, 14)
        ]
        kitti.write_kitti_layout(tmp_path, originals, scene_offset=19)
        tracklets = kitti.extract_tracklets(tmp_path, "test", region_radius=None)
        assert len(tracklets) == 2
        for original, loaded in zip(originals, tracklets):
            assert len(loaded) == len(original)
            for fo, fl in zip(original.frames, loaded.frames):
                np.testing.assert_allclose(fl.box.center, fo.box.center, atol=1e-7)
                np.testing.assert_allclose(fl.box.size, fo.box.size, atol=1e-7)
                assert fl.box.yaw == pytest.approx(fo.box.yaw, abs=1e-7)
                np.testing.assert_allclose(fl.cloud[:, :3], fo.cloud, atol=1e-4)

    def test_split_routing(self, tmp_path):
        config = synthetic.SyntheticConfig(n_frames=2)
        tracklets = [
            synthetic.generate_synthetic_tracklet(config, np.random.default_rng(15))
        ]
        kitti.write_kitti_layout(tmp_path, tracklets, scene_offset=17)
        assert len(kitti.extract_tracklets(tmp_path, "val", region_radius=None)) == 1
        assert kitti.extract_tracklets(tmp_path, "train", region_radius=None) == []
        assert kitti.extract_tracklets(tmp_path, "test", region_radius=None) == []

    def test_region_radius_crops_neighborhood(self, tmp_path):
        config = synthetic.SyntheticConfig(n_frames=2, ground_points=50)
        tracklets = [
            synthetic.generate_synthetic_tracklet(config, np.random.default_rng(16))
        ]
        kitti.write_kitti_layout(tmp_path, tracklets, scene_offset=0)
        loaded = kitti.extract_tracklets(tmp_path, "train", region_radius=3.0)
        for frame in loaded[0].frames:
            planar = frame.cloud[:, :2] - frame.box.center[:2]
            assert (np.linalg.norm(planar, axis=1) < 3.0).all()
