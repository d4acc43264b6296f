"""Scene generation, rendering, noise, and dataset round-trip tests."""

import numpy as np
import pytest

from cfdepth.errors import DatasetError, InvalidInput
from cfdepth.imgeo import DepthMap, Intrinsics, default_intrinsics
from cfdepth.synthgen import (
    MAX_DEPTH,
    Box,
    CameraPose,
    FactorLabels,
    SceneObject,
    SceneSpec,
    check_sample,
    draw_training_factors,
    factor_sweep,
    generate_sample,
    generate_scene,
    load_dataset,
    render_sample,
    sample_camera,
    simulate_sensor_noise,
    write_dataset,
)

W, H = 100, 80


def single_box_scene(room=(4.0, 2.6, 4.0), cam=None):
    box = Box(lo=(1.7, 0.0, 1.8), hi=(2.3, 0.6, 2.2))
    obj = SceneObject(object_id=1, primitives=(box,), albedo=(0.8, 0.2, 0.1), category="removable")
    if cam is None:
        cam = CameraPose(position=(2.0, 1.0, 0.5), yaw_deg=0.0, pitch_deg=-15.0)
    return SceneSpec(
        room=room,
        objects=(obj,),
        removable_id=1,
        light_dir=(0.0, 1.0, 0.0),
        camera=cam,
        floor_albedo=(0.4, 0.3, 0.2),
        wall_albedo=(0.65, 0.65, 0.7),
        ceiling_albedo=(0.85, 0.85, 0.85),
    )


class TestCameraSampling:
    def test_height_statistics(self):
        hs = np.array([sample_camera(s).position[1] for s in range(10000)])
        assert 0.99 < hs.mean() < 1.01
        assert 0.09 < hs.std() < 0.11

    def test_pitch_statistics_and_clamp(self):
        ps = np.array([sample_camera(s).pitch_deg for s in range(10000)])
        assert abs(ps.mean()) < 0.5
        assert 9.5 < ps.std() < 10.5
        assert np.all(np.abs(ps) <= 40.0)
        # The clamp is a no-op for in-range draws: nearly all of them.
        assert (np.abs(ps) == 40.0).sum() <= 5

    def test_same_seed_same_pose(self):
        assert sample_camera(123) == sample_camera(123)

    def test_position_respects_room(self):
        for s in range(50):
            pose = sample_camera(s, room=(4.0, 2.6, 3.5))
            assert 0.2 <= pose.position[0] <= 3.8
            assert 0.2 <= pose.position[2] <= 3.3


class TestFactorLabels:
    def test_sweep_has_72_distinct_cells(self):
        cells = factor_sweep()
        assert len(cells) == 72
        assert len(set(cells)) == 72

    def test_invalid_levels_rejected(self):
        with pytest.raises(InvalidInput):
            FactorLabels("boxy", "common", 0, "wall", 1.5)
        with pytest.raises(InvalidInput):
            FactorLabels("simple", "common", 5, "wall", 1.5)
        with pytest.raises(InvalidInput):
            FactorLabels("simple", "common", 0, "wall", 3.0)

    def test_training_draw_keeps_rare_rate_low(self):
        rng = np.random.default_rng(0)
        rare = sum(draw_training_factors(rng).rarity == "rare" for _ in range(2000))
        assert rare < 0.05 * 2000

    def test_remote_removable_id_rejected(self):
        with pytest.raises(InvalidInput):
            SceneSpec(
                room=(4, 2.6, 4),
                objects=(),
                removable_id=1,
                light_dir=(0, 1, 0),
                camera=CameraPose((2, 1, 0.5), 0, 0),
                floor_albedo=(0.4, 0.3, 0.2),
                wall_albedo=(0.6, 0.6, 0.6),
                ceiling_albedo=(0.8, 0.8, 0.8),
            )


class TestRendering:
    def test_frontal_wall_depth_closed_form(self):
        # Camera at z = 0.5 facing +z with zero pitch: the z = 4 wall lies
        # 3.5 m ahead. Camera-frame depth of a frontal plane is constant,
        # so the horizon rows (which see only the wall) read exactly 3.5.
        scene = single_box_scene(cam=CameraPose(position=(2.0, 1.0, 0.5), yaw_deg=0, pitch_deg=0))
        rec = render_sample(scene, scene.camera, W, H)
        # Central columns only: the extreme columns graze the side walls.
        horizon = rec.depth_without.data[39:41, 10:90]
        np.testing.assert_allclose(horizon, 3.5, atol=1e-6)

    def test_depth_clipped_at_far_limit(self):
        scene = single_box_scene(room=(4.0, 2.6, 8.0))
        rec = render_sample(scene, scene.camera, W, H)
        assert rec.depth_with.data.max() <= MAX_DEPTH
        assert rec.depth_without.data.max() == MAX_DEPTH

    def test_occlusion_invariants(self):
        scene = single_box_scene()
        rec = render_sample(scene, scene.camera, W, H)
        m = rec.mask.data
        assert (m == 0).sum() > 50
        check_sample(rec)  # strict reveal inside, bit-equality outside

    def test_mask_marks_exactly_the_removable(self):
        scene = single_box_scene()
        rec = render_sample(scene, scene.camera, W, H)
        inside = rec.mask.data == 0
        # Inside the mask every hit is on the box (front face z in [1.8, 2.2]);
        # removal reveals floor and the far wall, some of it beyond 3 m.
        assert np.all(rec.depth_with.data[inside] < 2.31)
        assert rec.depth_without.data[inside].max() > 3.0

    def test_rgb_on_8bit_lattice(self):
        scene = single_box_scene()
        rec = render_sample(scene, scene.camera, W, H)
        scaled = rec.rgb.data.astype(np.float64) * 255.0
        np.testing.assert_allclose(scaled, np.rint(scaled), atol=1e-4)


class TestGenerateScene:
    def test_determinism(self):
        f = FactorLabels("complex", "rare", 2, "objects", 2.0)
        assert generate_scene(f, 7) == generate_scene(f, 7)

    def test_sample_determinism_bitwise(self):
        f = FactorLabels("simple", "common", 1, "empty", 1.5)
        a = generate_sample(f, 11, W, H)
        b = generate_sample(f, 11, W, H)
        assert a.rgb.data.tobytes() == b.rgb.data.tobytes()
        assert a.depth_with.data.tobytes() == b.depth_with.data.tobytes()
        assert a.depth_without.data.tobytes() == b.depth_without.data.tobytes()
        assert a.mask.data.tobytes() == b.mask.data.tobytes()

    def test_wall_cell_puts_wall_close_behind(self):
        f = FactorLabels("simple", "common", 0, "wall", 1.5)
        rec = generate_sample(f, 3, W, H)
        inside = rec.mask.data == 0
        # Revealed background is close behind the object, not meters away.
        gap = rec.depth_without.data[inside] - rec.depth_with.data[inside]
        assert np.median(gap) < 1.2

    def test_empty_cell_reveals_far_background(self):
        f = FactorLabels("simple", "common", 0, "empty", 1.5)
        rec = generate_sample(f, 3, W, H)
        inside = rec.mask.data == 0
        gap = rec.depth_without.data[inside] - rec.depth_with.data[inside]
        assert np.median(gap) > 0.8

    def test_neighbor_count_objects_present(self):
        f = FactorLabels("simple", "common", 2, "empty", 2.0)
        scene = generate_scene(f, 5)
        assert sum(o.category == "neighbor" for o in scene.objects) == 2

    def test_objects_cell_creates_lateral_depth_step(self):
        # The clutter box covers one side of the silhouette: the revealed
        # background must have a wide depth range (a step).
        f = FactorLabels("simple", "common", 0, "objects", 1.5)
        rec = generate_sample(f, 9, W, H)
        inside = rec.mask.data == 0
        revealed = rec.depth_without.data[inside]
        assert revealed.max() - revealed.min() > 0.5

    def test_every_sweep_cell_generates(self):
        for i, cell in enumerate(factor_sweep()):
            rec = generate_sample(cell, 500 + i, W, H)
            check_sample(rec)
            assert rec.factors == cell


class TestSensorNoise:
    def flat(self):
        return DepthMap(data=np.full((60, 70), 2.0, dtype=np.float32),
                        intrinsics=default_intrinsics(70, 60))

    def test_zero_noise_is_identity(self):
        d = self.flat()
        out = simulate_sensor_noise(d, seed=1, white_sigma=0.0, patch_prob=0.0)
        assert out.data.tobytes() == d.data.tobytes()

    def test_patch_probability_one_elevates_everything(self):
        d = self.flat()
        out = simulate_sensor_noise(d, seed=2, white_sigma=0.0, patch_prob=1.0)
        assert np.all(out.data >= d.data + 0.01 - 1e-6)

    def test_white_noise_statistics(self):
        d = self.flat()
        out = simulate_sensor_noise(d, seed=3, patch_prob=0.0)
        delta = out.data.astype(np.float64) - 2.0
        assert abs(delta.mean()) < 1e-4
        assert 0.0008 < delta.std() < 0.0012

    def test_patch_shape_is_a_disc(self):
        d = DepthMap(data=np.full((21, 21), 2.0, dtype=np.float32),
                     intrinsics=default_intrinsics(21, 21))
        # Force exactly one center by using patch_prob tuned via seed search.
        out = None
        for seed in range(200):
            cand = simulate_sensor_noise(d, seed=seed, white_sigma=0.0, patch_prob=0.003)
            n_raised = (cand.data > 2.005).sum()
            if 0 < n_raised:
                out = cand
                break
        assert out is not None
        raised = int((out.data > 2.005).sum())
        assert raised % 21 == 0  # diameter-5 disc covers 21 pixels

    def test_determinism(self):
        d = self.flat()
        a = simulate_sensor_noise(d, seed=9)
        b = simulate_sensor_noise(d, seed=9)
        assert a.data.tobytes() == b.data.tobytes()


class TestDatasetIO:
    def make_records(self, n=3):
        recs = []
        for i in range(n):
            f = FactorLabels("simple", "common", i % 3, "wall", 1.5)
            rec = generate_sample(f, 40 + i, 50, 40, sample_id=f"{i:05d}")
            recs.append(rec)
        return recs

    def test_round_trip_bit_exact(self, tmp_path):
        recs = self.make_records()
        write_dataset(recs, tmp_path / "ds")
        loaded = load_dataset(tmp_path / "ds")
        assert len(loaded) == len(recs)
        for a, b in zip(recs, loaded):
            assert a.sample_id == b.sample_id
            assert a.seed == b.seed
            assert a.factors == b.factors
            assert a.intrinsics == b.intrinsics
            assert a.rgb.data.tobytes() == b.rgb.data.tobytes()
            assert a.mask.data.tobytes() == b.mask.data.tobytes()
            assert a.depth_with.data.tobytes() == b.depth_with.data.tobytes()
            assert a.depth_without.data.tobytes() == b.depth_without.data.tobytes()

    def test_missing_file_names_sample(self, tmp_path):
        recs = self.make_records(2)
        write_dataset(recs, tmp_path / "ds")
        (tmp_path / "ds" / "00001" / "mask.pgm").unlink()
        with pytest.raises(DatasetError) as exc:
            load_dataset(tmp_path / "ds")
        assert "sample 00001" in str(exc.value)
        assert "mask.pgm" in str(exc.value)

    def test_corrupt_file_names_sample(self, tmp_path):
        recs = self.make_records(1)
        write_dataset(recs, tmp_path / "ds")
        (tmp_path / "ds" / "00000" / "depth_with.pfm").write_bytes(b"Pf\n1"),
        with pytest.raises(DatasetError) as exc:
            load_dataset(tmp_path / "ds")
        assert "sample 00000" in str(exc.value)

    def test_factors_round_trip_none(self, tmp_path):
        f = FactorLabels("simple", "common", 0, "empty", 2.0)
        rec = generate_sample(f, 77, 50, 40, sample_id="00000")
        rec = type(rec)(**{**rec.__dict__, "factors": None})
        write_dataset([rec], tmp_path / "ds")
        assert load_dataset(tmp_path / "ds")[0].factors is None
