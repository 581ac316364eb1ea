import json
import math
from dataclasses import replace

import numpy as np
import pytest

from teocc.gridcore import EgoPose, make_grid_spec, voxel_index, voxel_indices
from teocc.scenesim import (
    CameraModel,
    DatasetError,
    SceneObject,
    SimConfig,
    camera_rotation,
    ego_relative,
    generate_episode,
    list_episodes,
    load_episode,
    rasterize_occupancy,
    render_camera,
    sample_radar,
    save_episode,
)

SMALL = SimConfig(
    grid=make_grid_spec((-6.4, 6.4), (-6.4, 6.4), (-0.8, 2.4), 0.4),
    num_frames=6,
    building_offset=(6.0, 8.0),
    sidewalk_offset=(3.8, 5.0),
    car_offset=(2.2, 3.0),
)


@pytest.fixture(scope="module")
def episode():
    return generate_episode(SMALL, 7)


def march(origin, direction, objects, ground, t_max=40.0, step=1e-3):
    """First hit by fixed-step marching; returns (class id, distance)."""
    for t in np.arange(step, t_max, step):
        p = origin + t * direction
        if p[2] < ground:
            return 1, t
        for o in objects:
            if o.contains(p[None])[0]:
                return o.class_id, t
    return 0, 0.0


def test_deterministic(episode):
    assert generate_episode(SMALL, 7) == episode
    assert generate_episode(SMALL, 8) != episode


def test_frame_count_and_shapes(episode):
    assert len(episode) == 6
    f = episode.frames[0]
    assert f.images.shape == (4, 2, 32, 64)
    assert f.gt_occupancy.labels.shape == (32, 32, 8)
    assert f.radar.as_array().shape[1] == 5


def test_save_load_round_trip(tmp_path, episode):
    save_episode(episode, tmp_path / "ep")
    assert load_episode(tmp_path / "ep") == episode
    assert list_episodes(tmp_path) == [tmp_path / "ep"]


def test_render_matches_ray_march():
    cam = CameraModel(32, 32, 32, 16, 32, 64, EgoPose(camera_rotation(0.0, 0.1), np.array([0, 0, 1.5])))
    objs = [SceneObject(4, (6.0, 0.5, 0.8), (4.0, 1.8, 1.6), 0.3), SceneObject(2, (9.0, -4.0, 1.5), (3, 3, 3))]
    img = render_camera(objs, 0.0, cam)
    rays = cam.pixel_rays()
    rng = np.random.default_rng(0)
    for v, u in zip(rng.integers(0, 32, 25), rng.integers(0, 64, 25)):
        cid, dist = march(cam.origin, rays[v, u], objs, 0.0)
        assert img[0, v, u] == cid
        assert abs(img[1, v, u] - dist) <= 2e-3


def test_ground_depth_analytic():
    cam = CameraModel(32, 32, 32, 16, 32, 64, EgoPose(camera_rotation(0.0, 0.3), np.array([0, 0, 1.5])))
    img = render_camera([], 0.0, cam)
    d = cam.pixel_rays()
    down = d[..., 2] < 0
    np.testing.assert_allclose(img[1][down], (1.5 / -d[..., 2])[down], rtol=1e-6)
    assert np.all(img[0][~down] == 0) and np.all(img[1][~down] == 0)


def test_camera_rotation_orthonormal():
    for yaw in np.linspace(-3, 3, 7):
        r = camera_rotation(yaw, 0.2)
        np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(r) == pytest.approx(1.0)


def test_gt_is_rasterized_local_objects(episode):
    for i in range(len(episode)):
        assert np.array_equal(episode.occupancy_at(i, i), episode.frames[i].gt_occupancy.labels)


def test_static_scene_is_pose_consistent():
    cfg = replace(SMALL, num_cars=0, num_pedestrians=0)
    ep = generate_episode(cfg, 3)
    ref = ep.occupancy_at(5, 5)
    for j in range(5):
        assert np.array_equal(ep.occupancy_at(j, 5), ref)


def test_rasterize_priority():
    spec = make_grid_spec((0, 2), (0, 2), (0, 2), 0.4)
    a = SceneObject(4, (1, 1, 1), (2, 2, 2))
    b = SceneObject(5, (1, 1, 1), (0.5, 0.5, 0.5))
    labels = rasterize_occupancy([a, b], -1.0, spec).labels
    assert np.all(labels == 4)


def test_contains_matches_rotated_box():
    obj = SceneObject(2, (1.0, 2.0, 0.5), (2.0, 1.0, 1.0), yaw=math.pi / 2)
    # Rotated a quarter turn the long side runs along y.
    assert obj.contains(np.array([[1.0, 2.9, 0.5]]))[0]
    assert not obj.contains(np.array([[1.9, 2.0, 0.5]]))[0]


def test_radar_on_surfaces_and_velocity():
    cfg = replace(SMALL, radar_noise=0.0, radar_dropout=0.0)
    objs = [SceneObject(4, (5.0, 2.0, 0.8), (4, 2, 1.6), 0.4, (2.0, 1.0, 0.0)),
            SceneObject(2, (-6.0, -3.0, 1.5), (3, 3, 3))]
    cloud = sample_radar(objs, cfg, np.random.default_rng(1))
    assert len(cloud) > 0
    sensor = np.array([0, 0, cfg.radar_height])
    for p, (rv, inten) in zip(cloud.points, cloud.features):
        owner = [o for o in objs if o.contains(p[None] * (1 - 1e-9) + np.asarray(o.center) * 1e-9)[0]]
        assert len(owner) == 1
        los = (p - sensor) / np.linalg.norm(p - sensor)
        assert rv == pytest.approx(los @ np.asarray(owner[0].velocity))
        assert inten > 0


def test_ego_relative():
    a = EgoPose.from_yaw(0.3, (1, 2, 0))
    b = EgoPose.from_yaw(-0.2, (4, -1, 0))
    p = np.array([[0.5, 1.0, 0.2]])
    world = a.apply(p)
    np.testing.assert_allclose(ego_relative(a, b).apply(p)[0], b.matrix()[:3, :3].T @ (world[0] - b.translation), atol=1e-12)


class TestMalformed:
    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DatasetError, match="manifest"):
            load_episode(tmp_path)

    def test_bad_version(self, tmp_path, episode):
        save_episode(episode, tmp_path)
        m = json.loads((tmp_path / "manifest.json").read_text())
        m["version"] = "teocc-episode/99"
        (tmp_path / "manifest.json").write_text(json.dumps(m))
        with pytest.raises(DatasetError, match="version"):
            load_episode(tmp_path)

    def test_missing_field(self, tmp_path, episode):
        save_episode(episode, tmp_path)
        m = json.loads((tmp_path / "manifest.json").read_text())
        del m["frames"][2]["stem"]
        (tmp_path / "manifest.json").write_text(json.dumps(m))
        with pytest.raises(DatasetError, match=r"frames\[2\].*stem"):
            load_episode(tmp_path)

    def test_truncated_blob(self, tmp_path, episode):
        save_episode(episode, tmp_path)
        blob = tmp_path / "frame_0001_occ.teoc"
        blob.write_bytes(blob.read_bytes()[:-10])
        with pytest.raises(DatasetError, match="frame_0001_occ.teoc"):
            load_episode(tmp_path)

    def test_missing_dir(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            list_episodes(tmp_path / "nope")


def test_overcrowded_scene_rejected():
    with pytest.raises(ValueError, match="could not place"):
        generate_episode(replace(SMALL, num_buildings=200), 0)


def test_empty_scene_only_free_and_ground():
    cfg = replace(SMALL, num_buildings=0, num_barriers=0, num_cars=0, num_pedestrians=0, num_frames=2)
    ep = generate_episode(cfg, 0)
    assert set(np.unique(ep.frames[0].gt_occupancy.labels)) <= {0, 1}
    assert len(ep.frames[0].radar) == 0


def test_moving_car_translates_by_one_meter():
    spec = make_grid_spec((-6.4, 6.4), (-6.4, 6.4), (-0.8, 2.4), 0.4)
    car = SceneObject(4, (0.2, 1.0, 0.8), (2.0, 1.2, 1.2), 0.0, (2.0, 0.0, 0.0))
    moved = rasterize_occupancy([car.at(0.5)], -5.0, spec).labels
    oracle = rasterize_occupancy([replace(car, center=(1.2, 1.0, 0.8))], -5.0, spec).labels
    assert np.array_equal(moved, oracle)
    # Exactly 2.5 voxels of travel along x, rounded by center-in-box.
    assert moved.sum() > 0


def test_box_on_voxel_center_covers_27_voxels():
    spec = make_grid_spec((-2, 2), (-2, 2), (-2, 2), 0.4)
    box = SceneObject(2, (0.2, 0.2, 0.2), (1.2, 1.2, 1.2))
    # Shrink slightly so voxel centers on the faces are unambiguous.
    labels = rasterize_occupancy([replace(box, size=(1.19, 1.19, 1.19))], -5.0, spec).labels
    assert int((labels == 2).sum()) == 27


def test_full_rotation_is_identity():
    spec = make_grid_spec((-4, 4), (-4, 4), (-0.8, 2.4), 0.4)
    box = SceneObject(4, (0.5, 0.3, 0.8), (2.3, 1.1, 1.3), 0.4)
    a = rasterize_occupancy([box], 0.0, spec).labels
    b = rasterize_occupancy([replace(box, yaw=0.4 + 2 * math.pi)], 0.0, spec).labels
    assert np.array_equal(a, b)


def test_principal_point_hits_near_face():
    cam = CameraModel(32, 32, 32, 16, 32, 64, EgoPose(camera_rotation(0.0, 0.0), np.array([0, 0, 1.0])))
    # Pixel (16, 32) has its ray through the pixel center, slightly off axis; use the exact ray.
    box = SceneObject(2, (8.0, 0.0, 1.0), (2.0, 4.0, 4.0))
    img = render_camera([box], -10.0, cam)
    d = cam.pixel_rays()[16, 32]
    assert img[0, 16, 32] == 2
    assert img[1, 16, 32] == pytest.approx(7.0 / d[0], rel=1e-6)


def test_receding_object_radial_velocity():
    cfg = replace(SMALL, radar_noise=0.0, radar_dropout=0.0, radar_height=0.0)
    box = SceneObject(4, (10.0, 0.0, 0.0), (0.02, 0.02, 0.02), 0.0, (3.0, 0.0, 0.0))
    cloud = sample_radar([box], cfg, np.random.default_rng(0))
    np.testing.assert_allclose(cloud.features[:, 0], 3.0, atol=1e-4)


def test_radar_seeded():
    objs = [SceneObject(4, (5.0, 2.0, 0.8), (4, 2, 1.6))]
    a = sample_radar(objs, SMALL, np.random.default_rng(5)).as_array()
    b = sample_radar(objs, SMALL, np.random.default_rng(5)).as_array()
    assert np.array_equal(a, b)


FACES = np.array([(0, 0, 0), (1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)])


def _face_labels(labels, i):
    """Labels of voxel ``i`` and its in-grid face neighbours."""
    j = np.asarray(i) + FACES
    j = j[np.all((j >= 0) & (j < labels.shape), axis=1)]
    return labels[tuple(j.T)]


def test_render_agrees_with_rasterization(episode):
    # One-voxel tolerance: the hit voxel or a face neighbour carries the rendered class.
    spec = episode.config.grid
    agree = total = 0
    for f in episode.frames:
        labels = f.gt_occupancy.labels
        for cam, img in zip(episode.cameras, f.images):
            rays = cam.pixel_rays()
            sem, depth = img
            hits = cam.origin + (depth[..., None] + 0.5 * spec.voxel_size[0]) * rays
            idx, inside = voxel_indices(spec, hits.reshape(-1, 3))
            obj = (sem.ravel() > 1) & inside
            for i, c in zip(idx[obj], sem.ravel()[obj]):
                total += 1
                agree += bool(np.any(_face_labels(labels, i) == c))
    assert total > 1000
    assert agree / total >= 0.95


def test_radar_lands_near_objects(episode):
    spec = episode.config.grid
    dims = np.array(spec.dims)
    checked = 0
    for f in episode.frames:
        labels = f.gt_occupancy.labels
        idx, valid = voxel_indices(spec, f.radar.points)
        for i in idx[valid]:
            # Border cells may belong to objects rasterized outside the grid.
            if np.any(i == 0) or np.any(i == dims - 1):
                continue
            checked += 1
            # Edge and corner samples can sit diagonally off the object, so the whole 3x3x3 block counts.
            block = labels[i[0] - 1:i[0] + 2, i[1] - 1:i[1] + 2, i[2] - 1:i[2] + 2]
            assert np.any(block > 1)
    assert checked > 10
