"""Procedural driving-like episodes: toy camera renders, radar returns, ego poses and
ground-truth occupancy, plus the on-disk dataset format."""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .container import ContainerError, read_tensor, write_tensor
from .gridcore import (
    DEFAULT_CLASS_NAMES,
    EgoPose,
    GridSpec,
    OccupancyLabelGrid,
    compose_pose,
    invert_pose,
    make_grid_spec,
)

MANIFEST_VERSION = "teocc-episode/1"
RADAR_FEATURES = ("radial_velocity", "intensity")
_RCS = {"car": 1.0, "building": 0.8, "barrier": 0.6, "pedestrian": 0.3}

# Unit-cube face normals in the box frame.
_FACE_NORMALS = np.array(
    [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=np.float64
)


def _rot_z(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _yaw_of(rotation: np.ndarray) -> float:
    return math.atan2(rotation[1, 0], rotation[0, 0])


@dataclass(frozen=True)
class SceneObject:
    class_id: int
    center: tuple[float, float, float]
    size: tuple[float, float, float]
    yaw: float = 0.0
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.class_id == 0:
            raise ValueError("scene objects cannot use the free class")
        if min(self.size) <= 0:
            raise ValueError(f"object size must be positive, got {self.size}")

    def at(self, seconds: float) -> "SceneObject":
        c = np.asarray(self.center) + seconds * np.asarray(self.velocity)
        return replace(self, center=tuple(float(v) for v in c))

    def transformed(self, pose: EgoPose) -> "SceneObject":
        """Express this object in the frame that ``pose`` maps from."""
        c = pose.apply(np.asarray(self.center, dtype=np.float64))
        v = pose.rotation @ np.asarray(self.velocity, dtype=np.float64)
        return replace(
            self,
            center=tuple(float(x) for x in c),
            yaw=self.yaw + _yaw_of(pose.rotation),
            velocity=tuple(float(x) for x in v),
        )

    def contains(self, points: np.ndarray) -> np.ndarray:
        local = (np.asarray(points) - np.asarray(self.center)) @ _rot_z(self.yaw)
        half = np.asarray(self.size) / 2
        return np.all(np.abs(local) <= half, axis=-1)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneObject":
        return cls(int(d["class_id"]), tuple(d["center"]), tuple(d["size"]), float(d["yaw"]), tuple(d["velocity"]))


@dataclass(frozen=True, eq=False)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    height: int
    width: int
    extrinsic: EgoPose = field(default_factory=EgoPose)

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ValueError("principal point must lie inside the image")

    def __eq__(self, other):
        if not isinstance(other, CameraModel):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def ray_directions(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Unit ray directions in the ego frame for continuous pixel coords ``(u, v)``."""
        d = np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u, dtype=np.float64)], -1)
        d = d / np.linalg.norm(d, axis=-1, keepdims=True)
        return d @ self.extrinsic.rotation.T

    @property
    def origin(self) -> np.ndarray:
        return self.extrinsic.translation

    def pixel_rays(self, stride: int = 1) -> np.ndarray:
        """Rays through the centers of a ``stride``-downsampled pixel grid, (h, w, 3)."""
        h, w = self.height // stride, self.width // stride
        vv, uu = np.meshgrid((np.arange(h) + 0.5) * stride, (np.arange(w) + 0.5) * stride, indexing="ij")
        return self.ray_directions(uu, vv)

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "height": self.height, "width": self.width,
            "rotation": self.extrinsic.rotation.tolist(),
            "translation": self.extrinsic.translation.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        ext = EgoPose(np.array(d["rotation"]), np.array(d["translation"]))
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]), int(d["height"]), int(d["width"]), ext)


def camera_rotation(yaw: float, pitch: float = 0.0) -> np.ndarray:
    """Camera axes (x right, y down, z forward) in the ego frame; positive pitch looks down."""
    fwd = np.array([math.cos(yaw) * math.cos(pitch), math.sin(yaw) * math.cos(pitch), -math.sin(pitch)])
    right = np.array([math.sin(yaw), -math.cos(yaw), 0.0])
    down = np.cross(fwd, right)
    return np.stack([right, down, fwd], axis=1)


def default_camera_rig(num_cameras=4, image_size=(32, 64), height=1.5, pitch_deg=10.0) -> list[CameraModel]:
    h, w = image_size
    f = w / (2 * math.tan(math.radians(360 / num_cameras) / 2)) if num_cameras > 2 else w / 2
    rig = []
    for i in range(num_cameras):
        yaw = 2 * math.pi * i / num_cameras
        ext = EgoPose(camera_rotation(yaw, math.radians(pitch_deg)), np.array([0.0, 0.0, height]))
        rig.append(CameraModel(f, f, w / 2, h / 2, h, w, ext))
    return rig


@dataclass
class RadarPointCloud:
    points: np.ndarray  # (M, 3) meters
    features: np.ndarray  # (M, 2) radial velocity, intensity

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.points, self.features], axis=1).astype(np.float32)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "RadarPointCloud":
        arr = np.asarray(arr).reshape(-1, 3 + len(RADAR_FEATURES))
        return cls(arr[:, :3].copy(), arr[:, 3:].copy())

    def __len__(self):
        return len(self.points)


@dataclass
class SimConfig:
    grid: GridSpec = field(default_factory=lambda: make_grid_spec((-10, 10), (-10, 10), (-0.8, 2.4), 0.4))
    class_names: tuple[str, ...] = DEFAULT_CLASS_NAMES
    num_frames: int = 12
    dt: float = 0.5
    num_buildings: int = 4
    num_barriers: int = 3
    num_cars: int = 4
    num_pedestrians: int = 3
    car_speed: tuple[float, float] = (1.0, 4.0)
    pedestrian_speed: tuple[float, float] = (0.3, 1.2)
    ego_speed: tuple[float, float] = (1.0, 3.0)
    ego_yaw_rate: tuple[float, float] = (-0.05, 0.05)
    building_offset: tuple[float, float] = (6.5, 9.0)
    car_offset: tuple[float, float] = (2.5, 3.5)
    sidewalk_offset: tuple[float, float] = (4.2, 5.8)
    num_cameras: int = 4
    image_size: tuple[int, int] = (32, 64)
    camera_height: float = 1.5
    camera_pitch_deg: float = 10.0
    radar_points: tuple[int, int] = (3, 8)
    radar_noise: float = 0.05
    radar_dropout: float = 0.1
    radar_height: float = 0.5
    ground_height: float = 0.0

    def cameras(self) -> list[CameraModel]:
        return default_camera_rig(self.num_cameras, self.image_size, self.camera_height, self.camera_pitch_deg)

    def class_id(self, name: str) -> int:
        try:
            return self.class_names.index(name)
        except ValueError:
            raise ValueError(f"class {name!r} is not in the label set {self.class_names}") from None

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["grid"] = self.grid.to_dict()
        return json.loads(json.dumps(d))

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        kw = {}
        for f in fields(cls):
            if f.name not in d:
                continue
            v = d[f.name]
            if f.name == "grid":
                v = GridSpec.from_dict(v)
            elif isinstance(v, list):
                v = tuple(v)
            kw[f.name] = v
        return cls(**kw)


@dataclass(eq=False)
class Frame:
    timestamp: int
    ego_pose: EgoPose
    images: np.ndarray  # (num_cameras, 2, H, W): semantic id, depth in meters
    radar: RadarPointCloud
    gt_occupancy: OccupancyLabelGrid

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return (
            self.timestamp == other.timestamp
            and self.ego_pose == other.ego_pose
            and np.array_equal(self.images, other.images)
            and np.array_equal(self.radar.as_array(), other.radar.as_array())
            and self.gt_occupancy.spec == other.gt_occupancy.spec
            and np.array_equal(self.gt_occupancy.labels, other.gt_occupancy.labels)
        )


@dataclass(eq=False)
class Episode:
    frames: list[Frame]
    config: SimConfig
    seed: int
    objects: list[SceneObject]  # world frame, at time 0
    cameras: list[CameraModel]

    def __post_init__(self):
        ts = [f.timestamp for f in self.frames]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("frame timestamps must be strictly increasing")

    def __len__(self):
        return len(self.frames)

    def __eq__(self, other):
        if not isinstance(other, Episode):
            return NotImplemented
        return (
            self.seed == other.seed
            and self.config.to_dict() == other.config.to_dict()
            and self.objects == other.objects
            and self.cameras == other.cameras
            and len(self.frames) == len(other.frames)
            and all(a == b for a, b in zip(self.frames, other.frames))
        )

    def objects_at(self, index: int, ref_index: int | None = None) -> list[SceneObject]:
        """Objects at frame ``index`` expressed in the ego frame of ``ref_index``."""
        ref = self.frames[index if ref_index is None else ref_index].ego_pose
        t = self.frames[index].timestamp * self.config.dt
        inv = invert_pose(ref)
        return [o.at(t).transformed(inv) for o in self.objects]

    def occupancy_at(self, index: int, ref_index: int) -> np.ndarray:
        """Ground-truth labels of the scene at ``index`` rasterized in the ego frame of ``ref_index``."""
        objs = self.objects_at(index, ref_index)
        return rasterize_occupancy(objs, self.config.ground_height, self.config.grid).labels


def rasterize_occupancy(objects, ground_height: float, spec: GridSpec, ground_class: int = 1) -> OccupancyLabelGrid:
    """Label voxels by center-in-box; earlier objects win, then ground below ``ground_height``."""
    centers = spec.voxel_centers()
    labels = np.where(centers[..., 2] < ground_height, ground_class, 0).astype(np.int32)
    for obj in reversed(list(objects)):
        labels[obj.contains(centers)] = obj.class_id
    return OccupancyLabelGrid(spec, labels)


def _ray_box_hits(origin: np.ndarray, dirs: np.ndarray, obj: SceneObject) -> np.ndarray:
    """Entry distance along each ray (inf when missed or when the origin is inside)."""
    rot = _rot_z(obj.yaw)
    o = (origin - np.asarray(obj.center)) @ rot
    d = dirs @ rot
    half = np.asarray(obj.size) / 2
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (-half - o) * inv
        t2 = (half - o) * inv
    # Rays parallel to a slab: inside -> unbounded, outside -> miss.
    parallel = d == 0
    inside_slab = np.abs(o) <= half
    lo = np.where(parallel, np.where(inside_slab, -np.inf, np.inf), np.minimum(t1, t2))
    hi = np.where(parallel, np.where(inside_slab, np.inf, -np.inf), np.maximum(t1, t2))
    tnear = lo.max(axis=-1)
    tfar = hi.min(axis=-1)
    hit = (tnear <= tfar) & (tnear > 1e-9)
    return np.where(hit, tnear, np.inf)


def render_camera(objects, ground_height: float, camera: CameraModel, ego_pose: EgoPose | None = None) -> np.ndarray:
    """Ray-cast a (2, H, W) float32 image: semantic id of the first hit and its distance.

    ``objects`` are in the ego frame unless ``ego_pose`` is given, in which case they
    are world-frame objects and get mapped into that ego frame first. Sky pixels
    carry id 0 and depth 0.
    """
    if ego_pose is not None:
        inv = invert_pose(ego_pose)
        objects = [o.transformed(inv) for o in objects]
    dirs = camera.pixel_rays().reshape(-1, 3)
    origin = camera.origin
    best = np.full(len(dirs), np.inf)
    sem = np.zeros(len(dirs), dtype=np.float32)
    with np.errstate(divide="ignore", invalid="ignore"):
        tg = np.where(dirs[:, 2] < 0, (ground_height - origin[2]) / dirs[:, 2], np.inf)
    tg = np.where(tg > 0, tg, np.inf)
    hit = tg < best
    best[hit], sem[hit] = tg[hit], 1.0
    for obj in objects:
        t = _ray_box_hits(origin, dirs, obj)
        hit = t < best
        best[hit], sem[hit] = t[hit], float(obj.class_id)
    depth = np.where(np.isfinite(best), best, 0.0).astype(np.float32)
    return np.stack([sem, depth]).reshape(2, camera.height, camera.width)


def sample_radar(objects, config: SimConfig, rng: np.random.Generator, ego_pose: EgoPose | None = None,
                 class_names=None) -> RadarPointCloud:
    """Sparse returns from the sensor-facing faces of each object, with Gaussian jitter.

    Radial velocity is the object velocity projected on the line of sight (positive
    when receding).
    """
    if ego_pose is not None:
        inv = invert_pose(ego_pose)
        objects = [o.transformed(inv) for o in objects]
    names = class_names or config.class_names
    sensor = np.array([0.0, 0.0, config.radar_height])
    pts, feats = [], []
    lo, hi = config.radar_points
    for obj in objects:
        n = int(rng.integers(lo, hi + 1))
        rot = _rot_z(obj.yaw)
        half = np.asarray(obj.size) / 2
        center = np.asarray(obj.center)
        normals = _FACE_NORMALS @ rot.T
        face_centers = center + (_FACE_NORMALS * half) @ rot.T
        visible = np.einsum("ij,ij->i", normals, sensor - face_centers) > 0
        if not visible.any():
            continue
        # Face area: product of the two tangential half-extents.
        areas = np.array([np.prod(np.delete(half, i // 2)) for i in range(6)]) * visible
        face = rng.choice(6, size=n, p=areas / areas.sum())
        uv = rng.uniform(-1.0, 1.0, size=(n, 3))
        local = uv * half
        axis = face // 2
        local[np.arange(n), axis] = _FACE_NORMALS[face, axis] * half[axis]
        p = center + local @ rot.T
        if config.radar_noise > 0:
            p = p + rng.normal(0.0, config.radar_noise, size=p.shape)
        keep = rng.uniform(size=n) >= config.radar_dropout
        p = p[keep]
        if not len(p):
            continue
        los = p - sensor
        los /= np.linalg.norm(los, axis=1, keepdims=True)
        rv = los @ np.asarray(obj.velocity)
        rcs = _RCS.get(names[obj.class_id], 0.5)
        intensity = rcs * rng.uniform(0.8, 1.2, size=len(p))
        pts.append(p)
        feats.append(np.stack([rv, intensity], axis=1))
    if not pts:
        return RadarPointCloud(np.zeros((0, 3)), np.zeros((0, len(RADAR_FEATURES))))
    return RadarPointCloud(np.concatenate(pts), np.concatenate(feats))


def ego_pose_at(seconds: float, speed: float, yaw_rate: float, timestamp: int = 0) -> EgoPose:
    yaw = yaw_rate * seconds
    if abs(yaw_rate) < 1e-9:
        x, y = speed * seconds, 0.0
    else:
        x = speed / yaw_rate * math.sin(yaw)
        y = speed / yaw_rate * (1 - math.cos(yaw))
    return EgoPose.from_yaw(yaw, (x, y, 0.0), timestamp)


def _footprint_distance(point_xy: np.ndarray, obj: SceneObject) -> float:
    local = (np.append(point_xy, 0.0) - np.asarray(obj.center)) @ _rot_z(obj.yaw)
    excess = np.maximum(np.abs(local[:2]) - np.asarray(obj.size[:2]) / 2, 0.0)
    return float(np.linalg.norm(excess))


def _place_objects(config: SimConfig, rng: np.random.Generator, speed: float, yaw_rate: float) -> list[SceneObject]:
    grid = config.grid
    half_x = max(abs(grid.x_range[0]), abs(grid.x_range[1]))
    duration = (config.num_frames - 1) * config.dt
    travel = speed * duration
    g = config.ground_height
    ego_positions = [ego_pose_at(i * config.dt, speed, yaw_rate).translation[:2] for i in range(config.num_frames)]

    def path_frame(s):
        pose = ego_pose_at(s / speed, speed, yaw_rate) if speed > 0 else EgoPose.from_yaw(0.0, (s, 0.0, 0.0))
        yaw = _yaw_of(pose.rotation)
        normal = np.array([-math.sin(yaw), math.cos(yaw)])
        return pose.translation[:2], yaw, normal

    specs = []
    for _ in range(config.num_buildings):
        specs.append(("building", lambda: (rng.uniform(3, 6), rng.uniform(3, 6), rng.uniform(2.5, 3.5)),
                      config.building_offset, (0.0, 0.0)))
    for _ in range(config.num_cars):
        specs.append(("car", lambda: (rng.uniform(3.6, 4.4), rng.uniform(1.7, 2.0), rng.uniform(1.4, 1.7)),
                      config.car_offset, config.car_speed))
    for _ in range(config.num_barriers):
        specs.append(("barrier", lambda: (rng.uniform(0.5, 0.8), rng.uniform(1.5, 2.5), rng.uniform(0.9, 1.1)),
                      config.sidewalk_offset, (0.0, 0.0)))
    for _ in range(config.num_pedestrians):
        specs.append(("pedestrian", lambda: (rng.uniform(0.6, 0.8), rng.uniform(0.6, 0.8), rng.uniform(1.6, 1.8)),
                      config.sidewalk_offset, config.pedestrian_speed))

    extent = grid.range_max - grid.range_min
    placed: list[SceneObject] = []
    for name, size_fn, offset, speed_range in specs:
        cid = config.class_id(name)
        for _attempt in range(500):
            size = size_fn()
            if size[0] > extent[0] or size[1] > extent[1]:
                raise ValueError(f"{name} of size {size} cannot fit in the grid")
            s = rng.uniform(-half_x - 4.0, travel + half_x + 4.0)
            side = rng.choice([-1.0, 1.0])
            lateral = side * rng.uniform(*offset)
            base, heading, normal = path_frame(s)
            xy = base + lateral * normal
            spd = rng.uniform(*speed_range) if speed_range[1] > 0 else 0.0
            direction = rng.choice([-1.0, 1.0])
            yaw = heading + (0.0 if direction > 0 else math.pi)
            if name == "barrier":
                yaw += rng.uniform(-0.2, 0.2)
            vel = (spd * math.cos(yaw), spd * math.sin(yaw), 0.0)
            obj = SceneObject(cid, (float(xy[0]), float(xy[1]), g + size[2] / 2), tuple(float(v) for v in size),
                              float(yaw), vel)
            ok = True
            for i, ep in enumerate(ego_positions):
                if _footprint_distance(ep, obj.at(i * config.dt)) < 1.0:
                    ok = False
                    break
            if ok:
                r = math.hypot(size[0], size[1]) / 2
                for other in placed:
                    ro = math.hypot(other.size[0], other.size[1]) / 2
                    if math.dist(other.center[:2], obj.center[:2]) < r + ro + 0.2:
                        ok = False
                        break
            if ok:
                placed.append(obj)
                break
        else:
            raise ValueError(f"could not place a {name}: too many objects for the scene")
    return placed


def generate_episode(config: SimConfig, seed: int) -> Episode:
    """Deterministic episode from ``(config, seed)``."""
    if config.num_frames < 1:
        raise ValueError("episodes need at least one frame")
    rng = np.random.default_rng(seed)
    speed = float(rng.uniform(*config.ego_speed))
    yaw_rate = float(rng.uniform(*config.ego_yaw_rate))
    objects = _place_objects(config, rng, speed, yaw_rate)
    cameras = config.cameras()
    radar_rng = np.random.default_rng([seed, 1])
    frames = []
    for i in range(config.num_frames):
        t = i * config.dt
        pose = ego_pose_at(t, speed, yaw_rate, timestamp=i)
        inv = invert_pose(pose)
        local = [o.at(t).transformed(inv) for o in objects]
        images = np.stack([render_camera(local, config.ground_height, cam) for cam in cameras])
        radar = sample_radar(local, config, radar_rng)
        gt = rasterize_occupancy(local, config.ground_height, config.grid, config.class_id("ground"))
        frames.append(Frame(i, pose, images, radar, gt))
    return Episode(frames, config, seed, objects, cameras)


def episode_seeds(seed: int, count: int) -> list[int]:
    ss = np.random.SeedSequence(seed)
    return [int(s.generate_state(1)[0]) for s in ss.spawn(count)]


def _pose_dict(p: EgoPose) -> dict:
    return {"rotation": p.rotation.tolist(), "translation": p.translation.tolist(), "timestamp": p.timestamp}


def save_episode(ep: Episode, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    frames = []
    for f in ep.frames:
        stem = f"frame_{f.timestamp:04d}"
        write_tensor(d / f"{stem}_images.teoc", f.images.astype(np.float32))
        write_tensor(d / f"{stem}_radar.teoc", f.radar.as_array())
        write_tensor(d / f"{stem}_occ.teoc", f.gt_occupancy.labels.astype(np.int32))
        frames.append({"timestamp": f.timestamp, "ego_pose": _pose_dict(f.ego_pose), "stem": stem})
    manifest = {
        "version": MANIFEST_VERSION,
        "seed": ep.seed,
        "num_frames": len(ep.frames),
        "config": ep.config.to_dict(),
        "grid": ep.config.grid.to_dict(),
        "label_names": list(ep.config.class_names),
        "cameras": [c.to_dict() for c in ep.cameras],
        "objects": [o.to_dict() for o in ep.objects],
        "frames": frames,
    }
    with open(d / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1)


class DatasetError(ValueError):
    pass


def _require(mapping: dict, key: str, where: str):
    if key not in mapping:
        raise DatasetError(f"{where}: missing field {key!r}")
    return mapping[key]


def load_episode(directory) -> Episode:
    d = Path(directory)
    path = d / "manifest.json"
    try:
        with open(path) as fh:
            m = json.load(fh)
    except FileNotFoundError:
        raise DatasetError(f"{path}: manifest not found") from None
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: invalid JSON ({exc})") from None
    version = _require(m, "version", str(path))
    if version != MANIFEST_VERSION:
        raise DatasetError(f"{path}: unsupported version {version!r} (expected {MANIFEST_VERSION!r})")
    try:
        config = SimConfig.from_dict(_require(m, "config", str(path)))
    except (TypeError, KeyError, ValueError) as exc:
        raise DatasetError(f"{path}: bad field 'config' ({exc})") from None
    cameras = [CameraModel.from_dict(c) for c in _require(m, "cameras", str(path))]
    objects = [SceneObject.from_dict(o) for o in _require(m, "objects", str(path))]
    frames = []
    for i, fr in enumerate(_require(m, "frames", str(path))):
        where = f"{path}: frames[{i}]"
        pose_d = _require(fr, "ego_pose", where)
        pose = EgoPose(np.array(pose_d["rotation"]), np.array(pose_d["translation"]), int(pose_d["timestamp"]))
        stem = _require(fr, "stem", where)
        try:
            images = read_tensor(d / f"{stem}_images.teoc")
            radar = RadarPointCloud.from_array(read_tensor(d / f"{stem}_radar.teoc"))
            labels = read_tensor(d / f"{stem}_occ.teoc")
        except FileNotFoundError as exc:
            raise DatasetError(f"{where}: missing blob {exc.filename}") from None
        except ContainerError as exc:
            raise DatasetError(str(exc)) from None
        if labels.size and (labels.min() < 0 or labels.max() >= len(config.class_names)):
            raise DatasetError(f"{where}: occupancy labels out of range")
        frames.append(Frame(int(_require(fr, "timestamp", where)), pose, images, radar,
                            OccupancyLabelGrid(config.grid, labels)))
    if len(frames) != m.get("num_frames", len(frames)):
        raise DatasetError(f"{path}: num_frames={m['num_frames']} but {len(frames)} frames listed")
    return Episode(frames, config, int(_require(m, "seed", str(path))), objects, cameras)


def list_episodes(root) -> list[Path]:
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory {os.fspath(root)!r} does not exist")
    eps = sorted(p.parent for p in root.glob("*/manifest.json"))
    if (root / "manifest.json").exists():
        eps.insert(0, root)
    return eps


def generate_dataset(config: SimConfig, out_dir, count: int, seed: int) -> list[Path]:
    out = Path(out_dir)
    paths = []
    for i, s in enumerate(episode_seeds(seed, count)):
        p = out / f"episode_{i:05d}"
        save_episode(generate_episode(config, s), p)
        paths.append(p)
    return paths


def ego_relative(pose_from: EgoPose, pose_to: EgoPose) -> EgoPose:
    """Pose mapping coordinates of ``pose_from``'s frame into ``pose_to``'s frame."""
    return compose_pose(invert_pose(pose_to), pose_from)
