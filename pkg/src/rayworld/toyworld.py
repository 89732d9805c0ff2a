"""Procedural multi-camera toy world with exact ray-cast rendering.

Scenes are colored cuboids over a checkered ground plane with painted lane
polylines and a constant sky. Rendering is an exact per-pixel ray cast, so
any camera pose has pixel-exact ground truth (used directly as the novel-view
oracle). World frame: z-up, ground at z=0, origin at the ego position of the
first timestep.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .geometry import CameraPose, pixel_ray_directions, rot_z

SKY = np.array([0.55, 0.75, 0.95])
GROUND_A = np.array([0.35, 0.45, 0.35])
GROUND_B = np.array([0.55, 0.60, 0.50])
LANE_COLORS = {"lane": np.array([0.95, 0.95, 0.90]), "edge": np.array([0.9, 0.8, 0.2])}
CUBOID_PALETTE = [
    np.array([0.90, 0.15, 0.15]), np.array([0.15, 0.25, 0.90]),
    np.array([0.15, 0.80, 0.20]), np.array([0.95, 0.55, 0.10]),
    np.array([0.75, 0.15, 0.80]), np.array([0.10, 0.80, 0.80]),
]


@dataclass(frozen=True)
class Cuboid:
    center: np.ndarray   # (3,) at t=0
    size: np.ndarray     # (3,) full extents
    yaw: float
    velocity: np.ndarray  # (3,) units/s
    color: np.ndarray    # (3,) in [0,1]
    category: str = "cube"

    def center_at(self, t: float) -> np.ndarray:
        return self.center + self.velocity * t


@dataclass(frozen=True)
class Lane:
    category: str
    vertices: np.ndarray  # (n, 3) on the ground plane (z=0)
    width: float = 0.35


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    cuboids: tuple[Cuboid, ...]
    lanes: tuple[Lane, ...]
    duration: float = 20.0
    checker_period: float = 2.0


@dataclass(frozen=True)
class RigSpec:
    """Ring of V cameras around the ego, shared intrinsics."""
    # yaw spacing keeps a usable overlap band between adjacent views
    # (FOV is ~58 deg at the default focal factor)
    cam_yaws: tuple[float, ...] = (-0.3, 0.3)
    cam_pitch: float = 0.18     # downward tilt, radians
    height: float = 1.2
    forward_offset: float = 0.4
    image_w: int = 16
    image_h: int = 16
    focal_factor: float = 0.9   # fx = fy = focal_factor * image_w

    @property
    def num_views(self) -> int:
        return len(self.cam_yaws)

    def camera_pose(self, ego_xy: np.ndarray, ego_yaw: float, view: int) -> CameraPose:
        yaw = ego_yaw + self.cam_yaws[view]
        fwd = np.array([np.cos(yaw), np.sin(yaw), 0.0])
        center = np.array([ego_xy[0], ego_xy[1], self.height]) + self.forward_offset * fwd
        # camera axes: x right, y down, z forward; then pitch down about x
        right = np.array([np.sin(yaw), -np.cos(yaw), 0.0])
        down = np.array([0.0, 0.0, -1.0])
        r = np.stack([right, down, fwd], axis=-1)
        cp, sp = np.cos(self.cam_pitch), np.sin(self.cam_pitch)
        pitch = np.array([[1, 0, 0], [0, cp, -sp], [0, sp, cp]], dtype=np.float64)
        f = self.focal_factor * self.image_w
        return CameraPose(r @ pitch, center, f, f, self.image_w / 2.0, self.image_h / 2.0,
                          self.image_w, self.image_h)


@dataclass(frozen=True)
class EgoTrajectory:
    """Parametric ego path on the ground plane; yaw follows heading."""
    kind: str = "straight"       # straight | arc | waypoints
    speed: float = 1.0
    turn_rate: float = 0.0       # rad/s, for arc
    start_yaw: float = 0.0
    waypoints: np.ndarray | None = None  # (n, 2), for kind="waypoints"

    def pose_at(self, t: float) -> tuple[np.ndarray, float]:
        if self.kind == "straight":
            yaw = self.start_yaw
            xy = self.speed * t * np.array([np.cos(yaw), np.sin(yaw)])
            return xy, yaw
        if self.kind == "arc":
            w = self.turn_rate
            if abs(w) < 1e-9:
                return EgoTrajectory("straight", self.speed, 0.0, self.start_yaw).pose_at(t)
            yaw = self.start_yaw + w * t
            r = self.speed / w
            xy = r * np.array([np.sin(yaw) - np.sin(self.start_yaw),
                               -np.cos(yaw) + np.cos(self.start_yaw)])
            return xy, yaw
        if self.kind == "waypoints":
            pts = np.asarray(self.waypoints, dtype=np.float64)
            seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
            cum = np.concatenate([[0.0], np.cumsum(seg)])
            s = min(self.speed * t, cum[-1] - 1e-9)
            i = int(np.searchsorted(cum, s, side="right") - 1)
            i = min(i, len(seg) - 1)
            frac = (s - cum[i]) / max(seg[i], 1e-12)
            xy = pts[i] + frac * (pts[i + 1] - pts[i])
            d = pts[i + 1] - pts[i]
            return xy, float(np.arctan2(d[1], d[0]))
        raise ValueError(f"unknown trajectory kind {self.kind!r}")


# --------------------------------------------------------------------------
# rendering


def _ray_box_t(origin: np.ndarray, dirs: np.ndarray, cub: Cuboid, t: float) -> np.ndarray:
    """Nearest positive hit parameter per ray (inf where missed)."""
    r_inv = rot_z(cub.yaw).T
    o = r_inv @ (origin - cub.center_at(t))
    d = dirs @ r_inv.T
    half = cub.size / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - o) / d
        t2 = (half - o) / d
        tmin = np.minimum(t1, t2)
        tmax = np.maximum(t1, t2)
        near = np.nanmax(np.where(np.isnan(tmin), -np.inf, tmin), axis=-1)
        far = np.nanmin(np.where(np.isnan(tmax), np.inf, tmax), axis=-1)
    hit = (near <= far) & (far > 1e-6)
    tt = np.where(near > 1e-6, near, far)  # inside the box: exit face
    return np.where(hit, tt, np.inf)


def _ground_color(points: np.ndarray, scene: SceneSpec) -> np.ndarray:
    """Checkerboard plus lane paint for ground-plane hit points (n, 3)."""
    period = scene.checker_period
    parity = (np.floor(points[:, 0] / period) + np.floor(points[:, 1] / period)) % 2
    colors = np.where(parity[:, None] > 0.5, GROUND_B, GROUND_A)
    xy = points[:, :2]
    for lane in scene.lanes:
        verts = lane.vertices[:, :2]
        dmin = np.full(len(xy), np.inf)
        for a, b in zip(verts[:-1], verts[1:]):
            ab = b - a
            denom = max(float(ab @ ab), 1e-12)
            u = np.clip((xy - a) @ ab / denom, 0.0, 1.0)
            proj = a + u[:, None] * ab
            dmin = np.minimum(dmin, np.linalg.norm(xy - proj, axis=1))
        on = dmin <= lane.width / 2.0
        colors[on] = LANE_COLORS.get(lane.category, LANE_COLORS["lane"])
    return colors


def render_view(scene: SceneSpec, pose: CameraPose, time: float,
                with_depth: bool = False, supersample: int = 2):
    """Exact ray cast of one view: (H, W, 3) float image in [0, 1].

    Pixels integrate `supersample`^2 area samples (physically a pixel averages
    irradiance over its footprint; this also keeps distant high-frequency
    texture band-limited instead of aliased). Depth, when requested, uses the
    exact center ray.
    """
    if supersample > 1:
        img = _render_rays(scene, pose, time, _sample_grid(pose, supersample))[0]
        img = img.reshape(pose.height, supersample, pose.width, supersample, 3) \
            .mean(axis=(1, 3))
        if with_depth:
            _, depth = _render_rays(scene, pose, time, _sample_grid(pose, 1))
            return img, depth.reshape(pose.height, pose.width)
        return img
    img, depth = _render_rays(scene, pose, time, _sample_grid(pose, 1))
    img = img.reshape(pose.height, pose.width, 3)
    if with_depth:
        return img, depth.reshape(pose.height, pose.width)
    return img


def _sample_grid(pose: CameraPose, ss: int) -> np.ndarray:
    """Sample directions on an ss-times-oversampled pixel grid (rays, 3)."""
    h, w = pose.height * ss, pose.width * ss
    jj, ii = np.meshgrid(np.arange(w), np.arange(h))
    us = (jj.ravel() + 0.5) / ss
    vs = (ii.ravel() + 0.5) / ss
    return pixel_ray_directions(pose, us, vs)


def _render_rays(scene: SceneSpec, pose: CameraPose, time: float,
                 dirs: np.ndarray):
    o = pose.translation
    n = dirs.shape[0]
    best_t = np.full(n, np.inf)
    colors = np.tile(SKY, (n, 1))
    # ground
    dz = dirs[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        tg = -o[2] / dz
    ground = (dz < -1e-9) & (tg > 1e-6)
    pts = o + tg[:, None] * dirs
    gcol = _ground_color(pts[ground], scene)
    best_t[ground] = tg[ground]
    colors[ground] = gcol
    # cuboids
    for cub in scene.cuboids:
        tt = _ray_box_t(o, dirs, cub, time)
        closer = tt < best_t
        best_t[closer] = tt[closer]
        colors[closer] = cub.color
    return colors, best_t


def render_frame(scene: SceneSpec, rig: RigSpec, traj: EgoTrajectory, time: float
                 ) -> tuple[list[np.ndarray], list[CameraPose]]:
    """All views of one frame plus their global-frame camera poses."""
    if not (0.0 <= time <= scene.duration):
        raise ValueError(f"time {time} outside scene duration {scene.duration}")
    xy, yaw = traj.pose_at(time)
    poses = [rig.camera_pose(xy, yaw, v) for v in range(rig.num_views)]
    return [render_view(scene, p, time) for p in poses], poses


def annotate_frame(scene: SceneSpec, time: float) -> tuple[list[dict], list[dict], str]:
    """Boxes (global coords, advected), map polylines, and a templated caption."""
    boxes = [{
        "center": cub.center_at(time), "size": cub.size, "yaw": cub.yaw,
        "category": cub.category, "color": cub.color, "id": i,
    } for i, cub in enumerate(scene.cuboids)]
    lanes = [{"category": ln.category, "vertices": ln.vertices, "id": i}
             for i, ln in enumerate(scene.lanes)]
    moving = sum(1 for c in scene.cuboids if np.linalg.norm(c.velocity) > 1e-6)
    parts = [f"{len(scene.cuboids)} cubes" if len(scene.cuboids) != 1 else "one cube"]
    if moving:
        parts.append(f"{moving} moving")
    if scene.lanes:
        parts.append(f"{len(scene.lanes)} lane lines")
    caption = "a scene with " + ", ".join(parts)
    return boxes, lanes, caption


# --------------------------------------------------------------------------
# procedural scene generation


def random_scene(seed: int, n_cuboids: int = 3, n_lanes: int = 1,
                 dynamic: bool = True, arena: float = 8.0,
                 duration: float = 30.0) -> SceneSpec:
    rng = np.random.default_rng(seed)
    cubs = []
    palette = list(CUBOID_PALETTE)
    rng.shuffle(palette)
    for i in range(n_cuboids):
        ahead = rng.uniform(2.5, arena)
        side = rng.uniform(-arena / 2, arena / 2)
        size = rng.uniform(0.8, 2.2, size=3)
        vel = np.zeros(3)
        if dynamic and (i == 0 or rng.random() < 0.7):
            ang = rng.uniform(0, 2 * np.pi)
            vel = rng.uniform(0.3, 0.9) * np.array([np.cos(ang), np.sin(ang), 0.0])
        cubs.append(Cuboid(
            center=np.array([ahead, side, size[2] / 2.0]),
            size=size, yaw=float(rng.uniform(0, np.pi)),
            velocity=vel, color=palette[i % len(palette)]))
    lanes = []
    for i in range(n_lanes):
        y0 = rng.uniform(-2.0, 2.0)
        xs = np.linspace(-2.0, arena + 6.0, 6)
        curve = rng.uniform(-0.15, 0.15)
        ys = y0 + curve * (xs - xs[0]) ** 1.5 / 3.0
        verts = np.stack([xs, ys, np.zeros_like(xs)], axis=-1)
        lanes.append(Lane(category="lane" if i % 2 == 0 else "edge", vertices=verts))
    return SceneSpec(seed=seed, cuboids=tuple(cubs), lanes=tuple(lanes), duration=duration)


def default_trajectories() -> dict[str, EgoTrajectory]:
    return {
        "straight": EgoTrajectory("straight", speed=0.8),
        "turning": EgoTrajectory("arc", speed=0.8, turn_rate=0.12),
    }


# --------------------------------------------------------------------------
# dataset files


def write_ppm(path: str, image: np.ndarray):
    arr = np.clip(np.asarray(image) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    h, w, _ = arr.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(arr.tobytes())


def read_ppm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P6":
            raise ValueError(f"{path}: not a binary PPM")
        dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        f.readline()  # maxval
        data = np.frombuffer(f.read(w * h * 3), dtype=np.uint8)
    return data.reshape(h, w, 3).astype(np.float32) / 255.0


def write_scene(out_dir: str, scene_id: str, scene: SceneSpec, rig: RigSpec,
                traj: EgoTrajectory, times: np.ndarray):
    sdir = os.path.join(out_dir, scene_id)
    os.makedirs(sdir, exist_ok=True)
    all_poses = []
    for ti, t in enumerate(times):
        images, poses = render_frame(scene, rig, traj, float(t))
        all_poses.append(poses)
        for v, img in enumerate(images):
            write_ppm(os.path.join(sdir, f"f{ti:03d}_v{v}.ppm"), img)
    with open(os.path.join(sdir, "manifest"), "w") as f:
        f.write(f"scene: {scene_id}\n")
        f.write(f"seed: {scene.seed}\n")
        f.write(f"views: {rig.num_views}\n")
        f.write(f"image: {rig.image_w} {rig.image_h}\n")
        f.write(f"trajectory: {traj.kind}\n")
        f.write(f"frames: {len(times)}\n")
        f.write("times: " + " ".join(f"{t:.6f}" for t in times) + "\n")
    with open(os.path.join(sdir, "poses"), "w") as f:
        f.write("# t_index time_s view r00 r01 r02 t0 r10 r11 r12 t1 r20 r21 r22 t2 fx fy cx cy\n")
        for ti, t in enumerate(times):
            for v, p in enumerate(all_poses[ti]):
                ext = np.hstack([p.rotation, p.translation[:, None]]).ravel()
                vals = " ".join(f"{x:.9g}" for x in ext)
                f.write(f"{ti} {t:.6f} {v} {vals} {p.fx:.9g} {p.fy:.9g} {p.cx:.9g} {p.cy:.9g}\n")
    with open(os.path.join(sdir, "boxes"), "w") as f:
        f.write("# t_index time_s id category cx cy cz sx sy sz yaw r g b\n")
        for ti, t in enumerate(times):
            boxes, _, _ = annotate_frame(scene, float(t))
            for b in boxes:
                c, s, col = b["center"], b["size"], b["color"]
                f.write(f"{ti} {t:.6f} {b['id']} {b['category']} "
                        f"{c[0]:.6f} {c[1]:.6f} {c[2]:.6f} {s[0]:.6f} {s[1]:.6f} {s[2]:.6f} "
                        f"{b['yaw']:.6f} {col[0]:.4f} {col[1]:.4f} {col[2]:.4f}\n")
    with open(os.path.join(sdir, "map"), "w") as f:
        f.write("# t_index id category n_vertices x y z ...\n")
        for ti, t in enumerate(times):
            _, lanes, _ = annotate_frame(scene, float(t))
            for ln in lanes:
                verts = np.asarray(ln["vertices"]).ravel()
                vals = " ".join(f"{x:.6f}" for x in verts)
                f.write(f"{ti} {ln['id']} {ln['category']} {len(ln['vertices'])} {vals}\n")
    _, _, caption = annotate_frame(scene, 0.0)
    with open(os.path.join(sdir, "caption"), "w") as f:
        f.write(caption + "\n")


def build_dataset(out_dir: str, n_scenes: int, seed: int = 0,
                  frames_per_scene: int = 8, interval_range: tuple[float, float] = (0.1, 1.0),
                  image_size: int = 16, rig_mix: tuple[int, ...] = (2, 3),
                  include_turning: bool = True) -> list[str]:
    """Deterministic dataset: scenes split across rig variants and trajectory
    types (turning included). Returns scene ids."""
    if n_scenes < 1:
        raise ValueError("need at least one scene")
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    trajs = default_trajectories()
    traj_names = list(trajs) if include_turning else ["straight"]
    scene_ids = []
    index_lines = []
    for i in range(n_scenes):
        v = rig_mix[i % len(rig_mix)]
        yaws = tuple(np.linspace(-0.3, 0.3, v)) if v > 1 else (0.0,)
        rig = RigSpec(cam_yaws=yaws, image_w=image_size, image_h=image_size)
        traj_name = traj_names[i % len(traj_names)]
        scene = random_scene(seed=seed * 10007 + i, dynamic=True)
        intervals = rng.uniform(*interval_range, size=frames_per_scene - 1)
        times = np.concatenate([[0.0], np.cumsum(intervals)])
        sid = f"scene{i:04d}"
        write_scene(out_dir, sid, scene, rig, trajs[traj_name], times)
        scene_ids.append(sid)
        index_lines.append(f"{sid} views={v} trajectory={traj_name} frames={frames_per_scene}")
    with open(os.path.join(out_dir, "manifest"), "w") as f:
        f.write("\n".join(index_lines) + "\n")
    return scene_ids


def load_scene(scene_dir: str) -> dict:
    """Read one scene directory back into arrays/poses/annotations."""
    meta = {}
    with open(os.path.join(scene_dir, "manifest")) as f:
        for line in f:
            key, _, val = line.partition(":")
            meta[key.strip()] = val.strip()
    n_frames = int(meta["frames"])
    n_views = int(meta["views"])
    times = np.array([float(x) for x in meta["times"].split()])
    images = [[read_ppm(os.path.join(scene_dir, f"f{ti:03d}_v{v}.ppm"))
               for v in range(n_views)] for ti in range(n_frames)]
    poses: list[list[CameraPose]] = [[None] * n_views for _ in range(n_frames)]
    with open(os.path.join(scene_dir, "poses")) as f:
        for line in f:
            if line.startswith("#"):
                continue
            vals = line.split()
            ti, v = int(vals[0]), int(vals[2])
            ext = np.array([float(x) for x in vals[3:15]]).reshape(3, 4)
            fx, fy, cx, cy = (float(x) for x in vals[15:19])
            w, h = (int(x) for x in meta["image"].split())
            poses[ti][v] = CameraPose(ext[:, :3], ext[:, 3], fx, fy, cx, cy, w, h)
    boxes: list[list[dict]] = [[] for _ in range(n_frames)]
    with open(os.path.join(scene_dir, "boxes")) as f:
        for line in f:
            if line.startswith("#"):
                continue
            vals = line.split()
            ti = int(vals[0])
            boxes[ti].append({
                "id": int(vals[2]), "category": vals[3],
                "center": np.array([float(x) for x in vals[4:7]]),
                "size": np.array([float(x) for x in vals[7:10]]),
                "yaw": float(vals[10]),
                "color": np.array([float(x) for x in vals[11:14]]),
            })
    lanes: list[list[dict]] = [[] for _ in range(n_frames)]
    with open(os.path.join(scene_dir, "map")) as f:
        for line in f:
            if line.startswith("#"):
                continue
            vals = line.split()
            ti, nv = int(vals[0]), int(vals[3])
            lanes[ti].append({
                "id": int(vals[1]), "category": vals[2],
                "vertices": np.array([float(x) for x in vals[4:4 + 3 * nv]]).reshape(nv, 3),
            })
    with open(os.path.join(scene_dir, "caption")) as f:
        caption = f.read().strip()
    return {"times": times, "images": images, "poses": poses, "boxes": boxes,
            "lanes": lanes, "caption": caption, "meta": meta}
