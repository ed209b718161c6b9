"""Synthetic scenes with exact ground truth, and a brute-force render oracle.

Scenes are built from axis-aligned primitives (planes and boxes) with
procedural textures, ray-cast analytically so depth maps are exact up
to the 16-bit file quantization.  ``brute_force_render`` re-implements
the splatting contract of ``shift_render`` with plain per-point loops
and no vectorized reduction; the two must agree bit-exactly on every
scene, which is the package's primary rendering check.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import pnm
from .errors import DegenerateViewError, InvalidInputError, MalformedManifestError
from .geometry import (
    DEFAULT_Z_MIN,
    CameraIntrinsics,
    CameraPose,
    ColoredPointCloud,
    ImageBuffer,
    pose_compose,
    pose_inverse,
    round_half_up,
)
from .manifest import (
    SceneManifest,
    intrinsics_from_json,
    intrinsics_to_json,
    load_manifest,
    pose_from_json,
    pose_to_json,
    save_manifest_document,
)
from .seam import CameraRig, RigCamera
from .shift_render import DEFAULT_DEPTH_TOL, MaskFlag, OcclusionMask, ZBuffer

# Camera optical frame (x right, y down, z forward) expressed in the ego
# frame (x forward, y left, z up) for a forward-facing camera.
FRONT_CAM_QUAT = np.array([0.5, -0.5, 0.5, -0.5])

_AXES = {"x": 0, "y": 1, "z": 2}
_MASK64 = (1 << 64) - 1


def camera_pose(yaw: float, translation=(0.0, 0.0, 0.0)) -> CameraPose:
    """cam2ego pose of a camera pointing along ego +x rotated by `yaw` about +z."""
    return pose_compose(CameraPose.from_yaw(yaw, translation), CameraPose(np.zeros(3), FRONT_CAM_QUAT))


def default_rig(width: int, height: int) -> CameraRig:
    """Three-camera surround slice at yaws {-30, 0, +30} degrees, fx = width."""
    k = CameraIntrinsics(fx=float(width), fy=float(width), cx=width / 2.0, cy=height / 2.0,
                         width=width, height=height)
    third = math.pi / 6.0
    return CameraRig((
        RigCamera("front", k, camera_pose(0.0, (0.2, 0.0, 0.0))),
        RigCamera("front_left", k, camera_pose(third, (0.1, 0.15, 0.0))),
        RigCamera("front_right", k, camera_pose(-third, (0.1, -0.15, 0.0))),
    ))


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@dataclass(frozen=True)
class Texture:
    """Procedural surface color: a checker pair or hashed value noise.

    Both are functions of the in-plane surface coordinates in meters, so
    every camera observing the same surface point sees the same color.
    """

    kind: str  # "checker" | "noise"
    period: float = 1.0  # cell size in meters
    colors: tuple[tuple[int, int, int], tuple[int, int, int]] = ((230, 230, 230), (40, 40, 40))
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("checker", "noise"):
            raise InvalidInputError(f"unknown texture kind {self.kind!r}")
        if not self.period > 0:
            raise InvalidInputError(f"texture period must be > 0, got {self.period}")

    def sample(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Colors for arrays of in-plane coordinates; returns (N, 3) uint8."""
        ia = np.floor(a / self.period).astype(np.int64)
        ib = np.floor(b / self.period).astype(np.int64)
        if self.kind == "checker":
            pick = ((ia + ib) % 2).astype(np.uint8)
            palette = np.asarray(self.colors, dtype=np.uint8)
            return palette[pick]
        cells = (
            (ia.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15))
            ^ (ib.astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F))
            ^ np.uint64(self.seed & _MASK64)
        )
        h = cells
        h = (h ^ (h >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        h = (h ^ (h >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        h = h ^ (h >> np.uint64(31))
        out = np.empty((h.shape[0], 3), dtype=np.uint8)
        out[:, 0] = (h & np.uint64(0xFF)).astype(np.uint8)
        out[:, 1] = ((h >> np.uint64(8)) & np.uint64(0xFF)).astype(np.uint8)
        out[:, 2] = ((h >> np.uint64(16)) & np.uint64(0xFF)).astype(np.uint8)
        return out


@dataclass(frozen=True)
class Plane:
    """World-axis-aligned plane: normal along `axis`, at coordinate `offset`.

    `bounds` optionally limits the two remaining coordinates (in axis
    order); None means infinite extent.
    """

    axis: str
    offset: float
    texture: Texture
    bounds: tuple[tuple[float, float], tuple[float, float]] | None = None

    def __post_init__(self):
        if self.axis not in _AXES:
            raise InvalidInputError(f"plane axis must be x, y or z, got {self.axis!r}")
        if self.bounds is not None:
            for lo, hi in self.bounds:
                if not hi > lo:
                    raise InvalidInputError(f"degenerate plane bounds {self.bounds}")


@dataclass(frozen=True)
class Box:
    """Axis-aligned box between two corners."""

    min_corner: tuple[float, float, float]
    max_corner: tuple[float, float, float]
    texture: Texture

    def __post_init__(self):
        lo = np.asarray(self.min_corner, dtype=np.float64)
        hi = np.asarray(self.max_corner, dtype=np.float64)
        if not np.all(hi > lo):
            raise InvalidInputError(f"degenerate box {self.min_corner} .. {self.max_corner}")


@dataclass(frozen=True)
class SceneSpec:
    """Everything needed to render a synthetic scene deterministically."""

    scene_id: str
    image_size: tuple[int, int]  # (width, height)
    rig: CameraRig
    trajectory: tuple[CameraPose, ...]  # ego2world per frame
    primitives: tuple[Plane | Box, ...]
    depth_scale: float = 0.001
    frame_dt: float = 0.1  # seconds between frames
    seed: int = 0

    def __post_init__(self):
        if not self.trajectory:
            raise InvalidInputError("trajectory must contain at least one ego pose")
        if not self.primitives:
            raise InvalidInputError("scene needs at least one primitive")
        if not self.depth_scale > 0:
            raise InvalidInputError(f"depth_scale must be > 0, got {self.depth_scale}")


def _texture_to_json(t: Texture) -> dict:
    return {"kind": t.kind, "period": t.period, "colors": [list(c) for c in t.colors], "seed": t.seed}


def _texture_from_json(obj: dict) -> Texture:
    return Texture(
        kind=obj["kind"],
        period=float(obj.get("period", 1.0)),
        colors=tuple(tuple(int(v) for v in c) for c in obj.get("colors", [[230, 230, 230], [40, 40, 40]])),
        seed=int(obj.get("seed", 0)),
    )


def scene_spec_to_json(spec: SceneSpec) -> dict:
    prims = []
    for p in spec.primitives:
        if isinstance(p, Plane):
            prims.append({"kind": "plane", "axis": p.axis, "offset": p.offset,
                          "bounds": [list(b) for b in p.bounds] if p.bounds else None,
                          "texture": _texture_to_json(p.texture)})
        else:
            prims.append({"kind": "box", "min_corner": list(p.min_corner), "max_corner": list(p.max_corner),
                          "texture": _texture_to_json(p.texture)})
    return {
        "scene_id": spec.scene_id,
        "image_size": list(spec.image_size),
        "depth_scale": spec.depth_scale,
        "frame_dt": spec.frame_dt,
        "seed": spec.seed,
        "rig": [
            {"camera_id": c.camera_id, "intrinsics": intrinsics_to_json(c.intrinsics),
             "cam2ego": pose_to_json(c.cam2ego)}
            for c in spec.rig.cameras
        ],
        "trajectory": [pose_to_json(p) for p in spec.trajectory],
        "primitives": prims,
    }


def scene_spec_from_json(doc: dict) -> SceneSpec:
    try:
        rig = CameraRig(tuple(
            RigCamera(str(c["camera_id"]), intrinsics_from_json(c["intrinsics"], "scene spec"),
                      pose_from_json(c["cam2ego"], f"scene spec camera {c.get('camera_id')}"))
            for c in doc["rig"]
        ))
        trajectory = tuple(pose_from_json(p, "scene spec trajectory") for p in doc["trajectory"])
        prims: list[Plane | Box] = []
        for p in doc["primitives"]:
            if p["kind"] == "plane":
                bounds = p.get("bounds")
                prims.append(Plane(
                    axis=p["axis"], offset=float(p["offset"]), texture=_texture_from_json(p["texture"]),
                    bounds=tuple((float(lo), float(hi)) for lo, hi in bounds) if bounds else None,
                ))
            elif p["kind"] == "box":
                prims.append(Box(tuple(float(v) for v in p["min_corner"]),
                                 tuple(float(v) for v in p["max_corner"]),
                                 _texture_from_json(p["texture"])))
            else:
                raise MalformedManifestError(f"unknown primitive kind {p['kind']!r}")
        return SceneSpec(
            scene_id=str(doc.get("scene_id", "scene")),
            image_size=(int(doc["image_size"][0]), int(doc["image_size"][1])),
            rig=rig,
            trajectory=trajectory,
            primitives=tuple(prims),
            depth_scale=float(doc.get("depth_scale", 0.001)),
            frame_dt=float(doc.get("frame_dt", 0.1)),
            seed=int(doc.get("seed", 0)),
        )
    except (KeyError, TypeError, IndexError) as exc:
        raise MalformedManifestError(f"bad scene spec: {exc}") from exc


def load_scene_spec(path: str | Path) -> SceneSpec:
    try:
        return scene_spec_from_json(json.loads(Path(path).read_text()))
    except json.JSONDecodeError as exc:
        raise MalformedManifestError(f"{path}: invalid JSON ({exc})") from exc


def _check_camera_placement(spec: SceneSpec, origin: np.ndarray) -> None:
    eps = 1e-6
    for p in spec.primitives:
        if isinstance(p, Box):
            lo = np.asarray(p.min_corner)
            hi = np.asarray(p.max_corner)
            if np.all(origin >= lo - eps) and np.all(origin <= hi + eps):
                raise DegenerateViewError(f"camera at {origin.tolist()} lies inside box {p.min_corner}..{p.max_corner}")
        else:
            if abs(origin[_AXES[p.axis]] - p.offset) < eps:
                raise DegenerateViewError(f"camera at {origin.tolist()} lies on plane {p.axis}={p.offset}")


def render_view(spec: SceneSpec, ego2world: CameraPose, cam: RigCamera):
    """Exact ray-cast of one camera view.

    Returns (pixels (H, W, 3) uint8, depth (H, W) float64) with depth
    measured along the camera +z axis; 0 where no primitive is hit.
    """
    k = cam.intrinsics
    cam2world = pose_compose(ego2world, cam.cam2ego)
    origin = cam2world.translation
    _check_camera_placement(spec, origin)
    h, w = k.height, k.width
    us, vs = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    dirs_cam = np.stack(
        [(us - k.cx) / k.fx, (vs - k.cy) / k.fy, np.ones_like(us)], axis=-1
    ).reshape(-1, 3)
    rot = cam2world.rotation_matrix()
    dirs = np.empty_like(dirs_cam)
    dirs[:, 0] = rot[0, 0] * dirs_cam[:, 0] + rot[0, 1] * dirs_cam[:, 1] + rot[0, 2] * dirs_cam[:, 2]
    dirs[:, 1] = rot[1, 0] * dirs_cam[:, 0] + rot[1, 1] * dirs_cam[:, 1] + rot[1, 2] * dirs_cam[:, 2]
    dirs[:, 2] = rot[2, 0] * dirs_cam[:, 0] + rot[2, 1] * dirs_cam[:, 1] + rot[2, 2] * dirs_cam[:, 2]

    n = dirs.shape[0]
    best_s = np.full(n, np.inf)
    colors = np.zeros((n, 3), dtype=np.uint8)
    eps = 1e-9
    for prim in spec.primitives:
        if isinstance(prim, Plane):
            ax = _AXES[prim.axis]
            denom = dirs[:, ax]
            with np.errstate(divide="ignore", invalid="ignore"):
                s = (prim.offset - origin[ax]) / denom
            idx = np.nonzero(np.isfinite(s) & (s > eps) & (s < best_s))[0]
            if not idx.size:
                continue
            others = [a for a in range(3) if a != ax]
            point = origin[None, :] + s[idx, None] * dirs[idx]
            if prim.bounds is not None:
                (lo0, hi0), (lo1, hi1) = prim.bounds
                inside = (
                    (point[:, others[0]] >= lo0) & (point[:, others[0]] <= hi0)
                    & (point[:, others[1]] >= lo1) & (point[:, others[1]] <= hi1)
                )
                idx = idx[inside]
                point = point[inside]
            if idx.size:
                best_s[idx] = s[idx]
                colors[idx] = prim.texture.sample(point[:, others[0]], point[:, others[1]])
        else:
            lo = np.asarray(prim.min_corner)
            hi = np.asarray(prim.max_corner)
            with np.errstate(divide="ignore", invalid="ignore"):
                inv = 1.0 / dirs
            t1 = (lo[None, :] - origin[None, :]) * inv
            t2 = (hi[None, :] - origin[None, :]) * inv
            tnear_ax = np.minimum(t1, t2)
            tfar_ax = np.maximum(t1, t2)
            # rays parallel to a slab: inside -> (-inf, inf), outside -> no hit
            parallel = dirs == 0.0
            inside = (origin[None, :] >= lo[None, :]) & (origin[None, :] <= hi[None, :])
            tnear_ax = np.where(parallel, np.where(inside, -np.inf, np.inf), tnear_ax)
            tfar_ax = np.where(parallel, np.where(inside, np.inf, -np.inf), tfar_ax)
            enter_axis = np.argmax(tnear_ax, axis=1)
            tnear = tnear_ax[np.arange(n), enter_axis]
            tfar = np.min(tfar_ax, axis=1)
            hit = (tnear <= tfar) & (tnear > eps)
            better = hit & (tnear < best_s)
            if better.any():
                idx = np.nonzero(better)[0]
                best_s[idx] = tnear[idx]
                point = origin[None, :] + tnear[idx, None] * dirs[idx]
                face_ax = enter_axis[idx]
                a = np.empty(idx.shape[0])
                b = np.empty(idx.shape[0])
                for ax in range(3):
                    others = [o for o in range(3) if o != ax]
                    on_face = face_ax == ax
                    a[on_face] = point[on_face, others[0]]
                    b[on_face] = point[on_face, others[1]]
                colors[idx] = prim.texture.sample(a, b)
    depth = np.where(np.isfinite(best_s), best_s, 0.0).reshape(h, w)
    pixels = np.where(np.isfinite(best_s)[:, None], colors, np.uint8(0)).reshape(h, w, 3).astype(np.uint8)
    return pixels, depth


def quantize_depth(depth: np.ndarray, depth_scale: float) -> np.ndarray:
    """Depth meters -> stored 16-bit values; out-of-range becomes invalid (0)."""
    stored = round_half_up(depth / depth_scale)
    stored = np.asarray(stored)
    stored[(stored < 0) | (stored > 65535)] = 0
    return stored.astype(np.uint16)


def gen_scene(spec: SceneSpec, out_dir: str | Path) -> SceneManifest:
    """Render every (frame, camera) view, write the dataset, load it back.

    Output layout: ``<out_dir>/manifest.json`` plus
    ``frames/<frame:04d>_<camera>.ppm`` / ``..._depth.pgm``.
    """
    out_dir = Path(out_dir)
    frames_dir = out_dir / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    frame_objs = []
    for fi, ego2world in enumerate(spec.trajectory):
        images = {}
        depths = {}
        for cam in spec.rig.cameras:
            pixels, depth = render_view(spec, ego2world, cam)
            img_rel = f"frames/{fi:04d}_{cam.camera_id}.ppm"
            dep_rel = f"frames/{fi:04d}_{cam.camera_id}_depth.pgm"
            pnm.write_ppm(out_dir / img_rel, pixels)
            pnm.write_pgm16(out_dir / dep_rel, quantize_depth(depth, spec.depth_scale))
            images[cam.camera_id] = img_rel
            depths[cam.camera_id] = dep_rel
        frame_objs.append({
            "timestamp": fi * spec.frame_dt,
            "ego2world": pose_to_json(ego2world),
            "images": images,
            "depths": depths,
        })
    doc = {
        "schema_version": 1,
        "scene_id": spec.scene_id,
        "depth_scale": spec.depth_scale,
        "rig": [
            {"camera_id": c.camera_id, "intrinsics": intrinsics_to_json(c.intrinsics),
             "cam2ego": pose_to_json(c.cam2ego)}
            for c in spec.rig.cameras
        ],
        "frames": frame_objs,
    }
    save_manifest_document(doc, out_dir / "manifest.json")
    return load_manifest(out_dir / "manifest.json")


def brute_force_render(
    cloud: ColoredPointCloud,
    pose: CameraPose,
    intrinsics: CameraIntrinsics,
    splat_radius: int = 0,
    depth_tol: float = DEFAULT_DEPTH_TOL,
    z_min: float = DEFAULT_Z_MIN,
    target_camera: str | None = None,
) -> tuple[ImageBuffer, ZBuffer, OcclusionMask]:
    """Reference renderer: exhaustive per-point scan, no vectorized reduction.

    Same contract and tie-breaking as ``render_shift_image`` +
    ``compute_occlusion_mask``; outputs must match them bit-exactly.
    """
    if len(cloud) > 10**6:
        raise InvalidInputError("brute-force oracle is limited to 1e6 points")
    h, w = intrinsics.height, intrinsics.width
    img = np.zeros((h, w, 3), dtype=np.uint8)
    zdepth = np.full((h, w), np.inf, dtype=np.float64)
    zkey = np.full((h, w), -1, dtype=np.int64)
    flags = np.full((h, w), int(MaskFlag.INVALID_DEPTH), dtype=np.uint8)

    inv = pose_inverse(pose)
    keys = cloud.canonical_keys().tolist()
    n = len(cloud)
    # Scalar math below mirrors pose_apply / project_point expression by
    # expression; Python and numpy both use IEEE doubles, so results are
    # bit-identical to the vectorized renderer.
    rot = inv.rotation_matrix()
    (r00, r01, r02), (r10, r11, r12), (r20, r21, r22) = rot.tolist()
    tx, ty, tz = inv.translation.tolist()
    fx, fy, cx, cy = intrinsics.fx, intrinsics.fy, intrinsics.cx, intrinsics.cy
    positions = cloud.positions.tolist()
    projections: list[tuple[float, int, int] | None] = [None] * n
    floor = math.floor
    for i in range(n):
        gx, gy, gz = positions[i]
        x = r00 * gx + r01 * gy + r02 * gz + tx
        y = r10 * gx + r11 * gy + r12 * gz + ty
        d = r20 * gx + r21 * gy + r22 * gz + tz
        if not d > z_min:
            continue
        u = (fx * x) / d + cx
        v = (fy * y) / d + cy
        cu = int(floor(u + 0.5))
        cv = int(floor(v + 0.5))
        projections[i] = (d, cu, cv)
        for dv in range(-splat_radius, splat_radius + 1):
            for du in range(-splat_radius, splat_radius + 1):
                px, py = cu + du, cv + dv
                if not (0 <= px < w and 0 <= py < h):
                    continue
                if d < zdepth[py, px] or (d == zdepth[py, px] and keys[i] < zkey[py, px]):
                    zdepth[py, px] = d
                    zkey[py, px] = keys[i]
                    img[py, px] = cloud.colors[i]

    if n:
        if target_camera is None:
            if len(cloud.camera_ids) != 1:
                raise InvalidInputError("target_camera is required for a multi-camera cloud")
            cam_pos = 0
        elif target_camera in cloud.camera_ids:
            cam_pos = cloud.camera_ids.index(target_camera)
        else:
            cam_pos = -1
        if cam_pos >= 0:
            if cloud.source_sizes[cam_pos] != (w, h):
                raise InvalidInputError("mask grid does not match the target camera's source size")
            for i in range(n):
                if cloud.camera_index[i] != cam_pos:
                    continue
                su, sv = cloud.source_pixels[i]
                proj = projections[i]
                if proj is None:
                    flags[sv, su] = int(MaskFlag.OUT_OF_VIEW)
                    continue
                d, cu, cv = proj
                if not (0 <= cu < w and 0 <= cv < h):
                    flags[sv, su] = int(MaskFlag.OUT_OF_VIEW)
                elif (d - zdepth[cv, cu]) / zdepth[cv, cu] > depth_tol:
                    flags[sv, su] = int(MaskFlag.DEPTH_OCCLUDED)
                else:
                    flags[sv, su] = int(MaskFlag.VISIBLE)

    return ImageBuffer(img), ZBuffer(zdepth, zkey), OcclusionMask(flags)


def single_camera_rig(width: int, height: int, fx: float | None = None,
                      camera_id: str = "front", translation=(0.0, 0.0, 0.0), yaw: float = 0.0) -> CameraRig:
    f = float(fx if fx is not None else width)
    k = CameraIntrinsics(fx=f, fy=f, cx=width / 2.0, cy=height / 2.0, width=width, height=height)
    return CameraRig((RigCamera(camera_id, k, camera_pose(yaw, translation)),))


def random_scene_spec(seed: int, image_size: tuple[int, int] = (64, 64), n_frames: int = 2,
                      scene_id: str | None = None) -> SceneSpec:
    """A randomized but reproducible test scene: ground, far wall, boxes.

    Geometry is laid out beyond the trajectory's forward extent so no
    camera ever enters a primitive, and depths stay within the 16-bit
    range at the chosen depth_scale.
    """
    rng = np.random.Generator(np.random.Philox(key=[seed & _MASK64, 0xA11CE]))
    w, h = image_size
    rig = default_rig(w, h)
    poses = []
    x = 0.0
    yaw = 0.0
    for _ in range(n_frames):
        poses.append(CameraPose.from_yaw(yaw, (x, float(rng.uniform(-0.2, 0.2)), 0.0)))
        x += float(rng.uniform(0.2, 0.8))
        yaw += float(rng.uniform(-0.05, 0.05))
    max_x = x

    def tex() -> Texture:
        if rng.random() < 0.5:
            c0 = tuple(int(v) for v in rng.integers(0, 256, size=3))
            c1 = tuple(int(v) for v in rng.integers(0, 256, size=3))
            return Texture("checker", period=float(rng.uniform(0.5, 3.0)), colors=(c0, c1))
        return Texture("noise", period=float(rng.uniform(0.3, 2.0)), seed=int(rng.integers(0, 2**31)))

    prims: list[Plane | Box] = [
        Plane(axis="x", offset=max_x + float(rng.uniform(18.0, 30.0)), texture=tex()),
        Plane(axis="z", offset=-float(rng.uniform(1.2, 2.0)), texture=tex()),
    ]
    for _ in range(int(rng.integers(1, 3))):
        bx = max_x + float(rng.uniform(4.0, 12.0))
        by = float(rng.uniform(-8.0, 6.0))
        bz = -float(rng.uniform(0.5, 1.0))
        sx, sy, sz = (float(rng.uniform(1.0, 4.0)) for _ in range(3))
        prims.append(Box((bx, by, bz), (bx + sx, by + sy, bz + sz), tex()))
    return SceneSpec(
        scene_id=scene_id or f"random_{seed}",
        image_size=image_size,
        rig=rig,
        trajectory=tuple(poses),
        primitives=tuple(prims),
        depth_scale=0.002,
        seed=seed,
    )


def analytic_plane_band(fx: float, plane_depth: float, lateral: float, width: int) -> int:
    """Expected out-of-view band width for a fronto-parallel plane.

    The closed form is the pixel disparity fx*|s|/Z, rounded half-up and
    clamped to the image width.
    """
    if not plane_depth > 0:
        raise InvalidInputError(f"plane depth must be > 0, got {plane_depth}")
    band = round_half_up(fx * abs(lateral) / plane_depth)
    return min(int(band), width)
