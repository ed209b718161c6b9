"""Camera models, rigid transforms, and depth back-projection.

Conventions used throughout the package:

* camera frame: +x right, +y down, +z forward (OpenCV style);
* ego frame: +x forward, +y left, +z up (surround-rig style);
* pixel (u, v) has u along width and v along height, origin top-left,
  integer coordinates at pixel centers;
* a ``CameraPose`` maps points from its own frame into its parent frame
  (``cam2ego`` maps camera coordinates to ego coordinates).

All float math is float64.  Rotations are applied with explicit
component arithmetic (no BLAS) so that scalar and vectorized code paths
produce bit-identical results; the brute-force render oracle relies on
this.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

QUAT_NORM_TOL = 1e-6
DEFAULT_Z_MIN = 0.1  # near-plane cutoff in meters for projection


def round_half_up(x):
    """Round to nearest integer, halves away from the floor side (0.5 -> 1).

    Works on scalars and arrays; returns int64.
    """
    r = np.floor(np.asarray(x, dtype=np.float64) + 0.5).astype(np.int64)
    return r if r.ndim else int(r)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics: focal lengths, principal point, image size (pixels)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInputError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise InvalidInputError(
                f"principal point ({self.cx}, {self.cy}) outside image {self.width}x{self.height}"
            )


def _quat_normalize(q: np.ndarray) -> np.ndarray:
    n = math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    return q / n


@dataclass(frozen=True)
class CameraPose:
    """Rigid transform: rotation (unit quaternion, w-first) then translation.

    Maps points from this pose's frame into its parent frame:
    ``p_parent = R(q) @ p + t``.
    """

    translation: np.ndarray  # (3,) float64, meters
    rotation: np.ndarray  # (4,) float64, unit quaternion (w, x, y, z)

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        q = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        if not np.all(np.isfinite(t)) or not np.all(np.isfinite(q)):
            raise InvalidInputError("pose contains non-finite values")
        norm = math.sqrt(float(q @ q))
        if abs(norm - 1.0) > QUAT_NORM_TOL:
            raise InvalidInputError(f"quaternion norm {norm} deviates from 1 by more than {QUAT_NORM_TOL}")
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", _quat_normalize(q))

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_yaw(cls, yaw: float, translation=(0.0, 0.0, 0.0)) -> "CameraPose":
        """Pose rotated by ``yaw`` radians about the parent frame's +z axis."""
        h = 0.5 * yaw
        return cls(np.asarray(translation, dtype=np.float64), np.array([math.cos(h), 0.0, 0.0, math.sin(h)]))

    def rotation_matrix(self) -> np.ndarray:
        w, x, y, z = self.rotation
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ],
            dtype=np.float64,
        )


def _quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        dtype=np.float64,
    )


def _rotate(rot: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Apply a 3x3 rotation with fixed left-to-right accumulation order."""
    x = points[..., 0]
    y = points[..., 1]
    z = points[..., 2]
    out = np.empty(points.shape, dtype=np.float64)
    out[..., 0] = rot[0, 0] * x + rot[0, 1] * y + rot[0, 2] * z
    out[..., 1] = rot[1, 0] * x + rot[1, 1] * y + rot[1, 2] * z
    out[..., 2] = rot[2, 0] * x + rot[2, 1] * y + rot[2, 2] * z
    return out


def pose_apply(pose: CameraPose, points) -> np.ndarray:
    """Map point(s) from the pose's frame into its parent frame.

    Accepts a (3,) vector or an (N, 3) array; returns the same shape.
    """
    p = np.asarray(points, dtype=np.float64)
    out = _rotate(pose.rotation_matrix(), p)
    out[..., 0] += pose.translation[0]
    out[..., 1] += pose.translation[1]
    out[..., 2] += pose.translation[2]
    return out


def pose_compose(a: CameraPose, b: CameraPose) -> CameraPose:
    """Composition: ``pose_apply(pose_compose(a, b), p) == pose_apply(a, pose_apply(b, p))``.

    The quaternion is renormalized after every composition to prevent drift.
    """
    q = _quat_normalize(_quat_multiply(a.rotation, b.rotation))
    t = pose_apply(a, b.translation)
    return CameraPose(t, q)


def pose_inverse(a: CameraPose) -> CameraPose:
    q = a.rotation
    conj = np.array([q[0], -q[1], -q[2], -q[3]], dtype=np.float64)
    inv = CameraPose(np.zeros(3), conj)
    t = -_rotate(inv.rotation_matrix(), a.translation)
    return CameraPose(t, conj)


@dataclass(frozen=True)
class ImageBuffer:
    """8-bit RGB image, row-major, top-left origin."""

    pixels: np.ndarray  # (H, W, 3) uint8

    def __post_init__(self):
        p = np.asarray(self.pixels)
        if p.ndim != 3 or p.shape[2] != 3 or p.dtype != np.uint8:
            raise InvalidInputError(f"image must be (H, W, 3) uint8, got shape {p.shape} dtype {p.dtype}")
        object.__setattr__(self, "pixels", p)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def black(cls, width: int, height: int) -> "ImageBuffer":
        return cls(np.zeros((height, width, 3), dtype=np.uint8))


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel depth in meters along camera +z; invalid pixels carry value 0."""

    values: np.ndarray  # (H, W) float64, meters
    validity: np.ndarray  # (H, W) bool

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        m = np.asarray(self.validity, dtype=bool)
        if v.ndim != 2 or m.shape != v.shape:
            raise InvalidInputError(f"depth values {v.shape} and validity {m.shape} must be matching 2-d arrays")
        good = v[m]
        if good.size and (not np.all(np.isfinite(good)) or not np.all(good > 0)):
            raise InvalidInputError("valid depth values must be finite and > 0")
        if not np.all(v[~m] == 0.0):
            raise InvalidInputError("invalid depth pixels must carry value 0")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "validity", m)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @classmethod
    def from_values(cls, values: np.ndarray) -> "DepthMap":
        """Treat zeros as invalid, everything else as valid."""
        v = np.asarray(values, dtype=np.float64)
        return cls(v, v > 0)


@dataclass(frozen=True)
class ColoredPointCloud:
    """Points with colors and their source pixel provenance.

    ``camera_ids`` lists the distinct source cameras; ``camera_index``
    maps each point into that tuple.  ``source_sizes`` gives each
    camera's (width, height) so source-pixel invariants and canonical
    tie-break keys can be checked without the original images.
    """

    positions: np.ndarray  # (N, 3) float64, meters
    colors: np.ndarray  # (N, 3) uint8
    source_pixels: np.ndarray  # (N, 2) int64, (u, v)
    camera_ids: tuple[str, ...]
    camera_index: np.ndarray  # (N,) int64 into camera_ids
    source_sizes: tuple[tuple[int, int], ...] = field(default=())  # (width, height) per camera

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        col = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
        pix = np.asarray(self.source_pixels, dtype=np.int64).reshape(-1, 2)
        cam = np.asarray(self.camera_index, dtype=np.int64).reshape(-1)
        n = pos.shape[0]
        if not (col.shape[0] == pix.shape[0] == cam.shape[0] == n):
            raise InvalidInputError("point cloud arrays disagree on point count")
        if len(set(self.camera_ids)) != len(self.camera_ids):
            raise InvalidInputError("duplicate camera ids in point cloud")
        if len(self.source_sizes) != len(self.camera_ids):
            raise InvalidInputError("source_sizes must parallel camera_ids")
        if n:
            if cam.min() < 0 or cam.max() >= len(self.camera_ids):
                raise InvalidInputError("camera_index out of range")
            w = np.array([s[0] for s in self.source_sizes], dtype=np.int64)[cam]
            h = np.array([s[1] for s in self.source_sizes], dtype=np.int64)[cam]
            u, v = pix[:, 0], pix[:, 1]
            if np.any(u < 0) or np.any(v < 0) or np.any(u >= w) or np.any(v >= h):
                raise InvalidInputError("source pixel outside source image bounds")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "colors", col)
        object.__setattr__(self, "source_pixels", pix)
        object.__setattr__(self, "camera_index", cam)

    def __len__(self) -> int:
        return self.positions.shape[0]

    @classmethod
    def empty(cls) -> "ColoredPointCloud":
        return cls(
            np.zeros((0, 3)), np.zeros((0, 3), np.uint8), np.zeros((0, 2), np.int64), (), np.zeros(0, np.int64), ()
        )

    def canonical_keys(self) -> np.ndarray:
        """Order-independent tie-break key per point.

        Key = row-major source pixel index * n_cameras + rank of the
        camera id in lexicographic order, so rendering the same point
        set in any array permutation resolves depth ties identically.
        """
        if not len(self):
            return np.zeros(0, dtype=np.int64)
        ranks_by_pos = np.argsort(np.argsort(np.asarray(self.camera_ids)))
        widths = np.array([s[0] for s in self.source_sizes], dtype=np.int64)
        pix_rm = self.source_pixels[:, 1] * widths[self.camera_index] + self.source_pixels[:, 0]
        return pix_rm * len(self.camera_ids) + ranks_by_pos[self.camera_index]


def concat_clouds(clouds: list[ColoredPointCloud]) -> ColoredPointCloud:
    """Merge clouds from distinct cameras; argument order is preserved."""
    clouds = [c for c in clouds if len(c.camera_ids)]
    if not clouds:
        return ColoredPointCloud.empty()
    ids: list[str] = []
    sizes: list[tuple[int, int]] = []
    idx_parts = []
    for c in clouds:
        offset = len(ids)
        for cid in c.camera_ids:
            if cid in ids:
                raise InvalidInputError(f"camera id {cid!r} appears in more than one cloud")
        ids.extend(c.camera_ids)
        sizes.extend(c.source_sizes)
        idx_parts.append(c.camera_index + offset)
    return ColoredPointCloud(
        np.concatenate([c.positions for c in clouds]),
        np.concatenate([c.colors for c in clouds]),
        np.concatenate([c.source_pixels for c in clouds]),
        tuple(ids),
        np.concatenate(idx_parts),
        tuple(sizes),
    )


def backproject_pixel(pixel, depth: float, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Lift a pixel at the given depth into the camera frame.

    Returns (depth*(u-cx)/fx, depth*(v-cy)/fy, depth).
    """
    u, v = float(pixel[0]), float(pixel[1])
    if not (math.isfinite(depth) and depth > 0):
        raise InvalidInputError(f"depth must be finite and positive, got {depth}")
    if not (0 <= u < intrinsics.width and 0 <= v < intrinsics.height):
        raise InvalidInputError(f"pixel ({u}, {v}) outside image {intrinsics.width}x{intrinsics.height}")
    return np.array(
        [
            (depth * (u - intrinsics.cx)) / intrinsics.fx,
            (depth * (v - intrinsics.cy)) / intrinsics.fy,
            depth,
        ],
        dtype=np.float64,
    )


def project_point(point, intrinsics: CameraIntrinsics, z_min: float = DEFAULT_Z_MIN):
    """Project a camera-frame point to a real-valued pixel and depth.

    Returns (u, v, depth), or None when the point lies at or behind the
    near plane (a normal outcome, not an error).
    """
    p = np.asarray(point, dtype=np.float64)
    z = float(p[2])
    if not z > z_min:
        return None
    u = (intrinsics.fx * float(p[0])) / z + intrinsics.cx
    v = (intrinsics.fy * float(p[1])) / z + intrinsics.cy
    return (u, v, z)


def project_points(points: np.ndarray, intrinsics: CameraIntrinsics, z_min: float = DEFAULT_Z_MIN):
    """Vectorized projection.

    Returns (u, v, depth, in_front) arrays; u/v are only meaningful where
    ``in_front``.  Uses the same expressions as :func:`project_point` so
    results agree bitwise with the scalar path.
    """
    p = np.asarray(points, dtype=np.float64)
    z = p[:, 2]
    in_front = z > z_min
    with np.errstate(divide="ignore", invalid="ignore"):
        u = (intrinsics.fx * p[:, 0]) / z + intrinsics.cx
        v = (intrinsics.fy * p[:, 1]) / z + intrinsics.cy
    return u, v, z, in_front


def depth_to_pointcloud(
    image: ImageBuffer,
    depth: DepthMap,
    intrinsics: CameraIntrinsics,
    cam2ego: CameraPose,
    stride: int = 1,
    camera_id: str = "cam0",
) -> ColoredPointCloud:
    """Back-project every valid depth pixel on the stride grid into the ego frame.

    Points are emitted in row-major pixel order.
    """
    if stride < 1:
        raise InvalidInputError(f"stride must be >= 1, got {stride}")
    if (image.width, image.height) != (intrinsics.width, intrinsics.height):
        raise InvalidInputError(
            f"image {image.width}x{image.height} does not match intrinsics {intrinsics.width}x{intrinsics.height}"
        )
    if (depth.width, depth.height) != (intrinsics.width, intrinsics.height):
        raise InvalidInputError(
            f"depth {depth.width}x{depth.height} does not match intrinsics {intrinsics.width}x{intrinsics.height}"
        )
    vs, us = np.meshgrid(
        np.arange(0, intrinsics.height, stride, dtype=np.int64),
        np.arange(0, intrinsics.width, stride, dtype=np.int64),
        indexing="ij",
    )
    us = us.ravel()
    vs = vs.ravel()
    valid = depth.validity[vs, us]
    us, vs = us[valid], vs[valid]
    d = depth.values[vs, us]
    cam_pts = np.empty((us.shape[0], 3), dtype=np.float64)
    cam_pts[:, 0] = (d * (us - intrinsics.cx)) / intrinsics.fx
    cam_pts[:, 1] = (d * (vs - intrinsics.cy)) / intrinsics.fy
    cam_pts[:, 2] = d
    return ColoredPointCloud(
        pose_apply(cam2ego, cam_pts),
        image.pixels[vs, us],
        np.stack([us, vs], axis=1),
        (camera_id,),
        np.zeros(us.shape[0], dtype=np.int64),
        ((intrinsics.width, intrinsics.height),),
    )
