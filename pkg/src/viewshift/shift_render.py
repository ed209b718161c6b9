"""Virtual view shift: point splatting, occlusion masks, masked images.

The renderer is deterministic by contract: depth ties are broken by the
cloud's canonical point key (row-major source pixel order, then camera
id order), so any permutation of the input points produces bit-identical
images, z-buffers and masks.  ``brute_force_render`` in the oracle
module reimplements the same contract with plain per-point loops and
must agree bit-exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import InvalidInputError
from .geometry import (
    DEFAULT_Z_MIN,
    CameraIntrinsics,
    CameraPose,
    ColoredPointCloud,
    ImageBuffer,
    pose_apply,
    pose_compose,
    pose_inverse,
    project_points,
    round_half_up,
)

SHIFT_LIMIT_M = 8.0  # safety bound on |lateral| and |longitudinal|
DEFAULT_DEPTH_TOL = 0.03  # relative z-test tolerance; absorbs 16-bit depth quantization


class MaskFlag(IntEnum):
    """Per-pixel mask provenance; values double as the PGM byte encoding."""

    VISIBLE = 0
    INVALID_DEPTH = 64
    DEPTH_OCCLUDED = 128
    OUT_OF_VIEW = 255


@dataclass(frozen=True)
class ShiftSpec:
    """Virtual ego displacement: lateral (+y, left), longitudinal (+x,
    forward), vertical (+z, up) in meters, and yaw about ego +z in radians."""

    lateral: float = 0.0
    longitudinal: float = 0.0
    vertical: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        vals = (self.lateral, self.longitudinal, self.vertical, self.yaw)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidInputError(f"shift values must be finite, got {vals}")
        if abs(self.lateral) > SHIFT_LIMIT_M or abs(self.longitudinal) > SHIFT_LIMIT_M:
            raise InvalidInputError(
                f"shift ({self.lateral}, {self.longitudinal}) exceeds the {SHIFT_LIMIT_M} m safety bound"
            )

    def is_zero(self) -> bool:
        return self.lateral == self.longitudinal == self.vertical == self.yaw == 0.0


@dataclass(frozen=True)
class ZBuffer:
    """Per-pixel nearest depth and winning canonical point key.

    Empty pixels carry depth +inf and key -1.
    """

    depth: np.ndarray  # (H, W) float64
    point_key: np.ndarray  # (H, W) int64

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=np.float64)
        k = np.asarray(self.point_key, dtype=np.int64)
        if d.ndim != 2 or k.shape != d.shape:
            raise InvalidInputError("z-buffer arrays must be matching 2-d arrays")
        filled = np.isfinite(d)
        if filled.any() and not np.all(d[filled] > 0):
            raise InvalidInputError("finite z-buffer depths must be > 0")
        if not np.all((k >= 0) == filled):
            raise InvalidInputError("z-buffer keys must be -1 exactly on empty pixels")
        object.__setattr__(self, "depth", d)
        object.__setattr__(self, "point_key", k)

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]


@dataclass(frozen=True)
class OcclusionMask:
    """Per-source-pixel visibility flags; the binary mask M is ``flags != VISIBLE``."""

    flags: np.ndarray  # (H, W) uint8 of MaskFlag values

    def __post_init__(self):
        f = np.asarray(self.flags, dtype=np.uint8)
        if f.ndim != 2:
            raise InvalidInputError("mask flags must be a 2-d array")
        allowed = np.array([int(m) for m in MaskFlag], dtype=np.uint8)
        if not np.isin(f, allowed).all():
            raise InvalidInputError("mask contains bytes outside the MaskFlag encoding")
        object.__setattr__(self, "flags", f)

    @property
    def width(self) -> int:
        return self.flags.shape[1]

    @property
    def height(self) -> int:
        return self.flags.shape[0]

    @property
    def binary(self) -> np.ndarray:
        """True where the pixel is masked (occluded, lost, or without depth)."""
        return self.flags != int(MaskFlag.VISIBLE)

    @property
    def masked_fraction(self) -> float:
        return float(np.count_nonzero(self.binary)) / self.flags.size


def shift_to_pose(shift: ShiftSpec) -> CameraPose:
    """The shifted ego frame expressed in the current ego frame."""
    return CameraPose.from_yaw(shift.yaw, (shift.longitudinal, shift.lateral, shift.vertical))


def make_virtual_pose(ego_pose: CameraPose, shift: ShiftSpec, limit: float = SHIFT_LIMIT_M) -> CameraPose:
    """Compose the ego pose with a shift expressed in the ego frame."""
    if abs(shift.lateral) > limit or abs(shift.longitudinal) > limit:
        raise InvalidInputError(f"shift exceeds the {limit} m bound")
    return pose_compose(ego_pose, shift_to_pose(shift))


def _project_cloud(cloud, virt_pose, intrinsics, z_min):
    """Per-point projection into the virtual camera.

    Returns (depth, in_front, center_u, center_v); centers are -1 for
    points behind the near plane.  Render and mask both go through this
    so their candidate depths agree bitwise.
    """
    inv = pose_inverse(virt_pose)
    pts = pose_apply(inv, cloud.positions)
    u, v, z, front = project_points(pts, intrinsics, z_min)
    cu = np.full(len(cloud), -1, dtype=np.int64)
    cv = np.full(len(cloud), -1, dtype=np.int64)
    rows = np.nonzero(front)[0]
    cu[rows] = round_half_up(u[rows])
    cv[rows] = round_half_up(v[rows])
    return z, front, cu, cv


def render_shift_image(
    cloud: ColoredPointCloud,
    virt_pose: CameraPose,
    intrinsics: CameraIntrinsics,
    splat_radius: int = 0,
    z_min: float = DEFAULT_Z_MIN,
) -> tuple[ImageBuffer, ZBuffer]:
    """Splat the cloud onto the virtual image plane with a z-buffer.

    Each point lands on a (2r+1)-pixel square footprint centered at its
    round-half-up projection; the smallest depth wins per pixel, ties go
    to the lowest canonical point key.  Unhit pixels stay black, which
    preserves the splatting voids downstream modules depend on.
    """
    if splat_radius < 0:
        raise InvalidInputError(f"splat radius must be >= 0, got {splat_radius}")
    h, w = intrinsics.height, intrinsics.width
    img = np.zeros((h, w, 3), dtype=np.uint8)
    zdepth = np.full((h, w), np.inf, dtype=np.float64)
    zkey = np.full((h, w), -1, dtype=np.int64)
    if len(cloud) == 0:
        return ImageBuffer(img), ZBuffer(zdepth, zkey)
    z, front, cu, cv = _project_cloud(cloud, virt_pose, intrinsics, z_min)
    keys = cloud.canonical_keys()
    rows = np.nonzero(front)[0]
    cand_rows, cand_px, cand_py = [], [], []
    for dv in range(-splat_radius, splat_radius + 1):
        for du in range(-splat_radius, splat_radius + 1):
            px = cu[rows] + du
            py = cv[rows] + dv
            ok = (px >= 0) & (px < w) & (py >= 0) & (py < h)
            cand_rows.append(rows[ok])
            cand_px.append(px[ok])
            cand_py.append(py[ok])
    rows_c = np.concatenate(cand_rows) if cand_rows else np.zeros(0, np.int64)
    px = np.concatenate(cand_px) if cand_px else np.zeros(0, np.int64)
    py = np.concatenate(cand_py) if cand_py else np.zeros(0, np.int64)
    if rows_c.size:
        pix = py * w + px
        order = np.lexsort((keys[rows_c], z[rows_c], pix))
        pix_sorted = pix[order]
        is_first = np.ones(pix_sorted.size, dtype=bool)
        is_first[1:] = pix_sorted[1:] != pix_sorted[:-1]
        winners = order[is_first]
        wrow = rows_c[winners]
        wy, wx = py[winners], px[winners]
        zdepth[wy, wx] = z[wrow]
        zkey[wy, wx] = keys[wrow]
        img[wy, wx] = cloud.colors[wrow]
    return ImageBuffer(img), ZBuffer(zdepth, zkey)


def compute_occlusion_mask(
    cloud: ColoredPointCloud,
    virt_pose: CameraPose,
    intrinsics: CameraIntrinsics,
    zbuffer: ZBuffer,
    depth_tol: float = DEFAULT_DEPTH_TOL,
    z_min: float = DEFAULT_Z_MIN,
    target_camera: str | None = None,
) -> OcclusionMask:
    """Classify every source pixel of the target camera against the z-buffer.

    A pixel is out_of_view when its point projects behind the near plane
    or its rounded projection leaves the image; depth_occluded when its
    depth exceeds the z-buffer entry at the projection by more than
    ``depth_tol`` (relative); visible otherwise.  Source pixels with no
    point (invalid depth, or off the stride grid) stay invalid_depth.
    """
    h, w = intrinsics.height, intrinsics.width
    if (zbuffer.width, zbuffer.height) != (w, h):
        raise InvalidInputError(
            f"z-buffer {zbuffer.width}x{zbuffer.height} does not match intrinsics {w}x{h}"
        )
    flags = np.full((h, w), int(MaskFlag.INVALID_DEPTH), dtype=np.uint8)
    if len(cloud) == 0:
        return OcclusionMask(flags)
    if target_camera is None:
        if len(cloud.camera_ids) != 1:
            raise InvalidInputError("target_camera is required for a multi-camera cloud")
        cam_pos = 0
    else:
        if target_camera not in cloud.camera_ids:
            return OcclusionMask(flags)
        cam_pos = cloud.camera_ids.index(target_camera)
    if cloud.source_sizes[cam_pos] != (w, h):
        raise InvalidInputError(
            f"mask grid {w}x{h} does not match the target camera's source size {cloud.source_sizes[cam_pos]}"
        )
    z, front, cu, cv = _project_cloud(cloud, virt_pose, intrinsics, z_min)
    sel = np.nonzero(cloud.camera_index == cam_pos)[0]
    su = cloud.source_pixels[sel, 0]
    sv = cloud.source_pixels[sel, 1]
    in_bounds = front[sel] & (cu[sel] >= 0) & (cu[sel] < w) & (cv[sel] >= 0) & (cv[sel] < h)
    point_flags = np.full(sel.shape[0], int(MaskFlag.OUT_OF_VIEW), dtype=np.uint8)
    vi = np.nonzero(in_bounds)[0]
    if vi.size:
        d = z[sel[vi]]
        zb = zbuffer.depth[cv[sel[vi]], cu[sel[vi]]]
        occluded = (d - zb) / zb > depth_tol
        point_flags[vi] = np.where(occluded, np.uint8(MaskFlag.DEPTH_OCCLUDED), np.uint8(MaskFlag.VISIBLE))
    flags[sv, su] = point_flags
    return OcclusionMask(flags)


def apply_mask(raw: ImageBuffer, mask: OcclusionMask) -> ImageBuffer:
    """Black out masked pixels: raw ⊙ (1 - M), bit-exact."""
    if (raw.width, raw.height) != (mask.width, mask.height):
        raise InvalidInputError(
            f"image {raw.width}x{raw.height} does not match mask {mask.width}x{mask.height}"
        )
    out = np.where(mask.binary[:, :, None], np.uint8(0), raw.pixels)
    return ImageBuffer(out)
