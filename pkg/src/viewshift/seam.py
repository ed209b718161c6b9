"""Seam synthesis: fill masked voids with context warped from a neighbor camera.

The composite is a pure pixel selection — no blending, feathering, or
exposure compensation.  Photometric and geometric seams between the
target and neighbor views are preserved verbatim; they are the training
signal, not a defect.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .geometry import (
    DEFAULT_Z_MIN,
    CameraIntrinsics,
    CameraPose,
    DepthMap,
    ImageBuffer,
    depth_to_pointcloud,
    pose_apply,
    pose_compose,
)
from .shift_render import OcclusionMask, ShiftSpec, render_shift_image


@dataclass(frozen=True)
class RigCamera:
    camera_id: str
    intrinsics: CameraIntrinsics
    cam2ego: CameraPose


@dataclass(frozen=True)
class CameraRig:
    """Ordered multi-camera rig; optical-axis yaws derive from cam2ego."""

    cameras: tuple[RigCamera, ...]

    def __post_init__(self):
        if not self.cameras:
            raise InvalidInputError("a rig needs at least one camera")
        ids = [c.camera_id for c in self.cameras]
        if len(set(ids)) != len(ids):
            raise InvalidInputError(f"duplicate camera ids in rig: {ids}")
        object.__setattr__(self, "cameras", tuple(self.cameras))

    def __len__(self) -> int:
        return len(self.cameras)

    def camera_ids(self) -> list[str]:
        return [c.camera_id for c in self.cameras]

    def get(self, camera_id: str) -> RigCamera:
        for c in self.cameras:
            if c.camera_id == camera_id:
                return c
        raise InvalidInputError(f"unknown camera id {camera_id!r}")

    def yaw_of(self, camera_id: str) -> float:
        """Yaw of the camera's optical axis (+z) in the ego frame, radians."""
        cam = self.get(camera_id)
        axis = pose_apply(cam.cam2ego, np.array([0.0, 0.0, 1.0])) - cam.cam2ego.translation
        return math.atan2(axis[1], axis[0])


def _wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    return math.atan2(math.sin(a), math.cos(a))


def select_neighbor(rig: CameraRig, target_camera: str, shift: ShiftSpec) -> str | None:
    """Pick the neighbor whose yaw is nearest the target's on the shift side.

    Candidates on the side of the lateral shift sign are preferred; if
    that side is empty (or lateral is 0) all other cameras compete.
    Ties in |yaw difference| break toward positive yaw, then rig order.
    Returns None for a single-camera rig.
    """
    target_yaw = rig.yaw_of(target_camera)
    if len(rig) == 1:
        return None
    diffs = [
        (cam.camera_id, _wrap_angle(rig.yaw_of(cam.camera_id) - target_yaw))
        for cam in rig.cameras
        if cam.camera_id != target_camera
    ]
    if shift.lateral > 0:
        side = [d for d in diffs if d[1] > 0]
    elif shift.lateral < 0:
        side = [d for d in diffs if d[1] < 0]
    else:
        side = []
    candidates = side if side else diffs
    best = min(candidates, key=lambda d: (abs(d[1]), d[1] <= 0))
    return best[0]


def warp_neighbor(
    nb_image: ImageBuffer,
    nb_depth: DepthMap,
    nb_intrinsics: CameraIntrinsics,
    nb_cam2ego: CameraPose,
    ego_pose: CameraPose,
    virt_pose: CameraPose,
    target_intrinsics: CameraIntrinsics,
    splat_radius: int = 0,
    z_min: float = DEFAULT_Z_MIN,
    stride: int = 1,
    camera_id: str = "neighbor",
) -> ImageBuffer:
    """Render the neighbor's point cloud from the virtual camera pose.

    The cloud is lifted into the frame ``ego_pose`` lives in (pass the
    identity to work in the current ego frame), then splatted at
    ``virt_pose`` with the target camera's intrinsics.  Holes stay black.
    """
    cloud = depth_to_pointcloud(
        nb_image,
        nb_depth,
        nb_intrinsics,
        pose_compose(ego_pose, nb_cam2ego),
        stride=stride,
        camera_id=camera_id,
    )
    image, _ = render_shift_image(cloud, virt_pose, target_intrinsics, splat_radius=splat_radius, z_min=z_min)
    return image


def composite_seam(masked: ImageBuffer, warp: ImageBuffer, mask: OcclusionMask) -> ImageBuffer:
    """Pixelwise selection: visible pixels from `masked`, masked pixels from `warp`."""
    if not ((masked.width, masked.height) == (warp.width, warp.height) == (mask.width, mask.height)):
        raise InvalidInputError(
            f"dimension mismatch: masked {masked.width}x{masked.height}, "
            f"warp {warp.width}x{warp.height}, mask {mask.width}x{mask.height}"
        )
    out = np.where(mask.binary[:, :, None], warp.pixels, masked.pixels)
    return ImageBuffer(out)
