"""Scene manifests: the on-disk description of a posed multi-camera sequence.

A manifest is a single JSON document (``schema_version: 1``)::

    {
      "schema_version": 1,
      "scene_id": "plane_demo",
      "depth_scale": 0.001,
      "rig": [
        {"camera_id": "front",
         "intrinsics": {"fx": 64.0, "fy": 64.0, "cx": 32.0, "cy": 32.0,
                         "width": 64, "height": 64},
         "cam2ego": {"translation": [0.2, 0.0, 0.0],
                      "rotation_wxyz": [0.5, -0.5, 0.5, -0.5]}}
      ],
      "frames": [
        {"timestamp": 0.0,
         "ego2world": {"translation": [0, 0, 0], "rotation_wxyz": [1, 0, 0, 0]},
         "images": {"front": "frames/0000_front.ppm"},
         "depths": {"front": "frames/0000_front_depth.pgm"}}
      ]
    }

Image paths are PPM (P6, 8-bit RGB); depth paths are PGM (P5, 16-bit
big-endian), meters = stored value * depth_scale, 0 = invalid.  Paths
are relative to the manifest's directory.  Validation is eager: every
referenced file must exist, timestamps must strictly increase, and all
poses must carry unit quaternions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import pnm
from .errors import (
    BadPoseError,
    EmptySceneError,
    InvalidInputError,
    MalformedManifestError,
    MissingFileError,
    TimestampOrderError,
)
from .geometry import CameraIntrinsics, CameraPose, DepthMap, ImageBuffer
from .seam import CameraRig, RigCamera

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class FrameRecord:
    timestamp: float
    ego2world: CameraPose
    image_paths: dict[str, Path]  # camera id -> absolute path
    depth_paths: dict[str, Path]


@dataclass(frozen=True)
class SceneManifest:
    scene_id: str
    rig: CameraRig
    frames: tuple[FrameRecord, ...]
    depth_scale: float
    root: Path
    source_path: Path

    def __len__(self) -> int:
        return len(self.frames)


def pose_to_json(pose: CameraPose) -> dict:
    return {"translation": [float(x) for x in pose.translation],
            "rotation_wxyz": [float(x) for x in pose.rotation]}


def pose_from_json(obj: dict, where: str) -> CameraPose:
    try:
        t = obj["translation"]
        q = obj["rotation_wxyz"]
    except (KeyError, TypeError) as exc:
        raise MalformedManifestError(f"{where}: pose needs 'translation' and 'rotation_wxyz'") from exc
    try:
        return CameraPose(np.asarray(t, dtype=np.float64), np.asarray(q, dtype=np.float64))
    except (InvalidInputError, ValueError) as exc:
        raise BadPoseError(f"{where}: {exc}") from exc


def intrinsics_to_json(k: CameraIntrinsics) -> dict:
    return {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy, "width": k.width, "height": k.height}


def intrinsics_from_json(obj: dict, where: str) -> CameraIntrinsics:
    try:
        return CameraIntrinsics(
            fx=float(obj["fx"]), fy=float(obj["fy"]), cx=float(obj["cx"]), cy=float(obj["cy"]),
            width=int(obj["width"]), height=int(obj["height"]),
        )
    except (KeyError, TypeError) as exc:
        raise MalformedManifestError(f"{where}: bad intrinsics object") from exc
    except InvalidInputError as exc:
        raise MalformedManifestError(f"{where}: {exc}") from exc


def load_manifest(path: str | Path) -> SceneManifest:
    """Parse and fully validate a manifest; all invariants are checked here."""
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise MalformedManifestError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise MalformedManifestError(f"{path}: top level must be an object")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise MalformedManifestError(
            f"{path}: schema_version {doc.get('schema_version')!r} unsupported (expected {SCHEMA_VERSION})"
        )
    try:
        depth_scale = float(doc["depth_scale"])
        rig_objs = doc["rig"]
        frame_objs = doc["frames"]
    except (KeyError, TypeError) as exc:
        raise MalformedManifestError(f"{path}: missing field ({exc})") from exc
    if not depth_scale > 0:
        raise MalformedManifestError(f"{path}: depth_scale must be > 0, got {depth_scale}")
    scene_id = str(doc.get("scene_id", "scene"))

    cameras = []
    for i, obj in enumerate(rig_objs):
        where = f"{path} rig[{i}]"
        try:
            cam_id = str(obj["camera_id"])
        except (KeyError, TypeError) as exc:
            raise MalformedManifestError(f"{where}: missing camera_id") from exc
        cameras.append(
            RigCamera(cam_id, intrinsics_from_json(obj.get("intrinsics", {}), where),
                      pose_from_json(obj.get("cam2ego", {}), f"{where} ({cam_id})"))
        )
    try:
        rig = CameraRig(tuple(cameras))
    except InvalidInputError as exc:
        raise MalformedManifestError(f"{path}: {exc}") from exc

    if not frame_objs:
        raise EmptySceneError(f"{path}: manifest has no frames")
    root = path.parent
    frames: list[FrameRecord] = []
    prev_ts = None
    for i, obj in enumerate(frame_objs):
        where = f"{path} frame[{i}]"
        try:
            ts = float(obj["timestamp"])
            ego2world = pose_from_json(obj["ego2world"], where)
            images = obj["images"]
            depths = obj["depths"]
        except (KeyError, TypeError) as exc:
            raise MalformedManifestError(f"{where}: missing field ({exc})") from exc
        if prev_ts is not None and not ts > prev_ts:
            raise TimestampOrderError(
                f"{where}: timestamp {ts} not greater than previous {prev_ts}"
            )
        prev_ts = ts
        image_paths: dict[str, Path] = {}
        depth_paths: dict[str, Path] = {}
        for cam in rig.cameras:
            cid = cam.camera_id
            if cid not in images or cid not in depths:
                raise MalformedManifestError(f"{where}: no image/depth entry for camera {cid!r}")
            img_path = root / images[cid]
            dep_path = root / depths[cid]
            if not img_path.is_file():
                raise MissingFileError(f"{where} camera {cid!r}: missing image {img_path}")
            if not dep_path.is_file():
                raise MissingFileError(f"{where} camera {cid!r}: missing depth {dep_path}")
            image_paths[cid] = img_path
            depth_paths[cid] = dep_path
        frames.append(FrameRecord(ts, ego2world, image_paths, depth_paths))
    return SceneManifest(scene_id, rig, tuple(frames), depth_scale, root, path.resolve())


def save_manifest_document(doc: dict, path: str | Path) -> None:
    """Write a manifest JSON document deterministically."""
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_frame_image(manifest: SceneManifest, frame_index: int, camera_id: str) -> ImageBuffer:
    return ImageBuffer(pnm.read_ppm(manifest.frames[frame_index].image_paths[camera_id]))


def load_frame_depth(manifest: SceneManifest, frame_index: int, camera_id: str) -> DepthMap:
    stored = pnm.read_pgm16(manifest.frames[frame_index].depth_paths[camera_id])
    values = stored.astype(np.float64) * manifest.depth_scale
    return DepthMap(values, stored > 0)
