"""Shared scenes and helpers for the test suite.

Expensive artifacts (rendered scenes, the trained toy model) are
session-scoped; everything they feed is deterministic, so sharing them
does not couple tests.
"""

from __future__ import annotations

import numpy as np
import pytest

import viewshift as vs
from viewshift import flow
from viewshift.geometry import CameraPose, depth_to_pointcloud, pose_compose
from viewshift.manifest import load_frame_depth, load_frame_image
from viewshift.oracle import Plane, SceneSpec, Texture, single_camera_rig
from viewshift.shift_render import make_virtual_pose


def plane_spec(fx: float = 100.0, size: int = 100, plane_depth: float = 10.0,
               period: float = 0.8, scene_id: str = "plane") -> SceneSpec:
    """Single front camera at the ego origin facing a fronto-parallel wall."""
    rig = single_camera_rig(size, size, fx=fx)
    return SceneSpec(
        scene_id=scene_id,
        image_size=(size, size),
        rig=rig,
        trajectory=(CameraPose.identity(),),
        primitives=(Plane(axis="x", offset=plane_depth, texture=Texture("checker", period=period)),),
        depth_scale=0.001,
    )


def ego_cloud(manifest, frame_index: int, camera_id: str, stride: int = 1):
    cam = manifest.rig.get(camera_id)
    image = load_frame_image(manifest, frame_index, camera_id)
    depth = load_frame_depth(manifest, frame_index, camera_id)
    return depth_to_pointcloud(image, depth, cam.intrinsics, cam.cam2ego, stride, camera_id), image, depth


def virt_cam_pose(manifest, camera_id: str, shift: vs.ShiftSpec) -> CameraPose:
    cam = manifest.rig.get(camera_id)
    return pose_compose(make_virtual_pose(CameraPose.identity(), shift), cam.cam2ego)


@pytest.fixture(scope="session")
def plane_scene(tmp_path_factory):
    """fx=100, 100x100, wall at exactly 10 m: disparity is fx*s/10 pixels."""
    out = tmp_path_factory.mktemp("plane_scene")
    return vs.gen_scene(plane_spec(), out)


@pytest.fixture(scope="session")
def surround_scene(tmp_path_factory):
    """Three-camera randomized scene used for seam and pipeline tests."""
    out = tmp_path_factory.mktemp("surround_scene")
    return vs.gen_scene(vs.random_scene_spec(11, image_size=(64, 64), n_frames=3), out)


def smooth_test_image(size: int = 32) -> vs.ImageBuffer:
    """Low-frequency RGB content that survives the factor-4 codec well."""
    yy, xx = np.mgrid[0:size, 0:size]
    px = (
        128
        + 55 * np.sin(np.pi * xx / (size - 1))[..., None] * np.array([1.0, 0.3, -0.6])
        + 45 * np.sin(np.pi * yy / (size - 1))[..., None] * np.array([-0.4, 1.0, 0.5])
    )
    return vs.ImageBuffer(px.clip(0, 255).astype(np.uint8))


def self_conditioned_sample(image: vs.ImageBuffer) -> vs.ConditionSample:
    """A degenerate training pair: condition equals the target, empty mask."""
    mask = vs.OcclusionMask(np.zeros((image.height, image.width), np.uint8))
    return vs.ConditionSample(image, image, mask, vs.ShiftSpec(), 0, "front", None, vs.PipelineConfig())


TOY_TRAIN_CONFIG = flow.TrainConfig(
    learning_rate=1.0, steps=2000, batch_size=64, seed=7, downscale_factor=4, hidden_size=512
)


@pytest.fixture(scope="session")
def toy_convergence_run():
    """The 2000-step one-sample training run shared by flow and acceptance tests."""
    image = smooth_test_image()
    sample = self_conditioned_sample(image)
    model, losses = flow.train([sample], TOY_TRAIN_CONFIG)
    return image, model, losses
