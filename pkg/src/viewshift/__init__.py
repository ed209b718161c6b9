"""viewshift: self-supervised inpainting pairs from virtual camera shifts.

The pipeline lifts posed RGB-D views into ego-frame point clouds, splats
them at a virtually shifted pose to find the pixels that shift would
lose, masks those pixels out of the raw image, fills the voids with an
imperfect warp from a neighboring camera, and trains a small
flow-matching model to invert the degradation.
"""

from .errors import (
    BadPoseError,
    DegenerateViewError,
    EmptySceneError,
    FormatError,
    InvalidInputError,
    MalformedManifestError,
    ManifestError,
    MissingFileError,
    TimestampOrderError,
    TrainingDivergedError,
    VerificationError,
    ViewShiftError,
)
from .geometry import (
    CameraIntrinsics,
    CameraPose,
    ColoredPointCloud,
    DepthMap,
    ImageBuffer,
    backproject_pixel,
    concat_clouds,
    depth_to_pointcloud,
    pose_apply,
    pose_compose,
    pose_inverse,
    project_point,
)
from .manifest import SceneManifest, load_manifest
from .oracle import (
    Box,
    Plane,
    SceneSpec,
    Texture,
    analytic_plane_band,
    brute_force_render,
    default_rig,
    gen_scene,
    random_scene_spec,
)
from .pipeline import (
    BuildStats,
    ConditionSample,
    PipelineConfig,
    ShiftSampler,
    build_condition_frame,
    build_dataset,
    build_shift_view,
    read_sample,
    stream_build,
    verify_dataset,
    write_sample,
)
from .seam import CameraRig, RigCamera, composite_seam, select_neighbor, warp_neighbor
from .shift_render import (
    MaskFlag,
    OcclusionMask,
    ShiftSpec,
    ZBuffer,
    apply_mask,
    compute_occlusion_mask,
    make_virtual_pose,
    render_shift_image,
)
from . import flow

__version__ = "0.1.0"

__all__ = [
    "BadPoseError", "DegenerateViewError", "EmptySceneError", "FormatError",
    "InvalidInputError", "MalformedManifestError", "ManifestError", "MissingFileError",
    "TimestampOrderError", "TrainingDivergedError", "VerificationError", "ViewShiftError",
    "CameraIntrinsics", "CameraPose", "ColoredPointCloud", "DepthMap", "ImageBuffer",
    "backproject_pixel", "concat_clouds", "depth_to_pointcloud",
    "pose_apply", "pose_compose", "pose_inverse", "project_point",
    "SceneManifest", "load_manifest",
    "Box", "Plane", "SceneSpec", "Texture", "analytic_plane_band", "brute_force_render",
    "default_rig", "gen_scene", "random_scene_spec",
    "BuildStats", "ConditionSample", "PipelineConfig", "ShiftSampler",
    "build_condition_frame", "build_dataset", "build_shift_view",
    "read_sample", "stream_build", "verify_dataset", "write_sample",
    "CameraRig", "RigCamera", "composite_seam", "select_neighbor", "warp_neighbor",
    "MaskFlag", "OcclusionMask", "ShiftSpec", "ZBuffer",
    "apply_mask", "compute_occlusion_mask", "make_virtual_pose", "render_shift_image",
    "flow",
    "__version__",
]
