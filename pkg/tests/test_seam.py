"""Neighbor selection, warping, and the no-blending composite."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

import viewshift as vs
from viewshift.errors import InvalidInputError
from viewshift.geometry import CameraPose, DepthMap, ImageBuffer, depth_to_pointcloud, pose_compose
from viewshift.manifest import load_frame_depth, load_frame_image
from viewshift.oracle import brute_force_render, camera_pose, default_rig, single_camera_rig
from viewshift.seam import CameraRig, RigCamera, composite_seam, select_neighbor, warp_neighbor
from viewshift.shift_render import OcclusionMask, ShiftSpec, apply_mask

from conftest import ego_cloud, virt_cam_pose


def _surround_rig_6() -> CameraRig:
    """Six cameras at 60-degree spacing, like a full surround rig."""
    k = vs.CameraIntrinsics(fx=64.0, fy=64.0, cx=32.0, cy=32.0, width=64, height=64)
    names = ["front", "front_left", "back_left", "back", "back_right", "front_right"]
    yaws = [0.0, math.pi / 3, 2 * math.pi / 3, math.pi, -2 * math.pi / 3, -math.pi / 3]
    return CameraRig(tuple(RigCamera(n, k, camera_pose(y)) for n, y in zip(names, yaws)))


class TestSelectNeighbor:
    def test_front_with_left_shift_picks_front_left(self):
        rig = _surround_rig_6()
        assert select_neighbor(rig, "front", ShiftSpec(lateral=1.0)) == "front_left"

    def test_front_with_right_shift_picks_front_right(self):
        rig = _surround_rig_6()
        assert select_neighbor(rig, "front", ShiftSpec(lateral=-1.0)) == "front_right"

    def test_wraparound_at_the_back(self):
        rig = _surround_rig_6()
        assert select_neighbor(rig, "back", ShiftSpec(lateral=1.0)) == "back_right"
        assert select_neighbor(rig, "back", ShiftSpec(lateral=-1.0)) == "back_left"

    def test_single_camera_rig_has_no_neighbor(self):
        rig = single_camera_rig(16, 16)
        assert select_neighbor(rig, "front", ShiftSpec(lateral=1.0)) is None

    def test_zero_lateral_breaks_tie_toward_positive_yaw(self):
        # front camera between symmetric +-30 degree neighbors
        rig = default_rig(16, 16)
        assert select_neighbor(rig, "front", ShiftSpec(longitudinal=1.0)) == "front_left"

    def test_falls_back_when_shift_side_is_empty(self):
        k = vs.CameraIntrinsics(fx=16.0, fy=16.0, cx=8.0, cy=8.0, width=16, height=16)
        rig = CameraRig((
            RigCamera("a", k, camera_pose(0.0)),
            RigCamera("b", k, camera_pose(math.pi / 6)),
        ))
        # target b, right shift: nothing on the right side, fall back to a
        assert select_neighbor(rig, "b", ShiftSpec(lateral=1.0)) == "a"

    def test_unknown_camera_rejected(self):
        with pytest.raises(InvalidInputError):
            select_neighbor(default_rig(16, 16), "nope", ShiftSpec())


class TestWarpNeighbor:
    def test_degenerate_self_warp_reproduces_raw(self, plane_scene):
        cam = plane_scene.rig.get("front")
        image = load_frame_image(plane_scene, 0, "front")
        depth = load_frame_depth(plane_scene, 0, "front")
        virt = virt_cam_pose(plane_scene, "front", ShiftSpec())
        warp = warp_neighbor(
            image, depth, cam.intrinsics, cam.cam2ego,
            CameraPose.identity(), virt, cam.intrinsics, camera_id="front",
        )
        valid = depth.validity
        np.testing.assert_array_equal(warp.pixels[valid], image.pixels[valid])

    def test_matches_brute_force_across_30_degree_yaw(self, surround_scene):
        """I_warp == brute-force render of the neighbor cloud at the virtual pose."""
        cam = surround_scene.rig.get("front")
        nb = surround_scene.rig.get("front_left")
        nb_image = load_frame_image(surround_scene, 0, "front_left")
        nb_depth = load_frame_depth(surround_scene, 0, "front_left")
        virt = virt_cam_pose(surround_scene, "front", ShiftSpec(lateral=1.0))
        warp = warp_neighbor(
            nb_image, nb_depth, nb.intrinsics, nb.cam2ego,
            CameraPose.identity(), virt, cam.intrinsics, camera_id="front_left",
        )
        nb_cloud = depth_to_pointcloud(
            nb_image, nb_depth, nb.intrinsics,
            pose_compose(CameraPose.identity(), nb.cam2ego), camera_id="front_left",
        )
        oracle_img, _, _ = brute_force_render(nb_cloud, virt, cam.intrinsics, target_camera="front_left")
        np.testing.assert_array_equal(warp.pixels, oracle_img.pixels)

    def test_all_invalid_depth_gives_black(self, plane_scene):
        cam = plane_scene.rig.get("front")
        image = load_frame_image(plane_scene, 0, "front")
        depth = DepthMap.from_values(np.zeros((100, 100)))
        virt = virt_cam_pose(plane_scene, "front", ShiftSpec(lateral=1.0))
        warp = warp_neighbor(
            image, depth, cam.intrinsics, cam.cam2ego,
            CameraPose.identity(), virt, cam.intrinsics,
        )
        assert not warp.pixels.any()


class TestCompositeSeam:
    def _mask(self, flags):
        return OcclusionMask(np.asarray(flags, dtype=np.uint8))

    def test_all_visible_keeps_masked_image(self):
        rng = np.random.default_rng(10)
        masked = ImageBuffer(rng.integers(0, 256, (5, 5, 3), dtype=np.uint8))
        warp = ImageBuffer(rng.integers(0, 256, (5, 5, 3), dtype=np.uint8))
        out = composite_seam(masked, warp, self._mask(np.zeros((5, 5))))
        np.testing.assert_array_equal(out.pixels, masked.pixels)

    def test_all_masked_takes_warp(self):
        rng = np.random.default_rng(11)
        masked = ImageBuffer(rng.integers(0, 256, (5, 5, 3), dtype=np.uint8))
        warp = ImageBuffer(rng.integers(0, 256, (5, 5, 3), dtype=np.uint8))
        out = composite_seam(masked, warp, self._mask(np.full((5, 5), 128)))
        np.testing.assert_array_equal(out.pixels, warp.pixels)

    @given(
        hnp.arrays(np.uint8, (6, 6, 3)),
        hnp.arrays(np.uint8, (6, 6, 3)),
        hnp.arrays(np.uint8, (6, 6), elements=st.sampled_from([0, 64, 128, 255])),
    )
    @settings(max_examples=60, deadline=None)
    def test_pixelwise_selection_property(self, masked_px, warp_px, flags):
        out = composite_seam(ImageBuffer(masked_px), ImageBuffer(warp_px), self._mask(flags))
        m = flags.astype(bool)
        np.testing.assert_array_equal(out.pixels[m], warp_px[m])
        np.testing.assert_array_equal(out.pixels[~m], masked_px[~m])

    def test_additive_form_equals_selection_on_proper_inputs(self):
        """When `masked` is black on M, masked + warp*M == selection, bit-exact."""
        rng = np.random.default_rng(12)
        raw = ImageBuffer(rng.integers(0, 256, (8, 8, 3), dtype=np.uint8))
        warp = ImageBuffer(rng.integers(0, 256, (8, 8, 3), dtype=np.uint8))
        flags = (rng.random((8, 8)) < 0.4).astype(np.uint8) * 255
        mask = self._mask(flags)
        masked = apply_mask(raw, mask)
        selection = composite_seam(masked, warp, mask)
        additive = masked.pixels + warp.pixels * mask.binary[:, :, None].astype(np.uint8)
        np.testing.assert_array_equal(selection.pixels, additive)

    def test_photometric_seam_survives_verbatim(self):
        """No blending: a constant offset inside M must remain a hard step."""
        rng = np.random.default_rng(13)
        raw = ImageBuffer(rng.integers(40, 200, (8, 8, 3), dtype=np.uint8))
        flags = np.zeros((8, 8), np.uint8)
        flags[:, 4:] = 255
        mask = self._mask(flags)
        masked = apply_mask(raw, mask)
        warp = ImageBuffer((raw.pixels + 17).astype(np.uint8))
        out = composite_seam(masked, warp, mask)
        np.testing.assert_array_equal(out.pixels[:, 4:], raw.pixels[:, 4:] + 17)
        np.testing.assert_array_equal(out.pixels[:, :4], raw.pixels[:, :4])

    def test_dimension_mismatch_rejected(self):
        a = ImageBuffer(np.zeros((4, 4, 3), np.uint8))
        b = ImageBuffer(np.zeros((4, 5, 3), np.uint8))
        with pytest.raises(InvalidInputError):
            composite_seam(a, b, self._mask(np.zeros((4, 4))))


class TestRigYaw:
    def test_yaws_of_default_rig(self):
        rig = default_rig(16, 16)
        assert rig.yaw_of("front") == pytest.approx(0.0, abs=1e-12)
        assert rig.yaw_of("front_left") == pytest.approx(math.pi / 6, abs=1e-12)
        assert rig.yaw_of("front_right") == pytest.approx(-math.pi / 6, abs=1e-12)

    def test_duplicate_ids_rejected(self):
        k = vs.CameraIntrinsics(fx=4.0, fy=4.0, cx=2.0, cy=2.0, width=4, height=4)
        cam = RigCamera("x", k, camera_pose(0.0))
        with pytest.raises(InvalidInputError):
            CameraRig((cam, cam))
