"""Walk through the condition-pair construction on a synthetic street scene.

Builds one scene, then shows each stage for the front camera: the
splatted virtual-shift image with its voids, the occlusion mask, the
masked image, the neighbor warp, and the final composited condition.
Outputs land in ./demo_output/walkthrough/ as PPM/PGM files.
"""

from pathlib import Path

import numpy as np

import viewshift as vs
from viewshift import pnm
from viewshift.manifest import load_frame_depth, load_frame_image
from viewshift.pipeline import build_condition_frame, build_shift_view, build_warp_image

OUT = Path("demo_output/walkthrough")


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)

    # A randomized scene: ground plane, far wall, a couple of boxes,
    # seen by a three-camera rig (front, front_left, front_right).
    spec = vs.random_scene_spec(seed=5, image_size=(96, 96), n_frames=2)
    scene = vs.gen_scene(spec, OUT / "scene")
    print(f"scene '{scene.scene_id}': {len(scene.frames)} frames, {len(scene.rig)} cameras")

    raw = load_frame_image(scene, 0, "front")
    depth = load_frame_depth(scene, 0, "front")
    pnm.write_ppm(OUT / "0_raw.ppm", raw.pixels)
    print(f"raw view saved; {np.count_nonzero(depth.validity)} of {depth.values.size} depth pixels valid")

    # Shift the virtual ego 1.5 m to the left and look at what breaks.
    shift = vs.ShiftSpec(lateral=1.5)
    view = build_shift_view(scene, 0, "front", shift)
    pnm.write_ppm(OUT / "1_shift.ppm", view.shift_image.pixels)
    print("virtual-shift splat saved: note the black voids where no point lands")

    pnm.write_pgm8(OUT / "2_mask.pgm", view.mask.flags)
    frac = view.mask.masked_fraction
    counts = {flag.name.lower(): int((view.mask.flags == int(flag)).sum()) for flag in vs.MaskFlag}
    print(f"occlusion mask saved: {frac:.1%} of source pixels masked ({counts})")

    pnm.write_ppm(OUT / "3_masked.ppm", view.masked.pixels)
    print("masked raw image saved: the pixels a 1.5 m shift would lose are carved out")

    warp, neighbor = build_warp_image(scene, 0, "front", shift)
    pnm.write_ppm(OUT / "4_warp.ppm", warp.pixels)
    print(f"neighbor warp saved (neighbor = {neighbor}): imperfect by design, no blending")

    sample = build_condition_frame(scene, 0, "front", shift)
    pnm.write_ppm(OUT / "5_condition.ppm", sample.condition.pixels)
    filled = int((sample.mask.binary & warp.pixels.any(axis=2)).sum())
    print(f"condition saved: {filled} masked pixels filled from {neighbor}, the rest stay black")
    print(f"all stages in {OUT}/")


if __name__ == "__main__":
    main()
