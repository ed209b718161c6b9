"""Command-line entry points; every subcommand is a thin adapter over the library.

Exit codes (also listed in ``--help``):

  0  success
  1  unexpected internal error
  2  usage error (bad flags)
  3  missing file
  4  invalid manifest (parse, timestamps, poses, empty scene)
  5  invalid input or configuration
  6  corrupt binary file (PPM/PGM/checkpoint)
  7  verification mismatch
  8  degenerate synthetic view
  9  aborted build or diverged training

Failures print a one-line JSON object to stderr:
``{"error": "<class>", "exit_code": N, "detail": "..."}``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import flow, pnm
from .errors import (
    DegenerateViewError,
    FormatError,
    InvalidInputError,
    ManifestError,
    MissingFileError,
    TrainingDivergedError,
    VerificationError,
    ViewShiftError,
)
from .geometry import ImageBuffer
from .manifest import load_manifest
from .pipeline import (
    PipelineConfig,
    SinkError,
    build_condition_frame,
    build_dataset,
    build_shift_view,
    build_warp_image,
    dataset_report,
    iter_sample_dirs,
    load_config,
    read_sample,
    verify_dataset,
    write_histogram_csv,
)
from .shift_render import ShiftSpec
from .oracle import gen_scene, load_scene_spec

EXIT_CODES = [
    (MissingFileError, 3),
    (FileNotFoundError, 3),
    (ManifestError, 4),
    (InvalidInputError, 5),
    (FormatError, 6),
    (VerificationError, 7),
    (DegenerateViewError, 8),
    (SinkError, 9),
    (TrainingDivergedError, 9),
]


def _exit_code_for(exc: BaseException) -> int:
    for cls, code in EXIT_CODES:
        if isinstance(exc, cls):
            return code
    return 1


def _shift_from_args(args) -> ShiftSpec:
    return ShiftSpec(
        lateral=args.lateral,
        longitudinal=args.longitudinal,
        vertical=args.vertical,
        yaw=args.yaw,
    )


def _config_from_args(args) -> PipelineConfig:
    """Flags override config-file values; the config file overrides defaults."""
    base = load_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    overrides = {}
    for flag, field in (
        ("depth_tol", "depth_tol"),
        ("z_min", "z_min"),
        ("splat_radius", "splat_radius"),
        ("stride", "stride"),
        ("seed", "seed"),
        ("workers", "workers"),
        ("lateral_range", "lateral_range"),
        ("longitudinal_range", "longitudinal_range"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[field] = tuple(value) if isinstance(value, list) else value
    merged = dict(base.to_json())
    merged.update({k: (list(v) if isinstance(v, tuple) else v) for k, v in overrides.items()})
    return PipelineConfig.from_json(merged)


def _echo_config(out_dir: Path, command: str, config: PipelineConfig, extra: dict | None = None) -> None:
    doc = {"command": command, "config": config.to_json(), "pipeline_version": "1"}
    if extra:
        doc.update(extra)
    (out_dir / "effective_config.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _add_shift_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--frame", type=int, required=True, help="frame index")
    p.add_argument("--camera", required=True, help="camera id")
    p.add_argument("--lateral", type=float, default=0.0, help="lateral shift in meters (+ = left)")
    p.add_argument("--longitudinal", type=float, default=0.0, help="forward shift in meters")
    p.add_argument("--vertical", type=float, default=0.0, help="vertical shift in meters")
    p.add_argument("--yaw", type=float, default=0.0, help="yaw in radians about ego +z")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("--depth-tol", dest="depth_tol", type=float, default=None)
    p.add_argument("--z-min", dest="z_min", type=float, default=None)
    p.add_argument("--splat-radius", dest="splat_radius", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)


def _cmd_gen_scene(args) -> int:
    spec = load_scene_spec(args.spec)
    manifest = gen_scene(spec, args.out)
    print(f"wrote scene '{manifest.scene_id}': {len(manifest.frames)} frames, "
          f"{len(manifest.rig)} cameras under {args.out}")
    return 0


def _cmd_shift(args) -> int:
    scene = load_manifest(args.manifest)
    config = _config_from_args(args)
    view = build_shift_view(scene, args.frame, args.camera, _shift_from_args(args), config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pnm.write_ppm(out / "shift.ppm", view.shift_image.pixels)
    _echo_config(out, "shift", config, {"frame": args.frame, "camera": args.camera})
    print(f"wrote {out / 'shift.ppm'}")
    return 0


def _cmd_mask(args) -> int:
    scene = load_manifest(args.manifest)
    config = _config_from_args(args)
    view = build_shift_view(scene, args.frame, args.camera, _shift_from_args(args), config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pnm.write_pgm8(out / "mask.pgm", view.mask.flags)
    pnm.write_ppm(out / "masked.ppm", view.masked.pixels)
    _echo_config(out, "mask", config, {"frame": args.frame, "camera": args.camera})
    print(f"wrote {out / 'mask.pgm'} and {out / 'masked.ppm'} "
          f"(masked fraction {view.mask.masked_fraction:.4f})")
    return 0


def _cmd_seam(args) -> int:
    scene = load_manifest(args.manifest)
    config = _config_from_args(args)
    shift = _shift_from_args(args)
    sample_obj = build_condition_frame(scene, args.frame, args.camera, shift, config)
    warp, neighbor = build_warp_image(scene, args.frame, args.camera, shift, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pnm.write_ppm(out / "warp.ppm", warp.pixels)
    pnm.write_ppm(out / "cond.ppm", sample_obj.condition.pixels)
    _echo_config(out, "seam", config,
                 {"frame": args.frame, "camera": args.camera, "neighbor": neighbor})
    print(f"wrote {out / 'warp.ppm'} and {out / 'cond.ppm'} (neighbor: {neighbor})")
    return 0


def _cmd_build_dataset(args) -> int:
    scene = load_manifest(args.manifest)
    config = _config_from_args(args)
    stats = build_dataset(scene, args.out, config)
    print(f"built {stats.samples_emitted} samples from {stats.frames_processed} frames "
          f"in {stats.wall_time_s:.2f}s (peak tracked {stats.peak_tracked_bytes} bytes)")
    return 0


def _cmd_train_toy(args) -> int:
    dirs = iter_sample_dirs(args.dataset)
    if not dirs:
        raise InvalidInputError(f"no samples under {args.dataset}")
    samples = [read_sample(d) for d in dirs]
    config = flow.TrainConfig(
        learning_rate=args.learning_rate,
        steps=args.steps,
        batch_size=args.batch_size,
        seed=args.seed,
        time_embed_size=args.embed_size,
        downscale_factor=args.factor,
        hidden_size=args.hidden,
    )
    model, losses = flow.train(samples, config)
    flow.save_checkpoint(model, args.checkpoint)
    loss_csv = args.loss_csv or str(Path(args.checkpoint).with_suffix(".loss.csv"))
    flow.write_loss_trace(loss_csv, losses)
    print(f"trained on {len(samples)} samples: loss {losses[0]:.6f} -> {losses[-1]:.6f}; "
          f"checkpoint {args.checkpoint}, trace {loss_csv}")
    return 0


def _cmd_sample(args) -> int:
    model = flow.load_checkpoint(args.checkpoint)
    condition = ImageBuffer(pnm.read_ppm(args.condition))
    out = flow.sample(model, condition, args.steps, args.seed)
    pnm.write_ppm(args.out, out.pixels)
    print(f"wrote {args.out} ({args.steps} Euler steps, seed {args.seed})")
    return 0


def _cmd_report(args) -> int:
    histogram, sheet = dataset_report(args.dataset, max_sheet_rows=args.sheet_rows)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_histogram_csv(out / "mask_fractions.csv", histogram)
    pnm.write_ppm(out / "contact_sheet.ppm", sheet.pixels)
    print(f"wrote {out / 'mask_fractions.csv'} and {out / 'contact_sheet.ppm'}")
    return 0


def _cmd_verify(args) -> int:
    count = verify_dataset(args.dataset, args.manifest)
    print(f"verified {count} samples: every condition reproduces bit-exactly")
    return 0


_EXIT_CODE_HELP = """exit codes:
  0 success            1 unexpected error      2 usage error
  3 missing file       4 invalid manifest      5 invalid input/config
  6 corrupt file       7 verification mismatch 8 degenerate view
  9 aborted build / diverged training
Failures print a one-line JSON error object to stderr."""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="viewshift",
        description="Virtual-shift inpainting data pipeline and toy flow-matching trainer.",
        epilog=_EXIT_CODE_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scene", help="render a synthetic scene spec into a manifest + frames")
    p.add_argument("spec", help="scene spec JSON")
    p.add_argument("out", help="output directory")
    p.set_defaults(func=_cmd_gen_scene)

    p = sub.add_parser("shift", help="write the splatted virtual-shift image for one view")
    p.add_argument("manifest")
    p.add_argument("out", help="output directory")
    _add_shift_flags(p)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_shift)

    p = sub.add_parser("mask", help="write the occlusion mask and masked image for one view")
    p.add_argument("manifest")
    p.add_argument("out", help="output directory")
    _add_shift_flags(p)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_mask)

    p = sub.add_parser("seam", help="write the neighbor warp and composited condition for one view")
    p.add_argument("manifest")
    p.add_argument("out", help="output directory")
    _add_shift_flags(p)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_seam)

    p = sub.add_parser("build-dataset", help="stream condition pairs for every (frame, camera)")
    p.add_argument("manifest")
    p.add_argument("out", help="dataset output directory")
    _add_config_flags(p)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--lateral-range", dest="lateral_range", type=float, nargs=2, default=None,
                   metavar=("LO", "HI"))
    p.add_argument("--longitudinal-range", dest="longitudinal_range", type=float, nargs=2, default=None,
                   metavar=("LO", "HI"))
    p.set_defaults(func=_cmd_build_dataset)

    p = sub.add_parser("train-toy", help="train the toy flow-matching denoiser on a dataset")
    p.add_argument("dataset")
    p.add_argument("checkpoint")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=0.1)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--factor", type=int, default=4, help="latent downscale factor (1, 2 or 4)")
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--embed-size", dest="embed_size", type=int, default=8)
    p.add_argument("--loss-csv", default=None)
    p.set_defaults(func=_cmd_train_toy)

    p = sub.add_parser("sample", help="generate an image from a checkpoint and a condition")
    p.add_argument("checkpoint")
    p.add_argument("condition", help="condition PPM")
    p.add_argument("out", help="output PPM")
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("report", help="mask-fraction histogram CSV and a contact sheet")
    p.add_argument("dataset")
    p.add_argument("out", help="output directory")
    p.add_argument("--sheet-rows", dest="sheet_rows", type=int, default=8)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("verify", help="recompute every stored sample and compare bit-exactly")
    p.add_argument("dataset")
    p.add_argument("--manifest", default=None, help="override the manifest recorded at build time")
    p.set_defaults(func=_cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ViewShiftError, FileNotFoundError, OSError) as exc:
        code = _exit_code_for(exc)
        print(json.dumps({"error": type(exc).__name__, "exit_code": code, "detail": str(exc)}),
              file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
