"""Streaming condition-pair factory: shift sampling, composition, persistence.

Given a scene manifest, each (frame, camera) yields one training sample:
the raw image, the seam-composited condition image, and the occlusion
mask, all reproducible bit-exactly from (manifest, seed).  Frames are
processed one at a time with a per-frame cache of the sibling cameras'
data, so peak memory does not grow with sequence length.
"""

from __future__ import annotations

import json
import time
import tracemalloc
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from threading import Lock

import numpy as np

from . import pnm
from .errors import (
    FormatError,
    InvalidInputError,
    MissingFileError,
    VerificationError,
    ViewShiftError,
)
from .geometry import (
    DEFAULT_Z_MIN,
    CameraPose,
    ImageBuffer,
    depth_to_pointcloud,
    pose_compose,
)
from .manifest import SceneManifest, load_frame_depth, load_frame_image, load_manifest
from .seam import composite_seam, select_neighbor, warp_neighbor
from .shift_render import (
    DEFAULT_DEPTH_TOL,
    OcclusionMask,
    ShiftSpec,
    ZBuffer,
    apply_mask,
    compute_occlusion_mask,
    make_virtual_pose,
    render_shift_image,
)

PIPELINE_VERSION = "1"
HISTOGRAM_BINS = 20


class SinkError(ViewShiftError):
    """The sample consumer failed; carries the partial BuildStats."""

    def __init__(self, message: str, stats: "BuildStats"):
        super().__init__(message)
        self.stats = stats


@dataclass(frozen=True)
class PipelineConfig:
    """Tolerances and knobs for condition-pair construction."""

    depth_tol: float = DEFAULT_DEPTH_TOL
    z_min: float = DEFAULT_Z_MIN
    splat_radius: int = 0
    stride: int = 1
    seed: int = 0
    lateral_range: tuple[float, float] = (-1.0, 1.0)
    longitudinal_range: tuple[float, float] = (0.0, 0.0)
    workers: int = 1

    def __post_init__(self):
        if not self.depth_tol >= 0:
            raise InvalidInputError(f"depth_tol must be >= 0, got {self.depth_tol}")
        if not self.z_min > 0:
            raise InvalidInputError(f"z_min must be > 0, got {self.z_min}")
        if self.splat_radius < 0 or self.stride < 1 or self.workers < 1:
            raise InvalidInputError("splat_radius >= 0, stride >= 1 and workers >= 1 required")
        for name, (lo, hi) in (("lateral_range", self.lateral_range),
                               ("longitudinal_range", self.longitudinal_range)):
            if not hi >= lo:
                raise InvalidInputError(f"{name} must be (lo, hi) with hi >= lo, got {(lo, hi)}")

    def to_json(self) -> dict:
        return {
            "depth_tol": self.depth_tol,
            "z_min": self.z_min,
            "splat_radius": self.splat_radius,
            "stride": self.stride,
            "seed": self.seed,
            "lateral_range": list(self.lateral_range),
            "longitudinal_range": list(self.longitudinal_range),
            "workers": self.workers,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PipelineConfig":
        kwargs = dict(obj)
        for key in ("lateral_range", "longitudinal_range"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise InvalidInputError(f"unknown config field: {exc}") from exc


def load_config(path: str | Path) -> PipelineConfig:
    try:
        return PipelineConfig.from_json(json.loads(Path(path).read_text()))
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path}: invalid config JSON ({exc})") from exc


@dataclass(frozen=True)
class ShiftSampler:
    """Deterministic per-(frame, camera) shift draws, uniform over the ranges.

    Draws are keyed by (seed, frame, camera rank) through a counter-based
    Philox generator, so results do not depend on evaluation order or
    worker count.
    """

    seed: int
    lateral_range: tuple[float, float] = (-1.0, 1.0)
    longitudinal_range: tuple[float, float] = (0.0, 0.0)

    def shift_for(self, frame_index: int, camera_rank: int) -> ShiftSpec:
        key = [self.seed & (2**64 - 1), (frame_index << 12) + camera_rank]
        g = np.random.Generator(np.random.Philox(key=key))
        lat = float(g.uniform(self.lateral_range[0], self.lateral_range[1]))
        lon = float(g.uniform(self.longitudinal_range[0], self.longitudinal_range[1]))
        return ShiftSpec(lateral=lat, longitudinal=lon)


@dataclass(frozen=True, eq=False)
class ConditionSample:
    """One training pair: supervision target, degraded condition, mask."""

    raw: ImageBuffer
    condition: ImageBuffer
    mask: OcclusionMask
    shift: ShiftSpec
    frame_index: int
    camera_id: str
    neighbor_id: str | None
    config: PipelineConfig

    def __post_init__(self):
        dims = {(self.raw.width, self.raw.height), (self.condition.width, self.condition.height),
                (self.mask.width, self.mask.height)}
        if len(dims) != 1:
            raise InvalidInputError(f"raw/condition/mask dimensions disagree: {dims}")

    @property
    def nbytes(self) -> int:
        return self.raw.pixels.nbytes + self.condition.pixels.nbytes + self.mask.flags.nbytes


def samples_equal(a: ConditionSample, b: ConditionSample) -> bool:
    return (
        np.array_equal(a.raw.pixels, b.raw.pixels)
        and np.array_equal(a.condition.pixels, b.condition.pixels)
        and np.array_equal(a.mask.flags, b.mask.flags)
        and a.shift == b.shift
        and a.frame_index == b.frame_index
        and a.camera_id == b.camera_id
        and a.neighbor_id == b.neighbor_id
    )


@dataclass(frozen=True)
class ShiftView:
    """Intermediate products of the virtual shift for one (frame, camera)."""

    raw: ImageBuffer
    shift_image: ImageBuffer
    zbuffer: ZBuffer
    mask: OcclusionMask
    masked: ImageBuffer
    virt_cam_pose: CameraPose


def _load_frame_data(scene: SceneManifest, frame_index: int, camera_ids) -> dict:
    return {
        cid: (load_frame_image(scene, frame_index, cid), load_frame_depth(scene, frame_index, cid))
        for cid in camera_ids
    }


def build_shift_view(
    scene: SceneManifest,
    frame_index: int,
    camera_id: str,
    shift: ShiftSpec,
    config: PipelineConfig | None = None,
    _frame_data: dict | None = None,
) -> ShiftView:
    """Render the virtual shift and derive mask + masked image for one view.

    All geometry happens in the current frame's ego coordinates: the
    virtual camera is the target camera rigidly attached to the shifted
    ego frame.
    """
    config = config or PipelineConfig()
    if not 0 <= frame_index < len(scene.frames):
        raise InvalidInputError(f"frame index {frame_index} out of range 0..{len(scene.frames) - 1}")
    cam = scene.rig.get(camera_id)
    if _frame_data is None:
        _frame_data = _load_frame_data(scene, frame_index, [camera_id])
    raw, depth = _frame_data[camera_id]
    cloud = depth_to_pointcloud(raw, depth, cam.intrinsics, cam.cam2ego, config.stride, camera_id)
    virt_ego = make_virtual_pose(CameraPose.identity(), shift)
    virt_cam = pose_compose(virt_ego, cam.cam2ego)
    shift_image, zbuffer = render_shift_image(
        cloud, virt_cam, cam.intrinsics, splat_radius=config.splat_radius, z_min=config.z_min
    )
    mask = compute_occlusion_mask(
        cloud, virt_cam, cam.intrinsics, zbuffer,
        depth_tol=config.depth_tol, z_min=config.z_min, target_camera=camera_id,
    )
    return ShiftView(raw, shift_image, zbuffer, mask, apply_mask(raw, mask), virt_cam)


def build_warp_image(
    scene: SceneManifest,
    frame_index: int,
    camera_id: str,
    shift: ShiftSpec,
    config: PipelineConfig | None = None,
    _frame_data: dict | None = None,
) -> tuple[ImageBuffer, str | None]:
    """Warp of the selected neighbor at the virtual pose; black when no neighbor."""
    config = config or PipelineConfig()
    cam = scene.rig.get(camera_id)
    neighbor_id = select_neighbor(scene.rig, camera_id, shift)
    if neighbor_id is None:
        return ImageBuffer.black(cam.intrinsics.width, cam.intrinsics.height), None
    if _frame_data is None or neighbor_id not in _frame_data:
        _frame_data = _load_frame_data(scene, frame_index, [neighbor_id])
    nb = scene.rig.get(neighbor_id)
    nb_image, nb_depth = _frame_data[neighbor_id]
    virt_cam = pose_compose(make_virtual_pose(CameraPose.identity(), shift), cam.cam2ego)
    warp = warp_neighbor(
        nb_image, nb_depth, nb.intrinsics, nb.cam2ego,
        CameraPose.identity(), virt_cam, cam.intrinsics,
        splat_radius=config.splat_radius, z_min=config.z_min, stride=config.stride,
        camera_id=neighbor_id,
    )
    return warp, neighbor_id


def build_condition_frame(
    scene: SceneManifest,
    frame_index: int,
    camera_id: str,
    shift: ShiftSpec,
    config: PipelineConfig | None = None,
    _frame_data: dict | None = None,
) -> ConditionSample:
    """Compose the full condition pair for one (frame, camera, shift)."""
    config = config or PipelineConfig()
    if not 0 <= frame_index < len(scene.frames):
        raise InvalidInputError(f"frame index {frame_index} out of range 0..{len(scene.frames) - 1}")
    if _frame_data is None:
        neighbor_id = select_neighbor(scene.rig, camera_id, shift)
        needed = [camera_id] + ([neighbor_id] if neighbor_id else [])
        _frame_data = _load_frame_data(scene, frame_index, needed)
    view = build_shift_view(scene, frame_index, camera_id, shift, config, _frame_data)
    warp, neighbor_id = build_warp_image(scene, frame_index, camera_id, shift, config, _frame_data)
    condition = composite_seam(view.masked, warp, view.mask)
    return ConditionSample(view.raw, condition, view.mask, shift, frame_index, camera_id, neighbor_id, config)


class _AllocationTracker:
    """Counts bytes of per-frame working data currently held by the build."""

    def __init__(self):
        self._current = 0
        self.peak = 0
        self._lock = Lock()

    def acquire(self, nbytes: int) -> None:
        with self._lock:
            self._current += nbytes
            if self._current > self.peak:
                self.peak = self._current

    def release(self, nbytes: int) -> None:
        with self._lock:
            self._current -= nbytes


@dataclass
class BuildStats:
    frames_processed: int
    samples_emitted: int
    mask_fraction_histogram: list[int]  # HISTOGRAM_BINS bins over [0, 1]
    wall_time_s: float
    peak_tracked_bytes: int
    peak_traced_bytes: int  # tracemalloc peak during the build, 0 if unavailable


def _histogram_bin(fraction: float) -> int:
    return min(HISTOGRAM_BINS - 1, int(fraction * HISTOGRAM_BINS))


def stream_build(
    scene: SceneManifest,
    sampler: ShiftSampler,
    sink,
    config: PipelineConfig | None = None,
) -> BuildStats:
    """Build one sample per (frame, camera), feeding `sink` in frame order.

    Frames may be processed by a bounded worker pool (``config.workers``);
    the reorder window holds at most that many in-flight frames, keeping
    peak memory independent of sequence length.  Sink failures abort the
    build and raise :class:`SinkError` carrying the partial stats.
    """
    config = config or PipelineConfig()
    camera_ids = scene.rig.camera_ids()
    tracker = _AllocationTracker()
    histogram = [0] * HISTOGRAM_BINS
    emitted = 0
    frames_done = 0
    started_tracing = False
    if tracemalloc.is_tracing():
        tracemalloc.reset_peak()
    else:
        tracemalloc.start()
        started_tracing = True
    t0 = time.perf_counter()

    def process(frame_index: int):
        data = _load_frame_data(scene, frame_index, camera_ids)
        frame_bytes = sum(
            img.pixels.nbytes + dep.values.nbytes + dep.validity.nbytes for img, dep in data.values()
        )
        tracker.acquire(frame_bytes)
        try:
            samples = []
            for rank, cid in enumerate(camera_ids):
                shift = sampler.shift_for(frame_index, rank)
                samples.append(build_condition_frame(scene, frame_index, cid, shift, config, data))
            result_bytes = sum(s.nbytes for s in samples)
            tracker.acquire(result_bytes)
            return samples, result_bytes
        finally:
            tracker.release(frame_bytes)

    def make_stats() -> BuildStats:
        if tracemalloc.is_tracing():
            _, traced_peak = tracemalloc.get_traced_memory()
        else:
            traced_peak = 0
        if started_tracing:
            tracemalloc.stop()
        return BuildStats(
            frames_processed=frames_done,
            samples_emitted=emitted,
            mask_fraction_histogram=histogram,
            wall_time_s=time.perf_counter() - t0,
            peak_tracked_bytes=tracker.peak,
            peak_traced_bytes=traced_peak,
        )

    frame_iter = iter(range(len(scene.frames)))
    try:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            window: deque = deque()
            for fi in range(min(config.workers, len(scene.frames))):
                window.append(pool.submit(process, fi))
                next(frame_iter)
            while window:
                samples, result_bytes = window.popleft().result()
                nxt = next(frame_iter, None)
                if nxt is not None:
                    window.append(pool.submit(process, nxt))
                for sample in samples:
                    try:
                        sink(sample)
                    except Exception as exc:
                        for fut in window:
                            fut.cancel()
                        raise SinkError(f"sink failed on frame {sample.frame_index}: {exc}", make_stats()) from exc
                    histogram[_histogram_bin(sample.mask.masked_fraction)] += 1
                    emitted += 1
                tracker.release(result_bytes)
                frames_done += 1
    except SinkError:
        raise
    except Exception:
        if started_tracing and tracemalloc.is_tracing():
            tracemalloc.stop()
        raise
    return make_stats()


def write_sample(sample: ConditionSample, sample_dir: str | Path) -> None:
    """Persist one sample as raw.ppm, cond.ppm, mask.pgm and meta.json."""
    d = Path(sample_dir)
    d.mkdir(parents=True, exist_ok=True)
    pnm.write_ppm(d / "raw.ppm", sample.raw.pixels)
    pnm.write_ppm(d / "cond.ppm", sample.condition.pixels)
    pnm.write_pgm8(d / "mask.pgm", sample.mask.flags)
    meta = {
        "pipeline_version": PIPELINE_VERSION,
        "frame_index": sample.frame_index,
        "camera_id": sample.camera_id,
        "neighbor_id": sample.neighbor_id,
        "shift": {
            "lateral": sample.shift.lateral,
            "longitudinal": sample.shift.longitudinal,
            "vertical": sample.shift.vertical,
            "yaw": sample.shift.yaw,
        },
        "depth_tol": sample.config.depth_tol,
        "z_min": sample.config.z_min,
        "splat_radius": sample.config.splat_radius,
        "stride": sample.config.stride,
    }
    (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _read_meta(sample_dir: Path) -> dict:
    meta_path = sample_dir / "meta.json"
    if not meta_path.is_file():
        raise MissingFileError(f"missing {meta_path}")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{meta_path}: invalid JSON ({exc})") from exc
    for key in ("frame_index", "camera_id", "shift", "depth_tol", "z_min", "splat_radius", "stride"):
        if key not in meta:
            raise FormatError(f"{meta_path}: missing field {key!r}")
    return meta


def read_sample(sample_dir: str | Path) -> ConditionSample:
    """Load a persisted sample; inverse of :func:`write_sample`, bit-exact."""
    d = Path(sample_dir)
    for name in ("raw.ppm", "cond.ppm", "mask.pgm"):
        if not (d / name).is_file():
            raise MissingFileError(f"missing {d / name}")
    meta = _read_meta(d)
    sh = meta["shift"]
    shift = ShiftSpec(
        lateral=float(sh["lateral"]), longitudinal=float(sh["longitudinal"]),
        vertical=float(sh.get("vertical", 0.0)), yaw=float(sh.get("yaw", 0.0)),
    )
    config = PipelineConfig(
        depth_tol=float(meta["depth_tol"]), z_min=float(meta["z_min"]),
        splat_radius=int(meta["splat_radius"]), stride=int(meta["stride"]),
    )
    return ConditionSample(
        raw=ImageBuffer(pnm.read_ppm(d / "raw.ppm")),
        condition=ImageBuffer(pnm.read_ppm(d / "cond.ppm")),
        mask=OcclusionMask(pnm.read_pgm8(d / "mask.pgm")),
        shift=shift,
        frame_index=int(meta["frame_index"]),
        camera_id=str(meta["camera_id"]),
        neighbor_id=None if meta.get("neighbor_id") is None else str(meta["neighbor_id"]),
        config=config,
    )


def sample_dir_name(frame_index: int, camera_id: str) -> str:
    return f"{frame_index:04d}_{camera_id}"


def iter_sample_dirs(dataset_dir: str | Path) -> list[Path]:
    """All sample directories under a dataset root, sorted by path."""
    root = Path(dataset_dir)
    return sorted(p.parent for p in root.glob("*/*/meta.json")) or sorted(
        p.parent for p in root.glob("*/meta.json")
    )


def build_dataset(scene: SceneManifest, out_dir: str | Path, config: PipelineConfig) -> BuildStats:
    """Stream samples to ``<out_dir>/<scene_id>/<frame>_<camera>/`` directories.

    The effective configuration (including the source manifest path) is
    echoed to ``effective_config.json`` for provenance and `verify`.
    """
    out_dir = Path(out_dir)
    scene_dir = out_dir / scene.scene_id
    scene_dir.mkdir(parents=True, exist_ok=True)
    sampler = ShiftSampler(config.seed, config.lateral_range, config.longitudinal_range)

    def sink(sample: ConditionSample) -> None:
        write_sample(sample, scene_dir / sample_dir_name(sample.frame_index, sample.camera_id))

    stats = stream_build(scene, sampler, sink, config)
    # workers is an execution knob with no effect on the data; leaving it out
    # keeps output trees byte-identical across pool sizes.
    echoed = {k: v for k, v in config.to_json().items() if k != "workers"}
    echo = {
        "pipeline_version": PIPELINE_VERSION,
        "scene_id": scene.scene_id,
        "manifest": str(scene.source_path),
        "config": echoed,
    }
    (out_dir / "effective_config.json").write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n")
    return stats


def verify_dataset(dataset_dir: str | Path, manifest_path: str | Path | None = None) -> int:
    """Recompute every stored sample and require bit-exact agreement.

    Returns the number of verified samples; raises
    :class:`VerificationError` on the first mismatch.
    """
    root = Path(dataset_dir)
    if manifest_path is None:
        echo_path = root / "effective_config.json"
        if not echo_path.is_file():
            raise MissingFileError(f"missing {echo_path}; pass the manifest path explicitly")
        try:
            manifest_path = json.loads(echo_path.read_text())["manifest"]
        except (json.JSONDecodeError, KeyError) as exc:
            raise FormatError(f"{echo_path}: cannot read manifest path ({exc})") from exc
    scene = load_manifest(manifest_path)
    sample_dirs = iter_sample_dirs(root)
    if not sample_dirs:
        raise VerificationError(f"no samples found under {root}")
    cache_frame = -1
    frame_data: dict | None = None
    count = 0
    for d in sample_dirs:
        stored = read_sample(d)
        if stored.frame_index != cache_frame:
            frame_data = _load_frame_data(scene, stored.frame_index, scene.rig.camera_ids())
            cache_frame = stored.frame_index
        rebuilt = build_condition_frame(
            scene, stored.frame_index, stored.camera_id, stored.shift, stored.config, frame_data
        )
        if not np.array_equal(stored.raw.pixels, rebuilt.raw.pixels):
            raise VerificationError(f"{d}: raw image does not match the manifest frame")
        if not np.array_equal(stored.mask.flags, rebuilt.mask.flags):
            raise VerificationError(f"{d}: occlusion mask is not reproducible")
        if not np.array_equal(stored.condition.pixels, rebuilt.condition.pixels):
            raise VerificationError(f"{d}: condition image is not reproducible")
        if stored.neighbor_id != rebuilt.neighbor_id:
            raise VerificationError(
                f"{d}: neighbor {stored.neighbor_id!r} does not match recomputed {rebuilt.neighbor_id!r}"
            )
        count += 1
    return count


def write_histogram_csv(path: str | Path, histogram: list[int]) -> None:
    lines = ["bin_lo,bin_hi,count"]
    for i, count in enumerate(histogram):
        lines.append(f"{i / HISTOGRAM_BINS},{(i + 1) / HISTOGRAM_BINS},{count}")
    Path(path).write_text("\n".join(lines) + "\n")


def dataset_report(dataset_dir: str | Path, max_sheet_rows: int = 8):
    """Histogram of stored mask fractions plus a raw|cond|mask contact sheet."""
    dirs = iter_sample_dirs(dataset_dir)
    if not dirs:
        raise VerificationError(f"no samples found under {dataset_dir}")
    histogram = [0] * HISTOGRAM_BINS
    rows = []
    for i, d in enumerate(dirs):
        sample = read_sample(d)
        histogram[_histogram_bin(sample.mask.masked_fraction)] += 1
        if i < max_sheet_rows:
            mask_rgb = np.repeat(sample.mask.flags[:, :, None], 3, axis=2)
            rows.append(np.concatenate([sample.raw.pixels, sample.condition.pixels, mask_rgb], axis=1))
    sheet = ImageBuffer(np.concatenate(rows, axis=0))
    return histogram, sheet
