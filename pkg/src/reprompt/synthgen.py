"""Synthetic clip generator with exact ground-truth masks.

Each clip shows one star-convex lesion on an empty frame. The boundary
radius is a short Fourier series in polar angle,

    r(theta, t) = base * scale_t * (1 + sum_h a_h * cos(h * theta + phi_h + w_h * t)),

whose phases advance every frame so the outline wobbles coherently. The
centroid follows a smoothed random walk that reflects off the frame margins,
and occasional occlusion events shrink the visible lesion for a few frames.
Masks are rasterized exactly from the analytic boundary, so ground truth is
noise free by construction.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .seeds import derive_seed

_MAGIC = b"RPDS0001"

# Boundary harmonics: low orders with fixed relative amplitudes; the phase of
# each advances at its own (incommensurate) multiple of deform_freq.
_HARMONICS = (2, 3, 4)
_HARMONIC_WEIGHTS = (0.5, 0.3, 0.2)
_PHASE_RATES = (1.0, 1.37, 1.71)
_SCALE_AMP = 0.08


@dataclass(frozen=True)
class ClipConfig:
    """Generation knobs for one synthetic clip."""

    frame_count: int = 60
    width: int = 64
    height: int = 64
    radius_frac: float = 0.18     # base radius as a fraction of min(width, height)
    motion_speed: float = 0.8     # centroid step per frame, pixels
    deform_amp: float = 0.25      # total relative amplitude of the boundary harmonics
    deform_freq: float = 0.35     # phase advance per frame, radians
    occlusion_rate: float = 0.02  # per-frame probability that an occlusion event starts

    def __post_init__(self):
        if self.frame_count < 2:
            raise ValueError("a clip needs at least 2 frames")
        if self.width < 8 or self.height < 8:
            raise ValueError("frame must be at least 8x8")
        if not 0.0 < self.radius_frac < 0.5:
            raise ValueError("radius_frac must lie in (0, 0.5)")
        if self.motion_speed < 0 or self.deform_freq < 0:
            raise ValueError("motion_speed and deform_freq must be nonnegative")
        if not 0.0 <= self.deform_amp < 0.9:
            raise ValueError("deform_amp must lie in [0, 0.9)")
        if not 0.0 <= self.occlusion_rate <= 1.0:
            raise ValueError("occlusion_rate must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class MotionTrace:
    """Per-frame generation state, kept for audits and invariant checks."""

    centroid_x: np.ndarray
    centroid_y: np.ndarray
    scale: np.ndarray
    phase: np.ndarray
    occlusion_keep: np.ndarray  # visible area fraction, 1.0 outside events

    @property
    def occluded(self) -> np.ndarray:
        return self.occlusion_keep < 1.0


@dataclass(frozen=True, eq=False)
class Clip:
    """A generated clip: ground-truth masks plus its motion trace."""

    id: str
    seed: int
    masks: np.ndarray  # (frame_count, height, width) bool
    trace: MotionTrace

    @property
    def frame_count(self) -> int:
        return self.masks.shape[0]

    @property
    def height(self) -> int:
        return self.masks.shape[1]

    @property
    def width(self) -> int:
        return self.masks.shape[2]

    @property
    def last_frame(self) -> int:
        return self.masks.shape[0] - 1


def _frame_margin(cfg: ClipConfig) -> float:
    base = cfg.radius_frac * min(cfg.width, cfg.height)
    return base * (1.0 + cfg.deform_amp) * (1.0 + _SCALE_AMP) + 1.0


def generate_clip(cfg: ClipConfig, seed: int, clip_id: str | None = None) -> Clip:
    """Generate one clip deterministically from (cfg, seed)."""
    margin = _frame_margin(cfg)
    if 2.0 * margin >= min(cfg.width, cfg.height):
        raise ValueError(
            f"radius_frac {cfg.radius_frac} leaves no room for motion in a "
            f"{cfg.width}x{cfg.height} frame"
        )

    rng = np.random.default_rng(seed)
    base_radius = cfg.radius_frac * min(cfg.width, cfg.height)
    amps = np.array(_HARMONIC_WEIGHTS) * cfg.deform_amp
    phases0 = rng.uniform(0.0, 2.0 * np.pi, size=len(_HARMONICS))
    scale_phase = rng.uniform(0.0, 2.0 * np.pi)

    x_lo, x_hi = margin, cfg.width - 1 - margin
    y_lo, y_hi = margin, cfg.height - 1 - margin
    x = rng.uniform(x_lo, x_hi)
    y = rng.uniform(y_lo, y_hi)
    heading = rng.uniform(0.0, 2.0 * np.pi)

    ys, xs = np.mgrid[0:cfg.height, 0:cfg.width].astype(np.float64)

    masks = np.empty((cfg.frame_count, cfg.height, cfg.width), dtype=bool)
    cxs = np.empty(cfg.frame_count)
    cys = np.empty(cfg.frame_count)
    scales = np.empty(cfg.frame_count)
    phase_track = np.empty(cfg.frame_count)
    keeps = np.empty(cfg.frame_count)

    occ_left = 0
    occ_keep = 1.0
    for t in range(cfg.frame_count):
        if t > 0:
            heading += rng.normal(0.0, 0.35)
            x += cfg.motion_speed * np.cos(heading)
            y += cfg.motion_speed * np.sin(heading)
            # Reflect at the margins; the heading flips with the coordinate so
            # the walk stays smooth instead of sticking to the border.
            if x < x_lo or x > x_hi:
                x = np.clip(2 * x_lo - x if x < x_lo else 2 * x_hi - x, x_lo, x_hi)
                heading = np.pi - heading
            if y < y_lo or y > y_hi:
                y = np.clip(2 * y_lo - y if y < y_lo else 2 * y_hi - y, y_lo, y_hi)
                heading = -heading

        if occ_left > 0:
            occ_left -= 1
        else:
            occ_keep = 1.0
            if rng.random() < cfg.occlusion_rate:
                occ_left = int(rng.integers(3, 7)) - 1
                occ_keep = float(rng.uniform(0.6, 0.9))

        scale = 1.0 + _SCALE_AMP * np.sin(2.0 * np.pi * t / cfg.frame_count + scale_phase)
        radius = base_radius * scale * np.sqrt(occ_keep)

        dx = xs - x
        dy = ys - y
        theta = np.arctan2(dy, dx)
        boundary = np.ones_like(theta)
        for h, a, p0, rate in zip(_HARMONICS, amps, phases0, _PHASE_RATES):
            boundary += a * np.cos(h * theta + p0 + rate * cfg.deform_freq * t)
        mask = dx * dx + dy * dy <= (radius * boundary) ** 2
        if not mask.any():
            raise ValueError(f"lesion vanished at frame {t} (seed {seed})")
        masks[t] = mask
        cxs[t], cys[t] = x, y
        scales[t] = scale
        phase_track[t] = phases0[0] + _PHASE_RATES[0] * cfg.deform_freq * t
        keeps[t] = occ_keep

    trace = MotionTrace(cxs, cys, scales, phase_track, keeps)
    name = clip_id if clip_id is not None else f"clip-{seed:016x}"
    return Clip(id=name, seed=int(seed), masks=masks, trace=trace)


def generate_dataset(cfg: ClipConfig, n_clips: int, seed: int,
                     prefix: str = "clip") -> list[Clip]:
    """Generate ``n_clips`` clips; clip i uses seed derive_seed(seed, i)."""
    if n_clips < 1:
        raise ValueError("need at least one clip")
    return [
        generate_clip(cfg, derive_seed(seed, i), f"{prefix}-{i:03d}")
        for i in range(n_clips)
    ]


def rle_encode(mask) -> np.ndarray:
    """Run-length encode a mask row-major; the first run counts zeros."""
    flat = np.asarray(mask, dtype=bool).ravel().astype(np.uint8)
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds)
    if flat[0] == 1:
        runs = np.concatenate([[0], runs])
    return runs.astype(np.uint32)


def rle_decode(runs, height: int, width: int) -> np.ndarray:
    runs = np.asarray(runs, dtype=np.int64)
    if runs.sum() != height * width:
        raise ValueError("run lengths do not match the frame size")
    values = (np.arange(runs.size) % 2).astype(bool)
    return np.repeat(values, runs).reshape(height, width)


def _encode_clip_record(clip: Clip) -> bytes:
    parts = [struct.pack("<I", clip.frame_count)]
    for t in range(clip.frame_count):
        runs = rle_encode(clip.masks[t])
        parts.append(struct.pack("<I", runs.size))
        parts.append(runs.astype("<u4").tobytes())
    trace = np.stack([
        clip.trace.centroid_x,
        clip.trace.centroid_y,
        clip.trace.scale,
        clip.trace.phase,
        clip.trace.occlusion_keep,
    ], axis=1)
    parts.append(trace.astype("<f8").tobytes())
    return b"".join(parts)


def _decode_clip_record(buf: bytes, entry: dict) -> Clip:
    height, width = entry["height"], entry["width"]
    pos = 0
    (frame_count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    if frame_count != entry["frame_count"]:
        raise ValueError(f"clip {entry['id']}: frame count mismatch in record")
    masks = np.empty((frame_count, height, width), dtype=bool)
    for t in range(frame_count):
        (n_runs,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        runs = np.frombuffer(buf, dtype="<u4", count=n_runs, offset=pos)
        pos += 4 * n_runs
        masks[t] = rle_decode(runs, height, width)
    trace_flat = np.frombuffer(buf, dtype="<f8", count=frame_count * 5, offset=pos)
    cols = trace_flat.reshape(frame_count, 5)
    trace = MotionTrace(
        cols[:, 0].copy(), cols[:, 1].copy(), cols[:, 2].copy(),
        cols[:, 3].copy(), cols[:, 4].copy(),
    )
    return Clip(id=entry["id"], seed=int(entry["seed"]), masks=masks, trace=trace)


def write_dataset(path, clips, *, clip_config: ClipConfig, master_seed: int,
                  n_train: int, n_eval: int, config_hash: str = "",
                  tool_version: str = "") -> None:
    """Write clips to one container file: a JSON header plus RLE mask records."""
    if n_train + n_eval != len(clips):
        raise ValueError("split sizes do not sum to the clip count")
    records = []
    index = []
    offset = 0
    for clip in clips:
        rec = _encode_clip_record(clip)
        index.append({
            "id": clip.id,
            "seed": clip.seed,
            "frame_count": clip.frame_count,
            "height": clip.height,
            "width": clip.width,
            "offset": offset,
            "nbytes": len(rec),
        })
        records.append(rec)
        offset += len(rec)
    header = {
        "format": "rpds-1",
        "tool_version": tool_version,
        "config_hash": config_hash,
        "master_seed": int(master_seed),
        "n_train": int(n_train),
        "n_eval": int(n_eval),
        "clip_config": asdict(clip_config),
        "clips": index,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for rec in records:
            fh.write(rec)


def read_dataset_header(path) -> dict:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a dataset file (bad magic)")
        (blob_len,) = struct.unpack("<I", fh.read(4))
        return json.loads(fh.read(blob_len).decode("utf-8"))


def read_dataset(path) -> tuple[dict, list[Clip]]:
    """Read a dataset container back into (header, clips)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:len(_MAGIC)] != _MAGIC:
        raise ValueError(f"{path}: not a dataset file (bad magic)")
    (blob_len,) = struct.unpack_from("<I", data, len(_MAGIC))
    base = len(_MAGIC) + 4 + blob_len
    header = json.loads(data[len(_MAGIC) + 4:base].decode("utf-8"))
    clips = []
    for entry in header["clips"]:
        start = base + entry["offset"]
        clips.append(_decode_clip_record(data[start:start + entry["nbytes"]], entry))
    return header, clips
