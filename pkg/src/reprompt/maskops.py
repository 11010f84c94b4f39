"""Binary mask primitives: overlap metrics, prompt geometry, and a seeded
corruption operator that degrades a mask to a requested Dice overlap.

A mask is a 2-D numpy bool array of shape (height, width); True marks the
lesion. Every function here is a pure function of its arguments, seeds
included, so concurrent callers never interfere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import distance_transform_edt

# Corruption knobs. The band width sets how fast flip priority grows with
# distance from the shifted boundary; 30 halvings of the strength interval
# resolve the flip threshold well below one pixel of granularity.
_BAND_WIDTH = 2.0
_BISECT_STEPS = 30
DICE_TOLERANCE = 0.02


class CorruptionError(ValueError):
    """No flip strength reached the requested Dice target.

    ``best_dice`` holds the closest overlap that was achievable.
    """

    def __init__(self, message: str, best_dice: float):
        super().__init__(message)
        self.best_dice = float(best_dice)


@dataclass(frozen=True)
class BoxPrompt:
    """Axis-aligned box in inclusive pixel coordinates."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"degenerate box {self}")
        if min(self.x_min, self.y_min) < 0:
            raise ValueError(f"box extends past the frame origin: {self}")


@dataclass(frozen=True, eq=False)
class PointPrompt:
    """Click prompt: an (n, 2) array of (x, y) pixel coordinates.

    ``labels`` marks each click as positive (1) or negative (0). The default
    protocol uses three positive clicks inside the lesion.
    """

    points: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.int64).reshape(-1, 2)
        lab = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if pts.shape[0] != lab.shape[0]:
            raise ValueError("points and labels differ in length")
        if pts.shape[0] == 0:
            raise ValueError("point prompt needs at least one click")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", lab)


def as_mask(arr) -> np.ndarray:
    """Validate and return ``arr`` as a 2-D bool mask.

    Accepts bool arrays directly and integer arrays whose values are all
    0 or 1. Anything else is rejected rather than coerced, so accidental
    probability maps cannot slip through.
    """
    m = np.asarray(arr)
    if m.ndim != 2 or m.size == 0:
        raise ValueError(f"mask must be a nonempty 2-D array, got shape {m.shape}")
    if m.dtype == bool:
        return m
    if np.issubdtype(m.dtype, np.integer):
        if np.isin(m, (0, 1)).all():
            return m.astype(bool)
        raise ValueError("integer mask contains values other than 0 and 1")
    raise ValueError(f"mask dtype must be bool or binary integer, got {m.dtype}")


def dice(a, b) -> float:
    """Dice overlap 2|a&b| / (|a|+|b|); two empty masks count as 1.0."""
    a = as_mask(a)
    b = as_mask(b)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    denom = int(a.sum()) + int(b.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / denom


def tight_box(mask) -> BoxPrompt:
    """Smallest axis-aligned box containing every foreground pixel."""
    m = as_mask(mask)
    ys, xs = np.nonzero(m)
    if ys.size == 0:
        raise ValueError("cannot fit a box around an empty mask")
    return BoxPrompt(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))


def box_mask(box: BoxPrompt, height: int, width: int) -> np.ndarray:
    """Rasterize a box prompt as a filled mask on a (height, width) frame."""
    if box.x_max >= width or box.y_max >= height:
        raise ValueError(f"box {box} exceeds frame bounds {height}x{width}")
    out = np.zeros((height, width), dtype=bool)
    out[box.y_min:box.y_max + 1, box.x_min:box.x_max + 1] = True
    return out


def sample_clicks(mask, n: int = 3, seed: int = 0) -> PointPrompt:
    """Sample ``n`` distinct positive clicks on the mask foreground.

    The first click is the foreground pixel closest to the foreground
    centroid (ties broken lexicographically by (y, x)), which keeps the
    primary click stable under small boundary changes. The remaining
    clicks are drawn uniformly without replacement, seeded.
    """
    m = as_mask(mask)
    if n < 1:
        raise ValueError("click count must be at least 1")
    ys, xs = np.nonzero(m)
    if ys.size < n:
        raise ValueError(f"mask has {ys.size} foreground pixels, need {n}")
    cx = xs.mean()
    cy = ys.mean()
    d2 = (xs - cx) ** 2 + (ys - cy) ** 2
    order = np.lexsort((xs, ys, d2))
    first = order[0]
    rest = np.delete(np.arange(ys.size), first)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(rest, size=n - 1, replace=False) if n > 1 else []
    idx = np.concatenate([[first], np.asarray(chosen, dtype=np.int64)])
    points = np.stack([xs[idx], ys[idx]], axis=1)
    return PointPrompt(points=points, labels=np.ones(n, dtype=np.int64))


def shift_mask(mask, drift) -> np.ndarray:
    """Translate a mask by whole pixels; content pushed past the border is lost."""
    m = as_mask(mask)
    dx, dy = int(drift[0]), int(drift[1])
    h, w = m.shape
    out = np.zeros_like(m)
    x0, x1 = max(0, dx), min(w, w + dx)
    y0, y1 = max(0, dy), min(h, h + dy)
    if x0 < x1 and y0 < y1:
        out[y0:y1, x0:x1] = m[y0 - dy:y1 - dy, x0 - dx:x1 - dx]
    return out


def corrupt_to_dice(gt, target: float, drift=(0, 0), seed: int = 0) -> np.ndarray:
    """Produce a corrupted copy of ``gt`` whose Dice against ``gt`` is ``target``.

    The ground truth is first translated by ``drift`` pixels, then pixels in
    a band around the shifted boundary are flipped: true-positive pixels may
    turn off and pixels outside both masks may turn on, so Dice decreases
    strictly as the flip set grows. The flip strength is found by bisection
    (at most 30 steps) against a fixed seeded noise field, which makes the
    result a pure function of (gt, target, drift, seed).

    Post: |dice(result, gt) - target| <= 0.02 whenever target >= 0.05, else
    CorruptionError carrying the best achievable Dice. target=1.0 with zero
    drift returns the ground truth itself.
    """
    gt = as_mask(gt)
    if not 0.0 <= target <= 1.0:
        raise ValueError(f"target dice must lie in [0, 1], got {target}")
    if not gt.any():
        raise ValueError("cannot corrupt an empty mask")
    drift = (int(drift[0]), int(drift[1]))
    if target >= 1.0 and drift == (0, 0):
        return gt.copy()

    shifted = shift_mask(gt, drift)
    if not shifted.any():
        raise CorruptionError("drift moved the mask fully off frame", 0.0)

    n_gt = int(gt.sum())
    base_inter = int((shifted & gt).sum())
    base_size = int(shifted.sum())

    # Flip pools. Restricting flips to true positives (off) and pixels outside
    # both masks (on) makes Dice strictly decreasing in the flip count, so the
    # threshold search cannot stall on a flat spot.
    pool_off = shifted & gt
    pool_on = ~(shifted | gt)
    pool = pool_off | pool_on

    inside = distance_transform_edt(shifted)
    outside = distance_transform_edt(~shifted)
    dist = np.where(shifted, inside, outside)

    rng = np.random.default_rng(seed)
    noise = rng.random(gt.shape)
    # Pixels near the shifted boundary flip at low strength, far pixels only
    # at high strength, so mid-range targets produce boundary-band errors.
    priority = noise * (1.0 + dist / _BAND_WIDTH)

    flat_pool = np.flatnonzero(pool.ravel())
    q = priority.ravel()[flat_pool]
    is_off = pool_off.ravel()[flat_pool]
    order = np.argsort(q, kind="stable")
    q_sorted = q[order]
    off_sorted = is_off[order]

    cum_off = np.concatenate([[0], np.cumsum(off_sorted)])
    cum_on = np.concatenate([[0], np.cumsum(~off_sorted)])
    inter_after = base_inter - cum_off
    size_after = base_size - cum_off + cum_on
    dice_after = 2.0 * inter_after / (size_after + n_gt)

    best_n = 0
    best_err = abs(dice_after[0] - target)
    tail_err = abs(dice_after[-1] - target)
    if tail_err < best_err:
        best_n, best_err = dice_after.size - 1, tail_err

    lo, hi = 0.0, float(q_sorted[-1]) + 1.0
    for _ in range(_BISECT_STEPS):
        mid = 0.5 * (lo + hi)
        n = int(np.searchsorted(q_sorted, mid, side="left"))
        err = abs(dice_after[n] - target)
        if err < best_err:
            best_n, best_err = n, err
        if dice_after[n] > target:
            lo = mid
        else:
            hi = mid

    if best_err > DICE_TOLERANCE:
        raise CorruptionError(
            f"target dice {target:.4f} unreachable, best {dice_after[best_n]:.4f} "
            f"(drift {drift}, start {dice_after[0]:.4f})",
            dice_after[best_n],
        )

    out = shifted.copy().ravel()
    flip = flat_pool[order[:best_n]]
    out[flip] = ~out[flip]
    return out.reshape(gt.shape)


def mask_to_pgm(mask) -> bytes:
    """Serialize a mask as binary PGM (P5), foreground 255 and background 0."""
    m = as_mask(mask)
    h, w = m.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    return header + (m.astype(np.uint8) * 255).tobytes()


def mask_from_pgm(data: bytes) -> np.ndarray:
    """Parse a binary PGM produced by :func:`mask_to_pgm`.

    Values above 127 map to foreground, so files round-trip exactly and
    antialiased imports degrade loudly rather than silently (any value not
    in {0, 255} is rejected).
    """
    if not data.startswith(b"P5"):
        raise ValueError("not a binary PGM (missing P5 magic)")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1  # single whitespace byte before the raster
    w, h, maxval = (int(f) for f in fields)
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval}")
    raster = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos)
    if raster.size != w * h:
        raise ValueError("truncated PGM raster")
    if not np.isin(raster, (0, 255)).all():
        raise ValueError("PGM raster is not binary (values other than 0/255)")
    return (raster > 127).reshape(h, w)
