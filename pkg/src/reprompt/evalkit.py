"""Benchmark evaluation: strategy reports, error-propagation curves, a
correction-cost sweep, and a paired Wilcoxon signed-rank test.

Everything here is deterministic given the clips and seeds, and per-clip
work is embarrassingly parallel: results are assembled in input order, so
the thread count never changes any output byte.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .deferral import CostSpec, CostTable, build_cost_table, deferral_loss, reprice, segmentation_error
from .policy import TrainConfig, evenly_spaced_frames, extract_features, train
from .propagator import PromptDynamics, dice_trace, make_prompt, propagate
from .seeds import derive_seed
from .strategies import Strategy, select


class WilcoxonResult(NamedTuple):
    statistic: float   # sum of ranks of positive differences
    p_value: float
    n_effective: int   # pairs remaining after zero differences are dropped


@dataclass(frozen=True, eq=False)
class EvalReport:
    """Per-clip outcomes of one strategy on one prompt kind."""

    strategy: str
    prompt_kind: str
    lambda_corr: float
    clip_ids: tuple[str, ...]
    final_dice: np.ndarray
    deferral_frames: np.ndarray
    deferral_losses: np.ndarray
    dataset_seed: int
    config_hash: str = ""

    @property
    def mean_dice(self) -> float:
        return float(np.mean(self.final_dice))

    @property
    def std_dice(self) -> float:
        return float(np.std(self.final_dice, ddof=1)) if self.final_dice.size > 1 else 0.0

    @property
    def deferral_rate(self) -> float:
        return float(np.mean(self.deferral_frames != 0))

    @property
    def mean_deferral_loss(self) -> float:
        return float(np.mean(self.deferral_losses))


@dataclass(frozen=True, eq=False)
class ErrorCurve:
    """Per-frame mean Dice loss across clips for one prompt kind."""

    prompt_kind: str
    raw_loss: np.ndarray
    smoothed_loss: np.ndarray
    ci_half_width: np.ndarray
    n_clips: int


@dataclass(frozen=True)
class SweepPoint:
    lambda_corr: float
    mean_dice: float
    std_dice: float
    deferral_rate: float


def _map_ordered(fn: Callable, items: Sequence, threads: int) -> list:
    """Apply ``fn`` per item, optionally on a thread pool, preserving order."""
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def propagate_initial(clips, kind: str, dyn: PromptDynamics, threads: int = 1) -> list:
    """Initial-prompt propagation for every clip (prompt at frame 0)."""
    def work(clip):
        p0 = make_prompt(clip, 0, kind, derive_seed(clip.seed, "prompt", 0))
        return propagate(clip, [p0], dyn, clip.seed)
    return _map_ordered(work, clips, threads)


def build_tables(clips, kind: str, candidates: Sequence[int], spec: CostSpec,
                 dyn: PromptDynamics, threads: int = 1,
                 initial_results: Sequence | None = None) -> list[CostTable]:
    """Cost tables for every clip, reusing initial propagations when given."""
    results = initial_results or [None] * len(clips)
    def work(pair):
        clip, r0 = pair
        return build_cost_table(clip, kind, candidates, spec, dyn,
                                initial_result=r0)
    return _map_ordered(work, list(zip(clips, results)), threads)


def features_for(clips, results, sample_frames: Sequence[int], threads: int = 1) -> list[np.ndarray]:
    def work(pair):
        clip, r0 = pair
        return extract_features(clip, r0, sample_frames)
    return _map_ordered(work, list(zip(clips, results)), threads)


def quality_targets(clip, result, sample_frames: Sequence[int]) -> np.ndarray:
    """Measured per-sampled-frame Dice, the quality regressor's target."""
    trace = dice_trace(result, clip)
    return trace[np.asarray(sample_frames, dtype=np.int64)]


def evaluate(clips, strategy: Strategy, kind: str, spec: CostSpec,
             dyn: PromptDynamics, seed: int, sample_count: int = 10,
             tables: Sequence[CostTable] | None = None,
             initial_results: Sequence | None = None,
             threads: int = 1, config_hash: str = "") -> EvalReport:
    """Run one strategy over the clips and collect per-clip outcomes.

    The realized deferral loss re-measures the chosen propagation, so the
    oracle's optimality over any other strategy is exact rather than
    approximate. ``seed`` feeds only strategy-level randomness; propagation
    noise is keyed by each clip's own seed.
    """
    if not clips:
        raise ValueError("no clips to evaluate")
    if tables is not None and len(tables) != len(clips):
        raise ValueError("one cost table per clip required")
    results = initial_results or [None] * len(clips)

    def work(i):
        clip = clips[i]
        frames = evenly_spaced_frames(clip.frame_count, sample_count)
        candidates = frames[1:]
        r0 = results[i]
        if r0 is None:
            p0 = make_prompt(clip, 0, kind, derive_seed(clip.seed, "prompt", 0))
            r0 = propagate(clip, [p0], dyn, clip.seed)
        table = tables[i] if tables is not None else None
        if strategy.kind == "oracle" and table is None:
            table = build_cost_table(clip, kind, candidates, spec, dyn,
                                     initial_result=r0)
        if table is not None and table.spec != spec:
            table = reprice(table, spec)
        choice = select(strategy, clip, r0, candidates, seed, table=table)
        if choice == 0:
            final = r0
        else:
            p0 = make_prompt(clip, 0, kind, derive_seed(clip.seed, "prompt", 0))
            pk = make_prompt(clip, choice, kind, derive_seed(clip.seed, "prompt", choice))
            final = propagate(clip, [p0, pk], dyn, clip.seed)
        err = segmentation_error(final, clip)
        loss = spec.base_cost + err
        if choice != 0:
            loss += spec.correction_cost
        return clip.id, 1.0 - err, choice, loss

    rows = _map_ordered(work, list(range(len(clips))), threads)
    return EvalReport(
        strategy=strategy.kind,
        prompt_kind=kind,
        lambda_corr=spec.correction_cost,
        clip_ids=tuple(r[0] for r in rows),
        final_dice=np.array([r[1] for r in rows]),
        deferral_frames=np.array([r[2] for r in rows], dtype=np.int64),
        deferral_losses=np.array([r[3] for r in rows]),
        dataset_seed=seed,
        config_hash=config_hash,
    )


def _smooth(values: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average; the window clips at the boundaries."""
    if window < 1:
        raise ValueError("window must be at least 1")
    n = values.size
    half_lo = (window - 1) // 2
    half_hi = window // 2
    out = np.empty(n)
    for t in range(n):
        lo = max(0, t - half_lo)
        hi = min(n, t + half_hi + 1)
        out[t] = values[lo:hi].mean()
    return out


def error_curve(clips, kind: str, dyn: PromptDynamics, seed: int = 0,
                window: int = 20, threads: int = 1,
                initial_results: Sequence | None = None) -> ErrorCurve:
    """Mean per-frame Dice loss under initial-prompt propagation.

    The confidence band is a normal approximation, 1.96 * std / sqrt(n)
    per frame across clips. ``seed`` is recorded by callers but the
    propagation noise itself is keyed by each clip's seed.
    """
    if not clips:
        raise ValueError("no clips")
    frame_count = clips[0].frame_count
    if any(c.frame_count != frame_count for c in clips):
        raise ValueError("clips disagree on frame count")
    results = initial_results
    if results is None:
        results = propagate_initial(clips, kind, dyn, threads)
    losses = np.stack([
        1.0 - dice_trace(r, c) for c, r in zip(clips, results)
    ])
    raw = losses.mean(axis=0)
    std = losses.std(axis=0, ddof=1) if len(clips) > 1 else np.zeros(frame_count)
    ci = 1.96 * std / math.sqrt(len(clips))
    return ErrorCurve(prompt_kind=kind, raw_loss=raw,
                      smoothed_loss=_smooth(raw, window),
                      ci_half_width=ci, n_clips=len(clips))


def _midranks(values: np.ndarray) -> np.ndarray:
    """Ranks starting at 1; tied values share the average of their ranks."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def wilcoxon_signed_rank(a, b) -> WilcoxonResult:
    """Two-sided paired Wilcoxon signed-rank test.

    Zero differences are dropped. With 20 or fewer informative pairs the
    null distribution of the positive-rank sum is enumerated exactly via a
    subset-sum count (ties handled through midranks); beyond that a normal
    approximation with tie and continuity corrections is used. The
    two-sided p doubles the smaller tail, capped at 1.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("need two equal-length 1-D samples")
    d = a - b
    d = d[d != 0.0]
    n = d.size
    if n == 0:
        return WilcoxonResult(0.0, 1.0, 0)
    if n < 5:
        raise ValueError(f"need at least 5 nonzero differences, got {n}")

    ranks = _midranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())

    if n <= 20:
        # Midranks are multiples of 1/2, so doubling makes them integers and
        # the null distribution is an exact integer subset-sum count.
        r2 = np.rint(2.0 * ranks).astype(np.int64)
        counts = np.zeros(int(r2.sum()) + 1, dtype=np.int64)
        counts[0] = 1
        for r in r2:
            shifted = counts[:-r].copy()
            counts[r:] += shifted
        w2 = int(round(2.0 * w_plus))
        total = float(2 ** n)
        p_le = counts[:w2 + 1].sum() / total
        p_ge = counts[w2:].sum() / total
        p = min(1.0, 2.0 * min(p_le, p_ge))
        return WilcoxonResult(w_plus, p, n)

    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    tie_term = float(np.sum(tie_counts.astype(np.float64) ** 3 - tie_counts)) / 48.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term
    if var <= 0:
        return WilcoxonResult(w_plus, 1.0, n)
    diff = w_plus - mean
    cc = 0.5 * np.sign(diff)
    z = (diff - cc) / math.sqrt(var)
    p = min(1.0, math.erfc(abs(z) / math.sqrt(2.0)))
    return WilcoxonResult(w_plus, p, n)


def lambda_sweep(train_clips, eval_clips, kind: str, lambdas: Sequence[float],
                 dyn: PromptDynamics, base_spec: CostSpec, train_cfg: TrainConfig,
                 seed: int, sample_count: int = 10,
                 train_tables: Sequence[CostTable] | None = None,
                 train_results: Sequence | None = None,
                 eval_results: Sequence | None = None,
                 threads: int = 1) -> list[SweepPoint]:
    """Retrain and re-evaluate the learned policy across correction costs.

    Measured errors are reused across the sweep (they do not depend on the
    cost terms); only the cost tables are repriced and the policy retrained.
    """
    lams = [float(v) for v in lambdas]
    if lams != sorted(lams) or len(set(lams)) != len(lams):
        raise ValueError("lambda values must be strictly increasing")
    frame_count = train_clips[0].frame_count
    frames = evenly_spaced_frames(frame_count, sample_count)
    candidates = frames[1:]

    if train_results is None:
        train_results = propagate_initial(train_clips, kind, dyn, threads)
    if train_tables is None:
        train_tables = build_tables(train_clips, kind, candidates, base_spec, dyn,
                                    threads, train_results)
    if eval_results is None:
        eval_results = propagate_initial(eval_clips, kind, dyn, threads)
    feats = features_for(train_clips, train_results, frames, threads)

    points = []
    for lam in lams:
        spec = CostSpec(base_cost=base_spec.base_cost, correction_cost=lam)
        tables = [reprice(t, spec) for t in train_tables]
        model, _ = train(list(zip(feats, tables)), train_cfg, frame_count)
        report = evaluate(eval_clips, Strategy("l2rp", policy=model), kind, spec,
                          dyn, seed, sample_count, initial_results=eval_results,
                          threads=threads)
        points.append(SweepPoint(lambda_corr=lam, mean_dice=report.mean_dice,
                                 std_dice=report.std_dice,
                                 deferral_rate=report.deferral_rate))
    return points


def _write_csv(path, meta: dict | None, header: list[str], rows) -> None:
    buf = io.StringIO()
    for key, value in (meta or {}).items():
        buf.write(f"# {key}: {value}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def write_report_csv(reports: Sequence[EvalReport], path, meta: dict | None = None) -> None:
    rows = []
    for rep in reports:
        for i, cid in enumerate(rep.clip_ids):
            rows.append([
                rep.strategy, rep.prompt_kind, repr(rep.lambda_corr), cid,
                repr(float(rep.final_dice[i])), int(rep.deferral_frames[i]),
                repr(float(rep.deferral_losses[i])),
            ])
    _write_csv(path, meta,
               ["strategy", "prompt_kind", "lambda_corr", "clip_id",
                "final_dice", "deferral_frame", "deferral_loss"], rows)


def write_curves_csv(curves: Sequence[ErrorCurve], path, meta: dict | None = None) -> None:
    rows = []
    for curve in curves:
        for t in range(curve.raw_loss.size):
            rows.append([
                curve.prompt_kind, t, repr(float(curve.raw_loss[t])),
                repr(float(curve.smoothed_loss[t])), repr(float(curve.ci_half_width[t])),
            ])
    _write_csv(path, meta,
               ["prompt_kind", "frame", "raw_loss", "smoothed_loss", "ci_half_width"],
               rows)


def write_sweep_csv(points: Sequence[SweepPoint], path, meta: dict | None = None) -> None:
    rows = [[repr(p.lambda_corr), repr(p.mean_dice), repr(p.std_dice),
             repr(p.deferral_rate)] for p in points]
    _write_csv(path, meta,
               ["lambda_corr", "mean_dice", "std_dice", "deferral_rate"], rows)
