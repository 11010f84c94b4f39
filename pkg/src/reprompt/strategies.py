"""Frame-selection strategies: fixed baselines, learned selectors, and the
exhaustive oracle used as an upper bound in evaluation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .deferral import CostTable, decide
from .policy import (FEATURE_NAMES, MLP, PolicyModel, TrainConfig, extract_features, fit,
                     forward, normalization_stats)
from .seeds import derive_seed

STRATEGY_KINDS = ("initial", "midpoint", "random", "evavos", "l2rp", "oracle")


@dataclass(frozen=True)
class Strategy:
    """A named selection rule plus whatever trained model it needs."""

    kind: str
    policy: PolicyModel | None = None   # used by l2rp
    quality: PolicyModel | None = None  # used by evavos

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy {self.kind!r}")
        if self.kind == "l2rp" and self.policy is None:
            raise ValueError("l2rp strategy needs a trained policy")
        if self.kind == "evavos" and self.quality is None:
            raise ValueError("evavos strategy needs a trained quality model")


def select(strategy: Strategy, clip, result, candidates: Sequence[int],
           seed: int, table: CostTable | None = None) -> int:
    """Pick 0 (accept the propagation) or a candidate frame to correct.

    ``seed`` only feeds the random baseline; the learned strategies are
    deterministic functions of the propagation result.
    """
    cand = tuple(int(c) for c in candidates)
    if not cand:
        raise ValueError("no candidate frames")

    if strategy.kind == "initial":
        return 0

    if strategy.kind == "midpoint":
        mid = clip.last_frame // 2
        dists = [abs(c - mid) for c in cand]
        return cand[dists.index(min(dists))]

    if strategy.kind == "random":
        rng = np.random.default_rng(derive_seed(seed, clip.id, "random-choice"))
        return cand[int(rng.integers(len(cand)))]

    if strategy.kind == "l2rp":
        feats = extract_features(clip, result, (0,) + cand)
        return decide(forward(strategy.policy, feats), cand)

    if strategy.kind == "evavos":
        feats = extract_features(clip, result, (0,) + cand)
        quality = forward(strategy.quality, feats)
        # One predicted quality per sampled frame; frame 0 is never a
        # correction target, and this selector always defers.
        return cand[int(np.argmin(quality[1:]))]

    if strategy.kind == "oracle":
        if table is None:
            raise ValueError("oracle strategy needs a cost table")
        if table.candidates != cand:
            raise ValueError("cost table candidates do not match")
        losses = np.concatenate([[table.accept_cost], table.correction_costs])
        best = int(np.argmin(losses))
        return 0 if best == 0 else cand[best - 1]

    raise AssertionError(f"unhandled strategy {strategy.kind}")


def train_quality_regressor(samples: Sequence[tuple[np.ndarray, np.ndarray]],
                            cfg: TrainConfig, sample_frames: Sequence[int],
                            frame_count: int) -> tuple[PolicyModel, np.ndarray]:
    """Fit a per-frame quality predictor on (features, measured dice) pairs.

    Uses the same network skeleton and Adam loop as the deferral scorer but
    with one squared-error output per sampled frame.
    """
    if not samples:
        raise ValueError("no training samples")
    frames = tuple(int(f) for f in sample_frames)
    feats_list = [np.asarray(f, dtype=np.float64) for f, _ in samples]
    targets = np.stack([np.asarray(y, dtype=np.float64) for _, y in samples])
    expected = (len(frames), len(FEATURE_NAMES))
    if any(f.shape != expected for f in feats_list):
        raise ValueError(f"every feature block must have shape {expected}")
    if targets.shape != (len(samples), len(frames)):
        raise ValueError("one quality target per sampled frame required")

    mean, std = normalization_stats(feats_list)
    x = np.stack([(f - mean) / std for f in feats_list]).reshape(len(feats_list), -1)

    net = MLP((x.shape[1], *cfg.hidden, len(frames)), derive_seed(cfg.seed, "init"))

    def loss_grad(idx, out):
        diff = out - targets[idx]
        loss = np.mean(diff * diff, axis=1)
        return loss, 2.0 * diff / len(frames)

    curve = fit(net, x, loss_grad, cfg)
    model = PolicyModel(net=net, norm_mean=mean, norm_std=std,
                        sample_frames=frames, frame_count=frame_count)
    return model, curve
