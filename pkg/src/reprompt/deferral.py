"""Deferral costs and the trainable-decision machinery around them.

For one clip with an initial prompt at frame 0 and candidate correction
frames k, the discrete deferral loss of a choice is

    accept:      base_cost + error(initial propagation)
    defer at k:  base_cost + correction_cost + error(propagation with both prompts)

where error is the mean Dice loss over all frames. Training needs a smooth
stand-in: scores d_k feed a softmax over the options (accept has fixed
logit 0, candidate k has logit -d_k), and each option contributes its
complement-clamped cost weight times (1 - its probability). The analytic
gradient of that surrogate is exact, which keeps the whole pipeline
checkable against finite differences.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .propagator import dice_trace, make_prompt, propagate
from .seeds import derive_seed


@dataclass(frozen=True)
class CostSpec:
    """Additive cost terms shared by every clip."""

    base_cost: float = 0.0        # charged for any choice, accept included
    correction_cost: float = 0.01  # extra charge when a correction is requested

    def __post_init__(self):
        if self.base_cost < 0 or self.correction_cost < 0:
            raise ValueError("costs must be nonnegative")


@dataclass(frozen=True, eq=False)
class CostTable:
    """Measured errors and derived costs for one clip's options."""

    clip_id: str
    candidates: tuple[int, ...]
    base_error: float             # mean dice loss with only the initial prompt
    corrected_errors: np.ndarray  # same, after adding a correction at each candidate
    spec: CostSpec = CostSpec()

    def __post_init__(self):
        cand = tuple(int(c) for c in self.candidates)
        errs = np.asarray(self.corrected_errors, dtype=np.float64)
        if any(c < 1 for c in cand) or list(cand) != sorted(set(cand)):
            raise ValueError("candidates must be strictly increasing frames >= 1")
        if errs.shape != (len(cand),):
            raise ValueError("one corrected error per candidate required")
        if not 0.0 <= self.base_error <= 1.0 or ((errs < 0) | (errs > 1)).any():
            raise ValueError("errors must lie in [0, 1]")
        object.__setattr__(self, "candidates", cand)
        object.__setattr__(self, "corrected_errors", errs)

    @property
    def accept_cost(self) -> float:
        return self.spec.base_cost + self.base_error

    @property
    def correction_costs(self) -> np.ndarray:
        return self.spec.base_cost + self.spec.correction_cost + self.corrected_errors


def reprice(table: CostTable, spec: CostSpec) -> CostTable:
    """Rebuild a table's costs under a different CostSpec.

    Measured errors do not depend on the cost terms, so sweeping the
    correction cost never re-propagates anything.
    """
    return replace(table, spec=spec)


def segmentation_error(result, clip) -> float:
    """Mean Dice loss of a propagation over all frames, prompted ones included."""
    trace = dice_trace(result, clip)
    return float(np.mean(1.0 - trace))


def build_cost_table(clip, kind: str, candidates: Sequence[int], spec: CostSpec,
                     dyn, seed: int | None = None, initial_result=None) -> CostTable:
    """Measure the full option menu for one clip by brute propagation.

    ``seed`` defaults to the clip's own seed; keeping that convention across
    cost building, feature extraction, and evaluation makes the measured
    errors identical everywhere they are recomputed.
    """
    cand = tuple(int(c) for c in candidates)
    if any(not 1 <= c <= clip.last_frame for c in cand):
        raise ValueError("candidates must be interior or final frames of the clip")
    if seed is None:
        seed = clip.seed
    p0 = make_prompt(clip, 0, kind, derive_seed(seed, "prompt", 0))
    r0 = initial_result
    if r0 is None:
        r0 = propagate(clip, [p0], dyn, seed)
    base_error = segmentation_error(r0, clip)
    corrected = np.empty(len(cand))
    for i, k in enumerate(cand):
        pk = make_prompt(clip, k, kind, derive_seed(seed, "prompt", k))
        rk = propagate(clip, [p0, pk], dyn, seed)
        corrected[i] = segmentation_error(rk, clip)
    return CostTable(clip_id=clip.id, candidates=cand, base_error=base_error,
                     corrected_errors=corrected, spec=spec)


def deferral_loss(choice: int, table: CostTable) -> float:
    """Cost actually paid for a choice: 0 accepts, a candidate frame defers."""
    if choice == 0:
        return float(table.accept_cost)
    if choice not in table.candidates:
        raise ValueError(f"choice {choice} is not among candidates {table.candidates}")
    return float(table.correction_costs[table.candidates.index(choice)])


def complement_costs(table: CostTable) -> np.ndarray:
    """Clamped complement weights, index 0 for accept then one per candidate.

    Costs are complemented (1 - cost) and clamped to [0, 1] so that cheap
    options carry large weights; a prohibitive correction cost zeroes out
    its candidates entirely.
    """
    costs = np.concatenate([[table.accept_cost], table.correction_costs])
    return np.clip(1.0 - costs, 0.0, 1.0)


def _check_scores(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1:
        raise ValueError("scores must be a 1-D vector")
    if not np.isfinite(s).all():
        raise ValueError("scores must be finite")
    return s


def option_probabilities(scores) -> np.ndarray:
    """Softmax over the option menu: accept logit 0, candidate k logit -d_k.

    Index 0 is the accept option. Logits are shifted by their maximum before
    exponentiation, so extreme scores cannot overflow.
    """
    s = _check_scores(scores)
    logits = np.concatenate([[0.0], -s])
    e = np.exp(logits - logits.max())
    return e / e.sum()


def surrogate_mae(scores, weights) -> float:
    """Smooth deferral loss: sum of weight_i * (1 - p_i) over the options.

    ``weights`` has one entry per option (accept first), normally the
    complement costs. Because the probabilities sum to one, the bracket
    terms (1 - p_i) always sum to the candidate count exactly, which makes
    a cheap structural check for the test suite.
    """
    p = option_probabilities(scores)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != p.shape:
        raise ValueError(f"need {p.size} weights, got {w.shape}")
    if not np.isfinite(w).all():
        raise ValueError("weights must be finite")
    return float(np.sum(w * (1.0 - p)))


def surrogate_grad(scores, weights) -> np.ndarray:
    """Analytic gradient of :func:`surrogate_mae` with respect to the scores.

    With p the option probabilities and w the weights,
    dL/dd_k = p_k * (w_k - sum_i w_i p_i); derived from the softmax Jacobian
    and the sign flip between score and logit.
    """
    p = option_probabilities(scores)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != p.shape:
        raise ValueError(f"need {p.size} weights, got {w.shape}")
    return p[1:] * (w[1:] - float(w @ p))


def batch_surrogate(scores: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise surrogate loss and gradient for a batch of score vectors.

    Same math as the scalar functions, vectorized for the training loop.
    Returns (loss per row, dL/dscores per row).
    """
    s = np.asarray(scores, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if s.ndim != 2 or w.shape != (s.shape[0], s.shape[1] + 1):
        raise ValueError("scores must be (B, K) and weights (B, K+1)")
    logits = np.concatenate([np.zeros((s.shape[0], 1)), -s], axis=1)
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    p = e / e.sum(axis=1, keepdims=True)
    loss = np.sum(w * (1.0 - p), axis=1)
    inner = np.sum(w * p, axis=1, keepdims=True)
    grad = p[:, 1:] * (w[:, 1:] - inner)
    return loss, grad


def decide(scores, candidates: Sequence[int]) -> int:
    """Inference rule: accept when every score is positive, else defer.

    Deferral goes to the candidate with the smallest score; ties resolve
    toward the smallest frame index, and a score tied with the implicit
    zero of the accept option still defers.
    """
    s = _check_scores(scores)
    cand = tuple(int(c) for c in candidates)
    if s.size != len(cand):
        raise ValueError("one score per candidate required")
    if s.size == 0:
        return 0
    if s.min() > 0.0:
        return 0
    return cand[int(np.argmin(s))]


def write_cost_tables_csv(tables: Sequence[CostTable], path, meta: dict | None = None) -> None:
    """Write tables as CSV with `# key: value` header comments.

    Columns: clip_id, candidate_frame, ell_0, ell_0k, c_prop, c_corr. The
    measured-error columns are cost-independent; the cost columns reflect
    the CostSpec each table currently carries.
    """
    buf = io.StringIO()
    for key, value in (meta or {}).items():
        buf.write(f"# {key}: {value}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["clip_id", "candidate_frame", "ell_0", "ell_0k", "c_prop", "c_corr"])
    for table in tables:
        for i, k in enumerate(table.candidates):
            writer.writerow([
                table.clip_id, k,
                repr(table.base_error), repr(float(table.corrected_errors[i])),
                repr(table.accept_cost), repr(float(table.correction_costs[i])),
            ])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def read_cost_tables_csv(path) -> tuple[dict, list[CostTable]]:
    """Read tables written by :func:`write_cost_tables_csv`.

    Costs are rebuilt from the measured errors plus the lambda values in the
    meta comments, so a stale cost column cannot silently win over the spec.
    """
    meta: dict = {}
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                meta[key.strip()] = value.strip()
            else:
                rows.append(line)
    spec = CostSpec(base_cost=float(meta.get("lambda_base", 0.0)),
                    correction_cost=float(meta.get("lambda_corr", 0.01)))
    reader = csv.DictReader(rows)
    per_clip: dict[str, dict] = {}
    order: list[str] = []
    for row in reader:
        cid = row["clip_id"]
        if cid not in per_clip:
            per_clip[cid] = {"candidates": [], "errors": [], "base": float(row["ell_0"])}
            order.append(cid)
        per_clip[cid]["candidates"].append(int(row["candidate_frame"]))
        per_clip[cid]["errors"].append(float(row["ell_0k"]))
    tables = [
        CostTable(clip_id=cid, candidates=tuple(per_clip[cid]["candidates"]),
                  base_error=per_clip[cid]["base"],
                  corrected_errors=np.array(per_clip[cid]["errors"]), spec=spec)
        for cid in order
    ]
    return meta, tables
