"""Trainable deferral scorer.

Six hand-crafted drift features are read off the initial propagation at a
small set of sampled frames, concatenated, and fed to a small tanh network
that emits one score per candidate frame. Training minimizes the smooth
deferral surrogate with plain Adam, deterministically per seed; gradients
are exact and the whole network is finite-difference checkable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import json
import struct

import numpy as np

from . import __version__
from .deferral import CostTable, batch_surrogate, complement_costs, surrogate_grad, surrogate_mae
from .seeds import derive_seed

_CKPT_MAGIC = b"RPCK0001"

FEATURE_NAMES = (
    "temporal_iou",    # IoU with the previous sampled frame's prediction
    "area",            # predicted area / frame area
    "area_ratio",      # predicted area / previous sampled predicted area
    "boundary_ratio",  # exposed boundary edges / predicted area
    "centroid_shift",  # centroid displacement / frame diagonal
    "position",        # frame index / last frame
)
_AREA_RATIO_CAP = 5.0


class TrainingError(RuntimeError):
    """Raised when a training run produces non-finite or rising loss."""


@dataclass(frozen=True)
class TrainConfig:
    """Adam settings. The defaults suit this desk-scale workbench; a learning
    rate near 1e-7 is the reference setting when the scorer sits on top of a
    large pretrained video backbone instead of these synthetic features."""

    learning_rate: float = 1e-2
    batch_size: int = 16
    epochs: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    hidden: tuple[int, ...] = (32, 32)

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning rate must be nonnegative")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch size and epochs must be at least 1")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1 or self.eps <= 0:
            raise ValueError("invalid Adam moment settings")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))


class MLP:
    """Fully connected network: affine-tanh pairs, then a linear output."""

    def __init__(self, sizes: Sequence[int], seed: int):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2 or any(s < 1 for s in self.sizes):
            raise ValueError(f"bad layer sizes {self.sizes}")
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            self.weights.append(rng.normal(0.0, 1.0 / np.sqrt(fan_in), (fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        out, _ = self.forward_cached(x)
        return out

    def forward_cached(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Forward pass keeping post-activation values for backprop."""
        acts = [np.asarray(x, dtype=np.float64)]
        h = acts[0]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i != last:
                h = np.tanh(h)
            acts.append(h)
        return h, acts

    def backward(self, acts: list[np.ndarray], grad_out: np.ndarray) -> list[np.ndarray]:
        """Gradients for every parameter given dL/d(output), summed over rows.

        The caller controls batch scaling by pre-dividing ``grad_out``.
        Returns gradients in :meth:`parameters` order.
        """
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        delta = np.asarray(grad_out, dtype=np.float64)
        for i in reversed(range(len(self.weights))):
            grads_w[i] = acts[i].T @ delta
            grads_b[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i].T) * (1.0 - acts[i] ** 2)
        out = []
        for gw, gb in zip(grads_w, grads_b):
            out.extend((gw, gb))
        return out


@dataclass(frozen=True, eq=False)
class PolicyModel:
    """A trained frame scorer plus everything needed to apply it.

    Normalization statistics are frozen from the training set; the same
    container also serves the quality regressor, which differs only in
    emitting one output per sampled frame instead of per candidate.
    """

    net: MLP
    norm_mean: np.ndarray   # per feature, over training samples and frames
    norm_std: np.ndarray
    sample_frames: tuple[int, ...]
    frame_count: int

    @property
    def candidates(self) -> tuple[int, ...]:
        return self.sample_frames[1:]


def evenly_spaced_frames(frame_count: int, count: int) -> tuple[int, ...]:
    """``count`` frames spread evenly over the clip, always including frame 0."""
    if count < 2:
        raise ValueError("need at least 2 sampled frames")
    if frame_count <= count:
        return tuple(range(frame_count))
    picks = np.linspace(0, frame_count - 1, count)
    return tuple(int(round(p)) for p in picks)


def _mask_stats(mask: np.ndarray) -> tuple[int, float, float, float]:
    """Area, boundary edge count, and centroid of one mask."""
    area = int(mask.sum())
    if area == 0:
        return 0, 0.0, 0.0, 0.0
    padded = np.pad(mask, 1)
    edges = int(np.abs(np.diff(padded.astype(np.int8), axis=0)).sum()
                + np.abs(np.diff(padded.astype(np.int8), axis=1)).sum())
    ys, xs = np.nonzero(mask)
    return area, float(edges), float(xs.mean()), float(ys.mean())


def extract_features(clip, result, sample_frames: Sequence[int]) -> np.ndarray:
    """Per-sampled-frame drift features from an initial propagation.

    Returns an array of shape (len(sample_frames), 6) in FEATURE_NAMES
    order. An empty prediction zeroes everything except the position
    feature; the first sampled frame has no predecessor, so its temporal
    features take their neutral values (IoU 1, area ratio 1, shift 0).
    """
    frames = [int(f) for f in sample_frames]
    if frames[0] != 0 or list(frames) != sorted(set(frames)):
        raise ValueError("sample frames must be strictly increasing and start at 0")
    if frames[-1] >= clip.frame_count:
        raise ValueError("sampled frame outside the clip")

    diag = float(np.hypot(clip.width, clip.height))
    frame_area = float(clip.width * clip.height)
    last = max(clip.frame_count - 1, 1)

    feats = np.zeros((len(frames), len(FEATURE_NAMES)))
    prev_mask = None
    prev_area = 0
    prev_cx = prev_cy = 0.0
    for i, f in enumerate(frames):
        mask = result.pred_masks[f]
        area, edges, cx, cy = _mask_stats(mask)
        feats[i, 5] = f / last
        if area == 0:
            prev_mask, prev_area = mask, 0
            continue
        if i == 0:
            iou, ratio, shift = 1.0, 1.0, 0.0
        elif prev_area == 0:
            iou, ratio, shift = 0.0, 0.0, 0.0
        else:
            union = int((mask | prev_mask).sum())
            iou = int((mask & prev_mask).sum()) / union
            ratio = min(area / prev_area, _AREA_RATIO_CAP)
            shift = float(np.hypot(cx - prev_cx, cy - prev_cy)) / diag
        feats[i, 0] = iou
        feats[i, 1] = area / frame_area
        feats[i, 2] = ratio
        feats[i, 3] = edges / area
        feats[i, 4] = shift
        prev_mask, prev_area, prev_cx, prev_cy = mask, area, cx, cy
    return feats


def normalization_stats(feature_sets: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature mean and std over all samples and frames.

    Zero-variance features get std 1 so normalization stays defined.
    """
    stacked = np.concatenate([np.asarray(f).reshape(-1, len(FEATURE_NAMES))
                              for f in feature_sets], axis=0)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    return mean, std


def normalize_features(model: PolicyModel, feats: np.ndarray) -> np.ndarray:
    return (np.asarray(feats, dtype=np.float64) - model.norm_mean) / model.norm_std


def forward(model: PolicyModel, feats: np.ndarray) -> np.ndarray:
    """Scores for one clip's features (normalization applied internally)."""
    feats = np.asarray(feats, dtype=np.float64)
    expected = (len(model.sample_frames), len(FEATURE_NAMES))
    if feats.shape != expected:
        raise ValueError(f"features must have shape {expected}, got {feats.shape}")
    x = normalize_features(model, feats).reshape(1, -1)
    return model.net.forward(x)[0]


def fit(net: MLP, inputs: np.ndarray,
        loss_grad: Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]],
        cfg: TrainConfig) -> np.ndarray:
    """Deterministic minibatch Adam loop shared by both trained models.

    ``loss_grad(idx, out)`` maps batch indices and network outputs to
    per-sample losses and dL/d(out). Returns the per-epoch mean loss curve;
    raises TrainingError on non-finite loss or if the final epoch is worse
    than the first.
    """
    n = inputs.shape[0]
    rng = np.random.default_rng(derive_seed(cfg.seed, "shuffle"))
    params = net.parameters()
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    step = 0
    curve = np.empty(cfg.epochs)
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            out, acts = net.forward_cached(inputs[idx])
            loss_vec, dout = loss_grad(idx, out)
            if not np.isfinite(loss_vec).all():
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {start // cfg.batch_size}")
            grads = net.backward(acts, dout / idx.size)
            step += 1
            lr_t = cfg.learning_rate * np.sqrt(1.0 - cfg.beta2 ** step) / (1.0 - cfg.beta1 ** step)
            for p, g, mi, vi in zip(params, grads, m, v):
                mi *= cfg.beta1
                mi += (1.0 - cfg.beta1) * g
                vi *= cfg.beta2
                vi += (1.0 - cfg.beta2) * g * g
                p -= lr_t * mi / (np.sqrt(vi) + cfg.eps)
            total += float(loss_vec.sum())
        curve[epoch] = total / n
    if curve[-1] > curve[0]:
        raise TrainingError(f"training diverged: loss {curve[0]:.6f} -> {curve[-1]:.6f}")
    return curve


def train(samples: Sequence[tuple[np.ndarray, CostTable]], cfg: TrainConfig,
          frame_count: int) -> tuple[PolicyModel, np.ndarray]:
    """Train the deferral scorer on (features, cost table) pairs.

    All tables must share one candidate menu. Returns the final-epoch model
    and the per-epoch loss curve.
    """
    if not samples:
        raise ValueError("no training samples")
    feats_list = [np.asarray(f, dtype=np.float64) for f, _ in samples]
    tables = [t for _, t in samples]
    candidates = tables[0].candidates
    if any(t.candidates != candidates for t in tables):
        raise ValueError("training tables disagree on the candidate menu")
    sample_frames = (0,) + candidates
    expected = (len(sample_frames), len(FEATURE_NAMES))
    if any(f.shape != expected for f in feats_list):
        raise ValueError(f"every feature block must have shape {expected}")

    mean, std = normalization_stats(feats_list)
    x = np.stack([(f - mean) / std for f in feats_list]).reshape(len(feats_list), -1)
    weights = np.stack([complement_costs(t) for t in tables])

    net = MLP((x.shape[1], *cfg.hidden, len(candidates)), derive_seed(cfg.seed, "init"))

    def loss_grad(idx, scores):
        return batch_surrogate(scores, weights[idx])

    curve = fit(net, x, loss_grad, cfg)
    model = PolicyModel(net=net, norm_mean=mean, norm_std=std,
                        sample_frames=sample_frames, frame_count=frame_count)
    return model, curve


def grad_check(model: PolicyModel, sample: tuple[np.ndarray, CostTable | np.ndarray],
               h: float = 1e-5) -> float:
    """Max deviation between backprop and central differences, all parameters.

    The deviation is |analytic - numeric| / max(1, |analytic|, |numeric|),
    relative for large entries and absolute for small ones. Network weights
    are perturbed in place and restored, so the model is unchanged on
    return (not safe to share across threads mid-check).
    """
    feats, second = sample
    weights = complement_costs(second) if isinstance(second, CostTable) else np.asarray(second)
    x = normalize_features(model, np.asarray(feats, dtype=np.float64)).reshape(1, -1)

    scores, acts = model.net.forward_cached(x)
    dscores = surrogate_grad(scores[0], weights)
    analytic = model.net.backward(acts, dscores[None, :])

    worst = 0.0
    for p, g in zip(model.net.parameters(), analytic):
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            hi = surrogate_mae(model.net.forward(x)[0], weights)
            flat[j] = orig - h
            lo = surrogate_mae(model.net.forward(x)[0], weights)
            flat[j] = orig
            numeric = (hi - lo) / (2.0 * h)
            err = abs(gflat[j] - numeric) / max(1.0, abs(gflat[j]), abs(numeric))
            worst = max(worst, err)
    return worst


def save_model(model: PolicyModel, path, *, model_type: str, meta: dict | None = None) -> None:
    """Write a checkpoint: JSON header plus little-endian float64 blocks."""
    header = {
        "format": "rpckpt-1",
        "model_type": model_type,
        "tool_version": __version__,
        "layer_sizes": list(model.net.sizes),
        "sample_frames": list(model.sample_frames),
        "frame_count": model.frame_count,
        "feature_names": list(FEATURE_NAMES),
        "norm_mean": [float(v) for v in model.norm_mean],
        "norm_std": [float(v) for v in model.norm_std],
    }
    header.update(meta or {})
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for param in model.net.parameters():
            fh.write(param.astype("<f8").tobytes())


def load_model(path) -> tuple[PolicyModel, dict]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:len(_CKPT_MAGIC)] != _CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    (blob_len,) = struct.unpack_from("<I", data, len(_CKPT_MAGIC))
    pos = len(_CKPT_MAGIC) + 4
    header = json.loads(data[pos:pos + blob_len].decode("utf-8"))
    pos += blob_len
    net = MLP(header["layer_sizes"], seed=0)
    for i, param in enumerate(net.parameters()):
        count = param.size
        values = np.frombuffer(data, dtype="<f8", count=count, offset=pos)
        pos += 8 * count
        param[...] = values.reshape(param.shape)
    model = PolicyModel(
        net=net,
        norm_mean=np.array(header["norm_mean"]),
        norm_std=np.array(header["norm_std"]),
        sample_frames=tuple(header["sample_frames"]),
        frame_count=int(header["frame_count"]),
    )
    return model, header
