"""Temporal relation networks over per-frame visual features.

Multiscale relation heads (frame tuples of size 2..8) vote on the action
class; the 2-frame head additionally drives a sigmoid "same action
continues" score for every consecutive frame pair.  That per-pair series is
the action trace, and its short-time spectral image (resized, replicated
to 3 channels, values in [-1, 1]) is the guidance tensor fed to the sound
generator.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import spectro
from .nncore import (
    AdamConfig,
    ParamTree,
    adam_step,
    bce_with_logits,
    merge_grads,
    orthogonal_init,
    sigmoid,
    softmax,
    softmax_cross_entropy,
    stream_rng,
)
from .nncore.errors import DataError, ShapeError

MIN_TRACE_LEN = 16  # shorter traces are upsampled before the trace STFT
TRACE_STFT = spectro.StftConfig(frame_size=16, hop=4, sample_rate=30)


@dataclass
class FrameFeatureSequence:
    features: np.ndarray  # n_frames x dim
    frame_rate: float = 30.0
    source: str = "synthetic"  # or "fixture"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] < 2:
            raise DataError("need at least two frames of features")
        if not np.all(np.isfinite(self.features)):
            raise DataError("non-finite frame features")

    @property
    def n_frames(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]


@dataclass
class ActionTrace:
    values: np.ndarray  # length n_frames - 1, each in [0, 1]
    frame_rate: float = 30.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if np.any(self.values < 0) or np.any(self.values > 1):
            raise DataError("trace values must lie in [0, 1]")

    def __len__(self):
        return self.values.size


@dataclass
class ClassScores:
    logits: np.ndarray
    scales_used: tuple = ()

    @property
    def probs(self):
        return softmax(self.logits)

    @property
    def prediction(self) -> int:
        return int(np.argmax(self.logits))  # ties break to the lowest id


class RelationNet:
    """Per-scale two-layer MLPs g_q with single-layer class heads h_q."""

    def __init__(self, feature_dim, n_classes, hidden=32, max_scale=8,
                 tuple_budget=20):
        self.feature_dim = feature_dim
        self.n_classes = n_classes
        self.hidden = hidden
        self.max_scale = max_scale
        self.tuple_budget = tuple_budget

    def init(self, seed) -> ParamTree:
        params = ParamTree()
        for q in range(2, self.max_scale + 1):
            d_in = q * self.feature_dim
            params.add(f"g{q}.l1.w", orthogonal_init(
                d_in, self.hidden, stream_rng(seed, f"g{q}.l1.w")))
            params.add(f"g{q}.l1.b", np.zeros(self.hidden))
            params.add(f"g{q}.l2.w", orthogonal_init(
                self.hidden, self.hidden, stream_rng(seed, f"g{q}.l2.w")))
            params.add(f"g{q}.l2.b", np.zeros(self.hidden))
            params.add(f"h{q}.w", orthogonal_init(
                self.hidden, self.n_classes, stream_rng(seed, f"h{q}.w")))
            params.add(f"h{q}.b", np.zeros(self.n_classes))
        params.add("trace.w", orthogonal_init(self.hidden, 1, stream_rng(seed, "trace.w")))
        params.add("trace.b", np.zeros(1))
        return params

    # -- forward pieces -------------------------------------------------

    def _g_forward(self, params, q, rows):
        """rows: (m, q*dim) stacked tuple features -> (m, hidden) + cache."""
        a1 = rows @ params[f"g{q}.l1.w"] + params[f"g{q}.l1.b"]
        h1 = np.tanh(a1)
        a2 = h1 @ params[f"g{q}.l2.w"] + params[f"g{q}.l2.b"]
        h2 = np.tanh(a2)
        return h2, (rows, h1, h2)

    def _g_backward(self, params, q, cache, dh2):
        rows, h1, h2 = cache
        da2 = dh2 * (1 - h2 * h2)
        grads = {
            f"g{q}.l2.w": h1.T @ da2,
            f"g{q}.l2.b": da2.sum(axis=0),
        }
        dh1 = da2 @ params[f"g{q}.l2.w"].T
        da1 = dh1 * (1 - h1 * h1)
        grads[f"g{q}.l1.w"] = rows.T @ da1
        grads[f"g{q}.l1.b"] = da1.sum(axis=0)
        return grads

    def tuples_for_scale(self, n_frames, q, tuple_seed=0):
        """Ordered index tuples entering the scale-q sum.

        Scale 2 keeps every ordered pair; larger scales draw a uniform
        sample of at most `tuple_budget` tuples (deterministic per seed).
        """
        if q > n_frames:
            raise ShapeError(f"scale {q} exceeds {n_frames} frames")
        if q == 2:
            return np.array(list(itertools.combinations(range(n_frames), 2)))
        rng = stream_rng(tuple_seed, f"tuples.q{q}.n{n_frames}")
        budget = self.tuple_budget
        picked = set()
        # rejection sampling is fine: budget << C(n, q) in practice
        guard = 0
        while len(picked) < budget and guard < budget * 50:
            cand = tuple(sorted(rng.choice(n_frames, size=q, replace=False).tolist()))
            picked.add(cand)
            guard += 1
        tuples = sorted(picked)
        return np.array(tuples)

    def relation_scale(self, params, features: FrameFeatureSequence, q,
                       tuple_seed=0) -> ClassScores:
        logits, _ = self._scale_forward(params, features.features, q, tuple_seed)
        return ClassScores(logits, scales_used=(q,))

    def _scale_forward(self, params, feats, q, tuple_seed):
        idx = self.tuples_for_scale(feats.shape[0], q, tuple_seed)
        rows = feats[idx].reshape(idx.shape[0], q * feats.shape[1])
        h2, g_cache = self._g_forward(params, q, rows)
        pooled = h2.sum(axis=0)
        logits = pooled @ params[f"h{q}.w"] + params[f"h{q}.b"]
        return logits, (q, idx, g_cache, pooled)

    def _scale_backward(self, params, cache, dlogits):
        q, idx, g_cache, pooled = cache
        grads = {
            f"h{q}.w": np.outer(pooled, dlogits),
            f"h{q}.b": dlogits,
        }
        dpooled = params[f"h{q}.w"] @ dlogits
        dh2 = np.broadcast_to(dpooled, (idx.shape[0], dpooled.size))
        merge_grads(grads, self._g_backward(params, q, g_cache, dh2))
        return grads

    def classify(self, params, features: FrameFeatureSequence,
                 tuple_seed=0) -> ClassScores:
        """Sum of relation scores over scales 2..8 (fewer when frames are scarce)."""
        logits, caches, scales = self._classify_forward(
            params, features.features, tuple_seed)
        return ClassScores(logits, scales_used=tuple(scales))

    def _classify_forward(self, params, feats, tuple_seed):
        n = feats.shape[0]
        scales = [q for q in range(2, self.max_scale + 1) if q <= n]
        logits = np.zeros(self.n_classes)
        caches = []
        for q in scales:
            lq, cache = self._scale_forward(params, feats, q, tuple_seed)
            logits += lq
            caches.append(cache)
        return logits, caches, scales

    def _classify_backward(self, params, caches, dlogits):
        grads = {}
        for cache in caches:
            merge_grads(grads, self._scale_backward(params, cache, dlogits))
        return grads

    # -- action trace ----------------------------------------------------

    def _trace_forward(self, params, feats):
        pairs = np.concatenate([feats[:-1], feats[1:]], axis=1)
        h2, g_cache = self._g_forward(params, 2, pairs)
        logits = (h2 @ params["trace.w"])[:, 0] + params["trace.b"][0]
        return logits, (g_cache, h2)

    def _trace_backward(self, params, cache, dlogits):
        g_cache, h2 = cache
        grads = {
            "trace.w": h2.T @ dlogits[:, None],
            "trace.b": np.array([dlogits.sum()]),
        }
        dh2 = dlogits[:, None] * params["trace.w"][:, 0]
        merge_grads(grads, self._g_backward(params, 2, g_cache, dh2))
        return grads

    def action_trace(self, params, features: FrameFeatureSequence) -> ActionTrace:
        """P(same action continues) for every consecutive frame pair."""
        logits, _ = self._trace_forward(params, features.features)
        return ActionTrace(sigmoid(logits), frame_rate=features.frame_rate)


def bilinear_resize(img, out_h, out_w):
    """Plain align-corners bilinear resize of a 2-D array."""
    in_h, in_w = img.shape
    r = np.linspace(0, in_h - 1, out_h)
    c = np.linspace(0, in_w - 1, out_w)
    r0 = np.floor(r).astype(int)
    c0 = np.floor(c).astype(int)
    r1 = np.minimum(r0 + 1, in_h - 1)
    c1 = np.minimum(c0 + 1, in_w - 1)
    fr = (r - r0)[:, None]
    fc = (c - c0)[None, :]
    top = img[np.ix_(r0, c0)] * (1 - fc) + img[np.ix_(r0, c1)] * fc
    bot = img[np.ix_(r1, c0)] * (1 - fc) + img[np.ix_(r1, c1)] * fc
    return top * (1 - fr) + bot * fr


def action_spectrogram(trace: ActionTrace, target=(64, 64),
                       cfg: spectro.StftConfig = TRACE_STFT) -> np.ndarray:
    """Spectral image of the mean-removed trace, (H, W, 3) in [-1, 1].

    Short traces are linearly upsampled to the trace-STFT frame size.
    Channels carry the replicated scaled log-magnitude.
    """
    values = trace.values
    if values.size < cfg.frame_size:
        xs = np.linspace(0, 1, max(values.size, 2))
        values = np.interp(np.linspace(0, 1, MIN_TRACE_LEN), xs, values)
    centered = values - values.mean()
    clip = spectro.AudioClip(np.clip(centered, -1, 1), cfg.sample_rate)
    spec = spectro.stft(clip, cfg)
    lo, hi = spectro.default_scale(cfg.frame_size)
    logmag = np.log(spec.magnitude + spectro.LOG_FLOOR)
    scaled = np.clip(2 * (logmag - lo) / (hi - lo) - 1, -1.0, 1.0)
    img = bilinear_resize(scaled.T, target[0], target[1])  # freq x time
    return np.repeat(img[:, :, None], 3, axis=2)


# -- training ------------------------------------------------------------


@dataclass
class RelnetTrainConfig:
    steps: int = 150
    batch: int = 8
    learning_rate: float = 1e-3
    aux_weight: float = 1.0
    active_level: float = 0.5  # envelope threshold defining "action present"
    seed: int = 0
    hidden: int = 32
    tuple_budget: int = 20


def trace_targets(envelope, active_level=0.5):
    """Same-action labels: 1 when consecutive frames sit in one active event."""
    active = envelope > active_level
    return (active[:-1] & active[1:]).astype(np.float64)


@dataclass
class RelnetTrainResult:
    net: RelationNet
    params: ParamTree
    history: list = field(default_factory=list)


def train_relnet(examples, n_classes, cfg: RelnetTrainConfig) -> RelnetTrainResult:
    """Train class + trace heads on (features, class_id, envelope) triples."""
    if not examples:
        raise DataError("empty training set")
    feature_dim = examples[0][0].dim
    net = RelationNet(feature_dim, n_classes, hidden=cfg.hidden,
                      tuple_budget=cfg.tuple_budget)
    params = net.init(cfg.seed)
    adam = AdamConfig(learning_rate=cfg.learning_rate, beta1=0.9, beta2=0.999)
    order_rng = stream_rng(cfg.seed, "relnet.batch")
    history = []
    for step in range(cfg.steps):
        batch_idx = order_rng.integers(0, len(examples), size=cfg.batch)
        grads = {}
        total_ce = total_aux = 0.0
        for bi in batch_idx:
            feats, class_id, envelope = examples[bi]
            logits, caches, _ = net._classify_forward(
                params, feats.features, tuple_seed=cfg.seed + step)
            ce, dlogits = softmax_cross_entropy(logits[None, :], np.array([class_id]))
            merge_grads(grads, net._classify_backward(params, caches, dlogits[0]),
                        scale=1.0 / cfg.batch)
            total_ce += ce
            if cfg.aux_weight > 0:
                tlogits, tcache = net._trace_forward(params, feats.features)
                targets = trace_targets(envelope, cfg.active_level)
                aux, dtl = bce_with_logits(tlogits, targets)
                merge_grads(grads, net._trace_backward(params, tcache, dtl),
                            scale=cfg.aux_weight / cfg.batch)
                total_aux += aux
        for name in params.names():
            grads.setdefault(name, np.zeros_like(params.leaves[name]))
        adam_step(params, grads, adam)
        history.append({
            "step": step,
            "ce": total_ce / cfg.batch,
            "aux": total_aux / cfg.batch,
        })
    return RelnetTrainResult(net=net, params=params, history=history)
