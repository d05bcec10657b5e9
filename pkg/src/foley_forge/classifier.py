"""Sound-retrieval classifier on packed spectrograms.

A small strided conv net whose penultimate feature vector doubles as the
embedding space for the distribution metrics; predict() is exactly
softmax(head(features())) by construction.
"""

from dataclasses import dataclass, field

import numpy as np

from .nncore import (
    AdamConfig,
    Conv2d,
    ParamTree,
    adam_step,
    merge_grads,
    orthogonal_init,
    softmax,
    softmax_cross_entropy,
    stream_rng,
)
from .nncore.errors import DataError, ShapeError


@dataclass
class ClassifierConfig:
    image_size: int = 64
    n_classes: int = 3
    feature_dim: int = 64
    steps: int = 300
    batch: int = 32
    learning_rate: float = 1e-3
    seed: int = 0


class ClassifierNet:
    def __init__(self, cfg: ClassifierConfig):
        self.cfg = cfg
        n_down = max(2, int(np.log2(cfg.image_size / 4)))
        chans = [3]
        for i in range(n_down):
            chans.append(min(cfg.feature_dim, 8 * (2 ** ((i + 1) // 2))))
        chans[-1] = cfg.feature_dim
        self.convs = [
            Conv2d(f"c.conv{i}", chans[i], chans[i + 1], stride=2)
            for i in range(n_down)
        ]

    def init(self, seed) -> ParamTree:
        params = ParamTree()
        for conv in self.convs:
            conv.build(params, seed)
        params.add("c.head.w", orthogonal_init(self.cfg.feature_dim, self.cfg.n_classes,
                                               stream_rng(seed, "c.head.w")))
        params.add("c.head.b", np.zeros(self.cfg.n_classes))
        return params

    def features(self, params, s, want_cache=False):
        """Penultimate embedding (N, feature_dim)."""
        if s.ndim == 3:
            s = s[None, :]
        if s.shape[1:] != (self.cfg.image_size, self.cfg.image_size, 3):
            raise ShapeError("classifier input shape mismatch")
        h = np.ascontiguousarray(s, dtype=np.float64)
        caches = []
        for conv in self.convs:
            hc, cache = conv.forward(params, h)
            h = np.where(hc >= 0, hc, 0.2 * hc)
            caches.append((cache, hc))
        feat = h.mean(axis=(1, 2))
        if want_cache:
            return feat, (caches, h.shape)
        return feat

    def logits(self, params, s, want_cache=False):
        feat, cache = self.features(params, s, want_cache=True)
        out = feat @ params["c.head.w"] + params["c.head.b"]
        if want_cache:
            return out, (feat, cache)
        return out

    def predict(self, params, s):
        """Class probabilities P(y|x), rows summing to 1."""
        return softmax(self.logits(params, s))

    def backward(self, params, cache, dlogits):
        feat, (caches, h_shape) = cache
        grads = {
            "c.head.w": feat.T @ dlogits,
            "c.head.b": dlogits.sum(axis=0),
        }
        dfeat = dlogits @ params["c.head.w"].T
        n, hh, ww, cc = h_shape
        dh = np.broadcast_to(dfeat[:, None, None, :], h_shape) / (hh * ww)
        for conv, (conv_cache, hc) in zip(reversed(self.convs), reversed(caches)):
            dhc = dh * np.where(hc >= 0, 1.0, 0.2)
            dh, g = conv.backward(params, conv_cache, dhc)
            merge_grads(grads, g)
        return grads


@dataclass
class TrainedClassifier:
    net: ClassifierNet
    params: ParamTree
    history: list = field(default_factory=list)
    test_accuracy: float = float("nan")

    def predict(self, s):
        return self.net.predict(self.params, s)

    def features(self, s):
        return self.net.features(self.params, s)


def accuracy(net, params, images, labels, chunk=64):
    hits = 0
    for i in range(0, len(images), chunk):
        probs = net.predict(params, images[i : i + chunk])
        hits += int(np.sum(np.argmax(probs, axis=1) == labels[i : i + chunk]))
    return hits / max(len(images), 1)


def train_classifier(train_images, train_labels, cfg: ClassifierConfig,
                     test_images=None, test_labels=None, log=None) -> TrainedClassifier:
    """Cross-entropy training with Adam on labeled packed spectrograms."""
    train_labels = np.asarray(train_labels)
    if len(np.unique(train_labels)) < 2:
        raise DataError("classifier training needs at least two classes")
    net = ClassifierNet(cfg)
    params = net.init(cfg.seed)
    adam = AdamConfig(cfg.learning_rate, 0.9, 0.999)
    rng = stream_rng(cfg.seed, "classifier.batch")
    history = []
    n = len(train_images)
    for step in range(cfg.steps):
        idx = rng.integers(0, n, size=min(cfg.batch, n))
        logits, cache = net.logits(params, train_images[idx], want_cache=True)
        loss, dlogits = softmax_cross_entropy(logits, train_labels[idx])
        grads = net.backward(params, cache, dlogits)
        adam_step(params, grads, adam)
        history.append({"step": step, "ce": loss})
        if log and step % 100 == 0:
            log(stage="classifier", step=step, ce=loss)
    result = TrainedClassifier(net=net, params=params, history=history)
    if test_images is not None and len(test_images):
        result.test_accuracy = accuracy(net, params, test_images, np.asarray(test_labels))
    return result
