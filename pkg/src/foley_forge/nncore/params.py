"""Parameter trees, seeded init streams, and the Adam optimizer.

A ParamTree is a flat dict of named float64 leaves plus per-leaf Adam
state.  Initialization streams are keyed by (global seed, leaf name) so a
net's weights are reproducible regardless of construction order.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError


def stream_rng(seed: int, name: str) -> np.random.Generator:
    """Deterministic per-purpose RNG stream keyed by (seed, name)."""
    digest = hashlib.sha256(name.encode()).digest()
    key = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([int(seed), key]))


def orthogonal_init(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Random matrix with orthonormal rows (rows <= cols) or columns."""
    flat = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(flat)
    q = q * np.sign(np.diag(r))  # fix signs so the draw is unique
    if rows < cols:
        return np.ascontiguousarray(q.T)
    return np.ascontiguousarray(q)


@dataclass
class AdamConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


@dataclass
class ParamTree:
    """Named parameter leaves with attached Adam moments."""

    leaves: dict = field(default_factory=dict)
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)
    step: int = 0

    def add(self, name: str, value: np.ndarray):
        value = np.asarray(value, dtype=np.float64)
        self.leaves[name] = value
        self.adam_m[name] = np.zeros_like(value)
        self.adam_v[name] = np.zeros_like(value)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.leaves[name]

    def __setitem__(self, name: str, value: np.ndarray):
        if name not in self.leaves:
            self.add(name, value)
        else:
            self.leaves[name] = np.asarray(value, dtype=np.float64)

    def __contains__(self, name):
        return name in self.leaves

    def names(self):
        return sorted(self.leaves)

    def n_params(self) -> int:
        return sum(v.size for v in self.leaves.values())

    def zeros_like_grads(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.leaves.items()}

    def copy(self) -> "ParamTree":
        out = ParamTree(step=self.step)
        out.leaves = {k: v.copy() for k, v in self.leaves.items()}
        out.adam_m = {k: v.copy() for k, v in self.adam_m.items()}
        out.adam_v = {k: v.copy() for k, v in self.adam_v.items()}
        return out

    def quantize_storage(self):
        """Round every leaf and moment to float32 grid (checkpoint precision).

        Called at checkpoint boundaries so a resumed run is bit-identical
        to the uninterrupted one.
        """
        for d in (self.leaves, self.adam_m, self.adam_v):
            for k in d:
                d[k] = d[k].astype(np.float32).astype(np.float64)


def adam_step(params: ParamTree, grads: dict, cfg: AdamConfig) -> ParamTree:
    """One in-place Adam update with bias correction (returns params)."""
    for name in params.names():
        if name not in grads:
            raise ShapeError(f"missing gradient for leaf '{name}'")
        g = grads[name]
        if g.shape != params.leaves[name].shape:
            raise ShapeError(
                f"gradient shape {g.shape} != param shape "
                f"{params.leaves[name].shape} for leaf '{name}'"
            )
    params.step += 1
    t = params.step
    b1, b2 = cfg.beta1, cfg.beta2
    for name in params.names():
        g = grads[name]
        m = params.adam_m[name]
        v = params.adam_v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        params.leaves[name] -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
    return params
