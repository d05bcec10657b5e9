"""Central finite-difference verification of analytic gradients."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class GradCheckReport:
    tolerance: float
    per_leaf: dict = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.per_leaf.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


def _rel_err(a, n):
    return abs(a - n) / max(abs(a) + abs(n), 1e-8)


def fd_gradient(f, x, eps=1e-4):
    """Central-difference gradient of scalar f at array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * eps)
    return g


def grad_check_loss(loss_fn, params, leaf_names=None, eps=1e-4, tolerance=1e-3):
    """Check d loss_fn(params) / d leaf against central differences.

    loss_fn must return (scalar loss, grads dict).  Nets must be small
    (< 1e4 parameters); the check is O(n_params) forward passes.
    """
    if params.n_params() >= 10_000:
        raise ValueError("finite differences require < 1e4 parameters")
    _, analytic = loss_fn(params)
    report = GradCheckReport(tolerance=tolerance)
    names = leaf_names if leaf_names is not None else params.names()
    for name in names:
        leaf = params.leaves[name]
        a = analytic.get(name, np.zeros_like(leaf))
        worst = 0.0
        flat = leaf.reshape(-1)
        af = np.asarray(a).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = loss_fn(params)[0]
            flat[i] = orig - eps
            fm = loss_fn(params)[0]
            flat[i] = orig
            num = (fp - fm) / (2 * eps)
            worst = max(worst, _rel_err(af[i], num))
        report.per_leaf[name] = worst
    return report


def grad_check(net, x, tolerance=1e-3, eps=1e-4, seed=0, params=None):
    """Verify a Net's backward pass with loss = sum(forward(x))."""
    if params is None:
        params = net.init(seed)

    def loss_fn(p):
        y, caches = net.forward_cached(p, x)
        _, grads = net.backward(p, caches, np.ones_like(y))
        return float(y.sum()), grads

    return grad_check_loss(loss_fn, params, eps=eps, tolerance=tolerance)
