"""Central finite-difference checks of the analytic gradients.

Relative error per coordinate is ``|a - n| / max(|a|, |n|, REL_FLOOR)``; the
floor keeps coordinates whose true gradient is ~0 from turning rounding
noise into a huge ratio.
"""
from dataclasses import dataclass, field

import numpy as np

from .backbone import MlpParams, mlp_backward, mlp_forward
from .head import HeadConfig, HeadParams, backward, build_labels, forward_logits, sample_sub_centers, sigma_loss
from .numerics import RngStream, softmax_xent

STEP = 1e-5
TOLERANCE = 1e-6
VANILLA_TOLERANCE = 1e-12
REL_FLOOR = 1e-3
KINK_MARGIN = 1e-4
DEFAULT_BOUNDS = (8, 5, 3, 6)


@dataclass
class TensorCheck:
    name: str
    max_rel_error: float
    worst_index: tuple


@dataclass
class TrialReport:
    dims: tuple
    checks: list = field(default_factory=list)
    vanilla_error: float | None = None

    @property
    def worst(self):
        return max(self.checks, key=lambda c: c.max_rel_error)

    @property
    def passed(self):
        ok = all(c.max_rel_error < TOLERANCE for c in self.checks)
        return ok and (self.vanilla_error is None or self.vanilla_error < VANILLA_TOLERANCE)


def rel_error(analytic, numeric):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    return np.abs(analytic - numeric) / denom


def central_diff(f, arr, step=STEP):
    """Numerical gradient of scalar ``f()`` w.r.t. ``arr``, perturbing in place."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        plus = f()
        flat[i] = orig - step
        minus = f()
        flat[i] = orig
        g[i] = (plus - minus) / (2.0 * step)
    return grad


def _compare(name, analytic, numeric):
    err = rel_error(analytic, numeric)
    worst = np.unravel_index(int(np.argmax(err)), err.shape) if err.size else ()
    return TensorCheck(name, float(err.max()) if err.size else 0.0, tuple(int(i) for i in worst))


def frozen_total_loss(x, targets, params, cfg, eps):
    ew = sample_sub_centers(params, cfg, None, eps=eps)
    losses, _ = softmax_xent(forward_logits(x, ew), targets)
    return float(losses.sum() / x.shape[0]) + cfg.sigma_loss_weight * sigma_loss(params.log_sigma)


def vanilla_softmax_ce(x, W, labels):
    """Plain linear softmax classifier: mean CE, dW, dX."""
    logits = x @ W
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    n = x.shape[0]
    onehot = np.zeros_like(logits)
    onehot[np.arange(n), labels] = 1.0
    loss = -np.sum(onehot * log_probs) / n
    dlogits = (np.exp(log_probs) - onehot) / n
    return loss, x.T @ dlogits, dlogits @ W.T


def _random_instance(rng, d, C, K, n, sigma_loss_weight=1.0):
    cfg = HeadConfig(d, C, K, 0.5 if K else 1.0, sigma_loss_weight=sigma_loss_weight)
    params = HeadParams(
        rng.standard_normal(d * C).reshape(d, C),
        0.3 * rng.standard_normal(d * C).reshape(d, C),
    )
    x = rng.standard_normal(n * d).reshape(n, d)
    labels = (rng.uniform(n) * C).astype(np.int64)
    eps = rng.standard_normal(d * C * K).reshape(d, C * K)
    return cfg, params, x, labels, eps


def _draw_int(rng, lo, hi):
    return lo + int(rng.uniform(1)[0] * (hi - lo + 1))


def check_head(rng, d, C, K, n, fault=None):
    cfg, params, x, labels, eps = _random_instance(rng, d, C, K, n)
    targets = build_labels(labels, cfg)
    ew = sample_sub_centers(params, cfg, None, eps=eps)
    _, grads = backward(x, labels, ew, params, cfg)
    dlog_sigma = -grads.dlog_sigma if fault == "dlog_sigma" else grads.dlog_sigma
    f = lambda: frozen_total_loss(x, targets, params, cfg, eps)  # noqa: E731
    return [
        _compare("head.dW", grads.dW, central_diff(f, params.W)),
        _compare("head.dlog_sigma", dlog_sigma, central_diff(f, params.log_sigma)),
        _compare("head.dX", grads.dX, central_diff(f, x)),
    ]


def _random_mlp(rng, dims):
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.standard_normal(fan_in * fan_out).reshape(fan_in, fan_out) / np.sqrt(fan_in))
        biases.append(0.1 * rng.standard_normal(fan_out))
    return MlpParams(weights, biases)


def _min_hidden_preact(x, mlp):
    _, cache = mlp_forward(x, mlp)
    hidden = cache.preacts[:-1]
    return min((np.abs(z).min() for z in hidden), default=np.inf)


def check_end_to_end(rng, d, C, K, n, fault=None):
    """Backbone (two ReLU layers) followed by the head."""
    cfg, params, _, labels, eps = _random_instance(rng, d, C, K, n)
    in_dim, hidden = 3, 5
    mlp = _random_mlp(rng, [in_dim, hidden, hidden, d])
    for _ in range(1000):
        x = rng.standard_normal(n * in_dim).reshape(n, in_dim)
        if _min_hidden_preact(x, mlp) > KINK_MARGIN:
            break
    else:
        raise RuntimeError("could not find inputs away from ReLU kinks")
    targets = build_labels(labels, cfg)

    feats, cache = mlp_forward(x, mlp)
    ew = sample_sub_centers(params, cfg, None, eps=eps)
    _, grads = backward(feats, labels, ew, params, cfg)
    dws, dbs, dx = mlp_backward(grads.dX, cache, mlp)
    dlog_sigma = -grads.dlog_sigma if fault == "dlog_sigma" else grads.dlog_sigma

    def f():
        return frozen_total_loss(mlp_forward(x, mlp)[0], targets, params, cfg, eps)

    checks = [
        _compare("e2e.head.dW", grads.dW, central_diff(f, params.W)),
        _compare("e2e.head.dlog_sigma", dlog_sigma, central_diff(f, params.log_sigma)),
        _compare("e2e.input", dx, central_diff(f, x)),
    ]
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        checks.append(_compare(f"e2e.backbone.{i}.weight", dws[i], central_diff(f, w)))
        checks.append(_compare(f"e2e.backbone.{i}.bias", dbs[i], central_diff(f, b)))
    return checks


def check_vanilla(rng, d, C, n):
    """K=0, alpha=1, no sigma loss against the plain linear classifier."""
    cfg, params, x, labels, eps = _random_instance(rng, d, C, 0, n, sigma_loss_weight=0.0)
    ew = sample_sub_centers(params, cfg, None, eps=eps)
    losses, grads = backward(x, labels, ew, params, cfg)
    loss, dW, dX = vanilla_softmax_ce(x, params.W, labels)
    return max(abs(losses.total - loss), np.abs(grads.dW - dW).max(), np.abs(grads.dX - dX).max())


def run(trials=20, seed=0, dims=None, fault=None):
    """Run ``trials`` checks; ``dims=(d, C, K, n)`` fixes the sizes, else they are drawn."""
    rng = RngStream(seed)
    reports = []
    for _ in range(trials):
        if dims is None:
            dmax, cmax, kmax, nmax = DEFAULT_BOUNDS
            d, C, K, n = _draw_int(rng, 1, dmax), _draw_int(rng, 2, cmax), _draw_int(rng, 0, kmax), _draw_int(rng, 1, nmax)
        else:
            d, C, K, n = dims
        report = TrialReport((d, C, K, n))
        report.checks.extend(check_head(rng, d, C, K, n, fault))
        report.checks.extend(check_end_to_end(rng, d, C, K, n, fault))
        if K == 0:
            report.vanilla_error = check_vanilla(rng, d, C, n)
        reports.append(report)
    return reports
