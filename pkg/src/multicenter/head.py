"""Multi-center classification head.

Each class ``c`` owns a Gaussian ``N(w_c, diag(sigma_c**2))``. During training
``K`` sub-centers per class are drawn with the reparameterization trick and
laid out next to the class center, giving ``C*(K+1)`` logit slots. At test
time only ``W`` is used, which is exactly a bias-free linear classifier.
"""
from dataclasses import dataclass, field

import numpy as np

from .numerics import as_mat, gemm, softmax_xent

PROB_FLOOR = 1e-300


class StaleDrawError(ValueError):
    """The sub-center draw does not belong to the current parameters."""


@dataclass
class HeadConfig:
    feature_dim: int
    num_classes: int
    sub_centers: int = 2
    main_label_mass: float = 0.5
    sigma_loss_weight: float = 1.0
    sigma_init: float = 1.0

    def __post_init__(self):
        if self.feature_dim < 1:
            raise ValueError(f"feature_dim must be >= 1, got {self.feature_dim}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.sub_centers < 0:
            raise ValueError(f"sub_centers must be >= 0, got {self.sub_centers}")
        if not 0.0 < self.main_label_mass <= 1.0:
            raise ValueError(f"main_label_mass must lie in (0, 1], got {self.main_label_mass}")
        if self.sub_centers == 0 and self.main_label_mass != 1.0:
            raise ValueError("main_label_mass must be 1 when sub_centers == 0")
        if self.sigma_loss_weight < 0:
            raise ValueError(f"sigma_loss_weight must be >= 0, got {self.sigma_loss_weight}")
        if self.sigma_init <= 0:
            raise ValueError(f"sigma_init must be > 0, got {self.sigma_init}")

    @property
    def num_slots(self):
        return self.num_classes * (self.sub_centers + 1)


@dataclass
class HeadParams:
    W: np.ndarray  # d x C, column c is the class center
    log_sigma: np.ndarray  # d x C, per-class per-dimension log std

    def __post_init__(self):
        self.W = as_mat(self.W, "W")
        self.log_sigma = as_mat(self.log_sigma, "log_sigma")
        if self.W.shape != self.log_sigma.shape:
            raise ValueError(f"W {self.W.shape} and log_sigma {self.log_sigma.shape} differ in shape")

    @property
    def sigma(self):
        return np.exp(self.log_sigma)

    def param_count(self):
        return self.W.size + self.log_sigma.size


@dataclass
class ExpandedWeights:
    Wm: np.ndarray  # d x C(K+1)
    eps: np.ndarray  # d x C*K, column c*K + (k-1)
    K: int


@dataclass
class LossBreakdown:
    l_m: float
    l_sigma: float
    total: float


@dataclass
class GradientSet:
    dW: np.ndarray
    dlog_sigma: np.ndarray
    dX: np.ndarray
    extras: dict = field(default_factory=dict)


def init_head(cfg, rng):
    """Fan-in scaled normal centers; every sigma starts at ``cfg.sigma_init``."""
    d, C = cfg.feature_dim, cfg.num_classes
    W = rng.standard_normal(d * C).reshape(d, C) / np.sqrt(d)
    log_sigma = np.full((d, C), np.log(cfg.sigma_init))
    return HeadParams(W, log_sigma)


def slot_index(c, k, K, num_classes=None):
    """Column of class ``c``'s center (``k=0``) or its ``k``-th sub-center.

    >>> slot_index(1, 0, 2), slot_index(1, 1, 2)
    (3, 4)
    """
    if c < 0 or (num_classes is not None and c >= num_classes):
        raise ValueError(f"class index {c} out of range")
    if k < 0 or k > K:
        raise ValueError(f"sub-center index {k} out of range for K={K}")
    return c * (K + 1) + k


def sample_sub_centers(params, cfg, rng, eps=None):
    """Draw one set of sub-centers shared by the whole batch.

    ``eps`` overrides the noise draw (shape ``d x C*K``); used by tests and
    by finite-difference checks that need a frozen draw.
    """
    d, C, K = cfg.feature_dim, cfg.num_classes, cfg.sub_centers
    if params.W.shape != (d, C):
        raise ValueError(f"params have shape {params.W.shape}, config expects {(d, C)}")
    if eps is None:
        # draw order: class, then sub-center, then dimension
        eps = rng.standard_normal(C * K * d).reshape(C * K, d).T.copy()
    else:
        eps = as_mat(eps, "eps")
        if eps.shape != (d, C * K):
            raise ValueError(f"eps must have shape {(d, C * K)}, got {eps.shape}")
    Wm = np.empty((d, C, K + 1))
    Wm[:, :, 0] = params.W
    Wm[:, :, 1:] = params.W[:, :, None] + params.sigma[:, :, None] * eps.reshape(d, C, K)
    return ExpandedWeights(Wm.reshape(d, C * (K + 1)), eps, K)


def check_draw(ew, params):
    """Reject a missing draw or one taken from different parameter values."""
    if ew is None:
        raise StaleDrawError("no sub-center draw supplied for this step")
    d, C = params.W.shape
    K = ew.K
    if ew.Wm.shape != (d, C * (K + 1)) or ew.eps.shape != (d, C * K):
        raise StaleDrawError(f"draw shapes {ew.Wm.shape}/{ew.eps.shape} do not match params {params.W.shape}")
    Wm = ew.Wm.reshape(d, C, K + 1)
    expected = params.W[:, :, None] + params.sigma[:, :, None] * ew.eps.reshape(d, C, K)
    if not (np.array_equal(Wm[:, :, 0], params.W) and np.array_equal(Wm[:, :, 1:], expected)):
        raise StaleDrawError("sub-center draw is stale: parameters changed since it was sampled")


def build_label(t, cfg):
    """Multi-center soft label for class ``t`` over all ``C*(K+1)`` slots."""
    C, K, alpha = cfg.num_classes, cfg.sub_centers, cfg.main_label_mass
    if not 0 <= t < C:
        raise ValueError(f"label {t} out of range for {C} classes")
    tau = np.zeros(C * (K + 1))
    base = t * (K + 1)
    tau[base] = alpha
    if K:
        tau[base + 1: base + K + 1] = (1.0 - alpha) / K
    return tau


def build_labels(labels, cfg):
    labels = np.asarray(labels, dtype=np.int64)
    C, K, alpha = cfg.num_classes, cfg.sub_centers, cfg.main_label_mass
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise ValueError(f"labels must lie in [0, {C})")
    T = np.zeros((labels.size, C, K + 1))
    rows = np.arange(labels.size)
    T[rows, labels, 0] = alpha
    if K:
        T[rows, labels, 1:] = (1.0 - alpha) / K
    return T.reshape(labels.size, C * (K + 1))


def forward_logits(x_batch, ew):
    x_batch = as_mat(x_batch, "features")
    if x_batch.shape[1] != ew.Wm.shape[0]:
        raise ValueError(f"feature dim {x_batch.shape[1]} != head dim {ew.Wm.shape[0]}")
    return gemm(x_batch, ew.Wm)


def inference_logits(x_batch, params):
    """Test-time logits from the class centers alone."""
    W = params.W if isinstance(params, HeadParams) else as_mat(params, "W")
    x_batch = as_mat(x_batch, "features")
    if x_batch.shape[1] != W.shape[0]:
        raise ValueError(f"feature dim {x_batch.shape[1]} != head dim {W.shape[0]}")
    return gemm(x_batch, W)


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("softmax needs finite logits")
    e = np.exp(z - z.max())
    return e / e.sum()


def ce_loss(probs, label):
    """Cross-entropy of one probability vector against a soft label."""
    probs = np.asarray(probs, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    if probs.shape != label.shape:
        raise ValueError(f"length mismatch: {probs.shape} vs {label.shape}")
    return float(-np.sum(label * np.log(np.maximum(probs, PROB_FLOOR))))


def sigma_loss(log_sigma):
    """Standard-deviation regularizer, summed over dimensions and averaged over classes.

    Written with ``expm1`` so each entry ``sigma**2 - 1 - log sigma**2`` is
    never rounded below zero.
    """
    ls = as_mat(log_sigma, "log_sigma")
    per_entry = np.expm1(2.0 * ls) - 2.0 * ls
    return float(0.5 * per_entry.sum() / ls.shape[1])


def sigma_loss_grad(log_sigma):
    ls = as_mat(log_sigma, "log_sigma")
    return np.expm1(2.0 * ls) / ls.shape[1]


def total_loss(l_m, l_sigma, cfg):
    return LossBreakdown(l_m, l_sigma, l_m + cfg.sigma_loss_weight * l_sigma)


def classification_loss(logits, targets):
    """Mean soft-label cross-entropy over the batch, plus ``dL/dlogits``."""
    losses, probs = softmax_xent(logits, targets)
    n = logits.shape[0]
    return float(losses.sum() / n), (probs - targets) / n


def expanded_grad_to_params(dWm, ew, params, cfg):
    """Fold a gradient on the expanded matrix back onto ``W`` and ``log_sigma``.

    Sub-centers pass their gradient straight to the mean, and to sigma
    through the frozen noise. The sigma regularizer is added here.
    """
    d, C, K = cfg.feature_dim, cfg.num_classes, ew.K
    g = dWm.reshape(d, C, K + 1)
    dW = g.sum(axis=2)
    dsigma = (g[:, :, 1:] * ew.eps.reshape(d, C, K)).sum(axis=2)
    dlog_sigma = dsigma * params.sigma + cfg.sigma_loss_weight * sigma_loss_grad(params.log_sigma)
    return dW, dlog_sigma


def backward(x_batch, labels, ew, params, cfg, targets=None):
    """Losses and analytic gradients for one training step.

    ``targets`` replaces the multi-center labels built from ``labels`` (used
    for label smoothing and MixUp).
    """
    check_draw(ew, params)
    x_batch = as_mat(x_batch, "features")
    if targets is None:
        targets = build_labels(labels, cfg)
    logits = forward_logits(x_batch, ew)
    l_m, dZ = classification_loss(logits, targets)
    losses = total_loss(l_m, sigma_loss(params.log_sigma), cfg)
    dWm = gemm(x_batch.T, dZ)
    dX = gemm(dZ, ew.Wm.T)
    dW, dlog_sigma = expanded_grad_to_params(dWm, ew, params, cfg)
    return losses, GradientSet(dW, dlog_sigma, dX)


def collapse_to_linear(params):
    """Drop sigma; what remains is the plain ``d x C`` classifier."""
    return params.W.copy()


def extra_training_params(d, C):
    """Parameters the full head carries beyond a vanilla ``d x C`` head."""
    return d * C
