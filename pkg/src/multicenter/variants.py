"""Label smoothing, MixUp label blending and additive-margin softmax on the expanded head."""
from dataclasses import dataclass

import numpy as np

from .head import GradientSet, check_draw, classification_loss, expanded_grad_to_params, sigma_loss, total_loss
from .numerics import as_mat, gemm


@dataclass
class VariantConfig:
    smoothing_eps: float = 0.1
    mixup_alpha: float = 0.8
    am_margin: float = 0.35
    am_scale: float = 30.0
    margin_on_subcenters: bool = True
    # which variants the trainer switches on
    label_smoothing: bool = False
    mixup: bool = False
    am_softmax: bool = False

    def __post_init__(self):
        if not 0.0 <= self.smoothing_eps < 1.0:
            raise ValueError(f"smoothing_eps must lie in [0, 1), got {self.smoothing_eps}")
        if self.mixup_alpha <= 0:
            raise ValueError(f"mixup_alpha must be > 0, got {self.mixup_alpha}")
        if self.am_margin < 0:
            raise ValueError(f"am_margin must be >= 0, got {self.am_margin}")
        if self.am_scale <= 0:
            raise ValueError(f"am_scale must be > 0, got {self.am_scale}")


def smooth_label(label, eps, total_slots=None):
    """Mix a label with the uniform distribution over every slot."""
    label = np.asarray(label, dtype=np.float64)
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"eps must lie in [0, 1), got {eps}")
    if total_slots is None:
        total_slots = label.shape[-1]
    if total_slots != label.shape[-1]:
        raise ValueError(f"label has {label.shape[-1]} slots, expected {total_slots}")
    if eps == 0.0:
        return label.copy()
    return (1.0 - eps) * label + eps / total_slots


def mixup_labels(a, b, lam):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"cannot mix labels of shape {a.shape} and {b.shape}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    return lam * a + (1.0 - lam) * b


def margin_mask(labels, num_classes, K, on_subcenters=True):
    """Boolean ``n x C(K+1)`` mask of the slots that receive the margin."""
    labels = np.asarray(labels, dtype=np.int64)
    mask = np.zeros((labels.size, num_classes, K + 1), dtype=bool)
    rows = np.arange(labels.size)
    if on_subcenters:
        mask[rows, labels, :] = True
    else:
        mask[rows, labels, 0] = True
    return mask.reshape(labels.size, num_classes * (K + 1))


def _normalize_rows(x, what):
    norms = np.sqrt(np.sum(x * x, axis=1))
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        raise ValueError(f"zero-norm {what} at index {int(bad[0])}")
    return x / norms[:, None], norms


def _cosines(x_batch, Wm):
    x_hat, x_norm = _normalize_rows(as_mat(x_batch, "features"), "feature row")
    w_hat_t, w_norm = _normalize_rows(Wm.T, "weight column")
    return gemm(x_hat, w_hat_t.T), x_hat, x_norm, w_hat_t.T, w_norm


def am_logits_masked(x_batch, ew, mask, cfg):
    cos, *_ = _cosines(x_batch, ew.Wm)
    return cfg.am_scale * (cos - cfg.am_margin * mask)


def am_logits(x_batch, ew, labels, cfg):
    """Scaled cosine logits with the additive margin taken off target slots."""
    C = ew.Wm.shape[1] // (ew.K + 1)
    mask = margin_mask(labels, C, ew.K, cfg.margin_on_subcenters)
    return am_logits_masked(x_batch, ew, mask, cfg)


def _unnormalize_grad(g_hat, v_hat, norms, axis):
    # d(v/|v|) chained back to v
    radial = np.sum(v_hat * g_hat, axis=axis, keepdims=True)
    return (g_hat - v_hat * radial) / np.expand_dims(norms, axis)


def am_backward(x_batch, mask, targets, ew, params, head_cfg, cfg):
    """Losses and gradients when the expanded head is scored with AM-softmax."""
    check_draw(ew, params)
    x_batch = as_mat(x_batch, "features")
    cos, x_hat, x_norm, w_hat, w_norm = _cosines(x_batch, ew.Wm)
    logits = cfg.am_scale * (cos - cfg.am_margin * mask)
    l_m, dZ = classification_loss(logits, targets)
    losses = total_loss(l_m, sigma_loss(params.log_sigma), head_cfg)
    dcos = cfg.am_scale * dZ
    dX = _unnormalize_grad(gemm(dcos, w_hat.T), x_hat, x_norm, axis=1)
    dWm = _unnormalize_grad(gemm(x_hat.T, dcos), w_hat, w_norm, axis=0)
    dW, dlog_sigma = expanded_grad_to_params(dWm, ew, params, head_cfg)
    return losses, GradientSet(dW, dlog_sigma, dX)
