"""AdamW training loop with warmup + cosine decay and per-step sub-center resampling."""
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import checkpoint
from .backbone import MlpSpec, identity_backbone, init_mlp, mlp_backward, mlp_forward
from .head import backward, build_labels, inference_logits, init_head, sample_sub_centers
from .numerics import RngStream
from .variants import am_backward, margin_mask, smooth_label

# sub-stream ids derived from the run seed
INIT_STREAM = 1
SHUFFLE_STREAM = 2
SUBCENTER_STREAM = 3
MIXUP_STREAM = 4


class TrainingAborted(RuntimeError):
    def __init__(self, message, last_good_checkpoint=None):
        super().__init__(message)
        self.last_good_checkpoint = last_good_checkpoint


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 128
    peak_lr: float = 1e-3
    min_lr: float = 1e-6
    warmup_epochs: int = 10
    weight_decay: float = 0.05
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    eval_every: int = 1

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.eval_every < 1:
            raise ValueError("epochs, batch_size and eval_every must be >= 1")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError(f"warmup_epochs must lie in [0, epochs), got {self.warmup_epochs}")
        if self.peak_lr <= 0 or self.min_lr < 0 or self.min_lr > self.peak_lr:
            raise ValueError("need 0 <= min_lr <= peak_lr and peak_lr > 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("adam betas must lie in (0, 1)")
        if self.adam_eps <= 0:
            raise ValueError("adam_eps must be > 0")


@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


@dataclass
class MetricsRecord:
    epoch: int
    step: int
    lr: float
    l_m: float
    l_sigma: float
    total: float
    train_acc: float
    test_acc: float
    mean_sigma2: float

    def to_json(self):
        return json.dumps(asdict(self))


@dataclass
class Model:
    head: object  # HeadParams
    backbone: object = None  # MlpParams, or None for the identity

    def features(self, x):
        if self.backbone is None:
            return identity_backbone(x), None
        return mlp_forward(x, self.backbone)

    def named_params(self):
        out = {"head.W": self.head.W, "head.log_sigma": self.head.log_sigma}
        if self.backbone is not None:
            out.update(self.backbone.named())
        return out


def build_model(head_cfg, layer_dims=None, seed=0):
    """Fresh model; ``layer_dims=None`` or a single dim means identity backbone."""
    rng = RngStream(seed, INIT_STREAM)
    backbone = None
    if layer_dims is not None and len(layer_dims) > 1:
        spec = MlpSpec(layer_dims)
        if spec.feature_dim != head_cfg.feature_dim:
            raise ValueError(f"backbone output dim {spec.feature_dim} != head feature_dim {head_cfg.feature_dim}")
        backbone = init_mlp(spec, rng)
    return Model(init_head(head_cfg, rng), backbone)


def warmup_steps(total_steps, cfg):
    return int(round(total_steps * cfg.warmup_epochs / cfg.epochs))


def lr_at(step, total_steps, cfg):
    """Linear warmup to ``peak_lr`` then cosine decay to ``min_lr`` at ``total_steps``."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    warm = warmup_steps(total_steps, cfg)
    if step < warm:
        return cfg.peak_lr * step / warm
    if total_steps == warm:
        return cfg.peak_lr
    progress = (step - warm) / (total_steps - warm)
    return cfg.min_lr + 0.5 * (cfg.peak_lr - cfg.min_lr) * (1.0 + math.cos(math.pi * progress))


def adamw_step(params, grads, state, lr, cfg, no_decay=()):
    """Bias-corrected Adam with decoupled weight decay, in place.

    ``params`` and ``grads`` map names to arrays. Names in ``no_decay`` skip
    the decay term.
    """
    for name, g in grads.items():
        bad = np.flatnonzero(~np.isfinite(g))
        if bad.size:
            idx = np.unravel_index(bad[0], g.shape)
            raise FloatingPointError(f"non-finite gradient in {name} at index {tuple(int(i) for i in idx)}")
        if params[name].shape != g.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, param has {params[name].shape}")
    state.step += 1
    t = state.step
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, g in grads.items():
        p = params[name]
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if name not in no_decay:
            p *= 1.0 - lr * cfg.weight_decay
        p -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
    return params, state


def predict(model, x):
    feats, _ = model.features(x)
    return np.argmax(inference_logits(feats, model.head), axis=1)


def evaluate(head, data, backbone=None):
    """Top-1 accuracy of the collapsed head; ``head`` may be HeadParams or a bare W."""
    if len(data) == 0:
        return 0.0
    feats = identity_backbone(data.features) if backbone is None else mlp_forward(data.features, backbone)[0]
    pred = np.argmax(inference_logits(feats, head), axis=1)
    return float(np.mean(pred == data.labels))


def model_checkpoint(model, K):
    return checkpoint.Checkpoint(model.head.W.copy(), model.head.log_sigma.copy(), K, model.backbone)


def train(model, train_set, test_set, head_cfg, cfg, variants=None, metrics_path=None, checkpoint_dir=None):
    """Train ``model`` in place; returns ``(model, list of MetricsRecord)``.

    With ``checkpoint_dir`` set, ``last_good.ckpt`` is refreshed after every
    epoch and is named in the abort raised on a non-finite loss.
    """
    n = len(train_set)
    if n == 0:
        raise ValueError("empty training set")
    if train_set.labels.max() >= head_cfg.num_classes:
        raise ValueError("training labels exceed num_classes")
    steps_per_epoch = -(-n // cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    root = RngStream(cfg.seed)
    shuffle_rng = root.spawn(SHUFFLE_STREAM)
    sub_rng = root.spawn(SUBCENTER_STREAM)
    mix_rng = root.spawn(MIXUP_STREAM)
    state = OptimizerState()
    params = model.named_params()
    no_decay = {name for name in params if name.endswith(".bias")}
    K = head_cfg.sub_centers
    use_am = variants is not None and variants.am_softmax
    use_mix = variants is not None and variants.mixup
    use_smooth = variants is not None and variants.label_smoothing

    last_good = None
    metrics = []
    test_acc = float("nan")
    metrics_file = open(metrics_path, "w") if metrics_path else None
    step = 0
    try:
        for epoch in range(1, cfg.epochs + 1):
            order = shuffle_rng.permutation(n)
            sums = np.zeros(3)
            correct = 0
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                x = train_set.features[idx]
                y = train_set.labels[idx]
                targets = build_labels(y, head_cfg)
                if use_smooth:
                    targets = smooth_label(targets, variants.smoothing_eps)
                mask = None
                if use_am:
                    mask = margin_mask(y, head_cfg.num_classes, K, variants.margin_on_subcenters)
                if use_mix:
                    lam = mix_rng.beta(variants.mixup_alpha, variants.mixup_alpha)
                    perm = mix_rng.permutation(idx.size)
                    x = lam * x + (1.0 - lam) * x[perm]
                    targets = lam * targets + (1.0 - lam) * targets[perm]
                    if mask is not None:
                        mask = mask | mask[perm]

                feats, cache = model.features(x)
                ew = sample_sub_centers(model.head, head_cfg, sub_rng)
                if use_am:
                    losses, grads = am_backward(feats, mask, targets, ew, model.head, head_cfg, variants)
                else:
                    losses, grads = backward(feats, y, ew, model.head, head_cfg, targets=targets)
                if not math.isfinite(losses.total):
                    raise TrainingAborted(
                        f"non-finite loss at epoch {epoch}, step {step}; last good checkpoint: {last_good}",
                        last_good,
                    )
                correct += int(np.sum(np.argmax(inference_logits(feats, model.head), axis=1) == y))
                sums += (losses.l_m, losses.l_sigma, losses.total)

                named_grads = {"head.W": grads.dW, "head.log_sigma": grads.dlog_sigma}
                if model.backbone is not None:
                    dws, dbs, _ = mlp_backward(grads.dX, cache, model.backbone)
                    for i, (dw, db) in enumerate(zip(dws, dbs)):
                        named_grads[f"backbone.{i}.weight"] = dw
                        named_grads[f"backbone.{i}.bias"] = db
                step += 1
                lr = lr_at(step, total_steps, cfg)
                adamw_step(params, named_grads, state, lr, cfg, no_decay)
                if model.backbone is not None:
                    model.backbone.version += 1

            if epoch % cfg.eval_every == 0 or epoch == 1 or epoch == cfg.epochs:
                test_acc = evaluate(model.head, test_set, model.backbone)
            mean = sums / steps_per_epoch
            record = MetricsRecord(
                epoch=epoch,
                step=step,
                lr=lr,
                l_m=float(mean[0]),
                l_sigma=float(mean[1]),
                total=float(mean[2]),
                train_acc=correct / n,
                test_acc=test_acc,
                mean_sigma2=float(np.mean(np.exp(2.0 * model.head.log_sigma))),
            )
            metrics.append(record)
            if metrics_file is not None:
                metrics_file.write(record.to_json() + "\n")
                metrics_file.flush()
            if checkpoint_dir is not None:
                last_good = os.path.join(checkpoint_dir, "last_good.ckpt")
                checkpoint.save(last_good, model_checkpoint(model, K))
    finally:
        if metrics_file is not None:
            metrics_file.close()
    return model, metrics
