"""Small ReLU MLP feature extractor with hand-written backprop."""
from dataclasses import dataclass, field

import numpy as np

from .numerics import as_mat, gemm


class StaleCacheError(ValueError):
    pass


@dataclass
class MlpSpec:
    layer_dims: list

    def __post_init__(self):
        self.layer_dims = [int(v) for v in self.layer_dims]
        if len(self.layer_dims) < 2:
            raise ValueError("an MLP needs at least one affine layer (two dims)")
        if any(v < 1 for v in self.layer_dims):
            raise ValueError(f"layer dims must be positive, got {self.layer_dims}")

    @property
    def feature_dim(self):
        return self.layer_dims[-1]


@dataclass
class MlpParams:
    weights: list  # fan_in x fan_out per layer
    biases: list
    version: int = 0

    @property
    def layer_dims(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def param_count(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def named(self):
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"backbone.{i}.weight"] = w
            out[f"backbone.{i}.bias"] = b
        return out


@dataclass
class MlpCache:
    inputs: list = field(default_factory=list)  # input to each affine layer
    preacts: list = field(default_factory=list)
    params_id: int = 0
    version: int = 0


def init_mlp(spec, rng):
    """Kaiming fan-in normal weights, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_dims[:-1], spec.layer_dims[1:]):
        std = np.sqrt(2.0 / fan_in)
        weights.append(rng.standard_normal(fan_in * fan_out).reshape(fan_in, fan_out) * std)
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def mlp_forward(x_batch, params):
    x = as_mat(x_batch, "input")
    if x.shape[1] != params.weights[0].shape[0]:
        raise ValueError(f"input dim {x.shape[1]} != {params.weights[0].shape[0]}")
    cache = MlpCache(params_id=id(params), version=params.version)
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        cache.inputs.append(h)
        z = gemm(h, w) + b
        cache.preacts.append(z)
        h = z if i == last else np.maximum(z, 0.0)
    return h, cache


def mlp_backward(d_features, cache, params):
    """Returns ``(weight_grads, bias_grads, d_input)``.

    The ReLU sub-gradient at exactly zero is taken as zero.
    """
    if cache.params_id != id(params) or cache.version != params.version:
        raise StaleCacheError("forward cache does not belong to the current parameters")
    g = as_mat(d_features, "feature gradient")
    n_layers = len(params.weights)
    dws, dbs = [None] * n_layers, [None] * n_layers
    for i in reversed(range(n_layers)):
        if i != n_layers - 1:
            g = g * (cache.preacts[i] > 0.0)
        dws[i] = gemm(cache.inputs[i].T, g)
        dbs[i] = g.sum(axis=0)
        g = gemm(g, params.weights[i].T)
    return dws, dbs, g


def identity_backbone(x_batch):
    return as_mat(x_batch, "input")
