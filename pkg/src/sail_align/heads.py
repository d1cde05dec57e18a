"""Alignment heads: linear, one-hidden-layer MLP, and gated linear unit.

Forward maps (rows of x are samples):

    linear  y = x W^T + c
    mlp     y = relu(x W1^T + c1) W2^T + c2
    glu     y = (relu(x Wg^T) * (x Wu^T)) Wd^T + c

The GLU follows the ReGLU arrangement: ReLU on the gate branch, identity
on the up branch, bias only on the down projection. Backward passes are
hand-derived; the ReLU subgradient at 0 is taken as 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError, ValidationError
from .linalg import matmul, transpose

KINDS = ("linear", "mlp", "glu")


@dataclass(frozen=True)
class HeadConfig:
    kind: str
    in_dim: int
    out_dim: int
    expansion: int = 1  # hidden dim = expansion * in_dim; ignored for linear
    init_seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown head kind {self.kind!r}, expected one of {KINDS}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise ConfigError("head dims must be >= 1")
        if self.expansion < 1:
            raise ConfigError("expansion must be >= 1")

    @property
    def hidden_dim(self) -> int:
        return self.expansion * self.in_dim


@dataclass(frozen=True)
class HeadParams:
    config: HeadConfig
    tensors: dict[str, np.ndarray]

    def __post_init__(self):
        for name, arr in self.tensors.items():
            if not np.isfinite(arr).all():
                raise ValidationError(f"head tensor {name!r} contains non-finite values")


@dataclass(frozen=True)
class ForwardCache:
    config: HeadConfig
    x: np.ndarray
    intermediates: dict[str, np.ndarray]


@dataclass(frozen=True)
class HeadGradients:
    tensors: dict[str, np.ndarray]
    d_input: np.ndarray


def _tensor_shapes(cfg: HeadConfig) -> dict[str, tuple[int, ...]]:
    h = cfg.hidden_dim
    if cfg.kind == "linear":
        return {"W": (cfg.out_dim, cfg.in_dim), "c": (cfg.out_dim,)}
    if cfg.kind == "mlp":
        return {
            "W1": (h, cfg.in_dim),
            "c1": (h,),
            "W2": (cfg.out_dim, h),
            "c2": (cfg.out_dim,),
        }
    return {
        "W_gate": (h, cfg.in_dim),
        "W_up": (h, cfg.in_dim),
        "W_down": (cfg.out_dim, h),
        "c_down": (cfg.out_dim,),
    }


def init_head(cfg: HeadConfig) -> HeadParams:
    """Weights ~ U(-1/sqrt(fan_in), +1/sqrt(fan_in)), biases zero, seeded."""
    rng = np.random.default_rng(cfg.init_seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in _tensor_shapes(cfg).items():
        if len(shape) == 1:
            tensors[name] = np.zeros(shape, dtype=np.float64)
        else:
            bound = 1.0 / np.sqrt(shape[1])
            tensors[name] = rng.uniform(-bound, bound, size=shape)
    return HeadParams(config=cfg, tensors=tensors)


def _check_input(cfg: HeadConfig, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"head input must be 2-D, got shape {x.shape}")
    if x.shape[1] != cfg.in_dim:
        raise ShapeError(f"head expects in_dim={cfg.in_dim}, got {x.shape[1]}")
    return x


def head_forward(params: HeadParams, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    cfg = params.config
    x = _check_input(cfg, x)
    t = params.tensors
    if cfg.kind == "linear":
        y = matmul(x, transpose(t["W"])) + t["c"]
        cache = ForwardCache(cfg, x, {})
    elif cfg.kind == "mlp":
        pre = matmul(x, transpose(t["W1"])) + t["c1"]
        hidden = np.maximum(pre, 0.0)
        y = matmul(hidden, transpose(t["W2"])) + t["c2"]
        cache = ForwardCache(cfg, x, {"pre": pre, "hidden": hidden})
    else:
        gate_pre = matmul(x, transpose(t["W_gate"]))
        gate = np.maximum(gate_pre, 0.0)
        up = matmul(x, transpose(t["W_up"]))
        gated = gate * up
        y = matmul(gated, transpose(t["W_down"])) + t["c_down"]
        cache = ForwardCache(cfg, x, {"gate_pre": gate_pre, "gate": gate, "up": up, "gated": gated})
    return y, cache


def head_backward(params: HeadParams, cache: ForwardCache, d_out: np.ndarray) -> HeadGradients:
    cfg = params.config
    if cache.config != cfg:
        raise ShapeError("forward cache does not match these parameters")
    d_out = np.asarray(d_out, dtype=np.float64)
    if d_out.shape != (cache.x.shape[0], cfg.out_dim):
        raise ShapeError(
            f"d_out shape {d_out.shape} != ({cache.x.shape[0]}, {cfg.out_dim})"
        )
    t = params.tensors
    x = cache.x
    if cfg.kind == "linear":
        grads = {"W": matmul(transpose(d_out), x), "c": d_out.sum(axis=0)}
        d_x = matmul(d_out, t["W"])
    elif cfg.kind == "mlp":
        d_hidden = matmul(d_out, t["W2"])
        d_pre = d_hidden * (cache.intermediates["pre"] > 0.0)
        grads = {
            "W1": matmul(transpose(d_pre), x),
            "c1": d_pre.sum(axis=0),
            "W2": matmul(transpose(d_out), cache.intermediates["hidden"]),
            "c2": d_out.sum(axis=0),
        }
        d_x = matmul(d_pre, t["W1"])
    else:
        inter = cache.intermediates
        d_gated = matmul(d_out, t["W_down"])
        d_gate = d_gated * inter["up"]
        d_up = d_gated * inter["gate"]
        d_gate_pre = d_gate * (inter["gate_pre"] > 0.0)
        grads = {
            "W_gate": matmul(transpose(d_gate_pre), x),
            "W_up": matmul(transpose(d_up), x),
            "W_down": matmul(transpose(d_out), inter["gated"]),
            "c_down": d_out.sum(axis=0),
        }
        d_x = matmul(d_gate_pre, t["W_gate"]) + matmul(d_up, t["W_up"])
    return HeadGradients(tensors=grads, d_input=d_x)
