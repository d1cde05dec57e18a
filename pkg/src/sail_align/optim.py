"""Sign-momentum optimizer with decoupled weight decay.

Per step, for each parameter tensor with momentum buffer m and gradient g:

    update = sign(beta1 * m + (1 - beta1) * g)        sign(0) = 0
    param' = param - lr * (update + weight_decay * param)
    m'     = beta2 * m + (1 - beta2) * g

With weight_decay = 0 every coordinate therefore moves by exactly 0 or
+-lr. Scale parameters (temperature, bias) are exempted from decay via
``decay_exempt``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, ShapeError, ValidationError


@dataclass(frozen=True)
class LionState:
    momenta: dict[str, np.ndarray]
    beta1: float = 0.9
    beta2: float = 0.99
    lr: float = 1e-5
    weight_decay: float = 1e-7
    step: int = 0

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("betas must lie in [0, 1)")
        if self.lr < 0.0:
            # lr = 0 is allowed: it turns the step into an exact no-op,
            # which the trainer's sanity path relies on
            raise ConfigError("lr must be non-negative")


def init_lion(
    params: dict[str, np.ndarray],
    beta1: float = 0.9,
    beta2: float = 0.99,
    lr: float = 1e-5,
    weight_decay: float = 1e-7,
) -> LionState:
    momenta = {k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()}
    return LionState(momenta=momenta, beta1=beta1, beta2=beta2, lr=lr, weight_decay=weight_decay)


def lion_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: LionState,
    decay_exempt: frozenset[str] | set[str] = frozenset(),
) -> tuple[dict[str, np.ndarray], LionState]:
    """One update; returns fresh parameter and state dicts."""
    if set(params) != set(grads) or set(params) != set(state.momenta):
        raise ShapeError("params, grads and momenta must share the same keys")
    new_params: dict[str, np.ndarray] = {}
    new_momenta: dict[str, np.ndarray] = {}
    for name in params:
        theta = np.asarray(params[name], dtype=np.float64)
        g = np.asarray(grads[name], dtype=np.float64)
        m = state.momenta[name]
        if g.shape != theta.shape or m.shape != theta.shape:
            raise ShapeError(
                f"shape mismatch for {name!r}: param {theta.shape}, "
                f"grad {g.shape}, momentum {m.shape}"
            )
        if not np.isfinite(g).all():
            raise ValidationError(f"non-finite gradient for parameter {name!r}")
        update = np.sign(state.beta1 * m + (1.0 - state.beta1) * g)
        wd = 0.0 if name in decay_exempt else state.weight_decay
        new_params[name] = theta - state.lr * (update + wd * theta)
        new_momenta[name] = state.beta2 * m + (1.0 - state.beta2) * g
    return new_params, replace(state, momenta=new_momenta, step=state.step + 1)
