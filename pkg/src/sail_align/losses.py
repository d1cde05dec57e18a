"""Contrastive objectives with analytic gradients.

Pairwise sigmoid loss over a batch of B projected pairs: with x_hat, y_hat
the L2-normalized rows, t = exp(log_scale) and logits l_ij = t * (x_hat_i
. y_hat_j) + bias,

    value = -(1/N) * sum_ij log sigmoid(z_ij * l_ij),       z_ij = +1 iff i = j else -1

where N = B ("batch" normalization) or B^2 ("batch_squared", which weighs
positives and negatives equally). log sigmoid is evaluated through the
softplus form so nothing overflows for |logits| up to at least 1e4.

The symmetric InfoNCE baseline uses a fixed logit scale and targets on the
diagonal. The multi-positive combination sums two sigmoid terms sharing
(log_scale, bias): one against the raw captions, one against the
high-quality captions.

Gradients are exact derivatives through the row normalization and through
t = exp(log_scale); they are reported w.r.t. the raw (pre-normalization)
inputs. Rows that are exactly zero receive zero gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError, ValidationError
from .linalg import matmul, row_norms, transpose

LOSS_KINDS = ("sigmoid", "infonce")
NORMALIZATIONS = ("batch", "batch_squared")


@dataclass(frozen=True)
class LossConfig:
    kind: str = "sigmoid"
    normalization: str = "batch_squared"
    log_scale: float = math.log(20.0)  # learnable; effective scale exp(log_scale)
    bias: float = -10.0  # learnable
    infonce_scale: float = 100.0  # fixed logit scale for the baseline

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss kind {self.kind!r}")
        if self.normalization not in NORMALIZATIONS:
            raise ConfigError(f"unknown normalization {self.normalization!r}")
        if self.infonce_scale <= 0:
            raise ConfigError("infonce_scale must be positive")


@dataclass(frozen=True)
class LossOutput:
    value: float
    d_x: np.ndarray
    d_y: np.ndarray
    d_log_scale: float
    d_bias: float
    d_y_hq: np.ndarray | None = None


def _softplus(u: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, u)


def _sigmoid(u: np.ndarray) -> np.ndarray:
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    eu = np.exp(u[~pos])
    out[~pos] = eu / (1.0 + eu)
    return out


def _check_pair(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2:
        raise ShapeError("loss inputs must be 2-D batches")
    if x.shape[1] != y.shape[1]:
        raise ShapeError(f"dim mismatch: {x.shape[1]} vs {y.shape[1]}")
    if x.shape[0] != y.shape[0]:
        raise ShapeError(f"batch mismatch: {x.shape[0]} vs {y.shape[0]}")
    if x.shape[0] < 2:
        raise ValidationError(f"contrastive batch needs >= 2 rows, got {x.shape[0]}")
    return x, y


def _normalize_rows(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = row_norms(v)
    safe = np.where(norms == 0.0, 1.0, norms)
    return v / safe[:, None], safe


def _grad_through_normalization(
    d_hat: np.ndarray, v_hat: np.ndarray, safe_norms: np.ndarray
) -> np.ndarray:
    # d/dv of f(v/||v||): remove the radial component, then scale by 1/||v||
    radial = np.einsum("ij,ij->i", d_hat, v_hat)
    return (d_hat - radial[:, None] * v_hat) / safe_norms[:, None]


def _sigmoid_forward(x: np.ndarray, y: np.ndarray, cfg: LossConfig):
    x, y = _check_pair(x, y)
    batch = x.shape[0]
    x_hat, x_norms = _normalize_rows(x)
    y_hat, y_norms = _normalize_rows(y)
    sims = matmul(x_hat, transpose(y_hat))
    with np.errstate(over="ignore"):
        t = float(np.exp(np.float64(cfg.log_scale)))  # inf on overflow, not an exception
    logits = t * sims + cfg.bias
    signs = 2.0 * np.eye(batch) - 1.0
    # normalize by B, then by B again for batch_squared: the two-step
    # division keeps the batch_squared value exactly (batch value) / B
    value = float(_softplus(-signs * logits).sum() / batch)
    if cfg.normalization == "batch_squared":
        value /= batch
    return value, (batch, t, sims, logits, signs, x_hat, x_norms, y_hat, y_norms)


def sigmoid_loss_value(x: np.ndarray, y: np.ndarray, cfg: LossConfig) -> float:
    """Loss value only; same forward computation, no gradient work."""
    return _sigmoid_forward(x, y, cfg)[0]


def sigmoid_loss(x: np.ndarray, y: np.ndarray, cfg: LossConfig) -> LossOutput:
    """Pairwise sigmoid loss; positives on the diagonal, negatives elsewhere."""
    value, fwd = _sigmoid_forward(x, y, cfg)
    batch, t, sims, logits, signs, x_hat, x_norms, y_hat, y_norms = fwd

    d_logits = (-signs) * _sigmoid(-signs * logits) / batch
    if cfg.normalization == "batch_squared":
        d_logits = d_logits / batch
    d_sims = t * d_logits
    d_log_scale = float(t * (d_logits * sims).sum())
    d_bias = float(d_logits.sum())

    d_x_hat = matmul(d_sims, y_hat)
    d_y_hat = matmul(transpose(d_sims), x_hat)
    d_x = _grad_through_normalization(d_x_hat, x_hat, x_norms)
    d_y = _grad_through_normalization(d_y_hat, y_hat, y_norms)
    return LossOutput(value=value, d_x=d_x, d_y=d_y, d_log_scale=d_log_scale, d_bias=d_bias)


def _log_softmax(a: np.ndarray, axis: int) -> np.ndarray:
    shifted = a - a.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def _infonce_forward(x: np.ndarray, y: np.ndarray, cfg: LossConfig):
    x, y = _check_pair(x, y)
    batch = x.shape[0]
    x_hat, x_norms = _normalize_rows(x)
    y_hat, y_norms = _normalize_rows(y)
    sims = matmul(x_hat, transpose(y_hat))
    logits = cfg.infonce_scale * sims
    lsm_rows = _log_softmax(logits, axis=1)
    lsm_cols = _log_softmax(logits, axis=0)
    diag = np.arange(batch)
    value = float(-(lsm_rows[diag, diag].sum() + lsm_cols[diag, diag].sum()) / (2 * batch))
    return value, (batch, lsm_rows, lsm_cols, x_hat, x_norms, y_hat, y_norms)


def infonce_loss_value(x: np.ndarray, y: np.ndarray, cfg: LossConfig) -> float:
    """Loss value only; same forward computation, no gradient work."""
    return _infonce_forward(x, y, cfg)[0]


def infonce_loss(x: np.ndarray, y: np.ndarray, cfg: LossConfig) -> LossOutput:
    """Symmetric cross-entropy over scaled cosine logits, diagonal targets."""
    value, fwd = _infonce_forward(x, y, cfg)
    batch, lsm_rows, lsm_cols, x_hat, x_norms, y_hat, y_norms = fwd

    p_rows = np.exp(lsm_rows)
    p_cols = np.exp(lsm_cols)
    eye = np.eye(batch)
    d_logits = ((p_rows - eye) + (p_cols - eye)) / (2 * batch)
    d_sims = cfg.infonce_scale * d_logits

    d_x_hat = matmul(d_sims, y_hat)
    d_y_hat = matmul(transpose(d_sims), x_hat)
    d_x = _grad_through_normalization(d_x_hat, x_hat, x_norms)
    d_y = _grad_through_normalization(d_y_hat, y_hat, y_norms)
    return LossOutput(value=value, d_x=d_x, d_y=d_y, d_log_scale=0.0, d_bias=0.0)


def _check_hq(y: np.ndarray, y_hq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y)
    y_hq = np.asarray(y_hq)
    if y.shape != y_hq.shape:
        raise ShapeError(f"y and y_hq shapes differ: {y.shape} vs {y_hq.shape}")
    return y, y_hq


def multi_positive_loss_value(
    x: np.ndarray, y: np.ndarray, y_hq: np.ndarray, cfg: LossConfig
) -> float:
    """Loss value only; same forward computation, no gradient work."""
    y, y_hq = _check_hq(y, y_hq)
    return sigmoid_loss_value(x, y, cfg) + sigmoid_loss_value(x, y_hq, cfg)


def multi_positive_loss(
    x: np.ndarray, y: np.ndarray, y_hq: np.ndarray, cfg: LossConfig
) -> LossOutput:
    """Sum of two sigmoid terms sharing (log_scale, bias); per-input gradients kept apart."""
    y, y_hq = _check_hq(y, y_hq)
    raw = sigmoid_loss(x, y, cfg)
    hq = sigmoid_loss(x, y_hq, cfg)
    return LossOutput(
        value=raw.value + hq.value,
        d_x=raw.d_x + hq.d_x,
        d_y=raw.d_y,
        d_y_hq=hq.d_y,
        d_log_scale=raw.d_log_scale + hq.d_log_scale,
        d_bias=raw.d_bias + hq.d_bias,
    )


def compute_loss(
    x: np.ndarray,
    y: np.ndarray,
    cfg: LossConfig,
    y_hq: np.ndarray | None = None,
) -> LossOutput:
    """Dispatch on configuration; y_hq triggers the multi-positive combination."""
    if y_hq is not None:
        if cfg.kind != "sigmoid":
            raise ConfigError("multi-positive training requires the sigmoid loss")
        return multi_positive_loss(x, y, y_hq, cfg)
    if cfg.kind == "sigmoid":
        return sigmoid_loss(x, y, cfg)
    return infonce_loss(x, y, cfg)
