"""Training objectives with their gradients at the logits.

Every loss takes softmax probability rows (as produced by ``nn.forward``) and
returns ``(value, grad_logits)``, mean-reduced over the batch, so the gradient
can be fed straight into ``nn.backward``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .nn import ModelParams

PROB_FLOOR = 1e-12
LOG_FLOOR = float(np.log(PROB_FLOOR))


@dataclass(frozen=True)
class LossConfig:
    num_classes: int
    mu: float = 0.0
    lam: float = 0.0
    prox_mu: float = 0.0

    def __post_init__(self):
        if self.num_classes < 1:
            raise ConfigError("num_classes must be positive")
        if not 0.0 <= self.mu < 1.0:
            raise ConfigError(f"label smoothing mu must be in [0, 1), got {self.mu}")
        if self.lam < 0 or self.prox_mu < 0:
            raise ConfigError("lam and prox_mu must be nonnegative")


def _clamped_log(pred):
    mask = pred > PROB_FLOOR
    return np.log(np.maximum(pred, PROB_FLOOR)), mask.astype(np.float64)


def _check_probs(pred):
    pred = np.asarray(pred, dtype=np.float64)
    if pred.ndim != 2 or pred.shape[0] == 0:
        raise ConfigError(f"expected a nonempty [n, C] probability matrix, got {pred.shape}")
    return pred


def _onehot(labels, num_classes):
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise DataError("labels must be a 1-D array of class indices")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise DataError(f"label out of range [0, {num_classes})")
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def soft_target_ce(pred: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean of ``-sum_c t_c log p_c`` and its logit gradient.

    Clamped log entries contribute no gradient; without clamping the gradient
    is ``(p * sum(t) - t) / n``.
    """
    logp, mask = _clamped_log(pred)
    n = pred.shape[0]
    value = -np.sum(targets * logp) / n
    tm = targets * mask
    grad = (pred * tm.sum(axis=1, keepdims=True) - tm) / n
    return float(value), grad


def cross_entropy(pred, labels) -> tuple[float, np.ndarray]:
    pred = _check_probs(pred)
    return soft_target_ce(pred, _onehot(labels, pred.shape[1]))


def smoothed_targets(labels, mu: float, num_classes: int) -> np.ndarray:
    return (1.0 - mu) * _onehot(labels, num_classes) + mu / num_classes


def label_smoothed_ce(pred, labels, mu: float, num_classes: int | None = None):
    pred = _check_probs(pred)
    c = pred.shape[1] if num_classes is None else num_classes
    if c != pred.shape[1]:
        raise ConfigError(f"num_classes={c} but predictions have {pred.shape[1]} columns")
    if mu == 0.0:
        return soft_target_ce(pred, _onehot(labels, c))
    return soft_target_ce(pred, smoothed_targets(labels, mu, c))


def negative_distillation(pred_global, pred_private) -> tuple[float, np.ndarray]:
    """Adversarial term: ``+mean_i sum_c q_c log f_c``.

    This is the soft cross-entropy to the private model's predictions ``q``
    with its sign flipped, so descending on it drives ``f`` away from ``q``.
    ``q`` is treated as a constant.
    """
    f = _check_probs(pred_global)
    q = np.asarray(pred_private, dtype=np.float64)
    if q.shape != f.shape:
        raise ConfigError(f"prediction shapes differ: {f.shape} vs {q.shape}")
    value, grad = soft_target_ce(f, q)
    return -value, -grad


def combined_loss(pred_global, pred_private, labels, cfg: LossConfig):
    ls_val, ls_grad = label_smoothed_ce(pred_global, labels, cfg.mu, cfg.num_classes)
    if pred_private is None:
        if cfg.lam != 0.0:
            raise ConfigError("adversarial weight is nonzero but no private predictions given")
        return ls_val, ls_grad
    adv_val, adv_grad = negative_distillation(pred_global, pred_private)
    return ls_val + cfg.lam * adv_val, ls_grad + cfg.lam * adv_grad


def prox_term(model: ModelParams, anchor: ModelParams, prox_mu: float):
    """``(prox_mu / 2) * ||model - anchor||^2`` and its parameter gradient."""
    if model.spec != anchor.spec:
        raise ConfigError("prox_term: model and anchor have different layer specs")
    diff = model - anchor
    return 0.5 * prox_mu * diff.sq_norm(), diff * prox_mu
