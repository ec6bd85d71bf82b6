"""Duration losses, reconstruction and emotion-agreement metrics.

Duration losses compare predicted log durations with the logarithm of the
ground-truth repetition counts. Each has a ``*_grad`` companion returning the
loss and its gradient, with an optional 0/1 mask so padded batch positions
are left out of the mean.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .config import ConfigMixin

LOG_SIGMA_MIN = float(np.log(1e-3))
LOG_SIGMA_MAX = float(np.log(1e3))
HALF_LOG_2PI = 0.5 * float(np.log(2 * np.pi))
AROUSAL_RANGE = 6.0

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossWeights(ConfigMixin):
    """Weights of the adversarial, reconstruction, emotion and duration terms."""

    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    lambda4: float = 2.0

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3", "lambda4"):
            value = float(getattr(self, name))
            if not np.isfinite(value) or value < 0:
                raise ValueError(f'loss weight "{name}" must be finite and non-negative, got {value}')
            object.__setattr__(self, name, value)


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Frames x mel-bins features computed outside this package."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"feature matrix must be 2-D (frames x bins), got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("feature matrix has non-finite entries")
        object.__setattr__(self, "values", values)

    @property
    def shape(self):
        return self.values.shape


def _pair(pred, target, mask):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match target shape {target.shape}")
    if pred.size == 0:
        raise ValueError("loss of an empty prediction is undefined")
    if mask is None:
        mask = np.ones_like(pred)
    else:
        mask = np.asarray(mask, dtype=np.float64)
        if mask.shape != pred.shape:
            raise ValueError(f"mask shape {mask.shape} does not match prediction shape {pred.shape}")
    count = mask.sum()
    if count <= 0:
        raise ValueError("mask leaves no position to average over")
    return pred, target, mask, count


def loss_mse_grad(pred, target, mask=None):
    """Mean squared error and its gradient with respect to ``pred``."""
    pred, target, mask, count = _pair(pred, target, mask)
    diff = (pred - target) * mask
    return float((diff**2).sum() / count), 2.0 * diff / count


def loss_mse(pred, target, mask=None):
    """Mean squared error between predicted and target log durations.

    >>> loss_mse([0.0, 0.0], [1.0, 1.0])
    1.0
    """
    return loss_mse_grad(pred, target, mask)[0]


def loss_abs_grad(pred, target, mask=None):
    """Mean absolute error and its subgradient with respect to ``pred``."""
    pred, target, mask, count = _pair(pred, target, mask)
    diff = (pred - target) * mask
    return float(np.abs(diff).sum() / count), np.sign(diff) / count


def loss_abs(pred, target, mask=None):
    return loss_abs_grad(pred, target, mask)[0]


def loss_nll_grad(pred_mean, pred_log_sigma, target, mask=None):
    """Gaussian negative log-likelihood over log durations and its gradients.

    ``sigma = exp(log_sigma)`` is clamped to ``[1e-3, 1e3]``; the gradient
    with respect to ``log_sigma`` is zero where the clamp is active.

    Returns:
        tuple: ``(loss, d_mean, d_log_sigma)``.
    """
    pred_mean, target, mask, count = _pair(pred_mean, target, mask)
    pred_log_sigma = np.asarray(pred_log_sigma, dtype=np.float64)
    if pred_log_sigma.shape != pred_mean.shape:
        raise ValueError(f"log sigma shape {pred_log_sigma.shape} does not match mean shape {pred_mean.shape}")
    if not np.all(np.isfinite(pred_log_sigma[mask > 0])):
        raise ValueError("predicted sigma must be finite")
    log_sigma = np.clip(np.where(mask > 0, pred_log_sigma, 0.0), LOG_SIGMA_MIN, LOG_SIGMA_MAX)
    inv_var = np.exp(-2.0 * log_sigma)
    residual = (target - pred_mean) * mask
    terms = (HALF_LOG_2PI + log_sigma + 0.5 * residual**2 * inv_var) * mask
    d_mean = -residual * inv_var / count
    inside = (pred_log_sigma > LOG_SIGMA_MIN) & (pred_log_sigma < LOG_SIGMA_MAX)
    d_log_sigma = (1.0 - residual**2 * inv_var) * mask * inside / count
    return float(terms.sum() / count), d_mean, d_log_sigma


def loss_nll(pred_mean, pred_log_sigma, target, mask=None):
    """Mean of ``0.5 * log(2 pi sigma^2) + (target - mean)^2 / (2 sigma^2)``."""
    return loss_nll_grad(pred_mean, pred_log_sigma, target, mask)[0]


def constant_minimizer(values, kind):
    """The constant prediction minimising a loss over ``values``: mean for mse, median for abs."""
    values = np.asarray(values, dtype=np.float64)
    if kind == "mse":
        return float(values.mean())
    if kind == "abs":
        return float(np.median(values))
    raise ValueError(f'unknown loss kind "{kind}"')


def ccc(x, y):
    """Concordance correlation coefficient with population moments.

    >>> round(ccc([1, 2, 3], [2, 3, 4]), 4)
    0.5714
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ValueError(f"ccc needs equal lengths, got {len(x)} and {len(y)}")
    if len(x) < 2:
        raise ValueError("ccc needs at least two pairs")
    mean_x, mean_y = x.mean(), y.mean()
    var_x, var_y = x.var(), y.var()
    if var_x + var_y == 0:
        logger.warning("ccc of two constant sequences (means %g and %g) is undefined, returning 0", mean_x, mean_y)
        return 0.0
    covariance = ((x - mean_x) * (y - mean_y)).mean()
    return float(2.0 * covariance / (var_x + var_y + (mean_x - mean_y) ** 2))


def loss_ser(e_true, e_pred, mode="batch"):
    """Emotion-agreement loss ``1 - ccc`` between true and recognised arousal.

    Args:
        e_true: true arousal values. In ``utterance`` mode, a list of
            per-frame arrays, one per utterance.
        e_pred: recognised arousal values, shaped like ``e_true``.
        mode (str): ``batch`` computes one ccc over all utterances,
            ``utterance`` sums ``1 - ccc`` over utterances.
    """
    if mode == "batch":
        return 1.0 - ccc(e_true, e_pred)
    if mode == "utterance":
        if len(e_true) != len(e_pred):
            raise ValueError(f"got {len(e_true)} true sequences but {len(e_pred)} predictions")
        return float(sum(1.0 - ccc(t, p) for t, p in zip(e_true, e_pred)))
    raise ValueError(f'unknown ser loss mode "{mode}", choose from batch, utterance')


def loss_recon(a, b):
    """L1 distance between two feature matrices of identical shape."""
    a = a if isinstance(a, FeatureMatrix) else FeatureMatrix(a)
    b = b if isinstance(b, FeatureMatrix) else FeatureMatrix(b)
    if a.shape != b.shape:
        raise ValueError(f"feature matrices differ in shape: {a.shape} != {b.shape}")
    return float(np.abs(a.values - b.values).sum())


@dataclass(frozen=True)
class CompositeLoss:
    """Weighted total of the loss terms plus the names of the absent ones."""

    total: float
    terms: dict
    absent: tuple

    def __float__(self):
        return self.total


def loss_composite(parts, weights=None):
    """Weighted sum ``l1 * gan + l2 * recon + l3 * ser + l4 * dur``.

    Args:
        parts (dict): ``dur`` is required; ``gan``, ``recon`` and ``ser`` are
            optional and count as 0 when absent or None.
        weights (LossWeights): term weights, defaults when omitted.

    Returns:
        CompositeLoss: the total, the weighted terms and the absent names.
    """
    weights = weights or LossWeights()
    unknown = sorted(set(parts) - {"gan", "recon", "ser", "dur"})
    if unknown:
        raise KeyError(f"unsupported loss term(s) {', '.join(unknown)}")
    if parts.get("dur") is None:
        raise ValueError("the duration term is required")
    lambdas = {"gan": weights.lambda1, "recon": weights.lambda2, "ser": weights.lambda3, "dur": weights.lambda4}
    terms = {}
    absent = []
    for name, weight in lambdas.items():
        value = parts.get(name)
        if value is None:
            absent.append(name)
            continue
        value = float(value)
        if not np.isfinite(value):
            raise ValueError(f'loss term "{name}" is not finite')
        terms[name] = weight * value
    if absent:
        logger.debug("loss terms absent from the composite: %s", ", ".join(absent))
    return CompositeLoss(total=float(sum(terms.values())), terms=terms, absent=tuple(absent))


def ser_error(target_arousal, predicted_arousal):
    """Emotion-conversion error between target arousal and recognised arousal.

    Returns:
        dict: ``mse`` and ``abs_percent``, the mean absolute error as a
        percentage of the 1-7 scale width.
    """
    target = np.asarray(target_arousal, dtype=np.float64).reshape(-1)
    predicted = np.asarray(predicted_arousal, dtype=np.float64).reshape(-1)
    if target.shape != predicted.shape or target.size == 0:
        raise ValueError("ser error needs two non-empty sequences of equal length")
    return {
        "mse": float(((target - predicted) ** 2).mean()),
        "abs_percent": float(100.0 * np.abs(target - predicted).mean() / AROUSAL_RANGE),
    }
