"""Fine-tuning losses: cross-entropy, logit adjustment, SuperLoss, and their combination.

The SuperLoss confidence sigma* has a closed form through the principal
branch of the Lambert W function; sigma* is treated as a detached constant
during backpropagation, so the gradient of the wrapped loss with respect to
the base loss equals sigma*.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError
from .tensor import Tensor, add, gather_rows, log_sum_exp, mean, mul, sub, _as_tensor

_BRANCH_POINT = -np.exp(-1.0)  # smallest argument of W0

CLAMP_MODES = ("lower_bound", "as_written")
LOSS_KINDS = ("ce", "ce_sl", "la", "la_sl")


def lambert_w0(x):
    """Principal branch of the Lambert W function, w * exp(w) = x, w >= -1.

    Accepts a scalar or array with x >= -1/e (values within 1e-12 below the
    branch point are clamped onto it). Halley iteration from a piecewise
    initial guess; residual |w*exp(w) - x| <= 1e-12 * max(1, |x|).
    """
    scalar = np.isscalar(x) or np.ndim(x) == 0
    z = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if not np.all(np.isfinite(z)):
        raise ValidationError("lambert_w0: argument must be finite")
    if np.any(z < _BRANCH_POINT - 1e-12):
        raise ValidationError(f"lambert_w0: argument below -1/e (min was {z.min()!r})")
    z = np.maximum(z, _BRANCH_POINT)

    # initial guess: series near the branch point, w ~ z for small z,
    # asymptotic log(z) - log(log(z)) for large z
    p = np.sqrt(np.maximum(2.0 * (np.e * z + 1.0), 0.0))
    near = -1.0 + p - p * p / 3.0 + (11.0 / 72.0) * p ** 3
    with np.errstate(divide="ignore", invalid="ignore"):
        lz = np.log(np.where(z > 1.0, z, np.e))
        big = lz - np.log(lz)
    w = np.where(z < -0.25, near, np.where(z <= np.e, z / (1.0 + z), big))

    for _ in range(64):
        ew = np.exp(w)
        f = w * ew - z
        wp1 = w + 1.0
        safe = np.abs(wp1) > 1e-12
        denom = np.where(safe, ew * wp1 - (w + 2.0) * f / (2.0 * np.where(safe, wp1, 1.0)), 1.0)
        dw = np.where(f == 0.0, 0.0, f / denom)
        w = w - dw
        if np.all(np.abs(dw) <= 1e-15 * (1.0 + np.abs(w))):
            break

    w[z == _BRANCH_POINT] = -1.0
    return float(w[0]) if scalar else w


@dataclass
class Priors:
    """Observed class distribution pi over C classes."""

    pi: np.ndarray

    def __post_init__(self):
        self.pi = np.asarray(self.pi, dtype=np.float64)
        if self.pi.ndim != 1 or self.pi.size < 2:
            raise ValidationError(f"priors must be a vector over >= 2 classes, got shape {self.pi.shape}")
        if np.any(self.pi <= 0.0):
            raise ValidationError("priors must be strictly positive")
        if abs(self.pi.sum() - 1.0) > 1e-12:
            raise ValidationError(f"priors must sum to 1, got {self.pi.sum()!r}")

    @classmethod
    def uniform(cls, num_classes: int) -> "Priors":
        return cls(np.full(num_classes, 1.0 / num_classes))

    @property
    def num_classes(self) -> int:
        return self.pi.size


@dataclass
class SuperLossParams:
    """Threshold tau (expected average-sample loss) and regularization lambda."""

    tau: float
    lam: float = 4.0
    clamp_mode: str = "lower_bound"

    def __post_init__(self):
        if not np.isfinite(self.tau):
            raise ValidationError("superloss tau must be finite")
        if self.lam <= 0:
            raise ValidationError(f"superloss lambda must be positive, got {self.lam}")
        if self.clamp_mode not in CLAMP_MODES:
            raise ValidationError(f"clamp_mode must be one of {CLAMP_MODES}, got '{self.clamp_mode}'")

    @classmethod
    def for_classes(cls, num_classes: int, lam: float = 4.0, clamp_mode: str = "lower_bound") -> "SuperLossParams":
        return cls(tau=float(np.log(num_classes)), lam=lam, clamp_mode=clamp_mode)


@dataclass
class ConfidenceReport:
    """Per-sample base losses, confidences, and the wrapped batch loss."""

    base_losses: np.ndarray
    sigma: np.ndarray
    per_sample: np.ndarray
    loss: Tensor  # batch mean, differentiable through the base losses only


def logit_adjust(logits: Tensor, priors: Priors) -> Tensor:
    """Add log(pi_y) to column y of every row; identity Jacobian w.r.t. logits."""
    logits = _as_tensor(logits)
    if logits.ndim != 2 or logits.shape[1] != priors.num_classes:
        raise ShapeError(f"logit_adjust: logits {logits.shape} vs {priors.num_classes} priors")
    return add(logits, Tensor(np.log(priors.pi)))


def _nll(adjusted: Tensor, labels: np.ndarray) -> Tensor:
    return sub(log_sum_exp(adjusted, axis=-1), gather_rows(adjusted, labels))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Per-sample softmax cross-entropy via log-sum-exp."""
    return _nll(_as_tensor(logits), np.asarray(labels))


def la_loss(logits: Tensor, labels, priors: Priors) -> Tensor:
    """Per-sample logit-adjusted cross-entropy."""
    return _nll(logit_adjust(logits, priors), np.asarray(labels))


def superloss_sigma(base_loss, params: SuperLossParams):
    """Closed-form confidence sigma* = exp(-W(0.5 * clamp((l - tau) / lambda))).

    lower_bound mode clamps the ratio at -2/e so W stays in its domain and
    sigma* ranges over (0, e]; as_written mode clamps at +2/e, reproducing the
    printed formula, which caps sigma* near 0.757 and never exceeds it.
    """
    ell = np.asarray(base_loss, dtype=np.float64)
    if not np.all(np.isfinite(ell)):
        raise ValidationError("superloss_sigma: base loss must be finite")
    beta = (ell - params.tau) / params.lam
    bound = 2.0 / np.e
    clamped = np.maximum(beta, -bound) if params.clamp_mode == "lower_bound" else np.maximum(beta, bound)
    return np.exp(-lambert_w0(0.5 * clamped))


def superloss(base_losses, params: SuperLossParams) -> ConfidenceReport:
    """Wrap per-sample base losses: (l - tau) * sigma* + lambda * log(sigma*)^2.

    sigma* enters as a constant (envelope theorem), so d(loss)/d(l) = sigma*.
    """
    ell = _as_tensor(base_losses)
    sigma = np.atleast_1d(superloss_sigma(ell.data, params))
    log_sigma = np.log(sigma)
    sigma_t = Tensor(sigma.reshape(ell.shape))
    reg = Tensor((params.lam * log_sigma * log_sigma).reshape(ell.shape))
    per_sample = add(mul(sub(ell, _as_tensor(params.tau)), sigma_t), reg)
    return ConfidenceReport(
        base_losses=np.atleast_1d(ell.data.copy()),
        sigma=sigma.copy(),
        per_sample=np.atleast_1d(per_sample.data.copy()),
        loss=mean(per_sample),
    )


def ce_sl_loss(logits: Tensor, labels, params: SuperLossParams) -> ConfidenceReport:
    return superloss(cross_entropy(logits, labels), params)


def la_sl_loss(logits: Tensor, labels, priors: Priors, params: SuperLossParams) -> ConfidenceReport:
    """SuperLoss on top of the logit-adjusted loss; the default fine-tuning loss."""
    return superloss(la_loss(logits, labels, priors), params)


def batch_loss(kind: str, logits: Tensor, labels, priors: Priors, params: SuperLossParams) -> tuple[Tensor, ConfidenceReport | None]:
    """Dispatch on the configured loss kind; returns (scalar mean loss, report or None)."""
    if kind == "ce":
        return mean(cross_entropy(logits, labels)), None
    if kind == "la":
        return mean(la_loss(logits, labels, priors)), None
    if kind == "ce_sl":
        report = ce_sl_loss(logits, labels, params)
        return report.loss, report
    if kind == "la_sl":
        report = la_sl_loss(logits, labels, priors, params)
        return report.loss, report
    raise ValidationError(f"unknown loss kind '{kind}', expected one of {LOSS_KINDS}")
