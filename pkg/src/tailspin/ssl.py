"""The four self-supervised pretraining objectives over a Siamese MLP encoder.

SimCLR (NT-Xent over positives and negatives), SimSiam (stop-gradient plus
predictor), BYOL (EMA target network), Barlow Twins (redundancy reduction).
Pretraining never reads either label track.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import AugmentationSpec, Dataset, augment, view_seed
from .errors import ConfigError, ContractError, ValidationError
from .nn import Model, ema_update
from .seeding import rng_for
from .tensor import (
    Tape,
    Tensor,
    add,
    concat_rows,
    gather_rows,
    l2_normalize,
    log_sum_exp,
    matmul,
    mean,
    mul,
    negative_cosine_similarity,
    standardize_columns,
    stop_gradient,
    sub,
    tensor_sum,
    transpose,
    _as_tensor,
)

_NEG_MASK = -1e9  # finite stand-in for -inf when masking self-similarities


@dataclass
class SSLMethod:
    """Method selector plus the hyperparameters the method actually uses."""

    name: str
    temperature: float = 0.5
    ema_momentum: float = 0.99
    lambda_bt: float = 0.005

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValidationError(f"temperature must be positive, got {self.temperature}")
        if not 0.0 <= self.ema_momentum <= 1.0:
            raise ValidationError(f"ema momentum must lie in [0, 1], got {self.ema_momentum}")
        if self.lambda_bt <= 0:
            raise ValidationError(f"lambda_bt must be positive, got {self.lambda_bt}")


def build_views(
    features: np.ndarray,
    indices: np.ndarray,
    aug: AugmentationSpec,
    run_seed: int,
    epoch: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Augment each sample twice. Seeds derive from the original sample index,
    so data ordering never changes the views a sample receives."""
    if len(indices) == 0:
        raise ContractError("build_views: empty batch")
    rows = np.asarray(features, dtype=np.float64)
    view_a = np.stack([augment(rows[j], aug, view_seed(run_seed, epoch, int(i), 0)) for j, i in enumerate(indices)])
    view_b = np.stack([augment(rows[j], aug, view_seed(run_seed, epoch, int(i), 1)) for j, i in enumerate(indices)])
    return view_a, view_b


def encode_pair(
    model: Model,
    features: np.ndarray,
    indices: np.ndarray,
    aug: AugmentationSpec,
    run_seed: int,
    epoch: int,
) -> tuple[Tensor, Tensor, Tensor | None, Tensor | None]:
    """Push two augmented views through encoder + projector (and predictor if present).

    Returns (z_a, z_b, p_a, p_b); the predictor outputs are None for methods
    without a prediction head.
    """
    view_a, view_b = build_views(features, indices, aug, run_seed, epoch)
    z_a = model.projector(model.encoder(Tensor(view_a)))
    z_b = model.projector(model.encoder(Tensor(view_b)))
    p_a = model.predictor(z_a) if model.predictor is not None else None
    p_b = model.predictor(z_b) if model.predictor is not None else None
    return z_a, z_b, p_a, p_b


def simsiam_loss(p_a: Tensor, z_a: Tensor, p_b: Tensor, z_b: Tensor, stop_grad: bool = True) -> Tensor:
    """-0.5 * [cos(p_a, sg(z_b)) + cos(p_b, sg(z_a))], batch-averaged.

    ``stop_grad=False`` is the collapse-ablation switch; gradients then flow
    through both branches.
    """
    t_b = stop_gradient(z_b) if stop_grad else z_b
    t_a = stop_gradient(z_a) if stop_grad else z_a
    half = _as_tensor(0.5)
    return add(
        mul(negative_cosine_similarity(p_a, t_b), half),
        mul(negative_cosine_similarity(p_b, t_a), half),
    )


def nt_xent_loss(z_a: Tensor, z_b: Tensor, temperature: float) -> Tensor:
    """Normalized-temperature cross-entropy over the 2B embeddings.

    For each anchor the positive is its other view; the remaining 2B - 2
    embeddings act as negatives (the positive stays in the denominator).
    """
    if z_a.shape != z_b.shape:
        raise ContractError(f"nt_xent: view shapes differ, {z_a.shape} vs {z_b.shape}")
    b = z_a.shape[0]
    if b < 2:
        raise ContractError("nt_xent: batch size must be >= 2, negatives are undefined otherwise")
    z = l2_normalize(concat_rows(z_a, z_b))
    sims = mul(matmul(z, transpose(z)), _as_tensor(1.0 / temperature))
    masked = add(sims, Tensor(np.eye(2 * b) * _NEG_MASK))
    positives = np.concatenate([np.arange(b) + b, np.arange(b)])
    return mean(sub(log_sum_exp(masked, axis=-1), gather_rows(masked, positives)))


def byol_loss(p_a: Tensor, target_b: Tensor, p_b: Tensor, target_a: Tensor) -> Tensor:
    """Same symmetric cosine objective as SimSiam, against EMA target projections."""
    half = _as_tensor(0.5)
    return add(
        mul(negative_cosine_similarity(p_a, target_b), half),
        mul(negative_cosine_similarity(p_b, target_a), half),
    )


def barlow_twins_loss(z_a: Tensor, z_b: Tensor, lambda_bt: float, eps: float = 1e-9) -> Tensor:
    """Redundancy reduction on the batch-standardized cross-correlation matrix."""
    if z_a.shape != z_b.shape:
        raise ContractError(f"barlow_twins: view shapes differ, {z_a.shape} vs {z_b.shape}")
    if z_a.shape[0] < 2:
        raise ContractError("barlow_twins: batch standardization needs batch size >= 2")
    b, d = z_a.shape
    za = standardize_columns(z_a, eps=eps)
    zb = standardize_columns(z_b, eps=eps)
    corr = mul(matmul(transpose(za), zb), _as_tensor(1.0 / b))
    eye = np.eye(d)
    diag_err = mul(sub(corr, Tensor(eye)), Tensor(eye))
    off = mul(corr, Tensor(1.0 - eye))
    invariance = tensor_sum(mul(diag_err, diag_err))
    redundancy = tensor_sum(mul(off, off))
    return add(invariance, mul(redundancy, _as_tensor(lambda_bt)))


def method_loss(
    model: Model,
    method: SSLMethod,
    features: np.ndarray,
    indices: np.ndarray,
    aug: AugmentationSpec,
    run_seed: int,
    epoch: int,
    disable_stop_gradient: bool = False,
) -> Tensor:
    """One minibatch loss for the configured objective; labels are never consulted."""
    view_a, view_b = build_views(features, indices, aug, run_seed, epoch)
    z_a = model.projector(model.encoder(Tensor(view_a)))
    z_b = model.projector(model.encoder(Tensor(view_b)))
    if method.name == "simclr":
        return nt_xent_loss(z_a, z_b, method.temperature)
    if method.name == "barlow_twins":
        return barlow_twins_loss(z_a, z_b, method.lambda_bt)
    if method.name == "simsiam":
        p_a, p_b = model.predictor(z_a), model.predictor(z_b)
        return simsiam_loss(p_a, z_a, p_b, z_b, stop_grad=not disable_stop_gradient)
    if method.name == "byol":
        if not model.has_ema():
            raise ConfigError("byol requires a model with an EMA target")
        p_a, p_b = model.predictor(z_a), model.predictor(z_b)
        # target branch: same views, frozen EMA weights, no gradient
        t_a = model.ema_projector(model.ema_encoder(Tensor(view_a)))
        t_b = model.ema_projector(model.ema_encoder(Tensor(view_b)))
        return byol_loss(p_a, t_b, p_b, t_a)
    raise ConfigError(f"unknown SSL method '{method.name}'")


def pretrain_epoch(
    model: Model,
    dataset: Dataset,
    method: SSLMethod,
    optimizer,
    lr: float,
    epoch: int,
    run_seed: int,
    aug: AugmentationSpec,
    batch_size: int,
    disable_stop_gradient: bool = False,
) -> float:
    """One shuffled pass over the dataset; returns the mean minibatch loss.

    Batches smaller than 2 at the tail of the epoch are dropped because the
    contrastive and redundancy objectives are undefined on them.
    """
    n = dataset.num_samples
    order = rng_for(run_seed, "shuffle", "pretrain", epoch).permutation(n)
    losses = []
    for start in range(0, n, batch_size):
        batch_idx = order[start : start + batch_size]
        if batch_idx.size < 2:
            continue
        rows = dataset.features[batch_idx]
        with Tape() as tape:
            loss = method_loss(
                model, method, rows, batch_idx, aug, run_seed, epoch,
                disable_stop_gradient=disable_stop_gradient,
            )
            tape.backward(loss)
        optimizer.step(lr)
        optimizer.zero_grad()
        if method.name == "byol":
            ema_update(model, method.ema_momentum)
        losses.append(loss.item())
    return float(np.mean(losses))
