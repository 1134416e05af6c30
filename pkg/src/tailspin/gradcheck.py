"""Finite-difference verification battery for every differentiable loss and
SSL objective. Used by the `gradcheck` CLI subcommand and the test suite."""
from __future__ import annotations

import numpy as np

from .losses import Priors, SuperLossParams, ce_sl_loss, cross_entropy, la_loss, la_sl_loss, superloss
from .nn import build_model
from .seeding import rng_for
from .ssl import barlow_twins_loss, byol_loss, nt_xent_loss, simsiam_loss
from .tensor import Tensor, finite_diff_check, mean

TOLERANCE = 1e-4


def _random_priors(rng, c: int) -> Priors:
    raw = rng.uniform(0.2, 2.0, size=c)
    return Priors(raw / raw.sum())


def _loss_case(name: str, rng, batch: int = 5, classes: int = 4) -> float:
    logits = Tensor(rng.uniform(-2.0, 2.0, size=(batch, classes)), requires_grad=True)
    labels = rng.integers(0, classes, size=batch)
    priors = _random_priors(rng, classes)
    params = SuperLossParams(tau=float(np.log(classes)), lam=4.0)

    def f():
        if name == "ce":
            return mean(cross_entropy(logits, labels))
        if name == "la":
            return mean(la_loss(logits, labels, priors))
        if name == "sl":
            return superloss(cross_entropy(logits, labels), params).loss
        if name == "ce_sl":
            return ce_sl_loss(logits, labels, params).loss
        return la_sl_loss(logits, labels, priors, params).loss

    return finite_diff_check(f, [logits])


def _relu_margin(mlp, x: np.ndarray) -> tuple[float, np.ndarray]:
    """Smallest |preactivation| feeding a ReLU, plus the MLP output."""
    margin = np.inf
    h = x
    for i, layer in enumerate(mlp.layers):
        pre = h @ layer.weight.data + layer.bias.data
        if i < len(mlp.layers) - 1:
            margin = min(margin, float(np.min(np.abs(pre))))
            h = np.maximum(pre, 0.0)
        else:
            h = pre
    return margin, h


def _conditioned(name: str, model, view_a: Tensor, view_b: Tensor) -> bool:
    """Reject draws where finite differences are meaningless: a cosine input
    with (near-)zero norm, a Barlow column with (near-)zero variance, or any
    ReLU preactivation within 1e-3 of its kink (a perturbed forward pass
    would cross a non-differentiable point)."""
    margins = []
    z = {}
    p = {}
    for tag, view in (("a", view_a), ("b", view_b)):
        enc_margin, enc_out = _relu_margin(model.encoder, view.data)
        proj_margin, proj_out = _relu_margin(model.projector, enc_out)
        margins += [enc_margin, proj_margin]
        z[tag] = proj_out
        if name in ("simsiam", "byol"):
            pred_margin, pred_out = _relu_margin(model.predictor, proj_out)
            margins.append(pred_margin)
            p[tag] = pred_out
    if min(margins) <= 1e-3:
        return False
    if name == "barlow_twins":
        return min(z["a"].std(axis=0).min(), z["b"].std(axis=0).min()) > 0.05
    if name == "simclr":
        rows = [z["a"], z["b"]]
    elif name == "simsiam":
        rows = [z["a"], z["b"], p["a"], p["b"]]
    else:  # byol
        rows = [
            p["a"],
            p["b"],
            model.ema_projector(model.ema_encoder(view_a)).data,
            model.ema_projector(model.ema_encoder(view_b)).data,
        ]
    return min(np.linalg.norm(r, axis=1).min() for r in rows) > 0.05


def _ssl_case(name: str, rng, batch: int = 5, dim: int = 4) -> float:
    for _ in range(100):
        model = build_model(
            "byol" if name == "byol" else "simsiam",
            input_dim=dim, hidden_dim=6, rep_dim=4, proj_dim=4, pred_hidden=6,
            seed=int(rng.integers(0, 2**63 - 1)),
        )
        view_a = Tensor(rng.uniform(-2.0, 2.0, size=(batch, dim)))
        view_b = Tensor(rng.uniform(-2.0, 2.0, size=(batch, dim)))
        if _conditioned(name, model, view_a, view_b):
            break
    params = model.trainable_parameters()

    # SimSiam's stop-gradient blocks the target branch analytically, so the
    # finite-difference probe must hold that branch constant too: snapshot
    # the projections once and differentiate only the online path.
    if name == "simsiam":
        frozen_a = Tensor(model.projector(model.encoder(view_a)).data.copy())
        frozen_b = Tensor(model.projector(model.encoder(view_b)).data.copy())

    def f():
        z_a = model.projector(model.encoder(view_a))
        z_b = model.projector(model.encoder(view_b))
        if name == "simclr":
            return nt_xent_loss(z_a, z_b, temperature=0.5)
        if name == "barlow_twins":
            return barlow_twins_loss(z_a, z_b, lambda_bt=0.005)
        p_a, p_b = model.predictor(z_a), model.predictor(z_b)
        if name == "simsiam":
            return simsiam_loss(p_a, frozen_a, p_b, frozen_b)
        t_a = model.ema_projector(model.ema_encoder(view_a))
        t_b = model.ema_projector(model.ema_encoder(view_b))
        return byol_loss(p_a, t_b, p_b, t_a)

    return finite_diff_check(f, params)


LOSS_CASES = ("ce", "la", "sl", "ce_sl", "la_sl")
SSL_CASES = ("simsiam", "simclr", "byol", "barlow_twins")


def battery(instances: int = 5, seed: int = 0) -> list[tuple[str, float]]:
    """Max relative gradient error per objective over random instances."""
    results = []
    for name in LOSS_CASES:
        rng = rng_for(seed, "gradcheck", name)
        worst = max(_loss_case(name, rng) for _ in range(instances))
        results.append((name, worst))
    for name in SSL_CASES:
        rng = rng_for(seed, "gradcheck", name)
        worst = max(_ssl_case(name, rng) for _ in range(instances))
        results.append((name, worst))
    return results
