"""Two-stage orchestration: self-supervised pretraining, then head fine-tuning
with a robust loss under a noise-dependent freeze policy. Also the
single-stage supervised baseline used for ablation.

Training paths read ``labels_observed`` only; the hidden true labels are
consumed exclusively by evaluation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import (
    AugmentationSpec,
    Dataset,
    ImbalanceSpec,
    NoiseSpec,
    apply_exponential_imbalance,
    estimate_priors,
    generate_synthetic,
    inject_symmetric_noise,
)
from .errors import ConfigError
from .evaluation import AccuracyReport, KNNConfig, MetricsRecord, accuracy_suite, embed, knn_classify
from .losses import SuperLossParams, batch_loss
from .nn import Linear, Mlp, Model, build_model
from .optim import OptimizerConfig, ScheduleConfig, lr_at, make_optimizer, scaled_lr
from .seeding import derive, rng_for
from .ssl import SSLMethod, pretrain_epoch
from .tensor import Tape, Tensor

FULL_HEAD = "full_head"
LAST_LAYER_ONLY = "last_layer_only"

# per-method noise thresholds above which only the last FC layer is tuned
NOISE_THRESHOLDS = {"simsiam": 0.6, "byol": 0.4, "barlow_twins": 0.2}


def select_freeze_policy(method: str, nu: float) -> str:
    """Full head at or below the method's noise threshold, last layer above it.

    SimCLR always trains a linear classifier on the frozen encoder, which is
    a single-layer head; full_head describes it.
    """
    if method == "simclr":
        return FULL_HEAD
    if method not in NOISE_THRESHOLDS:
        raise ConfigError(f"unknown method '{method}' for freeze policy")
    return FULL_HEAD if nu <= NOISE_THRESHOLDS[method] else LAST_LAYER_ONLY


def build_finetune_head(model: Model, num_classes: int, method: str, seed: int) -> Mlp:
    """Classification head on the frozen encoder.

    SimCLR gets a fresh linear classifier. The other methods reuse the first
    pretrained projector layer and replace the output layer with a fresh
    C-way linear layer, mirroring fine-tuning from a middle layer of the
    projection head.
    """
    rng = rng_for(seed, "init", "head")
    rep_dim = model.encoder.layers[-1].weight.shape[1]
    if method == "simclr":
        return Mlp.init([rep_dim, num_classes], rng)
    first = model.projector.layers[0].copy(requires_grad=True)
    out_dim = first.weight.shape[1]
    return Mlp([first, Linear.init(out_dim, num_classes, rng)])


def _head_trainable(head: Mlp, policy: str) -> list:
    if policy == LAST_LAYER_ONLY:
        layers = head.layers[-1:]
    elif policy == FULL_HEAD:
        layers = head.layers
    else:
        raise ConfigError(f"unknown freeze policy '{policy}'")
    selected = [p for layer in layers for p in layer.parameters()]
    for layer in head.layers:
        for p in layer.parameters():
            p.requires_grad = any(p is q for q in selected)
    return selected


@dataclass
class PretrainSettings:
    method: SSLMethod
    optimizer: OptimizerConfig
    schedule: ScheduleConfig
    epochs: int = 200
    augmentation: AugmentationSpec = field(default_factory=lambda: AugmentationSpec(0.4, 0.0, 0.2))
    disable_stop_gradient: bool = False


@dataclass
class FinetuneSettings:
    loss: str = "la_sl"
    optimizer: OptimizerConfig = field(
        default_factory=lambda: OptimizerConfig(kind="adam", base_lr=0.003, weight_decay=0.0)
    )
    epochs: int = 25
    superloss_lambda: float = 4.0
    superloss_tau: float | None = None  # None means log(num_classes)
    clamp_mode: str = "lower_bound"
    freeze_override: str | None = None  # None means select by method and nu


def pretrain(
    model: Model,
    dataset: Dataset,
    settings: PretrainSettings,
    run_seed: int,
    knn_cfg: KNNConfig | None = None,
    test_set: Dataset | None = None,
    sink=None,
) -> list[MetricsRecord]:
    """Run the self-supervised stage; one record per epoch, kNN proxy on the last."""
    opt = make_optimizer(settings.optimizer, model.trainable_parameters())
    effective = scaled_lr(settings.optimizer.base_lr, settings.optimizer.batch_size)
    records = []
    for epoch in range(settings.epochs):
        lr = lr_at(settings.schedule, epoch, effective)
        loss = pretrain_epoch(
            model,
            dataset,
            settings.method,
            opt,
            lr,
            epoch,
            run_seed,
            settings.augmentation,
            settings.optimizer.batch_size,
            disable_stop_gradient=settings.disable_stop_gradient,
        )
        knn_acc = None
        if epoch == settings.epochs - 1 and knn_cfg is not None and test_set is not None:
            knn_acc = knn_proxy_accuracy(model, dataset, test_set, knn_cfg)
        record = MetricsRecord("pretrain", epoch, loss, lr, run_seed, knn_accuracy=knn_acc)
        records.append(record)
        if sink is not None:
            sink(record)
    return records


def knn_proxy_accuracy(model: Model, train_set: Dataset, test_set: Dataset, cfg: KNNConfig) -> float:
    """kNN accuracy on frozen encoder outputs: train embeddings vote for test queries."""
    reference = embed(train_set, model)
    queries = embed(test_set, model)
    preds = knn_classify(reference, queries, cfg)
    return accuracy_suite(preds, queries.labels, test_set.num_classes).overall


def _representations(model: Model, ds: Dataset) -> np.ndarray:
    return model.encoder(Tensor(ds.features.astype(np.float64))).data


def finetune(
    model: Model,
    head: Mlp,
    dataset: Dataset,
    settings: FinetuneSettings,
    policy: str,
    run_seed: int,
    test_set: Dataset | None = None,
    sink=None,
) -> list[MetricsRecord]:
    """Train the head on frozen-encoder representations with the configured loss.

    The encoder is frozen (its outputs are precomputed once), priors come
    from the observed labels, and per-epoch test accuracy is recorded when a
    test set is supplied.
    """
    for p in model.trainable_parameters():
        p.requires_grad = False
    trainable = _head_trainable(head, policy)
    opt = make_optimizer(settings.optimizer, trainable)
    priors = estimate_priors(dataset)
    tau = settings.superloss_tau if settings.superloss_tau is not None else float(np.log(dataset.num_classes))
    sl_params = SuperLossParams(tau=tau, lam=settings.superloss_lambda, clamp_mode=settings.clamp_mode)

    reps = _representations(model, dataset)
    test_reps = _representations(model, test_set) if test_set is not None else None
    labels = dataset.labels_observed
    n = dataset.num_samples
    batch_size = settings.optimizer.batch_size
    records = []
    for epoch in range(settings.epochs):
        order = rng_for(run_seed, "shuffle", "finetune", epoch).permutation(n)
        lr = settings.optimizer.base_lr
        epoch_losses = []
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            with Tape() as tape:
                logits = head(Tensor(reps[idx]))
                loss, _ = batch_loss(settings.loss, logits, labels[idx], priors, sl_params)
                tape.backward(loss)
            opt.step(lr)
            opt.zero_grad()
            epoch_losses.append(loss.item())
        per_class = None
        if test_reps is not None:
            preds = np.argmax(head(Tensor(test_reps)).data, axis=1)
            report = accuracy_suite(preds, test_set.labels_true, test_set.num_classes)
            per_class = [float(v) if np.isfinite(v) else None for v in report.per_class]
        record = MetricsRecord("finetune", epoch, float(np.mean(epoch_losses)), lr, run_seed, per_class_accuracy=per_class)
        records.append(record)
        if sink is not None:
            sink(record)
    return records


@dataclass
class RunResult:
    model: Model
    head: Mlp
    records: list[MetricsRecord]
    train_set: Dataset
    test_set: Dataset
    report: AccuracyReport
    knn_accuracy: float | None
    summary: dict


def make_datasets(
    num_classes: int,
    per_class: int,
    dim: int,
    separation: float,
    gamma: float,
    nu: float,
    run_seed: int,
    test_per_class: int = 100,
) -> tuple[Dataset, Dataset]:
    """Generate train + balanced test clusters, then corrupt the train split:
    imbalance first, then symmetric noise."""
    data_seed = derive(run_seed, "data")
    train = generate_synthetic(num_classes, per_class, dim, separation, data_seed, split="train")
    test = generate_synthetic(num_classes, test_per_class, dim, separation, data_seed, split="test")
    if gamma > 1.0:
        train = apply_exponential_imbalance(train, ImbalanceSpec(gamma, seed=derive(run_seed, "imbalance")))
    if nu > 0.0:
        train = inject_symmetric_noise(train, NoiseSpec(nu, seed=derive(run_seed, "noise")))
    return train, test


def evaluate_classifier(model: Model, head: Mlp, test_set: Dataset) -> AccuracyReport:
    reps = _representations(model, test_set)
    preds = np.argmax(head(Tensor(reps)).data, axis=1)
    return accuracy_suite(preds, test_set.labels_true, test_set.num_classes)


def run_two_stage(
    train_set: Dataset,
    test_set: Dataset,
    pre: PretrainSettings,
    fine: FinetuneSettings,
    run_seed: int,
    nu_for_policy: float = 0.0,
    knn_cfg: KNNConfig | None = None,
    sink=None,
) -> RunResult:
    """Pretrain, then fine-tune the head; a single run seed governs both stages."""
    knn_cfg = knn_cfg or KNNConfig()
    model = build_model(pre.method.name, train_set.feature_dim, seed=derive(run_seed, "model"))
    records = pretrain(model, train_set, pre, run_seed, knn_cfg=knn_cfg, test_set=test_set, sink=sink)
    knn_acc = records[-1].knn_accuracy if records else None

    policy = fine.freeze_override or select_freeze_policy(pre.method.name, nu_for_policy)
    head = build_finetune_head(model, train_set.num_classes, pre.method.name, derive(run_seed, "model"))
    records += finetune(model, head, train_set, fine, policy, run_seed, test_set=test_set, sink=sink)
    report = evaluate_classifier(model, head, test_set)
    summary = _summary(report, knn_acc, run_seed, stages={"pretrain": pre.epochs, "finetune": fine.epochs})
    return RunResult(model, head, records, train_set, test_set, report, knn_acc, summary)


def run_single_stage(
    train_set: Dataset,
    test_set: Dataset,
    method_name: str,
    fine: FinetuneSettings,
    epochs: int,
    run_seed: int,
    sink=None,
) -> RunResult:
    """Supervised baseline: encoder + head trained end-to-end from scratch
    with the configured loss; the ablation that removes pretraining."""
    model = build_model("simsiam" if method_name == "simclr" else method_name,
                        train_set.feature_dim, seed=derive(run_seed, "model"))
    head = build_finetune_head(model, train_set.num_classes, "single_stage", derive(run_seed, "model"))
    priors = estimate_priors(train_set)
    tau = fine.superloss_tau if fine.superloss_tau is not None else float(np.log(train_set.num_classes))
    sl_params = SuperLossParams(tau=tau, lam=fine.superloss_lambda, clamp_mode=fine.clamp_mode)

    params = model.encoder.parameters() + head.parameters()
    for p in params:
        p.requires_grad = True
    opt = make_optimizer(fine.optimizer, params)
    features = train_set.features.astype(np.float64)
    labels = train_set.labels_observed
    n = train_set.num_samples
    batch_size = fine.optimizer.batch_size
    records = []
    for epoch in range(epochs):
        order = rng_for(run_seed, "shuffle", "single_stage", epoch).permutation(n)
        epoch_losses = []
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            with Tape() as tape:
                logits = head(model.encoder(Tensor(features[idx])))
                loss, _ = batch_loss(fine.loss, logits, labels[idx], priors, sl_params)
                tape.backward(loss)
            opt.step(fine.optimizer.base_lr)
            opt.zero_grad()
            epoch_losses.append(loss.item())
        record = MetricsRecord("single_stage", epoch, float(np.mean(epoch_losses)), fine.optimizer.base_lr, run_seed)
        records.append(record)
        if sink is not None:
            sink(record)
    report = evaluate_classifier(model, head, test_set)
    summary = _summary(report, None, run_seed, stages={"single_stage": epochs})
    return RunResult(model, head, records, train_set, test_set, report, None, summary)


def _summary(report: AccuracyReport, knn_acc: float | None, seed: int, stages: dict) -> dict:
    return {
        "seed": seed,
        "overall_accuracy": report.overall,
        "balanced_accuracy": report.balanced,
        "per_class_accuracy": [float(v) if np.isfinite(v) else None for v in report.per_class],
        "knn_accuracy": knn_acc,
        "stages": stages,
    }
