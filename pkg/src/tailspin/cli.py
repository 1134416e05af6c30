"""Command-line entry point and experiment orchestration.

Subcommands: generate | corrupt | pretrain | finetune | run |
run-single-stage | eval | gradcheck. Every subcommand reads its settings
from a config file plus --set overrides and writes its outputs under
run.output_dir. Errors exit nonzero with one machine-parsable line.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io as tio
from .config import ExperimentConfig, config_load, describe_defaults, summary_payload, write_resolved
from .data import AugmentationSpec
from .errors import ConfigError, TailspinError
from .evaluation import KNNConfig, accuracy_suite, embed, export_embeddings, knn_classify
from .gradcheck import TOLERANCE, battery
from .nn import build_model
from .optim import OptimizerConfig, ScheduleConfig
from .pipeline import (
    FinetuneSettings,
    PretrainSettings,
    build_finetune_head,
    evaluate_classifier,
    finetune,
    make_datasets,
    pretrain,
    run_single_stage,
    run_two_stage,
    select_freeze_policy,
)
from .seeding import derive
from .ssl import SSLMethod

log = logging.getLogger("tailspin")


def _setup_logging() -> None:
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("TAILSPIN_LOG", "info").lower(), logging.INFO
    )
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


# ---------------------------------------------------------------------------
# config -> settings objects

def _pretrain_settings(cfg: ExperimentConfig) -> PretrainSettings:
    method = SSLMethod(
        cfg["pretrain.method"],
        temperature=cfg["pretrain.temperature"],
        ema_momentum=cfg["pretrain.ema_momentum"],
        lambda_bt=cfg["pretrain.lambda_bt"],
    )
    optimizer = OptimizerConfig(
        kind=cfg["pretrain.optimizer"],
        base_lr=cfg["pretrain.base_lr"],
        weight_decay=cfg["pretrain.weight_decay"],
        momentum=cfg["pretrain.momentum"],
        batch_size=cfg["pretrain.batch_size"],
    )
    schedule = ScheduleConfig(
        kind=cfg["pretrain.schedule"],
        warmup_epochs=min(cfg["pretrain.warmup_epochs"], max(cfg["pretrain.epochs"] - 1, 0)),
        total_epochs=cfg["pretrain.epochs"],
    )
    augmentation = AugmentationSpec(
        gaussian_sigma=cfg["pretrain.aug_sigma"],
        mask_prob=cfg["pretrain.aug_mask_prob"],
        scale_jitter=cfg["pretrain.aug_jitter"],
    )
    return PretrainSettings(
        method=method,
        optimizer=optimizer,
        schedule=schedule,
        epochs=cfg["pretrain.epochs"],
        augmentation=augmentation,
        disable_stop_gradient=cfg["pretrain.disable_stop_gradient"],
    )


def _finetune_settings(cfg: ExperimentConfig) -> FinetuneSettings:
    optimizer = OptimizerConfig(
        kind=cfg["finetune.optimizer"],
        base_lr=cfg["finetune.lr"],
        weight_decay=cfg["finetune.weight_decay"],
        momentum=cfg["finetune.momentum"],
        batch_size=cfg["finetune.batch_size"],
    )
    freeze = cfg["finetune.freeze"]
    return FinetuneSettings(
        loss=cfg["finetune.loss"],
        optimizer=optimizer,
        epochs=cfg["finetune.epochs"],
        superloss_lambda=cfg["finetune.lambda"],
        superloss_tau=cfg.superloss_tau(),
        clamp_mode=cfg["finetune.clamp_mode"],
        freeze_override=None if freeze == "auto" else freeze,
    )


def _knn_config(cfg: ExperimentConfig) -> KNNConfig:
    return KNNConfig(k=cfg["eval.knn_k"], metric=cfg["eval.knn_metric"], weighting=cfg["eval.knn_weighting"])


def _build_model(cfg: ExperimentConfig):
    return build_model(
        cfg["pretrain.method"],
        input_dim=cfg["data.dim"],
        hidden_dim=cfg["model.hidden_dim"],
        rep_dim=cfg["model.rep_dim"],
        proj_dim=cfg["model.proj_dim"],
        pred_hidden=cfg["model.pred_hidden"],
        seed=derive(cfg.seed, "model"),
    )


def _train_dir(out: Path) -> Path:
    corrupted = out / "data" / "train-corrupted"
    return corrupted if (corrupted / "manifest.json").is_file() else out / "data" / "train"


# ---------------------------------------------------------------------------
# subcommand handlers

def _cmd_generate(cfg: ExperimentConfig) -> None:
    from .data import generate_synthetic

    out = cfg.output_dir
    data_seed = derive(cfg.seed, "data")
    common = dict(
        num_classes=cfg["data.num_classes"],
        dim=cfg["data.dim"],
        cluster_separation=cfg["data.separation"],
        seed=data_seed,
    )
    train = generate_synthetic(per_class=cfg["data.per_class"], split="train", **common)
    test = generate_synthetic(per_class=cfg["data.test_per_class"], split="test", **common)
    prov = {"generator": "gaussian_clusters", "seed": cfg.seed, "gamma": 1.0, "nu": 0.0,
            "separation": cfg["data.separation"]}
    tio.save_dataset(train, out / "data" / "train", provenance=prov)
    tio.save_dataset(test, out / "data" / "test", provenance={**prov, "split": "test"})
    log.info("generated %d train and %d test samples", train.num_samples, test.num_samples)


def _cmd_corrupt(cfg: ExperimentConfig) -> None:
    from .data import ImbalanceSpec, NoiseSpec, apply_exponential_imbalance, inject_symmetric_noise

    out = cfg.output_dir
    ds = tio.load_dataset(out / "data" / "train")
    gamma, nu = cfg["data.gamma"], cfg["data.nu"]
    if gamma > 1.0:
        ds = apply_exponential_imbalance(ds, ImbalanceSpec(gamma, seed=derive(cfg.seed, "imbalance")))
    if nu > 0.0:
        ds = inject_symmetric_noise(ds, NoiseSpec(nu, seed=derive(cfg.seed, "noise")))
    counts = ds.observed_counts()
    prov = {
        "gamma": gamma,
        "nu": nu,
        "seed": cfg.seed,
        "class_counts": counts.tolist(),
        "min_class_count": int(ds.true_counts().min()),
        "max_class_count": int(ds.true_counts().max()),
    }
    tio.save_dataset(ds, out / "data" / "train-corrupted", provenance=prov)
    log.info("corrupted train set: gamma=%s nu=%s counts=%s", gamma, nu, counts.tolist())


def _cmd_pretrain(cfg: ExperimentConfig) -> None:
    out = cfg.output_dir
    train = tio.load_dataset(_train_dir(out))
    test_dir = out / "data" / "test"
    test = tio.load_dataset(test_dir) if (test_dir / "manifest.json").is_file() else None
    model = _build_model(cfg)
    settings = _pretrain_settings(cfg)
    with tio.MetricsWriter(out / "metrics.jsonl") as sink:
        pretrain(model, train, settings, cfg.seed, knn_cfg=_knn_config(cfg), test_set=test, sink=sink)
    tio.save_checkpoint(out / "checkpoints" / "pretrained", model, extra={"stage": "pretrain"})
    log.info("pretraining done: %s epochs of %s", settings.epochs, settings.method.name)


def _cmd_finetune(cfg: ExperimentConfig) -> None:
    out = cfg.output_dir
    train = tio.load_dataset(_train_dir(out))
    test = tio.load_dataset(out / "data" / "test")
    model, _, _ = tio.load_checkpoint(out / "checkpoints" / "pretrained")
    if model is None:
        raise ConfigError("pretrained checkpoint has no model")
    method = cfg["pretrain.method"]
    settings = _finetune_settings(cfg)
    policy = settings.freeze_override or select_freeze_policy(method, cfg["data.nu"])
    head = build_finetune_head(model, train.num_classes, method, derive(cfg.seed, "model"))
    with tio.MetricsWriter(out / "metrics.jsonl") as sink:
        finetune(model, head, train, settings, policy, cfg.seed, test_set=test, sink=sink)
    tio.save_checkpoint(out / "checkpoints" / "finetuned", model, head, extra={"stage": "finetune"})
    report = evaluate_classifier(model, head, test)
    summary = {
        "seed": cfg.seed,
        "overall_accuracy": report.overall,
        "balanced_accuracy": report.balanced,
        "per_class_accuracy": [float(v) if np.isfinite(v) else None for v in report.per_class],
        "knn_accuracy": None,
        "stages": {"finetune": settings.epochs},
    }
    (out / "summary.json").write_text(summary_payload(cfg, summary))
    log.info("finetune done: balanced accuracy %.4f", report.balanced)


def _cmd_run(cfg: ExperimentConfig) -> None:
    out = cfg.output_dir
    train, test = make_datasets(
        cfg["data.num_classes"], cfg["data.per_class"], cfg["data.dim"], cfg["data.separation"],
        cfg["data.gamma"], cfg["data.nu"], cfg.seed, test_per_class=cfg["data.test_per_class"],
    )
    prov = {"gamma": cfg["data.gamma"], "nu": cfg["data.nu"], "seed": cfg.seed,
            "class_counts": train.observed_counts().tolist()}
    tio.save_dataset(train, out / "data" / "train-corrupted", provenance=prov)
    tio.save_dataset(test, out / "data" / "test", provenance={"split": "test", "seed": cfg.seed})
    metrics_path = out / "metrics.jsonl"
    metrics_path.unlink(missing_ok=True)
    with tio.MetricsWriter(metrics_path) as sink:
        result = run_two_stage(
            train, test, _pretrain_settings(cfg), _finetune_settings(cfg), cfg.seed,
            nu_for_policy=cfg["data.nu"], knn_cfg=_knn_config(cfg), sink=sink,
        )
    tio.save_checkpoint(out / "checkpoints" / "pretrained", result.model, extra={"stage": "pretrain"})
    tio.save_checkpoint(out / "checkpoints" / "finetuned", result.model, result.head, extra={"stage": "finetune"})
    (out / "summary.json").write_text(summary_payload(cfg, result.summary))
    log.info(
        "two-stage run done: balanced accuracy %.4f, knn %.4f",
        result.report.balanced, result.knn_accuracy or float("nan"),
    )


def _cmd_run_single_stage(cfg: ExperimentConfig) -> None:
    out = cfg.output_dir
    train, test = make_datasets(
        cfg["data.num_classes"], cfg["data.per_class"], cfg["data.dim"], cfg["data.separation"],
        cfg["data.gamma"], cfg["data.nu"], cfg.seed, test_per_class=cfg["data.test_per_class"],
    )
    metrics_path = out / "metrics.jsonl"
    out.mkdir(parents=True, exist_ok=True)
    metrics_path.unlink(missing_ok=True)
    with tio.MetricsWriter(metrics_path) as sink:
        result = run_single_stage(
            train, test, cfg["pretrain.method"], _finetune_settings(cfg),
            cfg["single_stage.epochs"], cfg.seed, sink=sink,
        )
    tio.save_checkpoint(out / "checkpoints" / "finetuned", result.model, result.head, extra={"stage": "single_stage"})
    (out / "summary.json").write_text(summary_payload(cfg, result.summary))
    log.info("single-stage run done: balanced accuracy %.4f", result.report.balanced)


def _cmd_eval(cfg: ExperimentConfig) -> None:
    out = cfg.output_dir
    train = tio.load_dataset(_train_dir(out))
    test = tio.load_dataset(out / "data" / "test")
    model, head, _ = tio.load_checkpoint(out / "checkpoints" / "finetuned")
    layer = cfg["eval.embedding_layer"]
    reference = embed(train, model, layer=layer)
    queries = embed(test, model, layer=layer)
    knn_preds = knn_classify(reference, queries, _knn_config(cfg))
    knn_report = accuracy_suite(knn_preds, queries.labels, test.num_classes)
    payload = {"knn_accuracy": knn_report.overall, "knn_balanced_accuracy": knn_report.balanced}
    if head is not None:
        report = evaluate_classifier(model, head, test)
        payload.update(
            overall_accuracy=report.overall,
            balanced_accuracy=report.balanced,
            per_class_accuracy=[float(v) if np.isfinite(v) else None for v in report.per_class],
            confusion=report.confusion.tolist(),
        )
    if cfg["eval.export_embeddings"]:
        export_embeddings(queries, out / "embeddings" / "test")
        export_embeddings(reference, out / "embeddings" / "train")
    (out / "eval.json").write_text(json.dumps(payload, indent=2) + "\n")
    log.info("eval done: %s", {k: v for k, v in payload.items() if not isinstance(v, list)})


def _cmd_gradcheck(cfg: ExperimentConfig) -> None:
    results = battery(instances=5, seed=cfg.seed)
    width = max(len(name) for name, _ in results)
    print(f"{'objective'.ljust(width)}  max_rel_err  limit     status")
    failed = False
    for name, err in results:
        ok = err <= TOLERANCE
        failed = failed or not ok
        print(f"{name.ljust(width)}  {err:.3e}    {TOLERANCE:.0e}  {'ok' if ok else 'FAIL'}")
    if failed:
        raise TailspinError("gradient check failed")


_COMMANDS = {
    "generate": _cmd_generate,
    "corrupt": _cmd_corrupt,
    "pretrain": _cmd_pretrain,
    "finetune": _cmd_finetune,
    "run": _cmd_run,
    "run-single-stage": _cmd_run_single_stage,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
}


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tailspin",
        description="Two-stage learning under class imbalance and label noise, at desk scale.",
        epilog="Config keys (see README for details):\n" + describe_defaults(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("command", choices=sorted(_COMMANDS), help="subcommand to run")
    parser.add_argument("--config", metavar="PATH", default=None, help="config file (key = value lines)")
    parser.add_argument("--set", metavar="KEY=VALUE", action="append", default=[], dest="overrides",
                        help="override one config key (repeatable)")
    parser.add_argument("--output", metavar="DIR", default=None, help="shorthand for --set run.output_dir=DIR")
    parser.add_argument("--seed", metavar="N", type=int, default=None, help="shorthand for --set run.seed=N")
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = _parser().parse_args(argv)
    try:
        overrides = list(args.overrides)
        if args.output is not None:
            overrides.append(f"run.output_dir={args.output}")
        if args.seed is not None:
            overrides.append(f"run.seed={args.seed}")
        cfg = config_load(args.config, overrides)
        if args.command != "gradcheck":
            write_resolved(cfg, cfg.output_dir)
            if args.config is not None:
                (cfg.output_dir / "config.input").write_text(Path(args.config).read_text())
        _COMMANDS[args.command](cfg)
    except TailspinError as exc:
        print(f"{exc.cli_class}: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1
    except OSError as exc:
        print(f"io-error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
