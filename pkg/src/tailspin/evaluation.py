"""kNN proxy metric, accuracy variants, embedding export, and metrics records."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import ContractError, ValidationError
from .io import FORMAT_VERSION, _read_array, _read_manifest, _write_array, _write_manifest
from .nn import Model
from .tensor import Tensor

KNN_METRICS = ("cosine", "euclidean")
KNN_WEIGHTINGS = ("uniform", "similarity")
EMBED_LAYERS = ("encoder", "projector")


@dataclass
class EmbeddingSet:
    """Frozen representations with aligned labels, produced without augmentation."""

    embeddings: np.ndarray  # (N, r) float32
    labels: np.ndarray  # (N,) int64
    num_classes: int
    split: str = "train"

    def __post_init__(self):
        self.embeddings = np.ascontiguousarray(self.embeddings, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.embeddings.shape[0] != self.labels.shape[0]:
            raise ValidationError(
                f"embedding rows ({self.embeddings.shape[0]}) != labels ({self.labels.shape[0]})"
            )

    @property
    def num_samples(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]


@dataclass
class KNNConfig:
    k: int = 20
    metric: str = "cosine"
    weighting: str = "similarity"

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")
        if self.metric not in KNN_METRICS:
            raise ValidationError(f"metric must be one of {KNN_METRICS}, got '{self.metric}'")
        if self.weighting not in KNN_WEIGHTINGS:
            raise ValidationError(f"weighting must be one of {KNN_WEIGHTINGS}, got '{self.weighting}'")


@dataclass
class MetricsRecord:
    """One serializable row per epoch per stage."""

    stage: str
    epoch: int
    loss: float
    lr: float
    seed: int
    knn_accuracy: float | None = None
    per_class_accuracy: list[float] | None = None

    def to_json_line(self) -> str:
        return json.dumps(
            {
                "stage": self.stage,
                "epoch": self.epoch,
                "loss": self.loss,
                "lr": self.lr,
                "seed": self.seed,
                "knn_accuracy": self.knn_accuracy,
                "per_class_accuracy": self.per_class_accuracy,
            },
            separators=(",", ":"),
        )

    @classmethod
    def from_json_line(cls, line: str) -> "MetricsRecord":
        d = json.loads(line)
        return cls(**d)


def embed(dataset: Dataset, model: Model, layer: str = "encoder", use_true_labels: bool = True) -> EmbeddingSet:
    """Deterministic forward pass with augmentations disabled.

    By default returns the encoder output (pre-projector); evaluation labels
    are the hidden true labels.
    """
    if layer not in EMBED_LAYERS:
        raise ValidationError(f"layer must be one of {EMBED_LAYERS}, got '{layer}'")
    x = Tensor(dataset.features.astype(np.float64))
    reps = model.encoder(x)
    if layer == "projector":
        reps = model.projector(reps)
    labels = dataset.labels_true if use_true_labels else dataset.labels_observed
    return EmbeddingSet(reps.data.astype(np.float32), labels.copy(), dataset.num_classes, split=dataset.split)


def knn_classify(reference: EmbeddingSet, queries: EmbeddingSet, cfg: KNNConfig) -> np.ndarray:
    """Vote among the k nearest reference embeddings; ties go to the smallest class index.

    Similarity weighting uses (1 + cosine) for the cosine metric and
    1 / (distance + 1e-12) for the euclidean metric.
    """
    if reference.num_samples == 0:
        raise ContractError("knn_classify: empty reference set")
    if cfg.k > reference.num_samples:
        raise ContractError(f"k={cfg.k} exceeds reference size {reference.num_samples}")
    ref = reference.embeddings.astype(np.float64)
    qry = queries.embeddings.astype(np.float64)

    if cfg.metric == "cosine":
        ref_n = _unit_rows(ref)
        qry_n = _unit_rows(qry)
        sims = qry_n @ ref_n.T
        order = np.argsort(-sims, axis=1, kind="stable")[:, : cfg.k]
        strengths = np.take_along_axis(sims, order, axis=1)
        weights = 1.0 + strengths
    else:
        d2 = (
            np.sum(qry * qry, axis=1, keepdims=True)
            - 2.0 * qry @ ref.T
            + np.sum(ref * ref, axis=1)
        )
        dists = np.sqrt(np.maximum(d2, 0.0))
        order = np.argsort(dists, axis=1, kind="stable")[:, : cfg.k]
        weights = 1.0 / (np.take_along_axis(dists, order, axis=1) + 1e-12)

    if cfg.weighting == "uniform":
        weights = np.ones_like(weights)

    neighbor_labels = reference.labels[order]
    votes = np.zeros((queries.num_samples, reference.num_classes))
    for c in range(reference.num_classes):
        votes[:, c] = np.sum(weights * (neighbor_labels == c), axis=1)
    return np.argmax(votes, axis=1).astype(np.int64)  # argmax takes the smallest index on ties


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return np.where(norms < 1e-12, 0.0, x / np.where(norms < 1e-12, 1.0, norms))


@dataclass
class AccuracyReport:
    overall: float
    per_class: np.ndarray  # NaN for classes absent from the test set
    balanced: float
    confusion: np.ndarray  # rows normalized by true-class counts
    missing_classes: list[int] = field(default_factory=list)


def accuracy_suite(predictions: np.ndarray, labels_true: np.ndarray, num_classes: int) -> AccuracyReport:
    """Overall, per-class, and balanced accuracy plus a row-normalized confusion matrix.

    A true class absent from the test set gets a NaN per-class entry and is
    excluded from the balanced mean.
    """
    predictions = np.asarray(predictions, dtype=np.int64)
    labels_true = np.asarray(labels_true, dtype=np.int64)
    if predictions.shape != labels_true.shape:
        raise ValidationError(f"predictions {predictions.shape} vs labels {labels_true.shape}")
    overall = float(np.mean(predictions == labels_true))
    per_class = np.full(num_classes, np.nan)
    confusion = np.zeros((num_classes, num_classes))
    missing = []
    for c in range(num_classes):
        members = labels_true == c
        count = int(members.sum())
        if count == 0:
            missing.append(c)
            continue
        per_class[c] = float(np.mean(predictions[members] == c))
        confusion[c] = np.bincount(predictions[members], minlength=num_classes) / count
    balanced = float(np.nanmean(per_class))
    return AccuracyReport(overall, per_class, balanced, confusion, missing)


def export_embeddings(es: EmbeddingSet, directory: str | Path) -> Path:
    """Write embeddings in the dataset binary convention with labels alongside."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    _write_array(directory / "embeddings.bin", es.embeddings, "<f4")
    _write_array(directory / "labels.bin", es.labels, "<u4")
    manifest = {
        "version": FORMAT_VERSION,
        "kind": "embeddings",
        "num_samples": es.num_samples,
        "dim": es.dim,
        "num_classes": es.num_classes,
        "split": es.split,
        "files": {
            "embeddings": {"name": "embeddings.bin", "dtype": "float32-le", "shape": [es.num_samples, es.dim]},
            "labels": {"name": "labels.bin", "dtype": "uint32-le", "shape": [es.num_samples]},
        },
    }
    _write_manifest(directory / "manifest.json", manifest)
    return directory


def load_embeddings(directory: str | Path) -> EmbeddingSet:
    directory = Path(directory)
    manifest = _read_manifest(directory / "manifest.json")
    if manifest.get("kind") != "embeddings":
        raise ValidationError(f"{directory}: manifest kind is not 'embeddings'")
    files = manifest["files"]
    emb = _read_array(directory / files["embeddings"]["name"], "<f4", files["embeddings"]["shape"])
    labels = _read_array(directory / files["labels"]["name"], "<u4", files["labels"]["shape"])
    return EmbeddingSet(emb, labels.astype(np.int64), int(manifest["num_classes"]), split=manifest.get("split", "train"))
