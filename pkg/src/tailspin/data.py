"""Synthetic datasets and the two corruptions: exponential imbalance and symmetric noise.

Corruption order is imbalance first, then noise. Feature values and the
hidden true labels are never modified by either corruption; all arrays are
frozen after construction, and corruption ops return new Dataset objects.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, NumericError, ValidationError
from .losses import Priors
from .seeding import derive, rng_for


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass
class Dataset:
    """Feature matrix with dual label tracks: observed (possibly noisy) and hidden truth."""

    features: np.ndarray  # (N, d) float32
    labels_observed: np.ndarray  # (N,) int64 in [0, C)
    labels_true: np.ndarray  # (N,) int64, immutable ground truth
    num_classes: int
    split: str = "train"

    def __post_init__(self):
        self.features = _frozen(np.asarray(self.features, dtype=np.float32))
        self.labels_observed = _frozen(np.asarray(self.labels_observed, dtype=np.int64))
        self.labels_true = _frozen(np.asarray(self.labels_true, dtype=np.int64))
        n = self.features.shape[0]
        if n == 0:
            raise ValidationError("dataset must contain at least one sample")
        if self.features.ndim != 2:
            raise ValidationError(f"features must be 2-d, got shape {self.features.shape}")
        if self.labels_observed.shape != (n,) or self.labels_true.shape != (n,):
            raise ValidationError("label tracks must align with features")
        if self.num_classes < 2:
            raise ValidationError(f"need at least 2 classes, got {self.num_classes}")
        for track in (self.labels_observed, self.labels_true):
            if track.min() < 0 or track.max() >= self.num_classes:
                raise ValidationError("label index outside [0, num_classes)")
        if not np.all(np.isfinite(self.features)):
            raise NumericError("features contain NaN or Inf")

    @property
    def num_samples(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def observed_counts(self) -> np.ndarray:
        return np.bincount(self.labels_observed, minlength=self.num_classes)

    def true_counts(self) -> np.ndarray:
        return np.bincount(self.labels_true, minlength=self.num_classes)


@dataclass
class ImbalanceSpec:
    gamma: float
    seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.gamma) or self.gamma < 1.0:
            raise ValidationError(f"imbalance ratio gamma must be >= 1, got {self.gamma}")


@dataclass
class NoiseSpec:
    nu: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.nu < 1.0:
            raise ValidationError(f"noise fraction nu must lie in [0, 1), got {self.nu}")


@dataclass
class AugmentationSpec:
    """Vector-data augmentation family: scale jitter, additive noise, coordinate masking."""

    gaussian_sigma: float = 0.0
    mask_prob: float = 0.0
    scale_jitter: float = 0.0

    def __post_init__(self):
        if self.gaussian_sigma < 0 or self.scale_jitter < 0:
            raise ValidationError("augmentation scales must be non-negative")
        if not 0.0 <= self.mask_prob < 1.0:
            raise ValidationError(f"mask_prob must lie in [0, 1), got {self.mask_prob}")


def generate_synthetic(
    num_classes: int,
    per_class: int,
    dim: int,
    cluster_separation: float,
    seed: int,
    split: str = "train",
) -> Dataset:
    """Isotropic unit Gaussian clusters with class means at pairwise distance >= separation.

    The class means depend only on ``seed``, so train and test splits drawn
    with different ``split`` tags share the same clusters.
    """
    if num_classes < 2:
        raise ValidationError(f"num_classes must be >= 2, got {num_classes}")
    if per_class < 1:
        raise ValidationError(f"per_class must be >= 1, got {per_class}")
    if dim < 2:
        raise ValidationError(f"dim must be >= 2, got {dim}")
    if cluster_separation <= 0:
        raise ValidationError(f"cluster_separation must be positive, got {cluster_separation}")

    means = rng_for(seed, "means").normal(size=(num_classes, dim))
    dists = [
        float(np.linalg.norm(means[i] - means[j]))
        for i in range(num_classes)
        for j in range(i + 1, num_classes)
    ]
    closest = min(dists)
    if closest < cluster_separation:
        means = means * (cluster_separation / closest)

    rng = rng_for(seed, "samples", split)
    blocks = [means[c] + rng.normal(size=(per_class, dim)) for c in range(num_classes)]
    features = np.concatenate(blocks, axis=0).astype(np.float32)
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), per_class)
    return Dataset(features, labels.copy(), labels.copy(), num_classes, split=split)


def exponential_profile(n_max: int, gamma: float, num_classes: int) -> np.ndarray:
    """Per-class retention counts n_c = round(n_max * gamma^(-c / (C - 1)))."""
    c = np.arange(num_classes, dtype=np.float64)
    raw = n_max * gamma ** (-c / (num_classes - 1))
    return np.array([_round_half_up(v) for v in raw], dtype=np.int64)


def apply_exponential_imbalance(ds: Dataset, spec: ImbalanceSpec) -> Dataset:
    """Down-sample each class along the exponential profile; requires a balanced input."""
    counts = ds.true_counts()
    if counts.min() != counts.max():
        raise ContractError(f"imbalance requires a balanced dataset, got class counts {counts.tolist()}")
    n_max = int(counts[0])
    targets = exponential_profile(n_max, spec.gamma, ds.num_classes)
    if targets.min() < 1:
        raise ValidationError(
            f"gamma={spec.gamma} empties the smallest class (n_max={n_max}); reduce gamma"
        )
    rng = rng_for(spec.seed, "imbalance")
    kept: list[np.ndarray] = []
    for c in range(ds.num_classes):
        members = np.flatnonzero(ds.labels_true == c)
        kept.append(rng.choice(members, size=int(targets[c]), replace=False))
    order = np.sort(np.concatenate(kept))
    return Dataset(
        ds.features[order].copy(),
        ds.labels_observed[order].copy(),
        ds.labels_true[order].copy(),
        ds.num_classes,
        split=ds.split,
    )


def noise_selection(num_samples: int, nu: float, seed: int) -> np.ndarray:
    """The round(nu * N) sample indices whose labels get redrawn, chosen
    uniformly without replacement over the whole dataset."""
    k = _round_half_up(nu * num_samples)
    return rng_for(seed, "noise").choice(num_samples, size=k, replace=False)


def inject_symmetric_noise(ds: Dataset, spec: NoiseSpec) -> Dataset:
    """Redraw the observed label of round(nu * N) samples uniformly over all classes.

    Selection is global and uniform over the dataset; a resampled label may
    coincide with the original. True labels are untouched.
    """
    selected = noise_selection(ds.num_samples, spec.nu, spec.seed)
    observed = ds.labels_observed.copy()
    observed[selected] = rng_for(spec.seed, "noise", "redraw").integers(0, ds.num_classes, size=selected.size)
    return Dataset(ds.features.copy(), observed, ds.labels_true.copy(), ds.num_classes, split=ds.split)


def estimate_priors(ds: Dataset, floor: bool = True) -> Priors:
    """Observed class frequencies; floored at 1/(10N) and renormalized so log(pi) stays finite."""
    counts = ds.observed_counts().astype(np.float64)
    n = ds.num_samples
    if not floor and counts.min() == 0:
        raise ValidationError(
            f"class {int(np.argmin(counts))} has no observed samples and the prior floor is disabled"
        )
    pi = counts / n
    if floor:
        pi = np.maximum(pi, 1.0 / (10.0 * n))
        pi = pi / pi.sum()
    return Priors(pi)


def augment(sample: np.ndarray, spec: AugmentationSpec, draw_seed: int) -> np.ndarray:
    """One augmented view: scale jitter, then Gaussian noise, then masking.

    Pure in ``draw_seed``; two calls with distinct seeds form the two views
    of a positive pair.
    """
    x = np.asarray(sample, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NumericError("augment: input contains NaN or Inf")
    rng = np.random.default_rng(draw_seed)
    y = x * rng.uniform(1.0 - spec.scale_jitter, 1.0 + spec.scale_jitter)
    y = y + spec.gaussian_sigma * rng.standard_normal(x.shape)
    y[rng.random(x.shape) < spec.mask_prob] = 0.0
    return y


def view_seed(run_seed: int, epoch: int, sample_index: int, view_index: int) -> int:
    """Augmentation seed independent of data ordering within the epoch."""
    return derive(run_seed, "augment", epoch, sample_index, view_index)
