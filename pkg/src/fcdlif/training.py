"""Training procedure: segment-weighted MSE, Poisson noise augmentation,
per-sample ADAM updates, and repeated k-fold cross-validation.

The loss weights the squared per-frame residuals by curve segment: the first
25 of 42 frames (peak) get 0.4, the next 9 (intermediate) 0.7, the last 8
(tail) 1.0.  For other curve lengths the segment lengths scale
proportionally (round half up, tail absorbs the remainder).
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tensor, adam_step
from .data import DynamicPetImage, InputFunction
from .errors import ConfigurationError, NumericsError, ShapeError

log = logging.getLogger(__name__)

REFERENCE_SEGMENTS = (25, 9, 8)  # peak / intermediate / tail at 42 frames
REFERENCE_WEIGHTS = (0.4, 0.7, 1.0)


@dataclass
class LossWeights:
    """Segment weights plus the rule generalizing them to any curve length."""

    weights: tuple = REFERENCE_WEIGHTS

    def __post_init__(self):
        self.weights = tuple(float(w) for w in self.weights)
        if len(self.weights) != 3 or any(w <= 0 for w in self.weights):
            raise ConfigurationError("need three positive segment weights")

    @staticmethod
    def segment_lengths(num_frames: int) -> tuple:
        """(peak, intermediate, tail) lengths partitioning [0, num_frames)."""
        if num_frames < 1:
            raise ConfigurationError("curve must have at least one frame")
        total = sum(REFERENCE_SEGMENTS)
        peak = int(np.floor(REFERENCE_SEGMENTS[0] * num_frames / total + 0.5))
        mid = int(np.floor(REFERENCE_SEGMENTS[1] * num_frames / total + 0.5))
        peak = min(peak, num_frames)
        mid = min(mid, num_frames - peak)
        return peak, mid, num_frames - peak - mid

    def vector(self, num_frames: int) -> np.ndarray:
        """Per-frame weight vector for a curve of the given length."""
        peak, mid, tail = self.segment_lengths(num_frames)
        return np.concatenate([
            np.full(peak, self.weights[0]),
            np.full(mid, self.weights[1]),
            np.full(tail, self.weights[2]),
        ])


def _curve_values(curve):
    if isinstance(curve, InputFunction):
        return curve.values
    return np.asarray(curve, dtype=np.float64)


def weighted_mse(pred, target, weights: LossWeights = None):
    """Segment-weighted mean squared error: (1/T) * sum_t w_t (pred-target)^2.

    Accepts arrays or InputFunctions (returns a float), or an autodiff Tensor
    prediction (returns a scalar Tensor for backpropagation).
    """
    weights = weights or LossWeights()
    if isinstance(pred, Tensor):
        target = _curve_values(target)
        if pred.size != target.size:
            raise ShapeError(f"curve lengths differ: {pred.size} vs {target.size}")
        w = (weights.vector(target.size) / target.size).astype(np.float32)
        diff = pred - target.astype(np.float32)
        return ad.tensor_sum(diff * diff * w)
    pred = _curve_values(pred)
    target = _curve_values(target)
    if pred.shape != target.shape:
        raise ShapeError(f"curve lengths differ: {pred.size} vs {target.size}")
    w = weights.vector(pred.size)
    diff = pred - target
    return float(np.sum(w * diff * diff, dtype=np.float64) / pred.size)


def poisson_augment(image, rng, p: float = None):
    """Zero-mean Poisson perturbation with one shared scale per image.

    Draws p ~ Unif(0,1) (unless given), sets the per-voxel rate to
    max(I, 0) * p, and returns I + Pois(rate) - rate.  The expectation equals
    the input; the output may be negative.
    """
    data = image.data if isinstance(image, DynamicPetImage) else np.asarray(image)
    if p is None:
        p = float(rng.uniform(0.0, 1.0))
    if p == 0.0:
        noisy = data.copy()
    else:
        rate = np.maximum(data, 0.0).astype(np.float64) * p
        noisy = (data + (rng.poisson(rate) - rate)).astype(data.dtype)
    if isinstance(image, DynamicPetImage):
        return DynamicPetImage(noisy, image.schedule, image.voxel_size_mm,
                               image.units, dict(image.meta))
    return noisy


def kfold_split(n: int, k: int, seed: int = 0) -> list:
    """Shuffled disjoint folds covering range(n); sizes differ by at most 1."""
    if n < k:
        raise ConfigurationError(f"cannot split {n} samples into {k} folds")
    if k < 2:
        raise ConfigurationError("need at least 2 folds")
    rng = np.random.Generator(np.random.PCG64(seed))
    order = rng.permutation(n)
    folds = np.array_split(order, k)
    splits = []
    for i in range(k):
        val = np.sort(folds[i])
        train = np.sort(np.concatenate([folds[j] for j in range(k) if j != i]))
        splits.append((train, val))
    return splits


@dataclass
class TrainConfig:
    epochs: int = 1000
    learning_rate: float = 1e-4
    folds: int = 10
    runs_per_fold: int = 10
    augment: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.folds < 2:
            raise ConfigurationError("folds must be >= 2")
        if self.runs_per_fold < 1:
            raise ConfigurationError("runs_per_fold must be >= 1")


@dataclass
class TrainHistory:
    train_wmse: list = field(default_factory=list)
    val_wmse: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_wmse: float = float("inf")


def _validate_curve(model, image) -> np.ndarray:
    return model.predict(image).values


def train(model, train_data, val_data, config: TrainConfig,
          weights: LossWeights = None):
    """Fit ``model`` with per-sample ADAM updates (batch size 1).

    Augmentation perturbs training inputs only; validation always sees the
    clean samples.  The parameters from the epoch with the lowest validation
    wMSE are restored before returning.  Returns (model, TrainHistory).
    """
    if not train_data:
        raise ConfigurationError("training set is empty")
    weights = weights or LossWeights()
    rng = np.random.Generator(np.random.PCG64(config.seed))
    params = list(model.parameters())
    state = AdamState(params, learning_rate=config.learning_rate)
    history = TrainHistory()
    best_params = None

    for epoch in range(config.epochs):
        order = rng.permutation(len(train_data))
        epoch_losses = []
        for idx in order:
            image, target = train_data[idx]
            sample = poisson_augment(image, rng) if config.augment else image
            pred = model.forward(sample)
            loss = weighted_mse(pred, target, weights)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericsError(
                    f"non-finite loss at epoch {epoch}, sample {idx}")
            loss.backward(params=params)
            adam_step(state)
            state.zero_grad()
            epoch_losses.append(value)
        history.train_wmse.append(float(np.mean(epoch_losses)))

        if val_data:
            val = float(np.mean([
                weighted_mse(_validate_curve(model, img), tgt, weights)
                for img, tgt in val_data]))
        else:
            val = history.train_wmse[-1]
        history.val_wmse.append(val)
        if val < history.best_val_wmse:
            history.best_val_wmse = val
            history.best_epoch = epoch
            best_params = [p.data.copy() for p in params]

    if best_params is not None:
        for p, data in zip(params, best_params):
            p.data = data
    return model, history


@dataclass
class CrossValResult:
    """Per-(fold, run) held-out metrics and predictions."""

    rows: list = field(default_factory=list)  # dicts: fold, run, sample, mse, mbe
    predictions: dict = field(default_factory=dict)  # (fold, run, sample) -> values
    histories: dict = field(default_factory=dict)  # (fold, run) -> TrainHistory

    def run_mean_std(self, sample: int):
        """Mean curve and per-frame std over the runs that held out ``sample``."""
        curves = [v for (f, r, s), v in self.predictions.items() if s == sample]
        if not curves:
            raise KeyError(f"sample {sample} has no held-out predictions")
        stacked = np.stack(curves)
        return stacked.mean(axis=0), stacked.std(axis=0)


def derived_seed(base_seed: int, fold: int, run: int) -> int:
    """Deterministic per-job seed for fold x run parallelism."""
    ss = np.random.SeedSequence([int(base_seed), int(fold), int(run)])
    return int(ss.generate_state(1)[0])


def cross_validate(dataset, config: TrainConfig, model_factory=None,
                   weights: LossWeights = None) -> CrossValResult:
    """Repeated k-fold cross-validation.

    ``model_factory(seed)`` builds a fresh model per (fold, run); the default
    builds the desk-scale predictor.  Every sample appears exactly once as
    validation per run, and MSE/MBE of the held-out predictions are recorded.
    """
    from .evaluation import mbe, mse
    from .model import build_desk_fcdlif

    if model_factory is None:
        model_factory = build_desk_fcdlif
    splits = kfold_split(len(dataset), config.folds, config.seed)
    result = CrossValResult()
    for fold, (train_idx, val_idx) in enumerate(splits):
        for run in range(config.runs_per_fold):
            seed = derived_seed(config.seed, fold, run)
            model = model_factory(seed)
            job_config = dataclasses.replace(config, seed=seed)
            train_set = [dataset[i] for i in train_idx]
            val_set = [dataset[i] for i in val_idx]
            model, history = train(model, train_set, val_set, job_config, weights)
            result.histories[(fold, run)] = history
            for i in val_idx:
                image, target = dataset[i]
                pred = model.predict(image)
                result.predictions[(fold, run, int(i))] = pred.values
                result.rows.append({
                    "fold": fold, "run": run, "sample": int(i),
                    "mse": mse(pred, target), "mbe": mbe(pred, target),
                })
    return result
