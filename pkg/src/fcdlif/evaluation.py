"""Evaluation metrics and analyses: MSE/MBE, orthogonal regression, paired
t-test, Patlak net influx rates (curve and voxel level), the shift and
truncation robustness harness, segment error profiles, and Q-Q points.

Kinetic conventions match the simulator: frame mid-times are the time
coordinate, converted to minutes, so Patlak slopes come out per minute.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .data import DynamicPetImage, InputFunction
from .errors import ConfigurationError, FixedLengthError, ShapeError
from .phantom import SECONDS_PER_MINUTE
from .training import LossWeights, weighted_mse


def _values(curve):
    if isinstance(curve, InputFunction):
        return curve.values
    return np.asarray(curve, dtype=np.float64)


def _paired(pred, target, what="curves"):
    p, t = _values(pred), _values(target)
    if p.shape != t.shape:
        raise ShapeError(f"{what} have different lengths: {p.size} vs {t.size}")
    return p, t


def mse(pred, target) -> float:
    """Mean squared difference."""
    p, t = _paired(pred, target)
    return float(np.mean((p - t) ** 2, dtype=np.float64))


def mbe(pred, target) -> float:
    """Mean bias error, positive when the prediction overestimates."""
    p, t = _paired(pred, target)
    return float(np.mean(p - t, dtype=np.float64))


# ---------------------------------------------------------------------------
# orthogonal (Deming, equal error variance) regression
# ---------------------------------------------------------------------------

@dataclass
class OrthRegressionResult:
    slope: float
    intercept: float
    pearson_r: float
    r_squared: float


def orthogonal_regression(x, y) -> OrthRegressionResult:
    """Deming fit with error variance ratio 1, plus Pearson r and r^2.

    slope = (s_yy - s_xx + sqrt((s_yy - s_xx)^2 + 4 s_xy^2)) / (2 s_xy).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ShapeError("x and y must be matching 1-d arrays")
    if x.size < 3:
        raise ConfigurationError("orthogonal regression needs at least 3 points")
    xm, ym = x.mean(), y.mean()
    s_xx = np.mean((x - xm) ** 2)
    s_yy = np.mean((y - ym) ** 2)
    s_xy = np.mean((x - xm) * (y - ym))
    if s_xx == 0.0 and s_yy == 0.0:
        raise ConfigurationError("degenerate input: both variables are constant")
    if s_xy == 0.0:
        if s_xx == s_yy:
            raise ConfigurationError("slope undefined: zero covariance with equal variances")
        raise ConfigurationError("degenerate input: zero covariance")
    slope = (s_yy - s_xx + math.sqrt((s_yy - s_xx) ** 2 + 4.0 * s_xy ** 2)) / (2.0 * s_xy)
    intercept = ym - slope * xm
    r = float(s_xy / math.sqrt(s_xx * s_yy))
    return OrthRegressionResult(float(slope), float(intercept), r, r * r)


# ---------------------------------------------------------------------------
# paired t-test
# ---------------------------------------------------------------------------

def paired_ttest(x, y, alpha: float = 0.05):
    """Two-sided paired t-test on d = x - y.

    Returns (t, p, reject).  Degenerate zero-variance differences follow the
    documented conventions: all-zero d gives t=0, p=1; constant nonzero d
    gives p=0 with an infinite t.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ShapeError("paired samples must be matching 1-d arrays")
    n = x.size
    if n < 2:
        raise ConfigurationError("paired t-test needs at least 2 pairs")
    d = x - y
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0.0:
        if mean == 0.0:
            return 0.0, 1.0, False
        return math.copysign(math.inf, mean), 0.0, True
    t = mean / (sd / math.sqrt(n))
    p = float(2.0 * special.stdtr(n - 1, -abs(t)))
    return float(t), p, bool(p < alpha)


# ---------------------------------------------------------------------------
# Patlak graphical analysis
# ---------------------------------------------------------------------------

@dataclass
class PatlakResult:
    ki_per_min: float
    intercept: float
    fit_window: tuple
    residual_norm: float


def _patlak_coordinates(input_function: InputFunction):
    """x(t) = integral(C_p)/C_p on frame mid-times (minutes).

    The cumulative trapezoid starts from t=0 with the blood value held
    constant over the leading half-frame, which keeps a constant input
    function exactly on x(t) = t.
    """
    mids = input_function.mid_times / SECONDS_PER_MINUTE
    cp = input_function.values
    t_ext = np.concatenate([[0.0], mids])
    cp_ext = np.concatenate([[cp[0]], cp])
    integral = np.concatenate(
        [[0.0], np.cumsum(0.5 * (cp_ext[1:] + cp_ext[:-1]) * np.diff(t_ext))])[1:]
    return integral, cp


def default_fit_window(num_frames: int, tail: int = 8) -> tuple:
    """Last ``tail`` frames: the steady-state segment used for the fit."""
    if num_frames < 2:
        raise ConfigurationError("need at least 2 frames")
    return (max(num_frames - tail, 0), num_frames)


def patlak_ki(tissue, input_function: InputFunction,
              fit_window: tuple = None) -> PatlakResult:
    """Net influx rate from the graphical linearization.

    Regresses C_T/C_p against integral(C_p)/C_p by ordinary least squares
    over the fit window; the slope is Ki (1/min), the intercept the apparent
    distribution volume.
    """
    ct = _values(tissue)
    if ct.shape != input_function.values.shape:
        raise ShapeError("tissue and input curves must have equal lengths")
    lo, hi = fit_window or default_fit_window(ct.size)
    if hi - lo < 2:
        raise ConfigurationError("fit window needs at least 2 frames")
    if not (0 <= lo < hi <= ct.size):
        raise ConfigurationError(f"fit window [{lo}, {hi}) outside the curve")
    integral, cp = _patlak_coordinates(input_function)
    win = slice(lo, hi)
    if np.any(cp[win] <= 0.0):
        raise ConfigurationError("input function must be positive on the fit window")
    x = integral[win] / cp[win]
    y = ct[win] / cp[win]
    design = np.stack([x, np.ones_like(x)], axis=1)
    (slope, intercept), res, _, _ = np.linalg.lstsq(design, y, rcond=None)
    residual = float(np.sqrt(res[0])) if res.size else 0.0
    return PatlakResult(float(slope), float(intercept), (lo, hi), residual)


def voxelwise_patlak(image: DynamicPetImage, input_function: InputFunction,
                     fit_window: tuple = None, sample_count: int = None,
                     seed: int = 0):
    """Patlak slope and intercept per voxel (optionally a random subsample).

    Returns (ki, intercept, voxel_indices) where ki/intercept are 1-d arrays
    over the selected voxels and voxel_indices are flat indices into the
    spatial grid.
    """
    t = image.num_frames
    if input_function.values.size != t:
        raise ShapeError("input function length does not match the image")
    lo, hi = fit_window or default_fit_window(t)
    if hi - lo < 2:
        raise ConfigurationError("fit window needs at least 2 frames")
    integral, cp = _patlak_coordinates(input_function)
    win = slice(lo, hi)
    if np.any(cp[win] <= 0.0):
        raise ConfigurationError("input function must be positive on the fit window")

    n_vox = int(np.prod(image.spatial_shape))
    if sample_count is not None and sample_count < n_vox:
        rng = np.random.Generator(np.random.PCG64(seed))
        idx = np.sort(rng.choice(n_vox, size=sample_count, replace=False))
    else:
        idx = np.arange(n_vox)

    tissue = image.data.reshape(t, n_vox)[win][:, idx].astype(np.float64)
    x = integral[win] / cp[win]
    y = tissue / cp[win, None]
    design = np.stack([x, np.ones_like(x)], axis=1)
    beta, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
    return beta[0], beta[1], idx


# ---------------------------------------------------------------------------
# robustness harness
# ---------------------------------------------------------------------------

@dataclass
class RobustnessReport:
    """Comparison of a transformed input's prediction against the original."""

    original: np.ndarray = None
    transformed: np.ndarray = None
    overlap_deviation: np.ndarray = None
    interior: np.ndarray = None
    truth_wmse: float = None
    error: str = None


def _interior_mask(length: int, radius: int) -> np.ndarray:
    mask = np.zeros(length, dtype=bool)
    lo, hi = radius, length - radius
    if lo < hi:
        mask[lo:hi] = True
    return mask


def shift_test(model, image: DynamicPetImage) -> RobustnessReport:
    """Duplicate frame 0 at the front and compare predictions.

    Positions farther than the temporal receptive-field radius from either
    boundary must agree exactly with the unshifted prediction, one index
    later.  Fixed-length models produce a report carrying the error instead.
    """
    report = RobustnessReport()
    try:
        original = model.predict(image).values
        shifted = model.predict(image.shifted()).values
    except FixedLengthError as exc:
        report.error = str(exc)
        return report
    report.original = original
    report.transformed = shifted
    report.overlap_deviation = shifted[1:] - original
    radius = getattr(model, "receptive_radius", 0)
    report.interior = _interior_mask(original.size, radius + 1)
    return report


def truncation_test(model, image: DynamicPetImage, truth: InputFunction = None,
                    drop_head: int = 4, drop_tail: int = 6) -> RobustnessReport:
    """Drop leading/trailing frames and compare the overlapping positions.

    With ground truth provided, the report carries the weighted MSE of the
    truncated prediction against the matching slice of the truth curve.
    """
    if image.num_frames <= drop_head + drop_tail:
        raise ConfigurationError(
            f"need more than {drop_head + drop_tail} frames, got {image.num_frames}")
    report = RobustnessReport()
    try:
        original = model.predict(image).values
        truncated = model.predict(image.truncated(drop_head, drop_tail)).values
    except FixedLengthError as exc:
        report.error = str(exc)
        return report
    report.original = original
    report.transformed = truncated
    overlap = original[drop_head: original.size - drop_tail]
    report.overlap_deviation = truncated - overlap
    radius = getattr(model, "receptive_radius", 0)
    report.interior = _interior_mask(truncated.size, radius)
    if truth is not None:
        sliced = truth.values[drop_head: truth.values.size - drop_tail]
        report.truth_wmse = weighted_mse(truncated, sliced, LossWeights())
    return report


# ---------------------------------------------------------------------------
# distribution summaries
# ---------------------------------------------------------------------------

PROFILE_PERCENTILES = (5.0, 25.0, 50.0, 75.0, 95.0)


def segment_error_profile(preds, targets, percentiles=PROFILE_PERCENTILES) -> dict:
    """Distribution of per-frame errors grouped by curve segment.

    ``preds``/``targets`` are matching curves or lists of curves; errors are
    pooled per segment and summarized at the requested percentiles.
    """
    if isinstance(preds, (InputFunction, np.ndarray)):
        preds, targets = [preds], [targets]
    pools = {"peak": [], "intermediate": [], "tail": []}
    for pred, target in zip(preds, targets):
        p, t = _paired(pred, target)
        peak, mid, tail = LossWeights.segment_lengths(p.size)
        err = p - t
        pools["peak"].append(err[:peak])
        pools["intermediate"].append(err[peak:peak + mid])
        pools["tail"].append(err[peak + mid:])
    profile = {}
    for name, parts in pools.items():
        pooled = np.concatenate(parts) if parts else np.empty(0)
        if pooled.size:
            profile[name] = {
                f"p{int(q)}": float(np.percentile(pooled, q)) for q in percentiles
            }
        else:
            profile[name] = {f"p{int(q)}": float("nan") for q in percentiles}
    return profile


def qq_points(residuals):
    """Ordered (standard normal quantile, sample order statistic) pairs.

    Theoretical quantiles are taken at (i - 0.5)/n.
    """
    residuals = np.asarray(residuals, dtype=np.float64)
    if residuals.ndim != 1 or residuals.size < 3:
        raise ConfigurationError("need at least 3 residuals")
    n = residuals.size
    probs = (np.arange(1, n + 1) - 0.5) / n
    theoretical = special.ndtri(probs)
    return theoretical, np.sort(residuals)
