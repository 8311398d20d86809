"""Arterial-line processing: delay correction, per-sample calibration
factors, robust outlier rejection, averaged scaling, and resampling onto the
PET frame schedule.

The continuous detector signal lags the injection site, so the trace is
shifted back by the measured delay first.  Each manual blood sample then
yields a factor detector_units / blood_SUV from its 30 s window; factors more
than three scaled median absolute deviations from the median are discarded
and the surviving mean divides the trace.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import FrameSchedule, InputFunction
from .errors import CalibrationError, ConfigurationError
from .phantom import ContinuousDetectorTrace, MANUAL_SAMPLE_SPAN

log = logging.getLogger(__name__)

MAD_SCALE = 1.4826  # consistent with a normal distribution
MAD_THRESHOLD = 3.0


@dataclass
class CalibrationResult:
    """Per-sample factors, the inclusion mask, and the averaged factor."""

    factors: np.ndarray
    included: np.ndarray
    overall_factor: float
    delay_s: float

    def __post_init__(self):
        self.factors = np.asarray(self.factors, dtype=np.float64)
        self.included = np.asarray(self.included, dtype=bool)
        if not self.included.any():
            raise CalibrationError("no calibration samples were included")
        expected = float(self.factors[self.included].mean())
        if not np.isclose(self.overall_factor, expected, rtol=1e-12, atol=0):
            raise CalibrationError("overall factor is not the mean of included factors")


def delay_correct(trace: ContinuousDetectorTrace, delay_s: float) -> ContinuousDetectorTrace:
    """Shift the trace so its time axis matches injection-site time.

    A sample recorded at detector time t appears at t - delay; sub-second
    delays use linear interpolation, and the trailing edge holds the last
    sample value.
    """
    if not -trace.span < delay_s < trace.span:
        raise ConfigurationError(
            f"delay {delay_s}s outside the +-{trace.span:g}s trace span")
    if delay_s == 0.0:
        shifted = trace.samples.copy()
    else:
        shifted = np.interp(trace.times + delay_s, trace.times, trace.samples)
    return ContinuousDetectorTrace(shifted, 0.0, trace.true_scale,
                                   trace.withdrawal_rate_ul_min)


def _window_mean(samples: np.ndarray, start: float, span: float) -> float:
    """Mean of the 1 Hz samples in [start, start + span), start inclusive."""
    lo = int(np.ceil(start - 1e-9))
    hi = int(np.ceil(start + span - 1e-9))  # exclusive end
    if lo < 0 or hi > samples.size:
        raise ConfigurationError(
            f"window [{start}, {start + span}) falls outside the trace")
    return float(samples[lo:hi].mean())


def calibration_factors(trace: ContinuousDetectorTrace, manual_samples) -> np.ndarray:
    """Per-sample factor: windowed trace mean over the manual blood value.

    ``manual_samples`` is a sequence of (start_time_s, blood_value) pairs;
    each window spans 30 s, inclusive start, exclusive end.  Zero-valued
    manual samples are excluded with a warning (factor set to NaN).
    """
    factors = np.full(len(manual_samples), np.nan)
    for i, (start, value) in enumerate(manual_samples):
        if value == 0.0:
            log.warning("manual sample %d at %gs has value 0; excluded", i, start)
            continue
        factors[i] = _window_mean(trace.samples, start, MANUAL_SAMPLE_SPAN) / value
    if not np.isfinite(factors).any():
        raise CalibrationError("every manual sample was unusable")
    return factors


def mad_outlier_filter(values) -> np.ndarray:
    """Inclusion mask keeping values within 3 scaled MADs of the median.

    scaled MAD = 1.4826 * median(|x - median(x)|).  When the scaled MAD is
    zero only values equal to the median survive.  NaN entries are always
    excluded.
    """
    values = np.asarray(values, dtype=np.float64)
    finite = np.isfinite(values)
    if finite.sum() < 2:
        raise CalibrationError("outlier filtering needs at least 2 usable values")
    median = np.median(values[finite])
    scaled_mad = MAD_SCALE * np.median(np.abs(values[finite] - median))
    if scaled_mad == 0.0:
        mask = values == median
    else:
        mask = np.abs(values - median) <= MAD_THRESHOLD * scaled_mad
    mask &= finite
    if not mask.any():
        raise CalibrationError("all calibration factors were rejected as outliers")
    return mask


def apply_calibration(trace: ContinuousDetectorTrace,
                      result: CalibrationResult) -> ContinuousDetectorTrace:
    """Divide the trace by the overall factor (detector units -> blood SUV)."""
    if result.overall_factor == 0.0:
        raise CalibrationError("overall calibration factor is zero")
    return ContinuousDetectorTrace(trace.samples / result.overall_factor,
                                   trace.true_delay_s, 1.0,
                                   trace.withdrawal_rate_ul_min)


def resample_to_frames(trace: ContinuousDetectorTrace,
                       schedule: FrameSchedule) -> InputFunction:
    """Frame values as time-averages of the piecewise-linear trace."""
    if schedule.starts[0] < 0 or schedule.ends[-1] > trace.span:
        raise ConfigurationError(
            f"schedule [{schedule.starts[0]}, {schedule.ends[-1]}]s extends "
            f"beyond the {trace.span:g}s trace")
    cumulative = np.concatenate(
        [[0.0], np.cumsum(0.5 * (trace.samples[1:] + trace.samples[:-1]))])

    def integral_at(t: float) -> float:
        i = int(np.floor(t))
        if i >= trace.samples.size - 1:
            return float(cumulative[-1])
        frac = t - i
        a, b = trace.samples[i], trace.samples[i + 1]
        return float(cumulative[i] + frac * a + 0.5 * frac * frac * (b - a))

    values = np.empty(schedule.num_frames)
    for i, (start, end) in enumerate(zip(schedule.starts, schedule.ends)):
        values[i] = (integral_at(end) - integral_at(start)) / (end - start)
    return InputFunction.from_schedule(values, schedule)


def calibrate_trace(trace: ContinuousDetectorTrace, manual_samples,
                    delay_s: float, schedule: FrameSchedule = None):
    """Full pipeline: delay correction, factors, robust mean, scaling,
    optional resampling.

    Returns (CalibrationResult, calibrated trace, InputFunction or None).
    """
    if not 0.0 <= delay_s < trace.span:
        raise ConfigurationError(
            f"delay {delay_s}s outside the [0, {trace.span:g})s trace span")
    corrected = delay_correct(trace, delay_s)
    factors = calibration_factors(corrected, manual_samples)
    included = mad_outlier_filter(factors)
    overall = float(factors[included].mean())
    result = CalibrationResult(factors, included, overall, float(delay_s))
    calibrated = apply_calibration(corrected, result)
    curve = resample_to_frames(calibrated, schedule) if schedule is not None else None
    return result, calibrated, curve
