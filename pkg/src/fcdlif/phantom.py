"""Synthetic data generation: parametric input functions, an irreversible
two-tissue compartment model, digital mouse phantoms, frame integration with
Poisson count noise, and continuous arterial-line detector traces.

Conventions: time grids and frame schedules are in seconds; kinetic rate
constants (K1, k2, k3) are per minute, so time is converted to minutes inside
the compartment solver and concentration curves stay in SUV.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import DynamicPetImage, FrameSchedule, InputFunction
from .errors import ConfigurationError, ShapeError, SingularModelError

SECONDS_PER_MINUTE = 60.0

#: Fine integration step (s) for continuous curves; must divide frame bounds.
DEFAULT_TIME_STEP = 0.5


# ---------------------------------------------------------------------------
# parametric arterial input function
# ---------------------------------------------------------------------------

@dataclass
class FengParams:
    """Tri-exponential bolus model: linear rise times a fast decay plus two
    slower washout exponentials.

    Units are per second (amplitudes SUV, SUV/s for ``a1``; rates 1/s) with
    the injection starting at ``t0`` seconds.
    """

    a1: float
    a2: float
    a3: float
    lam1: float
    lam2: float
    lam3: float
    t0: float = 0.0

    def __post_init__(self):
        if not (self.lam1 < self.lam2 < self.lam3 < 0.0):
            raise ConfigurationError(
                f"decay rates must satisfy lam1 < lam2 < lam3 < 0, got "
                f"({self.lam1}, {self.lam2}, {self.lam3})")

    @classmethod
    def from_per_minute(cls, a1, a2, a3, lam1, lam2, lam3, t0_s=0.0) -> "FengParams":
        """Convert the common per-minute parameterization to per-second."""
        m = SECONDS_PER_MINUTE
        return cls(a1 / m, a2, a3, lam1 / m, lam2 / m, lam3 / m, t0_s)

    @classmethod
    def typical(cls, rng=None, t0_s: float = 30.0) -> "FengParams":
        """Mouse-bolus-like parameters, optionally jittered for variability.

        Amplitudes are scaled so the curve peaks around 15 SUV with a
        low-single-digit tail.
        """
        base = dict(a1=127.7, a2=3.3, a3=3.1, lam1=-4.13, lam2=-0.12,
                    lam3=-0.01)
        if rng is not None:
            jitter = {k: v * rng.uniform(0.8, 1.2) for k, v in base.items()}
        else:
            jitter = base
        return cls.from_per_minute(t0_s=t0_s, **jitter)


def feng_aif(t, params: FengParams) -> np.ndarray:
    """Blood concentration (SUV) at times ``t`` (s); zero before injection."""
    t = np.asarray(t, dtype=np.float64)
    tau = t - params.t0
    rising = (params.a1 * tau - params.a2 - params.a3) * np.exp(params.lam1 * tau)
    washout = (params.a2 * np.exp(params.lam2 * tau)
               + params.a3 * np.exp(params.lam3 * tau))
    out = np.where(tau >= 0.0, rising + washout, 0.0)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# irreversible two-tissue compartment model
# ---------------------------------------------------------------------------

@dataclass
class KineticParams:
    """Rates of the irreversible two-tissue model, all per minute.

    ``ki`` is the net influx macro-parameter K1*k3/(k2+k3).
    """

    k1: float
    k2: float
    k3: float
    vb: float = 0.05

    def __post_init__(self):
        if self.k1 < 0 or self.k2 < 0 or self.k3 < 0:
            raise ConfigurationError("rate constants must be nonnegative")
        if not 0.0 <= self.vb <= 1.0:
            raise ConfigurationError(f"blood volume fraction must be in [0,1], got {self.vb}")

    @property
    def ki(self) -> float:
        if self.k2 + self.k3 == 0:
            raise SingularModelError("k2 + k3 = 0 leaves the model singular")
        return self.k1 * self.k3 / (self.k2 + self.k3)


def tissue_tac(t, params: KineticParams, aif_values) -> np.ndarray:
    """Tissue concentration on the fine grid ``t`` (s) given blood values there.

    C_T = (1-Vb) * [Ki * integral(C_p) + (K1*k2/(k2+k3)) * exp(-(k2+k3)t) (x) C_p]
          + Vb * C_p
    with trapezoidal quadrature and a trapezoid-weighted discrete convolution.
    """
    t = np.asarray(t, dtype=np.float64)
    cp = np.asarray(aif_values, dtype=np.float64)
    if t.shape != cp.shape or t.ndim != 1:
        raise ShapeError("time grid and blood curve must be matching 1-d arrays")
    if t.size > 1:
        steps = np.diff(t)
        if not np.allclose(steps, steps[0], rtol=0, atol=1e-12):
            raise ConfigurationError("fine time grid must be uniform")
        if steps[0] > DEFAULT_TIME_STEP + 1e-12:
            raise ConfigurationError(
                f"fine grid step {steps[0]:g}s exceeds {DEFAULT_TIME_STEP}s")
    beta = params.k2 + params.k3
    if beta == 0.0:
        raise SingularModelError("k2 + k3 = 0 leaves the model singular")

    t_min = t / SECONDS_PER_MINUTE
    dt = t_min[1] - t_min[0] if t.size > 1 else 0.0

    integral = np.concatenate([[0.0], np.cumsum((cp[1:] + cp[:-1]) * 0.5 * dt)])
    kern = np.exp(-beta * (t_min - t_min[0]))
    conv = np.convolve(cp, kern)[: t.size] * dt
    conv -= 0.5 * dt * (cp * kern[0] + cp[0] * kern)  # trapezoid end correction

    trapped = params.ki * integral
    free = (params.k1 * params.k2 / beta) * conv
    return (1.0 - params.vb) * (trapped + free) + params.vb * cp


# ---------------------------------------------------------------------------
# digital phantom
# ---------------------------------------------------------------------------

@dataclass
class EllipsoidRegion:
    """Labeled ellipsoid; ``kinetics`` is None for the blood pool."""

    name: str
    center_mm: tuple
    semiaxes_mm: tuple
    kinetics: KineticParams = None
    is_blood_pool: bool = False


@dataclass
class Phantom:
    """Voxel grid with labeled ellipsoidal regions over a zero background."""

    grid_shape: tuple = (24, 16, 16)
    voxel_size_mm: tuple = (1.5, 1.5, 1.5)
    regions: list = field(default_factory=list)

    def __post_init__(self):
        self.grid_shape = tuple(int(v) for v in self.grid_shape)
        self.voxel_size_mm = tuple(float(v) for v in self.voxel_size_mm)
        if len(self.grid_shape) != 3 or any(v < 1 for v in self.grid_shape):
            raise ConfigurationError(f"invalid grid shape {self.grid_shape}")

    def label_map(self) -> np.ndarray:
        """Region index per voxel (first listed region wins), -1 = background."""
        coords = [
            (np.arange(n) + 0.5) * s
            for n, s in zip(self.grid_shape, self.voxel_size_mm)
        ]
        xx, yy, zz = np.meshgrid(*coords, indexing="ij")
        labels = np.full(self.grid_shape, -1, dtype=np.int32)
        for idx, region in enumerate(self.regions):
            cx, cy, cz = region.center_mm
            ax, ay, az = region.semiaxes_mm
            inside = (((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2
                      + ((zz - cz) / az) ** 2) <= 1.0
            labels[np.logical_and(inside, labels < 0)] = idx
        return labels

    def blood_pool_index(self) -> int:
        for idx, region in enumerate(self.regions):
            if region.is_blood_pool:
                return idx
        raise ConfigurationError("phantom has no blood pool region")


def make_mouse_phantom(grid_shape=(24, 16, 16), voxel_size_mm=(1.5, 1.5, 1.5),
                       rng=None) -> Phantom:
    """Desk-scale mouse-like phantom: blood pool, heart wall, brain, liver,
    bladder.  With an rng the kinetic parameters are jittered per phantom.

    Default rate ranges (per minute): K1 0.05-0.85, k2 0.05-1.2, k3 0.02-0.2,
    blood volume fraction 0.02-0.25.
    """
    def jitter(value, lo=0.8, hi=1.2):
        return value * rng.uniform(lo, hi) if rng is not None else value

    gx, gy, gz = grid_shape
    vx, vy, vz = voxel_size_mm
    ext = (gx * vx, gy * vy, gz * vz)

    def at(fx, fy, fz):
        return (ext[0] * fx, ext[1] * fy, ext[2] * fz)

    regions = [
        EllipsoidRegion("blood_pool", at(0.42, 0.5, 0.5),
                        (0.09 * ext[0], 0.14 * ext[1], 0.14 * ext[2]),
                        is_blood_pool=True),
        EllipsoidRegion("heart_wall", at(0.42, 0.5, 0.5),
                        (0.14 * ext[0], 0.22 * ext[1], 0.22 * ext[2]),
                        KineticParams(jitter(0.7), jitter(1.0), jitter(0.12),
                                      jitter(0.2))),
        EllipsoidRegion("brain", at(0.12, 0.5, 0.5),
                        (0.10 * ext[0], 0.22 * ext[1], 0.22 * ext[2]),
                        KineticParams(jitter(0.12), jitter(0.2), jitter(0.06),
                                      jitter(0.04))),
        EllipsoidRegion("liver", at(0.65, 0.45, 0.5),
                        (0.12 * ext[0], 0.28 * ext[1], 0.28 * ext[2]),
                        KineticParams(jitter(0.3), jitter(0.6), jitter(0.02),
                                      jitter(0.15))),
        EllipsoidRegion("bladder", at(0.88, 0.5, 0.5),
                        (0.07 * ext[0], 0.18 * ext[1], 0.18 * ext[2]),
                        KineticParams(jitter(0.06), jitter(0.05), jitter(0.18),
                                      jitter(0.03))),
    ]
    return Phantom(grid_shape, voxel_size_mm, regions)


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def _fine_grid(schedule: FrameSchedule, step: float) -> np.ndarray:
    n = int(round(schedule.ends[-1] / step))
    if abs(n * step - schedule.ends[-1]) > 1e-9:
        raise ConfigurationError(
            f"time step {step}s does not divide the scan span "
            f"{schedule.ends[-1]}s")
    return np.arange(n + 1, dtype=np.float64) * step


def frame_average(t, values, schedule: FrameSchedule) -> np.ndarray:
    """Trapezoidal time-average of a fine-grid curve over every frame."""
    t = np.asarray(t, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    step = t[1] - t[0]
    out = np.empty(schedule.num_frames)
    for i, (start, end) in enumerate(zip(schedule.starts, schedule.ends)):
        i0 = int(round(start / step))
        i1 = int(round(end / step))
        if abs(i0 * step - start) > 1e-9 or abs(i1 * step - end) > 1e-9 or i1 > t.size - 1:
            raise ConfigurationError(
                f"frame [{start}, {end}] is not aligned with the fine grid")
        seg = values[i0:i1 + 1]
        out[i] = np.trapezoid(seg, dx=step) / (end - start)
    return out


def render_phantom(phantom: Phantom, schedule: FrameSchedule, feng: FengParams,
                   seed: int = 0, count_scale: float = 100.0,
                   noise: bool = True, time_step: float = DEFAULT_TIME_STEP):
    """Render a (DynamicPetImage, InputFunction) pair.

    Every voxel takes the frame-averaged value of its region's continuous
    curve; blood-pool voxels carry the blood curve itself.  Poisson noise is
    applied to frame-integrated counts (expected counts = value * duration *
    count_scale) and converted back to rate units, so short early frames come
    out noisier.  The returned input function is the noiseless frame-averaged
    blood curve.
    """
    if count_scale <= 0:
        raise ConfigurationError("count_scale must be positive")
    phantom.blood_pool_index()  # raises when the blood pool is missing

    t = _fine_grid(schedule, time_step)
    cp = feng_aif(t, feng)

    region_frames = []
    for region in phantom.regions:
        if region.is_blood_pool:
            curve = cp
        else:
            curve = tissue_tac(t, region.kinetics, cp)
        region_frames.append(frame_average(t, curve, schedule))
    aif_frames = frame_average(t, cp, schedule)

    labels = phantom.label_map()
    if not np.any(labels == phantom.blood_pool_index()):
        raise ConfigurationError("blood pool region contains no voxels")

    n_frames = schedule.num_frames
    image = np.zeros((n_frames,) + phantom.grid_shape, dtype=np.float64)
    for idx, frames in enumerate(region_frames):
        mask = labels == idx
        image[:, mask] = frames[:, None]

    if noise:
        rng = np.random.Generator(np.random.PCG64(seed))
        durations = schedule.durations[:, None, None, None]
        expected = image * durations * count_scale
        image = rng.poisson(expected).astype(np.float64) / (durations * count_scale)

    pet = DynamicPetImage(image.astype(np.float32), schedule,
                          phantom.voxel_size_mm, "SUV_g_per_ml",
                          {"seed": int(seed), "count_scale": float(count_scale)})
    return pet, InputFunction.from_schedule(aif_frames, schedule)


def to_suv(value, injected_dose_mbq: float, body_weight_g: float):
    """Convert MBq/ml to SUV (g/ml): value / (dose / weight)."""
    if injected_dose_mbq <= 0:
        raise ConfigurationError("injected dose must be positive")
    if body_weight_g <= 0:
        raise ConfigurationError("body weight must be positive")
    return np.asarray(value, dtype=np.float64) * (body_weight_g / injected_dose_mbq)


# ---------------------------------------------------------------------------
# continuous detector trace
# ---------------------------------------------------------------------------

MANUAL_SAMPLE_SPAN = 30.0  # seconds of dripped blood per manual sample


@dataclass
class ContinuousDetectorTrace:
    """1 Hz arterial-line signal in raw detector units.

    ``true_delay`` and ``true_scale`` record the synthesis ground truth; the
    calibration pipeline never reads them.  The withdrawal rate is metadata
    only.
    """

    samples: np.ndarray
    true_delay_s: float = 0.0
    true_scale: float = 1.0
    withdrawal_rate_ul_min: float = 105.6

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size < 2:
            raise ConfigurationError("trace needs at least two 1 Hz samples")

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.samples.size, dtype=np.float64)

    @property
    def span(self) -> float:
        return float(self.samples.size - 1)


def simulate_detector_trace(feng: FengParams, true_delay_s: float = 25.1,
                            true_scale: float = 1.0, noise_sd: float = 0.0,
                            manual_sample_times=(300.0, 600.0, 1200.0),
                            duration_s: float = 2730.0, seed: int = 0,
                            outlier_index: int = None,
                            outlier_factor: float = 10.0):
    """Synthesize a 1 Hz detector trace plus manual blood samples.

    trace[t] = true_scale * C_p(t - true_delay) + N(0, noise_sd).  Manual
    samples are exact 30 s averages of the undelayed blood curve; one sample
    may be multiplied by ``outlier_factor`` to exercise outlier rejection.
    Returns (trace, [(start_time, value), ...]).
    """
    if not 0.0 <= true_delay_s < duration_s:
        raise ConfigurationError(
            f"delay {true_delay_s}s outside the {duration_s}s trace span")
    times = np.arange(int(duration_s) + 1, dtype=np.float64)
    rng = np.random.Generator(np.random.PCG64(seed))
    clean = true_scale * feng_aif(times - true_delay_s, feng)
    noise = rng.normal(0.0, noise_sd, size=times.size) if noise_sd > 0 else 0.0
    trace = ContinuousDetectorTrace(clean + noise, true_delay_s, true_scale)

    samples = []
    fine = np.arange(0.0, duration_s + DEFAULT_TIME_STEP, DEFAULT_TIME_STEP)
    cp_fine = feng_aif(fine, feng)
    for i, start in enumerate(manual_sample_times):
        if not 0.0 <= start <= duration_s - MANUAL_SAMPLE_SPAN:
            raise ConfigurationError(
                f"manual sample at {start}s does not fit a "
                f"{MANUAL_SAMPLE_SPAN:g}s window inside the trace")
        lo = int(round(start / DEFAULT_TIME_STEP))
        hi = int(round((start + MANUAL_SAMPLE_SPAN) / DEFAULT_TIME_STEP))
        value = np.trapezoid(cp_fine[lo:hi + 1], dx=DEFAULT_TIME_STEP) / MANUAL_SAMPLE_SPAN
        if outlier_index is not None and i == outlier_index:
            value *= outlier_factor
        samples.append((float(start), float(value)))
    return trace, samples
