"""Core data containers: frame schedules, dynamic images, input functions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ShapeError

#: Default acquisition: 1x30, 24x5, 9x20, 8x300 seconds -> 42 frames, 2730 s.
DEFAULT_FRAME_SPEC = ((1, 30.0), (24, 5.0), (9, 20.0), (8, 300.0))


class FrameSchedule:
    """Contiguous, non-overlapping (start, duration) frame intervals in seconds."""

    def __init__(self, starts, durations):
        self.starts = np.asarray(starts, dtype=np.float64)
        self.durations = np.asarray(durations, dtype=np.float64)
        if self.starts.ndim != 1 or self.starts.shape != self.durations.shape:
            raise ConfigurationError("starts and durations must be equal-length 1-d arrays")
        if self.starts.size == 0:
            raise ConfigurationError("schedule must contain at least one frame")
        if np.any(self.durations <= 0):
            raise ConfigurationError("frame durations must be positive")
        ends = self.starts + self.durations
        if not np.allclose(self.starts[1:], ends[:-1], rtol=0, atol=1e-9):
            raise ConfigurationError("frames must be contiguous and non-overlapping")

    @classmethod
    def from_spec(cls, spec=DEFAULT_FRAME_SPEC, t0: float = 0.0) -> "FrameSchedule":
        """Build from ((count, duration), ...) groups starting at ``t0``."""
        starts, durations = [], []
        t = float(t0)
        for count, dur in spec:
            for _ in range(int(count)):
                starts.append(t)
                durations.append(float(dur))
                t += float(dur)
        return cls(starts, durations)

    @classmethod
    def default(cls) -> "FrameSchedule":
        return cls.from_spec()

    @property
    def num_frames(self) -> int:
        return int(self.starts.size)

    @property
    def ends(self) -> np.ndarray:
        return self.starts + self.durations

    @property
    def mid_times(self) -> np.ndarray:
        return self.starts + 0.5 * self.durations

    @property
    def total_span(self) -> float:
        return float(self.ends[-1] - self.starts[0])

    def __len__(self):
        return self.num_frames

    def __eq__(self, other):
        return (isinstance(other, FrameSchedule)
                and np.array_equal(self.starts, other.starts)
                and np.array_equal(self.durations, other.durations))

    def __repr__(self):
        return (f"FrameSchedule({self.num_frames} frames, "
                f"{self.starts[0]:g}..{self.ends[-1]:g} s)")

    def prepend_frame(self, duration=None) -> "FrameSchedule":
        """New schedule with one extra frame inserted before the first."""
        dur = float(self.durations[0] if duration is None else duration)
        starts = np.concatenate([[self.starts[0]], self.starts + dur])
        durations = np.concatenate([[dur], self.durations])
        return FrameSchedule(starts, durations)

    def slice(self, lo: int, hi: int) -> "FrameSchedule":
        """Sub-schedule of frames [lo, hi)."""
        if not (0 <= lo < hi <= self.num_frames):
            raise ConfigurationError(f"invalid frame slice [{lo}, {hi})")
        return FrameSchedule(self.starts[lo:hi], self.durations[lo:hi])


@dataclass
class InputFunction:
    """Per-frame arterial tracer concentration curve (SUV)."""

    values: np.ndarray
    mid_times: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mid_times = np.asarray(self.mid_times, dtype=np.float64)
        if self.values.shape != self.mid_times.shape or self.values.ndim != 1:
            raise ShapeError("values and mid_times must be matching 1-d arrays")

    @classmethod
    def from_schedule(cls, values, schedule: FrameSchedule) -> "InputFunction":
        values = np.asarray(values, dtype=np.float64)
        if values.size != schedule.num_frames:
            raise ShapeError(
                f"curve has {values.size} values but schedule has "
                f"{schedule.num_frames} frames")
        return cls(values, schedule.mid_times.copy())

    def __len__(self):
        return int(self.values.size)


@dataclass
class DynamicPetImage:
    """4D voxel array (T, X, Y, Z) with frame schedule and voxel geometry."""

    data: np.ndarray
    schedule: FrameSchedule
    voxel_size_mm: tuple = (1.5, 1.5, 1.5)
    units: str = "SUV_g_per_ml"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 4:
            raise ShapeError(f"image must be 4-d (T,X,Y,Z), got shape {self.data.shape}")
        if self.data.shape[0] != self.schedule.num_frames:
            raise ShapeError(
                f"image has {self.data.shape[0]} frames but schedule has "
                f"{self.schedule.num_frames}")
        self.voxel_size_mm = tuple(float(v) for v in self.voxel_size_mm)
        if len(self.voxel_size_mm) != 3:
            raise ConfigurationError("voxel_size_mm must have 3 components")

    @property
    def num_frames(self) -> int:
        return int(self.data.shape[0])

    @property
    def spatial_shape(self) -> tuple:
        return tuple(self.data.shape[1:])

    def shifted(self) -> "DynamicPetImage":
        """Copy with frame 0 duplicated at the front (time-shift experiment)."""
        data = np.concatenate([self.data[:1], self.data], axis=0)
        return DynamicPetImage(data, self.schedule.prepend_frame(),
                               self.voxel_size_mm, self.units, dict(self.meta))

    def truncated(self, drop_head: int = 4, drop_tail: int = 6) -> "DynamicPetImage":
        """Copy with the first ``drop_head`` and last ``drop_tail`` frames removed."""
        t = self.num_frames
        if t - drop_head - drop_tail < 1:
            raise ConfigurationError(
                f"cannot drop {drop_head}+{drop_tail} frames from a {t}-frame image")
        data = self.data[drop_head: t - drop_tail]
        sched = self.schedule.slice(drop_head, t - drop_tail)
        return DynamicPetImage(data, sched, self.voxel_size_mm, self.units,
                               dict(self.meta))
