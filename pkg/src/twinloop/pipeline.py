"""Stream preprocessing: rolling standardization, temporal alignment, windowing,
and sensor health flagging."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .datagen import (
    SAMPLE_INTERVAL_S,
    SENSOR_NAMES,
    Dataset,
    EventType,
    SystemState,
)

STATE_ONEHOT_COLUMNS = tuple(f"state_{s.value}" for s in SystemState)
FEATURE_ORDER: tuple[str, ...] = Dataset.NUMERIC_COLUMNS + STATE_ONEHOT_COLUMNS

DEFAULT_ROLLING_WINDOW = 100
_BATCH_MAGIC = b"TWLWB001"


class SensorStatus(str, Enum):
    OK = "ok"
    SUSPECT = "suspect"
    FAILED = "failed"


@dataclass
class SensorHealth:
    sensor: str
    status: SensorStatus
    outlier_fraction: float
    calibration_score: float


@dataclass
class WindowBatch:
    """Model-ready sliding windows: [batch, time_steps, features] plus labels."""

    windows: np.ndarray
    labels: np.ndarray
    feature_order: tuple[str, ...] = FEATURE_ORDER

    def __post_init__(self) -> None:
        if self.windows.ndim != 3:
            raise ValueError("windows must be a 3-D array [batch, time_steps, features]")
        if self.windows.shape[0] != self.labels.shape[0]:
            raise ValueError("labels must align with the window batch dimension")
        if self.windows.shape[2] != len(self.feature_order):
            raise ValueError("feature dimension must match feature_order")

    def __len__(self) -> int:
        return int(self.windows.shape[0])

    @property
    def time_steps(self) -> int:
        return int(self.windows.shape[1])

    @property
    def n_features(self) -> int:
        return int(self.windows.shape[2])

    def save(self, path: str | Path) -> None:
        """Flat row-major little-endian float64 layout behind a small header."""
        b, t, f = self.windows.shape
        with open(path, "wb") as fh:
            fh.write(_BATCH_MAGIC)
            fh.write(struct.pack("<3q", b, t, f))
            fh.write(np.ascontiguousarray(self.windows, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.labels, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "WindowBatch":
        with open(path, "rb") as fh:
            magic = fh.read(len(_BATCH_MAGIC))
            if magic != _BATCH_MAGIC:
                raise ValueError("not a window batch file")
            b, t, f = struct.unpack("<3q", fh.read(24))
            windows = np.frombuffer(fh.read(b * t * f * 8), dtype="<f8").reshape(b, t, f)
            labels = np.frombuffer(fh.read(b * 8), dtype="<f8")
        if f != len(FEATURE_ORDER):
            raise ValueError(f"unexpected feature count {f}")
        return cls(windows=windows.copy(), labels=labels.astype(np.int64))


def rolling_stats(x: np.ndarray, window: int) -> tuple[np.ndarray, np.ndarray]:
    """Trailing mean/std per position; the first `window` positions use
    expanding statistics over the prefix.  Population (ddof=0) convention."""
    n = x.shape[0]
    means = np.empty(n)
    stds = np.empty(n)
    head = min(window, n)
    for i in range(head):
        seg = x[: i + 1]
        means[i] = seg.mean()
        stds[i] = seg.std()
    if n > window:
        view = np.lib.stride_tricks.sliding_window_view(x, window)
        means[window:] = view[1:].mean(axis=1)
        stds[window:] = view[1:].std(axis=1)
    return means, stds


def _rolling_zscore(x: np.ndarray, window: int) -> np.ndarray:
    means, stds = rolling_stats(x, window)
    z = np.zeros_like(x, dtype=float)
    ok = stds > 1e-12
    z[ok] = (x[ok] - means[ok]) / stds[ok]
    return z


def rolling_robust_zscore(x: np.ndarray, window: int) -> np.ndarray:
    """Median/MAD analogue of the rolling z-score.

    Robust to contaminated windows: a burst of extreme readings cannot mask
    itself by inflating the scale estimate, unlike mean/std scoring.
    """
    n = x.shape[0]
    z = np.zeros(n)
    head = min(window, n)
    for i in range(head):
        z[i] = _robust_score(x[: i + 1], x[i])
    if n > window:
        view = np.lib.stride_tricks.sliding_window_view(x, window)[1:]
        med = np.median(view, axis=1)
        mad = np.median(np.abs(view - med[:, None]), axis=1)
        scale = 1.4826 * mad
        ok = scale > 1e-12
        tail = np.zeros(n - window)
        tail[ok] = (x[window:][ok] - med[ok]) / scale[ok]
        z[window:] = tail
    return z


def _robust_score(seg: np.ndarray, value: float) -> float:
    med = float(np.median(seg))
    mad = float(np.median(np.abs(seg - med)))
    scale = 1.4826 * mad
    return 0.0 if scale <= 1e-12 else (value - med) / scale


def interpolate_missing(x: np.ndarray) -> np.ndarray:
    """Fill NaNs by linear interpolation, extending flat at both ends."""
    out = np.asarray(x, dtype=float).copy()
    bad = ~np.isfinite(out)
    if not bad.any():
        return out
    good = ~bad
    if not good.any():
        return np.zeros_like(out)
    idx = np.arange(out.shape[0])
    out[bad] = np.interp(idx[bad], idx[good], out[good])
    return out


def normalize(d: Dataset, window: int = DEFAULT_ROLLING_WINDOW) -> Dataset:
    """Replace each numeric column with its rolling z-score.

    Missing values are linearly interpolated first; zero-variance windows map
    to 0, so finite input always yields finite output.  Output columns no
    longer carry physical units, only the schema.
    """
    if window < 2:
        raise ValueError("rolling window must be >= 2")
    if len(d) == 0:
        raise ValueError("cannot normalize an empty dataset")
    out = d.take(slice(None))
    for name in Dataset.NUMERIC_COLUMNS:
        filled = interpolate_missing(getattr(d, name))
        setattr(out, name, _rolling_zscore(filled, window))
    return out


@dataclass
class TimedSeries:
    """One named sensor stream on its own sampling grid."""

    name: str
    timestamps: np.ndarray
    values: np.ndarray
    rate_hz: float | None = None

    def spacing(self) -> float:
        if self.rate_hz:
            return 1.0 / self.rate_hz
        if len(self.timestamps) < 2:
            return float("inf")
        return float(np.median(np.diff(self.timestamps)))


def align(streams: Sequence[TimedSeries]) -> Dataset:
    """Resample streams onto the slowest stream's grid by linear interpolation.

    The grid is clipped to the intersection of all stream spans (no
    extrapolation).  Streams must cover at least the three physical sensors;
    missing derived columns are reconstructed with their standard definitions.
    """
    if not streams:
        raise ValueError("no streams to align")
    for s in streams:
        if len(s.timestamps) == 0:
            raise ValueError(f"stream {s.name!r} is empty")
        if np.any(np.diff(s.timestamps) <= 0):
            raise ValueError(f"stream {s.name!r} has non-monotone timestamps")
        if len(s.timestamps) != len(s.values):
            raise ValueError(f"stream {s.name!r} has mismatched lengths")

    slowest = max(streams, key=lambda s: s.spacing())
    lo = max(float(s.timestamps[0]) for s in streams)
    hi = min(float(s.timestamps[-1]) for s in streams)
    if lo > hi:
        raise ValueError("streams have no overlapping time span")
    grid_mask = (slowest.timestamps >= lo) & (slowest.timestamps <= hi)
    grid = np.asarray(slowest.timestamps[grid_mask], dtype=float)

    columns: dict[str, np.ndarray] = {}
    for s in streams:
        columns[s.name] = np.interp(grid, np.asarray(s.timestamps, dtype=float), s.values)

    missing = [name for name in SENSOR_NAMES if name not in columns]
    if missing:
        raise ValueError(f"alignment requires the physical sensor streams; missing {missing}")

    n = grid.shape[0]
    from .datagen import _efficiency_from_sensors, _performance_from_efficiency

    sensors = np.column_stack([columns[name] for name in SENSOR_NAMES])
    efficiency = columns.get("efficiency_index", _efficiency_from_sensors(sensors))
    hours = columns.get(
        "operational_hours", np.cumsum(np.full(n, SAMPLE_INTERVAL_S / 3600.0))
    )
    performance = columns.get("performance_score", _performance_from_efficiency(efficiency))
    return Dataset(
        timestamp=grid.astype(np.int64),
        temperature=columns["temperature"],
        vibration=columns["vibration"],
        pressure=columns["pressure"],
        operational_hours=hours,
        efficiency_index=efficiency,
        system_state=np.full(n, SystemState.NORMAL.value, dtype="<U16"),
        performance_score=performance,
        key_event=np.zeros(n, dtype=np.int64),
        event_type=np.full(n, EventType.NONE.value, dtype="<U24"),
    )


def feature_matrix(d: Dataset) -> np.ndarray:
    """Dataset rows as the fixed feature layout (numerics then one-hot state)."""
    onehot = np.zeros((len(d), len(STATE_ONEHOT_COLUMNS)))
    for j, state in enumerate(SystemState):
        onehot[:, j] = d.system_state == state.value
    numerics = np.column_stack([getattr(d, name) for name in Dataset.NUMERIC_COLUMNS])
    return np.concatenate([numerics, onehot], axis=1)


def window(d: Dataset, time_steps: int, stride: int) -> WindowBatch:
    """Sliding windows over the feature matrix; a window is positive when any
    of its rows carries a key event."""
    if time_steps < 1 or stride < 1:
        raise ValueError("time_steps and stride must be >= 1")
    n = len(d)
    if n < time_steps:
        raise ValueError(f"dataset of {n} rows is shorter than time_steps={time_steps}")
    feats = feature_matrix(d)
    count = (n - time_steps) // stride + 1
    starts = np.arange(count) * stride
    windows = np.stack([feats[s : s + time_steps] for s in starts])
    labels = np.array(
        [int(d.key_event[s : s + time_steps].any()) for s in starts], dtype=np.int64
    )
    return WindowBatch(windows=windows, labels=labels)


def flag_outliers(
    d: Dataset, z_limit: float, window: int = DEFAULT_ROLLING_WINDOW
) -> dict[str, SensorHealth]:
    """Per-sensor outlier fractions under robust rolling statistics.

    Status escalates to suspect above 5% outliers and failed above 20%.
    """
    if z_limit <= 0:
        raise ValueError("z_limit must be positive")
    health: dict[str, SensorHealth] = {}
    for name in SENSOR_NAMES:
        col = getattr(d, name)
        if len(col) == 0:
            health[name] = SensorHealth(name, SensorStatus.OK, 0.0, 1.0)
            continue
        z = rolling_robust_zscore(np.asarray(col, dtype=float), window)
        fraction = float(np.mean(np.abs(z) > z_limit))
        if fraction > 0.2:
            status = SensorStatus.FAILED
        elif fraction > 0.05:
            status = SensorStatus.SUSPECT
        else:
            status = SensorStatus.OK
        health[name] = SensorHealth(name, status, fraction, 1.0 - fraction)
    return health
