"""Synthetic industrial sensor datasets: generation, statistical validation, splitting.

The simulated plant exposes seven variables sampled every five minutes:
three correlated physical sensors (temperature, vibration, pressure),
cumulative operational hours, a derived efficiency index, a categorical
system state, and a performance score.  Labeled dynamic events are injected
on top of the smoothed base signals at a configurable row rate.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np
from scipy.signal import savgol_filter
from scipy.stats import kstest

EPOCH_START = 1735689600  # 2025-01-01T00:00:00Z
SAMPLE_INTERVAL_S = 300  # five-minute sampling grid

SENSOR_NAMES = ("temperature", "vibration", "pressure")
# Marginal targets for the correlated sensor triple.  A pressure reading of
# 18.0 kPa sits 1.75 sigma below its mean, i.e. plausibly anomalous.
SENSOR_MEANS = {"temperature": 70.0, "vibration": 45.0, "pressure": 25.0}
SENSOR_STDS = {"temperature": 5.0, "vibration": 8.0, "pressure": 4.0}

CSV_HEADER = (
    "timestamp,temperature,vibration,pressure,operational_hours,"
    "efficiency_index,system_state,performance_score,key_event,event_type"
)


class SystemState(str, Enum):
    STARTUP = "startup"
    NORMAL = "normal"
    MAINTENANCE = "maintenance"
    SHUTDOWN = "shutdown"


class EventType(str, Enum):
    NONE = "none"
    OPERATIONAL_THRESHOLD = "operational_threshold"
    MAINTENANCE_EVENT = "maintenance_event"
    STATE_TRANSITION = "state_transition"
    GRADUAL_DRIFT = "gradual_drift"
    INTERACTION_DEVIATION = "interaction_deviation"


INJECTED_EVENT_TYPES = tuple(e for e in EventType if e is not EventType.NONE)

# Relative frequency of injected event episodes and duration ranges (rows).
DEFAULT_EVENT_MIX = {
    EventType.OPERATIONAL_THRESHOLD: 0.35,
    EventType.MAINTENANCE_EVENT: 0.20,
    EventType.STATE_TRANSITION: 0.15,
    EventType.GRADUAL_DRIFT: 0.08,
    EventType.INTERACTION_DEVIATION: 0.22,
}

DEFAULT_CORRELATIONS = np.array(
    [
        [1.00, 0.40, 0.35],
        [0.40, 1.00, 0.45],
        [0.35, 0.45, 1.00],
    ]
)


@dataclass(frozen=True)
class SensorRecord:
    """One timestamped row of the simulated plant."""

    timestamp: int
    temperature: float
    vibration: float
    pressure: float
    operational_hours: float
    efficiency_index: float
    system_state: SystemState
    performance_score: float
    key_event: int
    event_type: EventType


@dataclass
class Dataset:
    """Column-oriented store of sensor records, chronologically ordered."""

    timestamp: np.ndarray
    temperature: np.ndarray
    vibration: np.ndarray
    pressure: np.ndarray
    operational_hours: np.ndarray
    efficiency_index: np.ndarray
    system_state: np.ndarray
    performance_score: np.ndarray
    key_event: np.ndarray
    event_type: np.ndarray

    NUMERIC_COLUMNS = (
        "temperature",
        "vibration",
        "pressure",
        "operational_hours",
        "efficiency_index",
        "performance_score",
    )

    def __len__(self) -> int:
        return int(self.timestamp.shape[0])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, name), getattr(other, name))
            for name in self.column_names()
        )

    @staticmethod
    def column_names() -> tuple[str, ...]:
        return tuple(CSV_HEADER.split(","))

    @classmethod
    def empty(cls) -> "Dataset":
        return cls(
            timestamp=np.zeros(0, dtype=np.int64),
            temperature=np.zeros(0),
            vibration=np.zeros(0),
            pressure=np.zeros(0),
            operational_hours=np.zeros(0),
            efficiency_index=np.zeros(0),
            system_state=np.zeros(0, dtype="<U16"),
            performance_score=np.zeros(0),
            key_event=np.zeros(0, dtype=np.int64),
            event_type=np.zeros(0, dtype="<U24"),
        )

    def row(self, i: int) -> SensorRecord:
        return SensorRecord(
            timestamp=int(self.timestamp[i]),
            temperature=float(self.temperature[i]),
            vibration=float(self.vibration[i]),
            pressure=float(self.pressure[i]),
            operational_hours=float(self.operational_hours[i]),
            efficiency_index=float(self.efficiency_index[i]),
            system_state=SystemState(str(self.system_state[i])),
            performance_score=float(self.performance_score[i]),
            key_event=int(self.key_event[i]),
            event_type=EventType(str(self.event_type[i])),
        )

    def take(self, index: slice | np.ndarray) -> "Dataset":
        return Dataset(**{name: getattr(self, name)[index] for name in self.column_names()})

    @classmethod
    def concat(cls, parts: Sequence["Dataset"]) -> "Dataset":
        return cls(
            **{
                name: np.concatenate([getattr(p, name) for p in parts])
                for name in cls.column_names()
            }
        )

    def sensor_matrix(self) -> np.ndarray:
        """The three physical sensor columns as an (n, 3) matrix."""
        return np.column_stack([self.temperature, self.vibration, self.pressure])

    def to_csv(self, target: str | Path | IO[str]) -> None:
        if isinstance(target, (str, Path)):
            with open(target, "w", encoding="utf-8", newline="") as fh:
                self._write_csv(fh)
        else:
            self._write_csv(target)

    def _write_csv(self, fh: IO[str]) -> None:
        fh.write(CSV_HEADER + "\n")
        for i in range(len(self)):
            fh.write(
                ",".join(
                    (
                        str(int(self.timestamp[i])),
                        repr(float(self.temperature[i])),
                        repr(float(self.vibration[i])),
                        repr(float(self.pressure[i])),
                        repr(float(self.operational_hours[i])),
                        repr(float(self.efficiency_index[i])),
                        str(self.system_state[i]),
                        repr(float(self.performance_score[i])),
                        str(int(self.key_event[i])),
                        str(self.event_type[i]),
                    )
                )
                + "\n"
            )

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        self._write_csv(buf)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, source: str | Path | IO[str]) -> "Dataset":
        if isinstance(source, (str, Path)):
            with open(source, "r", encoding="utf-8", newline="") as fh:
                return cls._read_csv(fh)
        return cls._read_csv(source)

    @classmethod
    def _read_csv(cls, fh: IO[str]) -> "Dataset":
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != cls.column_names():
            raise ValueError(f"unexpected CSV header: {header}")
        rows = list(reader)
        if not rows:
            return cls.empty()
        cols = list(zip(*rows))
        return cls(
            timestamp=np.array([int(v) for v in cols[0]], dtype=np.int64),
            temperature=np.array([float(v) for v in cols[1]]),
            vibration=np.array([float(v) for v in cols[2]]),
            pressure=np.array([float(v) for v in cols[3]]),
            operational_hours=np.array([float(v) for v in cols[4]]),
            efficiency_index=np.array([float(v) for v in cols[5]]),
            system_state=np.array(cols[6], dtype="<U16"),
            performance_score=np.array([float(v) for v in cols[7]]),
            key_event=np.array([int(v) for v in cols[8]], dtype=np.int64),
            event_type=np.array(cols[9], dtype="<U24"),
        )


@dataclass
class GenConfig:
    """Generation recipe: sample count, event rate, seed, sensor correlations."""

    n_samples: int = 5000
    event_rate: float = 0.05
    seed: int = 42
    correlation_matrix: np.ndarray = field(default_factory=lambda: DEFAULT_CORRELATIONS.copy())
    smoothing_window: int = 11
    smoothing_order: int = 3
    event_mix: dict[EventType, float] = field(default_factory=lambda: dict(DEFAULT_EVENT_MIX))
    # Injected signature magnitudes, in units of each sensor's base sigma.
    spike_sigma: float = 3.0
    maintenance_drop_sigma: float = 2.5
    transition_shift_sigma: float = 2.5
    drift_sigma_per_50: float = 1.0
    drift_onset_sigma: float = 1.0
    interaction_sigma: float = 2.2

    def validate(self) -> None:
        if self.n_samples < 0:
            raise ValueError("n_samples must be >= 0")
        if not 0.0 <= self.event_rate <= 1.0:
            raise ValueError("event_rate must lie in [0, 1]")
        m = np.asarray(self.correlation_matrix, dtype=float)
        if m.shape != (3, 3):
            raise ValueError("correlation_matrix must be 3x3")
        if not np.allclose(m, m.T, atol=1e-12):
            raise ValueError("correlation_matrix must be symmetric")
        if not np.allclose(np.diag(m), 1.0, atol=1e-12):
            raise ValueError("correlation_matrix must have unit diagonal")
        off = m[~np.eye(3, dtype=bool)]
        if np.any(off < 0.3 - 1e-12) or np.any(off > 0.5 + 1e-12):
            raise ValueError("off-diagonal target correlations must lie in [0.3, 0.5]")
        try:
            np.linalg.cholesky(m)
        except np.linalg.LinAlgError as exc:
            raise ValueError("correlation_matrix is not positive semi-definite") from exc
        if self.smoothing_window % 2 != 1:
            raise ValueError("smoothing_window must be odd")
        if self.smoothing_order >= self.smoothing_window:
            raise ValueError("smoothing_order must be < smoothing_window")
        if self.n_samples > 0 and self.smoothing_window >= self.n_samples:
            raise ValueError("smoothing window must be smaller than n_samples")
        mix_total = sum(self.event_mix.get(e, 0.0) for e in INJECTED_EVENT_TYPES)
        if self.event_rate > 0 and mix_total <= 0:
            raise ValueError("event_mix must assign positive weight to some event type")


@dataclass
class ValidationReport:
    ks_statistics: dict[str, float]
    ks_pvalues: dict[str, float]
    correlation_matrix: np.ndarray
    empirical_event_rate: float
    event_type_counts: dict[str, int]

    def to_dict(self) -> dict:
        return {
            "ks_statistics": dict(self.ks_statistics),
            "ks_pvalues": dict(self.ks_pvalues),
            "correlation_matrix": np.asarray(self.correlation_matrix).tolist(),
            "empirical_event_rate": self.empirical_event_rate,
            "event_type_counts": dict(self.event_type_counts),
        }


@dataclass(frozen=True)
class _Episode:
    etype: EventType
    start: int
    duration: int


def _draw_duration(rng: np.random.Generator, etype: EventType) -> int:
    if etype is EventType.OPERATIONAL_THRESHOLD:
        return int(rng.integers(1, 4))
    if etype is EventType.MAINTENANCE_EVENT:
        return 10
    if etype is EventType.STATE_TRANSITION:
        return int(rng.integers(5, 11))
    if etype is EventType.GRADUAL_DRIFT:
        return int(rng.integers(25, 46))
    return int(rng.integers(4, 11))


def _plan_episodes(
    rng: np.random.Generator, n: int, target_rows: int, mix: dict[EventType, float]
) -> list[_Episode]:
    """Place non-overlapping event episodes totalling exactly target_rows rows.

    Placement is stratified over five equal segments so chronological splits
    all see a representative share of events rather than depending on
    placement luck.
    """
    if target_rows <= 0 or n <= 0:
        return []
    types = list(INJECTED_EVENT_TYPES)
    weights = np.array([mix.get(t, 0.0) for t in types], dtype=float)
    weights = weights / weights.sum()
    # Expected row share per type: episode frequency times mean duration.
    mean_dur = np.array([_mean_duration(t) for t in types])
    row_share = weights * mean_dur
    row_share = row_share / row_share.sum()
    occupied = np.zeros(n, dtype=bool)
    gap = 2
    episodes: list[_Episode] = []

    n_strata = 5 if n >= 500 else 1
    bounds = [(n * k) // n_strata for k in range(n_strata + 1)]
    stratum_quotas = _largest_remainder(target_rows, [1.0 / n_strata] * n_strata)
    for stratum in range(n_strata):
        lo_bound, hi_bound = bounds[stratum], bounds[stratum + 1]
        type_quotas = _largest_remainder(stratum_quotas[stratum], row_share.tolist())
        for etype, quota in zip(types, type_quotas):
            placed = 0
            attempts = 0
            max_attempts = 1000 + 60 * max(quota, 1)
            while placed < quota and attempts < max_attempts:
                attempts += 1
                duration = min(
                    _draw_duration(rng, etype), quota - placed, hi_bound - lo_bound
                )
                if duration <= 0:
                    break
                start = int(rng.integers(lo_bound, hi_bound - duration + 1))
                lo = max(0, start - gap)
                hi = min(n, start + duration + gap)
                if occupied[lo:hi].any():
                    continue
                occupied[start : start + duration] = True
                episodes.append(_Episode(etype, start, duration))
                placed += duration
    episodes.sort(key=lambda e: e.start)
    return episodes


def _mean_duration(etype: EventType) -> float:
    if etype is EventType.OPERATIONAL_THRESHOLD:
        return 2.0
    if etype is EventType.MAINTENANCE_EVENT:
        return 10.0
    if etype is EventType.STATE_TRANSITION:
        return 7.5
    if etype is EventType.GRADUAL_DRIFT:
        return 35.0
    return 7.0


def _state_trajectory(rng: np.random.Generator, n: int) -> np.ndarray:
    """Markov chain over operating modes, dwelling mostly in `normal`."""
    states = np.empty(n, dtype="<U16")
    if n == 0:
        return states
    startup_len = min(n, int(rng.integers(3, 9)))
    states[:startup_len] = SystemState.STARTUP.value
    i = startup_len
    while i < n:
        u = rng.random()
        if u < 0.003:
            dwell = int(rng.integers(8, 16))
            states[i : i + dwell] = SystemState.MAINTENANCE.value
            i += dwell
        elif u < 0.005:
            dwell = int(rng.integers(5, 13))
            states[i : i + dwell] = SystemState.SHUTDOWN.value
            i += dwell
        else:
            states[i] = SystemState.NORMAL.value
            i += 1
    return states[:n]


def _apply_episode(
    rng: np.random.Generator,
    episode: _Episode,
    config: GenConfig,
    sensors: np.ndarray,
    states: np.ndarray,
) -> None:
    """Add the type-specific signature of one episode in place."""
    s, d = episode.start, episode.duration
    sl = slice(s, s + d)
    stds = np.array([SENSOR_STDS[name] for name in SENSOR_NAMES])
    if episode.etype is EventType.OPERATIONAL_THRESHOLD:
        scale = float(rng.uniform(0.9, 1.2))
        sensors[sl, 2] += config.spike_sigma * scale * stds[2]
    elif episode.etype is EventType.MAINTENANCE_EVENT:
        sensors[sl, 1] -= config.maintenance_drop_sigma * stds[1]
        states[sl] = SystemState.MAINTENANCE.value
    elif episode.etype is EventType.STATE_TRANSITION:
        new_state = SystemState.SHUTDOWN if rng.random() < 0.5 else SystemState.STARTUP
        sign = 1.0 if rng.random() < 0.5 else -1.0
        sensors[sl, 2] += sign * config.transition_shift_sigma * stds[2]
        states[sl] = new_state.value
    elif episode.etype is EventType.GRADUAL_DRIFT:
        sensor_idx = int(rng.integers(0, 3))
        # Detectable onset followed by the slow ramp.
        ramp = config.drift_onset_sigma + np.arange(1, d + 1) * (
            config.drift_sigma_per_50 / 50.0
        )
        sensors[sl, sensor_idx] += ramp * stds[sensor_idx]
    else:  # interaction deviation: correlated excursion across all sensors
        sign = 1.0 if rng.random() < 0.5 else -1.0
        mags = rng.uniform(0.8, 1.2, size=3) * config.interaction_sigma
        sensors[sl, :] += sign * mags * stds


def _efficiency_from_sensors(sensors: np.ndarray) -> np.ndarray:
    """1 minus the mean absolute sensor deviation in sigma units, on a 3-sigma scale."""
    means = np.array([SENSOR_MEANS[name] for name in SENSOR_NAMES])
    stds = np.array([SENSOR_STDS[name] for name in SENSOR_NAMES])
    z = (sensors - means) / stds
    return np.clip(1.0 - np.mean(np.abs(z), axis=1) / 3.0, 0.0, 1.0)


def _performance_from_efficiency(eff: np.ndarray) -> np.ndarray:
    # Inverse efficiency, capped at 10 where efficiency collapses.
    return np.where(eff > 0.1, 1.0 / np.maximum(eff, 1e-12), 10.0)


def generate(config: GenConfig) -> Dataset:
    """Generate a seeded synthetic dataset following the configured recipe.

    Base sensor signals are drawn from a correlated multivariate normal,
    smoothed with a Savitzky-Golay filter, then labeled event episodes are
    injected additively with type-specific signatures.  Deterministic for a
    fixed seed.
    """
    config.validate()
    n = config.n_samples
    if n == 0:
        return Dataset.empty()

    rng = np.random.default_rng(config.seed)
    chol = np.linalg.cholesky(np.asarray(config.correlation_matrix, dtype=float))
    base = rng.standard_normal((n, 3)) @ chol.T

    means = np.array([SENSOR_MEANS[name] for name in SENSOR_NAMES])
    stds = np.array([SENSOR_STDS[name] for name in SENSOR_NAMES])
    sensors = means + stds * base
    for j in range(3):
        sensors[:, j] = savgol_filter(
            sensors[:, j], config.smoothing_window, config.smoothing_order
        )

    states = _state_trajectory(rng, n)

    target_rows = int(round(n * config.event_rate))
    episodes = _plan_episodes(rng, n, target_rows, config.event_mix)

    key_event = np.zeros(n, dtype=np.int64)
    event_type = np.full(n, EventType.NONE.value, dtype="<U24")
    for ep in episodes:
        _apply_episode(rng, ep, config, sensors, states)
        key_event[ep.start : ep.start + ep.duration] = 1
        event_type[ep.start : ep.start + ep.duration] = ep.etype.value

    hours_delta = np.where(states == SystemState.SHUTDOWN.value, 0.0, SAMPLE_INTERVAL_S / 3600.0)
    operational_hours = np.cumsum(hours_delta)

    efficiency = _efficiency_from_sensors(sensors)
    performance = _performance_from_efficiency(efficiency)

    return Dataset(
        timestamp=EPOCH_START + SAMPLE_INTERVAL_S * np.arange(n, dtype=np.int64),
        temperature=sensors[:, 0],
        vibration=sensors[:, 1],
        pressure=sensors[:, 2],
        operational_hours=operational_hours,
        efficiency_index=efficiency,
        system_state=states,
        performance_score=performance,
        key_event=key_event,
        event_type=event_type,
    )


def validate(d: Dataset, config: GenConfig) -> ValidationReport:
    """Statistically validate a generated dataset against its recipe.

    Marginal KS tests run against the pre-smoothing normal targets on
    standardized residuals of non-event rows.  Rows are decimated by the
    smoothing window length so the filter-induced autocorrelation does not
    distort the test's calibration.
    """
    if len(d) == 0:
        raise ValueError("cannot validate an empty dataset")
    nominal = d.key_event == 0
    ks_stats: dict[str, float] = {}
    ks_p: dict[str, float] = {}
    for name in SENSOR_NAMES:
        col = getattr(d, name)[nominal]
        std = float(np.std(col))
        if std == 0.0:
            # Degenerate constant column: the KS distance to any continuous
            # target is driven to its maximum.
            ks_stats[name] = 1.0
            ks_p[name] = 0.0
            continue
        standardized = (col - float(np.mean(col))) / std
        thinned = standardized[:: max(1, config.smoothing_window)]
        result = kstest(thinned, "norm")
        ks_stats[name] = float(result.statistic)
        ks_p[name] = float(result.pvalue)

    corr = np.corrcoef(d.sensor_matrix().T) if len(d) > 1 else np.eye(3)
    counts = {
        etype.value: int(np.sum(d.event_type == etype.value)) for etype in INJECTED_EVENT_TYPES
    }
    return ValidationReport(
        ks_statistics=ks_stats,
        ks_pvalues=ks_p,
        correlation_matrix=corr,
        empirical_event_rate=float(np.mean(d.key_event)),
        event_type_counts=counts,
    )


def split(d: Dataset, ratios: tuple[float, float, float]) -> tuple[Dataset, Dataset, Dataset]:
    """Chronological train/validation/test split with largest-remainder rounding."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must sum to 1")
    if any(r < 0 for r in ratios):
        raise ValueError("split ratios must be non-negative")
    n = len(d)
    sizes = _largest_remainder(n, ratios)
    cuts = np.cumsum([0] + sizes)
    return tuple(d.take(slice(int(cuts[i]), int(cuts[i + 1]))) for i in range(3))  # type: ignore[return-value]


def _largest_remainder(n: int, ratios: Sequence[float]) -> list[int]:
    quotas = [r * n for r in ratios]
    sizes = [math.floor(q) for q in quotas]
    shortfall = n - sum(sizes)
    order = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - sizes[i]), i))
    for i in order[:shortfall]:
        sizes[i] += 1
    return sizes
