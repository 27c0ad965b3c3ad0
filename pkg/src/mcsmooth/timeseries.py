"""Observation and intervention series, CSV ingestion, and subsamplers.

Times are decimal minutes throughout. CSV files are headerless UTF-8 with
comma-separated columns: observations are ``time_min,value`` rows, kicks are
``time_min,intensity`` rows.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

__all__ = [
    "ObservationSeries",
    "KickSeries",
    "MeasurementSpec",
    "load_observations",
    "load_kicks",
    "subsample",
    "write_observations",
]


@dataclass(frozen=True)
class ObservationSeries:
    """Ordered (time, value) samples of a scalar signal.

    Times must be strictly increasing and all values finite. A single-sample
    series is a legal container (e.g. the output of a one-time subsampling);
    estimation entry points enforce their own larger minimum counts.
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        if times.ndim != 1 or values.ndim != 1 or times.shape != values.shape:
            raise ValueError("ObservationSeries: times and values must be equal-length 1-d arrays")
        if times.size == 0:
            raise ValueError("ObservationSeries: empty series")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(values))):
            raise ValueError("ObservationSeries: non-finite entry")
        if times.size > 1 and not np.all(np.diff(times) > 0):
            raise ValueError("ObservationSeries: times must be strictly increasing")

    @property
    def n(self) -> int:
        return self.times.size

    def gaps(self) -> np.ndarray:
        """Per-index gap t^j - t^{j-1}, with a zero leading entry for j = 0."""
        out = np.zeros(self.n)
        out[1:] = np.diff(self.times)
        return out

    @property
    def span(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])


@dataclass(frozen=True)
class KickSeries:
    """External interventions: times, intensities, and the decoupling scale.

    ``alpha_kick`` converts intensity into added effective time (minutes per
    intensity unit). It equals T_s / typical_intensity once the short time
    scale T_s is known; use :meth:`with_time_scale` to finalize it.
    """

    times: np.ndarray
    intensities: np.ndarray
    typical_intensity: float = 0.0
    alpha_kick: float = 0.0

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        intensities = np.asarray(self.intensities, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "intensities", intensities)
        if times.shape != intensities.shape or times.ndim != 1:
            raise ValueError("KickSeries: times and intensities must be equal-length 1-d arrays")
        if times.size > 1 and not np.all(np.diff(times) > 0):
            raise ValueError("KickSeries: times must be strictly increasing")
        if np.any(intensities < 0):
            raise ValueError("KickSeries: negative intensity")
        if times.size > 0 and self.typical_intensity <= 0:
            raise ValueError("KickSeries: typical_intensity must be positive for a nonempty series")

    @classmethod
    def empty(cls) -> "KickSeries":
        return cls(np.empty(0), np.empty(0))

    @property
    def n(self) -> int:
        return self.times.size

    def with_time_scale(self, T_s: float) -> "KickSeries":
        """Return a copy with alpha_kick = T_s / typical_intensity."""
        if self.n == 0:
            return self
        if T_s <= 0:
            raise ValueError("KickSeries: T_s must be positive")
        return replace(self, alpha_kick=T_s / self.typical_intensity)

    def _cumulative(self) -> np.ndarray:
        return np.concatenate(([0.0], np.cumsum(self.intensities)))

    def gap_intensity(self, times: np.ndarray) -> np.ndarray:
        """Summed kick intensity inside every inter-observation gap.

        Gap j covers [t^{j-1}, t^j): a kick exactly at a measurement time
        decouples the following transition, not the preceding one. Index 0 of
        the result (no predecessor) is zero.
        """
        times = np.asarray(times, dtype=float)
        out = np.zeros(times.size)
        if self.n == 0:
            return out
        cum = self._cumulative()
        before = cum[np.searchsorted(self.times, times, side="left")]
        out[1:] = before[1:] - before[:-1]
        return out

    def intensity_between(self, lo: float, hi: float) -> float:
        """Summed intensity of kicks with lo <= k < hi (gap convention)."""
        if self.n == 0:
            return 0.0
        cum = self._cumulative()
        return float(
            cum[np.searchsorted(self.times, hi, side="left")]
            - cum[np.searchsorted(self.times, lo, side="left")]
        )

    def pairwise_intensity(self, times: np.ndarray) -> np.ndarray:
        """Summed intensity of kicks strictly between every pair of times."""
        times = np.asarray(times, dtype=float)
        m = times.size
        if self.n == 0:
            return np.zeros((m, m))
        cum = self._cumulative()
        before_strict = cum[np.searchsorted(self.times, times, side="left")]
        before_incl = cum[np.searchsorted(self.times, times, side="right")]
        upper = before_strict[None, :] - before_incl[:, None]
        out = np.triu(upper, k=1)
        return out + out.T


@dataclass(frozen=True)
class MeasurementSpec:
    """How observation times are selected from a dense series.

    kind "h1" reads values at explicitly requested times (clinician-style),
    "h2" draws consecutive gaps i.i.d. uniform over ``gap_bounds``, and "h3"
    samples periodically every ``period`` minutes.
    """

    kind: str
    explicit_times: tuple[float, ...] | None = None
    gap_bounds: tuple[float, float] = (60.0, 90.0)
    period: float = 5.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in ("h1", "h2", "h3"):
            raise ValueError(f"MeasurementSpec: unknown kind {self.kind!r}")
        if self.kind == "h1" and not self.explicit_times:
            raise ValueError("MeasurementSpec: h1 requires explicit_times")
        lo, hi = self.gap_bounds
        if not lo < hi:
            raise ValueError("MeasurementSpec: gap_bounds must satisfy low < high")
        if self.period <= 0:
            raise ValueError("MeasurementSpec: period must be positive")


def _parse_two_column_csv(path: str | Path, op: str) -> tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{op}: file not found: {path}")
    first, second = [], []
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 2:
                raise ValueError(f"{op}: line {lineno}: expected 2 columns, got {len(row)}")
            try:
                first.append(float(row[0]))
                second.append(float(row[1]))
            except ValueError as exc:
                raise ValueError(f"{op}: line {lineno}: parse failure: {row}") from exc
    return np.asarray(first), np.asarray(second)


def load_observations(path: str | Path) -> ObservationSeries:
    """Read a "time_min,value" CSV into an ObservationSeries.

    Raises on parse failure, non-monotone times, or fewer than two rows.
    """
    times, values = _parse_two_column_csv(path, "load_observations")
    if times.size < 2:
        raise ValueError(f"load_observations: need at least 2 rows, got {times.size}")
    if not np.all(np.diff(times) > 0):
        raise ValueError("load_observations: times must be strictly increasing")
    return ObservationSeries(times, values)


def load_kicks(path: str | Path, T_s: float) -> KickSeries:
    """Read a "time_min,intensity" CSV into a KickSeries.

    The typical intensity is the arithmetic mean of the intensities and
    alpha_kick = T_s / typical_intensity. An empty file yields an empty
    series (alpha_kick unused).
    """
    if T_s <= 0:
        raise ValueError("load_kicks: T_s must be positive")
    times, intensities = _parse_two_column_csv(path, "load_kicks")
    if times.size == 0:
        return KickSeries.empty()
    if np.any(intensities < 0):
        raise ValueError("load_kicks: negative intensity")
    if not np.all(np.diff(times) > 0):
        raise ValueError("load_kicks: times must be strictly increasing")
    typical = float(intensities.mean())
    if typical <= 0:
        raise ValueError("load_kicks: typical intensity must be positive")
    return KickSeries(times, intensities, typical, T_s / typical)


def write_observations(series: ObservationSeries, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        for t, v in zip(series.times, series.values):
            fh.write(f"{float(t)!r},{float(v)!r}\n")


def _nearest_index(times: np.ndarray, t: float) -> int:
    i = int(np.searchsorted(times, t))
    if i == 0:
        return 0
    if i == times.size:
        return times.size - 1
    return i if times[i] - t < t - times[i - 1] else i - 1


def subsample(dense: ObservationSeries, spec: MeasurementSpec) -> ObservationSeries:
    """Apply a measurement function to a densely sampled series.

    Requested times always snap to the nearest dense sample: measurements
    are reads of the dense truth, never interpolations. For h2 the gaps are
    drawn relative to the previously snapped sample so that the realized
    gaps stay inside ``gap_bounds`` on grids at least as fine as the bounds.
    """
    t0, t1 = dense.span
    if spec.kind == "h1":
        idx = []
        for t in spec.explicit_times:
            if t < t0 or t > t1:
                raise ValueError(f"subsample: explicit time {t} outside dense span [{t0}, {t1}]")
            idx.append(_nearest_index(dense.times, float(t)))
        idx = np.unique(idx)
    elif spec.kind == "h2":
        rng = np.random.default_rng(spec.rng_seed)
        lo, hi = spec.gap_bounds
        idx = [0]
        while True:
            t_next = dense.times[idx[-1]] + rng.uniform(lo, hi)
            if t_next > t1:
                break
            idx.append(_nearest_index(dense.times, float(t_next)))
        idx = np.asarray(idx)
    else:  # h3
        targets = np.arange(t0, t1 + 0.5 * spec.period, spec.period)
        targets = targets[targets <= t1]
        idx = np.unique([_nearest_index(dense.times, float(t)) for t in targets])
    return ObservationSeries(dense.times[idx], dense.values[idx])
