"""Sensor trace containers, the trace CSV format, and preprocessing steps."""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "TimeSeries",
    "TrialSet",
    "TraceFormatError",
    "parse_trace",
    "serialize_trace",
    "read_trace",
    "write_trace",
    "estimate_baseline",
    "subtract_baseline",
    "normalize_peak",
    "average_trials",
    "window",
    "resample",
    "DEFAULT_WINDOW",
]

log = logging.getLogger(__name__)

RAW = "raw-analog"
NORMALIZED = "normalized"
DEFAULT_WINDOW = (0.0, 11.0)
SIGNIFICANT_DIGITS = 9


class TraceFormatError(ValueError):
    """Malformed trace CSV input."""


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Ordered ``(t, value)`` samples plus trace metadata.

    Timestamps must be strictly increasing and all values finite. ``extra``
    carries any additional ``key=value`` metadata read from a CSV header.
    """

    t: np.ndarray
    values: np.ndarray
    trial_id: str | None = None
    distance_cm: float | None = None
    units: str = RAW
    n_trials: int = 1
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.array(self.t, dtype=float, copy=True).reshape(-1)
        v = np.array(self.values, dtype=float, copy=True).reshape(-1)
        if t.shape != v.shape:
            raise ValueError(f"t and values differ in length: {t.size} vs {v.size}")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise ValueError("trace contains non-finite samples")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            i = int(np.argmax(np.diff(t) <= 0))
            raise ValueError(
                f"timestamps must be strictly increasing (t[{i}]={t[i]!r}, t[{i + 1}]={t[i + 1]!r})"
            )
        t.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.t.size

    def __eq__(self, other):
        if not isinstance(other, TimeSeries):
            return NotImplemented
        return (
            np.array_equal(self.t, other.t)
            and np.array_equal(self.values, other.values)
            and self.metadata() == other.metadata()
        )

    @property
    def span(self):
        return float(self.t[0]), float(self.t[-1])

    def metadata(self):
        meta = {}
        if self.trial_id is not None:
            meta["trial_id"] = self.trial_id
        if self.distance_cm is not None:
            meta["distance_cm"] = self.distance_cm
        meta["units"] = self.units
        if self.n_trials != 1:
            meta["n_trials"] = self.n_trials
        meta.update(self.extra)
        return meta

    def with_values(self, values, **changes):
        return replace(self, values=values, **changes)


@dataclass(frozen=True)
class TrialSet:
    traces: tuple

    def __post_init__(self):
        traces = tuple(self.traces)
        if not traces:
            raise ValueError("a trial set needs at least one trace")
        distances = {tr.distance_cm for tr in traces}
        if len(distances) > 1:
            raise ValueError(f"traces disagree on distance: {sorted(distances, key=str)}")
        object.__setattr__(self, "traces", traces)

    def __len__(self):
        return len(self.traces)

    def __iter__(self):
        return iter(self.traces)


def _fmt(x):
    s = f"{x:.{SIGNIFICANT_DIGITS}g}"
    return "0" if s == "-0" else s


def _parse_meta_value(key, raw):
    if key == "distance_cm":
        return float(raw)
    if key == "n_trials":
        return int(raw)
    return raw


def parse_trace(stream) -> TimeSeries:
    """Parse the trace CSV format from a string or text stream.

    Comment lines start with ``#`` and may hold ``key=value`` metadata
    (``trial_id``, ``distance_cm``, ``units`` and anything else). Data rows
    are ``t_seconds,value``.
    """
    text = stream if isinstance(stream, str) else stream.read()
    meta = {}
    ts, vs = [], []
    for lineno, line in enumerate(io.StringIO(text), start=1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, _, raw = body.partition("=")
                key = key.strip()
                try:
                    meta[key] = _parse_meta_value(key, raw.strip())
                except ValueError as exc:
                    raise TraceFormatError(f"line {lineno}: bad value for {key!r}: {raw!r}") from exc
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise TraceFormatError(f"line {lineno}: expected 2 fields, got {len(parts)}: {line!r}")
        try:
            t, v = float(parts[0]), float(parts[1])
        except ValueError as exc:
            raise TraceFormatError(f"line {lineno}: non-numeric field in {line!r}") from exc
        if not (math.isfinite(t) and math.isfinite(v)):
            raise TraceFormatError(f"line {lineno}: non-finite field in {line!r}")
        if ts and t <= ts[-1]:
            raise TraceFormatError(
                f"line {lineno}: timestamps must be strictly increasing ({t!r} after {ts[-1]!r})"
            )
        ts.append(t)
        vs.append(v)
    if not ts:
        raise TraceFormatError("trace contains no samples")
    return TimeSeries(
        np.array(ts),
        np.array(vs),
        trial_id=meta.pop("trial_id", None),
        distance_cm=meta.pop("distance_cm", None),
        units=meta.pop("units", RAW),
        n_trials=meta.pop("n_trials", 1),
        extra=meta,
    )


def serialize_trace(ts: TimeSeries) -> str:
    lines = [f"# {k}={_fmt(v) if isinstance(v, float) else v}" for k, v in ts.metadata().items()]
    lines.extend(f"{_fmt(t)},{_fmt(v)}" for t, v in zip(ts.t, ts.values))
    return "\n".join(lines) + "\n"


def read_trace(path) -> TimeSeries:
    with open(path, encoding="utf-8") as fh:
        return parse_trace(fh)


def write_trace(ts: TimeSeries, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize_trace(ts))


def estimate_baseline(ts: TimeSeries, n_samples=5):
    """Mean of the first ``n_samples`` values, taken as the resting reading."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if len(ts) < n_samples:
        raise ValueError(f"trace has {len(ts)} samples, fewer than the {n_samples} requested")
    return float(np.mean(ts.values[:n_samples]))


def subtract_baseline(ts: TimeSeries, baseline) -> TimeSeries:
    log.info("subtracting baseline %.6g from trace %s", baseline, ts.trial_id)
    return ts.with_values(ts.values - baseline)


def normalize_peak(ts: TimeSeries) -> TimeSeries:
    """Divide by the trace maximum so the peak is exactly 1."""
    vmax = float(np.max(ts.values))
    if not vmax > 0:
        raise ValueError(f"cannot peak-normalize a trace whose maximum is {vmax}")
    out = ts.values / vmax
    # x / x is exactly 1 in IEEE arithmetic, so the argmax stays put
    return ts.with_values(out, units=NORMALIZED)


def average_trials(trials) -> TimeSeries:
    """Pointwise mean of traces sampled on one shared grid."""
    if not isinstance(trials, TrialSet):
        trials = TrialSet(tuple(trials))
    first = trials.traces[0]
    for tr in trials.traces[1:]:
        if not np.array_equal(tr.t, first.t):
            raise ValueError(
                f"trace {tr.trial_id!r} is on a different time grid than {first.trial_id!r}; "
                "resample first"
            )
    stacked = np.stack([tr.values for tr in trials.traces])
    units = {tr.units for tr in trials.traces}
    return TimeSeries(
        first.t,
        stacked.mean(axis=0),
        trial_id="average",
        distance_cm=first.distance_cm,
        units=units.pop() if len(units) == 1 else RAW,
        n_trials=sum(tr.n_trials for tr in trials.traces),
    )


def window(ts: TimeSeries, t_start=DEFAULT_WINDOW[0], t_end=DEFAULT_WINDOW[1]) -> TimeSeries:
    """Keep samples with ``t_start < t <= t_end``."""
    if not t_start < t_end:
        raise ValueError(f"window start {t_start} must be below end {t_end}")
    mask = (ts.t > t_start) & (ts.t <= t_end)
    if not mask.any():
        raise ValueError(f"window ({t_start}, {t_end}] holds no samples of span {ts.span}")
    return replace(ts, t=ts.t[mask], values=ts.values[mask])


def resample(ts: TimeSeries, grid) -> TimeSeries:
    """Linear interpolation onto ``grid``; no extrapolation."""
    grid = np.asarray(grid, dtype=float).reshape(-1)
    if grid.size == 0:
        raise ValueError("resampling grid is empty")
    lo, hi = ts.span
    if grid.min() < lo or grid.max() > hi:
        raise ValueError(
            f"grid [{grid.min()}, {grid.max()}] leaves the trace span [{lo}, {hi}]"
        )
    return replace(ts, t=grid, values=np.interp(grid, ts.t, ts.values))
