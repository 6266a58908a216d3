"""Dataset schema, CSV ingestion, channel-role bookkeeping, bias application,
temporal windowing, and calibration-window slicing.

A dataset is a uniform-rate time series: a T x d input matrix plus the
measured NOx vector. Channel roles (control vs. measured) come from the
schema; only measured channels carry sensor biases. All containers are
immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    DimensionMismatch,
    EmptyDataset,
    MissingColumn,
    NonFiniteValue,
    NonIntegerWindow,
    NonMonotoneTime,
    WindowExceedsCycle,
    WindowTooLong,
)

CONTROL = "control"
MEASURED = "measured"

TIME_COLUMN = "time_s"
NOX_COLUMN = "nox"

# Relative tolerance for the uniform-step check on the time grid.
_STEP_RTOL = 1e-9


@dataclass(frozen=True)
class ChannelSpec:
    name: str
    role: str
    units: str = ""

    def __post_init__(self):
        if self.role not in (CONTROL, MEASURED):
            raise ValueError(
                f"channel {self.name!r}: role must be {CONTROL!r} or {MEASURED!r}, got {self.role!r}"
            )


@dataclass(frozen=True)
class ChannelSchema:
    """Ordered channel list plus the sampling rate of the time grid."""

    channels: tuple
    sample_rate_hz: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        if not self.channels:
            raise ValueError("schema needs at least one channel")
        names = [c.name for c in self.channels]
        if len(set(names)) != len(names):
            raise ValueError("channel names must be unique within a schema")
        if not self.sample_rate_hz > 0:
            raise ValueError("sample rate must be positive")

    @property
    def d(self) -> int:
        return len(self.channels)

    @property
    def names(self) -> list:
        return [c.name for c in self.channels]

    @property
    def measured_names(self) -> list:
        return [c.name for c in self.channels if c.role == MEASURED]

    def measured_mask(self) -> np.ndarray:
        return np.array([c.role == MEASURED for c in self.channels], dtype=bool)

    def selection(self) -> "SelectionMatrix":
        return SelectionMatrix(self.measured_mask())


@dataclass(frozen=True)
class SelectionMatrix:
    """Boolean mask over channels; True marks a measured (biased) channel.

    The implicit d x d_nc 0/1 matrix S embeds a per-measured-channel bias
    vector into the full input vector, leaving control channels untouched.
    """

    mask: np.ndarray

    def __post_init__(self):
        mask = np.array(self.mask, dtype=bool)
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    @property
    def d(self) -> int:
        return int(self.mask.size)

    @property
    def d_nc(self) -> int:
        return int(np.count_nonzero(self.mask))

    @property
    def measured_indices(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    def dense(self) -> np.ndarray:
        """Explicit d x d_nc selection matrix (mostly for tests and docs)."""
        s = np.zeros((self.d, self.d_nc))
        s[self.measured_indices, np.arange(self.d_nc)] = 1.0
        return s


def apply_bias(x, sel: SelectionMatrix, bias) -> np.ndarray:
    """Subtract per-measured-channel biases from an input vector or matrix.

    Returns ``x - S b``: measured channel k loses ``bias[k]``; control
    channels pass through unchanged.
    """
    x = np.asarray(x, dtype=float)
    bias = np.asarray(bias, dtype=float).ravel()
    if x.shape[-1] != sel.d:
        raise DimensionMismatch(f"input width {x.shape[-1]} != channel count {sel.d}")
    if bias.size != sel.d_nc:
        raise DimensionMismatch(f"bias length {bias.size} != measured channel count {sel.d_nc}")
    out = np.array(x, copy=True)
    if sel.d_nc:
        out[..., sel.measured_indices] -= bias
    return out


@dataclass(frozen=True)
class EngineDataset:
    """One engine/cycle recording: time grid, input matrix, NOx vector."""

    time: np.ndarray
    inputs: np.ndarray
    nox: np.ndarray
    engine_id: str = ""
    cycle_id: str = ""

    def __post_init__(self):
        time = np.asarray(self.time, dtype=float).ravel()
        inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        nox = np.asarray(self.nox, dtype=float).ravel()
        if time.size == 0:
            raise EmptyDataset("dataset has no samples")
        if inputs.shape[0] != time.size or nox.size != time.size:
            raise DimensionMismatch(
                f"time/inputs/nox lengths disagree: {time.size}/{inputs.shape[0]}/{nox.size}"
            )
        for name, arr in (("time_s", time), (NOX_COLUMN, nox)):
            bad = np.flatnonzero(~np.isfinite(arr))
            if bad.size:
                raise NonFiniteValue(row=int(bad[0]), column=name)
        bad_rows, bad_cols = np.nonzero(~np.isfinite(inputs))
        if bad_rows.size:
            raise NonFiniteValue(row=int(bad_rows[0]), column=int(bad_cols[0]))
        steps = np.diff(time)
        if np.any(steps <= 0):
            raise NonMonotoneTime(int(np.flatnonzero(steps <= 0)[0]) + 1)
        if time.size > 2:
            dt = (time[-1] - time[0]) / (time.size - 1)
            if np.max(np.abs(steps - dt)) > _STEP_RTOL * abs(dt):
                raise NonMonotoneTime(int(np.argmax(np.abs(steps - dt))) + 1)
        for arr in (time, inputs, nox):
            arr.setflags(write=False)
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "nox", nox)

    @property
    def n_samples(self) -> int:
        return int(self.time.size)

    @property
    def d(self) -> int:
        return int(self.inputs.shape[1])

    @property
    def dt(self) -> float:
        if self.time.size < 2:
            return 1.0
        return float((self.time[-1] - self.time[0]) / (self.time.size - 1))

    @property
    def duration_s(self) -> float:
        return float(self.time[-1] - self.time[0])


@dataclass(frozen=True)
class WindowedInputs:
    """Lag-stacked inputs: row k is ``x_k || x_{k+1} || ... || x_{k+W-1}``,
    with the target aligned to the window end (causal prediction)."""

    rows: np.ndarray
    targets: np.ndarray
    window: int

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        targets = np.asarray(self.targets, dtype=float).ravel()
        if rows.shape[0] != targets.size:
            raise DimensionMismatch(
                f"rows/targets lengths disagree: {rows.shape[0]}/{targets.size}"
            )
        if self.window < 1:
            raise ValueError("window must span at least one sample")
        rows.setflags(write=False)
        targets.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "targets", targets)


def window_rows(inputs, window: int) -> np.ndarray:
    """Stack ``window`` consecutive samples per row, channel order preserved."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    n, d = inputs.shape
    if window < 1:
        raise ValueError("window must span at least one sample")
    if window > n:
        raise WindowTooLong(f"window of {window} samples exceeds {n} available")
    view = sliding_window_view(inputs, window, axis=0)  # (n-W+1, d, W)
    return np.ascontiguousarray(view.transpose(0, 2, 1).reshape(n - window + 1, window * d))


def window_inputs(ds: EngineDataset, window_s: float) -> WindowedInputs:
    """Window a dataset with a span given in seconds at its native rate."""
    rate = 1.0 / ds.dt
    w_float = window_s * rate
    window = int(round(w_float))
    if window < 1 or abs(w_float - window) > 1e-9 * max(1.0, abs(w_float)):
        raise NonIntegerWindow(
            f"window of {window_s} s is not a positive whole number of samples at {rate:g} Hz"
        )
    rows = window_rows(ds.inputs, window)
    return WindowedInputs(rows, ds.nox[window - 1 :], window)


def _subset(ds: EngineDataset, mask: np.ndarray) -> EngineDataset:
    return EngineDataset(
        ds.time[mask], ds.inputs[mask], ds.nox[mask], ds.engine_id, ds.cycle_id
    )


def slice_calibration_window(
    ds: EngineDataset, warmup_s: float, length_s: float
) -> tuple[EngineDataset, EngineDataset]:
    """Split a cycle into (calibration, holdout), discarding the warmup.

    Relative to the cycle start, warmup covers [0, warmup_s], calibration
    covers (warmup_s, warmup_s + length_s], and the holdout is everything
    after. Warmup samples appear in neither returned dataset.
    """
    if warmup_s < 0 or length_s <= 0:
        raise ValueError("warmup must be >= 0 and calibration length > 0")
    rel = ds.time - ds.time[0]
    cal_mask = (rel > warmup_s) & (rel <= warmup_s + length_s)
    hold_mask = rel > warmup_s + length_s
    if not cal_mask.any() or not hold_mask.any():
        raise WindowExceedsCycle(
            f"warmup {warmup_s} s + calibration {length_s} s leave no usable split "
            f"of a {ds.duration_s} s cycle"
        )
    return _subset(ds, cal_mask), _subset(ds, hold_mask)


def load_dataset(
    path, schema: ChannelSchema, engine_id: str = "", cycle_id: str = ""
) -> EngineDataset:
    """Read a dataset CSV: ``time_s``, one column per schema channel, ``nox``.

    Columns are located by header name; extra columns are ignored.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyDataset(f"{path} is empty") from None
        header = [h.strip() for h in header]
        indices = {}
        for name in [TIME_COLUMN, *schema.names, NOX_COLUMN]:
            if name not in header:
                raise MissingColumn(name)
            indices[name] = header.index(name)

        time, rows, nox = [], [], []
        for i, record in enumerate(reader):
            def cell(name):
                try:
                    value = float(record[indices[name]])
                except (ValueError, IndexError):
                    raise NonFiniteValue(row=i, column=name) from None
                if not np.isfinite(value):
                    raise NonFiniteValue(row=i, column=name)
                return value

            time.append(cell(TIME_COLUMN))
            rows.append([cell(name) for name in schema.names])
            nox.append(cell(NOX_COLUMN))

    if not time:
        raise EmptyDataset(f"{path} has a header but no data rows")
    return EngineDataset(np.array(time), np.array(rows), np.array(nox), engine_id, cycle_id)


def save_dataset(ds: EngineDataset, schema: ChannelSchema, path) -> None:
    """Write the CSV counterpart of :func:`load_dataset` (schema column order)."""
    if ds.d != schema.d:
        raise DimensionMismatch(f"dataset has {ds.d} channels, schema {schema.d}")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([TIME_COLUMN, *schema.names, NOX_COLUMN])
        for t, row, y in zip(ds.time, ds.inputs, ds.nox):
            writer.writerow([repr(float(t)), *(repr(float(v)) for v in row), repr(float(y))])
