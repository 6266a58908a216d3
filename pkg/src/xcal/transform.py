"""Rank-based normalization between a physical scale and standard-normal scores.

The forward map sends a value to the normal quantile of its interpolated rank
within the fitted data; the inverse walks back through the stored empirical
quantiles. Because only ranks matter, the map is robust to outliers in a way
linear scalers are not, and both directions are monotone.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import special

from .errors import NonFiniteValue, TooFewValues

# Rank clip keeping the normal quantile finite for values at or beyond the
# fitted range.
RANK_CLIP = 1e-7

# Beyond |z| ~ 8 the normal CDF is within one ulp of its limit; snap so
# extreme scores land exactly on the fitted range endpoints.
_Z_SATURATE = 8.0

DEFAULT_QUANTILES = 1000


@dataclass(frozen=True)
class QuantileTransform:
    """Monotone map between one physical variable and normal scores."""

    probe_points: np.ndarray
    reference_quantiles: np.ndarray

    def __post_init__(self):
        probe = np.asarray(self.probe_points, dtype=float)
        ref = np.asarray(self.reference_quantiles, dtype=float)
        if probe.ndim != 1 or probe.shape != ref.shape or probe.size < 2:
            raise ValueError("probe points and reference quantiles must be equal-length vectors (>= 2)")
        if np.any(np.diff(probe) <= 0) or probe[0] != 0.0 or probe[-1] != 1.0:
            raise ValueError("probe points must increase strictly from 0 to 1")
        if np.any(np.diff(ref) < 0):
            raise ValueError("reference quantiles must be non-decreasing")
        probe.setflags(write=False)
        ref.setflags(write=False)
        object.__setattr__(self, "probe_points", probe)
        object.__setattr__(self, "reference_quantiles", ref)

    @classmethod
    def fit(cls, values, n_quantiles: Optional[int] = None) -> "QuantileTransform":
        """Fit on a sample by storing its empirical quantiles at uniformly
        spaced probability levels (linear interpolation between order stats).
        """
        values = np.asarray(values, dtype=float).ravel()
        if values.size < 2:
            raise TooFewValues(f"need at least 2 values to fit, got {values.size}")
        if not np.all(np.isfinite(values)):
            raise NonFiniteValue(message="cannot fit a quantile transform on non-finite values")
        if n_quantiles is None:
            n_quantiles = min(DEFAULT_QUANTILES, values.size)
        if not 2 <= n_quantiles <= values.size:
            raise ValueError(f"n_quantiles must be in [2, {values.size}], got {n_quantiles}")
        probe = np.linspace(0.0, 1.0, n_quantiles)
        ref = np.quantile(values, probe)
        # guard against float wiggle breaking monotonicity
        ref = np.maximum.accumulate(ref)
        return cls(probe, ref)

    def forward(self, x):
        """Physical value -> normal score. Clips to the fitted range first."""
        x = np.asarray(x, dtype=float)
        ref = self.reference_quantiles
        probe = self.probe_points
        # Mid-rank rule on plateaus: average the two one-sided interpolations
        # (the second pass runs on negated arrays to flip the tie side).
        fwd = np.interp(x, ref, probe)
        rev = -np.interp(-x, -ref[::-1], -probe[::-1])
        rank = 0.5 * (fwd + rev)
        z = special.ndtri(np.clip(rank, RANK_CLIP, 1.0 - RANK_CLIP))
        return z if x.ndim else float(z)

    def inverse(self, z):
        """Normal score -> physical value, monotone wherever the reference
        quantiles strictly increase."""
        z = np.asarray(z, dtype=float)
        prob = special.ndtr(z)
        prob = np.where(z >= _Z_SATURATE, 1.0, prob)
        prob = np.where(z <= -_Z_SATURATE, 0.0, prob)
        x = np.interp(prob, self.probe_points, self.reference_quantiles)
        return x if z.ndim else float(x)

    def to_payload(self) -> dict:
        return {
            "probe_points": self.probe_points.tolist(),
            "reference_quantiles": self.reference_quantiles.tolist(),
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "QuantileTransform":
        return cls(
            np.asarray(payload["probe_points"], dtype=float),
            np.asarray(payload["reference_quantiles"], dtype=float),
        )


@dataclass(frozen=True)
class TransformSet:
    """Per-variable transforms for a dataset: one per input channel plus one
    for the NOx output. ``None`` entries mean identity (no normalization)."""

    inputs: Optional[tuple]  # tuple[QuantileTransform | None, ...] or None
    nox: Optional[QuantileTransform]

    def __post_init__(self):
        if self.inputs is not None:
            object.__setattr__(self, "inputs", tuple(self.inputs))

    def forward_inputs(self, x: np.ndarray) -> np.ndarray:
        """Normalize a T x d matrix of raw channel values column by column."""
        if self.inputs is None:
            return np.asarray(x, dtype=float)
        return self._forward_columns(x, channel_stride=len(self.inputs))

    def forward_windowed(self, rows: np.ndarray) -> np.ndarray:
        """Normalize lag-stacked rows; column c holds channel ``c % d``."""
        if self.inputs is None:
            return np.asarray(rows, dtype=float)
        return self._forward_columns(rows, channel_stride=len(self.inputs))

    def _forward_columns(self, x, channel_stride: int):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] % channel_stride != 0:
            raise ValueError(
                f"input width {x.shape[-1]} is not a multiple of the channel count {channel_stride}"
            )
        out = np.array(x, copy=True)
        for col in range(x.shape[-1]):
            t = self.inputs[col % channel_stride]
            if t is not None:
                out[..., col] = t.forward(x[..., col])
        return out

    def forward_nox(self, y):
        return self.nox.forward(y) if self.nox is not None else np.asarray(y, dtype=float)

    def inverse_nox(self, z):
        return self.nox.inverse(z) if self.nox is not None else np.asarray(z, dtype=float)

    def to_payload(self) -> dict:
        return {
            "inputs": None
            if self.inputs is None
            else [t.to_payload() if t is not None else None for t in self.inputs],
            "nox": self.nox.to_payload() if self.nox is not None else None,
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "TransformSet":
        inputs = payload.get("inputs")
        if inputs is not None:
            inputs = tuple(
                QuantileTransform.from_payload(p) if p is not None else None for p in inputs
            )
        nox = payload.get("nox")
        return cls(inputs, QuantileTransform.from_payload(nox) if nox is not None else None)


def fit_transform_set(
    datasets: Sequence,
    transform_inputs: bool = True,
    n_quantiles: Optional[int] = None,
) -> TransformSet:
    """Fit one transform per channel (optional) and one for NOx on the pooled
    samples of one or more training datasets."""
    datasets = list(datasets)
    if not datasets:
        raise TooFewValues("no datasets to fit transforms on")
    inputs_pool = np.concatenate([ds.inputs for ds in datasets], axis=0)
    nox_pool = np.concatenate([ds.nox for ds in datasets])

    def _nq(n):
        return None if n_quantiles is None else min(n_quantiles, n)

    channel_transforms = None
    if transform_inputs:
        channel_transforms = tuple(
            QuantileTransform.fit(inputs_pool[:, j], _nq(inputs_pool.shape[0]))
            for j in range(inputs_pool.shape[1])
        )
    nox_transform = QuantileTransform.fit(nox_pool, _nq(nox_pool.size))
    return TransformSet(channel_transforms, nox_transform)
