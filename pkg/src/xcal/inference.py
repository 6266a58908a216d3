"""Likelihood-free calibration of per-engine bias parameters.

Three phases over a pre-trained surrogate: a pilot pass that turns prior
predictive distances into an adaptive acceptance tolerance, a main rejection
pass that keeps parameter draws whose simulated NOx trajectories fall within
that tolerance of the observations (Kolmogorov-Smirnov distance), and a
posterior-predictive pass that replays the accepted draws on new inputs.

Each draw runs on its own counter-derived random substream, so chunked or
threaded execution reproduces the sequential results bit for bit.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import rng as _rng
from .data import EngineDataset, apply_bias, window_rows
from .errors import (
    ArtifactError,
    DegeneratePrior,
    DimensionMismatch,
    EmptyPosterior,
    NoSamplesAccepted,
)
from .gp import GpModel, predict_median
from .stats import abs_error_percentiles, cumulative_series, ks_statistic, quantile, rmse

POSTERIOR_FORMAT = "xcal-posterior/1"

_CHUNK = 256


@dataclass(frozen=True)
class BiasParameters:
    """One candidate bias tuple: an additive offset on recorded NOx plus one
    additive offset per measured input channel (all physical units)."""

    output_bias: float
    input_biases: np.ndarray

    def __post_init__(self):
        biases = np.asarray(self.input_biases, dtype=float).ravel()
        biases.setflags(write=False)
        object.__setattr__(self, "input_biases", biases)
        object.__setattr__(self, "output_bias", float(self.output_bias))

    def as_tuple(self) -> tuple:
        return (self.output_bias, *self.input_biases.tolist())


@dataclass(frozen=True)
class PriorSpec:
    """Independent uniform priors for the output bias and each input bias."""

    output_bias_bounds: tuple
    input_bias_bounds: tuple

    def __post_init__(self):
        out = (float(self.output_bias_bounds[0]), float(self.output_bias_bounds[1]))
        inp = tuple((float(lo), float(hi)) for lo, hi in self.input_bias_bounds)
        for lo, hi in (out, *inp):
            if lo > hi:
                raise ValueError(f"prior bounds must satisfy lo <= hi, got ({lo}, {hi})")
        object.__setattr__(self, "output_bias_bounds", out)
        object.__setattr__(self, "input_bias_bounds", inp)

    @property
    def n_input_biases(self) -> int:
        return len(self.input_bias_bounds)

    def total_width(self) -> float:
        widths = [hi - lo for lo, hi in (self.output_bias_bounds, *self.input_bias_bounds)]
        return float(sum(widths))

    def medians(self) -> np.ndarray:
        """Prior medians (interval midpoints), output bias first."""
        bounds = (self.output_bias_bounds, *self.input_bias_bounds)
        return np.array([0.5 * (lo + hi) for lo, hi in bounds])

    def sample(self, generator: np.random.Generator) -> BiasParameters:
        lo, hi = self.output_bias_bounds
        alpha = float(generator.uniform(lo, hi))
        biases = np.array(
            [generator.uniform(lo_k, hi_k) for lo_k, hi_k in self.input_bias_bounds]
        )
        return BiasParameters(alpha, biases)


@dataclass(frozen=True)
class AbcConfig:
    """Sampler sizes, tolerance quantile, observation noise, and seed.

    ``sigma_y`` is the observation noise standard deviation in physical NOx
    units; it has no default because its scale belongs to the dataset.
    """

    sigma_y: float
    n_pilot: int = 1000
    n_main: int = 10000
    n_desired: int = 500
    zeta: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.sigma_y < 0:
            raise ValueError("sigma_y must be >= 0")
        if not 0.0 < self.zeta < 1.0:
            raise ValueError(f"zeta must be in (0, 1), got {self.zeta}")
        if self.n_desired > self.n_main:
            raise ValueError("n_desired cannot exceed n_main")
        if min(self.n_pilot, self.n_main, self.n_desired) < 1:
            raise ValueError("sampler sizes must be positive")


@dataclass(frozen=True)
class PosteriorSampleSet:
    """Accepted bias draws plus the run's provenance."""

    samples: tuple
    epsilon: float
    distances: np.ndarray
    acceptance_rate: float
    engine_id: str = ""
    config_hash: str = ""
    seed: int = 0

    def __post_init__(self):
        distances = np.asarray(self.distances, dtype=float).ravel()
        distances.setflags(write=False)
        object.__setattr__(self, "samples", tuple(self.samples))
        object.__setattr__(self, "distances", distances)

    def __len__(self) -> int:
        return len(self.samples)

    def output_biases(self) -> np.ndarray:
        return np.array([s.output_bias for s in self.samples])

    def input_bias_matrix(self) -> np.ndarray:
        return np.array([s.input_biases for s in self.samples])


@dataclass(frozen=True)
class PredictiveEnsemble:
    """Per-timestep predictive samples with a median / central-95% summary."""

    time_s: np.ndarray
    median: np.ndarray
    lower95: np.ndarray
    upper95: np.ndarray
    observed: Optional[np.ndarray] = None
    samples: Optional[np.ndarray] = None

    @classmethod
    def from_samples(cls, time_s, samples, observed=None) -> "PredictiveEnsemble":
        samples = np.asarray(samples, dtype=float)
        ordered = np.sort(samples, axis=0)
        return cls(
            time_s=np.asarray(time_s, dtype=float),
            median=_sorted_quantile(ordered, 0.5),
            lower95=_sorted_quantile(ordered, 0.025),
            upper95=_sorted_quantile(ordered, 0.975),
            observed=None if observed is None else np.asarray(observed, dtype=float),
            samples=samples,
        )


def _sorted_quantile(ordered: np.ndarray, q: float) -> np.ndarray:
    """Columnwise linear-interpolation quantile of presorted samples."""
    n = ordered.shape[0]
    pos = q * (n - 1)
    lo = int(np.floor(pos))
    hi = min(lo + 1, n - 1)
    return ordered[lo] + (ordered[hi] - ordered[lo]) * (pos - lo)


def simulate_trajectory(
    theta: BiasParameters,
    ds: EngineDataset,
    model: GpModel,
    sigma_y: float,
    generator: np.random.Generator,
) -> np.ndarray:
    """Surrogate NOx trajectory under candidate biases.

    Input biases are removed from the raw channels before windowing; the
    output bias and (optionally) white observation noise are added on top of
    the median prediction. Length is T - W + 1 (one value per full window).
    """
    if model.schema is None:
        raise ValueError("model carries no channel schema; cannot place input biases")
    sel = model.schema.selection()
    corrected = apply_bias(ds.inputs, sel, theta.input_biases)
    rows = window_rows(corrected, model.window)
    y = predict_median(model, rows) + theta.output_bias
    if sigma_y > 0.0:
        y = y + sigma_y * generator.standard_normal(y.size)
    return y


def _observed_targets(ds: EngineDataset, window: int) -> np.ndarray:
    if window > ds.n_samples:
        raise DimensionMismatch(
            f"window of {window} samples exceeds the {ds.n_samples}-sample dataset"
        )
    return ds.nox[window - 1 :]


def _ordered_map(fn, indices, workers: int):
    if workers <= 1:
        return [fn(i) for i in indices]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, indices))


def pilot_phase(
    ds: EngineDataset,
    model: GpModel,
    prior: PriorSpec,
    config: AbcConfig,
    workers: int = 1,
) -> tuple[float, np.ndarray]:
    """Draw prior predictive simulations and set the acceptance tolerance as
    the zeta-quantile of their distances to the observations."""
    observed = _observed_targets(ds, model.window)

    def one(index: int) -> float:
        gen = _rng.substream(config.seed, _rng.PILOT_STREAM, index)
        theta = prior.sample(gen)
        simulated = simulate_trajectory(theta, ds, model, config.sigma_y, gen)
        return ks_statistic(simulated, observed)

    distances = np.array(_ordered_map(one, range(config.n_pilot), workers))
    if prior.total_width() == 0.0 and np.ptp(distances) == 0.0:
        raise DegeneratePrior(
            "all pilot distances identical under a zero-width prior; nothing to calibrate"
        )
    return quantile(distances, config.zeta), distances


def main_phase(
    ds: EngineDataset,
    model: GpModel,
    prior: PriorSpec,
    config: AbcConfig,
    epsilon: float,
    workers: int = 1,
    engine_id: str = "",
    config_hash: str = "",
) -> PosteriorSampleSet:
    """Rejection sampling at fixed tolerance.

    Scans up to ``n_main`` prior draws in draw order, keeps those within
    ``epsilon``, and stops once ``n_desired`` are accepted. Chunked parallel
    evaluation collates in draw order, so the accepted set is identical to a
    sequential run.
    """
    observed = _observed_targets(ds, model.window)

    def one(index: int):
        gen = _rng.substream(config.seed, _rng.MAIN_STREAM, index)
        theta = prior.sample(gen)
        simulated = simulate_trajectory(theta, ds, model, config.sigma_y, gen)
        return theta, ks_statistic(simulated, observed)

    accepted: list[BiasParameters] = []
    accepted_distances: list[float] = []
    attempted = 0
    for start in range(0, config.n_main, _CHUNK):
        indices = range(start, min(start + _CHUNK, config.n_main))
        results = _ordered_map(one, indices, workers)
        done = False
        for theta, distance in results:
            attempted += 1
            if distance <= epsilon:
                accepted.append(theta)
                accepted_distances.append(distance)
                if len(accepted) == config.n_desired:
                    done = True
                    break
        if done:
            break

    if not accepted:
        raise NoSamplesAccepted(
            f"no draw of {attempted} came within epsilon={epsilon:g}; "
            "prior and tolerance are inconsistent with the data"
        )
    return PosteriorSampleSet(
        samples=tuple(accepted),
        epsilon=float(epsilon),
        distances=np.array(accepted_distances),
        acceptance_rate=len(accepted) / attempted,
        engine_id=engine_id,
        config_hash=config_hash,
        seed=config.seed,
    )


def calibrate(
    ds: EngineDataset,
    model: GpModel,
    prior: PriorSpec,
    config: AbcConfig,
    epsilon: Optional[float] = None,
    workers: int = 1,
    engine_id: str = "",
    config_hash: str = "",
) -> tuple[PosteriorSampleSet, np.ndarray]:
    """Pilot phase (skipped when ``epsilon`` is given) followed by the main
    phase on the same calibration dataset."""
    pilot_distances = np.array([])
    if epsilon is None:
        epsilon, pilot_distances = pilot_phase(ds, model, prior, config, workers)
    posterior = main_phase(
        ds, model, prior, config, epsilon, workers, engine_id, config_hash
    )
    return posterior, pilot_distances


def posterior_predictive(
    sample_set: PosteriorSampleSet,
    ds_new: EngineDataset,
    model: GpModel,
    sigma_y: float,
    seed: int = 0,
    workers: int = 1,
) -> PredictiveEnsemble:
    """One simulated trajectory per accepted draw on new inputs, summarized
    as per-timestep median and central 95% interval."""
    if len(sample_set) == 0:
        raise EmptyPosterior("posterior sample set is empty")

    def one(index: int) -> np.ndarray:
        gen = _rng.substream(seed, _rng.PREDICTIVE_STREAM, index)
        return simulate_trajectory(sample_set.samples[index], ds_new, model, sigma_y, gen)

    trajectories = np.array(_ordered_map(one, range(len(sample_set)), workers))
    time_s = ds_new.time[model.window - 1 :]
    observed = _observed_targets(ds_new, model.window)
    return PredictiveEnsemble.from_samples(time_s, trajectories, observed)


@dataclass(frozen=True)
class EvaluationReport:
    """Median-trajectory error metrics plus band coverage and cumulative sums."""

    rmse: float
    p90: float
    p95: float
    p98: float
    coverage95: float
    time_s: np.ndarray
    cumulative: dict

    def metrics(self) -> dict:
        return {
            "rmse": self.rmse,
            "p90": self.p90,
            "p95": self.p95,
            "p98": self.p98,
            "coverage95": self.coverage95,
        }


def evaluate(ensemble: PredictiveEnsemble, y_obs=None) -> EvaluationReport:
    """Score the ensemble median against observations and measure how much of
    the data the 95% band covers."""
    if y_obs is None:
        y_obs = ensemble.observed
    if y_obs is None:
        raise ValueError("no observations supplied and none stored on the ensemble")
    y_obs = np.asarray(y_obs, dtype=float).ravel()
    if y_obs.size != ensemble.median.size:
        raise DimensionMismatch(
            f"observations length {y_obs.size} != ensemble length {ensemble.median.size}"
        )
    percentiles = abs_error_percentiles(y_obs, ensemble.median)
    coverage = float(np.mean((y_obs >= ensemble.lower95) & (y_obs <= ensemble.upper95)))
    time_s = ensemble.time_s
    dt = float(time_s[1] - time_s[0]) if time_s.size > 1 else 1.0
    cumulative = {
        "median": cumulative_series(ensemble.median, dt),
        "lower95": cumulative_series(ensemble.lower95, dt),
        "upper95": cumulative_series(ensemble.upper95, dt),
        "observed": cumulative_series(y_obs, dt),
    }
    return EvaluationReport(
        rmse=rmse(y_obs, ensemble.median),
        p90=percentiles[90],
        p95=percentiles[95],
        p98=percentiles[98],
        coverage95=coverage,
        time_s=time_s,
        cumulative=cumulative,
    )


# --- persistence ---------------------------------------------------------------


def save_posterior(sample_set: PosteriorSampleSet, path, config: Optional[AbcConfig] = None) -> None:
    payload = {
        "format": POSTERIOR_FORMAT,
        "config_hash": sample_set.config_hash,
        "engine_id": sample_set.engine_id,
        "seed": sample_set.seed,
        "epsilon": sample_set.epsilon,
        "acceptance_rate": sample_set.acceptance_rate,
        "samples": [
            {"alpha": s.output_bias, "b": s.input_biases.tolist()} for s in sample_set.samples
        ],
        "distances": sample_set.distances.tolist(),
        "config": None
        if config is None
        else {
            "sigma_y": config.sigma_y,
            "n_pilot": config.n_pilot,
            "n_main": config.n_main,
            "n_desired": config.n_desired,
            "zeta": config.zeta,
            "seed": config.seed,
        },
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_posterior(path) -> PosteriorSampleSet:
    path = Path(path)
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ArtifactError(f"cannot read posterior artifact {path}: {exc}") from exc
    if payload.get("format") != POSTERIOR_FORMAT:
        raise ArtifactError(f"{path} is not a {POSTERIOR_FORMAT} artifact")
    samples = tuple(
        BiasParameters(entry["alpha"], np.asarray(entry["b"], dtype=float))
        for entry in payload["samples"]
    )
    return PosteriorSampleSet(
        samples=samples,
        epsilon=float(payload["epsilon"]),
        distances=np.asarray(payload["distances"], dtype=float),
        acceptance_rate=float(payload["acceptance_rate"]),
        engine_id=payload.get("engine_id", ""),
        config_hash=payload.get("config_hash", ""),
        seed=int(payload.get("seed", 0)),
    )


def write_ensemble_csv(ensemble: PredictiveEnsemble, path) -> None:
    """Summary CSV: time_s, median, lo95, hi95, observed."""
    observed = ensemble.observed
    if observed is None:
        observed = np.full_like(ensemble.median, np.nan)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_s", "median", "lo95", "hi95", "observed"])
        for row in zip(ensemble.time_s, ensemble.median, ensemble.lower95, ensemble.upper95, observed):
            writer.writerow([repr(float(v)) for v in row])


def read_ensemble_csv(path) -> PredictiveEnsemble:
    """Read the summary CSV back (sample matrix is not persisted)."""
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["time_s", "median", "lo95", "hi95", "observed"]:
                raise ArtifactError(f"{path} is not an ensemble summary CSV")
            rows = [[float(cell) for cell in record] for record in reader]
    except OSError as exc:
        raise ArtifactError(f"cannot read ensemble CSV {path}: {exc}") from exc
    if not rows:
        raise ArtifactError(f"{path} contains no data rows")
    cols = np.array(rows).T
    return PredictiveEnsemble(
        time_s=cols[0], median=cols[1], lower95=cols[2], upper95=cols[3], observed=cols[4]
    )
