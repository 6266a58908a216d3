"""Run configuration: one JSON tree drives every pipeline command.

The file is hashed canonically and the hash is embedded in every artifact a
command writes, so mixing artifacts from different configurations is
detectable. Relative paths resolve against the config file's directory.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .data import ChannelSchema, ChannelSpec
from .errors import InvalidConfig
from .gp import TrainConfig
from .inference import AbcConfig, PriorSpec

# Committed defaults for the built-in synthetic transfer study: four engines
# (one nominal, three biased samples), each with a transient and a stepped
# steady cycle. The injected per-engine biases are fixed here once; tests and
# demos treat them as ground truth.
DEFAULT_CONFIG = {
    "schema": {
        "sample_rate_hz": 1.0,
        "channels": [
            {"name": "engine_speed", "role": "control", "units": "%"},
            {"name": "fuel_rate", "role": "control", "units": "%"},
            {"name": "air_flow", "role": "measured", "units": "%"},
            {"name": "egr_temp", "role": "measured", "units": "%"},
        ],
    },
    # Raw inputs condition the surrogate noticeably better than rank-warped
    # ones on this family of cycles, so the study turns the input transform
    # off; the NOx output transform is always on.
    "transform": {"n_quantiles": 1000, "transform_inputs": False},
    "gp": {
        "window_s": 5.0,
        "ard": True,
        "n_max": 1100,
        "steps": 220,
        "learning_rate": 0.07,
        "beta1": 0.9,
        "beta2": 0.999,
        "seed": 0,
        "train_datasets": [
            "nominal_transient.csv",
            "nominal_transient_b.csv",
            "nominal_steady.csv",
        ],
    },
    "prior": {
        "output_bias": [-150.0, 150.0],
        "input_biases": {
            "air_flow": [-30.0, 30.0],
            "egr_temp": [-30.0, 30.0],
        },
    },
    "abc": {
        "n_pilot": 1000,
        "n_main": 10000,
        "n_desired": 500,
        "zeta": 0.05,
        "sigma_y": 18.0,
        "seed": 1,
    },
    "window": {"warmup_s": 80.0, "calibration_s": 200.0},
    "synth": {
        "seed": 100,
        "process_noise_std": 10.0,
        "steady_step_s": 50.0,
        "train_duration_s": 1500.0,
        "steady_train_duration_s": 1100.0,
        "eval_duration_s": 600.0,
        # nominal training deliberately spans a wider operating range than
        # the validation cycles it must transfer to
        "train_excursion_scale": 1.15,
        "eval_excursion_scale": 0.85,
        # committed ground truth; engine1's pair is chosen so the two
        # channels' NOx-level effects sit on opposite sides of the prior
        # center and the alpha/bias compensation ridge stays balanced
        # (truths near a prior edge skew the marginals one-sidedly)
        "engines": {
            "engine1": {"output_bias": 70.0, "input_biases": [10.0, 15.0]},
            "engine2": {"output_bias": -55.0, "input_biases": [-18.0, 9.0]},
            "engine3": {"output_bias": 95.0, "input_biases": [14.0, 19.0]},
        },
    },
    "paths": {"data_dir": "data", "artifact_dir": "artifacts", "report_dir": "reports"},
}


def default_config() -> dict:
    return copy.deepcopy(DEFAULT_CONFIG)


def config_hash(raw: dict) -> str:
    canonical = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


@dataclass(frozen=True)
class RunConfig:
    """Parsed, validated view of one configuration tree."""

    raw: dict
    schema: ChannelSchema
    transform_inputs: bool
    n_quantiles: Optional[int]
    window_s: float
    train_config: TrainConfig
    gp_seed: int
    train_datasets: tuple
    prior: PriorSpec
    abc: AbcConfig
    warmup_s: float
    calibration_s: float
    data_dir: Path
    artifact_dir: Path
    report_dir: Path
    synth: dict
    hash: str


def _section(raw: dict, name: str) -> dict:
    try:
        section = raw[name]
    except KeyError:
        raise InvalidConfig(f"missing config section {name!r}") from None
    if not isinstance(section, dict):
        raise InvalidConfig(f"config section {name!r} must be an object")
    return section


def parse_config(raw: dict, base_dir: Path = Path(".")) -> RunConfig:
    try:
        return _parse_config(raw, Path(base_dir))
    except InvalidConfig:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidConfig(f"bad configuration: {exc}") from exc


def _parse_config(raw: dict, base_dir: Path) -> RunConfig:
    schema_cfg = _section(raw, "schema")
    channels = tuple(
        ChannelSpec(c["name"], c["role"], c.get("units", ""))
        for c in schema_cfg["channels"]
    )
    schema = ChannelSchema(channels, float(schema_cfg.get("sample_rate_hz", 1.0)))

    transform_cfg = _section(raw, "transform")
    n_quantiles = transform_cfg.get("n_quantiles")
    if n_quantiles is not None:
        n_quantiles = int(n_quantiles)

    gp_cfg = _section(raw, "gp")
    window_s = float(gp_cfg["window_s"])
    if window_s <= 0:
        raise InvalidConfig(f"gp.window_s must be positive, got {window_s}")
    train_config = TrainConfig(
        steps=int(gp_cfg.get("steps", 500)),
        learning_rate=float(gp_cfg.get("learning_rate", 0.05)),
        beta1=float(gp_cfg.get("beta1", 0.9)),
        beta2=float(gp_cfg.get("beta2", 0.999)),
        ard=bool(gp_cfg.get("ard", True)),
        n_max=int(gp_cfg.get("n_max", 2000)),
    )
    train_datasets = tuple(gp_cfg.get("train_datasets", []))
    if not train_datasets:
        raise InvalidConfig("gp.train_datasets must list at least one file")

    prior_cfg = _section(raw, "prior")
    measured = schema.measured_names
    if not measured:
        raise InvalidConfig("schema declares no measured channels; nothing to calibrate")
    bias_bounds = prior_cfg.get("input_biases", {})
    missing = [name for name in measured if name not in bias_bounds]
    if missing:
        raise InvalidConfig(f"prior.input_biases missing measured channels: {missing}")
    prior = PriorSpec(
        tuple(prior_cfg["output_bias"]),
        tuple(tuple(bias_bounds[name]) for name in measured),
    )

    abc_cfg = _section(raw, "abc")
    if "sigma_y" not in abc_cfg:
        raise InvalidConfig("abc.sigma_y is required (physical NOx units)")
    abc = AbcConfig(
        sigma_y=float(abc_cfg["sigma_y"]),
        n_pilot=int(abc_cfg.get("n_pilot", 1000)),
        n_main=int(abc_cfg.get("n_main", 10000)),
        n_desired=int(abc_cfg.get("n_desired", 500)),
        zeta=float(abc_cfg.get("zeta", 0.05)),
        seed=int(abc_cfg.get("seed", 0)),
    )

    window_cfg = _section(raw, "window")
    paths_cfg = _section(raw, "paths")

    def _dir(key: str) -> Path:
        value = Path(paths_cfg.get(key, key.replace("_dir", "")))
        return value if value.is_absolute() else base_dir / value

    return RunConfig(
        raw=raw,
        schema=schema,
        transform_inputs=bool(transform_cfg.get("transform_inputs", True)),
        n_quantiles=n_quantiles,
        window_s=window_s,
        train_config=train_config,
        gp_seed=int(gp_cfg.get("seed", 0)),
        train_datasets=train_datasets,
        prior=prior,
        abc=abc,
        warmup_s=float(window_cfg.get("warmup_s", 0.0)),
        calibration_s=float(window_cfg["calibration_s"]),
        data_dir=_dir("data_dir"),
        artifact_dir=_dir("artifact_dir"),
        report_dir=_dir("report_dir"),
        synth=raw.get("synth", {}),
        hash=config_hash(raw),
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise InvalidConfig(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(raw, path.resolve().parent)
