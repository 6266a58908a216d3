import json

import pytest

from xcal.data import ChannelSchema, ChannelSpec
from xcal.gp import TrainConfig, fit_surrogate
from xcal.inference import PriorSpec
from xcal.synth import SynthConfig, generate_nominal, generate_sample_engine


@pytest.fixture(scope="session")
def small_setup():
    """One trained surrogate over a 3-channel synthetic family, shared by the
    calibration and generator tests (training dominates the cost)."""
    schema = ChannelSchema(
        (
            ChannelSpec("speed", "control", "%"),
            ChannelSpec("air_flow", "measured", "%"),
            ChannelSpec("egr_temp", "measured", "%"),
        )
    )
    mask = tuple(schema.measured_mask())
    process_noise = 30.0

    def synth_cfg(cycle, duration, seed, alpha=0.0, b=(0.0, 0.0), scale=0.82):
        return SynthConfig(
            d=3,
            mask=mask,
            cycle=cycle,
            duration_s=duration,
            seed=seed,
            true_alpha=alpha,
            true_b=b,
            process_noise_std=process_noise,
            excursion_scale=scale,
        )

    # training spans a wider operating range than any validation cycle
    train_sets = [
        generate_nominal(synth_cfg("transient", 1500.0, 50, scale=1.15)),
        generate_nominal(synth_cfg("transient", 1500.0, 52, scale=1.15)),
        generate_nominal(synth_cfg("steady", 1100.0, 51, scale=1.15)),
    ]
    model = fit_surrogate(
        train_sets,
        schema,
        5.0,
        train_config=TrainConfig(steps=220, learning_rate=0.07, n_max=1100),
        transform_inputs=False,
        n_quantiles=800,
        seed=0,
        config_hash="small-setup",
    )

    true_alpha = 60.0
    true_b = (14.0, -11.0)
    engine = generate_sample_engine(
        synth_cfg("transient", 600.0, 57, true_alpha, true_b),
        engine_id="e1",
        cycle_id="transient",
    )
    return {
        "schema": schema,
        "mask": mask,
        "process_noise_std": process_noise,
        "model": model,
        "synth_cfg": synth_cfg,
        "engine": engine,
        "true_alpha": true_alpha,
        "true_b": true_b,
        "prior": PriorSpec((-120.0, 120.0), ((-25.0, 25.0), (-25.0, 25.0))),
        "sigma_y": 35.0,
    }


def make_tiny_config(root, **overrides):
    """Small, fast run config for CLI and determinism tests. Writes
    ``config.json`` under ``root`` and creates the artifact directories."""
    raw = {
        "schema": {
            "sample_rate_hz": 1.0,
            "channels": [
                {"name": "speed", "role": "control", "units": "%"},
                {"name": "air_flow", "role": "measured", "units": "%"},
                {"name": "egr_temp", "role": "measured", "units": "%"},
            ],
        },
        "transform": {"n_quantiles": 200, "transform_inputs": False},
        "gp": {
            "window_s": 2.0,
            "ard": True,
            "n_max": 200,
            "steps": 60,
            "learning_rate": 0.08,
            "seed": 0,
            "train_datasets": ["nominal_transient.csv", "nominal_steady.csv"],
        },
        "prior": {
            "output_bias": [-100.0, 100.0],
            "input_biases": {"air_flow": [-20.0, 20.0], "egr_temp": [-20.0, 20.0]},
        },
        "abc": {
            "n_pilot": 60,
            "n_main": 400,
            "n_desired": 40,
            "zeta": 0.1,
            "sigma_y": 30.0,
            "seed": 5,
        },
        "window": {"warmup_s": 20.0, "calibration_s": 120.0},
        "synth": {
            "seed": 900,
            "process_noise_std": 12.0,
            "steady_step_s": 30.0,
            "train_duration_s": 400.0,
            "steady_train_duration_s": 300.0,
            "eval_duration_s": 300.0,
            "engines": {"engine1": {"output_bias": 40.0, "input_biases": [8.0, -6.0]}},
        },
        "paths": {"data_dir": "data", "artifact_dir": "artifacts", "report_dir": "reports"},
    }
    raw.update(overrides)
    for sub in ("data", "artifacts", "reports"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    path = root / "config.json"
    path.write_text(json.dumps(raw, indent=1))
    return path
