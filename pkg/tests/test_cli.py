import json

import numpy as np
import pytest

from conftest import make_tiny_config
from xcal.cli import main
from xcal.config import default_config, load_config, parse_config
from xcal.errors import InvalidConfig
from xcal.gp import load_model
from xcal.inference import load_posterior, read_ensemble_csv


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One full simulate -> train -> calibrate -> predict -> evaluate run."""
    root = tmp_path_factory.mktemp("pipeline")
    config = make_tiny_config(root)
    assert run("simulate", "--config", config) == 0
    assert run("train", "--config", config) == 0
    dataset = root / "data" / "engine1_transient.csv"
    model = root / "artifacts" / "model.json"
    assert run("calibrate", "--config", config, "--model", model, "--dataset", dataset) == 0
    posterior = root / "artifacts" / "posterior_engine1_transient.json"
    assert run(
        "predict", "--config", config, "--model", model, "--posterior", posterior,
        "--dataset", dataset,
    ) == 0
    predictions = root / "artifacts" / "ensemble_engine1_transient_holdout.csv"
    assert run(
        "evaluate", "--config", config, "--predictions", predictions,
        "--model", model, "--dataset", dataset,
    ) == 0
    return {"root": root, "config": config, "model": model,
            "dataset": dataset, "posterior": posterior, "predictions": predictions}


class TestPipelineArtifacts:
    def test_simulate_wrote_fleet_and_truth(self, pipeline):
        data = pipeline["root"] / "data"
        for name in (
            "nominal_transient.csv", "nominal_transient_b.csv", "nominal_steady.csv",
            "engine1_transient.csv", "engine1_steady.csv", "truth.json",
        ):
            assert (data / name).exists(), name
        truth = json.loads((data / "truth.json").read_text())
        assert truth["engines"]["engine1"]["alpha"] == 40.0

    def test_zero_bias_engine_matches_nominal_generation(self, tmp_path):
        # an engine with zero injected biases records exactly what a nominal
        # engine would under the same seed and cycle settings
        import numpy as np

        from xcal.data import load_dataset
        from xcal.synth import SynthConfig, generate_nominal

        config = make_tiny_config(tmp_path, synth={
            "seed": 900, "process_noise_std": 12.0, "steady_step_s": 30.0,
            "train_duration_s": 400.0, "steady_train_duration_s": 300.0,
            "eval_duration_s": 300.0,
            "engines": {"engine1": {"output_bias": 0.0, "input_biases": [0.0, 0.0]}},
        })
        assert run("simulate", "--config", config) == 0
        cfg = load_config(config)
        written = load_dataset(tmp_path / "data" / "engine1_transient.csv", cfg.schema)
        nominal = generate_nominal(SynthConfig(
            d=3, mask=(False, True, True), cycle="transient", duration_s=300.0,
            seed=910, true_b=(0.0, 0.0), process_noise_std=12.0,
            identifiability_halfwidths=(20.0, 20.0),
        ))
        np.testing.assert_array_equal(written.inputs, nominal.inputs)
        np.testing.assert_array_equal(written.nox, nominal.nox)

    def test_model_artifact_loads_and_carries_hash(self, pipeline):
        model = load_model(pipeline["model"])
        cfg = load_config(pipeline["config"])
        assert model.config_hash == cfg.hash
        assert model.window == 2

    def test_posterior_artifact(self, pipeline):
        posterior = load_posterior(pipeline["posterior"])
        assert 1 <= len(posterior) <= 40
        assert np.all(posterior.distances <= posterior.epsilon)
        marginals = pipeline["root"] / "artifacts" / "marginals_engine1_transient.csv"
        text = marginals.read_text().splitlines()
        assert text[0].startswith("parameter,prior_q05")
        assert len(text) == 4  # header + alpha + two input biases

    def test_ensemble_and_report(self, pipeline):
        ensemble = read_ensemble_csv(pipeline["predictions"])
        assert np.all(ensemble.lower95 <= ensemble.upper95)
        report_path = (
            pipeline["root"] / "reports" / "report_ensemble_engine1_transient_holdout.json"
        )
        report = json.loads(report_path.read_text())
        assert set(report) == {"rmse", "p90", "p95", "p98", "coverage95", "baseline"}
        assert set(report["baseline"]) == {"rmse", "p90", "p95", "p98"}
        cumulative = (
            pipeline["root"] / "reports" / "cumulative_ensemble_engine1_transient_holdout.csv"
        )
        assert cumulative.read_text().startswith("time_s,cum_observed,cum_median")

    def test_commands_are_idempotent(self, pipeline):
        before = pipeline["posterior"].read_bytes()
        assert run(
            "calibrate", "--config", pipeline["config"], "--model", pipeline["model"],
            "--dataset", pipeline["dataset"],
        ) == 0
        assert pipeline["posterior"].read_bytes() == before


class TestExitCodes:
    def test_usage_errors_exit_1(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run()
        assert exc.value.code == 1
        with pytest.raises(SystemExit) as exc:
            run("frobnicate", "--config", "x.json")
        assert exc.value.code == 1
        with pytest.raises(SystemExit) as exc:
            run("train")  # missing --config
        assert exc.value.code == 1

    def test_bad_config_exits_1(self, tmp_path):
        config = make_tiny_config(tmp_path)
        raw = json.loads(config.read_text())
        raw["gp"]["window_s"] = 0.0
        config.write_text(json.dumps(raw))
        assert run("train", "--config", config) == 1

    def test_missing_output_dir_exits_2(self, tmp_path):
        config = make_tiny_config(tmp_path)
        assert run("simulate", "--config", config, "--out", tmp_path / "absent" / "dir") == 2

    def test_unreadable_model_exits_2(self, tmp_path):
        config = make_tiny_config(tmp_path)
        assert run(
            "calibrate", "--config", config, "--model", tmp_path / "missing.json",
            "--dataset", tmp_path / "nothing.csv",
        ) == 2

    def test_no_samples_accepted_exits_3(self, pipeline):
        # epsilon override of zero rejects every draw
        assert run(
            "calibrate", "--config", pipeline["config"], "--model", pipeline["model"],
            "--dataset", pipeline["dataset"], "--epsilon", "0.0",
            "--out", pipeline["root"] / "artifacts" / "never.json",
        ) == 3

    def test_provenance_mismatch_exits_4(self, pipeline, tmp_path):
        tampered = tmp_path / "tampered.json"
        payload = json.loads(pipeline["posterior"].read_text())
        payload["config_hash"] = "0" * 64
        tampered.write_text(json.dumps(payload))
        assert run(
            "predict", "--config", pipeline["config"], "--model", pipeline["model"],
            "--posterior", tampered, "--dataset", pipeline["dataset"],
        ) == 4

    def test_empty_posterior_exits_3(self, pipeline, tmp_path):
        empty = tmp_path / "empty.json"
        payload = json.loads(pipeline["posterior"].read_text())
        payload["samples"] = []
        payload["distances"] = []
        empty.write_text(json.dumps(payload))
        assert run(
            "predict", "--config", pipeline["config"], "--model", pipeline["model"],
            "--posterior", empty, "--dataset", pipeline["dataset"],
        ) == 3


class TestPredictSlices:
    def test_slice_lengths(self, pipeline):
        cfg = load_config(pipeline["config"])
        out = pipeline["root"] / "artifacts"
        for which, expected in (("calibration", 120 - 1), ("full", 300 - 1)):
            assert run(
                "predict", "--config", pipeline["config"], "--model", pipeline["model"],
                "--posterior", pipeline["posterior"], "--dataset", pipeline["dataset"],
                "--slice", which,
            ) == 0
            ensemble = read_ensemble_csv(out / f"ensemble_engine1_transient_{which}.csv")
            assert ensemble.median.size == expected  # window 2 trims one sample


class TestConfigParsing:
    def test_default_config_is_valid(self, tmp_path):
        cfg = parse_config(default_config(), tmp_path)
        assert cfg.abc.zeta == 0.05
        assert cfg.abc.n_pilot == 1000
        assert cfg.abc.n_main == 10000
        assert cfg.abc.n_desired == 500
        assert cfg.window_s == 5.0
        assert cfg.warmup_s == 80.0
        assert cfg.calibration_s == 200.0

    def test_missing_sigma_y_rejected(self, tmp_path):
        raw = default_config()
        del raw["abc"]["sigma_y"]
        with pytest.raises(InvalidConfig):
            parse_config(raw, tmp_path)

    def test_prior_must_cover_measured_channels(self, tmp_path):
        raw = default_config()
        del raw["prior"]["input_biases"]["air_flow"]
        with pytest.raises(InvalidConfig):
            parse_config(raw, tmp_path)

    def test_hash_stable_under_key_order(self, tmp_path):
        from xcal.config import config_hash

        a = {"x": 1, "y": {"b": 2, "a": 3}}
        b = {"y": {"a": 3, "b": 2}, "x": 1}
        assert config_hash(a) == config_hash(b)

    def test_seed_override_changes_posterior_seed(self, pipeline):
        out = pipeline["root"] / "artifacts" / "posterior_seeded.json"
        assert run(
            "calibrate", "--config", pipeline["config"], "--model", pipeline["model"],
            "--dataset", pipeline["dataset"], "--seed", "99", "--out", out,
        ) == 0
        assert load_posterior(out).seed == 99
