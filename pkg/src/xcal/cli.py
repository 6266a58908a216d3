"""Pipeline driver: simulate, train, calibrate, predict, evaluate.

Every command is driven by one config file and is idempotent: identical
config and inputs produce byte-identical artifacts (no timestamps, canonical
JSON, shortest-roundtrip floats). Exit codes: 0 ok, 1 usage or bad config,
2 I/O or artifact error, 3 inference failure, 4 provenance mismatch.

``XCAL_THREADS`` caps sampler parallelism; results do not depend on it.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import inference, synth
from .config import RunConfig, load_config
from .data import load_dataset, save_dataset, slice_calibration_window
from .errors import (
    DegeneratePrior,
    EmptyPosterior,
    InvalidConfig,
    NoSamplesAccepted,
    ProvenanceMismatch,
    XcalError,
)
from .gp import fit_surrogate, load_model, save_model
from .inference import BiasParameters
from .stats import abs_error_percentiles, quantile, rmse

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_INFERENCE = 3
EXIT_PROVENANCE = 4


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("XCAL_THREADS", "1")))
    except ValueError:
        return 1


def _write_json(payload: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


# --- synthetic fleet ---------------------------------------------------------


def _synth_value(cfg: RunConfig, key: str, default):
    return cfg.synth.get(key, default)


def _synth_config(
    cfg: RunConfig, cycle: str, duration_s: float, seed: int, alpha, biases, scale: float
):
    halfwidths = tuple(
        0.5 * (hi - lo) for lo, hi in cfg.prior.input_bias_bounds
    )
    return synth.SynthConfig(
        d=cfg.schema.d,
        mask=tuple(cfg.schema.measured_mask()),
        cycle=cycle,
        duration_s=duration_s,
        seed=seed,
        true_alpha=alpha,
        true_b=tuple(biases),
        process_noise_std=float(_synth_value(cfg, "process_noise_std", 8.0)),
        sample_rate_hz=cfg.schema.sample_rate_hz,
        steady_step_s=float(_synth_value(cfg, "steady_step_s", 50.0)),
        excursion_scale=scale,
        identifiability_halfwidths=halfwidths,
    )


def simulate_fleet(cfg: RunConfig, out_dir, seed=None) -> dict:
    """Write the nominal training cycles, every sample engine's validation
    cycles, and the ground-truth bias JSON. Returns the truth payload."""
    out_dir = Path(out_dir)
    base_seed = int(_synth_value(cfg, "seed", 0)) if seed is None else int(seed)
    train_duration = float(_synth_value(cfg, "train_duration_s", 1500.0))
    steady_duration = float(_synth_value(cfg, "steady_train_duration_s", train_duration))
    eval_duration = float(_synth_value(cfg, "eval_duration_s", 600.0))
    train_scale = float(_synth_value(cfg, "train_excursion_scale", 1.0))
    eval_scale = float(_synth_value(cfg, "eval_excursion_scale", 1.0))
    engines = _synth_value(cfg, "engines", {})
    d_nc = len(cfg.prior.input_bias_bounds)

    nominal_cycles = (
        ("nominal_transient", synth.TRANSIENT, 0, train_duration),
        ("nominal_transient_b", synth.TRANSIENT, 2, train_duration),
        ("nominal_steady", synth.STEADY, 1, steady_duration),
    )
    for name, cycle, offset, duration in nominal_cycles:
        ds = synth.generate_nominal(
            _synth_config(
                cfg, cycle, duration, base_seed + offset, 0.0, (0.0,) * d_nc, train_scale
            ),
            engine_id="nominal",
            cycle_id=cycle,
        )
        save_dataset(ds, cfg.schema, out_dir / f"{name}.csv")

    truth = {"config_hash": cfg.hash, "seed": base_seed, "engines": {}}
    for k, (engine, spec) in enumerate(sorted(engines.items()), start=1):
        alpha = float(spec["output_bias"])
        biases = tuple(float(b) for b in spec["input_biases"])
        if len(biases) != d_nc:
            raise InvalidConfig(
                f"synth.engines[{engine!r}] lists {len(biases)} input biases, expected {d_nc}"
            )
        truth["engines"][engine] = {"alpha": alpha, "b": list(biases)}
        for cycle, offset in ((synth.TRANSIENT, 0), (synth.STEADY, 1)):
            ds = synth.generate_sample_engine(
                _synth_config(
                    cfg, cycle, eval_duration, base_seed + 10 * k + offset,
                    alpha, biases, eval_scale,
                ),
                engine_id=engine,
                cycle_id=cycle,
            )
            save_dataset(ds, cfg.schema, out_dir / f"{engine}_{cycle}.csv")

    _write_json(truth, out_dir / "truth.json")
    return truth


# --- commands -----------------------------------------------------------------


def _cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    out_dir = Path(args.out) if args.out else cfg.data_dir
    simulate_fleet(cfg, out_dir, seed=args.seed)
    print(f"wrote synthetic fleet to {out_dir}")
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    datasets = [
        load_dataset(cfg.data_dir / name, cfg.schema, cycle_id=Path(name).stem)
        for name in cfg.train_datasets
    ]
    seed = cfg.gp_seed if args.seed is None else args.seed
    model = fit_surrogate(
        datasets,
        cfg.schema,
        cfg.window_s,
        train_config=cfg.train_config,
        transform_inputs=cfg.transform_inputs,
        n_quantiles=cfg.n_quantiles,
        seed=seed,
        config_hash=cfg.hash,
    )
    out = Path(args.out) if args.out else cfg.artifact_dir / "model.json"
    save_model(model, out)
    print(f"trained on {model.n_train} rows; model written to {out}")
    return EXIT_OK


def _marginal_rows(prior, posterior):
    levels = (0.05, 0.25, 0.5, 0.75, 0.95)
    names = ["alpha"] + [f"b{k}" for k in range(prior.n_input_biases)]
    bounds = (prior.output_bias_bounds, *prior.input_bias_bounds)
    columns = [posterior.output_biases()] + [
        posterior.input_bias_matrix()[:, k] for k in range(prior.n_input_biases)
    ]
    rows = []
    for name, (lo, hi), samples in zip(names, bounds, columns):
        prior_q = [lo + q * (hi - lo) for q in levels]
        post_q = [quantile(samples, q) for q in levels]
        rows.append([name, *prior_q, *post_q])
    return levels, rows


def _cmd_calibrate(args) -> int:
    cfg = load_config(args.config)
    model = load_model(args.model)
    stem = Path(args.dataset).stem
    ds = load_dataset(args.dataset, cfg.schema, engine_id=stem)
    cal, _ = slice_calibration_window(ds, cfg.warmup_s, cfg.calibration_s)

    abc_cfg = cfg.abc if args.seed is None else _reseed(cfg.abc, args.seed)
    posterior, _ = inference.calibrate(
        cal,
        model,
        cfg.prior,
        abc_cfg,
        epsilon=args.epsilon,
        workers=_workers(),
        engine_id=stem,
        config_hash=cfg.hash,
    )
    out = Path(args.out) if args.out else cfg.artifact_dir / f"posterior_{stem}.json"
    inference.save_posterior(posterior, out, abc_cfg)

    marginals = out.with_name(f"marginals_{stem}.csv")
    levels, rows = _marginal_rows(cfg.prior, posterior)
    with open(marginals, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["parameter"]
            + [f"prior_q{int(100 * q):02d}" for q in levels]
            + [f"posterior_q{int(100 * q):02d}" for q in levels]
        )
        for row in rows:
            writer.writerow([row[0], *(repr(float(v)) for v in row[1:])])

    print(
        f"accepted {len(posterior)} samples (rate {posterior.acceptance_rate:.4f}, "
        f"epsilon {posterior.epsilon:.4f}); posterior written to {out}"
    )
    return EXIT_OK


def _reseed(abc_cfg, seed):
    from .inference import AbcConfig

    return AbcConfig(
        sigma_y=abc_cfg.sigma_y,
        n_pilot=abc_cfg.n_pilot,
        n_main=abc_cfg.n_main,
        n_desired=abc_cfg.n_desired,
        zeta=abc_cfg.zeta,
        seed=int(seed),
    )


def _select_slice(cfg: RunConfig, ds, which: str):
    if which == "full":
        return ds
    cal, holdout = slice_calibration_window(ds, cfg.warmup_s, cfg.calibration_s)
    return cal if which == "calibration" else holdout


def _cmd_predict(args) -> int:
    cfg = load_config(args.config)
    model = load_model(args.model)
    posterior = inference.load_posterior(args.posterior)
    if model.config_hash != posterior.config_hash:
        raise ProvenanceMismatch(
            f"model hash {model.config_hash[:12]} != posterior hash "
            f"{posterior.config_hash[:12]}; artifacts come from different configs"
        )
    stem = Path(args.dataset).stem
    ds = load_dataset(args.dataset, cfg.schema, engine_id=stem)
    part = _select_slice(cfg, ds, args.slice)
    seed = cfg.abc.seed if args.seed is None else args.seed
    ensemble = inference.posterior_predictive(
        posterior, part, model, cfg.abc.sigma_y, seed=seed, workers=_workers()
    )
    out = Path(args.out) if args.out else cfg.artifact_dir / f"ensemble_{stem}_{args.slice}.csv"
    inference.write_ensemble_csv(ensemble, out)
    print(f"predictive ensemble over {ensemble.median.size} steps written to {out}")
    return EXIT_OK


def _baseline_metrics(cfg: RunConfig, model, ds_slice):
    """Metrics of the uncalibrated surrogate (zero biases, no noise)."""
    zero = BiasParameters(0.0, np.zeros(len(cfg.prior.input_bias_bounds)))
    gen = np.random.default_rng(0)  # unused: sigma_y = 0
    trajectory = inference.simulate_trajectory(zero, ds_slice, model, 0.0, gen)
    observed = ds_slice.nox[model.window - 1 :]
    percentiles = abs_error_percentiles(observed, trajectory)
    return {
        "rmse": rmse(observed, trajectory),
        "p90": percentiles[90],
        "p95": percentiles[95],
        "p98": percentiles[98],
    }


def _cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    ensemble = inference.read_ensemble_csv(args.predictions)
    report = inference.evaluate(ensemble)
    payload = report.metrics()

    if args.model and args.dataset:
        model = load_model(args.model)
        ds = load_dataset(args.dataset, cfg.schema, engine_id=Path(args.dataset).stem)
        payload["baseline"] = _baseline_metrics(cfg, model, _select_slice(cfg, ds, args.slice))

    stem = Path(args.predictions).stem
    out = Path(args.out) if args.out else cfg.report_dir / f"report_{stem}.json"
    _write_json(payload, out)

    plot_path = out.with_name(f"cumulative_{stem}.csv")
    with open(plot_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_s", "cum_observed", "cum_median", "cum_lo95", "cum_hi95"])
        for row in zip(
            report.time_s,
            report.cumulative["observed"],
            report.cumulative["median"],
            report.cumulative["lower95"],
            report.cumulative["upper95"],
        ):
            writer.writerow([repr(float(v)) for v in row])

    print(f"rmse {report.rmse:.3f}, coverage95 {report.coverage95:.3f}; report at {out}")
    return EXIT_OK


# --- argument parsing ------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; the CLI contract reserves 2 for
    # I/O problems, so remap usage to exit code 1.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="xcal", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", required=True, help="path to the run config JSON")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")

    p = sub.add_parser("simulate", help="generate the synthetic engine fleet")
    common(p)
    p.add_argument("--out", default=None, help="output directory (default: paths.data_dir)")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("train", help="train the surrogate on nominal data")
    common(p)
    p.add_argument("--out", default=None, help="model artifact path")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("calibrate", help="infer bias posteriors for one engine dataset")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--epsilon", type=float, default=None, help="skip the pilot phase")
    p.add_argument("--out", default=None, help="posterior artifact path")
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("predict", help="posterior-predictive ensemble on a dataset slice")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--posterior", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--slice", choices=("holdout", "full", "calibration"), default="holdout")
    p.add_argument("--out", default=None, help="ensemble CSV path")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("evaluate", help="score an ensemble CSV against its observations")
    common(p)
    p.add_argument("--predictions", required=True, help="ensemble CSV from `predict`")
    p.add_argument("--model", default=None, help="optional: adds an uncalibrated baseline row")
    p.add_argument("--dataset", default=None, help="dataset for the baseline row")
    p.add_argument("--slice", choices=("holdout", "full", "calibration"), default="holdout")
    p.add_argument("--out", default=None, help="report JSON path")
    p.set_defaults(func=_cmd_evaluate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit:
        raise
    except InvalidConfig as exc:
        print(f"xcal: invalid config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NoSamplesAccepted, EmptyPosterior, DegeneratePrior) as exc:
        print(f"xcal: inference failed: {exc}", file=sys.stderr)
        return EXIT_INFERENCE
    except ProvenanceMismatch as exc:
        print(f"xcal: {exc}", file=sys.stderr)
        return EXIT_PROVENANCE
    except (XcalError, OSError) as exc:
        print(f"xcal: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    raise SystemExit(main())
