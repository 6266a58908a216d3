import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xcal.errors import NonFiniteValue, TooFewValues
from xcal.transform import RANK_CLIP, QuantileTransform, TransformSet, fit_transform_set


def normal_quantile_oracle(p: float, tol: float = 1e-12) -> float:
    """Independent inverse normal CDF: bisection on math.erf."""
    lo, hi = -40.0, 40.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if 0.5 * (1.0 + math.erf(mid / math.sqrt(2.0))) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class TestFit:
    def test_uniform_grid_quantiles_are_the_grid(self):
        values = np.arange(1.0, 1001.0)
        t = QuantileTransform.fit(values, 1000)
        np.testing.assert_allclose(t.reference_quantiles, values, rtol=1e-12)

    def test_constant_data_maps_to_zero_by_mid_rank(self):
        # DERIVED: every one-sided rank interpolation lands on an endpoint of
        # [0, 1]; their average is 0.5, and the normal quantile of 0.5 is 0.
        t = QuantileTransform.fit([5.0, 5.0, 5.0, 5.0], 4)
        assert np.all(t.reference_quantiles == 5.0)
        assert t.forward(5.0) == 0.0

    def test_too_few_values(self):
        with pytest.raises(TooFewValues):
            QuantileTransform.fit([3.0])

    def test_non_finite_rejected(self):
        with pytest.raises(NonFiniteValue):
            QuantileTransform.fit([1.0, np.nan, 2.0])

    def test_bad_quantile_count(self):
        with pytest.raises(ValueError):
            QuantileTransform.fit([1.0, 2.0, 3.0], 7)


class TestForward:
    def test_median_maps_to_zero(self):
        rng = np.random.default_rng(0)
        values = rng.exponential(10.0, size=501)
        t = QuantileTransform.fit(values, 501)
        assert t.forward(float(np.median(values))) == pytest.approx(0.0, abs=1e-9)

    def test_below_range_clips_to_finite_floor(self):
        t = QuantileTransform.fit(np.arange(100.0), 100)
        floor = normal_quantile_oracle(RANK_CLIP)
        assert t.forward(-1e9) == pytest.approx(floor, abs=1e-8)

    def test_interpolated_rank_against_oracle(self):
        # DERIVED: rank of 750 within {1..1000} is (750-1)/999; the expected
        # score is the independent normal quantile of that rank.
        t = QuantileTransform.fit(np.arange(1.0, 1001.0), 1000)
        expected = normal_quantile_oracle((750.0 - 1.0) / 999.0)
        assert t.forward(750.0) == pytest.approx(expected, abs=1e-2)
        assert expected == pytest.approx(0.674, abs=2e-3)

    def test_vector_input(self):
        t = QuantileTransform.fit(np.arange(1.0, 101.0), 100)
        out = t.forward(np.array([10.0, 50.0, 90.0]))
        assert out.shape == (3,)
        assert np.all(np.diff(out) > 0)


class TestInverse:
    def test_zero_maps_to_median(self):
        values = np.arange(1.0, 1002.0)
        t = QuantileTransform.fit(values, 1001)
        assert t.inverse(0.0) == pytest.approx(float(np.median(values)), rel=1e-12)

    def test_saturation_guard_hits_range_ends(self):
        t = QuantileTransform.fit(np.arange(1.0, 101.0), 100)
        assert t.inverse(8.0) == 100.0
        assert t.inverse(9.0) == 100.0
        assert t.inverse(-8.0) == 1.0

    def test_round_trip_on_fit_range(self):
        rng = np.random.default_rng(42)
        values = rng.normal(200.0, 40.0, size=1500)
        t = QuantileTransform.fit(values)
        span = float(values.max() - values.min())
        queries = rng.uniform(values.min(), values.max(), size=100)
        recovered = t.inverse(t.forward(queries))
        assert np.max(np.abs(recovered - queries)) <= 1e-6 * span


class TestProperties:
    @given(st.integers(0, 2**32 - 1))
    @settings(deadline=None, max_examples=25)
    def test_monotonicity_both_directions(self, seed):
        rng = np.random.default_rng(seed)
        values = rng.normal(size=64)
        t = QuantileTransform.fit(values, 32)
        x = np.sort(rng.uniform(values.min() - 1, values.max() + 1, size=20))
        fx = t.forward(x)
        assert np.all(np.diff(fx) >= 0)
        z = np.sort(rng.normal(size=20))
        assert np.all(np.diff(t.inverse(z)) >= 0)

    def test_rank_preservation(self):
        rng = np.random.default_rng(5)
        values = rng.gamma(2.0, 5.0, size=300)
        t = QuantileTransform.fit(values, 150)
        sample = rng.gamma(2.0, 5.0, size=40)
        assert np.array_equal(
            np.argsort(t.forward(sample), kind="stable"), np.argsort(sample, kind="stable")
        )

    def test_outlier_robustness_one_probe_step(self):
        rng = np.random.default_rng(11)
        values = rng.uniform(0.0, 50.0, size=400)
        n_q = 300
        base = QuantileTransform.fit(values, n_q)
        spiked = QuantileTransform.fit(np.append(values, 1e6), n_q)
        # compare in rank space: the normal CDF of the forward scores
        from scipy.special import ndtr

        mid = rng.uniform(10.0, 40.0, size=50)
        shift = np.abs(ndtr(base.forward(mid)) - ndtr(spiked.forward(mid)))
        assert np.max(shift) <= 1.0 / (n_q - 1) + 1e-9

    def test_all_outputs_finite_and_bounded(self):
        values = np.concatenate([np.arange(50.0), [1e9]])
        t = QuantileTransform.fit(values, 51)
        bound = normal_quantile_oracle(1.0 - RANK_CLIP) + 1e-8
        queries = np.array([-1e308, -5.0, 0.0, 25.0, 1e9, 1e308])
        out = t.forward(queries)
        assert np.all(np.isfinite(out))
        assert np.max(np.abs(out)) <= bound


class TestTransformSet:
    def test_windowed_columns_use_channel_transforms(self):
        rng = np.random.default_rng(2)
        a = QuantileTransform.fit(rng.uniform(0, 10, 100), 50)
        b = QuantileTransform.fit(rng.uniform(100, 200, 100), 50)
        ts = TransformSet((a, b), None)
        rows = np.array([[1.0, 150.0, 2.0, 160.0]])  # two lags of two channels
        out = ts.forward_windowed(rows)
        assert out[0, 0] == a.forward(1.0)
        assert out[0, 1] == b.forward(150.0)
        assert out[0, 2] == a.forward(2.0)
        assert out[0, 3] == b.forward(160.0)

    def test_identity_when_disabled(self):
        ts = TransformSet(None, None)
        rows = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(ts.forward_windowed(rows), rows)
        np.testing.assert_array_equal(ts.inverse_nox(rows[0]), rows[0])

    def test_payload_round_trip(self):
        rng = np.random.default_rng(9)
        values = rng.normal(size=80)
        ts = TransformSet(
            (QuantileTransform.fit(values, 40), None), QuantileTransform.fit(values**2, 40)
        )
        clone = TransformSet.from_payload(ts.to_payload())
        np.testing.assert_array_equal(
            clone.inputs[0].reference_quantiles, ts.inputs[0].reference_quantiles
        )
        assert clone.inputs[1] is None
        assert clone.nox.forward(0.5) == ts.nox.forward(0.5)

    def test_fit_transform_set_shapes(self):
        from xcal.data import EngineDataset

        rng = np.random.default_rng(4)
        ds = EngineDataset(
            np.arange(50.0), rng.uniform(0, 1, size=(50, 3)), rng.uniform(0, 100, size=50)
        )
        ts = fit_transform_set([ds], transform_inputs=True)
        assert len(ts.inputs) == 3
        assert ts.nox is not None
        ts_no_inputs = fit_transform_set([ds], transform_inputs=False)
        assert ts_no_inputs.inputs is None
