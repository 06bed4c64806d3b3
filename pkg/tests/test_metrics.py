"""Prediction metrics, location recovery and type classification."""

import csv
import io
import json
import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nsid.groundtruth import Dataset
from nsid.metrics import (
    MetricReport,
    classify_types,
    evaluate_predictions,
    fev,
    location_recovery,
    mask_peaks,
    pearson,
    test_correlation,
)

finite = st.floats(-100, 100, allow_nan=False)


def fev_oracle(pred, rates):
    out = []
    for n in range(rates.shape[1]):
        r = [float(v) for v in rates[:, n]]
        p = [float(v) for v in pred[:, n]]
        mse = statistics.fmean((a - b) ** 2 for a, b in zip(p, r))
        out.append(1.0 - mse / statistics.pvariance(r))
    return np.array(out)


class TestFEV:
    def test_perfect(self):
        r = np.random.default_rng(0).normal(size=(50, 4))
        values, valid = fev(r, r)
        np.testing.assert_array_equal(values, 1.0)
        assert valid.all()

    def test_mean_predictor_scores_zero(self):
        r = np.random.default_rng(1).normal(size=(50, 4))
        values, _ = fev(np.broadcast_to(r.mean(axis=0), r.shape), r)
        np.testing.assert_allclose(values, 0.0, atol=1e-14)

    def test_quarter_noise(self):
        rng = np.random.default_rng(2)
        r = rng.normal(0, 2.0, size=(200_000, 3))
        values, _ = fev(r + rng.normal(0, 1.0, size=r.shape), r)
        np.testing.assert_allclose(values, 0.75, atol=0.01)

    def test_zero_variance_flagged(self):
        r = np.random.default_rng(3).normal(size=(20, 3))
        r[:, 1] = 4.0
        values, valid = fev(r, r)
        assert np.isnan(values[1]) and not valid[1]
        assert valid[[0, 2]].all()

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            fev(np.zeros((3, 2)), np.zeros((2, 3)))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), finite)
    def test_matches_oracle_and_shift_invariant(self, seed, shift):
        rng = np.random.default_rng(seed)
        r = rng.normal(size=(30, 3))
        p = r + rng.normal(0, 0.5, size=r.shape)
        values, _ = fev(p, r)
        np.testing.assert_allclose(values, fev_oracle(p, r), rtol=1e-10)
        shifted, _ = fev(p + shift, r + shift)
        np.testing.assert_allclose(shifted, values, rtol=1e-8, atol=1e-8)
        assert (values <= 1.0).all()


class TestCorrelation:
    @pytest.mark.parametrize("sign", [1.0, -1.0])
    def test_affine_copies(self, sign):
        t = np.random.default_rng(0).normal(size=(40, 3))
        corr, degenerate = pearson(sign * 3.0 * t + 7.0, t)
        np.testing.assert_allclose(corr, sign, atol=1e-12)
        assert not degenerate.any()

    def test_degenerate_is_zero(self):
        t = np.random.default_rng(1).normal(size=(10, 2))
        p = t.copy()
        p[:, 0] = 2.0
        corr, degenerate = pearson(p, t)
        assert corr[0] == 0.0 and degenerate.tolist() == [True, False]

    def test_permutation_control(self):
        rng = np.random.default_rng(2)
        t = rng.normal(size=(50, 1))
        p = t + rng.normal(0, 0.1, size=t.shape)
        shuffled = [pearson(p[rng.permutation(50)], t)[0][0] for _ in range(100)]
        assert abs(np.mean(shuffled)) < 0.1
        assert pearson(p, t)[0][0] > 0.9

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, (12, 2), elements=finite), st.floats(0.1, 10), finite)
    def test_affine_invariance(self, p, scale, shift):
        t = np.arange(24.0).reshape(12, 2) ** 1.5
        base, deg = pearson(p, t)
        moved, _ = pearson(scale * p + shift, t)
        ok = ~deg & (p.std(axis=0) > 1e-3)
        np.testing.assert_allclose(moved[ok], base[ok], atol=1e-8)
        assert (np.abs(base) <= 1.0).all()

    def test_against_numpy(self):
        rng = np.random.default_rng(3)
        p, t = rng.normal(size=(30, 4)), rng.normal(size=(30, 4))
        expected = [np.corrcoef(p[:, n], t[:, n])[0, 1] for n in range(4)]
        np.testing.assert_allclose(pearson(p, t)[0], expected, rtol=1e-12)

    def test_repeat_average(self):
        rng = np.random.default_rng(4)
        rep = rng.normal(size=(8, 3, 2))
        corr, _ = test_correlation(rep.mean(axis=1), rep)
        np.testing.assert_allclose(corr, 1.0)

    def test_repeat_requirements(self):
        with pytest.raises(ValueError, match="R >= 2"):
            test_correlation(np.zeros((8, 2)), np.zeros((8, 1, 2)))
        with pytest.raises(ValueError, match="3 test stimuli"):
            test_correlation(np.zeros((2, 2)), np.zeros((2, 4, 2)))


class TestLocationRecovery:
    def test_one_hot(self):
        locs = np.array([[0, 0], [5, 3], [31, 31]])
        masks = np.zeros((3, 32, 32))
        masks[np.arange(3), locs[:, 0], locs[:, 1]] = [1.0, -2.0, 0.5]
        np.testing.assert_array_equal(mask_peaks(masks), locs)
        np.testing.assert_array_equal(location_recovery(masks, locs), 0.0)

    def test_chebyshev(self):
        masks = np.zeros((1, 10, 10))
        masks[0, 2, 7] = 1.0
        assert location_recovery(masks, [[5, 6]])[0] == 3.0

    def test_random_masks_fail(self):
        rng = np.random.default_rng(0)
        masks = rng.normal(size=(500, 32, 32))
        locs = rng.integers(0, 32, size=(500, 2))
        assert np.median(location_recovery(masks, locs)) > 2


class TestClassifyTypes:
    def test_aligned(self):
        types = np.repeat(np.arange(3), 5)
        w = np.eye(3)[types] + 0.01
        acc, confusion, predicted = classify_types(w, types)
        assert acc == 1.0
        np.testing.assert_array_equal(predicted, types)
        assert confusion.trace() == 15

    def test_channel_permutation_invariant(self):
        rng = np.random.default_rng(1)
        types = rng.integers(0, 4, size=60)
        w = rng.normal(size=(60, 6))
        w[np.arange(60), types] += 3.0
        base = classify_types(w, types)[0]
        for _ in range(5):
            assert classify_types(w[:, rng.permutation(6)], types)[0] == base

    def test_sign_ignored(self):
        types = np.array([0, 1, 0, 1])
        w = np.array([[-5.0, 1.0], [0.0, 2.0], [3.0, 0.0], [1.0, -4.0]])
        assert classify_types(w, types)[0] == 1.0

    def test_too_few_channels(self):
        with pytest.raises(ValueError):
            classify_types(np.ones((4, 1)), np.array([0, 1, 0, 1]))

    def test_chance_level(self):
        rng = np.random.default_rng(2)
        types = rng.integers(0, 2, size=2000)
        acc = classify_types(rng.normal(size=(2000, 2)), types)[0]
        assert 0.45 < acc < 0.56


class TestMetricReport:
    def test_csv_round_trip(self):
        rep = MetricReport(fev=np.array([0.5, np.nan]), corr=np.array([0.25, -0.5]),
                           location_error_px=np.array([0.0, 3.0]), predicted_type=np.array([1, 0]))
        rows = list(csv.DictReader(io.StringIO(rep.to_csv())))
        assert list(rows[0]) == ["neuron", "fev", "corr", "location_error_px", "predicted_type"]
        assert rows[1]["fev"] == "" and float(rows[0]["fev"]) == 0.5
        assert [int(r["predicted_type"]) for r in rows] == [1, 0]

    def test_aggregates_skip_nan(self):
        rep = MetricReport(fev=np.array([0.5, np.nan, 0.7]))
        agg = rep.aggregates()
        assert agg["fev_mean"] == pytest.approx(0.6) and "corr_mean" not in agg
        assert json.loads(rep.summary_json())["n_neurons"] == 3

    def test_evaluate_predictions(self):
        rng = np.random.default_rng(0)
        rates = rng.normal(size=(20, 3))
        ds = Dataset(np.zeros((20, 1, 4, 4)), rates + 0.1, rates, {"test": np.arange(10, 20)},
                     locations=np.array([[0, 0], [1, 1], [2, 2]]), type_ids=np.array([0, 1, 1]))
        masks = np.zeros((3, 4, 4))
        masks[[0, 1, 2], [0, 1, 3], [0, 1, 3]] = 1.0
        rep = evaluate_predictions(rates[10:], ds, masks=masks, feature_weights=np.array([[1, 0], [0, 1], [0, 1.0]]))
        np.testing.assert_allclose(rep.fev, 1.0)
        np.testing.assert_allclose(rep.corr, 1.0)
        np.testing.assert_array_equal(rep.location_error_px, [0, 0, 1])
        assert rep.flags["type_accuracy"] == 1.0 and rep.flags["n_zero_variance"] == 0
