import math

import numpy as np
import pytest

from dvq.embedding import (
    CorrelationCurve,
    DimensionEstimate,
    correlation_integral,
    default_radii,
    detect_saturation,
    estimate_dimension,
    fit_dimension,
    recommended_regressor_size,
)
from dvq.errors import InvalidInputError, ZeroSpreadError
from dvq.series import TimeSeries


def naive_counts(points, radii):
    """Plain double loop over pairs t < t'."""
    pts = [list(map(float, p)) for p in np.atleast_2d(points)]
    counts = [0] * len(radii)
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            dist = math.dist(pts[i], pts[j])
            for k, r in enumerate(radii):
                if dist <= r:
                    counts[k] += 1
    return counts


def test_two_points():
    c = correlation_integral([[0.0], [1.0]], [0.5, 2.0])
    assert c.c.tolist() == [0.0, 1.0]
    assert c.pair_count_total == 1


def test_three_collinear_points():
    c = correlation_integral([[0.0], [1.0], [2.0]], [1.5])
    assert c.c[0] == pytest.approx(2 / 3)


def test_radius_equal_to_distance_counts():
    c = correlation_integral([[0.0, 0.0], [3.0, 4.0]], [5.0])
    assert c.counts[0] == 1


def test_input_checks():
    with pytest.raises(InvalidInputError):
        correlation_integral([[0.0]], [1.0])
    with pytest.raises(InvalidInputError):
        correlation_integral([[0.0], [1.0]], [2.0, 1.0])
    with pytest.raises(InvalidInputError):
        correlation_integral([[0.0], [1.0]], [0.0, 1.0])


@pytest.mark.parametrize("n, dim", [(50, 1), (120, 3), (90, 6)])
def test_matches_naive_counting(rng, n, dim):
    X = rng.normal(size=(n, dim))
    radii = np.sort(rng.uniform(0.05, 4.0, size=15))
    curve = correlation_integral(X, radii)
    assert curve.counts.tolist() == naive_counts(X, radii)


def test_worker_count_does_not_change_counts(rng):
    X = rng.normal(size=(1300, 3))
    radii = default_radii(X)
    a = correlation_integral(X, radii, workers=1)
    b = correlation_integral(X, radii, workers=4)
    assert np.array_equal(a.counts, b.counts)


def test_curve_is_monotone_and_bounded(rng):
    X = rng.uniform(size=(400, 2))
    curve = correlation_integral(X, default_radii(X))
    assert np.all(np.diff(curve.counts) >= 0)
    present = np.isfinite(curve.log_c)
    assert np.all(np.exp(curve.log_c[present]) <= 1.0)
    assert curve.counts[-1] == curve.pair_count_total


def test_scale_equivariance(rng):
    X = rng.uniform(size=(800, 2))
    s = 7.5
    a = correlation_integral(X, default_radii(X))
    b = correlation_integral(X * s, default_radii(X * s))
    assert np.array_equal(a.counts, b.counts)
    assert np.allclose(b.log_r - a.log_r, math.log(s))
    ea, eb = fit_dimension(a), fit_dimension(b)
    assert abs(ea.slope - eb.slope) <= 1e-9


def test_fit_window_explicit(rng):
    X = rng.uniform(size=(1500, 1))
    curve = correlation_integral(X, default_radii(X))
    est = fit_dimension(curve, window=(-6.0, -2.0))
    assert -6.0 <= est.fit_window[0] < est.fit_window[1] <= -2.0
    assert est.slope == pytest.approx(1.0, abs=0.1)
    with pytest.raises(InvalidInputError):
        fit_dimension(curve, window=(1.0, 0.0))


def test_points_on_a_line_in_higher_dimensions():
    # regressors of a linear trend lie on a segment for every p
    s = TimeSeries.from_values(np.arange(2000) * 0.37)
    for curve, est in estimate_dimension(s, [2, 3, 4, 5, 6]):
        assert est.slope == pytest.approx(1.0, abs=0.15)


def test_white_noise_slope_grows_with_p():
    rng = np.random.default_rng(3)
    s = TimeSeries.from_values(rng.uniform(size=5000))
    slopes = [e.slope for _, e in estimate_dimension(s, [1, 2, 3])]
    for p, slope in zip([1, 2, 3], slopes):
        assert slope == pytest.approx(p, rel=0.15)
    assert not detect_saturation(slopes).saturated


def test_subsampling_is_seeded():
    rng = np.random.default_rng(9)
    s = TimeSeries.from_values(rng.normal(size=800))
    a = estimate_dimension(s, [2], max_points=300, seed=4)[0][0]
    b = estimate_dimension(s, [2], max_points=300, seed=4)[0][0]
    c = estimate_dimension(s, [2], max_points=300, seed=5)[0][0]
    assert a.pair_count_total == 300 * 299 // 2
    assert np.array_equal(a.counts, b.counts)
    assert not np.array_equal(a.counts, c.counts)


def test_constant_series_has_zero_spread():
    with pytest.raises(ZeroSpreadError):
        estimate_dimension(TimeSeries.from_values([2.0] * 300), [1, 2])


def test_too_short_series():
    with pytest.raises(InvalidInputError):
        estimate_dimension(TimeSeries.from_values(np.arange(50.0)), [1, 2])


def test_saturation_plateau_and_takens_rule():
    rep = detect_saturation([1.0, 1.02, 0.98, 1.01])
    assert rep.saturated
    assert rep.plateau_value == pytest.approx(1.0, abs=0.02)
    assert rep.recommended_p == 3
    assert rep.first_saturating_p == 1


def test_no_saturation_cases():
    assert not detect_saturation([1, 2, 3, 4]).saturated
    assert not detect_saturation([1.0]).saturated


def test_two_plateaus_are_both_reported():
    ests = [DimensionEstimate(p, s, (0.0, 1.0), 0.0) for p, s in
            zip(range(1, 8), [0.8, 1.0, 1.02, 1.9, 2.5, 2.55, 2.58])]
    rep = detect_saturation(ests)
    assert [(pl.first_p, pl.last_p) for pl in rep.plateaus] == [(2, 3), (5, 7)]
    assert rep.recommended_p == 3


@pytest.mark.parametrize("dim, p", [(0.3, 2), (1.0, 3), (1.04, 3), (1.5, 4), (2.26, 6)])
def test_recommended_size(dim, p):
    assert recommended_regressor_size(dim) == p
