import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dvq.dvq import (
    DvqModel,
    extract_scalars,
    fit,
    forecast,
    forecast_origin,
    monte_carlo,
    predict_step,
    simulate,
    transition_from_classes,
)
from dvq.errors import EmptyResultError, InvalidInputError, UnfillableGapError
from dvq.series import TimeSeries, pair_matrices, preprocess
from dvq.som import Codebook, TrainSchedule

QUICK = TrainSchedule.quick(6)


def make_model(reg, defs, T, p, d, preprocessing="none"):
    return DvqModel(Codebook(np.asarray(reg, float)), Codebook(np.asarray(defs, float)),
                    np.asarray(T, float), p, d, preprocessing)


def recount(model, series):
    """Class counts by exhaustive scan of the stored codebooks."""
    work = preprocess(series, model.preprocessing)
    X, Y, _ = pair_matrices(work, model.m, model.d)
    counts = np.zeros((model.n1, model.n2), dtype=int)
    for x, y in zip(X, Y):
        i = min(range(model.n1), key=lambda k: (np.sum((x - model.regressor_codebook.prototypes[k]) ** 2), k))
        j = min(range(model.n2), key=lambda k: (np.sum((y - model.deformation_codebook.prototypes[k]) ** 2), k))
        counts[i, j] += 1
    return counts


def test_toy_transition():
    counts, T = transition_from_classes([0, 0, 1], [0, 1, 0], 2, 2)
    assert T.tolist() == [[0.5, 0.5], [1.0, 0.0]]
    assert counts.tolist() == [[1, 1], [1, 0]]


def test_empty_rows_are_uniform():
    counts, T = transition_from_classes([0, 0], [1, 2], 3, 4)
    assert T[1].tolist() == [0.25] * 4 and T[2].tolist() == [0.25] * 4


def test_single_deformation_class_gives_ones(sine_series):
    model = fit(sine_series, 3, 1, 8, 1, schedule=QUICK, seed=0)
    assert np.all(model.transition == 1.0)


@pytest.mark.parametrize("prep", ["none", "difference", "returns"])
def test_transition_matches_recount(sine_series, prep):
    model = fit(sine_series, 3, 2, 12, 6, prep, QUICK, seed=4)
    assert np.all(np.abs(model.transition.sum(axis=1) - 1) <= 1e-12)
    assert np.array_equal(model.counts, recount(model, sine_series))
    rows = model.counts.sum(axis=1, keepdims=True)
    nz = rows[:, 0] > 0
    assert np.array_equal(model.transition[nz], model.counts[nz] / rows[nz])


def test_fit_needs_pairs():
    with pytest.raises(EmptyResultError):
        fit(TimeSeries.from_values([1.0, 2.0, 3.0]), 3, 1, 2, 2)


def test_fit_warns_on_little_data(sine_series):
    short = TimeSeries.from_values(sine_series.values[:60])
    with pytest.warns(UserWarning):
        fit(short, 3, 1, 10, 5, schedule=QUICK)


def test_fit_is_deterministic(sine_series):
    a = fit(sine_series, 3, 1, 10, 4, schedule=QUICK, seed=9)
    b = fit(sine_series, 3, 1, 10, 4, schedule=QUICK, seed=9)
    assert np.array_equal(a.regressor_codebook.prototypes, b.regressor_codebook.prototypes)
    assert np.array_equal(a.transition, b.transition)


def test_model_json_roundtrip(tmp_path, sine_series):
    model = fit(sine_series, 2, 2, 6, 3, "difference", QUICK, seed=1)
    model.save(tmp_path / "m.json")
    back = DvqModel.load(tmp_path / "m.json")
    assert np.array_equal(back.transition, model.transition)
    assert np.array_equal(back.counts, model.counts)
    assert (back.p, back.d, back.preprocessing) == (2, 2, "difference")
    e1 = forecast(model, sine_series, 6, 10, seed=3)
    e2 = forecast(back, sine_series, 6, 10, seed=3)
    assert np.array_equal(e1.trajectories, e2.trajectories)


def test_model_shape_checks():
    with pytest.raises(InvalidInputError):
        make_model([[0.0, 0.0]], [[1.0]], [[1.0]], 2, 1)
    with pytest.raises(InvalidInputError):
        make_model([[0.0]], [[1.0]], [[0.5, 0.5]], 1, 1)


def test_predict_step_deterministic_law(rng):
    model = make_model([[0, 0, 0]], [[0.5, 1, 2]], [[1.0]], 3, 1)
    x = np.array([1.0, 2.0, 3.0])
    assert predict_step(model, x, rng).tolist() == [1.5, 3.0, 5.0]
    onehot = make_model([[0.0]], [[1.0], [2.0], [3.0]], [[0, 1, 0]], 1, 1)
    assert all(predict_step(onehot, [0.0], rng)[0] == 2.0 for _ in range(50))


def test_predict_step_rejects_bad_input(rng):
    model = make_model([[0.0]], [[1.0]], [[1.0]], 1, 1)
    with pytest.raises(InvalidInputError):
        predict_step(model, [np.nan], rng)
    with pytest.raises(InvalidInputError):
        predict_step(model, [1.0, 2.0], rng)


def test_sampling_frequencies():
    f = np.array([0.1, 0.0, 0.35, 0.05, 0.5])
    model = make_model([[0.0]], np.arange(5.0)[:, None], [f], 1, 1)
    n = 100_000
    ens = monte_carlo(model, [0.0], 1, "recursive", n_sims=n, seed=2)
    draws = ens.trajectories[:, 0].astype(int)
    freq = np.bincount(draws, minlength=5)
    for j, fj in enumerate(f):
        sigma = np.sqrt(n * fj * (1 - fj))
        assert abs(freq[j] - n * fj) <= 3 * sigma
    assert freq[1] == 0


def test_extract_scalars():
    v = np.array([1.0, 2.0, 3.0, 4.0])
    assert extract_scalars(v, 1).tolist() == [4.0]
    assert extract_scalars(v, 2).tolist() == [3.0, 4.0]


def test_deterministic_chain(rng):
    delta = 0.25
    model = make_model([[0.0, 0.0]], [[delta, delta]], [[1.0]], 2, 1)
    traj = simulate(model, [1.0, 2.0], 3, "recursive", rng)
    assert traj.tolist() == [2.25, 2.5, 2.75]


def test_block_is_a_single_step(rng, monkeypatch):
    import dvq.dvq as mod

    calls = []
    orig = mod._step

    def counting(*a):
        calls.append(1)
        return orig(*a)

    monkeypatch.setattr(mod, "_step", counting)
    model = make_model([[0.0] * 5], [[1.0] * 5], [[1.0]], 1, 5)
    traj = simulate(model, [0.0] * 5, 5, "block", rng)
    assert len(calls) == 1 and traj.tolist() == [1.0] * 5


def test_recursive_block_is_composition():
    rng0 = np.random.default_rng(1)
    reg = rng0.normal(size=(4, 4))
    defs = rng0.normal(size=(3, 4))
    T = rng0.dirichlet(np.ones(3), size=4)
    model = make_model(reg, defs, T, 3, 2)
    x0 = rng0.normal(size=4)
    traj = simulate(model, x0, 4, "recursive_block", np.random.default_rng(8))
    r = np.random.default_rng(8)
    first = predict_step(model, x0, r)
    x1 = np.concatenate([x0[2:], extract_scalars(first, 2)])
    second = predict_step(model, x1, r)
    assert np.array_equal(traj, np.concatenate([first[-2:], second[-2:]]))


def test_strategy_checks(rng):
    model = make_model([[0.0, 0.0]], [[1.0, 1.0]], [[1.0]], 1, 2)
    with pytest.raises(InvalidInputError):
        simulate(model, [0.0, 0.0], 5, "recursive_block", rng)
    with pytest.raises(InvalidInputError):
        simulate(model, [0.0, 0.0], 4, "block", rng)
    with pytest.raises(InvalidInputError):
        simulate(model, [0.0, 0.0], 4, "recursive", rng)
    with pytest.raises(InvalidInputError):
        simulate(model, [0.0, 0.0], 4, "sideways", rng)


def test_deterministic_ensemble_has_zero_spread():
    model = make_model([[0.0, 0.0]], [[0.1, 0.1]], [[1.0]], 2, 1)
    ens = monte_carlo(model, [0.3, 0.7], 10, "recursive", n_sims=50, seed=1)
    assert np.all(ens.std == 0)
    assert np.array_equal(ens.mean, ens.trajectories[0])


def test_single_simulation_mean(sine_series):
    model = fit(sine_series, 3, 1, 10, 5, schedule=QUICK, seed=1)
    ens = forecast(model, sine_series, 8, n_sims=1, seed=5)
    assert np.array_equal(ens.mean, ens.trajectories[0])


def test_expected_one_step_mean():
    f = np.array([0.3, 0.7])
    defs = np.array([[0.0, -1.0], [0.0, 2.0]])
    model = make_model([[0.0, 0.0]], defs, [f], 2, 1)
    n = 100_000
    ens = monte_carlo(model, [1.0, 4.0], 1, "recursive", n_sims=n, seed=6)
    expected = 4.0 + f @ defs[:, -1]
    sd = np.sqrt(f @ (defs[:, -1] - f @ defs[:, -1]) ** 2)
    assert abs(ens.mean[0] - expected) <= 3 * sd / np.sqrt(n)


def test_summaries_are_functions_of_trajectories(sine_series):
    model = fit(sine_series, 3, 1, 10, 5, schedule=QUICK, seed=1)
    ens = forecast(model, sine_series, 5, n_sims=40, seed=2)
    assert np.allclose(ens.mean, ens.trajectories.mean(axis=0), atol=1e-12)
    assert np.allclose(ens.std, ens.trajectories.std(axis=0), atol=1e-12)
    for q, v in ens.quantiles.items():
        assert np.array_equal(v, np.quantile(ens.trajectories, q, axis=0))


def test_monte_carlo_reproducible_and_worker_independent(sine_series):
    model = fit(sine_series, 3, 2, 10, 5, schedule=QUICK, seed=1)
    x, a = forecast_origin(model, sine_series, len(sine_series) - 1)
    e1 = monte_carlo(model, x, 10, "recursive_block", 64, seed=3, workers=1)
    e2 = monte_carlo(model, x, 10, "recursive_block", 64, seed=3, workers=5)
    e3 = monte_carlo(model, x, 10, "recursive_block", 20, seed=3)
    assert np.array_equal(e1.trajectories, e2.trajectories)
    # trajectory i does not depend on how many siblings it has
    assert np.array_equal(e1.trajectories[:20], e3.trajectories)


def test_forecast_inverts_preprocessing():
    x = 5.0 + 0.5 * np.arange(300)
    s = TimeSeries.from_values(x)
    model = fit(s, 2, 1, 4, 1, "difference", QUICK, seed=0)
    ens = forecast(model, s, 5, n_sims=3, seed=0)
    assert np.allclose(ens.mean, x[-1] + 0.5 * np.arange(1, 6), atol=1e-9)


def test_forecast_truncates_to_horizon(sine_series):
    model = fit(sine_series, 3, 2, 10, 5, schedule=QUICK, seed=1)
    ens = forecast(model, sine_series, 21, n_sims=5, seed=1)
    assert ens.horizon == 21


def test_forecast_origin_needs_context(sine_series):
    model = fit(sine_series, 3, 1, 10, 5, "difference", QUICK, seed=1)
    with pytest.raises(UnfillableGapError):
        forecast_origin(model, sine_series, 1)
    holed = sine_series.with_missing([100])
    with pytest.raises(UnfillableGapError):
        forecast_origin(model, holed, 101)


def _random_model(seed, d):
    r = np.random.default_rng(seed)
    p = int(r.integers(1, 4))
    m = p + d - 1
    n1, n2 = int(r.integers(1, 6)), int(r.integers(1, 6))
    T = r.dirichlet(np.ones(n2), size=n1)
    return make_model(r.normal(size=(n1, m)), r.normal(scale=2, size=(n2, m)), T, p, d)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([1, 2, 3]))
def test_boundedness(seed, d):
    model = _random_model(seed, d)
    x0 = np.random.default_rng(seed + 1).normal(size=model.m)
    h = 6 * d
    ens = monte_carlo(model, x0, h, "recursive" if d == 1 else "recursive_block", 10, seed)
    bound = np.max(np.abs(model.deformation_codebook.prototypes))
    k = np.arange(1, h + 1)
    # step k re-uses the value d positions earlier plus one deformation component
    ref = np.concatenate([x0, np.zeros(h)])
    for traj in ens.trajectories:
        ref[model.m:] = traj
        prev = ref[model.m - d + k - 1]
        assert np.all(np.abs(traj - prev) <= bound + 1e-12)
        base = x0[model.m - d + (k - 1) % d]
        assert np.all(np.abs(traj - base) <= np.ceil(k / d) * bound + 1e-9)
