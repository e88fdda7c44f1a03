import math

import mpmath
import numpy as np
import pytest

from core.chaining import (
    IncrementMetric,
    covering_number,
    dudley_closed_form,
    dudley_integral,
    growth_fits,
    holder_bound_metric,
    max_moment_bound,
    metric_table,
    moment_to_tail,
    ou_exact_metric,
    ou_increment_metric,
    simulate_ou,
    sup_growth_experiment,
    tail_moment_integral,
    tail_to_moment,
    tail_to_moment_sharp,
)
from core.errors import NonMonotoneMetricError
from core.seeding import path_generator
from schemas.config import GrowthExperimentConfig, GridSpec

mpmath.mp.dps = 50


def literal_ou_metric(t, s):
    t, s = mpmath.mpf(t), mpmath.mpf(s)
    value = (2 - mpmath.e ** (-2 * t) - mpmath.e ** (-2 * s) - 2 * (mpmath.e ** (-abs(t - s)) - mpmath.e ** (-(t + s)))) / 2
    return float(mpmath.sqrt(value))


def test_ou_metric_matches_literal_formula():
    rng = np.random.default_rng(1)
    for t, s in rng.uniform(0.0, 30.0, size=(20, 2)):
        assert ou_exact_metric(t, s) == pytest.approx(literal_ou_metric(t, s), rel=1e-10)
    assert ou_exact_metric(3.0, 3.0) == 0.0
    assert ou_exact_metric(2.0, 5.0) == ou_exact_metric(5.0, 2.0)
    # tiny increments keep full relative accuracy
    assert ou_exact_metric(10.0, 10.0 + 1e-12) == pytest.approx(literal_ou_metric(10.0, 10.0 + 1e-12), rel=1e-6)


def test_ou_metric_vectorizes():
    t = np.linspace(0.0, 5.0, 11)
    np.testing.assert_allclose(ou_exact_metric(t, 1.0), [ou_exact_metric(v, 1.0) for v in t])
    with pytest.raises(ValueError):
        ou_exact_metric(-1.0, 0.0)


def test_ou_reach_inverts_the_metric():
    metric = ou_increment_metric(100.0)
    for s in (0.0, 0.5, 3.0, 40.0):
        for nu in (0.05, 0.2, 0.6):
            end = metric.reach(s, nu)
            assert math.isfinite(end)
            assert metric(s, end) == pytest.approx(nu, rel=1e-9)
    assert math.isinf(metric.reach(0.0, 0.99))


def test_covering_numbers_bounded_and_monotone():
    for horizon in (2.0, 10.0, 100.0):
        metric = ou_increment_metric(horizon)
        counts = [covering_number(horizon, metric, nu) for nu in (0.1, 0.25, 0.5)]
        for nu, count in zip((0.1, 0.25, 0.5), counts):
            assert 1 <= count <= horizon / nu**2 + 1
        assert counts == sorted(counts, reverse=True)
        assert covering_number(horizon, metric, metric.d_max) == 1


def test_analytic_and_bisected_sweeps_agree():
    analytic = ou_increment_metric(10.0)
    bisected = IncrementMetric(evaluator=ou_exact_metric, d_max=analytic.d_max, horizon=10.0)
    for nu in (0.15, 0.3, 0.6):
        assert abs(covering_number(10.0, analytic, nu) - covering_number(10.0, bisected, nu)) <= 1


def test_stationary_sweep_fast_forwards():
    metric = holder_bound_metric(1000.0, 1.0)
    assert abs(covering_number(1000.0, metric, 0.1) - 100_000) <= 1


def test_non_monotone_metric_rejected():
    metric = IncrementMetric(evaluator=lambda t, s: abs(math.sin(t - s)), d_max=1.0, horizon=10.0)
    with pytest.raises(NonMonotoneMetricError):
        covering_number(10.0, metric, 0.1)


def test_dudley_closed_form_matches_reference_quadrature():
    for horizon in (2.0, 10.0, 1000.0):
        d = 0.8
        reference = mpmath.quad(lambda nu: mpmath.sqrt(mpmath.log(horizon * d**2 / nu**2)), [0, d])
        assert dudley_closed_form(horizon, d) == pytest.approx(float(reference), rel=1e-12)


@pytest.mark.parametrize("horizon", [100.0, 1000.0])
def test_dudley_quadrature_matches_closed_form(horizon):
    metric = holder_bound_metric(horizon, 1.0)
    value = dudley_integral(horizon, metric)
    assert value == pytest.approx(dudley_closed_form(horizon, metric.d_max), rel=1e-3)


def test_ou_entropy_below_holder_entropy():
    horizon = 50.0
    ou = dudley_integral(horizon, ou_increment_metric(horizon))
    holder = dudley_integral(horizon, holder_bound_metric(horizon, 1.0))
    assert 0.0 < ou <= holder * 1.001


def random_inputs(count=20):
    rng = np.random.default_rng(12)
    return [
        (float(rng.uniform(0.1, 3.0)), float(rng.uniform(2.0, 50.0)), int(rng.integers(1, 7)), float(rng.uniform(0.1, 3.0)))
        for _ in range(count)
    ]


def test_converters_match_high_precision_reference():
    for theta, A, p, ratio in random_inputs():
        vartheta = ratio * theta
        tail = 2 * mpmath.exp(-mpmath.mpf(vartheta) ** 2 / (2 * mpmath.e * mpmath.mpf(theta) ** 2))
        assert moment_to_tail(theta, vartheta) == pytest.approx(float(tail), rel=1e-12)
        moment = (mpmath.mpf(p) ** p + mpmath.log(A) ** p) * (8 * mpmath.e * mpmath.mpf(theta) ** 2) ** p
        assert tail_to_moment(A, theta, p) == pytest.approx(float(moment), rel=1e-12)
        n = int(A)
        maximum = (mpmath.mpf(p) ** p + mpmath.log(n) ** p) * (8 * mpmath.e * mpmath.mpf(theta) ** 2) ** p
        assert max_moment_bound(n, theta, p) == pytest.approx(float(maximum), rel=1e-12)


def test_tail_moment_chain_is_ordered():
    for theta, A, p, _ in random_inputs():
        exact = tail_moment_integral(A, theta, p)
        w0 = 2 * p + mpmath.log(A)
        scale = 2 * mpmath.e * mpmath.mpf(theta) ** 2
        reference = (scale * w0) ** p + 2 * p * A * scale**p * mpmath.gammainc(p, w0)
        assert exact == pytest.approx(float(reference), rel=1e-10)
        assert exact <= tail_to_moment_sharp(A, theta, p) <= tail_to_moment(A, theta, p)


def test_moment_tail_round_trip_is_consistent():
    # a variable with p^p theta^{2p} moments has the tail 2 exp(...), i.e. A = 2 is admissible
    for theta, _, p, _ in random_inputs():
        assert p**p * theta ** (2 * p) <= tail_to_moment(2.0, theta, p)


def test_converter_argument_checks():
    with pytest.raises(ValueError):
        tail_to_moment(1.5, 1.0, 1)
    with pytest.raises(ValueError):
        max_moment_bound(2, 1.0, 0)
    with pytest.raises(ValueError):
        moment_to_tail(0.0, 1.0)


def test_max_moment_bound_holds_for_gaussians():
    rng = np.random.default_rng(4)
    samples = rng.standard_normal((20_000, 100))
    # standard normals satisfy E Y^{2p} <= p^p for p = 1, 2, 3
    empirical = np.mean(np.max(samples**2, axis=1))
    assert empirical <= max_moment_bound(100, 1.0, 1)


def test_simulate_ou_is_the_exact_recursion():
    dt = 0.1
    path = simulate_ou(5.0, dt, path_generator(3, 0))
    normals = path_generator(3, 0).standard_normal(50)
    expected = [0.0]
    for z in normals:
        expected.append(math.exp(-dt) * expected[-1] + math.sqrt((1 - math.exp(-2 * dt)) / 2) * z)
    np.testing.assert_allclose(path, expected, rtol=1e-12, atol=1e-15)


def test_ou_transition_variance():
    rng = path_generator(8, 0)
    endpoints = np.array([simulate_ou(1.0, 1.0, rng)[-1] for _ in range(20_000)])
    assert np.var(endpoints) == pytest.approx((1 - math.exp(-2.0)) / 2, abs=0.02)


def test_growth_fits_prefer_the_right_model():
    horizons = [10.0, 100.0, 1000.0, 10000.0]
    log_fit, linear_fit = growth_fits(horizons, [1.0 + 0.5 * math.log(t) for t in horizons])
    assert log_fit.slope == pytest.approx(0.5)
    assert log_fit.aic < linear_fit.aic


def test_scalar_ou_growth_small():
    cfg = GrowthExperimentConfig(horizons=[10.0, 100.0, 1000.0], n_paths=200, chunk_size=50, seed=2)
    report = sup_growth_experiment(cfg)
    assert report.mean_sup == sorted(report.mean_sup)
    assert report.log_fit.r_squared >= 0.95
    assert report.preferred == "log"
    assert report.model_dump_json() == sup_growth_experiment(cfg, workers=2).model_dump_json()


def test_metric_table_rows():
    table = metric_table([2.0, 10.0], [0.5, 1.0])
    assert len(table.coverings) == 4
    assert all(row.covering_number <= row.upper_bound for row in table.coverings)
    assert [row.horizon for row in table.dudley] == [2.0, 10.0]
    assert all(row.ou_integral <= row.holder_integral * 1.001 for row in table.dudley)


@pytest.mark.slow
def test_scalar_ou_growth_acceptance():
    report = sup_growth_experiment(GrowthExperimentConfig())
    assert report.log_fit.r_squared >= 0.99
    assert report.preferred == "log"


@pytest.mark.slow
def test_convolution_growth_acceptance():
    cfg = GrowthExperimentConfig(
        process="semigroup_convolution",
        horizons=[10.0, 100.0, 1000.0],
        n_paths=200,
        grid=GridSpec(half_length=20.0, points=256),
    )
    report = sup_growth_experiment(cfg, workers=2)
    assert report.log_fit.r_squared >= 0.95
    assert report.preferred == "log"


def test_ou_metric_is_a_metric():
    rng = np.random.default_rng(21)
    for t, s, r in rng.uniform(0.0, 20.0, size=(500, 3)):
        assert ou_exact_metric(t, s) <= ou_exact_metric(t, r) + ou_exact_metric(r, s) + 1e-12


def test_ou_metric_dominated_by_holder_envelope():
    times = np.linspace(0.0, 10.0, 100)
    t, s = np.meshgrid(times, times)
    d_sq = ou_exact_metric(t, s) ** 2
    assert np.all(d_sq <= np.minimum(np.abs(t - s), 1.0) + 1e-15)


@pytest.mark.parametrize("horizon", [2.0, 10.0, 50.0])
def test_covering_number_subadditive_in_horizon(horizon):
    for nu in (0.1, 0.25, 0.5):
        single = covering_number(horizon, ou_increment_metric(horizon), nu)
        double = covering_number(2 * horizon, ou_increment_metric(2 * horizon), nu)
        assert single <= double <= 2 * single + 1


def test_ou_dudley_integral_grows_with_horizon():
    values = [dudley_integral(t, ou_increment_metric(t)) for t in (2.0, 5.0, 10.0, 50.0, 100.0)]
    assert values == sorted(values)
    assert values[0] > 0.0


def test_moment_to_tail_bounds_gaussian_tails():
    # |N(0, s^2)| has E Z^{2p} = (2p-1)!! s^{2p} <= p^p (2 s^2)^p
    scale = 1.3
    theta = math.sqrt(2.0) * scale
    z = np.abs(np.random.default_rng(17).normal(0.0, scale, 200_000))
    for vartheta in np.linspace(0.0, 6.0 * scale, 25):
        assert np.mean(z > vartheta) <= moment_to_tail(theta, vartheta)


def test_ou_ensemble_moments():
    n = 20_000
    paths = simulate_ou(2.0, 0.1, path_generator(9, 0), size=n)
    assert paths.shape == (n, 21)
    x1, x2 = paths[:, 10], paths[:, 20]
    var2 = -0.5 * math.expm1(-4.0)
    assert abs(np.mean(x2)) <= 3 * math.sqrt(var2 / n)
    rho = math.exp(-1.0) * math.sqrt(math.expm1(-2.0) / math.expm1(-4.0))
    assert abs(np.corrcoef(x1, x2)[0, 1] - rho) <= 3 * (1 - rho**2) / math.sqrt(n)


def test_batched_ou_continues_from_start():
    whole = simulate_ou(4.0, 0.1, path_generator(5, 1), size=1)
    rng = path_generator(5, 1)
    first = simulate_ou(2.0, 0.1, rng, size=1)
    second = simulate_ou(2.0, 0.1, rng, size=1, start=first[:, -1])
    np.testing.assert_allclose(np.concatenate([first, second[:, 1:]], axis=1), whole, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(whole[0], simulate_ou(4.0, 0.1, path_generator(5, 1)), rtol=1e-12, atol=1e-15)


def test_convolution_growth_small():
    cfg = GrowthExperimentConfig(
        process="semigroup_convolution",
        horizons=[2.0, 4.0, 8.0],
        n_paths=100,
        chunk_size=50,
        seed=3,
        grid=GridSpec(half_length=20.0, points=128),
    )
    report = sup_growth_experiment(cfg)
    assert report.mean_sup == sorted(report.mean_sup)
    assert report.mean_sup[0] > 0.0
    assert all(math.isfinite(v) for v in report.stderr_sup)
    assert report.model_dump_json() == sup_growth_experiment(cfg, workers=2).model_dump_json()
