from dataclasses import replace

import numpy as np
import pytest

from core.errors import ConvergenceError, GridMismatchError
from core.grid import GridFunction, coordinates, inner_l2, norm_l2
from core.seeding import STREAM_DIAGNOSTICS, path_generator
from core.wave import (
    adjoint_residual,
    apply_linearization,
    apply_projection_complement,
    closed_form_front,
    closed_form_speed,
    evaluate_chi,
    evaluate_f,
    evaluate_f_prime,
    evaluate_g,
    load_profile,
    richardson_wave,
    save_profile,
    semigroup_bound_estimate,
    semigroup_step,
    solve_deterministic_wave,
    traveling_wave_residual,
)
from schemas.config import GridSpec, NagumoParams


def test_nonlinearities(params):
    u = np.array([0.0, params.a, 1.0, 0.5])
    np.testing.assert_allclose(evaluate_f(u, params)[:3], 0.0)
    h = 1e-6
    np.testing.assert_allclose(
        evaluate_f_prime(u, params), (evaluate_f(u + h, params) - evaluate_f(u - h, params)) / (2 * h), atol=1e-8
    )


def test_cutoff_plateau_and_support(params):
    assert evaluate_chi(0.5, params) == 1.0
    assert evaluate_chi(-1.0, params) == 1.0 and evaluate_chi(2.0, params) == 1.0
    assert evaluate_chi(-2.5, params) == 0.0 and evaluate_chi(3.5, params) == 0.0
    assert 0.0 < evaluate_chi(-1.5, params) < 1.0
    u = np.linspace(-1.0, 2.0, 31)
    np.testing.assert_allclose(evaluate_g(u, params), u * (1 - u))


def test_closed_forms():
    assert closed_form_front(0.0, 1.0, 0.25) == pytest.approx(0.5)
    assert closed_form_speed(1.0, 0.25) == pytest.approx(np.sqrt(2.0) / 4.0)
    assert closed_form_speed(1.0, 0.5) == 0.0


def test_reference_wave(wave, params, grid):
    assert wave.residual <= 1e-10
    assert wave.speed == pytest.approx(closed_form_speed(params.rho, params.a), abs=2e-3)
    exact = closed_form_front(coordinates(grid), params.rho, params.a)
    assert np.max(np.abs(wave.profile.values - exact)) < 5e-3
    assert wave.profile.values[0] == 1.0 and wave.profile.values[-1] == 0.0
    assert np.all(np.diff(wave.profile.values) <= 1e-8)
    assert np.max(np.abs(traveling_wave_residual(wave.profile, wave.speed, params).values)) <= 1e-10


def test_symmetric_detuning_gives_standing_front(grid):
    w = solve_deterministic_wave(NagumoParams(a=0.5), grid)
    assert abs(w.speed) < 1e-8


@pytest.mark.parametrize("a", [0.1, 0.25, 0.4])
def test_wave_matches_closed_form_on_wide_domain(a):
    p = NagumoParams(a=a)
    grid = GridSpec(half_length=40.0, points=2048)
    exact_speed = closed_form_speed(1.0, a)
    exact_front = closed_form_front(coordinates(grid), 1.0, a)

    plain = solve_deterministic_wave(p, grid)
    assert plain.speed == pytest.approx(exact_speed, abs=1e-5)
    assert np.max(np.abs(plain.profile.values - exact_front)) < 1e-4

    extrapolated = richardson_wave(p, grid)
    assert extrapolated.speed == pytest.approx(exact_speed, abs=1e-5)
    assert np.max(np.abs(extrapolated.profile.values - exact_front)) < 1e-4


def test_newton_failure_carries_history(params, grid):
    with pytest.raises(ConvergenceError) as info:
        solve_deterministic_wave(params, grid, max_iter=0)
    assert len(info.value.residual_history) == 1
    assert "final residual" in str(info.value)


def test_warm_start_grid_must_match(wave, params):
    with pytest.raises(GridMismatchError):
        solve_deterministic_wave(params, GridSpec(half_length=20.0, points=256), init=wave)


def test_adjoint_normalization_and_kernel(wave, spectral, params):
    assert inner_l2(wave.derivative, spectral.psi_tw) == pytest.approx(1.0, abs=1e-8)
    assert spectral.normalization == pytest.approx(1.0, abs=1e-8)
    good = adjoint_residual(spectral, wave, params)
    x = coordinates(wave.grid)
    flipped = GridFunction(wave.grid, np.exp(-wave.speed * x / params.rho) * wave.derivative.values)
    bad = adjoint_residual(replace(spectral, psi_tw=flipped), wave, params)
    assert good < 1e-2
    assert bad > 10.0 * good


def test_spectral_gap(spectral):
    assert abs(spectral.neutral_eigenvalue) <= 1e-6
    assert spectral.second_eigenvalue < 0.0
    assert spectral.beta == pytest.approx(-0.5 * spectral.second_eigenvalue)
    assert spectral.beta > 0.0


def test_neutral_mode_is_front_derivative(wave, spectral):
    dphi = wave.derivative * (1.0 / norm_l2(wave.derivative))
    assert inner_l2(spectral.neutral_mode, dphi) > 0.999


def test_front_derivative_in_kernel_on_fine_grid():
    p = NagumoParams()
    w = solve_deterministic_wave(p, GridSpec(half_length=30.0, points=8193))
    image = apply_linearization(w.derivative, w, p)
    assert norm_l2(image) / norm_l2(w.derivative) < 1e-4


def test_projection_complement(wave, spectral):
    assert norm_l2(apply_projection_complement(wave.derivative, spectral, wave)) < 1e-12
    rng = np.random.default_rng(3)
    v = GridFunction(wave.grid, rng.standard_normal(wave.grid.points))
    once = apply_projection_complement(v, spectral, wave)
    twice = apply_projection_complement(once, spectral, wave)
    assert inner_l2(once, spectral.psi_tw) == pytest.approx(0.0, abs=1e-10)
    np.testing.assert_allclose(twice.values, once.values, atol=1e-10)


def test_semigroup_decays_on_complement(wave, spectral, params):
    bump = GridFunction.from_callable(wave.grid, lambda x: np.exp(-((x - 1.0) ** 2)))
    v = apply_projection_complement(bump, spectral, wave)
    start = norm_l2(v)
    for _ in range(1200):
        v = semigroup_step(v, 0.05, wave, params)
    assert norm_l2(v) < 1e-2 * start
    assert v.values[0] == 0.0 and v.values[-1] == 0.0


def test_semigroup_bound_estimate(wave, spectral, params):
    rng = path_generator(0, 0, STREAM_DIAGNOSTICS)
    bound = semigroup_bound_estimate(spectral, wave, params, rng, horizon=5.0, samples=8)
    assert np.isfinite(bound) and bound >= 1.0


def test_profile_file_round_trip(tmp_path, wave, spectral, params):
    path = save_profile(tmp_path / "profile.dat", wave, params, spectral)
    loaded = load_profile(path)
    assert loaded.speed == wave.speed
    np.testing.assert_array_equal(loaded.profile.values, wave.profile.values)
    again = solve_deterministic_wave(params, wave.grid, init=loaded)
    assert again.iterations <= 1
