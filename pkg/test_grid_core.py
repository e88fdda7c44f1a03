import numpy as np
import pytest

from core.errors import GridMismatchError, ShiftRangeError
from core.grid import (
    GridFunction,
    convolve_gaussian,
    convolve_gaussian_direct,
    coordinates,
    derivative,
    inner_l2,
    norm_h1,
    norm_l2,
    second_derivative,
    shift,
)
from core.wave import closed_form_front
from schemas.config import GridSpec

GRID = GridSpec(half_length=20.0, points=512)


def test_coordinates_cover_the_closed_interval():
    x = coordinates(GRID)
    assert x[0] == -20.0 and x[-1] == 20.0
    assert GRID.spacing == pytest.approx(40.0 / 511)


def test_grid_function_validates_and_freezes():
    with pytest.raises(ValueError):
        GridFunction(GRID, np.zeros(10))
    bad = np.zeros(GRID.points)
    bad[3] = np.nan
    with pytest.raises(ValueError):
        GridFunction(GRID, bad)
    u = GridFunction.zeros(GRID)
    with pytest.raises(ValueError):
        u.values[0] = 1.0


def test_arithmetic_and_grid_mismatch():
    u = GridFunction.constant(GRID, 2.0)
    v = GridFunction.from_callable(GRID, np.sin)
    np.testing.assert_allclose((u + v - v).values, 2.0)
    np.testing.assert_allclose((3.0 * u).values, 6.0)
    np.testing.assert_allclose((-u).values, -2.0)
    other = GridFunction.zeros(GridSpec(half_length=20.0, points=256))
    with pytest.raises(GridMismatchError):
        u + other
    with pytest.raises(GridMismatchError):
        inner_l2(u, other)


def test_trapezoid_quadrature():
    one = GridFunction.constant(GRID, 1.0)
    assert inner_l2(one, one) == pytest.approx(40.0, rel=1e-14)
    gauss = GridFunction.from_callable(GRID, lambda x: np.exp(-(x**2)))
    assert norm_l2(gauss) ** 2 == pytest.approx(np.sqrt(np.pi / 2.0), rel=1e-10)
    # ||u'||^2 = sqrt(pi/2) for u = exp(-x^2)
    assert norm_h1(gauss) ** 2 == pytest.approx(2.0 * np.sqrt(np.pi / 2.0), rel=2e-3)


def test_differences_are_exact_on_low_degree_polynomials():
    square = GridFunction.from_callable(GRID, lambda x: x**2)
    np.testing.assert_allclose(derivative(square).values, 2.0 * coordinates(GRID), atol=1e-9)
    cube = GridFunction.from_callable(GRID, lambda x: x**3)
    np.testing.assert_allclose(second_derivative(cube).values, 6.0 * coordinates(GRID), atol=1e-6)


def test_shift_translates_smooth_functions():
    gauss = GridFunction.from_callable(GRID, lambda x: np.exp(-(x**2)))
    moved = shift(gauss, 0.3)
    np.testing.assert_allclose(moved.values, np.exp(-((coordinates(GRID) + 0.3) ** 2)), atol=1e-4)
    assert shift(gauss, 0.0).values.tobytes() == gauss.values.tobytes()


def test_shift_rejects_half_the_half_length():
    u = GridFunction.zeros(GRID)
    with pytest.raises(ShiftRangeError):
        shift(u, 10.0)
    with pytest.raises(ShiftRangeError):
        shift(u, -12.0)


def test_fft_convolution_matches_direct_sum():
    rng = np.random.default_rng(7)
    u = GridFunction(GRID, rng.standard_normal(GRID.points))
    fast = convolve_gaussian(u).values
    slow = convolve_gaussian_direct(u).values
    assert np.max(np.abs(fast - slow)) <= 1e-10 * np.max(np.abs(slow))


def test_gaussian_convolution_of_gaussian():
    gauss = GridFunction.from_callable(GRID, lambda x: np.exp(-(x**2)))
    x = coordinates(GRID)
    expected = np.sqrt(np.pi / 2.0) * np.exp(-(x**2) / 2.0)
    np.testing.assert_allclose(convolve_gaussian(gauss).values, expected, atol=1e-8)


def interior_errors(points):
    grid = GridSpec(half_length=20.0, points=points)
    u = GridFunction.from_callable(grid, np.sin)
    x = coordinates(grid)
    first = np.max(np.abs(derivative(u).values - np.cos(x))[1:-1])
    second = np.max(np.abs(second_derivative(u).values + np.sin(x))[1:-1])
    return first, second


def test_differences_are_second_order():
    coarse = interior_errors(257)
    fine = interior_errors(513)
    for c, f in zip(coarse, fine):
        assert 3.5 <= c / f <= 4.5


def test_differences_of_the_front():
    grid = GridSpec(half_length=20.0, points=2048)
    x = coordinates(grid)
    front = GridFunction(grid, closed_form_front(x, 1.0, 0.25))
    s = front.values
    exact_first = -s * (1.0 - s) / np.sqrt(2.0)
    exact_second = s * (1.0 - s) * (1.0 - 2.0 * s) / 2.0
    assert np.max(np.abs(derivative(front).values - exact_first)) <= 1e-4
    assert np.max(np.abs(second_derivative(front).values - exact_second)) <= 1e-4


def localized_random(rng):
    x = coordinates(GRID)
    return GridFunction(GRID, rng.standard_normal(GRID.points) * np.exp(-(x**2) / 8.0))


def test_convolution_is_self_adjoint_and_nonnegative():
    rng = np.random.default_rng(31)
    for _ in range(10):
        u, v = localized_random(rng), localized_random(rng)
        tolerance = 1e-10 * norm_l2(u) * norm_l2(v)
        assert abs(inner_l2(convolve_gaussian(u), v) - inner_l2(u, convolve_gaussian(v))) <= tolerance
        assert inner_l2(convolve_gaussian(u), u) >= -1e-10 * norm_l2(u) ** 2


def test_convolution_of_a_spike_is_the_kernel():
    grid = GridSpec(half_length=20.0, points=401)
    spike = np.zeros(grid.points)
    spike[200] = 1.0 / grid.spacing
    x = coordinates(grid)
    np.testing.assert_allclose(convolve_gaussian(GridFunction(grid, spike)).values, np.exp(-(x**2)), atol=1e-6)


def test_convolution_of_a_constant():
    x = coordinates(GRID)
    smoothed = convolve_gaussian(GridFunction.constant(GRID, 1.0)).values
    np.testing.assert_allclose(smoothed[np.abs(x) <= 10.0], np.sqrt(np.pi), atol=1e-4)


def test_shift_round_trip():
    gauss = GridFunction.from_callable(GRID, lambda x: np.exp(-(x**2)))
    back = shift(shift(gauss, 0.37), -0.37)
    assert np.max(np.abs(back.values - gauss.values)) <= GRID.spacing**3


def test_shift_moves_the_front():
    grid = GridSpec(half_length=20.0, points=2048)
    x = coordinates(grid)
    front = GridFunction(grid, closed_form_front(x, 1.0, 0.25))
    np.testing.assert_allclose(shift(front, 0.5).values, closed_form_front(x + 0.5, 1.0, 0.25), atol=1e-4)


def test_h1_norm_of_sine():
    grid = GridSpec(half_length=np.pi, points=513)
    assert norm_h1(GridFunction.from_callable(grid, np.sin)) ** 2 == pytest.approx(2.0 * np.pi, rel=0.02)


def test_h1_norm_dominates_l2_norm():
    rng = np.random.default_rng(32)
    for _ in range(100):
        u = GridFunction(GRID, rng.standard_normal(GRID.points))
        assert norm_h1(u) >= norm_l2(u)
