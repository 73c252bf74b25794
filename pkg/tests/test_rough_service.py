# tests/test_rough_service.py
import numpy as np
import pytest
from scipy.integrate import quad_vec

from exceptions import GridMismatchError, InvalidInputError
from models import AreaBlocks, ControlledLoop, RoughLoop, SampledLoop
from services.kernel_service import KernelService


def tent_loop(v, N=64):
    xi = np.arange(N + 1) / N
    return SampledLoop(np.outer(np.minimum(xi, 1 - xi), v))


def tensor_integrand(values):
    """Z, Z' for int X (x) dX written as a vector-valued integrand with output shape (3, 3)"""
    n = values.shape[0]
    Z = np.einsum('nm,jk->nmjk', values, np.eye(3))
    Z_prime = np.broadcast_to(np.einsum('mq,jk->mjkq', np.eye(3), np.eye(3)), (n, 3, 3, 3, 3))
    return Z, Z_prime


def circle_rough_velocity(kernel, x, N, exact_areas, loops, rough):
    path = loops.circle_loop(1.0, N=N)
    area = loops.circle_arc_areas(1.0, N) if exact_areas else rough.piecewise_linear_lift(path).area
    Y = ControlledLoop.identity(RoughLoop(path, area))
    r = x - path.values
    return rough.rough_integral(kernel.eval_A(r), -kernel.grad_A(r), Y)


def circle_velocity(kernel, x):
    def integrand(xi):
        theta = 2.0 * np.pi * xi
        point = np.array([np.cos(theta), np.sin(theta), 0.0])
        tangent = 2.0 * np.pi * np.array([-np.sin(theta), np.cos(theta), 0.0])
        return kernel.eval_A(x - point) @ tangent

    value, _ = quad_vec(integrand, 0.0, 1.0, epsabs=1e-14, epsrel=1e-13)
    return value


def circle_arc_area(a, b):
    """int_a^b (X - X_a) (x) dX along the unit circle by adaptive quadrature"""
    def point(xi):
        theta = 2.0 * np.pi * xi
        return np.array([np.cos(theta), np.sin(theta), 0.0])

    def integrand(xi):
        theta = 2.0 * np.pi * xi
        tangent = 2.0 * np.pi * np.array([-np.sin(theta), np.cos(theta), 0.0])
        return np.outer(point(xi) - point(a), tangent)

    value, _ = quad_vec(integrand, a, b, epsabs=1e-14, epsrel=1e-13)
    return value


def test_lift_of_linear_piece(rough):
    v = np.array([0.5, -1.0, 2.0])
    lifted = rough.piecewise_linear_lift(tent_loop(v))
    np.testing.assert_allclose(lifted.area.blocks[3], np.outer(v, v) / (2 * 64 ** 2), rtol=1e-14)


def test_lift_satisfies_chen(rough, random_walk_loop):
    assert rough.chen_residual(rough.piecewise_linear_lift(random_walk_loop(N=64, seed=1))) < 1e-13


def test_quarter_arc_area_converges(rough, loops):
    step = np.pi / 2
    symmetric_part = None
    errors = []
    for N in (64, 128, 256):
        path = loops.circle_loop(1.0, N=N)
        composed = rough.chen_compose(rough.piecewise_linear_lift(path).area, path, 0, N // 4)
        chord = path.values[N // 4] - path.values[0]
        symmetric_part = 0.5 * (composed + composed.T)
        np.testing.assert_allclose(symmetric_part, 0.5 * np.outer(chord, chord), atol=1e-13)
        errors.append(abs(0.5 * (composed[0, 1] - composed[1, 0]) - 0.5 * (step - np.sin(step))))
    orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    assert np.all(orders > 1.9)


def test_compose_trivial_ranges(rough, random_walk_loop):
    lifted = rough.piecewise_linear_lift(random_walk_loop(N=32, seed=2))
    assert np.array_equal(rough.chen_compose(lifted.area, lifted.path, 5, 5), np.zeros((3, 3)))
    assert np.array_equal(rough.chen_compose(lifted.area, lifted.path, 5, 6), lifted.area.blocks[5])
    with pytest.raises(InvalidInputError):
        rough.chen_compose(lifted.area, lifted.path, 6, 5)


def test_compose_is_associative(rough, random_walk_loop):
    lifted = rough.piecewise_linear_lift(random_walk_loop(N=64, seed=3))
    X = lifted.path.values
    for i in range(0, 65, 8):
        for j in range(i + 2, 65, 3):
            whole = rough.chen_compose(lifted.area, lifted.path, i, j)
            for k in range(i + 1, j):
                split = (rough.chen_compose(lifted.area, lifted.path, i, k)
                         + rough.chen_compose(lifted.area, lifted.path, k, j)
                         + np.outer(X[k] - X[i], X[j] - X[k]))
                np.testing.assert_allclose(split, whole, atol=1e-13)


def test_prefix_areas_match_composition(rough, random_walk_loop):
    lifted = rough.piecewise_linear_lift(random_walk_loop(N=64, seed=4))
    prefix = rough.prefix_areas(lifted.area, lifted.path)
    for d in (1, 5, 17):
        pairs = rough.pair_areas(prefix, lifted.path, d)
        for i in (0, 10, 64 - d):
            np.testing.assert_allclose(pairs[i], rough.chen_compose(lifted.area, lifted.path, i, i + d),
                                       atol=1e-13)


def test_corrupted_pair_area_is_detected(rough, random_walk_loop):
    lifted = rough.piecewise_linear_lift(random_walk_loop(N=64, seed=5))
    whole = rough.chen_compose(lifted.area, lifted.path, 0, 64)
    blocks = np.array(lifted.area.blocks)
    blocks[5, 0, 1] += 1e-6
    corrupted = RoughLoop(lifted.path, AreaBlocks(blocks, pairs={(0, 64): whole}))
    assert rough.chen_residual(corrupted) >= 0.99e-6
    honest = RoughLoop(lifted.path, AreaBlocks(lifted.area.blocks, pairs={(0, 64): whole}))
    assert rough.chen_residual(honest) < 1e-13


def test_exact_arc_pair_areas_satisfy_chen(rough, loops):
    N = 16
    path = loops.circle_loop(1.0, N=N)
    pairs = {(i, k): circle_arc_area(i / N, k / N) for i, k in [(0, 4), (4, 11), (0, 11), (3, 16), (0, 16)]}
    exact = RoughLoop(path, AreaBlocks(loops.circle_arc_areas(1.0, N).blocks, pairs=pairs))
    assert rough.chen_residual(exact) < 1e-10

    chords = RoughLoop(path, AreaBlocks(rough.piecewise_linear_lift(path).area.blocks, pairs=pairs))
    assert rough.chen_residual(chords) > 1e-2


def test_inconsistent_supplied_pairs_are_detected(rough, loops):
    N = 16
    path = loops.circle_loop(1.0, N=N)
    pairs = {(i, k): circle_arc_area(i / N, k / N) for i, k in [(0, 4), (4, 11), (0, 11)]}
    pairs[(4, 11)] = pairs[(4, 11)] + 1e-5 * np.eye(3)
    exact = RoughLoop(path, AreaBlocks(loops.circle_arc_areas(1.0, N).blocks, pairs=pairs))
    assert rough.chen_residual(exact) >= 0.99e-5


def test_residual_unchanged_by_translation(rough, random_walk_loop):
    loop = random_walk_loop(N=48, seed=6)
    lifted = rough.piecewise_linear_lift(loop)
    moved = RoughLoop(loop.translated([10.0, -4.0, 2.0]), lifted.area)
    assert abs(rough.chen_residual(moved) - rough.chen_residual(lifted)) < 1e-12


def test_area_grid_mismatch(random_walk_loop):
    with pytest.raises(GridMismatchError):
        RoughLoop(random_walk_loop(N=16), AreaBlocks(np.zeros((8, 3, 3))))


def test_integral_of_constant_over_loop(rough, random_walk_loop):
    lifted = rough.piecewise_linear_lift(random_walk_loop(N=64, seed=7))
    Y = ControlledLoop.identity(lifted)
    Z = np.broadcast_to(np.array([1.0, -2.0, 3.0]), (65, 3))
    result = rough.rough_integral(Z, np.zeros((65, 3, 3)), Y)
    assert abs(result) < 1e-13


def test_integral_exact_on_linear_data(rough):
    v = np.array([0.5, -1.0, 2.0])
    for N in (2, 8, 64):
        lifted = rough.piecewise_linear_lift(tent_loop(v, N))
        Y = ControlledLoop.identity(lifted)
        Z, Z_prime = tensor_integrand(lifted.path.values)
        result = rough.rough_integral(Z, Z_prime, Y, 0, N // 2)
        np.testing.assert_allclose(result, 0.5 * np.outer(v / 2, v / 2), rtol=1e-12, atol=1e-15)


def test_integral_shape_checks(rough, random_walk_loop):
    Y = ControlledLoop.identity(rough.piecewise_linear_lift(random_walk_loop(N=16)))
    with pytest.raises(GridMismatchError):
        rough.rough_integral(np.zeros((16, 3)), np.zeros((16, 3, 3)), Y)
    with pytest.raises(InvalidInputError):
        rough.rough_integral(np.zeros((17, 3)), np.zeros((17, 3)), Y)


def test_compensated_sum_converges_on_circle(rough, loops, unit_field):
    kernel = KernelService(unit_field)
    x = np.array([0.3, 0.2, 0.4])
    exact = circle_velocity(kernel, x)
    for exact_areas in (True, False):
        errors = [np.linalg.norm(circle_rough_velocity(kernel, x, N, exact_areas, loops, rough) - exact)
                  for N in (256, 512, 1024)]
        assert np.log2(errors[-2] / errors[-1]) >= 1.9
        assert errors[-1] / np.linalg.norm(exact) < 1e-4


def test_compensation_removes_first_order_error_off_symmetry(rough, loops, unit_field):
    kernel = KernelService(unit_field)
    x = np.array([0.3, 0.2, 0.4])
    exact = circle_velocity(kernel, x)
    path = loops.circle_loop(1.0, N=512)
    left_point = np.einsum('nmj,nj->m', kernel.eval_A(x - path.values[:-1]), path.increments)
    compensated = circle_rough_velocity(kernel, x, 512, False, loops, rough)
    assert np.linalg.norm(left_point - exact) > 20.0 * np.linalg.norm(compensated - exact)


def test_lift_of_controlled_identity(rough, random_walk_loop):
    lifted = rough.piecewise_linear_lift(random_walk_loop(N=32, seed=8))
    np.testing.assert_allclose(rough.lift_controlled(ControlledLoop.identity(lifted)).area.blocks,
                               lifted.area.blocks, atol=1e-15)


def test_lift_of_linear_image(rough, random_walk_loop):
    lifted = rough.piecewise_linear_lift(random_walk_loop(N=64, seed=9))
    M = np.array([[1.0, 0.5, 0.0], [-0.3, 2.0, 0.1], [0.0, 0.4, 0.7]])
    Y = ControlledLoop(lifted, lifted.path.transformed(M), np.broadcast_to(M, (65, 3, 3)))
    image = rough.lift_controlled(Y)
    assert rough.chen_residual(image) < 1e-10
    for i, j in ((0, 64), (3, 40), (10, 11)):
        np.testing.assert_allclose(rough.chen_compose(image.area, image.path, i, j),
                                   M @ rough.chen_compose(lifted.area, lifted.path, i, j) @ M.T, atol=1e-12)


def test_controlled_norms(rough, random_walk_loop):
    lifted = rough.piecewise_linear_lift(random_walk_loop(N=64, seed=10))
    identity = rough.controlled_norm(ControlledLoop.identity(lifted))
    assert identity.derivative_holder == 0.0
    assert identity.remainder_holder == 0.0
    assert identity.derivative_sup == 3.0

    constant = ControlledLoop(lifted, SampledLoop(np.ones((65, 3))), np.zeros((65, 3, 3)))
    norms = rough.controlled_norm(constant)
    assert norms.d_norm == 0.0
    assert norms.d_norm_star == pytest.approx(np.sqrt(3.0))


def test_controlled_norms_scale(rough, random_walk_loop):
    lifted = rough.piecewise_linear_lift(random_walk_loop(N=64, seed=11))
    rng = np.random.default_rng(0)
    derivative = np.eye(3) + 0.1 * rng.standard_normal((65, 3, 3))
    values = SampledLoop(lifted.path.values + 0.01 * rng.standard_normal((65, 3)))
    Y = ControlledLoop(lifted, values, derivative)
    scaled = ControlledLoop(lifted, SampledLoop(3.0 * values.values), 3.0 * derivative)
    base, tripled = rough.controlled_norm(Y), rough.controlled_norm(scaled)
    assert tripled.derivative_holder == pytest.approx(3.0 * base.derivative_holder, rel=1e-12)
    assert tripled.remainder_holder == pytest.approx(3.0 * base.remainder_holder, rel=1e-12)


def test_remainder_definition(rough, random_walk_loop):
    lifted = rough.piecewise_linear_lift(random_walk_loop(N=16, seed=12))
    Y = ControlledLoop(lifted, lifted.path.translated([1.0, 2.0, 3.0]), np.broadcast_to(np.eye(3), (17, 3, 3)))
    np.testing.assert_allclose(rough.remainder(Y, 2, 9), np.zeros(3), atol=1e-14)


def test_area_seminorm_is_quadratic(rough, random_walk_loop):
    loop = random_walk_loop(N=64, seed=13)
    base = rough.area_holder_seminorm(rough.piecewise_linear_lift(loop))
    scaled = rough.area_holder_seminorm(rough.piecewise_linear_lift(SampledLoop(2.0 * loop.values)))
    assert scaled == pytest.approx(4.0 * base, rel=1e-12)


def test_rough_distance(rough, random_walk_loop):
    loop = random_walk_loop(N=64, seed=14)
    lifted = rough.piecewise_linear_lift(loop)
    assert rough.rough_distance(lifted, lifted) == 0.0
    moved = rough.piecewise_linear_lift(loop.translated([1.0, 1.0, 1.0]))
    assert rough.rough_distance(lifted, moved) < 1e-12
    assert rough.rough_distance_star(lifted, moved) == pytest.approx(np.sqrt(3.0), rel=1e-12)
    with pytest.raises(GridMismatchError):
        rough.rough_distance(lifted, rough.piecewise_linear_lift(random_walk_loop(N=32)))
