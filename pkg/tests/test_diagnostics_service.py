# tests/test_diagnostics_service.py
import numpy as np
import pytest
from scipy.linalg import expm

from exceptions import GridMismatchError, InsufficientDataError, InvalidInputError, MeshTooFineError
from models import ControlledLoop, EvolutionState, EvolveConfig, KernelField, LoopSpec, SampledLoop
from services.diagnostics_service import DiagnosticsService
from services.dynamics_service import DynamicsService


@pytest.fixture
def diagnostics():
    return DiagnosticsService()


def zig_zag(N=64, mesh=1.0 / 16):
    """First coordinate rises by sqrt(mesh) over one mesh cell and falls back over the next"""
    m = int(round(mesh * N))
    k = np.arange(N + 1)
    values = np.zeros((N + 1, 3))
    values[:, 0] = np.sqrt(mesh) * (1.0 - np.abs(k % (2 * m) - m) / m)
    return SampledLoop(values)


def frozen_states(reference, gradients, times):
    N = reference.N
    Y = ControlledLoop.identity(reference)
    return [
        EvolutionState(t, Y, np.zeros((N + 1, 3)), np.broadcast_to(H, (N + 1, 3, 3)).copy(), 0.0)
        for t, H in zip(times, gradients)
    ]


def test_zig_zag_covariation(diagnostics):
    mesh = 1.0 / 16
    series = diagnostics.covariation_estimate(zig_zag(64, mesh), mesh)
    xi = np.arange(65) / 64
    cell_nodes = slice(0, 65, 4)
    np.testing.assert_allclose(series.values[cell_nodes, 0, 0], xi[cell_nodes], atol=1e-14)
    assert series.values[2, 0, 0] == pytest.approx(mesh / 4.0, abs=1e-15)
    assert series.at(0.5)[0, 0] == pytest.approx(0.5, abs=1e-14)
    assert np.all(series.values[:, 1:, :] == 0.0)


def test_covariation_estimate_structure(diagnostics, random_walk_loop):
    loop = random_walk_loop(64, seed=4)
    series = diagnostics.covariation_estimate(loop, 1.0 / 16)
    assert np.array_equal(series.values[0], np.zeros((3, 3)))
    np.testing.assert_allclose(series.values, np.swapaxes(series.values, 1, 2), atol=1e-15)
    at_cells = series.values[::4]
    for step in np.diff(at_cells, axis=0):
        assert np.linalg.eigvalsh(step).min() > -1e-14


def test_mesh_validation(diagnostics, random_walk_loop):
    loop = random_walk_loop(64)
    with pytest.raises(MeshTooFineError):
        diagnostics.covariation_estimate(loop, 1.0 / 128)
    with pytest.raises(InvalidInputError):
        diagnostics.covariation_estimate(loop, 0.1)
    with pytest.raises(InvalidInputError):
        diagnostics.covariation_estimate_shift(loop, 1.5)


def test_shift_estimator_on_zig_zag(diagnostics):
    mesh = 1.0 / 16
    series = diagnostics.covariation_estimate_shift(zig_zag(64, mesh), mesh)
    # windows starting inside a cell straddle a turning point; the last cell is held at X_1
    assert series.values[-1, 0, 0] == pytest.approx(mesh * (15 * 0.375 + 0.46875), abs=1e-14)
    assert np.all(np.diff(series.values[:, 0, 0]) >= 0.0)


def test_predicted_covariation(diagnostics, random_walk_loop):
    base = diagnostics.covariation_estimate(random_walk_loop(64, seed=2), 1.0 / 16)
    eye = np.broadcast_to(np.eye(3), (65, 3, 3))
    np.testing.assert_allclose(diagnostics.covariation_predicted(eye, base).values, base.values, atol=1e-14)
    scaled = diagnostics.covariation_predicted(1.5 * eye, base)
    np.testing.assert_allclose(scaled.values, 2.25 * base.values, atol=1e-13)
    with pytest.raises(GridMismatchError):
        diagnostics.covariation_predicted(np.broadcast_to(np.eye(3), (33, 3, 3)), base)


def test_predicted_covariation_accepts_controlled_loop(diagnostics, rough, random_walk_loop):
    lifted = rough.piecewise_linear_lift(random_walk_loop(64, seed=5))
    base = diagnostics.covariation_estimate(lifted.path, 1.0 / 8)
    predicted = diagnostics.covariation_predicted(ControlledLoop.identity(lifted), base)
    np.testing.assert_allclose(predicted.values, base.values, atol=1e-14)


def test_stretching_without_circulation(diagnostics, zero_field, rough, loops):
    dynamics = DynamicsService(zero_field)
    initial = rough.piecewise_linear_lift(loops.perturbed_circle_loop(N=16), 0.5)
    history = dynamics.evolve(initial, EvolveConfig(dt=0.01, t_end=0.03, gamma=0.5)).snapshots
    report = diagnostics.stretching_decomposition(history)
    for state in report.states:
        assert np.array_equal(state.Q, np.broadcast_to(np.eye(3), state.Q.shape))
        np.testing.assert_allclose(state.M, np.broadcast_to(np.eye(3), state.M.shape), atol=1e-15)
    assert max(report.reconstruction_residual) == 0.0
    assert max(report.product_residual) == 0.0


def test_stretching_frame_for_constant_rotation(diagnostics, rough, loops):
    reference = rough.piecewise_linear_lift(loops.circle_loop(1.0, N=8))
    T0 = np.array([[0.0, 0.3, -0.1], [-0.3, 0.0, 0.2], [0.1, -0.2, 0.0]])
    times = [0.0, 0.1, 0.2, 0.3]
    for scheme in ('euler', 'heun'):
        report = diagnostics.stretching_decomposition(frozen_states(reference, [T0] * 4, times), scheme)
        for state in report.states:
            np.testing.assert_allclose(state.Q[3], expm(-state.t * T0), atol=1e-10)
            np.testing.assert_allclose(state.E[3], np.eye(3), atol=1e-12)
            np.testing.assert_allclose(state.M[3], np.eye(3), atol=1e-12)
            np.testing.assert_allclose(state.S, 0.0, atol=1e-15)


def test_stretch_for_constant_strain(diagnostics, rough, loops):
    reference = rough.piecewise_linear_lift(loops.circle_loop(1.0, N=8))
    S0 = np.array([[0.4, 0.1, 0.0], [0.1, -0.3, 0.2], [0.0, 0.2, -0.1]])
    times = [0.0, 0.1, 0.2, 0.3]
    for scheme in ('euler', 'heun'):
        report = diagnostics.stretching_decomposition(frozen_states(reference, [S0] * 4, times), scheme)
        for state in report.states:
            np.testing.assert_allclose(state.Q[3], np.eye(3), atol=1e-14)
            np.testing.assert_allclose(state.M[3], expm(state.t * S0), atol=1e-12)
            np.testing.assert_allclose(state.E[3], expm(state.t * S0), atol=1e-12)


def test_integrated_stretch_differs_from_stepwise_product(diagnostics, rough, loops):
    reference = rough.piecewise_linear_lift(loops.circle_loop(1.0, N=8))
    first = np.diag([0.5, -0.2, -0.3])
    second = np.array([[0.0, 0.4, 0.0], [0.4, 0.0, 0.0], [0.0, 0.0, 0.0]])
    times = [0.0, 0.5, 1.0]
    report = diagnostics.stretching_decomposition(frozen_states(reference, [first, second, second], times))
    final = report.states[-1]
    integral = 0.25 * first + 0.5 * second + 0.25 * second
    np.testing.assert_allclose(final.M[0], expm(integral), atol=1e-12)
    np.testing.assert_allclose(final.E[0], expm(0.5 * second) @ expm(0.5 * first), atol=1e-12)
    assert np.max(np.abs(final.M[0] - final.E[0])) > 1e-3


def test_stretching_reconstructs_derivative(diagnostics, dynamics, rough, loops):
    initial = rough.piecewise_linear_lift(loops.perturbed_circle_loop(N=32), 0.5)
    history = dynamics.evolve(initial, EvolveConfig(dt=0.005, t_end=0.05, scheme='heun', gamma=0.5)).snapshots
    report = diagnostics.stretching_decomposition(history, 'heun')
    assert len(report.states) == len(history)
    assert max(report.reconstruction_residual) < 1e-3
    assert max(report.product_residual) < 1e-3
    assert report.max_orthogonality_defect <= 1e-8


def test_stretching_needs_two_states(diagnostics, dynamics, rough, loops):
    initial = rough.piecewise_linear_lift(loops.circle_loop(1.0, N=8))
    with pytest.raises(InsufficientDataError):
        diagnostics.stretching_decomposition([dynamics.initial_state(initial, EvolveConfig())])


def test_perturbation_fields(diagnostics):
    bump = diagnostics.perturbation_field('bump', 16)
    assert bump.shape == (17, 3)
    np.testing.assert_allclose(bump[0], bump[-1], atol=1e-15)
    assert np.array_equal(diagnostics.perturbation_field('translation', 4), np.ones((5, 3)))
    custom = diagnostics.perturbation_field(lambda xi: np.column_stack([xi * 0.0, xi * 0.0, xi * 0.0]), 4)
    assert custom.shape == (5, 3)
    with pytest.raises(InvalidInputError):
        diagnostics.perturbation_field('twist', 4)


def test_lipschitz_zero_perturbation_is_sentinel(diagnostics, dynamics, rough, loops):
    initial = rough.piecewise_linear_lift(loops.circle_loop(1.0, N=16), 0.5)
    rows = diagnostics.lipschitz_experiment(initial, [0.0], EvolveConfig(dt=0.01, t_end=0.02, gamma=0.5), dynamics)
    assert rows[0].ratio is None
    assert rows[0].exact_match


def test_lipschitz_translation_does_not_separate(diagnostics, dynamics, rough, loops):
    initial = rough.piecewise_linear_lift(loops.circle_loop(1.0, N=32), 0.5)
    cfg = EvolveConfig(dt=0.01, t_end=0.05, gamma=0.5)
    rows = diagnostics.lipschitz_experiment(initial, [1e-2], cfg, dynamics, perturbation='translation')
    assert rows[0].denominator == pytest.approx(np.sqrt(3.0) * 1e-2, rel=1e-6)
    assert rows[0].ratio < 1e-8


def test_lipschitz_ratio_is_stable_under_refinement(diagnostics, dynamics, rough, loops):
    initial = rough.piecewise_linear_lift(loops.circle_loop(1.0, N=32), 0.5)
    cfg = EvolveConfig(dt=0.01, t_end=0.05, gamma=0.5)
    rows = diagnostics.lipschitz_experiment(initial, [1e-2, 1e-3, 1e-4], cfg, dynamics)
    ratios = [row.ratio for row in rows]
    assert all(ratio > 0 for ratio in ratios)
    assert not any(row.blown_up for row in rows)
    assert max(ratios) / min(ratios) < 2.0


@pytest.mark.slow
def test_shift_and_discrete_estimators_agree_on_brownian_ensemble(diagnostics, loops):
    mesh, size = 1.0 / 64, 200
    discrete, shift = np.zeros((3, 3)), np.zeros((3, 3))
    for seed in range(size):
        path = loops.generate(LoopSpec(kind='brownian', N_fine=256, N=256, seed=seed)).path
        discrete += diagnostics.covariation_estimate(path, mesh).at(0.5)
        shift += diagnostics.covariation_estimate_shift(path, mesh).at(0.5)
    expected = 0.5 * (1.0 - mesh) * np.eye(3)
    np.testing.assert_allclose(discrete / size, expected, atol=0.05)
    np.testing.assert_allclose(shift / size, expected, atol=0.05)


@pytest.mark.slow
def test_covariation_transport_under_strong_flow(diagnostics, loops):
    mesh, positions = 1.0 / 64, (0.25, 0.5, 0.75)

    def member(seed):
        return loops.generate(LoopSpec(kind='brownian', N_fine=1024, N=256, seed=seed))

    initial = np.mean([[diagnostics.covariation_estimate(member(seed).path, mesh).at(xi) for xi in positions]
                       for seed in range(200)], axis=0)
    for p, xi in enumerate(positions):
        np.testing.assert_allclose(initial[p], xi * np.eye(3), atol=0.1 * xi)

    dynamics = DynamicsService(KernelField(16.0 * np.pi, 1.0))
    cfg = EvolveConfig(dt=0.01, t_end=0.05, gamma=0.4)
    transported, untransported, departure = [], [], []
    for seed in range(50):
        loop = member(seed)
        base = diagnostics.covariation_estimate(loop.path, mesh)
        final = dynamics.evolve(loop, cfg).final
        estimate = diagnostics.covariation_estimate(final.Y.values, mesh)
        predicted = diagnostics.covariation_predicted(final.Y, base)
        departure.append(np.max(np.abs(final.Y.derivative - np.eye(3))))

        scales = np.array([np.max(np.abs(predicted.at(xi))) for xi in positions])
        transported.append([np.max(np.abs(estimate.at(xi) - predicted.at(xi))) for xi in positions] / scales)
        untransported.append([np.max(np.abs(estimate.at(xi) - base.at(xi))) for xi in positions] / scales)

    assert np.mean(departure) > 0.05
    transported, untransported = np.mean(transported, axis=0), np.mean(untransported, axis=0)
    assert np.all(transported < 0.15)
    assert np.all(transported < 0.5 * untransported)
