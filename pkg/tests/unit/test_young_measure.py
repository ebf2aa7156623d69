import pytest
import numpy as np
from rigidflow.exceptions import DominationViolated, GridMismatch
from rigidflow.models.fluid import CoupledState, SolverParams, StaggeredField
from rigidflow.models.geometry import BodyShape, Grid
from rigidflow.models.rigid import RigidState
from rigidflow.models.trajectory import Trajectory
from rigidflow.numerics import young_measure
from rigidflow.utils import scenario_util


def _uniform_run(grid: Grid, velocity: list, times=(0.0, 0.1), body: RigidState = None,
                 shape: BodyShape = None) -> Trajectory:
    run = Trajectory(SolverParams(eps=0.0, eta_pen=1.0, dt=0.1), grid, shape)
    for t in times:
        fluid = StaggeredField(grid, np.full(grid.shape_u, velocity[0]), np.full(grid.shape_v, velocity[1]))
        run.add_snapshot(CoupledState(fluid, body, t, shape))
    return run


@pytest.fixture
def opposite_runs(grid: Grid):
    return [_uniform_run(grid, [1.0, 0.0]), _uniform_run(grid, [-1.0, 0.0])]


def test_from_ensemble(opposite_runs: list):

    measure = young_measure.from_ensemble(opposite_runs, 0.1)

    assert len(measure) == 2
    assert measure.t == pytest.approx(0.1)
    assert np.allclose(measure.weights, 0.5)
    assert np.allclose(measure.barycenter(), 0.0)
    assert not measure.body_mask.any()


def test_from_ensemble_puts_the_rigid_field_on_the_body(grid: Grid, disk: BodyShape, body: RigidState):

    runs = [_uniform_run(grid, [1.0, 0.0], body=body, shape=disk),
            _uniform_run(grid, [0.0, 1.0], body=body, shape=disk)]
    measure = young_measure.from_ensemble(runs, 0.0)

    assert measure.body_mask.any()
    assert np.allclose(measure.atoms[0][measure.body_mask], measure.atoms[1][measure.body_mask])
    assert np.allclose(measure.body.V, body.V)


def test_moment(opposite_runs: list):

    measure = young_measure.from_ensemble(opposite_runs, 0.0)

    assert np.allclose(young_measure.moment(measure, young_measure.kinetic_density), 0.5)
    assert np.allclose(young_measure.moment(measure, lambda u: u), 0.0)


def test_oscillation_energy(grid: Grid, opposite_runs: list):

    same = young_measure.from_ensemble([opposite_runs[0], _uniform_run(grid, [1.0, 0.0])], 0.0)

    assert young_measure.oscillation_energy(young_measure.from_ensemble(opposite_runs, 0.0)) == pytest.approx(0.5)
    assert young_measure.oscillation_energy(same) == pytest.approx(0.0, abs=1e-14)


def test_energy_defect(opposite_runs: list):

    default = young_measure.energy_defect(opposite_runs, 0.1)
    concentrated = young_measure.energy_defect(opposite_runs, 0.1, speed_cutoff=0.5)

    assert default.speed_cutoff == pytest.approx(10.0)
    assert default.concentration_estimate == 0.0
    assert default.D == pytest.approx(0.5)
    assert concentrated.concentration_estimate == pytest.approx(0.5)
    assert default.mu_bound == pytest.approx(1.0)
    assert concentrated.mu_bound == pytest.approx(2.0)
    assert concentrated.D == pytest.approx(1.0)


def _random_run(grid: Grid, rng: np.random.Generator) -> Trajectory:
    run = Trajectory(SolverParams(eps=0.0, eta_pen=1.0, dt=0.1), grid)
    fluid = StaggeredField(grid, rng.normal(size=grid.shape_u), rng.normal(size=grid.shape_v))
    run.add_snapshot(CoupledState(fluid, None, 0.0))
    return run


def test_defect_stress_carries_twice_the_defect(grid: Grid, rng: np.random.Generator):

    runs = [_random_run(grid, rng) for _ in range(3)]
    measure = young_measure.from_ensemble(runs, 0.0)
    stress = young_measure.defect_stress(measure, 1.0)
    report = young_measure.energy_defect(runs, 0.0, speed_cutoff=1.0)

    assert np.allclose(stress, np.swapaxes(stress, -1, -2))
    assert np.linalg.eigvalsh(stress).min() > -1e-12
    assert grid.cell_area * np.trace(stress, axis1=-2, axis2=-1).sum() == pytest.approx(2.0 * report.D)


def test_mu_bound_from_the_test_fields(grid: Grid, rng: np.random.Generator):

    runs = [_random_run(grid, rng) for _ in range(3)]
    testfields = scenario_util.testfield_basis(grid)
    plain = young_measure.energy_defect(runs, 0.0, float("inf"))
    tested = young_measure.energy_defect(runs, 0.0, float("inf"), testfields=testfields)
    measure = young_measure.from_ensemble(runs, 0.0)
    actions = young_measure.defect_action(young_measure.defect_stress(measure, float("inf")), grid, testfields)

    assert tested.concentration_estimate == 0.0
    assert tested.D == pytest.approx(plain.D)
    assert 0.0 < plain.mu_bound < 0.99 * 2.0 * plain.D
    assert 0.0 < tested.mu_bound < 0.5 * 2.0 * tested.D
    assert tested.mu_bound == pytest.approx(actions.max())
    assert len(actions) == len(testfields)


def test_default_speed_cutoff_at_rest(grid: Grid):

    assert np.isinf(young_measure.default_speed_cutoff(_uniform_run(grid, [0.0, 0.0])))


def test_comparison_check(opposite_runs: list):

    holds, F_inf, G_inf = young_measure.comparison_check(lambda u: u[..., 0], lambda u: np.sum(u * u, axis=-1),
                                                         opposite_runs, 0.1, speed_cutoff=0.5)

    assert holds
    assert F_inf == pytest.approx(0.0, abs=1e-12)
    assert G_inf == pytest.approx(1.0)

    with pytest.raises(DominationViolated):
        young_measure.comparison_check(lambda u: 2.0 * np.sum(u * u, axis=-1), lambda u: np.sum(u * u, axis=-1),
                                       opposite_runs, 0.1)


def test_mismatched_times(grid: Grid):

    runs = [_uniform_run(grid, [1.0, 0.0]), _uniform_run(grid, [1.0, 0.0], times=(0.0, 0.3))]

    with pytest.raises(GridMismatch):
        young_measure.from_ensemble(runs, 0.1)


def test_body_convergence(grid: Grid, disk: BodyShape, body: RigidState):

    moved = RigidState(body.X + [0.05, 0.0, 0.0], body.O, body.V, body.w)
    runs = [_uniform_run(grid, [0.0, 0.0], body=moved, shape=disk),
            _uniform_run(grid, [0.0, 0.0], body=body, shape=disk)]
    distances = young_measure.body_convergence(runs, 0.0)

    assert distances[-1] == 0.0
    assert distances[0] > 0.0
