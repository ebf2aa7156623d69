import pytest
import numpy as np
from rigidflow.exceptions import ConfigInvalid, GridMismatch
from rigidflow.models.fluid import CoupledState, SolverParams, StaggeredField
from rigidflow.models.geometry import BodyShape, Grid
from rigidflow.models.measure import AtomicYoungMeasure
from rigidflow.models.rigid import RigidState
from rigidflow.models.trajectory import EnergyReport, Trajectory
from rigidflow.numerics import diagnostics, rigid_dynamics
from rigidflow.numerics.rigid_dynamics import BodyHistory
from rigidflow.utils import scenario_util


@pytest.fixture
def mass(disk: BodyShape):
    return rigid_dynamics.mass_properties(disk)


def test_second_moment(mass):

    S = diagnostics.second_moment(mass.J_body)

    assert np.allclose(np.trace(S) * np.eye(3) - S, mass.J_body)


def test_node_weights(grid: Grid):

    assert diagnostics.node_weights(grid).sum() == pytest.approx(1.0)


def test_kinetic_energy_of_a_state(taylor_green: StaggeredField):

    E_fluid, E_body = diagnostics.kinetic_energy(CoupledState(taylor_green))

    assert E_fluid > 0.0
    assert E_body == 0.0


def test_kinetic_energy_of_a_measure(grid: Grid, body: RigidState, mass):

    atom = np.ones(grid.shape_p + (2,))
    measure = AtomicYoungMeasure(grid, 0.0, [0.5, 0.5], [atom, -atom], body)
    E_fluid, E_body = diagnostics.kinetic_energy(measure, mass)

    assert E_fluid == pytest.approx(1.0)
    assert E_body == pytest.approx(rigid_dynamics.body_kinetic_energy(mass, body))


def test_energy_inequality_residual(grid: Grid):

    run = Trajectory(SolverParams(eps=1e-2, eta_pen=1.0, dt=0.1), grid)
    for t, E, dissipation in [(0.0, 1.0, 0.0), (0.1, 0.9, 0.1), (0.2, 0.8, 0.25)]:
        run.add_report(EnergyReport(t, E, dissipation=dissipation))
    report = diagnostics.energy_inequality_residual(run)

    assert np.allclose(report["residual"], [0.0, 0.0, 0.05])
    assert report["tolerance"] == pytest.approx(0.01)
    assert not report["holds"]
    assert diagnostics.energy_inequality_residual(run, eps=5e-3)["holds"]


def test_relative_energy_of_identical_fields(grid: Grid, taylor_green: StaggeredField):

    velocity = taylor_green.centered_velocity()
    energy = diagnostics.relative_energy(velocity, velocity, grid)

    assert energy["E_rel"] == pytest.approx(0.0, abs=1e-14)
    assert energy["lower_bound"] == 0.0


def test_relative_energy_of_shifted_fields(grid: Grid):

    atom = np.zeros(grid.shape_p + (2,))
    energy = diagnostics.relative_energy(atom, atom + [0.0, 2.0], grid)

    assert energy["E_rel"] == pytest.approx(2.0)
    assert energy["expansion_residual"] < 1e-12


def test_relative_energy_body_part(grid: Grid, taylor_green: StaggeredField, body: RigidState, mass):

    velocity = taylor_green.centered_velocity()
    energy = diagnostics.relative_energy(velocity, velocity, grid, mp=mass, body=body,
                                         Vs=body.V + [0.1, 0.0, 0.0], ws=body.w)

    assert energy["body"] == pytest.approx(0.5 * mass.m * 0.01)
    assert energy["E_rel"] >= energy["lower_bound"]


def test_relative_energy_errors(grid: Grid):

    atom = np.zeros(grid.shape_p + (2,))

    with pytest.raises(ValueError):
        diagnostics.relative_energy(atom, atom)

    with pytest.raises(GridMismatch):
        diagnostics.relative_energy(atom, atom[:-1], grid)


def test_gronwall_check():

    times = np.linspace(0.0, 1.0, 21)
    C, violation = diagnostics.gronwall_check(times, 1e-3 * np.exp(2.0 * times))

    assert C == pytest.approx(2.0, rel=1e-9)
    assert violation == 0.0


def test_gronwall_check_from_zero():

    times = np.linspace(0.0, 1.0, 5)

    assert diagnostics.gronwall_check(times, np.zeros(5)) == (0.0, 0.0)
    assert diagnostics.gronwall_check(times, np.zeros(5), D=[0.0, 0.1, 0.2, 0.3, 0.4]) == (0.0, pytest.approx(0.4))

    with pytest.raises(GridMismatch):
        diagnostics.gronwall_check(times, np.zeros(4))


def test_fit_refinement_slack():

    dts, hs = np.array([0.1, 0.05, 0.02, 0.01]), np.array([0.2, 0.1, 0.1, 0.05])
    a, b = diagnostics.fit_refinement_slack(2.0 * dts + 3.0 * hs ** 2, dts, hs)

    assert a == pytest.approx(2.0)
    assert b == pytest.approx(3.0)


def test_boundary_pressure_load(disk: BodyShape, body: RigidState):

    force, torque = diagnostics.boundary_pressure_load(disk, body, lambda t, x: x[..., 0], 0.0, 0.005)
    area = np.pi * 0.01

    assert np.allclose(force, [-area, 0.0, 0.0], atol=1e-3 * area)
    assert np.allclose(torque, 0.0, atol=1e-5)


def test_body_transport_residual(unit_box, disk: BodyShape):

    body = RigidState([0.3, 0.4], None, [0.2, 0.1], [0.0, 0.0, 1.0])
    history = BodyHistory.uniform_motion(body, np.linspace(0.0, 0.2, 5))
    report = diagnostics.body_transport_residual(history, disk, scenario_util.ScalarTest(unit_box, "st"))

    assert report["t"].size == 3
    assert np.abs(report["residual"]).max() < 1e-4 * np.pi * 0.01 * 0.3

    with pytest.raises(ValueError):
        diagnostics.body_transport_residual(BodyHistory([0.0, 0.1], [body, body]), disk,
                                            scenario_util.ScalarTest(unit_box, "st"))


def test_pressure_work_identity_rejects_bad_rows(disk: BodyShape, body: RigidState, mass):

    history = BodyHistory.uniform_motion(body, np.linspace(0.0, 0.1, 3))

    with pytest.raises(GridMismatch):
        diagnostics.pressure_work_identity_check(disk, mass, history, history.times, np.zeros((2, 3)),
                                                 np.zeros((3, 3)), lambda t, x: x[..., 0], 0.01)


@pytest.mark.parametrize("shape_name", ["disk", "square"])
def test_reynolds_check_with_fitted_quadrature(request, unit_box, shape_name: str):

    shape = request.getfixturevalue(shape_name)
    grid = Grid.from_container(unit_box, 32)
    body = RigidState([0.5, 0.5], None, [0.2, 0.1], [0.0, 0.0, 1.0])
    history = BodyHistory.uniform_motion(body, np.linspace(0.0, 0.2, 5))

    def f(t, x):
        return x[..., 0] ** 2 + x[..., 1]

    report = diagnostics.reynolds_check(f, history, shape, grid, df_dt=lambda t, x: np.zeros(x.shape[:-1]),
                                        delta=1e-3, quadrature="fitted")

    assert report["t"].size == 3
    assert report["scale"] > 0.0
    assert np.abs(report["residual"]).max() < 1e-8 * report["scale"]


def test_reynolds_check_with_a_time_dependent_integrand(unit_box, disk: BodyShape):

    grid = Grid.from_container(unit_box, 32)
    body = RigidState([0.5, 0.5], None, [0.2, 0.1], [0.0, 0.0, 1.0])
    history = BodyHistory.uniform_motion(body, np.linspace(0.0, 0.2, 5))

    def f(t, x):
        return (1.0 + t) * x[..., 0] + t * x[..., 1]

    report = diagnostics.reynolds_check(f, history, disk, grid, quadrature="fitted")

    assert np.abs(report["residual"]).max() < 1e-10 * report["scale"]


def test_reynolds_check_with_grid_quadrature(unit_box):

    grid = Grid.from_container(unit_box, 64)
    shape = BodyShape("disk", radius=0.2)
    history = BodyHistory.uniform_motion(RigidState([0.5, 0.5], None, [0.2, 0.1], [0.0, 0.0, 1.0]),
                                         np.linspace(0.0, 0.2, 5))
    report = diagnostics.reynolds_check(lambda t, x: x[..., 0], history, shape, grid,
                                        df_dt=lambda t, x: np.zeros(x.shape[:-1]), delta=0.05)

    assert np.abs(report["residual"]).max() < 1e-2 * report["scale"]

    with pytest.raises(ConfigInvalid):
        diagnostics.reynolds_check(lambda t, x: x[..., 0], history, shape, grid, quadrature="spectral")


def _pressure_work(disk: BodyShape, body: RigidState, mass, samples: int) -> float:
    history = BodyHistory.uniform_motion(body, np.linspace(0.0, 0.2, samples))

    def pressure(t, x):
        return x[..., 0] ** 2 + t * x[..., 1]

    Vs, ws = diagnostics.transformed_body_velocities(disk, mass, history, history.times, pressure,
                                                     body.V + [0.05, 0.0, 0.0], body.w + [0.0, 0.0, 0.2], 0.005)
    report = diagnostics.pressure_work_identity_check(disk, mass, history, history.times, Vs, ws, pressure, 0.005)
    return report["residual"] / report["scale"]


def test_pressure_work_identity_converges_in_the_step(disk: BodyShape, body: RigidState, mass):

    residuals = [_pressure_work(disk, body, mass, samples) for samples in (11, 21, 41)]
    orders = np.log2(np.array(residuals[:-1]) / np.array(residuals[1:]))

    assert residuals[-1] < 1e-3
    assert np.all(orders >= 1.0)
