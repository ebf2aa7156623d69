import pytest
import numpy as np
from rigidflow.exceptions import CflViolation, CollisionMargin, ConfigInvalid, GridMismatch, InadmissibleTestField
from rigidflow.models.fluid import CoupledState, SolverParams, StaggeredField
from rigidflow.models.geometry import BodyShape, Container, Grid
from rigidflow.models.rigid import RigidState
from rigidflow.models.scenario import Scenario
from rigidflow.models.trajectory import Trajectory
from rigidflow.numerics import diagnostics, fluid_solver, rigid_dynamics
import rigidflow.utils.scenario_util as scenario_util


def _random_field(grid: Grid, seed: int) -> StaggeredField:
    rng = np.random.default_rng(seed)
    return StaggeredField(grid, rng.standard_normal(grid.shape_u), rng.standard_normal(grid.shape_v))


def _walls(field: StaggeredField) -> float:
    return max(np.abs(field.u[[0, -1], :]).max(), np.abs(field.v[:, [0, -1]]).max())


def test_pressure_projection(grid: Grid):

    field = fluid_solver.pressure_projection(_random_field(grid, 1), 0.1)

    assert np.abs(fluid_solver.divergence(grid, field.u, field.v)).max() * grid.h < 1e-8 * max(field.max_speed(), 1.0)
    assert _walls(field) == 0.0
    assert abs(field.p.mean()) < 1e-10


def test_pressure_projection_keeps_solenoidal_fields(grid: Grid, taylor_green: StaggeredField):

    field = fluid_solver.pressure_projection(taylor_green, 1.0)

    assert np.allclose(field.u, taylor_green.u, atol=1e-9)
    assert np.allclose(field.v, taylor_green.v, atol=1e-9)


def test_compatibility_projection(grid: Grid, disk: BodyShape, body: RigidState):

    once = fluid_solver.compatibility_projection(_random_field(grid, 2), body, disk)
    twice = fluid_solver.compatibility_projection(once, body, disk)

    inside_u, inside_v = fluid_solver.body_face_mask(grid, disk, body)
    rigid_u, rigid_v = fluid_solver.rigid_face_velocity(grid, body)

    assert inside_u.any() and inside_v.any()
    assert np.abs(once.u - rigid_u)[inside_u].max() < 1e-12
    assert np.abs(once.v - rigid_v)[inside_v].max() < 1e-12
    assert np.abs(twice.u - once.u).max() < 1e-10 * max(once.max_speed(), 1.0)
    assert _walls(once) == 0.0
    assert np.all(once.p == 0.0)


def test_samplers_reproduce_grid_data(grid: Grid, taylor_green: StaggeredField, rng: np.random.Generator):

    field = StaggeredField(grid, taylor_green.u, taylor_green.v, rng.normal(size=grid.shape_p))
    centered = field.centered_velocity()
    nodes = rng.normal(size=(grid.nx + 1, grid.ny + 1))

    assert np.allclose(fluid_solver.velocity_sampler(field)(grid.u_points()[..., :2])[..., 0], field.u, atol=1e-10)
    assert np.allclose(fluid_solver.velocity_sampler(field)(grid.v_points()[..., :2])[..., 1], field.v, atol=1e-10)
    assert np.allclose(fluid_solver.center_sampler(field)(grid.centers()[..., :2]), centered, atol=1e-10)
    assert np.allclose(fluid_solver.cell_sampler(grid, centered)(grid.centers()[..., :2]), centered, atol=1e-10)
    assert np.allclose(fluid_solver.pressure_sampler(field)(grid.centers()[..., :2]), field.p, atol=1e-10)
    assert np.allclose(fluid_solver.node_sampler(grid, nodes)(grid.nodes()[..., :2]), nodes, atol=1e-10)


def test_rigid_rotation_has_no_strain(grid: Grid):

    u = -(grid.u_points()[..., 1] - 0.5)
    v = grid.v_points()[..., 0] - 0.5

    assert abs(fluid_solver.strain_inner(grid, (u, v), (u, v))) < 1e-20
    assert all(np.abs(d).max() < 1e-12 for d in fluid_solver.strain_rate(grid, u, v))


def test_viscous_operator_is_the_dissipation_gradient(grid: Grid):

    first, second = _random_field(grid, 3), _random_field(grid, 4)
    fluid_solver.zero_wall_faces(second.u, second.v)
    ku, kv = fluid_solver.viscous_operator(grid, first.u, first.v)

    pairing = grid.cell_area * float(np.sum(ku * second.u) + np.sum(kv * second.v))
    inner = fluid_solver.strain_inner(grid, (first.u, first.v), (second.u, second.v))

    assert pairing == pytest.approx(-2.0 * inner, rel=1e-10)


def test_diffuse(grid: Grid, taylor_green: StaggeredField):

    unchanged, nothing = fluid_solver.diffuse(taylor_green, 0.0, 1e-3)
    field, dissipation = fluid_solver.diffuse(taylor_green, 1e-2, 1e-3)

    assert unchanged is taylor_green
    assert nothing == 0.0
    assert dissipation > 0.0
    assert 0.5 * float(np.sum(field.u ** 2) + np.sum(field.v ** 2)) \
        < 0.5 * float(np.sum(taylor_green.u ** 2) + np.sum(taylor_green.v ** 2))


def test_advect_keeps_rest(grid: Grid):

    field = fluid_solver.advect(StaggeredField(grid), 0.1)

    assert field.max_speed() == 0.0


def test_choose_dt(grid: Grid, taylor_green: StaggeredField):

    state = CoupledState(taylor_green)
    params = SolverParams(eps=1e-2, eta_pen=1.0, t_end=0.1)
    dt = fluid_solver.choose_dt(state, params)

    assert dt <= params.cfl * grid.h / taylor_green.max_speed() * (1.0 + 1e-12)
    assert dt <= fluid_solver.DIFFUSION_TARGET * grid.h ** 2 / params.eps * (1.0 + 1e-12)
    assert params.t_end / dt == pytest.approx(round(params.t_end / dt))
    assert fluid_solver.choose_dt(state, params.with_changes(dt=1e-4)) == 1e-4


def test_check_cfl(taylor_green: StaggeredField):

    params = SolverParams(eps=0.0, eta_pen=1.0)

    with pytest.raises(CflViolation):
        fluid_solver.check_cfl(CoupledState(taylor_green), params, 1.0)

    with pytest.raises(CflViolation):
        fluid_solver.check_cfl(CoupledState(taylor_green), params.with_changes(eps=10.0), 1e-4)


def test_penalization(grid: Grid, disk: BodyShape, body: RigidState):

    params = SolverParams(eps=0.0, eta_pen=1e-2)
    state = CoupledState(StaggeredField(grid), body, 0.0, disk)

    assert fluid_solver.penalization_factor(params, 1e-2) == pytest.approx(1.0 - np.exp(-1.0))
    assert fluid_solver.penalization_defect(state) > 0.0

    with pytest.raises(ConfigInvalid):
        fluid_solver.fluid_force_on_body(state, params)

    # fluid at rest drags a body moving along +x backwards
    force, _ = fluid_solver.fluid_force_on_body(state, params, dt=1e-3)
    assert force[0] < 0.0

    free = CoupledState(StaggeredField(grid))
    assert np.allclose(fluid_solver.fluid_force_on_body(free, params, dt=1e-3)[0], 0.0)


def test_step_coupled_needs_mass_properties(grid: Grid, disk: BodyShape, body: RigidState):

    state = CoupledState(StaggeredField(grid), body, 0.0, disk)

    with pytest.raises(ConfigInvalid):
        fluid_solver.step_coupled(state, SolverParams(eps=0.0, eta_pen=1.0, dt=1e-3))


def test_run_quiescent(unit_box: Container):

    params = SolverParams(eps=1e-3, eta_pen=1e-2, t_end=0.05)
    scenario = Scenario(unit_box, params, 16, shape=BodyShape("disk", radius=0.15))
    trajectory = scenario_util.run_scenario(scenario)

    assert trajectory.status == "completed"
    assert trajectory.times[-1] == pytest.approx(0.05)
    assert trajectory.final.fluid.max_speed() < 1e-12
    assert np.abs(trajectory.final.body.V).max() < 1e-12
    assert len(trajectory.body_states) == len(trajectory.reports)
    assert np.all(trajectory.report_series("E_fluid") < 1e-20)


def test_run_energy_decays(unit_box: Container):

    params = SolverParams(eps=1e-2, eta_pen=1e-2, dt=0.0125, t_end=0.05, output_dt=0.025)
    scenario = Scenario(unit_box, params, 32, preset="taylor_green")
    trajectory = scenario_util.run_scenario(scenario)
    totals = np.array([report.total for report in trajectory.reports])

    assert np.allclose(trajectory.times, [0.0, 0.025, 0.05])
    assert totals[-1] < totals[0]
    assert trajectory.report_series("dissipation")[-1] > 0.0
    assert diagnostics.energy_inequality_residual(trajectory)["holds"]


def test_run_collision(unit_box: Container):

    params = SolverParams(eps=1e-2, eta_pen=1e-2, t_end=0.5, kappa=0.1)
    scenario = Scenario(unit_box, params, 16, shape=BodyShape("disk", radius=0.1), position=[0.8, 0.5],
                        velocity=[1.0, 0.0])

    with pytest.raises(CollisionMargin) as error:
        scenario_util.run_scenario(scenario)

    assert error.value.trajectory.status == "collision"
    assert error.value.state is not None
    assert len(error.value.trajectory.snapshots) >= 1


def test_as_ensemble(grid: Grid):

    params = SolverParams(eps=0.0, eta_pen=1.0, dt=0.1)
    runs = []
    for resolution in (32, 16):
        run = Trajectory(params, Grid.from_container(grid.container, resolution))
        run.add_snapshot(CoupledState(StaggeredField(run.grid)))
        runs.append(run)

    assert fluid_solver.as_ensemble(runs[0]) == [runs[0]]

    with pytest.raises(GridMismatch):
        fluid_solver.as_ensemble(runs)

    with pytest.raises(GridMismatch):
        fluid_solver.as_ensemble([])


def test_check_admissible(grid: Grid, disk: BodyShape, body: RigidState, rng: np.random.Generator):

    with pytest.raises(InadmissibleTestField):
        fluid_solver.check_admissible(grid, rng.normal(size=grid.shape_u), np.zeros(grid.shape_v),
                                      (np.zeros(3), np.zeros(3)))

    for testfield in scenario_util.testfield_basis(grid, disk, body):
        test_u, test_v = testfield.faces(grid, body, disk)
        fluid_solver.check_admissible(grid, test_u, test_v, testfield.rigid_part(body), body, disk)

    rigid = scenario_util.testfield_basis(grid, disk, body)[-1]
    test_u, test_v = rigid.faces(grid, body, disk)
    with pytest.raises(InadmissibleTestField):
        fluid_solver.check_admissible(grid, test_u, test_v, (np.zeros(3), np.zeros(3)), body, disk)


def test_weak_residuals_at_rest(grid: Grid, params: SolverParams):

    state = CoupledState(StaggeredField(grid))
    run = fluid_solver.run(state, params.with_changes(eps=0.0, dt=0.01))
    testfields = scenario_util.testfield_basis(grid)

    assert np.abs(fluid_solver.weak_momentum_residual(run, testfields)).max() < 1e-14
    assert np.abs(fluid_solver.weak_continuity_residual(run, scenario_util.scalar_tests(grid.container))).max() < 1e-14
    assert fluid_solver.viscous_pairing(run, testfields[0]) == 0.0
    assert fluid_solver.dissipation_norm(run) == 0.0


def test_penalization_balances_momentum(grid: Grid, disk: BodyShape, body: RigidState):

    params, dt = SolverParams(eps=0.0, eta_pen=1e-2), 1e-3
    state = CoupledState(_random_field(grid, 3), body, 0.0, disk)
    field, force, torque = fluid_solver.penalize(state, params, dt)
    du, dv = state.fluid.u - field.u, state.fluid.v - field.v
    arm_u = grid.u_points()[..., 1] - body.X[1]
    arm_v = grid.v_points()[..., 0] - body.X[0]
    lost = grid.cell_area * np.array([du.sum(), dv.sum()])
    spin = grid.cell_area * float(np.sum(arm_v * dv) - np.sum(arm_u * du))
    scale = max(float(np.abs(lost).max()), abs(spin), 1.0)

    assert np.abs(lost).max() > 0.0
    assert np.abs(force[:2] * dt - lost).max() < 1e-10 * scale
    assert abs(torque[2] * dt - spin) < 1e-10 * scale
    assert np.allclose(force, fluid_solver.fluid_force_on_body(state, params, dt=dt)[0])

    mp = rigid_dynamics.mass_properties(disk)
    moved = rigid_dynamics.step_rigid(body, mp, force, torque, dt)
    assert np.abs(mp.m * (moved.V - body.V)[:2] - lost).max() < 1e-10 * scale


def test_taylor_green_energy_decay():

    params = SolverParams(eps=0.1, eta_pen=1.0, t_end=0.5)
    scenario = Scenario(Container([0.0, 0.0], [np.pi, np.pi]), params, 32, preset="taylor_green",
                        fluid_options={"amplitude": 0.1})
    trajectory = scenario_util.run_scenario(scenario)

    assert diagnostics.decay_rate(trajectory) == pytest.approx(4.0 * params.eps, rel=0.02)


def test_energy_residual_shrinks_with_the_step(unit_box: Container):

    residuals = []
    for dt in (0.01, 0.005):
        params = SolverParams(eps=2e-2, eta_pen=1.0, dt=dt, t_end=0.1)
        scenario = Scenario(unit_box, params, 32, preset="taylor_green", fluid_options={"amplitude": 1e-3})
        trajectory = scenario_util.run_scenario(scenario)
        report = diagnostics.energy_inequality_residual(trajectory)
        residuals.append(float(np.abs(report["residual"]).max()))

        assert report["holds"]
        assert residuals[-1] < 1e-2 * trajectory.reports[0].total

    assert residuals[0] > 1.5 * residuals[1]


def test_weak_momentum_residual_shrinks_under_refinement(unit_box: Container):

    residuals = []
    for resolution in (16, 32):
        params = SolverParams(eps=1e-2, eta_pen=1.0, t_end=0.1)
        trajectory = scenario_util.run_scenario(Scenario(unit_box, params, resolution, preset="taylor_green"))
        testfields = scenario_util.testfield_basis(trajectory.grid)
        residuals.append(float(np.abs(fluid_solver.weak_momentum_residual(trajectory, testfields)).max()))

    assert residuals[0] > 0.0
    assert residuals[1] < 0.75 * residuals[0]
