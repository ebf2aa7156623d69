from typing import List, Optional
import numpy as np
from rigidflow.exceptions import InadmissibleTestField
from rigidflow.models.fluid import SolverParams, StaggeredField
from rigidflow.models.geometry import BodyShape, Container, Grid
from rigidflow.models.rigid import RigidState
from rigidflow.models.scenario import Scenario
from rigidflow.models.verification import CheckResult
from rigidflow.numerics import diagnostics, fluid_solver
from rigidflow.utils import scenario_util
from rigidflow.utils.verification_util import run_checks


SUITE_LABEL = "fluid"

UNIT_BOX = Container([0.0, 0.0], [1.0, 1.0])
RESOLUTION = 32


def _fixture():
    grid = Grid.from_container(UNIT_BOX, RESOLUTION)
    shape = BodyShape("disk", radius=0.15)
    body = RigidState([0.5, 0.5], None, [0.3, 0.1], [0.0, 0.0, 0.5])
    return grid, shape, body


def _random_field(grid: Grid, seed: int) -> StaggeredField:
    rng = np.random.default_rng(seed)
    return StaggeredField(grid, rng.standard_normal(grid.shape_u), rng.standard_normal(grid.shape_v))


def check_projection(fault: Optional[str] = None):
    grid, _, _ = _fixture()
    field = fluid_solver.pressure_projection(_random_field(grid, 21), 1.0)
    scale = max(field.max_speed(), 1.0) / grid.h
    divergence = np.abs(fluid_solver.divergence(grid, field.u, field.v)).max() / scale
    walls = max(np.abs(field.u[[0, -1], :]).max(), np.abs(field.v[:, [0, -1]]).max())
    return [("projection_divergence", divergence, 1e-8),
            ("projection_walls", walls, 0.0)]


def check_compatibility(fault: Optional[str] = None):
    grid, shape, body = _fixture()
    once = fluid_solver.compatibility_projection(_random_field(grid, 22), body, shape)
    twice = fluid_solver.compatibility_projection(once, body, shape)
    scale = max(once.max_speed(), 1.0)
    idempotence = max(np.abs(twice.u - once.u).max(), np.abs(twice.v - once.v).max()) / scale

    inside_u, inside_v = fluid_solver.body_face_mask(grid, shape, body)
    rigid_u, rigid_v = fluid_solver.rigid_face_velocity(grid, body)
    rigid = max(np.abs(once.u - rigid_u)[inside_u].max(), np.abs(once.v - rigid_v)[inside_v].max())
    divergence = np.abs(fluid_solver.divergence(grid, once.u, once.v)).max() * grid.h / scale
    return [("compatibility_idempotence", idempotence, 1e-10),
            ("compatibility_rigid_faces", rigid, 1e-12),
            ("compatibility_divergence", divergence, 1e-8)]


def check_energy_inequality(fault: Optional[str] = None):
    params = SolverParams(eps=1e-2, eta_pen=1e-2, t_end=0.1)
    scenario = Scenario(UNIT_BOX, params, RESOLUTION, preset="taylor_green", name="taylor_green")
    report = diagnostics.energy_inequality_residual(scenario_util.run_scenario(scenario))
    return "energy_inequality", float(report["residual"].max()), report["tolerance"]


def check_taylor_green_decay(fault: Optional[str] = None):
    """Energy of the unit-wavenumber vortex decays as exp(-4 eps t)"""
    params = SolverParams(eps=0.1, eta_pen=1.0, t_end=0.5)
    box = Container([0.0, 0.0], [np.pi, np.pi])
    scenario = Scenario(box, params, 2 * RESOLUTION, preset="taylor_green", fluid_options={"amplitude": 0.1},
                        name="taylor_green")
    rate = diagnostics.decay_rate(scenario_util.run_scenario(scenario))
    return "taylor_green_decay", abs(rate / (4.0 * params.eps) - 1.0), 0.02


def check_quiescent(fault: Optional[str] = None):
    """A body at rest in fluid at rest stays at rest"""
    params = SolverParams(eps=1e-3, eta_pen=1e-2, t_end=0.05)
    scenario = Scenario(UNIT_BOX, params, RESOLUTION, shape=BodyShape("disk", radius=0.15), name="quiescent")
    final = scenario_util.run_scenario(scenario).final
    return [("quiescent_fluid", final.fluid.max_speed(), 1e-12),
            ("quiescent_body", float(np.abs(final.body.V).max() + np.abs(final.body.w).max()), 1e-12)]


def check_testfields(fault: Optional[str] = None):
    grid, shape, body = _fixture()
    rejected = []
    for testfield in scenario_util.testfield_basis(grid, shape, body):
        test_u, test_v = testfield.faces(grid, body, shape)
        try:
            fluid_solver.check_admissible(grid, test_u, test_v, testfield.rigid_part(body), body, shape)
        except InadmissibleTestField:
            rejected.append(testfield.name)
    return "testfield_admissibility", float(len(rejected)), 0.0, None, \
        f"rejected: {', '.join(rejected)}" if len(rejected) > 0 else None


CHECKS = [check_projection, check_compatibility, check_energy_inequality, check_taylor_green_decay, check_quiescent,
          check_testfields]


def run(fault: Optional[str] = None) -> List[CheckResult]:
    return run_checks(SUITE_LABEL, CHECKS, fault)
