from typing import List, Optional
import numpy as np
from rigidflow.models.geometry import BodyShape, Container, Grid
from rigidflow.models.rigid import RigidState
from rigidflow.models.verification import CheckResult
from rigidflow.numerics import diagnostics, fluid_solver, transform, young_measure
from rigidflow.numerics.rigid_dynamics import BodyHistory
from rigidflow.utils import scenario_util
from rigidflow.utils.verification_util import relative, run_checks, static_ensemble


SUITE_LABEL = "diagnostics"

UNIT_BOX = Container([0.0, 0.0], [1.0, 1.0])
RESOLUTION = 32
RADIUS = 0.1


def _body() -> RigidState:
    return RigidState([0.5, 0.5], None, [0.2, 0.1], [0.0, 0.0, 1.0])


def check_relative_energy_identical(fault: Optional[str] = None):
    """Relative energy of a field against its own transform under identical motions"""
    grid = Grid.from_container(UNIT_BOX, RESOLUTION)
    shape, mp = scenario_util.anchored_shape(BodyShape("disk", radius=RADIUS))
    body = _body()
    field = scenario_util.preset_field(grid, "taylor_green")
    runs = static_ensemble([field], body, shape)
    measure = young_measure.from_ensemble(runs, 0.0)

    history = BodyHistory.uniform_motion(body, np.linspace(0.0, 0.05, 6))
    bundle = transform.build_bundle(history, history, shape, grid, (3.0 * grid.h, 0.15, grid.h), 0.05, 0.01)
    Us = transform.transform_centered(fluid_solver.center_sampler(field), bundle, 0, shape)
    energy = diagnostics.relative_energy(measure, Us, mp=mp, Vs=bundle.Vs[0], ws=bundle.ws[0])
    scale = sum(diagnostics.kinetic_energy(measure, mp))
    return "relative_energy_identical", energy["E_rel"], 1e-12 * max(scale, 1.0)


def check_relative_energy_body(fault: Optional[str] = None):
    grid = Grid.from_container(UNIT_BOX, RESOLUTION)
    shape, mp = scenario_util.anchored_shape(BodyShape("disk", radius=RADIUS))
    body = _body()
    velocity = scenario_util.preset_field(grid, "taylor_green").centered_velocity()
    delta = 0.05
    energy = diagnostics.relative_energy(velocity, velocity, grid, mp=mp, body=body,
                                         Vs=body.V + delta * np.array([1.0, 0.0, 0.0]), ws=body.w)
    return [("relative_energy_body", relative(energy["E_rel"], 0.5 * mp.m * delta * delta), 1e-10),
            ("relative_energy_lower_bound", max(energy["lower_bound"] - energy["E_rel"], 0.0), 0.0)]


def check_gronwall(fault: Optional[str] = None):
    times = np.linspace(0.0, 1.0, 21)
    C, violation = diagnostics.gronwall_check(times, 1e-3 * np.exp(2.0 * times))
    return [("gronwall_rate", abs(C - 2.0), 1e-9),
            ("gronwall_violation", violation, 0.0)]


def check_reynolds(fault: Optional[str] = None):
    """Transport of int_F x and int_F (x^2 + y) by a rotating, translating disk with body-fitted quadrature"""
    grid = Grid.from_container(UNIT_BOX, 64)
    shape = BodyShape("disk", radius=2.0 * RADIUS)
    history = BodyHistory.uniform_motion(_body(), np.linspace(0.0, 0.2, 5))
    results = []
    for name, f in (("reynolds_linear", lambda t, x: x[..., 0]),
                    ("reynolds_quadratic", lambda t, x: x[..., 0] ** 2 + x[..., 1])):
        report = diagnostics.reynolds_check(f, history, shape, grid, df_dt=lambda t, x: np.zeros(x.shape[:-1]),
                                            delta=0.05, quadrature="fitted")
        results.append((name, float(np.abs(report["residual"]).max()) / report["scale"], 1e-6))
    return results


def _pressure_work_residual(samples: int) -> float:
    shape, mp = scenario_util.anchored_shape(BodyShape("disk", radius=RADIUS))
    first = BodyHistory.uniform_motion(_body(), np.linspace(0.0, 0.2, samples))
    times = first.times
    h = 0.005

    def pressure(t, x):
        return x[..., 0] ** 2 + t * x[..., 1]

    Vs, ws = diagnostics.transformed_body_velocities(shape, mp, first, times, pressure,
                                                     first.V[0] + np.array([0.05, 0.0, 0.0]),
                                                     first.w[0] + np.array([0.0, 0.0, 0.2]), h)
    report = diagnostics.pressure_work_identity_check(shape, mp, first, times, Vs, ws, pressure, h)
    return report["residual"] / report["scale"]


def check_pressure_work(fault: Optional[str] = None):
    """Pressure-work identity at two time steps and its observed order in the step"""
    coarse, fine = _pressure_work_residual(21), _pressure_work_residual(41)
    order = float(np.log2(coarse / fine)) if fine > 0 else float("inf")
    return [("pressure_work_identity", fine, 1e-3),
            ("pressure_work_order", order, 1.0, order >= 1.0)]


def check_pressure_load(fault: Optional[str] = None):
    shape = BodyShape("disk", radius=RADIUS)
    force, _ = diagnostics.boundary_pressure_load(shape, _body(), lambda t, x: x[..., 0], 0.0, 0.005)
    area = np.pi * RADIUS * RADIUS
    return "pressure_load", float(np.linalg.norm(force + area * np.array([1.0, 0.0, 0.0]))) / area, 1e-3


def check_body_transport(fault: Optional[str] = None):
    shape = BodyShape("disk", radius=RADIUS)
    body = RigidState([0.3, 0.4], None, [0.2, 0.1], [0.0, 0.0, 1.0])
    history = BodyHistory.uniform_motion(body, np.linspace(0.0, 0.2, 5))
    test = scenario_util.ScalarTest(UNIT_BOX, "st")
    report = diagnostics.body_transport_residual(history, shape, test)
    scale = np.pi * RADIUS * RADIUS * float(np.abs(body.V[:2]).sum())
    return "body_transport", float(np.abs(report["residual"]).max()) / scale, 1e-4


CHECKS = [check_relative_energy_identical, check_relative_energy_body, check_gronwall, check_reynolds,
          check_pressure_work, check_pressure_load, check_body_transport]


def run(fault: Optional[str] = None) -> List[CheckResult]:
    return run_checks(SUITE_LABEL, CHECKS, fault)
