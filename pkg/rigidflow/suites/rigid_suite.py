from typing import List, Optional
import numpy as np
from rigidflow.models.geometry import BodyShape, rotation_about_z
from rigidflow.models.rigid import MassProperties, RigidState
from rigidflow.models.verification import CheckResult
from rigidflow.numerics import diagnostics, rigid_dynamics
from rigidflow.numerics.rigid_dynamics import BodyHistory
from rigidflow.utils.scenario_util import anchored_shape
from rigidflow.utils.verification_util import relative, run_checks


SUITE_LABEL = "rigid"

TORQUE_FREE_STEPS = 1000
TORQUE_FREE_DT = 1e-3
ORTHOGONALITY_DRIFT = 1e-9


def check_disk_mass(fault: Optional[str] = None):
    r = 0.2
    mp = rigid_dynamics.mass_properties(BodyShape("disk", radius=r))
    m = np.pi * r * r
    return [("disk_mass", relative(mp.m, m), 1e-4),
            ("disk_inertia", relative(mp.J_body[2, 2], 0.5 * m * r * r), 1e-4),
            ("disk_center", float(np.abs(mp.X0).max()), 1e-10)]


def check_ball_mass(fault: Optional[str] = None):
    r = 0.2
    mp = rigid_dynamics.mass_properties(BodyShape("ball", radius=r))
    m = 4.0 / 3.0 * np.pi * r ** 3
    inertia = max(relative(mp.J_body[k, k], 0.4 * m * r * r) for k in range(3))
    return [("ball_mass", relative(mp.m, m), 1e-4),
            ("ball_inertia", inertia, 1e-4)]


def check_torque_free(fault: Optional[str] = None):
    """Free rotation of an asymmetric top: energy, |J w| and the orthogonality of O"""
    mp = MassProperties(1.0, [0.0, 0.0, 0.0], np.diag([1.0, 2.0, 3.0]), planar=False)
    state = RigidState([0.0, 0.0, 0.0], None, [0.1, 0.0, 0.0], [0.3, 1.0, 0.2])
    energy0 = rigid_dynamics.body_kinetic_energy(mp, state)
    momentum0 = np.linalg.norm(rigid_dynamics.inertia_current(mp, state.O) @ state.w)

    energy_drift, momentum_drift, orthogonality = 0.0, 0.0, 0.0
    reorthonormalize = fault != "orthogonality"
    for _ in range(TORQUE_FREE_STEPS):
        state = rigid_dynamics.step_rigid(state, mp, np.zeros(3), np.zeros(3), TORQUE_FREE_DT, reorthonormalize)
        if not reorthonormalize:
            state = RigidState(state.X, state.O * (1.0 + ORTHOGONALITY_DRIFT), state.V, state.w, validate=False)
        energy = rigid_dynamics.body_kinetic_energy(mp, state)
        momentum = np.linalg.norm(rigid_dynamics.inertia_current(mp, state.O) @ state.w)
        energy_drift = max(energy_drift, relative(energy, energy0))
        momentum_drift = max(momentum_drift, relative(momentum, momentum0))
        orthogonality = max(orthogonality, state.orthogonality_error())

    return [("torque_free_energy", energy_drift, 1e-6),
            ("torque_free_angular_momentum", momentum_drift, 1e-6),
            ("rotation_orthogonality", orthogonality, 1e-10)]


def check_density_transport(fault: Optional[str] = None):
    shape = BodyShape("disk", radius=0.1, density=1.0, density_gradient=[0.5, 0.2])
    state = RigidState([0.5, 0.5], None, [0.2, 0.1], [0.0, 0.0, 1.5])
    history = BodyHistory.uniform_motion(state, np.linspace(0.0, 0.5, 11))
    return "density_transport", rigid_dynamics.density_transport_check(shape, history), 1e-3


def check_body_energy(fault: Optional[str] = None):
    shape, mp = anchored_shape(BodyShape("disk", radius=0.1, density=2.0, density_gradient=[1.0, -0.5]))
    state = RigidState([0.5, 0.5], rotation_about_z(0.4), [0.3, -0.2], [0.0, 0.0, 2.0])
    gap = diagnostics.body_energy_consistency(shape, mp, state, tolerance=np.inf)
    return "body_energy_consistency", gap, diagnostics.BODY_ENERGY_TOLERANCE


CHECKS = [check_disk_mass, check_ball_mass, check_torque_free, check_density_transport, check_body_energy]


def run(fault: Optional[str] = None) -> List[CheckResult]:
    return run_checks(SUITE_LABEL, CHECKS, fault)
