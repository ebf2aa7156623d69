import pytest
import numpy as np
from rigidflow.exceptions import GridMismatch
from rigidflow.models.geometry import BodyShape, rotation_about_z
from rigidflow.models.rigid import MassProperties, RigidState
from rigidflow.numerics import rigid_dynamics
from rigidflow.numerics.rigid_dynamics import BodyHistory


@pytest.fixture
def lamina():
    return MassProperties(2.0, np.zeros(3), np.diag([0.5, 0.5, 1.0]))


def test_skew():

    w, a = np.array([0.3, -1.0, 2.0]), np.array([1.0, 0.5, -0.2])

    assert np.allclose(rigid_dynamics.skew(w) @ a, np.cross(w, a))
    assert np.allclose(rigid_dynamics.skew(w).T, -rigid_dynamics.skew(w))


def test_gram_schmidt(rng: np.random.Generator):

    O = rotation_about_z(0.7) + 1e-3 * rng.normal(size=(3, 3))
    projected = rigid_dynamics.gram_schmidt(O)

    assert np.allclose(projected.T @ projected, np.eye(3), atol=1e-14)
    assert np.linalg.det(projected) == pytest.approx(1.0)
    assert np.allclose(projected, rotation_about_z(0.7), atol=1e-2)


def test_rigid_velocity(body: RigidState):

    velocity = rigid_dynamics.rigid_velocity(body, [[0.5, 0.5], [0.6, 0.5]])

    assert np.allclose(velocity, [[0.2, 0.1, 0.0], [0.2, 0.2, 0.0]])


def test_disk_mass_properties():

    r = 0.1
    mp = rigid_dynamics.mass_properties(BodyShape("disk", radius=r, density=3.0))
    m = 3.0 * np.pi * r * r

    assert mp.m == pytest.approx(m, rel=1e-4)
    assert mp.J_body[2, 2] == pytest.approx(0.5 * m * r * r, rel=1e-4)
    assert mp.J_body[0, 0] == pytest.approx(0.25 * m * r * r, rel=1e-4)
    assert np.abs(mp.X0).max() < 1e-10


def test_center_of_mass_of_graded_disk():

    r = 0.1
    mp = rigid_dynamics.mass_properties(BodyShape("disk", radius=r, density=1.0, density_gradient=[1.0, 0.0]))

    assert mp.X0[0] == pytest.approx(0.25 * r * r, rel=1e-3)
    assert abs(mp.X0[1]) < 1e-10


def test_body_kinetic_energy(lamina: MassProperties):

    state = RigidState([0.5, 0.5], rotation_about_z(0.3), [0.3, 0.4], [0.0, 0.0, 2.0])

    assert rigid_dynamics.body_kinetic_energy(lamina, state) == pytest.approx(0.5 * 2.0 * 0.25 + 0.5 * 4.0)


def test_inertia_current(lamina: MassProperties):

    O = rotation_about_z(1.1)
    J = rigid_dynamics.inertia_current(lamina, O)

    assert np.allclose(J, O @ lamina.J_body @ O.T)
    assert np.allclose(J, J.T)


def test_step_rigid_constant_force(lamina: MassProperties):

    state = RigidState([0.5, 0.5], None, [0.1, 0.0])
    force = np.array([0.2, -0.4, 0.0])
    for _ in range(10):
        state = rigid_dynamics.step_rigid(state, lamina, force, np.zeros(3), 0.01)

    t = 0.1
    assert np.allclose(state.V, [0.1 + 0.1 * t, -0.2 * t, 0.0])
    assert np.allclose(state.X, [0.5 + 0.1 * t + 0.05 * t * t, 0.5 - 0.1 * t * t, 0.0])


def test_step_rigid_planar_rotation(lamina: MassProperties):

    state = RigidState([0.5, 0.5], None, None, [0.0, 0.0, 2.0])
    for _ in range(100):
        state = rigid_dynamics.step_rigid(state, lamina, np.zeros(3), np.zeros(3), 0.01)

    assert state.placement.angle == pytest.approx(2.0, abs=1e-8)
    assert state.orthogonality_error() < 1e-12
    assert np.allclose(state.w, [0.0, 0.0, 2.0])


def test_step_rigid_rejects_non_positive_step(lamina: MassProperties, body: RigidState):

    with pytest.raises(ValueError):
        rigid_dynamics.step_rigid(body, lamina, np.zeros(3), np.zeros(3), 0.0)


def test_step_transformed_rigid_at_rest_relative_rotation(lamina: MassProperties):

    Vs, ws = rigid_dynamics.step_transformed_rigid([0.1, 0.2], [0.0, 0.0, 1.0], [0.0, 0.0, 1.0], lamina,
                                                   np.zeros(3), np.zeros(3), 0.01)

    assert np.allclose(Vs, [0.1, 0.2, 0.0])
    assert np.allclose(ws, [0.0, 0.0, 1.0])


def test_step_transformed_rigid_relative_rotation(lamina: MassProperties):

    Vs, _ = rigid_dynamics.step_transformed_rigid([1.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 1.0], lamina,
                                                  np.zeros(3), np.zeros(3), 0.01)

    assert np.allclose(Vs, [np.cos(0.01), np.sin(0.01), 0.0], atol=1e-10)


def test_body_history(body: RigidState):

    times = np.linspace(0.0, 1.0, 11)
    history = BodyHistory.uniform_motion(body, times)
    state = history.at(0.35)

    assert len(history) == 11
    assert np.allclose(state.X, body.X + 0.35 * body.V)
    assert state.placement.angle == pytest.approx(0.35)
    assert np.allclose(history.at(2.0).X, history.X[-1])
    assert np.allclose(BodyHistory.from_rows(history.rows()).O, history.O)

    with pytest.raises(GridMismatch):
        BodyHistory([0.0, 0.0], [body, body])

    with pytest.raises(GridMismatch):
        BodyHistory([0.0], [body, body])


def test_density_transport():

    shape = BodyShape("disk", radius=0.1, density=1.0, density_gradient=[0.5, 0.2])
    state = RigidState([0.5, 0.5], None, [0.2, 0.1], [0.0, 0.0, 1.5])
    history = BodyHistory.uniform_motion(state, np.linspace(0.0, 0.5, 11))

    assert rigid_dynamics.density_transport_check(shape, history) < 1e-3


def test_transported_volume():

    shape = BodyShape("disk", radius=0.1)
    volume = rigid_dynamics.transported_volume(shape, RigidState([0.4, 0.6]).placement)

    assert volume == pytest.approx(np.pi * 0.01, rel=1e-4)
