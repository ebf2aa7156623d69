import pytest
import numpy as np
from rigidflow.models.fluid import SolverParams
from rigidflow.models.geometry import BodyShape, Container, Grid
from rigidflow.models.rigid import RigidState
from rigidflow.models.scenario import Scenario
import rigidflow.utils.scenario_util as scenario_util


@pytest.fixture
def unit_box():
    return Container([0.0, 0.0], [1.0, 1.0])


@pytest.fixture
def grid(unit_box):
    return Grid.from_container(unit_box, 32)


@pytest.fixture
def disk():
    return BodyShape("disk", radius=0.1)


@pytest.fixture
def square():
    return BodyShape("polygon", vertices=[[-0.1, -0.1], [0.1, -0.1], [0.1, 0.1], [-0.1, 0.1]])


@pytest.fixture
def body():
    return RigidState([0.5, 0.5], V=[0.2, 0.1], w=[0.0, 0.0, 1.0])


@pytest.fixture
def rng():
    return np.random.default_rng(7)


@pytest.fixture
def params():
    return SolverParams(eps=1e-2, eta_pen=1e-2, t_end=0.02)


@pytest.fixture
def scenario(unit_box, disk, params):
    return Scenario(unit_box, params, resolution=16, shape=disk, velocity=[0.1, 0.0], name="drift")


@pytest.fixture
def taylor_green(grid):
    return scenario_util.preset_field(grid, "taylor_green")


@pytest.fixture
def coupled(scenario):
    return scenario_util.initial_state(scenario)
