import os
import pytest
import numpy as np
from rigidflow.exceptions import ConfigInvalid, GridMismatch
from rigidflow.models.geometry import Grid
from rigidflow.models.scenario import Scenario
from rigidflow.models.trajectory import Trajectory
from rigidflow.numerics import transform
from rigidflow.numerics.rigid_dynamics import BodyHistory
from rigidflow.utils import persistence_util, scenario_util


SCENARIO_TOML = """
name = "drift"
seed = 3

[container]
lower = [0.0, 0.0]
upper = [1.0, 1.0]

[solver]
eps = 0.01
eta_pen = 0.01
t_end = 0.02
resolution = 16

[body]
kind = "disk"
radius = 0.1
position = [0.5, 0.5]
velocity = [0.1, 0.0]

[fluid]
preset = "taylor_green"
amplitude = 0.5
"""


@pytest.fixture
def trajectory(scenario: Scenario) -> Trajectory:
    return scenario_util.run_scenario(scenario)


def test_load_scenario(tmp_path):

    path = tmp_path / "scenario.toml"
    path.write_text(SCENARIO_TOML)
    scenario = persistence_util.load_scenario(str(path))

    assert scenario.name == "drift"
    assert scenario.resolution == 16
    assert scenario.preset == "taylor_green"
    assert scenario.fluid_options == {"amplitude": 0.5}
    assert scenario.shape.radius == 0.1
    assert np.allclose(scenario.velocity[:2], [0.1, 0.0])


def test_load_plan_with_a_scenario_path(tmp_path):

    (tmp_path / "scenario.toml").write_text(SCENARIO_TOML)
    plan_path = tmp_path / "plan.toml"
    plan_path.write_text('scenario = "scenario.toml"\neps = [0.02, 0.01]\nworkers = 2\n')
    plan = persistence_util.load_plan(str(plan_path))

    assert len(plan) == 2
    assert plan.workers == 2
    assert [member.params.eps for member in plan.members()] == [0.02, 0.01]


@pytest.mark.parametrize("content", [
    None,
    "[container\nlower = [0.0, 0.0]",
])
def test_load_toml_errors(tmp_path, content: str):

    path = tmp_path / "broken.toml"
    if content is not None:
        path.write_text(content)

    with pytest.raises(ConfigInvalid):
        persistence_util.load_toml(str(path))


def test_write_csv(tmp_path):

    path = str(tmp_path / "table.csv")
    persistence_util.write_csv(path, ["a", "b", "c"], [[0.1, 2, True], [1.0 / 3.0, -1, False]])
    columns, rows = persistence_util.read_csv(path)

    assert columns == ["a", "b", "c"]
    assert rows[1, 0] == 1.0 / 3.0
    assert np.array_equal(rows[:, 2], [1.0, 0.0])
    assert open(path).read().splitlines()[1] == "0.10000000000000001,2,1"


def test_save_and_load_trajectory(tmp_path, trajectory: Trajectory):

    directory = str(tmp_path / "run")
    written = persistence_util.save_trajectory(trajectory, directory)
    loaded = persistence_util.load_trajectory(directory)

    assert all(os.path.isfile(path) for path in written)
    assert np.array_equal(loaded.times, trajectory.times)
    assert np.array_equal(loaded.final.fluid.u, trajectory.final.fluid.u)
    assert np.array_equal(loaded.final.body.X, trajectory.final.body.X)
    assert loaded.status == trajectory.status
    assert loaded.mass.m == trajectory.mass.m
    assert np.array_equal(loaded.report_series("E_fluid"), trajectory.report_series("E_fluid"))
    assert loaded.reports[-1].residuals.keys() == trajectory.reports[-1].residuals.keys()
    assert len(loaded.body_states) == len(trajectory.body_states)


def test_load_trajectory_without_run(tmp_path):

    with pytest.raises(ConfigInvalid):
        persistence_util.load_trajectory(str(tmp_path))


def test_truncated_payload(tmp_path, trajectory: Trajectory):

    header = persistence_util.save_snapshot(trajectory.final, str(tmp_path), 0)
    payload = header[:-5] + ".bin"
    with open(payload, "r+b") as file:
        file.truncate(os.path.getsize(payload) - 8)

    with pytest.raises(GridMismatch):
        persistence_util.load_snapshot(header)


def test_save_and_load_bundle(tmp_path, unit_box, disk, body):

    lattice = Grid.from_container(unit_box, 8)
    history = BodyHistory.uniform_motion(body, np.linspace(0.0, 0.02, 3))
    bundle = transform.build_bundle(history, history, disk, lattice, (0.05, 0.15, 0.05), 0.02, 0.01)
    loaded = persistence_util.load_bundle(persistence_util.save_bundle(bundle, str(tmp_path)))

    assert np.array_equal(loaded.times, bundle.times)
    assert np.array_equal(loaded.tilde_z2, bundle.tilde_z2)
    assert np.array_equal(loaded.Gamma, bundle.Gamma)
    assert np.array_equal(loaded.ws, bundle.ws)


def test_write_manifest(tmp_path):

    output = tmp_path / "energy.csv"
    output.write_text("t\n0\n")
    manifest = persistence_util.load_json(persistence_util.write_manifest(str(tmp_path), {"eps": 0.1},
                                                                          [str(output)], 1.5))

    assert list(manifest["outputs"]) == ["energy.csv"]
    assert manifest["wall_time"] == 1.5
    assert set(manifest["versions"]) == {"numpy", "scipy", "python"}
    assert len(manifest["config_hash"]) == 64
