import os
import pytest
import numpy as np
from typer.testing import CliRunner
from rigidflow.cli import app
from rigidflow.utils import persistence_util


runner = CliRunner()


def _simulate(config: str, output: str):
    return runner.invoke(app, ["simulate", config, "-o", output])


def test_version():

    result = runner.invoke(app, ["version"])

    assert result.exit_code == 0
    assert result.output.startswith("rigidflow ")


def test_verify_geometry(tmp_path):

    result = runner.invoke(app, ["verify", "geometry"])

    assert result.exit_code == 0
    assert os.path.isfile(tmp_path / "out" / "verification" / "geometry" / "verification.csv")
    assert persistence_util.load_json(str(tmp_path / "out" / "verification" / "geometry" / "verification.json"))


@pytest.mark.parametrize("arguments", [
    ["verify", "plumbing"],
    ["verify", "rigid", "--inject-fault", "gravity"],
])
def test_verify_unknown_arguments(arguments: list):

    assert runner.invoke(app, arguments).exit_code == 2


def test_verify_injected_fault():

    result = runner.invoke(app, ["verify", "rigid", "--inject-fault", "orthogonality"])

    assert result.exit_code == 4
    assert "rotation_orthogonality" in result.output


def test_simulate_quiescent(tmp_path, scenario_file):

    output = str(tmp_path / "quiet")
    result = _simulate(scenario_file("quiet"), output)
    columns, rows = persistence_util.read_csv(os.path.join(output, "energy.csv"))
    manifest = persistence_util.load_json(os.path.join(output, "manifest.json"))

    assert result.exit_code == 0
    assert np.all(rows[:, columns.index("E_fluid")] == 0.0)
    assert manifest["status"] == "completed"
    assert "energy.csv" in manifest["outputs"]
    assert not os.path.isfile(os.path.join(output, "body.csv"))


def test_simulate_default_directory(tmp_path, scenario_file):

    assert runner.invoke(app, ["simulate", scenario_file("quiet")]).exit_code == 0
    assert os.path.isfile(tmp_path / "out" / "runs" / "quiet" / "run.json")


def test_simulate_is_deterministic(tmp_path, scenario_file):

    config = scenario_file("drift", preset="taylor_green", body=True)
    first, second = str(tmp_path / "first"), str(tmp_path / "second")

    assert _simulate(config, first).exit_code == 0
    assert _simulate(config, second).exit_code == 0

    outputs = [persistence_util.load_json(os.path.join(d, "manifest.json"))["outputs"] for d in (first, second)]
    assert outputs[0] == outputs[1]
    assert "body.csv" in outputs[0]


def test_simulate_missing_config(tmp_path):

    assert _simulate(str(tmp_path / "missing.toml"), str(tmp_path / "run")).exit_code == 2


def test_simulate_collision(tmp_path, scenario_file):

    config = scenario_file("crash", t_end=0.5, body=True, position="[0.8, 0.5]", velocity="[1.0, 0.0]",
                           extra="kappa = 0.1")
    output = str(tmp_path / "crash")
    result = _simulate(config, output)

    assert result.exit_code == 3
    assert persistence_util.load_json(os.path.join(output, "run.json"))["status"] == "collision"
    assert os.path.isfile(os.path.join(output, "manifest.json"))


def test_compare_run_with_itself(tmp_path, scenario_file):

    run = str(tmp_path / "drift")
    assert _simulate(scenario_file("drift", body=True), run).exit_code == 0

    output = str(tmp_path / "comparison")
    result = runner.invoke(app, ["compare", run, run, "-o", output])
    summary = persistence_util.load_json(os.path.join(output, "comparison.json"))

    assert result.exit_code == 0
    assert summary["E_rel_final"] == pytest.approx(0.0, abs=1e-12)
    assert summary["gronwall_violation"] == pytest.approx(0.0, abs=1e-12)
    assert os.path.isfile(os.path.join(output, "identities.csv"))
    assert os.path.isfile(os.path.join(output, "bundle.json"))


def test_compare_mismatched_grids(tmp_path, scenario_file):

    coarse, fine = str(tmp_path / "coarse"), str(tmp_path / "fine")
    assert _simulate(scenario_file("coarse", resolution=16), coarse).exit_code == 0
    assert _simulate(scenario_file("fine", resolution=32), fine).exit_code == 0

    result = runner.invoke(app, ["compare", coarse, fine, "-o", str(tmp_path / "comparison")])

    assert result.exit_code == 2


def test_sweep_single_member(tmp_path, plan_file):

    output = str(tmp_path / "sweep")
    result = runner.invoke(app, ["sweep", plan_file(), "-o", output])
    sweep = persistence_util.load_json(os.path.join(output, "sweep.json"))
    columns, rows = persistence_util.read_csv(os.path.join(output, "defects.csv"))

    assert result.exit_code == 0
    assert [member["status"] for member in sweep["members"]] == ["completed"]
    assert rows.shape[0] == 1
    assert rows[0, columns.index("oscillation_energy")] == pytest.approx(0.0, abs=1e-14)
    assert os.path.isfile(os.path.join(output, "viscous.csv"))
    assert os.path.isfile(os.path.join(output, "measure_0.json"))


def test_compare_sweep_against_run(tmp_path, plan_file):

    sweep = str(tmp_path / "sweep")
    assert runner.invoke(app, ["sweep", plan_file(), "-o", sweep]).exit_code == 0
    member = os.path.join(sweep, "members", "swirl_eps0")

    result = runner.invoke(app, ["compare", sweep, member, "-o", str(tmp_path / "comparison")])
    summary = persistence_util.load_json(str(tmp_path / "comparison" / "comparison.json"))

    assert result.exit_code == 0
    assert summary["members"] == 1
    assert summary["E_rel_final"] == pytest.approx(0.0, abs=1e-12)


def test_compare_fits_the_slack_from_a_refinement(tmp_path, scenario_file):

    comparisons = []
    for resolution in (16, 32):
        weak, strong = str(tmp_path / f"weak{resolution}"), str(tmp_path / f"strong{resolution}")
        assert _simulate(scenario_file(f"weak{resolution}", resolution, eps=0.01, preset="taylor_green"),
                         weak).exit_code == 0
        assert _simulate(scenario_file(f"strong{resolution}", resolution, eps=0.001, preset="taylor_green"),
                         strong).exit_code == 0
        output = str(tmp_path / f"comparison{resolution}")
        arguments = ["compare", weak, strong, "-o", output]
        for previous in comparisons:
            arguments += ["-r", previous]
        assert runner.invoke(app, arguments).exit_code == 0
        comparisons.append(output)

    coarse, fine = [persistence_util.load_json(os.path.join(path, "comparison.json")) for path in comparisons]
    a, b = fine["slack_coefficients"]

    assert coarse["slack"] == 0.0
    assert fine["h"] == pytest.approx(0.5 * coarse["h"])
    assert min(a, b) >= 0.0
    assert fine["slack"] == pytest.approx(a * fine["dt"] + b * fine["h"] ** 2)


def test_compare_with_a_missing_refinement(tmp_path, scenario_file):

    run = str(tmp_path / "quiet")
    assert _simulate(scenario_file("quiet"), run).exit_code == 0

    result = runner.invoke(app, ["compare", run, run, "-o", str(tmp_path / "comparison"), "-r", str(tmp_path)])

    assert result.exit_code == 2
