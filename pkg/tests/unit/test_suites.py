import pytest
import rigidflow.suites as suites


@pytest.mark.parametrize("label", list(suites.SUITES))
def test_suite_passes(label: str):

    results = suites.SUITES[label].run()

    assert len(results) > 0
    assert [result.invariant for result in results if not result.passed] == []
    assert all(result.suite == label for result in results)


def test_rigid_suite_catches_the_orthogonality_fault():

    failed = [result.invariant for result in suites.SUITES["rigid"].run("orthogonality") if not result.passed]

    assert "rotation_orthogonality" in failed
    assert "disk_mass" not in failed


def test_available_suites():

    assert suites.AVAILABLE_SUITES == ["geometry", "rigid", "fluid", "measure", "transform", "diagnostics", "all"]
