from typing import List, Optional
import numpy as np
from rigidflow.models.fluid import StaggeredField
from rigidflow.models.geometry import BodyShape, Container, Grid
from rigidflow.models.measure import AtomicYoungMeasure
from rigidflow.models.rigid import RigidState
from rigidflow.models.verification import CheckResult
from rigidflow.numerics import young_measure
from rigidflow.utils import scenario_util
from rigidflow.utils.verification_util import run_checks, static_ensemble


SUITE_LABEL = "measure"

UNIT_BOX = Container([0.0, 0.0], [1.0, 1.0])
RESOLUTION = 8
ENSEMBLES = 100


def _grid() -> Grid:
    return Grid.from_container(UNIT_BOX, RESOLUTION)


def _random_measure(rng: np.random.Generator, atoms: Optional[int] = 4) -> AtomicYoungMeasure:
    grid = _grid()
    weights = rng.dirichlet(np.ones(atoms))
    weights /= weights.sum()
    values = rng.standard_normal((atoms,) + grid.shape_p + (2,))
    return AtomicYoungMeasure(grid, 0.0, weights, list(values))


def _random_fields(rng: np.random.Generator, count: int) -> List[StaggeredField]:
    grid = _grid()
    fields = []
    for _ in range(count):
        scale = np.exp(rng.normal(0.0, 1.0))
        fields.append(StaggeredField(grid, scale * rng.standard_normal(grid.shape_u),
                                     scale * rng.standard_normal(grid.shape_v)))
    return fields


def check_linearity(fault: Optional[str] = None):
    measure = _random_measure(np.random.default_rng(31))

    def first(u):
        return u[..., 0] * np.linalg.norm(u, axis=-1)

    def second(u):
        return np.sum(u * u, axis=-1)

    combined = young_measure.moment(measure, lambda u: 2.0 * first(u) - 3.0 * second(u))
    separate = 2.0 * young_measure.moment(measure, first) - 3.0 * young_measure.moment(measure, second)
    scale = max(float(np.abs(separate).max()), 1.0)
    return "moment_linearity", float(np.abs(combined - separate).max()) / scale, 1e-12


def check_jensen(fault: Optional[str] = None):
    rng = np.random.default_rng(32)
    worst = 0.0
    for _ in range(20):
        measure = _random_measure(rng)
        density = young_measure.moment(measure, young_measure.kinetic_density) \
            - young_measure.kinetic_density(measure.barycenter())
        worst = max(worst, float(-density.min()))
    return "jensen_inequality", max(worst, 0.0), 1e-12


def check_two_atoms(fault: Optional[str] = None):
    grid = _grid()
    c = np.array([1.5, -0.5])
    atoms = [np.broadcast_to(c, grid.shape_p + (2,)).copy(), np.broadcast_to(-c, grid.shape_p + (2,)).copy()]
    measure = AtomicYoungMeasure(grid, 0.0, [0.5, 0.5], atoms)
    expected = 0.5 * float(c @ c) * UNIT_BOX.measure
    return "two_atom_oscillation", abs(young_measure.oscillation_energy(measure) - expected) / expected, 1e-12


def check_comparison(fault: Optional[str] = None):
    """Concentration parts of u_x |u| and |u|^2 over randomized ensembles with a speed cutoff of 1"""
    rng = np.random.default_rng(33)
    failed = 0
    for _ in range(ENSEMBLES):
        runs = static_ensemble(_random_fields(rng, int(rng.integers(2, 6))))
        holds, _, _ = young_measure.comparison_check(lambda u: u[..., 0] * np.linalg.norm(u, axis=-1),
                                                     lambda u: np.sum(u * u, axis=-1), runs, 0.0, 1.0)
        failed += 0 if holds else 1
    return "comparison_inequality", float(failed), 0.0


def check_defect_bound(fault: Optional[str] = None):
    """mu_bound never exceeds twice the defect, with and without the test-field basis"""
    rng = np.random.default_rng(35)
    testfields = scenario_util.testfield_basis(_grid())
    violations = 0
    for _ in range(20):
        runs = static_ensemble(_random_fields(rng, int(rng.integers(2, 6))))
        cutoff = float(np.exp(rng.normal(0.0, 1.0)))
        for report in (young_measure.energy_defect(runs, 0.0, cutoff),
                       young_measure.energy_defect(runs, 0.0, cutoff, testfields=testfields)):
            violations += 0 if report.mu_bound <= report.xi * report.D * (1.0 + 1e-12) else 1
    return "defect_bound", float(violations), 0.0


def check_degenerate(fault: Optional[str] = None):
    rng = np.random.default_rng(34)
    field = _random_fields(rng, 1)[0]
    shape = BodyShape("disk", radius=0.2)
    body = RigidState([0.5, 0.5], None, [0.2, 0.0], [0.0, 0.0, 1.0])
    runs = static_ensemble([field.copy() for _ in range(3)], body, shape)
    report = young_measure.energy_defect(runs, 0.0, float("inf"))
    energy = UNIT_BOX.measure * float(np.mean(young_measure.kinetic_density(field.centered_velocity())))
    return [("degenerate_defect", report.D, 1e-12 * max(energy, 1.0)),
            ("degenerate_mu_bound", report.mu_bound, 1e-12 * max(energy, 1.0)),
            ("degenerate_body_convergence", float(young_measure.body_convergence(runs, 0.0).max()), 0.0)]


CHECKS = [check_linearity, check_jensen, check_two_atoms, check_comparison, check_defect_bound, check_degenerate]


def run(fault: Optional[str] = None) -> List[CheckResult]:
    return run_checks(SUITE_LABEL, CHECKS, fault)
