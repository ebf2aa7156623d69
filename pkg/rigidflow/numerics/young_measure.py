import logging
from typing import Callable, Optional, Sequence, Tuple, Union
import numpy as np
from rigidflow.exceptions import DominationViolated, GridMismatch
from rigidflow.models.geometry import BodyShape, Grid
from rigidflow.models.measure import AtomicYoungMeasure, DefectReport
from rigidflow.models.rigid import RigidState
from rigidflow.models.trajectory import Trajectory
from rigidflow.numerics import geometry, rigid_dynamics
from rigidflow.numerics.fluid_solver import as_ensemble


DEFAULT_CUTOFF_FACTOR = 10.0
COMPARISON_SLACK = 1e-12


def _common_body(snapshots: Sequence) -> Optional[RigidState]:
    """Placement of the first member with the ensemble mean of the velocities"""
    if not snapshots[0].has_body:
        return None
    first = snapshots[0].body
    V = np.mean([s.body.V for s in snapshots], axis=0)
    w = np.mean([s.body.w for s in snapshots], axis=0)
    return RigidState(first.X, first.O, V, w, validate=False)


def from_ensemble(runs: Union[Trajectory, Sequence[Trajectory]], t: float,
                  tolerance: Optional[float] = None) -> AtomicYoungMeasure:
    """
    Equal-weight atomic measure of the members' cell-centered velocities at a stored time

    On cells whose center lies inside the body every atom is replaced by the rigid field of the common
    body, the first member's placement moving with the ensemble mean velocities.

    Parameters
    ----------
    runs : Trajectory or Sequence[Trajectory]
        Ensemble sharing grid and snapshot times
    t : float
        A stored time
    tolerance : float, optional
        Accepted distance to the stored time, by default half a step

    Returns
    -------
    AtomicYoungMeasure
        The measure

    Raises
    ------
    GridMismatch
        - Runs do not share grid and times, or t is not stored
    """

    runs = as_ensemble(runs)
    snapshots = [run.snapshot_at(t, tolerance) for run in runs]
    grid = runs[0].grid
    atoms = [snapshot.fluid.centered_velocity() for snapshot in snapshots]

    body = _common_body(snapshots)
    shape = snapshots[0].shape
    mask = None
    if body is not None:
        centers = grid.centers()
        mask = geometry.signed_distance(shape, body.placement, centers) < 0
        rigid = rigid_dynamics.rigid_velocity(body, centers[mask])[..., :2]
        for atom in atoms:
            atom[mask] = rigid

    weights = np.full(len(atoms), 1.0 / len(atoms))
    return AtomicYoungMeasure(grid, snapshots[0].time, weights, atoms, body, shape, mask)


def moment(measure: AtomicYoungMeasure, observable: Callable) -> np.ndarray:
    """
    Pointwise <Y, G(u)>: the weighted sum over atoms of observable(atom)

    The observable receives velocity arrays (..., 2) and returns scalars or vectors per point.
    """

    values = np.array([observable(atom) for atom in measure.atoms])
    return np.tensordot(measure.weights, values, axes=(0, 0))


def kinetic_density(u: np.ndarray) -> np.ndarray:
    return 0.5 * np.sum(u * u, axis=-1)


def oscillation_energy(measure: AtomicYoungMeasure) -> float:
    """int <Y, |u|^2/2> - |<Y, u>|^2/2 over the grid, non-negative by Jensen's inequality"""
    density = moment(measure, kinetic_density) - kinetic_density(measure.barycenter())
    return measure.grid.cell_area * float(np.maximum(density, 0.0).sum())


def _tail(measure: AtomicYoungMeasure, observable: Callable, speed_cutoff: float) -> np.ndarray:
    """Mean over atoms of observable restricted to the cells where the speed exceeds the cutoff"""
    values = []
    for atom in measure.atoms:
        value = np.asarray(observable(atom))
        fast = np.linalg.norm(atom, axis=-1) > speed_cutoff
        values.append(np.where(fast.reshape(fast.shape + (1,) * (value.ndim - fast.ndim)), value, 0.0))
    return np.tensordot(measure.weights, np.array(values), axes=(0, 0))


def _stress(u: np.ndarray) -> np.ndarray:
    return u[..., :, None] * u[..., None, :]


def defect_stress(measure: AtomicYoungMeasure, speed_cutoff: float) -> np.ndarray:
    """
    Reynolds stress of the measure plus the stress carried above the speed cutoff, per cell (nx, ny, 2, 2)

    The result is symmetric positive semi-definite and its trace is twice the defect density.
    """

    bar = measure.barycenter()
    return moment(measure, _stress) - _stress(bar) + _tail(measure, _stress, speed_cutoff)


def defect_action(stress: np.ndarray, grid: Grid, testfields: Sequence, body: Optional[RigidState] = None,
                  shape: Optional[BodyShape] = None) -> np.ndarray:
    """
    Normalized action |int R : grad phi| / max |grad phi| of a defect stress on each test field

    Gradients are taken at the cell centers by second-order differences; a field with vanishing gradient
    gets a zero action.
    """

    centers = grid.centers()
    actions = np.zeros(len(testfields))
    for index, field in enumerate(testfields):
        phi = field.velocity(centers, body, shape)
        gradient = np.stack(np.gradient(phi, grid.h, axis=(0, 1), edge_order=2), axis=-1)
        scale = float(np.linalg.norm(gradient, ord=2, axis=(-2, -1)).max())
        if scale > 0:
            actions[index] = abs(grid.cell_area * float(np.sum(stress * gradient))) / scale
    return actions


def default_speed_cutoff(runs: Union[Trajectory, Sequence[Trajectory]]) -> float:
    """Ten times the largest initial speed of the ensemble, infinity for an ensemble at rest"""
    runs = as_ensemble(runs)
    speed = max(run.snapshots[0].fluid.max_speed() for run in runs)
    if speed == 0:
        return float("inf")
    return DEFAULT_CUTOFF_FACTOR * speed


def energy_defect(runs: Union[Trajectory, Sequence[Trajectory]], t: float,
                  speed_cutoff: Optional[float] = None, testfields: Optional[Sequence] = None) -> DefectReport:
    """
    Dissipation defect estimators of an ensemble at a stored time

    Parameters
    ----------
    runs : Trajectory or Sequence[Trajectory]
        Ensemble sharing grid and snapshot times
    t : float
        A stored time
    speed_cutoff : float, optional
        Speed M above which energy counts as concentrating, by default ten times the largest initial speed
    testfields : Sequence, optional
        Test fields with ``velocity(points, body, shape)``. When given, mu_bound is the largest normalized
        action of the defect stress on them; otherwise it is the integral of the Frobenius norm of the
        stress. By default None

    Returns
    -------
    DefectReport
        D is the oscillation energy plus the tail energy above M, and mu_bound never exceeds 2 D

    Raises
    ------
    GridMismatch
        - Runs do not share grid and times
    """

    measure = from_ensemble(runs, t)
    speed_cutoff = default_speed_cutoff(runs) if speed_cutoff is None else speed_cutoff
    area = measure.grid.cell_area
    concentration = area * float(_tail(measure, kinetic_density, speed_cutoff).sum())
    stress = defect_stress(measure, speed_cutoff)
    if testfields:
        mu_bound = float(defect_action(stress, measure.grid, testfields, measure.body, measure.shape).max())
    else:
        mu_bound = area * float(np.linalg.norm(stress, axis=(-2, -1)).sum())
    report = DefectReport(measure.t, oscillation_energy(measure), concentration, mu_bound, speed_cutoff)
    logging.debug(f"Defect at t={report.t:.6g}: D={report.D:.6e} (oscillation {report.oscillation_energy:.6e})")
    return report


def comparison_check(F: Callable, G: Callable, runs: Union[Trajectory, Sequence[Trajectory]], t: float,
                     speed_cutoff: Optional[float] = None) -> Tuple[bool, float, float]:
    """
    Finite-sample comparison of the concentration parts of two observables with |F| <= G

    The concentration part of an observable is its ensemble mean minus the moment of the measure that
    keeps only the atoms' values below the speed cutoff, that is the mean of the observable over the
    cells where the speed exceeds the cutoff.

    Parameters
    ----------
    F : Callable
        Scalar observable on velocities (..., 2)
    G : Callable
        Non-negative scalar observable dominating |F|
    runs : Trajectory or Sequence[Trajectory]
        Ensemble
    t : float
        A stored time
    speed_cutoff : float, optional
        Speed cutoff, by default ten times the largest initial speed

    Returns
    -------
    Tuple[bool, float, float]
        Whether |F_inf| <= |G_inf| + 1e-12, F_inf and G_inf

    Raises
    ------
    DominationViolated
        - |F| <= G fails on a sample
    """

    measure = from_ensemble(runs, t)
    for atom in measure.atoms:
        if np.any(np.abs(F(atom)) > G(atom) + COMPARISON_SLACK):
            raise(DominationViolated("|F| <= G fails on an ensemble sample"))

    speed_cutoff = default_speed_cutoff(runs) if speed_cutoff is None else speed_cutoff
    area = measure.grid.cell_area
    F_inf = area * float(_tail(measure, F, speed_cutoff).sum())
    G_inf = area * float(_tail(measure, G, speed_cutoff).sum())
    return abs(F_inf) <= abs(G_inf) + COMPARISON_SLACK, F_inf, G_inf


def body_convergence(runs: Union[Trajectory, Sequence[Trajectory]], t: float) -> np.ndarray:
    """
    L1 distance between each member's body indicator and the last member's, at a stored time

    Sweeps list viscosities in decreasing order, so the reference is the least viscous member.
    """

    runs = as_ensemble(runs)
    snapshots = [run.snapshot_at(t) for run in runs]
    if not snapshots[-1].has_body:
        return np.zeros(len(runs))
    grid = runs[0].grid
    centers = grid.centers()
    reference = geometry.indicator(snapshots[-1].shape, snapshots[-1].body.placement, centers)
    return np.array([grid.cell_area * float(np.abs(geometry.indicator(s.shape, s.body.placement, centers)
                                                   - reference).sum()) for s in snapshots])
