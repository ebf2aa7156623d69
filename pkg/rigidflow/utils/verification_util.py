import logging
from typing import Callable, List, Optional, Sequence
from rigidflow.models.fluid import CoupledState, SolverParams, StaggeredField
from rigidflow.models.geometry import BodyShape
from rigidflow.models.rigid import RigidState
from rigidflow.models.trajectory import Trajectory
from rigidflow.models.verification import CheckResult


CHECK_PREFIX = "check_"
FAULTS = ("orthogonality",)


def check_name(check: Callable) -> str:
    name = check.__name__
    return name[len(CHECK_PREFIX):] if name.startswith(CHECK_PREFIX) else name


def _as_results(suite: str, outcome) -> List[CheckResult]:
    """Checks return (invariant, value, tolerance[, passed]) tuples or lists of them"""
    outcomes = outcome if isinstance(outcome, list) else [outcome]
    return [CheckResult(suite, *item) for item in outcomes]


def run_checks(suite: str, checks: Sequence[Callable], fault: Optional[str] = None) -> List[CheckResult]:
    """
    Runs the checks of a suite, turning every raised error into a failed row of the check

    Parameters
    ----------
    suite : str
        Suite label
    checks : Sequence[Callable]
        Functions of the injected fault returning outcome tuples
    fault : str, optional
        Injected fault, by default None

    Returns
    -------
    List[CheckResult]
        One row per checked invariant
    """

    results = []
    for check in checks:
        try:
            results += _as_results(suite, check(fault))
        except Exception as e:
            logging.debug(f"Check {check_name(check)} of suite {suite} raised", exc_info=True)
            results.append(CheckResult(suite, check_name(check), float("nan"), float("nan"), False,
                                       f"{type(e).__name__}: {e}"))

    failed = [result.invariant for result in results if not result.passed]
    if len(failed) > 0:
        logging.info(f"Suite {suite}: {len(failed)} of {len(results)} checks failed ({', '.join(failed)})")
    else:
        logging.info(f"Suite {suite}: all {len(results)} checks passed")
    return results


def relative(value: float, reference: float) -> float:
    return abs(value - reference) / max(abs(reference), 1e-300)


def static_ensemble(fields: Sequence[StaggeredField], body: Optional[RigidState] = None,
                    shape: Optional[BodyShape] = None) -> List[Trajectory]:
    """One-snapshot trajectories at t = 0, one per field"""
    params = SolverParams(eps=0.0, eta_pen=1.0, dt=0.1, t_end=0.0)
    runs = []
    for field in fields:
        run = Trajectory(params, field.grid, shape)
        run.add_snapshot(CoupledState(field, body, 0.0, shape))
        runs.append(run)
    return runs
