import os
import time
import logging
from typing import List, Optional
from colorama import Fore, Style, init
from rigidflow.exceptions import ConfigInvalid, InvariantViolation
from rigidflow.models.verification import CheckResult
from rigidflow.suites import ALL_SUITES, AVAILABLE_SUITES, SUITES
from rigidflow.utils.verification_util import FAULTS
import rigidflow.utils.common_util as common_util
import rigidflow.utils.persistence_util as persistence_util


def _print_table(results: List[CheckResult]):
    """
    Private method that prints the pass/fail table of the checked invariants
    """

    init(autoreset=True)
    width = max([len(result.invariant) for result in results] + [len("invariant")])
    print(f"{Style.BRIGHT}{'suite':<12} {'invariant':<{width}} {'value':>14} {'tolerance':>11}  verdict")
    for result in results:
        verdict = f"{Fore.GREEN}pass" if result.passed else f"{Fore.RED}{Style.BRIGHT}FAIL"
        line = f"{result.suite:<12} {result.invariant:<{width}} {result.value:>14.6e} {result.tolerance:>11.3e}  {verdict}"
        if result.message is not None:
            line += f"{Style.RESET_ALL} ({result.message})"
        print(line)


def verify(suite: str, outputpath: Optional[str] = None, inject_fault: Optional[str] = None,
           verbose: Optional[bool] = False) -> List[CheckResult]:
    """
    Runs a verification suite, prints its pass/fail table and writes verification.csv and verification.json.

    Parameters
    ----------
    suite : str
        One of geometry, rigid, fluid, measure, transform, diagnostics or all (this parameter is case insensitive)

    outputpath : Optional[str], optional
        Report directory, by default <RIGIDFLOW_OUT or .>/verification/<suite>

    inject_fault : Optional[str], optional
        A fault injected in the checked code paths to prove the suite catches it. The available fault is
        orthogonality (no re-orthonormalization of the body rotation), by default None

    verbose : Optional[bool], optional
        If you wanna a verbose logging

    Returns
    -------
    List[CheckResult]
        One verdict per checked invariant

    Raises
    ------
    ConfigInvalid
        - Unknown suite or fault
    InvariantViolation
        - At least one invariant failed, the message names them
    """

    common_util.logging_initialize(verbose)

    suite = suite.lower().strip()
    if suite not in AVAILABLE_SUITES:
        raise(ConfigInvalid(f"Unknown suite \"{suite}\", expected one of {', '.join(AVAILABLE_SUITES)}"))
    if inject_fault is not None and inject_fault not in FAULTS:
        raise(ConfigInvalid(f"Unknown fault \"{inject_fault}\", expected one of {', '.join(FAULTS)}"))

    if outputpath is None:
        outputpath = os.path.join(common_util.output_root(), "verification", suite)
    common_util.check_write_access(outputpath)

    if inject_fault is not None:
        logging.info(f"Injecting the {inject_fault} fault")

    start = time.perf_counter()
    labels = list(SUITES) if suite == ALL_SUITES else [suite]
    results = []
    for label in labels:
        logging.info(f"Running the {label} suite...")
        results += SUITES[label].run(inject_fault)

    _print_table(results)

    persistence_util.write_table(os.path.join(outputpath, "verification.csv"), CheckResult.COLUMNS,
                                 [result.row() for result in results])
    persistence_util.save_json({
        "suite": suite,
        "fault": inject_fault,
        "wall_time": time.perf_counter() - start,
        "results": [CheckResult.to_dict(result) for result in results],
    }, os.path.join(outputpath, "verification.json"))

    failed = [f"{result.suite}.{result.invariant}" for result in results if not result.passed]
    if len(failed) > 0:
        raise(InvariantViolation(f"{len(failed)} invariant(s) failed: {', '.join(failed)}"))

    logging.info(f"All {len(results)} invariants hold")
    return results
