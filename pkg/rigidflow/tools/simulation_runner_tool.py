import os
import time
import logging
from typing import Optional
from rigidflow.exceptions import CollisionMargin
from rigidflow.models.scenario import Scenario
from rigidflow.models.trajectory import Trajectory
import rigidflow.utils.common_util as common_util
import rigidflow.utils.persistence_util as persistence_util
import rigidflow.utils.scenario_util as scenario_util


def run_directory(scenario: Scenario, outputpath: Optional[str] = None) -> str:
    """Run directory of a scenario: the given path, or runs/<name> under the output root"""
    if outputpath is not None:
        return outputpath
    return os.path.join(common_util.output_root(), "runs", scenario.name if scenario.name else "run")


def save_run(trajectory: Trajectory, scenario: Scenario, directory: str, wall_time: float) -> str:
    """
    Writes a trajectory and its manifest into a run directory

    Returns
    -------
    str
        Path of the manifest
    """

    written = persistence_util.save_trajectory(trajectory, directory)
    return persistence_util.write_manifest(directory, Scenario.to_dict(scenario), written, wall_time,
                                           {"status": trajectory.status})


def simulate(configpath: str, outputpath: Optional[str] = None, verbose: Optional[bool] = False) -> str:
    """
    Runs one coupled trajectory from a scenario file and writes its run directory.

    The directory holds the snapshots (JSON header plus float64 payload), energy.csv, body.csv for runs
    with a body, run.json and manifest.json with the configuration hash, package versions, wall time and
    output hashes.

    Parameters
    ----------
    configpath : str
        A scenario TOML file

    outputpath : Optional[str], optional
        Run directory, by default <RIGIDFLOW_OUT or .>/runs/<scenario name>

    verbose : Optional[bool], optional
        If you wanna a verbose logging

    Returns
    -------
    str
        The run directory

    Raises
    ------
    ConfigInvalid
        - The scenario file is missing or invalid
    CollisionMargin
        - The body reached the collision margin; the outputs written up to that point are kept
    """

    common_util.logging_initialize(verbose)

    scenario = persistence_util.load_scenario(configpath)
    if scenario.name is None:
        scenario.name = os.path.splitext(os.path.basename(configpath))[0]

    directory = run_directory(scenario, outputpath)
    common_util.check_write_access(directory)

    logging.info(f"Simulating \"{scenario.name}\" up to t={scenario.params.t_end:g} "
                 f"with eps={scenario.params.eps:g} on {scenario.resolution} cells...")

    start = time.perf_counter()
    try:
        trajectory = scenario_util.run_scenario(scenario)
    except CollisionMargin as error:
        trajectory = getattr(error, "trajectory", None)
        if trajectory is not None:
            save_run(trajectory, scenario, directory, time.perf_counter() - start)
            logging.warning(f"Collision margin reached at t={trajectory.body_times[-1]:g}, "
                            f"partial outputs kept in {directory}")
        raise

    save_run(trajectory, scenario, directory, time.perf_counter() - start)
    logging.info(f"Run finished with {len(trajectory.snapshots)} snapshots, outputs in {directory}")
    return directory
