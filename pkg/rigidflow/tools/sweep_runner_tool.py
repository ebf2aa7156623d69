import os
import time
import logging
from concurrent.futures import ProcessPoolExecutor
from typing import List, Optional, Tuple
import numpy as np
from rigidflow.models.measure import DefectReport
from rigidflow.models.scenario import Scenario, SweepPlan
from rigidflow.models.trajectory import Trajectory
from rigidflow.numerics import fluid_solver, young_measure
import rigidflow.tools.simulation_runner_tool as simulation_runner_tool
import rigidflow.utils.common_util as common_util
import rigidflow.utils.persistence_util as persistence_util
import rigidflow.utils.scenario_util as scenario_util


def common_dt(members: List[Scenario]) -> float:
    """Smallest admissible time step over the members, so that every member stores the same times"""
    dts = []
    for member in members:
        state, _ = scenario_util.initial_state(member)
        dts.append(fluid_solver.choose_dt(state, member.params))
    return min(dts)


def _run_member(scenario_dict: dict, dt: float, directory: str) -> Tuple[str, str, Optional[str]]:
    """
    Runs a sweep member in its own process and writes its run directory

    Returns
    -------
    Tuple[str, str, Optional[str]]
        The member directory, the run status and the error message (None on success)
    """

    scenario = Scenario.from_dict(scenario_dict).with_changes(dt=dt)
    start = time.perf_counter()
    trajectory = scenario_util.run_scenario(scenario)
    simulation_runner_tool.save_run(trajectory, scenario, directory, time.perf_counter() - start)
    return directory, trajectory.status, None


def _member_safe_run(future, member: Scenario, directory: str) -> Tuple[str, str, Optional[str]]:
    """
    Private method that collects a member result, recording the error and continuing when the member fails
    """

    try:
        result = future.result()
        logging.info(f"Member {member.name} (eps={member.params.eps:g}) finished")
        return result
    except Exception as e:
        logging.debug(e, exc_info=True)
        logging.warning(f"Member {member.name} (eps={member.params.eps:g}) failed: {e}")
        return directory, "failed", f"{type(e).__name__}: {e}"


class _InlineFuture():
    """Deferred call with the future interface, for sweeps run without worker processes"""

    def __init__(self, function, *args):
        self.function = function
        self.args = args

    def result(self):
        return self.function(*self.args)


def _snapshot_path(run: Trajectory, directory: str, t: float) -> str:
    index = int(np.argmin(np.abs(run.times - t)))
    return os.path.join(directory, "snapshots", f"snapshot_{index:05d}.json")


def _viscous_rows(runs: List[Trajectory], names: List[str]) -> Tuple[List[str], List[list]]:
    """Per member: eps, sqrt(eps)||D(u)|| and eps int int D(u):D(phi) for every basis test field"""
    first = runs[0].snapshots[0]
    basis = scenario_util.testfield_basis(runs[0].grid, first.shape, first.body)
    columns = ["eps", "dissipation_norm"] + [f"pairing_{testfield.name}" for testfield in basis]
    rows = []
    for run, name in zip(runs, names):
        rows.append([run.params.eps, fluid_solver.dissipation_norm(run)]
                    + [fluid_solver.viscous_pairing(run, testfield) for testfield in basis])
        logging.debug(f"Viscous terms of {name}: {rows[-1]}")
    return columns, rows


def sweep(planpath: str, outputpath: Optional[str] = None, verbose: Optional[bool] = False) -> str:
    """
    Runs every member of a vanishing-viscosity sweep and builds the ensemble diagnostics.

    Members share the scenario and differ by viscosity (and optionally by an initial body velocity offset).
    They run in parallel worker processes with a common time step. Failed members are recorded in
    sweep.json and left out of the ensemble; the sweep goes on.

    The sweep directory holds one run directory per member under members/, defects.csv (one defect report
    per measure time), measure_<k>.json manifests referencing the member snapshots, viscous.csv (the
    viscous-term series per member) and sweep.json.

    Parameters
    ----------
    planpath : str
        A sweep plan TOML file

    outputpath : Optional[str], optional
        Sweep directory, by default the plan's output_dir or <RIGIDFLOW_OUT or .>/sweeps/<scenario name>

    verbose : Optional[bool], optional
        If you wanna a verbose logging

    Returns
    -------
    str
        The sweep directory

    Raises
    ------
    ConfigInvalid
        - The plan file is missing or invalid
    """

    common_util.logging_initialize(verbose)

    plan = persistence_util.load_plan(planpath)
    if outputpath is None:
        outputpath = plan.output_dir if plan.output_dir is not None \
            else os.path.join(common_util.output_root(), "sweeps", plan.scenario.name)
    common_util.check_write_access(outputpath)

    members = plan.members()
    dt = common_dt(members)
    logging.info(f"Sweeping {len(members)} members over eps={plan.eps} with dt={dt:.6g} "
                 f"and {plan.workers} worker(s), this process may take a while...")

    start = time.perf_counter()
    directories = [os.path.join(outputpath, "members", member.name) for member in members]
    if plan.workers > 1:
        with ProcessPoolExecutor(max_workers=plan.workers) as executor:
            futures = [executor.submit(_run_member, Scenario.to_dict(member), dt, directory)
                       for member, directory in zip(members, directories)]
            results = [_member_safe_run(future, member, directory)
                       for future, member, directory in zip(futures, members, directories)]
    else:
        results = [_member_safe_run(_InlineFuture(_run_member, Scenario.to_dict(member), dt, directory),
                                    member, directory)
                   for member, directory in zip(members, directories)]

    completed = [(member, directory) for member, (directory, status, _) in zip(members, results)
                 if status == "completed"]
    written = []
    if len(completed) > 0:
        runs = [persistence_util.load_trajectory(directory) for _, directory in completed]

        reports = []
        testfields = scenario_util.testfield_basis(runs[0].grid, runs[0].shape, runs[0].snapshots[0].body)
        for index, t in enumerate(plan.times):
            measure = young_measure.from_ensemble(runs, t)
            measure.sources = [os.path.relpath(_snapshot_path(run, directory, t), outputpath)
                               for run, (_, directory) in zip(runs, completed)]
            manifest_path = os.path.join(outputpath, f"measure_{index}.json")
            persistence_util.save_measure_manifest(measure, manifest_path)
            written.append(manifest_path)
            reports.append(young_measure.energy_defect(runs, t, plan.speed_cutoff, testfields))
            logging.info(f"Defect at t={t:g}: D={reports[-1].D:.6e}")

        defects_path = os.path.join(outputpath, "defects.csv")
        persistence_util.write_csv(defects_path, DefectReport.COLUMNS, [report.row() for report in reports])
        written.append(defects_path)

        columns, rows = _viscous_rows(runs, [member.name for member, _ in completed])
        viscous_path = os.path.join(outputpath, "viscous.csv")
        persistence_util.write_csv(viscous_path, columns, rows)
        written.append(viscous_path)
    else:
        logging.warning("No sweep member completed, ensemble diagnostics skipped")

    sweep_path = os.path.join(outputpath, "sweep.json")
    persistence_util.save_json({
        "plan": SweepPlan.to_dict(plan),
        "dt": dt,
        "members": [{"name": member.name, "eps": member.params.eps, "directory": os.path.relpath(directory, outputpath),
                     "status": status, "message": message}
                    for member, (directory, status, message) in zip(members, results)],
    }, sweep_path)
    written.append(sweep_path)
    persistence_util.write_manifest(outputpath, SweepPlan.to_dict(plan), written, time.perf_counter() - start)

    logging.info(f"Sweep finished: {len(completed)} of {len(members)} members completed, outputs in {outputpath}")
    return outputpath
