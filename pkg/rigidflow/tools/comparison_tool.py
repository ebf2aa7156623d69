import os
import time
import logging
from typing import Callable, List, Optional, Sequence, Tuple
import numpy as np
from rigidflow.exceptions import ConfigInvalid, GridMismatch
from rigidflow.models.geometry import BodyShape, Placement
from rigidflow.models.trajectory import Trajectory
from rigidflow.models.transform import TransformBundle
from rigidflow.numerics import diagnostics, fluid_solver, geometry, transform, young_measure
from rigidflow.numerics.rigid_dynamics import BodyHistory
import rigidflow.utils.common_util as common_util
import rigidflow.utils.persistence_util as persistence_util
import rigidflow.utils.scenario_util as scenario_util


RELATIVE_ENERGY_COLUMNS = ["t", "E_rel", "fluid", "body", "lower_bound", "D"]
IDENTITY_COLUMNS = ["t", "forcing_max", "boundary_offset_ratio", "boundary_rate_ratio", "map_norm_ratio",
                    "rate_norm_ratio", "energy_equality_residual", "pressure_work_lhs", "pressure_work_rhs"]


def load_runs(path: str) -> List[Trajectory]:
    """
    The completed members of a sweep directory, or the single run of a run directory
    """

    sweep_path = os.path.join(path, "sweep.json")
    if os.path.isfile(sweep_path):
        members = persistence_util.load_json(sweep_path).get("members", [])
        runs = [persistence_util.load_trajectory(os.path.join(path, member.get("directory")))
                for member in members if member.get("status") == "completed"]
        if len(runs) == 0:
            raise(GridMismatch(f"The sweep in {path} has no completed member"))
        return runs
    return [persistence_util.load_trajectory(path)]


def check_compatible(weak: List[Trajectory], strong: Trajectory):
    """
    Raises
    ------
    GridMismatch
        - Runs do not share grid, body shape or snapshot times
    """

    fluid_solver.as_ensemble(weak)
    reference = weak[0]
    if not reference.grid.matches(strong.grid):
        raise(GridMismatch("Compared runs do not share a grid"))
    if reference.has_body != strong.has_body or \
            (reference.has_body and BodyShape.to_dict(reference.shape) != BodyShape.to_dict(strong.shape)):
        raise(GridMismatch("Compared runs do not share the body shape"))
    if reference.times.shape != strong.times.shape or not np.allclose(reference.times, strong.times):
        raise(GridMismatch("Compared runs do not share snapshot times"))


def body_history(run: Trajectory) -> BodyHistory:
    return BodyHistory(run.body_times, run.body_states)


def build_run_bundle(weak: Trajectory, strong: Trajectory) -> TransformBundle:
    """
    Change of coordinates from the weak run's body motion to the strong run's, on the grid nodes

    The bundle is stored at the strong run's snapshot spacing and its flows take at least one RK4 step per
    solver step.
    """

    grid = strong.grid
    first = body_history(weak)
    ramp = scenario_util.testfield_ramp(grid, weak.shape, first.state(0))
    margins = (scenario_util.CUTOFF_INNER_CELLS * grid.h, ramp, scenario_util.CUTOFF_OUTER_CELLS * grid.h)
    t_end = float(strong.times[-1])
    spacing = t_end / max(strong.times.size - 1, 1)
    substeps = max(1, int(np.ceil(spacing / strong.params.dt - 1e-9)))
    return transform.build_bundle(first, body_history(strong), weak.shape, grid, margins, t_end, spacing, substeps)


def _pressure_series(strong: Trajectory) -> Callable:
    """P(t, x) on world points from the nearest stored snapshot of the strong run"""
    samplers = [fluid_solver.pressure_sampler(snapshot.fluid) for snapshot in strong.snapshots]
    times = strong.times

    def pressure(t, x):
        return samplers[int(np.argmin(np.abs(times - t)))](x[..., :2])

    return pressure


def _defects(weak: List[Trajectory], times: np.ndarray) -> np.ndarray:
    if len(weak) < 2:
        return np.zeros(times.size)
    return np.array([young_measure.energy_defect(weak, t).D for t in times])


def _body_free_comparison(weak: List[Trajectory], strong: Trajectory) -> Tuple[list, dict]:
    rows = []
    for snapshot in strong.snapshots:
        measure = young_measure.from_ensemble(weak, snapshot.time)
        energy = diagnostics.relative_energy(measure, snapshot.fluid.centered_velocity())
        rows.append([snapshot.time, energy["E_rel"], energy["fluid"], energy["body"], energy["lower_bound"]])
    return rows, {}


def _body_comparison(weak: List[Trajectory], strong: Trajectory, directory: str) -> Tuple[list, dict, list, str]:
    reference = weak[0]
    shape, mp = reference.shape, reference.mass
    bundle = build_run_bundle(reference, strong)
    grid = strong.grid
    nodes = bundle.nodes
    indices = [int(np.argmin(np.abs(bundle.times - snapshot.time))) for snapshot in strong.snapshots]

    rows, Us_series, ubar_series, F_series, masks = [], [], [], [], []
    for snapshot, k in zip(strong.snapshots, indices):
        measure = young_measure.from_ensemble(weak, snapshot.time)
        Us = transform.transform_centered(fluid_solver.center_sampler(snapshot.fluid), bundle, k, shape)
        energy = diagnostics.relative_energy(measure, Us, mp=mp, Vs=bundle.Vs[k], ws=bundle.ws[k])
        rows.append([snapshot.time, energy["E_rel"], energy["fluid"], energy["body"], energy["lower_bound"]])

        Us_nodes, Ps = transform.transform_velocity(fluid_solver.velocity_sampler(snapshot.fluid), bundle, k, shape,
                                                    fluid_solver.pressure_sampler(snapshot.fluid))
        O1 = bundle.O1[k] if bundle.O1 is not None else np.eye(3)
        mask = geometry.signed_distance(shape, Placement(bundle.X1[k], O1), nodes) > 0
        Us_series.append(Us_nodes)
        ubar_series.append(fluid_solver.cell_sampler(grid, measure.barycenter())(nodes))
        F_series.append(transform.forcing(Us_nodes, Ps, bundle, k))
        masks.append(mask)
    Us_series, ubar_series = np.array(Us_series), np.array(ubar_series)
    F_series, masks = np.array(F_series), np.array(masks)

    estimates = transform.map_estimates(bundle, shape)
    forcing_max = np.array([float(np.linalg.norm(F, axis=-1)[mask].max(initial=0.0))
                            for F, mask in zip(F_series, masks)])

    aligned = len(indices) == len(bundle)
    if aligned:
        equality = diagnostics.weak_strong_energy_equality_check(bundle, Us_series, ubar_series, F_series, masks,
                                                                 mp)["residual"]
        ratio = transform.forcing_ratio(bundle, F_series, masks)
    else:
        logging.info("Snapshots do not cover every bundle time, energy equality and forcing ratio skipped")
        equality, ratio = np.full(len(indices), np.nan), None

    first = body_history(reference)
    pressure = _pressure_series(strong)
    Vs, ws = diagnostics.transformed_body_velocities(shape, mp, first, bundle.times, pressure, bundle.Vs[0],
                                                     bundle.ws[0], grid.h)
    work = diagnostics.pressure_work_identity_check(shape, mp, first, bundle.times, Vs, ws, pressure, grid.h)

    identities = [[t, forcing_max[i], estimates["boundary_offset_ratio"][k], estimates["boundary_rate_ratio"][k],
                   estimates["map_norm_ratio"][k], estimates["rate_norm_ratio"][k], equality[i],
                   work["lhs"][k], work["rhs"][k]]
                  for i, (t, k) in enumerate(zip(strong.times, indices))]

    W = transform.angular_generator(first.times, first.O)
    summary = {
        "composition_error": float(transform.composition_error(bundle).max()),
        "volume_error": transform.volume_error(bundle),
        "relative_rotation_error": transform.relative_rotation_error(bundle),
        "forcing_max": float(forcing_max.max(initial=0.0)),
        "forcing_ratio": ratio,
        "map_estimate_ratios": {name: float(np.max(estimates[name], initial=0.0))
                                for name in ("boundary_offset_ratio", "boundary_rate_ratio", "map_norm_ratio",
                                             "rate_norm_ratio")},
        "energy_equality_residual": float(np.nanmax(np.abs(equality))) if aligned else None,
        "pressure_work_residual": work["residual"] / work["scale"],
        "pressure_work_residual_with_transport": work["residual_with_transport"] / work["scale"],
        "rotation_uniqueness": float(transform.rotation_uniqueness_ode(first.times, W).max()),
    }
    return rows, summary, identities, persistence_util.save_bundle(bundle, directory)


def refinement_slack(records: Sequence[dict], dt: float, h: float) -> Tuple[float, float, float]:
    """
    Slack a dt + b h^2 of the Gronwall bound at a resolution, with a and b fitted to the largest relative
    energies of comparisons at several resolutions

    Each record holds the ``dt``, ``h`` and ``E_rel_max`` of a comparison. Without two distinct
    resolutions among the records the slack and both coefficients are 0.

    Returns
    -------
    Tuple[float, float, float]
        The slack, a and b
    """

    if len({(float(record["dt"]), float(record["h"])) for record in records}) < 2:
        return 0.0, 0.0, 0.0
    a, b = diagnostics.fit_refinement_slack([record["E_rel_max"] for record in records],
                                            [record["dt"] for record in records], [record["h"] for record in records])
    return a * dt + b * h * h, a, b


def _load_refinement(paths: Sequence[str]) -> List[dict]:
    """
    Raises
    ------
    ConfigInvalid
        - A path is not a comparison directory
    """

    records = []
    for path in paths:
        summary_path = os.path.join(path, "comparison.json")
        if not os.path.isfile(summary_path):
            raise(ConfigInvalid(f"{path} is not a comparison directory"))
        summary = persistence_util.load_json(summary_path)
        records.append({name: summary[name] for name in ("dt", "h", "E_rel_max")})
    return records


def compare(weakpath: str, strongpath: str, outputpath: Optional[str] = None,
            refinement: Optional[Sequence[str]] = None, verbose: Optional[bool] = False) -> str:
    """
    Compares a run (or the ensemble of a sweep) against a reference run taken as the strong solution.

    The strong run's fields are carried to the weak run's body configuration through the change of
    coordinates between the two body motions; the relative energy, the Gronwall rate, the forcing of the
    transformed equations, the map estimates and the pressure-work identity are written to
    relative_energy.csv, identities.csv and comparison.json, along with the transform bundle and a
    manifest. Body-free runs only get the relative energy and its Gronwall fit.

    Parameters
    ----------
    weakpath : str
        A run directory or a sweep directory (its completed members form the ensemble)

    strongpath : str
        A run directory

    outputpath : Optional[str], optional
        Comparison directory, by default <RIGIDFLOW_OUT or .>/comparisons/<weak>_vs_<strong>

    refinement : Optional[Sequence[str]], optional
        Comparison directories of the same pair at other resolutions. Their largest relative energies, with
        this one, fit the slack a dt + b h^2 of the Gronwall bound, by default None (no slack)

    verbose : Optional[bool], optional
        If you wanna a verbose logging

    Returns
    -------
    str
        The comparison directory

    Raises
    ------
    GridMismatch
        - Runs do not share grid, body shape or snapshot times
    ConfigInvalid
        - A refinement path is not a comparison directory
    """

    common_util.logging_initialize(verbose)

    weak = load_runs(weakpath)
    strong = persistence_util.load_trajectory(strongpath)
    check_compatible(weak, strong)
    records = _load_refinement(refinement or [])

    if outputpath is None:
        name = f"{os.path.basename(os.path.normpath(weakpath))}_vs_{os.path.basename(os.path.normpath(strongpath))}"
        outputpath = os.path.join(common_util.output_root(), "comparisons", name)
    common_util.check_write_access(outputpath)

    logging.info(f"Comparing {len(weak)} run(s) against the reference run over {strong.times.size} snapshots...")
    start = time.perf_counter()

    written = []
    if strong.has_body:
        rows, summary, identities, bundle_path = _body_comparison(weak, strong, outputpath)
        identities_path = os.path.join(outputpath, "identities.csv")
        persistence_util.write_csv(identities_path, IDENTITY_COLUMNS, identities)
        written += [identities_path, bundle_path, os.path.join(outputpath, "bundle.bin")]
    else:
        rows, summary = _body_free_comparison(weak, strong)

    times = strong.times
    D = _defects(weak, times)
    rows = [row + [d] for row, d in zip(rows, D)]
    E_rel = np.array([row[1] for row in rows])
    record = {"dt": max(float(run.params.dt) for run in weak + [strong]), "h": strong.grid.h,
              "E_rel_max": float(E_rel.max())}
    slack, a, b = refinement_slack(records + [record], record["dt"], record["h"])
    C, violation = diagnostics.gronwall_check(times, E_rel, D, slack)
    summary.update(record)
    summary.update({"gronwall_rate": C, "gronwall_violation": violation, "slack": slack, "slack_coefficients": [a, b],
                    "E_rel_initial": float(E_rel[0]), "E_rel_final": float(E_rel[-1]), "members": len(weak)})

    energy_path = os.path.join(outputpath, "relative_energy.csv")
    persistence_util.write_csv(energy_path, RELATIVE_ENERGY_COLUMNS, rows)
    summary_path = os.path.join(outputpath, "comparison.json")
    persistence_util.save_json(summary, summary_path)
    written += [energy_path, summary_path]
    persistence_util.write_manifest(outputpath, {"weak": os.path.abspath(weakpath),
                                                 "strong": os.path.abspath(strongpath)},
                                    written, time.perf_counter() - start)

    logging.info(f"E_rel goes from {E_rel[0]:.6e} to {E_rel[-1]:.6e}, Gronwall rate {C:.6g}, "
                 f"outputs in {outputpath}")
    return outputpath
