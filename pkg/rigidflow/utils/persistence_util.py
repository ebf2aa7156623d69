import csv
import json
import os
import sys
from typing import List, Optional, Sequence, Tuple
import numpy as np
import scipy
from rigidflow.exceptions import ConfigInvalid, GridMismatch
from rigidflow.models.fluid import CoupledState, SolverParams, StaggeredField
from rigidflow.models.geometry import BodyShape, Grid
from rigidflow.models.measure import AtomicYoungMeasure
from rigidflow.models.rigid import MassProperties, RigidState
from rigidflow.models.scenario import Scenario, SweepPlan
from rigidflow.models.trajectory import EnergyReport, Trajectory
from rigidflow.models.transform import TransformBundle
from rigidflow.utils import common_util

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


PAYLOAD_DTYPE = "<f8"
BODY_COLUMNS = ["t", "X", "Y", "Z", "Vx", "Vy", "Vz", "wx", "wy", "wz"] + [f"O{i}{j}" for i in range(3) for j in range(3)]


def load_toml(path: str) -> dict:
    """
    Reads a TOML file

    Raises
    ------
    ConfigInvalid
        - The file is missing or is not valid TOML
    """

    try:
        with open(path, "rb") as tomlfile:
            return tomllib.load(tomlfile)
    except FileNotFoundError:
        raise(ConfigInvalid(f"Configuration file not found: {path}"))
    except tomllib.TOMLDecodeError as e:
        raise(ConfigInvalid(f"Invalid TOML in {path}: {e}"))


def load_scenario(path: str) -> Scenario:
    return Scenario.from_dict(load_toml(path))


def load_plan(path: str) -> SweepPlan:
    """
    Reads a sweep plan, resolving a scenario path relative to the plan file
    """

    plan_dict = load_toml(path)
    scenario = None
    if isinstance(plan_dict.get("scenario"), str):
        scenario_path = os.path.join(os.path.dirname(os.path.abspath(path)), plan_dict.get("scenario"))
        scenario = load_scenario(scenario_path)
    return SweepPlan.from_dict(plan_dict, scenario)


def save_json(data: dict, outputpath: str):
    with open(outputpath, "w") as jsonfile:
        json.dump(data, jsonfile, indent=2, sort_keys=True, ensure_ascii=False)


def load_json(path: str) -> dict:
    with open(path, "r") as jsonfile:
        return json.load(jsonfile)


def format_value(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.17g}"


def write_csv(outputpath: str, columns: Sequence[str], rows: Sequence[Sequence]):
    """
    Writes numeric rows with a header, floats in shortest round-trip form
    """

    with open(outputpath, "w", newline="") as csvfile:
        writer = csv.writer(csvfile, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(value) for value in row])


def write_table(outputpath: str, columns: Sequence[str], rows: Sequence[Sequence]):
    """Writes rows of mixed text and preformatted values with a header"""
    with open(outputpath, "w", newline="") as csvfile:
        writer = csv.writer(csvfile, lineterminator="\n")
        writer.writerow(columns)
        writer.writerows(rows)


def read_csv(path: str) -> Tuple[List[str], np.ndarray]:
    with open(path, "r", newline="") as csvfile:
        reader = csv.reader(csvfile)
        columns = next(reader)
        rows = [[float(value) for value in row] for row in reader if len(row) > 0]
    return columns, np.array(rows, dtype=float).reshape(-1, len(columns))


def _write_payload(outputpath: str, arrays: Sequence[np.ndarray]):
    payload = np.concatenate([np.asarray(a, dtype=float).ravel() for a in arrays]) if len(arrays) > 0 else np.zeros(0)
    payload.astype(PAYLOAD_DTYPE).tofile(outputpath)


def _read_payload(path: str, count: int) -> np.ndarray:
    payload = np.fromfile(path, dtype=PAYLOAD_DTYPE)
    if payload.size != count:
        raise(GridMismatch(f"Payload {path} holds {payload.size} values, expected {count}"))
    return payload.astype(float)


def save_snapshot(state: CoupledState, directory: str, index: int) -> str:
    """
    Writes a snapshot as a JSON header and a little-endian float64 payload of u, v and p

    Returns
    -------
    str
        Path of the header
    """

    name = f"snapshot_{index:05d}"
    payload = state.fluid.flat()
    _write_payload(os.path.join(directory, f"{name}.bin"), [payload])
    header = {
        "time": state.time,
        "grid": Grid.to_dict(state.grid),
        "payload": f"{name}.bin",
        "dtype": PAYLOAD_DTYPE,
        "count": int(payload.size),
        "layout": ["u", "v", "p"],
        "body": RigidState.to_dict(state.body) if state.body is not None else None,
        "shape": BodyShape.to_dict(state.shape) if state.shape is not None else None,
    }
    header_path = os.path.join(directory, f"{name}.json")
    save_json(header, header_path)
    return header_path


def load_snapshot(header_path: str) -> CoupledState:
    header = load_json(header_path)
    grid = Grid.from_dict(header.get("grid"))
    payload = _read_payload(os.path.join(os.path.dirname(header_path), header.get("payload")), header.get("count"))
    body = header.get("body")
    shape = header.get("shape")
    return CoupledState(StaggeredField.from_flat(grid, payload),
                        RigidState(body["X"], body["O"], body["V"], body["w"], validate=False) if body else None,
                        header.get("time"), BodyShape.from_dict(shape) if shape else None)


def save_trajectory(trajectory: Trajectory, directory: str) -> List[str]:
    """
    Writes snapshots, energy.csv, body.csv and run.json of a trajectory

    Returns
    -------
    List[str]
        Written file paths
    """

    snapshot_dir = os.path.join(directory, "snapshots")
    os.makedirs(snapshot_dir, exist_ok=True)
    written = []
    for index, snapshot in enumerate(trajectory.snapshots):
        header_path = save_snapshot(snapshot, snapshot_dir, index)
        written += [header_path, header_path[:-5] + ".bin"]

    energy_path = os.path.join(directory, "energy.csv")
    residual_names = sorted({name for report in trajectory.reports for name in report.residuals})
    write_csv(energy_path, EnergyReport.COLUMNS + [f"residual_{name}" for name in residual_names],
              [report.row() + [report.residuals.get(name, 0.0) for name in residual_names]
               for report in trajectory.reports])
    written.append(energy_path)

    if trajectory.has_body and len(trajectory.body_states) > 0:
        body_path = os.path.join(directory, "body.csv")
        write_csv(body_path, BODY_COLUMNS,
                  [[t] + list(s.X) + list(s.V) + list(s.w) + list(s.O.ravel())
                   for t, s in zip(trajectory.body_times, trajectory.body_states)])
        written.append(body_path)

    run_path = os.path.join(directory, "run.json")
    save_json({
        "params": SolverParams.to_dict(trajectory.params),
        "grid": Grid.to_dict(trajectory.grid),
        "shape": BodyShape.to_dict(trajectory.shape) if trajectory.shape is not None else None,
        "mass": MassProperties.to_dict(trajectory.mass) if trajectory.mass is not None else None,
        "status": trajectory.status,
        "message": trajectory.message,
        "snapshots": [os.path.relpath(p, directory) for p in written if p.endswith(".json")],
    }, run_path)
    written.append(run_path)
    return written


def load_trajectory(directory: str) -> Trajectory:
    """
    Reads a trajectory written by save_trajectory

    Raises
    ------
    ConfigInvalid
        - The directory holds no run
    """

    run_path = os.path.join(directory, "run.json")
    if not os.path.isfile(run_path):
        raise(ConfigInvalid(f"No run found in {directory}"))
    run = load_json(run_path)

    shape = BodyShape.from_dict(run["shape"]) if run.get("shape") else None
    mass = MassProperties.from_dict(run["mass"]) if run.get("mass") else None
    trajectory = Trajectory(SolverParams.from_dict(run["params"]), Grid.from_dict(run["grid"]), shape, mass)
    trajectory.status = run.get("status")
    trajectory.message = run.get("message")
    for header in run.get("snapshots", []):
        trajectory.add_snapshot(load_snapshot(os.path.join(directory, header)))

    columns, rows = read_csv(os.path.join(directory, "energy.csv"))
    for row in rows:
        values = dict(zip(columns, row))
        residuals = {name[len("residual_"):]: value for name, value in values.items() if name.startswith("residual_")}
        report = EnergyReport.from_dict(values)
        report.residuals = residuals
        trajectory.add_report(report)

    body_path = os.path.join(directory, "body.csv")
    if os.path.isfile(body_path):
        _, rows = read_csv(body_path)
        for row in rows:
            trajectory.add_body_state(row[0], RigidState(row[1:4], row[10:19].reshape(3, 3), row[4:7], row[7:10],
                                                         validate=False))
    return trajectory


def save_bundle(bundle: TransformBundle, directory: str) -> str:
    """Writes a transform bundle as bundle.json and bundle.bin, arrays concatenated in header order"""
    arrays = bundle.arrays()
    _write_payload(os.path.join(directory, "bundle.bin"), list(arrays.values()))
    header = bundle.header()
    header["payload"] = "bundle.bin"
    header["dtype"] = PAYLOAD_DTYPE
    header["order"] = list(arrays.keys())
    header_path = os.path.join(directory, "bundle.json")
    save_json(header, header_path)
    return header_path


def load_bundle(header_path: str) -> TransformBundle:
    header = load_json(header_path)
    shapes = header["arrays"]
    count = int(sum(np.prod(shapes[name]) for name in header["order"]))
    payload = _read_payload(os.path.join(os.path.dirname(header_path), header["payload"]), count)

    arrays, offset = {}, 0
    for name in header["order"]:
        size = int(np.prod(shapes[name]))
        arrays[name] = payload[offset:offset + size].reshape(shapes[name])
        offset += size

    return TransformBundle(Grid.from_dict(header["lattice"]), header["times"], arrays["tilde_z2"], arrays["dtZ"],
                           arrays["dtY"], arrays["H"], arrays["G"], arrays["Gamma"], arrays["tilde_O"], arrays["V1"],
                           arrays["w1"], arrays["Vs"], arrays["ws"], arrays.get("X1"), arrays.get("O1"),
                           arrays.get("tilde_z1"))


def save_measure_manifest(measure: AtomicYoungMeasure, outputpath: str):
    """Atoms are referenced by the snapshot paths they were read from"""
    save_json(measure.header(), outputpath)


def write_manifest(directory: str, config: dict, files: Sequence[str], wall_time: float,
                   extra: Optional[dict] = None) -> str:
    """
    Writes manifest.json: configuration and its hash, package versions, wall time and output hashes
    """

    config_text = json.dumps(config, indent=2, sort_keys=True)
    manifest = {
        "config": config,
        "config_hash": common_util.text_hash(config_text),
        "versions": {"numpy": np.__version__, "scipy": scipy.__version__, "python": sys.version.split()[0]},
        "wall_time": wall_time,
        "outputs": {os.path.relpath(path, directory): common_util.file_hash(path) for path in sorted(files)},
    }
    if extra is not None:
        manifest.update(extra)
    manifest_path = os.path.join(directory, "manifest.json")
    save_json(manifest, manifest_path)
    return manifest_path
