from __future__ import annotations
from typing import Dict, List, Optional
import numpy as np
from rigidflow.exceptions import GridMismatch
from rigidflow.models.fluid import CoupledState, SolverParams
from rigidflow.models.geometry import BodyShape, Grid
from rigidflow.models.rigid import MassProperties, RigidState


class EnergyReport():
    """
    Class that represents one row of the energy time series
    """

    COLUMNS = ["t", "E_fluid", "E_body", "E_interior", "dissipation", "D", "E_rel", "gronwall_C"]

    def __init__(self, t: float, E_fluid: float, E_body: Optional[float] = 0.0, E_interior: Optional[float] = 0.0,
                 dissipation: Optional[float] = 0.0, D: Optional[float] = 0.0, E_rel: Optional[float] = 0.0,
                 gronwall_C: Optional[float] = 0.0, residuals: Optional[Dict[str, float]] = None):
        """
        EnergyReport class constructor

        Parameters
        ----------
        t : float
            Model time (s)
        E_fluid : float
            Kinetic energy of the fluid outside the body (J)
        E_body : float, optional
            Kinetic energy of the body (J), by default 0.0
        E_interior : float, optional
            Kinetic energy of the penalized fluid inside the body region (J), by default 0.0
        dissipation : float, optional
            Cumulative viscous dissipation 2 eps int int |D(u)|^2 (J), by default 0.0
        D : float, optional
            Dissipation defect estimate (J), by default 0.0
        E_rel : float, optional
            Relative energy (J), by default 0.0
        gronwall_C : float, optional
            Fitted Gronwall rate (1/s), by default 0.0
        residuals : Dict[str, float], optional
            Residuals of checked identities keyed by name, by default None

        Raises
        ------
        ValueError
            - Energies cannot be negative
        """

        if min(E_fluid, E_body, E_interior, E_rel) < 0:
            raise(ValueError("Energies cannot be negative"))

        self.t = float(t)
        self.E_fluid = float(E_fluid)
        self.E_body = float(E_body)
        self.E_interior = float(E_interior)
        self.dissipation = float(dissipation)
        self.D = float(D)
        self.E_rel = float(E_rel)
        self.gronwall_C = float(gronwall_C)
        self.residuals = residuals if residuals is not None else {}

    @property
    def total(self) -> float:
        """Energy of the penalized system: fluid, body and the fluid carried inside the body region"""
        return self.E_fluid + self.E_body + self.E_interior

    def row(self) -> List[float]:
        return [getattr(self, column) for column in self.COLUMNS]

    @classmethod
    def from_dict(cls, report_dict: dict) -> EnergyReport:
        return cls(report_dict.get("t"), report_dict.get("E_fluid"), report_dict.get("E_body", 0.0),
                   report_dict.get("E_interior", 0.0), report_dict.get("dissipation", 0.0), report_dict.get("D", 0.0),
                   report_dict.get("E_rel", 0.0), report_dict.get("gronwall_C", 0.0), report_dict.get("residuals"))

    @staticmethod
    def to_dict(report: EnergyReport) -> dict:
        report_dict = {column: getattr(report, column) for column in EnergyReport.COLUMNS}
        report_dict["residuals"] = report.residuals
        return report_dict


class Trajectory():
    """
    Class that represents the outcome of a coupled run: stored snapshots, per-step energy rows and the
    per-step body history
    """

    def __init__(self, params: SolverParams, grid: Grid, shape: Optional[BodyShape] = None,
                 mass: Optional[MassProperties] = None):
        """
        Trajectory class constructor

        Parameters
        ----------
        params : SolverParams
            Parameters of the run, with the time step resolved
        grid : Grid
            The MAC grid
        shape : BodyShape, optional
            Reference body, by default None
        mass : MassProperties, optional
            Mass properties of the body, by default None
        """

        self.params = params
        self.grid = grid
        self.shape = shape
        self.mass = mass
        self.snapshots = []
        self.reports = []
        self.body_times = []
        self.body_states = []
        self.status = "running"
        self.message = None

    @property
    def times(self) -> np.ndarray:
        return np.array([snapshot.time for snapshot in self.snapshots])

    @property
    def has_body(self) -> bool:
        return self.shape is not None

    @property
    def final(self) -> CoupledState:
        return self.snapshots[-1]

    def add_snapshot(self, state: CoupledState):
        if state.grid is not self.grid and not state.grid.matches(self.grid):
            raise(GridMismatch("Snapshot grid does not match the trajectory grid"))
        if len(self.snapshots) > 0 and state.time <= self.snapshots[-1].time:
            raise(ValueError("Snapshots must be added in increasing time"))
        self.snapshots.append(state)

    def add_report(self, report: EnergyReport):
        if len(self.reports) > 0 and report.t < self.reports[-1].t:
            raise(ValueError("Energy rows must be monotone in time"))
        self.reports.append(report)

    def add_body_state(self, t: float, state: RigidState):
        self.body_times.append(float(t))
        self.body_states.append(state)

    def snapshot_at(self, t: float, tolerance: Optional[float] = None) -> CoupledState:
        """
        Stored snapshot closest to a time

        Raises
        ------
        GridMismatch
            - No snapshot within the tolerance
        """

        times = self.times
        index = int(np.argmin(np.abs(times - t)))
        tolerance = 0.5 * self.params.dt if tolerance is None and self.params.dt is not None else tolerance
        if tolerance is not None and abs(times[index] - t) > tolerance:
            raise(GridMismatch(f"No snapshot at t={t} (closest is t={times[index]})"))
        return self.snapshots[index]

    def report_series(self, column: str) -> np.ndarray:
        return np.array([getattr(report, column) for report in self.reports])
