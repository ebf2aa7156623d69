from __future__ import annotations
from typing import List, Optional, Sequence
import numpy as np
from rigidflow.exceptions import GridMismatch
from rigidflow.models.geometry import BodyShape, Grid
from rigidflow.models.rigid import RigidState


WEIGHT_TOLERANCE = 1e-12


class AtomicYoungMeasure():
    """
    Class that represents a finite atomic Young measure on the cells of a grid at one time

    Each atom is a cell-centered velocity field (nx, ny, 2) carried with a non-negative weight, the
    weights summing to one. On the body cells every atom carries the rigid field of the common body.
    """

    def __init__(self, grid: Grid, t: float, weights: Sequence[float], atoms: Sequence[np.ndarray],
                 body: Optional[RigidState] = None, shape: Optional[BodyShape] = None,
                 body_mask: Optional[np.ndarray] = None, sources: Optional[List[str]] = None):
        """
        AtomicYoungMeasure class constructor

        Parameters
        ----------
        grid : Grid
            Grid whose cell centers carry the atoms
        t : float
            Model time of the atoms (s)
        weights : Sequence[float]
            Atom weights, non-negative and summing to one
        atoms : Sequence[np.ndarray]
            Cell-centered velocity fields with shape (nx, ny, 2)
        body : RigidState, optional
            Common body state, by default None
        shape : BodyShape, optional
            Reference body, by default None
        body_mask : np.ndarray, optional
            Cells occupied by the body, by default None
        sources : List[str], optional
            Snapshot paths the atoms were read from, by default None

        Raises
        ------
        ValueError
            - Weights must be non-negative and sum to one
        GridMismatch
            - Atoms must match the grid
        """

        weights = np.asarray(weights, dtype=float)
        if weights.size == 0 or np.any(weights < 0) or abs(weights.sum() - 1.0) > WEIGHT_TOLERANCE:
            raise(ValueError("Atom weights must be non-negative and sum to one"))
        if len(atoms) != weights.size:
            raise(ValueError("One weight per atom is needed"))
        for atom in atoms:
            if np.shape(atom) != grid.shape_p + (2,):
                raise(GridMismatch(f"Atom shape {np.shape(atom)} does not match the grid"))

        self.grid = grid
        self.t = float(t)
        self.weights = weights
        self.atoms = np.array(atoms, dtype=float)
        self.body = body
        self.shape = shape
        self.body_mask = body_mask if body_mask is not None else np.zeros(grid.shape_p, dtype=bool)
        self.sources = sources if sources is not None else []

    def __len__(self) -> int:
        return self.weights.size

    def barycenter(self) -> np.ndarray:
        return np.einsum("k,k...->...", self.weights, self.atoms)

    def header(self) -> dict:
        return {
            "t": self.t,
            "grid": Grid.to_dict(self.grid),
            "weights": self.weights.tolist(),
            "sources": self.sources,
            "body": RigidState.to_dict(self.body) if self.body is not None else None,
        }


class DefectReport():
    """
    Class that represents the dissipation defect estimators of an ensemble at one time
    """

    COLUMNS = ["t", "D", "oscillation_energy", "concentration_estimate", "mu_bound", "xi", "speed_cutoff"]

    def __init__(self, t: float, oscillation_energy: float, concentration_estimate: float, mu_bound: float,
                 speed_cutoff: float, xi: Optional[float] = 2.0):
        """
        DefectReport class constructor

        Parameters
        ----------
        t : float
            Model time (s)
        oscillation_energy : float
            int <Y, |u|^2/2> - |<Y, u>|^2/2 (J)
        concentration_estimate : float
            Mean over atoms of the energy carried where the speed exceeds the cutoff (J)
        mu_bound : float
            Largest normalized action of the defect stress on the test fields, at most xi D (J)
        speed_cutoff : float
            Speed cutoff M (m/s)
        xi : float, optional
            Compatibility constant, by default 2.0

        Raises
        ------
        ValueError
            - Estimators cannot be negative
        """

        if min(oscillation_energy, concentration_estimate, mu_bound) < 0:
            raise(ValueError("Defect estimators cannot be negative"))

        self.t = float(t)
        self.oscillation_energy = float(oscillation_energy)
        self.concentration_estimate = float(concentration_estimate)
        self.mu_bound = float(mu_bound)
        self.speed_cutoff = float(speed_cutoff)
        self.xi = float(xi)

    @property
    def D(self) -> float:
        return self.oscillation_energy + self.concentration_estimate

    def row(self) -> List[float]:
        return [getattr(self, column) for column in self.COLUMNS]

    @classmethod
    def from_dict(cls, report_dict: dict) -> DefectReport:
        return cls(report_dict.get("t"), report_dict.get("oscillation_energy"),
                   report_dict.get("concentration_estimate"), report_dict.get("mu_bound"),
                   report_dict.get("speed_cutoff"), report_dict.get("xi", 2.0))

    @staticmethod
    def to_dict(report: DefectReport) -> dict:
        return {column: getattr(report, column) for column in DefectReport.COLUMNS}
