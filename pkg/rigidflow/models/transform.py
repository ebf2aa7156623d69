from __future__ import annotations
from typing import Optional, Sequence
import numpy as np
from rigidflow.exceptions import ConfigInvalid, GridMismatch
from rigidflow.models.geometry import BodyShape, Container, Grid, Placement


class CutoffField():
    """
    Class that represents a cutoff function around a placed body

    The field equals 1 within ``inner`` of the body, decays to 0 across a ramp of width ``ramp`` and
    vanishes on the zone of width ``outer`` along the container walls.
    """

    def __init__(self, shape: BodyShape, placement: Placement, container: Container, inner: float, ramp: float,
                 outer: Optional[float] = 0.0):
        """
        CutoffField class constructor

        Parameters
        ----------
        shape : BodyShape
            Reference body
        placement : Placement
            Current placement of the body
        container : Container
            The container
        inner : float
            Width of the zone around the body where the cutoff equals 1 (meters)
        ramp : float
            Width of the transition (meters)
        outer : float, optional
            Width of the zone along the walls where the cutoff vanishes (meters), by default 0.0

        Raises
        ------
        ConfigInvalid
            - Margins cannot be negative and the ramp must be positive
        """

        if inner < 0 or outer < 0 or not ramp > 0:
            raise(ConfigInvalid("Cutoff margins cannot be negative and the ramp must be positive"))

        self.shape = shape
        self.placement = placement
        self.container = container
        self.inner = float(inner)
        self.ramp = float(ramp)
        self.outer = float(outer)

    @property
    def reach(self) -> float:
        """Distance from the body beyond which the cutoff vanishes"""
        return self.inner + self.ramp


class FlowMap():
    """
    Class that represents a map of the container sampled on the nodes of a lattice at a sequence of times

    Samples are stored as displacements, map(t_k, y) = y + displacement[k] at the lattice nodes.
    """

    def __init__(self, lattice: Grid, times: Sequence[float], displacement: np.ndarray,
                 kind: Optional[str] = "forward"):
        """
        FlowMap class constructor

        Parameters
        ----------
        lattice : Grid
            Lattice whose nodes carry the samples
        times : Sequence[float]
            Sample times, increasing and starting at 0
        displacement : np.ndarray
            Displacements with shape (len(times), nx+1, ny+1, 2)
        kind : str, optional
            forward for Z, inverse for Y, by default forward

        Raises
        ------
        GridMismatch
            - Displacement shape must match the lattice and the times
        ValueError
            - Times must increase
        """

        self.lattice = lattice
        self.times = np.asarray(times, dtype=float)
        self.displacement = np.asarray(displacement, dtype=float)
        self.kind = kind

        if self.displacement.shape != (self.times.size, lattice.nx + 1, lattice.ny + 1, 2):
            raise(GridMismatch(f"Displacement shape {self.displacement.shape} does not match the lattice and times"))

        if np.any(np.diff(self.times) <= 0):
            raise(ValueError("Flow map times must increase"))

    def __len__(self) -> int:
        return self.times.size

    @property
    def nodes(self) -> np.ndarray:
        return self.lattice.nodes()[..., :2]

    def samples(self, index: int) -> np.ndarray:
        """Mapped node positions at the time index"""
        return self.nodes + self.displacement[index]

    def header(self) -> dict:
        return {"kind": self.kind, "lattice": Grid.to_dict(self.lattice), "times": self.times.tolist()}


class TransformBundle():
    """
    Class that represents the change of coordinates between two body motions, sampled on a lattice

    Attributes hold, per stored time, the samples of tildeZ2 (the map sending the first body's
    configuration to the second's), its time derivative, the time derivative of the inverse map
    evaluated along tildeZ2, the metric terms H, G and Gamma, the relative rotation tildeO and the
    body velocities of both motions.
    """

    def __init__(self, lattice: Grid, times: Sequence[float], tilde_z2: np.ndarray, dtZ: np.ndarray, dtY: np.ndarray,
                 H: np.ndarray, G: np.ndarray, Gamma: np.ndarray, tilde_O: np.ndarray, V1: np.ndarray, w1: np.ndarray,
                 Vs: np.ndarray, ws: np.ndarray, X1: Optional[np.ndarray] = None, O1: Optional[np.ndarray] = None,
                 tilde_z1: Optional[np.ndarray] = None, maps: Optional[tuple] = None):
        """
        TransformBundle class constructor

        Parameters
        ----------
        lattice : Grid
            Sampling lattice
        times : Sequence[float]
            Stored times
        tilde_z2 : np.ndarray
            tildeZ2 samples (T, nx+1, ny+1, 2)
        dtZ : np.ndarray
            Time derivative of tildeZ2 (T, nx+1, ny+1, 2)
        dtY : np.ndarray
            Time derivative of tildeZ1 evaluated at tildeZ2(x), equal to -H dtZ (T, nx+1, ny+1, 2)
        H : np.ndarray
            Inverse Jacobian of tildeZ2 (T, nx+1, ny+1, 2, 2)
        G : np.ndarray
            H H^T (T, nx+1, ny+1, 2, 2)
        Gamma : np.ndarray
            Gamma[..., i, a, b] = H_il d_a d_b (tildeZ2)_l (T, nx+1, ny+1, 2, 2, 2)
        tilde_O : np.ndarray
            O2 O1^T (T, 3, 3)
        V1 : np.ndarray
            Translational velocity of the first body (T, 3)
        w1 : np.ndarray
            Angular velocity of the first body (T, 3)
        Vs : np.ndarray
            Transformed translational velocity of the second body, tildeO^T V2 (T, 3)
        ws : np.ndarray
            Transformed angular velocity of the second body, tildeO^T w2 (T, 3)
        X1 : np.ndarray, optional
            Center of mass of the first body (T, 3), by default None
        O1 : np.ndarray, optional
            Rotation of the first body (T, 3, 3), by default None
        tilde_z1 : np.ndarray, optional
            tildeZ1 samples, the inverse of tildeZ2 (T, nx+1, ny+1, 2), by default None
        maps : tuple, optional
            The forward flow maps (Z1, Z2) used to evaluate the composite maps off the lattice, by default None

        Raises
        ------
        GridMismatch
            - Sample arrays must share the time axis
        """

        self.lattice = lattice
        self.times = np.asarray(times, dtype=float)
        count = self.times.size
        for name, array in (("tilde_z2", tilde_z2), ("dtZ", dtZ), ("dtY", dtY), ("H", H), ("G", G), ("Gamma", Gamma),
                            ("tilde_O", tilde_O), ("V1", V1), ("w1", w1), ("Vs", Vs), ("ws", ws)):
            if np.shape(array)[0] != count:
                raise(GridMismatch(f"Bundle field {name} does not have one entry per stored time"))

        self.tilde_z2 = tilde_z2
        self.dtZ = dtZ
        self.dtY = dtY
        self.H = H
        self.G = G
        self.Gamma = Gamma
        self.tilde_O = tilde_O
        self.V1 = V1
        self.w1 = w1
        self.Vs = Vs
        self.ws = ws
        self.X1 = X1
        self.O1 = O1
        self.tilde_z1 = tilde_z1
        self.maps = maps

    def __len__(self) -> int:
        return self.times.size

    @property
    def nodes(self) -> np.ndarray:
        return self.lattice.nodes()[..., :2]

    def arrays(self) -> dict:
        """Named sample arrays in a fixed order, used for persistence"""
        arrays = {
            "tilde_z2": self.tilde_z2,
            "dtZ": self.dtZ,
            "dtY": self.dtY,
            "H": self.H,
            "G": self.G,
            "Gamma": self.Gamma,
            "tilde_O": self.tilde_O,
            "V1": self.V1,
            "w1": self.w1,
            "Vs": self.Vs,
            "ws": self.ws,
        }
        if self.tilde_z1 is not None:
            arrays["tilde_z1"] = self.tilde_z1
        if self.X1 is not None:
            arrays["X1"] = self.X1
        if self.O1 is not None:
            arrays["O1"] = self.O1
        return arrays

    def header(self) -> dict:
        return {
            "lattice": Grid.to_dict(self.lattice),
            "times": self.times.tolist(),
            "arrays": {name: list(np.shape(array)) for name, array in self.arrays().items()},
        }
