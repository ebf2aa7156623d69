from __future__ import annotations
from typing import Optional, Sequence
import numpy as np
from rigidflow.exceptions import ConfigInvalid
from rigidflow.models.geometry import Placement, as_point3, ORTHOGONALITY_TOLERANCE


class RigidState():
    """
    Class that represents the kinematic state of the body: position, rotation and velocities
    """

    def __init__(self, X: Sequence[float], O: Optional[np.ndarray] = None, V: Optional[Sequence[float]] = None,
                 w: Optional[Sequence[float]] = None, validate: Optional[bool] = True):
        """
        RigidState class constructor

        Parameters
        ----------
        X : Sequence[float]
            Center of mass position (meters)
        O : np.ndarray, optional
            3x3 rotation matrix, by default None (identity)
        V : Sequence[float], optional
            Translational velocity (m/s), by default None (rest)
        w : Sequence[float], optional
            Angular velocity (rad/s), by default None (rest)
        validate : bool, optional
            Whether the rotation is checked for orthonormality, by default True

        Raises
        ------
        ConfigInvalid
            - Rotation must be orthonormal with determinant 1
            - Angular velocity must be finite
        """

        self.X = as_point3(X).copy()
        self.O = np.eye(3) if O is None else np.array(O, dtype=float)
        self.V = np.zeros(3) if V is None else as_point3(V).copy()
        self.w = np.zeros(3) if w is None else np.array(w, dtype=float).reshape(3)

        if self.O.shape != (3, 3) or validate and self.orthogonality_error() > ORTHOGONALITY_TOLERANCE \
                or np.linalg.det(self.O) <= 0:
            raise(ConfigInvalid("Rotation must be orthonormal with determinant 1"))

        if not np.all(np.isfinite(self.w)) or not np.all(np.isfinite(self.V)):
            raise(ConfigInvalid("Body velocities must be finite"))

    @property
    def placement(self) -> Placement:
        return Placement(self.X, self.O)

    def orthogonality_error(self) -> float:
        return float(np.linalg.norm(self.O.T @ self.O - np.eye(3)))

    def copy(self) -> RigidState:
        return RigidState(self.X, self.O, self.V, self.w, validate=False)

    @classmethod
    def at_rest(cls, X: Sequence[float], angle: Optional[float] = 0.0) -> RigidState:
        return cls(X, Placement.planar(X, angle).O)

    @classmethod
    def from_dict(cls, state_dict: dict) -> RigidState:
        return cls(state_dict.get("X"), state_dict.get("O"), state_dict.get("V"), state_dict.get("w"))

    @staticmethod
    def to_dict(state: RigidState) -> dict:
        return {
            "X": state.X.tolist(),
            "O": state.O.tolist(),
            "V": state.V.tolist(),
            "w": state.w.tolist(),
        }


class MassProperties():
    """
    Class that represents mass, reference center of mass and body-frame inertia tensor
    """

    def __init__(self, m: float, X0: Sequence[float], J_body: np.ndarray, planar: Optional[bool] = True):
        """
        MassProperties class constructor

        Parameters
        ----------
        m : float
            Mass (kg, per unit depth for planar bodies)
        X0 : Sequence[float]
            Reference center of mass
        J_body : np.ndarray
            3x3 inertia tensor in the body frame
        planar : bool, optional
            Whether the body is a z-invariant lamina, by default True

        Raises
        ------
        ConfigInvalid
            - Mass must be positive
            - Inertia tensor must be symmetric
            - Inertia tensor must be positive definite (z-component positive for planar bodies)
        """

        J_body = np.asarray(J_body, dtype=float)

        if not m > 0:
            raise(ConfigInvalid("Mass must be positive"))

        if J_body.shape != (3, 3) or not np.allclose(J_body, J_body.T, rtol=0, atol=1e-12 * max(1.0, np.abs(J_body).max())):
            raise(ConfigInvalid("Inertia tensor must be a symmetric 3x3 matrix"))

        if planar and not J_body[2, 2] > 0:
            raise(ConfigInvalid("Planar inertia tensor needs a positive z-component"))

        if not planar and not np.all(np.linalg.eigvalsh(J_body) > 0):
            raise(ConfigInvalid("Inertia tensor must be positive definite"))

        self.m = float(m)
        self.X0 = as_point3(X0).copy()
        self.J_body = 0.5 * (J_body + J_body.T)
        self.planar = planar

    @property
    def energy_constant(self) -> float:
        """c = min(m, lambda_min(J)) / 2 in the lower bound of the body kinetic energy"""
        return 0.5 * min(self.m, float(np.linalg.eigvalsh(self.J_body).min()))

    def scaled(self, factor: float) -> MassProperties:
        return MassProperties(self.m * factor, self.X0, self.J_body * factor, self.planar)

    @classmethod
    def from_dict(cls, mp_dict: dict) -> MassProperties:
        return cls(mp_dict.get("m"), mp_dict.get("X0"), np.asarray(mp_dict.get("J_body")), mp_dict.get("planar", True))

    @staticmethod
    def to_dict(mp: MassProperties) -> dict:
        return {
            "m": mp.m,
            "X0": mp.X0.tolist(),
            "J_body": mp.J_body.tolist(),
            "planar": mp.planar,
        }
