from __future__ import annotations
from typing import Optional
import numpy as np
from rigidflow.exceptions import ConfigInvalid, GridMismatch
from rigidflow.models.geometry import Grid, BodyShape
from rigidflow.models.rigid import RigidState


class StaggeredField():
    """
    Class that represents MAC velocity and pressure on a grid
    """

    def __init__(self, grid: Grid, u: Optional[np.ndarray] = None, v: Optional[np.ndarray] = None,
                 p: Optional[np.ndarray] = None):
        """
        StaggeredField class constructor

        Parameters
        ----------
        grid : Grid
            The MAC grid
        u : np.ndarray, optional
            x-velocity on vertical faces (nx+1, ny), by default None (zeros)
        v : np.ndarray, optional
            y-velocity on horizontal faces (nx, ny+1), by default None (zeros)
        p : np.ndarray, optional
            Pressure at the cell centers (nx, ny), by default None (zeros)

        Raises
        ------
        GridMismatch
            - Array shapes must follow the grid staggering
        """

        self.grid = grid
        self.u = np.zeros(grid.shape_u) if u is None else np.array(u, dtype=float)
        self.v = np.zeros(grid.shape_v) if v is None else np.array(v, dtype=float)
        self.p = np.zeros(grid.shape_p) if p is None else np.array(p, dtype=float)

        if self.u.shape != grid.shape_u or self.v.shape != grid.shape_v or self.p.shape != grid.shape_p:
            raise(GridMismatch(f"Field shapes {self.u.shape}, {self.v.shape}, {self.p.shape} do not match a "
                               f"{grid.nx}x{grid.ny} MAC grid"))

    def copy(self) -> StaggeredField:
        return StaggeredField(self.grid, self.u, self.v, self.p)

    def max_speed(self) -> float:
        return float(max(np.abs(self.u).max(initial=0.0), np.abs(self.v).max(initial=0.0)))

    def centered_velocity(self) -> np.ndarray:
        """Face velocities averaged to the cell centers, shape (nx, ny, 2)"""
        return np.stack([0.5 * (self.u[1:, :] + self.u[:-1, :]), 0.5 * (self.v[:, 1:] + self.v[:, :-1])], axis=-1)

    def flat(self) -> np.ndarray:
        """u, v and p concatenated in row-major order"""
        return np.concatenate([self.u.ravel(), self.v.ravel(), self.p.ravel()])

    @classmethod
    def from_flat(cls, grid: Grid, payload: np.ndarray) -> StaggeredField:
        nu, nv = int(np.prod(grid.shape_u)), int(np.prod(grid.shape_v))
        payload = np.asarray(payload, dtype=float)
        if payload.size != nu + nv + int(np.prod(grid.shape_p)):
            raise(GridMismatch("Payload size does not match the grid"))
        return cls(grid, payload[:nu].reshape(grid.shape_u), payload[nu:nu + nv].reshape(grid.shape_v),
                   payload[nu + nv:].reshape(grid.shape_p))


class SolverParams():
    """
    Class that represents the numerical parameters of a coupled run
    """

    def __init__(self, eps: float, eta_pen: float, dt: Optional[float] = None, cfl: Optional[float] = 0.4,
                 t_end: Optional[float] = 1.0, kappa: Optional[float] = 0.0, output_dt: Optional[float] = None,
                 poisson_tolerance: Optional[float] = 1e-9, poisson_max_iterations: Optional[int] = None):
        """
        SolverParams class constructor

        Parameters
        ----------
        eps : float
            Kinematic viscosity (m^2/s), zero for Euler runs
        eta_pen : float
            Penalization time scale (s)
        dt : float, optional
            Time step (s), by default None (chosen from the advective and diffusive limits)
        cfl : float, optional
            CFL target, by default 0.4
        t_end : float, optional
            Final time (s), by default 1.0
        kappa : float, optional
            Collision margin (m), by default 0.0; runs halt when the wall gap reaches kappa/2
        output_dt : float, optional
            Interval between stored snapshots (s), by default None (every step)
        poisson_tolerance : float, optional
            Relative residual accepted from the pressure solve, by default 1e-9
        poisson_max_iterations : int, optional
            Conjugate gradient iteration cap, by default None (ten times the cell count along x and y)

        Raises
        ------
        ConfigInvalid
            - Viscosity must be non-negative
            - Penalization time scale must be positive
            - Time step must be positive
            - CFL target must lie in (0, 0.5]
            - Final time and collision margin must be non-negative
        """

        if eps < 0:
            raise(ConfigInvalid("Viscosity must be non-negative"))

        if not eta_pen > 0:
            raise(ConfigInvalid("Penalization time scale must be positive"))

        if dt is not None and not dt > 0:
            raise(ConfigInvalid("Time step must be positive"))

        if not 0 < cfl <= 0.5:
            raise(ConfigInvalid("CFL target must lie in (0, 0.5]"))

        if t_end < 0 or kappa < 0:
            raise(ConfigInvalid("Final time and collision margin must be non-negative"))

        if output_dt is not None and not output_dt > 0:
            raise(ConfigInvalid("Output interval must be positive"))

        self.eps = float(eps)
        self.eta_pen = float(eta_pen)
        self.dt = None if dt is None else float(dt)
        self.cfl = float(cfl)
        self.t_end = float(t_end)
        self.kappa = float(kappa)
        self.output_dt = None if output_dt is None else float(output_dt)
        self.poisson_tolerance = float(poisson_tolerance)
        self.poisson_max_iterations = poisson_max_iterations

    def with_changes(self, **changes) -> SolverParams:
        params_dict = SolverParams.to_dict(self)
        params_dict.update(changes)
        return SolverParams.from_dict(params_dict)

    @classmethod
    def from_dict(cls, params_dict: dict) -> SolverParams:
        return cls(params_dict.get("eps"), params_dict.get("eta_pen"), params_dict.get("dt"),
                   params_dict.get("cfl", 0.4), params_dict.get("t_end", 1.0), params_dict.get("kappa", 0.0),
                   params_dict.get("output_dt"), params_dict.get("poisson_tolerance", 1e-9),
                   params_dict.get("poisson_max_iterations"))

    @staticmethod
    def to_dict(params: SolverParams) -> dict:
        return {
            "eps": params.eps,
            "eta_pen": params.eta_pen,
            "dt": params.dt,
            "cfl": params.cfl,
            "t_end": params.t_end,
            "kappa": params.kappa,
            "output_dt": params.output_dt,
            "poisson_tolerance": params.poisson_tolerance,
            "poisson_max_iterations": params.poisson_max_iterations,
        }


class CoupledState():
    """
    Class that represents the fluid/body pair at a time instant

    A state without body (body and shape None) describes a plain fluid run.
    """

    def __init__(self, fluid: StaggeredField, body: Optional[RigidState] = None, time: Optional[float] = 0.0,
                 shape: Optional[BodyShape] = None):
        """
        CoupledState class constructor

        Parameters
        ----------
        fluid : StaggeredField
            Fluid velocity and pressure
        body : RigidState, optional
            Body state, by default None
        time : float, optional
            Model time (s), by default 0.0
        shape : BodyShape, optional
            Reference body, by default None

        Raises
        ------
        ConfigInvalid
            - Body state and body shape must be given together
        """

        if (body is None) != (shape is None):
            raise(ConfigInvalid("Body state and body shape must be given together"))

        self.fluid = fluid
        self.body = body
        self.time = float(time)
        self.shape = shape

    @property
    def grid(self) -> Grid:
        return self.fluid.grid

    @property
    def has_body(self) -> bool:
        return self.body is not None

    def copy(self) -> CoupledState:
        return CoupledState(self.fluid.copy(), None if self.body is None else self.body.copy(), self.time, self.shape)
