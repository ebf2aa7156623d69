from typing import Callable, List, Optional, Sequence, Tuple
import numpy as np
from scipy.linalg import expm
from scipy.spatial.transform import Rotation, Slerp
from rigidflow.exceptions import QuadratureNotConverged, GridMismatch
from rigidflow.models.geometry import BodyShape, Placement, as_point3
from rigidflow.models.rigid import MassProperties, RigidState
from rigidflow.numerics import geometry


DEFAULT_RESOLUTION = {2: 128, 3: 32}
DRIFT_TOLERANCE = 1e-4


def skew(w: np.ndarray) -> np.ndarray:
    """Matrix [w]x with [w]x a = w x a"""
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def gram_schmidt(O: np.ndarray) -> np.ndarray:
    """Re-orthonormalizes the columns of a near-rotation, keeping det = +1"""
    first = O[:, 0] / np.linalg.norm(O[:, 0])
    second = O[:, 1] - np.dot(first, O[:, 1]) * first
    second /= np.linalg.norm(second)
    return np.column_stack([first, second, np.cross(first, second)])


def _lattice_sum(shape: BodyShape, n: int, integrand: Callable, placement: Optional[Placement] = None,
                 frame: Optional[str] = "reference", with_density: Optional[bool] = True) -> np.ndarray:
    dimension = shape.dimension

    if frame == "reference":
        lower, upper = shape.bounding_box()
    else:
        reach = shape.circumradius
        lower, upper = placement.X[:dimension] - reach, placement.X[:dimension] + reach

    h = float(np.max(upper - lower)) / n
    pad = geometry.QUADRATURE_RAMP_CELLS * h
    axes = [lo - pad + (np.arange(int(np.ceil((hi - lo + 2 * pad) / h))) + 0.5) * h for lo, hi in zip(lower, upper)]
    cell = h ** dimension

    rows_per_slab = max(1, geometry.POINT_CHUNK // int(np.prod([a.size for a in axes[1:]])))
    total = None
    for start in range(0, axes[0].size, rows_per_slab):
        mesh = np.meshgrid(axes[0][start:start + rows_per_slab], *axes[1:], indexing="ij")
        points = as_point3(np.stack([m.ravel() for m in mesh], axis=-1))

        if frame == "reference":
            y = points
            x = y if placement is None else geometry.to_world(shape, placement, y)
        else:
            x = points
            y = geometry.to_reference(shape, placement, x)

        weight = geometry.quadrature_fraction(geometry.reference_signed_distance(shape, y), h) * cell
        if with_density:
            weight = weight * shape.density_at(y)
        keep = weight > 0
        values = np.atleast_2d(np.asarray(integrand(y[keep], x[keep]), dtype=float).T).T
        partial = weight[keep] @ values.reshape(values.shape[0], -1)
        total = partial if total is None else total + partial

    return total


def body_integral(shape: BodyShape, integrand: Callable, placement: Optional[Placement] = None,
                  frame: Optional[str] = "reference", resolution: Optional[int] = None,
                  with_density: Optional[bool] = True, tolerance: Optional[float] = DRIFT_TOLERANCE) -> np.ndarray:
    """
    Integrates over the body with Richardson-extrapolated midpoint quadrature

    Three lattices (n, 2n, 4n cells across the body) are summed with a smooth boundary fraction; two
    extrapolated estimates are formed and their relative drift is checked.

    Parameters
    ----------
    shape : BodyShape
        The reference body
    integrand : Callable
        Function of (reference points, world points), both (N, 3), returning (N,) or (N, k) values
    placement : Placement, optional
        Placement used to produce world points, by default None (world points are reference points)
    frame : str, optional
        "reference" samples the reference body, "world" samples a world-aligned lattice around the
        placed body, by default "reference"
    resolution : int, optional
        Coarsest lattice resolution, by default 128 for planar bodies and 32 for balls
    with_density : bool, optional
        Whether the body density weights the integrand, by default True
    tolerance : float, optional
        Accepted relative drift between extrapolated estimates, by default 1e-4

    Returns
    -------
    np.ndarray
        Integral values, flattened

    Raises
    ------
    QuadratureNotConverged
        - Relative drift between refinement levels above the tolerance
    """

    n = DEFAULT_RESOLUTION[shape.dimension] if resolution is None else resolution
    coarse, medium, fine = (_lattice_sum(shape, k * n, integrand, placement, frame, with_density) for k in (1, 2, 4))
    first = (4.0 * medium - coarse) / 3.0
    second = (4.0 * fine - medium) / 3.0

    scale = max(float(np.abs(second).max()), np.finfo(float).tiny)
    drift = float(np.abs(second - first).max()) / scale
    if drift > tolerance:
        raise(QuadratureNotConverged(f"Body quadrature drifted by {drift:.3e} between refinement levels"))

    return second


def mass_properties(shape: BodyShape, resolution: Optional[int] = None,
                    tolerance: Optional[float] = DRIFT_TOLERANCE) -> MassProperties:
    """
    Mass, reference center of mass and body-frame inertia tensor

    Parameters
    ----------
    shape : BodyShape
        The reference body
    resolution : int, optional
        Coarsest quadrature resolution, by default None (module default)
    tolerance : float, optional
        Accepted relative drift between refinement levels, by default 1e-4

    Returns
    -------
    MassProperties
        m = int rho, X0 = int rho y / m and J = int rho (|r|^2 I - r r^T) with r = y - X0

    Raises
    ------
    QuadratureNotConverged
        - Relative drift between refinement levels above the tolerance
    """

    def integrand(y, x):
        return np.concatenate([np.ones((y.shape[0], 1)), y, (y[:, :, None] * y[:, None, :]).reshape(-1, 9)], axis=1)

    values = body_integral(shape, integrand, resolution=resolution, tolerance=tolerance)
    m = values[0]
    X0 = values[1:4] / m
    second = values[4:].reshape(3, 3) - m * np.outer(X0, X0)
    J = np.trace(second) * np.eye(3) - second

    return MassProperties(m, X0, J, shape.planar)


def rigid_velocity(state: RigidState, x) -> np.ndarray:
    """
    Rigid velocity field V + w x (x - X)

    Parameters
    ----------
    state : RigidState
        Body state
    x : array-like
        Points (last axis of size 2 or 3)

    Returns
    -------
    np.ndarray
        Velocities with last axis of size 3
    """

    return state.V + np.cross(state.w, as_point3(x) - state.X)


def inertia_current(mp: MassProperties, O: np.ndarray) -> np.ndarray:
    return O @ mp.J_body @ O.T


def inertia_quadrature(shape: BodyShape, placement: Placement, resolution: Optional[int] = None) -> np.ndarray:
    """
    Inertia tensor of the placed body by quadrature on a world-aligned lattice
    """

    def integrand(y, x):
        r = x - placement.X
        r2 = np.sum(r * r, axis=1)
        return (r2[:, None, None] * np.eye(3)[None] - r[:, :, None] * r[:, None, :]).reshape(-1, 9)

    return body_integral(shape, integrand, placement, frame="world", resolution=resolution).reshape(3, 3)


def body_kinetic_energy(mp: MassProperties, state: RigidState) -> float:
    J = inertia_current(mp, state.O)
    return 0.5 * mp.m * float(state.V @ state.V) + 0.5 * float(state.w @ J @ state.w)


def body_energy_quadrature(shape: BodyShape, state: RigidState, resolution: Optional[int] = None) -> float:
    """
    1/2 int_B rho |u_B|^2 by quadrature over the reference body mapped to its current placement
    """

    def integrand(y, x):
        velocity = rigid_velocity(state, x)
        return 0.5 * np.sum(velocity * velocity, axis=1)

    return float(body_integral(shape, integrand, state.placement, resolution=resolution)[0])


def transported_volume(shape: BodyShape, placement: Placement, resolution: Optional[int] = None) -> float:
    """
    Area (or volume) of the placed body integrated on a world-aligned lattice
    """

    return float(body_integral(shape, lambda y, x: np.ones(y.shape[0]), placement, frame="world",
                               resolution=resolution, with_density=False)[0])


def _rigid_rates(O: np.ndarray, V: np.ndarray, w: np.ndarray, mp: MassProperties, force: np.ndarray,
                 torque: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    J = inertia_current(mp, O)
    return V, skew(w) @ O, force / mp.m, np.linalg.solve(J, np.cross(J @ w, w) + torque)


def step_rigid(state: RigidState, mp: MassProperties, force, torque, dt: float,
               reorthonormalize: Optional[bool] = True) -> RigidState:
    """
    One explicit RK4 step of the body equations

    m dV/dt = force, J dw/dt = Jw x w + torque, dX/dt = V and dO/dt = [w]x O, followed by a
    Gram-Schmidt re-orthonormalization of O.

    Parameters
    ----------
    state : RigidState
        Current body state
    mp : MassProperties
        Mass properties
    force : array-like
        Force, constant over the step
    torque : array-like
        Torque about the center of mass, constant over the step
    dt : float
        Time step
    reorthonormalize : bool, optional
        Whether O is projected back on SO(3), by default True

    Returns
    -------
    RigidState
        State after the step

    Raises
    ------
    ValueError
        - Time step must be positive
    """

    if not dt > 0:
        raise(ValueError("Time step must be positive"))

    force = as_point3(force)
    torque = np.asarray(torque, dtype=float).reshape(3)
    X, O, V, w = state.X, state.O, state.V, state.w

    k1 = _rigid_rates(O, V, w, mp, force, torque)
    k2 = _rigid_rates(O + 0.5 * dt * k1[1], V + 0.5 * dt * k1[2], w + 0.5 * dt * k1[3], mp, force, torque)
    k3 = _rigid_rates(O + 0.5 * dt * k2[1], V + 0.5 * dt * k2[2], w + 0.5 * dt * k2[3], mp, force, torque)
    k4 = _rigid_rates(O + dt * k3[1], V + dt * k3[2], w + dt * k3[3], mp, force, torque)

    increments = [dt / 6.0 * (a + 2.0 * b + 2.0 * c + d) for a, b, c, d in zip(k1, k2, k3, k4)]
    O_next = O + increments[1]
    if reorthonormalize:
        O_next = gram_schmidt(O_next)

    return RigidState(X + increments[0], O_next, V + increments[2], w + increments[3], validate=reorthonormalize)


def _transformed_rates(Vs: np.ndarray, ws: np.ndarray, w1: np.ndarray, m: float, J1: np.ndarray,
                       force: np.ndarray, torque: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    relative = ws - w1
    dV = -np.cross(relative, Vs) + force / m
    dw = np.linalg.solve(J1, np.cross(J1 @ ws, ws) - np.cross(relative, J1 @ ws) + torque)
    return dV, dw


def step_transformed_rigid(Vs, ws, w1, mp: MassProperties, pressure_force, pressure_torque, dt: float,
                           J1: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    One RK4 step of the transformed body equations

    m dV^s/dt = -m (w^s - w1) x V^s + force and
    J1 dw^s/dt = J1 w^s x w^s - (w^s - w1) x J1 w^s + torque, with w1 and J1 frozen over the step.

    Parameters
    ----------
    Vs : array-like
        Transformed translational velocity
    ws : array-like
        Transformed angular velocity
    w1 : array-like
        Angular velocity of the reference body
    mp : MassProperties
        Mass properties
    pressure_force : array-like
        Pressure force on the reference body
    pressure_torque : array-like
        Pressure torque on the reference body
    dt : float
        Time step
    J1 : np.ndarray, optional
        Inertia tensor in the reference body's current frame, by default None (mp.J_body)

    Returns
    -------
    Tuple[np.ndarray, np.ndarray]
        Updated (V^s, w^s)
    """

    Vs, ws, w1 = as_point3(Vs), np.asarray(ws, dtype=float).reshape(3), np.asarray(w1, dtype=float).reshape(3)
    force = as_point3(pressure_force)
    torque = np.asarray(pressure_torque, dtype=float).reshape(3)
    J1 = mp.J_body if J1 is None else np.asarray(J1, dtype=float)

    k1 = _transformed_rates(Vs, ws, w1, mp.m, J1, force, torque)
    k2 = _transformed_rates(Vs + 0.5 * dt * k1[0], ws + 0.5 * dt * k1[1], w1, mp.m, J1, force, torque)
    k3 = _transformed_rates(Vs + 0.5 * dt * k2[0], ws + 0.5 * dt * k2[1], w1, mp.m, J1, force, torque)
    k4 = _transformed_rates(Vs + dt * k3[0], ws + dt * k3[1], w1, mp.m, J1, force, torque)

    return (Vs + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            ws + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]))


class BodyHistory():
    """
    Stored body trajectory with interpolation in time

    Positions and velocities are interpolated linearly, rotations along geodesics (spherical linear
    interpolation), which is exact for motions with constant velocities.
    """

    def __init__(self, times: Sequence[float], states: Sequence[RigidState]):
        if len(times) != len(states) or len(times) == 0:
            raise(GridMismatch("Body history needs one state per time stamp"))
        self.times = np.asarray(times, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise(GridMismatch("Body history times must increase"))
        self.X = np.array([s.X for s in states])
        self.O = np.array([s.O for s in states])
        self.V = np.array([s.V for s in states])
        self.w = np.array([s.w for s in states])
        self._slerp = Slerp(self.times, Rotation.from_matrix(self.O)) if len(times) > 1 else None

    @classmethod
    def uniform_motion(cls, state: RigidState, times: Sequence[float]) -> "BodyHistory":
        """Exact samples of the motion with constant V and w starting from state at t = 0"""
        states = [RigidState(state.X + t * state.V, expm(t * skew(state.w)) @ state.O, state.V, state.w)
                  for t in times]
        return cls(times, states)

    def __len__(self) -> int:
        return self.times.size

    def state(self, index: int) -> RigidState:
        return RigidState(self.X[index], self.O[index], self.V[index], self.w[index], validate=False)

    def states(self) -> List[RigidState]:
        return [self.state(k) for k in range(len(self))]

    def at(self, t: float) -> RigidState:
        t = float(np.clip(t, self.times[0], self.times[-1]))
        if self._slerp is None:
            return self.state(0)

        def interpolate(values):
            return np.array([np.interp(t, self.times, values[:, k]) for k in range(3)])

        O = self._slerp([t]).as_matrix()[0]
        return RigidState(interpolate(self.X), O, interpolate(self.V), interpolate(self.w), validate=False)

    def placements(self) -> List[Placement]:
        return [Placement(self.X[k], self.O[k]) for k in range(len(self))]

    def rows(self) -> np.ndarray:
        """Rows t, X, V, w, O (row-major) as used by body.csv"""
        return np.column_stack([self.times, self.X, self.V, self.w, self.O.reshape(len(self), 9)])

    @classmethod
    def from_rows(cls, rows: np.ndarray) -> "BodyHistory":
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        states = [RigidState(row[1:4], row[10:19].reshape(3, 3), row[4:7], row[7:10], validate=False) for row in rows]
        return cls(rows[:, 0], states)


def density_transport_check(shape: BodyShape, history: BodyHistory, samples: Optional[int] = 64,
                            delta: Optional[float] = None) -> float:
    """
    Residual of the transport equation d(rho)/dt + u_B . grad(rho) = 0 for the rigidly transported density

    The density is carried in closed form, rho(t, X + O(y - X0)) = rho_B(y); the check samples world
    points inside the body at every interior stored time and differentiates in time by centered
    differences.

    Returns
    -------
    float
        Largest residual relative to the density scale
    """

    rng = np.random.default_rng(0)
    lower, upper = shape.bounding_box()
    candidates = as_point3(lower + (upper - lower) * rng.random((4 * samples, shape.dimension)))
    inside = geometry.reference_signed_distance(shape, candidates) < 0
    reference_points = candidates[inside][:samples]

    gradient = as_point3(shape.density_gradient)
    residual = 0.0
    for k in range(1, len(history) - 1):
        t = history.times[k]
        step = delta if delta is not None else 0.5 * min(t - history.times[k - 1], history.times[k + 1] - t)
        state = history.at(t)
        x = geometry.to_world(shape, state.placement, reference_points)

        def density(time):
            placement = history.at(time).placement
            return shape.density_at(geometry.to_reference(shape, placement, x))

        rate = (density(t + step) - density(t - step)) / (2.0 * step)
        advection = rigid_velocity(state, x) @ (state.O @ gradient)
        residual = max(residual, float(np.abs(rate + advection).max()))

    return residual / max(abs(shape.density), np.finfo(float).tiny)
