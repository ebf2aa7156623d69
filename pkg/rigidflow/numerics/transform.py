import logging
from typing import Callable, Dict, Optional, Sequence, Tuple
import numpy as np
from scipy.ndimage import map_coordinates, spline_filter
from rigidflow.exceptions import GridMismatch, MarginsOverlap, NewtonStalled, NodeEscapedDomain, SingularJacobian
from rigidflow.models.geometry import BodyShape, Container, Grid, Placement, as_point3
from rigidflow.models.rigid import RigidState
from rigidflow.models.transform import CutoffField, FlowMap, TransformBundle
from rigidflow.numerics import geometry, rigid_dynamics
from rigidflow.numerics.rigid_dynamics import BodyHistory, skew


NEWTON_TOLERANCE = 1e-13
NEWTON_MAX_ITERATIONS = 50
SINGULAR_DETERMINANT = 1e-8
FLOW_NEWTON_TOLERANCE = 1e-12
FLOW_SUBSTEPS = 4
GRADIENT_STEP = 1e-6


def smooth_ramp(t: np.ndarray) -> np.ndarray:
    """C-infinity transition from 0 (t <= 0) to 1 (t >= 1), equal to 1/2 at t = 1/2"""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore", under="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return a / (a + b)


def smooth_ramp_derivative(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    inside = (t > 0) & (t < 1)
    s = np.where(inside, t, 0.5)
    with np.errstate(under="ignore"):
        a = np.exp(-1.0 / s)
        b = np.exp(-1.0 / (1.0 - s))
        derivative = a * b * (1.0 / s ** 2 + 1.0 / (1.0 - s) ** 2) / (a + b) ** 2
    return np.where(inside, derivative, 0.0)


def build_cutoff(placement: Placement, shape: BodyShape, container: Container, inner: float, ramp: float,
                 outer: Optional[float] = 0.0) -> CutoffField:
    """
    Cutoff equal to 1 near the placed body and 0 near the walls

    Parameters
    ----------
    placement : Placement
        Placement of the body
    shape : BodyShape
        Reference body
    container : Container
        The container
    inner : float
        Width of the zone where the cutoff is 1
    ramp : float
        Width of the transition
    outer : float, optional
        Width of the zone along the walls where the cutoff is 0, by default 0.0

    Returns
    -------
    CutoffField
        The cutoff

    Raises
    ------
    MarginsOverlap
        - The body, the ramp and the wall zone do not fit in the container
    """

    gap = geometry.boundary_gap(placement, shape, container)
    if inner + ramp + outer >= gap:
        raise(MarginsOverlap(f"Cutoff zones ({inner} + {ramp} + {outer}) do not fit in the wall gap {gap:.6g}"))
    return CutoffField(shape, placement, container, inner, ramp, outer)


def cutoff_value(cutoff: CutoffField, x) -> np.ndarray:
    distance = geometry.signed_distance(cutoff.shape, cutoff.placement, x)
    return 1.0 - smooth_ramp((distance - cutoff.inner) / cutoff.ramp)


def cutoff_gradient(cutoff: CutoffField, x) -> np.ndarray:
    distance = geometry.signed_distance(cutoff.shape, cutoff.placement, x)
    slope = -smooth_ramp_derivative((distance - cutoff.inner) / cutoff.ramp) / cutoff.ramp
    return slope[..., None] * geometry.signed_distance_gradient(cutoff.shape, cutoff.placement, x)


def rigid_stream_function(state: RigidState, x) -> np.ndarray:
    """Stream function of the planar rigid field: psi = Vx (y - Y) - Vy (x - X) - w |x - X|^2 / 2"""
    r = as_point3(x) - state.X
    return state.V[0] * r[..., 1] - state.V[1] * r[..., 0] - 0.5 * state.w[2] * (r[..., 0] ** 2 + r[..., 1] ** 2)


def extend_rigid(state: RigidState, cutoff: CutoffField, x, solenoidal: Optional[bool] = True) -> np.ndarray:
    """
    Rigid velocity of the body extended to the container with a cutoff

    Parameters
    ----------
    state : RigidState
        Body state
    cutoff : CutoffField
        Cutoff around the body
    x : array-like
        World points
    solenoidal : bool, optional
        Whether the planar stream-function form perp-grad(cutoff psi) is used, which is divergence free,
        instead of the plain product cutoff * u_B, by default True

    Returns
    -------
    np.ndarray
        Velocities with last axis of size 3
    """

    x = as_point3(x)
    zeta = cutoff_value(cutoff, x)
    velocity = zeta[..., None] * rigid_dynamics.rigid_velocity(state, x)
    if not solenoidal or not cutoff.shape.planar:
        return velocity

    gradient = cutoff_gradient(cutoff, x)
    psi = rigid_stream_function(state, x)
    velocity[..., 0] += psi * gradient[..., 1]
    velocity[..., 1] -= psi * gradient[..., 0]
    return velocity


class MapInterpolant():
    """
    Cubic spline interpolation of one stored flow map sample, x -> x + displacement(x)
    """

    def __init__(self, lattice: Grid, displacement: np.ndarray):
        self.lattice = lattice
        self.coefficients = [spline_filter(displacement[..., k], order=3, mode="nearest") for k in range(2)]

    def _indices(self, points: np.ndarray) -> list:
        return [((points[..., k] - self.lattice.origin[k]) / self.lattice.h).ravel() for k in range(2)]

    def displacement(self, points: np.ndarray) -> np.ndarray:
        indices = self._indices(points)
        values = [map_coordinates(c, indices, order=3, mode="nearest", prefilter=False) for c in self.coefficients]
        return np.stack(values, axis=-1).reshape(points.shape[:-1] + (2,))

    def value(self, points: np.ndarray) -> np.ndarray:
        return points + self.displacement(points)

    def jacobian(self, points: np.ndarray) -> np.ndarray:
        """Jacobian by central differences of the interpolant, shape (..., 2, 2)"""
        step = 1e-4 * self.lattice.h
        columns = []
        for k in range(2):
            offset = np.zeros(2)
            offset[k] = step
            columns.append((self.value(points + offset) - self.value(points - offset)) / (2.0 * step))
        return np.stack(columns, axis=-1)

    def inverse(self, points: np.ndarray, seed: Optional[np.ndarray] = None) -> np.ndarray:
        """
        Solves value(y) = x by Newton iteration

        Raises
        ------
        NewtonStalled
            - No convergence after 50 iterations
        """

        y = points - self.displacement(points) if seed is None else seed.copy()
        for _ in range(NEWTON_MAX_ITERATIONS):
            residual = self.value(y) - points
            if np.abs(residual).max(initial=0.0) <= NEWTON_TOLERANCE * max(1.0, np.abs(points).max(initial=0.0)):
                return y
            y = y - np.linalg.solve(self.jacobian(y), residual[..., None])[..., 0]
        raise(NewtonStalled(f"Map inversion stalled at residual {np.abs(residual).max():.3e}"))


def _rk4(velocity: Callable, t: float, points: np.ndarray, dt: float) -> np.ndarray:
    k1 = velocity(t, points)
    k2 = velocity(t + 0.5 * dt, points + 0.5 * dt * k1)
    k3 = velocity(t + 0.5 * dt, points + 0.5 * dt * k2)
    k4 = velocity(t + dt, points + dt * k3)
    return points + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def velocity_and_gradient(velocity: Callable, t: float, points: np.ndarray,
                          step: Optional[float] = GRADIENT_STEP) -> Tuple[np.ndarray, np.ndarray]:
    """
    Velocity and its spatial Jacobian A[..., i, j] = d_j v_i by central differences of width 2 step

    The five stencil points are evaluated in a single call.
    """

    offsets = np.array([[0.0, 0.0], [step, 0.0], [-step, 0.0], [0.0, step], [0.0, -step]])
    stencil = points[None] + offsets.reshape((5,) + (1,) * (points.ndim - 1) + (2,))
    values = velocity(t, stencil)
    gradient = np.stack([values[1] - values[2], values[3] - values[4]], axis=-1) / (2.0 * step)
    return values[0], gradient


def _tangent_rk4(velocity: Callable, t: float, points: np.ndarray, J: np.ndarray,
                 dt: float) -> Tuple[np.ndarray, np.ndarray]:
    """One RK4 step of the points together with the same step of the variational equation dJ/dt = A J"""
    k1, A1 = velocity_and_gradient(velocity, t, points)
    K1 = A1 @ J
    k2, A2 = velocity_and_gradient(velocity, t + 0.5 * dt, points + 0.5 * dt * k1)
    K2 = A2 @ (J + 0.5 * dt * K1)
    k3, A3 = velocity_and_gradient(velocity, t + 0.5 * dt, points + 0.5 * dt * k2)
    K3 = A3 @ (J + 0.5 * dt * K2)
    k4, A4 = velocity_and_gradient(velocity, t + dt, points + dt * k3)
    K4 = A4 @ (J + dt * K3)
    return points + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4), J + dt / 6.0 * (K1 + 2.0 * K2 + 2.0 * K3 + K4)


def _substeps(times: np.ndarray, index: int, substeps: int) -> np.ndarray:
    """Integration times from 0 to times[index], every stored interval split into substeps equal steps"""
    if index == 0:
        return times[:1]
    pieces = [np.linspace(times[k], times[k + 1], substeps + 1)[:-1] for k in range(index)]
    return np.concatenate(pieces + [times[index:index + 1]])


def discrete_flow(velocity: Callable, times: np.ndarray, index: int, points: np.ndarray,
                  substeps: Optional[int] = FLOW_SUBSTEPS) -> Tuple[np.ndarray, np.ndarray]:
    """
    Points carried by the RK4 flow from t = 0 to times[index] and the exact Jacobian of that discrete map

    Parameters
    ----------
    velocity : Callable
        velocity(t, points) with points of shape (..., 2)
    times : np.ndarray
        Stored times starting at 0
    index : int
        Stored time index to integrate to
    points : np.ndarray
        Starting points (..., 2)
    substeps : int, optional
        RK4 steps per stored interval, by default 4

    Returns
    -------
    Tuple[np.ndarray, np.ndarray]
        Mapped points (..., 2) and Jacobians (..., 2, 2)
    """

    grid = _substeps(np.asarray(times, dtype=float), index, substeps)
    J = np.broadcast_to(np.eye(2), points.shape[:-1] + (2, 2)).copy()
    for k in range(grid.size - 1):
        points, J = _tangent_rk4(velocity, grid[k], points, J, grid[k + 1] - grid[k])
    return points, J


def pull_back(velocity: Callable, times: np.ndarray, index: int, points: np.ndarray,
              substeps: Optional[int] = FLOW_SUBSTEPS) -> Tuple[np.ndarray, np.ndarray]:
    """
    Solves discrete_flow(y) = x by Newton iteration, seeded by integrating the points backward in time

    Returns
    -------
    Tuple[np.ndarray, np.ndarray]
        The preimages y and the Jacobian of the discrete flow at y

    Raises
    ------
    NewtonStalled
        - No convergence after 50 iterations
    """

    grid = _substeps(np.asarray(times, dtype=float), index, substeps)
    y = points.copy()
    for k in range(grid.size - 1, 0, -1):
        y = _rk4(velocity, grid[k], y, grid[k - 1] - grid[k])

    tolerance = FLOW_NEWTON_TOLERANCE * max(1.0, np.abs(points).max(initial=0.0))
    for _ in range(NEWTON_MAX_ITERATIONS):
        mapped, J = discrete_flow(velocity, times, index, y, substeps)
        residual = mapped - points
        if np.abs(residual).max(initial=0.0) <= tolerance:
            return y, J
        y = y - np.linalg.solve(J, residual[..., None])[..., 0]
    raise(NewtonStalled(f"Flow pull-back stalled at residual {np.abs(residual).max():.3e}"))


def composite_flow(outer: Callable, inner: Callable, times: np.ndarray, index: int, points: np.ndarray,
                   substeps: Optional[int] = FLOW_SUBSTEPS) -> Tuple[np.ndarray, np.ndarray]:
    """
    outer(t, inner^-1(t, x)) through the discrete flows of two velocities, with its exact Jacobian

    Returns
    -------
    Tuple[np.ndarray, np.ndarray]
        Values (..., 2) and Jacobians grad outer(y) (grad inner(y))^-1 (..., 2, 2)
    """

    y, J_inner = pull_back(inner, times, index, points, substeps)
    values, J_outer = discrete_flow(outer, times, index, y, substeps)
    jacobian = np.swapaxes(np.linalg.solve(np.swapaxes(J_inner, -1, -2), np.swapaxes(J_outer, -1, -2)), -1, -2)
    return values, jacobian


def integrate_flow(velocity: Callable, lattice: Grid, t_end: float, dt: float,
                   substeps: Optional[int] = 1) -> FlowMap:
    """
    Flow map dZ/dt = velocity(t, Z), Z(0, y) = y, integrated with RK4 from every lattice node

    Parameters
    ----------
    velocity : Callable
        velocity(t, points) with points of shape (..., 2), returning planar velocities of the same shape
    lattice : Grid
        Lattice whose nodes are transported
    t_end : float
        Final time
    dt : float
        Sample spacing, shortened so that t_end is a whole number of samples
    substeps : int, optional
        RK4 steps between consecutive samples, by default 1

    Returns
    -------
    FlowMap
        Samples at every step

    Raises
    ------
    NodeEscapedDomain
        - A node left the container
    """

    steps = int(np.ceil(t_end / dt - 1e-9)) if t_end > 0 else 0
    times = np.linspace(0.0, t_end, steps + 1)
    nodes = lattice.nodes()[..., :2]
    lower, upper = lattice.container.lower[:2], lattice.container.upper[:2]
    slack = 1e-9 * lattice.h

    points = nodes.copy()
    displacement = [np.zeros_like(nodes)]
    for k in range(steps):
        for t in np.linspace(times[k], times[k + 1], substeps + 1)[:-1]:
            points = _rk4(velocity, t, points, (times[k + 1] - times[k]) / substeps)
        if np.any(points < lower - slack) or np.any(points > upper + slack):
            raise(NodeEscapedDomain(f"A lattice node left the container at t={times[k + 1]:.6g}"))
        displacement.append(points - nodes)

    return FlowMap(lattice, times, np.array(displacement))


def invert_flow(flow_map: FlowMap, velocity: Optional[Callable] = None) -> FlowMap:
    """
    Inverse map Y(t, .) sampled on the lattice nodes by Newton iteration on Z(t, y) = x

    Parameters
    ----------
    flow_map : FlowMap
        A forward map
    velocity : Callable, optional
        The velocity that generated the map; when given, Newton is seeded by integrating the nodes backward
        in time, otherwise by the first-order guess x - displacement(x), by default None

    Returns
    -------
    FlowMap
        Inverse samples

    Raises
    ------
    NewtonStalled
        - Newton did not converge at some node
    """

    nodes = flow_map.nodes
    displacement = [np.zeros_like(nodes)]
    for k in range(1, len(flow_map)):
        seed = None
        if velocity is not None:
            seed = nodes.copy()
            for j in range(k, 0, -1):
                seed = _rk4(velocity, flow_map.times[j], seed, flow_map.times[j - 1] - flow_map.times[j])
        inverse = MapInterpolant(flow_map.lattice, flow_map.displacement[k]).inverse(nodes, seed)
        displacement.append(inverse - nodes)
    return FlowMap(flow_map.lattice, flow_map.times, np.array(displacement), kind="inverse")


def composite_map(outer: FlowMap, inner: FlowMap, index: int, points: np.ndarray) -> np.ndarray:
    """
    outer(t, inner^-1(t, x)): tildeZ2 is composite_map(Z2, Z1, ...) and tildeZ1 is composite_map(Z1, Z2, ...)
    """

    inverse = MapInterpolant(inner.lattice, inner.displacement[index]).inverse(points)
    return MapInterpolant(outer.lattice, outer.displacement[index]).value(inverse)


def nodes_to_centers(values: np.ndarray) -> np.ndarray:
    """Average of the four nodes around every cell, (nx+1, ny+1, ...) to (nx, ny, ...)"""
    return 0.25 * (values[:-1, :-1] + values[1:, :-1] + values[:-1, 1:] + values[1:, 1:])


def jacobian_samples(samples: np.ndarray, h: float) -> np.ndarray:
    """Centered-difference Jacobian of node samples, J[..., i, j] = d_j (map)_i"""
    dimension = samples.shape[-1]
    derivatives = np.gradient(samples, h, axis=tuple(range(dimension)), edge_order=2)
    return np.stack(derivatives, axis=-1)


def metric_terms(samples: np.ndarray, h: float,
                 jacobian: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Metric terms of a sampled map

    Parameters
    ----------
    samples : np.ndarray
        Map samples on a uniform lattice, shape (n1, ..., nd, d)
    h : float
        Lattice spacing
    jacobian : np.ndarray, optional
        Jacobian of the map at the samples, by default None (centered differences of the samples)

    Returns
    -------
    Tuple[np.ndarray, np.ndarray, np.ndarray]
        H = (grad map)^-1, G = H H^T and Gamma[..., i, a, b] = H_il d_a d_b (map)_l

    Raises
    ------
    SingularJacobian
        - |det grad map| < 1e-8 somewhere
    """

    dimension = samples.shape[-1]
    J = jacobian_samples(samples, h) if jacobian is None else jacobian
    determinant = np.linalg.det(J)
    if np.abs(determinant).min() < SINGULAR_DETERMINANT:
        raise(SingularJacobian(f"Map Jacobian determinant reaches {np.abs(determinant).min():.3e}"))

    H = np.linalg.inv(J)
    G = H @ np.swapaxes(H, -1, -2)
    second = np.stack(np.gradient(J, h, axis=tuple(range(dimension)), edge_order=2), axis=-2)
    Gamma = np.einsum("...il,...lab->...iab", H, second)
    return H, G, Gamma


def _planar_velocity(history: BodyHistory, shape: BodyShape, container: Container,
                     margins: Tuple[float, float, float]) -> Callable:
    def velocity(t, points):
        state = history.at(t)
        cutoff = build_cutoff(state.placement, shape, container, *margins)
        return extend_rigid(state, cutoff, points)[..., :2]

    return velocity


def build_bundle(first: BodyHistory, second: BodyHistory, shape: BodyShape, lattice: Grid,
                 margins: Tuple[float, float, float], t_end: float, dt: float,
                 substeps: Optional[int] = FLOW_SUBSTEPS) -> TransformBundle:
    """
    Change of coordinates between two body motions

    Parameters
    ----------
    first : BodyHistory
        Motion of the first body (the weak solution side)
    second : BodyHistory
        Motion of the second body (the strong solution side)
    shape : BodyShape
        Reference body shared by both motions
    lattice : Grid
        Sampling lattice covering the container
    margins : Tuple[float, float, float]
        inner, ramp and outer widths of the cutoffs
    t_end : float
        Final time
    dt : float
        Spacing of the stored times
    substeps : int, optional
        RK4 steps per stored interval of the discrete flows behind tildeZ2, by default 4

    Returns
    -------
    TransformBundle
        Sampled maps, metric terms and transformed body velocities

    Notes
    -----
    tildeZ2 and its Jacobian are evaluated through the discrete flows themselves, pulling the nodes back
    along the first motion and pushing them forward along the second, so that the Jacobian is the exact
    one of the discrete map. d_t tildeZ2 = Lambda2(t, tildeZ2) - grad tildeZ2 Lambda1(t, x).
    """

    container = lattice.container
    velocity_1 = _planar_velocity(first, shape, container, margins)
    velocity_2 = _planar_velocity(second, shape, container, margins)
    Z1 = integrate_flow(velocity_1, lattice, t_end, dt, substeps)
    Z2 = integrate_flow(velocity_2, lattice, t_end, dt, substeps)
    times = Z1.times
    nodes = lattice.nodes()[..., :2]

    tilde_z2, dtZ, H, G, Gamma = [], [], [], [], []
    for k, t in enumerate(times):
        values, jacobian = composite_flow(velocity_2, velocity_1, times, k, nodes, substeps)
        terms = metric_terms(values, lattice.h, jacobian)
        tilde_z2.append(values)
        dtZ.append(velocity_2(t, values) - np.einsum("...ij,...j->...i", jacobian, velocity_1(t, nodes)))
        H.append(terms[0])
        G.append(terms[1])
        Gamma.append(terms[2])
    tilde_z2, dtZ = np.array(tilde_z2), np.array(dtZ)
    H, G, Gamma = np.array(H), np.array(G), np.array(Gamma)
    tilde_z1 = np.array([composite_map(Z1, Z2, k, nodes) for k in range(times.size)])
    dtY = -np.einsum("...ij,...j->...i", H, dtZ)

    states_1 = [first.at(t) for t in times]
    states_2 = [second.at(t) for t in times]
    tilde_O = np.array([s2.O @ s1.O.T for s1, s2 in zip(states_1, states_2)])
    Vs = np.einsum("kji,kj->ki", tilde_O, np.array([s.V for s in states_2]))
    ws = np.einsum("kji,kj->ki", tilde_O, np.array([s.w for s in states_2]))

    logging.debug(f"Built a transform bundle with {times.size} samples on a {lattice.nx}x{lattice.ny} lattice")

    return TransformBundle(lattice, times, tilde_z2, dtZ, dtY, H, G, Gamma, tilde_O,
                           np.array([s.V for s in states_1]), np.array([s.w for s in states_1]), Vs, ws,
                           X1=np.array([s.X for s in states_1]), O1=np.array([s.O for s in states_1]),
                           tilde_z1=tilde_z1, maps=(Z1, Z2))


def composition_error(bundle: TransformBundle, samples: Optional[int] = 32) -> np.ndarray:
    """
    Largest |tildeZ1(t, tildeZ2(t, x)) - x| over a sample grid strictly inside the container, per stored time

    Raises
    ------
    ValueError
        - The bundle does not carry its flow maps
    """

    if bundle.maps is None:
        raise(ValueError("Composition needs the flow maps of the bundle"))

    Z1, Z2 = bundle.maps
    container = bundle.lattice.container
    lower, upper = container.lower[:2], container.upper[:2]
    axes = [np.linspace(lower[k], upper[k], samples + 2)[1:-1] for k in range(2)]
    points = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    errors = []
    for k in range(len(bundle)):
        forward = composite_map(Z2, Z1, k, points)
        back = composite_map(Z1, Z2, k, forward)
        errors.append(float(np.linalg.norm(back - points, axis=-1).max()))
    return np.array(errors)


def rigid_form_error(bundle: TransformBundle, shape: BodyShape, second: BodyHistory, zone: float) -> np.ndarray:
    """
    Largest |tildeZ2(t, x) - X2 - tildeO (x - X1)| over lattice nodes within zone of the first body, per stored time

    Both motions must start from the same placement.
    """

    nodes = bundle.nodes
    errors = []
    for k, t in enumerate(bundle.times):
        X1 = bundle.X1[k]
        O1 = bundle.O1[k] if bundle.O1 is not None else np.eye(3)
        near = geometry.signed_distance(shape, Placement(X1, O1), nodes) <= zone
        rigid = second.at(t).X + (as_point3(nodes[near]) - X1) @ bundle.tilde_O[k].T
        offset = bundle.tilde_z2[k][near] - rigid[..., :2]
        errors.append(float(np.linalg.norm(offset, axis=-1).max(initial=0.0)))
    return np.array(errors)


def volume_error(bundle: TransformBundle) -> float:
    """Largest |det grad tildeZ2 - 1| over the lattice and the stored times"""
    return float(np.abs(1.0 / np.linalg.det(bundle.H) - 1.0).max())


def forcing(Us: np.ndarray, Ps: np.ndarray, bundle: TransformBundle, index: int,
            dtZ_gradient: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Forcing of the transformed momentum equation at one stored time

    F_i = -H_ia d_t d_b (tildeZ2)_a U_b + Gamma^i_ab (d_t tildeZ1)_a U_b + (d_t tildeZ1)_b d_b U_i
          - Gamma^i_ab U_a U_b - (G - I)_ib d_b P

    Parameters
    ----------
    Us : np.ndarray
        Transformed velocity on the lattice nodes (..., 2)
    Ps : np.ndarray
        Transformed pressure on the lattice nodes
    bundle : TransformBundle
        The change of coordinates
    index : int
        Stored time index
    dtZ_gradient : np.ndarray, optional
        Precomputed spatial Jacobian of d_t tildeZ2, by default None

    Returns
    -------
    np.ndarray
        F on the lattice nodes (..., 2)
    """

    h = bundle.lattice.h
    H, G, Gamma = bundle.H[index], bundle.G[index], bundle.Gamma[index]
    dtY = bundle.dtY[index]
    rate_gradient = jacobian_samples(bundle.dtZ[index], h) if dtZ_gradient is None else dtZ_gradient
    velocity_gradient = jacobian_samples(Us, h)
    pressure_gradient = np.stack(np.gradient(Ps, h, edge_order=2), axis=-1)
    identity = np.eye(Us.shape[-1])

    return -np.einsum("...ia,...ab,...b->...i", H, rate_gradient, Us) \
        + np.einsum("...iab,...a,...b->...i", Gamma, dtY, Us) \
        + np.einsum("...b,...ib->...i", dtY, velocity_gradient) \
        - np.einsum("...iab,...a,...b->...i", Gamma, Us, Us) \
        - np.einsum("...ib,...b->...i", G - identity, pressure_gradient)


def transform_velocity(velocity: Callable, bundle: TransformBundle, index: int, shape: Optional[BodyShape] = None,
                       pressure: Optional[Callable] = None) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """
    Transformed strong velocity U^s(x) = H(x) u2(tildeZ2(x)) on the lattice nodes, and P^s(x) = p2(tildeZ2(x))

    Inside the first body the rigid field V^s + w^s x (x - X1) is returned, V^s = tildeO^T V2 and
    w^s = tildeO^T w2.

    Parameters
    ----------
    velocity : Callable
        u2(points) for points (..., 2), planar velocities
    bundle : TransformBundle
        The change of coordinates
    index : int
        Stored time index
    shape : BodyShape, optional
        Reference body, by default None (no rigid override)
    pressure : Callable, optional
        p2(points), by default None

    Returns
    -------
    Tuple[np.ndarray, Optional[np.ndarray]]
        U^s on the nodes (..., 2) and P^s (or None)
    """

    mapped = bundle.tilde_z2[index]
    Us = np.einsum("...ij,...j->...i", bundle.H[index], velocity(mapped))
    Ps = pressure(mapped) if pressure is not None else None

    if shape is not None and bundle.X1 is not None:
        nodes = bundle.nodes
        O1 = bundle.O1[index] if bundle.O1 is not None else np.eye(3)
        placement = Placement(bundle.X1[index], O1)
        inside = geometry.signed_distance(shape, placement, nodes) < 0
        rigid = RigidState(bundle.X1[index], O1, bundle.Vs[index], bundle.ws[index], validate=False)
        Us[inside] = rigid_dynamics.rigid_velocity(rigid, nodes[inside])[..., :2]
    return Us, Ps


def transform_centered(velocity: Callable, bundle: TransformBundle, index: int,
                       shape: Optional[BodyShape] = None) -> np.ndarray:
    """
    Transformed strong velocity at the lattice cell centers, H u2(tildeZ2(x)) with H averaged from the nodes

    Paired with a sampler that interpolates cell-centered data exactly, identical motions give back the
    cell-centered field itself.
    """

    lattice = bundle.lattice
    centers = lattice.centers()[..., :2]
    mapped = MapInterpolant(lattice, bundle.tilde_z2[index] - bundle.nodes).value(centers)
    Us = np.einsum("...ij,...j->...i", nodes_to_centers(bundle.H[index]), velocity(mapped))

    if shape is not None and bundle.X1 is not None:
        O1 = bundle.O1[index] if bundle.O1 is not None else np.eye(3)
        inside = geometry.signed_distance(shape, Placement(bundle.X1[index], O1), centers) < 0
        rigid = RigidState(bundle.X1[index], O1, bundle.Vs[index], bundle.ws[index], validate=False)
        Us[inside] = rigid_dynamics.rigid_velocity(rigid, centers[inside])[..., :2]
    return Us


def relative_rotation_error(bundle: TransformBundle) -> float:
    """Largest deviation of tildeO^T d(tildeO)/dt from the cross-product matrix of w^s - w1"""
    if len(bundle) < 2:
        return 0.0
    rate = np.gradient(bundle.tilde_O, bundle.times, axis=0)
    generator = np.einsum("kji,kjl->kil", bundle.tilde_O, rate)
    expected = np.array([skew(w) for w in bundle.ws - bundle.w1])
    return float(np.abs(generator - expected).max())


def _l2_in_time(times: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Running L2(0, t) norm of a vector series"""
    squared = np.sum(values * values, axis=-1)
    integral = np.concatenate([[0.0], np.cumsum(0.5 * (squared[1:] + squared[:-1]) * np.diff(times))])
    return np.sqrt(integral)


def map_estimates(bundle: TransformBundle, shape: BodyShape, fluid_mask: Optional[np.ndarray] = None,
                   O1: Optional[Sequence[np.ndarray]] = None) -> Dict[str, np.ndarray]:
    """
    Left and right sides of the map estimates along the stored times

    Left sides: max over the first body's boundary of |tildeZ2 - x| and |d_t tildeZ2|, finite-difference
    W^{3,inf} surrogate of tildeZ2 - id and W^{1,inf} surrogate of d_t tildeZ2 on the fluid nodes.
    Right sides: L2(0, t) and pointwise norms of V1 - V^s and w1 - w^s.

    Returns
    -------
    Dict[str, np.ndarray]
        Series keyed by name, plus the ratios left/right (zero where the right side vanishes)
    """

    h = bundle.lattice.h
    nodes = bundle.nodes
    if O1 is not None:
        rotations = O1
    elif bundle.O1 is not None:
        rotations = bundle.O1
    else:
        rotations = [np.eye(3)] * len(bundle)
    X1 = bundle.X1 if bundle.X1 is not None else np.zeros((len(bundle), 3))

    boundary_offset, boundary_rate, map_norm, rate_norm = [], [], [], []
    for k in range(len(bundle)):
        placement = Placement(X1[k], rotations[k])
        distance = geometry.signed_distance(shape, placement, nodes)
        fluid = distance > 0 if fluid_mask is None else fluid_mask[k]
        near = np.abs(distance) <= h

        offset = bundle.tilde_z2[k] - nodes
        norm = np.linalg.norm(offset, axis=-1)
        rate = np.linalg.norm(bundle.dtZ[k], axis=-1)
        boundary_offset.append(norm[near].max(initial=0.0))
        boundary_rate.append(rate[near].max(initial=0.0))

        derivatives = [np.abs(offset)]
        current = offset
        for _ in range(3):
            current = jacobian_samples(current, h)
            derivatives.append(np.abs(current).reshape(current.shape[:2] + (-1,)))
        map_norm.append(max(float(d[fluid].max(initial=0.0)) for d in derivatives))
        rate_gradient = np.abs(jacobian_samples(bundle.dtZ[k], h)).reshape(rate.shape + (-1,))
        rate_norm.append(max(float(rate[fluid].max(initial=0.0)), float(rate_gradient[fluid].max(initial=0.0))))

    dV = bundle.V1 - bundle.Vs
    dw = bundle.w1 - bundle.ws
    integrated = _l2_in_time(bundle.times, dV) + _l2_in_time(bundle.times, dw)
    pointwise = np.linalg.norm(dV, axis=-1) + np.linalg.norm(dw, axis=-1)

    def ratio(left, right):
        left, right = np.asarray(left), np.asarray(right)
        return np.divide(left, right, out=np.zeros_like(left), where=right > 1e-14)

    report = {
        "boundary_offset": np.array(boundary_offset),
        "boundary_rate": np.array(boundary_rate),
        "map_norm": np.array(map_norm),
        "rate_norm": np.array(rate_norm),
        "integrated_difference": integrated,
        "pointwise_difference": pointwise,
    }
    report["boundary_offset_ratio"] = ratio(report["boundary_offset"], integrated)
    report["boundary_rate_ratio"] = ratio(report["boundary_rate"], pointwise)
    report["map_norm_ratio"] = ratio(report["map_norm"], integrated)
    report["rate_norm_ratio"] = ratio(report["rate_norm"], pointwise)
    return report


def forcing_ratio(bundle: TransformBundle, forcing_series: np.ndarray, fluid_masks: np.ndarray) -> float:
    """||F||_{L2 L2(F1)} / (||V1 - V^s||_{L2} + ||w1 - w^s||_{L2}) over the whole stored interval"""
    area = bundle.lattice.h ** 2
    squared = np.array([area * float(np.sum(np.sum(f * f, axis=-1)[mask])) for f, mask in zip(forcing_series, fluid_masks)])
    times = bundle.times
    norm = np.sqrt(float(np.sum(0.5 * (squared[1:] + squared[:-1]) * np.diff(times)))) if times.size > 1 else 0.0
    difference = _l2_in_time(times, bundle.V1 - bundle.Vs)[-1] + _l2_in_time(times, bundle.w1 - bundle.ws)[-1]
    if difference <= 1e-14:
        return 0.0 if norm <= 1e-14 else float("inf")
    return norm / difference


def angular_generator(times: Sequence[float], rotations: np.ndarray) -> np.ndarray:
    """W = O^T dO/dt by centered differences over a rotation history (T, 3, 3)"""
    times = np.asarray(times, dtype=float)
    rotations = np.asarray(rotations, dtype=float)
    if times.size != rotations.shape[0]:
        raise(GridMismatch("One rotation per time stamp is needed"))
    if times.size < 2:
        return np.zeros_like(rotations)
    rate = np.gradient(rotations, times, axis=0)
    return np.einsum("kji,kjl->kil", rotations, rate)


def rotation_uniqueness_ode(times: Sequence[float], W: np.ndarray, initial: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Integrates dO_delta/dt = O_delta W with RK4, W linear in time between samples

    Parameters
    ----------
    times : Sequence[float]
        Sample times of W
    W : np.ndarray
        Generator history (T, 3, 3)
    initial : np.ndarray, optional
        O_delta(0), by default None (zero)

    Returns
    -------
    np.ndarray
        Frobenius norm of O_delta at every sample time
    """

    times = np.asarray(times, dtype=float)
    W = np.asarray(W, dtype=float)
    O = np.zeros((3, 3)) if initial is None else np.array(initial, dtype=float)

    def generator(t):
        return np.array([[np.interp(t, times, W[:, i, j]) for j in range(3)] for i in range(3)])

    norms = [float(np.linalg.norm(O))]
    for k in range(times.size - 1):
        t, dt = times[k], times[k + 1] - times[k]
        k1 = O @ generator(t)
        k2 = (O + 0.5 * dt * k1) @ generator(t + 0.5 * dt)
        k3 = (O + 0.5 * dt * k2) @ generator(t + 0.5 * dt)
        k4 = (O + dt * k3) @ generator(t + dt)
        O = O + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        norms.append(float(np.linalg.norm(O)))
    return np.array(norms)


def gronwall_envelope(times: Sequence[float], W: np.ndarray, initial_norm: float) -> np.ndarray:
    """|O_delta(0)| exp(int_0^t |W|) for the Frobenius norm, the bound every solution of the rotation ODE obeys"""
    times = np.asarray(times, dtype=float)
    norms = np.linalg.norm(np.asarray(W, dtype=float), axis=(-2, -1))
    integral = np.concatenate([[0.0], np.cumsum(0.5 * (norms[1:] + norms[:-1]) * np.diff(times))])
    return initial_norm * np.exp(integral)
