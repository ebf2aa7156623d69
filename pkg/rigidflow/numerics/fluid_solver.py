import logging
from functools import lru_cache
from typing import Callable, List, Optional, Sequence, Tuple, Union
import numpy as np
import scipy.sparse
from scipy.fft import dctn, idctn
from scipy.ndimage import map_coordinates, spline_filter
from scipy.sparse.linalg import LinearOperator, cg
from rigidflow.exceptions import CflViolation, CollisionMargin, ConfigInvalid, GridMismatch, InadmissibleTestField, \
    PoissonDiverged
from rigidflow.models.fluid import CoupledState, SolverParams, StaggeredField
from rigidflow.models.geometry import BodyShape, Grid
from rigidflow.models.rigid import MassProperties, RigidState
from rigidflow.models.trajectory import EnergyReport, Trajectory
from rigidflow.numerics import geometry, rigid_dynamics


PENALIZATION_SMOOTHING_CELLS = 1.5
DIFFUSION_LIMIT = 0.25
DIFFUSION_TARGET = 0.9 * DIFFUSION_LIMIT
COURANT_HARD_FACTOR = 2.0
ADMISSIBILITY_TOLERANCE = 1e-8


def divergence(grid: Grid, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Discrete MAC divergence at the cell centers, shape (nx, ny)"""
    return (u[1:, :] - u[:-1, :] + v[:, 1:] - v[:, :-1]) / grid.h


def zero_wall_faces(u: np.ndarray, v: np.ndarray):
    u[0, :] = 0.0
    u[-1, :] = 0.0
    v[:, 0] = 0.0
    v[:, -1] = 0.0


def wall_face_mask(grid: Grid) -> np.ndarray:
    """Faces whose normal velocity is pinned to zero by the container, flattened as u faces then v faces"""
    mask_u = np.zeros(grid.shape_u, dtype=bool)
    mask_v = np.zeros(grid.shape_v, dtype=bool)
    mask_u[[0, -1], :] = True
    mask_v[:, [0, -1]] = True
    return np.concatenate([mask_u.ravel(), mask_v.ravel()])


@lru_cache(maxsize=8)
def _divergence_matrix(nx: int, ny: int, h: float) -> scipy.sparse.csr_matrix:
    cells = np.arange(nx * ny).reshape(nx, ny)
    nu = (nx + 1) * ny
    u_index = np.arange(nu).reshape(nx + 1, ny)
    v_index = nu + np.arange(nx * (ny + 1)).reshape(nx, ny + 1)

    rows = np.tile(cells.ravel(), 4)
    columns = np.concatenate([u_index[1:, :].ravel(), u_index[:-1, :].ravel(),
                              v_index[:, 1:].ravel(), v_index[:, :-1].ravel()])
    values = np.repeat([1.0 / h, -1.0 / h, 1.0 / h, -1.0 / h], nx * ny)
    return scipy.sparse.csr_matrix((values, (rows, columns)), shape=(nx * ny, nu + nx * (ny + 1)))


@lru_cache(maxsize=8)
def _neumann_eigenvalues(nx: int, ny: int, h: float) -> np.ndarray:
    lambda_x = 2.0 - 2.0 * np.cos(np.pi * np.arange(nx) / nx)
    lambda_y = 2.0 - 2.0 * np.cos(np.pi * np.arange(ny) / ny)
    eigenvalues = (lambda_x[:, None] + lambda_y[None, :]) / (h * h)
    eigenvalues[0, 0] = np.inf
    return eigenvalues


def _neumann_inverse(residual: np.ndarray, nx: int, ny: int, h: float) -> np.ndarray:
    """Pseudo-inverse of the full-domain Neumann Laplacian by cosine transform"""
    coefficients = dctn(residual.reshape(nx, ny), type=2, norm="ortho")
    return idctn(coefficients / _neumann_eigenvalues(nx, ny, h), type=2, norm="ortho").ravel()


def _solve_projection(grid: Grid, faces: np.ndarray, fixed: np.ndarray, tolerance: float,
                      max_iterations: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Orthogonal projection of the flattened face velocities onto the discretely divergence-free fields
    that keep the values of the fixed faces

    Returns
    -------
    Tuple[np.ndarray, np.ndarray]
        Projected faces and the potential psi at the cell centers (zero on cells without free faces)
    """

    D = _divergence_matrix(grid.nx, grid.ny, grid.h)
    free = np.flatnonzero(~fixed)
    D_free = D[:, free]
    active = np.flatnonzero(np.asarray(abs(D_free).sum(axis=1)).ravel() > 0)
    D_active = D_free[active, :]
    K = (D_active @ D_active.T).tocsr()

    rhs = -(D @ faces)[active]
    rhs -= rhs.mean()

    cell_count = grid.nx * grid.ny

    def precondition(r):
        r = r - r.mean()
        full = np.zeros(cell_count)
        full[active] = r
        z = _neumann_inverse(full, grid.nx, grid.ny, grid.h)[active]
        return z - z.mean()

    M = LinearOperator(K.shape, matvec=precondition, dtype=float)
    max_iterations = max_iterations if max_iterations is not None else 10 * (grid.nx + grid.ny)
    floor = 1e-13 * np.linalg.norm(faces) / grid.h
    psi, _ = cg(K, rhs, rtol=1e-3 * tolerance, atol=floor, maxiter=max_iterations, M=M)

    residual = np.linalg.norm(rhs - K @ psi)
    if residual > tolerance * np.linalg.norm(rhs) + floor:
        raise(PoissonDiverged(f"Pressure solve stopped at relative residual "
                              f"{residual / max(np.linalg.norm(rhs), np.finfo(float).tiny):.3e}"))

    psi -= psi.mean()
    projected = faces.copy()
    projected[free] += D_active.T @ psi
    potential = np.zeros(cell_count)
    potential[active] = psi
    return projected, potential.reshape(grid.shape_p)


def _flatten(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.concatenate([u.ravel(), v.ravel()])


def _unflatten(grid: Grid, faces: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    nu = grid.shape_u[0] * grid.shape_u[1]
    return faces[:nu].reshape(grid.shape_u).copy(), faces[nu:].reshape(grid.shape_v).copy()


def rigid_face_velocity(grid: Grid, body: RigidState) -> Tuple[np.ndarray, np.ndarray]:
    """Normal components of the rigid velocity field sampled on the u and v faces"""
    return rigid_dynamics.rigid_velocity(body, grid.u_points())[..., 0], \
        rigid_dynamics.rigid_velocity(body, grid.v_points())[..., 1]


def body_face_mask(grid: Grid, shape: BodyShape, body: RigidState) -> Tuple[np.ndarray, np.ndarray]:
    """Faces whose centers lie inside the placed body"""
    placement = body.placement
    return geometry.signed_distance(shape, placement, grid.u_points()) < 0, \
        geometry.signed_distance(shape, placement, grid.v_points()) < 0


def face_indicator(grid: Grid, shape: BodyShape, body: RigidState) -> Tuple[np.ndarray, np.ndarray]:
    """Smoothed body indicator on the u and v faces, ramp width 1.5 cells"""
    smoothing = PENALIZATION_SMOOTHING_CELLS * grid.h
    placement = body.placement
    return geometry.indicator(shape, placement, grid.u_points(), smoothing), \
        geometry.indicator(shape, placement, grid.v_points(), smoothing)


def center_indicator(grid: Grid, shape: Optional[BodyShape], body: Optional[RigidState]) -> np.ndarray:
    if body is None:
        return np.zeros(grid.shape_p)
    return geometry.indicator(shape, body.placement, grid.centers(), PENALIZATION_SMOOTHING_CELLS * grid.h)


def pressure_projection(field: StaggeredField, dt: float, tolerance: Optional[float] = 1e-9,
                        max_iterations: Optional[int] = None) -> StaggeredField:
    """
    Chorin projection onto discretely divergence-free fields with u.n = 0 on the container walls

    Parameters
    ----------
    field : StaggeredField
        Intermediate velocity
    dt : float
        Time step, used to scale the potential into a pressure
    tolerance : float, optional
        Relative residual accepted from the Poisson solve, by default 1e-9
    max_iterations : int, optional
        Conjugate gradient iteration cap, by default None

    Returns
    -------
    StaggeredField
        Projected velocity with the mean-zero pressure

    Raises
    ------
    PoissonDiverged
        - The Poisson residual stayed above the tolerance
    """

    grid = field.grid
    u, v = field.u.copy(), field.v.copy()
    zero_wall_faces(u, v)
    faces, psi = _solve_projection(grid, _flatten(u, v), wall_face_mask(grid), tolerance, max_iterations)
    u, v = _unflatten(grid, faces)
    return StaggeredField(grid, u, v, psi / dt)


def compatibility_projection(field: StaggeredField, body: Optional[RigidState] = None,
                             shape: Optional[BodyShape] = None, tolerance: Optional[float] = 1e-9,
                             max_iterations: Optional[int] = None) -> StaggeredField:
    """
    Makes an initial field compatible with the body: discretely divergence free, zero normal velocity
    on the walls and equal to the rigid field on the faces inside the body

    The map is the orthogonal projection (in the face inner product) onto that affine set, so projecting
    twice returns the same field.

    Parameters
    ----------
    field : StaggeredField
        A velocity field
    body : RigidState, optional
        Body state, by default None (plain projection)
    shape : BodyShape, optional
        Reference body, by default None
    tolerance : float, optional
        Relative residual accepted from the Poisson solve, by default 1e-9
    max_iterations : int, optional
        Conjugate gradient iteration cap, by default None

    Returns
    -------
    StaggeredField
        The compatible field, with zero pressure
    """

    grid = field.grid
    u, v = field.u.copy(), field.v.copy()
    zero_wall_faces(u, v)
    fixed = wall_face_mask(grid)

    if body is not None:
        inside_u, inside_v = body_face_mask(grid, shape, body)
        rigid_u, rigid_v = rigid_face_velocity(grid, body)
        u[inside_u] = rigid_u[inside_u]
        v[inside_v] = rigid_v[inside_v]
        zero_wall_faces(u, v)
        fixed = fixed | _flatten(inside_u, inside_v)

    faces, _ = _solve_projection(grid, _flatten(u, v), fixed, tolerance, max_iterations)
    u, v = _unflatten(grid, faces)
    return StaggeredField(grid, u, v)


def _interpolator(grid: Grid, values: np.ndarray, offset_x: float, offset_y: float) -> Callable:
    coefficients = spline_filter(values, order=3, mode="nearest")

    def sample(points: np.ndarray) -> np.ndarray:
        i = (points[..., 0] - grid.origin[0]) / grid.h - offset_x
        j = (points[..., 1] - grid.origin[1]) / grid.h - offset_y
        sampled = map_coordinates(coefficients, [i.ravel(), j.ravel()], order=3, mode="nearest", prefilter=False)
        return sampled.reshape(i.shape)

    return sample


def velocity_sampler(field: StaggeredField) -> Callable:
    """Cubic spline sampler of the staggered velocity at arbitrary planar points (..., 2)"""
    sample_u = _interpolator(field.grid, field.u, 0.0, 0.5)
    sample_v = _interpolator(field.grid, field.v, 0.5, 0.0)

    def sample(points: np.ndarray) -> np.ndarray:
        return np.stack([sample_u(points), sample_v(points)], axis=-1)

    return sample


def cell_sampler(grid: Grid, centered: np.ndarray) -> Callable:
    """Cubic spline through cell-centered planar vectors (nx, ny, 2), exact at the cell centers"""
    sample_u = _interpolator(grid, centered[..., 0], 0.5, 0.5)
    sample_v = _interpolator(grid, centered[..., 1], 0.5, 0.5)

    def sample(points: np.ndarray) -> np.ndarray:
        return np.stack([sample_u(points), sample_v(points)], axis=-1)

    return sample


def center_sampler(field: StaggeredField) -> Callable:
    return cell_sampler(field.grid, field.centered_velocity())


def node_sampler(grid: Grid, values: np.ndarray) -> Callable:
    """Cubic spline sampler of scalar node data (nx+1, ny+1)"""
    return _interpolator(grid, values, 0.0, 0.0)


def pressure_sampler(field: StaggeredField) -> Callable:
    return _interpolator(field.grid, field.p, 0.5, 0.5)


def advect(field: StaggeredField, dt: float) -> StaggeredField:
    """
    Semi-Lagrangian advection of the velocity by itself, midpoint backtracking and cubic spline sampling
    """

    grid = field.grid
    sample_u = _interpolator(grid, field.u, 0.0, 0.5)
    sample_v = _interpolator(grid, field.v, 0.5, 0.0)
    lower, upper = grid.container.lower[:2], grid.container.upper[:2]

    def velocity(points):
        return np.stack([sample_u(points), sample_v(points)], axis=-1)

    def departure(points):
        middle = np.clip(points - 0.5 * dt * velocity(points), lower, upper)
        return np.clip(points - dt * velocity(middle), lower, upper)

    u = sample_u(departure(grid.u_points()[..., :2]))
    v = sample_v(departure(grid.v_points()[..., :2]))
    zero_wall_faces(u, v)
    return StaggeredField(grid, u, v, field.p)


def strain_rate(grid: Grid, u: np.ndarray, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Symmetric gradient on the MAC grid

    Returns
    -------
    Tuple[np.ndarray, np.ndarray, np.ndarray]
        d11 and d22 at the cell centers and d12 at the interior nodes, shape (nx-1, ny-1).
        d12 vanishes on the walls (zero tangential stress).
    """

    h = grid.h
    d11 = (u[1:, :] - u[:-1, :]) / h
    d22 = (v[:, 1:] - v[:, :-1]) / h
    d12 = 0.5 * ((u[1:-1, 1:] - u[1:-1, :-1]) + (v[1:, 1:-1] - v[:-1, 1:-1])) / h
    return d11, d22, d12


def strain_inner(grid: Grid, first: Tuple[np.ndarray, np.ndarray], second: Tuple[np.ndarray, np.ndarray]) -> float:
    """Discrete int D(a):D(b) for two face velocity pairs (u, v)"""
    a11, a22, a12 = strain_rate(grid, *first)
    b11, b22, b12 = strain_rate(grid, *second)
    return grid.cell_area * float(np.sum(a11 * b11) + np.sum(a22 * b22) + 2.0 * np.sum(a12 * b12))


def viscous_operator(grid: Grid, u: np.ndarray, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    2 div D(u) on the faces, the negative gradient of the discrete dissipation functional so that
    sum h^2 K(u).w = -2 int D(u):D(w) holds exactly
    """

    h = grid.h
    d11, d22, d12 = strain_rate(grid, u, v)
    nodes = np.zeros((grid.nx + 1, grid.ny + 1))
    nodes[1:-1, 1:-1] = d12

    ku = np.zeros(grid.shape_u)
    kv = np.zeros(grid.shape_v)
    ku[1:-1, :] = 2.0 / h * (d11[1:, :] - d11[:-1, :] + nodes[1:-1, 1:] - nodes[1:-1, :-1])
    kv[:, 1:-1] = 2.0 / h * (d22[:, 1:] - d22[:, :-1] + nodes[1:, 1:-1] - nodes[:-1, 1:-1])
    return ku, kv


def diffuse(field: StaggeredField, eps: float, dt: float) -> Tuple[StaggeredField, float]:
    """
    Explicit viscous step u <- u + dt eps 2 div D(u)

    Returns
    -------
    Tuple[StaggeredField, float]
        New field and the dissipation 2 eps dt int D(u_old):D(u_new) booked for the step
    """

    if eps == 0:
        return field, 0.0

    grid = field.grid
    ku, kv = viscous_operator(grid, field.u, field.v)
    u = field.u + dt * eps * ku
    v = field.v + dt * eps * kv
    zero_wall_faces(u, v)
    dissipation = 2.0 * eps * dt * strain_inner(grid, (field.u, field.v), (u, v))
    return StaggeredField(grid, u, v, field.p), dissipation


def penalization_factor(params: SolverParams, dt: float) -> float:
    return float(-np.expm1(-dt / params.eta_pen))


def _penalization_increment(state: CoupledState, params: SolverParams, dt: float) -> Tuple[np.ndarray, np.ndarray]:
    grid = state.grid
    chi_u, chi_v = face_indicator(grid, state.shape, state.body)
    rigid_u, rigid_v = rigid_face_velocity(grid, state.body)
    alpha = penalization_factor(params, dt)
    du = alpha * chi_u * (state.fluid.u - rigid_u)
    dv = alpha * chi_v * (state.fluid.v - rigid_v)
    zero_wall_faces(du, dv)
    return du, dv


def _exchange(grid: Grid, body: RigidState, du: np.ndarray, dv: np.ndarray, dt: float) -> Tuple[np.ndarray, np.ndarray]:
    area = grid.cell_area
    force = area / dt * np.array([du.sum(), dv.sum(), 0.0])
    arm_u = grid.u_points()[..., 1] - body.X[1]
    arm_v = grid.v_points()[..., 0] - body.X[0]
    torque = area / dt * np.array([0.0, 0.0, float(np.sum(arm_v * dv) - np.sum(arm_u * du))])
    return force, torque


def penalize(state: CoupledState, params: SolverParams, dt: float) -> Tuple[StaggeredField, np.ndarray, np.ndarray]:
    """
    Penalization step: the fluid on the body relaxes toward the rigid field

    Returns
    -------
    Tuple[StaggeredField, np.ndarray, np.ndarray]
        Relaxed field, and the force and torque handed to the body, which carry exactly the momentum
        and angular momentum the fluid loses
    """

    du, dv = _penalization_increment(state, params, dt)
    force, torque = _exchange(state.grid, state.body, du, dv, dt)
    fluid = state.fluid
    return StaggeredField(fluid.grid, fluid.u - du, fluid.v - dv, fluid.p), force, torque


def fluid_force_on_body(state: CoupledState, params: SolverParams, mp: Optional[MassProperties] = None,
                        dt: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Force and torque (about the center of mass) that the penalization transfers from the fluid to the body

    The force is alpha/dt int chi_B (u - u_B) with alpha = 1 - exp(-dt/eta_pen), the exact opposite of the
    momentum removed from the fluid by the penalization step.

    Parameters
    ----------
    state : CoupledState
        Current state
    params : SolverParams
        Solver parameters
    mp : MassProperties, optional
        Unused, accepted for symmetry with step_coupled, by default None
    dt : float, optional
        Time step, by default None (params.dt)

    Returns
    -------
    Tuple[np.ndarray, np.ndarray]
        Force and torque 3-vectors

    Raises
    ------
    ConfigInvalid
        - A time step is needed
    """

    dt = dt if dt is not None else params.dt
    if dt is None:
        raise(ConfigInvalid("The penalization force needs a time step"))
    if not state.has_body:
        return np.zeros(3), np.zeros(3)
    du, dv = _penalization_increment(state, params, dt)
    return _exchange(state.grid, state.body, du, dv, dt)


def speed_bound(state: CoupledState) -> float:
    speed = state.fluid.max_speed()
    if state.has_body:
        body = state.body
        speed = max(speed, float(np.linalg.norm(body.V) + np.linalg.norm(body.w) * state.shape.circumradius))
    return speed


def choose_dt(state: CoupledState, params: SolverParams) -> float:
    """
    Time step from the advective CFL target and the explicit diffusion limit, shortened so that t_end
    is reached in a whole number of steps
    """

    if params.dt is not None:
        return params.dt

    h = state.grid.h
    speed = speed_bound(state)
    limits = [params.cfl * h / speed if speed > 0 else params.cfl * h]
    if params.eps > 0:
        limits.append(DIFFUSION_TARGET * h * h / params.eps)
    dt = min(limits)
    if params.t_end > 0:
        dt = params.t_end / int(np.ceil(params.t_end / dt))
    return dt


def check_cfl(state: CoupledState, params: SolverParams, dt: float):
    """
    Raises
    ------
    CflViolation
        - Courant number above twice the target
        - Explicit diffusion number above 1/4
    """

    h = state.grid.h
    courant = dt * speed_bound(state) / h
    if courant > COURANT_HARD_FACTOR * params.cfl:
        raise(CflViolation(f"Courant number {courant:.3f} exceeds {COURANT_HARD_FACTOR * params.cfl:.3f} "
                           f"at t={state.time:.6g}"))
    if params.eps * dt / (h * h) > DIFFUSION_LIMIT:
        raise(CflViolation(f"Diffusion number {params.eps * dt / (h * h):.3f} exceeds {DIFFUSION_LIMIT}"))


def _advance(state: CoupledState, params: SolverParams, mp: Optional[MassProperties],
             dt: float) -> Tuple[CoupledState, float]:
    check_cfl(state, params, dt)

    field = advect(state.fluid, dt)
    field, dissipation = diffuse(field, params.eps, dt)

    body = state.body
    force = torque = None
    if state.has_body:
        field, force, torque = penalize(CoupledState(field, body, state.time, state.shape), params, dt)

    field = pressure_projection(field, dt, params.poisson_tolerance, params.poisson_max_iterations)

    if state.has_body:
        body = rigid_dynamics.step_rigid(body, mp, force, torque, dt)
        gap = geometry.boundary_gap(body.placement, state.shape, state.grid.container)
        if gap <= 0.5 * params.kappa or gap <= 0:
            raise(CollisionMargin(f"Body reached the collision margin at t={state.time + dt:.6g} (gap {gap:.3e})",
                                  state=state))

    return CoupledState(field, body, state.time + dt, state.shape), dissipation


def step_coupled(state: CoupledState, params: SolverParams, mp: Optional[MassProperties] = None) -> CoupledState:
    """
    One operator-split step: advection, diffusion, penalization, projection, body update and collision check

    Parameters
    ----------
    state : CoupledState
        Current state
    params : SolverParams
        Solver parameters, the time step is chosen from the CFL limits when params.dt is None
    mp : MassProperties, optional
        Mass properties, required when the state carries a body

    Returns
    -------
    CoupledState
        State after one step

    Raises
    ------
    CflViolation
        - The time step breaks the CFL or diffusion limits
    PoissonDiverged
        - The pressure solve failed
    CollisionMargin
        - The body came within kappa/2 of the walls
    """

    if state.has_body and mp is None:
        raise(ConfigInvalid("A coupled step needs the body mass properties"))
    return _advance(state, params, mp, choose_dt(state, params))[0]


def energy_split(state: CoupledState, mp: Optional[MassProperties] = None) -> Tuple[float, float, float]:
    """
    Kinetic energies of the fluid outside the body, of the body and of the fluid inside the penalized region

    Returns
    -------
    Tuple[float, float, float]
        E_fluid, E_body and E_interior
    """

    grid = state.grid
    u, v = state.fluid.u, state.fluid.v
    if not state.has_body:
        return 0.5 * grid.cell_area * float(np.sum(u * u) + np.sum(v * v)), 0.0, 0.0

    chi_u, chi_v = face_indicator(grid, state.shape, state.body)
    interior = 0.5 * grid.cell_area * float(np.sum(chi_u * u * u) + np.sum(chi_v * v * v))
    outside = 0.5 * grid.cell_area * float(np.sum((1.0 - chi_u) * u * u) + np.sum((1.0 - chi_v) * v * v))
    body = rigid_dynamics.body_kinetic_energy(mp, state.body) if mp is not None else 0.0
    return outside, body, interior


def _report(state: CoupledState, mp: Optional[MassProperties], dissipation: float, E0: Optional[float]) -> EnergyReport:
    E_fluid, E_body, E_interior = energy_split(state, mp)
    total = E_fluid + E_body + E_interior
    residual = total + dissipation - (total if E0 is None else E0)
    return EnergyReport(state.time, E_fluid, E_body, E_interior, dissipation, residuals={"energy": residual})


def run(initial: CoupledState, params: SolverParams, mp: Optional[MassProperties] = None) -> Trajectory:
    """
    Runs the coupled solver from an initial state up to t_end

    Parameters
    ----------
    initial : CoupledState
        Initial state, usually prepared by scenario_util.initial_state
    params : SolverParams
        Solver parameters
    mp : MassProperties, optional
        Mass properties, required when the state carries a body

    Returns
    -------
    Trajectory
        Snapshots at the output times, one energy row and one body state per step

    Raises
    ------
    CollisionMargin
        - The body reached the collision margin; the partial trajectory is attached as ``trajectory``
    """

    if initial.has_body and mp is None:
        raise(ConfigInvalid("A coupled run needs the body mass properties"))

    dt = choose_dt(initial, params)
    params = params.with_changes(dt=dt)
    trajectory = Trajectory(params, initial.grid, initial.shape, mp)

    state = initial.copy()
    trajectory.add_snapshot(state)
    first = _report(state, mp, 0.0, None)
    E0 = first.total
    trajectory.add_report(first)
    if state.has_body:
        trajectory.add_body_state(state.time, state.body)

    steps = int(np.ceil(params.t_end / dt - 1e-9)) if params.t_end > 0 else 0
    next_output = params.output_dt
    dissipation = 0.0

    logging.debug(f"Running {steps} steps of dt={dt:.6g} on a {initial.grid.nx}x{initial.grid.ny} grid")

    for k in range(steps):
        step = params.t_end - state.time if k == steps - 1 else dt
        try:
            state, increment = _advance(state, params, mp, step)
        except CollisionMargin as error:
            trajectory.status = "collision"
            trajectory.message = str(error)
            error.trajectory = trajectory
            raise
        if k == steps - 1:
            state.time = params.t_end

        dissipation += increment
        report = _report(state, mp, dissipation, E0)
        trajectory.add_report(report)
        if state.has_body:
            trajectory.add_body_state(state.time, state.body)

        if next_output is None or state.time >= next_output - 0.5 * dt or k == steps - 1:
            trajectory.add_snapshot(state)
            if next_output is not None:
                while next_output <= state.time + 0.5 * dt:
                    next_output += params.output_dt

        logging.debug(f"t={state.time:.6g} E={report.total:.6e} dissipation={dissipation:.6e}")

    trajectory.status = "completed"
    return trajectory


def as_ensemble(runs: Union[Trajectory, Sequence[Trajectory]]) -> List[Trajectory]:
    runs = [runs] if isinstance(runs, Trajectory) else list(runs)
    if len(runs) == 0:
        raise(GridMismatch("At least one trajectory is needed"))
    reference = runs[0]
    for other in runs[1:]:
        if not other.grid.matches(reference.grid):
            raise(GridMismatch("Trajectories do not share a grid"))
        if other.times.shape != reference.times.shape or not np.allclose(other.times, reference.times):
            raise(GridMismatch("Trajectories do not share snapshot times"))
    return runs


def centered_gradient(grid: Grid, values: np.ndarray) -> np.ndarray:
    """Gradient of center-sampled vector data (nx, ny, k), shape (nx, ny, k, 2)"""
    return np.stack(np.gradient(values, grid.h, axis=(0, 1)), axis=-1)


def _symmetric(gradient: np.ndarray) -> np.ndarray:
    return 0.5 * (gradient + np.swapaxes(gradient, -1, -2))


def check_admissible(grid: Grid, test_u: np.ndarray, test_v: np.ndarray, rigid: Tuple[np.ndarray, np.ndarray],
                     body: Optional[RigidState] = None, shape: Optional[BodyShape] = None):
    """
    Raises
    ------
    InadmissibleTestField
        - Test field is not discretely divergence free
        - Test field has a normal component on the walls
        - Test field is not rigid on a neighborhood of the body
    """

    scale = max(np.abs(test_u).max(initial=0.0), np.abs(test_v).max(initial=0.0), 1.0)
    if np.abs(divergence(grid, test_u, test_v)).max() > ADMISSIBILITY_TOLERANCE * scale / grid.h:
        raise(InadmissibleTestField("Test field is not divergence free"))
    if max(np.abs(test_u[[0, -1], :]).max(), np.abs(test_v[:, [0, -1]]).max()) > ADMISSIBILITY_TOLERANCE * scale:
        raise(InadmissibleTestField("Test field crosses the container walls"))
    if body is None:
        return

    state = RigidState(body.X, body.O, rigid[0], rigid[1], validate=False)
    reach = PENALIZATION_SMOOTHING_CELLS * grid.h
    near_u = geometry.signed_distance(shape, body.placement, grid.u_points()) <= reach
    near_v = geometry.signed_distance(shape, body.placement, grid.v_points()) <= reach
    rigid_u, rigid_v = rigid_face_velocity(grid, state)
    mismatch = max(np.abs(test_u - rigid_u)[near_u].max(initial=0.0), np.abs(test_v - rigid_v)[near_v].max(initial=0.0))
    if mismatch > ADMISSIBILITY_TOLERANCE * scale:
        raise(InadmissibleTestField(f"Test field departs from a rigid motion near the body by {mismatch:.3e}"))


def _centered(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.stack([0.5 * (u[1:, :] + u[:-1, :]), 0.5 * (v[:, 1:] + v[:, :-1])], axis=-1)


def weak_momentum_residual(runs: Union[Trajectory, Sequence[Trajectory]], testfields: Sequence) -> np.ndarray:
    """
    Defect of the weak momentum balance along stored snapshots

    For each test field phi, rigid near the body with translational part phi_V and rotational part phi_w,
    the defect at time tau is

        [int u.phi + m V.phi_V + J w.phi_w]_0^tau
        - int_0^tau (int u.d_t phi + u (x) u : grad phi - 2 eps D(u):D(phi) + m V.d_t phi_V + J w.d_t phi_w).

    The fluid integrals run over the whole grid, the fluid carried inside the penalized body region
    included, which is the system the penalized solver advances. An ensemble of runs is evaluated as the
    equal-weight atomic measure of its members; test fields follow the first member's body.

    Parameters
    ----------
    runs : Trajectory or Sequence[Trajectory]
        A run or an ensemble sharing grid and snapshot times
    testfields : Sequence
        Objects with ``faces(grid, body, shape) -> (u, v)`` and ``rigid_part(body) -> (V, w)``

    Returns
    -------
    np.ndarray
        Residuals of shape (len(testfields), number of snapshots)

    Raises
    ------
    InadmissibleTestField
        - A test field fails the divergence, wall or rigidity checks
    GridMismatch
        - Runs do not share grid or snapshot times
    """

    runs = as_ensemble(runs)
    reference = runs[0]
    grid = reference.grid
    times = reference.times
    area = grid.cell_area
    residuals = np.zeros((len(testfields), times.size))

    velocities = [[_centered(s.fluid.u, s.fluid.v) for s in run.snapshots] for run in runs]
    strains = [[_symmetric(centered_gradient(grid, c)) for c in member] for member in velocities]

    for index, testfield in enumerate(testfields):
        centers, rigid_V, rigid_w = [], [], []
        for snapshot in reference.snapshots:
            test_u, test_v = testfield.faces(grid, snapshot.body, snapshot.shape)
            rigid = testfield.rigid_part(snapshot.body)
            check_admissible(grid, test_u, test_v, rigid, snapshot.body, snapshot.shape)
            centers.append(_centered(test_u, test_v))
            rigid_V.append(rigid[0])
            rigid_w.append(rigid[1])
        centers = np.array(centers)
        rigid_V, rigid_w = np.array(rigid_V, dtype=float), np.array(rigid_w, dtype=float)
        if times.size > 1:
            rates = np.gradient(centers, times, axis=0)
            rate_V, rate_w = np.gradient(rigid_V, times, axis=0), np.gradient(rigid_w, times, axis=0)
        else:
            rates, rate_V, rate_w = np.zeros_like(centers), np.zeros_like(rigid_V), np.zeros_like(rigid_w)

        boundary = np.zeros(times.size)
        integrand = np.zeros(times.size)
        for member, (run, member_velocities, member_strains) in enumerate(zip(runs, velocities, strains)):
            for k, snapshot in enumerate(run.snapshots):
                u = member_velocities[k]
                gradient = centered_gradient(grid, centers[k])
                convective = np.einsum("ija,ijb,ijab->", u, u, gradient)
                viscous = np.einsum("ijab,ijab->", member_strains[k], _symmetric(gradient))
                boundary[k] += area * float(np.sum(u * centers[k]))
                integrand[k] += area * (float(np.sum(u * rates[k])) + convective - 2.0 * run.params.eps * viscous)
                if snapshot.has_body:
                    body = snapshot.body
                    J = rigid_dynamics.inertia_current(run.mass, body.O)
                    boundary[k] += run.mass.m * float(body.V @ rigid_V[k]) + float((J @ body.w) @ rigid_w[k])
                    integrand[k] += run.mass.m * float(body.V @ rate_V[k]) + float((J @ body.w) @ rate_w[k])
        boundary /= len(runs)
        integrand /= len(runs)

        accumulated = np.concatenate([[0.0], np.cumsum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(times))])
        residuals[index] = boundary - boundary[0] - accumulated

    return residuals


def weak_continuity_residual(runs: Union[Trajectory, Sequence[Trajectory]], scalar_tests: Sequence) -> np.ndarray:
    """
    Defect of the weak incompressibility with the rigid boundary flux,
    int_F u.grad(psi) - int_dB psi u_B.n, with n pointing into the body

    Parameters
    ----------
    runs : Trajectory or Sequence[Trajectory]
        A run or an ensemble
    scalar_tests : Sequence
        Objects with ``value(points)`` and ``gradient(points)`` on world points of shape (..., 3)

    Returns
    -------
    np.ndarray
        Residuals of shape (len(scalar_tests), number of snapshots)
    """

    runs = as_ensemble(runs)
    grid = runs[0].grid
    centers = grid.centers()
    residuals = np.zeros((len(scalar_tests), runs[0].times.size))

    for run in runs:
        for k, snapshot in enumerate(run.snapshots):
            u = _centered(snapshot.fluid.u, snapshot.fluid.v)
            weight = 1.0 - center_indicator(grid, snapshot.shape, snapshot.body)
            segments = geometry.boundary_polyline(snapshot.shape, snapshot.body.placement, grid.h) \
                if snapshot.has_body else None
            for index, test in enumerate(scalar_tests):
                gradient = test.gradient(centers)[..., :2]
                volume = grid.cell_area * float(np.sum(weight[..., None] * u * gradient))
                surface = 0.0
                if segments is not None and segments.starts.shape[0] > 0:
                    flux = np.sum(rigid_dynamics.rigid_velocity(snapshot.body, segments.midpoints) * segments.normals,
                                  axis=-1)
                    surface = float(segments.integrate(test.value(segments.midpoints) * flux))
                residuals[index, k] += (volume - surface) / len(runs)

    return residuals


def viscous_pairing(run: Trajectory, testfield) -> float:
    """eps int_0^T int D(u):D(phi) by the trapezoidal rule over the stored snapshots"""
    grid = run.grid
    values = []
    for snapshot in run.snapshots:
        test_u, test_v = testfield.faces(grid, snapshot.body, snapshot.shape)
        values.append(strain_inner(grid, (snapshot.fluid.u, snapshot.fluid.v), (test_u, test_v)))
    values = np.array(values)
    if values.size < 2:
        return 0.0
    return run.params.eps * float(np.sum(0.5 * (values[1:] + values[:-1]) * np.diff(run.times)))


def dissipation_norm(run: Trajectory) -> float:
    """sqrt(eps) ||D(u)||_{L2 L2}, read from the booked dissipation 2 eps int int |D(u)|^2"""
    if len(run.reports) == 0:
        return 0.0
    return float(np.sqrt(max(run.reports[-1].dissipation, 0.0) / 2.0))


def penalization_defect(state: CoupledState) -> float:
    """int chi_B |u - u_B|^2 on the faces"""
    if not state.has_body:
        return 0.0
    grid = state.grid
    chi_u, chi_v = face_indicator(grid, state.shape, state.body)
    rigid_u, rigid_v = rigid_face_velocity(grid, state.body)
    return grid.cell_area * float(np.sum(chi_u * (state.fluid.u - rigid_u) ** 2)
                                  + np.sum(chi_v * (state.fluid.v - rigid_v) ** 2))
