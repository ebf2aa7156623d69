import logging
from typing import Callable, Dict, Optional, Sequence, Tuple, Union
import numpy as np
from scipy.optimize import nnls
from rigidflow.exceptions import ConfigInvalid, GridMismatch, InvariantViolation
from rigidflow.models.fluid import CoupledState
from rigidflow.models.geometry import BodyShape, Grid
from rigidflow.models.measure import AtomicYoungMeasure
from rigidflow.models.rigid import MassProperties, RigidState
from rigidflow.models.trajectory import Trajectory
from rigidflow.models.transform import TransformBundle
from rigidflow.numerics import fluid_solver, geometry, rigid_dynamics, transform, young_measure
from rigidflow.numerics.rigid_dynamics import BodyHistory, skew


ENERGY_SLACK_FRACTION = 0.01
EXPANSION_TOLERANCE = 1e-10
BODY_ENERGY_TOLERANCE = 1e-6


def _cumulative(times: np.ndarray, values: np.ndarray) -> np.ndarray:
    """int_0^t values by the trapezoidal rule, zero at the first time"""
    values = np.asarray(values, dtype=float)
    if times.size < 2:
        return np.zeros_like(values)
    return np.concatenate([[0.0], np.cumsum(0.5 * (values[1:] + values[:-1]) * np.diff(times))])


def _time_derivative(times: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Second-order differences along the time axis, one-sided at both ends"""
    if times.size < 2:
        return np.zeros_like(values)
    return np.gradient(values, times, axis=0, edge_order=2 if times.size > 2 else 1)


def second_moment(J: np.ndarray) -> np.ndarray:
    """int rho r r^T recovered from the inertia tensor J = tr(S) I - S"""
    return 0.5 * np.trace(J) * np.eye(3) - J


def _quadratic(K: np.ndarray, S: np.ndarray) -> float:
    """int rho r^T K r for a body with second moment S"""
    return float(np.trace(K @ S))


def node_weights(lattice: Grid) -> np.ndarray:
    """Trapezoidal quadrature weights of the lattice nodes"""
    wx = np.full(lattice.nx + 1, lattice.h)
    wy = np.full(lattice.ny + 1, lattice.h)
    wx[[0, -1]] *= 0.5
    wy[[0, -1]] *= 0.5
    return np.outer(wx, wy)


def kinetic_energy(source: Union[CoupledState, AtomicYoungMeasure],
                   mp: Optional[MassProperties] = None) -> Tuple[float, float]:
    """
    Kinetic energies of the fluid and of the body

    Parameters
    ----------
    source : CoupledState or AtomicYoungMeasure
        A single state, or a measure whose fluid energy is int_F <Y, |u|^2/2>
    mp : MassProperties, optional
        Mass properties of the body, by default None (no body energy)

    Returns
    -------
    Tuple[float, float]
        E_fluid and E_body = m|V|^2/2 + J w.w/2
    """

    if isinstance(source, AtomicYoungMeasure):
        density = young_measure.moment(source, young_measure.kinetic_density)
        E_fluid = source.grid.cell_area * float(density[~source.body_mask].sum())
        body = source.body
    else:
        E_fluid = fluid_solver.energy_split(source, mp)[0]
        body = source.body

    E_body = rigid_dynamics.body_kinetic_energy(mp, body) if body is not None and mp is not None else 0.0
    return E_fluid, E_body


def body_energy_consistency(shape: BodyShape, mp: MassProperties, state: RigidState,
                            tolerance: Optional[float] = BODY_ENERGY_TOLERANCE) -> float:
    """
    Relative gap between m|V|^2/2 + J w.w/2 and the quadrature of rho |u_B|^2 / 2 over the body

    Raises
    ------
    InvariantViolation
        - The gap exceeds the tolerance
    """

    closed = rigid_dynamics.body_kinetic_energy(mp, state)
    quadrature = rigid_dynamics.body_energy_quadrature(shape, state)
    gap = abs(closed - quadrature) / max(abs(closed), np.finfo(float).tiny)
    if closed > 0 and gap > tolerance:
        raise(InvariantViolation(f"Body energy closed form and quadrature differ by {gap:.3e}"))
    return gap if closed > 0 else abs(quadrature)


def energy_inequality_residual(trajectory: Trajectory, eps: Optional[float] = None,
                               tolerance: Optional[float] = None) -> Dict[str, np.ndarray]:
    """
    Residual r(t) = E(t) + 2 eps int_0^t int |D(u)|^2 - E(0) of the penalized system's energy

    Parameters
    ----------
    trajectory : Trajectory
        A run with its per-step energy rows
    eps : float, optional
        Viscosity weighting the booked dissipation, by default the run's own
    tolerance : float, optional
        Accepted positive residual, by default 1% of E(0)

    Returns
    -------
    Dict[str, np.ndarray]
        t, residual, and the scalars tolerance and holds
    """

    times = trajectory.report_series("t")
    total = trajectory.report_series("E_fluid") + trajectory.report_series("E_body") \
        + trajectory.report_series("E_interior")
    dissipation = trajectory.report_series("dissipation")
    if eps is not None and trajectory.params.eps > 0:
        dissipation = dissipation * eps / trajectory.params.eps

    residual = total + dissipation - total[0] if total.size > 0 else total
    tolerance = ENERGY_SLACK_FRACTION * (total[0] if total.size > 0 else 0.0) if tolerance is None else tolerance
    holds = bool(residual.size == 0 or residual.max() <= tolerance)
    if not holds:
        logging.warning(f"Energy inequality residual {residual.max():.3e} exceeds the tolerance {tolerance:.3e}")
    return {"t": times, "residual": residual, "tolerance": float(tolerance), "holds": holds}


def decay_rate(trajectory: Trajectory) -> float:
    """Mean exponential decay rate -log(E(T) / E(0)) / T of the total energy of a run"""
    times = trajectory.report_series("t")
    total = trajectory.report_series("E_fluid") + trajectory.report_series("E_body") \
        + trajectory.report_series("E_interior")
    if total.size < 2 or not total[0] > 0:
        raise(ValueError("The decay rate needs a run with energy and at least one step"))
    return float(-np.log(total[-1] / total[0]) / (times[-1] - times[0]))


def relative_energy(first: Union[AtomicYoungMeasure, np.ndarray], Us: np.ndarray, grid: Optional[Grid] = None,
                    fluid_mask: Optional[np.ndarray] = None, mp: Optional[MassProperties] = None,
                    body: Optional[RigidState] = None, Vs: Optional[np.ndarray] = None,
                    ws: Optional[np.ndarray] = None) -> Dict[str, float]:
    """
    Relative energy between a measure (or a single field) and a transformed strong field

    E_rel = int_F <Y, |u - U^s|^2/2> + m|V1 - V^s|^2/2 + (w1 - w^s).J1 (w1 - w^s)/2, with the expansion
    E(Y) + E(U^s) - int_F <Y, u>.U^s - int_B rho u_1B.U^s_B checked alongside and the rigid part bounded
    below by min(m, lambda_min(J1)) (|dV|^2 + |dw|^2) / 2.

    Parameters
    ----------
    first : AtomicYoungMeasure or np.ndarray
        The measure, or a cell-centered velocity (nx, ny, 2)
    Us : np.ndarray
        Transformed strong velocity at the cell centers (nx, ny, 2)
    grid : Grid, optional
        Grid of a bare field, by default the measure's
    fluid_mask : np.ndarray, optional
        Fluid cells, by default the cells outside the measure's body
    mp : MassProperties, optional
        Mass properties, by default None (fluid only)
    body : RigidState, optional
        First body state, by default the measure's body
    Vs : np.ndarray, optional
        Transformed translational velocity, by default None
    ws : np.ndarray, optional
        Transformed angular velocity, by default None

    Returns
    -------
    Dict[str, float]
        E_rel, fluid, body, lower_bound and expansion_residual

    Raises
    ------
    GridMismatch
        - U^s does not match the grid
    InvariantViolation
        - The expansion or the rigid-part bound fails
    """

    if isinstance(first, AtomicYoungMeasure):
        grid = first.grid
        weights, atoms = first.weights, first.atoms
        fluid_mask = ~first.body_mask if fluid_mask is None else fluid_mask
        body = first.body if body is None else body
    else:
        if grid is None:
            raise(ValueError("A bare velocity field needs its grid"))
        weights, atoms = np.ones(1), np.asarray(first, dtype=float)[None]
        fluid_mask = np.ones(atoms.shape[1:3], dtype=bool) if fluid_mask is None else fluid_mask
    if np.shape(Us) != atoms.shape[1:]:
        raise(GridMismatch(f"Transformed field shape {np.shape(Us)} does not match the atoms"))

    area = grid.cell_area
    difference = atoms - Us[None]
    fluid = area * float(np.tensordot(weights, 0.5 * np.sum(difference * difference, axis=-1)[:, fluid_mask].sum(axis=1),
                                      axes=1))
    E_Y = area * float(np.tensordot(weights, 0.5 * np.sum(atoms * atoms, axis=-1)[:, fluid_mask].sum(axis=1), axes=1))
    E_U = area * 0.5 * float(np.sum(Us * Us, axis=-1)[fluid_mask].sum())
    barycenter = np.tensordot(weights, atoms, axes=1)
    cross = area * float(np.sum(barycenter * Us, axis=-1)[fluid_mask].sum())

    body_part, lower_bound = 0.0, 0.0
    if body is not None and mp is not None and Vs is not None and ws is not None:
        J1 = rigid_dynamics.inertia_current(mp, body.O)
        Vs, ws = np.asarray(Vs, dtype=float), np.asarray(ws, dtype=float)
        dV, dw = body.V - Vs, body.w - ws
        body_part = 0.5 * mp.m * float(dV @ dV) + 0.5 * float(dw @ J1 @ dw)
        E_Y += rigid_dynamics.body_kinetic_energy(mp, body)
        E_U += 0.5 * mp.m * float(Vs @ Vs) + 0.5 * float(ws @ J1 @ ws)
        cross += mp.m * float(body.V @ Vs) + float(body.w @ J1 @ ws)
        active = J1 if not mp.planar else J1[2:, 2:]
        c = 0.5 * min(mp.m, float(np.linalg.eigvalsh(active).min()))
        lower_bound = c * (float(dV @ dV) + float(dw @ dw))

    E_rel = fluid + body_part
    expansion_residual = abs(E_Y + E_U - cross - E_rel)
    scale = max(E_Y + E_U, np.finfo(float).tiny)
    if expansion_residual > EXPANSION_TOLERANCE * scale:
        raise(InvariantViolation(f"Relative energy expansion is off by {expansion_residual:.3e}"))
    if E_rel < lower_bound * (1.0 - 1e-12):
        raise(InvariantViolation(f"Relative energy {E_rel:.6e} is below its rigid-part bound {lower_bound:.6e}"))

    return {"E_rel": E_rel, "fluid": fluid, "body": body_part, "lower_bound": lower_bound,
            "expansion_residual": expansion_residual}


def gronwall_check(times: Sequence[float], E_rel: Sequence[float], D: Optional[Sequence[float]] = None,
                   slack: Optional[float] = 0.0) -> Tuple[float, float]:
    """
    Smallest C >= 0 with E_rel(t) + D(t) <= E_rel(0) exp(C t) + slack along the series

    When E_rel(0) vanishes no exponential rate can help, C is 0 and the violation is the excess of
    E_rel + D over the slack.

    Returns
    -------
    Tuple[float, float]
        The fitted C and the largest violation (zero when the bound holds)
    """

    times = np.asarray(times, dtype=float)
    E_rel = np.asarray(E_rel, dtype=float)
    D = np.zeros_like(E_rel) if D is None else np.asarray(D, dtype=float)
    if times.shape != E_rel.shape or D.shape != E_rel.shape:
        raise(GridMismatch("Relative energy and defect series must share the time grid"))

    excess = E_rel + D - slack
    E0 = E_rel[0]
    if E0 <= np.finfo(float).tiny:
        return 0.0, float(max(excess.max(initial=0.0), 0.0))

    elapsed = times - times[0]
    usable = (elapsed > 0) & (excess > E0)
    C = float(np.max(np.log(excess[usable] / E0) / elapsed[usable])) if np.any(usable) else 0.0
    violation = float(np.max(excess - E0 * np.exp(C * elapsed)))
    return C, max(violation, 0.0) if violation > 1e-12 * E0 else 0.0


def fit_refinement_slack(values: Sequence[float], dts: Sequence[float], hs: Sequence[float]) -> Tuple[float, float]:
    """Non-negative least-squares fit of values = a dt + b h^2"""
    A = np.column_stack([np.asarray(dts, dtype=float), np.asarray(hs, dtype=float) ** 2])
    coefficients, _ = nnls(A, np.asarray(values, dtype=float))
    return float(coefficients[0]), float(coefficients[1])


def _fluid_integral(f: Callable, t: float, shape: BodyShape, state: RigidState, grid: Grid,
                    quadrature: Optional[str] = "grid") -> float:
    centers = grid.centers()
    if quadrature == "fitted":
        body = geometry.body_nodes(shape, state.placement)
        return grid.cell_area * float(np.sum(f(t, centers))) - float(body.integrate(f(t, body.points)))
    fraction = geometry.quadrature_fraction(geometry.signed_distance(shape, state.placement, centers), grid.h)
    return grid.cell_area * float(np.sum((1.0 - fraction) * f(t, centers)))


def reynolds_check(f: Callable, history: BodyHistory, shape: BodyShape, grid: Grid,
                   df_dt: Optional[Callable] = None, delta: Optional[float] = None,
                   quadrature: Optional[str] = "grid") -> Dict[str, np.ndarray]:
    """
    Residual of d/dt int_F f = int_F d_t f + int_dB f u_B.n along a body history

    n points into the body. With the grid quadrature the boundary integral runs over the marched boundary
    polyline and the fluid integrals use the smooth cell fraction. With the fitted quadrature the fluid
    integrals are the cell sums over the container minus body-fitted quadratures over the body, and the
    boundary integral uses body-fitted boundary nodes.

    Parameters
    ----------
    f : Callable
        f(t, x) on world points (..., 3)
    history : BodyHistory
        Body motion
    shape : BodyShape
        Reference body
    grid : Grid
        Grid of the fluid integrals
    df_dt : Callable, optional
        Exact time derivative of f, by default centered differences
    delta : float, optional
        Time offset of the centered differences, by default half the smallest history step
    quadrature : str, optional
        grid or fitted, by default grid

    Returns
    -------
    Dict[str, np.ndarray]
        t (interior history times), residual, and the scalar scale of the terms

    Raises
    ------
    ConfigInvalid
        - Unknown quadrature
    """

    if quadrature not in ("grid", "fitted"):
        raise(ConfigInvalid(f"Unknown quadrature \"{quadrature}\", expected grid or fitted"))

    times = history.times
    if times.size < 3:
        raise(ValueError("The Reynolds check needs at least three stored times"))
    delta = 0.5 * float(np.diff(times).min()) if delta is None else delta

    def rate(s, x):
        return df_dt(s, x) if df_dt is not None else (f(s + delta, x) - f(s - delta, x)) / (2.0 * delta)

    residuals, scale = [], 0.0
    for t in times[1:-1]:
        state = history.at(t)
        lhs = (_fluid_integral(f, t + delta, shape, history.at(t + delta), grid, quadrature)
               - _fluid_integral(f, t - delta, shape, history.at(t - delta), grid, quadrature)) / (2.0 * delta)

        volume = _fluid_integral(rate, t, shape, state, grid, quadrature)

        if quadrature == "fitted":
            boundary = geometry.boundary_nodes(shape, state.placement)
            points, normals = boundary.points, boundary.normals
        else:
            boundary = geometry.boundary_polyline(shape, state.placement, grid.h)
            points, normals = boundary.midpoints, boundary.normals
        flux = np.sum(rigid_dynamics.rigid_velocity(state, points) * normals, axis=-1)
        surface = float(boundary.integrate(f(t, points) * flux))

        residuals.append(lhs - volume - surface)
        scale = max(scale, abs(lhs), abs(volume), abs(surface))

    return {"t": times[1:-1], "residual": np.array(residuals), "scale": scale}


def body_transport_residual(history: BodyHistory, shape: BodyShape, scalar_test,
                            delta: Optional[float] = None) -> Dict[str, np.ndarray]:
    """
    Residual of the weak transport of the body indicator, d/dt int_B psi - int_B u_B.grad(psi)

    Parameters
    ----------
    history : BodyHistory
        Body motion
    shape : BodyShape
        Reference body
    scalar_test : object
        Test with ``value(points)`` and ``gradient(points)`` on world points (..., 3)
    delta : float, optional
        Time offset of the centered differences, by default half the smallest history step

    Returns
    -------
    Dict[str, np.ndarray]
        t (interior history times) and residual
    """

    times = history.times
    if times.size < 3:
        raise(ValueError("The transport check needs at least three stored times"))
    delta = 0.5 * float(np.diff(times).min()) if delta is None else delta

    def content(t):
        return float(rigid_dynamics.body_integral(shape, lambda y, x: scalar_test.value(x), history.at(t).placement,
                                                  frame="world", with_density=False)[0])

    residuals = []
    for t in times[1:-1]:
        state = history.at(t)

        def advection(y, x):
            return np.sum(rigid_dynamics.rigid_velocity(state, x) * scalar_test.gradient(x), axis=-1)

        transport = float(rigid_dynamics.body_integral(shape, advection, state.placement, frame="world",
                                                       with_density=False)[0])
        residuals.append((content(t + delta) - content(t - delta)) / (2.0 * delta) - transport)

    return {"t": times[1:-1], "residual": np.array(residuals)}


def boundary_pressure_load(shape: BodyShape, state: RigidState, pressure: Callable, t: float,
                           h: float) -> Tuple[np.ndarray, np.ndarray]:
    """Force int_dB P n and torque int_dB (x - X) x P n with n pointing into the body"""
    segments = geometry.boundary_polyline(shape, state.placement, h)
    values = pressure(t, segments.midpoints)
    force = segments.integrate(values[:, None] * segments.normals)
    torque = segments.integrate(np.cross(segments.midpoints - state.X, values[:, None] * segments.normals))
    return force, torque


def transformed_body_velocities(shape: BodyShape, mp: MassProperties, first: BodyHistory, times: Sequence[float],
                                pressure: Callable, Vs0, ws0, h: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Integrates the transformed body equations driven by the pressure load on the first body

    Returns
    -------
    Tuple[np.ndarray, np.ndarray]
        V^s and w^s at every time, shape (T, 3)
    """

    times = np.asarray(times, dtype=float)
    Vs, ws = [np.asarray(Vs0, dtype=float)], [np.asarray(ws0, dtype=float)]
    for k in range(times.size - 1):
        t, dt = times[k], times[k + 1] - times[k]
        state = first.at(t + 0.5 * dt)
        force, torque = boundary_pressure_load(shape, state, pressure, t + 0.5 * dt, h)
        J1 = rigid_dynamics.inertia_current(mp, state.O)
        V_next, w_next = rigid_dynamics.step_transformed_rigid(Vs[-1], ws[-1], state.w, mp, force, torque, dt, J1)
        Vs.append(V_next)
        ws.append(w_next)
    return np.array(Vs), np.array(ws)


def pressure_work_identity_check(shape: BodyShape, mp: MassProperties, first: BodyHistory, times: Sequence[float],
                                 Vs: np.ndarray, ws: np.ndarray, pressure: Callable,
                                 h: float) -> Dict[str, Union[float, np.ndarray]]:
    """
    Both sides of the rigid-body pressure-work identity

    Left: -int_0^t int_B rho (U^s_B.grad U^s_B.u_1B + u_1B.d_t U^s_B), with the material derivative of
    U^s_B taken as dV^s/dt + dw^s/dt x r + w^s x (w^s x r). Right: -int_0^t int_dB (u_1B.n) P^s
    + int_0^t m ((w^s - w1) x V^s).V1 + int_0^t ((w^s - w1) x J1 w^s).w1. The full material derivative
    carries the extra transport term w^s x (V^s - V1); the residual including it is reported as well.

    Parameters
    ----------
    shape : BodyShape
        Reference body
    mp : MassProperties
        Mass properties
    first : BodyHistory
        Motion of the first body
    times : Sequence[float]
        Sample times
    Vs : np.ndarray
        Transformed translational velocities (T, 3)
    ws : np.ndarray
        Transformed angular velocities (T, 3)
    pressure : Callable
        P^s(t, x) on world points (..., 3)
    h : float
        Spacing of the boundary polyline

    Returns
    -------
    Dict[str, Union[float, np.ndarray]]
        t, lhs, rhs (cumulative), residual, residual_with_transport and scale
    """

    times = np.asarray(times, dtype=float)
    Vs, ws = np.asarray(Vs, dtype=float), np.asarray(ws, dtype=float)
    if Vs.shape != (times.size, 3) or ws.shape != (times.size, 3):
        raise(GridMismatch("Transformed velocities need one row per time"))
    dVs, dws = _time_derivative(times, Vs), _time_derivative(times, ws)

    volume, transport, surface = [], [], []
    for k, t in enumerate(times):
        state = first.at(t)
        J1 = rigid_dynamics.inertia_current(mp, state.O)
        S = second_moment(J1)
        A1, Ws = skew(state.w), skew(ws[k])

        acceleration = mp.m * float(state.V @ dVs[k]) + _quadratic(A1.T @ skew(dws[k]), S) \
            + _quadratic(A1.T @ Ws @ Ws, S)
        volume.append(-acceleration)
        transport.append(-mp.m * float(state.V @ np.cross(ws[k], Vs[k] - state.V)))

        segments = geometry.boundary_polyline(shape, state.placement, h)
        normal_velocity = np.sum(rigid_dynamics.rigid_velocity(state, segments.midpoints) * segments.normals, axis=-1)
        relative = ws[k] - state.w
        surface.append(-float(segments.integrate(normal_velocity * pressure(t, segments.midpoints)))
                       + mp.m * float(np.cross(relative, Vs[k]) @ state.V)
                       + float(np.cross(relative, J1 @ ws[k]) @ state.w))

    lhs = _cumulative(times, np.array(volume))
    with_transport = _cumulative(times, np.array(volume) + np.array(transport))
    rhs = _cumulative(times, np.array(surface))
    scale = max(float(np.abs(lhs).max(initial=0.0)), float(np.abs(rhs).max(initial=0.0)), np.finfo(float).tiny)
    return {
        "t": times,
        "lhs": lhs,
        "rhs": rhs,
        "residual": float(np.abs(lhs - rhs).max(initial=0.0)),
        "residual_with_transport": float(np.abs(with_transport - rhs).max(initial=0.0)),
        "scale": scale,
    }


def _body_terms(bundle: TransformBundle, mp: MassProperties, k: int) -> dict:
    O1 = bundle.O1[k] if bundle.O1 is not None else np.eye(3)
    J1 = rigid_dynamics.inertia_current(mp, O1)
    V1, w1, Vs, ws = bundle.V1[k], bundle.w1[k], bundle.Vs[k], bundle.ws[k]
    dV, dw = Vs - V1, ws - w1
    M = np.outer(dw, ws) - float(ws @ dw) * np.eye(3)
    return {"J1": J1, "S": second_moment(J1), "V1": V1, "w1": w1, "Vs": Vs, "ws": ws, "dV": dV, "dw": dw, "M": M}


def weak_strong_energy_equality_check(bundle: TransformBundle, Us: np.ndarray, ubar: np.ndarray, F: np.ndarray,
                                      fluid_masks: np.ndarray, mp: MassProperties) -> Dict[str, np.ndarray]:
    """
    Defect of the energy equality of the transformed strong solution

    E(U^s)(t) + int_0^t int_F (U^s - <Y, u>).grad U^s.U^s + int_0^t int_B rho (U^s_B - u_1B).grad U^s_B.U^s_B
        = int_0^t int_F F.U^s - int_0^t ((w^s - w1) x J1 w^s).w^s + m ((w^s - w1) x V^s).V^s + E(U^s)(0)

    Fluid integrals use trapezoidal node weights over the fluid nodes, body integrals the closed forms
    of the mass properties.

    Parameters
    ----------
    bundle : TransformBundle
        The change of coordinates
    Us : np.ndarray
        Transformed velocity on the lattice nodes (T, nx+1, ny+1, 2)
    ubar : np.ndarray
        Barycenter of the first solution on the lattice nodes (T, nx+1, ny+1, 2)
    F : np.ndarray
        Forcing on the lattice nodes (T, nx+1, ny+1, 2)
    fluid_masks : np.ndarray
        Fluid nodes of the first solution (T, nx+1, ny+1)
    mp : MassProperties
        Mass properties

    Returns
    -------
    Dict[str, np.ndarray]
        t, residual, energy and the scalar scale
    """

    times = bundle.times
    if Us.shape[0] != times.size or ubar.shape != Us.shape or F.shape != Us.shape:
        raise(GridMismatch("Transformed fields need one sample per bundle time"))
    weights = node_weights(bundle.lattice)
    h = bundle.lattice.h

    energy, convective, power = [], [], []
    for k in range(times.size):
        wm = weights * fluid_masks[k]
        b = _body_terms(bundle, mp, k)
        gradient = transform.jacobian_samples(Us[k], h)
        energy.append(0.5 * float(np.sum(wm * np.sum(Us[k] * Us[k], axis=-1)))
                      + 0.5 * mp.m * float(b["Vs"] @ b["Vs"]) + 0.5 * float(b["ws"] @ b["J1"] @ b["ws"]))
        fluid_convective = float(np.sum(wm * np.einsum("...j,...ij,...i->...", Us[k] - ubar[k], gradient, Us[k])))
        body_convective = mp.m * float(np.cross(b["ws"], b["dV"]) @ b["Vs"]) + _quadratic(b["M"].T @ skew(b["ws"]), b["S"])
        convective.append(fluid_convective + body_convective)
        coupling = float(np.cross(b["dw"], b["J1"] @ b["ws"]) @ b["ws"]) \
            + mp.m * float(np.cross(b["dw"], b["Vs"]) @ b["Vs"])
        power.append(float(np.sum(wm * np.sum(F[k] * Us[k], axis=-1))) - coupling)

    energy = np.array(energy)
    residual = energy + _cumulative(times, np.array(convective)) - _cumulative(times, np.array(power)) - energy[0]
    return {"t": times, "residual": residual, "energy": energy, "scale": float(max(energy[0], np.finfo(float).tiny))}


def transformed_weak_residual(bundle: TransformBundle, Us: np.ndarray, ubar: np.ndarray, F: np.ndarray,
                              fluid_masks: np.ndarray, mp: MassProperties, shape: BodyShape,
                              testfields: Sequence) -> np.ndarray:
    """
    Defect of the weak formulation of the transformed strong solution against test fields

    For a test field phi, rigid on the first body with parts (phi_V, phi_w), the defect at time t is

        [int_F U^s.phi + int_B rho U^s_B.phi_B]_0^t - int_0^t (int_F F.phi - coupling + int U^s.d_t phi
        + int_F ((<Y, u> (x) U^s) : grad phi - (U^s - <Y, u>).grad U^s.phi)
        + int_B rho ((u_1B (x) U^s_B) : grad phi_B - (U^s_B - u_1B).grad U^s_B.phi_B))

    with coupling = ((w^s - w1) x J1 w^s).phi_w + m ((w^s - w1) x V^s).phi_V.

    Parameters
    ----------
    testfields : Sequence
        Objects with ``velocity(points, body, shape)`` (planar values) and ``rigid_part(body) -> (V, w)``

    Returns
    -------
    np.ndarray
        Residuals of shape (len(testfields), number of bundle times)
    """

    times = bundle.times
    weights = node_weights(bundle.lattice)
    h = bundle.lattice.h
    nodes = bundle.nodes
    bodies = []
    for k in range(times.size):
        O1 = bundle.O1[k] if bundle.O1 is not None else np.eye(3)
        bodies.append(RigidState(bundle.X1[k], O1, bundle.V1[k], bundle.w1[k], validate=False))

    residuals = np.zeros((len(testfields), times.size))
    for index, testfield in enumerate(testfields):
        phi = np.array([testfield.velocity(nodes, body, shape) for body in bodies])
        parts = [testfield.rigid_part(body) for body in bodies]
        phi_V = np.array([np.asarray(p[0], dtype=float) for p in parts])
        phi_w = np.array([np.asarray(p[1], dtype=float) for p in parts])
        rate, rate_V, rate_w = _time_derivative(times, phi), _time_derivative(times, phi_V), _time_derivative(times, phi_w)

        content, integrand = [], []
        for k in range(times.size):
            wm = weights * fluid_masks[k]
            b = _body_terms(bundle, mp, k)
            Pw = skew(phi_w[k])
            content.append(float(np.sum(wm * np.sum(Us[k] * phi[k], axis=-1)))
                           + mp.m * float(b["Vs"] @ phi_V[k]) + float(b["ws"] @ b["J1"] @ phi_w[k]))

            test_gradient = transform.jacobian_samples(phi[k], h)
            velocity_gradient = transform.jacobian_samples(Us[k], h)
            fluid_q = np.einsum("...i,...j,...ij->...", ubar[k], Us[k], test_gradient) \
                - np.einsum("...j,...ij,...i->...", Us[k] - ubar[k], velocity_gradient, phi[k])
            body_q = mp.m * float(b["V1"] @ np.cross(phi_w[k], b["Vs"])) \
                + _quadratic(skew(b["w1"]).T @ Pw @ skew(b["ws"]), b["S"]) \
                - mp.m * float(np.cross(b["ws"], b["dV"]) @ phi_V[k]) - _quadratic(b["M"].T @ Pw, b["S"])
            transport = float(np.sum(wm * np.sum(Us[k] * rate[k], axis=-1))) \
                + mp.m * float(b["Vs"] @ (rate_V[k] - np.cross(phi_w[k], b["V1"]))) \
                + float(b["ws"] @ b["J1"] @ rate_w[k])
            coupling = float(np.cross(b["dw"], b["J1"] @ b["ws"]) @ phi_w[k]) \
                + mp.m * float(np.cross(b["dw"], b["Vs"]) @ phi_V[k])
            forcing = float(np.sum(wm * np.sum(F[k] * phi[k], axis=-1)))
            integrand.append(forcing - coupling + transport + float(np.sum(wm * fluid_q)) + body_q)

        content = np.array(content)
        residuals[index] = content - content[0] - _cumulative(times, np.array(integrand))

    return residuals
