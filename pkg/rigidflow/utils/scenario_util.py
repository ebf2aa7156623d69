import logging
from typing import List, Optional, Tuple
import numpy as np
from rigidflow.exceptions import ConfigInvalid
from rigidflow.models.fluid import CoupledState, StaggeredField
from rigidflow.models.geometry import BodyShape, Container, Grid, as_point3, rotation_about_z
from rigidflow.models.rigid import MassProperties, RigidState
from rigidflow.models.scenario import Scenario
from rigidflow.models.trajectory import Trajectory
from rigidflow.numerics import fluid_solver, geometry, rigid_dynamics, transform


CUTOFF_INNER_CELLS = 3.0
CUTOFF_OUTER_CELLS = 1.0


def _unit_coordinates(container: Container, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    points = as_point3(points)
    return (points[..., 0] - container.lower[0]) / container.lengths[0], \
        (points[..., 1] - container.lower[1]) / container.lengths[1]


def faces_from_stream(grid: Grid, psi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Face velocities u = d_y psi, v = -d_x psi from a stream function sampled on the grid nodes

    The result is discretely divergence free, and has no normal component on the walls when psi is
    constant along them.
    """

    u = (psi[:, 1:] - psi[:, :-1]) / grid.h
    v = -(psi[1:, :] - psi[:-1, :]) / grid.h
    return u, v


def _quiescent(grid: Grid, options: dict, rng: np.random.Generator) -> StaggeredField:
    return StaggeredField(grid)


def _taylor_green(grid: Grid, options: dict, rng: np.random.Generator) -> StaggeredField:
    amplitude = float(options.get("amplitude", 1.0))
    modes = int(options.get("modes", 1))
    s, t = _unit_coordinates(grid.container, grid.nodes())
    scale = grid.container.lengths.min() / (np.pi * modes)
    psi = amplitude * scale * np.sin(np.pi * modes * s) * np.sin(np.pi * modes * t)
    return StaggeredField(grid, *faces_from_stream(grid, psi))


def _shear(grid: Grid, options: dict, rng: np.random.Generator) -> StaggeredField:
    amplitude = float(options.get("amplitude", 1.0))
    width = float(options.get("width", 0.05 * grid.container.lengths.min()))
    perturbation = float(options.get("perturbation", 0.05))
    center = grid.container.center[1]
    phase = rng.uniform(0.0, 2.0 * np.pi)

    u = amplitude * np.tanh((grid.u_points()[..., 1] - center) / width)
    s, _ = _unit_coordinates(grid.container, grid.v_points())
    v = perturbation * amplitude * np.sin(2.0 * np.pi * s + phase)
    return StaggeredField(grid, u, v)


def _vortex_pair(grid: Grid, options: dict, rng: np.random.Generator) -> StaggeredField:
    lengths = grid.container.lengths
    amplitude = float(options.get("amplitude", 1.0))
    width = float(options.get("width", 0.05 * lengths.min()))
    separation = float(options.get("separation", 4.0 * width))
    default_center = grid.container.center[:2] - np.array([0.0, 0.25 * lengths[1]])
    center = np.asarray(options.get("center", default_center), dtype=float)

    nodes = grid.nodes()[..., :2]
    psi = np.zeros(nodes.shape[:-1])
    for sign, offset in ((1.0, -0.5 * separation), (-1.0, 0.5 * separation)):
        r2 = np.sum((nodes - center - np.array([offset, 0.0])) ** 2, axis=-1)
        psi += sign * amplitude * width * np.exp(-0.5 * r2 / width ** 2)
    return StaggeredField(grid, *faces_from_stream(grid, psi))


PRESETS = {
    "quiescent": _quiescent,
    "taylor_green": _taylor_green,
    "shear": _shear,
    "vortex_pair": _vortex_pair,
}


def preset_field(grid: Grid, preset: str, options: Optional[dict] = None, seed: Optional[int] = 0) -> StaggeredField:
    """
    Raw initial fluid field of a named preset, before the compatibility projection

    Raises
    ------
    ConfigInvalid
        - Unknown preset
    """

    if preset not in PRESETS:
        raise(ConfigInvalid(f"Unknown fluid preset \"{preset}\", expected one of {', '.join(PRESETS)}"))
    return PRESETS[preset](grid, options if options is not None else {}, np.random.default_rng(seed))


def anchored_shape(shape: BodyShape) -> Tuple[BodyShape, MassProperties]:
    """Copy of the shape anchored at its reference center of mass, with its mass properties"""
    mp = rigid_dynamics.mass_properties(shape)
    shape_dict = BodyShape.to_dict(shape)
    shape_dict["anchor"] = mp.X0.tolist()
    return BodyShape.from_dict(shape_dict), mp


def initial_state(scenario: Scenario) -> Tuple[CoupledState, Optional[MassProperties]]:
    """
    Compatible initial state of a scenario

    The preset field is projected so it is discretely divergence free, has no normal component on the
    walls and matches the rigid field on the body faces.

    Parameters
    ----------
    scenario : Scenario
        The scenario

    Returns
    -------
    Tuple[CoupledState, Optional[MassProperties]]
        Initial state and the body mass properties (None for body-free runs)

    Raises
    ------
    ConfigInvalid
        - The body touches or crosses a wall
    """

    grid = Grid.from_container(scenario.container, scenario.resolution)
    field = preset_field(grid, scenario.preset, scenario.fluid_options, scenario.seed)

    body, shape, mp = None, None, None
    if scenario.has_body:
        shape, mp = anchored_shape(scenario.shape)
        body = RigidState(scenario.position, rotation_about_z(scenario.angle), scenario.velocity,
                          [0.0, 0.0, scenario.angular_velocity])
        if geometry.boundary_gap(body.placement, shape, scenario.container) <= 0:
            raise(ConfigInvalid("The initial body touches or crosses the container walls"))

    params = scenario.params
    field = fluid_solver.compatibility_projection(field, body, shape, params.poisson_tolerance,
                                                  params.poisson_max_iterations)
    logging.debug(f"Initial state of \"{scenario.name}\": {grid.nx}x{grid.ny} cells, "
                  f"max speed {field.max_speed():.6g}")
    return CoupledState(field, body, 0.0, shape), mp


def run_scenario(scenario: Scenario) -> Trajectory:
    state, mp = initial_state(scenario)
    return fluid_solver.run(state, scenario.params, mp)


def _cutoff(grid: Grid, shape: BodyShape, body: RigidState, ramp: float) -> transform.CutoffField:
    return transform.build_cutoff(body.placement, shape, grid.container, CUTOFF_INNER_CELLS * grid.h, ramp,
                                  CUTOFF_OUTER_CELLS * grid.h)


def _bump(z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """z^2 (1 - z)^2 and its derivative"""
    return z ** 2 * (1.0 - z) ** 2, 2.0 * z * (1.0 - z) * (1.0 - 2.0 * z)


def _linear(z: np.ndarray, odd: bool) -> Tuple[np.ndarray, np.ndarray]:
    if odd:
        return 2.0 * z - 1.0, np.full_like(z, 2.0)
    return np.ones_like(z), np.zeros_like(z)


class PolynomialTestField():
    """
    Solenoidal field with stream function (1 - zeta) q(s) q(t) p(s, t), q(s) = s^2 (1 - s)^2 in unit
    container coordinates, vanishing with its gradient on the walls and near the body

    The cutoff zeta is sized on the grid the field is built for; ``faces`` samples the stream function on
    the nodes of the grid it receives.
    """

    def __init__(self, grid: Grid, sx: int, sy: int, ramp: Optional[float] = None,
                 amplitude: Optional[float] = 64.0):
        self.grid = grid
        self.sx = int(sx)
        self.sy = int(sy)
        self.ramp = ramp
        self.amplitude = float(amplitude)
        self.name = f"polynomial_{self.sx}{self.sy}"

    def _stream(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        container = self.grid.container
        s, t = _unit_coordinates(container, points)
        qs, dqs = _bump(s)
        qt, dqt = _bump(t)
        ps, dps = _linear(s, self.sx)
        pt, dpt = _linear(t, self.sy)

        scale = self.amplitude * container.lengths.min()
        value = scale * qs * qt * ps * pt
        gradient = np.stack([scale * (dqs * ps + qs * dps) * qt * pt / container.lengths[0],
                             scale * qs * ps * (dqt * pt + qt * dpt) / container.lengths[1],
                             np.zeros_like(s)], axis=-1)
        return value, gradient

    def stream(self, points: np.ndarray, body: Optional[RigidState],
               shape: Optional[BodyShape]) -> Tuple[np.ndarray, np.ndarray]:
        """Stream function and its gradient at world points"""
        value, gradient = self._stream(points)
        if body is None or self.ramp is None:
            return value, gradient
        cutoff = _cutoff(self.grid, shape, body, self.ramp)
        zeta = transform.cutoff_value(cutoff, points)
        return (1.0 - zeta) * value, (1.0 - zeta)[..., None] * gradient \
            - value[..., None] * transform.cutoff_gradient(cutoff, points)

    def faces(self, grid: Grid, body: Optional[RigidState], shape: Optional[BodyShape]) -> Tuple[np.ndarray, np.ndarray]:
        psi, _ = self.stream(grid.nodes(), body, shape)
        return faces_from_stream(grid, psi)

    def velocity(self, points: np.ndarray, body: Optional[RigidState], shape: Optional[BodyShape]) -> np.ndarray:
        _, gradient = self.stream(as_point3(points), body, shape)
        return np.stack([gradient[..., 1], -gradient[..., 0]], axis=-1)

    def rigid_part(self, body: Optional[RigidState]) -> Tuple[np.ndarray, np.ndarray]:
        return np.zeros(3), np.zeros(3)


class RigidTestField():
    """
    Field equal to a fixed rigid motion of the body near it and zero near the walls, stream function
    zeta psi_rigid built on the body cutoff
    """

    def __init__(self, grid: Grid, V: Tuple[float, float], w: float, ramp: float, name: Optional[str] = None):
        self.grid = grid
        self.V = as_point3(V)
        self.w = np.array([0.0, 0.0, float(w)])
        self.ramp = float(ramp)
        self.name = name if name is not None else f"rigid_{V[0]:g}_{V[1]:g}_{w:g}"

    def _state(self, body: RigidState) -> RigidState:
        return RigidState(body.X, body.O, self.V, self.w, validate=False)

    def faces(self, grid: Grid, body: Optional[RigidState], shape: Optional[BodyShape]) -> Tuple[np.ndarray, np.ndarray]:
        if body is None:
            return np.zeros(grid.shape_u), np.zeros(grid.shape_v)
        nodes = grid.nodes()
        cutoff = _cutoff(self.grid, shape, body, self.ramp)
        psi = transform.cutoff_value(cutoff, nodes) * transform.rigid_stream_function(self._state(body), nodes)
        return faces_from_stream(grid, psi)

    def velocity(self, points: np.ndarray, body: Optional[RigidState], shape: Optional[BodyShape]) -> np.ndarray:
        if body is None:
            return np.zeros(np.shape(points)[:-1] + (2,))
        cutoff = _cutoff(self.grid, shape, body, self.ramp)
        return transform.extend_rigid(self._state(body), cutoff, points)[..., :2]

    def rigid_part(self, body: Optional[RigidState]) -> Tuple[np.ndarray, np.ndarray]:
        if body is None:
            return np.zeros(3), np.zeros(3)
        return self.V.copy(), self.w.copy()


def testfield_ramp(grid: Grid, shape: Optional[BodyShape], body: Optional[RigidState]) -> Optional[float]:
    """Cutoff ramp width: half of what the initial wall gap leaves after the inner and outer zones"""
    if body is None:
        return None
    gap = geometry.boundary_gap(body.placement, shape, grid.container)
    room = gap - (CUTOFF_INNER_CELLS + CUTOFF_OUTER_CELLS) * grid.h
    return max(0.5 * room, grid.h)


def testfield_basis(grid: Grid, shape: Optional[BodyShape] = None, body: Optional[RigidState] = None) -> List:
    """
    Divergence-free test fields of the weak residuals

    Four polynomial fields vanishing near the walls and the body, and with a body four fields rigid near it:
    the two translations, the rotation and a combined motion.

    Parameters
    ----------
    grid : Grid
        The MAC grid
    shape : BodyShape, optional
        Reference body, by default None
    body : RigidState, optional
        Initial body state fixing the cutoff ramp, by default None

    Returns
    -------
    List
        Test fields with ``faces``, ``velocity`` and ``rigid_part``

    Raises
    ------
    MarginsOverlap
        - The cutoff zones do not fit between the initial body and the walls
    """

    ramp = testfield_ramp(grid, shape, body)
    fields = [PolynomialTestField(grid, sx, sy, ramp) for sx, sy in ((0, 0), (1, 0), (0, 1), (1, 1))]
    if body is not None:
        _cutoff(grid, shape, body, ramp)
        fields += [RigidTestField(grid, (1.0, 0.0), 0.0, ramp, "rigid_x"),
                   RigidTestField(grid, (0.0, 1.0), 0.0, ramp, "rigid_y"),
                   RigidTestField(grid, (0.0, 0.0), 1.0, ramp, "rigid_rotation"),
                   RigidTestField(grid, (1.0, 1.0), 1.0, ramp, "rigid_combined")]
    return fields


class ScalarTest():
    """
    Smooth scalar test function on world points, s and t being unit container coordinates
    """

    KINDS = ("s", "t", "st", "cosine")

    def __init__(self, container: Container, kind: str):
        if kind not in self.KINDS:
            raise(ConfigInvalid(f"Unknown scalar test \"{kind}\""))
        self.container = container
        self.kind = kind

    def value(self, points: np.ndarray) -> np.ndarray:
        s, t = _unit_coordinates(self.container, points)
        if self.kind == "s":
            return s
        if self.kind == "t":
            return t
        if self.kind == "st":
            return s * t
        return np.cos(np.pi * s) * np.cos(np.pi * t)

    def gradient(self, points: np.ndarray) -> np.ndarray:
        s, t = _unit_coordinates(self.container, points)
        Lx, Ly = self.container.lengths[0], self.container.lengths[1]
        if self.kind == "s":
            ds, dt = np.ones_like(s), np.zeros_like(t)
        elif self.kind == "t":
            ds, dt = np.zeros_like(s), np.ones_like(t)
        elif self.kind == "st":
            ds, dt = t, s
        else:
            ds = -np.pi * np.sin(np.pi * s) * np.cos(np.pi * t)
            dt = -np.pi * np.cos(np.pi * s) * np.sin(np.pi * t)
        return np.stack([ds / Lx, dt / Ly, np.zeros_like(s)], axis=-1)


def scalar_tests(container: Container) -> List[ScalarTest]:
    return [ScalarTest(container, kind) for kind in ScalarTest.KINDS]
