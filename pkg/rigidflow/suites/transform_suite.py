from typing import List, Optional
import numpy as np
from rigidflow.models.geometry import BodyShape, Container, Grid, Placement
from rigidflow.models.rigid import RigidState
from rigidflow.models.verification import CheckResult
from rigidflow.numerics import geometry, transform
from rigidflow.numerics.rigid_dynamics import BodyHistory
from rigidflow.utils.verification_util import run_checks


SUITE_LABEL = "transform"

UNIT_BOX = Container([0.0, 0.0], [1.0, 1.0])
LATTICE = 32
T_END = 0.1
DT = 0.01
RADIUS = 0.1
START = [0.5, 0.5]
V1, W1 = np.array([0.1, 0.05]), 0.5
PERTURBATIONS = [0.01, 0.02, 0.04, 0.08]
MAP_AMPLITUDE = 0.05


def _lattice(n: Optional[int] = LATTICE) -> Grid:
    return Grid.from_container(UNIT_BOX, n)


def _margins(lattice: Grid):
    return 3.0 * lattice.h, 0.15, lattice.h


def _history(V, w) -> BodyHistory:
    state = RigidState(START, None, V, [0.0, 0.0, w])
    return BodyHistory.uniform_motion(state, np.linspace(0.0, T_END, 11))


def _bundle(delta: float):
    lattice = _lattice()
    shape = BodyShape("disk", radius=RADIUS)
    first = _history(V1, W1)
    second = _history(V1 + delta * np.array([1.0, 0.5]), W1 + delta)
    bundle = transform.build_bundle(first, second, shape, lattice, _margins(lattice), T_END, DT)
    return bundle, shape, second


def _strong_velocity(points: np.ndarray) -> np.ndarray:
    x, y = points[..., 0], points[..., 1]
    return np.stack([np.sin(np.pi * x) * np.cos(np.pi * y), -np.cos(np.pi * x) * np.sin(np.pi * y)], axis=-1)


def _strong_pressure(points: np.ndarray) -> np.ndarray:
    return points[..., 0] ** 2 + points[..., 1]


def _forcing_series(bundle, shape: BodyShape):
    """Forcing of the transformed strong fields and the fluid nodes of the first body, per stored time"""
    series, masks = [], []
    for k in range(len(bundle)):
        Us, Ps = transform.transform_velocity(_strong_velocity, bundle, k, shape, _strong_pressure)
        series.append(transform.forcing(Us, Ps, bundle, k))
        placement = Placement(bundle.X1[k], bundle.O1[k])
        masks.append(geometry.signed_distance(shape, placement, bundle.nodes) > 0)
    return np.array(series), np.array(masks)


def check_identical_motions(fault: Optional[str] = None):
    bundle, shape, _ = _bundle(0.0)
    F, masks = _forcing_series(bundle, shape)
    return [("identical_composition", float(transform.composition_error(bundle).max()), 1e-5),
            ("identical_forcing", float(np.abs(F[masks]).max()), 1e-8)]


def check_distinct_motions(fault: Optional[str] = None):
    bundle, shape, second = _bundle(0.04)
    zone = 0.5 * _margins(bundle.lattice)[0]
    return [("distinct_composition", float(transform.composition_error(bundle).max()), 1e-5),
            ("volume_preservation", transform.volume_error(bundle), 1e-4),
            ("rigid_form", float(transform.rigid_form_error(bundle, shape, second, zone).max()), 1e-6),
            ("relative_rotation", transform.relative_rotation_error(bundle), 1e-3)]


def _analytic_map(nodes: np.ndarray):
    x, y = nodes[..., 0], nodes[..., 1]
    s = np.sin(np.pi * x) * np.sin(np.pi * y)
    c = np.cos(np.pi * x) * np.cos(np.pi * y)
    sx = np.pi * np.cos(np.pi * x) * np.sin(np.pi * y)
    sy = np.pi * np.sin(np.pi * x) * np.cos(np.pi * y)
    samples = nodes + MAP_AMPLITUDE * s[..., None]

    J = np.empty(nodes.shape[:-1] + (2, 2))
    J[..., :, 0] = MAP_AMPLITUDE * sx[..., None]
    J[..., :, 1] = MAP_AMPLITUDE * sy[..., None]
    J += np.eye(2)
    H = np.linalg.inv(J)
    second = MAP_AMPLITUDE * np.pi ** 2 * np.stack([np.stack([-s, c], axis=-1), np.stack([c, -s], axis=-1)], axis=-2)
    Gamma = (H[..., :, 0] + H[..., :, 1])[..., :, None, None] * second[..., None, :, :]
    return samples, H, Gamma


def check_metric_order(fault: Optional[str] = None):
    """Finite-difference metric terms against a closed-form map, interior nodes"""
    errors = []
    for n in (16, 32, 64):
        lattice = _lattice(n)
        nodes = lattice.nodes()[..., :2]
        samples, H, Gamma = _analytic_map(nodes)
        H_h, _, Gamma_h = transform.metric_terms(samples, lattice.h)
        interior = (slice(2, -2), slice(2, -2))
        errors.append((np.abs(H_h - H)[interior].max(), np.abs(Gamma_h - Gamma)[interior].max()))
    errors = np.array(errors)
    orders = np.log2(errors[:-1] / errors[1:])
    order = float(orders[-1].min())
    return "metric_order", order, 1.8, order >= 1.8


def check_forcing_ratio(fault: Optional[str] = None):
    ratios = []
    for delta in PERTURBATIONS:
        bundle, shape, _ = _bundle(delta)
        F, masks = _forcing_series(bundle, shape)
        ratios.append(transform.forcing_ratio(bundle, F, masks))
    ratios = np.array(ratios)
    spread = float(ratios.max() / ratios.min()) if ratios.min() > 0 else float("inf")
    return "forcing_ratio_stability", spread, 2.0


def check_rotation_uniqueness(fault: Optional[str] = None):
    history = _history(V1, W1)
    W = transform.angular_generator(history.times, history.O)
    zero = transform.rotation_uniqueness_ode(history.times, W)
    initial = 1e-3 * np.eye(3)
    norms = transform.rotation_uniqueness_ode(history.times, W, initial)
    envelope = transform.gronwall_envelope(history.times, W, float(np.linalg.norm(initial)))
    return [("rotation_uniqueness", float(zero.max()), 1e-10),
            ("rotation_envelope", float(np.maximum(norms - envelope * (1.0 + 1e-9), 0.0).max()), 0.0)]


CHECKS = [check_identical_motions, check_distinct_motions, check_metric_order, check_forcing_ratio,
          check_rotation_uniqueness]


def run(fault: Optional[str] = None) -> List[CheckResult]:
    return run_checks(SUITE_LABEL, CHECKS, fault)
