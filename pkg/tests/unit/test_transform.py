import pytest
import numpy as np
from rigidflow.exceptions import GridMismatch, MarginsOverlap, NodeEscapedDomain, SingularJacobian
from rigidflow.models.geometry import BodyShape, Container, Grid, Placement
from rigidflow.models.rigid import RigidState
from rigidflow.numerics import rigid_dynamics, transform
from rigidflow.numerics.rigid_dynamics import BodyHistory


MARGINS = (0.05, 0.15, 0.05)


@pytest.fixture
def lattice(unit_box: Container):
    return Grid.from_container(unit_box, 16)


@pytest.fixture
def history(body: RigidState):
    return BodyHistory.uniform_motion(body, np.linspace(0.0, 0.05, 6))


@pytest.fixture
def identical_bundle(history: BodyHistory, disk: BodyShape, lattice: Grid):
    return transform.build_bundle(history, history, disk, lattice, MARGINS, 0.05, 0.01)


def _shifted_history(delta: float) -> BodyHistory:
    state = RigidState([0.5, 0.5], V=[0.2 + delta, 0.1 + 0.5 * delta], w=[0.0, 0.0, 1.0 + delta])
    return BodyHistory.uniform_motion(state, np.linspace(0.0, 0.05, 6))


@pytest.fixture
def distinct_bundle(history: BodyHistory, disk: BodyShape, lattice: Grid):
    return transform.build_bundle(history, _shifted_history(0.04), disk, lattice, MARGINS, 0.05, 0.01)


def test_smooth_ramp():

    t = np.linspace(-0.5, 1.5, 81)
    ramp = transform.smooth_ramp(t)

    assert ramp[0] == 0.0 and ramp[-1] == 1.0
    assert transform.smooth_ramp(np.array(0.5)) == pytest.approx(0.5)
    assert np.all(np.diff(ramp) >= 0)
    assert np.all(transform.smooth_ramp_derivative(t[(t > 0) & (t < 1)]) > 0)
    assert transform.smooth_ramp_derivative(np.array(1.2)) == 0.0


def test_build_cutoff(unit_box: Container, disk: BodyShape):

    placement = Placement.planar([0.5, 0.5])
    cutoff = transform.build_cutoff(placement, disk, unit_box, *MARGINS)
    values = transform.cutoff_value(cutoff, [[0.5, 0.5], [0.62, 0.5], [0.95, 0.5]])

    assert cutoff.reach == pytest.approx(0.2)
    assert np.allclose(values, [1.0, 1.0, 0.0])

    with pytest.raises(MarginsOverlap):
        transform.build_cutoff(placement, disk, unit_box, 0.1, 0.25, 0.1)


def test_extend_rigid_is_rigid_near_the_body(unit_box: Container, disk: BodyShape, body: RigidState):

    cutoff = transform.build_cutoff(body.placement, disk, unit_box, *MARGINS)
    near = [[0.55, 0.5], [0.5, 0.64]]
    far = [[0.95, 0.95]]

    assert np.allclose(transform.extend_rigid(body, cutoff, near), rigid_dynamics.rigid_velocity(body, near))
    assert np.allclose(transform.extend_rigid(body, cutoff, far), 0.0)


def test_extend_rigid_is_divergence_free(unit_box: Container, disk: BodyShape, body: RigidState):

    cutoff = transform.build_cutoff(body.placement, disk, unit_box, *MARGINS)
    step = 1e-5
    points = np.array([[0.72, 0.5], [0.5, 0.3], [0.64, 0.64]])
    ex, ey = np.array([step, 0.0]), np.array([0.0, step])

    divergence = (transform.extend_rigid(body, cutoff, points + ex)[:, 0]
                  - transform.extend_rigid(body, cutoff, points - ex)[:, 0]
                  + transform.extend_rigid(body, cutoff, points + ey)[:, 1]
                  - transform.extend_rigid(body, cutoff, points - ey)[:, 1]) / (2.0 * step)

    assert np.abs(divergence).max() < 1e-6


def test_integrate_flow_contraction(lattice: Grid):

    flow = transform.integrate_flow(lambda t, x: -0.01 * (x - 0.5), lattice, 0.1, 0.03)
    nodes = lattice.nodes()[..., :2]

    assert len(flow) == 5
    assert flow.times[-1] == pytest.approx(0.1)
    assert np.allclose(flow.samples(0), nodes)
    assert np.allclose(flow.displacement[-1], (nodes - 0.5) * (np.exp(-0.001) - 1.0), atol=1e-14)


def test_integrate_flow_escape(lattice: Grid):

    with pytest.raises(NodeEscapedDomain):
        transform.integrate_flow(lambda t, x: np.zeros_like(x) + [1.0, 0.0], lattice, 0.5, 0.1)


def test_invert_flow(lattice: Grid):

    def swirl(t, x):
        s = np.sin(np.pi * x)
        return 0.05 * np.stack([s[..., 0] * np.cos(np.pi * x[..., 1]), -np.cos(np.pi * x[..., 0]) * s[..., 1]],
                               axis=-1)

    forward = transform.integrate_flow(swirl, lattice, 0.2, 0.05)
    inverse = transform.invert_flow(forward, swirl)
    nodes = forward.nodes

    mapped = transform.MapInterpolant(lattice, forward.displacement[-1]).value(inverse.samples(-1))

    assert inverse.kind == "inverse"
    assert np.abs(mapped - nodes).max() < 1e-10


def test_metric_terms_of_the_identity(lattice: Grid):

    H, G, Gamma = transform.metric_terms(lattice.nodes()[..., :2], lattice.h)

    assert np.allclose(H, np.eye(2))
    assert np.allclose(G, np.eye(2))
    assert np.abs(Gamma).max() < 1e-10

    with pytest.raises(SingularJacobian):
        transform.metric_terms(np.zeros((lattice.nx + 1, lattice.ny + 1, 2)), lattice.h)


def test_identical_motions_give_the_identity(identical_bundle, disk: BodyShape, history: BodyHistory):

    bundle = identical_bundle

    assert len(bundle) == 6
    assert np.abs(bundle.tilde_z2 - bundle.nodes).max() < 1e-10
    assert np.allclose(bundle.tilde_O, np.eye(3))
    assert np.allclose(bundle.Vs, bundle.V1) and np.allclose(bundle.ws, bundle.w1)
    assert transform.composition_error(bundle).max() < 1e-8
    assert transform.volume_error(bundle) < 1e-8
    assert transform.relative_rotation_error(bundle) < 1e-12
    assert transform.rigid_form_error(bundle, disk, history, 0.05).max() < 1e-10


def test_identical_motions_have_no_forcing(identical_bundle, disk: BodyShape):

    def velocity(points):
        return np.stack([np.sin(np.pi * points[..., 0]), -np.pi * points[..., 1] * np.cos(np.pi * points[..., 0])],
                        axis=-1)

    Us, Ps = transform.transform_velocity(velocity, identical_bundle, 3, disk, lambda points: points[..., 0])
    F = transform.forcing(Us, Ps, identical_bundle, 3)

    assert Ps.shape == identical_bundle.nodes.shape[:-1]
    assert np.abs(F).max() < 1e-6


def test_transform_centered_reproduces_identical_motions(identical_bundle, lattice: Grid):

    centers = lattice.centers()[..., :2]
    Us = transform.transform_centered(lambda points: 2.0 * points, identical_bundle, 2)

    assert np.abs(Us - 2.0 * centers).max() < 1e-8


def test_map_estimates_of_identical_motions(identical_bundle, disk: BodyShape):

    report = transform.map_estimates(identical_bundle, disk)

    assert report["boundary_offset"].max() < 1e-10
    assert report["integrated_difference"].max() < 1e-14
    assert np.all(report["map_norm_ratio"] == 0.0)


def test_rotation_uniqueness():

    times = np.linspace(0.0, 1.0, 21)
    rotations = np.array([np.eye(3)] * times.size)
    W = transform.angular_generator(times, rotations)

    assert np.allclose(W, 0.0)
    assert np.allclose(transform.rotation_uniqueness_ode(times, W), 0.0)
    assert np.allclose(transform.gronwall_envelope(times, W, 0.3), 0.3)

    with pytest.raises(GridMismatch):
        transform.angular_generator(times[:-1], rotations)


def test_angular_generator_of_a_spin():

    times = np.linspace(0.0, 1.0, 201)
    rotations = np.array([Placement.planar([0.0, 0.0], 2.0 * t).O for t in times])
    W = transform.angular_generator(times, rotations)

    assert np.allclose(W[1:-1], rigid_dynamics.skew([0.0, 0.0, 2.0]), atol=1e-3)


def test_distinct_motions_keep_volume_and_rigid_form(distinct_bundle, disk: BodyShape):

    bundle = distinct_bundle
    second = _shifted_history(0.04)

    assert np.abs(bundle.tilde_z2[0] - bundle.nodes).max() < 1e-12
    assert np.abs(bundle.tilde_z2[-1] - bundle.nodes).max() > 1e-3
    assert transform.volume_error(bundle) < 1e-4
    assert transform.rigid_form_error(bundle, disk, second, 0.025).max() < 1e-6
    assert transform.relative_rotation_error(bundle) < 1e-3


def test_distinct_motions_rate_matches_the_stored_maps(distinct_bundle):

    bundle = distinct_bundle
    rate = (bundle.tilde_z2[4] - bundle.tilde_z2[2]) / (bundle.times[4] - bundle.times[2])

    assert np.abs(rate - bundle.dtZ[3]).max() < 0.1 * np.abs(bundle.dtZ[3]).max()
    assert np.allclose(bundle.dtY, -np.einsum("...ij,...j->...i", bundle.H, bundle.dtZ))


def test_map_estimate_ratios_are_stable_along_a_sweep(history: BodyHistory, disk: BodyShape, lattice: Grid):

    ratios = []
    for delta in (0.02, 0.04):
        bundle = transform.build_bundle(history, _shifted_history(delta), disk, lattice, MARGINS, 0.05, 0.01)
        report = transform.map_estimates(bundle, disk)
        ratios.append([report[name][-1] for name in ("boundary_offset_ratio", "map_norm_ratio",
                                                     "rate_norm_ratio")])
    ratios = np.array(ratios)

    assert np.all(ratios > 0)
    assert np.all(ratios[1] / ratios[0] > 0.8) and np.all(ratios[1] / ratios[0] < 1.25)


def test_integrate_flow_of_a_constant_velocity(lattice: Grid):

    c = np.array([0.1, -0.05])

    def drift(t, x):
        inside = np.all((x > 0.1) & (x < 0.9), axis=-1)
        return np.where(inside[..., None], c, 0.0)

    flow = transform.integrate_flow(drift, lattice, 0.2, 0.05)
    nodes = lattice.nodes()[..., :2]
    interior = np.all((nodes > 0.15) & (nodes < 0.85), axis=-1)

    for k, t in enumerate(flow.times):
        assert np.abs(flow.displacement[k][interior] - t * c).max() < 1e-14


def test_integrate_flow_of_a_rotation(lattice: Grid):

    def rotation(t, x):
        r = x - 0.5
        spin = np.stack([-r[..., 1], r[..., 0]], axis=-1)
        return np.where((np.linalg.norm(r, axis=-1) < 0.45)[..., None], spin, 0.0)

    flow = transform.integrate_flow(rotation, lattice, 0.2, 0.01, substeps=2)
    nodes = lattice.nodes()[..., :2]
    inner = np.linalg.norm(nodes - 0.5, axis=-1) < 0.4
    angle = 0.2
    R = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])

    assert np.abs(flow.samples(-1)[inner] - (0.5 + (nodes[inner] - 0.5) @ R.T)).max() < 1e-10


def test_discrete_flow_jacobian_of_a_rotation():

    def rotation(t, x):
        r = x - 0.5
        return np.stack([-r[..., 1], r[..., 0]], axis=-1)

    times = np.linspace(0.0, 0.5, 6)
    points = np.array([[0.3, 0.5], [0.6, 0.7]])
    mapped, J = transform.discrete_flow(rotation, times, 5, points)
    R = np.array([[np.cos(0.5), -np.sin(0.5)], [np.sin(0.5), np.cos(0.5)]])

    assert np.abs(mapped - (0.5 + (points - 0.5) @ R.T)).max() < 1e-9
    assert np.abs(J - R).max() < 1e-8

    preimages, J_back = transform.pull_back(rotation, times, 5, mapped)
    assert np.abs(preimages - points).max() < 1e-11
    assert np.abs(J_back - J).max() < 1e-8


def test_metric_terms_of_a_rotation(lattice: Grid):

    angle = 0.3
    R = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    samples = lattice.nodes()[..., :2] @ R.T
    H, G, Gamma = transform.metric_terms(samples, lattice.h)

    assert np.abs(H - R.T).max() < 1e-12
    assert np.abs(G - np.eye(2)).max() < 1e-12
    assert np.abs(Gamma).max() < 1e-10
