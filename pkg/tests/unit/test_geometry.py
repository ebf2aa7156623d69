import pytest
import numpy as np
from rigidflow.models.geometry import BodyShape, Container, Placement
from rigidflow.numerics import geometry


def test_disk_signed_distance(disk: BodyShape):

    placement = Placement.planar([0.5, 0.5], 1.3)
    points = np.array([[0.5, 0.5], [0.7, 0.5], [0.5, 0.6], [0.5, 0.55]])

    assert np.allclose(geometry.signed_distance(disk, placement, points), [-0.1, 0.1, 0.0, -0.05])


@pytest.mark.parametrize("point, distance", [
    ([0.0, 0.0], -0.1),
    ([0.3, 0.0], 0.2),
    ([0.2, 0.2], np.sqrt(0.02)),
    ([0.05, 0.0], -0.05),
])
def test_polygon_signed_distance(square: BodyShape, point: list, distance: float):

    placement = Placement.planar([0.5, 0.5], 0.4)
    world = geometry.to_world(square, placement, point)

    assert geometry.signed_distance(square, placement, world) == pytest.approx(distance)


def test_reference_mapping(square: BodyShape, rng: np.random.Generator):

    placement = Placement.planar([0.3, 0.6], -0.8)
    y = rng.uniform(-0.2, 0.2, (20, 2))

    back = geometry.to_reference(square, placement, geometry.to_world(square, placement, y))

    assert np.allclose(back[:, :2], y)
    assert np.allclose(geometry.apply_isometry(placement, [0.0, 0.0]), placement.X)


def test_signed_distance_gradient(disk: BodyShape):

    placement = Placement.planar([0.5, 0.5])
    gradient = geometry.signed_distance_gradient(disk, placement, [[0.8, 0.5], [0.5, 0.2]])

    assert np.allclose(gradient, [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])


def test_indicator(disk: BodyShape):

    placement = Placement.planar([0.5, 0.5])
    points = [[0.5, 0.5], [0.9, 0.9], [0.6, 0.5]]

    assert np.allclose(geometry.indicator(disk, placement, points[:2]), [1.0, 0.0])
    assert geometry.indicator(disk, placement, points[2:], smoothing=0.02)[0] == pytest.approx(0.5)

    with pytest.raises(ValueError):
        geometry.indicator(disk, placement, points, smoothing=-1.0)


def test_smooth_ramps():

    t = np.linspace(-0.5, 1.5, 41)

    assert np.all(np.diff(geometry.smoothstep(t)) >= 0)
    assert geometry.smoothstep(np.array(0.5)) == pytest.approx(0.5)
    assert geometry.smootherstep(np.array(0.25)) + geometry.smootherstep(np.array(0.75)) == pytest.approx(1.0)
    assert geometry.smoothstep_derivative(np.array(2.0)) == 0.0


def test_quadrature_fraction_of_a_half_plane():

    h = 0.01
    distance = (np.arange(40) - 19.5) * h

    assert h * geometry.quadrature_fraction(distance, h).sum() == pytest.approx(0.2, abs=1e-12)


def test_cell_fraction_area(disk: BodyShape):

    n = 128
    h = 1.0 / n
    axis = (np.arange(n) + 0.5) * h
    centers = np.stack(np.meshgrid(axis, axis, indexing="ij"), axis=-1)
    distance = geometry.signed_distance(disk, Placement.planar([0.5, 0.5]), centers)
    area = h * h * geometry.quadrature_fraction(distance, h).sum()

    assert area == pytest.approx(np.pi * 0.01, rel=1e-2)


def test_boundary_polyline(disk: BodyShape, square: BodyShape):

    placement = Placement.planar([0.5, 0.5], 0.3)

    circle = geometry.boundary_polyline(disk, placement, 0.005)
    polygon = geometry.boundary_polyline(square, placement, 0.005)

    assert circle.perimeter == pytest.approx(2.0 * np.pi * 0.1, rel=1e-3)
    assert polygon.perimeter == pytest.approx(0.8, rel=2e-2)
    assert np.all(np.sum(circle.normals * (placement.X - circle.midpoints), axis=-1) > 0)
    assert np.allclose(np.linalg.norm(circle.normals, axis=-1), 1.0)
    assert np.allclose(circle.integrate(np.ones(len(circle.lengths))), circle.perimeter)


def test_boundary_gap(unit_box: Container, disk: BodyShape, square: BodyShape):

    assert geometry.boundary_gap(Placement.planar([0.3, 0.5]), disk, unit_box) == pytest.approx(0.2)
    assert geometry.boundary_gap(Placement.planar([0.05, 0.5]), disk, unit_box) == 0.0
    assert geometry.boundary_gap(Placement.planar([0.5, 0.5], np.pi / 4), square, unit_box) \
        == pytest.approx(0.5 - 0.1 * np.sqrt(2.0))


def test_time_to_contact(unit_box: Container, disk: BodyShape):

    times = 0.1 * np.arange(5)
    moving = [Placement.planar([0.5 + t, 0.5]) for t in times]
    resting = [Placement.planar([0.5, 0.5])] * times.size

    assert geometry.time_to_contact(times, moving, disk, unit_box, 0.25) == pytest.approx(0.3)
    assert np.isinf(geometry.time_to_contact(times, resting, disk, unit_box, 0.2))


@pytest.mark.parametrize("shape_name, area, perimeter", [("disk", np.pi * 0.01, 0.2 * np.pi), ("square", 0.04, 0.8)])
def test_fitted_quadrature_nodes(request, shape_name: str, area: float, perimeter: float):

    shape = request.getfixturevalue(shape_name)
    placement = Placement.planar([0.4, 0.6], 0.3)
    boundary = geometry.boundary_nodes(shape, placement)
    body = geometry.body_nodes(shape, placement)

    assert boundary.integrate(np.ones(len(boundary))) == pytest.approx(perimeter, rel=1e-12)
    assert body.integrate(np.ones(len(body))) == pytest.approx(area, rel=1e-12)
    assert np.allclose(body.integrate(body.points), area * placement.X, rtol=1e-12)
    assert np.allclose(np.linalg.norm(boundary.normals, axis=-1), 1.0)
    assert np.abs(geometry.signed_distance(shape, placement, boundary.points)).max() < 1e-12
    inside = geometry.signed_distance(shape, placement, boundary.points + 1e-3 * boundary.normals)
    assert np.all(inside < 0)

    # int_dB x n = -|B| e_x with inward normals
    flux = boundary.integrate(boundary.points[:, :1] * boundary.normals)
    assert np.allclose(flux, [-area, 0.0, 0.0], atol=1e-12)
