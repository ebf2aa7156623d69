from typing import List, Optional
import numpy as np
from rigidflow.models.geometry import BodyShape, Container, Placement
from rigidflow.models.verification import CheckResult
from rigidflow.numerics import geometry
from rigidflow.utils.verification_util import run_checks


SUITE_LABEL = "geometry"

UNIT_BOX = Container([0.0, 0.0], [1.0, 1.0])
SQUARE = [[-0.1, -0.1], [0.1, -0.1], [0.1, 0.1], [-0.1, 0.1]]


def _square_distance(y: np.ndarray, half: float) -> np.ndarray:
    q = np.abs(y[..., :2]) - half
    return np.linalg.norm(np.maximum(q, 0.0), axis=-1) + np.minimum(q.max(axis=-1), 0.0)


def check_disk_distance(fault: Optional[str] = None):
    rng = np.random.default_rng(11)
    shape = BodyShape("disk", radius=0.2)
    placement = Placement.planar([0.4, 0.55], 0.3)
    x = rng.uniform(0.0, 1.0, (500, 2))
    expected = np.linalg.norm(x - placement.X[:2], axis=-1) - 0.2
    error = np.abs(geometry.signed_distance(shape, placement, x) - expected).max()
    return "disk_signed_distance", error, 1e-12


def check_polygon_distance(fault: Optional[str] = None):
    rng = np.random.default_rng(12)
    shape = BodyShape("polygon", vertices=SQUARE)
    placement = Placement.planar([0.5, 0.5], 0.7)
    y = rng.uniform(-0.3, 0.3, (500, 2))
    x = geometry.to_world(shape, placement, y)
    error = np.abs(geometry.signed_distance(shape, placement, x) - _square_distance(y, 0.1)).max()
    return "polygon_signed_distance", error, 1e-12


def check_polyline(fault: Optional[str] = None):
    shape = BodyShape("disk", radius=0.2)
    placement = Placement.planar([0.5, 0.5])
    segments = geometry.boundary_polyline(shape, placement, 0.005)
    perimeter = abs(segments.perimeter - 2.0 * np.pi * 0.2) / (2.0 * np.pi * 0.2)
    outward = np.sum(segments.normals * (placement.X - segments.midpoints), axis=-1) <= 0
    return [("polyline_perimeter", perimeter, 1e-3),
            ("polyline_normals_inward", float(outward.sum()), 0.0)]


def check_boundary_gap(fault: Optional[str] = None):
    disk = geometry.boundary_gap(Placement.planar([0.3, 0.5]), BodyShape("disk", radius=0.2), UNIT_BOX)
    square = geometry.boundary_gap(Placement.planar([0.5, 0.5], np.pi / 4), BodyShape("polygon", vertices=SQUARE),
                                   UNIT_BOX)
    return [("disk_boundary_gap", abs(disk - 0.1), 1e-12),
            ("polygon_boundary_gap", abs(square - (0.5 - 0.1 * np.sqrt(2.0))), 1e-12)]


def check_cell_fraction_area(fault: Optional[str] = None):
    h = 1.0 / 256
    shape = BodyShape("disk", radius=0.2)
    axis = (np.arange(256) + 0.5) * h
    X, Y = np.meshgrid(axis, axis, indexing="ij")
    centers = np.stack([X, Y], axis=-1)
    distance = geometry.signed_distance(shape, Placement.planar([0.5, 0.5]), centers)
    area = h * h * float(geometry.quadrature_fraction(distance, h).sum())
    return "cell_fraction_area", abs(area - np.pi * 0.04) / (np.pi * 0.04), 1e-3


def check_time_to_contact(fault: Optional[str] = None):
    shape = BodyShape("disk", radius=0.1)
    times = 0.05 * np.arange(11)
    placements = [Placement.planar([0.5 + t, 0.5]) for t in times]
    contact = geometry.time_to_contact(times, placements, shape, UNIT_BOX, 0.25)
    resting = geometry.time_to_contact(times, [Placement.planar([0.5, 0.5])] * times.size, shape, UNIT_BOX, 0.0)
    return [("time_to_contact", abs(contact - times[6]), 1e-12),
            ("time_to_contact_never", 0.0 if np.isinf(resting) else 1.0, 0.0)]


CHECKS = [check_disk_distance, check_polygon_distance, check_polyline, check_boundary_gap,
          check_cell_fraction_area, check_time_to_contact]


def run(fault: Optional[str] = None) -> List[CheckResult]:
    return run_checks(SUITE_LABEL, CHECKS, fault)
