from typing import Optional, Sequence, Tuple
import numpy as np
from rigidflow.models.geometry import BodyShape, Container, Placement, as_point3


POINT_CHUNK = 1 << 18
QUADRATURE_RAMP_CELLS = 4.0
FITTED_NODES = 64
FITTED_ORDER = 8


class BoundarySegments():
    """
    Polyline approximation of the body boundary as independent segments

    ``normals`` are unit vectors at the segment midpoints pointing into the body.
    """

    def __init__(self, starts: np.ndarray, ends: np.ndarray, normals: np.ndarray):
        self.starts = starts
        self.ends = ends
        self.normals = normals

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.starts + self.ends)

    @property
    def lengths(self) -> np.ndarray:
        return np.linalg.norm(self.ends - self.starts, axis=-1)

    @property
    def perimeter(self) -> float:
        return float(self.lengths.sum())

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Midpoint rule over the segments, values are sampled at the midpoints"""
        values = np.asarray(values, dtype=float)
        return np.tensordot(self.lengths, values, axes=(0, 0))


class QuadratureNodes():
    """
    Weighted nodes of a body-fitted quadrature, on the boundary (with inward unit normals) or over the body
    """

    def __init__(self, points: np.ndarray, weights: np.ndarray, normals: Optional[np.ndarray] = None):
        self.points = points
        self.weights = weights
        self.normals = normals

    def __len__(self) -> int:
        return self.weights.size

    def integrate(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        return np.tensordot(self.weights, values, axes=(0, 0))


def smoothstep(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def smoothstep_derivative(t: np.ndarray) -> np.ndarray:
    inside = (t > 0.0) & (t < 1.0)
    return np.where(inside, 6.0 * t * (1.0 - t), 0.0)


def smootherstep(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (t * (6.0 * t - 15.0) + 10.0)


def apply_isometry(placement: Placement, x) -> np.ndarray:
    """
    Maps reference points with x -> X + O x

    Parameters
    ----------
    placement : Placement
        The isometry
    x : array-like
        A point or an array of points (last axis of size 2 or 3)

    Returns
    -------
    np.ndarray
        Mapped points with last axis of size 3
    """

    return as_point3(x) @ placement.O.T + placement.X


def to_reference(shape: BodyShape, placement: Placement, x) -> np.ndarray:
    """
    Pulls world points back to the reference body coordinates

    The placement sends a reference point y to X + O (y - anchor), where the anchor is the
    reference center of mass.
    """

    return (as_point3(x) - placement.X) @ placement.O + shape.anchor


def to_world(shape: BodyShape, placement: Placement, y) -> np.ndarray:
    return (as_point3(y) - shape.anchor) @ placement.O.T + placement.X


def _polygon_distance(vertices: np.ndarray, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    a = vertices
    b = np.roll(vertices, -1, axis=0)
    edge = b - a
    edge_length2 = np.sum(edge * edge, axis=1)

    relative = points[:, None, :] - a[None, :, :]
    t = np.clip(np.sum(relative * edge[None, :, :], axis=2) / edge_length2[None, :], 0.0, 1.0)
    closest = a[None, :, :] + t[..., None] * edge[None, :, :]
    offset = points[:, None, :] - closest
    distance2 = np.sum(offset * offset, axis=2)
    nearest = np.argmin(distance2, axis=1)
    rows = np.arange(points.shape[0])
    distance = np.sqrt(distance2[rows, nearest])
    direction = offset[rows, nearest]

    # winding number, non-zero inside
    is_left = edge[None, :, 0] * relative[..., 1] - relative[..., 0] * edge[None, :, 1]
    upward = (a[None, :, 1] <= points[:, None, 1]) & (b[None, :, 1] > points[:, None, 1]) & (is_left > 0)
    downward = (b[None, :, 1] <= points[:, None, 1]) & (a[None, :, 1] > points[:, None, 1]) & (is_left < 0)
    winding = upward.sum(axis=1) - downward.sum(axis=1)
    sign = np.where(winding != 0, -1.0, 1.0)

    return sign * distance, sign[:, None] * direction


def _polygon_query(vertices: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    flat = y[..., :2].reshape(-1, 2)
    distances = np.empty(flat.shape[0])
    directions = np.empty((flat.shape[0], 2))
    for start in range(0, flat.shape[0], POINT_CHUNK):
        stop = start + POINT_CHUNK
        distances[start:stop], directions[start:stop] = _polygon_distance(vertices, flat[start:stop])
    return distances.reshape(y.shape[:-1]), directions.reshape(y.shape[:-1] + (2,))


def reference_signed_distance(shape: BodyShape, y) -> np.ndarray:
    """
    Signed distance to the reference body, negative inside

    Parameters
    ----------
    shape : BodyShape
        The reference body
    y : array-like
        Reference points

    Returns
    -------
    np.ndarray
        Signed distances
    """

    y = as_point3(y)
    if shape.kind == "disk":
        return np.linalg.norm(y[..., :2], axis=-1) - shape.radius
    if shape.kind == "ball":
        return np.linalg.norm(y, axis=-1) - shape.radius
    return _polygon_query(shape.vertices, y)[0]


def reference_signed_distance_gradient(shape: BodyShape, y) -> np.ndarray:
    y = as_point3(y)
    if shape.kind == "polygon":
        distance, direction = _polygon_query(shape.vertices, y)
        gradient = np.concatenate([direction, np.zeros(direction.shape[:-1] + (1,))], axis=-1)
        norm = np.abs(distance)[..., None]
    else:
        gradient = y.copy()
        if shape.kind == "disk":
            gradient[..., 2] = 0.0
        norm = np.linalg.norm(gradient, axis=-1, keepdims=True)
    return np.divide(gradient, norm, out=np.zeros_like(gradient), where=norm > 0)


def signed_distance(shape: BodyShape, placement: Placement, x) -> np.ndarray:
    """
    Signed distance from world points to the placed body, negative inside B and zero on its boundary

    Parameters
    ----------
    shape : BodyShape
        The reference body
    placement : Placement
        Current placement
    x : array-like
        World points

    Returns
    -------
    np.ndarray
        Signed distances
    """

    return reference_signed_distance(shape, to_reference(shape, placement, x))


def signed_distance_gradient(shape: BodyShape, placement: Placement, x) -> np.ndarray:
    """
    Unit gradient of the signed distance in world coordinates, zero on the medial axis of disks and balls
    """

    return reference_signed_distance_gradient(shape, to_reference(shape, placement, x)) @ placement.O.T


def indicator(shape: BodyShape, placement: Placement, x, smoothing: Optional[float] = 0.0) -> np.ndarray:
    """
    Indicator function of the placed body

    Parameters
    ----------
    shape : BodyShape
        The reference body
    placement : Placement
        Current placement
    x : array-like
        World points
    smoothing : float, optional
        Width of the cubic smoothstep ramp centered on the boundary, by default 0.0 (sharp indicator)

    Returns
    -------
    np.ndarray
        Values in [0, 1]

    Raises
    ------
    ValueError
        - Smoothing width cannot be negative
    """

    if smoothing < 0:
        raise(ValueError("Smoothing width cannot be negative"))

    distance = signed_distance(shape, placement, x)
    if smoothing == 0:
        return (distance < 0).astype(float)
    return smoothstep(0.5 - distance / smoothing)


def quadrature_fraction(distance: np.ndarray, h: float) -> np.ndarray:
    """
    Cell fraction of the body estimated from the signed distance at the cell center

    A quintic ramp four cells wide, odd around the boundary, so straight boundaries are integrated
    without bias and curved ones with an O(h^2) bias.
    """

    return smootherstep(0.5 - distance / (QUADRATURE_RAMP_CELLS * h))


def boundary_gap(placement: Placement, shape: BodyShape, container: Container) -> float:
    """
    Distance between the placed body and the container walls

    Parameters
    ----------
    placement : Placement
        Current placement
    shape : BodyShape
        The reference body
    container : Container
        The container

    Returns
    -------
    float
        d(B, boundary), zero when the body touches or crosses a wall
    """

    if shape.kind == "polygon":
        corners = to_world(shape, placement, shape.vertices)
        gap = float(container.wall_distance(corners).min())
    else:
        center = to_world(shape, placement, np.zeros(3))
        axes = 2 if shape.kind == "disk" else container.dimension
        center = center[:axes]
        lower, upper = container.lower[:axes], container.upper[:axes]
        gap = float(np.minimum(center - lower, upper - center).min()) - shape.radius
    return max(gap, 0.0)


def time_to_contact(times: Sequence[float], placements: Sequence[Placement], shape: BodyShape,
                    container: Container, kappa: float) -> float:
    """
    First stored time where the body is within kappa/2 of the walls, infinity when it never happens
    """

    for t, placement in zip(times, placements):
        if boundary_gap(placement, shape, container) <= 0.5 * kappa:
            return float(t)
    return float("inf")


def _edge_crossing(p0: np.ndarray, p1: np.ndarray, f0: float, f1: float) -> np.ndarray:
    s = f0 / (f0 - f1)
    return p0 + s * (p1 - p0)


def boundary_polyline(shape: BodyShape, placement: Placement, h: float) -> BoundarySegments:
    """
    Marching squares on the signed distance sampled around the placed body

    Parameters
    ----------
    shape : BodyShape
        A planar reference body
    placement : Placement
        Current placement
    h : float
        Sampling spacing

    Returns
    -------
    BoundarySegments
        Boundary segments with inward normals
    """

    if not shape.planar:
        raise(ValueError("Boundary polylines are only available for planar bodies"))

    reach = shape.circumradius + 2.0 * h
    count = int(np.ceil(2.0 * reach / h)) + 1
    # shifted by an irrational fraction of h so no lattice node falls exactly on the boundary
    axis = np.arange(count) * h - reach + 0.1234567 * h
    X, Y = np.meshgrid(placement.X[0] + axis, placement.X[1] + axis, indexing="ij")
    nodes = np.stack([X, Y, np.zeros_like(X)], axis=-1)
    phi = signed_distance(shape, placement, nodes)

    inside = phi < 0
    corner_sum = inside[:-1, :-1].astype(int) + inside[1:, :-1] + inside[1:, 1:] + inside[:-1, 1:]
    cells = np.argwhere((corner_sum > 0) & (corner_sum < 4))

    starts, ends = [], []
    for i, j in cells:
        corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)]
        crossings = []
        for k in range(4):
            a, b = corners[k], corners[(k + 1) % 4]
            fa, fb = phi[a], phi[b]
            if (fa < 0) != (fb < 0):
                crossings.append(_edge_crossing(nodes[a], nodes[b], fa, fb))
            else:
                crossings.append(None)
        found = [c for c in crossings if c is not None]
        if len(found) == 2:
            starts.append(found[0])
            ends.append(found[1])
            continue
        # saddle: bottom, right, top, left crossings
        center_inside = phi[i:i + 2, j:j + 2].mean() < 0
        if center_inside == bool(inside[i, j]):
            pairs = [(0, 1), (2, 3)]
        else:
            pairs = [(3, 0), (1, 2)]
        for first, second in pairs:
            starts.append(crossings[first])
            ends.append(crossings[second])

    starts = np.array(starts).reshape(-1, 3)
    ends = np.array(ends).reshape(-1, 3)
    normals = -signed_distance_gradient(shape, placement, 0.5 * (starts + ends))
    return BoundarySegments(starts, ends, normals)


def _polygon_orientation(vertices: np.ndarray) -> float:
    """+1 for counter-clockwise vertices, -1 otherwise"""
    x, y = vertices[:, 0], vertices[:, 1]
    return 1.0 if float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)) > 0 else -1.0


def _gauss_unit(order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [0, 1]"""
    nodes, weights = np.polynomial.legendre.leggauss(order)
    return 0.5 * (nodes + 1.0), 0.5 * weights


def boundary_nodes(shape: BodyShape, placement: Placement, count: Optional[int] = FITTED_NODES,
                   order: Optional[int] = FITTED_ORDER) -> QuadratureNodes:
    """
    Body-fitted boundary quadrature: the trapezoidal rule in angle on disks, Gauss-Legendre on every polygon edge

    Parameters
    ----------
    shape : BodyShape
        A planar reference body
    placement : Placement
        Current placement
    count : int, optional
        Nodes on a disk boundary, by default 64
    order : int, optional
        Gauss nodes per polygon edge, by default 8

    Returns
    -------
    QuadratureNodes
        World points, arc-length weights and inward normals
    """

    if not shape.planar:
        raise(ValueError("Fitted boundary quadratures are only available for planar bodies"))

    if shape.kind == "disk":
        angles = 2.0 * np.pi * (np.arange(count) + 0.5) / count
        directions = np.stack([np.cos(angles), np.sin(angles), np.zeros(count)], axis=-1)
        points = shape.radius * directions
        weights = np.full(count, 2.0 * np.pi * shape.radius / count)
        normals = -directions
    else:
        s, w = _gauss_unit(order)
        a = shape.vertices
        edge = np.roll(a, -1, axis=0) - a
        lengths = np.linalg.norm(edge, axis=1)
        orientation = _polygon_orientation(a)
        inward = orientation * np.stack([-edge[:, 1], edge[:, 0]], axis=-1) / lengths[:, None]
        points = as_point3((a[:, None, :] + s[None, :, None] * edge[:, None, :]).reshape(-1, 2))
        weights = (lengths[:, None] * w[None, :]).ravel()
        normals = as_point3(np.repeat(inward, s.size, axis=0))

    return QuadratureNodes(to_world(shape, placement, points), weights, normals @ placement.O.T)


def body_nodes(shape: BodyShape, placement: Placement, count: Optional[int] = FITTED_NODES,
               order: Optional[int] = FITTED_ORDER) -> QuadratureNodes:
    """
    Body-fitted area quadrature: polar Gauss-Legendre on disks, collapsed Gauss squares on the fan triangles
    of a polygon (star-shaped about its vertex mean)
    """

    if not shape.planar:
        raise(ValueError("Fitted body quadratures are only available for planar bodies"))

    s, w = _gauss_unit(order)
    if shape.kind == "disk":
        angles = 2.0 * np.pi * (np.arange(count) + 0.5) / count
        radii = shape.radius * s
        R, A = np.meshgrid(radii, angles, indexing="ij")
        points = as_point3(np.stack([R * np.cos(A), R * np.sin(A)], axis=-1).reshape(-1, 2))
        weights = np.outer(shape.radius * w * radii, np.full(count, 2.0 * np.pi / count)).ravel()
    else:
        a = shape.vertices
        b = np.roll(a, -1, axis=0)
        c = a.mean(axis=0)
        S, T = np.meshgrid(s, s, indexing="ij")
        WS, WT = np.meshgrid(w, w, indexing="ij")
        # x = c + S ((a - c) + T (b - a)), |dx/d(S, T)| = S |(a - c) x (b - a)|
        spans = (a - c)[:, None, None, :] + T[None, ..., None] * (b - a)[:, None, None, :]
        points = as_point3((c + S[None, ..., None] * spans).reshape(-1, 2))
        cross = np.abs((a - c)[:, 0] * (b - a)[:, 1] - (a - c)[:, 1] * (b - a)[:, 0])
        weights = (cross[:, None, None] * (S * WS * WT)[None]).ravel()

    return QuadratureNodes(to_world(shape, placement, points), weights)
