from __future__ import annotations
from typing import Optional, Sequence, Tuple
import numpy as np
from rigidflow.exceptions import ConfigInvalid


ORTHOGONALITY_TOLERANCE = 1e-10


def as_point3(x) -> np.ndarray:
    """
    Pads 2D points (last axis of size 2) with a zero z-coordinate, planar data is embedded in 3D

    Parameters
    ----------
    x : array-like
        A point or an array of points with last axis of size 2 or 3

    Returns
    -------
    np.ndarray
        The same points with last axis of size 3
    """

    x = np.asarray(x, dtype=float)
    if x.shape[-1] == 3:
        return x
    if x.shape[-1] != 2:
        raise(ConfigInvalid(f"Points must have 2 or 3 coordinates, got shape {x.shape}"))
    return np.concatenate([x, np.zeros(x.shape[:-1] + (1,))], axis=-1)


def rotation_about_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


class Container():
    """
    Class that represents the axis-aligned container where the fluid and the body live
    """

    def __init__(self, lower: Sequence[float], upper: Sequence[float]):
        """
        Container class constructor

        Parameters
        ----------
        lower : Sequence[float]
            Lower corner, 2 entries for a rectangle and 3 for a box (meters)
        upper : Sequence[float]
            Upper corner (meters)

        Raises
        ------
        ConfigInvalid
            - Container corners must have the same dimension (2 or 3)
            - Container side lengths must be positive
        """

        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)

        if lower.ndim != 1 or lower.shape != upper.shape or lower.size not in (2, 3):
            raise(ConfigInvalid("Container corners must have the same dimension (2 or 3)"))

        if np.any(upper - lower <= 0):
            raise(ConfigInvalid("Container side lengths must be positive"))

        self.lower = lower
        self.upper = upper

    @property
    def dimension(self) -> int:
        return self.lower.size

    @property
    def lengths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def measure(self) -> float:
        """Area (2D) or volume (3D) of the container"""
        return float(np.prod(self.lengths))

    @property
    def center(self) -> np.ndarray:
        return as_point3(0.5 * (self.lower + self.upper))

    def wall_distance(self, x) -> np.ndarray:
        """
        Distance from points to the closest wall, negative outside the container

        Parameters
        ----------
        x : array-like
            Points with last axis of size 2 or 3, only the first `dimension` coordinates are used

        Returns
        -------
        np.ndarray
            Distances with the shape of x without its last axis
        """

        x = np.asarray(x, dtype=float)[..., :self.dimension]
        return np.minimum(x - self.lower, self.upper - x).min(axis=-1)

    def contains(self, x, tolerance: Optional[float] = 0.0) -> np.ndarray:
        return self.wall_distance(x) >= -tolerance

    @classmethod
    def from_dict(cls, container_dict: dict) -> Container:
        return cls(container_dict.get("lower"), container_dict.get("upper"))

    @staticmethod
    def to_dict(container: Container) -> dict:
        return {
            "lower": container.lower.tolist(),
            "upper": container.upper.tolist(),
        }


class BodyShape():
    """
    Class that represents the reference body B0 and its density

    Disks and polygons are planar: they are embedded in 3D as z-invariant laminas so the
    rigid body formulas are shared with the ball.
    """

    KINDS = ("disk", "ball", "polygon")

    def __init__(self, kind: str, radius: Optional[float] = None, vertices: Optional[Sequence[Sequence[float]]] = None,
                 density: Optional[float] = 1.0, density_gradient: Optional[Sequence[float]] = None,
                 density_floor: Optional[float] = 1e-6, anchor: Optional[Sequence[float]] = None):
        """
        BodyShape class constructor

        Parameters
        ----------
        kind : str
            One of disk, ball or polygon
        radius : float, optional
            Radius for disks and balls, by default None
        vertices : Sequence[Sequence[float]], optional
            Polygon vertices in reference coordinates, by default None
        density : float, optional
            Density at the reference origin, by default 1.0
        density_gradient : Sequence[float], optional
            Linear density variation, rho(y) = density + density_gradient . y, by default None (constant density)
        density_floor : float, optional
            Lower bound c0 that the density must exceed on the body, by default 1e-6
        anchor : Sequence[float], optional
            Reference center of mass, by default None (origin). It is filled by the scenario loader
            once the mass properties are known.

        Raises
        ------
        ConfigInvalid
            - Unknown body kind
            - Disk and ball radius must be positive
            - Polygon needs at least three vertices and a positive area
            - Body density must stay above the density floor
        """

        if kind not in self.KINDS:
            raise(ConfigInvalid(f"Unknown body kind \"{kind}\", expected one of {', '.join(self.KINDS)}"))

        self.kind = kind
        self.radius = None if radius is None else float(radius)
        self.vertices = None

        if kind in ("disk", "ball"):
            if self.radius is None or self.radius <= 0:
                raise(ConfigInvalid("Disk and ball radius must be positive"))
        else:
            vertices = np.asarray(vertices if vertices is not None else [], dtype=float)
            if vertices.ndim != 2 or vertices.shape[0] < 3 or vertices.shape[1] != 2:
                raise(ConfigInvalid("Polygon needs at least three vertices with two coordinates each"))
            x, y = vertices[:, 0], vertices[:, 1]
            signed_area = 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
            if abs(signed_area) <= 0:
                raise(ConfigInvalid("Polygon area must be positive"))
            # counter-clockwise from here on
            self.vertices = vertices if signed_area > 0 else vertices[::-1].copy()

        self.density = float(density)
        gradient = np.zeros(self.dimension) if density_gradient is None else np.asarray(density_gradient, dtype=float)
        if gradient.shape != (self.dimension,):
            raise(ConfigInvalid(f"Density gradient must have {self.dimension} entries"))
        self.density_gradient = gradient
        self.density_floor = float(density_floor)

        lower, upper = self.bounding_box()
        corners = np.array(np.meshgrid(*zip(lower, upper), indexing="ij")).reshape(self.dimension, -1).T
        if self.density_floor <= 0 or np.min(self.density_at(corners)) <= self.density_floor:
            raise(ConfigInvalid("Body density must stay above the density floor on the whole body"))

        self.anchor = np.zeros(3) if anchor is None else as_point3(anchor)

    @property
    def planar(self) -> bool:
        return self.kind != "ball"

    @property
    def dimension(self) -> int:
        return 2 if self.planar else 3

    @property
    def uniform_density(self) -> bool:
        return not np.any(self.density_gradient)

    def bounding_box(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        Reference-frame bounding box of the body

        Returns
        -------
        Tuple[np.ndarray, np.ndarray]
            Lower and upper corners with `dimension` entries each
        """

        if self.kind == "polygon":
            return self.vertices.min(axis=0), self.vertices.max(axis=0)
        return -self.radius * np.ones(self.dimension), self.radius * np.ones(self.dimension)

    @property
    def circumradius(self) -> float:
        """Largest distance from the anchor to a body point"""
        if self.kind == "polygon":
            return float(np.max(np.linalg.norm(self.vertices - self.anchor[:2], axis=1)))
        return self.radius + float(np.linalg.norm(self.anchor))

    def density_at(self, y) -> np.ndarray:
        """
        Evaluates the density at reference points

        Parameters
        ----------
        y : array-like
            Reference points, the first `dimension` coordinates are used

        Returns
        -------
        np.ndarray
            Density values
        """

        y = np.asarray(y, dtype=float)[..., :self.dimension]
        return self.density + y @ self.density_gradient

    @classmethod
    def from_dict(cls, shape_dict: dict) -> BodyShape:
        return cls(shape_dict.get("kind"), shape_dict.get("radius"), shape_dict.get("vertices"),
                   shape_dict.get("density", 1.0), shape_dict.get("density_gradient"),
                   shape_dict.get("density_floor", 1e-6), shape_dict.get("anchor"))

    @staticmethod
    def to_dict(shape: BodyShape) -> dict:
        return {
            "kind": shape.kind,
            "radius": shape.radius,
            "vertices": shape.vertices.tolist() if shape.vertices is not None else None,
            "density": shape.density,
            "density_gradient": shape.density_gradient.tolist(),
            "density_floor": shape.density_floor,
            "anchor": shape.anchor.tolist(),
        }


class Placement():
    """
    Class that represents the isometry x -> X + O x placing the body in the container
    """

    def __init__(self, X: Sequence[float], O: Optional[np.ndarray] = None):
        """
        Placement class constructor

        Parameters
        ----------
        X : Sequence[float]
            Center of mass position (meters), 2 or 3 entries
        O : np.ndarray, optional
            3x3 rotation matrix, by default None (identity)

        Raises
        ------
        ConfigInvalid
            - Placement rotation must be a 3x3 orthonormal matrix with determinant 1
        """

        self.X = as_point3(X).copy()
        O = np.eye(3) if O is None else np.asarray(O, dtype=float)

        if O.shape != (3, 3) \
                or np.linalg.norm(O.T @ O - np.eye(3)) > ORTHOGONALITY_TOLERANCE \
                or abs(np.linalg.det(O) - 1.0) > ORTHOGONALITY_TOLERANCE:
            raise(ConfigInvalid("Placement rotation must be a 3x3 orthonormal matrix with determinant 1"))

        self.O = O.copy()

    @classmethod
    def planar(cls, X: Sequence[float], angle: Optional[float] = 0.0) -> Placement:
        return cls(X, rotation_about_z(angle))

    @property
    def angle(self) -> float:
        """Rotation angle about z, meaningful for planar motions"""
        return float(np.arctan2(self.O[1, 0], self.O[0, 0]))

    @classmethod
    def from_dict(cls, placement_dict: dict) -> Placement:
        O = placement_dict.get("O")
        return cls(placement_dict.get("X"), None if O is None else np.asarray(O, dtype=float))

    @staticmethod
    def to_dict(placement: Placement) -> dict:
        return {
            "X": placement.X.tolist(),
            "O": placement.O.tolist(),
        }


class Grid():
    """
    Class that represents the uniform MAC grid covering a 2D container

    u lives on vertical faces (nx+1, ny), v on horizontal faces (nx, ny+1), p at the cell centers (nx, ny).
    Arrays are indexed [i, j] with i along x.
    """

    def __init__(self, container: Container, nx: int, ny: int, h: float):
        """
        Grid class constructor

        Parameters
        ----------
        container : Container
            A 2D container
        nx : int
            Number of cells along x
        ny : int
            Number of cells along y
        h : float
            Cell size (meters)

        Raises
        ------
        ConfigInvalid
            - The fluid grid needs a 2D container
            - Grid spacing and cell counts must be positive
            - Grid must cover the container exactly
        """

        if container.dimension != 2:
            raise(ConfigInvalid("The fluid grid needs a 2D container"))

        if nx <= 0 or ny <= 0 or h <= 0:
            raise(ConfigInvalid("Grid spacing and cell counts must be positive"))

        if not np.allclose([nx * h, ny * h], container.lengths, rtol=1e-9, atol=0.0):
            raise(ConfigInvalid(f"Grid {nx}x{ny} with h={h} does not cover the container exactly"))

        self.container = container
        self.nx = int(nx)
        self.ny = int(ny)
        self.h = float(h)

    @classmethod
    def from_container(cls, container: Container, nx: int) -> Grid:
        h = container.lengths[0] / nx
        ny = int(round(container.lengths[1] / h))
        return cls(container, nx, ny, h)

    @property
    def origin(self) -> np.ndarray:
        return self.container.lower

    @property
    def cell_area(self) -> float:
        return self.h * self.h

    @property
    def shape_u(self) -> Tuple[int, int]:
        return (self.nx + 1, self.ny)

    @property
    def shape_v(self) -> Tuple[int, int]:
        return (self.nx, self.ny + 1)

    @property
    def shape_p(self) -> Tuple[int, int]:
        return (self.nx, self.ny)

    def _mesh(self, offset_x: float, offset_y: float, count_x: int, count_y: int) -> np.ndarray:
        xs = self.origin[0] + (np.arange(count_x) + offset_x) * self.h
        ys = self.origin[1] + (np.arange(count_y) + offset_y) * self.h
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        return np.stack([X, Y, np.zeros_like(X)], axis=-1)

    def u_points(self) -> np.ndarray:
        """Positions of the u faces, shape (nx+1, ny, 3)"""
        return self._mesh(0.0, 0.5, self.nx + 1, self.ny)

    def v_points(self) -> np.ndarray:
        """Positions of the v faces, shape (nx, ny+1, 3)"""
        return self._mesh(0.5, 0.0, self.nx, self.ny + 1)

    def centers(self) -> np.ndarray:
        """Positions of the cell centers, shape (nx, ny, 3)"""
        return self._mesh(0.5, 0.5, self.nx, self.ny)

    def nodes(self) -> np.ndarray:
        """Positions of the cell corners, shape (nx+1, ny+1, 3)"""
        return self._mesh(0.0, 0.0, self.nx + 1, self.ny + 1)

    def matches(self, other: Grid) -> bool:
        return self.nx == other.nx and self.ny == other.ny and np.isclose(self.h, other.h) \
            and np.allclose(self.origin, other.origin)

    @classmethod
    def from_dict(cls, grid_dict: dict) -> Grid:
        return cls(Container.from_dict(grid_dict.get("container")), grid_dict.get("nx"), grid_dict.get("ny"),
                   grid_dict.get("h"))

    @staticmethod
    def to_dict(grid: Grid) -> dict:
        return {
            "container": Container.to_dict(grid.container),
            "nx": grid.nx,
            "ny": grid.ny,
            "h": grid.h,
        }
