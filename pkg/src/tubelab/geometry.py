"""Oriented boxes in R^3: construction, containment, thickening, angles, rescaling.

A convex body is represented as an oriented box: center, orthonormal frame,
and half-extents stored sorted ascending.  Boxes stand in for tubes, planks,
slabs, and balls; the sorted full dimensions v1 <= v2 <= v3 play the role of
the body's axis lengths.  All operations are pure and all values immutable,
so everything here is safe to evaluate in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import (
    AmbiguousPlane,
    DegenerateBox,
    GridRequired,
    NonOrthonormalAxes,
    NonPositiveExtent,
    RoleMismatch,
)

ORTHO_TOL = 1e-9
ROLES = ("tube", "plank", "slab", "ball", "generic")

# Corner sign patterns, fixed order.
_SIGNS = np.array(
    [[sx, sy, sz] for sx in (-1.0, 1.0) for sy in (-1.0, 1.0) for sz in (-1.0, 1.0)]
)


@dataclass(frozen=True, eq=False)
class OrientedBox:
    """Box given by center, orthonormal axes (rows), and ascending half-extents."""

    center: np.ndarray
    axes: np.ndarray
    half_extents: np.ndarray
    role: str = "generic"

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float).reshape(3).copy()
        axes = np.asarray(self.axes, dtype=float).reshape(3, 3).copy()
        he = np.asarray(self.half_extents, dtype=float).reshape(3).copy()
        for arr in (center, axes, he):
            arr.setflags(write=False)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "half_extents", he)

    # -- derived quantities ---------------------------------------------------

    @property
    def dims(self) -> np.ndarray:
        """Full dimensions v1 <= v2 <= v3 (twice the half-extents)."""
        return 2.0 * self.half_extents

    @property
    def volume(self) -> float:
        """Analytic volume 8*prod(half_extents)."""
        return float(8.0 * np.prod(self.half_extents))

    @property
    def circumradius(self) -> float:
        return float(np.linalg.norm(self.half_extents))

    def corners(self) -> np.ndarray:
        """The 8 corners, shape (8, 3), fixed sign order."""
        return self.center + (_SIGNS * self.half_extents) @ self.axes

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned bounding box (lo, hi) of the body."""
        reach = np.abs(self.axes).T @ self.half_extents
        return self.center - reach, self.center + reach

    def to_frame(self, points: np.ndarray) -> np.ndarray:
        """Coordinates of ``points`` in the box frame (origin at center)."""
        return (np.atleast_2d(points) - self.center) @ self.axes.T

    def contains_points(self, points: np.ndarray, tol: float = ORTHO_TOL) -> np.ndarray:
        local = np.abs(self.to_frame(points))
        return np.all(local <= self.half_extents + tol, axis=1)

    def dilate(self, factor: float) -> "OrientedBox":
        """Concentric dilate: same center and frame, extents scaled."""
        return OrientedBox(self.center, self.axes, self.half_extents * factor, self.role)

    def key(self) -> bytes:
        """Stable content hash key (coordinates rounded to 1e-12)."""
        payload = np.concatenate([self.center, self.axes.ravel(), self.half_extents])
        return np.round(payload, 12).tobytes() + self.role.encode()

    def __repr__(self):  # compact, for logs
        d = ", ".join(f"{v:.4g}" for v in self.dims)
        return f"OrientedBox({self.role}, dims=({d}))"


def make_box(center, axes, extents, role: str = "generic") -> OrientedBox:
    """Build a validated box from full dimensions.

    ``extents`` are the three full dimensions of the body (a delta-tube is
    ``(delta, delta, 1)``).  They are sorted ascending and the axes rows are
    permuted to match.  Raises NonOrthonormalAxes / NonPositiveExtent /
    RoleMismatch on invalid input.
    """
    axes = np.asarray(axes, dtype=float).reshape(3, 3)
    extents = np.asarray(extents, dtype=float).reshape(3)
    if np.any(extents <= 0):
        raise NonPositiveExtent(f"extents must be positive, got {extents}")
    gram = axes @ axes.T
    if not np.allclose(gram, np.eye(3), atol=1e-7):
        raise NonOrthonormalAxes("axes are not orthonormal within tolerance")
    order = np.argsort(extents, kind="stable")
    extents = extents[order]
    axes = axes[order]
    if role not in ROLES:
        raise RoleMismatch(f"unknown role {role!r}")
    v1, v2, v3 = extents
    if role == "tube" and not (v2 <= 2.0 * v1 and v1 <= v3):
        raise RoleMismatch(f"tube needs v1 ~ v2 <= v3, got dims {extents}")
    if role == "slab" and not (v3 <= 2.0 * v2):
        raise RoleMismatch(f"slab needs v2 ~ v3, got dims {extents}")
    if role == "ball" and not (v3 <= 2.0 * v1):
        raise RoleMismatch(f"ball needs v1 ~ v3, got dims {extents}")
    return OrientedBox(center, axes, extents / 2.0, role)


def dims_sorted(box: OrientedBox) -> tuple[float, float, float]:
    """Full dimensions (v1, v2, v3), ascending."""
    return tuple(float(v) for v in box.dims)


def contains(outer: OrientedBox, inner: OrientedBox, mode: str = "exact_corners",
             grid=None, tol: float = 1e-9) -> bool:
    """Whether ``inner`` sits inside ``outer``.

    ``exact_corners`` tests the 8 corners of ``inner`` against ``outer``'s
    slab inequalities — exact for boxes since both are convex.  ``voxel``
    tests voxel-set inclusion on the supplied grid.
    """
    if mode == "exact_corners":
        slack = tol * (1.0 + outer.half_extents)
        local = np.abs(outer.to_frame(inner.corners()))
        return bool(np.all(local <= outer.half_extents + slack))
    if mode == "voxel":
        if grid is None:
            raise GridRequired("voxel containment mode needs a grid")
        from .measures import voxelize

        inner_vox = voxelize(inner, grid)
        outer_vox = voxelize(outer, grid)
        return bool(np.isin(inner_vox, outer_vox, assume_unique=True).all())
    raise ValueError(f"unknown containment mode {mode!r}")


def contained_mask(outer: OrientedBox, corners: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Vectorized corner containment: ``corners`` has shape (n, 8, 3)."""
    flat = corners.reshape(-1, 3)
    local = np.abs((flat - outer.center) @ outer.axes.T)
    ok = np.all(local <= outer.half_extents + tol * (1.0 + outer.half_extents), axis=1)
    return ok.reshape(corners.shape[0], 8).all(axis=1)


def intersection_volume(b1: OrientedBox, b2: OrientedBox, grid) -> float:
    """Voxel measure of the intersection; 0 for disjoint bodies."""
    from .measures import voxelize

    v1 = voxelize(b1, grid)
    v2 = voxelize(b2, grid)
    if v1.size == 0 or v2.size == 0:
        return 0.0
    common = np.intersect1d(v1, v2, assume_unique=True)
    return float(common.size) * grid.cell_volume


def neighborhood(box: OrientedBox, r: float) -> OrientedBox:
    """Circumscribing box of the r-neighborhood: each half-extent grows by r.

    This overestimates the true (Euclidean) neighborhood near corners by at
    most sqrt(3); keeping the body class closed under thickening is worth the
    bounded error.
    """
    if r < 0:
        raise NonPositiveExtent("neighborhood radius must be nonnegative")
    if r == 0:
        return box
    he = box.half_extents + r
    role = box.role
    try:
        return make_box(box.center, box.axes, 2.0 * he, role)
    except RoleMismatch:
        return make_box(box.center, box.axes, 2.0 * he, "generic")


@dataclass(frozen=True, eq=False)
class AffineMap:
    """Invertible affine map x -> linear @ x + translation."""

    linear: np.ndarray
    translation: np.ndarray
    determinant: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        lin = np.asarray(self.linear, dtype=float).reshape(3, 3).copy()
        tr = np.asarray(self.translation, dtype=float).reshape(3).copy()
        det = float(np.linalg.det(lin))
        if abs(det) < 1e-15:
            raise DegenerateBox("affine map is not invertible")
        if self.determinant is not None and not np.isclose(self.determinant, det, atol=1e-9):
            raise DegenerateBox("cached determinant disagrees with linear part")
        lin.setflags(write=False)
        tr.setflags(write=False)
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "translation", tr)
        object.__setattr__(self, "determinant", det)

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = pts @ self.linear.T + self.translation
        return out[0] if np.asarray(points).ndim == 1 else out

    def inverse(self) -> "AffineMap":
        inv = np.linalg.inv(self.linear)
        return AffineMap(inv, -inv @ self.translation)

    def compose(self, other: "AffineMap") -> "AffineMap":
        """self after other: (self ∘ other)(x) = self(other(x))."""
        return AffineMap(self.linear @ other.linear,
                         self.linear @ other.translation + self.translation)


def identity_map() -> AffineMap:
    return AffineMap(np.eye(3), np.zeros(3))


def affine_rescale_to_ball(box: OrientedBox) -> AffineMap:
    """Map sending ``box`` onto the unit-diameter cube centered at the origin.

    In box-frame coordinates each axis is scaled by 1/dim, so a body of
    dimensions a x b x 1 becomes 1 x 1 x 1 — the working "unit ball" of the
    rescaled picture.  A contained body's dimensions scale per-axis: a plank
    tangent to a slab of thickness t turns into a tube of width (plank
    thickness / t).
    """
    dims = box.dims
    if np.any(dims <= 0) or dims[2] / dims[0] > 1e12:
        raise DegenerateBox(f"cannot rescale box with dims {dims}")
    lin = (box.axes.T / dims).T  # rows scaled: diag(1/dims) @ axes
    return AffineMap(lin, -lin @ box.center)


def transform_box(amap: AffineMap, box: OrientedBox) -> OrientedBox:
    """Image of a box under an affine map, re-boxed.

    Exact for rigid motions and for maps diagonal in the box frame (the only
    kinds used here); for a general map the image parallelepiped is
    approximated by the box spanned by its orthogonalized edge vectors.
    """
    center = amap.apply(box.center)
    edges = amap.linear @ (box.axes * box.half_extents[:, None]).T  # columns = images
    edges = edges.T  # rows = image edge vectors
    lengths = np.linalg.norm(edges, axis=1)
    order = np.argsort(-lengths, kind="stable")
    basis = []
    half = []
    for idx in order:
        v = edges[idx].copy()
        for b in basis:
            v -= (v @ b) * b
        n = np.linalg.norm(v)
        if n < 1e-15:
            raise DegenerateBox("transformed box is degenerate")
        basis.append(v / n)
        half.append(lengths[idx])
    axes = np.array(basis)
    he = np.array(half)
    asc = np.argsort(he, kind="stable")
    try:
        return make_box(center, axes[asc], 2.0 * he[asc], box.role)
    except RoleMismatch:
        return make_box(center, axes[asc], 2.0 * he[asc], "generic")


class PlankAngle(NamedTuple):
    """Angle between two bodies' principal planes, with its resolution floor.

    Angles below ``floor`` (the worst thickness-to-width ratio of the two
    bodies) are not geometrically meaningful; ``indistinguishable`` flags
    that case.
    """

    angle: float
    floor: float

    @property
    def indistinguishable(self) -> bool:
        return self.angle < self.floor


def plank_angle(p1: OrientedBox, p2: OrientedBox) -> PlankAngle:
    """Angle in [0, pi/2] between the planes spanned by the two longest axes.

    The plane normal is the shortest axis, so the angle is
    arccos(|n1 . n2|).  Raises AmbiguousPlane for ball-like bodies.
    """
    for p in (p1, p2):
        v = p.dims
        if v[2] <= 2.0 * v[0]:
            raise AmbiguousPlane(f"no distinguished plane for body with dims {v}")
    n1 = p1.axes[0]
    n2 = p2.axes[0]
    angle = float(np.arccos(np.clip(abs(float(n1 @ n2)), 0.0, 1.0)))
    floors = [p.dims[0] / p.dims[1] for p in (p1, p2)]
    return PlankAngle(angle, max(floors))


def direction_angle(b1: OrientedBox, b2: OrientedBox) -> float:
    """Angle in [0, pi/2] between long axes (tube directions)."""
    d = abs(float(b1.axes[2] @ b2.axes[2]))
    return float(np.arccos(np.clip(d, 0.0, 1.0)))


def frame_from_axis(direction: np.ndarray) -> np.ndarray:
    """Deterministic orthonormal frame whose LAST row is ``direction``."""
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    helper = np.array([0.0, 0.0, 1.0]) if abs(d[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    a1 = np.cross(helper, d)
    a1 /= np.linalg.norm(a1)
    a2 = np.cross(d, a1)
    return np.array([a1, a2, d])


def direction_net(n: int) -> np.ndarray:
    """Fibonacci-lattice direction net on the upper hemisphere, shape (~n, 3).

    One net is shared by the density search and the generators so angle
    discretization is consistent everywhere.  Directions are unit vectors
    with z >= 0; antipodal identification is implicit.
    """
    m = 2 * n
    i = np.arange(m) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / m)
    golden = np.pi * (1.0 + np.sqrt(5.0))
    theta = golden * i
    pts = np.column_stack([
        np.cos(theta) * np.sin(phi),
        np.sin(theta) * np.sin(phi),
        np.cos(phi),
    ])
    upper = pts[pts[:, 2] > 1e-12]
    return upper[:n] if upper.shape[0] >= n else upper


def separated_directions(delta: float) -> np.ndarray:
    """Hemisphere directions pairwise at least ``delta`` radians apart.

    Returns ~delta**-2 directions (within a factor 2): a Fibonacci net of
    the right density, greedily thinned to enforce the separation.
    """
    m = int(np.ceil(4.0 / delta**2))
    net = direction_net(m // 2 + 4)
    min_dot = np.cos(delta)
    kept: list[int] = []
    kept_vecs = np.empty((0, 3))
    for idx in range(net.shape[0]):
        v = net[idx]
        if kept_vecs.shape[0]:
            dots = np.abs(kept_vecs @ v)
            if np.any(dots > min_dot):
                continue
        kept.append(idx)
        kept_vecs = np.vstack([kept_vecs, v])
        if len(kept) >= int(np.ceil(2.0 / delta**2)):
            break
    return kept_vecs


def comparable(b1: OrientedBox, b2: OrientedBox, dilate: float = 10.0) -> bool:
    """Mutual containment in each other's ``dilate``-dilates."""
    return contains(b1.dilate(dilate), b2) and contains(b2.dilate(dilate), b1)
