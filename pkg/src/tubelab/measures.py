"""Voxel-grid measure theory for finite body families.

Union volumes, pointwise multiplicity, the shading fraction, densities over
convex test sets, a searched/exhaustive maximal density, and the convex
density ratio ("Frostman constant").  Every quantity is a voxel measure on a
fixed grid so that identities like  mu * |U| = sum |Y(V)|  hold exactly in
integer arithmetic before the final division.
"""

from __future__ import annotations

import warnings
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import config
from .errors import (
    BudgetExceeded,
    EmptyFamily,
    EmptyShading,
    GridTooCoarse,
    UnderResolved,
    ZeroBaseDensity,
)
from .geometry import OrientedBox, contained_mask, make_box

# ---------------------------------------------------------------------------
# grid


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Regular axis-aligned grid; cell (i,j,k) has center origin + (idx+1/2)h."""

    origin: np.ndarray
    h: float
    dims: tuple[int, int, int]

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=float).reshape(3).copy()
        origin.setflags(write=False)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if self.h <= 0 or min(self.dims) < 1:
            raise GridTooCoarse("grid needs positive cell size and dimensions")

    @property
    def n_cells(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def cell_volume(self) -> float:
        return float(self.h**3)

    @property
    def domain(self) -> OrientedBox:
        extent = np.array(self.dims, dtype=float) * self.h
        return make_box(self.origin + extent / 2.0, np.eye(3), extent)

    def key(self) -> bytes:
        return np.round(self.origin, 12).tobytes() + np.float64(self.h).tobytes() + bytes(
            np.array(self.dims, dtype=np.int64)
        )

    def flatten(self, idx3: np.ndarray) -> np.ndarray:
        idx3 = np.asarray(idx3, dtype=np.int64)
        _, ny, nz = self.dims
        return idx3[..., 0] * (ny * nz) + idx3[..., 1] * nz + idx3[..., 2]

    def unflatten(self, flat: np.ndarray) -> np.ndarray:
        _, ny, nz = self.dims
        flat = np.asarray(flat, dtype=np.int64)
        ix, rem = np.divmod(flat, ny * nz)
        iy, iz = np.divmod(rem, nz)
        return np.stack([ix, iy, iz], axis=-1)

    def centers(self, flat: np.ndarray) -> np.ndarray:
        return self.origin + (self.unflatten(flat) + 0.5) * self.h

    def points_to_flat(self, points: np.ndarray) -> np.ndarray:
        """Flat cell index per point, -1 for points outside the grid."""
        pts = np.atleast_2d(points)
        idx = np.floor((pts - self.origin) / self.h).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < np.array(self.dims)), axis=1)
        out = np.where(inside, self.flatten(idx), -1)
        return out

    @classmethod
    def cube(cls, half_width: float = 1.0, h: float = 1 / 32,
             budget: int | None = None) -> "VoxelGrid":
        """Axis-aligned cube [-hw, hw]^3, cell size clamped to the budget."""
        budget = config.DEFAULTS["grid_budget"] if budget is None else int(budget)
        h = float(h)
        while True:
            n = int(np.ceil(2.0 * half_width / h - 1e-9))
            if n**3 <= budget:
                break
            h *= (n**3 / budget) ** (1.0 / 3.0) * (1.0 + 1e-9)
        return cls(np.full(3, -half_width), h, (n, n, n))

    @classmethod
    def fit(cls, bodies, h: float, pad: float | None = None,
            budget: int | None = None) -> "VoxelGrid":
        """Smallest axis-aligned grid covering the bodies (plus padding)."""
        budget = config.DEFAULTS["grid_budget"] if budget is None else int(budget)
        boxes = list(bodies)
        if not boxes:
            raise EmptyFamily("cannot fit a grid to no bodies")
        lows = np.min([b.aabb()[0] for b in boxes], axis=0)
        highs = np.max([b.aabb()[1] for b in boxes], axis=0)
        pad = 2.0 * h if pad is None else float(pad)
        lows -= pad
        highs += pad
        h = float(h)
        while True:
            n = np.ceil((highs - lows) / h - 1e-9).astype(int)
            n = np.maximum(n, 1)
            if int(np.prod(n)) <= budget:
                break
            h *= (np.prod(n) / budget) ** (1.0 / 3.0) * (1.0 + 1e-9)
        thinnest = min(b.dims[0] for b in boxes)
        if h > thinnest:
            raise GridTooCoarse(
                f"cell size {h:.3g} exceeds thinnest body dimension {thinnest:.3g}; "
                "raise the budget or coarsen the family"
            )
        return cls(lows, h, tuple(int(v) for v in n))


# ---------------------------------------------------------------------------
# voxelization

_VOX_CACHE: "OrderedDict[bytes, np.ndarray]" = OrderedDict()
_VOX_CACHE_CAP = 4096


def clear_voxel_cache():
    _VOX_CACHE.clear()


def voxelize(body: OrientedBox, grid: VoxelGrid, use_cache: bool = True) -> np.ndarray:
    """Sorted flat indices of cells whose centers lie in the body."""
    key = grid.key() + body.key() if use_cache else b""
    if use_cache:
        hit = _VOX_CACHE.get(key)
        if hit is not None:
            _VOX_CACHE.move_to_end(key)
            return hit
    frac = config.DEFAULTS["under_resolved_fraction"]
    if body.dims[0] < grid.h * frac:
        warnings.warn(
            f"body thickness {body.dims[0]:.3g} below {frac} cells; voxelization unreliable",
            UnderResolved,
            stacklevel=2,
        )
    lo, hi = body.aabb()
    i0 = np.ceil((lo - grid.origin) / grid.h - 0.5 - 1e-12).astype(np.int64)
    i1 = np.floor((hi - grid.origin) / grid.h - 0.5 + 1e-12).astype(np.int64)
    i0 = np.maximum(i0, 0)
    i1 = np.minimum(i1, np.array(grid.dims) - 1)
    if np.any(i1 < i0):
        return np.empty(0, dtype=np.int64)
    ny_w = int(i1[1] - i0[1] + 1)
    nz_w = int(i1[2] - i0[2] + 1)
    xs_all = grid.origin[0] + (np.arange(i0[0], i1[0] + 1) + 0.5) * grid.h
    ys = grid.origin[1] + (np.arange(i0[1], i1[1] + 1) + 0.5) * grid.h
    zs = grid.origin[2] + (np.arange(i0[2], i1[2] + 1) + 0.5) * grid.h
    ax = body.axes
    he = body.half_extents + 1e-9 * (1.0 + body.half_extents)
    d = ax @ body.center
    _, gny, gnz = grid.dims
    chunk = max(1, int(2**21 // max(ny_w * nz_w, 1)))
    pieces = []
    for cs in range(0, xs_all.size, chunk):
        xs = xs_all[cs: cs + chunk]
        X = xs[:, None, None]
        Y = ys[None, :, None]
        Z = zs[None, None, :]
        mask = np.ones((xs.size, ny_w, nz_w), dtype=bool)
        for k in range(3):
            lk = ax[k, 0] * X + ax[k, 1] * Y + ax[k, 2] * Z - d[k]
            mask &= np.abs(lk) <= he[k]
        ii, jj, kk = np.nonzero(mask)
        if ii.size:
            flat = ((ii + i0[0] + cs) * gny + (jj + i0[1])) * gnz + (kk + i0[2])
            pieces.append(flat.astype(np.int64))
    out = np.concatenate(pieces) if pieces else np.empty(0, dtype=np.int64)
    out.setflags(write=False)
    if use_cache:
        _VOX_CACHE[key] = out
        while len(_VOX_CACHE) > _VOX_CACHE_CAP:
            _VOX_CACHE.popitem(last=False)
    return out


def union_cells(parts) -> np.ndarray:
    """Sorted union of flat index arrays."""
    parts = [p for p in parts if p.size]
    if not parts:
        return np.empty(0, dtype=np.int64)
    return np.unique(np.concatenate(parts))


# ---------------------------------------------------------------------------
# families and shadings


@dataclass(frozen=True, eq=False)
class ConvexFamily:
    """Ordered list of bodies; ids are positions in the list."""

    boxes: tuple[OrientedBox, ...]
    label: str = ""
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))

    def __len__(self):
        return len(self.boxes)

    def __iter__(self):
        return iter(self.boxes)

    def __getitem__(self, i) -> OrientedBox:
        return self.boxes[i]

    @property
    def scale(self) -> float:
        """Common thinnest dimension, or 0 for a heterogeneous family."""
        if not self.boxes:
            return 0.0
        v1 = np.array([b.dims[0] for b in self.boxes])
        lo = float(v1.min())
        return lo if v1.max() <= 2.0 * lo else 0.0

    def subfamily(self, ids, label: str = "") -> "ConvexFamily":
        ids = np.asarray(ids, dtype=int)
        return ConvexFamily(tuple(self.boxes[i] for i in ids), label or self.label)

    def voxel_sets(self, grid: VoxelGrid) -> list[np.ndarray]:
        key = ("sets", grid.key())
        if key not in self._cache:
            cache_each = len(self.boxes) <= _VOX_CACHE_CAP
            self._cache[key] = [voxelize(b, grid, use_cache=cache_each) for b in self.boxes]
        return self._cache[key]

    def voxel_volumes(self, grid: VoxelGrid) -> np.ndarray:
        key = ("vols", grid.key())
        if key not in self._cache:
            sets = self.voxel_sets(grid)
            self._cache[key] = np.array([s.size for s in sets], dtype=np.int64) * grid.cell_volume
        return self._cache[key]

    def union(self, grid: VoxelGrid) -> np.ndarray:
        key = ("union", grid.key())
        if key not in self._cache:
            self._cache[key] = union_cells(self.voxel_sets(grid))
        return self._cache[key]


def family_of(boxes, label: str = "") -> ConvexFamily:
    return ConvexFamily(tuple(boxes), label)


@dataclass(frozen=True, eq=False)
class Shading:
    """Per-body voxel subsets Y(V) on a shared grid."""

    family: ConvexFamily
    grid: VoxelGrid
    parts: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.parts) != len(self.family):
            raise EmptyShading("shading must assign a (possibly empty) set per body")
        clean = []
        for p in self.parts:
            arr = np.asarray(p, dtype=np.int64)
            arr = np.unique(arr) if arr.size else arr.reshape(0)
            arr.setflags(write=False)
            clean.append(arr)
        object.__setattr__(self, "parts", tuple(clean))

    @classmethod
    def full(cls, family: ConvexFamily, grid: VoxelGrid) -> "Shading":
        return cls(family, grid, tuple(family.voxel_sets(grid)))

    @property
    def total_cells(self) -> int:
        return int(sum(p.size for p in self.parts))

    @property
    def mass(self) -> float:
        """Sum over bodies of |Y(V)| as a volume."""
        return self.total_cells * self.grid.cell_volume

    def is_empty(self) -> bool:
        return self.total_cells == 0

    def nonempty_ids(self) -> np.ndarray:
        return np.array([i for i, p in enumerate(self.parts) if p.size], dtype=int)

    def union(self) -> np.ndarray:
        return union_cells(self.parts)

    def restrict_cells(self, cells: np.ndarray) -> "Shading":
        """Intersect every part with a fixed voxel set."""
        parts = tuple(p[np.isin(p, cells, assume_unique=True)] if p.size else p
                      for p in self.parts)
        return Shading(self.family, self.grid, parts)

    def restrict_ids(self, ids) -> "Shading":
        """Empty out all bodies except the given ids (family unchanged)."""
        keep = np.zeros(len(self.family), dtype=bool)
        keep[np.asarray(ids, dtype=int)] = True
        empty = np.empty(0, dtype=np.int64)
        parts = tuple(p if keep[i] else empty for i, p in enumerate(self.parts))
        return Shading(self.family, self.grid, parts)

    def validate(self) -> bool:
        """Check Y(V) ⊆ voxelization of V for every body."""
        sets = self.family.voxel_sets(self.grid)
        for p, s in zip(self.parts, sets):
            if p.size and not np.isin(p, s, assume_unique=True).all():
                return False
        return True


@dataclass(frozen=True, eq=False)
class MultiplicityField:
    """Sparse per-voxel counts of shaded bodies covering each cell."""

    support: np.ndarray
    counts: np.ndarray
    grid: VoxelGrid

    @property
    def total_cells(self) -> int:
        return int(self.counts.sum())

    @property
    def support_volume(self) -> float:
        return self.support.size * self.grid.cell_volume

    @property
    def mu(self) -> float:
        """Average multiplicity: total shaded mass over union volume."""
        if self.support.size == 0:
            raise EmptyShading("multiplicity undefined for empty shading")
        return float(self.counts.sum() / self.support.size)

    @property
    def max_value(self) -> int:
        return int(self.counts.max()) if self.counts.size else 0

    def at_cells(self, flat: np.ndarray) -> np.ndarray:
        flat = np.asarray(flat, dtype=np.int64)
        pos = np.searchsorted(self.support, flat)
        pos = np.clip(pos, 0, max(self.support.size - 1, 0))
        hit = (self.support.size > 0) & (self.support[pos] == flat)
        out = np.zeros(flat.shape, dtype=np.int64)
        out[hit] = self.counts[pos[hit]]
        return out

    def at_points(self, points: np.ndarray) -> np.ndarray:
        flat = self.grid.points_to_flat(points)
        vals = np.zeros(flat.shape, dtype=np.int64)
        ok = flat >= 0
        vals[ok] = self.at_cells(flat[ok])
        return vals


# ---------------------------------------------------------------------------
# scalar functionals


def union_volume(family: ConvexFamily, grid: VoxelGrid,
                 shading: Shading | None = None) -> float:
    if len(family) == 0:
        raise EmptyFamily("union of nothing")
    cells = shading.union() if shading is not None else family.union(grid)
    return cells.size * grid.cell_volume


def multiplicity(family: ConvexFamily, shading: Shading,
                 grid: VoxelGrid) -> MultiplicityField:
    if len(family) == 0:
        raise EmptyFamily("no bodies")
    if shading.is_empty():
        raise EmptyShading("all shading parts empty; multiplicity undefined")
    concat = np.concatenate([p for p in shading.parts if p.size])
    support, counts = np.unique(concat, return_counts=True)
    return MultiplicityField(support, counts, grid)


def shading_fraction(family: ConvexFamily, shading: Shading, grid: VoxelGrid) -> float:
    """Fraction of the family's total mass that is shaded (in [0, 1])."""
    if len(family) == 0:
        raise EmptyFamily("no bodies")
    denom = int(round(family.voxel_volumes(grid).sum() / grid.cell_volume))
    if denom == 0:
        return 0.0
    return shading.total_cells / denom


def members_of(family: ConvexFamily, K: OrientedBox, tol: float = 1e-9) -> np.ndarray:
    """Ids of bodies contained in K (exact corner tests)."""
    if len(family) == 0:
        return np.empty(0, dtype=int)
    corners = np.stack([b.corners() for b in family.boxes])
    return np.nonzero(contained_mask(K, corners, tol=tol))[0]


def delta_density(family: ConvexFamily, K: OrientedBox, grid: VoxelGrid) -> float:
    """Density of the family in K: total member volume over |K| (voxel measures)."""
    if len(family) == 0:
        raise EmptyFamily("no bodies")
    kvol = voxelize(K, grid).size * grid.cell_volume
    if kvol == 0.0:
        raise ZeroBaseDensity(f"test set has zero voxel volume: {K}")
    ids = members_of(family, K)
    return float(family.voxel_volumes(grid)[ids].sum() / kvol)


# ---------------------------------------------------------------------------
# delta_max candidate catalog


@dataclass(frozen=True)
class DensityRecord:
    value: float
    argmax: OrientedBox
    mode: str
    n_candidates: int


def _snap(points: np.ndarray, spacing: float) -> np.ndarray:
    return np.round(points / spacing) * spacing


def _pair_indices(n: int, cap: int, stride_base: int = 1) -> np.ndarray:
    """Deterministic body subsample used for pair candidates."""
    stride = stride_base
    while (n // stride) ** 2 // 2 > cap * 4:
        stride *= 2
    return np.arange(0, n, stride)


def _dyadic_extent_triples(family: ConvexFamily, grid: VoxelGrid) -> list[tuple[float, float, float]]:
    dims = np.array([b.dims for b in family.boxes])
    v1m, v2m, v3m = dims.min(axis=0)
    top = float(max(np.array(grid.dims)) * grid.h)
    lo = max(2.0 * grid.h, v1m / 2.0)
    levels = []
    e = top
    while e >= lo * 0.99:
        levels.append(e)
        e /= 2.0
    out = []
    for e1 in levels:
        if e1 < v1m * 0.99:
            continue
        for e2 in levels:
            if e2 < max(e1, v2m) * 0.99:
                continue
            for e3 in levels:
                if e3 < max(e2, v3m) * 0.99:
                    continue
                out.append((e1, e2, e3))
    return out


def _axis_prefilter(axes3: np.ndarray, v3min: float, K: OrientedBox) -> np.ndarray:
    """Necessary direction condition for a long body to fit inside K."""
    e1, e2, _ = K.dims
    s = 1.0 - (2.0 * e1 / v3min) ** 2 - (2.0 * e2 / v3min) ** 2
    if s <= 0:
        return np.ones(axes3.shape[0], dtype=bool)
    thresh = np.sqrt(s) - 1e-9
    return np.abs(axes3 @ K.axes[2]) >= thresh


class _Scorer:
    """Incremental argmax of density over candidate boxes.

    Member volumes are voxel measures; candidate volumes are analytic except
    for candidates that coincide with a family body (then the cached voxel
    volume is used, so densities like "the body in itself" come out exactly 1).
    """

    def __init__(self, family: ConvexFamily, grid: VoxelGrid,
                 volume_exponent: float = 0.0):
        self.family = family
        self.grid = grid
        self.vols = family.voxel_volumes(grid)
        self.corners = np.stack([b.corners() for b in family.boxes])
        self.centers = np.array([b.center for b in family.boxes])
        self.axes3 = np.array([b.axes[2] for b in family.boxes])
        self.v3min = float(min(b.dims[2] for b in family.boxes))
        self.body_keys = {b.key(): i for i, b in enumerate(family.boxes)}
        self.volume_exponent = float(volume_exponent)
        self.best = -1.0
        self.argmax: OrientedBox | None = None
        self.n_seen = 0

    def offer(self, K: OrientedBox):
        self.n_seen += 1
        sel = np.nonzero(_axis_prefilter(self.axes3, self.v3min, K))[0]
        if sel.size:
            local = np.abs((self.centers[sel] - K.center) @ K.axes.T)
            sel = sel[np.all(local <= K.half_extents + 1e-9, axis=1)]
        if not sel.size:
            return
        sel = sel[contained_mask(K, self.corners[sel])]
        if not sel.size:
            return
        total = float(self.vols[sel].sum())
        i = self.body_keys.get(K.key())
        kvol = float(self.vols[i]) if i is not None else K.volume
        if kvol <= 0:
            return
        val = total / kvol
        if self.volume_exponent:
            val *= kvol ** (-self.volume_exponent)
        if val > self.best + 1e-12:
            self.best = val
            self.argmax = K


def _catalog(family: ConvexFamily, grid: VoxelGrid, mode: str,
             within: OrientedBox | None = None, overrides: dict | None = None):
    """Yield candidate boxes: dilates, pair boxes, net-aligned dyadic boxes, domain.

    Every candidate is derived from a single body or a pair of bodies plus
    family-independent dyadic data, so a subfamily's catalog is a subset of
    the family's — density maxima are monotone under taking subsets.
    """
    from .geometry import direction_net

    n = len(family)
    boxes = family.boxes
    oracle = mode == "oracle"
    dilate_cap = config.get(overrides, "dilate_cap")
    large = n > config.get(overrides, "large_family_threshold")

    def admit(K: OrientedBox) -> bool:
        if within is None:
            return True
        from .geometry import contains

        return contains(within, K, tol=1e-7)

    # (d) the whole domain / the ambient set itself
    dom = within if within is not None else grid.domain
    yield dom

    # (a) concentric dilates of bodies
    ids = np.arange(n)
    if not oracle and n > dilate_cap:
        ids = ids[:: int(np.ceil(n / dilate_cap))]
    for i in ids:
        for c in (1.0, 2.0, 4.0):
            K = boxes[i] if c == 1.0 else boxes[i].dilate(c)
            if admit(K):
                yield K

    # (b) bounding boxes of nearly-parallel pairs
    pair_cap = int(config.get(overrides, "pair_candidate_cap")) if oracle else 20000
    sub = _pair_indices(n, pair_cap, stride_base=1)
    if not oracle:
        sub = sub[:: max(1, len(sub) // 1024)] if len(sub) > 1024 else sub
    if len(sub) >= 2:
        axes3 = np.array([boxes[i].axes[2] for i in sub])
        ratios = np.array([boxes[i].dims[0] / boxes[i].dims[2] for i in sub])
        cap_angle = 2.0 * ratios.max()
        chord = 2.0 * np.sin(min(cap_angle, np.pi / 2) / 2.0)
        canon = axes3 * np.where(axes3[:, 2:3] >= 0, 1.0, -1.0)
        tree = cKDTree(canon)
        pairs = sorted(tree.query_pairs(r=chord + 1e-12))
        emitted = 0
        for a, b in pairs:
            if emitted >= pair_cap:
                break
            i, j = int(sub[a]), int(sub[b])
            ang = float(np.arccos(np.clip(abs(float(axes3[a] @ axes3[b])), 0, 1)))
            if ang > 2.0 * max(ratios[a], ratios[b]) + 1e-12:
                continue
            bi, bj = boxes[i], boxes[j]
            frame = bi.axes
            pts = np.vstack([bi.corners(), bj.corners()])
            local = (pts - bi.center) @ frame.T
            lo, hi = local.min(axis=0), local.max(axis=0)
            center = bi.center + ((lo + hi) / 2.0) @ frame
            K = make_box(center, frame, hi - lo + 1e-12)
            if admit(K):
                emitted += 1
                yield K

    # (c) net-aligned dyadic boxes centered near body centers
    net = direction_net(int(config.get(overrides, "direction_net_size")))
    if oracle:
        dirs = net
    else:
        canon = np.array([b.axes[2] for b in boxes])
        canon = canon * np.where(canon[:, 2:3] >= 0, 1.0, -1.0)
        nearest = np.abs(canon @ net.T).argmax(axis=1)
        dirs = net[np.unique(nearest)]
    triples = _dyadic_extent_triples(family, grid)
    if within is not None:
        # Necessary fit conditions: minimal width, diameter, and volume of a
        # box all shrink under containment, so these never drop a feasible
        # candidate.
        w1 = within.dims[0] * (1 + 1e-6)
        wdiam = 2.0 * within.circumradius * (1 + 1e-6)
        wvol = within.volume * (1 + 3e-6)
        triples = [
            (e1, e2, e3) for (e1, e2, e3) in triples
            if e1 <= w1 and e3 <= wdiam and e1 * e2 * e3 <= wvol
        ]
    centers_all = np.array([b.center for b in boxes])
    center_cap = None if oracle else int(
        config.get(overrides, "search_center_cap_large") if large
        else config.get(overrides, "search_center_cap")
    )
    from .geometry import frame_from_axis

    for d in dirs:
        frame = frame_from_axis(d)
        for (e1, e2, e3) in triples:
            s = max(e1, 2.0 * grid.h)
            cand_centers = [np.unique(_snap(centers_all, s), axis=0)]
            if oracle:
                cand_centers.append(np.unique(_snap(centers_all + s / 2.0, s) - s / 2.0, axis=0))
            cc = np.unique(np.vstack(cand_centers), axis=0)
            if center_cap is not None and cc.shape[0] > center_cap:
                cc = cc[:: int(np.ceil(cc.shape[0] / center_cap))]
            for c in cc:
                K = make_box(c, frame, (e1, e2, e3))
                if admit(K):
                    yield K


def delta_max(family: ConvexFamily, grid: VoxelGrid, mode: str = "search",
              within: OrientedBox | None = None,
              overrides: dict | None = None) -> DensityRecord:
    """Maximal density over the candidate catalog of convex test boxes.

    search mode prunes the catalog deterministically; oracle mode scans it
    exhaustively (and is the ground truth the tests compare against), raising
    BudgetExceeded past the configured candidate cap.
    """
    if len(family) == 0:
        raise EmptyFamily("no bodies")
    if mode not in ("search", "oracle"):
        raise ValueError(f"unknown mode {mode!r}")
    scorer = _Scorer(family, grid)
    cap = config.get(overrides, "oracle_candidate_cap")
    for K in _catalog(family, grid, mode, within=within, overrides=overrides):
        scorer.offer(K)
        if mode == "oracle" and scorer.n_seen > cap:
            raise BudgetExceeded(
                f"oracle catalog exceeded {cap} candidates; use search mode"
            )
    return DensityRecord(scorer.best, scorer.argmax, mode, scorer.n_seen)


def frostman_const(family: ConvexFamily, K: OrientedBox, grid: VoxelGrid,
                   mode: str = "search", overrides: dict | None = None) -> float:
    """Worst concentration ratio sup_{K' in K} density(K') / density(K)."""
    base = delta_density(family, K, grid)
    if base == 0.0:
        raise ZeroBaseDensity("family has zero density in the base set")
    rec = delta_max(family, grid, mode=mode, within=K, overrides=overrides)
    return max(1.0, rec.value / base)


# ---------------------------------------------------------------------------
# dedup


def distinct_representatives(family: ConvexFamily, grid: VoxelGrid,
                             overlap_fraction: float | None = None) -> np.ndarray:
    """Greedy ids of essentially distinct bodies (pairwise overlap bounded).

    A body is dropped when more than ``overlap_fraction`` of its voxel mass
    lies inside an already-kept body.
    """
    frac = config.DEFAULTS["distinctness_overlap_fraction"] if overlap_fraction is None \
        else overlap_fraction
    sets = family.voxel_sets(grid)
    centers = np.array([b.center for b in family.boxes])
    radii = np.array([b.circumradius for b in family.boxes])
    tree = cKDTree(centers)
    kept: list[int] = []
    for i in range(len(family)):
        si = sets[i]
        if si.size == 0:
            continue
        ok = True
        for j in tree.query_ball_point(centers[i], r=radii[i] + radii.max()):
            if j not in kept or j == i:
                continue
            common = np.intersect1d(si, sets[j], assume_unique=True).size
            if common > frac * si.size:
                ok = False
                break
        if ok:
            kept.append(i)
    return np.array(kept, dtype=int)
