"""Shading refinements on voxel grids.

This module owns the pigeonholing toolkit and the multiplicity pipelines:
dyadic refinements of a shaded family, uniform tube hierarchies across a
geometric ladder of scales, shadings induced on a coarser cover, and the
constant-multiplicity / two-scale / typical-angle / plank-reduction
refinements built on top of them.  Every operation returns the refined
objects together with records of how much shading mass survived and an
audit of the inequalities the refinement is supposed to realize.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import config
from .audit import AuditLine, AuditSet
from .errors import (
    DegeneratePlanks,
    DensityTooLow,
    EmptyInput,
    EmptyShading,
    FrostmanAuditFailed,
    MultiplicityTooLow,
    ScaleOffLadder,
    TooFewTubes,
)
from .geometry import contains, make_box, plank_angle
from .measures import (
    ConvexFamily,
    Shading,
    VoxelGrid,
    delta_density,
    family_of,
    frostman_const,
    multiplicity,
    shading_fraction,
    union_volume,
    voxelize,
)

__all__ = [
    "RefinementRecord",
    "UniformTubeSet",
    "ConstantMultiplicityResult",
    "TwoScaleResult",
    "PlankAngleResult",
    "PlankReduction",
    "ladder_for",
    "natural_step_count",
    "angle_search_params",
    "pigeonhole",
    "uniformize",
    "induced_shading",
    "dilate_cells",
    "ball_cell_counts",
    "refine_constant_multiplicity",
    "two_scale_refine",
    "slab_typical_angle",
    "plank_typical_angle",
    "reduce_planks",
]


# --------------------------------------------------------------------------
# records and ladders
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RefinementRecord:
    """Mass bookkeeping for one refinement step."""

    stage: str
    mass_before: float
    mass_after: float
    detail: str = ""

    @property
    def ratio(self) -> float:
        """Fraction of shading mass retained by this step."""
        if self.mass_before <= 0:
            return 1.0
        return self.mass_after / self.mass_before


def natural_step_count(delta: float) -> int:
    """Default number of ladder steps: ceil(log log 1/delta), natural logs."""
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    inner = math.log(1.0 / delta)
    if inner <= 1.0:
        return 1
    return max(1, math.ceil(math.log(inner) - 1e-9))


def ladder_for(delta: float, steps: int | None = None) -> tuple[float, ...]:
    """Geometric scale ladder 1 = rho_0 > rho_1 > ... > rho_M = delta."""
    m = natural_step_count(delta) if steps is None else int(steps)
    if m < 1:
        raise ValueError("ladder needs at least one step")
    return tuple(delta ** (k / m) for k in range(m + 1))


def _log2_inv(scale: float) -> float:
    """log2(1/scale), floored at 1 so polylog allowances stay sane."""
    return max(1.0, math.log2(1.0 / scale))


def _family_scale(family: ConvexFamily) -> float:
    s = family.scale
    if s > 0:
        return s
    return float(min(box.dims[0] for box in family))


# --------------------------------------------------------------------------
# dyadic class selection
# --------------------------------------------------------------------------


def _dyadic_keys(values: np.ndarray) -> np.ndarray:
    vals = np.asarray(values, dtype=float)
    if np.any(vals <= 0):
        raise ValueError("dyadic classes need positive values")
    return np.floor(np.log2(vals) + 1e-12).astype(np.int64)


def _argmax_class(keys: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pick the dyadic class with the largest total weight.

    Returns (winning key row, boolean mask).  Ties go to the
    lexicographically smallest key so reruns are reproducible.
    """
    keys = np.atleast_2d(np.asarray(keys, dtype=np.int64))
    if keys.shape[0] == 1 and keys.shape[1] == len(weights) and keys.shape[0] != len(weights):
        keys = keys.T
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    totals = np.zeros(len(uniq))
    np.add.at(totals, inverse, np.asarray(weights, dtype=float))
    best = 0
    for i in range(1, len(uniq)):
        if totals[i] > totals[best] + 1e-12:
            best = i
    return uniq[best], inverse == best


# --------------------------------------------------------------------------
# pigeonhole
# --------------------------------------------------------------------------


def pigeonhole(
    family: ConvexFamily,
    shading: Shading | None = None,
    mode: str = "dims",
    grid: VoxelGrid | None = None,
    overrides: dict | None = None,
):
    """Keep one dyadic class of a shaded family.

    mode "dims"      -> (member ids, record): one class of dyadic dimension
                        triples, chosen by total volume.
    mode "mass"      -> (member ids, record): one class of dyadic per-member
                        shading masses (members with empty shading drop out).
    mode "level_set" -> ((cells, level), record): cells of the multiplicity
                        field whose counts lie in [level, 2*level), chosen to
                        maximize level * cell count.
    mode "joint"     -> (member ids, record): dims class then mass class.
    """
    if len(family) == 0:
        raise EmptyInput("cannot pigeonhole an empty family")

    if mode == "dims":
        dims = np.array([box.dims for box in family])
        keys = np.floor(np.log2(dims) + 1e-12).astype(np.int64)
        vols = np.array([box.volume for box in family])
        key, mask = _argmax_class(keys, vols)
        ids = np.flatnonzero(mask)
        rec = RefinementRecord(
            "pigeonhole-dims",
            float(vols.sum()),
            float(vols[mask].sum()),
            detail=f"kept dyadic dims class {tuple(int(k) for k in key)}, {len(ids)}/{len(family)} members",
        )
        return ids, rec

    if mode == "mass":
        if shading is None:
            raise EmptyInput("mass pigeonhole needs a shading")
        masses = np.array([p.size for p in shading.parts], dtype=float)
        live = masses > 0
        if not live.any():
            raise EmptyInput("mass pigeonhole needs a nonempty shading")
        keys = _dyadic_keys(masses[live])
        key, sub = _argmax_class(keys.reshape(-1, 1), masses[live])
        ids = np.flatnonzero(live)[sub]
        rec = RefinementRecord(
            "pigeonhole-mass",
            float(masses.sum()),
            float(masses[ids].sum()),
            detail=f"kept per-member mass class 2^{int(key[0])}, {len(ids)}/{len(family)} members",
        )
        return ids, rec

    if mode == "level_set":
        if shading is None or grid is None:
            raise EmptyInput("level_set pigeonhole needs a shading and a grid")
        if shading.is_empty():
            raise EmptyInput("level_set pigeonhole needs a nonempty shading")
        fld = multiplicity(family, shading, grid)
        keys = _dyadic_keys(fld.counts)
        uniq = np.unique(keys)
        best_key, best_score = None, -1.0
        for k in uniq:
            sel = keys == k
            score = float(2.0**k) * int(sel.sum())
            if score > best_score + 1e-12:
                best_key, best_score = int(k), score
        mask = keys == best_key
        cells = fld.support[mask]
        level = float(2.0**best_key)
        total = float(fld.counts.sum())
        # The selection guarantees level * |cells| >= total / (number of
        # dyadic count classes); the classical log2(#members) lower bound is
        # recorded here rather than enforced.
        bound = total / max(1.0, math.log2(max(2, len(family))))
        rec = RefinementRecord(
            "pigeonhole-level-set",
            total,
            float(fld.counts[mask].sum()),
            detail=f"level {level:g} on {cells.size} cells; level*cells={best_score:g} vs count-sum/log2(n)={bound:g}",
        )
        return (cells, level), rec

    if mode == "joint":
        ids_dims, rec1 = pigeonhole(family, shading, mode="dims", grid=grid, overrides=overrides)
        if shading is None:
            rec = RefinementRecord("pigeonhole-joint", rec1.mass_before, rec1.mass_after, rec1.detail)
            return ids_dims, rec
        sub_fam = family.subfamily(ids_dims)
        sub_shading = Shading(sub_fam, grid if grid is not None else shading.grid,
                              tuple(shading.parts[i] for i in ids_dims))
        ids_mass, rec2 = pigeonhole(sub_fam, sub_shading, mode="mass")
        ids = ids_dims[ids_mass]
        rec = RefinementRecord(
            "pigeonhole-joint",
            rec1.mass_before,
            float(sum(shading.parts[i].size for i in ids)),
            detail=f"{rec1.detail}; then {rec2.detail}",
        )
        return ids, rec

    raise ValueError(f"unknown pigeonhole mode {mode!r}")


# --------------------------------------------------------------------------
# uniform tube hierarchies
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class UniformTubeSet:
    """Tubes organized along a scale ladder with comparable branching.

    parents[k] is a family of rho_k-tubes covering every member;
    assignments[k][i] is the parent of tube i at scale k; branching[k] is
    the dyadic level of tubes-per-parent at scale k (every parent holds a
    count in [branching[k], 2*branching[k])).  Scale 0 is the coarsest;
    the last scale is the tubes themselves.
    """

    tubes: ConvexFamily
    ladder: tuple[float, ...]
    parents: tuple[ConvexFamily, ...]
    assignments: tuple[np.ndarray, ...]
    branching: tuple[int, ...]

    def __post_init__(self):
        if len(self.parents) != len(self.ladder) or len(self.assignments) != len(self.ladder):
            raise ValueError("one parent family and assignment per ladder scale")
        frozen = tuple(np.asarray(a, dtype=np.int64).copy() for a in self.assignments)
        for arr in frozen:
            arr.setflags(write=False)
        object.__setattr__(self, "assignments", frozen)

    @property
    def delta(self) -> float:
        return self.ladder[-1]

    @property
    def n_steps(self) -> int:
        return len(self.ladder) - 1

    def scale_index(self, rho: float) -> int:
        for k, r in enumerate(self.ladder):
            if abs(r - rho) <= 1e-9 * max(1.0, r):
                return k
        raise ScaleOffLadder(f"scale {rho} is not on the ladder {self.ladder}")

    def tubes_in(self, k: int, parent_id: int) -> np.ndarray:
        return np.flatnonzero(self.assignments[k] == parent_id)

    def blocks_at(self, k: int) -> list[np.ndarray]:
        assign = self.assignments[k]
        return [np.flatnonzero(assign == p) for p in range(len(self.parents[k]))]

    def validate(self) -> None:
        """Check the factor-2 branching invariant at every scale."""
        for k in range(len(self.ladder)):
            counts = np.bincount(self.assignments[k], minlength=len(self.parents[k]))
            counts = counts[counts > 0]
            level = self.branching[k]
            if counts.size and not (counts.min() >= level and counts.max() < 2 * level + 1e-9):
                raise ValueError(
                    f"scale {k}: per-parent counts {counts.min()}..{counts.max()} "
                    f"break the factor-2 band at level {level}"
                )


def _greedy_parent_cover(tubes: ConvexFamily, ids: np.ndarray, rho: float):
    """Cover the given tubes by rho-tubes, each anchored at the first
    uncovered member.  Returns (parent list, assignment array over ids)."""
    parents: list = []
    assign = np.full(len(ids), -1, dtype=np.int64)
    for j, i in enumerate(ids):
        tube = tubes[int(i)]
        for p, parent in enumerate(parents):
            if contains(parent, tube):
                assign[j] = p
                break
        else:
            length = min(2.0, tube.dims[2] + rho)
            parent = make_box(tube.center, tube.axes, (rho, rho, length), role="tube")
            parents.append(parent)
            assign[j] = len(parents) - 1
    return parents, assign


def uniformize(
    tubes: ConvexFamily,
    rng_seed: int = 0,
    ladder: tuple[float, ...] | None = None,
    overrides: dict | None = None,
) -> tuple[UniformTubeSet, RefinementRecord]:
    """Extract a sub-collection that is uniform across the scale ladder.

    At each intermediate scale a greedy cover by rho-tubes is built and the
    per-parent counts are pigeonholed into one dyadic class, sweeping from
    the coarsest scale down until the classes are stable.  The retained
    fraction is recorded; it is at least (log2 n)^{-M} up to the greedy
    cover's slack.
    """
    n = len(tubes)
    if n < 4:
        raise TooFewTubes(f"uniformization needs at least 4 tubes, got {n}")
    delta = _family_scale(tubes)
    if ladder is None:
        ladder = ladder_for(delta)
    ladder = tuple(float(r) for r in ladder)
    m = len(ladder) - 1

    keep = np.arange(n)
    for _ in range(max(2, m + 1)):
        changed = False
        for k in range(m):
            rho = ladder[k]
            parents, assign = _greedy_parent_cover(tubes, keep, rho)
            counts = np.bincount(assign, minlength=len(parents))
            per_tube = counts[assign].astype(float)
            keys = _dyadic_keys(per_tube)
            _, mask = _argmax_class(keys.reshape(-1, 1), np.ones_like(per_tube))
            if not mask.all():
                keep = keep[mask]
                changed = True
        if not changed:
            break

    # Rebuild trimmed covers and levels on the surviving tubes.
    parents_out: list[ConvexFamily] = []
    assigns_out: list[np.ndarray] = []
    levels: list[int] = []
    for k in range(m + 1):
        if k == m:
            fam = tubes.subfamily(keep)
            assign = np.arange(len(keep))
        else:
            raw, assign = _greedy_parent_cover(tubes, keep, ladder[k])
            used = np.unique(assign)
            remap = {int(p): q for q, p in enumerate(used)}
            fam = family_of([raw[int(p)] for p in used], label=f"parents@{ladder[k]:g}")
            assign = np.array([remap[int(p)] for p in assign], dtype=np.int64)
        counts = np.bincount(assign, minlength=len(fam))
        counts = counts[counts > 0]
        level = int(2 ** int(np.floor(np.log2(counts.min())))) if counts.size else 1
        levels.append(level)
        parents_out.append(fam)
        assigns_out.append(assign)

    uniform = UniformTubeSet(
        tubes=parents_out[m],
        ladder=ladder,
        parents=tuple(parents_out),
        assignments=tuple(assigns_out),
        branching=tuple(levels),
    )

    # Overlap audit on a seeded sample: how many parents contain each tube.
    rng = np.random.default_rng(rng_seed)
    sample = rng.choice(len(uniform.tubes), size=min(32, len(uniform.tubes)), replace=False)
    worst = 1
    for k in range(m):
        fam = uniform.parents[k]
        for i in sample:
            tube = uniform.tubes[int(i)]
            hits = sum(1 for p in fam if contains(p, tube))
            worst = max(worst, hits)
    retained = len(keep) / n
    floor = math.log2(max(2, n)) ** (-m)
    rec = RefinementRecord(
        "uniformize",
        float(n),
        float(len(keep)),
        detail=(
            f"retained {retained:.3g} (recorded floor {floor:.3g}); "
            f"branching levels {levels}; max parents per sampled tube {worst}"
        ),
    )
    return uniform, rec


# --------------------------------------------------------------------------
# dense-window helpers (Chebyshev-box dilation and ball counts)
# --------------------------------------------------------------------------


def _cells_to_ijk(cells: np.ndarray, grid: VoxelGrid) -> np.ndarray:
    nx, ny, nz = grid.dims
    ix = cells // (ny * nz)
    rem = cells % (ny * nz)
    return np.stack([ix, rem // nz, rem % nz], axis=1)


def _ijk_to_cells(ijk: np.ndarray, grid: VoxelGrid) -> np.ndarray:
    nx, ny, nz = grid.dims
    return ijk[:, 0] * (ny * nz) + ijk[:, 1] * nz + ijk[:, 2]


def dilate_cells(cells: np.ndarray, grid: VoxelGrid, radius_cells: int) -> np.ndarray:
    """Chebyshev-box dilation of a voxel set by the given cell radius."""
    cells = np.asarray(cells, dtype=np.int64)
    if cells.size == 0 or radius_cells <= 0:
        return np.unique(cells)
    r = int(radius_cells)
    ijk = _cells_to_ijk(cells, grid)
    lo = np.maximum(ijk.min(axis=0) - r, 0)
    hi = np.minimum(ijk.max(axis=0) + r, np.array(grid.dims) - 1)
    shape = tuple(hi - lo + 1)
    dense = np.zeros(shape, dtype=np.uint8)
    local = ijk - lo
    dense[local[:, 0], local[:, 1], local[:, 2]] = 1
    dense = ndimage.maximum_filter(dense, size=2 * r + 1, mode="constant")
    out = np.argwhere(dense > 0) + lo
    return np.unique(_ijk_to_cells(out, grid))


def ball_cell_counts(
    union_cells: np.ndarray,
    query_cells: np.ndarray,
    grid: VoxelGrid,
    radius_cells: int,
) -> np.ndarray:
    """Count union cells inside the Chebyshev ball around each query cell."""
    union_cells = np.asarray(union_cells, dtype=np.int64)
    query_cells = np.asarray(query_cells, dtype=np.int64)
    if query_cells.size == 0:
        return np.zeros(0, dtype=np.int64)
    r = max(0, int(radius_cells))
    if union_cells.size == 0:
        return np.zeros(query_cells.size, dtype=np.int64)
    uij = _cells_to_ijk(union_cells, grid)
    qij = _cells_to_ijk(query_cells, grid)
    lo = np.minimum(uij.min(axis=0), qij.min(axis=0)) - r
    hi = np.maximum(uij.max(axis=0), qij.max(axis=0)) + r
    lo = np.maximum(lo, 0)
    hi = np.minimum(hi, np.array(grid.dims) - 1)
    shape = tuple(hi - lo + 1)
    dense = np.zeros(shape, dtype=np.int32)
    loc = np.clip(uij - lo, 0, np.array(shape) - 1)
    dense[loc[:, 0], loc[:, 1], loc[:, 2]] = 1
    # 3-d summed-area table with a zero border for clean corner lookups.
    sat = np.zeros(tuple(s + 1 for s in shape), dtype=np.int64)
    sat[1:, 1:, 1:] = dense.cumsum(axis=0).cumsum(axis=1).cumsum(axis=2)
    q = qij - lo
    a = np.clip(q - r, 0, None)
    b = np.minimum(q + r, np.array(shape) - 1) + 1
    x0, y0, z0 = a[:, 0], a[:, 1], a[:, 2]
    x1, y1, z1 = b[:, 0], b[:, 1], b[:, 2]
    counts = (
        sat[x1, y1, z1]
        - sat[x0, y1, z1] - sat[x1, y0, z1] - sat[x1, y1, z0]
        + sat[x0, y0, z1] + sat[x0, y1, z0] + sat[x1, y0, z0]
        - sat[x0, y0, z0]
    )
    return counts


# --------------------------------------------------------------------------
# induced shadings
# --------------------------------------------------------------------------


def induced_shading(
    cover: ConvexFamily,
    blocks,
    fine_shading: Shading,
    grid: VoxelGrid,
) -> Shading:
    """Shading each cover element inherits from its block's shaded union.

    The block union is thickened by the cover's thin dimension (Chebyshev
    box) and intersected with the cover element's voxel set, so every fine
    shaded cell of the block remains shaded in the cover element.
    """
    parts = []
    for w, ids in enumerate(blocks):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size == 0:
            parts.append(np.empty(0, dtype=np.int64))
            continue
        cells = np.unique(np.concatenate([fine_shading.parts[int(i)] for i in ids]))
        if cells.size == 0:
            parts.append(np.empty(0, dtype=np.int64))
            continue
        w1 = cover[w].dims[0]
        r = int(round(w1 / grid.h))
        thick = dilate_cells(cells, grid, r)
        wcells = voxelize(cover[w], grid)
        parts.append(np.intersect1d(thick, wcells))
    return Shading(cover, grid, tuple(parts))


# --------------------------------------------------------------------------
# the constant-multiplicity pipeline
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ConstantMultiplicityResult:
    """Output of the multiplicity-equalizing refinement."""

    family: ConvexFamily
    fine_shading: Shading
    cover: ConvexFamily
    cover_ids: np.ndarray
    blocks: tuple
    coarse_shading: Shading
    fine_level: float
    coarse_level: float
    frostman_bound: float
    audit: AuditSet
    records: tuple


def _restrict_parts(shading: Shading, member_mask: np.ndarray, allowed_per_member) -> Shading:
    parts = []
    for i, part in enumerate(shading.parts):
        if not member_mask[i] or part.size == 0:
            parts.append(np.empty(0, dtype=np.int64))
            continue
        allowed = allowed_per_member(i)
        parts.append(part[np.isin(part, allowed)] if allowed is not None else part)
    return Shading(shading.family, shading.grid, tuple(parts))


def refine_constant_multiplicity(
    family: ConvexFamily,
    cover: ConvexFamily,
    blocks,
    shading: Shading,
    grid: VoxelGrid,
    frostman_bound: float | None = None,
    mode: str = "search",
    overrides: dict | None = None,
) -> ConstantMultiplicityResult:
    """Refine a blocked shading until multiplicities are locally constant.

    Successive dyadic pigeonholes select one class of block cardinalities,
    per-member masses, per-cell-per-block multiplicities (with a thickened
    proxy for the cover multiplicity), per-block shading masses, and finally
    one class of thin-dimension ball fullness.  The audit checks mass
    retention, the induced density lower bound, constancy of the coarse and
    fine multiplicities, the multiplicity product bound, exact pointwise
    containment, and ball fullness.
    """
    if shading.is_empty():
        raise EmptyShading("constant-multiplicity refinement needs a nonempty shading")
    blocks = [np.asarray(b, dtype=np.int64) for b in blocks]
    if len(blocks) != len(cover):
        raise ValueError("one block per cover element")
    records: list[RefinementRecord] = []
    audit = AuditSet()
    n_members = len(family)
    delta = _family_scale(family)
    big_l = _log2_inv(delta)
    mass_in = shading.mass
    lam_in = shading_fraction(family, shading, grid)
    mu_in = multiplicity(family, shading, grid).mu

    # Frostman preconditions per block, measured on the input.
    c_meas = 1.0
    for w, ids in enumerate(blocks):
        if ids.size == 0:
            continue
        cf = frostman_const(family.subfamily(ids), cover[w], grid, mode=mode, overrides=overrides)
        c_meas = max(c_meas, cf)
    if frostman_bound is not None and c_meas > frostman_bound + 1e-9:
        raise FrostmanAuditFailed(
            f"per-block clustering constant {c_meas:.3g} exceeds the stated bound {frostman_bound:.3g}"
        )
    c_used = c_meas if frostman_bound is None else min(c_meas, frostman_bound)

    # --- step 1: cover dims + block cardinality pigeonhole -----------------
    live = np.array([ids.size > 0 and sum(shading.parts[int(i)].size for i in ids) > 0 for ids in blocks])
    if not live.any():
        raise EmptyInput("no block carries shading mass")
    dimkeys = np.array([np.floor(np.log2(cover[w].dims) + 1e-12) for w in range(len(cover))], dtype=np.int64)
    sizes = np.array([max(1, ids.size) for ids in blocks], dtype=float)
    bmass = np.array([float(sum(shading.parts[int(i)].size for i in ids)) for ids in blocks])
    keys = np.column_stack([dimkeys, _dyadic_keys(sizes).reshape(-1, 1)])
    key, mask = _argmax_class(keys[live], bmass[live])
    kept_w = np.flatnonzero(live)[mask]
    records.append(RefinementRecord(
        "block-cardinality", float(bmass.sum()), float(bmass[kept_w].sum()),
        detail=f"kept {kept_w.size}/{len(cover)} cover elements in dims/size class {tuple(int(k) for k in key)}",
    ))

    member_mask = np.zeros(n_members, dtype=bool)
    for w in kept_w:
        member_mask[blocks[int(w)]] = True
    shading1 = shading.restrict_ids(np.flatnonzero(member_mask))

    # --- step 2: per-member mass pigeonhole --------------------------------
    masses = np.array([p.size for p in shading1.parts], dtype=float)
    live_m = masses > 0
    mkeys = _dyadic_keys(masses[live_m])
    mkey, msub = _argmax_class(mkeys.reshape(-1, 1), masses[live_m])
    kept_members = np.flatnonzero(live_m)[msub]
    shading2 = shading1.restrict_ids(kept_members)
    member_mask = np.zeros(n_members, dtype=bool)
    member_mask[kept_members] = True
    records.append(RefinementRecord(
        "member-mass", float(masses.sum()), float(masses[kept_members].sum()),
        detail=f"kept per-member mass class 2^{int(mkey[0])}, {kept_members.size} members",
    ))

    # --- step 3: per-cell-per-block multiplicity class ---------------------
    all_cells = shading2.union()
    pos = {  # per kept cover element: cells and tube counts on them
    }
    for w in kept_w:
        ids = [int(i) for i in blocks[int(w)] if member_mask[int(i)] and shading2.parts[int(i)].size]
        if not ids:
            continue
        cat = np.concatenate([shading2.parts[i] for i in ids])
        cells_w, counts_w = np.unique(cat, return_counts=True)
        pos[int(w)] = (cells_w, counts_w)
    if not pos:
        raise EmptyInput("no cover element retained shading mass")

    n_cells = all_cells.size
    class_ids = sorted({int(k) for _, (cw, nw) in pos.items() for k in np.unique(_dyadic_keys(nw))})
    best = None  # (mass, i, jn, jt, selector data)
    per_class_fields = {}
    for i in class_ids:
        n_i = np.zeros(n_cells, dtype=np.int32)
        m_i = np.zeros(n_cells, dtype=np.int64)
        t_i = np.zeros(n_cells, dtype=np.int32)
        for w, (cells_w, counts_w) in pos.items():
            sel = _dyadic_keys(counts_w) == i
            if not sel.any():
                continue
            p = np.searchsorted(all_cells, cells_w[sel])
            n_i[p] += 1
            m_i[p] += counts_w[sel]
            r = int(round(cover[int(w)].dims[0] / grid.h))
            thick = dilate_cells(cells_w[sel], grid, r)
            hit = thick[np.isin(thick, all_cells, assume_unique=True)]
            t_i[np.searchsorted(all_cells, hit)] += 1
        live_c = n_i > 0
        if not live_c.any():
            continue
        jn = np.floor(np.log2(n_i[live_c])).astype(np.int64)
        jt = np.floor(np.log2(np.maximum(t_i[live_c], 1))).astype(np.int64)
        uniq, inv = np.unique(np.column_stack([jn, jt]), axis=0, return_inverse=True)
        tot = np.zeros(len(uniq))
        np.add.at(tot, inv, m_i[live_c].astype(float))
        for u, row in enumerate(uniq):
            if best is None or tot[u] > best[0] + 1e-12:
                best = (tot[u], -i, -int(row[0]), -int(row[1]))
        per_class_fields[i] = (n_i, t_i, m_i)

    _, neg_i, neg_jn, neg_jt = best
    i_star, jn_star, jt_star = -neg_i, -neg_jn, -neg_jt
    n_i, t_i, m_i = per_class_fields[i_star]
    jn_all = np.full(n_cells, -(10**9), dtype=np.int64)
    livec = n_i > 0
    jn_all[livec] = np.floor(np.log2(n_i[livec])).astype(np.int64)
    jt_all = np.floor(np.log2(np.maximum(t_i, 1))).astype(np.int64)
    omega_mask = (jn_all == jn_star) & (jt_all == jt_star)
    omega = all_cells[omega_mask]

    allowed_by_block = {}
    for w, (cells_w, counts_w) in pos.items():
        sel = _dyadic_keys(counts_w) == i_star
        allowed_by_block[w] = np.intersect1d(cells_w[sel], omega)
    block_of = np.full(n_members, -1, dtype=np.int64)
    for w in pos:
        block_of[blocks[w]] = w

    def allowed_fine(i):
        w = int(block_of[i])
        return allowed_by_block.get(w, np.empty(0, dtype=np.int64))

    shading3 = _restrict_parts(shading2, member_mask, allowed_fine)
    records.append(RefinementRecord(
        "cell-multiplicity-class", shading2.mass, shading3.mass,
        detail=f"fine level 2^{i_star}, cover-count level 2^{jn_star}, thickened-count level 2^{jt_star}",
    ))
    fine_level = float(2.0**i_star)

    # --- step 4: per-block mass pigeonhole ---------------------------------
    bmass3 = np.array([float(sum(shading3.parts[int(i)].size for i in blocks[int(w)])) for w in kept_w])
    live_b = bmass3 > 0
    if not live_b.any():
        raise EmptyInput("multiplicity class selection emptied every block")
    bkeys = _dyadic_keys(bmass3[live_b])
    bkey, bsub = _argmax_class(bkeys.reshape(-1, 1), bmass3[live_b])
    kept_w2 = kept_w[np.flatnonzero(live_b)[bsub]]
    member_mask2 = np.zeros(n_members, dtype=bool)
    for w in kept_w2:
        member_mask2[blocks[int(w)]] = True
    shading4 = shading3.restrict_ids(np.flatnonzero(member_mask2 & member_mask))
    records.append(RefinementRecord(
        "block-mass", shading3.mass, shading4.mass,
        detail=f"kept per-block mass class 2^{int(bkey[0])}, {kept_w2.size} cover elements",
    ))

    # --- step 5: ball-fullness equalization --------------------------------
    cover_kept = cover.subfamily(kept_w2)
    blocks_kept = [blocks[int(w)] for w in kept_w2]
    w1 = float(min(cover[int(w)].dims[0] for w in kept_w2))
    r = max(1, int(round(w1 / grid.h)))
    shading5 = shading4
    for _round in range(4):
        ucells = shading5.union()
        if ucells.size == 0:
            raise EmptyInput("equalization emptied the shading")
        f = ball_cell_counts(ucells, ucells, grid, r)
        if float(f.max()) <= 4.0 * float(max(1, f.min())):
            break
        fkeys = _dyadic_keys(np.maximum(f, 1))
        fld = multiplicity(family, shading5, grid)
        weights = fld.at_cells(ucells).astype(float)
        fkey, fmask = _argmax_class(fkeys.reshape(-1, 1), weights)
        kept_cells = ucells[fmask]
        before = shading5.mass
        shading5 = shading5.restrict_cells(kept_cells)
        records.append(RefinementRecord(
            "ball-fullness", before, shading5.mass,
            detail=f"kept fullness class 2^{int(fkey[0])} on {kept_cells.size} cells",
        ))
        if shading5.is_empty():
            raise EmptyInput("ball-fullness equalization emptied the shading")

    fine_final = shading5
    alive = np.array([
        any(fine_final.parts[int(i)].size for i in ids) for ids in blocks_kept
    ])
    if not alive.any():
        raise EmptyInput("ball-fullness equalization emptied every cover block")
    if not alive.all():
        kept_w2 = kept_w2[alive]
        cover_kept = cover.subfamily(kept_w2)
        blocks_kept = [blocks[int(w)] for w in kept_w2]
    coarse_final = induced_shading(cover_kept, blocks_kept, fine_final, grid)

    # --- audits -------------------------------------------------------------
    n_log = math.log2(max(4, n_members))
    audit.ge("mass-retention", fine_final.mass / mass_in, n_log**-8)

    lam_coarse = shading_fraction(cover_kept, coarse_final, grid)
    audit.ge("induced-density", lam_coarse, big_l**-8 * lam_in**2 / c_used)
    wvols = cover_kept.voxel_volumes(grid)
    dens = np.array([
        p.size * grid.cell_volume / v if v > 0 else 0.0
        for p, v in zip(coarse_final.parts, wvols)
    ])
    audit.ge("induced-density-per-cover", float(dens.min()) if dens.size else 0.0,
             big_l**-8 * lam_in**2 / c_used)

    cfld = multiplicity(cover_kept, coarse_final, grid)
    ratio_c = cfld.max_value / max(1, cfld.counts.min())
    audit.le("coarse-multiplicity-constant", ratio_c, 4.0)
    coarse_level = float(2 ** int(np.floor(np.log2(max(1, cfld.counts.min())))))

    per_cell_counts = []
    for w, ids in zip(kept_w2, blocks_kept):
        ids = [int(i) for i in ids if fine_final.parts[int(i)].size]
        if not ids:
            continue
        cat = np.concatenate([fine_final.parts[i] for i in ids])
        _, cnt = np.unique(cat, return_counts=True)
        per_cell_counts.append(cnt)
    allc = np.concatenate(per_cell_counts)
    audit.le("fine-multiplicity-constant", float(allc.max() / allc.min()), 2.0)

    mu_coarse = cfld.mu
    mu_fine_w = []
    for w, ids in zip(kept_w2, blocks_kept):
        sub = family.subfamily(ids)
        subsh = Shading(sub, grid, tuple(fine_final.parts[int(i)] for i in ids))
        if subsh.is_empty():
            continue
        mu_fine_w.append(multiplicity(sub, subsh, grid).mu)
    prod = mu_coarse * (min(mu_fine_w) if mu_fine_w else 0.0)
    audit.le("multiplicity-product", mu_in / prod if prod > 0 else math.inf, big_l**8)

    violations = 0
    for slot, ids in enumerate(blocks_kept):
        wpart = coarse_final.parts[slot]
        for i in ids:
            part = fine_final.parts[int(i)]
            if part.size:
                violations += int((~np.isin(part, wpart)).sum())
    audit.le("pointwise-containment", float(violations), 0.0)

    ucells_final = fine_final.union()
    f = ball_cell_counts(ucells_final, ucells_final, grid, r)
    f = np.maximum(f, 1)
    audit.le("ball-fullness-constant", float(f.max() / f.min()), 4.0)

    return ConstantMultiplicityResult(
        family=family,
        fine_shading=fine_final,
        cover=cover_kept,
        cover_ids=kept_w2,
        blocks=tuple(blocks_kept),
        coarse_shading=coarse_final,
        fine_level=fine_level,
        coarse_level=coarse_level,
        frostman_bound=c_used,
        audit=audit,
        records=tuple(records),
    )


# --------------------------------------------------------------------------
# two-scale refinement
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TwoScaleResult:
    """Refinement of a uniform tube set against one intermediate scale."""

    rho: float
    coarse_family: ConvexFamily
    coarse_shading: Shading
    fine_shading: Shading
    fine_level: float
    coarse_level: float
    product_constant: float
    audit: AuditSet
    records: tuple


def two_scale_refine(
    uniform: UniformTubeSet,
    shading: Shading,
    rho: float,
    grid: VoxelGrid,
    overrides: dict | None = None,
) -> TwoScaleResult:
    """Split a shaded uniform tube set across the given ladder scale.

    The rho-parents act as the cover; the constant-multiplicity machinery
    equalizes the shading, and the audit checks the multiplicity product,
    exact pointwise containment, the coarse/fine volume relation, and the
    density retained by the coarse shading.
    """
    k = uniform.scale_index(rho)
    tubes = uniform.tubes
    if shading.family is not tubes and len(shading.family) != len(tubes):
        raise ValueError("shading must live on the uniform set's tubes")
    delta = uniform.delta
    big_l = _log2_inv(delta)
    lam_in = shading_fraction(tubes, shading, grid)
    mu_in = multiplicity(tubes, shading, grid).mu

    # Pre-measure: per-tube masses against the mean density.
    masses = np.array([p.size for p in shading.parts], dtype=float)
    vols = tubes.voxel_volumes(grid) / grid.cell_volume
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(vols > 0, masses / np.maximum(vols * lam_in, 1e-300), 0.0)
    pre_spread = float(ratios[masses > 0].max() / ratios[masses > 0].min()) if (masses > 0).any() else 1.0

    res = refine_constant_multiplicity(
        family=tubes,
        cover=uniform.parents[k],
        blocks=uniform.blocks_at(k),
        shading=shading,
        grid=grid,
        frostman_bound=None,
        overrides=overrides,
    )
    audit = res.audit
    records = list(res.records)
    records.insert(0, RefinementRecord(
        "two-scale-pre", shading.mass, shading.mass,
        detail=f"per-tube mass/density spread {pre_spread:.3g} (factor-2 target)",
    ))

    mu_coarse = multiplicity(res.cover, res.coarse_shading, grid).mu
    mu_fine_best = 0.0
    for ids in res.blocks:
        sub = tubes.subfamily(ids)
        subsh = Shading(sub, grid, tuple(res.fine_shading.parts[int(i)] for i in ids))
        if subsh.is_empty():
            continue
        mu_fine_best = max(mu_fine_best, multiplicity(sub, subsh, grid).mu)
    prod = mu_coarse * mu_fine_best
    product_constant = mu_in / prod if prod > 0 else math.inf
    audit.le("two-scale-product", product_constant, 64.0)

    lam_coarse = shading_fraction(res.cover, res.coarse_shading, grid)
    exp = config.get(overrides, "two_scale_log_exp")
    audit.ge("two-scale-coarse-density", lam_coarse, big_l ** (-exp) * lam_in)

    # Volume relation: the fine union fills a definite fraction of every
    # rho-ball around the coarse union, so the fine and coarse volumes are
    # comparable after accounting for the mean fullness.
    u_fine = union_volume(tubes, grid, res.fine_shading)
    u_coarse = union_volume(res.cover, grid, res.coarse_shading)
    support = res.coarse_shading.union()
    r = max(1, int(round(rho / grid.h))) if rho >= grid.h else 1
    f = ball_cell_counts(res.fine_shading.union(), support, grid, r)
    fullness = float(np.mean(f)) * grid.cell_volume / ((2 * r + 1) * grid.h) ** 3
    rel = u_fine / max(u_coarse * fullness, 1e-300)
    audit.ge("two-scale-volume", rel, big_l ** (-exp))

    return TwoScaleResult(
        rho=rho,
        coarse_family=res.cover,
        coarse_shading=res.coarse_shading,
        fine_shading=res.fine_shading,
        fine_level=res.fine_level,
        coarse_level=res.coarse_level,
        product_constant=product_constant,
        audit=audit,
        records=tuple(records),
    )


# --------------------------------------------------------------------------
# typical angles
# --------------------------------------------------------------------------


def _pair_overlap_mass(shading: Shading, i: int, j: int) -> int:
    return int(np.intersect1d(shading.parts[i], shading.parts[j]).size)


def slab_typical_angle(
    slabs: ConvexFamily,
    shading: Shading,
    grid: VoxelGrid,
    overrides: dict | None = None,
) -> tuple[float, dict, AuditLine]:
    """Dominant dyadic angle among shaded slab pairs, by incidence mass.

    Counts, for every pair of slabs, the voxel mass of the shaded overlap,
    bins it by the dyadic plane angle (clamped below by the angular
    resolution), and returns the heaviest bin.  That bin always carries at
    least a 1/log2(1/scale) fraction of the total pair mass because there
    are at most that many bins.
    """
    fld = multiplicity(slabs, shading, grid)
    if fld.mu < 2.0:
        raise MultiplicityTooLow(
            f"typical-angle selection needs mean multiplicity >= 2, got {fld.mu:.3g}"
        )
    floors = [box.dims[0] / box.dims[1] for box in slabs]
    floor = max(floors)
    hist: dict[float, float] = {}
    total = 0.0
    for i in range(len(slabs)):
        if shading.parts[i].size == 0:
            continue
        for j in range(i + 1, len(slabs)):
            if shading.parts[j].size == 0:
                continue
            mass = _pair_overlap_mass(shading, i, j)
            if mass == 0:
                continue
            ang = plank_angle(slabs[i], slabs[j])
            a = min(1.0, max(ang.angle, floor))
            key = 2.0 ** math.floor(math.log2(a) + 1e-12)
            hist[key] = hist.get(key, 0.0) + 2.0 * mass
            total += 2.0 * mass
    if total == 0.0:
        raise MultiplicityTooLow("no shaded slab pair overlaps")
    theta = max((k for k in hist), key=lambda k: (hist[k], k))
    delta = _family_scale(slabs)
    line = AuditLine(
        "typical-angle-mass",
        hist[theta],
        total / _log2_inv(delta),
        hist[theta] >= total / _log2_inv(delta) - 1e-9,
        note=f"theta={theta:g}, bins={len(hist)}",
    )
    return float(theta), hist, line


def angle_search_params(a: float) -> tuple[float, float]:
    """Cluster-size and angle-shrink parameters for the typical-angle scan."""
    if not 0 < a < 1:
        raise ValueError("thin dimension must lie in (0, 1)")
    la = math.log(1.0 / a)
    return math.exp(math.sqrt(la)), math.exp(la**0.75)


@dataclass(frozen=True, eq=False)
class PlankAngleResult:
    shading: Shading
    theta: float
    count_level: int
    audit: AuditSet
    record: RefinementRecord


def _shrink_pattern(ids: np.ndarray, angles: np.ndarray, floor: float, a_param: float, b_param: float):
    """Iteratively restrict to a dominant direction cluster.

    Stops when the max pairwise angle is at the floor or when no angular
    ball of radius theta/(2B) captures max(2, m/A) members, which makes
    every surviving pair at least theta/(2B) apart.
    """
    cur = np.arange(len(ids))
    for _ in range(64):
        m = cur.size
        if m < 2:
            break
        sub = angles[np.ix_(cur, cur)]
        theta_hat = float(sub.max())
        if theta_hat <= floor:
            break
        radius = theta_hat / (2.0 * b_param)
        within = (sub <= radius).sum(axis=1)
        need = max(2, math.ceil(m / a_param))
        best = int(within.argmax())
        if within[best] < need:
            break
        keep = sub[best] <= radius
        if keep.all():
            break
        cur = cur[keep]
    m = cur.size
    theta = floor if m < 2 else max(float(angles[np.ix_(cur, cur)].max()), floor)
    return ids[cur], theta


def plank_typical_angle(
    planks: ConvexFamily,
    shading: Shading,
    grid: VoxelGrid,
    seed: int = 0,
    overrides: dict | None = None,
) -> PlankAngleResult:
    """Refine a plank shading to a single typical plane angle.

    Cells are grouped by their incident plank pattern; each pattern is
    shrunk to its dominant direction cluster; the (dyadic angle, dyadic
    count) class with the largest incidence mass wins, and the shading is
    restricted to the winning cells and their surviving planks.  The audit
    confirms constant multiplicity (factor 2), a per-cell max angle within
    [theta, 2*theta), and angular stability of random cluster-sized
    subsets.
    """
    fld = multiplicity(planks, shading, grid)
    if fld.mu < 4.0:
        raise MultiplicityTooLow(
            f"plank angle refinement needs mean multiplicity >= 4, got {fld.mu:.3g}"
        )
    a = max(box.dims[0] for box in planks)
    floor = max(box.dims[0] / box.dims[1] for box in planks)
    a_param, b_param = angle_search_params(a)

    normals = np.array([box.axes[0] for box in planks])
    dots = np.clip(np.abs(normals @ normals.T), 0.0, 1.0)
    angles = np.arccos(dots)
    np.fill_diagonal(angles, 0.0)

    # Group support cells by incident plank pattern.
    pairs_cells = np.concatenate([p for p in shading.parts if p.size])
    pairs_ids = np.concatenate([
        np.full(p.size, i, dtype=np.int64) for i, p in enumerate(shading.parts) if p.size
    ])
    order = np.lexsort((pairs_ids, pairs_cells))
    pc, pi = pairs_cells[order], pairs_ids[order]
    cell_bounds = np.flatnonzero(np.diff(pc)) + 1
    cell_starts = np.concatenate([[0], cell_bounds])
    cell_ends = np.concatenate([cell_bounds, [pc.size]])
    cells_unique = pc[cell_starts]

    patterns: dict[bytes, list] = {}
    for s, e, cell in zip(cell_starts, cell_ends, cells_unique):
        key = pi[s:e].tobytes()
        entry = patterns.get(key)
        if entry is None:
            patterns[key] = [pi[s:e].copy(), [cell]]
        else:
            entry[1].append(cell)

    theta_of, count_of, kept_of, cells_of = [], [], [], []
    for key, (ids, cells) in sorted(patterns.items()):
        kept, theta = _shrink_pattern(ids, angles, floor, a_param, b_param)
        theta_of.append(theta)
        count_of.append(kept.size)
        kept_of.append(kept)
        cells_of.append(np.array(cells, dtype=np.int64))

    theta_arr = np.array(theta_of)
    count_arr = np.array(count_of)
    weights = np.array([c.size for c in cells_of], dtype=float) * np.maximum(count_arr, 1)
    live = count_arr >= 1
    keys = np.column_stack([
        np.floor(np.log2(np.maximum(theta_arr[live], 1e-300)) + 1e-12).astype(np.int64),
        np.floor(np.log2(np.maximum(count_arr[live], 1)) + 1e-12).astype(np.int64),
    ])
    key, mask = _argmax_class(keys, weights[live])
    chosen = np.flatnonzero(live)[mask]
    theta = float(min(theta_arr[chosen]))
    count_level = int(2 ** int(key[1]))

    parts = [list() for _ in range(len(planks))]
    for g in chosen:
        for p in kept_of[g]:
            parts[int(p)].append(cells_of[g])
    new_parts = tuple(
        np.unique(np.concatenate(ps)) if ps else np.empty(0, dtype=np.int64) for ps in parts
    )
    refined = Shading(planks, grid, new_parts)
    record = RefinementRecord(
        "plank-typical-angle", shading.mass, refined.mass,
        detail=f"theta={theta:g}, count level {count_level}, {chosen.size} patterns kept",
    )

    audit = AuditSet()
    counts = count_arr[chosen]
    audit.le("angle-count-constant", float(counts.max() / max(1, counts.min())), 2.0)
    tmax, tmin = float(theta_arr[chosen].max()), float(theta_arr[chosen].min())
    audit.le("angle-constant", tmax / max(tmin, 1e-300), 2.0)

    rng = np.random.default_rng(seed)
    sample = rng.choice(chosen, size=min(32, chosen.size), replace=False)
    trials = int(config.get(overrides, "typical_angle_subset_trials"))
    ok, tot = 0, 0
    for g in sample:
        mem = kept_of[int(g)]
        if mem.size < 2:
            continue
        size = max(2, math.ceil(mem.size / a_param))
        threshold = theta_of_cluster_floor(float(theta_arr[int(g)]), b_param, floor)
        for _ in range(trials):
            sub = rng.choice(mem, size=min(size, mem.size), replace=False)
            subang = angles[np.ix_(sub, sub)]
            t_sub = max(float(subang.max()), floor)
            tot += 1
            if t_sub >= threshold - 1e-12:
                ok += 1
    rate = ok / tot if tot else 1.0
    audit.ge("angle-subset-stability", rate, 0.9)
    return PlankAngleResult(refined, theta, count_level, audit, record)


def theta_of_cluster_floor(theta: float, b_param: float, floor: float) -> float:
    """Smallest angle a cluster-sized subset can exhibit after shrinking."""
    return max(theta / (2.0 * b_param), floor)


# --------------------------------------------------------------------------
# plank reduction over slabs
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PlankReduction:
    """Planks grouped into slabs with thickened, density-cleaned shadings."""

    theta: float
    planks: ConvexFamily
    shading: Shading
    slabs: ConvexFamily
    slab_members: tuple
    thickened: tuple  # per slab: ConvexFamily of thickened representatives
    rep_members: tuple  # per slab: tuple of member-id arrays per representative
    rep_count_level: int
    coarse_shadings: tuple  # per slab: Shading on the thickened reps
    dense_log: tuple
    audit: AuditSet
    records: tuple


def reduce_planks(
    planks: ConvexFamily,
    shading: Shading,
    grid: VoxelGrid,
    theta: float | None = None,
    seed: int = 0,
    overrides: dict | None = None,
) -> PlankReduction:
    """Sort shaded planks into angular slabs and clean sparse boxes.

    Planks are greedily covered by slabs of thickness theta*b; inside each
    slab the shading is restricted to dense lattice boxes (theta*b x b x b),
    planks are clustered under thickened representatives, and the
    representative count is pigeonholed to one dyadic level N.  The audit
    checks ball fullness near the cleaned union, the thickened density, the
    slab union overhead, and the multiplicity product with the aN/(b*theta)
    factor.
    """
    if shading.is_empty():
        raise EmptyInput("plank reduction needs a nonempty shading")
    records: list[RefinementRecord] = []

    ids_dims, rec = pigeonhole(planks, mode="dims")
    if ids_dims.size < len(planks):
        records.append(rec)
    work = planks.subfamily(ids_dims)
    wshading = Shading(work, grid, tuple(shading.parts[int(i)] for i in ids_dims))

    a = max(box.dims[0] for box in work)
    b = max(box.dims[1] for box in work)
    if not (a <= b / 2 + 1e-12 and b <= 0.5 + 1e-12):
        raise DegeneratePlanks(
            f"plank reduction needs a << b << 1, got a={a:g}, b={b:g}"
        )
    lam = shading_fraction(work, wshading, grid)
    lam_min = config.get(overrides, "plank_lambda_min")
    if lam < lam_min:
        raise DensityTooLow(f"shading density {lam:.3g} below the {lam_min:g} floor")

    if theta is None:
        theta = plank_typical_angle(work, wshading, grid, seed=seed, overrides=overrides).theta
    theta = float(min(1.0, max(theta, a / b)))
    t = theta * b

    # Greedy slab cover: slabs of thickness t sharing each anchor's frame.
    slab_boxes: list = []
    assign = np.full(len(work), -1, dtype=np.int64)
    for i, plank in enumerate(work):
        for s, slab in enumerate(slab_boxes):
            if contains(slab, plank):
                assign[i] = s
                break
        else:
            span = 2.0 * max(1.0, float(np.abs(plank.center).max()) + 1.0)
            slab = make_box(plank.center, plank.axes, (max(t, a * 1.001), span, span), role="slab")
            slab_boxes.append(slab)
            assign[i] = len(slab_boxes) - 1
    slabs = family_of(slab_boxes, label="angular-slabs")
    slab_members = tuple(np.flatnonzero(assign == s) for s in range(len(slabs)))

    delta = _family_scale(work)
    big_l = _log2_inv(a)
    dense_frac = config.get(overrides, "dense_cell_fraction")
    mu_in = multiplicity(work, wshading, grid).mu

    dense_log = []
    parts_clean = [np.empty(0, dtype=np.int64)] * len(work)
    lam_s_all = []
    for s, members in enumerate(slab_members):
        slab = slabs[s]
        myids = [int(i) for i in members]
        ymass = float(sum(wshading.parts[i].size for i in myids))
        pvox = [voxelize(work[i], grid) for i in myids]
        pmass = float(sum(v.size for v in pvox))
        lam_s = ymass / pmass if pmass else 0.0
        lam_s_all.append(lam_s)
        if ymass == 0:
            dense_log.append({"slab": s, "boxes": 0, "dense": 0, "kept": 0.0})
            continue
        # Lattice of theta*b x b x b boxes in the slab frame.
        sizes = np.array([max(t, a * 1.001), b, b])
        he = slab.half_extents

        def qindex(cells):
            local = slab.to_frame(grid.centers(cells)) + he
            return np.floor(local / sizes + 1e-9).astype(np.int64)

        qy: dict[tuple, float] = {}
        qp: dict[tuple, float] = {}
        for i, vox in zip(myids, pvox):
            for qi in map(tuple, qindex(vox)):
                qp[qi] = qp.get(qi, 0.0) + 1
        for i in myids:
            part = wshading.parts[i]
            if part.size == 0:
                continue
            for qi in map(tuple, qindex(part)):
                qy[qi] = qy.get(qi, 0.0) + 1
        dense = {qi for qi, m in qy.items() if m >= dense_frac * qp.get(qi, m) - 1e-9}
        kept = 0.0
        for i in myids:
            part = wshading.parts[i]
            if part.size == 0:
                continue
            qi = qindex(part)
            keep = np.array([tuple(row) in dense for row in qi])
            parts_clean[i] = part[keep]
            kept += float(keep.sum())
        dense_log.append({
            "slab": s, "boxes": len(qy), "dense": len(dense),
            "kept": kept / ymass if ymass else 0.0,
        })
    clean = Shading(work, grid, tuple(parts_clean))
    records.append(RefinementRecord(
        "dense-boxes", wshading.mass, clean.mass,
        detail=f"{sum(d['dense'] for d in dense_log)} dense boxes across {len(slabs)} slabs",
    ))
    if clean.is_empty():
        raise EmptyInput("no dense box survived the density cleaning")

    # Thickened representatives per slab, pigeonholed to one count level.
    def thicken(p):
        return make_box(p.center, p.axes, (t, max(b, p.dims[1]), p.dims[2]), role="plank")

    rep_counts = []
    per_slab = []
    for s, members in enumerate(slab_members):
        reps: list[int] = []
        rep_assign = {}
        for i in members:
            placed = False
            for rep in reps:
                if contains(thicken(work[int(rep)]), work[int(i)]):
                    rep_assign.setdefault(rep, []).append(int(i))
                    placed = True
                    break
            if not placed:
                reps.append(int(i))
                rep_assign[int(i)] = [int(i)]
        per_slab.append(rep_assign)
        rep_counts.extend(len(v) for v in rep_assign.values())
    ckeys = _dyadic_keys(np.array(rep_counts, dtype=float))
    ckey, _ = _argmax_class(ckeys.reshape(-1, 1), np.array(rep_counts, dtype=float))
    n_level = int(2 ** int(ckey[0]))

    thick_fams, rep_member_arrays, coarse_shadings = [], [], []
    for s, rep_assign in enumerate(per_slab):
        boxes, mem = [], []
        for rep, ids in sorted(rep_assign.items()):
            if not (n_level <= len(ids) < 2 * n_level):
                continue
            boxes.append(thicken(work[rep]))
            mem.append(np.array(ids, dtype=np.int64))
        fam = family_of(boxes, label=f"thickened@slab{s}") if boxes else ConvexFamily((), label=f"thickened@slab{s}")
        thick_fams.append(fam)
        rep_member_arrays.append(tuple(mem))
        if boxes:
            coarse_shadings.append(induced_shading(fam, mem, clean, grid))
        else:
            coarse_shadings.append(Shading(fam, grid, ()))

    audit = AuditSet()
    # (1) ball fullness at radius theta*b near the cleaned union.
    r = max(1, int(round(t / grid.h)))
    ucells = clean.union()
    rng = np.random.default_rng(seed)
    probe = rng.choice(ucells, size=min(512, ucells.size), replace=False)
    f = ball_cell_counts(ucells, probe, grid, r) / float((2 * r + 1) ** 3)
    lam_ref = max(lam_s_all) if lam_s_all else lam
    audit.ge("dense-ball-fullness", float(np.median(f)), dense_frac * lam_ref / 8.0)

    # (2) thickened density comparable to the slab density.
    lam_th = []
    for fam, csh in zip(thick_fams, coarse_shadings):
        if len(fam) == 0 or csh.is_empty():
            continue
        lam_th.append(shading_fraction(fam, csh, grid))
    audit.ge("thickened-density", max(lam_th) if lam_th else 0.0, lam / (100.0 * big_l))

    # (3) slab unions do not pile up over the plank union.
    u_all = union_volume(work, grid)
    u_s = 0.0
    for members in slab_members:
        if members.size:
            u_s += union_volume(work.subfamily(members), grid)
    audit.le("slab-union-overhead", u_s / u_all if u_all else math.inf, 8.0 * big_l**2)

    # (4) multiplicity product with the aN/(b*theta) factor.
    mu_th = 0.0
    for fam, csh in zip(thick_fams, coarse_shadings):
        if len(fam) == 0 or csh.is_empty():
            continue
        mu_th = max(mu_th, multiplicity(fam, csh, grid).mu)
    factor = (a * n_level) / (b * theta)
    rhs = factor * mu_th
    audit.le("reduction-multiplicity-product", mu_in / rhs if rhs > 0 else math.inf, 8.0 * big_l**4)

    return PlankReduction(
        theta=theta,
        planks=work,
        shading=clean,
        slabs=slabs,
        slab_members=slab_members,
        thickened=tuple(thick_fams),
        rep_members=tuple(rep_member_arrays),
        rep_count_level=n_level,
        coarse_shadings=tuple(coarse_shadings),
        dense_log=tuple(dense_log),
        audit=audit,
        records=tuple(records),
    )
