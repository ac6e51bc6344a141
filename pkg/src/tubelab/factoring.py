"""Greedy maximal-density factoring of a convex family into a comparable cover.

The factoring loop repeatedly finds the candidate box of highest (optionally
volume-biased) density among the bodies still unassigned, splits the bodies
inside that box off as one block, and repeats until nothing is left.  Dyadic
pigeonholing then keeps the single heaviest density level and cover-shape
class, so the surviving cover is internally comparable: its boxes have
matching shapes, matching per-box block densities, and — for zero bias —
bounded density when the cover is measured as a family in its own right.

``factor_max_density`` builds the factoring; ``verify_factoring`` re-measures
its five advertised guarantees from scratch and reports one audit line each.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import config
from .audit import AuditSet
from .errors import EmptyFamily, GridTooCoarse
from .geometry import OrientedBox
from .measures import (
    ConvexFamily,
    VoxelGrid,
    _catalog,
    _Scorer,
    delta_density,
    delta_max,
    frostman_const,
    members_of,
)
from .shading import _argmax_class, _dyadic_keys

__all__ = ["FactoringResult", "factor_max_density", "verify_factoring"]


# Comparability constants: the cover must stay this close to flat.  The spread
# factors are shared with the verification report; both are tunable through
# config overrides, the absolute density bound deliberately is not.
_COVER_DENSITY_BOUND = 8.0
_FROSTMAN_BOUND = 8.0
_DIMS_SPREAD_BOUND = 2.0


@dataclass(frozen=True)
class FactoringResult:
    """A cover of boxes, one block of retained bodies per box.

    ``partition[w]`` lists indices into ``retained`` for the bodies assigned
    to ``cover[w]``; the blocks are disjoint and exhaust ``retained``, and
    every listed body sits inside its cover box.  ``density_level`` is the
    dyadic level kept by pigeonholing: every block density lies in
    ``[2**level, 2**(level + 1))``.
    """

    retained: ConvexFamily
    cover: ConvexFamily
    partition: tuple[np.ndarray, ...]
    density_level: int
    bias: float
    densities: tuple[float, ...]
    objectives: tuple[float, ...]
    retained_ids: np.ndarray
    input_mass: float
    retained_mass: float
    thinnest: float
    audit: AuditSet = field(repr=False)

    def __post_init__(self):
        parts = []
        for p in self.partition:
            arr = np.asarray(p, dtype=np.int64)
            arr.setflags(write=False)
            parts.append(arr)
        object.__setattr__(self, "partition", tuple(parts))
        ids = np.asarray(self.retained_ids, dtype=np.int64)
        ids.setflags(write=False)
        object.__setattr__(self, "retained_ids", ids)

    @property
    def mass_retained_fraction(self) -> float:
        if self.input_mass <= 0:
            return 1.0
        return self.retained_mass / self.input_mass

    def block(self, w: int) -> ConvexFamily:
        """The bodies assigned to cover box ``w``, as their own family."""
        return self.retained.subfamily(self.partition[w])

    def to_json(self) -> str:
        def box_dict(b: OrientedBox) -> dict:
            return {
                "center": [float(x) for x in b.center],
                "axes": [[float(x) for x in row] for row in b.axes],
                "dims": [float(x) for x in b.dims],
                "role": b.role,
            }

        payload = {
            "cover": [box_dict(b) for b in self.cover],
            "partition": [[int(i) for i in p] for p in self.partition],
            "retained_ids": [int(i) for i in self.retained_ids],
            "density_level": self.density_level,
            "bias": self.bias,
            "densities": list(self.densities),
            "objectives": list(self.objectives),
            "input_mass": self.input_mass,
            "retained_mass": self.retained_mass,
            "mass_retained_fraction": self.mass_retained_fraction,
            "thinnest": self.thinnest,
            "audit": self.audit.as_rows(),
        }
        return json.dumps(payload, sort_keys=True)


def _retention_floor(thinnest: float, overrides: dict | None) -> float:
    exp = float(config.get(overrides, "mass_retention_log_exp"))
    return max(1.0, math.log2(1.0 / thinnest)) ** (-exp)


def _cover_density_bound(cover: ConvexFamily, bias: float, domain_volume: float) -> float:
    """Allowed family density of the cover; bias relaxes it by volume ratio.

    With a positive bias the greedy deliberately prefers small cover boxes, so
    the cover is only flat after discounting by how small they are.  The
    representative cover volume is the largest one, which gives the tightest
    version of the bound.
    """
    if bias == 0.0:
        return _COVER_DENSITY_BOUND
    vol = max(b.volume for b in cover)
    return _COVER_DENSITY_BOUND * (vol / domain_volume) ** (-bias)


def factor_max_density(
    family: ConvexFamily,
    grid: VoxelGrid,
    bias: float = 0.0,
    domain: OrientedBox | None = None,
    mode: str = "search",
    overrides: dict | None = None,
) -> FactoringResult:
    """Factor ``family`` into blocks under a greedily chosen cover.

    Each round scores every candidate box K by ``density * |K|**(-bias)``
    (density of the not-yet-assigned bodies contained in K), takes the best
    box, assigns its members as one block, and continues with the rest.  The
    candidate catalog and tie-breaking are identical to ``delta_max``, so the
    selected objective sequence is non-increasing and reruns are exact
    repeats.  Afterwards the blocks are pigeonholed twice — by dyadic density
    level, then by dyadic cover shape — keeping the heaviest class by member
    mass each time.

    ``domain`` restricts candidate boxes and normalizes the biased bound; by
    default candidates are unrestricted and the grid's domain normalizes.
    ``mode`` is ``search`` (pruned catalog) or ``oracle`` (exhaustive).
    """
    if len(family) == 0:
        raise EmptyFamily("cannot factor an empty family")
    if bias < 0:
        raise ValueError(f"bias must be nonnegative, got {bias}")
    if mode not in ("search", "oracle"):
        raise ValueError(f"unknown mode {mode!r}")

    vols = family.voxel_volumes(grid)
    thinnest = float(min(b.dims[0] for b in family.boxes))
    if thinnest < grid.h or not np.all(vols > 0):
        raise GridTooCoarse(
            f"grid (h={grid.h:.4g}) cannot resolve every body: "
            f"thinnest dimension {thinnest:.4g}, "
            f"{int(np.sum(vols == 0))} bodies capture no cells"
        )
    domain_volume = float(domain.volume if domain is not None else grid.domain.volume)

    remaining = np.arange(len(family))
    blocks_raw: list[np.ndarray] = []
    covers_raw: list[OrientedBox] = []
    objectives: list[float] = []
    densities_raw: list[float] = []

    while remaining.size:
        sub = family.subfamily(remaining)
        scorer = _Scorer(sub, grid, volume_exponent=bias)
        for K in _catalog(sub, grid, mode, within=domain, overrides=overrides):
            scorer.offer(K)
        if scorer.argmax is None:
            raise GridTooCoarse("no candidate box captured positive mass")
        W = scorer.argmax
        sel = members_of(sub, W)
        assert sel.size, "argmax candidate lost its members on recount"

        # Once the best any candidate can do is one body alone in its own box,
        # every later round would pick the first remaining body the same way,
        # so assign the whole tail as singleton blocks in one sweep.
        if (
            bias == 0.0
            and sel.size == 1
            and scorer.best <= 1.0 + 1e-12
            and scorer.body_keys.get(W.key()) == int(sel[0])
        ):
            for i in remaining:
                blocks_raw.append(np.array([i], dtype=np.int64))
                covers_raw.append(family.boxes[i])
                objectives.append(1.0)
                densities_raw.append(1.0)
            remaining = remaining[:0]
            break

        blocks_raw.append(remaining[sel])
        covers_raw.append(W)
        objectives.append(float(scorer.best))
        densities_raw.append(float(delta_density(sub, W, grid)))
        keep = np.ones(remaining.size, dtype=bool)
        keep[sel] = False
        remaining = remaining[keep]

    for j in range(len(objectives) - 1):
        assert objectives[j] >= objectives[j + 1] - 1e-9, (
            f"greedy objective increased at round {j + 1}: "
            f"{objectives[j]} -> {objectives[j + 1]}"
        )

    # Pigeonhole one: dyadic density level, weighted by block member mass.
    block_mass = np.array([float(vols[b].sum()) for b in blocks_raw])
    level_keys = _dyadic_keys(np.asarray(densities_raw))
    level_row, keep_level = _argmax_class(level_keys, block_mass)
    density_level = int(level_row[0])
    idx1 = np.nonzero(keep_level)[0]

    # Pigeonhole two: dyadic cover shape among the survivors.
    dims = np.array([covers_raw[j].dims for j in idx1])
    shape_keys = np.floor(np.log2(dims) + 1e-12).astype(np.int64)
    _, keep_shape = _argmax_class(shape_keys, block_mass[idx1])
    kept = idx1[np.nonzero(keep_shape)[0]]

    retained_ids = np.concatenate([blocks_raw[j] for j in kept])
    retained = family.subfamily(retained_ids, label="retained")
    cover = ConvexFamily(tuple(covers_raw[j] for j in kept), label="cover")
    partition = []
    offset = 0
    for j in kept:
        n = blocks_raw[j].size
        partition.append(np.arange(offset, offset + n, dtype=np.int64))
        offset += n
    densities = tuple(densities_raw[j] for j in kept)
    input_mass = float(vols.sum())
    retained_mass = float(vols[retained_ids].sum())

    audit = AuditSet()
    audit.ge(
        "mass-retained",
        retained_mass / input_mass,
        _retention_floor(thinnest, overrides),
        note="fraction of member mass surviving both pigeonholes",
    )
    spread_factor = float(config.get(overrides, "density_comparability_factor"))
    audit.le(
        "block-density-spread",
        max(densities) / min(densities),
        spread_factor,
        note="max over min block density across the cover",
    )
    dims_kept = np.array([b.dims for b in cover])
    audit.le(
        "cover-dims-spread",
        float((dims_kept.max(axis=0) / dims_kept.min(axis=0)).max()),
        _DIMS_SPREAD_BOUND,
        note="per-coordinate shape ratio across the cover",
    )
    cover_rec = delta_max(cover, grid, mode=mode, overrides=overrides)
    audit.le(
        "cover-max-density",
        cover_rec.value,
        _cover_density_bound(cover, bias, domain_volume),
        note=f"cover measured as a family, {mode} catalog",
    )
    if bias == 0.0:
        family_rec = delta_max(retained, grid, mode=mode, overrides=overrides)
        deviation = max(
            family_rec.value / min(densities),
            max(densities) / family_rec.value,
            1.0,
        )
        audit.le(
            "block-density-vs-family-max",
            deviation,
            spread_factor,
            note="block densities against the retained family's own maximum",
        )

    return FactoringResult(
        retained=retained,
        cover=cover,
        partition=tuple(partition),
        density_level=density_level,
        bias=bias,
        densities=densities,
        objectives=tuple(objectives),
        retained_ids=retained_ids,
        input_mass=input_mass,
        retained_mass=retained_mass,
        thinnest=thinnest,
        audit=audit,
    )


def verify_factoring(
    result: FactoringResult,
    grid: VoxelGrid,
    mode: str = "oracle",
    overrides: dict | None = None,
) -> AuditSet:
    """Re-measure the five factoring guarantees and report one line each.

    (a) the cover, as a family, has bounded (bias-discounted) density;
    (b) every block is spread inside its cover box: Frostman constant <= 8;
    (c) block densities agree across the cover within the spread factor;
    (d) cover shapes agree per coordinate within a factor of 2;
    (e) the pigeonholes kept at least the polylog floor of the member mass.

    Everything is recomputed from the result's own bodies and boxes; nothing
    is trusted from the construction-time audit.
    """
    report = AuditSet()
    cover = result.cover

    rec = delta_max(cover, grid, mode=mode, overrides=overrides)
    report.le(
        "cover-max-density",
        rec.value,
        _cover_density_bound(cover, result.bias, grid.domain.volume),
        note=f"{mode} catalog over the cover family",
    )

    worst = 1.0
    dens = []
    for w, ids in enumerate(result.partition):
        block = result.retained.subfamily(ids)
        box = cover[w]
        worst = max(worst, frostman_const(block, box, grid, mode=mode, overrides=overrides))
        dens.append(delta_density(block, box, grid))
    report.le(
        "per-cover-frostman",
        worst,
        _FROSTMAN_BOUND,
        note="worst concentration of a block inside its own cover box",
    )
    report.le(
        "block-density-spread",
        max(dens) / min(dens),
        float(config.get(overrides, "density_comparability_factor")),
        note="recomputed block densities",
    )
    dims = np.array([b.dims for b in cover])
    report.le(
        "cover-dims-spread",
        float((dims.max(axis=0) / dims.min(axis=0)).max()),
        _DIMS_SPREAD_BOUND,
    )
    report.ge(
        "mass-retained",
        result.mass_retained_fraction,
        _retention_floor(result.thinnest, overrides),
    )
    return report
