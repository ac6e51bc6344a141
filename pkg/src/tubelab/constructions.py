"""Seeded generators for the arrangement archetypes the toolkit studies.

Each generator plants a known structure — separated directions, a branching
hierarchy, tubes clustered under planks, slabs with a prescribed angle
profile, or a shading with a prescribed density pattern — and returns it in
the package's native types so the measuring and factoring machinery can be
tested against ground truth.  Generators are pure functions of their seed:
independent bodies draw from per-index RNG streams, so regenerating with the
same arguments reproduces identical bytes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .audit import AuditLine
from .audit import AuditSet
from .errors import OverPacked, TargetUnreachable
from .geometry import (
    contains,
    direction_net,
    frame_from_axis,
    make_box,
    separated_directions,
)
from .measures import ConvexFamily, Shading, VoxelGrid, family_of
from .factoring import FactoringResult
from .shading import UniformTubeSet, ladder_for

__all__ = [
    "ConstructionSpec",
    "gen_direction_separated",
    "gen_branching_tree",
    "gen_plank_clustered",
    "gen_slab_train",
    "gen_shading",
    "slab_concentration",
]

_KINDS = ("direction_separated", "branching_tree", "plank_clustered", "slab_train")

# Four pairwise well-separated directions used when the thickness is too
# coarse for a genuine sphere net.
_DEGENERATE_NET = np.array([
    [1.0, 1.0, 1.0],
    [-1.0, 1.0, 1.0],
    [1.0, -1.0, 1.0],
    [-1.0, -1.0, 1.0],
]) / math.sqrt(3.0)


def _rng(*key) -> np.random.Generator:
    """Independent RNG stream for one generated object."""
    return np.random.default_rng(list(key))


@dataclass(frozen=True)
class ConstructionSpec:
    """Reproducible description of one generated arrangement.

    ``params`` holds the kind-specific arguments (branching numbers, plank
    dimensions and counts, slab thickness and angle mode, ...).  The spec
    round-trips through JSON so an output file alone is enough to regenerate
    the arrangement it came from.
    """

    kind: str
    delta: float
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown construction kind {self.kind!r}")
        top = 0.5 if self.kind == "direction_separated" else 0.25
        if not 0.0 < self.delta <= top + 1e-12:
            raise ValueError(
                f"thickness must lie in (0, {top}] for {self.kind}, got {self.delta}"
            )
        if self.kind == "branching_tree":
            branching = self.params.get("branching", ())
            if np.prod([int(n) for n in branching]) > 4.0 / self.delta**2 + 1e-9:
                raise ValueError("branching product exceeds the 4/delta^2 budget")

    def build(self, grid: VoxelGrid | None = None):
        """Run the generator this spec describes."""
        p = dict(self.params)
        if self.kind == "direction_separated":
            return gen_direction_separated(self.delta, seed=self.seed, **p)
        if self.kind == "branching_tree":
            return gen_branching_tree(self.delta, seed=self.seed, **p)
        if self.kind == "plank_clustered":
            return gen_plank_clustered(self.delta, seed=self.seed, **p)
        if self.kind == "slab_train":
            return gen_slab_train(self.delta, seed=self.seed, **p)
        raise ValueError(f"unknown construction kind {self.kind!r}")

    def to_json(self) -> str:
        return json.dumps(
            {"kind": self.kind, "delta": self.delta, "params": self.params, "seed": self.seed},
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "ConstructionSpec":
        raw = json.loads(text)
        return cls(
            kind=raw["kind"],
            delta=float(raw["delta"]),
            params=dict(raw.get("params", {})),
            seed=int(raw.get("seed", 0)),
        )


# --------------------------------------------------------------------------
# direction-separated tubes
# --------------------------------------------------------------------------


def gen_direction_separated(
    delta: float,
    seed: int = 0,
    variant: str = "spread",
    copies: int = 1,
    direction_stride: int = 1,
    jitter: float | None = None,
    length: float = 1.0,
) -> ConvexFamily:
    """Tubes with pairwise separated directions through seeded base points.

    The direction catalog is the shared Fibonacci net, thinned so any two
    directions are at least ``delta`` apart; a thickness above 1/4 falls back
    to a fixed four-direction net.  ``variant`` places base points spread in
    a ball ("spread") or all at the origin ("bush").  ``copies`` plants that
    many jittered near-duplicates per direction and ``direction_stride``
    keeps every k-th direction, which together build clustered families with
    a planted multiplicity at unchanged cardinality.
    """
    if not 0.0 < delta <= 0.5 + 1e-12:
        raise ValueError(f"thickness must lie in (0, 1/2], got {delta}")
    if variant not in ("spread", "bush"):
        raise ValueError(f"unknown variant {variant!r}")
    if copies < 1 or direction_stride < 1:
        raise ValueError("copies and direction_stride must be positive")
    dirs = _DEGENERATE_NET if delta > 0.25 else separated_directions(delta)
    dirs = dirs[::direction_stride]
    if jitter is None:
        jitter = delta / 8.0 if copies > 1 else 0.0

    boxes = []
    for i, d in enumerate(dirs):
        frame = frame_from_axis(d)
        if variant == "spread":
            base = _rng(seed, i).uniform(-0.25, 0.25, size=3)
        else:
            base = np.zeros(3)
        for j in range(copies):
            center = base
            if jitter > 0.0:
                center = base + _rng(seed, i, j).uniform(-jitter, jitter, size=3)
            boxes.append(make_box(center, frame, (delta, delta, length), role="tube"))
    return family_of(boxes, label=f"direction-separated:{variant}")


# --------------------------------------------------------------------------
# branching trees
# --------------------------------------------------------------------------


def _overlap_fraction(offsets: np.ndarray, candidate: np.ndarray, width: float) -> np.ndarray:
    """Cross-section overlap fraction of parallel width-``width`` tubes."""
    if offsets.size == 0:
        return np.zeros(0)
    d = np.abs(offsets - candidate)
    return np.prod(np.maximum(0.0, 1.0 - d / width), axis=1)


def gen_branching_tree(
    delta: float,
    branching,
    seed: int = 0,
    steps: int | None = None,
) -> UniformTubeSet:
    """Nested tube hierarchy with prescribed tubes-per-parent at each scale.

    Scale k of the ladder holds parallel tubes of width rho_k, each placed
    uniformly in its parent's cross-section and rejected until it is
    essentially distinct (overlap at most 1/2) from every accepted tube of
    its scale.  The returned hierarchy has exactly ``branching[k]`` children
    per scale-k parent, so its branching invariant holds with retention 1.
    """
    if not 0.0 < delta <= 0.25 + 1e-12:
        raise ValueError(f"thickness must lie in (0, 1/4], got {delta}")
    ladder = ladder_for(delta, steps)
    m = len(ladder) - 1
    branching = [int(n) for n in branching]
    if len(branching) != m:
        raise ValueError(
            f"need one branching number per ladder step: {m} steps, got {len(branching)}"
        )
    if any(n < 1 for n in branching):
        raise ValueError("branching numbers must be positive")
    for k, n in enumerate(branching, start=1):
        cap = (ladder[k - 1] / ladder[k]) ** 2
        if n > cap + 1e-9:
            raise OverPacked(
                f"scale {k}: {n} children per parent exceeds the capacity {cap:.3g}"
            )
    if float(np.prod(branching)) > 4.0 / delta**2 + 1e-9:
        raise OverPacked("branching product exceeds the 4/delta^2 budget")

    rng = np.random.default_rng(seed)
    offsets = [np.zeros((1, 2))]  # per scale: cross-section centers
    assignments = [np.zeros(1, dtype=np.int64)]
    for k in range(1, m + 1):
        rho_parent, rho = ladder[k - 1], ladder[k]
        radius = (rho_parent - rho) / 2.0
        parents = offsets[k - 1]
        placed: list[np.ndarray] = []
        parent_of: list[int] = []
        for p, pc in enumerate(parents):
            for _ in range(branching[k - 1]):
                accepted = np.array(placed) if placed else np.zeros((0, 2))
                for attempt in range(200):
                    u = pc + rng.uniform(-radius, radius, size=2)
                    if np.all(_overlap_fraction(accepted, u, rho) <= 0.5):
                        placed.append(u)
                        parent_of.append(p)
                        break
                else:
                    raise OverPacked(
                        f"scale {k}: could not place {branching[k - 1]} essentially "
                        f"distinct children per parent"
                    )
        offsets.append(np.array(placed))
        assignments.append(np.array(parent_of, dtype=np.int64))

    # Per-scale parent index of each final tube (identity at the finest
    # scale, composed child->parent maps above it).
    n_final = offsets[m].shape[0]
    assign_out: list[np.ndarray] = [np.zeros(n_final, dtype=np.int64)] * (m + 1)
    chain = np.arange(n_final)
    assign_out[m] = chain.copy()
    for k in range(m, 0, -1):
        chain = assignments[k][chain]
        assign_out[k - 1] = chain.copy()

    families = []
    for k in range(m + 1):
        rho = ladder[k]
        role = "generic" if rho > 0.5 else "tube"
        boxes = [
            make_box(np.array([u[0], u[1], 0.0]), np.eye(3), (rho, rho, 1.0), role=role)
            for u in offsets[k]
        ]
        families.append(family_of(boxes, label=f"tree-scale-{k}"))

    # Branching levels count final tubes per scale-k parent, which the
    # construction makes exactly the product of the deeper child counts.
    levels = []
    for k in range(m + 1):
        per_parent = int(np.prod(branching[k:], dtype=np.int64)) if k < m else 1
        levels.append(int(2 ** int(math.floor(math.log2(per_parent)))))
    tree = UniformTubeSet(
        tubes=families[m],
        ladder=ladder,
        parents=tuple(families),
        assignments=tuple(assign_out),
        branching=tuple(levels),
    )
    tree.validate()
    return tree


# --------------------------------------------------------------------------
# plank-clustered tubes
# --------------------------------------------------------------------------


def _separated_frames(count: int, min_angle: float, seed: int) -> list[np.ndarray]:
    """Frames whose long axes are pairwise at least ``min_angle`` apart."""
    net = direction_net(max(96, 16 * count))
    order = np.random.default_rng([seed, 104729]).permutation(net.shape[0])
    kept: list[np.ndarray] = []
    for idx in order:
        d = net[idx]
        if all(abs(float(d @ k[2])) <= math.cos(min_angle) for k in kept):
            kept.append(frame_from_axis(d))
            if len(kept) == count:
                return kept
    raise OverPacked(
        f"could not find {count} directions pairwise {min_angle:.3g} apart"
    )


def _segment_distance(c1, d1, c2, d2, half1: float, half2: float) -> float:
    """Distance between two segments center +- half * direction."""
    best = math.inf
    for t1 in np.linspace(-half1, half1, 9):
        p = c1 + t1 * d1
        t2 = float(np.clip((p - c2) @ d2, -half2, half2))
        best = min(best, float(np.linalg.norm(p - (c2 + t2 * d2))))
    return best


def gen_plank_clustered(
    delta: float,
    a: float,
    b: float,
    planks: int = 8,
    tubes_per_plank: int = 8,
    seed: int = 0,
    packing: float | None = None,
    stacked: bool = False,
) -> tuple[ConvexFamily, FactoringResult]:
    """Tubes clustered under a x b x 1 planks, with the planted factoring.

    Planks take pairwise separated long axes and mutually distant center
    lines; each plank holds ``tubes_per_plank`` parallel tubes on a
    stratified cross-section grid.  ``packing`` of None spreads the strata
    over the whole cross-section with per-tube jitter; a numeric value
    bunches them at that multiple of the thickness (values below 1 overlap
    neighbors, which gives the density search a strict gradient toward the
    full cluster).  ``stacked`` piles all planks inside one thin slab
    instead of spreading them, the canonical slab-concentration violator.

    Returns the tube family and the planted factoring result whose cover
    is the plank family; its masses and densities use analytic volumes.
    """
    if not 0.0 < delta <= 0.25 + 1e-12:
        raise ValueError(f"thickness must lie in (0, 1/4], got {delta}")
    if not delta <= a <= b <= 1.0 + 1e-12:
        raise ValueError(f"need delta <= a <= b <= 1, got a={a}, b={b}")
    cap = (a / delta) * (b / delta)
    if tubes_per_plank > cap + 1e-9:
        raise OverPacked(
            f"{tubes_per_plank} tubes per plank exceeds the (a/delta)(b/delta) = {cap:.3g} cap"
        )
    if planks < 1 or tubes_per_plank < 1:
        raise ValueError("counts must be positive")

    length = 1.0 - 2.0 * delta
    if stacked:
        frame = _separated_frames(1, 0.1, seed)[0]
        frames = [frame] * planks
        spacing = 1.05 * a
        centers = [
            np.zeros(3) + (i - (planks - 1) / 2.0) * spacing * frame[0]
            for i in range(planks)
        ]
    else:
        min_angle = min(0.35, max(2.0 * b, 0.1))
        frames = _separated_frames(planks, min_angle, seed)
        # Stratified bases on a cube-corner grid keep center lines apart;
        # the angle separation already makes residual crossings shallow.
        corners = np.array(
            [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
            dtype=float,
        )
        apart = min(0.4 * b, 0.1)
        centers = []
        for i, frame in enumerate(frames):
            rng = _rng(seed, 1, i)
            base = 0.22 * corners[i % 8]
            for attempt in range(600):
                if attempt < 300:
                    c = base + rng.uniform(-0.1, 0.1, size=3)
                else:
                    c = rng.uniform(-0.32, 0.32, size=3)
                ok = all(
                    _segment_distance(c, frame[2], c2, f2[2], length / 2, length / 2)
                    >= apart
                    for c2, f2 in zip(centers, frames)
                )
                if ok:
                    centers.append(c)
                    break
            else:
                raise OverPacked(f"could not place {planks} mutually distant planks")

    plank_boxes = [
        make_box(c, f, (a, b, 1.0), role="plank") for c, f in zip(centers, frames)
    ]

    # Stratified cross-section grid inside each plank: partition the a x b
    # cross-section into cells, one tube jittered inside each.
    rows = min(tubes_per_plank, int(a / delta + 1e-9))
    cols = int(math.ceil(tubes_per_plank / rows))
    if cols > int(b / delta + 1e-9):
        raise OverPacked("stratified grid does not fit the cross-section")
    if packing is None:
        cell1, cell2 = a / rows, b / cols
    else:
        cell1 = cell2 = float(packing) * delta
        if (rows - 1) * cell1 + delta > a + 1e-9 or (cols - 1) * cell2 + delta > b + 1e-9:
            raise OverPacked(f"packing {packing} does not fit the cross-section")

    tubes = []
    blocks = []
    for p, (c, f) in enumerate(zip(centers, frames)):
        ids = []
        for t in range(tubes_per_plank):
            col, row = divmod(t, rows)
            off1 = (row - (rows - 1) / 2.0) * cell1
            off2 = (col - (cols - 1) / 2.0) * cell2
            if packing is None:
                rng = _rng(seed, 2, p, t)
                off1 += float(rng.uniform(-0.45, 0.45)) * max(cell1 - delta, 0.0)
                off2 += float(rng.uniform(-0.45, 0.45)) * max(cell2 - delta, 0.0)
            center = c + off1 * f[0] + off2 * f[1]
            ids.append(len(tubes))
            tubes.append(make_box(center, f, (delta, delta, length), role="tube"))
        blocks.append(np.array(ids, dtype=np.int64))

    family = family_of(tubes, label="plank-clustered")
    plank_family = family_of(plank_boxes, label="planted-planks")
    for W, ids in zip(plank_family, blocks):
        for i in ids:
            assert contains(W, family[int(i)]), "planted tube escaped its plank"

    tube_vol = delta * delta * length
    density = tubes_per_plank * tube_vol / (a * b * 1.0)
    level = int(math.floor(math.log2(density) + 1e-12))
    planted = FactoringResult(
        retained=family,
        cover=plank_family,
        partition=tuple(blocks),
        density_level=level,
        bias=0.0,
        densities=tuple([density] * planks),
        objectives=tuple([density] * planks),
        retained_ids=np.arange(len(family)),
        input_mass=tube_vol * len(family),
        retained_mass=tube_vol * len(family),
        thinnest=delta,
        audit=AuditSet(),
    )
    return family, planted


def slab_concentration(
    planks: ConvexFamily,
    theta: float,
    m_prime: float = 1.0,
) -> AuditLine:
    """Non-concentration check: no theta-slab holds more than m'*theta of 𝕡.

    Scans one slab of thickness theta per plank (in that plank's own frame,
    long directions widened to cover everything) and reports the worst
    member fraction against the allowed m' * theta.
    """
    n = len(planks)
    a = max(box.dims[0] for box in planks)
    span = 4.0 * max(1.0, max(float(np.abs(box.center).max()) for box in planks))
    worst = 0.0
    for anchor in planks:
        slab = make_box(
            anchor.center, anchor.axes, (max(theta, a * 1.001), span, span), role="slab"
        )
        inside = sum(1 for box in planks if contains(slab, box))
        worst = max(worst, inside / n)
    return AuditLine(
        "slab-concentration",
        worst,
        m_prime * theta,
        worst <= m_prime * theta + 1e-9,
        note=f"worst member fraction in a {theta:g}-slab",
    )


# --------------------------------------------------------------------------
# slab trains
# --------------------------------------------------------------------------


def gen_slab_train(
    delta: float,
    theta: float,
    count: int,
    angle_mode: str = "parallel",
    seed: int = 0,
    phi: float | None = None,
) -> ConvexFamily:
    """Thin slabs inside a theta-thick super-slab with a planted angle profile.

    Modes: "parallel" stacks aligned slabs; "crossing" tilts two half-bundles
    by +-phi/2 so every cross pair meets at the planted angle phi; "spread"
    strews tilts evenly across the feasible range.  Tilts rotate about the
    long axis shared with the super-slab, and every slab stays inside it.
    """
    if not 0.0 < delta <= 0.25 + 1e-12:
        raise ValueError(f"thickness must lie in (0, 1/4], got {delta}")
    if not delta <= theta <= 1.0 + 1e-12:
        raise ValueError(f"need delta <= theta <= 1, got theta={theta}")
    if angle_mode not in ("parallel", "crossing", "spread"):
        raise ValueError(f"unknown angle mode {angle_mode!r}")
    if count < 1:
        raise ValueError("count must be positive")

    span = max(0.5, 1.0 - 2.0 * theta)
    phi_max = math.asin(min(1.0, max(0.0, (0.98 * theta - delta) / span)))
    if angle_mode == "parallel":
        tilts = [0.0] * count
    elif angle_mode == "crossing":
        if phi is None:
            raise ValueError("crossing mode needs the planted angle phi")
        if phi / 2.0 > phi_max + 1e-12:
            raise ValueError(
                f"angle {phi:g} does not fit: maximum tilt is {phi_max:g} per side"
            )
        # Alternate the tilt sign so neighbors cross at the planted angle.
        tilts = [(-1) ** i * phi / 2.0 for i in range(count)]
    else:
        tilts = [(-phi_max + 2.0 * phi_max * i / max(count - 1, 1)) if count > 1 else 0.0
                 for i in range(count)]

    boxes = []
    for i, tilt in enumerate(tilts):
        rng = _rng(seed, i)
        reach = 0.5 * (0.98 * theta - delta * math.cos(tilt) - span * abs(math.sin(tilt)))
        base = (2.0 * i / max(count - 1, 1) - 1.0) * max(reach, 0.0) if count > 1 else 0.0
        x = base + float(rng.uniform(-0.5, 0.5)) * delta * 0.2
        x = float(np.clip(x, -max(reach, 0.0), max(reach, 0.0)))
        normal = np.array([math.cos(tilt), math.sin(tilt), 0.0])
        u = np.array([-math.sin(tilt), math.cos(tilt), 0.0])
        v = np.array([0.0, 0.0, 1.0])
        frame = np.array([normal, u, v])
        boxes.append(
            make_box(np.array([x, 0.0, 0.0]), frame, (delta, span, span), role="slab")
        )

    fam = family_of(boxes, label=f"slab-train:{angle_mode}")
    super_slab = make_box(np.zeros(3), np.eye(3), (theta, 2.0, 2.0), role="slab")
    for box in fam:
        assert contains(super_slab, box), "slab escaped the super-slab"
    return fam


# --------------------------------------------------------------------------
# shadings
# --------------------------------------------------------------------------


def gen_shading(
    family: ConvexFamily,
    grid: VoxelGrid,
    lambda_target: float = 1.0,
    pattern: str = "full",
    seed: int = 0,
) -> Shading:
    """Shading with a prescribed density on every member.

    Patterns: "full" shades everything; "prefix" keeps the leading fraction
    of each member's cells along its long axis; "random" keeps a seeded
    random subset of that size; "dyadic_mix" cycles members through four
    halving density classes (lambda_target, .../2, .../4, .../8) so that
    mass pigeonholing has a planted heaviest class to recover.  For the
    first three patterns the measured density must land within 10% of the
    target, else the grid is too coarse and TargetUnreachable is raised;
    for dyadic_mix the check applies to the heaviest class's members.
    """
    if not 0.0 < lambda_target <= 1.0:
        raise ValueError(f"density target must lie in (0, 1], got {lambda_target}")
    if pattern not in ("full", "prefix", "random", "dyadic_mix"):
        raise ValueError(f"unknown shading pattern {pattern!r}")
    sets = family.voxel_sets(grid)
    if pattern == "full":
        return Shading(family, grid, tuple(sets))

    def prefix_cells(i: int, cells: np.ndarray, frac: float) -> np.ndarray:
        keep = int(round(frac * cells.size))
        keep = min(cells.size, max(1, keep))
        axis = family[i].axes[2]
        proj = grid.centers(cells) @ axis
        order = np.argsort(proj, kind="stable")
        return cells[order[:keep]]

    parts = []
    fractions = []
    for i, cells in enumerate(sets):
        if cells.size == 0:
            parts.append(cells)
            fractions.append(None)
            continue
        if pattern == "dyadic_mix":
            frac = lambda_target / float(2 ** (i % 4))
        else:
            frac = lambda_target
        fractions.append(frac)
        if pattern == "random":
            keep = min(cells.size, max(1, int(round(frac * cells.size))))
            rng = _rng(seed, i)
            parts.append(rng.choice(cells, size=keep, replace=False))
        else:
            parts.append(prefix_cells(i, cells, frac))

    shading = Shading(family, grid, tuple(parts))
    for i, (cells, frac) in enumerate(zip(sets, fractions)):
        if frac is None:
            continue
        if pattern == "dyadic_mix" and i % 4 != 0:
            continue
        measured = shading.parts[i].size / cells.size
        if abs(measured - frac) > 0.1 * frac + 1e-12:
            raise TargetUnreachable(
                f"member {i}: achieved density {measured:.3g} is not within 10% "
                f"of the {frac:.3g} target at this grid resolution"
            )
    return shading
