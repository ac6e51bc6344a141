"""Randomized constructions and their Monte Carlo audits.

The operations here inject randomness into a family to improve a measured
quantity: rigid motions to flatten its density spread, subsampling to kill
excess overlap, in-tube translations to scatter a clustered sub-bundle, and
multi-scale translation products to make a uniform tree evenly spread at
every intermediate scale.  Each operation returns the new family together
with an audit of the claimed success properties, measured on the voxel grid
per seed.  Probabilistic claims hold with high probability, so a failed
audit line on a minority of seeds is a report, not an exception.

Determinism: every operation consumes a ``numpy.random.Generator`` and draws
from it in a fixed order, so outputs are bit-reproducible given (seed,
inputs).  Multi-draw operations derive one private child stream per trial
index from a master seed, making the audit statistics order-independent.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import config
from .audit import AuditSet
from .errors import (
    EmptyFamily,
    HypothesisAuditFailed,
    InvalidMoments,
    MotionBudgetExceeded,
)
from .geometry import AffineMap, OrientedBox, make_box, transform_box
from .measures import (
    ConvexFamily,
    VoxelGrid,
    delta_max,
    distinct_representatives,
    family_of,
    frostman_const,
)

__all__ = [
    "RandomPlan",
    "chernoff_tail",
    "random_rigid_motion",
    "random_translation",
    "random_subsample_katz_tao",
    "amplify_frostman",
    "scatter_in_tube",
    "stickify",
    "stickify_plan",
    "dedup_essentially_distinct",
]


# ---------------------------------------------------------------------------
# plan


@dataclass(frozen=True)
class RandomPlan:
    """Blueprint for a randomized construction.

    ``motions`` counts the rigid motions (or composed translates) to draw;
    ``translation_counts`` and ``size_bounds`` describe the per-scale
    translation sets of a multi-scale plan: step k draws
    ``translation_counts[k]`` vectors uniform in the ball of radius
    ``size_bounds[k]``.  For a multi-scale plan the motion count is exactly
    the product of the per-step counts.
    """

    seed: int
    motions: int
    translation_counts: tuple = ()
    size_bounds: tuple = ()

    def __post_init__(self):
        if self.motions < 1:
            raise ValueError("a plan needs at least one motion")
        counts = tuple(int(c) for c in self.translation_counts)
        sizes = tuple(float(s) for s in self.size_bounds)
        if len(counts) != len(sizes):
            raise ValueError("one size bound per translation step is required")
        if any(c < 1 for c in counts):
            raise ValueError("translation counts must be at least 1")
        if any(s <= 0 for s in sizes):
            raise ValueError("translation size bounds must be positive")
        if counts and math.prod(counts) != self.motions:
            raise ValueError(
                "multi-scale plan must draw exactly the product of its "
                "per-step counts"
            )
        object.__setattr__(self, "translation_counts", counts)
        object.__setattr__(self, "size_bounds", sizes)


# ---------------------------------------------------------------------------
# tail bound


def chernoff_tail(N: int, m: float, M: float, S: float) -> float:
    """Tail bound for a sum of N independent variables in [0, M] of mean m.

    Returns e^10 * exp(-S / (N*m)) when the total mean N*m dominates the
    per-variable bound M, and e^10 * exp(-S / M) otherwise.  The value is
    the raw bound and may exceed 1; callers clamp if they need a
    probability.
    """
    if N < 1:
        raise ValueError("need at least one variable")
    if m < 0 or M <= 0 or S < 0:
        raise ValueError("moments and threshold must be nonnegative, M positive")
    if m > M:
        raise InvalidMoments(f"mean {m} exceeds the per-variable bound {M}")
    rate = S / (N * m) if N * m >= M else S / M
    return math.exp(10.0) * math.exp(-rate)


# ---------------------------------------------------------------------------
# elementary random maps


def _ball_point(rng: np.random.Generator, radius: float) -> np.ndarray:
    """Uniform point in the closed ball of the given radius."""
    while True:
        direction = rng.normal(size=3)
        norm = float(np.linalg.norm(direction))
        if norm > 1e-12:
            break
    r = radius * float(rng.random()) ** (1.0 / 3.0)
    return (r / norm) * direction


def _rotation_matrix(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation from a uniform unit quaternion."""
    q = rng.normal(size=4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def random_rigid_motion(rng: np.random.Generator) -> AffineMap:
    """Uniform rotation composed with a translation uniform in the unit ball."""
    rot = _rotation_matrix(rng)
    return AffineMap(rot, _ball_point(rng, 1.0))


def random_translation(rng: np.random.Generator, rho: float) -> AffineMap:
    """Translation by a vector uniform in the radius-``rho`` ball."""
    if rho <= 0:
        raise ValueError("translation size must be positive")
    return AffineMap(np.eye(3), _ball_point(rng, rho))


# ---------------------------------------------------------------------------
# subsampling and dedup


def _family_scale(family: ConvexFamily) -> float:
    s = family.scale
    if s > 0:
        return s
    return float(min(box.dims[0] for box in family))


def random_subsample_katz_tao(
    tubes: ConvexFamily,
    grid: VoxelGrid,
    rng: np.random.Generator,
    mode: str = "oracle",
    overrides: dict | None = None,
) -> ConvexFamily:
    """Uniform subsample of cardinality |family| / max-density.

    A family whose worst convex test box holds density D keeps a uniformly
    random 1/D fraction (rounded up, never below one member), which brings
    the expected density of every test box down to the unclustered level.
    """
    if len(tubes) == 0:
        raise EmptyFamily("cannot subsample an empty family")
    rec = delta_max(tubes, grid, mode=mode, overrides=overrides)
    n_keep = max(1, math.ceil(len(tubes) / max(1.0, rec.value)))
    ids = np.sort(rng.choice(len(tubes), size=n_keep, replace=False))
    return tubes.subfamily(ids, label="katz-tao-subsample")


def dedup_essentially_distinct(family: ConvexFamily, grid: VoxelGrid) -> ConvexFamily:
    """Greedy refinement keeping bodies of pairwise overlap at most half."""
    if len(family) == 0:
        return family
    ids = distinct_representatives(family, grid)
    return family.subfamily(ids, label=family.label)


# ---------------------------------------------------------------------------
# spread amplification


def _enclosing_cube(family: ConvexFamily, side: float) -> OrientedBox:
    lows = np.min([b.aabb()[0] for b in family], axis=0)
    highs = np.max([b.aabb()[1] for b in family], axis=0)
    center = (lows + highs) / 2.0
    return make_box(center, np.eye(3), (side, side, side), role="ball")


def amplify_frostman(
    tubes: ConvexFamily,
    grid: VoxelGrid,
    rng: np.random.Generator,
    base: OrientedBox | None = None,
    mode: str = "search",
    overrides: dict | None = None,
) -> tuple[ConvexFamily, AuditSet]:
    """Union of J rigid-motion copies, J = the measured clustering constant.

    A family whose worst test box is J times denser than its ambient cube
    gets J independently moved copies; the union, refined to essential
    distinctness, keeps close to J times the cardinality while the
    clustering constant of the result drops to polylog size.  Both claims
    are measured and recorded per call.
    """
    if len(tubes) == 0:
        raise EmptyFamily("cannot amplify an empty family")
    if base is None:
        base = _enclosing_cube(tubes, side=max(1.0, 2.0 * max(b.circumradius for b in tubes)))
    cf = frostman_const(tubes, base, grid, mode=mode, overrides=overrides)
    J = max(1, int(round(cf)))
    cap = int(config.get(overrides, "amplify_motion_cap"))
    if J > cap:
        raise MotionBudgetExceeded(f"needs {J} rigid motions, cap is {cap}")

    moved = []
    for _ in range(J):
        motion = random_rigid_motion(rng)
        moved.extend(transform_box(motion, b) for b in tubes)
    union = family_of(moved, label="amplified")
    work_grid = VoxelGrid.fit(list(union), grid.h)
    out = dedup_essentially_distinct(union, work_grid)

    delta = _family_scale(tubes)
    big_l = max(1.0, math.log2(1.0 / delta))
    audit = AuditSet()
    audit.le("motion-count", float(J), float(cap))
    count_factor = config.get(overrides, "amplify_count_log_factor")
    audit.ge(
        "amplified-count",
        float(len(out)),
        J * len(tubes) / (count_factor * big_l),
    )
    out_base = _enclosing_cube(out, side=max(2.0, 2.0 * max(b.circumradius for b in out)))
    cf_out = frostman_const(out, out_base, work_grid, mode=mode, overrides=overrides)
    audit.le(
        "amplified-spread",
        cf_out,
        config.get(overrides, "amplify_cf_factor")
        * big_l ** config.get(overrides, "amplify_cf_log_exp"),
    )
    return out, audit


# ---------------------------------------------------------------------------
# in-tube scatter


def scatter_in_tube(
    tubes: ConvexFamily,
    host: OrientedBox,
    grid: VoxelGrid,
    rng: np.random.Generator,
    mode: str = "oracle",
    overrides: dict | None = None,
) -> tuple[ConvexFamily, AuditSet]:
    """Union of J host-sized random translates of a bundle inside one tube.

    J is the volume deficit |host| / (n * |member|): enough translates for
    the union to have a chance of filling the host.  The audit measures
    that the translates stay essentially distinct and that the worst-box
    density grows by at most a logarithmic factor.
    """
    if len(tubes) == 0:
        raise EmptyFamily("cannot scatter an empty family")
    for i, t in enumerate(tubes):
        if not np.all(
            np.abs((t.corners() - host.center) @ host.axes.T)
            <= host.half_extents * (1.0 + 1e-9) + 1e-9
        ):
            raise ValueError(f"member {i} is not inside the host tube")

    rho = float(host.dims[0])
    delta = _family_scale(tubes)
    member_volume = float(np.mean([b.volume for b in tubes]))
    J = max(1, int(round(host.volume / (len(tubes) * member_volume))))

    moved = []
    for _ in range(J):
        shift = random_translation(rng, rho)
        moved.extend(transform_box(shift, b) for b in tubes)
    out = family_of(moved, label="scattered")
    work_grid = VoxelGrid.fit(list(out), grid.h)

    factor = config.get(overrides, "scatter_log_factor")
    allowed = factor * max(1.0, math.log2(rho / delta))
    audit = AuditSet()
    audit.le("motion-count", float(J), float(max(J, 1)))
    base_rec = delta_max(tubes, grid, mode=mode, overrides=overrides)
    out_rec = delta_max(out, work_grid, mode=mode, overrides=overrides)
    audit.le("scatter-multiplicity", out_rec.value / base_rec.value, allowed)
    kept = distinct_representatives(out, work_grid).size
    audit.ge("scatter-distinct", kept / len(out), 1.0 / allowed)
    return out, audit


# ---------------------------------------------------------------------------
# multi-scale stickify


def _children_per_parent(uniform, k: int) -> list[np.ndarray]:
    """Ids of scale-k parents under each scale-(k-1) parent."""
    coarse = np.asarray(uniform.assignments[k - 1])
    fine = np.asarray(uniform.assignments[k])
    out = []
    for p in range(len(uniform.parents[k - 1])):
        out.append(np.unique(fine[coarse == p]))
    return out


def _plan_steps(uniform, scales, epsilon: float | None):
    """Per-step (index pair, ratio, child counts) data plus the working eps."""
    scales = tuple(float(s) for s in scales)
    if len(scales) < 2:
        raise ValueError("need at least two scales")
    if any(a <= b for a, b in zip(scales, scales[1:])):
        raise ValueError("scales must be strictly decreasing")
    delta = float(uniform.ladder[-1])
    ratios = [scales[k] / scales[k - 1] for k in range(1, len(scales))]
    if epsilon is None:
        # smallest exponent making every step admissible: ratio >= delta^eps
        epsilon = max(math.log(r) / math.log(delta) for r in ratios)
    indices = [uniform.scale_index(s) for s in scales]
    counts = []
    for k in range(1, len(scales)):
        kids = _children_per_parent(uniform, indices[k])
        live = [c.size for c in kids if c.size]
        n_k = float(np.mean(live)) if live else 1.0
        counts.append(max(1, int(round(ratios[k - 1] ** -2 / n_k))))
    return scales, indices, ratios, counts, float(epsilon), delta


def stickify_plan(uniform, scales, epsilon: float | None = None, seed: int = 0) -> RandomPlan:
    """Translation plan spreading a uniform tree across a scale subsequence.

    Step k draws max(1, (rho_k / rho_{k-1})^-2 / N_k) vectors of size up to
    the parent scale rho_{k-1}, where N_k is the typical number of scale-k
    children per parent; a step whose children already fill their parent
    needs exactly one (zero) translation.
    """
    scales, _indices, _ratios, counts, _eps, _delta = _plan_steps(uniform, scales, epsilon)
    return RandomPlan(
        seed=seed,
        motions=math.prod(counts),
        translation_counts=tuple(counts),
        size_bounds=tuple(scales[:-1]),
    )


def _axis_key(box: OrientedBox) -> tuple:
    axis = box.axes[2].copy()
    for c in axis:
        if abs(c) > 1e-9:
            if c < 0:
                axis = -axis
            break
    return tuple(np.round(axis, 6))


def _scale_hosts(family: ConvexFamily, rho: float):
    """Greedy rho-tube cover of the family: a host per (direction, offset cell).

    Members are keyed by long-axis direction and by their center offset
    snapped to a rho-lattice in the plane orthogonal to that axis.  Hosts
    are widened by one member width so a member centered on a cell edge
    still lies inside its host.
    """
    groups: dict[tuple, list[int]] = {}
    frames: dict[tuple, np.ndarray] = {}
    for i, box in enumerate(family):
        key_dir = _axis_key(box)
        if key_dir not in frames:
            frames[key_dir] = box.axes
        axes = frames[key_dir]
        local = axes @ box.center
        cell = tuple(np.floor(local[:2] / rho).astype(int))
        groups.setdefault((key_dir, cell), []).append(i)
    hosts = []
    for (key_dir, cell), ids in groups.items():
        axes = frames[key_dir]
        members = [family[i] for i in ids]
        axial = [float(axes[2] @ m.center) for m in members]
        width = rho + max(m.dims[0] for m in members)
        length = max(m.dims[2] for m in members) + (max(axial) - min(axial))
        center_local = np.array(
            [(cell[0] + 0.5) * rho, (cell[1] + 0.5) * rho, (max(axial) + min(axial)) / 2.0]
        )
        hosts.append(
            (make_box(center_local @ axes, axes, (width, width, max(length, width)),
                      role="generic"), np.array(ids))
        )
    return hosts


def stickify(
    uniform,
    scales,
    grid: VoxelGrid,
    rng: np.random.Generator,
    epsilon: float | None = None,
    mode: str = "search",
    overrides: dict | None = None,
) -> tuple[ConvexFamily, AuditSet]:
    """Compose per-scale translation sets so the tree spreads at every scale.

    Requires every step of the scale subsequence to be admissible: the step
    ratio stays above delta^eps and the children of any parent are not
    already clustered beyond (parent/child)^eps (both checked up front).
    The output is the family translated by every sum of per-step vectors;
    the audit measures the worst clustering constant over a tube cover at
    every dyadic scale against the advertised delta^(-6 eps) * polylog
    allowance.
    """
    tubes = uniform.tubes
    if len(tubes) == 0:
        raise EmptyFamily("cannot stickify an empty tree")
    scales, indices, ratios, counts, eps, delta = _plan_steps(uniform, scales, epsilon)

    floor = delta**eps
    for k, r in enumerate(ratios, start=1):
        if r < floor - 1e-12:
            raise HypothesisAuditFailed(
                f"step {k}: scale ratio {r:.4g} below the admissible floor {floor:.4g}"
            )
    for k in range(1, len(scales)):
        allowed = (1.0 / ratios[k - 1]) ** eps
        for p, kids in enumerate(_children_per_parent(uniform, indices[k])):
            if kids.size == 0:
                continue
            children = uniform.parents[indices[k]].subfamily(kids)
            rec = delta_max(children, grid, mode=mode,
                            within=uniform.parents[indices[k - 1]][p],
                            overrides=overrides)
            if rec.value > allowed * (1.0 + 1e-9):
                raise HypothesisAuditFailed(
                    f"step {k}: children of parent {p} cluster at {rec.value:.3g}, "
                    f"admissible is {allowed:.3g}"
                )

    master = int(rng.integers(2**31))
    plan = RandomPlan(
        seed=master,
        motions=math.prod(counts),
        translation_counts=tuple(counts),
        size_bounds=tuple(scales[:-1]),
    )
    cap = int(config.get(overrides, "amplify_motion_cap"))
    if plan.motions > cap:
        raise MotionBudgetExceeded(f"plan needs {plan.motions} translates, cap is {cap}")

    # first vector of every step is zero so a fully-spread tree passes through
    step_vectors = []
    for k, (count, size) in enumerate(zip(plan.translation_counts, plan.size_bounds)):
        vecs = [np.zeros(3)]
        for i in range(1, count):
            stream = np.random.default_rng([master, k, i])
            vecs.append(_ball_point(stream, size))
        step_vectors.append(vecs)

    moved = []
    for combo in itertools.product(*step_vectors):
        shift = np.sum(combo, axis=0)
        amap = AffineMap(np.eye(3), shift)
        moved.extend(transform_box(amap, b) for b in tubes)
    out = family_of(moved, label="stickified")
    work_grid = VoxelGrid.fit(list(out), grid.h)

    big_l = max(1.0, math.log2(1.0 / delta))
    eps_exp = config.get(overrides, "stickify_eps_exp")
    log_exp = config.get(overrides, "stickify_log_exp")
    allowed = delta ** (-eps_exp * eps) * big_l**log_exp
    audit = AuditSet()
    audit.le("plan-motions", float(plan.motions), float(cap))
    n_levels = int(round(math.log2(1.0 / delta)))
    host_cap = int(config.get(overrides, "stickify_host_sample"))
    for j in range(n_levels + 1):
        rho = 2.0**-j
        hosts = _scale_hosts(out, rho)
        if len(hosts) > host_cap:
            pick = np.random.default_rng([master, 777, j]).choice(
                len(hosts), size=host_cap, replace=False
            )
            hosts = [hosts[int(i)] for i in pick]
        worst = 1.0
        for host, ids in hosts:
            members = out.subfamily(ids)
            worst = max(
                worst,
                frostman_const(members, host, work_grid, mode=mode, overrides=overrides),
            )
        audit.le(f"frostman-scale-2^-{j}", worst, allowed)
    return out, audit
