"""Multi-scale structure analysis over dyadic scale ladders.

Given a tube family, the questions answered here are: how spread out is it
at every intermediate scale (``scale_profile``), does clustering concentrate
in an identifiable window of scales (``dividing_scales``), does the worst
density factor across a ladder the way it should
(``submultiplicativity_check``), how do per-point direction counts grow with
the angle (``angular_profile``), which coarse-geometry regime does a cover
body fall into (``classify_case``), and how does the union volume trend
across a thickness sweep (``estimate_exponent``).

All measured quantities are voxel quantities on the caller's grid; scans and
fits are deterministic given their inputs (host sampling prefers the most
populated hosts, never wall-clock entropy).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import config
from .audit import AuditSet
from .errors import (
    EmptyFamily,
    HypothesisAuditFailed,
    LadderInvalid,
    NotUniformized,
    ThetaRequired,
)
from .geometry import OrientedBox, affine_rescale_to_ball, make_box, transform_box
from .measures import (
    ConvexFamily,
    Shading,
    VoxelGrid,
    delta_max,
    family_of,
    frostman_const,
    multiplicity,
    union_volume,
)

__all__ = [
    "ScaleRow",
    "ScaleProfile",
    "DividingScalesOutcome",
    "SubmultiplicativityReport",
    "AngularProfile",
    "CaseLabel",
    "ExponentFit",
    "scale_profile",
    "dividing_scales",
    "submultiplicativity_check",
    "angular_profile",
    "classify_case",
    "estimate_exponent",
]


# ---------------------------------------------------------------------------
# per-scale profile


@dataclass(frozen=True)
class ScaleRow:
    """Measured structure of the family at one dyadic scale.

    ``cover_count`` is the size of a greedy scale-``rho`` tube cover,
    ``level_density`` the worst density of the members inside a cover tube,
    ``clustering`` the worst spread constant of the members inside a cover
    tube (measured after rescaling the cover tube to the unit box), and
    ``branching`` the cover-count ratio against the next coarser scale.
    """

    scale: float
    cover_count: int
    level_density: float
    clustering: float
    branching: float


@dataclass(frozen=True)
class ScaleProfile:
    """Rows over the dyadic ladder from 1 down to the family thickness.

    ``frostman_error`` is the worst per-scale clustering constant and
    ``katz_tao_error`` the worst per-scale density; a family is evenly
    spread ("sticky") exactly when both stay small at every scale.
    """

    delta: float
    rows: tuple

    def __post_init__(self):
        scales = [r.scale for r in self.rows]
        if any(a <= b for a, b in zip(scales, scales[1:])):
            raise LadderInvalid("profile scales must be strictly decreasing")
        counts = [r.cover_count for r in self.rows]
        if any(a > b for a, b in zip(counts, counts[1:])):
            raise LadderInvalid("cover counts cannot drop at finer scales")

    @property
    def scales(self) -> tuple:
        return tuple(r.scale for r in self.rows)

    @property
    def frostman_error(self) -> float:
        return max(r.clustering for r in self.rows)

    @property
    def katz_tao_error(self) -> float:
        return max(r.level_density for r in self.rows)

    def row_at(self, rho: float) -> ScaleRow:
        for r in self.rows:
            if abs(r.scale - rho) <= 1e-9 * max(1.0, rho):
                return r
        raise LadderInvalid(f"scale {rho} is not on the profile ladder")

    def as_rows(self) -> list[dict]:
        return [
            {
                "scale": r.scale,
                "cover_count": r.cover_count,
                "level_density": r.level_density,
                "clustering": r.clustering,
                "branching": r.branching,
            }
            for r in self.rows
        ]


def _sign_normalized_axis(box: OrientedBox) -> np.ndarray:
    axis = box.axes[2].copy()
    for c in axis:
        if abs(c) > 1e-9:
            if c < 0:
                axis = -axis
            break
    return axis


def _profile_hosts(family: ConvexFamily, rho: float):
    """Greedy rho-cover keyed by direction cell and cross-section cell.

    Directions are snapped to a rho-lattice on their first two components
    (after sign normalization), so nearby directions merge at coarse scales;
    offsets are snapped to a rho-lattice in the frame of the group's first
    member.  Host boxes are widened for member width and for the sweep of
    tilted members, so every member stays essentially inside its host.
    """
    groups: dict[tuple, list[int]] = {}
    frames: dict[tuple, np.ndarray] = {}
    for i, box in enumerate(family):
        axis = _sign_normalized_axis(box)
        dkey = tuple(np.floor(axis[:2] / rho).astype(int))
        if dkey not in frames:
            frames[dkey] = box.axes
        axes = frames[dkey]
        local = axes @ box.center
        cell = tuple(np.floor(local[:2] / rho).astype(int))
        groups.setdefault((dkey, cell), []).append(i)
    hosts = []
    for (dkey, cell), ids in sorted(groups.items()):
        axes = frames[dkey]
        members = [family[i] for i in ids]
        axial = [float(axes[2] @ m.center) for m in members]
        max_len = max(m.dims[2] for m in members)
        tilt = 1.5 * rho * max_len  # sweep of a member tilted by the cell size
        width = rho + max(m.dims[0] for m in members) + tilt
        length = max_len + (max(axial) - min(axial)) + tilt
        center_local = np.array(
            [(cell[0] + 0.5) * rho, (cell[1] + 0.5) * rho, (max(axial) + min(axial)) / 2.0]
        )
        hosts.append(
            (make_box(center_local @ axes, axes, (width, width, max(length, width)),
                      role="generic"), np.array(ids))
        )
    return hosts


def _rescaled_clustering(host: OrientedBox, members: list, mode: str,
                         overrides: dict | None) -> float:
    """Spread constant of ``members`` inside ``host``, in host coordinates.

    The host is mapped onto the unit box so the constant is dimensionless:
    a value near 1 means the members fill their host evenly.
    """
    amap = affine_rescale_to_ball(host)
    moved = [transform_box(amap, m) for m in members]
    base = transform_box(amap, host)
    h = min(m.dims[0] for m in moved) / 2.0
    grid = VoxelGrid.fit(moved + [base], h)
    return frostman_const(family_of(moved), base, grid, mode=mode, overrides=overrides)


def scale_profile(uniform, grid: VoxelGrid, mode: str = "search",
                  overrides: dict | None = None) -> ScaleProfile:
    """Per-dyadic-scale cover counts, densities, and clustering constants.

    Accepts a tube hierarchy or a plain family.  Walks rho = 1, 1/2, ...,
    delta; at each scale builds a greedy tube cover and measures, over the
    most populated cover tubes, the worst member density inside a host (on
    the caller's grid) and the worst clustering constant inside a host
    (after rescaling the host to the unit box).
    """
    tubes = getattr(uniform, "tubes", uniform)
    if len(tubes) == 0:
        raise EmptyFamily("cannot profile an empty family")
    delta = float(min(b.dims[0] for b in tubes))
    n_levels = max(1, int(round(math.log2(1.0 / delta))))
    host_cap = int(config.get(overrides, "profile_host_sample"))
    rows = []
    prev_count = None
    for j in range(n_levels + 1):
        rho = max(2.0 ** -j, delta)
        hosts = _profile_hosts(tubes, rho)
        # the most populated hosts carry the worst concentration
        picks = sorted(hosts, key=lambda hv: (-hv[1].size, int(hv[1][0])))[:host_cap]
        level = 0.0
        worst = 1.0
        for host, ids in picks:
            members = [tubes[int(i)] for i in ids]
            rec = delta_max(family_of(members), grid, mode=mode, within=host,
                            overrides=overrides)
            level = max(level, rec.value)
            worst = max(worst, _rescaled_clustering(host, members, mode, overrides))
        count = len(hosts)
        branching = 1.0 if prev_count is None else count / prev_count
        rows.append(ScaleRow(rho, count, level, worst, branching))
        prev_count = count
        if rho <= delta:
            break
    return ScaleProfile(delta=delta, rows=tuple(rows))


# ---------------------------------------------------------------------------
# dividing-scales scan


@dataclass(frozen=True)
class DividingScalesOutcome:
    """Result of the stopping-time scan over a scale profile.

    ``outcome`` is "every-scale" when the per-scale error stays under the
    advertised allowance at all scales, else "window" with the witness
    scales (coarse end ``theta``, fine end ``tau``), the ladder index
    ``step_index`` whose exponent the window's growth matches, and the
    inner-window condition rows (scale, measured growth, required growth).
    """

    variant: str
    epsilon: float
    outcome: str
    error: float
    allowed: float
    tau: float | None = None
    theta: float | None = None
    step_index: int | None = None
    conditions: tuple = ()
    satisfied: bool = True


def _default_etas(n_steps: int, epsilon: float, overrides: dict | None) -> tuple:
    ratio = float(config.get(overrides, "eta_ladder_ratio"))
    return tuple(epsilon * ratio ** (j - n_steps) for j in range(1, n_steps + 1))


def dividing_scales(profile: ScaleProfile, N: int, etas=None,
                    variant: str = "frostman",
                    overrides: dict | None = None) -> DividingScalesOutcome:
    """Either certify spreading at every scale or find a clustered window.

    With eps = 1/sqrt(N): outcome "every-scale" holds when the profile's
    per-scale error never exceeds delta^(-5 eps) (spread variant) or
    delta^(-eps) (density variant), times a polylog allowance.  Otherwise
    the scan looks for dyadic scales tau <= delta^eps * theta such that at
    every scale rho strictly inside the window the measured error grows at
    least like a power of the scale ratio; among admissible windows the
    widest wins, then the strongest ladder exponent it sustains.
    """
    if variant not in ("frostman", "katz-tao"):
        raise ValueError(f"unknown variant {variant!r}")
    if N < 1:
        raise LadderInvalid("the scan needs at least one ladder step")
    epsilon = 1.0 / math.sqrt(N)
    etas = _default_etas(N, epsilon, overrides) if etas is None else tuple(float(e) for e in etas)
    if len(etas) != N:
        raise LadderInvalid(f"need one exponent per ladder step: {N}, got {len(etas)}")
    if any(a > b + 1e-12 for a, b in zip(etas, etas[1:])):
        raise LadderInvalid("exponent ladder must be non-decreasing")
    if any(e <= 0 for e in etas) or etas[-1] > epsilon + 1e-12:
        raise LadderInvalid("exponents must be positive, the largest at most 1/sqrt(N)")
    delta = profile.delta
    big_l = max(2.0, math.log2(1.0 / delta))
    allowance = big_l ** config.get(overrides, "dividing_polylog_exp")
    power = 5.0 if variant == "frostman" else 1.0
    allowed = delta ** (-power * epsilon) * allowance

    def score(row: ScaleRow) -> float:
        val = row.clustering if variant == "frostman" else row.level_density
        return max(1.0, val)

    rows = profile.rows
    worst = max(score(r) for r in rows)
    if worst <= allowed:
        return DividingScalesOutcome(variant, epsilon, "every-scale", worst, allowed)

    # Window scan: prefer the widest admissible window, then the strongest
    # exponent whose growth the measured errors dominate throughout.
    min_gap = epsilon * math.log2(1.0 / delta)
    best = None
    for ia in range(len(rows)):  # theta: coarse end
        for ib in range(ia + 1, len(rows)):  # tau: fine end
            theta, tau = rows[ia].scale, rows[ib].scale
            gap = math.log2(theta / tau)
            if gap + 1e-9 < min_gap:
                continue
            lo = tau * (theta / tau) ** epsilon
            hi = theta * (tau / theta) ** epsilon
            inner = [r for r in rows if lo - 1e-12 <= r.scale <= hi + 1e-12]
            if not inner:
                continue
            anchor = score(rows[ib] if variant == "frostman" else rows[ia])
            for j in range(len(etas), 0, -1):
                eta = etas[j - 1]
                conds = []
                ok = True
                for r in inner:
                    ratio = (r.scale / tau) if variant == "frostman" else (theta / r.scale)
                    required = ratio ** eta
                    measured = score(r) / anchor
                    conds.append((r.scale, measured, required))
                    ok = ok and measured >= required - 1e-12
                if ok:
                    cand = (gap, j, ia, ib, tuple(conds))
                    if best is None or cand > best:
                        best = cand
                    break
    if best is None:
        # errors exceed the every-scale allowance but never coherently grow
        # across a window; report the every-scale numbers as unsatisfied
        return DividingScalesOutcome(
            variant, epsilon, "every-scale", worst, allowed, satisfied=False
        )
    gap, j, ia, ib, conds = best
    return DividingScalesOutcome(
        variant,
        epsilon,
        "window",
        worst,
        allowed,
        tau=rows[ib].scale,
        theta=rows[ia].scale,
        step_index=j,
        conditions=conds,
    )


# ---------------------------------------------------------------------------
# submultiplicativity


@dataclass(frozen=True)
class SubmultiplicativityReport:
    """Both sides of the ladder density factorization.

    ``whole`` is the family's worst density; ``step_values`` the worst
    child-cover density inside a parent, one entry per ladder step; the
    claim is whole <= base_constant^steps * product(step_values).
    """

    whole: float
    step_values: tuple
    base_constant: float
    audit: AuditSet

    @property
    def bound(self) -> float:
        return self.base_constant ** len(self.step_values) * math.prod(self.step_values)

    @property
    def passed(self) -> bool:
        return self.audit.all_pass()


def _level_children(uniform, coarse_idx: int, fine_idx: int) -> list[np.ndarray]:
    """Ids of scale-``fine_idx`` parents under each scale-``coarse_idx`` parent."""
    coarse = np.asarray(uniform.assignments[coarse_idx])
    fine = np.asarray(uniform.assignments[fine_idx])
    return [np.unique(fine[coarse == p]) for p in range(len(uniform.parents[coarse_idx]))]


def submultiplicativity_check(uniform, scales, grid: VoxelGrid,
                              mode: str = "oracle",
                              overrides: dict | None = None) -> SubmultiplicativityReport:
    """Check that the worst density factors across a scale subsequence.

    Measures the family's worst density and, per ladder step, the worst
    density of the finer-scale cover inside one coarser-scale parent; the
    product of the step values (times the configured base constant per
    step) must dominate the whole.
    """
    tubes = uniform.tubes
    if len(tubes) == 0:
        raise EmptyFamily("cannot check an empty family")
    scales = tuple(float(s) for s in scales)
    if len(scales) < 2:
        raise LadderInvalid("need at least two scales")
    if any(a <= b for a, b in zip(scales, scales[1:])):
        raise LadderInvalid("scales must be strictly decreasing")
    indices = [uniform.scale_index(s) for s in scales]
    whole = delta_max(tubes, grid, mode=mode, overrides=overrides).value
    steps = []
    for k in range(1, len(scales)):
        coarse_idx, fine_idx = indices[k - 1], indices[k]
        parents = uniform.parents[coarse_idx]
        fine_boxes = uniform.parents[fine_idx]
        step_worst = 0.0
        for pid, kids in enumerate(_level_children(uniform, coarse_idx, fine_idx)):
            if kids.size == 0:
                continue
            members = family_of([fine_boxes[int(i)] for i in kids])
            rec = delta_max(members, grid, mode=mode, within=parents[pid],
                            overrides=overrides)
            step_worst = max(step_worst, rec.value)
        steps.append(step_worst if step_worst > 0 else 1.0)
    base = float(config.get(overrides, "submult_base_constant"))
    audit = AuditSet()
    audit.le(
        "ladder-submultiplicativity",
        whole,
        base ** len(steps) * math.prod(steps),
        note=f"steps={len(steps)}",
    )
    return SubmultiplicativityReport(whole, tuple(steps), base, audit)


# ---------------------------------------------------------------------------
# angular profile


@dataclass(frozen=True)
class AngularProfile:
    """Median per-point direction counts by dyadic angle.

    ``counts[i]`` is the median over sampled (point, reference tube) pairs
    of the number of tubes shaded at the point whose direction lies within
    ``scales[i]`` of the reference; ``dispersion[i]`` is the fraction of
    samples within factor 4 of that median.  ``uniform`` is True when every
    angle row keeps 90% of its samples in that band.
    """

    scales: tuple
    counts: tuple
    dispersion: tuple
    uniform: bool
    samples: int

    def count_at(self, rho: float) -> float:
        for s, c in zip(self.scales, self.counts):
            if abs(s - rho) <= 1e-9 * max(1.0, rho):
                return c
        raise LadderInvalid(f"angle {rho} is not on the profile ladder")


def angular_profile(tubes: ConvexFamily, shading: Shading, grid: VoxelGrid,
                    cells=None, overrides: dict | None = None) -> AngularProfile:
    """Distribution of direction-neighbor counts at shaded points.

    For sampled shaded cells x and reference tubes shaded at x, counts the
    tubes shaded at x within each dyadic angle of the reference direction.
    A family whose counts disperse wildly across samples (under 90% within
    factor 4 of the median) is reported as non-uniform.  ``cells`` pins the
    sample to chosen flat cell indices instead of the default (cells
    carrying at least two tubes).
    """
    if len(tubes) == 0:
        raise EmptyFamily("no bodies")
    if cells is None:
        field_ = multiplicity(tubes, shading, grid)
        support = field_.support[field_.counts >= 2]
        cap = int(config.get(overrides, "angular_cell_sample"))
        if support.size > cap:
            sel = np.random.default_rng(517).choice(support.size, size=cap, replace=False)
            support = support[np.sort(sel)]
    else:
        support = np.unique(np.asarray(cells, dtype=np.int64))
    if support.size == 0:
        raise NotUniformized("no shaded cell carries two bodies")
    members: dict[int, list[int]] = {int(c): [] for c in support}
    for i, part in enumerate(shading.parts):
        if part.size == 0:
            continue
        for c in support[np.isin(support, part, assume_unique=True)]:
            members[int(c)].append(i)
    if not any(len(ids) >= 2 for ids in members.values()):
        raise NotUniformized("no sampled cell carries two bodies")
    axes = np.array([b.axes[2] for b in tubes])
    delta = float(min(b.dims[0] for b in tubes))
    n_levels = max(1, int(round(math.log2(1.0 / delta))))
    scales = tuple(2.0 ** -j for j in range(n_levels + 1))
    pairs = [(c, t0) for c in members for t0 in members[c]]
    pair_cap = int(config.get(overrides, "angular_pair_cap"))
    if len(pairs) > pair_cap:
        sel = np.random.default_rng(518).choice(len(pairs), size=pair_cap, replace=False)
        pairs = [pairs[int(i)] for i in sorted(sel)]
    per_pair = np.zeros((len(pairs), len(scales)))
    for row, (c, t0) in enumerate(pairs):
        ids = members[c]
        cosines = np.clip(np.abs(axes[ids] @ axes[t0]), 0.0, 1.0)
        angles = np.arccos(cosines)
        for col, rho in enumerate(scales):
            per_pair[row, col] = int(np.sum(angles <= rho + 1e-12))
    medians = np.median(per_pair, axis=0)
    dispersion = []
    for col in range(len(scales)):
        med = medians[col]
        if med <= 0:
            dispersion.append(1.0)
            continue
        vals = per_pair[:, col]
        dispersion.append(float(np.mean((vals >= med / 4.0) & (vals <= med * 4.0))))
    uniform = all(d >= 0.9 for d in dispersion)
    return AngularProfile(
        scales=scales,
        counts=tuple(float(m) for m in medians),
        dispersion=tuple(dispersion),
        uniform=uniform,
        samples=len(pairs),
    )


# ---------------------------------------------------------------------------
# case classifier


@dataclass(frozen=True)
class CaseLabel:
    """Coarse-geometry regime of an a x b x 1 cover body at thickness delta.

    Exactly one of: "thick" (a above the thick cutoff), "slab" (b above the
    slab cutoff), "transverse" / "tangential" (split by the reported angle
    against the angle cutoff).
    """

    label: str
    a: float
    b: float
    delta: float
    theta: float | None
    thresholds: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.label not in ("thick", "slab", "transverse", "tangential"):
            raise ValueError(f"unknown label {self.label!r}")


def classify_case(dims, delta: float, theta: float | None = None,
                  params: dict | None = None) -> CaseLabel:
    """Assign the coarse-geometry regime of a cover body.

    thick when a >= delta^(1 - tau); else slab when b >= delta^(2 eps);
    else transverse when theta >= delta^(-tau') a/b, tangential otherwise
    (the last split needs the measured angle).
    """
    a, b = (float(dims[0]), float(dims[1]))
    if not 0.0 < delta < 1.0:
        raise ValueError("thickness must lie in (0, 1)")
    if not (delta <= a + 1e-12 and a <= b + 1e-12 and b <= 1.0 + 1e-12):
        raise ValueError("need delta <= a <= b <= 1")
    params = params or {}
    tau = float(params.get("tau", config.get(None, "classify_tau")))
    tau_prime = float(params.get("tau_prime", config.get(None, "classify_tau_prime")))
    eps_scale = float(params.get("eps_scale", config.get(None, "eps_scale")))
    for name, val in (("tau", tau), ("tau_prime", tau_prime), ("eps_scale", eps_scale)):
        if not 0.0 < val < 1.0:
            raise ValueError(f"{name} must lie in (0, 1)")
    thick_cut = delta ** (1.0 - tau)
    slab_cut = delta ** (2.0 * eps_scale)
    thresholds = {
        "tau": tau,
        "tau_prime": tau_prime,
        "eps_scale": eps_scale,
        "thick_cutoff": thick_cut,
        "slab_cutoff": slab_cut,
    }
    if a >= thick_cut - 1e-12:
        return CaseLabel("thick", a, b, delta, theta, thresholds)
    if b >= slab_cut - 1e-12:
        return CaseLabel("slab", a, b, delta, theta, thresholds)
    angle_cut = delta ** (-tau_prime) * a / b
    thresholds["angle_cutoff"] = angle_cut
    if theta is None:
        raise ThetaRequired(
            "the transverse/tangential split needs the measured angle"
        )
    label = "transverse" if theta >= angle_cut - 1e-12 else "tangential"
    return CaseLabel(label, a, b, delta, theta, thresholds)


# ---------------------------------------------------------------------------
# exponent fit


@dataclass(frozen=True)
class ExponentFit:
    """Least-squares union/multiplicity trend over a thickness sweep.

    ``count_beta`` fits log(multiplicity) against log(count): small values
    mean overlap does not grow with the family.  ``volume_beta`` fits
    log(union volume) against the combined thickness-and-mass predictor;
    both come with per-point residuals, and ``rows`` carries the measured
    table (one dict per thickness).
    """

    count_beta: float
    volume_beta: float
    count_residuals: tuple
    volume_residuals: tuple
    rows: tuple

    def as_rows(self) -> list[dict]:
        return [dict(r) for r in self.rows]


def _fit_through_origin(x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    denom = float(np.dot(x, x))
    if denom <= 0:
        return 0.0, y.copy()
    beta = float(np.dot(x, y) / denom)
    return beta, y - beta * x


def _sweep_tubes(spec) -> ConvexFamily:
    built = spec.build()
    if isinstance(built, tuple):
        built = built[0]
    return built.tubes if hasattr(built, "tubes") else built


def estimate_exponent(sweep, h_factor: float = 0.5, budget: int | None = None,
                      mode: str = "search",
                      overrides: dict | None = None) -> ExponentFit:
    """Fit overlap and union-volume exponents across a thickness sweep.

    Each entry of ``sweep`` is a construction description; its family is
    generated, fully shaded, and measured on a grid of cell h_factor * delta
    (coarsened into the voxel budget when one is given).  Families must
    satisfy the hypothesis bound (worst density at most a small power of
    the thickness); the fits are ordinary least squares through the origin
    on the log-log points, reported with residuals and no inference claims.
    """
    sweep = list(sweep)
    if len(sweep) < 3:
        raise ValueError("need at least three thickness values to fit a trend")
    eta = float(config.get(overrides, "exponent_hypothesis_eta"))
    rows = []
    for spec in sweep:
        fam = _sweep_tubes(spec)
        delta = float(spec.delta)
        grid = VoxelGrid.fit(list(fam), h_factor * delta, budget=budget)
        dmax = delta_max(fam, grid, mode=mode, overrides=overrides).value
        big_l = max(2.0, math.log2(1.0 / delta))
        allowed = delta ** (-eta) * big_l
        if dmax > allowed:
            raise HypothesisAuditFailed(
                f"family at thickness {delta} has worst density {dmax:.3g} "
                f"above the allowance {allowed:.3g}"
            )
        shading = Shading.full(fam, grid)
        mu = multiplicity(fam, shading, grid).mu
        vols = fam.voxel_volumes(grid)
        rows.append(
            {
                "delta": delta,
                "h": grid.h,
                "count": len(fam),
                "tube_volume": float(np.median(vols)),
                "mu": float(mu),
                "union": union_volume(fam, grid),
                "density": dmax,
            }
        )
    count_x = np.array([math.log(r["count"]) for r in rows])
    count_y = np.array([math.log(r["mu"]) for r in rows])
    count_beta, count_res = _fit_through_origin(count_x, count_y)
    vol_x = np.array(
        [
            2.0 * math.log(r["delta"]) + 0.5 * math.log(r["count"] * r["tube_volume"])
            for r in rows
        ]
    )
    vol_y = np.array([math.log(r["union"]) for r in rows])
    volume_beta, vol_res = _fit_through_origin(vol_x, vol_y)
    return ExponentFit(
        count_beta=count_beta,
        volume_beta=volume_beta,
        count_residuals=tuple(float(v) for v in count_res),
        volume_residuals=tuple(float(v) for v in vol_res),
        rows=tuple(rows),
    )
