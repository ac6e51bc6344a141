import numpy as np
import pytest

from tubelab import geometry as geo
from tubelab import measures as ms
from tubelab.errors import (
    EmptyFamily,
    EmptyShading,
    GridTooCoarse,
    UnderResolved,
    ZeroBaseDensity,
)

from conftest import I3, axis_tube, make_tube

FAST_CFG = {"direction_net_size": 24}


# ---------------------------------------------------------------------------
# grid


def test_cube_grid_budget_clamp():
    g = ms.VoxelGrid.cube(1.0, h=2**-8, budget=2**24)
    assert g.dims == (256, 256, 256)
    assert g.h == pytest.approx(2**-7)
    assert g.n_cells == 2**24


def test_grid_domain_and_index_roundtrip():
    g = ms.VoxelGrid.cube(1.0, h=1 / 8)
    assert g.dims == (16, 16, 16)
    assert np.allclose(g.domain.dims, [2, 2, 2])
    flat = np.array([0, 5, 4095, 137])
    assert np.array_equal(g.flatten(g.unflatten(flat)), flat)
    pts = g.centers(flat)
    assert np.array_equal(g.points_to_flat(pts), flat)
    outside = g.points_to_flat(np.array([[5.0, 0.0, 0.0]]))
    assert outside[0] == -1


def test_grid_fit_covers_bodies_and_rejects_too_coarse():
    tubes = [axis_tube([0.2, 0.0, 0.0], 1 / 8), axis_tube([-0.2, 0.1, 0.0], 1 / 8)]
    g = ms.VoxelGrid.fit(tubes, h=1 / 16)
    for t in tubes:
        assert geo.contains(g.domain, t)
    with pytest.raises(GridTooCoarse):
        ms.VoxelGrid.fit(tubes, h=1 / 16, budget=8)


# ---------------------------------------------------------------------------
# voxelize


def test_voxelize_whole_domain(grid8):
    cells = ms.voxelize(grid8.domain, grid8)
    assert cells.size == grid8.n_cells


def test_voxelize_under_resolved_warns(grid8):
    sliver = geo.make_box([0, 0, 0], I3, [grid8.h / 100, 0.5, 0.5])
    with pytest.warns(UnderResolved):
        ms.voxelize(sliver, grid8, use_cache=False)


def test_voxelize_tube_count_matches_analytic_volume():
    # rotated 1/16-tube on an h = delta/4 grid: count within 25% of vol/h^3
    delta = 1 / 16
    g = ms.VoxelGrid.cube(1.0, h=delta / 4)
    tube = make_tube([0.05, -0.03, 0.08], [0.3, -0.5, 0.81], delta)
    count = ms.voxelize(tube, g).size
    expected = delta**2 * 1.0 / g.cell_volume
    assert abs(count - expected) <= 0.25 * expected


def test_voxelize_axis_aligned_tube_is_exact(grid16):
    tube = axis_tube([0, 0, 0], 1 / 16)
    cells = ms.voxelize(tube, grid16)
    assert cells.size * grid16.cell_volume == pytest.approx((1 / 16) ** 2, rel=1e-12)


def test_voxelize_deterministic_and_sorted(grid16, rng):
    tube = make_tube(rng.normal(scale=0.1, size=3), rng.normal(size=3), 1 / 16)
    a = ms.voxelize(tube, grid16, use_cache=False)
    b = ms.voxelize(tube, grid16, use_cache=False)
    assert np.array_equal(a, b)
    assert np.all(np.diff(a) > 0)


# ---------------------------------------------------------------------------
# union volume


def test_union_disjoint_congruent_tubes(grid16):
    tubes = [axis_tube([x, 0, 0], 1 / 16) for x in (-0.375, -0.125, 0.125, 0.375)]
    fam = ms.family_of(tubes)
    vol = ms.union_volume(fam, grid16)
    per = ms.voxelize(tubes[0], grid16).size * grid16.cell_volume
    assert vol == pytest.approx(4 * per, rel=1e-12)


def test_union_identical_tubes(grid16):
    t = axis_tube([0, 0, 0], 1 / 16)
    fam = ms.family_of([t] * 5)
    assert ms.union_volume(fam, grid16) == pytest.approx(
        ms.voxelize(t, grid16).size * grid16.cell_volume
    )
    with pytest.raises(EmptyFamily):
        ms.union_volume(ms.family_of([]), grid16)


def test_union_bush_volume_stable_under_refinement():
    # 64 direction-separated 1/8-tubes through the origin; the half-cell-size
    # voxelization is the reference value and the working grid must be within
    # a factor 2 of it.
    dirs = geo.separated_directions(1 / 8)[:64]
    tubes = [make_tube([0, 0, 0], d, 1 / 8) for d in dirs]
    fam = ms.family_of(tubes)
    coarse = ms.VoxelGrid.cube(1.0, h=1 / 16)
    fine = ms.VoxelGrid.cube(1.0, h=1 / 32)
    v_work = ms.union_volume(fam, coarse)
    v_ref = ms.union_volume(ms.family_of(tubes), fine)
    assert 0.5 * v_ref <= v_work <= 2.0 * v_ref


# ---------------------------------------------------------------------------
# multiplicity / shading fraction


def test_multiplicity_disjoint_full_shading(grid16):
    tubes = [axis_tube([x, 0, 0], 1 / 16) for x in (-0.25, 0.0, 0.25)]
    fam = ms.family_of(tubes)
    sh = ms.Shading.full(fam, grid16)
    field = ms.multiplicity(fam, sh, grid16)
    assert field.mu == 1.0
    assert field.max_value == 1


def test_multiplicity_identical_tubes(grid16):
    t = axis_tube([0, 0, 0], 1 / 16)
    fam = ms.family_of([t] * 6)
    field = ms.multiplicity(fam, ms.Shading.full(fam, grid16), grid16)
    assert field.mu == 6.0


def test_multiplicity_crossing_tubes_voxel_oracle(grid16):
    delta = 1 / 16
    t1 = axis_tube([0, 0, 0], delta)
    t2 = make_tube([0, 0, 0], [1, 0, 0], delta)
    fam = ms.family_of([t1, t2])
    sh = ms.Shading.full(fam, grid16)
    field = ms.multiplicity(fam, sh, grid16)
    s1, s2 = ms.voxelize(t1, grid16), ms.voxelize(t2, grid16)
    overlap = np.intersect1d(s1, s2, assume_unique=True).size
    expected = (s1.size + s2.size) / (s1.size + s2.size - overlap)
    assert overlap > 0
    assert field.mu == pytest.approx(expected, rel=1e-12)
    # pointwise: the crossing point is covered twice
    assert field.at_points(np.array([[0.0, 0.0, 0.0]]))[0] == 2
    assert field.at_points(np.array([[0.9, 0.9, 0.9]]))[0] == 0


def test_multiplicity_identity_exact(grid16, rng):
    tubes = [make_tube(rng.normal(scale=0.15, size=3), rng.normal(size=3), 1 / 16)
             for _ in range(12)]
    fam = ms.family_of(tubes)
    sets = fam.voxel_sets(grid16)
    parts = tuple(s[rng.random(s.size) < 0.6] for s in sets)
    sh = ms.Shading(fam, grid16, parts)
    if sh.is_empty():
        pytest.skip("random shading degenerated")
    field = ms.multiplicity(fam, sh, grid16)
    lhs = field.mu * ms.union_volume(fam, grid16, shading=sh)
    assert lhs == pytest.approx(sh.mass, rel=1e-12)


def test_multiplicity_empty_shading_is_error(grid16):
    fam = ms.family_of([axis_tube([0, 0, 0], 1 / 16)])
    empty = ms.Shading(fam, grid16, (np.empty(0, dtype=np.int64),))
    with pytest.raises(EmptyShading):
        ms.multiplicity(fam, empty, grid16)


def test_shading_fraction_full_empty_half(grid16):
    tubes = [axis_tube([0.25, 0, 0], 1 / 16), axis_tube([-0.25, 0, 0], 1 / 16)]
    fam = ms.family_of(tubes)
    full = ms.Shading.full(fam, grid16)
    assert ms.shading_fraction(fam, full, grid16) == 1.0
    sets = fam.voxel_sets(grid16)
    empty = ms.Shading(fam, grid16, tuple(s[:0] for s in sets))
    assert ms.shading_fraction(fam, empty, grid16) == 0.0
    half = ms.Shading(fam, grid16, tuple(s[: s.size // 2] for s in sets))
    assert ms.shading_fraction(fam, half, grid16) == pytest.approx(0.5)
    assert half.validate()


def test_shading_restrict_ops(grid16):
    fam = ms.family_of([axis_tube([0.25, 0, 0], 1 / 16), axis_tube([-0.25, 0, 0], 1 / 16)])
    sh = ms.Shading.full(fam, grid16)
    only0 = sh.restrict_ids([0])
    assert only0.parts[1].size == 0
    assert np.array_equal(only0.nonempty_ids(), [0])
    cells = sh.parts[0][:10]
    cut = sh.restrict_cells(cells)
    assert cut.parts[0].size == 10 and cut.parts[1].size == 0


# ---------------------------------------------------------------------------
# densities


def test_delta_density_self_is_one(grid16):
    K = geo.make_box([0, 0, 0], I3, [0.5, 0.5, 0.5])
    fam = ms.family_of([K])
    assert ms.delta_density(fam, K, grid16) == 1.0


def test_delta_density_no_members(grid16):
    fam = ms.family_of([axis_tube([0.5, 0.5, 0], 1 / 16)])
    K = geo.make_box([-0.5, -0.5, 0], I3, [0.25, 0.25, 0.25])
    assert ms.delta_density(fam, K, grid16) == 0.0
    thin = geo.make_box([5.0, 5.0, 5.0], I3, [0.1, 0.1, 0.1])
    with pytest.raises(ZeroBaseDensity):
        ms.delta_density(fam, thin, grid16)


def test_delta_density_three_tubes_in_unit_cube(grid8):
    tubes = [axis_tube([x, 0, 0], 1 / 8) for x in (-0.25, 0.0, 0.25)]
    fam = ms.family_of(tubes)
    K = geo.make_box([0, 0, 0], I3, [1, 1, 1])
    assert ms.delta_density(fam, K, grid8) == pytest.approx(3 / 64, rel=1e-12)


def _packed_plank_family(delta=1 / 16):
    # 16 parallel tubes packed into a delta x 4delta x 1 plank
    xs = -1.5 * delta + np.arange(16) * (3 * delta / 15)
    return ms.family_of([axis_tube([x, 0, 0], delta) for x in xs], label="packed")


def test_delta_max_identical_tubes(grid16):
    t = axis_tube([0, 0, 0], 1 / 16)
    fam = ms.family_of([t] * 9)
    rec = ms.delta_max(fam, grid16, mode="search", overrides=FAST_CFG)
    assert rec.value == pytest.approx(9.0, rel=1e-12)
    assert np.allclose(rec.argmax.dims, t.dims)


def test_delta_max_disjoint_tiling(grid16):
    delta = 1 / 16
    tubes = [axis_tube([-0.5 + delta / 2 + k * delta, 0, 0], delta) for k in range(16)]
    fam = ms.family_of(tubes)
    rec = ms.delta_max(fam, grid16, mode="search", overrides=FAST_CFG)
    assert 1.0 - 1e-9 <= rec.value <= 2.0


def test_delta_max_packed_plank_oracle(grid16):
    fam = _packed_plank_family()
    oracle = ms.delta_max(fam, grid16, mode="oracle", overrides=FAST_CFG)
    search = ms.delta_max(fam, grid16, mode="search", overrides=FAST_CFG)
    assert oracle.value == pytest.approx(4.0, rel=1e-9)
    assert search.value == pytest.approx(4.0, rel=1e-9)
    # argmax is the packing plank: cross-section delta x 4delta
    d = oracle.argmax.dims
    assert d[0] == pytest.approx(1 / 16, rel=1e-6)
    assert d[1] == pytest.approx(4 / 16, rel=1e-6)


def test_delta_max_search_between_domain_density_and_oracle(grid16, rng):
    tubes = [make_tube(rng.normal(scale=0.1, size=3), rng.normal(size=3), 1 / 16)
             for _ in range(24)]
    fam = ms.family_of(tubes)
    lo = ms.delta_density(fam, grid16.domain, grid16)
    search = ms.delta_max(fam, grid16, mode="search", overrides=FAST_CFG)
    oracle = ms.delta_max(fam, grid16, mode="oracle", overrides=FAST_CFG)
    assert search.value >= lo - 1e-12
    assert oracle.value >= search.value - 1e-12


def test_delta_max_monotone_under_adding_bodies(grid16):
    fam = _packed_plank_family()
    K = geo.make_box([0, 0, 0], I3, [1, 1, 1])
    base = ms.delta_density(fam, K, grid16)
    bigger = ms.family_of(list(fam.boxes) + [axis_tube([0.3, 0.3, 0], 1 / 16)])
    assert ms.delta_density(bigger, K, grid16) >= base
    assert ms.union_volume(bigger, grid16) >= ms.union_volume(fam, grid16)


def test_delta_max_subset_monotone_oracle(grid16, rng):
    # density maxima are inherited downward: subsets never score higher
    dirs = geo.separated_directions(1 / 4)
    tubes = [make_tube(rng.normal(scale=0.1, size=3), d, 1 / 4) for d in dirs]
    fam = ms.family_of(tubes)
    g = ms.VoxelGrid.cube(1.0, h=1 / 8)
    full = ms.delta_max(fam, g, mode="oracle", overrides=FAST_CFG)
    n = len(fam)
    for _ in range(100):
        k = int(rng.integers(1, n))
        ids = np.sort(rng.choice(n, size=k, replace=False))
        sub = fam.subfamily(ids)
        rec = ms.delta_max(sub, g, mode="oracle", overrides=FAST_CFG)
        assert rec.value <= full.value + 1e-9


def test_frostman_single_tube_in_cube(grid8):
    tube = axis_tube([0, 0, 0], 1 / 8)
    fam = ms.family_of([tube])
    K = geo.make_box([0, 0, 0], I3, [1, 1, 1])
    cf = ms.frostman_const(fam, K, grid8, mode="oracle", overrides=FAST_CFG)
    base = ms.delta_density(fam, K, grid8)
    assert cf == pytest.approx(1.0 / base, rel=1e-12)
    assert cf == pytest.approx(64.0, rel=1e-9)


def test_frostman_disjoint_tiling_is_small(grid8):
    delta = 1 / 8
    tubes = [axis_tube([-0.5 + delta / 2 + i * delta, -0.5 + delta / 2 + j * delta, 0], delta)
             for i in range(8) for j in range(8)]
    fam = ms.family_of(tubes)
    K = geo.make_box([0, 0, 0], I3, [1, 1, 1])
    cf = ms.frostman_const(fam, K, grid8, mode="search", overrides=FAST_CFG)
    assert cf <= 2.0


def test_frostman_packed_plank(grid16):
    fam = _packed_plank_family()
    K = geo.make_box([0, 0, 0], I3, [1, 1, 1])
    cf = ms.frostman_const(fam, K, grid16, mode="oracle", overrides=FAST_CFG)
    assert cf == pytest.approx(4.0 / ms.delta_density(fam, K, grid16), rel=1e-9)
    with pytest.raises(ZeroBaseDensity):
        far = geo.make_box([0.7, 0.7, 0.7], I3, [0.2, 0.2, 0.2])
        ms.frostman_const(fam, far, grid16)


# ---------------------------------------------------------------------------
# dedup


def test_distinct_representatives(grid16):
    base = axis_tube([0, 0, 0], 1 / 16)
    near = axis_tube([1 / 64, 0, 0], 1 / 16)       # mostly overlapping
    far = axis_tube([0.5, 0.5, 0], 1 / 16)
    fam = ms.family_of([base, near, far])
    kept = ms.distinct_representatives(fam, grid16)
    assert np.array_equal(kept, [0, 2])
    spread = ms.family_of([axis_tube([x, 0, 0], 1 / 16) for x in (-0.4, 0.0, 0.4)])
    assert ms.distinct_representatives(spread, grid16).size == 3
