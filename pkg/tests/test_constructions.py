import numpy as np
import pytest

from tubelab import constructions as cons
from tubelab.errors import OverPacked, TargetUnreachable
from tubelab.factoring import verify_factoring
from tubelab.geometry import contains, direction_angle, make_box, plank_angle
from tubelab.measures import (
    VoxelGrid,
    family_of,
    multiplicity,
    union_volume,
)
from tubelab.shading import pigeonhole, slab_typical_angle, uniformize

from conftest import I3


FAST = {"direction_net_size": 24}


# ---------------------------------------------------------------------------
# spec round-trips


def test_spec_json_round_trip_rebuilds_identically():
    spec = cons.ConstructionSpec(
        "slab_train",
        1 / 64,
        {"theta": 0.25, "count": 8, "angle_mode": "crossing", "phi": 0.25},
        seed=9,
    )
    again = cons.ConstructionSpec.from_json(spec.to_json())
    assert again == spec
    f1, f2 = spec.build(), again.build()
    assert len(f1) == len(f2)
    for a, b in zip(f1, f2):
        assert np.array_equal(a.center, b.center)
        assert np.array_equal(a.axes, b.axes)


def test_spec_validates_kind_and_delta():
    with pytest.raises(ValueError):
        cons.ConstructionSpec("mystery", 1 / 8)
    with pytest.raises(ValueError):
        cons.ConstructionSpec("plank_clustered", 0.4)
    with pytest.raises(ValueError):
        cons.ConstructionSpec("direction_separated", 0.6)
    # the degenerate coarse case is allowed for direction_separated only
    cons.ConstructionSpec("direction_separated", 0.5)


def test_spec_enforces_branching_budget():
    with pytest.raises(ValueError):
        cons.ConstructionSpec(
            "branching_tree", 1 / 4, {"branching": [8, 9], "steps": 2}
        )


# ---------------------------------------------------------------------------
# direction separated


def test_degenerate_coarse_net_has_four_tubes():
    fam = cons.gen_direction_separated(0.5, seed=1)
    assert len(fam) == 4
    dirs = np.array([b.axes[2] for b in fam])
    dots = np.abs(dirs @ dirs.T) - 2 * np.eye(4)
    assert np.arccos(np.clip(dots.max(), -1, 1)) >= 0.5


def test_eighth_separation_count_and_angles():
    fam = cons.gen_direction_separated(1 / 8, seed=1)
    assert 32 <= len(fam) <= 128
    for i in range(0, len(fam), 7):
        for j in range(i + 1, len(fam), 13):
            assert direction_angle(fam[i], fam[j]) >= 1 / 8 - 1e-9


def test_bush_union_much_smaller_than_spread():
    grid = VoxelGrid.cube(1.0, h=1 / 64)
    spread = cons.gen_direction_separated(1 / 8, seed=1)
    bush = cons.gen_direction_separated(1 / 8, seed=1, variant="bush")
    assert union_volume(bush, grid) < 0.75 * union_volume(spread, grid)


def test_copies_with_stride_preserve_count_but_shrink_union():
    grid = VoxelGrid.cube(1.0, h=1 / 64)
    plain = cons.gen_direction_separated(1 / 8, seed=4)
    clustered = cons.gen_direction_separated(
        1 / 8, seed=4, copies=4, direction_stride=4
    )
    assert len(clustered) == len(plain)
    assert union_volume(clustered, grid) < 0.75 * union_volume(plain, grid)


def test_direction_separated_deterministic():
    a = cons.gen_direction_separated(1 / 8, seed=11)
    b = cons.gen_direction_separated(1 / 8, seed=11)
    assert all(np.array_equal(x.center, y.center) for x, y in zip(a, b))


# ---------------------------------------------------------------------------
# branching trees


def test_chain_tree_is_single_tube():
    tree = cons.gen_branching_tree(1 / 16, [1, 1], seed=3)
    assert len(tree.tubes) == 1
    assert tree.branching == (1, 1, 1)
    tree.validate()


def test_tree_counts_levels_and_nesting():
    tree = cons.gen_branching_tree(1 / 16, [2, 4], seed=3)
    tree.validate()
    assert len(tree.tubes) == 8
    assert [len(p) for p in tree.parents] == [1, 2, 8]
    assert tree.branching == (8, 4, 1)
    for k in range(len(tree.ladder)):
        for i in range(len(tree.tubes)):
            parent = tree.parents[k][int(tree.assignments[k][i])]
            assert contains(parent, tree.tubes[i])


def test_maximal_branching_tree_is_spread():
    tree = cons.gen_branching_tree(1 / 16, [16, 16], seed=5)
    tree.validate()
    assert len(tree.tubes) == 256
    from tubelab.measures import delta_max

    grid = VoxelGrid.cube(1.0, h=1 / 32)
    rec = delta_max(tree.tubes, grid, mode="search", overrides=FAST)
    assert rec.value <= 8.0


def test_uneven_branching_recorded_per_scale():
    tree = cons.gen_branching_tree(1 / 16, [4, 1], seed=2)
    assert len(tree.tubes) == 4
    assert tree.branching == (4, 1, 1)
    assert [len(p) for p in tree.parents] == [1, 4, 4]


def test_regenerated_tree_survives_uniformization_floor():
    tree = cons.gen_branching_tree(1 / 16, [2, 4], seed=3)
    uni, rec = uniformize(tree.tubes, ladder=tree.ladder)
    floor = np.log2(len(tree.tubes)) ** (-(len(tree.ladder) - 1))
    assert rec.ratio >= floor - 1e-9
    uni.validate()


def test_tree_overpacked_and_bad_lengths():
    with pytest.raises(OverPacked):
        cons.gen_branching_tree(1 / 16, [17, 1], seed=0)
    with pytest.raises(ValueError):
        cons.gen_branching_tree(1 / 16, [2], seed=0)
    with pytest.raises(ValueError):
        cons.gen_branching_tree(1 / 16, [2, 0], seed=0)


# ---------------------------------------------------------------------------
# plank clusters


def test_single_plank_single_tube():
    fam, planted = cons.gen_plank_clustered(
        1 / 32, 2 / 32, 8 / 32, planks=1, tubes_per_plank=1, seed=0
    )
    assert len(fam) == 1 and len(planted.cover) == 1
    assert contains(planted.cover[0], fam[0])


def test_plank_cluster_partition_is_planted_ground_truth():
    delta = 1 / 32
    fam, planted = cons.gen_plank_clustered(
        delta, 2 * delta, 8 * delta, planks=8, tubes_per_plank=8, seed=0
    )
    assert len(fam) == 64
    assert len(planted.cover) == 8
    seen = np.concatenate(planted.partition)
    assert len(np.unique(seen)) == 64
    for w, W in enumerate(planted.cover):
        for i in planted.partition[w]:
            assert contains(W, fam[int(i)])
    assert planted.mass_retained_fraction == 1.0


def test_plank_cluster_planted_verification_passes():
    delta = 1 / 32
    fam, planted = cons.gen_plank_clustered(
        delta, 2 * delta, 8 * delta, planks=8, tubes_per_plank=8, seed=2
    )
    grid = VoxelGrid.fit(list(fam) + list(planted.cover), h=1 / 64)
    report = verify_factoring(planted, grid, mode="search")
    assert report.all_pass()


def test_plank_cluster_capacity_errors():
    with pytest.raises(OverPacked):
        cons.gen_plank_clustered(1 / 32, 2 / 32, 4 / 32, planks=2, tubes_per_plank=9)
    with pytest.raises(OverPacked):
        cons.gen_plank_clustered(
            1 / 32, 2 / 32, 4 / 32, planks=2, tubes_per_plank=8, packing=3.0
        )
    with pytest.raises(ValueError):
        cons.gen_plank_clustered(1 / 32, 1 / 64, 4 / 32)


def test_stacked_planks_violate_slab_concentration():
    delta = 1 / 32
    _, stacked = cons.gen_plank_clustered(
        delta, 2 * delta, 8 * delta, planks=8, tubes_per_plank=8, seed=0, stacked=True
    )
    span = 7 * 1.05 * (2 * delta) + 2 * delta
    line = cons.slab_concentration(stacked.cover, theta=span)
    assert not line.passed
    _, spread = cons.gen_plank_clustered(
        delta, 2 * delta, 8 * delta, planks=8, tubes_per_plank=8, seed=0
    )
    assert cons.slab_concentration(spread.cover, theta=span).passed


# ---------------------------------------------------------------------------
# slab trains


def test_parallel_train_is_aligned_inside_super_slab():
    fam = cons.gen_slab_train(1 / 64, 1 / 4, 8, angle_mode="parallel", seed=2)
    assert len(fam) == 8
    normals = np.array([b.axes[0] for b in fam])
    assert np.allclose(np.abs(normals @ normals[0]), 1.0)
    super_slab = make_box(np.zeros(3), I3, (1 / 4, 2.0, 2.0), role="slab")
    for b in fam:
        assert contains(super_slab, b)


def test_crossing_train_angle_recovered_by_typical_angle():
    fam = cons.gen_slab_train(1 / 64, 1 / 4, 12, angle_mode="crossing", phi=0.25, seed=2)
    angles = {round(plank_angle(fam[0], b).angle, 6) for b in fam}
    assert angles == {0.0, 0.25}
    grid = VoxelGrid.cube(1.0, h=1 / 128)
    shading = cons.gen_shading(fam, grid, pattern="full")
    fld = multiplicity(fam, shading, grid)
    hot = fld.support[fld.counts >= 2]
    theta, hist, line = slab_typical_angle(fam, shading.restrict_cells(hot), grid)
    assert theta == 0.25
    assert line.passed


def test_spread_train_union_spans_super_slab():
    theta = 1 / 4
    fam = cons.gen_slab_train(1 / 64, theta, 16, angle_mode="spread", seed=2)
    grid = VoxelGrid.cube(1.0, h=1 / 128)
    assert union_volume(fam, grid) >= 0.01 * theta


def test_crossing_angle_too_steep_rejected():
    with pytest.raises(ValueError):
        cons.gen_slab_train(1 / 64, 1 / 64, 4, angle_mode="crossing", phi=0.5)


# ---------------------------------------------------------------------------
# shadings


def shading_family(grid):
    step = 8 * grid.h
    boxes = [
        make_box((-0.75 + i * step, 0.0, 0.0), I3, (0.125, 0.125, 1.0), role="tube")
        for i in range(8)
    ]
    return family_of(boxes)


def test_shading_patterns_hit_density_targets(grid16):
    fam = shading_family(grid16)
    for pattern, lam in [("full", 1.0), ("prefix", 0.5), ("random", 0.3)]:
        sh = cons.gen_shading(fam, grid16, lambda_target=lam, pattern=pattern, seed=7)
        for part, cells in zip(sh.parts, fam.voxel_sets(grid16)):
            assert abs(part.size / cells.size - lam) <= 0.1 * lam + 1e-12


def test_prefix_shading_keeps_leading_cells(grid16):
    fam = shading_family(grid16)
    sh = cons.gen_shading(fam, grid16, lambda_target=0.25, pattern="prefix", seed=0)
    for i, (part, cells) in enumerate(zip(sh.parts, fam.voxel_sets(grid16))):
        axis = fam[i].axes[2]
        kept = grid16.centers(part) @ axis
        dropped = grid16.centers(np.setdiff1d(cells, part)) @ axis
        assert kept.max() <= dropped.min() + grid16.h


def test_dyadic_mix_mass_pigeonhole_recovers_heaviest_class(grid16):
    fam = shading_family(grid16)
    sh = cons.gen_shading(fam, grid16, lambda_target=0.8, pattern="dyadic_mix", seed=3)
    ids, rec = pigeonhole(fam, sh, mode="mass")
    assert ids.tolist() == [0, 4]


def test_shading_target_unreachable_on_coarse_grid(grid16):
    fam = shading_family(grid16)
    with pytest.raises(TargetUnreachable):
        cons.gen_shading(fam, grid16, lambda_target=0.0005, pattern="random")


def test_random_shading_deterministic(grid16):
    fam = shading_family(grid16)
    a = cons.gen_shading(fam, grid16, lambda_target=0.4, pattern="random", seed=5)
    b = cons.gen_shading(fam, grid16, lambda_target=0.4, pattern="random", seed=5)
    assert all(np.array_equal(x, y) for x, y in zip(a.parts, b.parts))
