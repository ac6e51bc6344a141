import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tubelab import geometry as geo
from tubelab.errors import (
    AmbiguousPlane,
    NonOrthonormalAxes,
    NonPositiveExtent,
    RoleMismatch,
)

I3 = np.eye(3)


def rand_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def test_make_box_sorts_dims_and_permutes_axes():
    box = geo.make_box([0, 0, 0], I3, [1.0, 1 / 16, 1 / 16], role="tube")
    assert np.allclose(box.dims, [1 / 16, 1 / 16, 1.0])
    # long axis must now be the original x axis
    assert np.allclose(np.abs(box.axes[2]), [1, 0, 0])
    assert box.volume == pytest.approx((1 / 16) ** 2)


def test_make_box_unit_cube():
    cube = geo.make_box([0, 0, 0], I3, [1, 1, 1], role="ball")
    assert geo.dims_sorted(cube) == (1.0, 1.0, 1.0)
    assert cube.volume == pytest.approx(1.0)


def test_make_box_rejects_bad_input():
    with pytest.raises(NonPositiveExtent):
        geo.make_box([0, 0, 0], I3, [1, 0, 1])
    with pytest.raises(NonOrthonormalAxes):
        geo.make_box([0, 0, 0], np.ones((3, 3)), [1, 1, 1])
    with pytest.raises(RoleMismatch):
        geo.make_box([0, 0, 0], I3, [1 / 16, 1 / 4, 1.0], role="tube")
    with pytest.raises(RoleMismatch):
        geo.make_box([0, 0, 0], I3, [1 / 16, 1 / 4, 1.0], role="bogus")


def test_role_tags_accept_factor_two_wiggle():
    geo.make_box([0, 0, 0], I3, [1 / 16, 1 / 8, 1.0], role="tube")
    geo.make_box([0, 0, 0], I3, [1 / 32, 0.6, 1.0], role="slab")
    with pytest.raises(RoleMismatch):
        geo.make_box([0, 0, 0], I3, [1 / 32, 0.4, 1.0], role="slab")


def test_corners_and_aabb():
    rng = np.random.default_rng(7)
    rot = rand_rotation(rng)
    box = geo.make_box([0.3, -0.2, 0.1], rot, [0.1, 0.4, 1.0])
    cs = box.corners()
    assert cs.shape == (8, 3)
    lo, hi = box.aabb()
    assert np.all(cs >= lo - 1e-12) and np.all(cs <= hi + 1e-12)
    # every corner is at circumradius from the center
    assert np.allclose(np.linalg.norm(cs - box.center, axis=1), box.circumradius)


def test_contains_exact_corners():
    outer = geo.make_box([0, 0, 0], I3, [1, 1, 1])
    inner = geo.make_box([0.1, 0.1, 0.1], I3, [0.5, 0.5, 0.5])
    assert geo.contains(outer, inner)
    assert not geo.contains(inner, outer)
    # reflexivity
    assert geo.contains(outer, outer)


def test_contains_transitive_random():
    rng = np.random.default_rng(11)
    for _ in range(50):
        rot = rand_rotation(rng)
        a = geo.make_box(rng.normal(scale=0.1, size=3), rot, [2.0, 2.5, 3.0])
        b = geo.make_box(a.center, rot, [1.0, 1.2, 1.5])
        c = geo.make_box(a.center + rng.normal(scale=0.01, size=3), rand_rotation(rng),
                         [0.1, 0.1, 0.2])
        if geo.contains(a, b) and geo.contains(b, c):
            assert geo.contains(a, c)


def test_dilate_contains_original():
    rng = np.random.default_rng(3)
    for _ in range(20):
        box = geo.make_box(rng.normal(size=3), rand_rotation(rng),
                           rng.uniform(0.1, 1.0, size=3))
        assert geo.contains(box.dilate(1.0 + 1e-9), box)
        assert geo.comparable(box, box.dilate(2.0), dilate=10.0)


def test_neighborhood_monotone_and_exact_on_axis_boxes():
    box = geo.make_box([0, 0, 0], I3, [1 / 8, 1 / 8, 1])
    grown = geo.neighborhood(box, 1 / 16)
    assert np.allclose(grown.dims, [1 / 8 + 1 / 8, 1 / 8 + 1 / 8, 1 + 1 / 8])
    assert geo.contains(grown, box)
    assert geo.neighborhood(box, 0.0) is box
    with pytest.raises(NonPositiveExtent):
        geo.neighborhood(box, -0.1)


def test_neighborhood_keeps_valid_role():
    # symmetric thickening preserves the role inequalities
    tube = geo.make_box([0, 0, 0], I3, [1 / 64, 1 / 64, 1], role="tube")
    for r in (1 / 256, 0.4):
        assert geo.neighborhood(tube, r).role == "tube"


def test_affine_rescale_slab_example():
    # slab of thickness 1/8: frame coordinates scale by (8, 1, 1)
    slab = geo.make_box([0, 0, 0], I3, [1 / 8, 1, 1], role="slab")
    amap = geo.affine_rescale_to_ball(slab)
    assert amap.determinant == pytest.approx(8.0)
    img = geo.transform_box(amap, slab)
    assert np.allclose(img.dims, [1, 1, 1], atol=1e-12)
    assert np.allclose(img.center, 0.0, atol=1e-12)


def test_affine_rescale_unit_cube_is_identity():
    cube = geo.make_box([0, 0, 0], I3, [1, 1, 1])
    amap = geo.affine_rescale_to_ball(cube)
    assert np.allclose(amap.linear, I3)
    assert np.allclose(amap.translation, 0.0)


def test_affine_roundtrip_on_random_points():
    rng = np.random.default_rng(23)
    box = geo.make_box(rng.normal(size=3), rand_rotation(rng), [0.05, 0.3, 1.0])
    amap = geo.affine_rescale_to_ball(box)
    pts = rng.normal(size=(100, 3))
    back = amap.inverse().apply(amap.apply(pts))
    assert np.allclose(back, pts, atol=1e-7)
    # composition with inverse is the identity map
    ident = amap.compose(amap.inverse())
    assert np.allclose(ident.linear, I3, atol=1e-9)
    assert np.allclose(ident.translation, 0.0, atol=1e-9)


def test_rescale_sends_interior_to_unit_cube():
    rng = np.random.default_rng(5)
    box = geo.make_box([0.2, -0.4, 0.0], rand_rotation(rng), [0.1, 0.2, 0.8])
    amap = geo.affine_rescale_to_ball(box)
    # corners map to the corners of the centered unit-diameter cube
    img = amap.apply(box.corners())
    assert np.allclose(np.sort(np.abs(img).ravel()), 0.5, atol=1e-9)


def test_transform_box_rigid_preserves_dims_and_volume():
    rng = np.random.default_rng(41)
    box = geo.make_box(rng.normal(size=3), rand_rotation(rng), [0.1, 0.4, 0.9])
    rot = rand_rotation(rng)
    amap = geo.AffineMap(rot, rng.normal(size=3))
    img = geo.transform_box(amap, box)
    assert np.allclose(img.dims, box.dims, atol=1e-9)
    assert img.volume == pytest.approx(box.volume)
    # image corners coincide with transformed corners as point sets
    a = np.sort(amap.apply(box.corners()), axis=0)
    b = np.sort(img.corners(), axis=0)
    assert np.allclose(a, b, atol=1e-9)


def test_plank_angle_orthogonal_and_parallel():
    p1 = geo.make_box([0, 0, 0], I3, [1 / 32, 1 / 4, 1], role="plank")
    rot = np.array([[0.0, 1, 0], [1, 0, 0], [0, 0, -1]])  # swap x/y
    p2 = geo.make_box([0, 0, 0], rot @ I3, [1 / 32, 1 / 4, 1], role="plank")
    res = geo.plank_angle(p1, p2)
    assert res.angle == pytest.approx(np.pi / 2)
    assert res.floor == pytest.approx(1 / 8)
    same = geo.plank_angle(p1, p1)
    assert same.angle == 0.0
    assert same.indistinguishable


def test_plank_angle_symmetry_and_ambiguity():
    rng = np.random.default_rng(9)
    p1 = geo.make_box([0, 0, 0], rand_rotation(rng), [0.01, 0.2, 1])
    p2 = geo.make_box([0, 0, 0], rand_rotation(rng), [0.02, 0.3, 1])
    assert geo.plank_angle(p1, p2).angle == pytest.approx(geo.plank_angle(p2, p1).angle)
    ball = geo.make_box([0, 0, 0], I3, [0.6, 0.8, 1.0])
    with pytest.raises(AmbiguousPlane):
        geo.plank_angle(p1, ball)


def test_direction_angle():
    t1 = geo.make_box([0, 0, 0], I3, [1 / 16, 1 / 16, 1], role="tube")
    frame = geo.frame_from_axis([1, 1, 0])
    t2 = geo.make_box([0, 0, 0], frame, [1 / 16, 1 / 16, 1], role="tube")
    # angle between z and the diagonal in the xy-plane is pi/2
    assert geo.direction_angle(t1, t2) == pytest.approx(np.pi / 2)
    assert geo.direction_angle(t1, t1) == 0.0


def test_frame_from_axis_is_orthonormal():
    rng = np.random.default_rng(2)
    for _ in range(50):
        d = rng.normal(size=3)
        frame = geo.frame_from_axis(d)
        assert np.allclose(frame @ frame.T, I3, atol=1e-12)
        assert np.allclose(frame[2], d / np.linalg.norm(d))


def test_direction_net_density():
    net = geo.direction_net(128)
    assert net.shape[1] == 3
    assert abs(net.shape[0] - 128) <= 8
    assert np.allclose(np.linalg.norm(net, axis=1), 1.0)
    assert np.all(net[:, 2] >= 0)


@pytest.mark.parametrize("delta", [1 / 2, 1 / 8, 1 / 16])
def test_separated_directions(delta):
    dirs = geo.separated_directions(delta)
    n = dirs.shape[0]
    assert n >= 0.5 / delta**2
    assert n <= 2.0 / delta**2 + 1
    dots = np.abs(dirs @ dirs.T)
    np.fill_diagonal(dots, 0.0)
    assert np.all(dots <= np.cos(delta) + 1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_box_key_stable_and_discriminating(seed):
    rng = np.random.default_rng(seed)
    box = geo.make_box(rng.normal(size=3), rand_rotation(rng),
                       rng.uniform(0.05, 1.0, size=3))
    assert box.key() == geo.make_box(box.center, box.axes, box.dims).key() or box.role != "generic"
    shifted = geo.make_box(box.center + 1e-6, box.axes, box.dims)
    assert shifted.key() != geo.make_box(box.center, box.axes, box.dims).key()


def test_boxes_are_immutable():
    box = geo.make_box([0, 0, 0], I3, [1, 1, 1])
    with pytest.raises(ValueError):
        box.center[0] = 5.0
    with pytest.raises(ValueError):
        box.half_extents[0] = 5.0
