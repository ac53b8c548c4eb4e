import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bevloc.geometry import (ConfigError, FlightConfig, Intrinsics, WORLD_UP, bev_pose, bev_pose_sequence,
                             canonical_quaternion, format_poses, look_at, parse_poses, polar_transform,
                             pose_yaw_deg, spherical_transform, spiral_path)
from bevloc.splat import Gaussian3D, GaussianScene, render


def horizontal(p, c=(0, 0, 0)):
    return math.hypot(p[0] - c[0], p[1] - c[1])


# -- spiral path ---------------------------------------------------------------------------

def test_three_frames_three_loops_constant_radius():
    poses = spiral_path(FlightConfig(45.0, 3, 3, 10.0, 10.0))
    assert len(poses) == 3
    for p in poses:
        # all azimuths are multiples of 360, so the same spot
        np.testing.assert_allclose(p.position, [10.0, 0.0, 10.0], atol=1e-9)


def test_altitude_at_thirty_degrees():
    p = spiral_path(FlightConfig(30.0, 1, 4, 10.0, 10.0))[0]
    assert p.position[2] == pytest.approx(10 * math.tan(math.radians(30)), abs=1e-9)
    assert p.position[2] == pytest.approx(5.7735, abs=1e-4)


def test_radius_interpolation_midpoint():
    cfg = FlightConfig(45.0, 3, 100, 12.0, 6.0)
    poses = spiral_path(cfg)
    # linear in t = k / (n - 1)
    expected = 12.0 + (6.0 - 12.0) * 50 / 99
    assert horizontal(poses[50].position) == pytest.approx(expected, abs=1e-9)
    assert horizontal(poses[50].position) == pytest.approx(9.0, abs=0.05)


def test_azimuth_sweeps_all_loops_monotonically():
    cfg = FlightConfig(45.0, 3, 30, 12.0, 6.0)
    az = [math.atan2(p.position[1], p.position[0]) for p in spiral_path(cfg)]
    unwrapped = np.unwrap(az)
    steps = np.diff(unwrapped)
    assert (steps > 0).all()
    assert math.degrees(unwrapped[-1] - unwrapped[0]) == pytest.approx(3 * 360 * 29 / 30, abs=1e-6)


@pytest.mark.parametrize("kw, word", [
    (dict(elevation_deg=0.0), "elevation"), (dict(elevation_deg=90.0), "elevation"),
    (dict(n_loops=0), "n_loops"), (dict(n_frames=2, n_loops=3), "n_frames"),
    (dict(radius_start=5.0, radius_end=6.0), "radius"), (dict(radius_end=0.0, radius_start=1.0), "radius"),
])
def test_flight_config_errors_name_the_bound(kw, word):
    with pytest.raises(ConfigError, match=word):
        FlightConfig(**kw)


@settings(max_examples=40, deadline=None)
@given(elev=st.floats(5, 85), loops=st.integers(1, 4), extra=st.integers(0, 30),
       r0=st.floats(2, 30), shrink=st.floats(0.1, 1.0),
       cx=st.floats(-20, 20), cy=st.floats(-20, 20), cz=st.floats(-2, 5))
def test_spiral_poses_look_at_target(elev, loops, extra, r0, shrink, cx, cy, cz):
    cfg = FlightConfig(elev, loops, loops + extra, r0, r0 * shrink, (cx, cy, cz))
    for p in spiral_path(cfg):
        alt = p.position[2] - cz
        assert alt / horizontal(p.position, (cx, cy)) == pytest.approx(math.tan(math.radians(elev)), rel=1e-9)
        to_target = np.array([cx, cy, cz]) - p.position
        cosang = p.optical_axis @ to_target / np.linalg.norm(to_target)
        assert math.acos(min(1.0, cosang)) < 1e-6
        u, v = p.project(np.array([[cx, cy, cz]]))[0]
        assert abs(u - p.intrinsics.cx) < 0.5 and abs(v - p.intrinsics.cy) < 0.5


# -- BEV poses -----------------------------------------------------------------------------

def test_bev_pose_definition():
    p = bev_pose((0, 0, 0), 5.0, 0.0)
    np.testing.assert_array_equal(p.position, [0, 0, 5])
    np.testing.assert_array_equal(p.optical_axis, -WORLD_UP)


@pytest.mark.parametrize("yaw", [0.0, 17.0, 90.0, 123.4, 270.0])
def test_bev_axis_has_no_horizontal_component(yaw):
    axis = bev_pose((1, 2, 0), 7.0, yaw).optical_axis
    assert axis[0] == 0.0 and axis[1] == 0.0
    assert axis[2] == pytest.approx(-1.0, abs=1e-12)


def test_yaw_360_equals_yaw_0_bit_exactly():
    a, b = bev_pose((0, 0, 0), 5, 0.0), bev_pose((0, 0, 0), 5, 360.0)
    assert a.quaternion.tobytes() == b.quaternion.tobytes()


def test_nonpositive_height_rejected():
    with pytest.raises(ConfigError):
        bev_pose((0, 0, 0), 0.0)


def _three_gaussians():
    gs = [Gaussian3D((1.5, 0.3, 0.2), np.log([0.5, 0.3, 0.3]), (1, 0, 0, 0), 3.0, (0.9, 0.1, 0.1)),
          Gaussian3D((-0.7, 1.2, 0.5), np.log([0.3, 0.6, 0.3]), (1, 0, 0, 0), 2.0, (0.1, 0.8, 0.2)),
          Gaussian3D((0.2, -1.4, 0.1), np.log([0.4, 0.4, 0.2]), (1, 0, 0, 0), 2.5, (0.2, 0.3, 0.9))]
    return GaussianScene.from_gaussians(gs, background=(0.5, 0.5, 0.5))


def test_yaw_90_is_image_rotation():
    scene = _three_gaussians()
    k = Intrinsics.centered(64, focal_px=96.0)
    img0 = render(scene, bev_pose((0, 0, 0), 6.0, 0.0, k))
    img90 = render(scene, bev_pose((0, 0, 0), 6.0, 90.0, k))
    # world +x is "right" at yaw 0 and "down" at yaw 90: content turns clockwise
    np.testing.assert_allclose(np.rot90(img0, k=-1), img90, atol=1e-6)
    assert np.abs(img0 - img90).max() > 0.1


def test_bev_sequence_test_mode_heights():
    poses = bev_pose_sequence((0, 0, 0), 3, "test", 5.0, 1.0)
    assert [p.position[2] for p in poses] == [5.0, 6.0, 7.0]
    assert [pose_yaw_deg(p) for p in poses] == [0.0, 0.0, 0.0]


def test_bev_sequence_train_mode_yaws():
    poses = bev_pose_sequence((0, 0, 0), 3, "train", 5.0, 1.0, 10.0)
    np.testing.assert_allclose([pose_yaw_deg(p) for p in poses], [0.0, 10.0, 20.0], atol=1e-9)


def test_bev_sequence_test_mode_matches_bev_pose_contract():
    poses = bev_pose_sequence((1.0, -2.0, 0.5), 6, "test", 20.0)
    for i, p in enumerate(poses):
        ref = bev_pose((1.0, -2.0, 0.5), 20.0 + i * 0.4, 0.0)
        np.testing.assert_allclose(p.position, ref.position, atol=1e-12)
        np.testing.assert_array_equal(p.quaternion, ref.quaternion)


def test_bev_sequence_deterministic_and_validated():
    a = bev_pose_sequence((0, 0, 0), 5, "test")
    b = bev_pose_sequence((0, 0, 0), 5, "test")
    assert format_poses(a) == format_poses(b)
    with pytest.raises(ConfigError):
        bev_pose_sequence((0, 0, 0), 0, "test")
    with pytest.raises(ConfigError):
        bev_pose_sequence((0, 0, 0), 3, "sideways")


# -- pose table ----------------------------------------------------------------------------

def test_pose_table_round_trip():
    poses = spiral_path(FlightConfig(30.0, 2, 7, 9.0, 4.0, (1, 2, 3)))
    back = parse_poses(format_poses(poses))
    for a, b in zip(poses, back):
        assert a.position.tobytes() == b.position.tobytes()
        assert a.quaternion.tobytes() == b.quaternion.tobytes()
        assert a.intrinsics == b.intrinsics


def test_pose_table_rejects_short_lines():
    with pytest.raises(ValueError, match="12 fields"):
        parse_poses("1 2 3\n")


@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(lambda q: np.linalg.norm(q) > 1e-3))
def test_canonical_quaternion_sign(q):
    c = canonical_quaternion(q)
    assert abs(np.linalg.norm(c) - 1) < 1e-12
    assert c[np.flatnonzero(c)[0]] > 0


def test_look_at_rejects_vertical_axis():
    with pytest.raises(ConfigError):
        look_at((0, 0, 5), (0, 0, 0))


# -- baseline view transforms ----------------------------------------------------------------

def test_polar_uniform_image():
    out = polar_transform(np.full((32, 32, 3), 0.4), (16, 48))
    np.testing.assert_allclose(out, 0.4, atol=1e-12)


def test_polar_rings_become_bands():
    n = 65
    yy, xx = np.mgrid[0:n, 0:n]
    r = np.hypot(yy - 32, xx - 32)
    rings = (np.floor(r / 4) % 2).astype(float)
    out = polar_transform(rings, (33, 64))
    # away from ring edges every row is constant across azimuth
    rows = [i for i in range(33) if i % 4 == 2]             # radius i, two pixels from each edge
    assert np.abs(out[rows] - out[rows].mean(axis=1, keepdims=True)).max() < 1e-9


def test_polar_center_pixel_maps_to_first_row():
    img = np.zeros((33, 33))
    img[16, 16] = 1.0
    out = polar_transform(img, (17, 20))
    # radius 0 is row 0, so the bright center spans the whole first row
    np.testing.assert_allclose(out[0], 1.0)
    assert out[2:].max() == 0.0


def test_polar_requires_square():
    with pytest.raises(ValueError):
        polar_transform(np.zeros((10, 12)), (5, 5))


def test_spherical_uniform():
    out = spherical_transform(np.full((16, 32, 3), 0.7), 21)
    np.testing.assert_allclose(out, 0.7, atol=1e-12)


def test_spherical_center_is_nadir():
    pano = np.zeros((16, 32))
    pano[-1] = 1.0
    out = spherical_transform(pano, 21)
    assert out[10, 10] == pytest.approx(1.0)


def test_spherical_stripe_becomes_ray():
    pano = np.zeros((32, 64))
    col = 16                                  # azimuth 90 degrees: clockwise from up, so "right"
    pano[:, col] = 1.0
    out = spherical_transform(pano, 41)
    c = 20
    for rho in (5, 10, 15):
        assert out[c, c + rho] == pytest.approx(1.0)     # on the ray
        assert out[c + rho, c] == 0.0                    # 90 degrees away


def test_spherical_requires_two_to_one():
    with pytest.raises(ValueError):
        spherical_transform(np.zeros((16, 16)), 8)
