import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radarfield.errors import ConfigError, DegenerateOriginError, FileFormatError
from radarfield.radar_model import (
    CartesianPoint,
    PolarCoord,
    RadarCube,
    RadarIntrinsics,
    bin_to_polar,
    cartesian_to_polar,
    cube_from_bytes,
    cube_to_bytes,
    direction_vector,
    polar_to_bin,
    polar_to_cartesian,
    polar_to_cartesian_array,
    read_cube,
    write_cube,
)


@pytest.fixture
def small_intr():
    return RadarIntrinsics(4, 4, 2, 0.5, -1.0, 1.0, -0.25, 0.25)


def test_polar_to_cartesian_examples():
    assert polar_to_cartesian(PolarCoord(0.0, 1.3, -0.4)) == (0.0, 0.0, 0.0)
    assert polar_to_cartesian(PolarCoord(1.0, 0.0, 0.0)) == (1.0, 0.0, 0.0)
    x, y, z = polar_to_cartesian(PolarCoord(2.0, math.pi / 2, 0.0))
    assert (x, y, z) == pytest.approx((0.0, 2.0, 0.0), abs=1e-15)


def test_cartesian_to_polar_examples():
    assert cartesian_to_polar(CartesianPoint(1, 0, 0)) == (1.0, 0.0, 0.0)
    assert cartesian_to_polar(CartesianPoint(0, 0, 1)) == pytest.approx((1.0, 0.0, math.pi / 2))
    assert cartesian_to_polar(CartesianPoint(1, 1, 0)) == pytest.approx(
        (math.sqrt(2), math.pi / 4, 0.0), abs=1e-15
    )


def test_cartesian_to_polar_origin_is_an_error():
    with pytest.raises(DegenerateOriginError):
        cartesian_to_polar(CartesianPoint(0.0, 1e-10, 0.0))


@pytest.mark.parametrize(
    "alpha, beta, expected",
    [(0, 0, (1, 0, 0)), (math.pi / 2, 0, (0, 1, 0)), (0, math.pi / 2, (0, 0, 1))],
)
def test_direction_vector_axes(alpha, beta, expected):
    np.testing.assert_allclose(direction_vector(alpha, beta), expected, atol=1e-15)


def test_round_trip_random_coords():
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        c = PolarCoord(rng.uniform(0.1, 100), rng.uniform(-math.pi, math.pi), rng.uniform(-1.5, 1.5))
        p = polar_to_cartesian(c)
        back = polar_to_cartesian(cartesian_to_polar(p))
        np.testing.assert_allclose(back, p, rtol=1e-12, atol=1e-12 * c.r)


@given(st.floats(-10, 10), st.floats(-1.5, 1.5))
def test_direction_vector_is_unit_and_matches_unit_range(alpha, beta):
    u = direction_vector(alpha, beta)
    assert abs(np.linalg.norm(u) - 1.0) < 1e-12
    np.testing.assert_array_equal(u, polar_to_cartesian(PolarCoord(1.0, alpha, beta)))


def test_vectorized_matches_scalar():
    rng = np.random.default_rng(1)
    r, a, b = rng.uniform(0, 50, 100), rng.uniform(-3, 3, 100), rng.uniform(-1.5, 1.5, 100)
    batch = polar_to_cartesian_array(r, a, b)
    for i in range(100):
        np.testing.assert_allclose(batch[i], polar_to_cartesian(PolarCoord(r[i], a[i], b[i])), atol=1e-13)


def test_bin_centers():
    intr = RadarIntrinsics(10, 2, 1, 0.1, -1.0, 1.0, -0.5, 0.5)
    c = bin_to_polar(intr, 0, 0, 0)
    assert c.r == pytest.approx(0.05)
    assert c.alpha == pytest.approx(-0.5)
    assert c.beta == pytest.approx(0.0)


def test_bin_round_trip_exhaustive(small_intr):
    for i_r in range(4):
        for i_a in range(4):
            for i_e in range(2):
                c = bin_to_polar(small_intr, i_r, i_a, i_e)
                assert polar_to_bin(small_intr, c) == (i_r, i_a, i_e)


def test_bin_index_errors(small_intr):
    with pytest.raises(IndexError):
        bin_to_polar(small_intr, 4, 0, 0)
    with pytest.raises(IndexError):
        bin_to_polar(small_intr, 0, -1, 0)
    with pytest.raises(IndexError):
        polar_to_bin(small_intr, PolarCoord(small_intr.max_range, 0.0, 0.0))


def test_intrinsics_invariants():
    intr = RadarIntrinsics(64, 8, 4, 0.25, -1, 1, -0.2, 0.2)
    assert abs(intr.max_range - 64 * 0.25) < 1e-9
    with pytest.raises(ConfigError):
        RadarIntrinsics(0, 8, 4, 0.25, -1, 1, -0.2, 0.2)
    with pytest.raises(ConfigError):
        RadarIntrinsics(4, 8, 4, 0.25, 1, -1, -0.2, 0.2)
    with pytest.raises(ConfigError):
        RadarIntrinsics(4, 8, 4, 0.25, -1, 1, 0.2, 0.2)


def test_cube_rejects_bad_channels(small_intr):
    with pytest.raises(ConfigError):
        RadarCube(small_intr, np.zeros((3, 4, 2)), np.zeros((4, 4, 2)))
    with pytest.raises(ConfigError):
        RadarCube(small_intr, -np.ones(small_intr.shape), np.zeros(small_intr.shape))


def test_cube_file_round_trip(tmp_path, small_intr):
    rng = np.random.default_rng(2)
    cube = RadarCube(
        small_intr,
        rng.exponential(size=small_intr.shape).astype(np.float32),
        rng.normal(size=small_intr.shape).astype(np.float32),
    )
    path = tmp_path / "c.rcub"
    write_cube(path, cube)
    back = read_cube(path)
    assert back.intrinsics == small_intr
    np.testing.assert_array_equal(back.intensity, cube.intensity)
    np.testing.assert_array_equal(back.doppler, cube.doppler)


def test_cube_file_layout(small_intr):
    intensity = np.arange(32, dtype=float).reshape(small_intr.shape)
    cube = RadarCube(small_intr, intensity, -intensity)
    buf = cube_to_bytes(cube)
    assert buf[:4] == b"RCUB"
    header = 4 + 4 * 4 + 8 * 5
    assert len(buf) == header + 2 * 32 * 4
    body = np.frombuffer(buf, dtype="<f4", offset=header)
    # r-major, then azimuth, then elevation
    np.testing.assert_array_equal(body[:32], np.arange(32))
    np.testing.assert_array_equal(body[32:], -np.arange(32))


def test_cube_file_errors(small_intr):
    buf = cube_to_bytes(RadarCube.zeros(small_intr))
    with pytest.raises(FileFormatError):
        cube_from_bytes(b"XXXX" + buf[4:])
    with pytest.raises(FileFormatError):
        cube_from_bytes(buf[:-4])
