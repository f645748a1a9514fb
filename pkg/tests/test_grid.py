import numpy as np
import pytest
from scipy.ndimage import map_coordinates

from pathmark import grid


@pytest.mark.parametrize("n_in,n_out", [(8, 128), (16, 16), (32, 7), (5, 1), (1, 9)])
def test_corner_aligned_rows_are_convex(n_in, n_out):
    m = grid.corner_aligned_matrix(n_in, n_out)
    assert m.shape == (n_out, n_in)
    assert np.all(m >= 0)
    np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-15)


def test_corner_aligned_pins_endpoints_and_matches_map_coordinates(rng):
    src = rng.uniform(size=(8, 11))
    out = grid.apply_separable(src, grid.corner_aligned_matrix(8, 29), grid.corner_aligned_matrix(11, 40))
    yy, xx = np.meshgrid(np.linspace(0, 7, 29), np.linspace(0, 10, 40), indexing="ij")
    ref = map_coordinates(src, [yy, xx], order=1, mode="nearest")
    np.testing.assert_allclose(out, ref, atol=1e-12)
    assert out[0, 0] == src[0, 0] and out[-1, -1] == src[-1, -1]


def test_resize_identity_and_constant_preservation(rng):
    img = rng.uniform(size=(20, 13))
    np.testing.assert_array_equal(grid.resize(img, 20, 13), img)
    const = np.full((50, 37), 0.3)
    np.testing.assert_allclose(grid.resize(const, 32, 32), 0.3, atol=1e-15)


def test_resize_downscale_by_two_is_a_tent_average():
    # a 2x shrink uses a width-2 triangle centred between sample pairs
    m = grid.resize_matrix(8, 4)
    np.testing.assert_allclose(m[1, 1:5], [1 / 8, 3 / 8, 3 / 8, 1 / 8])


def test_resize_handles_colour_channels(rng):
    img = rng.uniform(size=(16, 12, 3))
    out = grid.resize(img, 9, 7)
    for c in range(3):
        np.testing.assert_allclose(out[..., c], grid.resize(img[..., c], 9, 7), atol=1e-14)


def test_dct_is_orthonormal():
    for n in (8, 32):
        c = grid.dct_matrix(n)
        np.testing.assert_allclose(c @ c.T, np.eye(n), atol=1e-13)


def test_dct_matches_scipy():
    from scipy.fft import dct

    x = np.random.default_rng(3).normal(size=8)
    np.testing.assert_allclose(grid.dct_matrix(8) @ x, dct(x, norm="ortho"), atol=1e-13)


def test_zigzag_prefix_follows_jpeg_order():
    rows, cols = grid.zigzag(8)
    expected = [(0, 0), (0, 1), (1, 0), (2, 0), (1, 1), (0, 2), (0, 3), (1, 2), (2, 1), (3, 0)]
    assert list(zip(rows[:10].tolist(), cols[:10].tolist())) == expected
    assert (rows[-1], cols[-1]) == (7, 7)
    assert len(set(zip(rows.tolist(), cols.tolist()))) == 64


def test_rotate_quarter_turns_and_full_turn(rng):
    img = rng.uniform(size=(15, 15))
    np.testing.assert_array_equal(grid.rotate(img, 0.0), img)
    np.testing.assert_allclose(grid.rotate(img, 360.0), img, atol=1e-12)
    # positive angles turn clockwise in array (row-down) coordinates
    np.testing.assert_allclose(grid.rotate(img, 90.0), np.rot90(img, -1), atol=1e-12)


def test_rotate_fills_exposed_corners_with_zero():
    out = grid.rotate(np.ones((32, 32)), 45.0)
    assert out[0, 0] == 0.0 and out[16, 16] == pytest.approx(1.0)
