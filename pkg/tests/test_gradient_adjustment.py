import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from gait import gradient_adjustment as ga
from gait.autodiff import Tensor
from gait.errors import ConfigError, DegenerateInputError, ShapeError


def sobel_oracle(img, kernel):
    # scipy "mirror" is reflection without edge repeat, same as reflect padding
    out = np.empty_like(img)
    for n in range(img.shape[0]):
        for c in range(img.shape[1]):
            out[n, c] = ndimage.correlate(img[n, c], kernel, mode="mirror")
    return out


def rand(seed, shape=(2, 1, 6, 7)):
    return np.random.default_rng(seed).uniform(-1, 1, size=shape)


def test_kernels():
    assert ga.SOBEL_H.tolist() == [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]]
    np.testing.assert_array_equal(ga.SOBEL_V, ga.SOBEL_H.T)
    assert ga.SOBEL_H.sum() == 0 and ga.SOBEL_V.sum() == 0


def test_sobel_matches_scipy():
    x = rand(0, (2, 3, 6, 7))
    r = ga.sobel_response(Tensor(x))
    np.testing.assert_allclose(r.horizontal.data, sobel_oracle(x, ga.SOBEL_H), atol=1e-12)
    np.testing.assert_allclose(r.vertical.data, sobel_oracle(x, ga.SOBEL_V), atol=1e-12)


def test_sobel_constant_image():
    r = ga.sobel_response(Tensor(np.full((1, 1, 5, 5), 0.7)))
    assert not r.horizontal.data.any() and not r.vertical.data.any()


def test_sobel_ramp_gives_8():
    ramp = np.tile(np.arange(6.0), (6, 1))[None, None]  # x(i, j) = j
    r = ga.sobel_response(Tensor(ramp))
    np.testing.assert_array_equal(r.horizontal.data[0, 0, 1:-1, 1:-1], 8.0)
    np.testing.assert_array_equal(r.vertical.data[0, 0, 1:-1, 1:-1], 0.0)


def test_sobel_transpose_symmetry():
    x = rand(1, (1, 1, 5, 5))
    xt = x.transpose(0, 1, 3, 2)
    np.testing.assert_allclose(ga.sobel_response(Tensor(xt)).horizontal.data,
                               ga.sobel_response(Tensor(x)).vertical.data.transpose(0, 1, 3, 2), atol=1e-14)


def test_sobel_rejects_small_images():
    with pytest.raises(ShapeError):
        ga.sobel_response(Tensor(np.zeros((1, 1, 2, 5))))


def test_loss_identity_is_zero():
    x, y = Tensor(rand(2)), Tensor(rand(3))
    assert ga.gradient_adjustment_loss(x, x, y, y, 1.0).item() == 0.0


@pytest.mark.parametrize("c", [0.3, 1.0, 4.0])
def test_loss_constant_images_zero(c):
    k = lambda v: Tensor(np.full((2, 1, 6, 7), v))  # noqa: E731
    assert ga.gradient_adjustment_loss(k(0.1), k(-0.5), k(0.9), k(0.2), c).item() == 0.0


def test_loss_linearity_case_zero():
    x = rand(4)
    y = Tensor(np.full(x.shape, 0.3))
    fy = Tensor(np.full(x.shape, -0.2))
    assert ga.gradient_adjustment_loss(Tensor(x), Tensor(2 * x), y, fy, 2.0).item() == 0.0


def test_loss_forward_multiplies_inverse_divides():
    x, y = rand(5), rand(6)
    sx_h, sx_v = sobel_oracle(x, ga.SOBEL_H), sobel_oracle(x, ga.SOBEL_V)
    sy_h, sy_v = sobel_oracle(y, ga.SOBEL_H), sobel_oracle(y, ga.SOBEL_V)
    fx, fy = rand(7), rand(8)
    c = 1.7
    expected = (np.mean((c * sx_h - sobel_oracle(fx, ga.SOBEL_H)) ** 2)
                + np.mean((c * sx_v - sobel_oracle(fx, ga.SOBEL_V)) ** 2)
                + np.mean((sy_h / c - sobel_oracle(fy, ga.SOBEL_H)) ** 2)
                + np.mean((sy_v / c - sobel_oracle(fy, ga.SOBEL_V)) ** 2))
    got = ga.gradient_adjustment_loss(Tensor(x), Tensor(fx), Tensor(y), Tensor(fy), c).item()
    assert got == pytest.approx(expected, rel=1e-12)


def test_loss_errors():
    x = Tensor(rand(9))
    with pytest.raises(ConfigError):
        ga.gradient_adjustment_loss(x, x, x, x, 0.0)
    with pytest.raises(ShapeError):
        ga.gradient_adjustment_loss(x, Tensor(rand(9, (1, 1, 6, 7))), x, x, 1.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**16), c=st.floats(0.1, 10))
def test_loss_nonnegative_and_swap_symmetric(seed, c):
    x, fx, y, fy = (Tensor(rand([seed, i])) for i in range(4))
    a = ga.gradient_adjustment_loss(x, fx, y, fy, c).item()
    b = ga.gradient_adjustment_loss(y, fy, x, fx, 1.0 / c).item()
    assert a >= 0
    assert a == pytest.approx(b, rel=1e-12)


def test_optimal_cga_examples():
    x = Tensor(rand(10))
    assert ga.optimal_cga(x, x) == pytest.approx(1.0, abs=1e-14)
    assert ga.optimal_cga(x, Tensor(3 * x.data)) == pytest.approx(3.0, abs=1e-13)
    assert ga.optimal_cga(x, Tensor(np.full(x.shape, 0.4))) == 0.0


def test_optimal_cga_constant_source():
    with pytest.raises(DegenerateInputError):
        ga.optimal_cga(Tensor(np.zeros((1, 1, 4, 4))), Tensor(rand(11, (1, 1, 4, 4))))


def test_optimal_cga_minimizes_quadratic():
    x, fx = Tensor(rand(12)), Tensor(rand(13))
    c_star = ga.optimal_cga(x, fx)
    # three samples pin down the exact quadratic L(c) = A c^2 + B c + C
    l0, l1, l2 = (ga.direction_loss(x, fx, c).item() for c in (0.0, 1.0, 2.0))
    a = (l2 - 2 * l1 + l0) / 2
    b = l1 - l0 - a
    assert abs(-b / (2 * a) - c_star) < 1e-8
    at = ga.direction_loss(x, fx, c_star).item()
    for d in (1e-3, 1e-1):
        assert ga.direction_loss(x, fx, c_star + d).item() > at
        assert ga.direction_loss(x, fx, c_star - d).item() > at
