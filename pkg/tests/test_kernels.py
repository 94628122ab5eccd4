"""Compiled kernels against the numpy fallback."""
import os
import subprocess
import sys

import numpy as np
import pytest

from gait import _backend
from gait import _kernels_py as py

try:
    from gait import _kernels as cy
except ImportError:  # extension not built
    cy = None

needs_ext = pytest.mark.skipif(cy is None, reason="compiled extension not built")


def _case(seed, n=2, c=3, h=9, w=8, cout=2, k=3, stride=2):
    rng = np.random.default_rng(seed)
    xp = rng.normal(size=(n, c, h, w))
    wt = rng.normal(size=(cout, c, k, k))
    ho, wo = (h - k) // stride + 1, (w - k) // stride + 1
    g = rng.normal(size=(n, cout, ho, wo))
    return xp, wt, g


@needs_ext
@pytest.mark.parametrize("stride", [1, 2])
def test_im2col_bit_identical(stride):
    xp, _, _ = _case(0, stride=stride)
    assert np.array_equal(cy.im2col(xp, 3, 3, stride), py.im2col(xp, 3, 3, stride))


@needs_ext
@pytest.mark.parametrize("stride", [1, 2])
def test_col2im_bit_identical(stride):
    xp, _, _ = _case(1, stride=stride)
    cols = py.im2col(xp, 3, 3, stride)
    cols = np.random.default_rng(2).normal(size=cols.shape)
    a = cy.col2im(cols, xp.shape, 3, 3, stride)
    b = py.col2im(cols, xp.shape, 3, 3, stride)
    assert a.tobytes() == b.tobytes()


@needs_ext
@pytest.mark.parametrize("stride", [1, 2])
def test_direct_kernels_agree(stride):
    # summation order differs, so only agreement to rounding is expected
    xp, wt, g = _case(3, stride=stride)
    np.testing.assert_allclose(cy.conv_direct(xp, wt, stride), py.conv_direct(xp, wt, stride), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(cy.conv_direct_input_grad(g, wt, xp.shape, stride),
                               py.conv_direct_input_grad(g, wt, xp.shape, stride), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(cy.conv_direct_weight_grad(g, xp, wt.shape, stride),
                               py.conv_direct_weight_grad(g, xp, wt.shape, stride), rtol=1e-12, atol=1e-12)


def test_col2im_is_adjoint_of_im2col():
    xp, _, _ = _case(4)
    cols = py.im2col(xp, 3, 3, 2)
    r = np.random.default_rng(5).normal(size=cols.shape)
    lhs = float(np.sum(cols * r))
    rhs = float(np.sum(xp * py.col2im(r, xp.shape, 3, 3, 2)))
    assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))


def test_direct_matches_gemm_path():
    xp, wt, _ = _case(6, cout=2)
    n, _, h, w = xp.shape
    cols = py.im2col(xp, 3, 3, 2)
    gemm = (wt.reshape(2, -1) @ cols).reshape(2, n, 4, 3).transpose(1, 0, 2, 3)
    np.testing.assert_allclose(py.conv_direct(xp, wt, 2), gemm, rtol=1e-12, atol=1e-12)


def test_pure_python_env_forces_fallback():
    env = dict(os.environ, GAIT_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import gait; print(gait.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_backend_name_is_known():
    assert _backend.BACKEND in ("cython", "python")
