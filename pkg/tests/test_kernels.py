import os
import subprocess
import sys

import numpy as np
import pytest

from cortexprint import _kernels
from cortexprint._kernels import _pykernels as py

ck = pytest.importorskip("cortexprint._kernels._ckernels")


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (2, 0)])
def test_im2col_col2im_agree(rng, stride, pad):
    x = rng.normal(size=(2, 3, 7, 6))
    a = py.im2col(x, 3, stride, pad)
    b = ck.im2col(x, 3, stride, pad)
    assert np.array_equal(a, b)
    cols = rng.normal(size=a.shape)
    assert np.allclose(py.col2im(cols, x.shape, 3, stride, pad), ck.col2im(cols, x.shape, 3, stride, pad),
                       atol=1e-13, rtol=0)


def test_col2im_is_adjoint_of_im2col(rng):
    x = rng.normal(size=(1, 2, 5, 5))
    cols = py.im2col(x, 3, 1, 1)
    y = rng.normal(size=cols.shape)
    lhs = np.sum(cols * y)
    rhs = np.sum(x * py.col2im(y, x.shape, 3, 1, 1))
    assert abs(lhs - rhs) < 1e-10


@pytest.mark.parametrize("shape", [(1, 2, 4, 4), (2, 3, 5, 7)])
def test_maxpool_agree(rng, shape):
    x = rng.normal(size=shape)
    ya, ia = py.maxpool2_forward(x)
    yb, ib = ck.maxpool2_forward(x)
    assert np.array_equal(ya, yb) and np.array_equal(ia, ib)
    d = rng.normal(size=ya.shape)
    assert np.array_equal(py.maxpool2_backward(d, ia, shape), ck.maxpool2_backward(d, ib, shape))


def test_maxpool_matches_reshape_max(rng):
    x = rng.normal(size=(2, 3, 6, 8))
    y, _ = py.maxpool2_forward(x)
    assert np.array_equal(y, x.reshape(2, 3, 3, 2, 4, 2).max(axis=(3, 5)))


def test_rasterize_agree(rotated_sphere3):
    from cortexprint.flatten import flatten_disk, split_sphere

    half, _ = split_sphere(rotated_sphere3)
    uv = flatten_disk(half).map.uv
    vals = np.column_stack([half.vertices[:, 0], half.vertices[:, 1] ** 2, np.arange(half.n_vertices)])
    da, fa = py.rasterize_faces(uv, half.faces, vals, 40, 36)
    db, fb = ck.rasterize_faces(uv, half.faces, vals, 40, 36)
    assert np.array_equal(fa, fb)
    assert np.abs(da - db).max() < 1e-12


@pytest.mark.parametrize("deg", [0.0, 11.0, -37.0, 90.0, 200.0])
def test_rotate_agree(rng, deg):
    data = rng.normal(size=(3, 17, 21))
    mask = rng.random((17, 21)) < 0.8
    t = np.deg2rad(deg)
    a = py.rotate_bilinear(data, mask, np.cos(t), np.sin(t))
    b = ck.rotate_bilinear(data, mask, np.cos(t), np.sin(t))
    assert np.array_equal(a[1], b[1])
    assert np.array_equal(a[0], b[0])


def test_backend_selection():
    assert _kernels.BACKEND == ("python" if os.environ.get("CORTEXPRINT_PURE_PYTHON", "0") not in ("", "0")
                                else "cython")
    env = dict(os.environ, CORTEXPRINT_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from cortexprint import _kernels; print(_kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
