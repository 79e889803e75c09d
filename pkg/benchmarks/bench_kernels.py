"""Time the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--size S]

Each kernel runs on inputs shaped like one training step at raster size S
(default 112). The table reports the best of N timings per backend and
checks that both backends agree on the same inputs.
"""

import argparse
import timeit

import numpy as np

from cortexprint._kernels import _pykernels

try:
    from cortexprint._kernels import _ckernels
except ImportError:
    _ckernels = None


def _hemisphere_map(size):
    from cortexprint.flatten import flatten_disk, split_sphere
    from cortexprint.mesh import icosphere, rotation_matrix

    s = icosphere(4)
    s = s.copy(vertices=s.vertices @ rotation_matrix([0.3, 0.5, 0.8], 0.37).T)
    half, _ = split_sphere(s)
    uv = flatten_disk(half).map.uv
    return uv, half.faces, np.column_stack([half.vertices, half.vertices[:, 0] ** 2])[:, :3]


def cases(size, rng):
    x = rng.normal(size=(8, 8, size, size))
    cols = _pykernels.im2col(x, 3, 1, 1)
    pooled, arg = _pykernels.maxpool2_forward(x)
    dout = rng.normal(size=pooled.shape)
    img = rng.normal(size=(3, size, size))
    mask = rng.random((size, size)) < 0.8
    t = np.deg2rad(11.0)
    uv, faces, values = _hemisphere_map(size)
    return {
        "im2col": lambda k: k.im2col(x, 3, 1, 1),
        "col2im": lambda k: k.col2im(cols, x.shape, 3, 1, 1),
        "maxpool2_forward": lambda k: k.maxpool2_forward(x),
        "maxpool2_backward": lambda k: k.maxpool2_backward(dout, arg, x.shape),
        "rasterize_faces": lambda k: k.rasterize_faces(uv, faces, values, size, size),
        "rotate_bilinear": lambda k: k.rotate_bilinear(img, mask, np.cos(t), np.sin(t)),
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=0, atol=1e-12)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--size", type=int, default=112)
    args = ap.parse_args()
    if _ckernels is None:
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
    rng = np.random.default_rng(0)
    print(f"{'kernel':20s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}  agree")
    for name, fn in cases(args.size, rng).items():
        times = {}
        for label, mod in (("python", _pykernels), ("cython", _ckernels)):
            times[label] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat)) * 1e3
        agree = _same(fn(_pykernels), fn(_ckernels))
        print(f"{name:20s} {times['python']:10.2f} {times['cython']:10.2f} "
              f"{times['python'] / times['cython']:7.1f}x  {'yes' if agree else 'NO'}")


if __name__ == "__main__":
    main()
