"""Hot kernels: compiled Cython versions with a numpy fallback.

The compiled module is used when it imported successfully and the
environment variable ``CORTEXPRINT_PURE_PYTHON`` is unset or ``0``.
Both backends expose the same six functions; ``BACKEND`` names the
active one.
"""

import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_force_pure = os.environ.get("CORTEXPRINT_PURE_PYTHON", "0") not in ("", "0")

if _ckernels is not None and not _force_pure:
    _active = _ckernels
    BACKEND = "cython"
else:
    _active = _pykernels
    BACKEND = "python"

im2col = _active.im2col
col2im = _active.col2im
maxpool2_forward = _active.maxpool2_forward
maxpool2_backward = _active.maxpool2_backward
rasterize_faces = _active.rasterize_faces
rotate_bilinear = _active.rotate_bilinear

__all__ = [
    "BACKEND",
    "im2col",
    "col2im",
    "maxpool2_forward",
    "maxpool2_backward",
    "rasterize_faces",
    "rotate_bilinear",
]
