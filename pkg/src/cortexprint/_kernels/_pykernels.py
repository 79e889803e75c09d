"""Pure numpy implementations of the hot kernels.

These are the reference versions; the compiled module in ``_ckernels.pyx``
must agree with them to round-off.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x, k, stride, pad):
    """Unfold ``x`` (N, C, H, W) into columns (N, C*k*k, Ho*Wo)."""
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    # (N, C, Ho, Wo, k, k) -> (N, C, k, k, Ho, Wo)
    cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3))
    return cols.reshape(n, c * k * k, ho * wo)


def col2im(cols, shape, k, stride, pad):
    """Adjoint of :func:`im2col`: scatter-add columns back to (N, C, H, W)."""
    n, c, h, w = shape
    hp, wp = h + 2 * pad, w + 2 * pad
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    cols = cols.reshape(n, c, k, k, ho, wo)
    out = np.zeros((n, c, hp, wp))
    for dy in range(k):
        for dx in range(k):
            out[:, :, dy:dy + stride * ho:stride, dx:dx + stride * wo:stride] += cols[:, :, dy, dx]
    if pad:
        out = out[:, :, pad:pad + h, pad:pad + w]
    return np.ascontiguousarray(out)


def maxpool2_forward(x):
    """2x2 stride-2 max pool. Returns (out, argmax) with argmax in 0..3."""
    n, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    x = x[:, :, :2 * ho, :2 * wo]
    blocks = x.reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
    arg = blocks.argmax(axis=-1).astype(np.int8)
    out = np.take_along_axis(blocks, arg[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg


def maxpool2_backward(dout, arg, shape):
    n, c, h, w = shape
    ho, wo = dout.shape[2], dout.shape[3]
    blocks = np.zeros((n, c, ho, wo, 4))
    np.put_along_axis(blocks, arg[..., None].astype(np.intp), dout[..., None], axis=-1)
    dx = np.zeros(shape)
    dx[:, :, :2 * ho, :2 * wo] = (
        blocks.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * ho, 2 * wo)
    )
    return dx


def rasterize_faces(uv, faces, values, height, width):
    """Barycentric scan conversion of a planar triangle mesh.

    Pixel (i, j) samples the point ((j + 0.5) / width, (i + 0.5) / height).
    Faces are visited in index order and a pixel keeps the first face that
    contains it, so shared edges go to the lowest face index.

    Returns (data (C, H, W), face_id (H, W)) with face_id = -1 where uncovered.
    """
    n_ch = values.shape[1]
    data = np.zeros((n_ch, height, width))
    face_id = np.full((height, width), -1, dtype=np.int64)
    eps = 1e-12
    for f in range(faces.shape[0]):
        a, b, c = faces[f]
        ax, ay = uv[a]
        bx, by = uv[b]
        cx, cy = uv[c]
        det = (bx - ax) * (cy - ay) - (cx - ax) * (by - ay)
        if det == 0.0:
            continue
        j0 = max(int(np.floor(min(ax, bx, cx) * width - 0.5)), 0)
        j1 = min(int(np.ceil(max(ax, bx, cx) * width - 0.5)), width - 1)
        i0 = max(int(np.floor(min(ay, by, cy) * height - 0.5)), 0)
        i1 = min(int(np.ceil(max(ay, by, cy) * height - 0.5)), height - 1)
        if j1 < j0 or i1 < i0:
            continue
        px = (np.arange(j0, j1 + 1) + 0.5) / width
        py = (np.arange(i0, i1 + 1) + 0.5) / height
        qx, qy = np.meshgrid(px, py)
        w1 = ((qx - ax) * (cy - ay) - (cx - ax) * (qy - ay)) / det
        w2 = ((bx - ax) * (qy - ay) - (qx - ax) * (by - ay)) / det
        w0 = 1.0 - w1 - w2
        inside = (w0 >= -eps) & (w1 >= -eps) & (w2 >= -eps)
        sub = face_id[i0:i1 + 1, j0:j1 + 1]
        take = inside & (sub < 0)
        if not take.any():
            continue
        sub[take] = f
        for ch in range(n_ch):
            val = w0 * values[a, ch] + w1 * values[b, ch] + w2 * values[c, ch]
            data[ch, i0:i1 + 1, j0:j1 + 1][take] = val[take]
    return data, face_id


def rotate_bilinear(data, mask, cos, sin):
    """Rotate (C, H, W) data bilinearly and the (H, W) mask by nearest neighbour.

    Output pixel (i, j) samples the source at the inverse rotation about the
    image center; taps outside the frame read 0. Output data is zeroed where
    the output mask is False.
    """
    c, h, w = data.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ii, jj = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                         indexing="ij")
    dx, dy = jj - cx, ii - cy
    sx = cos * dx + sin * dy + cx
    sy = -sin * dx + cos * dy + cy
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx, fy = sx - x0, sy - y0
    out = np.zeros_like(data)
    for oy, ox, wgt in ((0, 0, (1 - fx) * (1 - fy)), (0, 1, fx * (1 - fy)),
                        (1, 0, (1 - fx) * fy), (1, 1, fx * fy)):
        yy, xx = y0 + oy, x0 + ox
        ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        vals = np.zeros_like(data)
        vals[:, ok] = data[:, yy[ok], xx[ok]]
        out += wgt * vals
    ny = np.floor(sy + 0.5).astype(np.int64)
    nx = np.floor(sx + 0.5).astype(np.int64)
    inside = (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w)
    out_mask = np.zeros((h, w), dtype=bool)
    out_mask[inside] = mask[ny[inside], nx[inside]]
    out[:, ~out_mask] = 0.0
    return out, out_mask
