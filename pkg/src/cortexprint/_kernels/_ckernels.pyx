# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels in ``_pykernels``.

Same signatures and results as the numpy versions; arithmetic is ordered
identically where the results are compared bit-for-bit (rasterization).
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, ceil

cnp.import_array()


def im2col(double[:, :, :, ::1] x, int k, int stride, int pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - k) // stride + 1
    out_arr = np.empty((n, c * k * k, ho * wo))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, dy, dx, oy, ox, iy, ix, row
    with nogil:
        for b in range(n):
            for ch in range(c):
                for dy in range(k):
                    for dx in range(k):
                        row = (ch * k + dy) * k + dx
                        for oy in range(ho):
                            iy = oy * stride + dy - pad
                            if iy < 0 or iy >= h:
                                for ox in range(wo):
                                    out[b, row, oy * wo + ox] = 0.0
                                continue
                            for ox in range(wo):
                                ix = ox * stride + dx - pad
                                if ix < 0 or ix >= w:
                                    out[b, row, oy * wo + ox] = 0.0
                                else:
                                    out[b, row, oy * wo + ox] = x[b, ch, iy, ix]
    return out_arr


def col2im(cols_in, shape, int k, int stride, int pad):
    cdef Py_ssize_t n = shape[0], c = shape[1], h = shape[2], w = shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - k) // stride + 1
    cdef double[:, :, ::1] cols = np.ascontiguousarray(cols_in, dtype=np.float64).reshape(n, c * k * k, ho * wo)
    out_arr = np.zeros((n, c, h, w))
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, dy, dx, oy, ox, iy, ix, row
    with nogil:
        for b in range(n):
            for ch in range(c):
                for dy in range(k):
                    for dx in range(k):
                        row = (ch * k + dy) * k + dx
                        for oy in range(ho):
                            iy = oy * stride + dy - pad
                            if iy < 0 or iy >= h:
                                continue
                            for ox in range(wo):
                                ix = ox * stride + dx - pad
                                if ix >= 0 and ix < w:
                                    out[b, ch, iy, ix] += cols[b, row, oy * wo + ox]
    return out_arr


def maxpool2_forward(double[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1]
    cdef Py_ssize_t ho = x.shape[2] // 2, wo = x.shape[3] // 2
    out_arr = np.empty((n, c, ho, wo))
    arg_arr = np.empty((n, c, ho, wo), dtype=np.int8)
    cdef double[:, :, :, ::1] out = out_arr
    cdef cnp.int8_t[:, :, :, ::1] arg = arg_arr
    cdef Py_ssize_t b, ch, i, j
    cdef double best, v
    cdef cnp.int8_t a
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(ho):
                    for j in range(wo):
                        # first maximum wins, matching numpy argmax
                        best = x[b, ch, 2 * i, 2 * j]
                        a = 0
                        v = x[b, ch, 2 * i, 2 * j + 1]
                        if v > best:
                            best = v
                            a = 1
                        v = x[b, ch, 2 * i + 1, 2 * j]
                        if v > best:
                            best = v
                            a = 2
                        v = x[b, ch, 2 * i + 1, 2 * j + 1]
                        if v > best:
                            best = v
                            a = 3
                        out[b, ch, i, j] = best
                        arg[b, ch, i, j] = a
    return out_arr, arg_arr


def maxpool2_backward(dout_in, arg_in, shape):
    cdef double[:, :, :, ::1] dout = np.ascontiguousarray(dout_in, dtype=np.float64)
    cdef cnp.int8_t[:, :, :, ::1] arg = np.ascontiguousarray(arg_in, dtype=np.int8)
    dx_arr = np.zeros(shape)
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t n = dout.shape[0], c = dout.shape[1], ho = dout.shape[2], wo = dout.shape[3]
    cdef Py_ssize_t b, ch, i, j
    cdef int a
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(ho):
                    for j in range(wo):
                        a = arg[b, ch, i, j]
                        dx[b, ch, 2 * i + a // 2, 2 * j + a % 2] = dout[b, ch, i, j]
    return dx_arr


def rasterize_faces(uv_in, faces_in, values_in, int height, int width):
    cdef double[:, ::1] uv = np.ascontiguousarray(uv_in, dtype=np.float64)
    cdef cnp.int64_t[:, ::1] faces = np.ascontiguousarray(faces_in, dtype=np.int64)
    cdef double[:, ::1] values = np.ascontiguousarray(values_in, dtype=np.float64)
    cdef Py_ssize_t n_ch = values.shape[1]
    data_arr = np.zeros((n_ch, height, width))
    fid_arr = np.full((height, width), -1, dtype=np.int64)
    cdef double[:, :, ::1] data = data_arr
    cdef cnp.int64_t[:, ::1] face_id = fid_arr
    cdef Py_ssize_t f, a, b, c, i, j, ch
    cdef double ax, ay, bx, by, cx, cy, det, qx, qy, w0, w1, w2
    cdef double eps = 1e-12
    cdef int i0, i1, j0, j1
    with nogil:
        for f in range(faces.shape[0]):
            a = faces[f, 0]
            b = faces[f, 1]
            c = faces[f, 2]
            ax = uv[a, 0]
            ay = uv[a, 1]
            bx = uv[b, 0]
            by = uv[b, 1]
            cx = uv[c, 0]
            cy = uv[c, 1]
            det = (bx - ax) * (cy - ay) - (cx - ax) * (by - ay)
            if det == 0.0:
                continue
            j0 = <int>floor(min(ax, min(bx, cx)) * width - 0.5)
            j1 = <int>ceil(max(ax, max(bx, cx)) * width - 0.5)
            i0 = <int>floor(min(ay, min(by, cy)) * height - 0.5)
            i1 = <int>ceil(max(ay, max(by, cy)) * height - 0.5)
            if j0 < 0:
                j0 = 0
            if i0 < 0:
                i0 = 0
            if j1 > width - 1:
                j1 = width - 1
            if i1 > height - 1:
                i1 = height - 1
            for i in range(i0, i1 + 1):
                qy = (i + 0.5) / height
                for j in range(j0, j1 + 1):
                    if face_id[i, j] >= 0:
                        continue
                    qx = (j + 0.5) / width
                    w1 = ((qx - ax) * (cy - ay) - (cx - ax) * (qy - ay)) / det
                    w2 = ((bx - ax) * (qy - ay) - (qx - ax) * (by - ay)) / det
                    w0 = 1.0 - w1 - w2
                    if w0 >= -eps and w1 >= -eps and w2 >= -eps:
                        face_id[i, j] = f
                        for ch in range(n_ch):
                            data[ch, i, j] = w0 * values[a, ch] + w1 * values[b, ch] + w2 * values[c, ch]
    return data_arr, fid_arr


def rotate_bilinear(double[:, :, ::1] data, mask, double cos, double sin):
    cdef Py_ssize_t c = data.shape[0], h = data.shape[1], w = data.shape[2]
    cdef cnp.uint8_t[:, ::1] m = np.ascontiguousarray(mask, dtype=np.uint8)
    out_arr = np.zeros((c, h, w))
    mask_arr = np.zeros((h, w), dtype=np.uint8)
    cdef double[:, :, ::1] out = out_arr
    cdef cnp.uint8_t[:, ::1] om = mask_arr
    cdef double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0
    cdef double dx, dy, sx, sy, fx, fy, wts[4], acc
    cdef Py_ssize_t i, j, ch, x0, y0, ny, nx, t, yy, xx
    with nogil:
        for i in range(h):
            for j in range(w):
                dx = j - cx
                dy = i - cy
                sx = cos * dx + sin * dy + cx
                sy = -sin * dx + cos * dy + cy
                ny = <Py_ssize_t>floor(sy + 0.5)
                nx = <Py_ssize_t>floor(sx + 0.5)
                if ny < 0 or ny >= h or nx < 0 or nx >= w or m[ny, nx] == 0:
                    continue
                om[i, j] = 1
                x0 = <Py_ssize_t>floor(sx)
                y0 = <Py_ssize_t>floor(sy)
                fx = sx - x0
                fy = sy - y0
                wts[0] = (1 - fx) * (1 - fy)
                wts[1] = fx * (1 - fy)
                wts[2] = (1 - fx) * fy
                wts[3] = fx * fy
                for ch in range(c):
                    acc = 0.0
                    for t in range(4):
                        yy = y0 + t // 2
                        xx = x0 + t % 2
                        if yy >= 0 and yy < h and xx >= 0 and xx < w:
                            acc = acc + wts[t] * data[ch, yy, xx]
                        else:
                            acc = acc + wts[t] * 0.0
                    out[ch, i, j] = acc
    return out_arr, mask_arr.astype(bool)
