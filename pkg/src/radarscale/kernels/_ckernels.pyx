# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled loops for z-buffer splatting, triangle rasterization and max-confidence assembly."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, INFINITY

cnp.import_array()


def zbuffer(const cnp.int64_t[:] u, const cnp.int64_t[:] v, const double[:] z,
            Py_ssize_t height, Py_ssize_t width):
    cdef double[:, :] depth = np.full((height, width), INFINITY)
    cdef Py_ssize_t i, n = z.shape[0]
    cdef cnp.int64_t uu, vv
    for i in range(n):
        uu = u[i]
        vv = v[i]
        if uu < 0 or vv < 0 or uu >= width or vv >= height:
            continue
        if z[i] < depth[vv, uu]:
            depth[vv, uu] = z[i]
    out = np.asarray(depth)
    valid = np.isfinite(out)
    out[~valid] = 0.0
    return out, valid


def raster_log(const cnp.int64_t[:, :] simplices, const double[:] px, const double[:] py,
               const double[:] logd, Py_ssize_t height, Py_ssize_t width):
    cdef double[:, :] out = np.zeros((height, width))
    cdef cnp.uint8_t[:, :] done = np.zeros((height, width), dtype=np.uint8)
    cdef Py_ssize_t t, ntri = simplices.shape[0]
    cdef Py_ssize_t a, b, c, x, y, xmin, xmax, ymin, ymax
    cdef double x0, y0, x1, y1, x2, y2, l0, l1, l2, area, e0, e1, e2, lo, hi, val, fx, fy
    for t in range(ntri):
        a = simplices[t, 0]
        b = simplices[t, 1]
        c = simplices[t, 2]
        x0 = px[a]; y0 = py[a]; l0 = logd[a]
        x1 = px[b]; y1 = py[b]; l1 = logd[b]
        x2 = px[c]; y2 = py[c]; l2 = logd[c]
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if area == 0.0:
            continue
        lo = min(l0, min(l1, l2))
        hi = max(l0, max(l1, l2))
        xmin = <Py_ssize_t>min(x0, min(x1, x2))
        xmax = <Py_ssize_t>max(x0, max(x1, x2))
        ymin = <Py_ssize_t>min(y0, min(y1, y2))
        ymax = <Py_ssize_t>max(y0, max(y1, y2))
        for y in range(max(ymin, 0), min(ymax, height - 1) + 1):
            fy = <double>y
            for x in range(max(xmin, 0), min(xmax, width - 1) + 1):
                if done[y, x]:
                    continue
                fx = <double>x
                e0 = (x1 - fx) * (y2 - fy) - (x2 - fx) * (y1 - fy)
                e1 = (x2 - fx) * (y0 - fy) - (x0 - fx) * (y2 - fy)
                e2 = (x0 - fx) * (y1 - fy) - (x1 - fx) * (y0 - fy)
                if area > 0:
                    if e0 < 0 or e1 < 0 or e2 < 0:
                        continue
                else:
                    if e0 > 0 or e1 > 0 or e2 > 0:
                        continue
                val = (e0 / area) * l0 + (e1 / area) * l1 + (e2 / area) * l2
                if val < lo:
                    val = lo
                elif val > hi:
                    val = hi
                out[y, x] = exp(val)
                done[y, x] = 1
    return np.asarray(out), np.asarray(done).astype(bool)


def assemble_argmax(const cnp.int64_t[:, :] windows, const double[:] conf,
                    const cnp.int64_t[:] offsets, const double[:] depths, double tau,
                    Py_ssize_t height, Py_ssize_t width):
    cdef double[:, :] best = np.full((height, width), -INFINITY)
    cdef double[:, :] out = np.zeros((height, width))
    cdef Py_ssize_t p, npatch = windows.shape[0]
    cdef Py_ssize_t u0, v0, w, h, i, j, k
    cdef double cval
    for p in range(npatch):
        u0 = windows[p, 0]
        v0 = windows[p, 1]
        w = windows[p, 2]
        h = windows[p, 3]
        k = offsets[p]
        for j in range(h):
            for i in range(w):
                cval = conf[k + j * w + i]
                if cval > best[v0 + j, u0 + i]:
                    best[v0 + j, u0 + i] = cval
                    out[v0 + j, u0 + i] = depths[p]
    b = np.asarray(best)
    o = np.asarray(out)
    valid = b > tau
    o[~valid] = 0.0
    return o, valid
