"""Numpy implementations of the compiled kernels, same signatures and results."""
import numpy as np


def zbuffer(u, v, z, height, width):
    u = np.asarray(u, dtype=np.int64)
    v = np.asarray(v, dtype=np.int64)
    z = np.asarray(z, dtype=np.float64)
    keep = (u >= 0) & (v >= 0) & (u < width) & (v < height)
    depth = np.full(height * width, np.inf)
    np.minimum.at(depth, v[keep] * width + u[keep], z[keep])
    depth = depth.reshape(height, width)
    valid = np.isfinite(depth)
    depth[~valid] = 0.0
    return depth, valid


def raster_log(simplices, px, py, logd, height, width):
    out = np.zeros((height, width))
    done = np.zeros((height, width), dtype=bool)
    for a, b, c in np.asarray(simplices):
        x0, y0, l0 = px[a], py[a], logd[a]
        x1, y1, l1 = px[b], py[b], logd[b]
        x2, y2, l2 = px[c], py[c], logd[c]
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if area == 0.0:
            continue
        xmin, xmax = max(int(min(x0, x1, x2)), 0), min(int(max(x0, x1, x2)), width - 1)
        ymin, ymax = max(int(min(y0, y1, y2)), 0), min(int(max(y0, y1, y2)), height - 1)
        if xmin > xmax or ymin > ymax:
            continue
        fy, fx = np.mgrid[ymin:ymax + 1, xmin:xmax + 1].astype(np.float64)
        e0 = (x1 - fx) * (y2 - fy) - (x2 - fx) * (y1 - fy)
        e1 = (x2 - fx) * (y0 - fy) - (x0 - fx) * (y2 - fy)
        e2 = (x0 - fx) * (y1 - fy) - (x1 - fx) * (y0 - fy)
        if area > 0:
            inside = (e0 >= 0) & (e1 >= 0) & (e2 >= 0)
        else:
            inside = (e0 <= 0) & (e1 <= 0) & (e2 <= 0)
        sub_done = done[ymin:ymax + 1, xmin:xmax + 1]
        inside &= ~sub_done
        if not inside.any():
            continue
        val = (e0[inside] / area) * l0 + (e1[inside] / area) * l1 + (e2[inside] / area) * l2
        val = np.clip(val, min(l0, l1, l2), max(l0, l1, l2))
        sub_out = out[ymin:ymax + 1, xmin:xmax + 1]
        sub_out[inside] = np.exp(val)
        sub_done[inside] = True
    return out, done


def assemble_argmax(windows, conf, offsets, depths, tau, height, width):
    best = np.full((height, width), -np.inf)
    out = np.zeros((height, width))
    for p, (u0, v0, w, h) in enumerate(np.asarray(windows)):
        k = offsets[p]
        c = np.asarray(conf[k:k + w * h]).reshape(h, w)
        b = best[v0:v0 + h, u0:u0 + w]
        better = c > b
        b[better] = c[better]
        out[v0:v0 + h, u0:u0 + w][better] = depths[p]
    valid = best > tau
    out[~valid] = 0.0
    return out, valid
