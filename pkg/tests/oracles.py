"""Independent reference implementations the tests compare the package against.

Nothing here imports the code under test except plain data types.
"""

import math

import numpy as np


# -- splatting -------------------------------------------------------------------

def quat_matrix(q):
    w, x, y, z = np.asarray(q, float) / np.linalg.norm(q)
    return np.array([[1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                     [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                     [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)]])


def composite_pixel(gaussians, pose, background, row, col):
    """Front-to-back value of one pixel, evaluated term by term in plain python.

    ``gaussians`` is a list of (mean, log_scale, quat, opacity_logit, color).
    """
    Rw = quat_matrix(pose.quaternion)
    k = pose.intrinsics
    px, py = col + 0.5, row + 0.5
    layers = []
    for mean, log_scale, quat, logit, color in gaussians:
        t = Rw @ (np.asarray(mean, float) - pose.position)
        if t[2] <= 0:
            continue
        u = k.focal_px * t[0] / t[2] + k.cx
        v = k.focal_px * t[1] / t[2] + k.cy
        R = quat_matrix(quat)
        cov = R @ np.diag(np.exp(2 * np.asarray(log_scale, float))) @ R.T
        J = np.array([[k.focal_px / t[2], 0, -k.focal_px * t[0] / t[2] ** 2],
                      [0, k.focal_px / t[2], -k.focal_px * t[1] / t[2] ** 2]])
        c2 = J @ Rw @ cov @ Rw.T @ J.T
        d = np.array([px - u, py - v])
        alpha = 1 / (1 + math.exp(-logit)) * math.exp(-0.5 * d @ np.linalg.solve(c2, d))
        layers.append((t[2], alpha, np.clip(color, 0, 1)))
    layers.sort(key=lambda z: z[0])
    out, T = np.zeros(3), 1.0
    for _, alpha, color in layers:
        out += T * alpha * color
        T *= 1 - alpha
    return out + T * np.asarray(background, float)


def central_difference(f, x, h):
    """Gradient of scalar f at array x by central differences, one coordinate at a time."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def rel_err(a, b, floor):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


# -- retrieval -------------------------------------------------------------------

def recall_scan(ranking, gt, k):
    for pos in range(min(k, len(ranking))):
        if ranking[pos] == gt:
            return 1
    return 0


def ap_scan(ranking, relevant):
    """Precision at each relevant rank, summed by a second loop."""
    ranks = [i + 1 for i, g in enumerate(ranking) if g in relevant]
    precisions = []
    for r in ranks:
        hits = sum(1 for g in ranking[:r] if g in relevant)
        precisions.append(hits / r)
    return sum(precisions) / len(relevant)


def kahan_column_means(m):
    m = np.asarray(m, float)
    out = []
    for col in m.T[:, ::-1]:                 # reversed order on purpose
        s, c = 0.0, 0.0
        for v in col:
            y = v - c
            t = s + y
            c = (t - s) - y
            s = t
        out.append(s / len(col))
    return np.array(out)


# -- partition -------------------------------------------------------------------

def ring_means_brute(fm, n_rings):
    """fm is (C, H, W); returns (n_rings, C) means by per-cell Chebyshev assignment."""
    C, H, W = fm.shape
    buckets = [[] for _ in range(n_rings)]
    c = (H - 1) / 2.0
    for i in range(H):
        for j in range(W):
            d = max(abs(i - c), abs(j - c))
            buckets[min(int(math.floor(d)), n_rings - 1)].append(fm[:, i, j])
    return np.stack([np.mean(b, axis=0) for b in buckets])
