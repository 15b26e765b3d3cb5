"""Pure numpy versions of the compiled kernels, with identical signatures."""
from __future__ import annotations

import numpy as np


def _path_views(x, y, row, channels, broadcast2):
    o1, o2, _, d1, d2, _, _, _ = row
    B = x.shape[0]
    xb = x[:, o1:o1 + channels * d1].reshape(B, channels, d1)
    cy = 1 if broadcast2 else channels
    yb = y[:, o2:o2 + cy * d2].reshape(B, cy, d2)
    return xb, yb


def _scale(w, row, norm, channels):
    wo = row[7]
    if wo < 0:
        return np.full((1, channels, 1), norm)
    return (norm * w[:, wo:wo + channels])[:, :, None]


def tp_forward(x, y, w, table, norms, cg, channels, broadcast2, out):
    B = x.shape[0]
    for p in range(table.shape[0]):
        row = table[p]
        _, _, o3, d1, d2, d3, cgo, _ = row
        xb, yb = _path_views(x, y, row, channels, broadcast2)
        block = cg[cgo:cgo + d1 * d2 * d3].reshape(d1 * d2, d3)
        outer = (xb[:, :, :, None] * yb[:, :, None, :]).reshape(-1, d1 * d2)
        t = (outer @ block).reshape(B, channels, d3)
        out[:, o3:o3 + channels * d3] += (_scale(w, row, norms[p], channels) * t).reshape(B, -1)


def tp_backward(x, y, w, table, norms, cg, channels, broadcast2, g, gx, gy, gw):
    B = x.shape[0]
    shared = w.shape[0] == 1
    for p in range(table.shape[0]):
        row = table[p]
        o1, o2, o3, d1, d2, d3, cgo, wo = row
        xb, yb = _path_views(x, y, row, channels, broadcast2)
        block = cg[cgo:cgo + d1 * d2 * d3].reshape(d1 * d2, d3)
        gb = g[:, o3:o3 + channels * d3].reshape(-1, d3)
        t = (gb @ block.T).reshape(B, channels, d1, d2)
        s = _scale(w, row, norms[p], channels)
        gx[:, o1:o1 + channels * d1] += (s * np.einsum("bcij,bcj->bci", t, yb)).reshape(B, -1)
        gyb = s * np.einsum("bcij,bci->bcj", t, np.broadcast_to(xb, t.shape[:3]))
        if broadcast2:
            gy[:, o2:o2 + d2] += gyb.sum(axis=1)
        else:
            gy[:, o2:o2 + channels * d2] += gyb.reshape(B, -1)
        if wo >= 0:
            acc = norms[p] * np.einsum("bcij,bci,bcj->bc", t, xb, np.broadcast_to(yb, (B, channels, d2)))
            if shared:
                gw[0, wo:wo + channels] += acc.sum(axis=0)
            else:
                gw[:, wo:wo + channels] += acc


def _round_robin(n: int):
    """Rounds of disjoint index pairs covering every pair once (circle method)."""
    m = n + (n % 2)
    ring = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = [(ring[i], ring[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(a, b), max(a, b)) for a, b in pairs if a < n and b < n]
        if pairs:
            p, q = np.array(pairs, dtype=np.int64).T
            rounds.append((p, q))
        ring = [ring[0], ring[-1]] + ring[1:-1]
    return rounds


def jacobi_eigh(a, v, tol, max_sweeps):
    """Jacobi sweeps applying each round of disjoint rotations at once."""
    n = a.shape[0]
    v[...] = np.eye(n)
    rounds = _round_robin(n)
    iu = np.triu_indices(n, 1)
    for sweep in range(max_sweeps + 1):
        if np.sqrt(2.0 * np.sum(a[iu] ** 2)) < tol:
            return sweep
        if sweep == max_sweeps:
            break
        for p, q in rounds:
            apq = a[p, q]
            live = apq != 0.0
            if not live.any():
                continue
            p, q, apq = p[live], q[live], apq[live]
            theta = (a[q, q] - a[p, p]) / (2.0 * apq)
            t = np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.hypot(1.0, theta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            cp, cq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = c * cp - s * cq
            a[:, q] = s * cp + c * cq
            rp, rq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * rp - s[:, None] * rq
            a[q, :] = s[:, None] * rp + c[:, None] * rq
            vp, vq = v[:, p].copy(), v[:, q].copy()
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
    return -1
