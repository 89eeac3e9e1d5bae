"""numpy compositing kernels, vectorized per tile.

Same contract as the compiled ``_composite`` extension; used when the
extension is not built or ``WSPLAT_BACKEND=python`` is set.
"""

import numpy as np


def _tile_alpha(px, py, ids, mean2d, conic, opac, alpha_min, alpha_max):
    dx = px[:, None] - mean2d[ids, 0][None, :]
    dy = py[:, None] - mean2d[ids, 1][None, :]
    a, b, c = conic[ids, 0], conic[ids, 1], conic[ids, 2]
    q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
    gauss = np.exp(-0.5 * q)
    raw = opac[ids][None, :] * gauss
    clamped = raw > alpha_max
    alpha = np.minimum(raw, alpha_max)
    alpha = np.where(alpha < alpha_min, 0.0, alpha)
    return dx, dy, gauss, alpha, clamped


def _active(alpha, early_stop, t_min):
    keep = alpha > 0.0
    if early_stop:
        t_after = np.cumprod(1.0 - alpha, axis=1)
        below = t_after < t_min
        stopped_before = (np.cumsum(below, axis=1) - below) > 0
        keep &= ~stopped_before
    return keep


def _pixels(tile_index, ntx, tile, width, height):
    ty, tx = divmod(tile_index, ntx)
    ys = np.arange(ty * tile, min(height, (ty + 1) * tile))
    xs = np.arange(tx * tile, min(width, (tx + 1) * tile))
    py, px = np.meshgrid(ys, xs, indexing="ij")
    return px.ravel(), py.ravel()


def forward(width, height, tile, ids, ranges, mean2d, conic, opac, color, background,
            early_stop, alpha_min, alpha_max, t_min):
    image = np.empty((height, width, 3))
    trans = np.ones((height, width))
    ncontrib = np.zeros((height, width), dtype=np.int64)
    ntx = (width + tile - 1) // tile
    for t, (s, e) in enumerate(ranges):
        px, py = _pixels(t, ntx, tile, width, height)
        if e <= s:
            image[py, px] = background
            continue
        tid = ids[s:e]
        _, _, _, alpha, _ = _tile_alpha(px, py, tid, mean2d, conic, opac, alpha_min, alpha_max)
        keep = _active(alpha, early_stop, t_min)
        alpha = np.where(keep, alpha, 0.0)
        t_before = np.cumprod(np.concatenate([np.ones((len(px), 1)), 1.0 - alpha[:, :-1]], 1), 1)
        weights = alpha * t_before
        t_final = t_before[:, -1] * (1.0 - alpha[:, -1])
        image[py, px] = weights @ color[tid] + t_final[:, None] * background[None, :]
        trans[py, px] = t_final
        cols = np.arange(1, e - s + 1)[None, :]
        ncontrib[py, px] = np.max(np.where(keep, cols, 0), axis=1)
    return image, trans, ncontrib


def backward(width, height, tile, ids, ranges, mean2d, conic, opac, color, background,
             early_stop, alpha_min, alpha_max, t_min, trans, ncontrib, d_image):
    pair_grads = np.zeros((len(ids), 9))
    ntx = (width + tile - 1) // tile
    for t, (s, e) in enumerate(ranges):
        if e <= s:
            continue
        px, py = _pixels(t, ntx, tile, width, height)
        tid = ids[s:e]
        dx, dy, gauss, alpha, clamped = _tile_alpha(
            px, py, tid, mean2d, conic, opac, alpha_min, alpha_max
        )
        keep = _active(alpha, early_stop, t_min)
        alpha = np.where(keep, alpha, 0.0)
        t_before = np.cumprod(np.concatenate([np.ones((len(px), 1)), 1.0 - alpha[:, :-1]], 1), 1)
        weights = alpha * t_before
        t_final = t_before[:, -1] * (1.0 - alpha[:, -1])
        dc = d_image[py, px]  # (P, 3)
        col = color[tid]  # (K, 3)
        contrib = weights[:, :, None] * col[None, :, :]
        behind = np.cumsum(contrib[:, ::-1], axis=1)[:, ::-1] - contrib
        behind += (t_final[:, None] * 1.0)[:, :, None] * background[None, None, :]
        d_alpha = np.einsum(
            "pkc,pc->pk",
            t_before[:, :, None] * col[None] - behind / (1.0 - alpha)[:, :, None],
            dc,
        )
        d_alpha = np.where(keep & ~clamped, d_alpha, 0.0)
        grads = pair_grads[s:e]
        grads[:, 6:9] += weights.T @ dc
        grads[:, 5] += np.sum(d_alpha * gauss, axis=0)
        d_q = -0.5 * gauss * d_alpha * opac[tid][None, :]
        a, b, c = conic[tid, 0], conic[tid, 1], conic[tid, 2]
        grads[:, 2] += np.sum(d_q * dx * dx, axis=0)
        grads[:, 3] += np.sum(d_q * 2.0 * dx * dy, axis=0)
        grads[:, 4] += np.sum(d_q * dy * dy, axis=0)
        grads[:, 0] += np.sum(d_q * -2.0 * (a * dx + b * dy), axis=0)
        grads[:, 1] += np.sum(d_q * -2.0 * (b * dx + c * dy), axis=0)
    return pair_grads
