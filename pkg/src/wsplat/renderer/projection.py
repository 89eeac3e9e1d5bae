"""EWA projection of 3D Gaussians and its analytic adjoint."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import Camera

ZNEAR = 0.01
DILATION = 0.3
ALPHA_MIN = 1.0 / 255.0
DET_MIN = 1e-12


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices from unit quaternions ``(w, x, y, z)``; shape (N, 3, 3)."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
        ],
        axis=1,
    )


def _rotmat_vjp(q: np.ndarray, d_rot: np.ndarray) -> np.ndarray:
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    g = d_rot
    dw = 2 * (-z * g[:, 0, 1] + y * g[:, 0, 2] + z * g[:, 1, 0] - x * g[:, 1, 2] - y * g[:, 2, 0] + x * g[:, 2, 1])
    dx = 2 * (
        y * g[:, 0, 1] + z * g[:, 0, 2] + y * g[:, 1, 0] - 2 * x * g[:, 1, 1]
        - w * g[:, 1, 2] + z * g[:, 2, 0] + w * g[:, 2, 1] - 2 * x * g[:, 2, 2]
    )
    dy = 2 * (
        -2 * y * g[:, 0, 0] + x * g[:, 0, 1] + w * g[:, 0, 2] + x * g[:, 1, 0]
        + z * g[:, 1, 2] - w * g[:, 2, 0] + z * g[:, 2, 1] - 2 * y * g[:, 2, 2]
    )
    dz = 2 * (
        -2 * z * g[:, 0, 0] - w * g[:, 0, 1] + x * g[:, 0, 2] + w * g[:, 1, 0]
        - 2 * z * g[:, 1, 1] + y * g[:, 1, 2] + x * g[:, 2, 0] + y * g[:, 2, 1]
    )
    return np.stack([dw, dx, dy, dz], -1)


@dataclass
class Projection:
    mean2d: np.ndarray  # (N, 2) pixels
    cov2d: np.ndarray  # (N, 2, 2), dilated
    conic: np.ndarray  # (N, 3) inverse covariance (a, b, c)
    depth: np.ndarray  # (N,)
    radius: np.ndarray  # (N,) pixel radius beyond which alpha < ALPHA_MIN
    valid: np.ndarray  # (N,) bool
    singular: int
    # intermediates for the adjoint
    cam_points: np.ndarray
    quat: np.ndarray
    quat_norm: np.ndarray
    rot: np.ndarray
    scales: np.ndarray
    sigma: np.ndarray
    jac: np.ndarray


def project_gaussians(means, scales, rotations, opacities, cam: Camera) -> Projection:
    means = np.asarray(means, dtype=np.float64).reshape(-1, 3)
    scales = np.asarray(scales, dtype=np.float64).reshape(-1, 3)
    rotations = np.asarray(rotations, dtype=np.float64).reshape(-1, 4)
    opacities = np.asarray(opacities, dtype=np.float64).reshape(-1)
    n = len(means)

    w2c = cam.rotation
    t = means @ w2c.T + cam.translation
    depth = t[:, 2]
    in_front = depth > ZNEAR
    z = np.where(in_front, depth, 1.0)

    qnorm = np.linalg.norm(rotations, axis=1)
    q = rotations / np.where(qnorm > 0, qnorm, 1.0)[:, None]
    rot = quat_to_rotmat(q)
    m = rot * scales[:, None, :]
    sigma = m @ np.swapaxes(m, 1, 2)

    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = cam.fx / z
    jac[:, 0, 2] = -cam.fx * t[:, 0] / (z * z)
    jac[:, 1, 1] = cam.fy / z
    jac[:, 1, 2] = -cam.fy * t[:, 1] / (z * z)
    tw = jac @ w2c
    cov = tw @ sigma @ np.swapaxes(tw, 1, 2)
    cov[:, 0, 0] += DILATION
    cov[:, 1, 1] += DILATION

    a, b, c = cov[:, 0, 0], cov[:, 0, 1], cov[:, 1, 1]
    det = a * c - b * b
    nonsingular = det >= DET_MIN
    safe_det = np.where(nonsingular, det, 1.0)
    conic = np.stack([c / safe_det, -b / safe_det, a / safe_det], -1)

    mean2d = np.stack([cam.fx * t[:, 0] / z + cam.cx, cam.fy * t[:, 1] / z + cam.cy], -1)

    visible_peak = np.minimum(opacities, 0.99) >= ALPHA_MIN
    lam_max = 0.5 * (a + c) + np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
    level = 2.0 * np.log(np.maximum(255.0 * opacities, 1.0))
    radius = np.sqrt(np.maximum(lam_max, 0.0) * level) + 1e-6

    valid = in_front & nonsingular & visible_peak & (qnorm > 0)
    singular = int(np.sum(in_front & ~nonsingular))
    return Projection(
        mean2d, cov, conic, depth, np.where(valid, radius, 0.0), valid, singular,
        t, q, qnorm, rot, scales, sigma, jac,
    )


def project(mean, scale, rotation, cam: Camera):
    """Project one Gaussian; returns ``(mean2d, cov2d, depth)`` or ``None`` when
    it lies behind the near plane."""
    proj = project_gaussians(
        np.asarray(mean)[None], np.asarray(scale)[None], np.asarray(rotation)[None],
        np.ones(1), cam,
    )
    if proj.depth[0] <= ZNEAR:
        return None
    return proj.mean2d[0], proj.cov2d[0], float(proj.depth[0])


def project_backward(proj: Projection, cam: Camera, d_mean2d: np.ndarray, d_conic: np.ndarray):
    """Chain image-plane gradients back to ``(d_means, d_scales, d_rotations)``."""
    valid = proj.valid
    d_mean2d = np.where(valid[:, None], d_mean2d, 0.0)
    d_conic = np.where(valid[:, None], d_conic, 0.0)
    t = proj.cam_points
    z = np.where(valid, t[:, 2], 1.0)
    w2c = cam.rotation

    ca, cb, cc = proj.conic[:, 0], proj.conic[:, 1], proj.conic[:, 2]
    inv = np.stack([np.stack([ca, cb], -1), np.stack([cb, cc], -1)], 1)
    g_inv = np.stack(
        [
            np.stack([d_conic[:, 0], 0.5 * d_conic[:, 1]], -1),
            np.stack([0.5 * d_conic[:, 1], d_conic[:, 2]], -1),
        ],
        1,
    )
    g_cov = -inv @ g_inv @ inv

    tw = proj.jac @ w2c
    g_sigma = np.swapaxes(tw, 1, 2) @ g_cov @ tw
    g_tw = 2.0 * g_cov @ tw @ proj.sigma
    g_jac = g_tw @ w2c.T

    fx, fy = cam.fx, cam.fy
    gt = np.zeros_like(t)
    gt[:, 0] = d_mean2d[:, 0] * fx / z - g_jac[:, 0, 2] * fx / (z * z)
    gt[:, 1] = d_mean2d[:, 1] * fy / z - g_jac[:, 1, 2] * fy / (z * z)
    gt[:, 2] = (
        -d_mean2d[:, 0] * fx * t[:, 0] / (z * z)
        - d_mean2d[:, 1] * fy * t[:, 1] / (z * z)
        - g_jac[:, 0, 0] * fx / (z * z)
        + g_jac[:, 0, 2] * 2 * fx * t[:, 0] / z**3
        - g_jac[:, 1, 1] * fy / (z * z)
        + g_jac[:, 1, 2] * 2 * fy * t[:, 1] / z**3
    )
    d_means = gt @ w2c

    m = proj.rot * proj.scales[:, None, :]
    g_m = 2.0 * g_sigma @ m
    d_scales = np.einsum("nij,nij->nj", g_m, proj.rot)
    g_rot = g_m * proj.scales[:, None, :]
    g_q = _rotmat_vjp(proj.quat, g_rot)
    q = proj.quat
    qn = np.where(proj.quat_norm > 0, proj.quat_norm, 1.0)
    d_rot = (g_q - q * np.sum(q * g_q, axis=1, keepdims=True)) / qn[:, None]

    mask = valid[:, None]
    return np.where(mask, d_means, 0.0), np.where(mask, d_scales, 0.0), np.where(mask, d_rot, 0.0)
