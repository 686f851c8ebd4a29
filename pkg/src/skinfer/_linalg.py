"""Small batched symmetric-matrix kernels.

``numpy.linalg`` loops over stacks one LAPACK call at a time, which dominates
the filter cost for the 1x1 and 2x2 systems every builtin model produces, so
those sizes get closed forms.
"""

from __future__ import annotations

import math

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)
RANK_TOL = 1e-12


def eigh_sym(B):
    """Eigen-decomposition of symmetric ``(..., s, s)`` stacks, ascending eigenvalues."""
    s = B.shape[-1]
    if s == 1:
        return B[..., 0, :].copy(), np.ones(B.shape)
    if s == 2:
        a, b, d = B[..., 0, 0], 0.5 * (B[..., 0, 1] + B[..., 1, 0]), B[..., 1, 1]
        mean = 0.5 * (a + d)
        half = 0.5 * (a - d)
        r = np.hypot(half, b)
        vals = np.stack([mean - r, mean + r], axis=-1)
        theta = 0.5 * np.arctan2(b, half)
        cos, sin = np.cos(theta), np.sin(theta)
        vecs = np.empty(B.shape)
        vecs[..., 0, 1], vecs[..., 1, 1] = cos, sin
        vecs[..., 0, 0], vecs[..., 1, 0] = -sin, cos
        return vals, vecs
    return np.linalg.eigh(B)


def positive_mask(vals):
    top = np.max(np.abs(vals), axis=-1, keepdims=True)
    return vals > RANK_TOL * np.maximum(top, 1e-300)


def sqrt_from_eig(vals, vecs):
    root = np.sqrt(np.maximum(vals, 0.0))
    return (vecs * root[..., None, :]) @ np.swapaxes(vecs, -1, -2)


def logpdf_from_eig(resid, vals, vecs, check_range: bool = True):
    """Gaussian log-density of ``resid`` under ``N(0, V diag(vals) V^T)``.

    Singular covariances use the pseudo-determinant on the positive
    eigenspace; a residual leaving that space gives ``-inf``.
    """
    keep = positive_mask(vals)
    proj = (resid[..., None, :] @ vecs)[..., 0, :]
    safe = np.where(keep, vals, 1.0)
    quad = np.sum(np.where(keep, proj * proj / safe, 0.0), axis=-1)
    rank = keep.sum(axis=-1)
    out = -0.5 * (rank * LOG_2PI + np.sum(np.where(keep, np.log(safe), 0.0), axis=-1) + quad)
    if check_range and not np.all(keep):
        off = np.sum(np.where(keep, 0.0, proj * proj), axis=-1)
        scale = 1.0 + np.sum(resid * resid, axis=-1)
        out = np.where(off > 1e-18 * scale, -np.inf, out)
    return out


def gaussian_draw(mean, cov, z):
    """Draw ``mean + sqrt(cov) z`` and return it with its own log-density.

    The density is read off ``z``: only components along the positive
    eigen-directions of ``cov`` are random.
    """
    vals, vecs = eigh_sym(cov)
    keep = positive_mask(vals)
    proj = (z[..., None, :] @ vecs)[..., 0, :]
    root = np.sqrt(np.maximum(vals, 0.0))
    x = mean + ((vecs * root[..., None, :]) @ proj[..., None])[..., 0]
    safe = np.where(keep, vals, 1.0)
    rank = keep.sum(axis=-1)
    logpdf = -0.5 * (rank * LOG_2PI + np.sum(np.where(keep, np.log(safe) + proj * proj, 0.0), axis=-1))
    return x, logpdf


def gaussian_logpdf(x, mean, cov):
    vals, vecs = eigh_sym(np.asarray(cov, dtype=float))
    return logpdf_from_eig(np.asarray(x, dtype=float) - mean, vals, vecs)


def sym_inv(A, pivot_tol: float = 1e-12):
    """Inverse of symmetric ``(..., p, p)`` stacks plus a well-conditioned mask.

    Matrices whose smallest eigenvalue falls below ``pivot_tol`` times the
    largest are reported as failed (their returned inverse is zero).
    """
    p = A.shape[-1]
    if p == 1:
        a = A[..., 0, 0]
        ok = a > 0
        inv = np.where(ok, 1.0 / np.where(ok, a, 1.0), 0.0)
        return inv[..., None, None], ok & np.isfinite(a)
    vals, vecs = eigh_sym(A)
    top = np.max(np.abs(vals), axis=-1)
    ok = (np.min(vals, axis=-1) > pivot_tol * top) & np.isfinite(top)
    safe = np.where(ok[..., None], vals, 1.0)
    inv = (vecs / safe[..., None, :]) @ np.swapaxes(vecs, -1, -2)
    return np.where(ok[..., None, None], inv, 0.0), ok
