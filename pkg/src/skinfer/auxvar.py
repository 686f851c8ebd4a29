"""The auxiliary Gaussian vector ``u`` that drives the particle filter.

``u`` has a fixed length for a given ``(n, m, N, q, init_dim)`` so that
consecutive likelihood estimates consume randomness at the same positions.
Layout, in order::

    [initial block: N x init_dim]
    for each observation time t = 2..n:
        [resampling scalar][propagation block: N x m x q, particle-major]
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri, pdtr

UNIFORM_EPS = 1e-16
NORMAL_FALLBACK_RATE = 1e6


@dataclass(frozen=True)
class AuxLayout:
    n: int
    m: int
    N: int
    q: int
    init_dim: int = 0

    def __post_init__(self):
        for name in ("n", "m", "N", "q"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.init_dim < 0:
            raise ValueError("init_dim must be >= 0")
        if self.d > np.iinfo(np.intp).max:
            raise OverflowError("auxiliary dimension exceeds addressable size")

    @property
    def init_size(self) -> int:
        return self.N * self.init_dim

    @property
    def block_size(self) -> int:
        """Coordinates per observation interval (resampling scalar + propagation)."""
        return self.N * self.m * self.q + 1

    @property
    def d(self) -> int:
        return self.init_size + (self.n - 1) * self.block_size

    def init_offset(self, i: int, j: int) -> int:
        return i * self.init_dim + j

    def resample_offset(self, t: int) -> int:
        """Offset of the resampling scalar for observation time ``t`` (1-based, t >= 2)."""
        if not 2 <= t <= self.n:
            raise IndexError(t)
        return self.init_size + (t - 2) * self.block_size

    def propagation_offset(self, t: int, i: int, k: int, j: int) -> int:
        """Offset for time ``t`` (2..n), particle ``i``, sub-step ``k`` and component ``j`` (0-based)."""
        return self.resample_offset(t) + 1 + (i * self.m + k) * self.q + j

    def coords(self, offset: int) -> tuple:
        """Inverse of the offset maps: ``('init', i, j)``, ``('resample', t)`` or ``('prop', t, i, k, j)``."""
        if not 0 <= offset < self.d:
            raise IndexError(offset)
        if offset < self.init_size:
            return ("init",) + divmod(offset, self.init_dim)
        rel = offset - self.init_size
        blk, pos = divmod(rel, self.block_size)
        t = blk + 2
        if pos == 0:
            return ("resample", t)
        pos -= 1
        ik, j = divmod(pos, self.q)
        i, k = divmod(ik, self.m)
        return ("prop", t, i, k, j)

    def offset(self, coords: tuple) -> int:
        kind = coords[0]
        if kind == "init":
            return self.init_offset(*coords[1:])
        if kind == "resample":
            return self.resample_offset(coords[1])
        return self.propagation_offset(*coords[1:])


def layout(n: int, m: int, N: int, q: int, init_dim: int = 0) -> AuxLayout:
    return AuxLayout(n, m, N, q, init_dim)


@dataclass(frozen=True)
class AuxiliaryBlock:
    u: np.ndarray
    layout: AuxLayout

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        if u.shape != (self.layout.d,):
            raise ValueError(f"u has shape {u.shape}, layout expects ({self.layout.d},)")
        u = u.copy() if u.flags.writeable else u
        u.setflags(write=False)
        object.__setattr__(self, "u", u)

    @classmethod
    def draw(cls, lay: AuxLayout, rng: np.random.Generator) -> "AuxiliaryBlock":
        return cls(rng.standard_normal(lay.d), lay)

    def init_block(self) -> np.ndarray:
        lay = self.layout
        return self.u[: lay.init_size].reshape(lay.N, lay.init_dim)

    def _blocks(self) -> np.ndarray:
        lay = self.layout
        return self.u[lay.init_size:].reshape(lay.n - 1, lay.block_size)

    def resample_scalars(self) -> np.ndarray:
        """Resampling scalars for t = 2..n, shape (n-1,)."""
        return self._blocks()[:, 0]

    def propagation(self) -> np.ndarray:
        """Propagation inputs for t = 2..n, shape (n-1, N, m, q)."""
        lay = self.layout
        return self._blocks()[:, 1:].reshape(lay.n - 1, lay.N, lay.m, lay.q)


def crank_nicolson_step(u, rho: float, omega):
    """``u' = rho u + sqrt(1 - rho^2) omega``; returns the same type as ``u``."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    block = u if isinstance(u, AuxiliaryBlock) else None
    arr = block.u if block is not None else np.asarray(u, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if omega.shape != arr.shape:
        raise ValueError("omega must match u in shape")
    new = rho * arr + math.sqrt(1.0 - rho * rho) * omega
    return AuxiliaryBlock(new, block.layout) if block is not None else new


def gauss_to_uniform(z):
    """Standard normal CDF, clamped to ``[1e-16, 1 - 1e-16]``."""
    return np.clip(ndtr(z), UNIFORM_EPS, 1.0 - UNIFORM_EPS)


def poisson_quantile(lam, p):
    """Smallest ``k`` with ``P(Po(lam) <= k) >= p``, elementwise.

    The CDF is the regularised incomplete gamma function. The search starts
    from a Cornish-Fisher guess and walks to the exact quantile. Rates above
    ``1e6`` use ``max(0, round(lam + sqrt(lam) * Phi^-1(p)))``.
    """
    lam, p = np.broadcast_arrays(np.asarray(lam, dtype=float), np.asarray(p, dtype=float))
    if np.any(lam < 0) or not np.all(np.isfinite(lam)):
        raise ValueError("Poisson rate must be finite and non-negative")
    out = np.zeros(lam.shape, dtype=np.int64)
    big = lam > NORMAL_FALLBACK_RATE
    if np.any(big):
        lb = lam[big]
        out[big] = np.maximum(0, np.round(lb + np.sqrt(lb) * ndtri(p[big]))).astype(np.int64)
    mid = (lam > 0) & ~big
    if not np.any(mid):
        return out
    lm, pm = lam[mid], p[mid]
    z = ndtri(pm)
    k = np.floor(lm + np.sqrt(lm) * z + (z * z - 1.0) / 6.0)
    k = np.maximum(k, 0.0)
    while True:
        low = pdtr(k, lm) < pm
        if not np.any(low):
            break
        k = np.where(low, k + 1.0, k)
    while True:
        high = (k > 0) & (pdtr(np.maximum(k - 1.0, 0.0), lm) >= pm)
        if not np.any(high):
            break
        k = np.where(high, k - 1.0, k)
    out[mid] = k.astype(np.int64)
    return out
