"""Effective sample size, likelihood-estimator probes and the particle-number rule."""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .auxvar import crank_nicolson_step
from .forward_sim import Dataset
from .model_core import KineticModel
from .particle_filter import FilterConfig, aux_layout, run_apf_batch

logger = logging.getLogger(__name__)

SIGMA2_CONSTANT = 2.16
CHUNK_BYTES = 32 * 2 ** 20


# ---------------------------------------------------------------------------
# ESS
# ---------------------------------------------------------------------------


def autocovariance(x) -> np.ndarray:
    """Biased sample autocovariance at all lags (FFT, zero padded)."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    xc = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size)
    return np.fft.irfft(f * np.conj(f), size)[:n] / n


def integrated_autocorr_time(x) -> float:
    """``1 + 2 sum_k rho_k`` truncated by Geyer's initial positive sequence rule."""
    gamma = autocovariance(x)
    if not gamma[0] > 0:
        return math.inf
    n = len(gamma)
    pairs = gamma[: n - n % 2].reshape(-1, 2).sum(axis=1)
    nonpos = np.flatnonzero(pairs <= 0)
    K = nonpos[0] if len(nonpos) else len(pairs)
    return float((-gamma[0] + 2.0 * pairs[:K].sum()) / gamma[0])


def ess(series, return_flag: bool = False):
    """Effective sample size ``n / (1 + 2 sum_k rho_k)`` of a scalar series.

    The autocorrelation sum is truncated with Geyer's initial positive
    sequence. A constant series has ESS 0 and is flagged degenerate.

    Parameters
    ----------
    series : array_like, length >= 10
    return_flag : bool
        If true, return ``(ess, degenerate)``.
    """
    x = np.asarray(series, dtype=float).ravel()
    if len(x) < 10:
        raise ValueError("ESS needs at least 10 values")
    degenerate = not np.ptp(x) > 0
    if degenerate:
        value = 0.0
    else:
        tau = integrated_autocorr_time(x)
        value = float(len(x) / tau) if np.isfinite(tau) and tau > 0 else 0.0
    return (value, degenerate) if return_flag else value


def mess(chain) -> float:
    """Minimum ESS over the columns of a ``(n_iters, k)`` chain."""
    chain = np.asarray(chain, dtype=float)
    if chain.ndim == 1:
        chain = chain[:, None]
    return float(min(ess(chain[:, j]) for j in range(chain.shape[1])))


def chain_summary(theta, names, accepted=None, probs=(0.025, 0.5, 0.975)) -> dict:
    theta = np.asarray(theta, dtype=float)
    out = {"n_iters": int(theta.shape[0]), "parameters": {}}
    for j, name in enumerate(names):
        col = theta[:, j]
        e, degenerate = ess(col, return_flag=True)
        out["parameters"][name] = {
            "mean": float(col.mean()),
            "sd": float(col.std(ddof=1)),
            "quantiles": {f"{p:g}": float(q) for p, q in zip(probs, np.quantile(col, probs))},
            "ess": e,
            "degenerate": degenerate,
        }
    out["mess"] = float(min(v["ess"] for v in out["parameters"].values()))
    if accepted is not None:
        out["acceptance_rate"] = float(np.mean(accepted))
    return out


# ---------------------------------------------------------------------------
# Likelihood probes
# ---------------------------------------------------------------------------


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("SKM_THREADS", "1")))
    except ValueError:
        return 1


def _replicate_inputs(seed, replicates: int, d: int, extra: bool = False):
    """Per-replicate Gaussian vectors from spawned seeds, independent of how they are batched."""
    children = np.random.SeedSequence(seed).spawn(replicates)
    U = np.empty((replicates, d))
    W = np.empty((replicates, d)) if extra else None
    for r, ss in enumerate(children):
        g = np.random.default_rng(ss)
        U[r] = g.standard_normal(d)
        if extra:
            W[r] = g.standard_normal(d)
    return U, W


def _batched_estimates(model, c, data, U, config: FilterConfig) -> np.ndarray:
    R, d = U.shape
    chunk = max(1, min(R, CHUNK_BYTES // (8 * d * max(1, model.m))))
    starts = list(range(0, R, chunk))

    def work(a):
        return run_apf_batch(model, c, data, U[a:a + chunk], config)

    threads = _threads()
    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(a) for a in starts]
    return np.concatenate(parts)


@dataclass
class ProbeResult:
    value: float
    estimates: np.ndarray
    n_dead: int
    replicates: int

    @property
    def death_rate(self) -> float:
        return self.n_dead / self.replicates


def probe_sigma2(model: KineticModel, data: Dataset, c_center, N: int, replicates: int = 100, seed=0,
                 proposal: str = "bridge") -> ProbeResult:
    """Sample variance of independent ``log p-hat`` estimates at ``c_center``.

    Estimates equal to ``-inf`` are counted as deaths and left out.
    """
    if replicates < 30:
        raise ValueError("probe_sigma2 needs at least 30 replicates")
    config = FilterConfig(N, proposal=proposal)
    lay = aux_layout(model, data.n, N)
    U, _ = _replicate_inputs(seed, replicates, lay.d)
    est = _batched_estimates(model, np.asarray(c_center, dtype=float), data, U, config)
    live = np.isfinite(est)
    dead = int((~live).sum())
    if dead:
        logger.warning("%d of %d likelihood estimates were -inf and are excluded", dead, replicates)
    var = float(np.var(est[live], ddof=1)) if live.sum() > 1 else float("nan")
    return ProbeResult(var, est, dead, replicates)


def probe_rho_l(model: KineticModel, data: Dataset, c_center, N: int, rho: float, replicates: int = 100,
                seed=0, proposal: str = "bridge") -> ProbeResult:
    """Correlation of ``(log p-hat_u, log p-hat_u')`` with ``u'`` one Crank-Nicolson step from ``u``."""
    if replicates < 100:
        raise ValueError("probe_rho_l needs at least 100 replicates")
    config = FilterConfig(N, proposal=proposal)
    lay = aux_layout(model, data.n, N)
    U, W = _replicate_inputs(seed, replicates, lay.d, extra=True)
    U2 = crank_nicolson_step(U, rho, W)
    c = np.asarray(c_center, dtype=float)
    a = _batched_estimates(model, c, data, U, config)
    b = _batched_estimates(model, c, data, U2, config)
    live = np.isfinite(a) & np.isfinite(b)
    dead = int((~live).sum())
    if dead:
        logger.warning("%d of %d estimate pairs contained -inf and are excluded", dead, replicates)
    a, b = a[live], b[live]
    if len(a) < 3:
        value = float("nan")
    elif np.array_equal(a, b):
        value = 1.0
    else:
        value = float(np.corrcoef(a, b)[0, 1])
    return ProbeResult(value, np.stack([a, b], axis=1), dead, replicates)


# ---------------------------------------------------------------------------
# Particle-number rule
# ---------------------------------------------------------------------------


def sigma2_target(rho_l: float) -> float:
    """``2.16 / (1 - rho_l^2)``."""
    denom = 1.0 - rho_l * rho_l
    return math.inf if denom <= 0 else SIGMA2_CONSTANT / denom


def recommend_N(sigma2_by_N: dict, rho_l: float):
    """Smallest probed ``N`` whose variance meets the target; returns ``(N, reached)``.

    When no probed ``N`` meets the target the largest one is returned with
    ``reached=False``.
    """
    if not sigma2_by_N:
        raise ValueError("empty probe table")
    target = sigma2_target(rho_l)
    for N in sorted(sigma2_by_N):
        if sigma2_by_N[N] <= target:
            return int(N), True
    return int(max(sigma2_by_N)), False


@dataclass
class TuningReport:
    c_center: list
    rho: float
    replicates: int
    seed: int
    N_grid: list
    sigma2_N: list
    rho_l: list
    death_rate: list
    target: float = float("nan")
    recommended_N: int | None = None
    reached: bool = False
    settings: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(_finite(asdict(self)), indent=2, sort_keys=True) + "\n"

    def table(self) -> str:
        lines = [f"{'N':>6} {'sigma2_N':>10} {'rho_l':>8} {'dead':>6}"]
        for N, s2, r, dr in zip(self.N_grid, self.sigma2_N, self.rho_l, self.death_rate):
            lines.append(f"{N:>6d} {s2:>10.4f} {r:>8.4f} {dr:>6.2f}")
        flag = "" if self.reached else " (target not reached in probed range)"
        lines.append(f"target sigma2 = {self.target:.4g}; recommended N = {self.recommended_N}{flag}")
        return "\n".join(lines)


def _finite(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def tune(model: KineticModel, data: Dataset, c_center, N_grid, rho: float, replicates: int = 100, seed: int = 0,
         proposal: str = "bridge") -> TuningReport:
    """Probe ``sigma2_N`` and ``rho_l`` over ``N_grid`` and apply the particle-number rule.

    The smallest ``rho_l`` across the grid sets the variance target, which
    errs towards more particles.
    """
    N_grid = sorted(int(N) for N in N_grid)
    s2, rl, dr = [], [], []
    for j, N in enumerate(N_grid):
        a = probe_sigma2(model, data, c_center, N, max(30, replicates), seed=[seed, j, 0], proposal=proposal)
        b = probe_rho_l(model, data, c_center, N, rho, max(100, replicates), seed=[seed, j, 1], proposal=proposal)
        s2.append(a.value)
        rl.append(b.value)
        dr.append(a.death_rate)
    finite_rl = [r for r in rl if np.isfinite(r)]
    rho_use = min(finite_rl) if finite_rl else 0.0
    table = {N: v for N, v in zip(N_grid, s2) if np.isfinite(v)}
    rec, reached = recommend_N(table, rho_use) if table else (None, False)
    return TuningReport([float(v) for v in np.asarray(c_center, dtype=float)], float(rho), int(replicates), int(seed),
                        N_grid, s2, rl, dr, sigma2_target(rho_use), rec, reached, {"proposal": proposal})
