"""Pseudo-marginal samplers (CPMMH, with PMMH as ``rho = 0``) and the modified innovation scheme.

Chains move on the sampling coordinate ``theta`` of the prior (``log c`` for
positive rate constants). Every random number comes from one
``numpy.random.Generator`` seeded per run, drawn in a fixed order, so chains
are bit-for-bit reproducible.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _linalg as la
from .auxvar import AuxiliaryBlock, crank_nicolson_step
from .bridges import bridge_moments, mdb_step
from .forward_sim import Dataset
from .model_core import KineticModel
from .particle_filter import FilterConfig, aux_layout, run_apf

logger = logging.getLogger(__name__)

SCALE_CPMMH = 2.56
SCALE_MIS = 2.38
MAX_INIT_ATTEMPTS = 100


class NumericalAbort(RuntimeError):
    """The sampler could not obtain a usable starting state."""


# ---------------------------------------------------------------------------
# Proposal and state containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProposalConfig:
    rw_cov: np.ndarray
    rho: float = 0.0

    def __post_init__(self):
        cov = np.atleast_2d(np.asarray(self.rw_cov, dtype=float))
        if cov.shape[0] != cov.shape[1] or not np.allclose(cov, cov.T, atol=1e-12):
            raise ValueError("rw_cov must be a symmetric square matrix")
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ValueError("rw_cov must be positive definite") from None
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        object.__setattr__(self, "rw_cov", cov)

    @property
    def dim(self) -> int:
        return self.rw_cov.shape[0]

    @staticmethod
    def scale_factor(sampler: str, dim: int) -> float:
        """``2.56^2 / v`` for the pseudo-marginal samplers, ``2.38^2 / v`` for MIS."""
        base = SCALE_MIS if sampler == "mis" else SCALE_CPMMH
        return base * base / dim

    @classmethod
    def from_samples(cls, samples, sampler: str = "cpmmh", rho: float = 0.0) -> "ProposalConfig":
        """Scaled sample covariance of pilot draws, regularised if not positive definite."""
        samples = np.asarray(samples, dtype=float)
        dim = samples.shape[1]
        cov = np.atleast_2d(np.cov(samples, rowvar=False)) * cls.scale_factor(sampler, dim)
        cov = 0.5 * (cov + cov.T)
        vals, vecs = np.linalg.eigh(cov)
        floor = max(1e-10, 1e-8 * float(np.max(np.abs(vals))) if vals.size else 1e-10)
        if vals.min() < floor:
            logger.warning("pilot covariance not positive definite; flooring eigenvalues at %.3g", floor)
            cov = (vecs * np.maximum(vals, floor)) @ vecs.T
            cov = 0.5 * (cov + cov.T)
        return cls(cov, rho)


@dataclass
class ChainState:
    theta: np.ndarray
    u: AuxiliaryBlock | None
    log_phat: float
    log_prior: float

    @property
    def log_target(self) -> float:
        return self.log_prior + self.log_phat


@dataclass
class ChainResult:
    names: list
    theta: np.ndarray
    log_phat: np.ndarray
    accepted: np.ndarray
    sampler: str
    wall_time: float = 0.0
    extras: dict = field(default_factory=dict)

    @property
    def n_iters(self) -> int:
        return len(self.log_phat)

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accepted)) if self.n_iters else float("nan")

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter"] + list(self.names) + ["log_phat", "accepted"])
            for i in range(self.n_iters):
                w.writerow([i + 1] + ["%.17g" % v for v in self.theta[i]]
                           + ["%.17g" % self.log_phat[i], int(self.accepted[i])])

    @classmethod
    def from_csv(cls, path, sampler: str = "unknown") -> "ChainResult":
        with Path(path).open() as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], [r for r in rows[1:] if r]
        if len(header) < 4 or header[0] != "iter" or header[-2:] != ["log_phat", "accepted"]:
            raise ValueError(f"{path}: not a chain CSV")
        arr = np.array([[float(v) for v in r] for r in body]).reshape(len(body), len(header))
        return cls(header[1:-2], arr[:, 1:-2], arr[:, -2], arr[:, -1].astype(bool), sampler)


def rw_propose(theta, rw_cov, gaussian_draw) -> np.ndarray:
    """``theta + chol(rw_cov) @ gaussian_draw``."""
    try:
        L = np.linalg.cholesky(np.atleast_2d(rw_cov))
    except np.linalg.LinAlgError:
        raise ValueError("rw_cov must be positive definite") from None
    return np.asarray(theta, dtype=float) + L @ np.asarray(gaussian_draw, dtype=float)


def acceptance_log_ratio(cur: ChainState, prop: ChainState, log_q_ratio: float = 0.0) -> float:
    """Log Metropolis-Hastings ratio before the ``min``; never NaN.

    ``log_q_ratio`` is ``log q(theta | theta') - log q(theta' | theta)``
    (zero for the symmetric random walk). A proposal with zero target gives
    ``-inf``; a current state with zero target and a live proposal gives ``+inf``.
    """
    num = prop.log_prior + prop.log_phat
    den = cur.log_prior + cur.log_phat
    if not num > -math.inf or math.isnan(num):
        return -math.inf
    if not den > -math.inf or math.isnan(den):
        return math.inf
    out = num - den + log_q_ratio
    return -math.inf if math.isnan(out) else out


# ---------------------------------------------------------------------------
# CPMMH / PMMH
# ---------------------------------------------------------------------------


def _estimate(model, theta, data, u, filter_config) -> tuple[float, float]:
    log_prior = model.prior.log_density(theta)
    if not log_prior > -math.inf:
        return log_prior, -math.inf
    return log_prior, run_apf(model, model.prior.from_theta(theta), data, u, filter_config).log_phat


def _initial_state(model, data, filter_config, theta0, rng) -> ChainState:
    lay = aux_layout(model, data.n, filter_config.N)
    theta0 = np.asarray(theta0, dtype=float)
    log_prior = model.prior.log_density(theta0)
    if not log_prior > -math.inf:
        raise NumericalAbort("initial parameter lies outside the prior support")
    for attempt in range(MAX_INIT_ATTEMPTS):
        u = AuxiliaryBlock.draw(lay, rng)
        _, log_phat = _estimate(model, theta0, data, u, filter_config)
        if log_phat > -math.inf:
            return ChainState(theta0, u, log_phat, log_prior)
    raise NumericalAbort(f"likelihood estimate was -inf at the initial parameter after {MAX_INIT_ATTEMPTS} attempts")


def cpmmh_run(model: KineticModel, data: Dataset, proposal: ProposalConfig, filter_config: FilterConfig,
              n_iters: int, seed, init_theta, callback=None) -> ChainResult:
    """Correlated pseudo-marginal Metropolis-Hastings.

    Each iteration draws, in order, the random-walk normals for ``theta'``,
    the ``d`` normals ``omega`` of the Crank-Nicolson move
    ``u' = rho u + sqrt(1 - rho^2) omega`` and the acceptance uniform; these
    are consumed even when the prior rejects ``theta'`` without running the
    filter. ``rho = 0`` is standard PMMH.

    Parameters
    ----------
    model : KineticModel
    data : Dataset
    proposal : ProposalConfig
        Random-walk covariance on ``theta`` and CN correlation ``rho``.
    filter_config : FilterConfig
    n_iters : int
    seed : int or SeedSequence
    init_theta : array_like
        Starting point in sampling coordinates.
    callback : callable, optional
        Called as ``callback(i, state, accepted)`` after each iteration.
    """
    rng = np.random.default_rng(seed)
    k = len(model.prior)
    if proposal.dim != k:
        raise ValueError(f"rw_cov is {proposal.dim}x{proposal.dim} but the model has {k} parameters")
    L = np.linalg.cholesky(proposal.rw_cov)
    t0 = time.perf_counter()
    state = _initial_state(model, data, filter_config, init_theta, rng)
    d = state.u.layout.d
    theta_out = np.empty((n_iters, k))
    ll_out = np.empty(n_iters)
    acc_out = np.zeros(n_iters, dtype=bool)
    for i in range(n_iters):
        v = rng.standard_normal(k)
        omega = rng.standard_normal(d)
        log_unif = math.log(rng.random())
        theta_p = state.theta + L @ v
        u_p = crank_nicolson_step(state.u, proposal.rho, omega)
        lp_p, ll_p = _estimate(model, theta_p, data, u_p, filter_config)
        prop = ChainState(theta_p, u_p, ll_p, lp_p)
        accept = log_unif < acceptance_log_ratio(state, prop)
        if accept:
            state = prop
        theta_out[i] = state.theta
        ll_out[i] = state.log_phat
        acc_out[i] = accept
        if callback is not None:
            callback(i, state, accept)
    return ChainResult(model.theta_names, theta_out, ll_out, acc_out,
                       "cpmmh" if proposal.rho > 0 else "pmmh", time.perf_counter() - t0,
                       {"rho": proposal.rho, "N": filter_config.N})


def pmmh_run(model: KineticModel, data: Dataset, rw_cov, filter_config: FilterConfig, n_iters: int, seed,
             init_theta) -> ChainResult:
    """Plain PMMH with a fresh auxiliary draw per proposal.

    Written independently of :func:`cpmmh_run` but consuming the random
    stream in the same order, so the two agree state-for-state at ``rho = 0``.
    """
    rng = np.random.default_rng(seed)
    k = len(model.prior)
    L = np.linalg.cholesky(np.atleast_2d(rw_cov))
    t0 = time.perf_counter()
    state = _initial_state(model, data, filter_config, init_theta, rng)
    lay = state.u.layout
    theta, log_phat, log_prior = state.theta, state.log_phat, state.log_prior
    theta_out = np.empty((n_iters, k))
    ll_out = np.empty(n_iters)
    acc_out = np.zeros(n_iters, dtype=bool)
    for i in range(n_iters):
        theta_p = theta + L @ rng.standard_normal(k)
        u_p = AuxiliaryBlock(rng.standard_normal(lay.d), lay)
        log_unif = math.log(rng.random())
        lp_p = model.prior.log_density(theta_p)
        ll_p = -math.inf
        if lp_p > -math.inf:
            ll_p = run_apf(model, model.prior.from_theta(theta_p), data, u_p, filter_config).log_phat
        if ll_p > -math.inf and log_unif < (lp_p + ll_p) - (log_prior + log_phat):
            theta, log_phat, log_prior = theta_p, ll_p, lp_p
            acc_out[i] = True
        theta_out[i] = theta
        ll_out[i] = log_phat
    return ChainResult(model.theta_names, theta_out, ll_out, acc_out, "pmmh", time.perf_counter() - t0,
                       {"rho": 0.0, "N": filter_config.N})


def pilot_tune(model: KineticModel, data: Dataset, filter_config: FilterConfig, init_theta, seed,
               sampler: str = "cpmmh", rho: float = 0.0, n_iters: int = 5000):
    """Two-stage pilot: a run with ``(0.1^2 / v) I``, then the scaled covariance of its second half.

    Returns ``(ProposalConfig, pilot ChainResult)``.
    """
    k = len(model.prior)
    start = ProposalConfig(np.eye(k) * (0.1 ** 2 / k), rho)
    if sampler == "mis":
        pilot = mis_run(model, data, start, n_iters, seed, init_theta)
    else:
        pilot = cpmmh_run(model, data, start, filter_config, n_iters, seed, init_theta)
    tail = pilot.theta[n_iters // 2:]
    if len(np.unique(tail, axis=0)) < k + 1:
        logger.warning("pilot chain barely moved; keeping the stage-1 proposal")
        return start, pilot
    return ProposalConfig.from_samples(tail, sampler, rho), pilot


# ---------------------------------------------------------------------------
# Modified innovation scheme
# ---------------------------------------------------------------------------


def _root_and_logdet(B):
    """Symmetric square root, its inverse and ``log|B|``; ``ok`` false unless ``B`` is PD."""
    vals, vecs = la.eigh_sym(B)
    top = np.max(np.abs(vals), axis=-1)
    ok = (np.min(vals, axis=-1) > 1e-12 * top) & np.isfinite(top) & (top > 0)
    safe = np.where(ok[..., None], vals, 1.0)
    root = np.sqrt(safe)
    vt = np.swapaxes(vecs, -1, -2)
    L = (vecs * root[..., None, :]) @ vt
    L_inv = (vecs / root[..., None, :]) @ vt
    return L, L_inv, np.sum(np.log(safe), axis=-1), ok


def _bridge_coeffs(m: int, k: int):
    """Drift weight towards the endpoint and variance factor of fixed-endpoint bridge step ``k``."""
    return 1.0 / (m - k), (m - k - 1) / (m - k)


def innovation_map(z, x_start, x_end, c, model, m: int):
    """Build interval paths from innovations, with both endpoints fixed.

    ``x_{k+1} = x_k + (x_T - x_k) / (m - k) + L_k z_k`` for ``k = 0..m-2``
    where ``L_k`` is the symmetric root of ``beta(x_k) dtau (m-k-1)/(m-k)``.

    Parameters
    ----------
    z : ndarray, shape (..., m-1, s)
    x_start, x_end : ndarray, shape (..., s)
    c : array_like
    model : dynamics object with ``moments``
    m : int

    Returns
    -------
    path : ndarray, shape (..., m+1, s)
    ok : ndarray of bool, shape (...)
        False where some ``beta`` along the path is not positive definite.
    """
    z = np.asarray(z, dtype=float)
    x_start = np.asarray(x_start, dtype=float)
    x_end = np.asarray(x_end, dtype=float)
    dtau = 1.0 / m
    batch = np.broadcast_shapes(z.shape[:-2], x_start.shape[:-1], x_end.shape[:-1])
    s = x_start.shape[-1]
    path = np.empty(batch + (m + 1, s))
    path[..., 0, :] = x_start
    path[..., m, :] = x_end
    ok = np.ones(batch, dtype=bool)
    x = np.broadcast_to(x_start, batch + (s,))
    for k in range(m - 1):
        w, f = _bridge_coeffs(m, k)
        _, beta = model.moments(x, c)
        L, _, _, good = _root_and_logdet(beta * (dtau * f))
        ok &= good
        x = x + (x_end - x) * w + (L @ z[..., k, :, None])[..., 0]
        path[..., k + 1, :] = x
    return path, ok


def innovation_map_inverse(path, c, model, m: int):
    """Innovations ``z`` (shape ``(..., m-1, s)``) of interval paths ``(..., m+1, s)``."""
    path = np.asarray(path, dtype=float)
    dtau = 1.0 / m
    x_end = path[..., m, :]
    z = np.empty(path.shape[:-2] + (m - 1, path.shape[-1]))
    ok = np.ones(path.shape[:-2], dtype=bool)
    for k in range(m - 1):
        w, f = _bridge_coeffs(m, k)
        x = path[..., k, :]
        _, beta = model.moments(x, c)
        _, L_inv, _, good = _root_and_logdet(beta * (dtau * f))
        ok &= good
        incr = path[..., k + 1, :] - x - (x_end - x) * w
        z[..., k, :] = (L_inv @ incr[..., None])[..., 0]
    return z, ok


def mis_jacobian_log_det(path, c, model, m: int) -> float:
    """``-1/2 sum log|beta(x_k)|`` over bridge steps ``k = 0..m-2`` of every interval.

    ``path`` holds interval paths ``(..., m+1, s)``; constants free of ``c``
    are dropped. Returns ``-inf`` where some ``beta`` is not positive definite.
    """
    path = np.asarray(path, dtype=float)
    if m < 2:
        return 0.0
    _, beta = model.moments(path[..., : m - 1, :], c)
    _, _, logdet, ok = _root_and_logdet(beta)
    if not np.all(ok):
        return -math.inf
    return float(-0.5 * np.sum(logdet))


def intervals_from_grid(x_grid, m: int):
    """Full-grid path ``((n-1)m+1, s)`` to overlapping interval paths ``(n-1, m+1, s)``."""
    x_grid = np.asarray(x_grid)
    n1 = (x_grid.shape[0] - 1) // m
    idx = np.arange(n1)[:, None] * m + np.arange(m + 1)[None, :]
    return x_grid[idx]


def grid_from_intervals(paths):
    paths = np.asarray(paths)
    n1, mp1, s = paths.shape
    out = np.empty((n1 * (mp1 - 1) + 1, s))
    out[:-1] = paths[:, :-1].reshape(-1, s)
    out[-1] = paths[-1, -1]
    return out


def _euler_interval_logdens(paths, c, model, m: int):
    """Euler log-density of interval paths ``(..., m+1, s)`` summed over the ``m`` steps."""
    dtau = 1.0 / m
    x = paths[..., :-1, :]
    alpha, beta = model.moments(x, c)
    lp = la.gaussian_logpdf(paths[..., 1:, :], x + alpha * dtau, beta * dtau)
    lp = np.where(np.isnan(lp), -np.inf, lp)
    return lp.sum(axis=-1)


def _bridge_logdens(paths, c, model, m: int):
    """Log-density of interval paths under the fixed-endpoint bridge proposal."""
    z, ok = innovation_map_inverse(paths, c, model, m)
    dtau = 1.0 / m
    out = -0.5 * np.sum(z * z, axis=(-2, -1)) - 0.5 * z.shape[-2] * z.shape[-1] * la.LOG_2PI
    for k in range(m - 1):
        _, f = _bridge_coeffs(m, k)
        _, beta = model.moments(paths[..., k, :], c)
        _, _, logdet, good = _root_and_logdet(beta * (dtau * f))
        out = out - 0.5 * logdet
        ok &= good
    return np.where(ok, out, -np.inf)


def _guided_interval(x0, y, c, model, obs, z, m: int):
    """Forward guided path towards a noisy observation; returns the path and its proposal log-density."""
    dtau = 1.0 / m
    s = x0.shape[-1]
    path = np.empty(x0.shape[:-1] + (m + 1, s))
    path[..., 0, :] = x0
    x = x0
    log_g = np.zeros(x0.shape[:-1])
    ok = np.ones(x0.shape[:-1], dtype=bool)
    for k in range(m):
        step = mdb_step(x, y, (m - k) / m, dtau, model.dynamics, obs, c, z[..., k, :])
        ok &= step.alive
        log_g = log_g + step.log_g
        x = step.x
        path[..., k + 1, :] = x
    return path, np.where(ok, log_g, -np.inf)


def _guided_logdens(paths, y, c, model, obs, m: int):
    """Proposal log-density of existing interval paths under the guided bridge."""
    dtau = 1.0 / m
    out = np.zeros(paths.shape[:-2])
    for k in range(m):
        x = paths[..., k, :]
        alpha, beta = model.dynamics.moments(x, c)
        mu, Psi, ok = bridge_moments(x, y, (m - k) / m, dtau, alpha, beta, obs)
        lg = la.gaussian_logpdf(paths[..., k + 1, :], x + mu * dtau, Psi * dtau)
        out = out + np.where(ok, lg, -np.inf)
    return np.where(np.isnan(out), -np.inf, out)


class _MISPath:
    """Latent path on the full grid as interval paths ``(n-1, m+1, s)`` plus block updates."""

    def __init__(self, model: KineticModel, data: Dataset, c, rng):
        obs = model.observation
        if obs.error_free and not obs.fully_observed:
            raise ValueError("MIS does not support partially observed error-free data")
        if model.approximation != "cle":
            raise ValueError("MIS needs the CLE approximation")
        if model.initial.kind not in ("known", "gaussian"):
            raise ValueError("MIS supports known or Gaussian initial states")
        self.model, self.data, self.obs = model, data, obs
        self.m = model.m
        self.n = data.n
        self.s = model.state_dim
        self.paths = self._initial_path(c, rng)

    # -- initialisation -------------------------------------------------
    def _x1_posterior(self):
        ic, obs = self.model.initial, self.obs
        mean = np.asarray(ic.mean, dtype=float) * np.ones(self.s)
        var = (np.asarray(ic.sd, dtype=float) * np.ones(self.s)) ** 2
        prior_cov = np.diag(var)
        S = obs.P.T @ prior_cov @ obs.P + obs.Sigma
        K = prior_cov @ obs.P @ np.linalg.inv(S)
        post_mean = mean + K @ (self.data.y[0] - obs.P.T @ mean)
        post_cov = prior_cov - K @ obs.P.T @ prior_cov
        return post_mean, 0.5 * (post_cov + post_cov.T), mean, prior_cov

    def _initial_path(self, c, rng):
        m, n, s, obs = self.m, self.n, self.s, self.obs
        y = self.data.y
        if self.model.initial.kind == "known":
            x1 = np.asarray(self.model.initial.x, dtype=float)
        else:
            x1 = self._x1_posterior()[0]
        paths = np.empty((n - 1, m + 1, s))
        if obs.error_free:
            ends = np.zeros((n, s))
            ends[:, obs.obs_index] = y
            ends[0] = x1
            path, ok = innovation_map(np.zeros((n - 1, m - 1, s)), ends[:-1], ends[1:], c, self.model.dynamics,
                                      m)
            if not np.all(ok):
                raise NumericalAbort("could not initialise the latent path: singular diffusion")
            return path
        x = x1
        for t in range(n - 1):
            for attempt in range(MAX_INIT_ATTEMPTS):
                path, log_g = _guided_interval(x, y[t + 1], c, self.model, obs,
                                               rng.standard_normal((m, s)), m)
                if np.isfinite(log_g) and np.isfinite(_euler_interval_logdens(path, c, self.model.dynamics, m)):
                    break
            else:
                raise NumericalAbort(f"could not initialise the latent path on interval {t + 1}")
            paths[t] = path
            x = path[-1]
        return paths

    # -- block updates ---------------------------------------------------
    def update(self, c, rng) -> float:
        """One sweep of path blocks; returns the fraction of accepted block moves."""
        dyn = self.model.dynamics
        m, n = self.m, self.n
        acc, total = 0, 0
        if self.obs.error_free:
            if m < 2:
                return float("nan")
            P = self.paths
            z = rng.standard_normal((n - 1, m - 1, self.s))
            log_unif = np.log(rng.random(n - 1))
            prop, ok = innovation_map(z, P[:, 0], P[:, m], c, dyn, m)
            ratio = (_euler_interval_logdens(prop, c, dyn, m) - _bridge_logdens(prop, c, dyn, m)
                     - _euler_interval_logdens(P, c, dyn, m) + _bridge_logdens(P, c, dyn, m))
            accept = ok & (log_unif < np.where(np.isnan(ratio), -np.inf, ratio))
            self.paths = np.where(accept[:, None, None], prop, P)
            return float(np.mean(accept))
        if self.model.initial.kind == "gaussian":
            a, t = self._first_block(c, rng)
            acc, total = acc + a, total + t
        centres = np.arange(1, n - 1)  # 0-based observation index of each two-interval block centre
        for parity in (0, 1):
            sel = centres[centres % 2 == parity]
            if len(sel):
                a, t = self._centre_blocks(sel, c, rng)
                acc, total = acc + a, total + t
        a, t = self._last_block(c, rng)
        return (acc + a) / (total + t)

    def _first_block(self, c, rng):
        dyn, m, s = self.model.dynamics, self.m, self.s
        post_mean, post_cov, prior_mean, prior_cov = self._x1_posterior()
        z1 = rng.standard_normal(s)
        z = rng.standard_normal((m - 1, s)) if m > 1 else np.zeros((0, s))
        log_unif = math.log(rng.random())
        cur = self.paths[0]
        x1, q_new = la.gaussian_draw(post_mean, post_cov, z1)
        prop, ok = innovation_map(z, x1, cur[m], c, dyn, m)
        q_cur = la.gaussian_logpdf(cur[0], post_mean, post_cov)

        def target(path):
            return (la.gaussian_logpdf(path[0], prior_mean, prior_cov)
                    + self.obs.logdensity(self.data.y[0], path[0])
                    + _euler_interval_logdens(path, c, dyn, m))

        ratio = (target(prop) - q_new - _bridge_logdens(prop, c, dyn, m)
                 - target(cur) + q_cur + _bridge_logdens(cur, c, dyn, m))
        if ok and not np.isnan(ratio) and log_unif < ratio:
            self.paths[0] = prop
            return 1, 1
        return 0, 1

    def _centre_blocks(self, sel, c, rng):
        """Blocks spanning intervals ``j-1`` and ``j`` around observation ``j`` (0-based), all at once."""
        dyn, m, s, obs = self.model.dynamics, self.m, self.s, self.obs
        y = self.data.y
        B = len(sel)
        za = rng.standard_normal((B, m, s))
        zb = rng.standard_normal((B, m - 1, s))
        log_unif = np.log(rng.random(B))
        left, right = self.paths[sel - 1], self.paths[sel]
        yj = y[sel]
        pa, ga = _guided_interval(left[:, 0], yj, c, self.model, obs, za, m)
        pb, okb = innovation_map(zb, pa[:, m], right[:, m], c, dyn, m)

        def target(a, b):
            return (_euler_interval_logdens(a, c, dyn, m) + _euler_interval_logdens(b, c, dyn, m)
                    + obs.logdensity(yj, a[:, m]))

        new = target(pa, pb) - ga - _bridge_logdens(pb, c, dyn, m)
        old = (target(left, right) - _guided_logdens(left, yj, c, self.model, obs, m)
               - _bridge_logdens(right, c, dyn, m))
        ratio = np.where(np.isfinite(new), new - old, -np.inf)
        ratio = np.where(np.isnan(ratio), -np.inf, ratio)
        accept = okb & np.isfinite(ga) & (log_unif < ratio)
        self.paths[sel - 1] = np.where(accept[:, None, None], pa, left)
        self.paths[sel] = np.where(accept[:, None, None], pb, right)
        return int(accept.sum()), B

    def _last_block(self, c, rng):
        dyn, m, s, obs = self.model.dynamics, self.m, self.s, self.obs
        y = self.data.y[-1]
        z = rng.standard_normal((m, s))
        log_unif = math.log(rng.random())
        cur = self.paths[-1]
        prop, g_new = _guided_interval(cur[0], y, c, self.model, obs, z, m)

        def target(path):
            return _euler_interval_logdens(path, c, dyn, m) + obs.logdensity(y, path[m])

        new = target(prop) - g_new
        old = target(cur) - _guided_logdens(cur, y, c, self.model, obs, m)
        ratio = new - old if np.isfinite(new) else -np.inf
        if not np.isnan(ratio) and log_unif < ratio:
            self.paths[-1] = prop
            return 1, 1
        return 0, 1


def _mis_param_target(model, theta, z, ends, m):
    """Log density of ``theta`` given innovations ``z`` and fixed observation-time states."""
    log_prior = model.prior.log_density(theta)
    if not log_prior > -math.inf:
        return -math.inf, None
    c = model.prior.from_theta(theta)
    dyn = model.dynamics
    if m > 1:
        paths, ok = innovation_map(z, ends[:-1], ends[1:], c, dyn, m)
        if not np.all(ok):
            return -math.inf, None
    else:
        paths = np.stack([ends[:-1], ends[1:]], axis=1)
    euler = float(np.sum(_euler_interval_logdens(paths, c, dyn, m)))
    jac = mis_jacobian_log_det(paths, c, dyn, m)
    if not (np.isfinite(euler) and np.isfinite(jac)):
        return -math.inf, None
    # |df/dz| grows like |beta|^{1/2}, i.e. minus the log-determinant returned above
    return log_prior + euler - jac, paths


def mis_run(model: KineticModel, data: Dataset, proposal: ProposalConfig, n_iters: int, seed,
            init_theta, callback=None) -> ChainResult:
    """Modified innovation scheme: Gibbs over latent path blocks and ``theta | z``.

    Each iteration updates the path with ``theta`` fixed, then proposes a
    random-walk move of ``theta`` holding the innovations ``z`` and the
    observation-time states fixed, so the interior path is rebuilt under
    the proposed parameters.

    The ``log_phat`` column of the result holds the log complete-data target
    ``log pi0(theta) + log p(x | c) - mis_jacobian_log_det``.
    """
    rng = np.random.default_rng(seed)
    k = len(model.prior)
    L = np.linalg.cholesky(proposal.rw_cov)
    m = model.m
    t0 = time.perf_counter()
    theta = np.asarray(init_theta, dtype=float)
    if not model.prior.log_density(theta) > -math.inf:
        raise NumericalAbort("initial parameter lies outside the prior support")
    state = _MISPath(model, data, model.prior.from_theta(theta), rng)
    theta_out = np.empty((n_iters, k))
    lt_out = np.empty(n_iters)
    acc_out = np.zeros(n_iters, dtype=bool)
    path_acc = np.empty(n_iters)
    for i in range(n_iters):
        c = model.prior.from_theta(theta)
        path_acc[i] = state.update(c, rng)
        ends = np.concatenate([state.paths[:, 0], state.paths[-1:, m]], axis=0)
        if m > 1:
            z, ok = innovation_map_inverse(state.paths, c, model.dynamics, m)
            if not np.all(ok):
                raise NumericalAbort("singular diffusion along the current latent path")
        else:
            z = np.zeros((data.n - 1, 0, model.state_dim))
        cur_target, _ = _mis_param_target(model, theta, z, ends, m)
        theta_p = theta + L @ rng.standard_normal(k)
        log_unif = math.log(rng.random())
        new_target, new_paths = _mis_param_target(model, theta_p, z, ends, m)
        ratio = acceptance_log_ratio(ChainState(theta, None, cur_target, 0.0),
                                     ChainState(theta_p, None, new_target, 0.0))
        if log_unif < ratio:
            theta, cur_target = theta_p, new_target
            state.paths = new_paths
            acc_out[i] = True
        theta_out[i] = theta
        lt_out[i] = cur_target
        if callback is not None:
            callback(i, theta, acc_out[i])
    return ChainResult(model.theta_names, theta_out, lt_out, acc_out, "mis", time.perf_counter() - t0,
                       {"path_acceptance": float(np.nanmean(path_acc)) if n_iters else float("nan")})
