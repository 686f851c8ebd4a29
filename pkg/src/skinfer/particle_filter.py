"""Auxiliary particle filter returning an unbiased estimate of ``p(y | c)``.

The estimate is a deterministic function of ``(c, u)``: every random input
is read from the :class:`~skinfer.auxvar.AuxiliaryBlock` at a fixed
position, and dead particles still occupy (and ignore) their slots.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .auxvar import AuxiliaryBlock, AuxLayout, gauss_to_uniform
from .bridges import conditioned_hazard_step, mdb_step
from .forward_sim import Dataset
from .model_core import KineticModel

PROPOSALS = ("bridge", "bootstrap")


@dataclass(frozen=True)
class FilterConfig:
    N: int
    proposal: str = "bridge"
    sort: bool = True
    resample: bool = True
    psi_variant: str = "standard"
    vectorize_intervals: bool = True
    record: bool = False

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.proposal not in PROPOSALS:
            raise ValueError(f"proposal must be one of {PROPOSALS}")


@dataclass
class ParticleCloud:
    states: np.ndarray
    log_weights_unnorm: np.ndarray
    weights_norm: np.ndarray
    ancestors: np.ndarray


@dataclass
class LikelihoodEstimate:
    log_phat: float
    increments: np.ndarray
    alive: bool
    history: list = field(default_factory=list)

    def genealogy_lines(self):
        """JSON lines ``{t, particle, ancestor, log_weight}`` for every recorded cloud."""
        for t, cloud in enumerate(self.history, start=1):
            for i in range(len(cloud.log_weights_unnorm)):
                lw = float(cloud.log_weights_unnorm[i])
                yield json.dumps({"t": t, "particle": i, "ancestor": int(cloud.ancestors[i]),
                                  "log_weight": lw if math.isfinite(lw) else None})


def aux_layout(model: KineticModel, n: int, N: int) -> AuxLayout:
    return AuxLayout(n, model.m, N, model.step_dim, model.init_dim)


# ---------------------------------------------------------------------------
# Resampling and sorting
# ---------------------------------------------------------------------------


def systematic_resample(weights_norm, base_uniform) -> np.ndarray:
    """Ancestor ``i`` is the smallest ``k`` with ``W_k >= (i + base_uniform) / N`` (0-based).

    Accepts a single weight vector with a scalar uniform, or a batch
    ``(R, N)`` with one uniform per row.
    """
    w = np.asarray(weights_norm, dtype=float)
    single = w.ndim == 1
    w = np.atleast_2d(w)
    ub = np.atleast_1d(np.asarray(base_uniform, dtype=float))
    total = w.sum(axis=1, keepdims=True)
    if not np.all(total > 0):
        raise ValueError("cannot resample all-zero weights")
    R, N = w.shape
    cum = np.cumsum(w, axis=1) / total
    points = (np.arange(N) + ub[:, None]) / N
    if N <= 256:
        anc = np.sum(cum[:, None, :] < points[:, :, None], axis=-1)
    else:
        anc = np.stack([np.searchsorted(cum[r], points[r], side="left") for r in range(R)])
    anc = np.minimum(anc, N - 1)
    return anc[0] if single else anc


def euclidean_sort(terminal_states) -> np.ndarray:
    """Greedy nearest-neighbour ordering starting from the smallest first component.

    Ties go to the lower original index. ``terminal_states`` is ``(N, s)``
    or a batch ``(R, N, s)``; the result has shape ``(N,)`` or ``(R, N)``.
    """
    X = np.asarray(terminal_states, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    single = X.ndim == 2
    if single:
        X = X[None]
    R, N = X.shape[:2]
    X = X.reshape(R, N, -1)
    if N <= 1:
        order = np.zeros((R, N), dtype=np.int64)
        return order[0] if single else order
    diff = X[:, :, None, :] - X[:, None, :, :]
    D = np.sum(diff * diff, axis=-1)
    rows = np.arange(R)
    order = np.empty((R, N), dtype=np.int64)
    visited = np.zeros((R, N), dtype=bool)
    cur = np.argmin(X[:, :, 0], axis=1)
    order[:, 0] = cur
    visited[rows, cur] = True
    for j in range(1, N):
        cand = np.where(visited, np.inf, D[rows, cur])
        cur = np.argmin(cand, axis=1)
        order[:, j] = cur
        visited[rows, cur] = True
    return order[0] if single else order


def _normalise(log_w):
    """Row-wise normalised weights; rows with no live particle come back uniform."""
    top = np.max(log_w, axis=-1, keepdims=True)
    ok = np.isfinite(top)
    w = np.exp(log_w - np.where(ok, top, 0.0))
    w = np.where(ok, w, 1.0)
    return w / w.sum(axis=-1, keepdims=True)


def _logmeanexp(log_w, log_prev):
    live = np.any(np.isfinite(log_w), axis=-1)
    out = np.full(log_w.shape[:-1], -np.inf)
    if np.any(live):
        out[live] = logsumexp(log_prev[live] + log_w[live], axis=-1)
    return out


# ---------------------------------------------------------------------------
# Filter
# ---------------------------------------------------------------------------


def _propagate(model: KineticModel, c, x, y, z_block, config: FilterConfig):
    """Run all ``m`` sub-steps from ``x`` towards ``y``; returns ``(x_t, log p - log g)``."""
    m = model.m
    dtau = 1.0 / m
    dyn, obs = model.dynamics, model.observation
    bootstrap = config.proposal == "bootstrap"
    log_ratio = np.zeros(x.shape[:-1])
    alive = np.ones(x.shape[:-1], dtype=bool)
    for k in range(m):
        Delta_k = (m - k) / m
        z = z_block[..., k, :]
        if model.approximation == "cle":
            step = mdb_step(x, y, Delta_k, dtau, dyn, obs, c, z, bootstrap=bootstrap,
                            psi_variant=config.psi_variant)
        else:
            step = conditioned_hazard_step(x, y, Delta_k, dtau, dyn, obs, c, gauss_to_uniform(z),
                                           bootstrap=bootstrap)
        alive &= step.alive
        # dead particles keep consuming their inputs from their last valid state
        x = np.where(alive[..., None], step.x, x)
        log_ratio = log_ratio + step.log_p - step.log_g
    return x, np.where(alive, log_ratio, -np.inf)


def _obs_atol(model: KineticModel) -> float:
    return 1e-9 if model.approximation == "cle" else 0.0


def _split(model: KineticModel, U, lay: AuxLayout):
    R = U.shape[0]
    init = U[:, : lay.init_size].reshape(R, lay.N, lay.init_dim)
    blocks = U[:, lay.init_size:].reshape(R, lay.n - 1, lay.block_size)
    prop = blocks[:, :, 1:].reshape(R, lay.n - 1, lay.N, lay.m, lay.q)
    return init, blocks[:, :, 0], prop


def _initial_states(model: KineticModel, init, R, N):
    s = model.state_dim
    z = init.reshape(R * N, init.shape[-1])
    return model.initial.sample(z, s).reshape(R, N, s)


def run_apf(model: KineticModel, c, data: Dataset, u: AuxiliaryBlock, config: FilterConfig) -> LikelihoodEstimate:
    """Estimate ``log p(y | c)`` with the auxiliary particle filter.

    Parameters
    ----------
    model : KineticModel
        Dynamics, approximation, observation model and initial condition.
    c : array_like
        Natural-scale parameter vector.
    data : Dataset
        Observations ``y_1..y_n`` on a unit-spaced grid.
    u : AuxiliaryBlock
        Auxiliary inputs; its layout must equal ``aux_layout(model, n, N)``.
    config : FilterConfig

    Returns
    -------
    LikelihoodEstimate
        ``log_phat`` is ``-inf`` (and ``alive`` false) if every particle dies
        at some observation time.
    """
    expected = aux_layout(model, data.n, config.N)
    if u.layout != expected:
        raise ValueError(f"auxiliary layout {u.layout} does not match {expected}")
    inc, history = _filter(model, c, data, u.u[None, :], config)
    inc = inc[0]
    alive = bool(np.all(np.isfinite(inc)))
    return LikelihoodEstimate(float(inc.sum()) if alive else -math.inf, inc, alive, history)


def run_apf_batch(model: KineticModel, c, data: Dataset, U, config: FilterConfig) -> np.ndarray:
    """``log p-hat`` for each row of ``U`` (shape ``(R, d)``), filtered side by side.

    Row ``r`` gives the same value as ``run_apf`` on ``U[r]``.
    """
    U = np.atleast_2d(np.asarray(U, dtype=float))
    lay = aux_layout(model, data.n, config.N)
    if U.shape[1] != lay.d:
        raise ValueError(f"auxiliary rows have length {U.shape[1]}, layout expects {lay.d}")
    inc, _ = _filter(model, c, data, U, config)
    alive = np.all(np.isfinite(inc), axis=1)
    return np.where(alive, np.sum(np.where(alive[:, None], inc, 0.0), axis=1), -np.inf)


def _filter(model: KineticModel, c, data: Dataset, U, config: FilterConfig):
    """Batched filter core. Returns per-step increments ``(R, n)`` and the recorded history."""
    n, N, R = data.n, config.N, U.shape[0]
    lay = aux_layout(model, n, N)
    c = np.asarray(c, dtype=float)
    obs = model.observation
    atol = _obs_atol(model)
    y = data.y
    init, ubar, prop = _split(model, U, lay)

    x = _initial_states(model, init, R, N)
    log_w = obs.logdensity(y[0], x, atol=atol)
    log_prev = np.full((R, N), -math.log(N))
    increments = np.full((R, n), -np.inf)
    increments[:, 0] = _logmeanexp(log_w, log_prev)
    history = []
    if config.record:
        history.append(ParticleCloud(x[0].copy(), log_w[0].copy(), _normalise(log_w[0]), np.arange(N)))
    if n == 1:
        return increments, history

    if (config.vectorize_intervals and not config.record and obs.error_free and obs.fully_observed
            and model.initial.kind == "known"):
        increments[:, 1:] = _decoupled_increments(model, c, data, x[:, 0], prop, config)
        return increments, history

    ubar = gauss_to_uniform(ubar)
    alive = np.isfinite(increments[:, 0])
    rows = np.arange(R)[:, None]
    for t in range(1, n):
        if not np.any(alive):
            break
        w = _normalise(log_w)
        perm = np.broadcast_to(np.arange(N), (R, N))
        if config.sort:
            perm = euclidean_sort(x)
            x, w = x[rows, perm], w[rows, perm]
        if config.resample:
            anc = systematic_resample(w, ubar[:, t - 1])
            carried = np.zeros((R, N))
        else:
            anc = np.broadcast_to(np.arange(N), (R, N))
            with np.errstate(divide="ignore"):
                carried = np.log(w) + math.log(N)
        x_new, log_ratio = _propagate(model, c, x[rows, anc], y[t], prop[:, t - 1], config)
        log_w = obs.logdensity(y[t], x_new, atol=atol) + log_ratio + carried
        log_w = np.where(np.isnan(log_w), -np.inf, log_w)
        log_w = np.where(alive[:, None], log_w, -np.inf)
        increments[:, t] = _logmeanexp(log_w, log_prev)
        alive &= np.isfinite(increments[:, t])
        x = x_new
        if config.record:
            history.append(ParticleCloud(x[0].copy(), log_w[0].copy(), _normalise(log_w[0]), perm[0][anc[0]]))
    return increments, history


def _decoupled_increments(model: KineticModel, c, data: Dataset, x1, prop, config: FilterConfig):
    """Full error-free observation: every interval starts from a pinned state.

    All particles at ``t - 1`` share one state, so sorting and resampling
    leave the estimate unchanged and the ``n - 1`` intervals can be
    propagated as one batch. Each particle reads the same inputs as in the
    sequential filter.
    """
    obs = model.observation
    n, s = data.n, model.state_dim
    R, N = prop.shape[0], prop.shape[2]
    y = data.y
    starts = np.empty((R, n - 1, s))
    starts[:, 0] = x1
    if n > 2:
        pinned = np.zeros((n - 2, s))
        pinned[:, obs.obs_index] = y[1:-1]
        starts[:, 1:] = pinned
    x0 = np.broadcast_to(starts[:, :, None, :], (R, n - 1, N, s))
    step_config = FilterConfig(N, proposal=config.proposal, psi_variant=config.psi_variant)
    x_new, log_ratio = _propagate(model, c, x0, y[1:, None, :], prop, step_config)
    log_w = obs.logdensity(y[1:, None, :], x_new, atol=_obs_atol(model)) + log_ratio
    log_w = np.where(np.isnan(log_w), -np.inf, log_w)
    return _logmeanexp(log_w, np.full(log_w.shape, -math.log(N)))
