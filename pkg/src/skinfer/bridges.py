"""Observation-guided propagation over one sub-interval.

Each step maps the current state and a slice of auxiliary inputs to the next
state, and reports the log-density of the draw under the proposal
(``log_g``) and under the untargeted Euler / Poisson-leap transition
(``log_p``). The filter's incremental weight is ``log_p - log_g``. All
functions broadcast over leading batch dimensions of ``x``.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.special import gammaln, xlogy

from . import _linalg as la
from .auxvar import poisson_quantile
from .model_core import ObservationModel, ReactionNetwork

PSI_VARIANTS = ("standard", "alternate")


class StepResult(NamedTuple):
    x: np.ndarray
    log_g: np.ndarray
    log_p: np.ndarray
    alive: np.ndarray
    counts: np.ndarray | None = None


def _t(a):
    return np.swapaxes(a, -1, -2)


def _guidance(x, y, Delta_k, alpha, beta, obs: ObservationModel):
    """Shared pieces of the bridge: ``beta P``, ``A^-1`` and ``A^-1 (y - P^T(x + alpha Delta_k))``."""
    P = obs.P
    bP = beta @ P
    A = _t(P) @ bP * Delta_k + obs.Sigma
    A_inv, ok = la.sym_inv(A)
    resid = np.asarray(y, dtype=float) - (x + alpha * Delta_k) @ P
    gain = (A_inv @ resid[..., None])[..., 0]
    return bP, A_inv, gain, ok


def bridge_moments(x, y, Delta_k, delta_tau, alpha, beta, obs: ObservationModel, psi_variant: str = "standard"):
    """Guided drift ``mu`` and covariance ``Psi`` of the modified diffusion bridge.

    ``mu = alpha + beta P A^-1 (y - P^T (x + alpha Delta_k))`` and
    ``Psi = beta - beta P A^-1 P^T beta dtau`` with ``A = P^T beta P Delta_k + Sigma``;
    the per-step covariance is ``Psi dtau``. ``psi_variant="alternate"``
    drops the ``dtau`` on the correction term (debug comparison only).
    """
    if psi_variant not in PSI_VARIANTS:
        raise ValueError(f"psi_variant must be one of {PSI_VARIANTS}")
    bP, A_inv, gain, ok = _guidance(x, y, Delta_k, alpha, beta, obs)
    mu = alpha + (bP @ gain[..., None])[..., 0]
    corr = bP @ A_inv @ _t(bP)
    Psi = beta - corr * (delta_tau if psi_variant == "standard" else 1.0)
    Psi = 0.5 * (Psi + _t(Psi))
    return mu, Psi, ok


def euler_logdensity(x_new, x, alpha, beta, delta_tau):
    return la.gaussian_logpdf(x_new, x + alpha * delta_tau, beta * delta_tau)


def mdb_step(x, y, Delta_k, delta_tau, model, obs: ObservationModel, c, z, bootstrap: bool = False,
             psi_variant: str = "standard") -> StepResult:
    """One modified-diffusion-bridge step of the CLE towards observation ``y``.

    With ``bootstrap=True`` the guidance is switched off (the no-information
    limit): ``mu = alpha``, ``Psi = beta`` and ``log_g == log_p``. Under
    error-free observation the step that lands on the observation time
    (``Delta_k == delta_tau``) is delegated to :func:`errorfree_terminal_step`.
    Particles whose guidance system is singular come back with ``alive=False``.
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if obs.error_free and abs(Delta_k - delta_tau) < 1e-12:
        return errorfree_terminal_step(x, y, delta_tau, model, obs, c, z)
    alpha, beta = model.moments(x, c)
    if bootstrap:
        x_new, log_p = la.gaussian_draw(x + alpha * delta_tau, beta * delta_tau, z)
        return StepResult(x_new, log_p, log_p, np.isfinite(log_p))
    mu, Psi, ok = bridge_moments(x, y, Delta_k, delta_tau, alpha, beta, obs, psi_variant)
    x_new, log_g = la.gaussian_draw(x + mu * delta_tau, Psi * delta_tau, z)
    log_p = euler_logdensity(x_new, x, alpha, beta, delta_tau)
    alive = ok & np.isfinite(log_p) & np.isfinite(log_g)
    return StepResult(x_new, np.where(alive, log_g, 0.0), np.where(alive, log_p, -np.inf), alive)


def errorfree_terminal_step(x, y, delta_tau, model, obs: ObservationModel, c, z) -> StepResult:
    """Final sub-step under ``Sigma = 0``: pin observed components to ``y``.

    Unobserved components are drawn from the Euler step's conditional
    Gaussian given the pinned ones, which is also what the bridge proposes,
    so only the marginal density of the observed increment survives in the
    weight: ``log_p = log N(y; P^T(x + alpha dtau), P^T beta P dtau)``,
    ``log_g = 0``.
    """
    if not obs.error_free:
        raise ValueError("terminal pinning needs an error-free observation model")
    x = np.asarray(x, dtype=float)
    o = obs.obs_index
    u_idx = np.setdiff1d(np.arange(obs.s), o)
    alpha, beta = model.moments(x, c)
    a = x + alpha * delta_tau
    B = beta * delta_tau
    y = np.asarray(y, dtype=float)
    resid = y - a[..., o]
    B_oo = B[..., o[:, None], o]
    log_p = la.gaussian_logpdf(resid, 0.0, B_oo)
    x_new = np.array(np.broadcast_to(a, np.broadcast_shapes(a.shape, x.shape)))
    x_new[..., o] = y
    alive = np.isfinite(log_p)
    if len(u_idx):
        B_oo_inv, ok = la.sym_inv(B_oo)
        B_uo = B[..., u_idx[:, None], o]
        K = B_uo @ B_oo_inv
        cond_mean = a[..., u_idx] + (K @ resid[..., None])[..., 0]
        cond_cov = B[..., u_idx[:, None], u_idx] - K @ _t(B_uo)
        cond_cov = 0.5 * (cond_cov + _t(cond_cov))
        zu = np.asarray(z, dtype=float)[..., u_idx]
        x_u, _ = la.gaussian_draw(cond_mean, cond_cov, zu)
        x_new[..., u_idx] = x_u
        alive = alive & ok
    zero = np.zeros(alive.shape)
    return StepResult(x_new, zero, np.where(alive, log_p, -np.inf), alive)


def conditioned_hazard(x, y, Delta_k, net: ReactionNetwork, obs: ObservationModel, c, no_information: bool = False):
    """Observation-conditioned reaction hazard for the Poisson leap.

    ``h* = h + diag(h) S^T P A^-1 (y - P^T(x + alpha Delta_k))``, clamped at
    zero. Returns ``(h_star, h, ok)``; with ``no_information`` ``h_star == h``.
    """
    x = np.asarray(x, dtype=float)
    h = net.hazard(x, c)
    if no_information:
        return h.copy(), h, np.ones(h.shape[:-1], dtype=bool)
    S = net.stoich_f
    alpha = h @ S.T
    beta = (S * h[..., None, :]) @ S.T
    _, _, gain, ok = _guidance(x, y, Delta_k, alpha, beta, obs)
    # diag(h) S^T P gain  ==  h * (S^T P gain)
    h_star = h + h * ((gain @ obs.P.T) @ S)
    return np.maximum(h_star, 0.0), h, ok


def poisson_logpmf(r, lam):
    r = np.asarray(r, dtype=float)
    return xlogy(r, lam) - lam - gammaln(r + 1.0)


def conditioned_hazard_step(x, y, Delta_k, delta_tau, net: ReactionNetwork, obs: ObservationModel, c, uniforms,
                            bootstrap: bool = False) -> StepResult:
    """Poisson-leap sub-step with counts ``r_j = F^{-1}(U_j; h*_j dtau)``.

    ``log_g = sum_j log Po(r_j; h*_j dtau)``, ``log_p = sum_j log Po(r_j; h_j dtau)``.
    A step that leaves the non-negative orthant marks the particle dead.
    """
    h_star, h, ok = conditioned_hazard(x, y, Delta_k, net, obs, c, no_information=bootstrap)
    r = poisson_quantile(h_star * delta_tau, uniforms)
    x_new = np.asarray(x, dtype=float) + r @ net.stoich.T
    log_p = poisson_logpmf(r, h * delta_tau).sum(axis=-1)
    log_g = log_p if bootstrap else poisson_logpmf(r, h_star * delta_tau).sum(axis=-1)
    alive = ok & np.all(x_new >= 0, axis=-1) & np.isfinite(log_p)
    return StepResult(x_new, np.where(alive, log_g, 0.0), np.where(alive, log_p, -np.inf), alive, r)
