"""Forward simulators: Gillespie's direct method, Poisson leap and Euler-Maruyama CLE.

The two discretised simulators take their randomness as explicit input
arrays (uniforms for the Poisson leap, standard normals for the CLE), so a
path is a pure function of ``(model, c, x0, m, inputs)``. Both accept
arbitrary leading batch dimensions on ``x0`` and the inputs.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._linalg import eigh_sym
from .auxvar import poisson_quantile
from .model_core import ObservationModel, ReactionNetwork

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DiscretisationGrid:
    m: int
    t0: float = 0.0

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")

    @property
    def delta_tau(self) -> float:
        return 1.0 / self.m

    def times(self, n_intervals: int) -> np.ndarray:
        """Grid times over ``n_intervals`` unit intervals, by index arithmetic."""
        j = np.arange(n_intervals * self.m + 1)
        whole, k = np.divmod(j, self.m)
        return self.t0 + whole + k / self.m


@dataclass
class LatentPath:
    times: np.ndarray
    states: np.ndarray
    counts: np.ndarray | None = None
    valid: np.ndarray | None = None

    def at(self, t) -> np.ndarray:
        """States at the given times (which must lie on the grid)."""
        idx = np.searchsorted(self.times, np.asarray(t, dtype=float) - 1e-9)
        if np.any(idx >= len(self.times)) or not np.allclose(self.times[idx], t, atol=1e-9):
            raise ValueError("requested times are not on the path grid")
        return self.states[..., idx, :]


@dataclass
class Dataset:
    times: np.ndarray
    y: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.y = np.atleast_2d(np.asarray(self.y, dtype=float))
        if self.y.shape[0] != len(self.times) and self.y.shape[1] == len(self.times):
            self.y = self.y.T
        if self.y.shape[0] != len(self.times):
            raise ValueError("one observation row per time is required")
        if len(self.times) > 1 and not np.allclose(np.diff(self.times), 1.0, atol=1e-9):
            raise ValueError("observation times must be unit spaced")

    @property
    def n(self) -> int:
        return len(self.times)

    @property
    def p(self) -> int:
        return self.y.shape[1]

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time"] + [f"y{j + 1}" for j in range(self.p)])
            for t, row in zip(self.times, self.y):
                w.writerow([_fmt(t)] + [_fmt(v) for v in row])

    def write_sidecar(self, path) -> None:
        Path(path).write_text(json.dumps(self.metadata, indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        path = Path(path)
        with path.open() as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], [r for r in rows[1:] if r]
        if not header or header[0] != "time":
            raise ValueError(f"{path}: expected header 'time,y1,...'")
        arr = np.array([[float(v) for v in r] for r in body])
        meta = {}
        side = path.with_suffix(".json")
        if side.exists():
            meta = json.loads(side.read_text())
        return cls(arr[:, 0], arr[:, 1:], meta)


def _fmt(v: float) -> str:
    return "%.17g" % v


# ---------------------------------------------------------------------------
# Exact simulation
# ---------------------------------------------------------------------------


def gillespie_ensemble(net: ReactionNetwork, c, x0, record_times, n_paths: int,
                       rng: np.random.Generator, max_events: int = 10_000_000) -> np.ndarray:
    """Run ``n_paths`` independent direct-method simulations side by side.

    Returns integer states at ``record_times``, shape ``(n_paths, T, s)``.
    A path whose total hazard reaches 0 is absorbed and keeps its state.
    """
    record_times = np.asarray(record_times, dtype=float)
    if record_times.size == 0:
        raise ValueError("no record times")
    horizon = float(record_times.max())
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if np.any(np.diff(record_times) < 0):
        raise ValueError("record times must be sorted")
    x0 = np.asarray(x0)
    if np.any(x0 < 0) or np.any(np.round(x0) != x0):
        raise ValueError("x0 must be a non-negative integer vector")
    S = net.stoich.T  # (v, s)
    T = len(record_times)
    x = np.broadcast_to(x0.astype(np.int64), (n_paths, net.n_species)).copy()
    t = np.zeros(n_paths)
    rec = np.zeros(n_paths, dtype=np.int64)
    out = np.zeros((n_paths, T, net.n_species), dtype=np.int64)
    # record times at or before t=0
    while True:
        hit = (rec < T) & (record_times[np.minimum(rec, T - 1)] <= 0.0)
        if not hit.any():
            break
        out[hit, rec[hit]] = x[hit]
        rec[hit] += 1
    active = rec < T
    events = 0
    while active.any():
        ids = np.flatnonzero(active)
        h = net.hazard(x[ids].astype(float), c)
        h0 = h.sum(axis=1)
        with np.errstate(divide="ignore"):
            dt = np.where(h0 > 0, rng.standard_exponential(len(ids)) / np.where(h0 > 0, h0, 1.0), np.inf)
        t_new = t[ids] + dt
        while True:
            r = rec[ids]
            pending = (r < T) & (record_times[np.minimum(r, T - 1)] < t_new)
            if not pending.any():
                break
            pid = ids[pending]
            out[pid, rec[pid]] = x[pid]
            rec[pid] += 1
        fire = np.isfinite(t_new) & (rec[ids] < T)
        if fire.any():
            fid = ids[fire]
            cum = np.cumsum(h[fire], axis=1)
            draw = rng.random(len(fid)) * h0[fire]
            which = np.minimum((cum < draw[:, None]).sum(axis=1), net.n_reactions - 1)
            x[fid] += S[which]
            t[fid] = t_new[fire]
        active = rec < T
        events += 1
        if events > max_events:
            raise RuntimeError("Gillespie simulation exceeded max_events")
    return out


def gillespie_simulate(net: ReactionNetwork, c, x0, record_times, rng_seed=None,
                       rng: np.random.Generator | None = None) -> LatentPath:
    """Exact MJP path recorded at ``record_times`` (state in force at each time)."""
    rng = rng if rng is not None else np.random.default_rng(rng_seed)
    states = gillespie_ensemble(net, c, x0, record_times, 1, rng)[0]
    return LatentPath(np.asarray(record_times, dtype=float), states.astype(float),
                      valid=np.ones(len(states), dtype=bool))


# ---------------------------------------------------------------------------
# Discretised simulators
# ---------------------------------------------------------------------------


def _step_times(grid: DiscretisationGrid, n_steps: int) -> np.ndarray:
    whole, rem = np.divmod(np.arange(n_steps + 1), grid.m)
    return grid.t0 + whole + rem / grid.m


def poisson_leap_path(net: ReactionNetwork, c, x0, grid: DiscretisationGrid, quantile_inputs) -> LatentPath:
    """Poisson leap driven by uniforms of shape ``(..., n_steps, v)``.

    ``r_i = F^{-1}(U_i; h_i(x) dtau)``, then ``x <- x + S r``. Negative states
    are kept and flagged through ``valid``.
    """
    U = np.asarray(quantile_inputs, dtype=float)
    n_steps = U.shape[-2]
    if U.shape[-1] != net.n_reactions:
        raise ValueError("need one uniform per reaction per step")
    dtau = grid.delta_tau
    batch = U.shape[:-2]
    x = np.broadcast_to(np.asarray(x0, dtype=float), batch + (net.n_species,)).copy()
    states = np.empty(batch + (n_steps + 1, net.n_species))
    counts = np.empty(batch + (n_steps, net.n_reactions), dtype=np.int64)
    valid = np.empty(batch + (n_steps + 1,), dtype=bool)
    states[..., 0, :] = x
    valid[..., 0] = np.all(x >= 0, axis=-1)
    S = net.stoich.T
    for k in range(n_steps):
        h = net.hazard(x, c)
        r = poisson_quantile(h * dtau, U[..., k, :])
        x = x + r @ S
        counts[..., k, :] = r
        states[..., k + 1, :] = x
        valid[..., k + 1] = np.all(x >= 0, axis=-1)
    return LatentPath(_step_times(grid, n_steps), states, counts, valid)


def psd_sqrt(B, warn_tol: float = 1e-6):
    """Symmetric PSD square root via the spectral decomposition.

    Negative eigenvalues are clamped to 0; a clamp larger than
    ``warn_tol * ||B||`` logs a warning. Works on stacks ``(..., s, s)``.
    """
    B = np.asarray(B, dtype=float)
    scale = np.max(np.abs(B), axis=(-2, -1), keepdims=True)
    if np.any(np.abs(B - np.swapaxes(B, -1, -2)) > 1e-8 * np.maximum(scale, 1.0)):
        raise ValueError("psd_sqrt needs a symmetric matrix")
    if not np.all(np.isfinite(B)):
        raise FloatingPointError("non-finite entries in matrix passed to psd_sqrt")
    vals, vecs = eigh_sym(B)
    neg = np.min(vals, axis=-1)
    if np.any(neg < -warn_tol * np.maximum(scale[..., 0, 0], 1e-300)):
        logger.warning("psd_sqrt clamped a negative eigenvalue of magnitude %.3g", -float(neg.min()))
    root = np.sqrt(np.maximum(vals, 0.0))
    return (vecs * root[..., None, :]) @ np.swapaxes(vecs, -1, -2)


def cle_euler_path(model, c, x0, grid: DiscretisationGrid, gaussian_inputs) -> LatentPath:
    """Euler-Maruyama CLE path driven by normals of shape ``(..., n_steps, q)``.

    ``x <- x + alpha dtau + sqrt(beta dtau) z`` where ``alpha, beta`` come from
    ``model.moments`` (any network or augmented model).
    """
    Z = np.asarray(gaussian_inputs, dtype=float)
    n_steps = Z.shape[-2]
    s = model.state_dim
    if Z.shape[-1] != s:
        raise ValueError(f"need {s} normals per step")
    dtau = grid.delta_tau
    batch = Z.shape[:-2]
    x = np.broadcast_to(np.asarray(x0, dtype=float), batch + (s,)).copy()
    states = np.empty(batch + (n_steps + 1, s))
    states[..., 0, :] = x
    for k in range(n_steps):
        alpha, beta = model.moments(x, c)
        if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(beta))):
            raise FloatingPointError(f"non-finite CLE moments at step {k}")
        x = x + alpha * dtau + (psd_sqrt(beta * dtau) @ Z[..., k, :, None])[..., 0]
        states[..., k + 1, :] = x
    return LatentPath(_step_times(grid, n_steps), states, None, np.all(states >= 0, axis=-1))


def synthesize_data(path: LatentPath, obs: ObservationModel, rng_seed=None, obs_times=None,
                    metadata: dict | None = None) -> Dataset:
    """``y_t = P^T x_t + eps_t`` at ``obs_times`` (default: every recorded time)."""
    rng = np.random.default_rng(rng_seed)
    times = path.times if obs_times is None else np.asarray(obs_times, dtype=float)
    x = path.at(times) if obs_times is not None else path.states
    y = obs.project(x)
    if not obs.error_free:
        L = psd_sqrt(obs.Sigma)
        y = y + rng.standard_normal(y.shape) @ L.T
    meta = {"seed": rng_seed}
    meta.update(metadata or {})
    return Dataset(times, y, meta)
