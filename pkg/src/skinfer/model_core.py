"""Reaction networks, mass-action hazards, observation models and priors.

Everything here is immutable after construction. Array arguments that
describe states carry arbitrary leading batch dimensions, so one call can
evaluate hazards for a whole particle cloud (``x.shape == (..., s)``).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import gammaln

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)

APPROXIMATIONS = ("cle", "poisson-leap")


class ModelError(ValueError):
    """Raised for inconsistent model definitions."""


# ---------------------------------------------------------------------------
# Reaction networks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Reaction:
    reactants: Mapping[str, int]
    products: Mapping[str, int]
    name: str = ""


class ReactionNetwork:
    """Species, reactions and the derived stoichiometry matrix.

    Parameters
    ----------
    species : sequence of str
        Species identifiers, in state-vector order.
    reactions : sequence of Reaction
        Reaction list; the i-th reaction has rate constant ``c[i]``.

    Attributes
    ----------
    pre : ndarray, shape (v, s)
        Reactant coefficients ``p_ij``.
    post : ndarray, shape (v, s)
        Product coefficients ``q_ij``.
    stoich : ndarray, shape (s, v)
        ``S[j, i] = q_ij - p_ij``.
    """

    def __init__(self, species: Sequence[str], reactions: Sequence[Reaction]):
        species = list(species)
        if not species:
            raise ModelError("network needs at least one species")
        if len(set(species)) != len(species):
            raise ModelError("duplicate species identifiers")
        if not reactions:
            raise ModelError("empty reaction list")
        index = {name: j for j, name in enumerate(species)}
        s, v = len(species), len(reactions)
        pre = np.zeros((v, s), dtype=np.int64)
        post = np.zeros((v, s), dtype=np.int64)
        for i, rxn in enumerate(reactions):
            for target, coefs in ((pre, rxn.reactants), (post, rxn.products)):
                for name, coef in coefs.items():
                    if name not in index:
                        raise ModelError(f"reaction {i}: unknown species {name!r}")
                    if int(coef) != coef or coef < 0:
                        raise ModelError(f"reaction {i}: coefficient for {name!r} must be a non-negative integer")
                    target[i, index[name]] += int(coef)
        self.species = tuple(species)
        self.reactions = tuple(reactions)
        self.pre = pre
        self.post = post
        self.stoich = (post - pre).T.copy()
        self.stoich_f = self.stoich.astype(float)
        self._max_order = int(pre.max())
        for a in (self.pre, self.post, self.stoich, self.stoich_f):
            a.setflags(write=False)

    @property
    def n_species(self) -> int:
        return len(self.species)

    @property
    def n_reactions(self) -> int:
        return len(self.reactions)

    # the CLE/bridge code treats networks and augmented models uniformly
    state_dim = n_species
    n_params = n_reactions

    @property
    def param_names(self) -> tuple[str, ...]:
        return tuple(f"c{i + 1}" for i in range(self.n_reactions))

    def reaction_list(self) -> list[Reaction]:
        """Reconstruct the reaction list from the coefficient matrices."""
        out = []
        for i in range(self.n_reactions):
            reac = {self.species[j]: int(self.pre[i, j]) for j in range(self.n_species) if self.pre[i, j]}
            prod = {self.species[j]: int(self.post[i, j]) for j in range(self.n_species) if self.post[i, j]}
            out.append(Reaction(reac, prod, self.reactions[i].name))
        return out

    def hazard(self, x, c, return_flag: bool = False):
        """Mass-action hazards ``h_i = c_i prod_j C(x_j, p_ij)``.

        The binomial coefficient is evaluated as a falling factorial, which
        reduces to the monomial ``c_i x_j`` / ``c_i x_j x_k`` for the first
        and heterogeneous second order reactions used by every builtin, and
        is defined for real-valued (CLE) states. Negative results, which only
        arise from negative components, are clamped to 0. With
        ``return_flag`` the validity mask ``all(x >= 0)`` is also returned.
        """
        x = np.asarray(x, dtype=float)
        c = np.asarray(c, dtype=float)
        xs = x[..., None, :]
        combo = np.ones(x.shape[:-1] + (self.n_reactions, self.n_species))
        for k in range(self._max_order):
            active = self.pre > k
            combo = combo * np.where(active, (xs - k) / (k + 1), 1.0)
        h = c * combo.prod(axis=-1)
        h = np.maximum(h, 0.0)
        if return_flag:
            return h, np.all(x >= 0, axis=-1)
        return h

    def moments(self, x, c):
        """CLE drift ``S h`` and diffusion ``S diag(h) S^T``."""
        h = self.hazard(x, c)
        S = self.stoich_f
        alpha = h @ S.T
        beta = (S * h[..., None, :]) @ S.T
        return alpha, beta

    def __repr__(self) -> str:
        return f"ReactionNetwork(species={self.species}, v={self.n_reactions})"


def build_network(species: Sequence[str], reaction_list) -> ReactionNetwork:
    """Build a network from ``Reaction`` objects or ``(reactants, products)`` pairs/dicts."""
    reactions = []
    for item in reaction_list:
        if isinstance(item, Reaction):
            reactions.append(item)
        elif isinstance(item, Mapping):
            reactions.append(Reaction(dict(item.get("reactants", {})), dict(item.get("products", {})),
                                      item.get("name", "")))
        else:
            reac, prod = item
            reactions.append(Reaction(dict(reac), dict(prod)))
    return ReactionNetwork(species, reactions)


class AugmentedSDEModel:
    """CLE with one rate constant replaced by a latent log-OU process.

    The state is ``(x_1, ..., x_s, log c_k(t))`` with
    ``d log c_k = rev * (level - log c_k) dt + diff * dW``, independent of the
    species noise. The parameter vector is the base rates without ``c_k``
    followed by ``(rev, level, diff)``.
    """

    def __init__(self, base: ReactionNetwork, rate_index: int, initial_log_rate: float):
        if not 0 <= rate_index < base.n_reactions:
            raise ModelError(f"diffusing rate index {rate_index} out of range for v={base.n_reactions}")
        self.base = base
        self.rate_index = int(rate_index)
        self.initial_log_rate = float(initial_log_rate)
        self._keep = [i for i in range(base.n_reactions) if i != self.rate_index]

    @property
    def state_dim(self) -> int:
        return self.base.n_species + 1

    @property
    def n_params(self) -> int:
        return self.base.n_reactions + 2

    @property
    def param_names(self) -> tuple[str, ...]:
        k = self.base.n_reactions
        return tuple(f"c{i + 1}" for i in self._keep) + tuple(f"c{j}" for j in range(k + 1, k + 4))

    @property
    def species(self) -> tuple[str, ...]:
        return self.base.species + (f"log_c{self.rate_index + 1}",)

    def base_rates(self, log_rate, c):
        """Full base rate vector with entry ``rate_index`` set to ``exp(log_rate)``."""
        c = np.asarray(c, dtype=float)
        log_rate = np.asarray(log_rate, dtype=float)
        rates = np.empty(log_rate.shape + (self.base.n_reactions,))
        rates[..., self._keep] = c[: len(self._keep)]
        rates[..., self.rate_index] = np.exp(log_rate)
        return rates

    def moments(self, x, c):
        x = np.asarray(x, dtype=float)
        c = np.asarray(c, dtype=float)
        s = self.base.n_species
        rev, level, diff = c[-3:]
        rates = self.base_rates(x[..., s], c)
        a_base, b_base = self.base.moments(x[..., :s], rates)
        alpha = np.empty(x.shape)
        alpha[..., :s] = a_base
        alpha[..., s] = rev * (level - x[..., s])
        beta = np.zeros(x.shape + (s + 1,))
        beta[..., :s, :s] = b_base
        beta[..., s, s] = diff * diff
        return alpha, beta


def augment_with_ou_rate(net: ReactionNetwork, rate_index: int, initial_log_rate: float) -> AugmentedSDEModel:
    return AugmentedSDEModel(net, rate_index, initial_log_rate)


# ---------------------------------------------------------------------------
# Observation model
# ---------------------------------------------------------------------------


class ObservationModel:
    """Linear Gaussian observation ``y = P^T x + eps``, ``eps ~ N(0, Sigma)``.

    ``Sigma = 0`` is an exact-match (error-free) observation. Error-free
    observation requires ``P`` to be a selection matrix (each column a unit
    vector) so that observed components can be pinned exactly.
    """

    def __init__(self, P, Sigma, n: int | None = None, inter_obs_interval: float = 1.0):
        P = np.atleast_2d(np.asarray(P, dtype=float))
        s, p = P.shape
        if p > s:
            raise ModelError(f"P has more observed components ({p}) than species ({s})")
        Sigma = np.asarray(Sigma, dtype=float)
        if Sigma.ndim == 0:
            Sigma = np.eye(p) * float(Sigma)
        Sigma = np.atleast_2d(Sigma)
        if Sigma.shape != (p, p):
            raise ModelError(f"Sigma must be {p}x{p}, got {Sigma.shape}")
        if not np.allclose(Sigma, Sigma.T, atol=1e-12):
            raise ModelError("Sigma must be symmetric")
        evals, evecs = np.linalg.eigh(Sigma)
        if evals.min() < -1e-10 * max(1.0, abs(evals).max()):
            raise ModelError("Sigma must be positive semi-definite")
        self.P = P
        self.Sigma = Sigma
        self.n = n
        self.inter_obs_interval = float(inter_obs_interval)
        self.error_free = bool(np.all(Sigma == 0.0))
        self.obs_index = self._selection_index(P)
        if self.error_free and self.obs_index is None:
            raise ModelError("error-free observation requires P to be a selection matrix")
        tol = 1e-12 * max(1.0, evals.max())
        self._rank_full = bool(evals.min() > tol)
        keep = evals > tol
        self._evecs = evecs[:, keep]
        self._evals = evals[keep]
        self._log_norm = -0.5 * (keep.sum() * LOG_2PI + np.log(self._evals).sum())
        for a in (self.P, self.Sigma):
            a.setflags(write=False)

    @staticmethod
    def _selection_index(P):
        idx = []
        for col in P.T:
            nz = np.flatnonzero(col)
            if len(nz) != 1 or col[nz[0]] != 1.0:
                return None
            idx.append(int(nz[0]))
        if len(set(idx)) != len(idx):
            return None
        return np.array(idx)

    @property
    def s(self) -> int:
        return self.P.shape[0]

    @property
    def p(self) -> int:
        return self.P.shape[1]

    @property
    def fully_observed(self) -> bool:
        return self.obs_index is not None and self.p == self.s

    def project(self, x):
        return np.asarray(x, dtype=float) @ self.P

    def logdensity(self, y, x, atol: float = 1e-9):
        """``log N(y; P^T x, Sigma)`` over the leading dims of ``x``.

        For error-free observation the result is 0 on a match (absolute
        tolerance ``atol``; pass ``atol=0`` for exact integer matching) and
        ``-inf`` otherwise.
        """
        resid = np.asarray(y, dtype=float) - self.project(x)
        if self.error_free:
            hit = np.all(np.abs(resid) <= atol, axis=-1)
            return np.where(hit, 0.0, -np.inf)
        proj = resid @ self._evecs
        quad = np.sum(proj * proj / self._evals, axis=-1)
        out = self._log_norm - 0.5 * quad
        if not self._rank_full:
            outside = resid - proj @ self._evecs.T
            bad = np.any(np.abs(outside) > 1e-9 * (1.0 + np.abs(resid)), axis=-1)
            if np.any(bad):
                logger.debug("degenerate Sigma: residual outside its column space")
            out = np.where(bad, -np.inf, out)
        return out


def observation_logdensity(obs: ObservationModel, y, x, atol: float = 1e-9):
    return obs.logdensity(y, x, atol=atol)


# ---------------------------------------------------------------------------
# Priors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NormalOnLog:
    """``log c ~ N(mean, sd^2)``; sampled on the log scale."""

    mean: float = 0.0
    sd: float = 10.0
    tag = "normal-on-log"
    transform = "log"

    def log_density(self, theta):
        z = (np.asarray(theta) - self.mean) / self.sd
        return -0.5 * z * z - math.log(self.sd) - 0.5 * LOG_2PI

    def to_dict(self):
        return {"type": self.tag, "mean": self.mean, "sd": self.sd}


@dataclass(frozen=True)
class GammaPrior:
    """``c ~ Gamma(shape, rate)``; sampled on the log scale (density includes the Jacobian)."""

    shape: float
    rate: float
    tag = "gamma"
    transform = "log"

    def log_density(self, theta):
        theta = np.asarray(theta, dtype=float)
        return (self.shape * math.log(self.rate) - gammaln(self.shape)
                + self.shape * theta - self.rate * np.exp(theta))

    def to_dict(self):
        return {"type": self.tag, "shape": self.shape, "rate": self.rate}


@dataclass(frozen=True)
class ExponentialPrior:
    """``c ~ Exp(rate)``; sampled on the log scale."""

    rate: float = 1.0
    tag = "exponential"
    transform = "log"

    def log_density(self, theta):
        theta = np.asarray(theta, dtype=float)
        return math.log(self.rate) + theta - self.rate * np.exp(theta)

    def to_dict(self):
        return {"type": self.tag, "rate": self.rate}


@dataclass(frozen=True)
class NormalPrior:
    """``c ~ N(mean, sd^2)`` on the natural scale, for parameters supported on the real line."""

    mean: float = 0.0
    sd: float = 10.0
    tag = "normal"
    transform = "identity"

    def log_density(self, theta):
        z = (np.asarray(theta) - self.mean) / self.sd
        return -0.5 * z * z - math.log(self.sd) - 0.5 * LOG_2PI

    def to_dict(self):
        return {"type": self.tag, "mean": self.mean, "sd": self.sd}


PRIOR_TYPES = {cls.tag: cls for cls in (NormalOnLog, GammaPrior, ExponentialPrior, NormalPrior)}


def prior_from_dict(d: Mapping) -> object:
    d = dict(d)
    tag = d.pop("type")
    if tag not in PRIOR_TYPES:
        raise ModelError(f"unknown prior type {tag!r}")
    return PRIOR_TYPES[tag](**d)


@dataclass(frozen=True)
class Prior:
    """Independent per-parameter priors.

    Chains move on ``theta``: ``log c`` for positive parameters, ``c``
    itself for parameters with an identity transform. :meth:`log_density`
    is the density of ``theta`` (Jacobian included).
    """

    components: tuple

    def __len__(self):
        return len(self.components)

    @property
    def transforms(self) -> tuple[str, ...]:
        return tuple(p.transform for p in self.components)

    def to_theta(self, c):
        c = np.asarray(c, dtype=float)
        out = c.copy()
        for j, p in enumerate(self.components):
            if p.transform == "log":
                out[..., j] = np.log(c[..., j])
        return out

    def from_theta(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = theta.copy()
        for j, p in enumerate(self.components):
            if p.transform == "log":
                out[..., j] = np.exp(theta[..., j])
        return out

    def log_density(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        if theta.shape[-1] != len(self.components):
            raise ModelError("parameter dimension does not match prior")
        if not np.all(np.isfinite(theta)):
            return -math.inf
        total = sum(float(p.log_density(theta[j])) for j, p in enumerate(self.components))
        return total if np.isfinite(total) else -math.inf

    def log_density_natural(self, c) -> float:
        """Density of ``theta`` evaluated at natural-scale ``c``; ``-inf`` off support."""
        c = np.asarray(c, dtype=float)
        for j, p in enumerate(self.components):
            if p.transform == "log" and not c[j] > 0:
                return -math.inf
        return self.log_density(self.to_theta(c))

    def theta_names(self, param_names: Sequence[str]) -> list[str]:
        out = []
        for name, p in zip(param_names, self.components):
            base = name[1:] if name.startswith("c") else name
            out.append(f"log_c_{base}" if p.transform == "log" else f"c_{base}")
        return out

    def to_list(self):
        return [p.to_dict() for p in self.components]


# ---------------------------------------------------------------------------
# Initial condition and full model bundle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InitialCondition:
    """Distribution of the latent state at the first observation time.

    ``known``: fixed vector ``x``. ``gaussian``: independent normals with
    ``mean``/``sd`` (CLE). ``poisson``: independent Poisson(``mean``) counts
    drawn by inversion (Poisson leap).
    """

    kind: str
    x: tuple | None = None
    mean: tuple | None = None
    sd: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("known", "gaussian", "poisson"):
            raise ModelError(f"unknown initial condition kind {self.kind!r}")
        if self.kind == "known" and self.x is None:
            raise ModelError("known initial condition needs x")
        if self.kind in ("gaussian", "poisson") and self.mean is None:
            raise ModelError(f"{self.kind} initial condition needs mean")
        if self.kind == "gaussian" and self.sd is None:
            raise ModelError("gaussian initial condition needs sd")

    def init_dim(self, s: int) -> int:
        return 0 if self.kind == "known" else s

    def sample(self, z, s: int):
        """Map per-particle standard normals ``z`` (N, s) to initial states (N, s)."""
        if self.kind == "known":
            x = np.asarray(self.x, dtype=float)
            return np.broadcast_to(x, (z.shape[0], s)).copy()
        if self.kind == "gaussian":
            return np.asarray(self.mean, dtype=float) + np.asarray(self.sd, dtype=float) * z
        from .auxvar import gauss_to_uniform, poisson_quantile
        lam = np.broadcast_to(np.asarray(self.mean, dtype=float), z.shape)
        return poisson_quantile(lam, gauss_to_uniform(z)).astype(float)

    def to_dict(self):
        d = {"kind": self.kind}
        for k in ("x", "mean", "sd"):
            v = getattr(self, k)
            if v is not None:
                d[k] = list(v)
        return d


@dataclass(frozen=True)
class KineticModel:
    """Everything the filter and samplers need to evaluate ``p(y | c)``."""

    dynamics: object
    observation: ObservationModel
    initial: InitialCondition
    prior: Prior
    approximation: str = "cle"
    m: int = 5
    name: str = "custom"
    true_params: tuple | None = None
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.approximation not in APPROXIMATIONS:
            raise ModelError(f"approximation must be one of {APPROXIMATIONS}")
        if self.approximation == "poisson-leap" and not isinstance(self.dynamics, ReactionNetwork):
            raise ModelError("the Poisson leap needs a plain reaction network")
        if self.observation.s != self.dynamics.state_dim:
            raise ModelError("P row count must equal the state dimension")
        if len(self.prior) != self.dynamics.n_params:
            raise ModelError(f"expected {self.dynamics.n_params} priors, got {len(self.prior)}")
        if self.m < 1:
            raise ModelError("m must be >= 1")

    @property
    def state_dim(self) -> int:
        return self.dynamics.state_dim

    @property
    def step_dim(self) -> int:
        """Auxiliary coordinates consumed per particle per sub-step."""
        if self.approximation == "cle":
            return self.dynamics.state_dim
        return self.dynamics.n_reactions

    @property
    def init_dim(self) -> int:
        return self.initial.init_dim(self.state_dim)

    @property
    def param_names(self) -> tuple[str, ...]:
        return self.dynamics.param_names

    @property
    def theta_names(self) -> list[str]:
        return self.prior.theta_names(self.param_names)

    def replace(self, **changes) -> "KineticModel":
        from dataclasses import replace
        return replace(self, **changes)
