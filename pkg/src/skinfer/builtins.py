"""Builtin models and datasets for the four worked applications.

Synthetic datasets are regenerated on demand from fixed seeds with the exact
(Gillespie) simulator, so they are identical on every machine.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .forward_sim import Dataset, gillespie_simulate, synthesize_data
from .model_core import (
    ExponentialPrior,
    GammaPrior,
    InitialCondition,
    KineticModel,
    ModelError,
    NormalOnLog,
    NormalPrior,
    ObservationModel,
    Prior,
    augment_with_ou_rate,
    build_network,
)

BOARDING_SCHOOL_INFECTIVES = (1, 3, 6, 25, 73, 221, 294, 257, 236, 189, 125, 67, 26, 10, 3)

# data seeds; the Lotka-Volterra seed gives a trace without extinction
DATA_SEEDS = {"immigration-death": 101, "lotka-volterra": 202, "autoregulatory": 303}
NOISE_SEED = 7


@dataclass
class Builtin:
    model: KineticModel
    data: Dataset
    true_c: tuple | None
    defaults: dict = field(default_factory=dict)


def immigration_death_network():
    return build_network(["X1"], [({}, {"X1": 1}), ({"X1": 1}, {})])


def lotka_volterra_network():
    return build_network(["X1", "X2"], [({"X1": 1}, {"X1": 2}), ({"X1": 1, "X2": 1}, {"X2": 2}), ({"X2": 1}, {})])


def autoregulatory_network():
    return build_network(["X1", "X2"], [
        ({}, {"X1": 1}),
        ({}, {"X2": 1}),
        ({"X1": 1}, {}),
        ({"X2": 1}, {}),
        ({"X1": 1, "X2": 1}, {"X2": 2}),
    ])


def sir_network():
    return build_network(["S", "I"], [({"S": 1, "I": 1}, {"I": 2}), ({"I": 1}, {})])


def _immigration_death(approximation, sigma, seed):
    net = immigration_death_network()
    c = (4.0, 0.8)
    times = np.arange(0, 101, dtype=float)
    seed = DATA_SEEDS["immigration-death"] if seed is None else seed
    path = gillespie_simulate(net, c, [500], times, rng_seed=seed)
    obs = ObservationModel([[1.0]], 0.0 if sigma is None else sigma ** 2, n=len(times))
    data = synthesize_data(path, obs, rng_seed=NOISE_SEED,
                           metadata={"generator": "gillespie", "path_seed": seed, "true_c": list(c)})
    model = KineticModel(net, obs, InitialCondition("known", x=(500.0,)),
                         Prior((NormalOnLog(0.0, 10.0),) * 2), approximation or "cle", m=5,
                         name="immigration-death", true_params=c)
    return Builtin(model, data, c, {"N": 2, "rho": 0.99, "iters": 20000})


def _lotka_volterra(approximation, sigma, seed):
    net = lotka_volterra_network()
    c = (0.5, 0.0025, 0.3)
    sigma = 1.0 if sigma is None else float(sigma)
    times = np.arange(0, 51, dtype=float)
    seed = DATA_SEEDS["lotka-volterra"] if seed is None else seed
    path = gillespie_simulate(net, c, [100, 100], times, rng_seed=seed)
    obs = ObservationModel(np.eye(2), sigma ** 2, n=len(times))
    data = synthesize_data(path, obs, rng_seed=NOISE_SEED,
                           metadata={"generator": "gillespie", "path_seed": seed, "sigma": sigma,
                                     "true_c": list(c)})
    model = KineticModel(net, obs, InitialCondition("known", x=(100.0, 100.0)),
                         Prior((NormalOnLog(0.0, 10.0),) * 3), approximation or "cle", m=5,
                         name="lotka-volterra", true_params=c)
    return Builtin(model, data, c, {"N": 3, "rho": 0.99, "iters": 50000})


def _autoregulatory(approximation, sigma, seed):
    net = autoregulatory_network()
    c = (10.0, 0.1, 0.1, 0.7, 0.008)
    times = np.arange(0, 101, dtype=float)
    seed = DATA_SEEDS["autoregulatory"] if seed is None else seed
    path = gillespie_simulate(net, c, [5, 5], times, rng_seed=seed)
    P = np.array([[0.0], [1.0]])
    obs = ObservationModel(P, 0.0 if sigma is None else sigma ** 2, n=len(times))
    data = synthesize_data(path, obs, rng_seed=NOISE_SEED,
                           metadata={"generator": "gillespie", "path_seed": seed, "true_c": list(c),
                                     "observed": ["X2"]})
    prior = Prior((GammaPrior(10.0, 1.0),) + (GammaPrior(0.1, 0.1),) * 4)
    model = KineticModel(net, obs, InitialCondition("known", x=(5.0, 5.0)), prior,
                         approximation or "poisson-leap", m=5, name="autoregulatory", true_params=c)
    return Builtin(model, data, c, {"N": 20, "rho": 0.996, "iters": 100000})


def _sir_ou(approximation, sigma, seed):
    if approximation not in (None, "cle"):
        raise ModelError("sir-ou is a diffusion model and only supports the CLE")
    dyn = augment_with_ou_rate(sir_network(), 0, -6.0)
    P = np.array([[0.0], [1.0], [0.0]])
    y = np.array(BOARDING_SCHOOL_INFECTIVES, dtype=float)[:, None]
    obs = ObservationModel(P, 0.0 if sigma is None else sigma ** 2, n=len(y))
    data = Dataset(np.arange(1, len(y) + 1, dtype=float), y, {"source": "boarding-school influenza outbreak",
                                                              "observed": ["I"]})
    prior = Prior((ExponentialPrior(1.0), ExponentialPrior(1.0), NormalPrior(0.0, 10.0), ExponentialPrior(1.0)))
    model = KineticModel(dyn, obs, InitialCondition("known", x=(762.0, 1.0, -6.0)), prior, "cle", m=10,
                         name="sir-ou")
    return Builtin(model, data, None, {"N": 90, "rho": 0.99, "iters": 200000,
                                       "init": [0.5, 1.0, -6.0, 0.5]})


_BUILDERS = {
    "immigration-death": _immigration_death,
    "lotka-volterra": _lotka_volterra,
    "autoregulatory": _autoregulatory,
    "sir-ou": _sir_ou,
}

BUILTIN_NAMES = tuple(_BUILDERS)


def load_builtin(name: str, approximation: str | None = None, sigma: float | None = None,
                 data_seed: int | None = None) -> Builtin:
    """Model, dataset and suggested settings for a builtin application.

    Parameters
    ----------
    name : str
        One of :data:`BUILTIN_NAMES`.
    approximation : {"cle", "poisson-leap"}, optional
        Override the default inferential approximation.
    sigma : float, optional
        Observation noise standard deviation (``Sigma = sigma^2 I``). ``None``
        keeps the builtin default (error-free except Lotka-Volterra, ``sigma=1``).
    data_seed : int, optional
        Seed of the exact simulation behind synthetic datasets.
    """
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise ModelError(f"unknown builtin {name!r}; choose from {', '.join(BUILTIN_NAMES)}") from None
    return builder(approximation, sigma, data_seed)
