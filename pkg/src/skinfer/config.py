"""Model-file and run-config parsing.

A run config is normalised once at parse time (``pmmh`` becomes ``cpmmh``
with ``rho = 0``, defaults filled in) so that the normalised form written
to a manifest parses back to itself.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .builtins import BUILTIN_NAMES, Builtin, load_builtin
from .forward_sim import Dataset
from .model_core import (
    APPROXIMATIONS,
    InitialCondition,
    KineticModel,
    ModelError,
    ObservationModel,
    Prior,
    augment_with_ou_rate,
    build_network,
    prior_from_dict,
)

SAMPLERS = ("cpmmh", "pmmh", "mis")


class ConfigError(ValueError):
    """Invalid or missing configuration."""


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


# ---------------------------------------------------------------------------
# Model files
# ---------------------------------------------------------------------------


def model_from_dict(d: dict, base_dir: Path | None = None) -> tuple[KineticModel, Dataset | None]:
    """Build a model (and optional dataset) from the JSON model-file schema.

    Keys: ``species``, ``reactions`` (``{reactants: {name: coef}, products: {...}}``),
    ``observation`` (``P`` row-major ``s x p``, ``Sigma`` scalar or matrix),
    ``priors`` (one per parameter), ``initial``, optional ``augmentation``
    (``rate_index``, ``initial_log_rate``), ``approximation``, ``m``,
    ``true_params`` and ``data`` (CSV path relative to the model file).
    """
    try:
        net = build_network(d["species"], d["reactions"])
        dyn = net
        if "augmentation" in d:
            aug = d["augmentation"]
            dyn = augment_with_ou_rate(net, int(aug["rate_index"]), float(aug["initial_log_rate"]))
        o = d["observation"]
        obs = ObservationModel(np.asarray(o["P"], dtype=float), o.get("Sigma", 0.0), n=o.get("n"))
        prior = Prior(tuple(prior_from_dict(p) for p in d["priors"]))
        init = d.get("initial", {"kind": "known", "x": [0.0] * dyn.state_dim})
        initial = InitialCondition(init["kind"], *(tuple(init[k]) if k in init else None for k in ("x", "mean", "sd")))
        true = d.get("true_params")
        model = KineticModel(dyn, obs, initial, prior, d.get("approximation", "cle"), int(d.get("m", 5)),
                             d.get("name", "custom"), tuple(true) if true is not None else None)
    except KeyError as exc:
        raise ConfigError(f"model file is missing key {exc.args[0]!r}") from None
    except (ModelError, TypeError) as exc:
        raise ConfigError(f"invalid model: {exc}") from None
    data = None
    if "data" in d:
        path = Path(d["data"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        data = Dataset.from_csv(path)
    return model, data


def load_model_file(path) -> tuple[KineticModel, Dataset | None, str]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"model file not found: {path}")
    text = path.read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    model, data = model_from_dict(d, path.parent)
    return model, data, sha256_text(text)


# ---------------------------------------------------------------------------
# Run configs
# ---------------------------------------------------------------------------


DEFAULTS = {
    "builtin": None,
    "model": None,
    "data": None,
    "approximation": None,
    "m": None,
    "sigma": None,
    "data_seed": None,
    "filter": {"N": None, "proposal": "bridge"},
    "sampler": {"name": "cpmmh", "rho": None, "n_iters": None, "seed": 1, "init": None, "rw_cov": None,
                "pilot_iters": 5000},
    "output": "out",
}


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def normalize_config(raw: dict) -> dict:
    """Fill defaults, resolve builtin suggestions and fold ``pmmh`` into ``cpmmh`` with ``rho = 0``."""
    unknown = set(raw) - set(DEFAULTS) - {"manifest_version"}
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    cfg = _merge(DEFAULTS, raw)
    if (cfg["builtin"] is None) == (cfg["model"] is None):
        raise ConfigError("exactly one of 'builtin' and 'model' must be given")
    if cfg["builtin"] is not None and cfg["builtin"] not in BUILTIN_NAMES:
        raise ConfigError(f"unknown builtin {cfg['builtin']!r}; choose from {', '.join(BUILTIN_NAMES)}")
    if cfg["approximation"] is not None and cfg["approximation"] not in APPROXIMATIONS:
        raise ConfigError(f"approximation must be one of {APPROXIMATIONS}")
    s = cfg["sampler"]
    if s["name"] not in SAMPLERS:
        raise ConfigError(f"sampler must be one of {SAMPLERS}")
    if s["name"] == "pmmh":
        if s["rho"] not in (None, 0, 0.0):
            raise ConfigError("pmmh implies rho = 0")
        s["name"], s["rho"] = "cpmmh", 0.0
    if cfg["filter"]["proposal"] not in ("bridge", "bootstrap"):
        raise ConfigError("filter proposal must be 'bridge' or 'bootstrap'")
    if cfg["builtin"] is not None:
        b = load_builtin(cfg["builtin"], cfg["approximation"], cfg["sigma"], cfg["data_seed"])
        cfg["approximation"] = cfg["approximation"] or b.model.approximation
        cfg["m"] = cfg["m"] or b.model.m
        cfg["filter"]["N"] = cfg["filter"]["N"] or b.defaults["N"]
        if s["rho"] is None:
            s["rho"] = b.defaults["rho"] if s["name"] != "mis" else 0.0
        s["n_iters"] = s["n_iters"] or b.defaults["iters"]
    if s["name"] == "mis":
        if cfg["builtin"] == "sir-ou":
            raise ConfigError("the sir-ou builtin supports cpmmh and pmmh only")
        if cfg["approximation"] not in (None, "cle"):
            raise ConfigError("the mis sampler requires approximation = cle")
        s["rho"] = 0.0
    s["rho"] = float(s["rho"] if s["rho"] is not None else 0.0)
    if not 0.0 <= s["rho"] <= 1.0:
        raise ConfigError("rho must lie in [0, 1]")
    if s["n_iters"] is None:
        s["n_iters"] = 10000
    for key, lo in (("n_iters", 1), ("pilot_iters", 0)):
        if int(s[key]) < lo:
            raise ConfigError(f"sampler.{key} must be >= {lo}")
        s[key] = int(s[key])
    if cfg["filter"]["N"] is None:
        cfg["filter"]["N"] = 10
    cfg["filter"]["N"] = int(cfg["filter"]["N"])
    if cfg["filter"]["N"] < 1:
        raise ConfigError("filter.N must be >= 1")
    if cfg["m"] is not None:
        cfg["m"] = int(cfg["m"])
        if cfg["m"] < 1:
            raise ConfigError("m must be >= 1")
    s["seed"] = int(s["seed"])
    return cfg


def read_config(path) -> dict:
    """Parse a config file; a manifest is accepted and its ``config`` block used."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if isinstance(raw, dict) and "config" in raw and "config_hash" in raw:
        raw = raw["config"]
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return raw


@dataclass
class ResolvedRun:
    config: dict
    model: KineticModel
    data: Dataset
    builtin: Builtin | None
    model_digest: str


def resolve(cfg: dict, base_dir: Path | None = None) -> ResolvedRun:
    """Materialise the model and dataset a normalised config refers to."""
    builtin = None
    if cfg["builtin"] is not None:
        builtin = load_builtin(cfg["builtin"], cfg["approximation"], cfg["sigma"], cfg["data_seed"])
        model, data = builtin.model, builtin.data
        digest = sha256_text(f"builtin:{cfg['builtin']}")
    else:
        path = Path(cfg["model"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        model, data, digest = load_model_file(path)
    changes = {}
    if cfg["approximation"] and cfg["approximation"] != model.approximation:
        changes["approximation"] = cfg["approximation"]
    if cfg["m"] and cfg["m"] != model.m:
        changes["m"] = cfg["m"]
    if changes:
        try:
            model = model.replace(**changes)
        except ModelError as exc:
            raise ConfigError(str(exc)) from None
    if cfg["data"] is not None:
        path = Path(cfg["data"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        if not path.exists():
            raise ConfigError(f"data file not found: {path}")
        data = Dataset.from_csv(path)
    if data is None:
        raise ConfigError("no dataset: give 'data' or a model file with a 'data' entry")
    if data.p != model.observation.p:
        raise ConfigError(f"dataset has {data.p} observed components, model expects {model.observation.p}")
    if cfg["sampler"]["name"] == "mis" and model.approximation != "cle":
        raise ConfigError("the mis sampler requires approximation = cle")
    return ResolvedRun(cfg, model, data, builtin, digest)
