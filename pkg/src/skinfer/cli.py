"""Command-line interface: ``skinfer {simulate,infer,tune,diagnose,validate-config}``.

Exit codes: 0 on success, 2 for configuration errors, 3 for numerical aborts.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .builtins import BUILTIN_NAMES, load_builtin
from .config import ConfigError, canonical_json, normalize_config, read_config, resolve, sha256_text
from .diagnostics import _finite, chain_summary, tune
from .forward_sim import (
    DiscretisationGrid,
    cle_euler_path,
    gillespie_simulate,
    poisson_leap_path,
    synthesize_data,
)
from .model_core import ModelError
from .mcmc_samplers import ChainResult, NumericalAbort, ProposalConfig, cpmmh_run, mis_run, pilot_tune
from .particle_filter import FilterConfig

logger = logging.getLogger("skinfer")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_finite(obj), indent=2, sort_keys=True) + "\n")


def _manifest(command: str, cfg: dict, model_digest: str, extra: dict | None = None) -> dict:
    out = {
        "manifest_version": 1,
        "command": command,
        "config": cfg,
        "config_hash": sha256_text(canonical_json(cfg)),
        "seed": cfg.get("sampler", {}).get("seed", cfg.get("seed")),
        "model_sha256": model_digest,
        "package_version": __version__,
    }
    out.update(extra or {})
    return out


# ---------------------------------------------------------------------------
# Config assembly from flags
# ---------------------------------------------------------------------------


def _config_from_args(args) -> dict:
    raw = read_config(args.config) if getattr(args, "config", None) else {}
    raw = json.loads(json.dumps(raw))
    raw.pop("manifest_version", None)

    def put(path, value):
        if value is None:
            return
        node = raw
        for key in path[:-1]:
            node = node.setdefault(key, {})
        node[path[-1]] = value

    if args.builtin is not None:
        raw.pop("model", None)
        put(("builtin",), args.builtin)
    if args.model is not None:
        raw.pop("builtin", None)
        put(("model",), args.model)
    put(("data",), args.data)
    put(("approximation",), args.approximation)
    put(("m",), args.m)
    put(("sigma",), args.sigma)
    put(("data_seed",), getattr(args, "data_seed", None))
    put(("filter", "N"), args.N)
    put(("filter", "proposal"), args.proposal)
    put(("output",), args.out)
    put(("sampler", "name"), getattr(args, "sampler", None))
    put(("sampler", "rho"), getattr(args, "rho", None))
    put(("sampler", "n_iters"), getattr(args, "iters", None))
    put(("sampler", "seed"), getattr(args, "seed", None))
    put(("sampler", "pilot_iters"), getattr(args, "pilot_iters", None))
    if getattr(args, "init", None) is not None:
        put(("sampler", "init"), [float(v) for v in args.init.split(",")])
    return normalize_config(raw)


def _start_theta(run) -> np.ndarray:
    model, cfg = run.model, run.config
    init = cfg["sampler"]["init"]
    if init is None and model.true_params is not None:
        init = list(model.true_params)
    if init is None and run.builtin is not None:
        init = run.builtin.defaults.get("init")
    if init is None:
        raise ConfigError("no starting point: set sampler.init (natural-scale parameters)")
    if len(init) != len(model.prior):
        raise ConfigError(f"sampler.init has {len(init)} values, model has {len(model.prior)} parameters")
    c = np.asarray(init, dtype=float)
    if not model.prior.log_density_natural(c) > -math.inf:
        raise ConfigError("sampler.init lies outside the prior support")
    return model.prior.to_theta(c)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_infer(args) -> int:
    cfg = _config_from_args(args)
    run = resolve(cfg, Path.cwd())
    model, data = run.model, run.data
    s = cfg["sampler"]
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    theta0 = _start_theta(run)
    fconf = FilterConfig(cfg["filter"]["N"], proposal=cfg["filter"]["proposal"])
    pilot_time = 0.0
    if s["rw_cov"] is not None:
        proposal = ProposalConfig(np.asarray(s["rw_cov"], dtype=float), s["rho"])
    elif s["pilot_iters"] > 0:
        proposal, pilot = pilot_tune(model, data, fconf, theta0, [s["seed"], 0], s["name"], s["rho"],
                                     s["pilot_iters"])
        pilot_time = pilot.wall_time
        theta0 = pilot.theta[-1]
    else:
        k = len(model.prior)
        proposal = ProposalConfig(np.eye(k) * (0.1 ** 2 / k), s["rho"])
    if s["name"] == "mis":
        chain = mis_run(model, data, proposal, s["n_iters"], [s["seed"], 1], theta0)
    else:
        chain = cpmmh_run(model, data, proposal, fconf, s["n_iters"], [s["seed"], 1], theta0)
    chain.to_csv(out / "chain.csv")
    summary = chain_summary(chain.theta, chain.names, chain.accepted)
    summary.update({
        "sampler": "pmmh" if s["name"] == "cpmmh" and s["rho"] == 0 else s["name"],
        "rho": s["rho"],
        "N": cfg["filter"]["N"],
        "rw_cov": proposal.rw_cov.tolist(),
        "natural_scale_means": model.prior.from_theta(chain.theta).mean(axis=0).tolist(),
        "machine_dependent": {
            "cpu_time_s": chain.wall_time,
            "pilot_time_s": pilot_time,
            "mess_per_s": summary["mess"] / chain.wall_time if chain.wall_time > 0 else None,
        },
    })
    _write_json(out / "summary.json", summary)
    _write_json(out / "manifest.json", _manifest("infer", cfg, run.model_digest))
    print(f"wrote {out / 'chain.csv'} ({chain.n_iters} iterations, acceptance {chain.acceptance_rate:.3f}, "
          f"mESS {summary['mess']:.1f})")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _config_from_args(args)
    run = resolve(cfg, Path.cwd())
    model = run.model
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed
    if args.c is not None:
        c = np.array([float(v) for v in args.c.split(",")])
    elif model.true_params is not None:
        c = np.asarray(model.true_params, dtype=float)
    else:
        raise ConfigError("no rate constants: pass --c")
    n = args.n or run.data.n
    if model.initial.kind != "known":
        raise ConfigError("simulate needs a known initial state")
    x0 = np.asarray(model.initial.x, dtype=float)
    times = np.arange(n, dtype=float)
    rng = np.random.default_rng(seed)
    method = args.method
    if method == "gillespie":
        if not hasattr(model.dynamics, "hazard"):
            raise ConfigError("exact simulation needs a plain reaction network")
        path = gillespie_simulate(model.dynamics, c, x0, times, rng=rng)
    else:
        grid = DiscretisationGrid(model.m, 0.0)
        steps = (n - 1) * model.m
        if method == "poisson-leap":
            full = poisson_leap_path(model.dynamics, c, x0, grid, rng.random((steps, model.dynamics.n_reactions)))
        else:
            full = cle_euler_path(model.dynamics, c, x0, grid, rng.standard_normal((steps, model.state_dim)))
        full.states = full.states[::model.m]
        full.times = times
        path = full
    data = synthesize_data(path, model.observation, rng_seed=[seed, 1],
                           metadata={"generator": method, "seed": seed, "true_c": c.tolist(), "model": model.name})
    data.to_csv(out / "data.csv")
    data.write_sidecar(out / "data.json")
    _write_json(out / "manifest.json", _manifest("simulate", cfg, run.model_digest,
                                                   {"simulate": {"seed": seed, "method": method, "n": n,
                                                                 "c": c.tolist()}}))
    print(f"wrote {out / 'data.csv'} ({n} observations)")
    np.savetxt(out / "latent.csv", np.column_stack([path.times, path.states]), delimiter=",", fmt="%.17g",
               header="time," + ",".join(f"x{j + 1}" for j in range(path.states.shape[1])), comments="")
    return EXIT_OK


def cmd_tune(args) -> int:
    cfg = _config_from_args(args)
    run = resolve(cfg, Path.cwd())
    model = run.model
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    if args.c is not None:
        c = np.array([float(v) for v in args.c.split(",")])
    else:
        c = model.prior.from_theta(_start_theta(run))
    grid = [int(v) for v in args.N_grid.split(",")]
    report = tune(model, run.data, c, grid, cfg["sampler"]["rho"], args.replicates, cfg["sampler"]["seed"],
                  cfg["filter"]["proposal"])
    (out / "tuning.json").write_text(report.to_json())
    print(report.table())
    return EXIT_OK


def cmd_diagnose(args) -> int:
    path = Path(args.chain)
    if not path.exists():
        raise ConfigError(f"chain not found: {path}")
    chain = ChainResult.from_csv(path)
    burn = int(args.burn)
    if burn >= chain.n_iters:
        raise ConfigError("burn-in removes the whole chain")
    summary = chain_summary(chain.theta[burn:], chain.names, chain.accepted[burn:])
    text = json.dumps(_finite(summary), indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = normalize_config(read_config(args.path))
    print(json.dumps(cfg, indent=2, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _common(p, sampler: bool = True):
    p.add_argument("--config", help="run config JSON (flags override its values)")
    p.add_argument("--builtin", choices=BUILTIN_NAMES)
    p.add_argument("--model", help="model definition JSON")
    p.add_argument("--data", help="dataset CSV (time,y1,...,yp)")
    p.add_argument("--approximation", choices=("cle", "poisson-leap"))
    p.add_argument("--m", type=int, help="sub-intervals per observation interval")
    p.add_argument("--sigma", type=float, help="observation noise sd for builtins")
    p.add_argument("--data-seed", type=int, help="seed of a builtin's synthetic dataset")
    p.add_argument("--N", type=int, help="particles")
    p.add_argument("--proposal", choices=("bridge", "bootstrap"))
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    if sampler:
        p.add_argument("--sampler", choices=("cpmmh", "pmmh", "mis"))
        p.add_argument("--rho", type=float)
        p.add_argument("--iters", type=int)
        p.add_argument("--pilot-iters", type=int)
        p.add_argument("--init", help="comma-separated natural-scale starting parameters")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skinfer", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("infer", help="run CPMMH, PMMH or MIS")
    _common(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("simulate", help="simulate a dataset")
    _common(p, sampler=False)
    p.add_argument("--method", choices=("gillespie", "poisson-leap", "cle"), default="gillespie")
    p.add_argument("--n", type=int, help="number of observation times")
    p.add_argument("--c", help="comma-separated rate constants")
    p.set_defaults(func=cmd_simulate, seed=0)

    p = sub.add_parser("tune", help="probe sigma^2_N and rho_l and recommend N")
    _common(p)
    p.add_argument("--N-grid", default="1,2,5,10,20")
    p.add_argument("--replicates", type=int, default=100)
    p.add_argument("--c", help="comma-separated natural-scale parameter point")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("diagnose", help="ESS and posterior summaries of a chain CSV")
    p.add_argument("chain")
    p.add_argument("--burn", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("validate-config", help="print the normalised form of a config or manifest")
    p.add_argument("path")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalAbort, FloatingPointError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
