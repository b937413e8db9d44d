"""Command-line entry point: simulation, certification, and experiments.

Exit codes are a stable contract: 0 ok, 1 config error, 2 integration
failure, 3 certification UNSAT, 4 experiment failure.  Every output carries
the run manifest, so any artifact can be reproduced from its sidecar alone.
Flags can be supplied through the environment with the ``NFDELAB_`` prefix
(``NFDELAB_DT``, ``NFDELAB_T_END``, ``NFDELAB_SEED``, ``NFDELAB_OUT``);
explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .experiments import EXPERIMENT_KINDS, ExperimentSpec, json_default, \
    run_experiment
from .histories import History
from .integrate import BACKEND, IntegratorConfig, integrate
from .models import CompartmentModel

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INTEGRATION = 2
EXIT_UNSAT = 3
EXIT_EXPERIMENT = 4

PRESETS = ("krisztin", "linear3", "neutral-ring", "canary", "decay")


class ConfigError(Exception):
    pass


@dataclass
class RunManifest:
    subcommand: str
    source: str             # preset name or config path
    out: str
    seed: int
    overrides: dict = field(default_factory=dict)
    backend: str = BACKEND
    version: str = __version__

    def to_dict(self) -> dict:
        return asdict(self)


def load_config(args) -> tuple[dict, str]:
    if args.preset and args.config:
        raise ConfigError("give either --preset or --config, not both")
    if args.preset:
        if args.preset not in PRESETS:
            raise ConfigError(f"unknown preset {args.preset!r}; "
                              f"available: {', '.join(PRESETS)}")
        text = resources.files("nfdelab").joinpath(
            f"presets/{args.preset}.yaml").read_text()
        return yaml.safe_load(text), args.preset
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        with open(path) as fh:
            return yaml.safe_load(fh), str(path)
    raise ConfigError("one of --preset or --config is required")


def build_model(cfg: dict) -> CompartmentModel:
    try:
        return CompartmentModel.from_config(cfg)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid model config: {exc}") from exc


def build_initial(cfg: dict, model: CompartmentModel, dt: float,
                  seed: int) -> History:
    spec = cfg.get("initial", {"kind": "constant", "values": [1.0] * model.m})
    horizon = max(model.max_delay(), dt)
    n = int(round(horizon / dt))
    s = -dt * np.arange(n, -1, -1)
    kind = spec.get("kind", "constant")
    if kind == "constant":
        values = np.asarray(spec.get("values", [1.0] * model.m), dtype=float)
        if values.shape != (model.m,):
            raise ConfigError("initial.values must list one value per "
                              "compartment")
        return History(dt, np.tile(values, (n + 1, 1)))
    if kind == "sin":
        return History(dt, np.tile(np.sin(s)[:, None], (1, model.m)))
    if kind == "lipschitz":
        from .models import _random_lipschitz
        rng = np.random.default_rng(int(spec.get("seed", seed)))
        base = float(spec.get("base", 1.0))
        wiggle = float(spec.get("wiggle", 0.3))
        samples = base + wiggle * _random_lipschitz(rng, n, model.m)
        return History(dt, np.maximum(samples, 0.05))
    raise ConfigError(f"unknown initial.kind {kind!r}")


def _env_default(name: str, cast, fallback):
    raw = os.environ.get(f"NFDELAB_{name}")
    if raw is None:
        return fallback
    try:
        return cast(raw)
    except ValueError:
        raise ConfigError(f"bad NFDELAB_{name} value {raw!r}")


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True,
                  default=json_default)
        fh.write("\n")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    cfg, source = load_config(args)
    model = build_model(cfg)
    icfg = dict(cfg.get("integrator", {}))
    dt = args.dt if args.dt is not None else float(icfg.get("dt", 1e-3))
    t_end = args.t_end if args.t_end is not None \
        else float(icfg.get("t_end", 10.0))
    x0 = build_initial(cfg, model, dt, args.seed)
    manifest = RunManifest("simulate", source, str(args.out), args.seed,
                           {"dt": dt, "t_end": t_end})
    out = _out_dir(args)
    try:
        traj = integrate(model, x0, IntegratorConfig(dt=dt, t_end=t_end))
    except (ValueError, RuntimeError) as exc:
        _write_json(out / "run.json", {"manifest": manifest.to_dict(),
                                       "status": "integration-failure",
                                       "error": str(exc)})
        print(f"integration failed: {exc}", file=sys.stderr)
        return EXIT_INTEGRATION
    traj.to_csv(out / "trajectory.csv")
    _write_json(out / "run.json", {"manifest": manifest.to_dict(),
                                   "status": "ok",
                                   "model_hash": model.config_hash(),
                                   "stats": traj.stats})
    print(f"wrote {out / 'trajectory.csv'} "
          f"({traj.forward.shape[0]} rows, backend {BACKEND})")
    return EXIT_OK


def cmd_certify(args) -> int:
    cfg, source = load_config(args)
    model = build_model(cfg)
    manifest = RunManifest("certify", source, str(args.out), args.seed)
    report = model.certify()
    out = _out_dir(args)
    _write_json(out / "certificate.json",
                {"manifest": manifest.to_dict(),
                 "model_hash": model.config_hash(),
                 "report": report.to_dict()})
    verdict = "SAT" if report.sat else "UNSAT"
    for comp in report.components:
        beta = comp.get("witness_beta")
        print(f"component {comp['component']}: "
              f"{'SAT' if comp['sat'] else 'UNSAT'}"
              + (f" (witness beta = {beta:.6g})" if comp["sat"] else ""))
    print(f"certification: {verdict} ({report.family}-delay hypotheses)")
    return EXIT_OK if report.sat else EXIT_UNSAT


def cmd_experiment(args) -> int:
    cfg, source = load_config(args)
    model = build_model(cfg)
    icfg = dict(cfg.get("integrator", {}))
    ecfg = dict(cfg.get("experiment", {}))
    dt = args.dt if args.dt is not None else float(icfg.get("dt", 1e-3))
    t_end = args.t_end if args.t_end is not None \
        else float(ecfg.get("t_end", icfg.get("t_end", 100.0)))
    spec = ExperimentSpec(
        kind=args.kind, dt=dt, t_end=t_end, seed=args.seed,
        n_pairs=int(ecfg.get("n_pairs", 10)),
        tolerances=dict(ecfg.get("tolerances", {})),
        options=dict(ecfg.get("options", {})))
    manifest = RunManifest("experiment", source, str(args.out), args.seed,
                           {"kind": args.kind, "dt": dt, "t_end": t_end})
    out = _out_dir(args)
    try:
        report = run_experiment(model, spec, source)
    except (ValueError, RuntimeError) as exc:
        _write_json(out / "report.json", {"manifest": manifest.to_dict(),
                                          "status": "error",
                                          "error": str(exc)})
        print(f"experiment failed to run: {exc}", file=sys.stderr)
        return EXIT_INTEGRATION
    payload = report.to_dict()
    payload["manifest"] = manifest.to_dict()
    _write_json(out / "report.json", payload)
    for a in report.assertions:
        print(f"[{'PASS' if a['passed'] else 'FAIL'}] {a['name']}")
    if not report.passed:
        for a in report.failures():
            detail = {k: v for k, v in a.items() if k not in ("name", "passed")}
            print(f"failure witness for {a['name']}: "
                  f"{json.dumps(detail, default=repr)}", file=sys.stderr)
        return EXIT_EXPERIMENT
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nfdelab",
        description="Neutral delay compartmental systems: simulation, "
                    "monotonicity certification, and experiments.")
    parser.add_argument("--version", action="version",
                        version=f"nfdelab {__version__} (backend {BACKEND})")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("--config", help="model config file (YAML, schema 1)")
        p.add_argument("--preset", help="built-in model: " + ", ".join(PRESETS))
        p.add_argument("--out", default=_env_default("OUT", str, "out"),
                       help="output directory (default: ./out)")
        p.add_argument("--dt", type=float,
                       default=_env_default("DT", float, None),
                       help="integration step override")
        p.add_argument("--t-end", type=float, dest="t_end",
                       default=_env_default("T_END", float, None),
                       help="final time override")
        p.add_argument("--seed", type=int,
                       default=_env_default("SEED", int, 0),
                       help="RNG seed (default 0)")

    common(sub.add_parser("simulate", help="integrate and write a "
                                           "trajectory CSV"))
    common(sub.add_parser("certify", help="check the monotonicity "
                                          "hypotheses"))
    p_exp = sub.add_parser("experiment", help="run a validation experiment")
    p_exp.add_argument("kind", choices=EXPERIMENT_KINDS)
    common(p_exp)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        handler = {"simulate": cmd_simulate, "certify": cmd_certify,
                   "experiment": cmd_experiment}[args.subcommand]
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except yaml.YAMLError as exc:
        print(f"config error: invalid YAML: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
