"""Command-line front end for reproducible experiment runs.

Subcommands: generate | validate | gains | capacity | simulate | compare.
Flag precedence is flags > config file > defaults.  Every output file embeds
the resolved config hash, the seed and the artifact version, so any result
can be re-derived from its header.  Errors print a single machine-parseable
JSON line to stderr and exit nonzero (usage errors exit 2).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .capacity import capacity_lower_bound, schedule_stability
from .errors import NetkalmanError, ParameterError
from .filtering import export_estimates_csv, cikf_run, simulate_truth
from .gains import GainSchedule, precompute_schedule
from .harness import (export_results, load_results_json, mse_compare,
                      plot_mse_svg, run_montecarlo, to_db)
from .model import (PRESETS, generate_paper_model, laplacian_spectrum,
                    load_model, model_hash, save_model, validate_model)
from .pseudo import build_pseudo_model


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved run parameters for the experiment subcommands."""

    model_path: str
    schedule_path: str | None
    horizon: int
    runs: int
    base_seed: int
    output: str
    search_budget: int
    threads: int
    fmt: str

    def validate(self) -> None:
        if self.horizon < 1:
            raise ParameterError(f"horizon must be >= 1, got {self.horizon}")
        if self.runs < 0:
            raise ParameterError(f"runs must be >= 0, got {self.runs}")
        for label, path in (("model", self.model_path),
                            ("schedule", self.schedule_path)):
            if path is not None and not Path(path).exists():
                raise ParameterError(f"{label} file {path} does not exist")

    def to_dict(self) -> dict:
        return {
            "model_path": self.model_path,
            "schedule_path": self.schedule_path,
            "horizon": self.horizon,
            "runs": self.runs,
            "base_seed": self.base_seed,
            "output": self.output,
            "search_budget": self.search_budget,
            "threads": self.threads,
            "format": self.fmt,
        }


def _config_hash(payload: dict) -> str:
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True, default=str).encode()
    ).hexdigest()[:16]


def _meta(command: str, payload: dict, seed) -> dict:
    return {
        "config_hash": _config_hash({"command": command, **payload}),
        "seed": seed,
        "version": __version__,
    }


def _load_file_config(path) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise ParameterError(f"config file {path} does not exist")
    with open(p) as fh:
        return json.load(fh)


def _resolve(args, file_cfg: dict, key: str, default):
    val = getattr(args, key, None)
    if val is not None:
        return val
    if key in file_cfg:
        return file_cfg[key]
    return default


def _fail(kind: str, message: str) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return 1


# ---------------------------------------------------------------------------
# subcommands

def _cmd_generate(args) -> int:
    cfg = _load_file_config(args.config)
    seed = int(_resolve(args, cfg, "seed", 0))
    preset = _resolve(args, cfg, "preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ParameterError(f"unknown preset {preset!r}; "
                                 f"choose from {sorted(PRESETS)}")
        params = dict(PRESETS[preset])
    else:
        params = {}
    for key in ("M", "N", "M_n", "a_norm", "v_norm", "r_norm",
                "sigma0_norm", "edges", "dyn_degree"):
        val = _resolve(args, cfg, key, None)
        if val is not None:
            params[key] = val
    missing = [k for k in ("M", "N", "M_n", "a_norm", "v_norm", "r_norm",
                           "sigma0_norm", "edges", "dyn_degree")
               if k not in params]
    if missing:
        raise ParameterError(f"missing model parameters {missing}; "
                             "use --preset or pass them explicitly")
    spec = generate_paper_model(params, seed)
    out = _resolve(args, cfg, "output", None) or "model.json"
    save_model(spec, out, meta=_meta("generate", {"params": params, "seed": seed},
                                     seed))
    lam2 = laplacian_spectrum(spec.adjacency).algebraic_connectivity
    print(f"wrote {out} (M={spec.M}, N={spec.N}, lambda_2={lam2:.4g}, "
          f"hash={model_hash(spec)[:12]})")
    return 0


def _cmd_validate(args) -> int:
    spec = load_model(args.model)
    report = validate_model(spec)
    doc = report.to_dict()
    doc["_meta"] = _meta("validate", {"model": str(args.model)}, None)
    if args.output:
        with open(args.output, "w") as fh:
            json.dump(doc, fh, indent=2)
    for check in report.checks:
        status = "PASS" if check.passed else "FAIL"
        print(f"{status} {check.name}: {check.detail}")
    if not report.passed:
        failed = report.failures()[0]
        return _fail("AssumptionFailure", f"{failed.name}: {failed.detail}")
    return 0


def _cmd_gains(args) -> int:
    cfg = _load_file_config(args.config)
    horizon = int(_resolve(args, cfg, "horizon", 30))
    spec = load_model(args.model)
    report = validate_model(spec)
    if not report.passed:
        failed = report.failures()[0]
        return _fail("AssumptionFailure", f"{failed.name}: {failed.detail}")
    keep = horizon * (spec.M * spec.N) ** 2 * 8 * 8 < 2e9  # cap history memory
    schedule, _ = precompute_schedule(spec, horizon, keep_covariances=keep)
    out = _resolve(args, cfg, "output", None) or "schedule.npz"
    meta = _meta("gains", {"model": str(args.model), "horizon": horizon}, None)
    schedule.save(out, meta=meta)

    mse_out = args.mse_out or str(out) + ".mse.csv"
    db = to_db(schedule.theory_mse_per_agent)
    with open(mse_out, "w") as fh:
        fh.write("# " + " ".join(f"{k}={v}" for k, v in sorted(meta.items())) + "\n")
        fh.write("step,theory_cikf_total,theory_cikf_per_agent,theory_cikf_db\n")
        for i in range(horizon):
            fh.write(f"{i + 1},{schedule.theory_mse_total[i]!r},"
                     f"{schedule.theory_mse_per_agent[i]!r},{db[i]!r}\n")
    print(f"wrote {out} and {mse_out} (horizon={horizon})")
    return 0


def _cmd_capacity(args) -> int:
    cfg = _load_file_config(args.config)
    horizon = int(_resolve(args, cfg, "horizon", 20))
    budget = int(_resolve(args, cfg, "search_budget", 200))
    seed = int(_resolve(args, cfg, "seed", 0))
    spec = load_model(args.model)
    pm = build_pseudo_model(spec)
    graph = laplacian_spectrum(spec.adjacency)

    estimate = capacity_lower_bound(pm, graph, search_budget=budget, seed=seed)
    keep = horizon * (spec.M * spec.N) ** 2 * 8 * 8 < 2e9
    schedule, history = precompute_schedule(spec, horizon, keep_covariances=keep)
    # with truncated history the noise norms cover only the retained steps
    stability = schedule_stability(schedule, pm, spec, history)

    doc = {
        "_meta": _meta("capacity", {"model": str(args.model), "horizon": horizon,
                                    "search_budget": budget, "seed": seed}, seed),
        "capacity": estimate.to_dict(),
        "stability": stability.to_dict(),
        "dynamics_norm": float(np.linalg.norm(spec.A, 2)),
    }
    out = _resolve(args, cfg, "output", None) or "capacity.json"
    with open(out, "w") as fh:
        json.dump(doc, fh, indent=2)
    print(f"wrote {out} (C_lower={estimate.C_lower:.4g}, "
          f"rho_F_til={stability.rho_F_til:.4g}, rho_F={stability.rho_F:.4g})")
    return 0


def _cmd_simulate(args) -> int:
    file_cfg = _load_file_config(args.config)
    schedule_horizon = None
    if Path(args.schedule).exists():
        schedule_horizon = GainSchedule.load(args.schedule).horizon
    cfg = ExperimentConfig(
        model_path=str(args.model),
        schedule_path=str(args.schedule),
        horizon=int(_resolve(args, file_cfg, "horizon",
                             schedule_horizon or 1)),
        runs=int(_resolve(args, file_cfg, "runs", 100)),
        base_seed=int(_resolve(args, file_cfg, "seed", 0)),
        output=str(_resolve(args, file_cfg, "output", None) or "results"),
        search_budget=0,
        threads=int(_resolve(args, file_cfg, "threads", 1)),
        fmt=_resolve(args, file_cfg, "format", "all"),
    )
    cfg.validate()
    spec = load_model(cfg.model_path)
    schedule = GainSchedule.load(cfg.schedule_path)

    report = run_montecarlo(spec, schedule, runs=cfg.runs, horizon=cfg.horizon,
                            base_seed=cfg.base_seed, threads=cfg.threads)
    outdir = Path(cfg.output)
    outdir.mkdir(parents=True, exist_ok=True)
    # hash only the result-determining parameters: neither the worker count
    # nor the output location changes what gets computed
    hashed = cfg.to_dict()
    del hashed["threads"], hashed["output"]
    meta = _meta("simulate", hashed, cfg.base_seed)
    written = []
    if cfg.fmt in ("csv", "all"):
        export_results(report, outdir / "mse.csv", fmt="csv", meta=meta)
        written.append("mse.csv")
    if cfg.fmt in ("json", "all"):
        export_results(report, outdir / "mse.json", fmt="json", meta=meta)
        written.append("mse.json")
    if cfg.fmt == "all":
        plot_mse_svg(report, outdir / "mse.svg", meta=meta)
        written.append("mse.svg")
    if args.dump_estimates:
        traj = simulate_truth(spec, cfg.horizon, cfg.base_seed)
        history = cikf_run(spec, schedule, traj)
        export_estimates_csv(outdir / "estimates.csv", traj, history, meta=meta)
        written.append("estimates.csv")
    print(f"wrote {', '.join(written)} to {outdir} (runs={cfg.runs}, "
          f"horizon={cfg.horizon})")
    return 0


def _cmd_compare(args) -> int:
    report = load_results_json(args.results)
    summary = mse_compare(report)
    doc = summary.to_dict()
    doc["_meta"] = _meta("compare", {"results": str(args.results)}, None)
    text = json.dumps(doc, indent=2)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    print(text)
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="netkalman",
        description="Distributed Kalman filtering experiments over agent networks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def _common(p):
        p.add_argument("--config", help="JSON config file (flags override it)")
        p.add_argument("--output", "-o", help="output path")

    g = sub.add_parser("generate", help="generate a benchmark model file")
    _common(g)
    g.add_argument("--preset", choices=sorted(PRESETS))
    g.add_argument("--seed", type=int)
    for key, typ in (("M", int), ("N", int), ("M_n", int), ("a_norm", float),
                     ("v_norm", float), ("r_norm", float),
                     ("sigma0_norm", float), ("edges", int),
                     ("dyn_degree", int)):
        g.add_argument(f"--{key.replace('_', '-')}", dest=key, type=typ)
    g.set_defaults(func=_cmd_generate)

    v = sub.add_parser("validate", help="check the modeling assumptions")
    _common(v)
    v.add_argument("model")
    v.set_defaults(func=_cmd_validate)

    ga = sub.add_parser("gains", help="precompute the gain schedule")
    _common(ga)
    ga.add_argument("model")
    ga.add_argument("--horizon", type=int)
    ga.add_argument("--mse-out", help="theory MSE CSV path")
    ga.set_defaults(func=_cmd_gains)

    c = sub.add_parser("capacity", help="tracking capacity and stability report")
    _common(c)
    c.add_argument("model")
    c.add_argument("--horizon", type=int)
    c.add_argument("--search-budget", dest="search_budget", type=int)
    c.add_argument("--seed", type=int)
    c.set_defaults(func=_cmd_capacity)

    s = sub.add_parser("simulate", help="Monte-Carlo MSE experiment")
    _common(s)
    s.add_argument("model")
    s.add_argument("schedule")
    s.add_argument("--runs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--horizon", type=int)
    s.add_argument("--threads", type=int)
    s.add_argument("--format", dest="format", choices=["csv", "json", "all"])
    s.add_argument("--dump-estimates", action="store_true",
                   help="also dump one run's trajectory and estimates as CSV")
    s.set_defaults(func=_cmd_simulate)

    cp = sub.add_parser("compare", help="steady-state summary of an MSE report")
    _common(cp)
    cp.add_argument("results", help="mse.json produced by simulate")
    cp.set_defaults(func=_cmd_compare)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NetkalmanError as exc:
        return _fail(type(exc).__name__, str(exc))
    except FileNotFoundError as exc:
        return _fail("FileNotFound", str(exc))
    except OSError as exc:
        return _fail("IOError", str(exc))
    except json.JSONDecodeError as exc:
        return _fail("InvalidFile", str(exc))


if __name__ == "__main__":
    sys.exit(main())
