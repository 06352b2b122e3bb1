"""Monte-Carlo experiment driver and theory-vs-empirical MSE reporting.

Runs are embarrassingly parallel and fully reproducible: run k draws its
noises from seed ``base_seed + k`` regardless of worker count, and per-run
results are merged in run-index order so the accumulated floating-point sums
are bit-identical whether the runs execute on one process or many.
"""

from __future__ import annotations

import csv
import json
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ParameterError
from .filtering import ckf_covariances, ckf_run, cikf_run, simulate_truth
from .gains import GainSchedule, verify_schedule_matches
from .model import ModelSpec, model_hash
from .pseudo import build_pseudo_model

DB_FLOOR = 1e-300


def to_db(values) -> np.ndarray:
    """10 log10 of the values, floored away from zero."""
    arr = np.asarray(values, dtype=float)
    return 10.0 * np.log10(np.maximum(arr, DB_FLOOR))


@dataclass(frozen=True)
class EmpiricalMoments:
    """Raw per-step error moments accumulated over runs.

    Prediction errors are the agent-stacked x_i - x^n_{i|i-1} for i = 1..T;
    filtering errors are x_i - x^n_{i|i} for i = 0..T-1.  First and second
    moments per component, plus entrywise outer-product moments for the
    prediction errors, all stored as plain sums over runs.
    """

    runs: int
    pred_err_sum: np.ndarray       # (T, MN)
    pred_err_sumsq: np.ndarray     # (T, MN)
    pred_outer_sum: np.ndarray     # (T, MN, MN)
    pred_outer_sumsq: np.ndarray   # (T, MN, MN)
    filt_err_sum: np.ndarray       # (T, MN)
    filt_err_sumsq: np.ndarray     # (T, MN)

    def pred_cov_mean(self) -> np.ndarray:
        return self.pred_outer_sum / self.runs

    def pred_cov_stderr(self) -> np.ndarray:
        mean = self.pred_outer_sum / self.runs
        var = self.pred_outer_sumsq / self.runs - mean**2
        return np.sqrt(np.maximum(var, 0.0) / self.runs)

    def mean_errors(self):
        """(pred mean, pred stderr, filt mean, filt stderr) per component."""
        pm = self.pred_err_sum / self.runs
        pv = self.pred_err_sumsq / self.runs - pm**2
        fm = self.filt_err_sum / self.runs
        fv = self.filt_err_sumsq / self.runs - fm**2
        return (pm, np.sqrt(np.maximum(pv, 0.0) / self.runs),
                fm, np.sqrt(np.maximum(fv, 0.0) / self.runs))


@dataclass(frozen=True)
class MseReport:
    """Theory and Monte-Carlo MSE series, linear and in dB.

    ``steps[j]`` is the predicted time index i+1; all series align with it.
    The distributed filter's empirical MSE is averaged over agents so it
    shares units with the centralized filter; the network total is retained
    separately.  dB fields are stored so serialized reports stay
    self-consistent.
    """

    steps: np.ndarray
    theory_cikf_total: np.ndarray
    theory_cikf_per_agent: np.ndarray
    theory_ckf: np.ndarray
    emp_cikf: np.ndarray
    emp_cikf_total: np.ndarray
    emp_ckf: np.ndarray
    theory_cikf_db: np.ndarray    # dB of the per-agent series
    theory_ckf_db: np.ndarray
    emp_cikf_db: np.ndarray
    emp_ckf_db: np.ndarray
    runs: int
    base_seed: int
    model_hash: str
    moments: EmpiricalMoments | None = None

    @property
    def horizon(self) -> int:
        return len(self.steps)

    def to_dict(self) -> dict:
        return {
            "steps": self.steps.tolist(),
            "theory_cikf_total": self.theory_cikf_total.tolist(),
            "theory_cikf_per_agent": self.theory_cikf_per_agent.tolist(),
            "theory_ckf": self.theory_ckf.tolist(),
            "emp_cikf": self.emp_cikf.tolist(),
            "emp_cikf_total": self.emp_cikf_total.tolist(),
            "emp_ckf": self.emp_ckf.tolist(),
            "theory_cikf_db": self.theory_cikf_db.tolist(),
            "theory_ckf_db": self.theory_ckf_db.tolist(),
            "emp_cikf_db": self.emp_cikf_db.tolist(),
            "emp_ckf_db": self.emp_ckf_db.tolist(),
            "runs": self.runs,
            "base_seed": self.base_seed,
            "model_hash": self.model_hash,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MseReport":
        return cls(
            steps=np.asarray(d["steps"]),
            theory_cikf_total=np.asarray(d["theory_cikf_total"], dtype=float),
            theory_cikf_per_agent=np.asarray(d["theory_cikf_per_agent"], dtype=float),
            theory_ckf=np.asarray(d["theory_ckf"], dtype=float),
            emp_cikf=np.asarray(d["emp_cikf"], dtype=float),
            emp_cikf_total=np.asarray(d["emp_cikf_total"], dtype=float),
            emp_ckf=np.asarray(d["emp_ckf"], dtype=float),
            theory_cikf_db=np.asarray(d["theory_cikf_db"], dtype=float),
            theory_ckf_db=np.asarray(d["theory_ckf_db"], dtype=float),
            emp_cikf_db=np.asarray(d["emp_cikf_db"], dtype=float),
            emp_ckf_db=np.asarray(d["emp_ckf_db"], dtype=float),
            runs=int(d["runs"]),
            base_seed=int(d["base_seed"]),
            model_hash=d["model_hash"],
        )


# worker context for process pools; populated by the initializer before any
# run executes, inherited read-only afterwards
_CTX: dict = {}


def _mc_init(spec_dict, schedule, horizon, collect_moments):
    _CTX["spec"] = ModelSpec.from_dict(spec_dict)
    _CTX["schedule"] = schedule
    _CTX["pm"] = build_pseudo_model(_CTX["spec"])
    _CTX["ckf_pre"] = ckf_covariances(_CTX["spec"], horizon)
    _CTX["horizon"] = horizon
    _CTX["collect_moments"] = collect_moments


def _one_run(seed: int) -> dict:
    spec = _CTX["spec"]
    schedule = _CTX["schedule"]
    pm = _CTX["pm"]
    T = _CTX["horizon"]
    N, M = spec.N, spec.M

    traj = simulate_truth(spec, T, seed)
    history = cikf_run(spec, schedule, traj, pm=pm)
    central = ckf_run(spec, traj, precomputed=_CTX["ckf_pre"])

    sq_per_agent = np.zeros(T)
    sq_total = np.zeros(T)
    sq_ckf = np.zeros(T)
    out = {}
    if _CTX["collect_moments"]:
        MN = N * M
        out["pred_err"] = np.zeros((T, MN))
        out["filt_err"] = np.zeros((T, MN))

    for i in range(1, T + 1):
        err = traj.states[i][None, :] - history[i].x_pred
        sq = float(np.sum(err**2))
        sq_total[i - 1] = sq
        sq_per_agent[i - 1] = sq / N
        sq_ckf[i - 1] = float(np.sum((traj.states[i] - central.x_pred[i]) ** 2))
        if _CTX["collect_moments"]:
            out["pred_err"][i - 1] = err.reshape(-1)
            out["filt_err"][i - 1] = (
                traj.states[i - 1][None, :] - history[i - 1].x_filt
            ).reshape(-1)

    out.update(sq_per_agent=sq_per_agent, sq_total=sq_total, sq_ckf=sq_ckf)
    return out


def run_montecarlo(spec: ModelSpec, schedule: GainSchedule, runs: int,
                   horizon: int, base_seed: int, threads: int = 1,
                   collect_moments: bool = False) -> MseReport:
    """Monte-Carlo estimate of the prediction MSE against theory.

    Run k uses seed ``base_seed + k``.  ``threads`` only selects the number
    of worker processes; the report is identical for any value.
    """
    verify_schedule_matches(schedule, spec)
    if horizon < 1:
        raise ParameterError("horizon must be >= 1")
    if horizon > schedule.horizon:
        raise ConfigurationError(
            f"schedule covers {schedule.horizon} steps, requested {horizon}")
    if runs < 0:
        raise ParameterError("runs must be >= 0")

    T = horizon
    N, M = spec.N, spec.M
    MN = N * M
    _mc_init(spec.to_dict(), schedule, horizon, collect_moments)

    acc = {
        "sq_per_agent": np.zeros(T),
        "sq_total": np.zeros(T),
        "sq_ckf": np.zeros(T),
    }
    if collect_moments:
        mom = {
            "pred_err_sum": np.zeros((T, MN)),
            "pred_err_sumsq": np.zeros((T, MN)),
            "pred_outer_sum": np.zeros((T, MN, MN)),
            "pred_outer_sumsq": np.zeros((T, MN, MN)),
            "filt_err_sum": np.zeros((T, MN)),
            "filt_err_sumsq": np.zeros((T, MN)),
        }

    def _merge(res):
        acc["sq_per_agent"] += res["sq_per_agent"]
        acc["sq_total"] += res["sq_total"]
        acc["sq_ckf"] += res["sq_ckf"]
        if collect_moments:
            pe, fe = res["pred_err"], res["filt_err"]
            mom["pred_err_sum"] += pe
            mom["pred_err_sumsq"] += pe**2
            outer = np.einsum("ti,tj->tij", pe, pe)
            mom["pred_outer_sum"] += outer
            mom["pred_outer_sumsq"] += outer**2
            mom["filt_err_sum"] += fe
            mom["filt_err_sumsq"] += fe**2

    seeds = [base_seed + k for k in range(runs)]
    if threads <= 1 or runs <= 1:
        for s in seeds:
            _merge(_one_run(s))
    else:
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(
            max_workers=min(threads, runs), mp_context=ctx,
            initializer=_mc_init,
            initargs=(spec.to_dict(), schedule, horizon, collect_moments),
        ) as pool:
            chunk = max(1, runs // (threads * 4))
            for res in pool.map(_one_run, seeds, chunksize=chunk):
                _merge(res)

    if runs > 0:
        emp_cikf = acc["sq_per_agent"] / runs
        emp_total = acc["sq_total"] / runs
        emp_ckf = acc["sq_ckf"] / runs
    else:
        emp_cikf = np.full(T, np.nan)
        emp_total = np.full(T, np.nan)
        emp_ckf = np.full(T, np.nan)

    theory_total = schedule.theory_mse_total[:T]
    theory_per_agent = schedule.theory_mse_per_agent[:T]
    Sigma_pred_c, _, _ = _CTX["ckf_pre"]
    theory_ckf = np.trace(Sigma_pred_c[1:], axis1=1, axis2=2)

    moments = None
    if collect_moments:
        moments = EmpiricalMoments(runs=runs, **mom)

    return MseReport(
        steps=np.arange(1, T + 1),
        theory_cikf_total=np.array(theory_total),
        theory_cikf_per_agent=np.array(theory_per_agent),
        theory_ckf=np.array(theory_ckf),
        emp_cikf=emp_cikf,
        emp_cikf_total=emp_total,
        emp_ckf=emp_ckf,
        theory_cikf_db=to_db(theory_per_agent),
        theory_ckf_db=to_db(theory_ckf),
        emp_cikf_db=to_db(emp_cikf),
        emp_ckf_db=to_db(emp_ckf),
        runs=runs,
        base_seed=base_seed,
        model_hash=schedule.model_hash,
        moments=moments,
    )


@dataclass(frozen=True)
class ComparisonSummary:
    """Steady-state levels, gaps and convergence indices of an MSE report.

    Steady state is the mean of the last five dB values; a series has
    converged at the first index whose dB step from the previous one drops
    below 0.01.  ``provisional`` flags a horizon too short to trust the
    steady-state numbers.
    """

    theory_cikf_ss_db: float
    theory_ckf_ss_db: float
    gap_db: float
    emp_cikf_ss_db: float
    emp_ckf_ss_db: float
    emp_gap_db: float
    conv_step_theory_cikf: int | None
    conv_step_theory_ckf: int | None
    conv_step_emp_cikf: int | None
    provisional: bool

    def to_dict(self) -> dict:
        return {
            "theory_cikf_ss_db": self.theory_cikf_ss_db,
            "theory_ckf_ss_db": self.theory_ckf_ss_db,
            "gap_db": self.gap_db,
            "emp_cikf_ss_db": self.emp_cikf_ss_db,
            "emp_ckf_ss_db": self.emp_ckf_ss_db,
            "emp_gap_db": self.emp_gap_db,
            "conv_step_theory_cikf": self.conv_step_theory_cikf,
            "conv_step_theory_ckf": self.conv_step_theory_ckf,
            "conv_step_emp_cikf": self.conv_step_emp_cikf,
            "provisional": self.provisional,
        }


def _steady_state_db(db: np.ndarray) -> float:
    if len(db) == 0:
        return float("nan")
    return float(np.mean(db[-min(5, len(db)):]))


def convergence_step(db: np.ndarray, tol: float = 0.01) -> int | None:
    """First index whose dB change from the previous step is below ``tol``."""
    for i in range(1, len(db)):
        if abs(db[i] - db[i - 1]) < tol:
            return i
    return None


def mse_compare(report: MseReport) -> ComparisonSummary:
    theory_cikf_ss = _steady_state_db(report.theory_cikf_db)
    theory_ckf_ss = _steady_state_db(report.theory_ckf_db)
    emp_ok = report.runs > 0 and np.all(np.isfinite(report.emp_cikf_db))
    emp_cikf_ss = _steady_state_db(report.emp_cikf_db) if emp_ok else float("nan")
    emp_ckf_ss = _steady_state_db(report.emp_ckf_db) if emp_ok else float("nan")
    conv_theory = convergence_step(report.theory_cikf_db)
    provisional = report.horizon < 5 or conv_theory is None
    return ComparisonSummary(
        theory_cikf_ss_db=theory_cikf_ss,
        theory_ckf_ss_db=theory_ckf_ss,
        gap_db=theory_cikf_ss - theory_ckf_ss,
        emp_cikf_ss_db=emp_cikf_ss,
        emp_ckf_ss_db=emp_ckf_ss,
        emp_gap_db=emp_cikf_ss - emp_ckf_ss,
        conv_step_theory_cikf=conv_theory,
        conv_step_theory_ckf=convergence_step(report.theory_ckf_db),
        conv_step_emp_cikf=(convergence_step(report.emp_cikf_db)
                            if emp_ok else None),
        provisional=provisional,
    )


CSV_COLUMNS = [
    "step", "theory_cikf_total", "theory_cikf_per_agent", "theory_ckf",
    "emp_cikf", "emp_ckf", "theory_cikf_db", "theory_ckf_db",
    "emp_cikf_db", "emp_ckf_db",
]


def export_results(report: MseReport, path, fmt: str = "csv",
                   meta: dict | None = None) -> None:
    """Write the report as CSV (fixed column set) or JSON (all fields).

    Both formats carry a header with the run's identifying metadata.
    """
    header = {"model_hash": report.model_hash, "seed": report.base_seed,
              "runs": report.runs}
    header.update(meta or {})
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            fh.write("# " + " ".join(f"{k}={v}" for k, v in sorted(header.items()))
                     + "\n")
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for j in range(report.horizon):
                writer.writerow([
                    int(report.steps[j]),
                    repr(float(report.theory_cikf_total[j])),
                    repr(float(report.theory_cikf_per_agent[j])),
                    repr(float(report.theory_ckf[j])),
                    repr(float(report.emp_cikf[j])),
                    repr(float(report.emp_ckf[j])),
                    repr(float(report.theory_cikf_db[j])),
                    repr(float(report.theory_ckf_db[j])),
                    repr(float(report.emp_cikf_db[j])),
                    repr(float(report.emp_ckf_db[j])),
                ])
    elif fmt == "json":
        doc = {"_meta": header}
        doc.update(report.to_dict())
        with open(path, "w") as fh:
            json.dump(doc, fh)
    else:
        raise ParameterError(f"unknown export format {fmt!r}")


def load_results_json(path) -> MseReport:
    with open(path) as fh:
        doc = json.load(fh)
    return MseReport.from_dict(doc)


def plot_mse_svg(report: MseReport, path, meta: dict | None = None) -> None:
    """Self-contained SVG line chart of the dB curves."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4.5))
    x = report.steps
    ax.plot(x, report.theory_cikf_db, label="distributed, theory", color="tab:blue")
    ax.plot(x, report.theory_ckf_db, label="centralized, theory", color="tab:green")
    if report.runs > 0:
        ax.plot(x, report.emp_cikf_db, "--", label="distributed, Monte-Carlo",
                color="tab:blue")
        ax.plot(x, report.emp_ckf_db, "--", label="centralized, Monte-Carlo",
                color="tab:green")
    ax.set_xlabel("time step")
    ax.set_ylabel("prediction MSE (dB)")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    header = {"model_hash": report.model_hash, "seed": report.base_seed,
              "runs": report.runs}
    header.update(meta or {})
    fig.savefig(path, format="svg",
                metadata={"Description": json.dumps(header, sort_keys=True)})
    plt.close(fig)
