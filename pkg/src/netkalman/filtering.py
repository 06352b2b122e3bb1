"""Online filtering: ground-truth simulation, the per-agent distributed
filter, and a centralized Kalman oracle.

A filter step is a synchronous barrier: every agent broadcasts its current
pseudo-state prediction, receives its neighbors' predictions, folds in its
own measurement, then predicts forward.  Agent ``n`` only ever reads the
estimates of its closed neighborhood; the per-agent gain blocks of the
precomputed schedule are indexed the same way.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ModelError, ParameterError
from .gains import GainSchedule, StepGains, verify_schedule_matches
from .model import ModelSpec
from .pseudo import PseudoModel, build_pseudo_model

_PSD_CLIP_TOL = 1e-12


def _psd_factor(cov: np.ndarray, name: str) -> np.ndarray:
    """Symmetric square root of a PSD matrix, clipping tiny negative eigenvalues."""
    sym = (cov + cov.T) / 2.0
    eigs, vecs = np.linalg.eigh(sym)
    floor = -_PSD_CLIP_TOL * max(float(eigs.max()), 1.0)
    if eigs.min() < floor:
        raise ModelError(f"{name} is not positive semi-definite "
                         f"(min eigenvalue {eigs.min():.3e})")
    eigs = np.clip(eigs, 0.0, None)
    return (vecs * np.sqrt(eigs)) @ vecs.T


@dataclass(frozen=True)
class Trajectory:
    """A sampled ground-truth run with its observations and raw noises.

    ``states[i]`` is x_i for i = 0..T; ``obs[n][i]`` is agent n's measurement
    of x_i for i = 0..T-1.  The sampled noises are kept so algebraic
    identities along the run can be tested exactly.
    """

    states: np.ndarray                 # (T+1, M)
    obs: tuple[np.ndarray, ...]        # per agent (T, M_n)
    sys_noise: np.ndarray              # (T, M)
    obs_noise: tuple[np.ndarray, ...]  # per agent (T, M_n)

    @property
    def horizon(self) -> int:
        return self.sys_noise.shape[0]

    def obs_at(self, i: int) -> tuple[np.ndarray, ...]:
        return tuple(z[i] for z in self.obs)


def simulate_truth(spec: ModelSpec, horizon: int, seed: int) -> Trajectory:
    """Sample one ground-truth run, deterministic in ``seed``.

    Each noise source draws from its own stream so the sequences are
    mutually independent: x0 from (seed, 0), the system noise from (seed, 1)
    and agent n's observation noise from (seed, 2, n).
    """
    if horizon < 0:
        raise ParameterError("horizon must be >= 0")
    if seed < 0:
        raise ParameterError("seed must be non-negative")
    M, N = spec.M, spec.N
    S0 = _psd_factor(spec.Sigma0, "Sigma0")
    SV = _psd_factor(spec.V, "V")
    SR = [_psd_factor(R, f"R_n[{n}]") for n, R in enumerate(spec.R_n)]

    x = spec.x0_mean + S0 @ np.random.default_rng([seed, 0]).standard_normal(M)
    v = (np.random.default_rng([seed, 1]).standard_normal((horizon, M)) @ SV.T
         if horizon else np.zeros((0, M)))
    r = tuple(
        np.random.default_rng([seed, 2, n]).standard_normal((horizon, spec.M_n[n]))
        @ SR[n].T
        if horizon else np.zeros((0, spec.M_n[n]))
        for n in range(N)
    )

    states = np.zeros((horizon + 1, M))
    states[0] = x
    obs = tuple(np.zeros((horizon, spec.M_n[n])) for n in range(N))
    for i in range(horizon):
        for n in range(N):
            obs[n][i] = spec.H_n[n] @ states[i] + r[n][i]
        states[i + 1] = spec.A @ states[i] + v[i]
    return Trajectory(states=states, obs=obs, sys_noise=v, obs_noise=r)


@dataclass
class NetworkEstimate:
    """All agents' estimates at one step.

    ``y_pred``/``x_pred`` hold the (i|i-1) predictions; the (i|i) filtered
    fields start as None and are written exactly once by the step that
    consumes the step-i observations.
    """

    step: int
    y_pred: np.ndarray            # (N, M)
    x_pred: np.ndarray            # (N, M)
    y_filt: np.ndarray | None = None
    x_filt: np.ndarray | None = None


def cikf_init(spec: ModelSpec, pm: PseudoModel) -> NetworkEstimate:
    """Every agent starts from the shared prior: x_pred = x0_mean, y_pred = G x0_mean."""
    x0 = np.tile(spec.x0_mean, (spec.N, 1))
    y0 = np.tile(pm.G @ spec.x0_mean, (spec.N, 1))
    return NetworkEstimate(step=0, y_pred=y0, x_pred=x0)


def cikf_step(est: NetworkEstimate, gains: StepGains, pm: PseudoModel,
              observations) -> NetworkEstimate:
    """One synchronous consensus+innovations update, returning step i+1.

    Per agent: the consensus term sums gain-weighted neighbor differences of
    the pseudo-state predictions, the innovation term corrects with the
    agent's own pseudo-observation, the state estimate follows from the
    filtered pseudo-state, and both are propagated one step forward.  The
    filtered fields of ``est`` are filled in place.
    """
    M, N = pm.M, pm.N
    y_pred, x_pred = est.y_pred, est.x_pred
    y_filt = np.zeros_like(y_pred)
    x_filt = np.zeros_like(x_pred)
    for n in range(N):
        B = gains.B_hat[n]
        upd = np.zeros(M)
        for q, l in enumerate(gains.neighborhoods[n]):
            upd += B[:, q * M : (q + 1) * M] @ (y_pred[l] - y_pred[n])
        z_til = pm.Ht_Rinv_n[n] @ np.asarray(observations[n], dtype=float)
        innov = z_til - (pm.H_til_n[n] @ y_pred[n] + pm.H_check_n[n] @ x_pred[n])
        y_filt[n] = y_pred[n] + upd + B[:, -M:] @ innov
        x_filt[n] = x_pred[n] + gains.K[n] @ (y_filt[n] - pm.G @ x_pred[n])

    est.y_filt = y_filt
    est.x_filt = x_filt
    y_next = y_filt @ pm.A_til.T + x_filt @ pm.A_check.T
    x_next = x_filt @ pm.A.T
    return NetworkEstimate(step=est.step + 1, y_pred=y_next, x_pred=x_next)


def cikf_run(spec: ModelSpec, schedule: GainSchedule,
             trajectory: Trajectory,
             pm: PseudoModel | None = None) -> list[NetworkEstimate]:
    """Run the distributed filter along a trajectory.

    Returns estimates for steps 0..T; entries 0..T-1 carry filtered values,
    the last entry holds only the final predictions.
    """
    verify_schedule_matches(schedule, spec)
    T = trajectory.horizon
    if schedule.horizon < T:
        raise ParameterError(
            f"schedule covers {schedule.horizon} steps, trajectory needs {T}")
    if pm is None:
        pm = build_pseudo_model(spec)
    est = cikf_init(spec, pm)
    history = [est]
    for i in range(T):
        est = cikf_step(est, schedule.step(i), pm, trajectory.obs_at(i))
        history.append(est)
    return history


@dataclass(frozen=True)
class CentralizedRun:
    """Centralized Kalman filter output over the stacked observation model."""

    x_filt: np.ndarray       # (T, M)
    x_pred: np.ndarray       # (T+1, M), x_pred[0] is the prior mean
    Sigma_filt: np.ndarray   # (T, M, M)
    Sigma_pred: np.ndarray   # (T+1, M, M)

    @property
    def pred_traces(self) -> np.ndarray:
        """trace of the prediction covariances for steps 1..T."""
        return np.trace(self.Sigma_pred[1:], axis1=1, axis2=2)

    @property
    def filt_traces(self) -> np.ndarray:
        return np.trace(self.Sigma_filt, axis1=1, axis2=2)


def ckf_covariances(spec: ModelSpec, horizon: int):
    """Riccati recursion of the centralized filter; data independent."""
    M = spec.M
    H = spec.H_stacked
    R = spec.R_blockdiag
    Sigma_pred = np.zeros((horizon + 1, M, M))
    Sigma_filt = np.zeros((horizon, M, M))
    gains = np.zeros((horizon, M, H.shape[0]))
    Sigma_pred[0] = spec.Sigma0
    I = np.eye(M)
    for i in range(horizon):
        Sp = Sigma_pred[i]
        S = H @ Sp @ H.T + R
        K = np.linalg.solve(S.T, (Sp @ H.T).T).T
        IKH = I - K @ H
        Sf = IKH @ Sp @ IKH.T + K @ R @ K.T  # Joseph form
        Sigma_filt[i] = (Sf + Sf.T) / 2.0
        Sigma_pred[i + 1] = spec.A @ Sigma_filt[i] @ spec.A.T + spec.V
        gains[i] = K
    return Sigma_pred, Sigma_filt, gains


def ckf_run(spec: ModelSpec, trajectory: Trajectory,
            precomputed=None) -> CentralizedRun:
    """Centralized Kalman filter over all agents' stacked measurements.

    ``precomputed`` may carry the output of :func:`ckf_covariances` to avoid
    repeating the data-independent Riccati recursion across Monte-Carlo runs.
    """
    T = trajectory.horizon
    M = spec.M
    H = spec.H_stacked
    if precomputed is None:
        Sigma_pred, Sigma_filt, gains = ckf_covariances(spec, T)
    else:
        Sigma_pred, Sigma_filt, gains = precomputed
        if Sigma_filt.shape[0] < T:
            raise ParameterError("precomputed covariances shorter than trajectory")
    x_pred = np.zeros((T + 1, M))
    x_filt = np.zeros((T, M))
    x_pred[0] = spec.x0_mean
    for i in range(T):
        z = np.concatenate([trajectory.obs[n][i] for n in range(spec.N)])
        x_filt[i] = x_pred[i] + gains[i] @ (z - H @ x_pred[i])
        x_pred[i + 1] = spec.A @ x_filt[i]
    return CentralizedRun(x_filt=x_filt, x_pred=x_pred,
                          Sigma_filt=Sigma_filt, Sigma_pred=Sigma_pred)


def export_estimates_csv(path, trajectory: Trajectory,
                         history: list[NetworkEstimate],
                         meta: dict | None = None) -> None:
    """Dump a run as long-format CSV: step, agent, component, value, series tag.

    Truth rows use agent -1.
    """
    with open(path, "w", newline="") as fh:
        if meta:
            fh.write("# " + " ".join(f"{k}={v}" for k, v in sorted(meta.items()))
                     + "\n")
        writer = csv.writer(fh)
        writer.writerow(["step", "agent", "component", "value", "series"])
        for i, x in enumerate(trajectory.states):
            for j, val in enumerate(x):
                writer.writerow([i, -1, j, repr(float(val)), "truth"])
        for est in history:
            series = [("x_pred", est.x_pred), ("y_pred", est.y_pred),
                      ("x_filt", est.x_filt), ("y_filt", est.y_filt)]
            for tag, arr in series:
                if arr is None:
                    continue
                for n in range(arr.shape[0]):
                    for j, val in enumerate(arr[n]):
                        writer.writerow([est.step, n, j, repr(float(val)), tag])
