"""Offline engine: coupled error-covariance recursions and per-step optimal
gain design for the networked filter.

The network-level error state stacks, per agent, the pseudo-state error and
the state error.  Six coupled covariance matrices (filter and prediction
forms of P, Sigma, Pi) plus the mixed cross-covariance Gamma evolve through
Lyapunov-type iterations.  At every step the minimum-MSE consensus and
innovation gains follow from the covariances of the new uncorrelated
information at each agent (a Gauss-Markov estimator), which is why the whole
schedule can be precomputed offline and shipped to the agents.

Within a step the ordering matters: the pseudo-state gains must exist before
Gamma and the filtered P, which in turn feed the state gains and the
filtered Sigma and Pi.  ``step_gains_and_filter_covariances`` implements that
four-phase contract.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, ParameterError, SequencingError
from .model import GraphSpectrum, ModelSpec, laplacian_spectrum, model_hash
from .pseudo import PseudoModel, build_pseudo_model

# Relative eigenvalue cutoff for the (possibly singular) innovation-covariance
# solves.  At step 0 all agents share the same initialization, so the
# neighbor-difference blocks are exactly zero and the pseudo-inverse solve
# yields zero consensus gains; no special casing is needed.
GAIN_SOLVE_RTOL = 1e-10


# ---------------------------------------------------------------------------
# block helpers

def _blk(mat: np.ndarray, n: int, l: int, M: int) -> np.ndarray:
    return mat[n * M : (n + 1) * M, l * M : (l + 1) * M]


def _sym(mat: np.ndarray) -> np.ndarray:
    return (mat + mat.T) / 2.0


def _bd(blocks) -> np.ndarray:
    """Dense block-diagonal matrix from equal-size square blocks."""
    M = blocks[0].shape[0]
    N = len(blocks)
    out = np.zeros((N * M, N * M))
    for n, b in enumerate(blocks):
        out[n * M : (n + 1) * M, n * M : (n + 1) * M] = b
    return out


def _kron_I_left(mat: np.ndarray, X: np.ndarray) -> np.ndarray:
    """(I_N kron mat) @ X without forming the Kronecker product."""
    M = mat.shape[1]
    N = X.shape[0] // M
    Xr = X.reshape(N, M, X.shape[1])
    return np.einsum("ij,njk->nik", mat, Xr).reshape(N * mat.shape[0], X.shape[1])


def _kron_I_right(X: np.ndarray, mat: np.ndarray) -> np.ndarray:
    """X @ (I_N kron mat)."""
    M = mat.shape[0]
    N = X.shape[1] // M
    Xr = X.reshape(X.shape[0], N, M)
    return np.einsum("kni,ij->knj", Xr, mat).reshape(X.shape[0], N * mat.shape[1])


def _tile_J(mat: np.ndarray, N: int) -> np.ndarray:
    """(1 1^T kron mat): every NxN block equals mat."""
    return np.tile(mat, (N, N))


def _psd_pinv(mat: np.ndarray, rtol: float = GAIN_SOLVE_RTOL) -> np.ndarray:
    """Pseudo-inverse of a symmetric PSD matrix via eigendecomposition."""
    eigs, vecs = np.linalg.eigh(_sym(mat))
    cutoff = rtol * max(float(eigs.max()), 0.0)
    keep = eigs > cutoff
    inv = np.where(keep, 1.0 / np.where(keep, eigs, 1.0), 0.0)
    return (vecs * inv) @ vecs.T


# ---------------------------------------------------------------------------
# domain types

@dataclass(frozen=True)
class CovarianceState:
    """The coupled error covariances at one time step.

    Prediction-stage fields are always present; ``Gamma`` and the filter-stage
    fields are filled once the step's gains have been designed.
    """

    step: int
    P_pred: np.ndarray
    Sigma_pred: np.ndarray
    Pi_pred: np.ndarray
    Gamma: np.ndarray | None = None
    P_filt: np.ndarray | None = None
    Sigma_filt: np.ndarray | None = None
    Pi_filt: np.ndarray | None = None


@dataclass(frozen=True)
class InnovationCovariances:
    """Covariances of one agent's new uncorrelated information at one step."""

    step: int
    agent: int
    Sigma_y_nu: np.ndarray      # M x (d_n+1)M cross-covariance
    Sigma_nu_til: np.ndarray    # (d_n+1)M x (d_n+1)M
    Sigma_x_nu: np.ndarray      # M x M
    Sigma_nu: np.ndarray        # M x M


@dataclass(frozen=True)
class StepGains:
    """One step of the gain schedule, stored as per-agent blocks.

    ``B_hat[n]`` holds agent n's gain blocks [B^{n l_1} ... B^{n l_d} B^{nn}]
    (neighbors in ascending order, own innovation block last); ``K[n]`` is the
    state innovation gain.  The dense network-level matrices are assembled on
    demand.
    """

    step: int
    B_hat: tuple[np.ndarray, ...]
    K: tuple[np.ndarray, ...]
    neighborhoods: tuple[tuple[int, ...], ...]

    @property
    def M(self) -> int:
        return self.K[0].shape[0]

    @property
    def N(self) -> int:
        return len(self.K)

    def consensus_matrix(self) -> np.ndarray:
        """Dense consensus gain with the Laplacian block-sparsity pattern."""
        M, N = self.M, self.N
        out = np.zeros((N * M, N * M))
        for n, nbrs in enumerate(self.neighborhoods):
            diag = np.zeros((M, M))
            for q, l in enumerate(nbrs):
                blk = self.B_hat[n][:, q * M : (q + 1) * M]
                out[n * M : (n + 1) * M, l * M : (l + 1) * M] = -blk
                diag += blk
            out[n * M : (n + 1) * M, n * M : (n + 1) * M] = diag
        return out

    def innovation_matrix(self) -> np.ndarray:
        """Dense block-diagonal pseudo-state innovation gain."""
        M = self.M
        return _bd([bh[:, -M:] for bh in self.B_hat])

    def state_gain_matrix(self) -> np.ndarray:
        """Dense block-diagonal state innovation gain."""
        return _bd(list(self.K))


@dataclass(frozen=True)
class GainSchedule:
    """Precomputed per-step gains plus the theoretical MSE trajectory."""

    model_hash: str
    M: int
    N: int
    neighborhoods: tuple[tuple[int, ...], ...]
    steps: tuple[StepGains, ...]
    theory_mse_total: np.ndarray      # trace Sigma_{i+1|i}
    theory_mse_per_agent: np.ndarray  # trace / N

    @property
    def horizon(self) -> int:
        return len(self.steps)

    def step(self, i: int) -> StepGains:
        return self.steps[i]

    def save(self, path, meta: dict | None = None) -> None:
        header = {
            "model_hash": self.model_hash,
            "M": self.M,
            "N": self.N,
            "horizon": self.horizon,
            "neighborhoods": [list(nb) for nb in self.neighborhoods],
        }
        header.update(meta or {})
        arrays = {
            "meta": np.frombuffer(json.dumps(header).encode(), dtype=np.uint8),
            "theory_mse_total": self.theory_mse_total,
            "theory_mse_per_agent": self.theory_mse_per_agent,
        }
        for g in self.steps:
            for n in range(self.N):
                arrays[f"B_{g.step:05d}_{n:05d}"] = g.B_hat[n]
                arrays[f"K_{g.step:05d}_{n:05d}"] = g.K[n]
        with open(path, "wb") as fh:
            np.savez_compressed(fh, **arrays)

    @classmethod
    def load(cls, path) -> "GainSchedule":
        with np.load(path) as data:
            header = json.loads(bytes(data["meta"]).decode())
            nbrs = tuple(tuple(int(l) for l in nb) for nb in header["neighborhoods"])
            N = int(header["N"])
            steps = []
            for i in range(int(header["horizon"])):
                B_hat = tuple(data[f"B_{i:05d}_{n:05d}"] for n in range(N))
                K = tuple(data[f"K_{i:05d}_{n:05d}"] for n in range(N))
                steps.append(StepGains(step=i, B_hat=B_hat, K=K, neighborhoods=nbrs))
            return cls(
                model_hash=header["model_hash"],
                M=int(header["M"]),
                N=N,
                neighborhoods=nbrs,
                steps=tuple(steps),
                theory_mse_total=data["theory_mse_total"],
                theory_mse_per_agent=data["theory_mse_per_agent"],
            )


def check_covariance_state(cov: CovarianceState, rtol: float = 1e-8) -> list[str]:
    """Return human-readable violations of the covariance-state invariants."""
    issues = []

    def _check_sym(name, mat):
        if mat is None:
            return
        scale = max(float(np.abs(mat).max()), 1e-300)
        if float(np.abs(mat - mat.T).max()) > rtol * scale:
            issues.append(f"{name} not symmetric at step {cov.step}")

    def _check_joint(name, P, Pi, Sigma):
        if P is None or Pi is None or Sigma is None:
            return
        joint = np.block([[P, Pi.T], [Pi, Sigma]])
        joint = _sym(joint)
        lo = float(np.linalg.eigvalsh(joint).min())
        norm = max(float(np.linalg.norm(joint, 2)), 1e-300)
        if lo < -rtol * norm:
            issues.append(
                f"joint {name} covariance indefinite at step {cov.step} "
                f"(min eig {lo:.3e}, norm {norm:.3e})"
            )

    _check_sym("P_pred", cov.P_pred)
    _check_sym("Sigma_pred", cov.Sigma_pred)
    _check_sym("P_filt", cov.P_filt)
    _check_sym("Sigma_filt", cov.Sigma_filt)
    _check_joint("prediction", cov.P_pred, cov.Pi_pred, cov.Sigma_pred)
    _check_joint("filter", cov.P_filt, cov.Pi_filt, cov.Sigma_filt)
    return issues


# ---------------------------------------------------------------------------
# covariance recursion

def init_covariances(Sigma0: np.ndarray, G: np.ndarray, N: int) -> CovarianceState:
    """Prediction covariances at step 0: every agent shares the prior."""
    GS = G @ Sigma0
    return CovarianceState(
        step=0,
        P_pred=_tile_J(_sym(GS @ G), N),
        Sigma_pred=_tile_J(np.asarray(Sigma0, dtype=float), N),
        Pi_pred=_tile_J(Sigma0 @ G, N),
    )


def _pseudo_innovation_covs(cov: CovarianceState, pm: PseudoModel,
                            nbrs: tuple[int, ...], n: int):
    """Cross-covariance and covariance of agent n's stacked new information."""
    M = pm.M
    P, Sigma, Pi = cov.P_pred, cov.Sigma_pred, cov.Pi_pred
    Ht, Hc, Hb = pm.H_til_n[n], pm.H_check_n[n], pm.H_bar_n[n]
    d = len(nbrs)
    Pnn = _blk(P, n, n, M)
    Pinn = _blk(Pi, n, n, M)

    Sigma_y_nu = np.zeros((M, (d + 1) * M))
    for q, l in enumerate(nbrs):
        Sigma_y_nu[:, q * M : (q + 1) * M] = Pnn - _blk(P, n, l, M)
    Sigma_y_nu[:, d * M :] = Pnn @ Ht.T + Pinn.T @ Hc.T

    S = np.zeros(((d + 1) * M, (d + 1) * M))
    for q in range(d + 1):
        for s in range(q, d + 1):
            if s < d:
                lq, ls = nbrs[q], nbrs[s]
                blk = (Pnn - _blk(P, n, ls, M) - _blk(P, lq, n, M)
                       + _blk(P, lq, ls, M))
            elif q < d:
                lq = nbrs[q]
                blk = ((Pnn - _blk(P, lq, n, M)) @ Ht.T
                       + (Pinn - _blk(Pi, n, lq, M)).T @ Hc.T)
            else:
                blk = (Ht @ Pnn @ Ht.T + Ht @ Pinn.T @ Hc.T
                       + Hc @ Pinn @ Ht.T + Hc @ _blk(Sigma, n, n, M) @ Hc.T
                       + Hb)
            S[q * M : (q + 1) * M, s * M : (s + 1) * M] = blk
            if s != q:
                S[s * M : (s + 1) * M, q * M : (q + 1) * M] = blk.T
    return Sigma_y_nu, _sym(S)


def _state_innovation_covs(cov: CovarianceState, pm: PseudoModel, n: int):
    """Cross-covariance and covariance of agent n's state innovation."""
    M = pm.M
    Snn = _blk(cov.Sigma_pred, n, n, M)
    Gnn = _blk(cov.Gamma, n, n, M)
    Pfnn = _blk(cov.P_filt, n, n, M)
    G = pm.G
    Sigma_x_nu = Snn @ G - Gnn
    Sigma_nu = G @ Snn @ G - G @ Gnn - Gnn.T @ G + Pfnn
    return Sigma_x_nu, _sym(Sigma_nu)


def innovation_covariances(cov: CovarianceState, pm: PseudoModel,
                           graph: GraphSpectrum, n: int) -> InnovationCovariances:
    """All four new-information covariances for agent ``n`` at ``cov.step``.

    The state-innovation pieces consume the same step's Gamma and filtered P,
    so those must already be present on ``cov``.
    """
    if cov.Gamma is None or cov.P_filt is None:
        raise SequencingError(
            "state innovation covariances need Gamma and P_filt of the same "
            "step; run the gain/filter stage first"
        )
    Sigma_y_nu, Sigma_nu_til = _pseudo_innovation_covs(
        cov, pm, graph.neighborhoods[n], n)
    Sigma_x_nu, Sigma_nu = _state_innovation_covs(cov, pm, n)
    return InnovationCovariances(
        step=cov.step, agent=n, Sigma_y_nu=Sigma_y_nu,
        Sigma_nu_til=Sigma_nu_til, Sigma_x_nu=Sigma_x_nu, Sigma_nu=Sigma_nu)


def step_gains_and_filter_covariances(
    cov: CovarianceState, pm: PseudoModel, graph: GraphSpectrum
) -> tuple[StepGains, CovarianceState]:
    """Design step-i gains and advance the covariances to their filtered form.

    Four phases: (1) per-agent pseudo-state gains from the stacked new
    information, assembled into the consensus/innovation split; (2) Gamma and
    the filtered P; (3) per-agent state gains; (4) filtered Sigma and Pi.
    """
    M, N = pm.M, pm.N
    nbrs_all = graph.neighborhoods
    I = np.eye(M * N)

    # phase 1: pseudo-state gains
    B_hat = []
    for n in range(N):
        Sigma_y_nu, Sigma_nu_til = _pseudo_innovation_covs(cov, pm, nbrs_all[n], n)
        B_hat.append(Sigma_y_nu @ _psd_pinv(Sigma_nu_til))
    gains = StepGains(step=cov.step, B_hat=tuple(B_hat),
                      K=tuple(np.zeros((M, M)) for _ in range(N)),
                      neighborhoods=nbrs_all)
    B_C = gains.consensus_matrix()
    B_I = gains.innovation_matrix()

    # phase 2: Gamma and filtered P
    T = I - B_C - B_I @ pm.D_til_H
    Gamma = cov.Pi_pred @ T.T - cov.Sigma_pred @ pm.D_check_H.T @ B_I.T
    P_filt = (T @ cov.P_pred @ T.T + B_I @ pm.D_bar_H @ B_I.T
              - T @ cov.Pi_pred.T @ pm.D_check_H.T @ B_I.T
              - B_I @ pm.D_check_H @ Gamma)
    P_filt = _sym(P_filt)
    cov = replace(cov, Gamma=Gamma, P_filt=P_filt)

    # phase 3: state gains
    K = []
    for n in range(N):
        Sigma_x_nu, Sigma_nu = _state_innovation_covs(cov, pm, n)
        K.append(Sigma_x_nu @ _psd_pinv(Sigma_nu))
    gains = replace(gains, K=tuple(K))

    # phase 4: filtered Sigma and Pi
    K_bd = gains.state_gain_matrix()
    L = I - _bd([k @ pm.G for k in K])
    Sigma_filt = (L @ cov.Sigma_pred @ L.T + K_bd @ P_filt @ K_bd.T
                  + L @ Gamma @ K_bd.T + K_bd @ Gamma.T @ L.T)
    Pi_filt = L @ Gamma + K_bd @ P_filt
    cov = replace(cov, Sigma_filt=_sym(Sigma_filt), Pi_filt=Pi_filt)
    return gains, cov


def predict_covariance_update(cov: CovarianceState, pm: PseudoModel,
                              spec: ModelSpec) -> CovarianceState:
    """Lyapunov prediction step: filtered covariances of step i to the
    prediction covariances of step i+1."""
    if cov.Sigma_filt is None or cov.P_filt is None or cov.Pi_filt is None:
        raise SequencingError("prediction update needs the filtered covariances")
    N = pm.N
    A, At, Ac, G, V = spec.A, pm.A_til, pm.A_check, pm.G, spec.V

    def lr(left, X, right_t):
        # (I kron left) @ X @ (I kron right_t^T)
        return _kron_I_left(left, _kron_I_right(X, right_t.T))

    P_next = (lr(At, cov.P_filt, At) + lr(Ac, cov.Sigma_filt, Ac)
              + _tile_J(G @ V @ G, N)
              + lr(Ac, cov.Pi_filt, At) + lr(At, cov.Pi_filt.T, Ac))
    Sigma_next = lr(A, cov.Sigma_filt, A) + _tile_J(V, N)
    Pi_next = (lr(A, cov.Pi_filt, At) + lr(A, cov.Sigma_filt, Ac)
               + _tile_J(V @ G, N))
    return CovarianceState(
        step=cov.step + 1,
        P_pred=_sym(P_next),
        Sigma_pred=_sym(Sigma_next),
        Pi_pred=Pi_next,
    )


def precompute_schedule(
    spec: ModelSpec, horizon: int, keep_covariances: bool = True
) -> tuple[GainSchedule, list[CovarianceState]]:
    """Run the offline design loop for ``horizon`` steps.

    Returns the gain schedule (with the theoretical MSE series) and the
    per-step covariance states.  With ``keep_covariances=False`` only the
    final step's state is retained, which bounds memory on large models.
    """
    if horizon < 1:
        raise ParameterError(f"horizon must be >= 1, got {horizon}")
    pm = build_pseudo_model(spec)
    graph = laplacian_spectrum(spec.adjacency)
    cov = init_covariances(spec.Sigma0, pm.G, spec.N)

    steps = []
    history: list[CovarianceState] = []
    mse_total = np.zeros(horizon)
    for i in range(horizon):
        gains, cov = step_gains_and_filter_covariances(cov, pm, graph)
        steps.append(gains)
        if keep_covariances:
            history.append(cov)
        elif i == horizon - 1:
            history = [cov]
        nxt = predict_covariance_update(cov, pm, spec)
        mse_total[i] = float(np.trace(nxt.Sigma_pred))
        cov = nxt

    schedule = GainSchedule(
        model_hash=model_hash(spec),
        M=spec.M,
        N=spec.N,
        neighborhoods=graph.neighborhoods,
        steps=tuple(steps),
        theory_mse_total=mse_total,
        theory_mse_per_agent=mse_total / spec.N,
    )
    return schedule, history


def verify_schedule_matches(schedule: GainSchedule, spec: ModelSpec) -> None:
    """Raise :class:`ConfigurationError` unless the schedule was designed
    for exactly this model."""
    h = model_hash(spec)
    if schedule.model_hash != h:
        raise ConfigurationError(
            f"gain schedule was built for model {schedule.model_hash[:12]}..., "
            f"got model {h[:12]}..."
        )
