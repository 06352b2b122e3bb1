"""Stability certification and tracking-capacity estimation.

The prediction errors of the networked filter evolve through two transition
matrices: F_til for the pseudo-state errors and F for the state errors.
Both must be contractions (spectral radius below one) for the MSE to stay
bounded.  How unstable the field dynamics may be while such gains still
exist is the tracking capacity; this module certifies a given gain set and
searches a structured gain family to produce a certified lower bound on the
capacity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, SequencingError, StructureError
from .gains import CovarianceState, GainSchedule, StepGains, _bd, _sym, _tile_J
from .model import GraphSpectrum, ModelSpec
from .pseudo import PseudoModel, pinv

# Achieved contraction norms below this are reported as unbounded capacity.
UNBOUNDED_NORM_FLOOR = 1e-12
# Eigenvalues of G below this (relative to the largest) count as zero.
G_EIG_RTOL = 1e-10


def spectral_radius(matrix) -> float:
    mat = np.asarray(matrix, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise StructureError("spectral radius needs a square matrix")
    return float(np.abs(np.linalg.eigvals(mat)).max())


def spectral_norm(matrix) -> float:
    mat = np.asarray(matrix, dtype=float)
    if mat.ndim != 2:
        raise StructureError("spectral norm needs a matrix")
    return float(np.linalg.norm(mat, 2))


def spectral_tools(matrix) -> tuple[float, float]:
    """(spectral radius, spectral norm) of a square matrix."""
    return spectral_radius(matrix), spectral_norm(matrix)


@dataclass(frozen=True)
class StabilityReport:
    """Contraction diagnostics for one gain set (plus optional noise norms)."""

    rho_F_til: float
    rho_F: float
    contraction_norm: float            # ||I - B_C - B_I D_til||_2
    noise_norms: tuple[tuple[float, float], ...]  # (||Phi_til||, ||Phi||) per step

    def stable(self) -> bool:
        return self.rho_F_til < 1.0 and self.rho_F < 1.0

    def to_dict(self) -> dict:
        return {
            "rho_F_til": self.rho_F_til,
            "rho_F": self.rho_F,
            "contraction_norm": self.contraction_norm,
            "stable": self.stable(),
            "noise_norms": [list(p) for p in self.noise_norms],
        }


def _error_transitions(B_C, B_I, K_bd, pm: PseudoModel):
    MN = B_C.shape[0]
    N = pm.N
    I = np.eye(MN)
    T = I - B_C - B_I @ pm.D_til_H
    F_til = np.kron(np.eye(N), pm.A_til) @ T
    F = np.kron(np.eye(N), pm.A) @ (I - K_bd @ np.kron(np.eye(N), pm.G))
    return T, F_til, F


def noise_covariances(gains: StepGains, pm: PseudoModel, spec: ModelSpec,
                      cov: CovarianceState) -> tuple[np.ndarray, np.ndarray]:
    """Covariances of the two error-process driving noises at one step.

    The pseudo-state noise decomposes over the step-i prediction errors and
    the raw model noises through three factor matrices F1, F2, F3; the state
    noise only involves the filtered pseudo-state covariance.
    """
    if cov.P_filt is None:
        raise SequencingError("noise covariances need the filtered covariances")
    N = pm.N
    MN = N * pm.M
    I = np.eye(MN)
    B_C = gains.consensus_matrix()
    B_I = gains.innovation_matrix()
    K_bd = gains.state_gain_matrix()
    IA_til = np.kron(np.eye(N), pm.A_til)
    IA_check = np.kron(np.eye(N), pm.A_check)
    IA = np.kron(np.eye(N), spec.A)
    IG = np.kron(np.eye(N), pm.G)

    T = I - B_C - B_I @ pm.D_til_H
    F1 = IA_check @ (I - K_bd @ IG - K_bd @ B_I @ pm.D_check_H) - IA_til @ B_I @ pm.D_check_H
    F2 = IA_check @ K_bd @ T
    F3 = (IA_check @ K_bd + IA_til) @ B_I

    Phi_til = (F1 @ cov.Sigma_pred @ F1.T + F2 @ cov.P_pred @ F2.T
               + F3 @ pm.D_bar_H @ F3.T + _tile_J(pm.G @ spec.V @ pm.G, N)
               + F1 @ cov.Pi_pred @ F2.T + F2 @ cov.Pi_pred.T @ F1.T)
    Phi = IA @ K_bd @ cov.P_filt @ K_bd.T @ IA.T + _tile_J(spec.V, N)
    return _sym(Phi_til), _sym(Phi)


def noise_factors(gains: StepGains, pm: PseudoModel, spec: ModelSpec):
    """The F1, F2, F3 factor matrices of the pseudo-state error noise."""
    N = pm.N
    I = np.eye(N * pm.M)
    B_C = gains.consensus_matrix()
    B_I = gains.innovation_matrix()
    K_bd = gains.state_gain_matrix()
    IA_til = np.kron(np.eye(N), pm.A_til)
    IA_check = np.kron(np.eye(N), pm.A_check)
    IG = np.kron(np.eye(N), pm.G)
    F1 = IA_check @ (I - K_bd @ IG - K_bd @ B_I @ pm.D_check_H) - IA_til @ B_I @ pm.D_check_H
    F2 = IA_check @ K_bd @ (I - B_C - B_I @ pm.D_til_H)
    F3 = (IA_check @ K_bd + IA_til) @ B_I
    return F1, F2, F3


def stability_check(gains: StepGains, pm: PseudoModel, spec: ModelSpec,
                    cov: CovarianceState | None = None) -> StabilityReport:
    """Spectral radii of the error transitions for one step's gains.

    When the step's covariances are supplied, the report also carries the
    spectral norms of the two driving-noise covariances at that step.
    """
    B_C = gains.consensus_matrix()
    B_I = gains.innovation_matrix()
    K_bd = gains.state_gain_matrix()
    T, F_til, F = _error_transitions(B_C, B_I, K_bd, pm)
    norms: tuple[tuple[float, float], ...] = ()
    if cov is not None:
        Phi_til, Phi = noise_covariances(gains, pm, spec, cov)
        norms = ((spectral_norm(Phi_til), spectral_norm(Phi)),)
    return StabilityReport(
        rho_F_til=spectral_radius(F_til),
        rho_F=spectral_radius(F),
        contraction_norm=spectral_norm(T),
        noise_norms=norms,
    )


def schedule_stability(schedule: GainSchedule, pm: PseudoModel, spec: ModelSpec,
                       history: list[CovarianceState]) -> StabilityReport:
    """Final-step stability plus per-step noise norms along a schedule.

    ``history`` may be a suffix of the schedule's steps (memory-capped runs
    keep only the final state); gains and covariances are aligned from the
    end.
    """
    final = stability_check(schedule.steps[-1], pm, spec)
    norms = []
    for gains, cov in zip(schedule.steps[-len(history):], history):
        Phi_til, Phi = noise_covariances(gains, pm, spec, cov)
        norms.append((spectral_norm(Phi_til), spectral_norm(Phi)))
    return StabilityReport(
        rho_F_til=final.rho_F_til,
        rho_F=final.rho_F,
        contraction_norm=final.contraction_norm,
        noise_norms=tuple(norms),
    )


@dataclass(frozen=True)
class CapacityEstimate:
    """Certified lower bound on the tracking capacity.

    ``achieved_norm`` is clamped from below at the unbounded-report floor so
    that C_lower always equals lambda_1 / (lambda_m * achieved_norm);
    ``unbounded`` flags that the true norm fell below the floor.
    """

    C_lower: float
    lambda_1: float
    lambda_m: float
    achieved_norm: float
    argmax_params: dict
    unbounded: bool

    def to_dict(self) -> dict:
        return {
            "C_lower": self.C_lower,
            "lambda_1": self.lambda_1,
            "lambda_m": self.lambda_m,
            "achieved_norm": self.achieved_norm,
            "argmax_params": dict(self.argmax_params),
            "unbounded": self.unbounded,
        }


def _structured_norm(pm: PseudoModel, graph: GraphSpectrum, alpha: float,
                     beta: float, B_I_scalings) -> float:
    N, M = pm.N, pm.M
    B_C = beta * np.kron(graph.laplacian, np.eye(M))
    B_I = _bd([alpha * s for s in B_I_scalings])
    return spectral_norm(np.eye(N * M) - B_C - B_I @ pm.D_til_H)


def capacity_lower_bound(pm: PseudoModel, graph: GraphSpectrum,
                         search_budget: int = 200,
                         seed: int = 0) -> CapacityEstimate:
    """Search a structured gain family for the best capacity bound.

    The family sets the consensus gain to beta * (L kron I) and the
    innovation gain to alpha times a per-agent scaling conformal with the
    pseudo-observation map (its pseudo-inverse).  A grid over (alpha, beta)
    consumes most of the budget; any remainder funds random per-agent block
    perturbations around the best grid point.  The result is a certified
    lower bound on the capacity, never the exact maximum.
    """
    if search_budget < 1:
        raise ParameterError("search_budget must be >= 1")
    eigs_G = np.linalg.eigvalsh(pm.G)
    top = float(eigs_G.max())
    if top <= 0.0:
        raise ParameterError("G must be nonzero")
    nonzero = eigs_G[eigs_G > G_EIG_RTOL * top]
    lam1 = float(nonzero.min())
    lam_m = float(nonzero.max())

    scalings = [pinv(h) for h in pm.H_til_n]
    lam_L = float(graph.eigenvalues[-1])
    beta_hi = 2.0 / lam_L if lam_L > 0 else 0.0

    grid_budget = max(1, int(search_budget * 0.8))
    k = max(1, int(np.sqrt(grid_budget)))
    # alpha = 1 cancels the innovation map exactly under local observability,
    # so it always belongs on the grid
    alphas = np.unique(np.concatenate([[0.0, 1.0], np.linspace(0.0, 2.0, k)]))
    betas = np.linspace(0.0, beta_hi, k) if beta_hi > 0 else np.array([0.0])

    best = (np.inf, 0.0, 0.0)
    evals = 0
    for a in alphas:
        for b in betas:
            norm = _structured_norm(pm, graph, a, b, scalings)
            evals += 1
            if norm < best[0]:
                best = (norm, float(a), float(b))
    best_norm, best_a, best_b = best
    refined = False

    # random block refinement with whatever budget remains
    remaining = search_budget - evals
    if remaining > 0 and best_norm > UNBOUNDED_NORM_FLOOR:
        rng = np.random.default_rng(seed)
        N, M = pm.N, pm.M
        I = np.eye(N * M)
        L_kron = np.kron(graph.laplacian, np.eye(M))
        base = best_b * L_kron + _bd([best_a * s for s in scalings]) @ pm.D_til_H
        current = spectral_norm(I - base)
        step = 0.05 * max(best_a, best_b, 1.0)
        for _ in range(remaining):
            n = int(rng.integers(N))
            # perturb agent n's innovation gain block; only the (n, n) block
            # of B_I @ D_til moves, so the structure is preserved
            delta = np.zeros((N * M, N * M))
            pert = step * rng.standard_normal((M, M))
            delta[n * M:(n + 1) * M, n * M:(n + 1) * M] = pert @ pm.H_til_n[n]
            cand = spectral_norm(I - base - delta)
            if cand < current:
                base = base + delta
                current = cand
                refined = True
        if current < best_norm:
            best_norm = current

    clamped = max(best_norm, UNBOUNDED_NORM_FLOOR)
    return CapacityEstimate(
        C_lower=lam1 / (lam_m * clamped),
        lambda_1=lam1,
        lambda_m=lam_m,
        achieved_norm=clamped,
        argmax_params={"alpha": best_a, "beta": best_b, "refined": refined},
        unbounded=best_norm < UNBOUNDED_NORM_FLOOR,
    )
