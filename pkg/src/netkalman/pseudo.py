"""Pseudo-state algebra: the transformation layer between raw observations
and the distributed filter.

Each agent turns its measurement into the information-form pseudo-observation
z~^n = H_n^T R_n^{-1} z^n, and the network estimates the pseudo-state
y = G x, where G = sum_n H_n^T R_n^{-1} H_n aggregates all observation
information.  This module builds every derived matrix of that state-space
model (G, its pseudo-inverse, the null-space projector and the transformed
dynamics/observation maps) and exposes the two elementary transforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ModelError
from .model import ModelSpec

# Relative eigenvalue cutoff when pseudo-inverting the symmetric PSD G.
G_PINV_RTOL = 1e-12


def pinv(matrix, tol: float = 1e-12) -> np.ndarray:
    """Moore-Penrose pseudo-inverse via SVD.

    Singular values below ``tol`` times the largest are treated as zero.
    """
    mat = np.asarray(matrix, dtype=float)
    if not np.all(np.isfinite(mat)):
        raise ModelError("pinv requires finite entries")
    u, s, vt = np.linalg.svd(mat, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros_like(mat.T)
    inv = np.where(s > tol * s[0], 1.0 / np.where(s > 0, s, 1.0), 0.0)
    return (vt.T * inv) @ u.T


def _blockdiag(blocks) -> np.ndarray:
    rows = sum(b.shape[0] for b in blocks)
    cols = sum(b.shape[1] for b in blocks)
    out = np.zeros((rows, cols))
    r = c = 0
    for b in blocks:
        out[r : r + b.shape[0], c : c + b.shape[1]] = b
        r += b.shape[0]
        c += b.shape[1]
    return out


@dataclass(frozen=True)
class PseudoModel:
    """Derived pseudo-state model matrices.

    ``G`` is symmetric PSD; ``G_dag`` its pseudo-inverse; ``I_til`` the
    orthogonal projector onto null(G).  ``A_til = G A G_dag`` and
    ``A_check = G A I_til`` split the pseudo-state dynamics; ``H_til_n``,
    ``H_check_n`` and ``H_bar_n`` are the per-agent observation maps.
    ``D_*`` are the block-diagonal stacked forms used by the network-level
    recursions.
    """

    G: np.ndarray
    G_dag: np.ndarray
    I_til: np.ndarray
    A_til: np.ndarray
    A_check: np.ndarray
    H_til_n: tuple[np.ndarray, ...]
    H_check_n: tuple[np.ndarray, ...]
    H_bar_n: tuple[np.ndarray, ...]
    D_H: np.ndarray          # blockdiag{H_n}, sum(M_n) x M*N
    D_til_H: np.ndarray      # blockdiag{H_til_n}, M*N x M*N
    D_check_H: np.ndarray    # blockdiag{H_check_n}
    D_bar_H: np.ndarray      # blockdiag{H_bar_n}
    # raw dynamics and the per-agent measurement transforms H_n^T R_n^{-1},
    # retained so the online filter needs no second look at the model
    A: np.ndarray
    Ht_Rinv_n: tuple[np.ndarray, ...]

    @property
    def M(self) -> int:
        return self.G.shape[0]

    @property
    def N(self) -> int:
        return len(self.H_bar_n)

    @property
    def rank_G(self) -> int:
        eigs = np.linalg.eigvalsh(self.G)
        return int(np.sum(eigs > G_PINV_RTOL * max(eigs.max(), 0.0)))


def build_pseudo_model(spec: ModelSpec) -> PseudoModel:
    """Compute all pseudo-state matrices for a model.

    Raises :class:`ModelError` when some R_n is numerically singular.
    """
    M = spec.M
    H_bar = []
    Ht_Rinv = []
    for n, (H, R) in enumerate(zip(spec.H_n, spec.R_n)):
        try:
            htr = np.linalg.solve(R.T, H).T  # H^T R^{-1}
        except np.linalg.LinAlgError as exc:
            raise ModelError(f"R_n[{n}] is singular") from exc
        Ht_Rinv.append(htr)
        hb = htr @ H
        H_bar.append((hb + hb.T) / 2.0)

    G = np.zeros((M, M))
    for hb in H_bar:
        G = G + hb
    G = (G + G.T) / 2.0

    # G is symmetric PSD: pseudo-invert through its eigendecomposition and
    # build the range/null projectors from the same basis.
    eigs, vecs = np.linalg.eigh(G)
    cutoff = G_PINV_RTOL * max(float(eigs.max()), 0.0)
    keep = eigs > cutoff
    inv_eigs = np.where(keep, 1.0 / np.where(keep, eigs, 1.0), 0.0)
    G_dag = (vecs * inv_eigs) @ vecs.T
    range_proj = (vecs * keep.astype(float)) @ vecs.T  # G_dag @ G
    I_til = np.eye(M) - range_proj
    I_til = (I_til + I_til.T) / 2.0

    A_til = G @ spec.A @ G_dag
    A_check = G @ spec.A @ I_til
    H_til = tuple(hb @ G_dag for hb in H_bar)
    H_check = tuple(hb @ I_til for hb in H_bar)

    return PseudoModel(
        G=G,
        G_dag=G_dag,
        I_til=I_til,
        A_til=A_til,
        A_check=A_check,
        H_til_n=H_til,
        H_check_n=H_check,
        H_bar_n=tuple(H_bar),
        D_H=_blockdiag(spec.H_n),
        D_til_H=_blockdiag(H_til),
        D_check_H=_blockdiag(H_check),
        D_bar_H=_blockdiag(H_bar),
        A=np.array(spec.A),
        Ht_Rinv_n=tuple(Ht_Rinv),
    )


def pseudo_observation(H_n: np.ndarray, R_n: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Information-form transform of one measurement: H_n^T R_n^{-1} z."""
    H = np.asarray(H_n, dtype=float)
    R = np.asarray(R_n, dtype=float)
    zv = np.asarray(z, dtype=float).reshape(-1)
    if H.shape[0] != R.shape[0] or zv.shape[0] != H.shape[0]:
        raise ModelError(
            f"incompatible shapes H {H.shape}, R {R.shape}, z {zv.shape}"
        )
    try:
        return H.T @ np.linalg.solve(R, zv)
    except np.linalg.LinAlgError as exc:
        raise ModelError("R_n is singular") from exc


def pseudo_state(G: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Pseudo-state y = G x."""
    return np.asarray(G, dtype=float) @ np.asarray(x, dtype=float)
