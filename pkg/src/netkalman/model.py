"""Model layer: dynamics/observation/communication model and its generators.

A model couples a linear time-invariant random field x_{i+1} = A x_i + v_i
with per-agent linear observations z^n_i = H_n x_i + r^n_i and a simple
undirected communication graph between the N agents.  This module defines
the immutable :class:`ModelSpec`, validates the modeling assumptions the
estimator relies on, and provides seeded generators for benchmark models.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import networkx as nx
import numpy as np

from .errors import GenerationError, ModelError, ParameterError, StructureError

# Eigenvalues of the graph Laplacian below this are treated as zero.
CONNECTIVITY_TOL = 1e-9
# Relative singular-value cutoff for the detectability rank test.
DETECTABILITY_RTOL = 1e-8

_CONNECTIVITY_RETRIES = 1000


def _as_matrix(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 2:
        raise StructureError(f"{name} must be a 2-d matrix, got ndim={arr.ndim}")
    return arr


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ModelSpec:
    """Immutable physical + cyber model.

    Fields mirror the serialized file format: state dimension ``M``, agent
    count ``N``, per-agent observation dimensions ``M_n``, dynamics ``A``,
    system-noise covariance ``V``, observation maps ``H_n``, observation-noise
    covariances ``R_n``, initial mean ``x0_mean``, initial covariance
    ``Sigma0`` and the 0/1 ``adjacency`` of the communication graph.
    """

    M: int
    N: int
    M_n: tuple[int, ...]
    A: np.ndarray
    V: np.ndarray
    H_n: tuple[np.ndarray, ...]
    R_n: tuple[np.ndarray, ...]
    x0_mean: np.ndarray
    Sigma0: np.ndarray
    adjacency: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "M", int(self.M))
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "M_n", tuple(int(m) for m in self.M_n))
        object.__setattr__(self, "A", _freeze(_as_matrix(self.A, "A")))
        object.__setattr__(self, "V", _freeze(_as_matrix(self.V, "V")))
        object.__setattr__(
            self, "H_n", tuple(_freeze(_as_matrix(h, "H_n")) for h in self.H_n)
        )
        object.__setattr__(
            self, "R_n", tuple(_freeze(_as_matrix(r, "R_n")) for r in self.R_n)
        )
        x0 = np.asarray(self.x0_mean, dtype=float).reshape(-1)
        object.__setattr__(self, "x0_mean", _freeze(x0))
        object.__setattr__(self, "Sigma0", _freeze(_as_matrix(self.Sigma0, "Sigma0")))
        object.__setattr__(
            self, "adjacency", _freeze(_as_matrix(self.adjacency, "adjacency"))
        )
        self._check_structure()

    def _check_structure(self):
        M, N = self.M, self.N
        if M < 1 or N < 1:
            raise StructureError("M and N must be positive")
        if len(self.M_n) != N or len(self.H_n) != N or len(self.R_n) != N:
            raise StructureError("M_n, H_n, R_n must all have one entry per agent")
        for name, mat in (("A", self.A), ("V", self.V), ("Sigma0", self.Sigma0)):
            if mat.shape != (M, M):
                raise StructureError(f"{name} must be {M}x{M}, got {mat.shape}")
        if self.x0_mean.shape != (M,):
            raise StructureError(f"x0_mean must have length {M}")
        for n, (mn, H, R) in enumerate(zip(self.M_n, self.H_n, self.R_n)):
            if H.shape != (mn, M):
                raise StructureError(f"H_n[{n}] must be {mn}x{M}, got {H.shape}")
            if R.shape != (mn, mn):
                raise StructureError(f"R_n[{n}] must be {mn}x{mn}, got {R.shape}")
        adj = self.adjacency
        if adj.shape != (N, N):
            raise StructureError(f"adjacency must be {N}x{N}, got {adj.shape}")
        if not np.array_equal(adj, adj.T):
            raise StructureError("adjacency must be symmetric")
        if np.any(np.diag(adj) != 0):
            raise StructureError("adjacency must have a zero diagonal")
        if not np.all((adj == 0) | (adj == 1)):
            raise StructureError("adjacency entries must be 0 or 1")

    @property
    def H_stacked(self) -> np.ndarray:
        """All observation maps stacked row-wise (sum(M_n) x M)."""
        return np.vstack(self.H_n)

    @property
    def R_blockdiag(self) -> np.ndarray:
        """Block-diagonal observation-noise covariance of the stacked model."""
        total = sum(self.M_n)
        out = np.zeros((total, total))
        ofs = 0
        for R in self.R_n:
            k = R.shape[0]
            out[ofs : ofs + k, ofs : ofs + k] = R
            ofs += k
        return out

    def to_dict(self) -> dict:
        return {
            "M": self.M,
            "N": self.N,
            "M_n": list(self.M_n),
            "A": self.A.tolist(),
            "V": self.V.tolist(),
            "H_n": [h.tolist() for h in self.H_n],
            "R_n": [r.tolist() for r in self.R_n],
            "x0_mean": self.x0_mean.tolist(),
            "Sigma0": self.Sigma0.tolist(),
            "adjacency": self.adjacency.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            M=d["M"],
            N=d["N"],
            M_n=tuple(d["M_n"]),
            A=np.asarray(d["A"]),
            V=np.asarray(d["V"]),
            H_n=tuple(np.asarray(h) for h in d["H_n"]),
            R_n=tuple(np.asarray(r) for r in d["R_n"]),
            x0_mean=np.asarray(d["x0_mean"]),
            Sigma0=np.asarray(d["Sigma0"]),
            adjacency=np.asarray(d["adjacency"]),
        )


@dataclass(frozen=True)
class GraphSpectrum:
    """Laplacian spectrum and neighborhood structure of the agent graph."""

    laplacian: np.ndarray
    eigenvalues: np.ndarray  # ascending
    neighborhoods: tuple[tuple[int, ...], ...]  # open neighborhoods, self excluded
    degrees: tuple[int, ...]

    @property
    def algebraic_connectivity(self) -> float:
        return float(self.eigenvalues[1]) if len(self.eigenvalues) > 1 else 0.0


@dataclass(frozen=True)
class AssumptionCheck:
    name: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    """Per-assumption pass/fail flags plus diagnostics."""

    checks: tuple[AssumptionCheck, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> tuple[AssumptionCheck, ...]:
        return tuple(c for c in self.checks if not c.passed)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": [
                {"name": c.name, "passed": c.passed, "detail": c.detail}
                for c in self.checks
            ],
        }


def laplacian_spectrum(adjacency) -> GraphSpectrum:
    """Laplacian L = D - adjacency with ascending eigenvalues and neighborhoods."""
    adj = _as_matrix(adjacency, "adjacency")
    if adj.shape[0] != adj.shape[1]:
        raise StructureError("adjacency must be square")
    if not np.array_equal(adj, adj.T):
        raise StructureError("adjacency must be symmetric")
    if np.any(np.diag(adj) != 0):
        raise StructureError("adjacency must have a zero diagonal")
    degrees = adj.sum(axis=1)
    lap = np.diag(degrees) - adj
    eigenvalues = np.linalg.eigvalsh(lap)
    neighborhoods = tuple(
        tuple(int(l) for l in np.flatnonzero(adj[n]) if l != n)
        for n in range(adj.shape[0])
    )
    return GraphSpectrum(
        laplacian=_freeze(lap),
        eigenvalues=_freeze(np.sort(eigenvalues)),
        neighborhoods=neighborhoods,
        degrees=tuple(int(d) for d in degrees),
    )


def _min_eig(mat: np.ndarray) -> float:
    return float(np.linalg.eigvalsh((mat + mat.T) / 2.0).min())


def _is_spd(mat: np.ndarray, scale_tol: float = 1e-12) -> bool:
    lo = _min_eig(mat)
    return lo > scale_tol * max(1.0, float(np.abs(mat).max()))


def _is_psd(mat: np.ndarray, scale_tol: float = 1e-10) -> bool:
    lo = _min_eig(mat)
    return lo >= -scale_tol * max(1.0, float(np.abs(mat).max()))


def detectability_check(A: np.ndarray, H: np.ndarray,
                        rtol: float = DETECTABILITY_RTOL) -> tuple[bool, str]:
    """Rank test for detectability of the pair (A, H).

    For every eigenvalue lam of A with |lam| >= 1 the stacked matrix
    [A - lam*I; H] must have full column rank (numerical rank with a cutoff
    relative to the largest singular value).
    """
    M = A.shape[0]
    eigs = np.linalg.eigvals(A)
    for lam in eigs:
        if abs(lam) < 1.0:
            continue
        stacked = np.vstack([A - lam * np.eye(M), H.astype(complex)])
        s = np.linalg.svd(stacked, compute_uv=False)
        rank = int(np.sum(s > rtol * s[0]))
        if rank < M:
            return False, (
                f"mode with |eigenvalue|={abs(lam):.6g} unobservable "
                f"(rank {rank} < {M})"
            )
    return True, "all unstable modes observable"


def validate_model(spec: ModelSpec) -> ValidationReport:
    """Check the modeling assumptions and report pass/fail per assumption.

    Structural problems (wrong shapes) raise :class:`StructureError` when the
    ModelSpec is built; assumption failures are report entries, not errors.
    """
    checks = []

    bad = [n for n, R in enumerate(spec.R_n) if not _is_spd(R)]
    psd_bad = [name for name, mat in (("V", spec.V), ("Sigma0", spec.Sigma0))
               if not _is_psd(mat)]
    ok = not bad and not psd_bad
    detail = "R_n SPD, V and Sigma0 PSD" if ok else (
        f"non-SPD R_n at agents {bad}; non-PSD: {psd_bad}"
    )
    checks.append(AssumptionCheck("Assumption 1 (Gaussian model)", ok, detail))

    checks.append(AssumptionCheck(
        "Assumption 2 (uncorrelated sequences)", True,
        "holds by construction of the noise generators"))
    checks.append(AssumptionCheck(
        "Assumption 3 (prior information)", True,
        "all agents share the ModelSpec"))

    ok, detail = detectability_check(spec.A, spec.H_stacked)
    checks.append(AssumptionCheck("Assumption 4 (global detectability)", ok, detail))

    spectrum = laplacian_spectrum(spec.adjacency)
    lam2 = spectrum.algebraic_connectivity
    ok = lam2 > CONNECTIVITY_TOL
    checks.append(AssumptionCheck(
        "Assumption 5 (connectivity)", ok, f"lambda_2(L) = {lam2:.6g}"))

    return ValidationReport(checks=tuple(checks))


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def random_spd(dim: int, spectral_norm: float, seed) -> np.ndarray:
    """Random symmetric positive-definite matrix with the given largest eigenvalue.

    Built as Q diag(u) Q^T with a random orthogonal Q and u uniform on
    (0.1, 1), then rescaled so the top eigenvalue equals ``spectral_norm``.
    """
    if dim < 1:
        raise ParameterError(f"dim must be >= 1, got {dim}")
    if spectral_norm <= 0:
        raise ParameterError(f"spectral_norm must be > 0, got {spectral_norm}")
    rng = _rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    eigs = rng.uniform(0.1, 1.0, size=dim)
    eigs *= spectral_norm / eigs.max()
    mat = (q * eigs) @ q.T
    return (mat + mat.T) / 2.0


def _erdos_renyi_exact(N: int, edges: int, rng: np.random.Generator) -> np.ndarray:
    """Connected simple graph with exactly ``edges`` edges, uniform over subsets."""
    max_edges = N * (N - 1) // 2
    if edges > max_edges:
        raise ParameterError(f"edges={edges} exceeds maximum {max_edges} for N={N}")
    if edges < N - 1:
        raise ParameterError(f"edges={edges} below N-1={N - 1}; graph cannot connect")
    pairs = [(i, j) for i in range(N) for j in range(i + 1, N)]
    for _ in range(_CONNECTIVITY_RETRIES):
        chosen = rng.choice(len(pairs), size=edges, replace=False)
        adj = np.zeros((N, N))
        for k in chosen:
            i, j = pairs[int(k)]
            adj[i, j] = adj[j, i] = 1.0
        lam2 = laplacian_spectrum(adj).algebraic_connectivity
        if lam2 > CONNECTIVITY_TOL:
            return adj
    raise GenerationError(
        f"no connected graph with N={N}, edges={edges} found in "
        f"{_CONNECTIVITY_RETRIES} attempts"
    )


def _regular_sparsity_dynamics(M: int, degree: int, a_norm: float,
                               rng: np.random.Generator) -> np.ndarray:
    """Dynamics matrix with a random regular-degree coupling pattern.

    Nonzero entries sit on the edges of a random ``degree``-regular graph,
    drawn uniform(0, 1) independently per direction, then globally rescaled
    so the spectral norm equals ``a_norm``.
    """
    if degree >= M:
        raise ParameterError(f"dyn_degree={degree} must be < M={M}")
    if (M * degree) % 2 != 0:
        raise ParameterError(f"M*dyn_degree must be even, got M={M}, degree={degree}")
    pattern_seed = int(rng.integers(2**32))
    g = nx.random_regular_graph(degree, M, seed=pattern_seed)
    A = np.zeros((M, M))
    for i, j in sorted(g.edges()):
        A[i, j] = rng.uniform(0.0, 1.0)
        A[j, i] = rng.uniform(0.0, 1.0)
    norm = np.linalg.norm(A, 2)
    if norm == 0:
        raise GenerationError("degenerate all-zero dynamics pattern")
    return A * (a_norm / norm)


def _observation_maps(M: int, M_n: tuple[int, ...],
                      rng: np.random.Generator) -> tuple[np.ndarray, ...]:
    """0-1 selector matrices, one site per row, stacked coverage as even as possible."""
    total = sum(M_n)
    H_list = []
    if total >= M:
        perm = rng.permutation(M)
        sites = [int(perm[t % M]) for t in range(total)]
        ofs = 0
        for mn in M_n:
            H = np.zeros((mn, M))
            for r in range(mn):
                H[r, sites[ofs + r]] = 1.0
            H_list.append(H)
            ofs += mn
    else:
        for mn in M_n:
            chosen = rng.choice(M, size=mn, replace=False)
            H = np.zeros((mn, M))
            for r, site in enumerate(chosen):
                H[r, int(site)] = 1.0
            H_list.append(H)
    return tuple(H_list)


def generate_paper_model(params: dict, seed) -> ModelSpec:
    """Generate a benchmark model from the standard parameter set.

    ``params`` keys: M, N, M_n (int or per-agent list), a_norm, v_norm,
    r_norm, sigma0_norm, edges, dyn_degree.  Generation is a pure function
    of (params, seed).
    """
    rng = _rng(seed)
    M = int(params["M"])
    N = int(params["N"])
    mn = params["M_n"]
    M_n = tuple(int(m) for m in (mn if np.iterable(mn) else [mn] * N))
    if len(M_n) != N:
        raise ParameterError("M_n must be a scalar or have one entry per agent")
    if any(m > M or m < 1 for m in M_n):
        raise ParameterError("each M_n must satisfy 1 <= M_n <= M")

    A = _regular_sparsity_dynamics(M, int(params["dyn_degree"]),
                                   float(params["a_norm"]), rng)
    H_n = _observation_maps(M, M_n, rng)
    V = random_spd(M, float(params["v_norm"]), rng)
    R_n = tuple(random_spd(m, float(params["r_norm"]), rng) for m in M_n)
    Sigma0 = random_spd(M, float(params["sigma0_norm"]), rng)
    x0_mean = rng.standard_normal(M)
    adjacency = _erdos_renyi_exact(N, int(params["edges"]), rng)

    return ModelSpec(M=M, N=N, M_n=M_n, A=A, V=V, H_n=H_n, R_n=R_n,
                     x0_mean=x0_mean, Sigma0=Sigma0, adjacency=adjacency)


PRESETS = {
    # Full-size benchmark model.
    "paper": {"M": 50, "N": 50, "M_n": 2, "a_norm": 1.05, "v_norm": 4.0,
              "r_norm": 8.0, "sigma0_norm": 16.0, "edges": 138, "dyn_degree": 4},
    # Small model with the same norm targets; minutes instead of hours.
    "desk": {"M": 10, "N": 10, "M_n": 2, "a_norm": 1.05, "v_norm": 4.0,
             "r_norm": 8.0, "sigma0_norm": 16.0, "edges": 25, "dyn_degree": 4},
}


def model_hash(spec: ModelSpec) -> str:
    """Stable content hash of a model, used to pair schedules with models."""
    payload = json.dumps(spec.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()


def save_model(spec: ModelSpec, path, meta: dict | None = None) -> None:
    """Write the model as JSON with field names matching ModelSpec."""
    doc = spec.to_dict()
    doc["_meta"] = dict(meta or {})
    doc["_meta"]["model_hash"] = model_hash(spec)
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_model(path) -> ModelSpec:
    with open(path) as fh:
        doc = json.load(fh)
    try:
        return ModelSpec.from_dict(doc)
    except KeyError as exc:
        raise ModelError(f"model file {path} is missing field {exc}") from exc
