import numpy as np
import pytest

import netkalman as nk

# frozen generator seeds; see test_model for the spectrum band they pin
DESK_SEED = 0
PAPER_SEED = 0
ACCEPT_SEED = 0

ACCEPT_PARAMS = dict(M=6, N=4, M_n=2, a_norm=1.05, v_norm=4.0, r_norm=8.0,
                     sigma0_norm=16.0, edges=4, dyn_degree=2)


def scalar_model(a=0.9, v=0.25, r=1.0, sigma0=1.0):
    return nk.ModelSpec(M=1, N=1, M_n=(1,), A=[[a]], V=[[v]], H_n=([[1.0]],),
                        R_n=([[r]],), x0_mean=[0.0], Sigma0=[[sigma0]],
                        adjacency=[[0.0]])


def small_model(seed=42, a_norm=0.9):
    """M=4, N=3 path graph; each agent sees one coordinate, one unseen (G singular)."""
    rng = np.random.default_rng(seed)
    M, N = 4, 3
    A = rng.standard_normal((M, M))
    A *= a_norm / np.linalg.norm(A, 2)
    H_n = tuple(np.eye(M)[[n]] for n in range(N))
    R_n = tuple(np.array([[1.0 + 0.5 * n]]) for n in range(N))
    adj = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)
    return nk.ModelSpec(M=M, N=N, M_n=(1, 1, 1), A=A, V=nk.random_spd(M, 0.5, 1),
                        H_n=H_n, R_n=R_n, x0_mean=rng.standard_normal(M),
                        Sigma0=nk.random_spd(M, 1.0, 2), adjacency=adj)


@pytest.fixture(scope="session")
def scalar_spec():
    return scalar_model()


@pytest.fixture(scope="session")
def small_spec():
    return small_model()


@pytest.fixture(scope="session")
def small_schedule(small_spec):
    return nk.precompute_schedule(small_spec, 12)


@pytest.fixture(scope="session")
def desk_spec():
    from netkalman.model import PRESETS
    return nk.generate_paper_model(PRESETS["desk"], DESK_SEED)


@pytest.fixture(scope="session")
def desk_schedule(desk_spec):
    return nk.precompute_schedule(desk_spec, 30)
