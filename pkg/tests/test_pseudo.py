import numpy as np
import pytest

import netkalman as nk
from netkalman.errors import ModelError

from conftest import small_model


def penrose_residuals(mat, dag):
    return max(
        np.abs(mat @ dag @ mat - mat).max(),
        np.abs(dag @ mat @ dag - dag).max(),
        np.abs((mat @ dag).T - mat @ dag).max(),
        np.abs((dag @ mat).T - dag @ mat).max(),
    )


class TestPinv:
    def test_diagonal(self):
        assert np.allclose(nk.pinv(np.diag([2.0, 0.0])), np.diag([0.5, 0.0]))

    def test_identity(self):
        assert np.allclose(nk.pinv(np.eye(3)), np.eye(3))

    def test_rank_deficient_psd(self):
        rng = np.random.default_rng(5)
        B = rng.standard_normal((4, 2))
        mat = B @ B.T  # rank 2 PSD
        dag = nk.pinv(mat)
        assert penrose_residuals(mat, dag) < 1e-10

    def test_rectangular(self):
        rng = np.random.default_rng(6)
        mat = rng.standard_normal((3, 5))
        dag = nk.pinv(mat)
        assert penrose_residuals(mat, dag) < 1e-10


class TestBuildPseudoModel:
    def test_fully_observed_identity_case(self):
        A = np.array([[0.3, 0.1], [0.0, 0.4]])
        spec = nk.ModelSpec(M=2, N=1, M_n=(2,), A=A, V=np.eye(2),
                            H_n=(np.eye(2),), R_n=(np.eye(2),),
                            x0_mean=np.zeros(2), Sigma0=np.eye(2),
                            adjacency=[[0.0]])
        pm = nk.build_pseudo_model(spec)
        assert np.allclose(pm.G, np.eye(2), atol=1e-12)
        assert np.allclose(pm.G_dag, np.eye(2), atol=1e-12)
        assert np.allclose(pm.I_til, 0.0, atol=1e-12)
        assert np.allclose(pm.A_til, A, atol=1e-12)
        assert np.allclose(pm.A_check, 0.0, atol=1e-12)
        assert np.allclose(pm.H_til_n[0], np.eye(2), atol=1e-12)
        assert np.allclose(pm.H_check_n[0], 0.0, atol=1e-12)

    def test_rank_deficient_two_agents(self):
        # both agents observe only coordinate 0 of a 2-d field
        H = np.array([[1.0, 0.0]])
        spec = nk.ModelSpec(M=2, N=2, M_n=(1, 1), A=0.5 * np.eye(2), V=np.eye(2),
                            H_n=(H, H), R_n=(np.eye(1), np.eye(1)),
                            x0_mean=np.zeros(2), Sigma0=np.eye(2),
                            adjacency=[[0, 1], [1, 0]])
        pm = nk.build_pseudo_model(spec)
        assert np.allclose(pm.G, np.diag([2.0, 0.0]), atol=1e-12)
        assert pm.rank_G == 1
        assert np.allclose(pm.I_til, np.diag([0.0, 1.0]), atol=1e-12)

    def test_invertible_G_gives_zero_projector(self, desk_spec):
        pm = nk.build_pseudo_model(desk_spec)
        assert np.abs(pm.I_til).max() < 1e-10
        assert np.allclose(pm.G @ pm.G_dag, np.eye(desk_spec.M), atol=1e-9)

    def test_penrose_and_projector_identities(self, small_spec):
        pm = nk.build_pseudo_model(small_spec)
        assert penrose_residuals(pm.G, pm.G_dag) < 1e-10
        assert np.abs(pm.I_til @ pm.G).max() < 1e-10
        assert np.abs(pm.I_til @ pm.I_til - pm.I_til).max() < 1e-10
        assert np.abs(pm.I_til - pm.I_til.T).max() < 1e-10

    def test_h_check_annihilated_by_projector(self, small_spec):
        # H_check_n I_til = H_check_n; moreover H_bar_n vanishes on null(G)
        # whenever R_n is SPD, so H_check_n itself is numerically zero
        pm = nk.build_pseudo_model(small_spec)
        for hc in pm.H_check_n:
            assert np.abs(hc @ pm.I_til - hc).max() < 1e-10
            assert np.abs(hc).max() < 1e-10

    def test_blockdiag_reconstruction(self, small_spec):
        pm = nk.build_pseudo_model(small_spec)
        R = small_spec.R_blockdiag
        rebuilt = pm.D_H.T @ np.linalg.solve(R, pm.D_H)
        assert np.abs(rebuilt - pm.D_bar_H).max() < 1e-10

    def test_singular_R_rejected(self):
        spec = nk.ModelSpec(M=1, N=1, M_n=(1,), A=[[1.0]], V=[[1.0]],
                            H_n=([[1.0]],), R_n=([[0.0]],), x0_mean=[0.0],
                            Sigma0=[[1.0]], adjacency=[[0.0]])
        with pytest.raises(ModelError):
            nk.build_pseudo_model(spec)


class TestTransforms:
    def test_pseudo_observation_scalar(self):
        out = nk.pseudo_observation([[1.0, 0.0]], [[4.0]], [2.0])
        assert np.allclose(out, [0.5, 0.0])

    def test_pseudo_observation_identity(self):
        z = np.array([1.0, -2.0])
        assert np.allclose(nk.pseudo_observation(np.eye(2), np.eye(2), z), z)

    def test_pseudo_observation_selector_rows(self):
        # one-per-row observation map with weights 1, 5, 6 on coordinates 0-2
        M = 8
        H = np.zeros((3, M))
        H[0, 0], H[1, 1], H[2, 2] = 1.0, 5.0, 6.0
        out = nk.pseudo_observation(H, np.eye(3), np.ones(3))
        expected = np.zeros(M)
        expected[:3] = [1.0, 5.0, 6.0]
        assert np.allclose(out, expected)

    def test_pseudo_state(self):
        assert np.allclose(nk.pseudo_state(np.eye(3), [1, 2, 3]), [1, 2, 3])
        assert np.allclose(nk.pseudo_state(np.diag([2.0, 0.0]), [1.0, 1.0]),
                           [2.0, 0.0])


class TestStateSpaceIdentities:
    """The pseudo-state dynamics/observation decompositions hold exactly
    along sampled runs, given the stored noises."""

    @pytest.mark.parametrize("seed", range(5))
    def test_dynamics_identity(self, seed):
        spec = small_model(seed=seed, a_norm=1.02)
        pm = nk.build_pseudo_model(spec)
        traj = nk.simulate_truth(spec, 10, seed)
        scale = max(np.abs(traj.states).max(), 1.0)
        for i in range(traj.horizon):
            y_i = pm.G @ traj.states[i]
            y_next = pm.A_til @ y_i + pm.G @ traj.sys_noise[i] \
                + pm.A_check @ traj.states[i]
            assert np.abs(y_next - pm.G @ traj.states[i + 1]).max() < 1e-9 * scale

    @pytest.mark.parametrize("seed", range(5))
    def test_observation_identity(self, seed):
        spec = small_model(seed=seed)
        pm = nk.build_pseudo_model(spec)
        traj = nk.simulate_truth(spec, 10, seed + 100)
        scale = max(np.abs(traj.states).max(), 1.0)
        for i in range(traj.horizon):
            y_i = pm.G @ traj.states[i]
            for n in range(spec.N):
                direct = nk.pseudo_observation(spec.H_n[n], spec.R_n[n],
                                               traj.obs[n][i])
                decomposed = (pm.H_til_n[n] @ y_i
                              + pm.Ht_Rinv_n[n] @ traj.obs_noise[n][i]
                              + pm.H_check_n[n] @ traj.states[i])
                assert np.abs(direct - decomposed).max() < 1e-9 * scale
