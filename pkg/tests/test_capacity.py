import numpy as np
import pytest

import netkalman as nk
from netkalman.capacity import (UNBOUNDED_NORM_FLOOR, noise_covariances,
                                noise_factors)
from netkalman.errors import StructureError
from netkalman.model import laplacian_spectrum



def zero_gains(M, N, neighborhoods):
    B_hat = tuple(
        np.zeros((M, (len(neighborhoods[n]) + 1) * M)) for n in range(N))
    K = tuple(np.zeros((M, M)) for _ in range(N))
    return nk.StepGains(step=0, B_hat=B_hat, K=K, neighborhoods=neighborhoods)


class TestSpectralTools:
    def test_diagonal(self):
        radius, norm = nk.spectral_tools(np.diag([0.5, -2.0]))
        assert abs(radius - 2.0) < 1e-12
        assert abs(norm - 2.0) < 1e-12

    def test_nilpotent_distinguishes_radius_from_norm(self):
        radius, norm = nk.spectral_tools(np.array([[0.0, 1.0], [0.0, 0.0]]))
        assert radius < 1e-12
        assert abs(norm - 1.0) < 1e-12

    def test_radius_bounded_by_norm(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            mat = rng.standard_normal((10, 10))
            radius, norm = nk.spectral_tools(mat)
            assert radius <= norm + 1e-9

    def test_radius_requires_square(self):
        with pytest.raises(StructureError):
            nk.spectral_radius(np.zeros((2, 3)))


class TestStabilityCheck:
    def test_zero_gains_give_dynamics_spectrum(self, desk_spec):
        # G invertible here, so A_til is similar to A and shares its spectrum
        pm = nk.build_pseudo_model(desk_spec)
        graph = laplacian_spectrum(desk_spec.adjacency)
        gains = zero_gains(desk_spec.M, desk_spec.N, graph.neighborhoods)
        report = nk.stability_check(gains, pm, desk_spec)
        rho_A = float(np.abs(np.linalg.eigvals(desk_spec.A)).max())
        assert abs(report.rho_F_til - rho_A) < 1e-8
        assert abs(report.rho_F - rho_A) < 1e-8

    def test_designed_schedule_contracts_unstable_model(self, desk_spec,
                                                        desk_schedule):
        schedule, history = desk_schedule
        pm = nk.build_pseudo_model(desk_spec)
        report = nk.stability_check(schedule.steps[-1], pm, desk_spec,
                                    cov=history[-1])
        assert np.linalg.norm(desk_spec.A, 2) > 1.0
        assert report.rho_F_til < 1.0
        assert report.rho_F < 1.0
        assert len(report.noise_norms) == 1

    def test_sufficiency_chain(self, small_spec, small_schedule):
        """rho(F_til) never exceeds ||I kron A_til|| times the contraction norm."""
        schedule, _ = small_schedule
        pm = nk.build_pseudo_model(small_spec)
        a_til_norm = np.linalg.norm(pm.A_til, 2)
        rng = np.random.default_rng(1)
        graph = laplacian_spectrum(small_spec.adjacency)
        for trial in range(5):
            # random structured gains
            B_hat = tuple(
                0.3 * rng.standard_normal(
                    (small_spec.M, (len(graph.neighborhoods[n]) + 1) * small_spec.M))
                for n in range(small_spec.N))
            K = tuple(0.3 * rng.standard_normal((small_spec.M, small_spec.M))
                      for _ in range(small_spec.N))
            gains = nk.StepGains(step=0, B_hat=B_hat, K=K,
                                 neighborhoods=graph.neighborhoods)
            report = nk.stability_check(gains, pm, small_spec)
            assert report.rho_F_til <= a_til_norm * report.contraction_norm + 1e-9


class TestNoiseCovariances:
    def test_factor_decomposition_identity(self, small_spec, small_schedule):
        """The pseudo-state error noise built from its definition equals the
        F1/F2/F3 assembly for arbitrary inputs; pins the factor algebra."""
        schedule, _ = small_schedule
        pm = nk.build_pseudo_model(small_spec)
        M, N = small_spec.M, small_spec.N
        MN = M * N
        I = np.eye(MN)
        R = small_spec.R_blockdiag
        rng = np.random.default_rng(12)
        for step in (1, 4, 8):
            g = schedule.step(step)
            B_C, B_I = g.consensus_matrix(), g.innovation_matrix()
            K_bd = g.state_gain_matrix()
            IG = np.kron(np.eye(N), pm.G)
            IA_til = np.kron(np.eye(N), pm.A_til)
            IA_check = np.kron(np.eye(N), pm.A_check)
            T = I - B_C - B_I @ pm.D_til_H
            F1, F2, F3 = noise_factors(g, pm, small_spec)

            for _ in range(5):
                eps_pred = rng.standard_normal(MN)
                e_pred = rng.standard_normal(MN)
                r_i = rng.standard_normal(R.shape[0])
                v_i = rng.standard_normal(M)
                r_term = pm.D_H.T @ np.linalg.solve(R, r_i)

                # error recursions give the filtered errors
                e_filt = T @ e_pred - B_I @ pm.D_check_H @ eps_pred - B_I @ r_term
                eps_filt = (I - K_bd @ IG) @ eps_pred + K_bd @ e_filt
                # noise by definition
                phi_def = (IA_check @ eps_filt
                           - IA_til @ B_I @ pm.D_check_H @ eps_pred
                           + np.tile(pm.G @ v_i, N)
                           - IA_til @ B_I @ r_term)
                # noise via the factor matrices
                phi_fac = (F1 @ eps_pred + F2 @ e_pred - F3 @ r_term
                           + np.tile(pm.G @ v_i, N))
                scale = max(np.abs(phi_def).max(), 1.0)
                assert np.abs(phi_def - phi_fac).max() < 1e-10 * scale

    def test_covariances_symmetric_psd(self, small_spec, small_schedule):
        schedule, history = small_schedule
        pm = nk.build_pseudo_model(small_spec)
        for step in (0, 5, 11):
            Phi_til, Phi = noise_covariances(schedule.step(step), pm,
                                             small_spec, history[step])
            for mat in (Phi_til, Phi):
                assert np.abs(mat - mat.T).max() < 1e-10
                assert np.linalg.eigvalsh(mat).min() > -1e-8 * np.linalg.norm(mat, 2)

    def test_noise_norms_bounded_along_converged_schedule(self, desk_spec,
                                                          desk_schedule):
        schedule, history = desk_schedule
        pm = nk.build_pseudo_model(desk_spec)
        report = nk.schedule_stability(schedule, pm, desk_spec, history)
        norms = np.array(report.noise_norms)
        assert np.all(np.isfinite(norms))
        # tail settles: last five values of each sequence within 5%
        for col in range(2):
            tail = norms[-5:, col]
            assert tail.max() - tail.min() <= 0.05 * tail.max()


class TestCapacityLowerBound:
    def _full_obs_spec(self, adjacency):
        N = adjacency.shape[0]
        M = 2
        return nk.ModelSpec(M=M, N=N, M_n=(M,) * N, A=0.5 * np.eye(M),
                            V=np.eye(M), H_n=(np.eye(M),) * N,
                            R_n=(np.eye(M),) * N, x0_mean=np.zeros(M),
                            Sigma0=np.eye(M), adjacency=adjacency)

    def test_complete_graph_unbounded(self):
        adj = np.ones((4, 4)) - np.eye(4)
        spec = self._full_obs_spec(adj)
        pm = nk.build_pseudo_model(spec)
        graph = laplacian_spectrum(spec.adjacency)
        est = nk.capacity_lower_bound(pm, graph, search_budget=100)
        assert est.unbounded
        assert est.achieved_norm == UNBOUNDED_NORM_FLOOR
        assert est.C_lower > 1e6

    def test_local_observability_unbounded(self):
        # sparse path graph but every agent observes everything
        adj = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)
        spec = self._full_obs_spec(adj)
        pm = nk.build_pseudo_model(spec)
        graph = laplacian_spectrum(spec.adjacency)
        est = nk.capacity_lower_bound(pm, graph, search_budget=100)
        assert est.unbounded

    def test_scalar_single_agent_unbounded(self, scalar_spec):
        pm = nk.build_pseudo_model(scalar_spec)
        graph = laplacian_spectrum(scalar_spec.adjacency)
        est = nk.capacity_lower_bound(pm, graph, search_budget=50)
        assert est.unbounded
        assert est.argmax_params["alpha"] == 1.0

    def test_bound_consistent_with_reported_gains(self, small_spec):
        pm = nk.build_pseudo_model(small_spec)
        graph = laplacian_spectrum(small_spec.adjacency)
        est = nk.capacity_lower_bound(pm, graph, search_budget=150)
        assert 0 < est.lambda_1 <= est.lambda_m
        assert est.C_lower >= est.lambda_1 / (est.lambda_m * est.achieved_norm) \
            - 1e-12

    def test_within_capacity_implies_designed_stability(self, small_spec):
        """Rescaling the dynamics below the certified bound yields a schedule
        whose final-step error transitions contract."""
        pm = nk.build_pseudo_model(small_spec)
        graph = laplacian_spectrum(small_spec.adjacency)
        est = nk.capacity_lower_bound(pm, graph, search_budget=150)
        target = 0.9 * min(est.C_lower, 1.5)
        A_scaled = small_spec.A * (target / np.linalg.norm(small_spec.A, 2))
        spec = nk.ModelSpec(M=small_spec.M, N=small_spec.N, M_n=small_spec.M_n,
                            A=A_scaled, V=small_spec.V, H_n=small_spec.H_n,
                            R_n=small_spec.R_n, x0_mean=small_spec.x0_mean,
                            Sigma0=small_spec.Sigma0,
                            adjacency=small_spec.adjacency)
        schedule, history = nk.precompute_schedule(spec, 15)
        pm2 = nk.build_pseudo_model(spec)
        report = nk.stability_check(schedule.steps[-1], pm2, spec)
        assert report.rho_F_til < 1.0
        assert report.rho_F < 1.0
