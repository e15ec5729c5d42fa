"""End-to-end engine behavior: recovery, grouping, equivariance, guards."""

import numpy as np
import pytest

from groupsbl.arrays import AngleGrid, UniformLinearArray, build_dictionary
from groupsbl.channels import (GroupScenario, ObservationSet, draw_scenario,
                               generate_pilots, observe_users,
                               synthesize_channels)
from groupsbl.metrics import nmse
from groupsbl.vbi import (Hyperparams, InferenceDivergenceError, Workspace,
                          extract_groups, init_state, reconstruct_channels,
                          run_inference)

GEOM = UniformLinearArray(16, 0.5)


def sparse_observations(seed=0, n_users=1, hot=(5,), snr_db=np.inf, n_pilots=16):
    """Observations whose truth is exactly sparse on the default grid."""
    rng = np.random.default_rng(seed)
    grid = AngleGrid.for_geometry(GEOM, 16, n_users)
    dictionary = build_dictionary(GEOM, grid, 0)
    coeffs = np.zeros((n_users, 16), dtype=complex)
    for k in range(n_users):
        for idx in hot:
            coeffs[k, idx] = np.exp(1j * rng.uniform(0, 2 * np.pi))
    channels = coeffs @ dictionary.T
    pilots = generate_pilots(n_pilots, 16, 1.0, seed=seed + 1)
    obs = observe_users(pilots, channels, snr_db, seed=seed + 2)
    return obs, channels, coeffs


class TestRecovery:
    def test_noiseless_one_sparse_exact(self):
        obs, channels, coeffs = sparse_observations(seed=1, hot=(5,))
        hyper = Hyperparams(n_groups=1, grid_size=16, init_seed=3)
        state, summary, trace = run_inference(hyper, obs, GEOM)
        assert list(summary.supports[0]) == [5]
        # least squares on the true column reproduces the channel
        assert nmse(summary.channels, channels) < 1e-6

    def test_least_squares_on_support_beats_mean_reconstruction(self):
        obs, channels, _ = sparse_observations(seed=2, hot=(3, 9), snr_db=20.0)
        hyper = Hyperparams(n_groups=1, grid_size=16, init_seed=1)
        state, summary, _ = run_inference(hyper, obs, GEOM)
        ws = Workspace(obs, GEOM, state.grid)
        rebuilt = reconstruct_channels(state, ws, summary.supports)
        np.testing.assert_allclose(rebuilt, summary.channels)
        idx = summary.supports[0]
        fit_ls = np.linalg.norm(
            obs.received[0] - ws.sensing[0][:, idx] @ np.linalg.lstsq(
                ws.sensing[0][:, idx], obs.received[0], rcond=1e-10)[0])
        fit_mean = np.linalg.norm(
            obs.received[0] - ws.sensing[0][:, idx] @ state.mean_w[0][idx])
        assert fit_ls <= fit_mean + 1e-12

    def test_identical_users_collapse_to_one_group(self):
        obs, channels, _ = sparse_observations(seed=3, hot=(4, 11), snr_db=30.0)
        stacked = ObservationSet(
            pilots=obs.pilots,
            received=np.repeat(obs.received, 4, axis=0),
            noise_variance=obs.noise_variance, snr_db=obs.snr_db)
        hyper = Hyperparams(n_groups=2, grid_size=16, init_seed=5)
        _, summary, _ = run_inference(hyper, stacked, GEOM)
        assert len(set(summary.group_labels)) == 1

    def test_individual_energy_pruned_when_truth_is_shared(self):
        scen = GroupScenario(2, 8, 3, 0, subpaths_per_cluster=1,
                             angular_spread_deg=0.0, seed=9,
                             angle_placement="on_grid", grid_size=16,
                             gain_distribution="unit_modulus")
        real = draw_scenario(scen, GEOM)
        channels = synthesize_channels(real, GEOM)
        pilots = generate_pilots(16, 16, 1.0, seed=10)
        obs = observe_users(pilots, channels, 10.0, seed=11)
        hyper = Hyperparams(n_groups=2, grid_size=16, init_seed=12)
        state, _, _ = run_inference(hyper, obs, GEOM)
        indiv = np.sum(np.abs(state.mean_stacked[:, 16:]) ** 2, axis=1)
        total = np.sum(np.abs(state.mean_w) ** 2, axis=1)
        assert np.all(indiv / total < 0.05)


class TestStoppingAndGuards:
    def test_trace_monotone_and_stop_before_cap(self):
        obs, _, _ = sparse_observations(seed=6, hot=(2, 8), snr_db=20.0)
        hyper = Hyperparams(n_groups=1, grid_size=16, init_seed=2,
                            max_iters=300, indiv_shape_rule="per_user")
        _, summary, trace = run_inference(hyper, obs, GEOM)
        assert summary.iterations < 300
        drops = np.diff(trace) < -1e-8 * np.abs(trace[:-1])
        assert not drops.any()

    def test_divergence_guard_trips_on_corrupted_step(self, monkeypatch):
        obs, _, _ = sparse_observations(seed=7, hot=(3,), snr_db=20.0)
        hyper = Hyperparams(n_groups=1, grid_size=16, init_seed=2)
        import groupsbl.vbi as vbi

        real_update = vbi.update_assignments

        def sabotage(state, hyper_):
            real_update(state, hyper_)
            state.assign_probs = np.full_like(state.assign_probs, 1.0)
            state.noise_rate *= 40.0  # breaks the alpha optimum badly

        monkeypatch.setattr(vbi, "update_assignments", sabotage)
        with pytest.raises(InferenceDivergenceError):
            run_inference(hyper, obs, GEOM)

    def test_elbo_not_tracked_when_disabled_and_unguarded(self):
        obs, _, _ = sparse_observations(seed=8, hot=(3,), snr_db=20.0)
        hyper = Hyperparams(n_groups=1, grid_size=16, init_seed=2,
                            offgrid_enabled=True, track_elbo=False,
                            max_iters=15)
        _, summary, trace = run_inference(hyper, obs, GEOM)
        assert trace.shape == (1,)
        assert summary.elbo == trace[-1]


class TestEquivariance:
    def test_user_permutation_permutes_outputs(self):
        obs, channels, _ = sparse_observations(seed=13, n_users=4,
                                               hot=(2, 9), snr_db=20.0)
        hyper = Hyperparams(n_groups=2, grid_size=16, init_seed=4, max_iters=40)
        grid = AngleGrid.for_geometry(GEOM, 16, 4)
        ws = Workspace(obs, GEOM, grid)
        start = init_state(hyper, ws)

        perm = np.array([2, 0, 3, 1])
        permuted_obs = ObservationSet(pilots=obs.pilots,
                                      received=obs.received[perm],
                                      noise_variance=obs.noise_variance,
                                      snr_db=obs.snr_db)
        permuted_start = start.copy()
        permuted_start.mean_stacked = start.mean_stacked[perm].copy()
        permuted_start.cov_stacked = start.cov_stacked[perm].copy()
        permuted_start.indiv_shape = start.indiv_shape[perm].copy()
        permuted_start.indiv_rate = start.indiv_rate[perm].copy()
        permuted_start.assign_probs = start.assign_probs[perm].copy()
        permuted_start.mean_w = start.mean_w[perm].copy()
        permuted_start.cov_w = start.cov_w[perm].copy()

        _, base, _ = run_inference(hyper, obs, GEOM,
                                   initial_state=start.copy())
        _, permed, _ = run_inference(hyper, permuted_obs, GEOM,
                                     initial_state=permuted_start)
        np.testing.assert_allclose(permed.channels, base.channels[perm],
                                   atol=1e-8)
        np.testing.assert_array_equal(permed.group_labels,
                                      base.group_labels[perm])

    def test_group_permutation_permutes_columns(self):
        obs, _, _ = sparse_observations(seed=14, n_users=4, hot=(5, 12),
                                        snr_db=20.0)
        hyper = Hyperparams(n_groups=3, grid_size=16, init_seed=6, max_iters=25)
        grid = AngleGrid.for_geometry(GEOM, 16, 4)
        ws = Workspace(obs, GEOM, grid)
        start = init_state(hyper, ws)
        perm = np.array([1, 2, 0])
        swapped = start.copy()
        swapped.assign_probs = start.assign_probs[:, perm].copy()
        swapped.shared_shape = start.shared_shape[perm].copy()
        swapped.shared_rate = start.shared_rate[perm].copy()

        state_a, _, _ = run_inference(hyper, obs, GEOM, initial_state=start.copy())
        state_b, _, _ = run_inference(hyper, obs, GEOM, initial_state=swapped)
        np.testing.assert_allclose(state_b.assign_probs,
                                   state_a.assign_probs[:, perm], atol=1e-8)
        np.testing.assert_allclose(state_b.shared_rate,
                                   state_a.shared_rate[perm], atol=1e-8)


class TestExtractionAndReconstruction:
    def test_argmax_labeling(self):
        _, _, _, _, state = __import__("conftest").small_problem(seed=30, n_users=3,
                                                                 n_groups=3)
        state.assign_probs = np.array([[0.2, 0.7, 0.1],
                                       [0.5, 0.5, 0.0],
                                       [0.1, 0.2, 0.7]])
        labels, _ = extract_groups(state)
        assert list(labels) == [2, 1, 3]  # ties resolve to the lowest index

    def test_threshold_arithmetic(self):
        _, _, _, _, state = __import__("conftest").small_problem(seed=31)
        state.mean_w[0] = np.array([1.0, 0.05])
        _, supports = extract_groups(state, threshold=0.01)
        assert list(supports[0]) == [0]  # 0.0025 < 0.01, neighbor excluded

    def test_one_hot_mean_gives_singleton_support(self):
        _, _, _, _, state = __import__("conftest").small_problem(seed=32)
        state.mean_w[0] = np.array([0.0, 3.0])
        _, supports = extract_groups(state)
        assert list(supports[0]) == [1]

    def test_all_zero_mean_flags_empty_support(self):
        hyper, obs, geom, ws, state = __import__("conftest").small_problem(seed=33)
        state.mean_w[:] = 0.0
        with pytest.warns(RuntimeWarning, match="all-zero"):
            _, supports = extract_groups(state)
        assert supports[0].size == 0
        with pytest.warns(RuntimeWarning, match="empty support"):
            channels = reconstruct_channels(state, ws, supports)
        np.testing.assert_array_equal(channels[0], 0.0)

    def test_oversized_support_falls_back_to_mean(self):
        hyper, obs, geom, ws, state = __import__("conftest").small_problem(
            seed=34, n_pilots=1, grid_size=3, n_users=1, n_antennas=4)
        state.mean_w[0] = np.array([1.0, 1.0, 1.0])
        supports = [np.array([0, 1, 2])]
        with pytest.warns(RuntimeWarning, match="larger than pilot count"):
            channels = reconstruct_channels(state, ws, supports)
        np.testing.assert_allclose(channels[0],
                                   ws.dictionaries[0] @ state.mean_w[0])

    def test_full_grid_support_equals_plain_least_squares(self):
        obs, channels, _ = sparse_observations(seed=35, hot=(1, 6), snr_db=15.0)
        hyper = Hyperparams(n_groups=1, grid_size=16, init_seed=1, max_iters=5)
        state, _, _ = run_inference(hyper, obs, GEOM)
        ws = Workspace(obs, GEOM, state.grid)
        supports = [np.arange(16)]
        rebuilt = reconstruct_channels(state, ws, supports)
        coeffs, *_ = np.linalg.lstsq(ws.sensing[0], obs.received[0], rcond=1e-10)
        np.testing.assert_allclose(rebuilt[0], ws.dictionaries[0] @ coeffs)


class TestStateExport:
    def test_snapshot_files_written(self, tmp_path):
        obs, _, _ = sparse_observations(seed=40, hot=(3,), snr_db=20.0)
        hyper = Hyperparams(n_groups=2, grid_size=16, init_seed=1, max_iters=15)
        state, _, trace = run_inference(hyper, obs, GEOM)
        from groupsbl.vbi import export_state_csv
        out = export_state_csv(state, trace, tmp_path / "snap")
        for name in ("bound_trace.csv", "shared_precision_means.csv",
                     "indiv_precision_means.csv", "assign_probs.csv"):
            assert (out / name).exists()
        lines = (out / "bound_trace.csv").read_text().strip().splitlines()
        assert len(lines) == 1 + trace.size
        probs = (out / "assign_probs.csv").read_text().strip().splitlines()
        assert len(probs) == 2  # header plus one user row
