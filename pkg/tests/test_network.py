import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from noisyrate import IntegrationDivergedError, MemoryBudgetError, SpecError, ei_network, pitchfork_network
from noisyrate import rng as nrng
from noisyrate.io import read_csv
from noisyrate.model import ModelSpec, PopulationParams, Schedule
from noisyrate.network import (
    EnsembleState,
    InitialLaw,
    SimConfig,
    discrete_moments,
    em_step,
    empirical_stats,
    full_trajectory_bytes,
    population_sizes,
    run_coupled,
    run_ensemble,
    sample_initial,
    write_stats_csv,
)


def _law(spec, mean=0.5, var=1.0):
    return InitialLaw.constant(mean, var, spec.n_pop)


class TestConfig:
    def test_validation(self):
        with pytest.raises(SpecError):
            SimConfig(n_total=0)
        with pytest.raises(SpecError):
            SimConfig(n_total=10, dt=-0.1)
        with pytest.raises(SpecError):
            SimConfig(n_total=10, dt=0.003, t_end=1.0)
        with pytest.raises(SpecError):
            SimConfig(n_total=10, record_mode="everything")
        with pytest.raises(SpecError):
            SimConfig(n_total=10, seed=-1)

    def test_large_dt_warns(self):
        with pytest.warns(UserWarning):
            SimConfig(n_total=10, dt=0.05, t_end=1.0)

    def test_record_times(self):
        sim = SimConfig(n_total=4, dt=0.01, t_end=1.0, record_every=10)
        assert sim.n_steps == 100 and sim.n_records == 11
        np.testing.assert_allclose(sim.record_times()[-1], 1.0)

    @given(st.lists(st.integers(1, 50), min_size=1, max_size=5), st.integers(0, 500))
    def test_population_sizes(self, weights, extra):
        fr = np.array(weights, float) / sum(weights)
        n = len(weights) + extra
        try:
            sizes = population_sizes(fr, n)
        except SpecError:
            # only legitimate when rounding leaves some population empty
            assert np.any(fr * n < 1.0)
            return
        assert sizes.sum() == n
        assert np.all(np.abs(sizes - fr * n) < 1.0)

    def test_population_sizes_half_split(self):
        np.testing.assert_array_equal(population_sizes([0.5, 0.5], 1000), [500, 500])


class TestDualRoute:
    @pytest.mark.parametrize("record_mode", ["full_trajectories", "population_stats", "final_state"])
    def test_kernel_matches_numpy_step(self, record_mode):
        spec = ei_network(noise=1.2)
        sim = SimConfig(n_total=37, dt=0.005, t_end=0.1, n_realizations=3, seed=9, record_mode=record_mode)
        law = _law(spec)
        run = run_ensemble(spec, sim, law)
        state = sample_initial(spec, sim, law)
        keys = nrng.stream_keys(sim.seed, sim.n_realizations)
        for s in range(sim.n_steps):
            z = np.empty((sim.n_realizations, sim.n_total))
            for r in range(sim.n_realizations):
                nrng.fill_normals(z[r], keys[r, 0], keys[r, 1], s)
            state = em_step(state, spec, sim.dt, z)
        np.testing.assert_allclose(run.final.voltages, state.voltages, atol=1e-12)

    def test_schedules_match_numpy_step(self):
        pops = (
            PopulationParams(noise=Schedule(((0.0, 0.3), (0.05, 1.5))), input=Schedule(((0.0, 0.0), (0.03, 2.0))),
                             fraction=0.4),
            PopulationParams(noise=0.8, input=-1.0, tau=0.5, gain=2.0, threshold=0.2, fraction=0.6),
        )
        spec = ModelSpec(pops, np.array([[2.0, -1.0], [1.5, -0.5]]))
        sim = SimConfig(n_total=20, dt=0.01, t_end=0.1, n_realizations=2, seed=1, record_mode="final_state")
        run = run_ensemble(spec, sim, _law(spec, 0.1, 0.2))
        state = sample_initial(spec, sim, _law(spec, 0.1, 0.2))
        keys = nrng.stream_keys(sim.seed, 2)
        for s in range(sim.n_steps):
            z = np.stack([nrng.normal_block(sim.seed, r, s, sim.n_total) for r in range(2)])
            state = em_step(state, spec, sim.dt, z)
        np.testing.assert_allclose(run.final.voltages, state.voltages, atol=1e-12)

    def test_full_mode_consistent_with_stats_mode(self):
        spec = ei_network(noise=0.8)
        base = dict(n_total=50, dt=0.01, t_end=0.5, n_realizations=2, seed=3, record_every=5)
        full = run_ensemble(spec, SimConfig(**base, record_mode="full_trajectories"), _law(spec))
        stats = run_ensemble(spec, SimConfig(**base, record_mode="population_stats"), _law(spec))
        a, b = empirical_stats(full), empirical_stats(stats)
        np.testing.assert_allclose(a.mean, b.mean, atol=1e-12)
        np.testing.assert_allclose(a.variance, b.variance, rtol=1e-10)


class TestDeterminism:
    def test_rerun_identical(self, tmp_path):
        spec = ei_network(noise=1.0)
        sim = SimConfig(n_total=200, dt=0.01, t_end=1.0, n_realizations=2, seed=42, record_every=10)
        a = run_ensemble(spec, sim, _law(spec))
        b = run_ensemble(spec, sim, _law(spec))
        np.testing.assert_array_equal(a.final.voltages, b.final.voltages)
        write_stats_csv(a, tmp_path / "a.csv", {"seed": 42})
        write_stats_csv(b, tmp_path / "b.csv", {"seed": 42})
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_thread_count_does_not_change_results(self):
        import numba

        spec = ei_network(noise=1.0)
        sim = SimConfig(n_total=64, dt=0.01, t_end=0.5, n_realizations=4, seed=5, record_mode="final_state")
        ref = run_ensemble(spec, sim, _law(spec)).final.voltages
        old = numba.get_num_threads()
        try:
            numba.set_num_threads(1)
            one = run_ensemble(spec, sim, _law(spec)).final.voltages
        finally:
            numba.set_num_threads(old)
        np.testing.assert_array_equal(ref, one)

    def test_realizations_independent_of_ensemble_size(self):
        spec = ei_network(noise=1.0)
        kw = dict(n_total=30, dt=0.01, t_end=0.3, seed=5, record_mode="final_state")
        big = run_ensemble(spec, SimConfig(**kw, n_realizations=4), _law(spec)).final.voltages
        small = run_ensemble(spec, SimConfig(**kw, n_realizations=2), _law(spec)).final.voltages
        np.testing.assert_array_equal(big[:2], small)

    def test_seed_changes_results(self):
        spec = ei_network(noise=1.0)
        kw = dict(n_total=30, dt=0.01, t_end=0.3, record_mode="final_state")
        a = run_ensemble(spec, SimConfig(**kw, seed=1), _law(spec)).final.voltages
        b = run_ensemble(spec, SimConfig(**kw, seed=2), _law(spec)).final.voltages
        assert not np.array_equal(a, b)


class TestBehaviour:
    def test_noiseless_zero_coupling_is_exponential_decay(self):
        spec = ModelSpec((PopulationParams(tau=2.0),), np.zeros((1, 1)))
        sim = SimConfig(n_total=5, dt=0.001, t_end=1.0, record_mode="final_state")
        run = run_ensemble(spec, sim, InitialLaw.constant(1.0, 0.0, 1))
        np.testing.assert_allclose(run.final.voltages, (1 - 0.001 / 2.0) ** 1000, rtol=1e-12)

    def test_initial_law(self):
        spec = ei_network()
        sim = SimConfig(n_total=20000, dt=0.01, t_end=0.0, record_mode="final_state")
        st = empirical_stats(sample_initial(spec, sim, InitialLaw(np.array([0.5, -1.0]), np.array([1.0, 4.0]))))
        np.testing.assert_allclose(st.mean, [0.5, -1.0], atol=0.05)
        np.testing.assert_allclose(st.variance, [1.0, 4.0], rtol=0.05)

    def test_divergence_detected(self):
        # explicit Euler is unstable once dt exceeds 2 tau: |1 - dt/tau| = 99
        spec = pitchfork_network(noise=1.0, tau=1e-4)
        sim = SimConfig(n_total=4, dt=0.01, t_end=5.0, record_mode="final_state")
        with pytest.raises(IntegrationDivergedError) as err:
            run_ensemble(spec, sim, InitialLaw.constant(1.0, 0.0, 1))
        assert 0 < err.value.step < sim.n_steps

    def test_numpy_step_divergence(self):
        spec = pitchfork_network(tau=1e-4)
        state = EnsembleState(np.array([[1e306, 1e306]]), np.array([0, 0]), 0.0)
        with pytest.raises(IntegrationDivergedError):
            em_step(state, spec, 1.0, np.zeros((1, 2)))

    def test_memory_cap(self):
        spec = ei_network()
        sim = SimConfig(n_total=1000, dt=0.01, t_end=1.0, record_mode="full_trajectories", memory_cap_bytes=1000)
        assert full_trajectory_bytes(sim) == 101 * 1000 * 8
        with pytest.raises(MemoryBudgetError):
            run_ensemble(spec, sim, _law(spec))

    def test_empirical_stats_needs_two_neurons(self):
        spec = ei_network()
        sim = SimConfig(n_total=2, dt=0.01, t_end=0.1, record_mode="final_state")
        run = run_ensemble(spec, sim, _law(spec))
        with pytest.raises(SpecError):
            empirical_stats(run)

    def test_pooled_variance_formula(self, rng):
        V = rng.normal(size=(3, 40))
        pop = np.repeat([0, 1], 20)
        st = empirical_stats(EnsembleState(V, pop, 0.0), pool=True)
        np.testing.assert_allclose(st.variance[0], V[:, :20].var(ddof=1))
        np.testing.assert_allclose(st.variance[1], V[:, 20:].var(ddof=1))
        per = empirical_stats(EnsembleState(V, pop, 0.0), pool=False)
        np.testing.assert_allclose(per.variance[:, 0], V[:, :20].var(axis=1, ddof=1))

    def test_stats_csv_header(self, tmp_path):
        spec = ei_network(noise=0.5)
        sim = SimConfig(n_total=20, dt=0.01, t_end=0.1, record_every=5, seed=3)
        run = run_ensemble(spec, sim, _law(spec))
        path = write_stats_csv(run, tmp_path / "s.csv", {"seed": 3})
        text = path.read_text()
        assert text.startswith("# tool: noisyrate")
        assert "# seed: 3" in text
        header, rows = read_csv(path)
        assert header == ["t", "population", "emp_mean", "emp_var"]
        assert len(rows) == sim.n_records * 2


class TestCoupling:
    def test_discrete_moments_variance_recursion(self):
        spec = pitchfork_network(noise=1.0)
        mu, v = discrete_moments(spec, InitialLaw.constant(0.5, 0.0, 1), 0.01, 200)
        a = 0.99
        expect = sum(a ** (2 * k) for k in range(200)) * 0.01
        assert v[-1, 0] == pytest.approx(expect, rel=1e-12)

    def test_no_coupling_means_no_discrepancy(self):
        spec = ModelSpec((PopulationParams(noise=1.0, input=0.3),), np.zeros((1, 1)))
        sim = SimConfig(n_total=50, dt=0.01, t_end=1.0, n_realizations=2, seed=4)
        res = run_coupled(spec, sim, InitialLaw.constant(0.2, 0.5, 1))
        assert np.max(res.sup_discrepancy) < 1e-12

    def test_discrepancy_shrinks_with_n(self):
        spec = pitchfork_network(noise=1.0)
        law = InitialLaw.constant(0.5, 0.0, 1)
        d = []
        for n in (50, 800):
            res = run_coupled(spec, SimConfig(n_total=n, dt=0.01, t_end=2.0, n_realizations=8, seed=1), law)
            d.append(res.mean_sup)
        assert d[1] < d[0] / 2
