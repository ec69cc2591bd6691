import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate
from scipy.special import ndtr

from noisyrate import (
    DomainError,
    ModelSpec,
    MomentState,
    PopulationParams,
    Schedule,
    SpecError,
    closure_f,
    closure_f_dmu,
    covariance,
    ei_network,
    hopf_network,
    pitchfork_network,
    sigmoid,
    stationary_variance,
    variance_trajectory,
)

finite = st.floats(-20, 20, allow_nan=False)
gains = st.floats(0.05, 10)
variances = st.floats(0, 25)


def quadrature_closure(mu, v, g, gamma):
    """E[Phi(gU + gamma)] by direct integration against the Gaussian density."""
    if v == 0:
        return float(ndtr(g * mu + gamma))
    sd = math.sqrt(v)
    dens = lambda u: math.exp(-0.5 * ((u - mu) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))
    val, _ = integrate.quad(lambda u: ndtr(g * u + gamma) * dens(u), mu - 12 * sd, mu + 12 * sd,
                            epsabs=1e-13, epsrel=1e-12, limit=200)
    return val


class TestSigmoid:
    def test_values(self):
        assert sigmoid(0.0, 1.0, 0.0) == pytest.approx(0.5, abs=1e-15)
        assert sigmoid(1.0, 2.0, -2.0) == pytest.approx(0.5, abs=1e-15)
        assert sigmoid(1.0, 1.0, 0.0) == pytest.approx(0.8413447460685429, rel=1e-14)

    def test_nonfinite_rejected(self):
        with pytest.raises(DomainError):
            sigmoid(float("nan"), 1.0, 0.0)
        with pytest.raises(DomainError):
            sigmoid(np.array([0.0, np.inf]), 1.0, 0.0)

    @given(finite, gains, st.floats(-5, 5))
    def test_symmetry(self, x, g, gamma):
        assert sigmoid(x, g, gamma) + sigmoid(-x, g, -gamma) == pytest.approx(1.0, abs=1e-12)

    def test_scalar_and_array(self):
        assert isinstance(sigmoid(0.3, 1.0, 0.0), float)
        out = sigmoid(np.array([0.0, 1.0]), 1.0, 0.0)
        assert out.shape == (2,)


class TestClosure:
    def test_zero_variance_is_sigmoid(self):
        assert closure_f(0.7, 0.0, 1.3, -0.2) == pytest.approx(sigmoid(0.7, 1.3, -0.2), abs=1e-15)

    def test_half_at_symmetric_point(self):
        assert closure_f(0.0, 3.0, 2.0, 0.0) == pytest.approx(0.5, abs=1e-15)

    @pytest.mark.parametrize(
        "mu,v,g,gamma",
        [(0.0, 1.0, 1.0, 0.0), (0.5, 0.08, 4.0, 0.3), (-2.0, 4.0, 0.7, 1.0), (3.0, 0.5, 2.5, -6.0), (1.0, 9.0, 1.0, -1.0)],
    )
    def test_against_quadrature(self, mu, v, g, gamma):
        assert closure_f(mu, v, g, gamma) == pytest.approx(quadrature_closure(mu, v, g, gamma), abs=1e-10)

    @given(finite, variances, gains, st.floats(-5, 5))
    def test_bounded(self, mu, v, g, gamma):
        f = closure_f(mu, v, g, gamma)
        assert 0.0 <= f <= 1.0

    @given(st.floats(-10, 10), st.floats(0, 10), gains)
    def test_monotone_in_mean(self, mu, v, g):
        assert closure_f(mu + 0.1, v, g, 0.0) >= closure_f(mu, v, g, 0.0)

    @given(st.floats(0.1, 10), st.floats(0, 10), gains)
    def test_noise_pulls_toward_half(self, mu, v, g):
        assert closure_f(mu, v + 1.0, g, 0.0) <= closure_f(mu, v, g, 0.0) + 1e-15

    def test_negative_variance_rejected(self):
        with pytest.raises(DomainError):
            closure_f(0.0, -1e-3, 1.0, 0.0)

    def test_monte_carlo(self, rng):
        u = rng.normal(0.4, math.sqrt(0.7), size=400_000)
        vals = ndtr(1.8 * u - 0.2)
        se = vals.std() / math.sqrt(u.size)
        assert abs(vals.mean() - closure_f(0.4, 0.7, 1.8, -0.2)) < 4 * se

    @given(st.floats(-5, 5), st.floats(0, 5), gains, st.floats(-3, 3))
    def test_derivative_matches_finite_difference(self, mu, v, g, gamma):
        h = 1e-5
        fd = (closure_f(mu + h, v, g, gamma) - closure_f(mu - h, v, g, gamma)) / (2 * h)
        assert closure_f_dmu(mu, v, g, gamma) == pytest.approx(fd, abs=1e-8)

    def test_vectorized(self):
        mu = np.linspace(-2, 2, 5)
        v = np.full(5, 0.3)
        out = closure_f(mu, v, np.ones(5), np.zeros(5))
        assert out.shape == (5,)
        assert np.all(np.diff(out) > 0)


class TestVariance:
    def test_stationary(self):
        spec = ei_network(noise=1.2)
        np.testing.assert_allclose(stationary_variance(spec), [0.72, 0.72])

    def test_limit_and_start(self):
        assert variance_trajectory(2.0, 1.5, 0.8, 0.0) == pytest.approx(2.0)
        assert variance_trajectory(2.0, 1.5, 0.8, 200.0) == pytest.approx(1.5 * 0.64 / 2, rel=1e-12)

    @given(st.floats(0, 5), st.floats(0.1, 5), st.floats(0, 3), st.floats(0, 20))
    def test_closed_form(self, v0, tau, lam, t):
        expect = v0 * math.exp(-2 * t / tau) + tau * lam**2 / 2 * (1 - math.exp(-2 * t / tau))
        assert variance_trajectory(v0, tau, lam, t) == pytest.approx(expect, rel=1e-12, abs=1e-14)

    def test_against_rk4_with_schedule(self):
        sched = Schedule(((0.0, 0.5), (1.0, 2.0), (2.5, 0.0)))
        tau, v0, T = 0.8, 0.3, 4.0

        def rhs(t, v):
            return -2 * v / tau + sched(t) ** 2

        sol = integrate.solve_ivp(rhs, (0, T), [v0], rtol=1e-12, atol=1e-14, t_eval=[0.7, 1.9, 4.0],
                                  max_step=0.01)
        for t, v in zip(sol.t, sol.y[0]):
            assert variance_trajectory(v0, tau, sched, t) == pytest.approx(v, rel=1e-8)

    def test_long_horizon_no_overflow(self):
        assert math.isfinite(variance_trajectory(1.0, 0.01, 1.0, 1e5))

    def test_negative_time_rejected(self):
        with pytest.raises(DomainError):
            variance_trajectory(1.0, 1.0, 1.0, -0.1)


class TestCovariance:
    def test_equal_times_is_variance(self):
        spec = ei_network(noise=0.9)
        C0 = np.array([[0.4, 0.1], [0.1, 0.2]])
        assert covariance(spec, 0, 0, 3.0, 3.0, C0) == pytest.approx(variance_trajectory(0.4, 1.0, 0.9, 3.0))

    def test_ou_monte_carlo(self, rng):
        # dV = -V/tau dt + lam dB, exact OU transitions
        tau, lam, v0, t1, t2 = 0.7, 1.3, 0.5, 0.6, 1.5
        n = 400_000
        x0 = rng.normal(0, math.sqrt(v0), n)

        def step(x, dt):
            a = math.exp(-dt / tau)
            return a * x + rng.normal(0, math.sqrt(tau * lam**2 / 2 * (1 - a * a)), x.size)

        x1 = step(x0, t1)
        x2 = step(x1, t2 - t1)
        spec = ModelSpec((PopulationParams(tau=tau, noise=lam),), np.array([[0.0]]))
        cov = covariance(spec, 0, 0, t1, t2, [[v0]])
        prod = (x1 - x1.mean()) * (x2 - x2.mean())
        assert abs(prod.mean() - cov) < 5 * prod.std() / math.sqrt(n)

    def test_cross_population_decays(self):
        spec = ModelSpec(
            (PopulationParams(tau=1.0, noise=1.0, fraction=0.5), PopulationParams(tau=2.0, noise=1.0, fraction=0.5)),
            np.zeros((2, 2)),
        )
        C0 = np.array([[1.0, 0.3], [0.3, 1.0]])
        assert covariance(spec, 0, 1, 1.0, 2.0, C0) == pytest.approx(0.3 * math.exp(-(1.0 + 1.0)))
        assert covariance(spec, 0, 1, 0.0, 0.0, C0) == pytest.approx(0.3)

    @given(st.floats(0, 5), st.floats(0, 5))
    def test_symmetric_in_times(self, t1, t2):
        spec = pitchfork_network(noise=0.7)
        assert covariance(spec, 0, 0, t1, t2, [[0.2]]) == pytest.approx(covariance(spec, 0, 0, t2, t1, [[0.2]]))


class TestSpec:
    def test_presets(self):
        p = pitchfork_network(J=2.0)
        assert p.n_pop == 1 and p.final_input[0] == -1.0
        h = hopf_network(J=1.5)
        np.testing.assert_allclose(h.connectivity, 1.5 * np.array([[1, -1], [1, 1]]))
        e = ei_network(j=2.0)
        np.testing.assert_allclose(e.connectivity, 2.0 * np.array([[15, -12], [16, -5]]))
        np.testing.assert_allclose(e.final_input, [0.0, -3.0])

    def test_fraction_validation(self):
        with pytest.raises(SpecError):
            ModelSpec((PopulationParams(fraction=0.6), PopulationParams(fraction=0.6)), np.zeros((2, 2)))
        with pytest.raises(SpecError):
            ModelSpec((PopulationParams(fraction=0.5),), np.zeros((1, 1)))

    def test_parameter_validation(self):
        with pytest.raises(SpecError):
            PopulationParams(tau=0.0)
        with pytest.raises(SpecError):
            PopulationParams(gain=-1.0)
        with pytest.raises(SpecError):
            PopulationParams(noise=-0.1)

    def test_connectivity_shape(self):
        with pytest.raises(SpecError):
            ModelSpec((PopulationParams(),), np.zeros((2, 2)))

    def test_connectivity_read_only(self):
        spec = ei_network()
        with pytest.raises(ValueError):
            spec.connectivity[0, 0] = 1.0

    def test_with_parameter(self):
        spec = ei_network(noise=1.0)
        assert np.all(spec.with_parameter("noise", 2.0).final_noise == 2.0)
        assert spec.with_parameter("I1", 1.5).final_input[0] == 1.5
        assert spec.with_parameter("I2", -1.0).final_input[1] == -1.0
        assert spec.with_parameter("input[0]", 0.25).final_input[0] == 0.25
        np.testing.assert_allclose(spec.with_parameter("j", 0.5).connectivity, 0.5 * spec.connectivity / 1.0)
        assert spec.with_parameter("gain", 2.0).get_parameter("gain") == 2.0
        with pytest.raises(SpecError):
            spec.with_parameter("bogus", 1.0)

    def test_json_round_trip(self, tmp_path):
        spec = ModelSpec(
            (
                PopulationParams(tau=0.5, gain=2.0, threshold=-0.1, noise=Schedule(((0.0, 0.2), (3.0, 0.9))),
                                 input=1.0, fraction=0.25),
                PopulationParams(fraction=0.75),
            ),
            np.array([[1.0, -2.0], [0.5, 0.0]]),
            label="demo",
        )
        doc = spec.to_dict()
        again = ModelSpec.from_dict(doc)
        assert again.to_dict() == doc
        path = tmp_path / "m.json"
        path.write_text(spec.to_json())
        assert ModelSpec.load(path).to_dict() == doc

    def test_schedule(self):
        s = Schedule(((0.0, 1.0), (2.0, 3.0)))
        assert s(1.999) == 1.0 and s(2.0) == 3.0
        assert not s.is_constant and s.final == 3.0
        assert list(s.segments(3.0)) == [(0.0, 2.0, 1.0), (2.0, 3.0, 3.0)]
        with pytest.raises(SpecError):
            Schedule(((1.0, 1.0),))

    def test_moment_state(self):
        with pytest.raises(DomainError):
            MomentState(0.0, np.zeros(1), np.array([-1.0]))
