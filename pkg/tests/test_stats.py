import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats as sps

from noisyrate.errors import DomainError
from noisyrate.io import read_csv
from noisyrate.stats import (
    convergence_rate,
    independence_test,
    kolmogorov_critical,
    kolmogorov_sf,
    ks_gaussian_test,
    ks_statistic,
    power_spectrum,
    write_spectrum_csv,
)


class TestSpectrum:
    @given(st.integers(16, 300), st.sampled_from(["hann", "rect"]), st.integers(0, 2**32 - 1))
    def test_parseval(self, n, window, seed):
        x = np.random.default_rng(seed).normal(size=n)
        sp = power_spectrum(x, 0.1, window)
        assert sp.parseval_sum() == pytest.approx(sp.energy, rel=1e-10)

    def test_sine_peak_and_coherence(self):
        dt = 0.01
        t = np.arange(4000) * dt
        sp = power_spectrum(np.sin(2 * np.pi * 1.25 * t), dt)
        _, f = sp.peak()
        assert f == pytest.approx(1.25, abs=sp.bin_width)
        assert sp.coherence() > 0.99
        assert sp.has_resonance() and sp.has_peak()

    def test_harmonics_count_toward_coherence(self):
        dt = 0.01
        t = np.arange(4000) * dt
        sq = np.sign(np.sin(2 * np.pi * 0.5 * t + 0.1))
        assert power_spectrum(sq, dt).coherence() > 0.95

    def test_noise_is_incoherent(self, rng):
        sp = power_spectrum(rng.normal(size=4000), 0.01)
        assert sp.coherence() < 0.1
        assert not sp.has_resonance()

    def test_red_noise_has_no_resonance(self, rng):
        # AR(1) noise peaks at low frequency, which the bin floor excludes
        x = np.zeros(20000)
        z = rng.normal(size=x.size)
        for k in range(1, x.size):
            x[k] = 0.999 * x[k - 1] + z[k]
        assert not power_spectrum(x, 0.01).has_resonance()

    def test_constant_signal(self):
        sp = power_spectrum(np.full(64, 3.7), 0.1)
        assert np.all(sp.power == 0) and sp.energy == 0
        assert not sp.has_peak() and sp.coherence() == 0.0

    def test_input_checks(self):
        with pytest.raises(DomainError):
            power_spectrum(np.zeros(8), 0.1)
        with pytest.raises(DomainError):
            power_spectrum(np.zeros(64), 0.0)
        with pytest.raises(DomainError):
            power_spectrum(np.zeros(64), 0.1, "kaiser")
        times = np.arange(64) * 0.1
        times[30:] += 0.05
        with pytest.raises(DomainError):
            power_spectrum(np.zeros(64), 0.1, times=times)

    def test_csv(self, tmp_path, rng):
        sp = power_spectrum(rng.normal(size=100), 0.5)
        header, rows = read_csv(write_spectrum_csv(sp, tmp_path / "s.csv"))
        assert header == ["freq", "power"] and len(rows) == 51
        assert float(rows[-1][0]) == pytest.approx(1.0)


class TestKolmogorov:
    @pytest.mark.parametrize("x", [0.05, 0.3, 0.7, 0.99, 1.0, 1.36, 2.0, 3.5])
    def test_sf_matches_scipy(self, x):
        assert kolmogorov_sf(x) == pytest.approx(sps.kstwobign.sf(x), abs=1e-12)

    def test_critical_value(self):
        assert kolmogorov_critical(0.05) == pytest.approx(sps.kstwobign.isf(0.05), abs=1e-9)

    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=60))
    def test_statistic_matches_brute_force(self, xs):
        x = np.array(xs)
        cdf = lambda y: sps.norm.cdf(y)
        grid = np.sort(x)
        ecdf_right = np.searchsorted(grid, grid, side="right") / x.size
        ecdf_left = np.searchsorted(grid, grid, side="left") / x.size
        brute = max(np.max(np.abs(ecdf_right - cdf(grid))), np.max(np.abs(ecdf_left - cdf(grid))))
        assert ks_statistic(x, cdf) == pytest.approx(brute, abs=1e-12)

    def test_gaussian_test_matches_scipy(self, rng):
        x = rng.normal(0.3, 2.0, size=500)
        rep = ks_gaussian_test(x, 0.3, 4.0)
        ref = sps.kstest(x, "norm", args=(0.3, 2.0), method="asymp")
        assert rep.statistic == pytest.approx(ref.statistic, abs=1e-12)
        assert rep.p_value == pytest.approx(ref.pvalue, rel=1e-6)
        assert rep.verdict == "fail_to_reject"

    def test_detects_wrong_law(self, rng):
        rep = ks_gaussian_test(rng.normal(0.5, 1.0, size=2000), 0.0, 1.0)
        assert rep.rejected and rep.statistic > rep.critical_value

    def test_checks(self, rng):
        with pytest.raises(DomainError):
            ks_gaussian_test(rng.normal(size=100), 0.0, 0.0)
        with pytest.raises(DomainError):
            ks_gaussian_test(rng.normal(size=5), 0.0, 1.0)


class TestIndependence:
    def test_matches_scipy(self, rng):
        x = rng.normal(size=300)
        y = 0.2 * x + rng.normal(size=300)
        rep = independence_test(x, y)
        r, p = sps.pearsonr(x, y)
        assert rep.statistic == pytest.approx(r, abs=1e-12)
        assert rep.p_value == pytest.approx(p, rel=1e-8)

    def test_independent_samples(self, rng):
        rep = independence_test(rng.normal(size=1000), rng.normal(size=1000))
        assert abs(rep.statistic) < 4 / math.sqrt(1000)

    def test_perfect_correlation(self):
        x = np.arange(20.0)
        rep = independence_test(x, 2 * x + 1)
        assert rep.statistic == pytest.approx(1.0) and rep.p_value == 0.0

    def test_checks(self):
        with pytest.raises(DomainError):
            independence_test(np.ones(20), np.arange(20.0))
        with pytest.raises(DomainError):
            independence_test(np.arange(5.0), np.arange(5.0))
        with pytest.raises(DomainError):
            independence_test(np.arange(20.0), np.arange(21.0))

    def test_report_json(self, tmp_path, rng):
        import json

        path = independence_test(rng.normal(size=50), rng.normal(size=50)).write(tmp_path / "r.json")
        assert set(json.loads(path.read_text())) >= {"statistic", "p_value", "verdict"}


class TestConvergenceRate:
    @given(st.floats(-2, 0), st.floats(0.01, 10))
    def test_recovers_power_law(self, slope, c):
        N = np.array([100, 400, 1600, 6400])
        fit = convergence_rate(list(zip(N, c * N**slope)))
        assert fit.slope == pytest.approx(slope, abs=1e-9)
        assert math.exp(fit.intercept) == pytest.approx(c, rel=1e-9)

    def test_needs_three_sizes(self):
        with pytest.raises(DomainError):
            convergence_rate([(100, 0.1), (400, 0.05)])
        with pytest.raises(DomainError):
            convergence_rate([(100, 0.1), (100, 0.1), (400, 0.05)])
        with pytest.raises(DomainError):
            convergence_rate([(100, 0.1), (400, 0.0), (1600, 0.02)])
