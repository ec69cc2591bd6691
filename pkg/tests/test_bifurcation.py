import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from noisyrate import SpecError, ei_network, hopf_network, pitchfork_network
from noisyrate.bifurcation import (
    KINDS,
    MeanField,
    bialternate_det,
    characterize_cycle,
    attractor_census,
    classify,
    continue_equilibria,
    find_equilibria,
    hopf_threshold_2pop,
    mean_jacobian,
    network_jacobian,
    newton,
    phase_portrait,
    pitchfork_threshold,
    write_branch_csv,
)
from noisyrate.io import read_csv, read_header_metadata
from noisyrate.model import ModelSpec, PopulationParams

SQRT_2PI = math.sqrt(2 * math.pi)


class TestBasics:
    def test_newton_quadratic(self):
        F = lambda x: np.array([x[0] ** 2 - 2.0])
        DF = lambda x: np.array([[2 * x[0]]])
        x, ok = newton(F, DF, np.array([1.0]))
        assert ok and x[0] == pytest.approx(math.sqrt(2), abs=1e-14)

    def test_classify(self):
        assert classify(np.array([-1.0, -2.0]))[0] == "stable"
        assert classify(np.array([1.0, 2.0]))[0] == "unstable"
        assert classify(np.array([-1.0, 2.0]))[0] == "saddle"
        assert "near_hopf" in classify(np.array([1e-5 + 1j, 1e-5 - 1j]))[1]
        assert "near_saddle_node" in classify(np.array([-1.0, 1e-5]))[1]

    def test_bialternate_product(self, rng):
        A = rng.normal(size=(3, 3))
        ev = np.linalg.eigvals(A)
        expect = np.prod([ev[i] + ev[j] for i in range(3) for j in range(i + 1, 3)]).real
        assert bialternate_det(A) == pytest.approx(expect, rel=1e-10)
        B = rng.normal(size=(2, 2))
        assert bialternate_det(B) == pytest.approx(np.trace(B))

    def test_jacobian_matches_finite_differences(self, rng):
        spec = ei_network(noise=1.3)
        mf = MeanField(spec)
        mu = rng.normal(size=2)
        h = 1e-6
        fd = np.column_stack([(mf.rhs(mu + h * e) - mf.rhs(mu - h * e)) / (2 * h) for e in np.eye(2)])
        np.testing.assert_allclose(mean_jacobian(spec, mu), fd, atol=1e-7)

    def test_curvature_matches_finite_differences(self, rng):
        mf = MeanField(ei_network(noise=0.7))
        mu, u = rng.normal(size=2), rng.normal(size=2)
        h = 1e-4
        fd = (mf.rhs(mu + h * u) - 2 * mf.rhs(mu) + mf.rhs(mu - h * u)) / h**2
        np.testing.assert_allclose(mf.curvature(mu, u), fd, atol=1e-5)


class TestEquilibria:
    def test_pitchfork_branches(self):
        below = find_equilibria(pitchfork_network(gain=2.0))
        assert len(below) == 1 and abs(below[0].mu_star[0]) < 1e-10
        above = find_equilibria(pitchfork_network(gain=4.0))
        mus = sorted(r.mu_star[0] for r in above)
        assert len(mus) == 3
        assert mus[0] == pytest.approx(-mus[2], abs=1e-9)
        assert [r.stability for r in sorted(above, key=lambda r: r.mu_star[0])] == ["stable", "unstable", "stable"]

    def test_residuals_and_distinctness(self):
        recs = find_equilibria(ei_network(noise=0.5, I1=1.0))
        assert recs
        for r in recs:
            assert r.residual < 1e-10
        pts = np.array([r.mu_star for r in recs])
        d = np.linalg.norm(pts[:, None] - pts[None], axis=-1) + np.eye(len(pts))
        assert np.all(d > 1e-7)

    def test_record_dict(self):
        rec = find_equilibria(pitchfork_network())[0]
        doc = rec.to_dict()
        assert doc["stability"] == "stable" and len(doc["eigenvalues"]) == 1


class TestThresholds:
    def test_pitchfork_values(self):
        assert pitchfork_threshold(1.0, 0.0) == pytest.approx(SQRT_2PI, rel=1e-14)
        assert pitchfork_threshold(1.0, 0.8) == "none"
        assert pitchfork_threshold(-1.0, 0.1) == "none"

    @given(st.floats(0.2, 5), st.floats(0, 1.5), st.floats(0.2, 3))
    def test_pitchfork_threshold_zeroes_the_eigenvalue(self, J, lam, tau):
        g = pitchfork_threshold(J, lam, tau)
        if g == "none":
            # noise too strong: the effective slope can never reach 1/(J tau)
            assert J * tau / (SQRT_2PI * math.sqrt(tau * lam**2 / 2)) <= 1 + 1e-12
            return
        ge = g / math.sqrt(1 + g * g * tau * lam**2 / 2)
        assert -1 / tau + J * ge / SQRT_2PI == pytest.approx(0.0, abs=1e-10)

    @given(st.floats(0.0, 1.2), st.floats(0.0, 1.2))
    def test_pitchfork_threshold_monotone_in_noise(self, a, b):
        lo, hi = sorted((a, b))
        ga, gb = pitchfork_threshold(1.0, lo), pitchfork_threshold(1.0, hi)
        if gb != "none":
            assert ga != "none" and ga <= gb + 1e-12

    def test_hopf_closed_form(self):
        g, freq = hopf_threshold_2pop(2.0, 0.0)
        assert g == pytest.approx(SQRT_2PI / 2.0) and freq == pytest.approx(1.0)
        assert hopf_threshold_2pop(1.0, 2.0) == "none"

    @given(st.floats(0.5, 4), st.floats(0, 0.9))
    def test_hopf_threshold_zeroes_the_real_part(self, J, lam):
        res = hopf_threshold_2pop(J, lam)
        if res == "none":
            return
        g, freq = res
        ev = np.linalg.eigvals(mean_jacobian(hopf_network(J=J, gain=g, noise=lam), [0.0, 0.0]))
        np.testing.assert_allclose(ev.real, 0.0, atol=1e-10)
        assert np.max(ev.imag) == pytest.approx(freq, rel=1e-10)

    def test_network_jacobian_kronecker(self):
        J, g = 1.0, 1.7
        A = network_jacobian(hopf_network(J=J, gain=g), 8)
        ev = np.sort_complex(np.linalg.eigvals(A))
        c = g * J / SQRT_2PI
        expect = np.sort_complex(np.array([-1.0] * 6 + [-1 + c * (1 + 1j), -1 + c * (1 - 1j)]))
        np.testing.assert_allclose(ev, expect, atol=1e-10)


class TestContinuation:
    def test_pitchfork_detected(self):
        res = continue_equilibria(pitchfork_network(noise=0.0), "gain", (0.5, 6.0))
        pf = [p for p in res.points if p.kind == "pitchfork"]
        assert len(pf) == 1
        assert pf[0].parameter_values["gain"] == pytest.approx(SQRT_2PI, abs=1e-6)

    def test_no_bifurcation_at_large_noise(self):
        res = continue_equilibria(pitchfork_network(noise=0.8), "gain", (0.1, 20.0))
        assert res.points == []

    def test_hopf_detected(self):
        res = continue_equilibria(hopf_network(J=1.0, noise=0.3), "gain", (0.5, 5.0))
        hopf = [p for p in res.points if p.kind == "hopf"]
        g_star, freq = hopf_threshold_2pop(1.0, 0.3)
        assert len(hopf) == 1
        assert hopf[0].parameter_values["gain"] == pytest.approx(g_star, abs=1e-6)
        assert hopf[0].auxiliary["frequency"] == pytest.approx(freq, rel=1e-4)

    def test_folds_in_input(self):
        res = continue_equilibria(ei_network(noise=1.0), "I1", (-10.0, 10.0))
        folds = [p for p in res.points if p.kind == "saddle_node"]
        assert len(folds) == 2
        for p in res.points:
            assert p.kind in KINDS

    def test_stability_changes_only_at_detected_points(self):
        res = continue_equilibria(ei_network(noise=1.0), "I1", (-10.0, 10.0))
        marks = sorted(p.parameter_values["I1"] for p in res.points)
        for br in res.branches:
            for k in range(1, len(br.stability)):
                if br.stability[k] != br.stability[k - 1]:
                    a, b = sorted((br.params[k - 1], br.params[k]))
                    # a fold is a parameter extremum, so the bracketing steps may stop just short of it
                    assert any(a - 1e-3 <= m <= b + 1e-3 for m in marks)

    def test_points_lie_on_equilibria(self):
        spec = ei_network(noise=1.0)
        res = continue_equilibria(spec, "I1", (-10.0, 10.0))
        for p in res.points:
            s = spec.with_parameter("I1", p.parameter_values["I1"])
            assert np.max(np.abs(MeanField(s).rhs(np.asarray(p.state)))) < 1e-8

    def test_branch_csv(self, tmp_path):
        res = continue_equilibria(pitchfork_network(), "gain", (1.0, 4.0))
        path = write_branch_csv(res, tmp_path / "b.csv", {"seed": 0})
        header, rows = read_csv(path)
        assert header == ["param", "mu_1", "stability"]
        assert rows and read_header_metadata(path)["seed"] == 0


class TestCycles:
    def test_fixed_point(self):
        res = characterize_cycle(ei_network(noise=0.6), np.array([0.5, 0.5]))
        assert res.kind == "none"

    def test_limit_cycle(self):
        res = characterize_cycle(ei_network(noise=1.6), np.array([0.5, 0.5]))
        assert res.kind == "cycle"
        assert res.period == pytest.approx(3.1858, rel=1e-3)
        assert res.jitter < 0.01 and np.max(res.amplitude) > 1.0

    def test_period_grows_toward_homoclinic(self):
        periods = [characterize_cycle(ei_network(noise=lam), np.array([0.5, 0.5])).period for lam in (1.6, 1.3, 1.15)]
        assert periods[0] < periods[1] < periods[2]

    def test_single_cell_census(self):
        res = attractor_census(ei_network(), "noise", [1.6], t_transient=100, t_measure=100)
        assert res.labels.shape == (1, 1) and res.labels[0, 0] == "oscillation"
        assert res.boundaries == []


class TestPhasePortrait:
    def test_linear_system_nullclines_are_axes(self):
        spec = ModelSpec((PopulationParams(fraction=0.5), PopulationParams(fraction=0.5)), np.zeros((2, 2)))
        pp = phase_portrait(spec, ((-1, 1), (-1, 1)), resolution=41)
        for k in range(2):
            pts = np.concatenate(pp.nullclines[k])
            np.testing.assert_allclose(pts[:, k], 0.0, atol=1e-12)
        assert len(pp.equilibria) == 1 and pp.manifolds == []

    def test_saddle_unstable_manifold_reaches_stable_point(self):
        spec = ei_network(noise=1.0)
        pp = phase_portrait(spec, ((-8, 8), (-8, 8)), resolution=81)
        stable = [r.mu_star for r in pp.equilibria if r.stability == "stable"]
        unstable = [m for m in pp.manifolds if m["kind"] == "unstable"]
        assert stable and unstable
        for m in unstable:
            end = m["path"][-1]
            assert min(np.linalg.norm(end - s) for s in stable) < 1e-3

    def test_requires_two_populations(self):
        with pytest.raises(SpecError):
            phase_portrait(pitchfork_network(), ((-1, 1), (-1, 1)))
