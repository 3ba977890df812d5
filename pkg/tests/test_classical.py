import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import _initial_vectors
from prealign import classical as c
from prealign.core import CS2, KickPulse, ThermalSpec
from prealign.rng import RngSpec


def _spec(n, seed=20240601, **thermal):
    return c.EnsembleSpec(n, ThermalSpec(**(thermal or {"j_thermal": 5.0})), RngSpec(seed))


def test_thermal_sampling_moments():
    s = c.sample_thermal(_spec(200_000))
    n = len(s)
    tol = 5 / math.sqrt(n)
    assert abs(np.mean(np.cos(s.theta))) < tol
    assert abs(np.mean(np.cos(s.theta) ** 2) - 1 / 3) < tol
    assert abs(np.var(s.p_theta) - 1) < 5 * tol
    assert abs(np.var(s.p_phi) - 2 / 3) < 5 * tol  # ⟨sin²θ⟩ = 2/3
    # energy in units of kT: two quadratic degrees of freedom
    assert abs(np.mean(s.energy) - 1.0) < 5 * tol


def test_sampling_prefix_is_stable():
    a = c.sample_thermal(_spec(1000))
    b = c.sample_thermal(_spec(10_000))
    assert np.array_equal(a.theta, b.theta[:1000]) and np.array_equal(a.p_phi, b.p_phi[:1000])


def test_state_validation():
    with pytest.raises(ValueError):
        c.ClassicalRotorState(0.0, 0.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        c.ClassicalRotorState(np.nan, 0.0, 0.0, 0.0)


def _potential_gradient(theta, phi, axis, h=1e-6):
    if axis == "z":
        V = lambda t, p: -np.cos(t) ** 2  # noqa: E731
    else:
        V = lambda t, p: -(np.sin(t) * np.cos(p)) ** 2  # noqa: E731
    dth = (V(theta + h, phi) - V(theta - h, phi)) / (2 * h)
    dph = (V(theta, phi + h) - V(theta, phi - h)) / (2 * h)
    return dth, dph


@pytest.mark.parametrize("axis", ["z", "x"])
def test_kick_is_impulse_of_interaction_potential(axis):
    s = c.sample_thermal(_spec(500))
    P = 3.7
    k = c.apply_kick(s, P, axis)
    dth, dph = _potential_gradient(s.theta, s.phi, axis)
    assert np.allclose(k.p_theta - s.p_theta, -P * dth, atol=1e-7)
    assert np.allclose(k.p_phi - s.p_phi, -P * dph, atol=1e-7)
    assert np.array_equal(k.theta, s.theta) and np.array_equal(k.phi, s.phi)


def test_z_kick_conserves_p_phi():
    s = c.sample_thermal(_spec(100))
    assert np.array_equal(c.apply_kick(s, 10.0, "z").p_phi, s.p_phi)


def _great_circle_average(state, n=4096):
    n0, v0 = _initial_vectors(state.theta, state.phi, state.p_theta, state.p_phi, 1.0)
    w = np.linalg.norm(v0, axis=1)
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)[:, None] / w
    nz = n0[:, 2] * np.cos(w * t) + (v0[:, 2] / w) * np.sin(w * t)
    return nz, t


def test_time_average_against_great_circle_motion():
    s = c.sample_thermal(_spec(300))
    nz, t = _great_circle_average(s)
    assert np.allclose(c.time_averaged_alignment(s), np.mean(nz**2, axis=0), atol=1e-12)


def test_free_cos_theta_against_great_circle_motion():
    s = c.sample_thermal(_spec(50))
    nz, t = _great_circle_average(s, 64)
    for k in (0, 5, 37):
        got = np.array([c.free_cos_theta(s[i:i + 1], t[k, i])[0] for i in range(len(s))])
        assert np.allclose(got, nz[k], atol=1e-12)


@given(st.floats(0.01, 3.1), st.floats(-5, 5), st.floats(-5, 5))
@settings(max_examples=200)
def test_alignment_factor_in_range(theta, pt, pp):
    if pt == 0 and pp == 0:
        return
    A = c.time_averaged_alignment(c.ClassicalRotorState(theta, 0.0, pt, pp))
    assert 0.0 <= A <= 0.5


def test_degenerate_rotor():
    with pytest.raises(c.DegenerateRotorError):
        c.time_averaged_alignment(c.ClassicalRotorState(1.0, 0.0, 0.0, 0.0))


def test_planar_rotation_limits():
    # rotation about z: A = 0; rotation through the poles: A = 1/2
    assert c.time_averaged_alignment(c.ClassicalRotorState(np.pi / 2, 0.0, 0.0, 1.0)) == pytest.approx(0.0, abs=1e-15)
    assert c.time_averaged_alignment(c.ClassicalRotorState(0.3, 0.0, 2.0, 0.0)) == pytest.approx(0.5)


def test_reference_pdfs_normalised():
    from scipy import integrate
    for v in ("thermal", "perpendicular"):
        total, _ = integrate.quad(lambda a: c.rainbow_reference_pdf(a, v), 0, 0.5, limit=200)
        assert total == pytest.approx(1.0, rel=1e-8)
        assert c.rainbow_reference_cdf(0.5, v) == pytest.approx(1.0)
        assert c.rainbow_reference_cdf(0.0, v) == 0.0
    with pytest.raises(ValueError):
        c.rainbow_reference_pdf(0.1, "other")


def test_thermal_distribution_matches_reference():
    d = c.ensemble_alignment_distribution(_spec(200_000))
    assert d.ks_statistic("thermal") < 0.01
    assert d.mean() == pytest.approx(1 / 3, abs=3 * d.std() / math.sqrt(len(d)))


def test_workers_do_not_change_samples():
    spec = _spec(300_000)
    pulse = KickPulse(kick_strength=10.0)
    a = c.ensemble_alignment_distribution(spec, pulse, CS2, workers=1)
    b = c.ensemble_alignment_distribution(spec, pulse, CS2, workers=4)
    assert np.array_equal(a.samples, b.samples)


def test_kick_needs_species():
    with pytest.raises(ValueError):
        c.ensemble_alignment_distribution(_spec(10), KickPulse(kick_strength=1.0))


def test_histogram_mass():
    d = c.ensemble_alignment_distribution(_spec(10_000))
    edges, masses = d.histogram(50)
    assert masses.sum() == pytest.approx(1.0, abs=1e-12)
    assert edges.size == 51


def test_asymptotics_limits_and_validation():
    m, s = c.parallel_kick_asymptotics(1e12, 1.0)
    assert m == pytest.approx(0.5, abs=1e-12) and s == pytest.approx(0.0, abs=1e-5)
    m, s = c.parallel_kick_asymptotics(25.0, 5.0)
    assert s == pytest.approx(0.105251, abs=1e-6)
    with pytest.raises(ValueError):
        c.parallel_kick_asymptotics(0.0, 5.0)


def test_large_kick_asymptotics_converge():
    d = c.ensemble_alignment_distribution(_spec(200_000, j_thermal=1.0), KickPulse(kick_strength=50.0), CS2)
    m, s = c.parallel_kick_asymptotics(50.0, 1.0)
    assert d.mean() == pytest.approx(m, rel=0.01)
    assert d.std() == pytest.approx(s, rel=0.02)


def test_trace_starts_isotropic_for_unkicked_ensemble():
    s = c.sample_thermal(_spec(100_000))
    tr = c.classical_alignment_trace(s, [0.0, 1.0, 5.0])
    assert np.allclose(tr, 1 / 3, atol=0.01)


def test_trace_long_time_limit_is_mean_alignment():
    s = c.apply_kick(c.sample_thermal(_spec(20_000)), 5.0)
    tr = c.classical_alignment_trace(s, np.linspace(200, 400, 50))
    assert tr.mean() == pytest.approx(c.time_averaged_alignment(s).mean(), abs=0.01)
