import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from oracles import direct_free_action, fixed_field_u_range, slow_ramp_alignment
from prealign import strongfield as sf
from prealign.classical import EnsembleSpec, sample_thermal_range, time_averaged_alignment
from prealign.core import CS2, K_B, ThermalSpec, field_squared_from_intensity
from prealign.rng import RngSpec

I = CS2.moment_of_inertia


def _coeffs(a, b, p):
    return sf.FieldCoefficients(a, b, p)


def _thermal_record(n, T=5.0, seed=7, start=0):
    st_ = sample_thermal_range(seed, start, start + n)
    return st_, sf.AdiabaticRecord.from_reduced_state(st_, CS2, T)


# --- roots --------------------------------------------------------------------------

def test_free_rotor_roots():
    r = sf.find_roots(_coeffs(0.0, 4.0, 1.0))
    assert r.regime == sf.ROTATING
    assert r.hi == pytest.approx(0.75)
    assert r.lo == 0.0


def test_equatorial_rotation_is_degenerate():
    r = sf.find_roots(_coeffs(0.0, 1.0, 1.0))
    assert r.hi == 0.0 and r.regime == sf.SEPARATRIX


def test_weak_field_root_series():
    b, p = 4.0, 1.0
    u30 = 1 - p * p / b
    for a in (1e-3, 1e-4):
        r = sf.find_roots(_coeffs(a, b, p))
        series = u30 + a * u30 * (1 - u30) / b
        assert r.regime == sf.ROTATING and r.u2 == 0.0
        assert abs(r.hi - series) < 10 * (a / b) ** 2


def test_pendular_roots():
    r = sf.find_roots(_coeffs(10.0, 1.0, 1.2))
    assert r.regime == sf.PENDULAR
    assert 0 < r.lo < r.hi <= 1
    g = sf.g_polynomial(np.array([r.lo, r.hi]), _coeffs(10.0, 1.0, 1.2))
    assert np.all(np.abs(g) < 1e-12)


def test_negative_anisotropy_rotating():
    r = sf.find_roots(_coeffs(-1.0, 4.0, 1.0))
    assert r.regime == sf.ROTATING
    assert r.other > 1.0
    assert abs(sf.g_polynomial(r.hi, _coeffs(-1.0, 4.0, 1.0))) < 1e-12


def test_inadmissible():
    c = _coeffs(1.0, 0.1, 2.0)
    with pytest.raises(sf.InadmissibleStateError):
        sf.find_roots(c)
    assert sf.find_roots(c, strict=False).regime == sf.INADMISSIBLE


def test_separatrix_snapping():
    c = _coeffs(5.0, 1.0, 1.0 + 1e-15)
    r = sf.find_roots(c)
    assert r.regime == sf.SEPARATRIX
    assert sf.average_alignment_strong(c, r) == 0.0


@given(st.floats(0.0, 50.0), st.floats(0.01, 50.0), st.floats(0.0, 5.0))
@settings(max_examples=300)
def test_roots_are_zeros_after_polish(a, b, p):
    c = _coeffs(a, b, p)
    r = sf.find_roots(c, strict=False)
    if r.regime not in (sf.ROTATING, sf.PENDULAR):
        return
    r = sf.polish_roots(c, r)
    grid = np.linspace(r.lo, r.hi, 101)
    scale = max(np.max(np.abs(sf.g_polynomial(grid, c))), 1e-300)
    assert abs(sf.g_polynomial(r.hi, c)) <= 1e-10 * scale
    assert abs(sf.g_polynomial(r.lo, c)) <= 1e-10 * scale
    assert np.all(sf.g_polynomial(grid[1:-1], c) >= -1e-10 * scale)


# --- integrals ------------------------------------------------------------------------

def test_period_against_complete_elliptic_integral():
    # ∫_0^b dt/√(4a t(b-t)(t-c)) = K(m)/√(a(b-c)), m = b/(b-c)
    for a, b_, p in ((1.0, 4.0, 1.0), (3.0, 2.0, 1.2), (0.2, 9.0, 0.5)):
        c = _coeffs(a, b_, p)
        r = sf.find_roots(c)
        T, _, _, _ = sf.oscillation_integrals(c, r)
        ref = special.ellipk(r.hi / (r.hi - r.other)) / math.sqrt(a * (r.hi - r.other))
        assert T == pytest.approx(ref, rel=1e-12)


def _mp_interval(a, b_, p, r):
    """Endpoints of the oscillation interval to 30 digits."""
    a, b_, p = mpmath.mpf(a), mpmath.mpf(b_), mpmath.mpf(p)
    if a == 0:
        roots = [1 - p * p / b_]
    else:
        roots = [mpmath.re(x) for x in mpmath.polyroots([-a, a - b_, b_ - p * p], extraprec=60)]
    near = lambda x: min(roots, key=lambda y: abs(y - x))  # noqa: E731
    lo = mpmath.mpf(0) if r.lo == 0 else near(float(r.lo))
    return lo, near(float(r.hi))


@pytest.mark.parametrize("abp", [(1.0, 4.0, 1.0), (10.0, 1.0, 1.2), (40.0, 2.0, 0.1), (0.0, 3.0, 1.0)])
def test_integrals_against_tanh_sinh(abp):
    a, b_, p = abp
    c = _coeffs(a, b_, p)
    r = sf.find_roots(c)
    T, N, S, _ = sf.oscillation_integrals(c, r)
    mpmath.mp.dps = 30
    a, b_, p = mpmath.mpf(a), mpmath.mpf(b_), mpmath.mpf(p)
    # |g| guards nodes closer to an endpoint than the 30-digit roots resolve
    g = lambda u: abs(4 * u * ((1 - u) * b_ - p * p + (1 - u) * a * u))  # noqa: E731
    lo, hi = _mp_interval(a, b_, p, r)
    T_ref = mpmath.quad(lambda u: 1 / mpmath.sqrt(g(u)), [lo, hi])
    N_ref = mpmath.quad(lambda u: u / mpmath.sqrt(g(u)), [lo, hi])
    S_ref = mpmath.quad(lambda u: mpmath.sqrt(g(u)) / (u * (1 - u)), [lo, hi])
    assert T == pytest.approx(float(T_ref), rel=1e-10)
    assert N == pytest.approx(float(N_ref), rel=1e-10)
    assert S == pytest.approx(float(S_ref), rel=1e-10)


def test_free_action_closed_form_and_direct_integral():
    rng = np.random.default_rng(0)
    L = rng.uniform(0.5, 3.0, 40) * 1e-33
    pphi = L * rng.uniform(-0.95, 0.95, 40)
    rec = sf.AdiabaticRecord.from_free_rotor(L**2 / (2 * I), pphi, CS2)
    assert np.allclose(rec.I_theta0, sf.free_rotor_action(L, pphi), rtol=1e-12)
    assert np.allclose(rec.I_theta0, direct_free_action(L, pphi, I), rtol=1e-6)


@given(st.floats(0.1, 20.0), st.floats(0.5, 10.0), st.floats(0.0, 1.5), st.floats(0.1, 10.0))
@settings(max_examples=60, deadline=None)
def test_action_scaling(a, b, p, s):
    c = _coeffs(a, b, p)
    r = sf.find_roots(c, strict=False)
    if r.regime not in (sf.ROTATING, sf.PENDULAR):
        return
    cs = c.scaled(s)
    rs = sf.find_roots(cs)
    A1 = sf.adiabatic_invariant(c, r, 1.0)
    A2 = sf.adiabatic_invariant(cs, rs, 1.0)
    assert A2 == pytest.approx(s * A1, rel=1e-9)


def test_pinched_pendular_well():
    # choose p so that the discriminant nearly vanishes
    a, b_ = 10.0, 1.0
    # Q(u) = -a u² + (a-b) u + (b-p²); vertex at u* = (a-b)/(2a), Q(u*) = (a-b)²/(4a) + b - p²
    p2 = (a - b_) ** 2 / (4 * a) + b_ - 1e-9
    c = _coeffs(a, b_, math.sqrt(p2))
    r = sf.find_roots(c)
    assert r.regime == sf.PENDULAR and r.hi - r.lo < 1e-3
    avg = sf.average_alignment_strong(c, r)
    assert avg == pytest.approx(r.hi, abs=1e-3)
    assert sf.adiabatic_invariant(c, r, 1.0) < 1e-6


def test_zero_field_average_is_half_sin_squared():
    rng = np.random.default_rng(3)
    L = rng.uniform(0.2, 3.0, 1000) * 1e-33
    cos_j = rng.uniform(-0.99, 0.99, 1000)
    c = sf.FieldCoefficients.from_energy(L**2 / (2 * I), L * cos_j, 0.0, CS2)
    avg = sf.average_alignment_strong(c, sf.find_roots(c))
    assert np.max(np.abs(avg - 0.5 * (1 - cos_j**2))) < 1e-8


def test_zero_field_matches_classical_alignment():
    s, rec = _thermal_record(500)
    c = sf.FieldCoefficients.from_energy(rec.H0, rec.p_phi, 0.0, CS2)
    avg = sf.average_alignment_strong(c, sf.find_roots(c))
    assert np.max(np.abs(avg - time_averaged_alignment(s))) < 1e-8


def test_quadrature_failure_is_reported():
    # just inside the separatrix the integrand is nearly singular
    c = _coeffs(5.0, 1.0, math.sqrt(1.0 + 1e-9))
    r = sf.find_roots(c)
    with pytest.raises(sf.QuadratureError, match="not converged"):
        sf.oscillation_integrals(c, r, max_order=64)


# --- energy in the field ------------------------------------------------------------

def test_zero_field_energy_is_identity():
    _, rec = _thermal_record(50)
    sol = sf.solve_energies(rec.I_theta0, rec.p_phi, 0.0, CS2, rec.H0)
    assert np.array_equal(sol.H, rec.H0)


def test_solved_energy_conserves_action():
    _, rec = _thermal_record(400)
    E2 = field_squared_from_intensity(9e11)
    sol = sf.solve_energies(rec.I_theta0, rec.p_phi, E2, CS2, rec.H0)
    assert sol.converged.all()
    c = sf.FieldCoefficients.from_energy(sol.H, rec.p_phi, E2, CS2)
    act = sf.adiabatic_invariant(c, sf.find_roots(c), I)
    assert np.max(np.abs(act / rec.I_theta0 - 1)) < 1e-8
    assert np.all(sol.H <= rec.H0)
    assert np.all((sol.avg_u >= sol.roots.lo) & (sol.avg_u <= sol.roots.hi))


def test_scalar_solve_energy():
    rec = sf.AdiabaticRecord.from_free_rotor(2e-22, 1e-34, CS2)
    H = sf.solve_energy(rec, math.sqrt(field_squared_from_intensity(3e9)), CS2)
    assert np.ndim(H) == 0 and H < 2e-22
    assert rec.H == H


def test_ramp_reversibility_without_crossing():
    _, rec = _thermal_record(200, T=300.0)
    E2 = field_squared_from_intensity(3e11)
    levels = np.concatenate([np.linspace(0, 1, 101), np.linspace(1, 0, 101)[1:]]) * E2
    ramp = sf.follow_ramp(rec, levels, CS2)
    keep = ~ramp.crossed & ~ramp.failed
    assert keep.sum() > 150
    assert np.max(np.abs(ramp.H[-1, keep] / rec.H0[keep] - 1)) < 1e-8
    assert np.array_equal(ramp.avg_u[0], ramp.avg_u[0])


def test_ramp_flags_separatrix_crossing():
    _, rec = _thermal_record(200, T=5.0)
    ramp = sf.follow_ramp(rec, np.linspace(0, 1, 21) * field_squared_from_intensity(9e11), CS2)
    assert ramp.crossed.mean() > 0.9
    assert np.all(ramp.regime[0] == sf.ROTATING)


def test_pendular_orbit_stays_between_roots():
    E2 = field_squared_from_intensity(9e11)
    a = CS2.delta_alpha_si * E2 / (2 * I)
    # low energy rotor started at a θ turning point deep in the well
    theta0 = np.array([0.3, 0.5])
    pphi = np.array([0.05, 0.1]) * I * math.sqrt(a)
    H = 0.5 * pphi**2 / (I * np.sin(theta0) ** 2) - 0.25 * E2 * (CS2.delta_alpha_si * np.cos(theta0) ** 2
                                                                 + CS2.alpha_perp_si)
    c = sf.FieldCoefficients.from_energy(H, pphi, E2, CS2)
    r = sf.find_roots(c)
    assert np.all(r.regime == sf.PENDULAR)
    umin, umax = fixed_field_u_range(theta0, pphi, CS2, E2)
    assert np.all(umin >= r.lo - 1e-6) and np.all(umax <= r.hi + 1e-6)
    assert np.allclose(umax, r.hi, atol=1e-6) and np.allclose(umin, r.lo, atol=1e-4)


def test_energy_and_alignment_against_slow_ramp_ode():
    T = 300.0
    s, rec = _thermal_record(6, T=T, seed=11)
    E2 = field_squared_from_intensity(9e11)
    pth = math.sqrt(K_B * T * I)
    period = 2 * np.pi / (s.omega.min() * pth / I)
    avg, H_end = slow_ramp_alignment(s.theta, s.phi, s.p_theta * pth, s.p_phi * pth, CS2, E2,
                                     100 * period, 20 * period)
    ramp = sf.follow_ramp(rec, np.linspace(0, 1, 201) * E2, CS2)
    keep = ~ramp.crossed
    assert keep.sum() >= 3
    assert np.max(np.abs(H_end[keep] / ramp.H[-1, keep] - 1)) < 1e-3
    assert np.max(np.abs(avg[keep] - ramp.avg_u[-1, keep])) < 1e-3


def test_peak_distribution_zero_field_limit():
    spec = EnsembleSpec(5000, ThermalSpec(temperature=5.0), RngSpec(5))
    d = sf.peak_alignment_distribution(spec, CS2, 0.0)
    from prealign.classical import ensemble_alignment_distribution
    ref = ensemble_alignment_distribution(spec)
    assert np.max(np.abs(d.samples - ref.samples)) < 1e-8
    assert d.crossed == 0 and d.failed == 0
