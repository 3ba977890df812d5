"""Classical rotor in a strong, slowly varying deflecting field.

With u = cos²θ the θ motion obeys (du/dt)² = g(u) = 4u[(1-u)β - p² + (1-u)αu],
where α = ΔαE²/2I, β = 2(H + ¼E²α⊥)/I and p = P_φ/I.  One root of g is pinned
at u = 0.  Below the bifurcation the rotor turns over the equator and u runs
over [0, u3]; past it the rotor is trapped in a pendular well and u runs over
[u2, u3] with u2 > 0.

Inside the field the energy follows from conservation of the action
I_θ = (I/4)∫√g/(u(1-u)) du over the oscillation interval.  This integral is
continuous through the separatrix (one rotating orbit splits into two wells
of half its phase-space area), so the same formula serves both regimes.

Everything is vectorised: coefficient fields may be arrays of rotors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

from .core import K_B, MolecularSpecies

ROTATING, PENDULAR, SEPARATRIX, INADMISSIBLE = 0, 1, 2, -1
REGIME_NAMES = {ROTATING: "rotating", PENDULAR: "pendular", SEPARATRIX: "separatrix", INADMISSIBLE: "inadmissible"}

ROOT_SNAP = 1e-12
QUAD_RTOL = 1e-10
QUAD_START = 64
QUAD_MAX = 1 << 14
ENERGY_RTOL = 1e-10


class InadmissibleStateError(ValueError):
    """No interval of u on which g(u) > 0."""


class QuadratureError(RuntimeError):
    """Gauss-Legendre doubling did not settle."""


@dataclass
class FieldCoefficients:
    """α (s⁻²), β (s⁻²) and P_φ/I (s⁻¹) of the polynomial g(u)."""

    alpha: np.ndarray
    beta: np.ndarray
    p_phi_over_I: np.ndarray

    def __post_init__(self):
        self.alpha, self.beta, self.p_phi_over_I = np.broadcast_arrays(
            np.asarray(self.alpha, dtype=float), np.asarray(self.beta, dtype=float),
            np.asarray(self.p_phi_over_I, dtype=float))
        if not (np.all(np.isfinite(self.alpha)) and np.all(np.isfinite(self.beta))
                and np.all(np.isfinite(self.p_phi_over_I))):
            raise ValueError("field coefficients must be finite")

    @classmethod
    def from_energy(cls, H, p_phi, E2, species: MolecularSpecies):
        """Coefficients for rotor energy H (J), P_φ (J·s) in a field with E² (V²/m²)."""
        I = species.moment_of_inertia
        E2 = np.asarray(E2, dtype=float)
        alpha = species.delta_alpha_si * E2 / (2.0 * I)
        beta = 2.0 / I * (np.asarray(H, dtype=float) + 0.25 * E2 * species.alpha_perp_si)
        return cls(alpha, beta, np.asarray(p_phi, dtype=float) / I)

    def scaled(self, s: float) -> "FieldCoefficients":
        """Rescale time by 1/s: α, β, p² all grow by s²."""
        return FieldCoefficients(self.alpha * s * s, self.beta * s * s, self.p_phi_over_I * s)


def g_polynomial(u, coeffs: FieldCoefficients):
    u = np.asarray(u, dtype=float)
    a, b, p = coeffs.alpha, coeffs.beta, coeffs.p_phi_over_I
    return 4.0 * u * ((1.0 - u) * b - p * p + (1.0 - u) * a * u)


@dataclass
class RootTriple:
    """Oscillation interval [lo, hi] of u, the remaining root, and the regime.

    ``u1 <= u2 <= u3`` are the three roots for a polarizability anisotropy
    Δα > 0 (for α = 0 the missing root is reported as -inf).
    """

    lo: np.ndarray
    hi: np.ndarray
    other: np.ndarray
    regime: np.ndarray

    @property
    def u1(self):
        return np.where(self.regime == PENDULAR, 0.0, np.minimum(self.other, 0.0))

    @property
    def u2(self):
        return np.where(self.regime == PENDULAR, self.lo, 0.0)

    @property
    def u3(self):
        return self.hi

    def __getitem__(self, idx):
        return RootTriple(self.lo[idx], self.hi[idx], self.other[idx], self.regime[idx])


def find_roots(coeffs: FieldCoefficients, strict: bool = True) -> RootTriple:
    """Deflate the zero root of g and solve the remaining quadratic in closed form.

    Q(u) = -αu² + (α-β)u + (β-p²).  The regime follows from the sign of
    Q(0) = β - p²: positive means the rotor crosses the equator, negative means
    it is trapped, zero (within ROOT_SNAP of the scale) is the separatrix.
    With ``strict`` an inadmissible rotor raises; otherwise it is marked
    INADMISSIBLE with an empty interval.
    """
    a_, b_, p = coeffs.alpha, coeffs.beta, coeffs.p_phi_over_I
    c = b_ - p * p
    bq = a_ - b_
    aq = -a_
    scale = np.maximum.reduce([np.abs(a_), np.abs(b_), p * p, np.full(a_.shape, 1e-300)])
    c = np.where(np.abs(c) <= ROOT_SNAP * scale, 0.0, c)

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        disc = bq * bq - 4.0 * aq * c
        sq = np.sqrt(np.maximum(disc, 0.0))
        q = -0.5 * (bq + np.where(bq >= 0, sq, -sq))
        r1 = np.where(aq != 0, q / aq, np.nan)
        r2 = np.where(q != 0, c / q, 0.0)
        lin = np.where(b_ != 0, c / b_, np.nan)  # α = 0: Q = (β - p²) - βu

    r_lo = np.fmin(r1, r2)
    r_hi = np.fmax(r1, r2)
    r_lo = np.where(np.abs(r_lo) < ROOT_SNAP, 0.0, r_lo)
    r_hi = np.where(np.abs(r_hi) < ROOT_SNAP, 0.0, r_hi)

    lo = np.zeros(a_.shape)
    hi = np.zeros(a_.shape)
    other = np.full(a_.shape, -np.inf)
    regime = np.full(a_.shape, INADMISSIBLE, dtype=int)

    free = a_ == 0
    ok = free & (b_ > 0) & (c >= 0)
    hi = np.where(ok, np.clip(lin, 0.0, 1.0), hi)
    regime = np.where(ok, np.where(c > 0, ROTATING, SEPARATRIX), regime)

    pos = a_ > 0
    rot = pos & (c > 0)
    hi = np.where(rot, np.minimum(r_hi, 1.0), hi)
    other = np.where(rot, r_lo, other)
    regime = np.where(rot, ROTATING, regime)

    sep = pos & (c == 0)
    sep_hi = np.where(sep, np.clip(np.maximum(r_lo, r_hi), 0.0, 1.0), 0.0)
    hi = np.where(sep, sep_hi, hi)
    other = np.where(sep, 0.0, other)
    regime = np.where(sep & (sep_hi > 0), SEPARATRIX, regime)

    pend = pos & (c < 0) & (disc >= 0) & (r_lo > 0) & (r_lo <= 1.0)
    lo = np.where(pend, r_lo, lo)
    hi = np.where(pend, np.minimum(r_hi, 1.0), hi)
    other = np.where(pend, 0.0, other)
    regime = np.where(pend, PENDULAR, regime)

    neg = a_ < 0
    rneg = neg & (c > 0)
    hi = np.where(rneg, np.clip(r_lo, 0.0, 1.0), hi)
    other = np.where(rneg, r_hi, other)
    regime = np.where(rneg, ROTATING, regime)
    regime = np.where(neg & (c == 0), SEPARATRIX, regime)

    roots = RootTriple(lo, hi, other, regime)
    if strict and np.any(regime == INADMISSIBLE):
        raise InadmissibleStateError("g(u) has no positive oscillation interval for these coefficients")
    return roots


def polish_roots(coeffs: FieldCoefficients, roots: RootTriple) -> RootTriple:
    """One Newton step on each non-pinned endpoint root of g."""
    a_, b_, p = coeffs.alpha, coeffs.beta, coeffs.p_phi_over_I

    def step(r):
        Q = -a_ * r * r + (a_ - b_) * r + (b_ - p * p)
        dQ = -2.0 * a_ * r + (a_ - b_)
        with np.errstate(divide="ignore", invalid="ignore"):
            new = r - Q / dQ
        return np.where((dQ != 0) & np.isfinite(new) & (r > 0), new, r)

    lo = np.where(roots.regime == PENDULAR, step(roots.lo), roots.lo)
    hi = np.where(roots.regime >= 0, np.clip(step(roots.hi), lo, 1.0), roots.hi)
    return RootTriple(lo, hi, roots.other, roots.regime)


# --- quadrature on the oscillation interval ---------------------------------

@lru_cache(maxsize=None)
def _gauss_psi(order: int):
    x, w = special.roots_legendre(order)
    psi = 0.25 * np.pi * (x + 1.0)
    return np.sin(psi) ** 2, np.cos(psi) ** 2, 0.25 * np.pi * w


def _smooth_factor(u, coeffs: FieldCoefficients, roots: RootTriple):
    """R(u) with g(u) = (u - lo)(hi - u) R(u); positive inside the interval."""
    a_ = coeffs.alpha[..., None]
    other = roots.other[..., None]
    regime = roots.regime[..., None]
    free = a_ == 0
    gap = np.abs(u - np.where(np.isfinite(other), other, 0.0))
    R = np.where(free, 4.0 * coeffs.beta[..., None], 4.0 * np.abs(a_) * gap)
    return np.where(regime == PENDULAR, 4.0 * a_ * u, R)


def _integrals_fixed(coeffs: FieldCoefficients, roots: RootTriple, order: int):
    """(∫du/√g, ∫u du/√g, ∫√g/(u(1-u)) du) with u = lo + (hi - lo) sin²ψ."""
    s2, c2, w = _gauss_psi(order)
    lo = roots.lo[..., None]
    hi = roots.hi[..., None]
    width = hi - lo
    u = lo + width * s2
    one_minus_u = (1.0 - hi) + width * c2
    R = _smooth_factor(u, coeffs, roots)
    with np.errstate(divide="ignore", invalid="ignore"):
        rs = np.sqrt(R)
        inv = 2.0 / rs
        ratio_lo = np.where(u > 0, width * s2 / u, 1.0)
        ratio_hi = np.where(one_minus_u > 0, width * c2 / one_minus_u, 1.0)
        action = 2.0 * rs * ratio_lo * ratio_hi
    T = inv @ w
    N = (inv * u) @ w
    A = action @ w
    return T, N, A


def oscillation_integrals(coeffs: FieldCoefficients, roots: RootTriple, rtol: float = QUAD_RTOL,
                          max_order: int = QUAD_MAX, strict: bool = True):
    """Converged (T, N, S) integrals and the order used per rotor.

    T = ∫du/√g, N = ∫u du/√g, S = ∫√g/(u(1-u)) du over [lo, hi].  The order
    doubles from QUAD_START until successive values agree to ``rtol``.
    Separatrix rotors get T = inf and N/T = 0; inadmissible ones get zeros.
    """
    shape = roots.lo.shape
    T = np.zeros(shape)
    N = np.zeros(shape)
    S = np.zeros(shape)
    used = np.zeros(shape, dtype=int)
    live = (roots.regime == ROTATING) | (roots.regime == PENDULAR)
    sep = roots.regime == SEPARATRIX
    if np.any(sep):
        T[sep] = np.inf
        _, _, S_sep = _converge(coeffs, roots, sep, rtol, max_order, strict, action_only=True)
        S[sep] = S_sep
        used[sep] = -1
    if np.any(live):
        Tl, Nl, Sl, order = _converge(coeffs, roots, live, rtol, max_order, strict)
        T[live], N[live], S[live], used[live] = Tl, Nl, Sl, order
    return T, N, S, used


def _subset(coeffs, roots, mask):
    return (FieldCoefficients(coeffs.alpha[mask], coeffs.beta[mask], coeffs.p_phi_over_I[mask]),
            roots[mask])


def _converge(coeffs, roots, mask, rtol, max_order, strict, action_only=False):
    c, r = _subset(coeffs, roots, mask)
    order = QUAD_START
    vals = [v.copy() for v in _integrals_fixed(c, r, order)]
    order_used = np.full(r.lo.size, order)
    keys = (2,) if action_only else (0, 1, 2)
    pending = np.arange(r.lo.size)
    while pending.size:
        order *= 2
        if order > max_order:
            if strict:
                raise QuadratureError(
                    f"{pending.size} rotor(s) not converged to {rtol:g} at order {max_order}; "
                    f"first interval [{r.lo[pending[0]]:.3e}, {r.hi[pending[0]]:.3e}]")
            order_used[pending] = -max_order
            break
        cp, rp = _subset(c, r, pending)
        cur = _integrals_fixed(cp, rp, order)
        done = np.ones(pending.size, dtype=bool)
        for k in keys:
            done &= np.abs(vals[k][pending] - cur[k]) <= rtol * np.maximum(np.abs(cur[k]), 1e-300)
        for k in range(3):
            vals[k][pending] = cur[k]
        order_used[pending] = order
        pending = pending[~done]
    if action_only:
        return None, None, vals[2]
    return vals[0], vals[1], vals[2], order_used


def adiabatic_invariant(coeffs: FieldCoefficients, roots: RootTriple, I: float, **kw):
    """I_θ = (I/4) ∫ √g / (u(1-u)) du over the oscillation interval (J·s)."""
    _, _, S, _ = oscillation_integrals(coeffs, roots, **kw)
    return 0.25 * I * S


def average_alignment_strong(coeffs: FieldCoefficients, roots: RootTriple, **kw):
    """⟨u⟩ = ∫u du/√g ÷ ∫du/√g over the oscillation interval."""
    T, N, _, _ = oscillation_integrals(coeffs, roots, **kw)
    with np.errstate(invalid="ignore", divide="ignore"):
        avg = np.where(np.isfinite(T) & (T > 0), N / T, roots.lo)
    return np.clip(avg, roots.lo, roots.hi)


def free_rotor_action(L, p_phi):
    """(I/4)∫... at zero field in closed form: (π/2)(|L| - |P_φ|)."""
    return 0.5 * np.pi * (np.abs(L) - np.abs(p_phi))


# --- energy inside the field -------------------------------------------------

@dataclass
class AdiabaticRecord:
    """Field-free invariants of one rotor or an array of rotors (SI)."""

    H0: np.ndarray
    p_phi: np.ndarray
    I_theta0: np.ndarray
    H: np.ndarray | None = None
    regime: np.ndarray | None = None

    @classmethod
    def from_free_rotor(cls, H0, p_phi, species: MolecularSpecies) -> "AdiabaticRecord":
        H0 = np.asarray(H0, dtype=float)
        p_phi = np.asarray(p_phi, dtype=float)
        coeffs = FieldCoefficients.from_energy(H0, p_phi, 0.0, species)
        roots = find_roots(coeffs)
        I_theta0 = adiabatic_invariant(coeffs, roots, species.moment_of_inertia)
        return cls(H0, p_phi, I_theta0, H0.copy(), roots.regime)

    @classmethod
    def from_reduced_state(cls, state, species: MolecularSpecies, T: float) -> "AdiabaticRecord":
        """From a classical.ClassicalRotorState in thermal units at temperature T."""
        I = species.moment_of_inertia
        kT = K_B * T
        p_th = math.sqrt(kT * I)
        return cls.from_free_rotor(0.5 * kT * state.omega**2, state.p_phi * p_th, species)


@dataclass
class EnergySolution:
    H: np.ndarray
    regime: np.ndarray
    avg_u: np.ndarray
    roots: RootTriple
    converged: np.ndarray
    iterations: int


def _energy_bracket(H0, E2, species):
    vmin = -0.25 * E2 * max(species.alpha_parallel_si, species.alpha_perp_si)
    vmax = -0.25 * E2 * min(species.alpha_parallel_si, species.alpha_perp_si)
    return H0 + vmin, H0 + vmax


def _action_and_period(H, p_phi, E2, species, order=None):
    coeffs = FieldCoefficients.from_energy(H, p_phi, E2, species)
    roots = find_roots(coeffs, strict=False)
    if order is None:
        T, N, S, used = oscillation_integrals(coeffs, roots, strict=False)
    else:
        T, N, S = _integrals_fixed(coeffs, roots, order)
        used = np.full(T.shape, order)
        dead = roots.regime < 0
        T, N, S = np.where(dead, 0.0, T), np.where(dead, 0.0, N), np.where(dead, 0.0, S)
    I = species.moment_of_inertia
    return 0.25 * I * S, T, N, coeffs, roots, used


def solve_energies(I_theta0, p_phi, E2, species: MolecularSpecies, H0, H_guess=None,
                   rtol: float = ENERGY_RTOL, max_iter: int = 200) -> EnergySolution:
    """H with I_θ(H, E) = I_θ0 for each rotor, by safeguarded Newton in a bracket.

    dI_θ/dH = ∫du/√g, so each Newton step reuses the quadrature nodes.  The
    bracket is [H0 + min V, H0 + max V] with V the field's potential range;
    below the bottom of the well the action is taken as zero so the target
    function stays monotone.
    """
    I_theta0 = np.atleast_1d(np.asarray(I_theta0, dtype=float))
    p_phi = np.broadcast_to(np.asarray(p_phi, dtype=float), I_theta0.shape).copy()
    H0 = np.broadcast_to(np.asarray(H0, dtype=float), I_theta0.shape).copy()
    E2 = float(E2)
    if E2 == 0.0:
        coeffs = FieldCoefficients.from_energy(H0, p_phi, 0.0, species)
        roots = find_roots(coeffs, strict=False)
        return EnergySolution(H0.copy(), roots.regime, average_alignment_strong(coeffs, roots, strict=False),
                              roots, np.ones(H0.shape, dtype=bool), 0)

    a, b = _energy_bracket(H0, E2, species)
    scale = np.abs(H0) + 0.25 * E2 * (species.alpha_parallel_si + species.alpha_perp_si)
    x = np.clip(H0 if H_guess is None else np.asarray(H_guess, dtype=float), a, b).copy()
    done = np.zeros(x.shape, dtype=bool)
    it = 0
    for it in range(1, max_iter + 1):
        idx = np.flatnonzero(~done)
        if idx.size == 0:
            break
        f, T, *_ = _action_and_period(x[idx], p_phi[idx], E2, species)
        f = f - I_theta0[idx]
        neg = f < 0
        a[idx] = np.where(neg, x[idx], a[idx])
        b[idx] = np.where(neg, b[idx], x[idx])
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = x[idx] - f / T
        inside = np.isfinite(newton) & (newton > a[idx]) & (newton < b[idx]) & (T > 0)
        step = np.where(inside, newton, 0.5 * (a[idx] + b[idx]))
        small_f = np.abs(f) <= 1e-3 * rtol * np.maximum(I_theta0[idx], 1e-300)
        width = b[idx] - a[idx]
        moved = np.abs(step - x[idx])
        x[idx] = np.where(small_f, x[idx], step)
        done[idx] = small_f | ((moved <= rtol * scale[idx]) & inside) | (width <= 1e-3 * rtol * scale[idx])

    coeffs = FieldCoefficients.from_energy(x, p_phi, E2, species)
    roots = find_roots(coeffs, strict=False)
    T, N, S, used = oscillation_integrals(coeffs, roots, strict=False)
    with np.errstate(invalid="ignore", divide="ignore"):
        avg = np.where(np.isfinite(T) & (T > 0), N / T, roots.lo)
    avg = np.clip(avg, roots.lo, roots.hi)
    converged = done & (used != -QUAD_MAX)
    return EnergySolution(x, roots.regime, avg, roots, converged, it)


def solve_energy(record: AdiabaticRecord, E: float, species: MolecularSpecies):
    """Energy in a field of amplitude E (V/m) that keeps I_θ at its field-free value."""
    sol = solve_energies(record.I_theta0, record.p_phi, E * E, species, record.H0,
                         H_guess=record.H)
    if not np.all(sol.converged):
        bad = np.flatnonzero(~sol.converged)
        raise RuntimeError(
            f"energy solve failed for {bad.size} rotor(s); regimes "
            f"{[REGIME_NAMES[int(r)] for r in sol.regime[bad][:5]]}")
    H = sol.H if np.ndim(record.H0) else sol.H[0]
    record.H = H
    record.regime = sol.regime if np.ndim(record.H0) else sol.regime[0]
    return H


@dataclass
class RampResult:
    """Solutions along a sequence of field levels (rows) for each rotor (columns)."""

    E2: np.ndarray
    H: np.ndarray
    avg_u: np.ndarray
    regime: np.ndarray
    crossed: np.ndarray
    failed: np.ndarray


def follow_ramp(record: AdiabaticRecord, E2_levels, species: MolecularSpecies) -> RampResult:
    """Solve the energy on consecutive field levels, warm-starting each from the last.

    A rotor whose regime flips between consecutive levels is flagged as a
    separatrix crosser; its energy stays continuous because the action
    integral is.
    """
    E2_levels = np.asarray(E2_levels, dtype=float)
    H0 = np.atleast_1d(record.H0)
    shape = (E2_levels.size, H0.size)
    H = np.empty(shape)
    avg = np.empty(shape)
    regime = np.empty(shape, dtype=int)
    failed = np.zeros(H0.size, dtype=bool)
    guess = H0
    for k, e2 in enumerate(E2_levels):
        sol = solve_energies(record.I_theta0, record.p_phi, e2, species, H0, H_guess=guess)
        H[k], avg[k], regime[k] = sol.H, sol.avg_u, sol.regime
        failed |= ~sol.converged
        guess = sol.H
    flips = np.any(np.diff(regime, axis=0) != 0, axis=0) if E2_levels.size > 1 else np.zeros(H0.size, bool)
    return RampResult(E2_levels, H, avg, regime, flips, failed)


@dataclass
class PeakAlignment:
    samples: np.ndarray
    regime: np.ndarray
    failed: int
    rejected: int
    crossed: int = 0

    def pendular_fraction(self) -> float:
        return float(np.mean(self.regime == PENDULAR))


def peak_alignment_distribution(spec, species: MolecularSpecies, peak_intensity: float,
                                pulse=None) -> PeakAlignment:
    """⟨u⟩ at the top of the deflecting field for a sampled thermal ensemble."""
    from .classical import apply_kick, sample_thermal
    from .core import field_squared_from_intensity, reduced_kick

    T, _ = spec.thermal.resolve(species)
    states = sample_thermal(spec)
    if pulse is not None:
        states = apply_kick(states, reduced_kick(pulse.strength(species), species, T), pulse.polarization)
    good = states.omega > 0
    states = states[good]
    record = AdiabaticRecord.from_reduced_state(states, species, T)
    sol = solve_energies(record.I_theta0, record.p_phi, field_squared_from_intensity(peak_intensity),
                         species, record.H0)
    ok = sol.converged
    # every field-free rotor is rotating, so any other regime at the peak passed a separatrix
    crossed = int(np.sum(ok & (sol.regime != ROTATING)))
    return PeakAlignment(sol.avg_u[ok], sol.regime[ok], int((~ok).sum()), int((~good).sum()), crossed)
