"""Deflection of rotors crossing a focused, pulsed Gaussian beam.

The molecule flies along x = v_x t at a fixed height z.  The field amplitude
is E0 exp[-(x² + z²)/w0²] exp[-2ln2 t²/τ²], so along the path
E²(t) = E²_peak exp(-2κt²) with κ = v_x²/w0² + 2ln2/τ².  The transverse force
is F_z = -(z/w0²) E² [Δα⟨cos²θ⟩ + α⊥].
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .classical import (CHUNK, EnsembleSpec, apply_kick, chunk_bounds, ensemble_alignment_distribution,
                        sample_thermal_range, time_averaged_alignment)
from .core import KickPulse, MolecularSpecies, Polarization, field_squared_from_intensity, reduced_kick
from .strongfield import PENDULAR, AdiabaticRecord, follow_ramp

PERTURBATIVE_LIMIT = 0.1
DEFAULT_LEVELS = 200
TIME_NODES = 4001


@dataclass(frozen=True)
class DeflectingBeam:
    """Peak intensity (W/cm²), waist w0 (m) and pulse FWHM τ (s) of the deflecting laser."""

    peak_intensity: float
    waist: float
    fwhm: float

    def __post_init__(self):
        if self.peak_intensity < 0:
            raise ValueError("peak_intensity must be >= 0")
        if self.waist <= 0 or self.fwhm <= 0:
            raise ValueError("waist and fwhm must be positive")

    @property
    def E0_squared(self) -> float:
        return field_squared_from_intensity(self.peak_intensity)

    def kappa(self, v_x: float) -> float:
        return v_x**2 / self.waist**2 + 2.0 * math.log(2.0) / self.fwhm**2

    def peak_field_squared(self, z: float) -> float:
        """E² at the closest approach of a molecule at height z."""
        return self.E0_squared * math.exp(-2.0 * z * z / self.waist**2)


@dataclass(frozen=True)
class ScatteringGeometry:
    v_x: float
    impact_z: float

    def __post_init__(self):
        if self.v_x <= 0:
            raise ValueError("v_x must be positive")

    def window(self, beam: DeflectingBeam) -> float:
        """Half-width of the time window; both envelopes are negligible beyond it."""
        return max(3.0 * beam.fwhm, 6.0 * beam.waist / self.v_x)


def gamma0(species: MolecularSpecies, beam: DeflectingBeam, geom: ScatteringGeometry) -> float:
    """Mean deflection angle of an isotropic ensemble in the weak-field limit."""
    w0, v, z = beam.waist, geom.v_x, geom.impact_z
    pref = species.alpha_bar_si * beam.E0_squared / (4.0 * species.mass_kg * v * v)
    temporal = (1.0 + 2.0 * w0 * w0 * math.log(2.0) / (beam.fwhm**2 * v * v)) ** -0.5
    return pref * (-4.0 * z / w0) * math.sqrt(math.pi / 2.0) * temporal * math.exp(-2.0 * z * z / w0**2)


def deflect_weak(A, species: MolecularSpecies, beam: DeflectingBeam, geom: ScatteringGeometry):
    """γ = γ₀[α∥A + α⊥(1 - A)]/ᾱ."""
    A = np.asarray(A, dtype=float)
    if np.any((A < 0) | (A > 1)):
        raise ValueError("A must lie in [0, 1]")
    out = gamma0(species, beam, geom) * (species.alpha_perp + species.delta_alpha * A) / species.alpha_bar
    return out if out.ndim else float(out)


@dataclass
class TrajectoryResult:
    v_z: np.ndarray
    gamma: np.ndarray
    peak_alignment: np.ndarray
    peak_regime: np.ndarray
    crossed: np.ndarray
    failed: np.ndarray


def deflect_strong_trajectory(record: AdiabaticRecord, species: MolecularSpecies, beam: DeflectingBeam,
                              geom: ScatteringGeometry, n_steps: int = DEFAULT_LEVELS) -> TrajectoryResult:
    """Transverse velocity from the adiabatic ⟨cos²θ⟩ along the path through the beam.

    ⟨cos²θ⟩ is solved on ``n_steps`` equal steps of E² up to the peak, then
    interpolated linearly in E² onto a fine time grid and the force is
    integrated by the trapezoid rule.  E²(t) is even in t, so the rise and
    fall share one ramp solution.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    H0 = np.atleast_1d(record.H0)
    E2_peak = beam.peak_field_squared(geom.impact_z)
    levels = np.linspace(0.0, 1.0, n_steps + 1)
    if E2_peak == 0.0:
        zeros = np.zeros(H0.size)
        ramp = follow_ramp(record, [0.0], species)
        return TrajectoryResult(zeros, zeros.copy(), ramp.avg_u[-1], ramp.regime[-1],
                                np.zeros(H0.size, bool), ramp.failed)
    ramp = follow_ramp(record, E2_peak * levels, species)

    kappa = beam.kappa(geom.v_x)
    t = np.linspace(0.0, geom.window(beam), TIME_NODES)
    s = np.exp(-2.0 * kappa * t * t)
    pos = s * n_steps
    k = np.minimum(pos.astype(int), n_steps - 1)
    frac = (pos - k)[:, None]
    avg_t = (1.0 - frac) * ramp.avg_u[k] + frac * ramp.avg_u[k + 1]
    polar = species.delta_alpha_si * avg_t + species.alpha_perp_si
    force = -(geom.impact_z / beam.waist**2) * E2_peak * s[:, None] * polar
    v_z = 2.0 * np.trapezoid(force, t, axis=0) / species.mass_kg
    gamma = v_z / geom.v_x
    _check_perturbative(gamma)
    return TrajectoryResult(v_z, gamma, ramp.avg_u[-1], ramp.regime[-1], ramp.crossed, ramp.failed)


def _check_perturbative(gamma):
    if gamma.size and np.max(np.abs(gamma)) > PERTURBATIVE_LIMIT:
        warnings.warn(f"deflection angles up to {np.max(np.abs(gamma)):.3g} rad; the fixed-height "
                      "trajectory approximation assumes |γ| ≪ 1", RuntimeWarning, stacklevel=3)


@dataclass
class DeflectionResult:
    """Per-molecule deflections with the alignment that produced them."""

    v_z: np.ndarray
    gamma: np.ndarray
    alignment: np.ndarray
    field_free_alignment: np.ndarray
    mode: str
    flags: dict = field(default_factory=dict)
    pendular: np.ndarray | None = None

    def histogram(self, bins: int = 200, quantity: str = "gamma"):
        """(edges, masses) spanning the sample range; masses sum to 1."""
        x = getattr(self, quantity)
        lo, hi = (float(x.min()), float(x.max())) if x.size else (0.0, 1.0)
        if hi <= lo:
            lo, hi = lo - 0.5 * (abs(lo) or 1.0), hi + 0.5 * (abs(hi) or 1.0)
        counts, edges = np.histogram(x, bins=bins, range=(lo, hi))
        return edges, counts / max(x.size, 1)

    def summary(self) -> dict:
        out = {"mode": self.mode, "n": int(self.gamma.size)}
        for name in ("v_z", "gamma"):
            x = getattr(self, name)
            q = np.quantile(x, [0.05, 0.25, 0.5, 0.75, 0.95]) if x.size else [float("nan")] * 5
            out[name] = {"mean": float(np.mean(x)), "std": float(np.std(x)),
                         "quantiles": dict(zip(("q05", "q25", "q50", "q75", "q95"), map(float, q)))}
        if self.gamma.size > 1 and np.std(self.v_z) > 0 and np.std(self.field_free_alignment) > 0:
            out["pearson_vz_A"] = float(np.corrcoef(self.v_z, self.field_free_alignment)[0, 1])
        if self.pendular is not None:
            out["pendular_fraction"] = float(np.mean(self.pendular)) if self.pendular.size else 0.0
        out["flags"] = dict(self.flags)
        return out


def _strong_chunk(seed, start, stop, T, P_s, pol, species, beam, geom, n_steps):
    states = sample_thermal_range(seed, start, stop)
    if P_s:
        states = apply_kick(states, P_s, pol)
    good = states.omega > 0
    states = states[good]
    A = time_averaged_alignment(states)
    record = AdiabaticRecord.from_reduced_state(states, species, T)
    traj = deflect_strong_trajectory(record, species, beam, geom, n_steps)
    return traj, A, int((~good).sum())


def deflection_distribution(spec: EnsembleSpec, pulse: KickPulse | None, species: MolecularSpecies,
                            beam: DeflectingBeam, geom: ScatteringGeometry, mode: str = "weak",
                            n_steps: int = DEFAULT_LEVELS, workers: int = 1,
                            chunk: int = CHUNK // 16) -> DeflectionResult:
    """Deflection of a sampled ensemble, optionally prealigned by a kick.

    ``weak`` maps the field-free alignment through the affine weak-field law;
    ``strong`` follows each rotor adiabatically through the beam.
    """
    if mode == "weak":
        dist = ensemble_alignment_distribution(spec, pulse, species, workers=workers)
        gamma = np.asarray(deflect_weak(dist.samples, species, beam, geom))
        _check_perturbative(gamma)
        return DeflectionResult(gamma * geom.v_x, gamma, dist.samples, dist.samples, "weak",
                                {"rejected_degenerate": dist.rejected})
    if mode != "strong":
        raise ValueError(f"mode must be 'weak' or 'strong', got {mode!r}")

    T, _ = spec.thermal.resolve(species)
    P_s, pol = 0.0, Polarization.Z_PARALLEL
    if pulse is not None:
        P_s = reduced_kick(pulse.strength(species), species, T)
        pol = pulse.polarization
    jobs = chunk_bounds(int(spec.n_samples), chunk)

    def run(b):
        return _strong_chunk(spec.rng.seed, b[0], b[1], T, P_s, pol, species, beam, geom, n_steps)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, jobs))
    else:
        parts = [run(b) for b in jobs]
    cat = lambda f: np.concatenate([f(p) for p in parts])  # noqa: E731
    failed = cat(lambda p: p[0].failed)
    crossed = cat(lambda p: p[0].crossed)
    keep = ~failed
    flags = {"rejected_degenerate": sum(p[2] for p in parts),
             "separatrix_crossings": int(crossed.sum()),
             "solver_failures": int(failed.sum())}
    return DeflectionResult(cat(lambda p: p[0].v_z)[keep], cat(lambda p: p[0].gamma)[keep],
                            cat(lambda p: p[0].peak_alignment)[keep], cat(lambda p: p[1])[keep],
                            "strong", flags, cat(lambda p: p[0].peak_regime)[keep] == PENDULAR)

