"""Classical rigid rotors in a weak deflecting field.

All momenta are in thermal units p_th = I ω_th and times in t' = ω_th t, so a
thermal ensemble has unit-variance momenta whatever the molecule.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .core import KickPulse, MolecularSpecies, Polarization, ThermalSpec, reduced_kick
from .rng import RngSpec, uniform_block

DEFAULT_SAMPLES = 1_000_000
DEFAULT_BINS = 200
CHUNK = 1 << 16


class DegenerateRotorError(ValueError):
    """A rotor with zero angular velocity has no time-averaged alignment."""


@dataclass
class ClassicalRotorState:
    """(θ, φ, P'_θ, P'_φ); fields may be scalars or equal-length arrays."""

    theta: np.ndarray
    phi: np.ndarray
    p_theta: np.ndarray
    p_phi: np.ndarray

    def __post_init__(self):
        for name in ("theta", "phi", "p_theta", "p_phi"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if not all(np.all(np.isfinite(getattr(self, n))) for n in ("theta", "phi", "p_theta", "p_phi")):
            raise ValueError("rotor state must be finite")
        if np.any((np.sin(self.theta) <= 0) & (self.p_phi != 0)):
            raise ValueError("p_phi != 0 needs sin(theta) > 0")

    def __len__(self):
        return int(self.theta.size)

    def __getitem__(self, idx):
        return ClassicalRotorState(self.theta[idx], self.phi[idx], self.p_theta[idx], self.p_phi[idx])

    @property
    def omega(self) -> np.ndarray:
        """Angular speed √(P'_θ² + P'_φ²/sin²θ) in reduced units."""
        return np.hypot(self.p_theta, self.p_phi / np.sin(self.theta))

    @property
    def energy(self) -> np.ndarray:
        """Rotational energy in units of k_B T."""
        return 0.5 * self.omega**2

    @classmethod
    def concatenate(cls, parts):
        parts = list(parts)
        return cls(*(np.concatenate([getattr(p, n).ravel() for p in parts])
                     for n in ("theta", "phi", "p_theta", "p_phi")))


@dataclass(frozen=True)
class EnsembleSpec:
    n_samples: int = DEFAULT_SAMPLES
    thermal: ThermalSpec = field(default_factory=lambda: ThermalSpec(temperature=5.0))
    rng: RngSpec = field(default_factory=RngSpec)

    def __post_init__(self):
        if int(self.n_samples) < 1:
            raise ValueError("n_samples must be >= 1")


def sample_thermal_range(seed: int, start: int, stop: int) -> ClassicalRotorState:
    """Thermal rotors for sample indices [start, stop).

    Sample k is a pure function of (seed, k): four uniforms from its Philox
    block give cosθ, φ and a Box-Muller pair for the momenta.
    """
    u = uniform_block(seed, np.arange(start, stop, dtype=np.uint64))
    cos_t = 2.0 * u[:, 0] - 1.0
    theta = np.arccos(cos_t)
    phi = 2.0 * np.pi * u[:, 1]
    radius = np.sqrt(-2.0 * np.log1p(-u[:, 2]))
    angle = 2.0 * np.pi * u[:, 3]
    p_theta = radius * np.cos(angle)
    p_phi = radius * np.sin(angle) * np.sin(theta)
    return ClassicalRotorState(theta, phi, p_theta, p_phi)


def sample_thermal(spec: EnsembleSpec) -> ClassicalRotorState:
    """θ with density ½ sinθ, φ uniform, P'_θ ~ N(0,1), P'_φ ~ N(0, sin²θ)."""
    return sample_thermal_range(spec.rng.seed, 0, int(spec.n_samples))


def apply_kick(state: ClassicalRotorState, P_s: float, polarization="z") -> ClassicalRotorState:
    """Impulsive kick of reduced strength P'_s; angles are unchanged."""
    polarization = Polarization.parse(polarization)
    th, ph = state.theta, state.phi
    if polarization is Polarization.Z_PARALLEL:
        return ClassicalRotorState(th, ph, state.p_theta - P_s * np.sin(2 * th), state.p_phi)
    return ClassicalRotorState(
        th, ph,
        state.p_theta + P_s * np.cos(ph) ** 2 * np.sin(2 * th),
        state.p_phi - P_s * np.sin(th) ** 2 * np.sin(2 * ph),
    )


def time_averaged_alignment(state: ClassicalRotorState) -> np.ndarray:
    """A = ¼[1 + (P'_θ/ω)²] + ¼[1 - (P'_θ/ω)²] cos 2θ."""
    omega = state.omega
    if np.any(omega == 0):
        raise DegenerateRotorError("non-rotating rotor (ω = 0) has no time-averaged alignment")
    r = np.minimum((state.p_theta / omega) ** 2, 1.0)
    A = 0.25 * (1 + r) + 0.25 * (1 - r) * np.cos(2 * state.theta)
    return np.clip(A, 0.0, 0.5)


def free_cos_theta(state: ClassicalRotorState, t) -> np.ndarray:
    """cosθ(t') of a free rotor, broadcast over rotors (last axis) and times."""
    omega = state.omega
    r = np.divide(state.p_theta, omega, out=np.zeros_like(omega), where=omega > 0)
    t = np.asarray(t, dtype=float)[..., None]
    return 0.5 * (1 - r) * np.cos(state.theta - omega * t) + 0.5 * (1 + r) * np.cos(state.theta + omega * t)


def classical_alignment_trace(states: ClassicalRotorState, times) -> np.ndarray:
    """Ensemble mean of cos²θ(t'); degenerate rotors are dropped."""
    keep = states.omega > 0
    states = states[keep]
    times = np.atleast_1d(np.asarray(times, dtype=float))
    total = np.zeros(times.size)
    for k in range(0, len(states), CHUNK // 4):
        part = states[k:k + CHUNK // 4]
        total += np.sum(free_cos_theta(part, times) ** 2, axis=-1)
    return total / max(len(states), 1)


# --- distributions ---------------------------------------------------------

def rainbow_reference_pdf(A, variant: str = "thermal"):
    """Heuristic densities of A: thermal 1/√(1-2A); perpendicular (√2/π)/√(A(1-2A))."""
    A = np.asarray(A, dtype=float)
    out = np.zeros_like(A)
    if variant == "thermal":
        ok = (A >= 0) & (A < 0.5)
        out[ok] = 1.0 / np.sqrt(1.0 - 2.0 * A[ok])
    elif variant == "perpendicular":
        ok = (A > 0) & (A < 0.5)
        out[ok] = (math.sqrt(2.0) / math.pi) / np.sqrt(A[ok] * (1.0 - 2.0 * A[ok]))
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return out if out.ndim else float(out)


def rainbow_reference_cdf(A, variant: str = "thermal"):
    A = np.clip(np.asarray(A, dtype=float), 0.0, 0.5)
    if variant == "thermal":
        out = 1.0 - np.sqrt(1.0 - 2.0 * A)
    elif variant == "perpendicular":
        out = (2.0 / math.pi) * np.arcsin(np.sqrt(2.0 * A))
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return out if out.ndim else float(out)


def parallel_kick_asymptotics(P: float, j_thermal: float) -> tuple[float, float]:
    """Large-kick mean and width of A for prealignment along the deflecting field."""
    if P <= 0 or j_thermal <= 0:
        raise ValueError("P and J_T must be positive")
    x = j_thermal / P
    mean = 0.5 - math.sqrt(math.pi) / 8.0 * x
    std = math.sqrt(math.sqrt(math.pi) / 32.0 * x)
    return mean, std


@dataclass
class AlignmentDistribution:
    """Equal-weight samples of the time-averaged alignment factor."""

    samples: np.ndarray
    rejected: int = 0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)

    def __len__(self):
        return int(self.samples.size)

    def mean(self) -> float:
        return float(self.samples.mean())

    def std(self) -> float:
        return float(self.samples.std())

    def histogram(self, bins: int = DEFAULT_BINS, range_=(0.0, 1.0)):
        """(edges, masses) on equal-width bins; masses sum to 1."""
        counts, edges = np.histogram(self.samples, bins=bins, range=range_)
        return edges, counts / max(self.samples.size, 1)

    def ks_statistic(self, variant: str = "thermal") -> float:
        return float(stats.kstest(self.samples, lambda a: rainbow_reference_cdf(a, variant)).statistic)


def _kicked_alignment_chunk(seed, start, stop, P_s, polarization):
    states = sample_thermal_range(seed, start, stop)
    if P_s:
        states = apply_kick(states, P_s, polarization)
    good = states.omega > 0
    return time_averaged_alignment(states[good]), int((~good).sum())


def chunk_bounds(n: int, chunk: int = CHUNK):
    return [(k, min(k + chunk, n)) for k in range(0, n, chunk)]


def ensemble_alignment_distribution(spec: EnsembleSpec, pulse: KickPulse | None = None,
                                    species: MolecularSpecies | None = None,
                                    workers: int = 1) -> AlignmentDistribution:
    """Monte Carlo distribution of A for a thermal ensemble, optionally kicked first.

    Chunks are evaluated in any order by ``workers`` threads but joined in index
    order, so the samples do not depend on the worker count.
    """
    P_s, pol = 0.0, Polarization.Z_PARALLEL
    if pulse is not None:
        if species is None:
            raise ValueError("a species is needed to convert the kick to thermal units")
        T, _ = spec.thermal.resolve(species)
        P_s = reduced_kick(pulse.strength(species), species, T)
        pol = pulse.polarization
    jobs = chunk_bounds(int(spec.n_samples))

    def run(bounds):
        return _kicked_alignment_chunk(spec.rng.seed, bounds[0], bounds[1], P_s, pol)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, jobs))
    else:
        parts = [run(b) for b in jobs]
    samples = np.concatenate([p[0] for p in parts])
    return AlignmentDistribution(samples, sum(p[1] for p in parts))
