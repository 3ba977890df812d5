"""Quantum rigid rotor in a weak deflecting field, with impulsive prealignment.

States live on the truncated ``|J, m>`` basis, flattened with index
``J*J + J + m``.  Kicks ``exp(iP·O)`` are applied by integrating
``dc/dξ = iP·O·c`` from ξ = 0 to 1 on the sparse matrix of ``O``, which is
either cos²θ (pulse along z, m conserved) or cos²φ sin²θ (pulse along x).

Matrix elements come from products of direction-cosine ladder elements
(Condon-Shortley phases), so they are exact on any truncated block.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import sparse
from scipy.integrate import solve_ivp

from .core import C_LIGHT, CM1_TO_M1, HBAR, KickPulse, MolecularSpecies, Polarization, ThermalSpec

ODE_RTOL = 1e-10
ODE_ATOL = 1e-13
LEAK_TOLERANCE = 1e-8
NORM_TOLERANCE = 1e-8
THERMAL_CUTOFF = 1e-6

COS2_THETA = "cos2_theta"
COS2_PHI_SIN2_THETA = "cos2_phi_sin2_theta"


class TruncationError(RuntimeError):
    """Population leaked into the top of the truncated basis."""


# --- alignment factors ----------------------------------------------------

def alignment_factor(J, m):
    """<J,m|cos²θ|J,m> = 1/3 + (2/3)[J(J+1) - 3m²] / [(2J+3)(2J-1)].

    Accepts scalars or arrays.
    """
    J = np.asarray(J)
    m = np.asarray(m)
    if np.any(J < 0) or np.any(np.abs(m) > J):
        raise ValueError("alignment factor needs J >= 0 and |m| <= J")
    Jf = J.astype(float)
    out = 1.0 / 3.0 + (2.0 / 3.0) * (Jf * (Jf + 1) - 3.0 * m.astype(float) ** 2) / ((2 * Jf + 3) * (2 * Jf - 1))
    return out if out.ndim else float(out)


def alignment_factor_exact(J: int, m: int) -> Fraction:
    if J < 0 or abs(m) > J:
        raise ValueError("alignment factor needs J >= 0 and |m| <= J")
    return Fraction(1, 3) + Fraction(2 * (J * (J + 1) - 3 * m * m), 3 * (2 * J + 3) * (2 * J - 1))


# --- ladder elements --------------------------------------------------------

def _valid(J, m):
    return (J >= 0) & (np.abs(m) <= J)


def _cos_up(J, m):
    """<J+1, m|cosθ|J, m>."""
    J = np.asarray(J, dtype=float)
    m = np.asarray(m, dtype=float)
    ok = _valid(J, m)
    val = np.sqrt(np.where(ok, ((J + 1) ** 2 - m**2) / ((2 * J + 1) * (2 * J + 3)), 0.0))
    return np.where(ok, val, 0.0)


def _splus_up(J, m):
    """<J+1, m+1|sinθ e^{iφ}|J, m>."""
    J = np.asarray(J, dtype=float)
    m = np.asarray(m, dtype=float)
    ok = _valid(J, m)
    val = np.sqrt(np.where(ok, (J + m + 1) * (J + m + 2) / ((2 * J + 1) * (2 * J + 3)), 0.0))
    return np.where(ok, -val, 0.0)


def _splus_down(J, m):
    """<J-1, m+1|sinθ e^{iφ}|J, m>."""
    J = np.asarray(J, dtype=float)
    m = np.asarray(m, dtype=float)
    ok = _valid(J, m) & _valid(J - 1, m + 1)
    val = np.sqrt(np.where(ok, (J - m) * (J - m - 1) / ((2 * J - 1) * (2 * J + 1)), 0.0))
    return np.where(ok, val, 0.0)


def _cos2_diag(J, m):
    return _cos_up(J, m) ** 2 + _cos_up(J - 1, m) ** 2


def _cos2_up2(J, m):
    """<J+2, m|cos²θ|J, m>."""
    return _cos_up(J + 1, m) * _cos_up(J, m)


def _s2_elements(J, m):
    """<J+dJ, m+2|sin²θ e^{2iφ}|J, m> for dJ = +2, 0, -2."""
    up2 = _splus_up(J + 1, m + 1) * _splus_up(J, m)
    same = _splus_down(J + 1, m + 1) * _splus_up(J, m) + _splus_up(J - 1, m + 1) * _splus_down(J, m)
    down2 = _splus_down(J - 1, m + 1) * _splus_down(J, m)
    return {2: up2, 0: same, -2: down2}


def _cos2_element(Jp, J, m):
    if Jp == J:
        return float(_cos2_diag(J, m))
    if Jp == J + 2:
        return float(_cos2_up2(J, m))
    if Jp == J - 2:
        return float(_cos2_up2(Jp, m))
    return 0.0


def cos2_matrix_element(Jp: int, mp: int, J: int, m: int, operator: str = COS2_THETA) -> float:
    """<J',m'|O|J,m> for O = cos²θ or cos²φ sin²θ; zero for forbidden couplings."""
    if not (_valid(J, m) and _valid(Jp, mp)):
        return 0.0
    if operator == COS2_THETA:
        return _cos2_element(Jp, J, m) if mp == m else 0.0
    if operator != COS2_PHI_SIN2_THETA:
        raise ValueError(f"unknown operator {operator!r}")
    dJ = Jp - J
    if dJ not in (-2, 0, 2):
        return 0.0
    if mp == m:
        return 0.5 * ((1.0 if dJ == 0 else 0.0) - _cos2_element(Jp, J, m))
    if mp == m + 2:
        return 0.25 * float(_s2_elements(J, m)[dJ])
    if mp == m - 2:
        # sin²θ e^{-2iφ} is the transpose of sin²θ e^{2iφ} (real elements)
        return 0.25 * float(_s2_elements(Jp, mp)[-dJ])
    return 0.0


# --- basis and states -------------------------------------------------------

def basis_index(J, m):
    return np.asarray(J) * np.asarray(J) + np.asarray(J) + np.asarray(m)


def basis_labels(J_max: int) -> tuple[np.ndarray, np.ndarray]:
    J = np.repeat(np.arange(J_max + 1), 2 * np.arange(J_max + 1) + 1)
    m = np.arange(J.size) - J * J - J
    return J, m


@dataclass
class QuantumState:
    """Coefficients on the flattened ``|J, m>`` basis, 0 <= J <= J_max."""

    coefficients: np.ndarray
    J_max: int

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=complex)
        if self.coefficients.shape != ((self.J_max + 1) ** 2,):
            raise ValueError("coefficient vector does not match J_max")

    @classmethod
    def basis_state(cls, J: int, m: int, J_max: int | None = None) -> "QuantumState":
        J_max = max(J, J_max if J_max is not None else J)
        c = np.zeros((J_max + 1) ** 2, dtype=complex)
        c[basis_index(J, m)] = 1.0
        return cls(c, J_max)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.coefficients))

    @property
    def populations(self) -> np.ndarray:
        return np.abs(self.coefficients) ** 2

    def top_shell_population(self, shells: int = 2) -> float:
        J, _ = basis_labels(self.J_max)
        return float(self.populations[J > self.J_max - shells].sum())

    def highest_populated_J(self, threshold: float = 0.0) -> int:
        J, _ = basis_labels(self.J_max)
        occupied = J[self.populations > threshold]
        return int(occupied.max()) if occupied.size else 0

    def resized(self, J_max: int) -> "QuantumState":
        c = np.zeros((J_max + 1) ** 2, dtype=complex)
        n = min(c.size, self.coefficients.size)
        c[:n] = self.coefficients[:n]
        return QuantumState(c, J_max)

    def alignment(self) -> float:
        """Time-averaged ⟨cos²θ⟩, i.e. Σ |c_{J,m}|² A_{J,m}."""
        J, m = basis_labels(self.J_max)
        return float(np.sum(self.populations * alignment_factor(J, m)))


def truncation_size(J0: int, P: float) -> int:
    """Basis size rule: J0 + ceil(6P) + 10, never below 20."""
    return max(20, int(J0) + int(math.ceil(6.0 * P)) + 10)


# --- operator blocks --------------------------------------------------------

def z_block(m: int, parity: int, J_max: int):
    """cos²θ restricted to fixed m and J ≡ parity (mod 2). Returns (J list, matrix)."""
    m = abs(m)
    start = m + ((m - parity) % 2)
    J = np.arange(start, J_max + 1, 2)
    diag = _cos2_diag(J, m)
    off = _cos2_up2(J[:-1], m)
    mat = sparse.diags([off, diag, off], [-1, 0, 1], shape=(J.size, J.size), format="csr")
    return J, mat


def x_block(J_parity: int, m_parity: int, J_max: int):
    """cos²φ sin²θ restricted to J ≡ J_parity and m ≡ m_parity (mod 2).

    Returns (J labels, m labels, matrix).
    """
    J_all, m_all = basis_labels(J_max)
    keep = (J_all % 2 == J_parity) & (m_all % 2 == m_parity)
    J, m = J_all[keep], m_all[keep]
    pos = np.full(J_all.size, -1)
    pos[np.flatnonzero(keep)] = np.arange(J.size)

    rows, cols, vals = [], [], []

    def add(src, Jt, mt, v):
        ok = (v != 0) & _valid(Jt, mt) & (Jt <= J_max)
        tgt = pos[basis_index(Jt[ok], mt[ok])]
        rows.append(tgt)
        cols.append(src[ok])
        vals.append(v[ok])

    src = np.arange(J.size)
    add(src, J, m, 0.5 * (1.0 - _cos2_diag(J, m)))
    add(src, J + 2, m, -0.5 * _cos2_up2(J, m))
    # lower off-diagonal of cos²θ: <J-2,m|.|J,m> = <J,m|.|J-2,m>
    add(src, J - 2, m, -0.5 * np.where(J >= 2, _cos2_up2(J - 2, m), 0.0))
    for dJ, v in _s2_elements(J, m).items():
        add(src, J + dJ, m + 2, 0.25 * v)
    # sin²θ e^{-2iφ}: transpose of the raising part
    for dJ in (2, 0, -2):
        Js, ms = J - dJ, m - 2
        v = np.where(_valid(Js, ms), _s2_elements(Js, ms)[dJ], 0.0)
        add(src, Js, ms, 0.25 * v)
    mat = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(J.size, J.size)
    ).tocsr()
    mat.sum_duplicates()
    return J, m, mat


def _propagate_columns(matrix, P: float, C0: np.ndarray) -> np.ndarray:
    """Integrate dC/dξ = iP·M·C on [0, 1] for a block of column vectors."""
    C0 = np.asarray(C0, dtype=complex)
    if P == 0:
        return C0.copy()
    shape = C0.shape
    gen = (1j * P) * matrix

    def rhs(_xi, y):
        return (gen @ y.reshape(shape)).ravel()

    sol = solve_ivp(rhs, (0.0, 1.0), C0.ravel(), method="DOP853", rtol=ODE_RTOL, atol=ODE_ATOL)
    if not sol.success:
        raise RuntimeError(f"kick propagation failed: {sol.message}")
    return sol.y[:, -1].reshape(shape)


def _check_columns(C: np.ndarray, J_rows: np.ndarray, J_max: int):
    norms = np.sum(np.abs(C) ** 2, axis=0)
    if np.any(np.abs(norms - 1.0) > 2 * NORM_TOLERANCE):
        raise RuntimeError(f"kick propagation lost unitarity (max error {np.max(np.abs(norms - 1)):.2e})")
    leak = np.sum(np.abs(C[J_rows > J_max - 2]) ** 2, axis=0)
    if np.any(leak > LEAK_TOLERANCE):
        raise TruncationError(
            f"top-shell population {leak.max():.2e} exceeds {LEAK_TOLERANCE:g} at J_max={J_max}"
        )


def kick_propagate(state: QuantumState, P: float, polarization="z", J_max: int | None = None) -> QuantumState:
    """Apply exp(iP·O) to ``state``; O = cos²θ (z) or cos²φ sin²θ (x)."""
    polarization = Polarization.parse(polarization)
    if P == 0:
        return QuantumState(state.coefficients.copy(), state.J_max)
    if J_max is None:
        J_max = max(state.J_max, truncation_size(state.highest_populated_J(), P))
    psi = state.resized(J_max)
    out = np.zeros_like(psi.coefficients)
    J_all, m_all = basis_labels(J_max)
    occupied = psi.coefficients != 0

    if polarization is Polarization.Z_PARALLEL:
        blocks = sorted({(int(m), int(J) % 2) for J, m in zip(J_all[occupied], m_all[occupied])})
        for m, parity in blocks:
            J, mat = z_block(m, parity, J_max)
            idx = basis_index(J, m)
            C = _propagate_columns(mat, P, psi.coefficients[idx][:, None])
            _check_columns(C, J, J_max)
            out[idx] = C[:, 0]
    else:
        blocks = sorted({(int(J) % 2, int(m) % 2) for J, m in zip(J_all[occupied], m_all[occupied])})
        for jp, mp in blocks:
            J, m, mat = x_block(jp, mp, J_max)
            idx = basis_index(J, m)
            C = _propagate_columns(mat, P, psi.coefficients[idx][:, None])
            _check_columns(C, J, J_max)
            out[idx] = C[:, 0]
    return QuantumState(out, J_max)


# --- thermal ensembles -------------------------------------------------------

def boltzmann_weights(species: MolecularSpecies, thermal: ThermalSpec, cutoff: float = THERMAL_CUTOFF):
    """Allowed J0 values and per-state weights exp(-E/kT)/Q.

    J0 runs up to the smallest J whose cumulative weight reaches 1 - cutoff;
    weights are renormalised over the kept states.
    """
    kT = thermal.kT(species)
    J_hi = 10
    while True:
        J = np.array([j for j in range(J_hi + 1) if species.j_parity.allows(j)])
        w = np.exp(-species.rotational_energy(J) / kT)
        if w[-1] * (2 * J[-1] + 1) < 1e-20 * max(w.max(), 1e-300):
            break
        J_hi *= 2
    mass = (2 * J + 1) * w
    cum = np.cumsum(mass) / mass.sum()
    n_keep = int(np.searchsorted(cum, 1.0 - cutoff)) + 1
    J, w = J[:n_keep], w[:n_keep]
    Q = np.sum((2 * J + 1) * w)
    return J.astype(int), w / Q


@dataclass
class ThermalWavepacket:
    """Incoherent thermal mixture after the kick.

    ``populations[k]`` is the ensemble population of basis state k and
    ``coherence_up2[k]`` the weighted sum of c*_{J,m} c_{J+2,m}, which is all
    the time-dependent ⟨cos²θ⟩ signal needs.
    """

    J_max: int
    populations: np.ndarray
    coherence_up2: np.ndarray

    def labels(self):
        return basis_labels(self.J_max)


def _accumulate(pack, J_rows, m_rows, C, weights):
    pops = np.abs(C) ** 2 @ weights
    np.add.at(pack.populations, basis_index(J_rows, m_rows), pops)
    # neighbours two J apart with the same m sit at fixed offsets only in z blocks,
    # so look them up by label
    lookup = {(int(j), int(mm)): r for r, (j, mm) in enumerate(zip(J_rows, m_rows))}
    src, dst = [], []
    for r, (j, mm) in enumerate(zip(J_rows, m_rows)):
        t = lookup.get((int(j) + 2, int(mm)))
        if t is not None:
            src.append(r)
            dst.append(t)
    if src:
        src, dst = np.array(src), np.array(dst)
        coh = (np.conj(C[src]) * C[dst]) @ weights
        np.add.at(pack.coherence_up2, basis_index(J_rows[src], m_rows[src]), coh)


def thermal_wavepacket(species: MolecularSpecies, thermal: ThermalSpec, pulse: KickPulse | None = None,
                       J_max: int | None = None) -> ThermalWavepacket:
    """Propagate every thermally populated |J0, m0> through the kick and sum incoherently.

    Initial states sharing a symmetry block are propagated together, in a
    fixed (J0, m0) order, so results are bit-stable.
    """
    J0, w0 = boltzmann_weights(species, thermal)
    P = pulse.strength(species) if pulse is not None else 0.0
    if J_max is None:
        J_max = truncation_size(int(J0.max()), P) if P > 0 else int(J0.max()) + 2
    size = (J_max + 1) ** 2
    pack = ThermalWavepacket(J_max, np.zeros(size), np.zeros(size, dtype=complex))

    if P == 0:
        for j, w in zip(J0, w0):
            pack.populations[basis_index(j, np.arange(-j, j + 1))] += w
        return pack

    pol = pulse.polarization
    if pol is Polarization.Z_PARALLEL:
        for parity in sorted({int(j) % 2 for j in J0}):
            for m in range(0, int(J0.max()) + 1):
                sel = (J0 % 2 == parity) & (J0 >= m)
                if not sel.any():
                    continue
                J_rows, mat = z_block(m, parity, J_max)
                cols = np.searchsorted(J_rows, J0[sel])
                C0 = np.zeros((J_rows.size, cols.size), dtype=complex)
                C0[cols, np.arange(cols.size)] = 1.0
                C = _propagate_columns(mat, P, C0)
                _check_columns(C, J_rows, J_max)
                # the ±m blocks are identical
                for sign in ((1, -1) if m else (1,)):
                    _accumulate(pack, J_rows, np.full(J_rows.size, sign * m), C, w0[sel])
    else:
        init_J = np.concatenate([np.full(2 * j + 1, j) for j in J0])
        init_m = np.concatenate([np.arange(-j, j + 1) for j in J0])
        init_w = np.concatenate([np.full(2 * j + 1, w) for j, w in zip(J0, w0)])
        for jp in sorted({int(j) % 2 for j in J0}):
            for mp in (0, 1):
                sel = (init_J % 2 == jp) & (init_m % 2 == mp)
                if not sel.any():
                    continue
                J_rows, m_rows, mat = x_block(jp, mp, J_max)
                pos = {(int(a), int(b)): r for r, (a, b) in enumerate(zip(J_rows, m_rows))}
                rows = np.array([pos[(int(a), int(b))] for a, b in zip(init_J[sel], init_m[sel])])
                C0 = np.zeros((J_rows.size, rows.size), dtype=complex)
                C0[rows, np.arange(rows.size)] = 1.0
                C = _propagate_columns(mat, P, C0)
                _check_columns(C, J_rows, J_max)
                _accumulate(pack, J_rows, m_rows, C, init_w[sel])
    return pack


@dataclass
class DiscreteAlignmentDistribution:
    """Discrete lines (A, weight), one per distinct rational value of A_{J,m}."""

    values: np.ndarray
    weights: np.ndarray
    keys: list = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    def mean(self) -> float:
        return float(np.sum(self.values * self.weights) / self.total)

    def std(self) -> float:
        mu = self.mean()
        return float(np.sqrt(np.sum(self.weights * (self.values - mu) ** 2) / self.total))


def distribution_from_populations(J_max: int, populations: np.ndarray, threshold: float = 0.0):
    """Group populations by the exact rational value of A_{J,m}."""
    J, m = basis_labels(J_max)
    groups: dict[Fraction, float] = {}
    for j, mm, p in zip(J, m, populations):
        if p <= threshold:
            continue
        key = alignment_factor_exact(int(j), int(mm))
        groups[key] = groups.get(key, 0.0) + float(p)
    keys = sorted(groups)
    weights = np.array([groups[k] for k in keys])
    weights = weights / weights.sum()
    return DiscreteAlignmentDistribution(np.array([float(k) for k in keys]), weights, keys)


def thermal_distribution(species: MolecularSpecies, thermal: ThermalSpec, pulse: KickPulse | None = None,
                         J_max: int | None = None) -> DiscreteAlignmentDistribution:
    pack = thermal_wavepacket(species, thermal, pulse, J_max)
    return distribution_from_populations(pack.J_max, pack.populations)


def coarse_grain(dist: DiscreteAlignmentDistribution, bins: int = 50):
    """Equal-width histogram of the discrete lines on [0, 1]. Returns (edges, masses)."""
    if bins < 2:
        raise ValueError("need at least two bins")
    masses, edges = np.histogram(dist.values, bins=bins, range=(0.0, 1.0), weights=dist.weights)
    return edges, masses


# --- free evolution ------------------------------------------------------------

def _trace_from_moments(species, J_max, populations, coherence_up2, times):
    J, m = basis_labels(J_max)
    static = float(np.sum(populations * alignment_factor(J, m)))
    nz = np.flatnonzero(coherence_up2)
    times = np.asarray(times, dtype=float)
    if nz.size == 0:
        return np.full(times.shape, static)
    Jn, mn = J[nz], m[nz]
    amp = coherence_up2[nz] * _cos2_up2(Jn, mn)
    freq = (species.rotational_energy(Jn + 2) - species.rotational_energy(Jn)) / HBAR
    out = np.empty(times.size)
    for k0 in range(0, times.size, 256):
        tt = times.ravel()[k0:k0 + 256]
        out[k0:k0 + 256] = static + 2.0 * np.real(np.exp(-1j * np.outer(tt, freq)) @ amp)
    return out.reshape(times.shape)


def alignment_expectation_trace(state: QuantumState, species: MolecularSpecies, times) -> np.ndarray:
    """⟨cos²θ⟩(t) under field-free evolution, t in seconds."""
    J, m = basis_labels(state.J_max)
    c = state.coefficients
    coh = np.zeros_like(c)
    up = basis_index(J + 2, m)
    ok = (J + 2) <= state.J_max
    coh[ok] = np.conj(c[ok]) * c[up[ok]]
    return _trace_from_moments(species, state.J_max, state.populations, coh, times)


def thermal_alignment_trace(species: MolecularSpecies, thermal: ThermalSpec, pulse: KickPulse | None,
                            times, pack: ThermalWavepacket | None = None) -> np.ndarray:
    if pack is None:
        pack = thermal_wavepacket(species, thermal, pulse)
    return _trace_from_moments(species, pack.J_max, pack.populations, pack.coherence_up2, times)


def revival_period(species: MolecularSpecies) -> float:
    """1/(Bc): every phase exp(-i E_J t/ħ) returns to one after this time."""
    return 1.0 / (species.B * CM1_TO_M1 * C_LIGHT)
