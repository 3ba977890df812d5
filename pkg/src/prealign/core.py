"""Physical constants, molecular species and unit conversions.

Everything is SI internally.  Polarizabilities are stored as volumes (Å³) and
converted with ``4πε₀``; laser intensities are cycle-averaged,
``I = ½ ε₀ c ε²``.  Thermal reduced units follow the rigid-rotor convention
``ω_th = √(k_B T / I)``, ``p_th = I ω_th``, ``t' = ω_th t``.
"""
from __future__ import annotations

import csv
import enum
import math
import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from scipy import constants as sc

HBAR = sc.hbar
H_PLANCK = sc.h
K_B = sc.k
C_LIGHT = sc.c
EPS0 = sc.epsilon_0
AMU = sc.atomic_mass
ANGSTROM3_TO_SI = 4.0 * math.pi * EPS0 * 1e-30  # Å³ -> C·m²/V
CM1_TO_M1 = 100.0
W_CM2_TO_W_M2 = 1e4
MEV = 1e-3 * sc.electron_volt

# ∫ exp(-4 ln2 t²/τ²) dt = τ √(π / (4 ln 2))
GAUSS_FWHM_AREA = math.sqrt(math.pi / (4.0 * math.log(2.0)))


class SpeciesError(ValueError):
    pass


class JParity(str, enum.Enum):
    ALL = "all"
    EVEN_ONLY = "even_only"
    ODD_ONLY = "odd_only"

    def allows(self, J: int) -> bool:
        if self is JParity.EVEN_ONLY:
            return J % 2 == 0
        if self is JParity.ODD_ONLY:
            return J % 2 == 1
        return True


class Polarization(str, enum.Enum):
    Z_PARALLEL = "z"
    X_PERPENDICULAR = "x"

    @classmethod
    def parse(cls, value) -> "Polarization":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {"z": cls.Z_PARALLEL, "z_parallel": cls.Z_PARALLEL, "parallel": cls.Z_PARALLEL,
                   "x": cls.X_PERPENDICULAR, "x_perpendicular": cls.X_PERPENDICULAR,
                   "perpendicular": cls.X_PERPENDICULAR}
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown polarization {value!r} (use z or x)") from None


@dataclass(frozen=True)
class MolecularSpecies:
    """Linear molecule. Polarizabilities in Å³, B in cm⁻¹, mass in amu."""

    name: str
    alpha_parallel: float
    alpha_perp: float
    B: float
    mass: float
    j_parity: JParity = JParity.ALL

    def __post_init__(self):
        for attr in ("alpha_parallel", "alpha_perp", "B", "mass"):
            value = getattr(self, attr)
            if not (math.isfinite(value) and value > 0):
                raise SpeciesError(f"{self.name}: {attr} must be positive, got {value}")
        object.__setattr__(self, "j_parity", JParity(self.j_parity))

    @property
    def alpha_bar(self) -> float:
        return (self.alpha_parallel + 2.0 * self.alpha_perp) / 3.0

    @property
    def delta_alpha(self) -> float:
        return self.alpha_parallel - self.alpha_perp

    # SI views
    @property
    def alpha_parallel_si(self) -> float:
        return self.alpha_parallel * ANGSTROM3_TO_SI

    @property
    def alpha_perp_si(self) -> float:
        return self.alpha_perp * ANGSTROM3_TO_SI

    @property
    def alpha_bar_si(self) -> float:
        return self.alpha_bar * ANGSTROM3_TO_SI

    @property
    def delta_alpha_si(self) -> float:
        return self.delta_alpha * ANGSTROM3_TO_SI

    @property
    def mass_kg(self) -> float:
        return self.mass * AMU

    @property
    def moment_of_inertia(self) -> float:
        return derive_moment_of_inertia(self)

    def rotational_energy(self, J):
        """E_J = h B c J(J+1) in joules."""
        return H_PLANCK * C_LIGHT * self.B * CM1_TO_M1 * J * (J + 1)


def derive_moment_of_inertia(species: MolecularSpecies) -> float:
    """I = ħ / (4π B c) with B converted from cm⁻¹ to m⁻¹."""
    if not species.B > 0:
        raise SpeciesError(f"{species.name}: rotational constant must be positive")
    return HBAR / (4.0 * math.pi * species.B * CM1_TO_M1 * C_LIGHT)


def load_species_file(path=None) -> dict[str, MolecularSpecies]:
    """Read a species table (comma separated, ``#`` comments allowed)."""
    if path is None:
        text = resources.files("prealign.data").joinpath("species.csv").read_text()
    else:
        text = Path(path).read_text()
    header = ["name", "alpha_par_A3", "alpha_perp_A3", "B_cm1", "mass_amu", "j_parity"]
    rows = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    registry = {}
    for lineno, row in enumerate(csv.reader(rows), 1):
        if row and row[0].strip() == "name":
            continue
        if len(row) != len(header):
            raise SpeciesError(f"species record {lineno}: expected {len(header)} fields, got {len(row)}")
        rec = dict(zip(header, (x.strip() for x in row)))
        try:
            sp = MolecularSpecies(
                name=rec["name"],
                alpha_parallel=float(rec["alpha_par_A3"]),
                alpha_perp=float(rec["alpha_perp_A3"]),
                B=float(rec["B_cm1"]),
                mass=float(rec["mass_amu"]),
                j_parity=JParity(rec["j_parity"]),
            )
        except ValueError as exc:
            raise SpeciesError(f"species record {lineno}: {exc}") from exc
        registry[sp.name.upper()] = sp
    return registry


def get_species(name: str, path=None) -> MolecularSpecies:
    registry = load_species_file(path)
    try:
        return registry[name.upper()]
    except KeyError:
        raise SpeciesError(f"unknown species {name!r}; known: {', '.join(sorted(registry))}") from None


CS2 = get_species("CS2")


# --- thermal ---------------------------------------------------------------

def j_thermal_from_temperature(species: MolecularSpecies, T: float) -> float:
    """J_T = √(k_B T / (h B c))."""
    return math.sqrt(K_B * T / (H_PLANCK * C_LIGHT * species.B * CM1_TO_M1))


def temperature_from_j_thermal(species: MolecularSpecies, j_thermal: float) -> float:
    return j_thermal**2 * H_PLANCK * C_LIGHT * species.B * CM1_TO_M1 / K_B


@dataclass(frozen=True)
class ThermalSpec:
    """Exactly one of ``temperature`` (K) or ``j_thermal`` must be given."""

    temperature: float | None = None
    j_thermal: float | None = None

    def __post_init__(self):
        if (self.temperature is None) == (self.j_thermal is None):
            raise ValueError("give exactly one of temperature or j_thermal")
        value = self.temperature if self.temperature is not None else self.j_thermal
        if not (math.isfinite(value) and value > 0):
            raise ValueError(f"thermal parameter must be positive, got {value}")

    def resolve(self, species: MolecularSpecies) -> tuple[float, float]:
        """Return ``(T, J_T)`` for ``species``."""
        if self.temperature is not None:
            return self.temperature, j_thermal_from_temperature(species, self.temperature)
        return temperature_from_j_thermal(species, self.j_thermal), self.j_thermal

    def kT(self, species: MolecularSpecies) -> float:
        return K_B * self.resolve(species)[0]


def thermal_frequency(species: MolecularSpecies, T: float) -> float:
    """ω_th = √(k_B T / I) in rad/s."""
    return math.sqrt(K_B * T / species.moment_of_inertia)


# --- fields and kicks ------------------------------------------------------

def field_squared_from_intensity(intensity_w_cm2):
    """Cycle-averaged ε² (V²/m²) for a peak intensity in W/cm²."""
    return 2.0 * intensity_w_cm2 * W_CM2_TO_W_M2 / (EPS0 * C_LIGHT)


def intensity_from_field_squared(e2):
    return e2 * EPS0 * C_LIGHT / (2.0 * W_CM2_TO_W_M2)


def kick_strength_from_pulse(species: MolecularSpecies, peak_intensity: float, fwhm: float) -> float:
    """P = (Δα / 4ħ) ∫ ε²(t) dt for a Gaussian intensity envelope of the given FWHM."""
    if peak_intensity < 0 or fwhm <= 0:
        raise ValueError("intensity must be >= 0 and fwhm > 0")
    if species.delta_alpha <= 0:
        warnings.warn(f"{species.name}: Δα <= 0, the kick drives molecules away from the polarization axis",
                      stacklevel=2)
    fluence = field_squared_from_intensity(peak_intensity) * fwhm * GAUSS_FWHM_AREA
    return species.delta_alpha_si * fluence / (4.0 * HBAR)


def intensity_for_kick(species: MolecularSpecies, P: float, fwhm: float) -> float:
    """Inverse of :func:`kick_strength_from_pulse`."""
    fluence = 4.0 * HBAR * P / species.delta_alpha_si
    return intensity_from_field_squared(fluence / (fwhm * GAUSS_FWHM_AREA))


def reduced_kick(P: float, species: MolecularSpecies, T: float) -> float:
    """Kick in thermal momentum units, P'_s = P ħ / √(k_B T I)."""
    return P * HBAR / math.sqrt(K_B * T * species.moment_of_inertia)


def reduced_kick_from_jt(P: float, j_thermal: float) -> float:
    """Same quantity via J_T: since h B c = ħ²/(2I), P'_s = √2 P / J_T."""
    return math.sqrt(2.0) * P / j_thermal


@dataclass(frozen=True)
class KickPulse:
    """Impulsive prealignment pulse.

    Either ``kick_strength`` or (``peak_intensity`` W/cm², ``fwhm`` s) is given.
    """

    kick_strength: float | None = None
    peak_intensity: float | None = None
    fwhm: float | None = None
    polarization: Polarization = Polarization.Z_PARALLEL

    def __post_init__(self):
        object.__setattr__(self, "polarization", Polarization.parse(self.polarization))
        by_intensity = self.peak_intensity is not None or self.fwhm is not None
        if (self.kick_strength is None) == (not by_intensity):
            raise ValueError("give either kick_strength or peak_intensity + fwhm")
        if by_intensity and (self.peak_intensity is None or self.fwhm is None):
            raise ValueError("peak_intensity and fwhm must be given together")
        if self.kick_strength is not None and not self.kick_strength >= 0:
            raise ValueError("kick strength must be non-negative")

    def strength(self, species: MolecularSpecies) -> float:
        if self.kick_strength is not None:
            return float(self.kick_strength)
        return kick_strength_from_pulse(species, self.peak_intensity, self.fwhm)


def alignment_well_depth(species: MolecularSpecies, intensity_w_cm2: float) -> float:
    """¼ Δα E₀² in joules."""
    return 0.25 * species.delta_alpha_si * field_squared_from_intensity(intensity_w_cm2)


