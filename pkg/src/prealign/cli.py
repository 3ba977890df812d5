"""Command-line entry point: ``prealign <command> [options]``.

Exit status is 0 on success, 2 for configuration errors (nothing is written)
and 3 for numerical failures.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .classical import (EnsembleSpec, ensemble_alignment_distribution, parallel_kick_asymptotics,
                        rainbow_reference_pdf)
from .config import ConfigError, ScenarioConfig, build_scenario, merge, read_config
from .core import KickPulse, Polarization, SpeciesError, ThermalSpec, load_species_file
from .deflection import deflection_distribution, gamma0
from .quantum import TruncationError, coarse_grain, thermal_distribution
from .strongfield import InadmissibleStateError, QuadratureError

log = logging.getLogger("prealign")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
NUMERICAL_ERRORS = (TruncationError, QuadratureError, InadmissibleStateError, FloatingPointError,
                    np.linalg.LinAlgError, RuntimeError)

DEFAULT_SAMPLES = {"quantum-dist": 1, "classical-dist": 1_000_000, "strong-deflect": 2000,
                   "asymptotics": 200_000}


def _num(x) -> str:
    return repr(float(x))


class OutputSet:
    """Collects output files in memory; nothing touches disk until ``commit``."""

    def __init__(self, command: str, scenario: ScenarioConfig):
        self.command = command
        self.scenario = scenario
        self.files: dict[str, bytes] = {}
        self.failures: dict = {}
        self.started = time.perf_counter()
        self.started_at = datetime.now(timezone.utc).isoformat(timespec="seconds")

    def csv(self, name, header, rows):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else _num(v) for v in row])
        self.files[name] = buf.getvalue().encode("ascii")

    def json(self, name, payload):
        self.files[name] = (json.dumps(payload, indent=2, sort_keys=True, allow_nan=True) + "\n").encode()

    def commit(self) -> Path:
        out = self.scenario.out
        out.mkdir(parents=True, exist_ok=True)
        for name, data in self.files.items():
            (out / name).write_bytes(data)
        manifest = {
            "command": self.command,
            "version": __version__,
            "seed": self.scenario.ensemble.rng.seed,
            "config": self.scenario.echo,
            "species": self.scenario.species.name,
            "started_utc": self.started_at,
            "wall_clock_s": round(time.perf_counter() - self.started, 3),
            "failures": self.failures,
            "outputs": {name: hashlib.sha256(data).hexdigest() for name, data in sorted(self.files.items())},
        }
        path = out / f"{self.command}.manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return path


def _hist_rows(edges, masses):
    return [(lo, hi, m) for lo, hi, m in zip(edges[:-1], edges[1:], masses)]


def _thermal_echo(sc: ScenarioConfig) -> dict:
    T, jt = sc.thermal.resolve(sc.species)
    pulse = sc.pulse
    return {"temperature_K": T, "j_thermal": jt,
            "kick_P": pulse.strength(sc.species) if pulse else 0.0,
            "kick_axis": pulse.polarization.value if pulse else None}


# --- commands ----------------------------------------------------------------

def cmd_quantum_dist(sc: ScenarioConfig, out: OutputSet):
    dist = thermal_distribution(sc.species, sc.thermal, sc.pulse, sc.j_max)
    out.csv("quantum_lines.csv", ["A [1]", "weight [1]", "A_exact [fraction]"],
            [(v, w, str(k)) for v, w, k in zip(dist.values, dist.weights, dist.keys)])
    edges, masses = coarse_grain(dist, sc.bins)
    out.csv("quantum_hist.csv", ["A_low [1]", "A_high [1]", "probability [1]"], _hist_rows(edges, masses))
    summary = {**_thermal_echo(sc), "mean": dist.mean(), "std": dist.std(), "lines": int(dist.values.size)}
    if sc.pulse is not None and sc.pulse.polarization is Polarization.Z_PARALLEL and summary["kick_P"] > 0:
        mean_a, std_a = parallel_kick_asymptotics(summary["kick_P"], summary["j_thermal"])
        summary["asymptotic"] = {"mean": mean_a, "std": std_a,
                                 "std_rel_error": abs(dist.std() - std_a) / std_a}
    out.json("quantum_summary.json", summary)


def _overlay_variant(sc: ScenarioConfig):
    if sc.pulse is None:
        return "thermal"
    if sc.pulse.polarization is Polarization.X_PERPENDICULAR:
        return "perpendicular"
    return None


def cmd_classical_dist(sc: ScenarioConfig, out: OutputSet):
    dist = ensemble_alignment_distribution(sc.ensemble, sc.pulse, sc.species, workers=sc.workers)
    edges, masses = dist.histogram(sc.bins, (0.0, 1.0))
    centers = 0.5 * (edges[:-1] + edges[1:])
    width = np.diff(edges)
    variant = _overlay_variant(sc)
    header = ["A_low [1]", "A_high [1]", "probability [1]", "density [1/A]"]
    cols = [edges[:-1], edges[1:], masses, masses / width]
    if variant:
        header.append(f"reference_{variant}_density [1/A]")
        cols.append(rainbow_reference_pdf(centers, variant))
    out.csv("classical_hist.csv", header, zip(*cols))
    summary = {**_thermal_echo(sc), "samples": len(dist), "mean": dist.mean(), "std": dist.std(),
               "ks_thermal": dist.ks_statistic("thermal"), "ks_perpendicular": dist.ks_statistic("perpendicular")}
    if sc.pulse is not None and sc.pulse.polarization is Polarization.Z_PARALLEL and summary["kick_P"] > 0:
        mean_a, std_a = parallel_kick_asymptotics(summary["kick_P"], summary["j_thermal"])
        summary["asymptotic"] = {"mean": mean_a, "std": std_a}
    out.failures["rejected_degenerate"] = dist.rejected
    out.json("classical_summary.json", summary)


def cmd_strong_deflect(sc: ScenarioConfig, out: OutputSet):
    res = deflection_distribution(sc.ensemble, sc.pulse, sc.species, sc.beam, sc.geometry, sc.mode,
                                  sc.levels, workers=sc.workers)
    if res.gamma.size == 0:
        raise RuntimeError("every sample failed; no deflection distribution")
    for name, qty, unit in (("vz_hist.csv", "v_z", "m/s"), ("gamma_hist.csv", "gamma", "rad")):
        edges, masses = res.histogram(sc.bins, qty)
        out.csv(name, [f"{qty}_low [{unit}]", f"{qty}_high [{unit}]", "probability [1]"],
                _hist_rows(edges, masses))
    counts, edges = np.histogram(res.alignment, bins=sc.bins, range=(0.0, 1.0))
    out.csv("alignment_hist.csv", ["u_low [1]", "u_high [1]", "probability [1]"],
            _hist_rows(edges, counts / res.alignment.size))
    summary = {**_thermal_echo(sc), **res.summary(), "gamma0_rad": gamma0(sc.species, sc.beam, sc.geometry),
               "beam": {"intensity_W_cm2": sc.beam.peak_intensity, "waist_m": sc.beam.waist,
                        "fwhm_s": sc.beam.fwhm},
               "geometry": {"v_x_m_s": sc.geometry.v_x, "impact_z_m": sc.geometry.impact_z},
               "alignment_at_peak_mean": float(np.mean(res.alignment))}
    if sc.pulse is not None:
        ref = deflection_distribution(sc.ensemble, None, sc.species, sc.beam, sc.geometry, sc.mode,
                                      sc.levels, workers=sc.workers)
        ref_std = float(np.std(ref.v_z))
        summary["unaligned_v_z_std"] = ref_std
        summary["narrowing_ratio"] = ref_std / float(np.std(res.v_z)) if np.std(res.v_z) > 0 else float("inf")
    out.failures.update(res.flags)
    out.json("strong_deflect_summary.json", summary)


def cmd_asymptotics(sc: ScenarioConfig, out: OutputSet):
    rows = []
    for jt in sc.jt_list:
        thermal = ThermalSpec(j_thermal=jt)
        spec = EnsembleSpec(sc.ensemble.n_samples, thermal, sc.ensemble.rng)
        for P in sc.p_list:
            mean_a, std_a = parallel_kick_asymptotics(P, jt)
            dist = ensemble_alignment_distribution(spec, KickPulse(kick_strength=P), sc.species,
                                                   workers=sc.workers)
            m, s = dist.mean(), dist.std()
            rows.append((P, jt, P / jt, mean_a, std_a, m, s, abs(mean_a - m) / m, abs(std_a - s) / s))
    header = ["P [hbar]", "J_T [1]", "P_over_JT [1]", "mean_A_analytic [1]", "std_A_analytic [1]",
              "mean_A_mc [1]", "std_A_mc [1]", "mean_rel_error [1]", "std_rel_error [1]"]
    out.csv("asymptotics.csv", header, rows)
    out.json("asymptotics_summary.json", {"rows": [dict(zip(header, r)) for r in rows]})


COMMANDS = {"quantum-dist": cmd_quantum_dist, "classical-dist": cmd_classical_dist,
            "strong-deflect": cmd_strong_deflect, "asymptotics": cmd_asymptotics}


def cmd_species(args) -> int:
    try:
        registry = load_species_file(args.file)
    except (SpeciesError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.action == "validate":
        print(f"ok: {len(registry)} species")
        return EXIT_OK
    print("name,alpha_par_A3,alpha_perp_A3,B_cm1,mass_amu,j_parity")
    for sp in registry.values():
        print(f"{sp.name},{sp.alpha_parallel},{sp.alpha_perp},{sp.B},{sp.mass},{sp.j_parity.value}")
    return EXIT_OK


# --- argument handling -----------------------------------------------------------

def _common_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="scenario file ([section] key = value)")
    p.add_argument("--seed", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--bins", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--species", help="species name from the species table")
    p.add_argument("--kick", type=float, help="kick strength P (units of hbar)")
    p.add_argument("--kick-axis", choices=("z", "x"))
    grp = p.add_mutually_exclusive_group()
    grp.add_argument("--jt", type=float, help="thermal angular momentum J_T")
    grp.add_argument("--temp", type=float, help="rotational temperature (K)")
    p.add_argument("--intensity", type=float, help="deflecting beam peak intensity (W/cm^2)")
    p.add_argument("--waist", type=float, help="beam waist (um)")
    p.add_argument("--tau", type=float, help="deflecting pulse FWHM (ns)")
    p.add_argument("--vx", type=float, help="beam velocity (m/s)")
    p.add_argument("--impact", type=float, help="impact height z (um)")
    p.add_argument("--mode", choices=("weak", "strong"))
    p.add_argument("--workers", type=int, help="threads for ensemble work (results do not depend on it)")
    p.add_argument("--p-list", help="comma-separated kick strengths for asymptotics")
    p.add_argument("--jt-list", help="comma-separated J_T values for asymptotics")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prealign", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common_parser()
    for name, help_ in (("quantum-dist", "quantum distribution of the alignment factor"),
                        ("classical-dist", "Monte Carlo distribution of the alignment factor"),
                        ("strong-deflect", "deflection distribution through the deflecting beam"),
                        ("asymptotics", "large-kick asymptotics against Monte Carlo")):
        sub.add_parser(name, parents=[common], help=help_)
    sp = sub.add_parser("species", help="list or validate the species table")
    sp.add_argument("action", choices=("list", "validate"))
    sp.add_argument("--file", type=Path, help="species table (defaults to the bundled one)")
    return parser


def _overrides(args) -> dict:
    return {
        ("ensemble", "seed"): args.seed, ("ensemble", "samples"): args.samples,
        ("ensemble", "workers"): args.workers,
        ("output", "bins"): args.bins, ("output", "dir"): args.out,
        ("species", "name"): args.species,
        ("kick", "strength"): args.kick, ("kick", "axis"): args.kick_axis,
        ("thermal", "j_thermal"): args.jt, ("thermal", "temperature"): args.temp,
        ("beam", "intensity"): args.intensity, ("beam", "waist_um"): args.waist,
        ("beam", "tau_ns"): args.tau,
        ("geometry", "vx"): args.vx, ("geometry", "impact_um"): args.impact,
        ("strong", "mode"): args.mode,
        ("asymptotics", "p_list"): args.p_list, ("asymptotics", "jt_list"): args.jt_list,
    }


def load_scenario(args) -> ScenarioConfig:
    base = read_config(args.config) if args.config else {}
    # a thermal flag on the command line replaces whichever form the file used
    if args.jt is not None or args.temp is not None:
        base.pop("thermal", None)
    if args.kick is not None and "kick" in base:
        base["kick"] = {k: v for k, v in base["kick"].items() if k == "axis"}
    if args.species is not None and "species" in base:
        base["species"] = {k: v for k, v in base["species"].items() if k == "file"}
    values = merge(base, _overrides(args))
    return build_scenario(values, DEFAULT_SAMPLES[args.command])


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "species":
        return cmd_species(args)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        scenario = load_scenario(args)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = OutputSet(args.command, scenario)
    try:
        COMMANDS[args.command](scenario, out)
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    manifest = out.commit()
    log.info("wrote %d files and %s", len(out.files), manifest)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
