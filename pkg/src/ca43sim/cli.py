"""Command-line front end: presets to plot-ready CSV tables.

Every output embeds a manifest header (tool version, preset, config, seed)
so runs are reproducible; identical config + seed give byte-identical files.
The timestamp field is only filled when --stamp is passed, keeping default
output deterministic.  Exit codes: 0 ok, 1 runtime error, 2 usage.
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import PRESETS, ExperimentConfig, load_config
from .coupling import (beam1, beam2, BEAM1_IMPURITY, spectrum)
from .experiment import bell_experiment, decay_experiment, error_budget
from .species import ConfigurationError, default_species
from .structure import (D52, S12, UsageError, eigenlevels, find_insensitive_field,
                        level_sensitivity)


def _manifest_lines(args, preset):
    stamp = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()) if args.stamp else "(unset)"
    return [
        f"# manifest: tool=ca43sim version={__version__}",
        f"# manifest: preset={preset} config={args.config or '(defaults)'} "
        f"seed={args.seed if args.seed is not None else '(config)'} "
        f"out={args.out or '(stdout)'}",
        f"# manifest: timestamp={stamp}",
    ]


def _emit(args, preset, header, rows):
    lines = _manifest_lines(args, preset) + [",".join(header)]
    for row in rows:
        cells = []
        for v in row:
            if isinstance(v, float):
                cells.append(f"{v:.9g}")
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    text = "\n".join(lines) + "\n"
    if args.out:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        path = outdir / f"{preset}.csv"
        fd, tmp = tempfile.mkstemp(dir=outdir, suffix=".tmp")
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    else:
        sys.stdout.write(text)


def _load_cfg(args, preset=None) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig(
        preset=preset or "bell_optical")
    if preset is not None:
        cfg = replace(cfg, preset=preset)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "shots", None) is not None:
        cfg = replace(cfg, shots=args.shots)
    return cfg


def cmd_levels(args):
    species = default_species()
    manifold = args.manifold
    rows = []
    for lv in eigenlevels(species, manifold, args.field):
        rows.append((lv.manifold, lv.F, lv.mF, lv.energy,
                     level_sensitivity(lv, species)))
    _emit(args, "levels", ("manifold", "F", "mF", "energy_mhz",
                           "sensitivity_mhz_per_g"), rows)


def cmd_spectrum(args):
    cfg = _load_cfg(args, "spectrum_report")
    imp = cfg.polarization_impurity if cfg.polarization_impurity is not None \
        else BEAM1_IMPURITY
    beam = beam1(imp) if args.beam == "beam1" else beam2(imp)
    lines = spectrum(args.field, beam, span=args.span,
                     include_sidebands=args.sidebands,
                     trap_freq_axial=cfg.trap_axial_mhz,
                     drive_freq=cfg.trap_drive_mhz,
                     reference=("down", "Y" if args.beam == "beam1" else "Y_prime"))
    rows = [(ln.offset, ln.relative_rabi, ln.delta_m,
             f"S({ln.lower.F};{ln.lower.mF})", f"D({ln.upper.F};{ln.upper.mF})",
             ln.sideband_tag) for ln in lines]
    _emit(args, "spectrum_report", ("offset_mhz", "relative_rabi", "delta_m",
                                    "lower", "upper", "tag"), rows)


def cmd_bell(args):
    preset = f"bell_{args.qubit}"
    cfg = _load_cfg(args, preset)
    res = bell_experiment(cfg, args.qubit)
    rows = [("p0", res.p[0]), ("p1", res.p[1]), ("p2", res.p[2]),
            ("rejected_fraction", res.rejected_fraction),
            ("fidelity", res.fidelity), ("fidelity_sigma", res.fidelity_sigma)]
    rows += [(f"parity_phase_{i}", f"{d[0]:.9g};{d[1]:.9g};{d[2]:.9g}")
             for i, d in enumerate(res.parity_data)]
    _emit(args, preset, ("quantity", "value"), rows)


def cmd_budget(args):
    cfg = _load_cfg(args, "budget_table")
    rows = error_budget(cfg)
    _emit(args, "budget_table", ("step", "duration_us", "error_pct",
                                 "state_fidelity_pct"), rows)


def cmd_decay(args):
    preset = f"decay_{args.qubit}"
    cfg = _load_cfg(args, preset)
    waits = cfg.decay_wait_times_ms
    if not waits:
        if args.qubit == "optical":
            waits = (0.2, 1.0, 2.0, 3.0, 4.0, 5.5, 7.0)
        else:
            waits = (5.0, 30.0, 55.0, 80.0, 110.0, 150.0, 195.0)
    fit, curve = decay_experiment(args.qubit, waits, cfg.shots, config=cfg)
    rows = [(t, c, s) for t, c, s in curve]
    rows.append(("fit_c0", fit.c0, 0.0))
    rows.append(("fit_tau_ms", fit.tau_ms, fit.tau_err_ms))
    rows.append(("fit_t_half_ms", fit.t_half_ms,
                 fit.tau_err_ms * np.sqrt(np.log(2.0))))
    _emit(args, preset, ("t_ms", "contrast", "sigma"), rows)


def cmd_clockpoint(args):
    cfg = _load_cfg(args, "clock_point")
    res = find_insensitive_field((S12, 4, 0), (S12, 3, 1),
                                 (args.bmin, args.bmax))
    rows = [("found", int(res.found)),
            ("field_g", res.field_g if res.found else "")]
    _emit(args, "clock_point", ("quantity", "value"), rows)


def build_parser():
    p = argparse.ArgumentParser(
        prog="ca43sim",
        description="Two-ion 43Ca+ entanglement experiment simulator",
        epilog="presets: " + ", ".join(PRESETS))
    p.add_argument("--config", help="experiment config file (key = value)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="output directory (default: stdout)")
    p.add_argument("--shots", type=int, help="override the config shot count")
    p.add_argument("--stamp", action="store_true",
                   help="embed a wall-clock timestamp in the manifest")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("levels", help="Zeeman level table at a given field")
    sp.add_argument("--field", type=float, default=6.0)
    sp.add_argument("--manifold", choices=(S12, D52), default=S12)
    sp.set_defaults(func=cmd_levels)

    sp = sub.add_parser("spectrum", help="S <-> D line spectrum")
    sp.add_argument("--field", type=float, default=6.0)
    sp.add_argument("--beam", choices=("beam1", "beam2"), default="beam1")
    sp.add_argument("--span", type=float, default=30.0)
    sp.add_argument("--sidebands", action="store_true")
    sp.set_defaults(func=cmd_spectrum)

    sp = sub.add_parser("bell", help="Bell-state preparation and fidelity")
    sp.add_argument("--qubit", choices=("optical", "hyperfine"), default="optical")
    sp.set_defaults(func=cmd_bell)

    sp = sub.add_parser("budget", help="cumulative error budget table")
    sp.set_defaults(func=cmd_budget)

    sp = sub.add_parser("decay", help="entanglement decay scan and Gaussian fit")
    sp.add_argument("--qubit", choices=("optical", "hyperfine"), default="optical")
    sp.set_defaults(func=cmd_decay)

    sp = sub.add_parser("clockpoint", help="first-order insensitive field search")
    sp.add_argument("--bmin", type=float, default=50.0)
    sp.add_argument("--bmax", type=float, default=300.0)
    sp.set_defaults(func=cmd_clockpoint)

    sp = sub.add_parser("run", help="run a named preset")
    sp.add_argument("--preset", required=True, choices=PRESETS)
    sp.set_defaults(func=cmd_run)
    return p


def cmd_run(args):
    preset = args.preset
    if preset == "budget_table":
        cmd_budget(args)
    elif preset == "spectrum_report":
        args.field, args.beam, args.span, args.sidebands = 6.0, "beam1", 30.0, False
        cmd_spectrum(args)
    elif preset == "clock_point":
        args.bmin, args.bmax = 50.0, 300.0
        cmd_clockpoint(args)
    elif preset.startswith("bell_"):
        args.qubit = preset.split("_", 1)[1]
        cmd_bell(args)
    elif preset.startswith("decay_"):
        args.qubit = preset.split("_", 1)[1]
        cmd_decay(args)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (ConfigurationError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
