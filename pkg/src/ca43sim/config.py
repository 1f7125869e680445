"""Experiment configuration: flat key = value files plus computed defaults.

Every knob that calibrates the simulator against the measured numbers lives
here so a config file fully determines a run (identical config + seed gives
bit-identical results).
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .species import ConfigurationError, IonSpecies, default_species, parse_kv_text

PRESETS = ("bell_optical", "bell_hyperfine", "decay_optical", "decay_hyperfine",
           "budget_table", "spectrum_report", "clock_point")

# Cumulative-fidelity budget rows: (step, duration us, error fraction).
DEFAULT_BUDGET_ROWS = (
    ("prep", 1140.0, 0.008),
    ("MS 1", 100.0, 0.023),
    ("map", 120.0, 0.002),
    ("wait", 20000.0, 0.022),
    ("map^-1", 120.0, 0.007),
    ("MS 2", 100.0, 0.037),
    ("MS 3", 100.0, 0.029),
)


@dataclass(frozen=True)
class ExperimentConfig:
    preset: str = "bell_optical"
    field_g: float = 6.0
    beam: str = "beam1"
    polarization_impurity: float | None = None  # None -> calibrated beam1 value
    trap_axial_mhz: float = 1.2
    trap_drive_mhz: float = 25.5
    beam_to_axis_deg: float = 45.0
    lamb_dicke_eta: float | None = None         # None -> computed from geometry
    nbar_com: float = 0.03
    nbar_stretch: float = 0.4
    n_max: int = 20
    detuning_khz: float = 10.0
    kappa_dipole: float | None = None           # None -> calibrated to 3.5 kHz
    shots: int = 2000
    seed: int = 12345

    # noise (None -> calibrated to the measured coherence times)
    b_field_rms_g: float | None = None
    laser_freq_rms_khz: float | None = None
    laser_linewidth_hz: float = 20.0

    # preparation and per-step error knobs (fractions)
    pump_error: float = 0.003
    transfer1_error: float = 0.007
    transfer2_error: float = 0.004
    ms_errors: tuple = (0.023, 0.037, 0.029)
    map_error: float = 0.002
    map_inv_error: float = 0.007
    shelve_error: float = 0.001
    wait_ms: float = 20.0

    # detection
    bright_rate_per_ms: float = 20.0
    dark_rate_per_ms: float = 0.2
    detect_duration_ms: float = 3.0
    check_duration_ms: float = 0.5
    check_threshold: int = 3

    # decay-experiment scan
    decay_wait_times_ms: tuple = ()
    parity_phases: int = 8

    # coincident-spectator scenario (beam2 at low field): the ground-state
    # Zeeman splitting sits within the quoted 10 kHz of the axial sideband
    scenario_field_g: float = 3.44
    scenario_impurity: float = 0.15

    budget_rows: tuple = DEFAULT_BUDGET_ROWS

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigurationError(
                f"unknown preset {self.preset!r}; expected one of {PRESETS}")
        if self.beam not in ("beam1", "beam2"):
            raise ConfigurationError(f"unknown beam {self.beam!r}")
        if self.bright_rate_per_ms < 10 * self.dark_rate_per_ms:
            raise ConfigurationError(
                "bright_rate must exceed dark_rate by at least a factor 10")


_SCALAR_FIELDS = {f.name: f.type for f in fields(ExperimentConfig)}


def load_config(path: str | Path) -> ExperimentConfig:
    """Read an ExperimentConfig from a flat key = value file."""
    raw = parse_kv_text(Path(path).read_text())
    kwargs = {}
    for key, value in raw.items():
        if key not in _SCALAR_FIELDS:
            raise ConfigurationError(f"unknown config key {key!r}")
        if key in ("budget_rows",):
            rows = []
            for item in value.split(";"):
                name, dur, err = item.split(",")
                rows.append((name.strip(), float(dur), float(err)))
            kwargs[key] = tuple(rows)
        elif key in ("ms_errors", "decay_wait_times_ms"):
            kwargs[key] = tuple(float(v) for v in value.split(",") if v.strip())
        elif key in ("preset", "beam"):
            kwargs[key] = value
        elif key in ("n_max", "seed", "shots", "check_threshold", "parity_phases"):
            kwargs[key] = int(value)
        elif value.lower() == "none":
            kwargs[key] = None
        else:
            kwargs[key] = float(value)
    return ExperimentConfig(**kwargs)


def config_text(cfg: ExperimentConfig) -> str:
    """Serialize a config back to the flat key = value format."""
    lines = []
    for f in fields(ExperimentConfig):
        v = getattr(cfg, f.name)
        if f.name == "budget_rows":
            v = "; ".join(f"{n}, {d}, {e}" for n, d, e in v)
        elif isinstance(v, tuple):
            v = ", ".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
