"""Desk-scale numerical simulator of a two-ion 43Ca+ entanglement experiment.

Subpackages cover the atomic level structure (hyperfine + Zeeman
diagonalization at arbitrary static field), electric-quadrupole transition
spectra under configurable beam geometries, bichromatic Molmer-Sorensen gate
dynamics on the joint internal-motional state, quasi-static dephasing noise,
and shot-by-shot experiment sequences with Poissonian photon-counting
detection and parity-based Bell-state fidelity estimation.

Units: MHz, microseconds and gauss throughout, milliseconds where noted.
"""

from .species import IonSpecies, load_species, default_species
from .structure import (
    ZeemanLevel,
    NamedQubit,
    build_hamiltonian,
    eigenlevels,
    breit_rabi_energy,
    transition_frequency,
    field_sensitivity,
    find_insensitive_field,
    named_qubit,
)
from .coupling import (
    BeamGeometry,
    TransitionLine,
    quadrupole_amplitude,
    geometry_factor,
    relative_rabi,
    spectrum,
    coincidence_report,
)
from .gates import (
    MotionalMode,
    BichromaticPulse,
    JointState,
    carrier_pulse,
    ms_analytic,
    ms_numeric,
    ac_stark_shift,
    compensation_ratio,
    gate_fidelity,
)
from .noise import (
    NoiseModel,
    DecayFit,
    sample_shot_offsets,
    apply_dephasing,
    contrast_curve,
    fit_gaussian_decay,
)
from .experiment import (
    DetectionModel,
    ExperimentResult,
    run_sequence,
    simulate_detection,
    parity_scan,
    estimate_fidelity,
    error_budget,
    decay_experiment,
)

__version__ = "0.1.0"
