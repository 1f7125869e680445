"""Electric-quadrupole coupling strengths and transition spectra.

Relative Rabi frequencies of S1/2 <-> D5/2 lines factor into an atomic part
(eigenvector overlap contracted with Clebsch-Gordan coefficients of the
rank-2 transition operator, the nuclear spin being a spectator) and a beam
geometry part (contraction of the polarization and propagation vectors with
the rank-2 spherical basis tensors).  The geometry factors satisfy the sum
rule sum_q |g_q|^2 = 1/2 for any unit polarization orthogonal to the beam,
which pins their relative normalization.

Selection-rule zeros are exact.  A finite polarization impurity epsilon
reopens ideally-forbidden channels at epsilon times the channel's geometric
maximum, which is the one-parameter model used to reproduce the measured
suppression of spectator lines.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .species import ConfigurationError, IonSpecies, default_species
from .structure import (D52, S12, UsageError, ZeemanLevel, eigenlevels,
                        level_sensitivity, manifold_J, named_level,
                        transition_frequency)

SIGMA_PLUS = "sigma_plus"
SIGMA_MINUS = "sigma_minus"
LINEAR = "linear"

# Default beam tilt to the trap axis (Lamb-Dicke projection); the sketch of
# the apparatus puts both beams at roughly 45 degrees.
DEFAULT_K_TO_AXIS = np.pi / 4

# Calibrated beam1 polarization impurity: set so the worst same-lower-level
# spectator with delta_m != +1 within +-5 MHz of the down <-> Y line at 6 G
# is suppressed by a factor 38 in Rabi frequency (see calibrate_impurity).
BEAM1_IMPURITY = 0.021378


@dataclass(frozen=True)
class BeamGeometry:
    """One addressing beam: direction, polarization, impurity.

    ``angle_k_to_B`` is the angle between the wavevector and the quantization
    axis; ``gamma`` the linear-polarization angle measured from the plane
    containing k and B.  ``polarization_impurity`` is the amplitude fraction
    leaking into ideally-forbidden channels, in [0, 0.2].
    """

    id: str = "custom"
    angle_k_to_B: float = 0.0
    angle_k_to_axis: float = DEFAULT_K_TO_AXIS
    polarization: str = SIGMA_PLUS
    gamma: float = 0.0
    polarization_impurity: float = 0.0

    def __post_init__(self):
        if self.polarization not in (SIGMA_PLUS, SIGMA_MINUS, LINEAR):
            raise ConfigurationError(f"unknown polarization {self.polarization!r}")
        if not 0.0 <= self.polarization_impurity <= 0.2:
            raise ConfigurationError(
                f"polarization_impurity must be in [0, 0.2], got {self.polarization_impurity}")


def beam1(impurity: float = BEAM1_IMPURITY) -> BeamGeometry:
    """Preset: k along B, sigma+ polarization (drives delta_m = +1)."""
    return BeamGeometry(id="beam1", angle_k_to_B=0.0, polarization=SIGMA_PLUS,
                        polarization_impurity=impurity)


def beam2(impurity: float = BEAM1_IMPURITY) -> BeamGeometry:
    """Preset: k perpendicular to B, linear polarization perpendicular to B
    (drives delta_m = +-2 with optimal coupling)."""
    return BeamGeometry(id="beam2", angle_k_to_B=np.pi / 2, polarization=LINEAR,
                        gamma=np.pi / 2, polarization_impurity=impurity)


@dataclass(frozen=True)
class TransitionLine:
    lower: ZeemanLevel
    upper: ZeemanLevel
    delta_m: int
    offset: float  # MHz from the reference line
    relative_rabi: float
    sideband_tag: str = "carrier"  # carrier | axial_red | axial_blue | micromotional


# Rank-2 spherical basis tensors in Cartesian coordinates (Condon-Shortley),
# normalized so sum_q |eps . T_q . n|^2 = 1/2 for unit eps orthogonal to n.
_SQ6 = np.sqrt(6.0)
_T = {
    0: np.diag([-1.0, -1.0, 2.0]) / _SQ6,
    +1: -0.5 * np.array([[0, 0, 1], [0, 0, 1j], [1, 1j, 0]], complex),
    -1: +0.5 * np.array([[0, 0, 1], [0, 0, -1j], [1, -1j, 0]], complex),
    +2: 0.5 * np.array([[1, 1j, 0], [1j, -1, 0], [0, 0, 0]], complex),
    -2: 0.5 * np.array([[1, -1j, 0], [-1j, -1, 0], [0, 0, 0]], complex),
}

# Per-channel geometric maxima over all beam orientations and polarizations.
_CHANNEL_MAX = {0: np.sqrt(3.0 / 8.0), 1: 1.0 / np.sqrt(2.0), -1: 1.0 / np.sqrt(2.0),
                2: 0.5, -2: 0.5}


def beam_vectors(beam: BeamGeometry):
    """(unit wavevector, unit polarization) with B along z, k in the x-z plane."""
    phi = beam.angle_k_to_B
    n = np.array([np.sin(phi), 0.0, np.cos(phi)])
    e1 = np.array([np.cos(phi), 0.0, -np.sin(phi)])  # in the k-B plane
    e2 = np.array([0.0, 1.0, 0.0])
    if beam.polarization == LINEAR:
        eps = np.cos(beam.gamma) * e1 + np.sin(beam.gamma) * e2
    elif beam.polarization == SIGMA_PLUS:
        eps = (e1 + 1j * e2) / np.sqrt(2.0)
    else:
        eps = (e1 - 1j * e2) / np.sqrt(2.0)
    return n, eps.astype(complex)


def geometry_factor(delta_m: int, beam: BeamGeometry) -> float:
    """Geometric coupling amplitude of the delta_m channel, in [0, 1/sqrt(2)].

    Ideally-forbidden channels (exact zero for the given geometry) reopen at
    ``polarization_impurity`` times the channel maximum.
    """
    if abs(delta_m) > 2:
        raise UsageError(f"|delta_m| must be <= 2, got {delta_m}")
    n, eps = beam_vectors(beam)
    ideal = abs(eps @ _T[-delta_m] @ n)
    if ideal > 1e-12:
        return float(ideal)
    return beam.polarization_impurity * _CHANNEL_MAX[delta_m]


@lru_cache(maxsize=None)
def _cg_half_to_5half(two_mj: int, q: int) -> float:
    """<1/2 mj; 2 q | 5/2 mj+q> via sympy, cached as a float."""
    from sympy import Rational
    from sympy.physics.wigner import clebsch_gordan
    two_mjp = two_mj + 2 * q
    if abs(two_mjp) > 5:
        return 0.0
    return float(clebsch_gordan(Rational(1, 2), 2, Rational(5, 2),
                                Rational(two_mj, 2), q, Rational(two_mjp, 2)))


def quadrupole_amplitude(a: ZeemanLevel, b: ZeemanLevel,
                         species: IonSpecies | None = None) -> float:
    """Reduced quadrupole amplitude of the S1/2 -> D5/2 pair (a, b).

    Contracts the eigenvector overlap at fixed nuclear projection with the
    electronic Clebsch-Gordan factor of the rank-2 operator; pairs with no
    common m_I support (pure nuclear spin flips) give exactly zero.
    """
    if species is None:
        species = default_species()
    if a.manifold != S12 or b.manifold != D52:
        raise UsageError("expected a in S1/2 and b in D5/2")
    if abs(a.field_g - b.field_g) > 1e-12:
        raise UsageError("levels computed at different fields")
    q = b.mF - a.mF
    if abs(q) > 2:
        return 0.0
    ni = int(round(2 * species.nuclear_spin + 1))
    va = a.eigenvector.reshape(ni, 2)    # (m_I, m_J) with m descending
    vb = b.eigenvector.reshape(ni, 6)
    mjS = 0.5 - np.arange(2)
    mjD = 2.5 - np.arange(6)
    amp = 0.0
    for ji, mj in enumerate(mjS):
        mjp = mj + q
        if abs(mjp) > 2.5:
            continue
        jip = int(round(2.5 - mjp))
        cg = _cg_half_to_5half(int(round(2 * mj)), q)
        amp += float(vb[:, jip] @ va[:, ji]) * cg
    return amp


def relative_rabi(a: ZeemanLevel, b: ZeemanLevel, beam: BeamGeometry,
                  species: IonSpecies | None = None) -> float:
    """Unnormalized coupling strength |quadrupole amplitude| x geometry factor."""
    q = b.mF - a.mF
    if abs(q) > 2:
        return 0.0
    return abs(quadrupole_amplitude(a, b, species)) * geometry_factor(q, beam)


def suppression_ratio(gate_pair, other_pair, beam: BeamGeometry,
                      species: IonSpecies | None = None) -> float:
    """Rabi-frequency ratio (gate line / other line); scale-invariant."""
    num = relative_rabi(*gate_pair, beam, species)
    den = relative_rabi(*other_pair, beam, species)
    if den == 0.0:
        return np.inf
    return num / den


def calibrate_impurity(species: IonSpecies | None = None, B: float = 6.0,
                       target: float = 38.0, window_mhz: float = 5.0) -> float:
    """Polarization impurity making the worst delta_m != +1 spectator of the
    down <-> Y line (same lower level, within ``window_mhz``) suppressed by
    exactly ``target`` in Rabi frequency under beam1."""
    if species is None:
        species = default_species()
    down = named_level("down", species, B)
    upper_y = named_level("Y", species, B)
    gate = abs(quadrupole_amplitude(down, upper_y, species)) * _CHANNEL_MAX[1]
    f_gate = transition_frequency(down, upper_y)
    worst = 0.0
    for lv in eigenlevels(species, D52, B):
        q = lv.mF - down.mF
        if q == 1 or abs(q) > 2:
            continue
        if abs(transition_frequency(down, lv) - f_gate) > window_mhz:
            continue
        worst = max(worst, abs(quadrupole_amplitude(down, lv, species)) * _CHANNEL_MAX[q])
    if worst == 0.0:
        raise ConfigurationError("no spectator line found to calibrate against")
    return gate / (target * worst)


def spectrum(B: float, beam: BeamGeometry, species: IonSpecies | None = None,
             manifold_filter: str = "S4", span: float = 30.0,
             include_sidebands: bool = False, reference=("down", "Y"),
             trap_freq_axial: float = 1.2, drive_freq: float = 25.5,
             ) -> list[TransitionLine]:
    """Labeled S <-> D line spectrum around a reference transition.

    Offsets are MHz from the reference line; ``relative_rabi`` is normalized
    to the strongest carrier in the report.  With ``include_sidebands``,
    strengthless axial (+-trap_freq_axial) and micromotional (+-drive_freq)
    position markers accompany every carrier line in span.  ``manifold_filter``
    selects the lower levels: "S4" (laser-addressed F=4 manifold) or "all".
    """
    if span <= 0:
        raise UsageError(f"span must be positive, got {span}")
    if species is None:
        species = default_species()
    lowers = [lv for lv in eigenlevels(species, S12, B)
              if manifold_filter == "all" or lv.F == 4]
    uppers = eigenlevels(species, D52, B)
    if isinstance(reference, tuple) and isinstance(reference[0], str):
        ref_lo = named_level(reference[0], species, B)
        ref_up = named_level(reference[1], species, B)
    else:
        ref_lo, ref_up = reference
    f_ref = transition_frequency(ref_lo, ref_up)
    raw = []
    for lo in lowers:
        for up in uppers:
            q = up.mF - lo.mF
            if abs(q) > 2:
                continue
            off = transition_frequency(lo, up) - f_ref
            if abs(off) > span:
                continue
            raw.append((lo, up, q, off, relative_rabi(lo, up, beam, species)))
    norm = max((r[4] for r in raw), default=0.0)
    lines = []
    for lo, up, q, off, rr in raw:
        rel = rr / norm if norm > 0 else 0.0
        lines.append(TransitionLine(lo, up, int(q), float(off), float(rel)))
        if include_sidebands:
            for tag, shift in (("axial_red", -trap_freq_axial),
                               ("axial_blue", +trap_freq_axial),
                               ("micromotional", -drive_freq),
                               ("micromotional", +drive_freq)):
                if abs(off + shift) <= span:
                    lines.append(TransitionLine(lo, up, int(q), float(off + shift),
                                                0.0, sideband_tag=tag))
    lines.sort(key=lambda ln: (ln.offset, ln.delta_m, ln.upper.F, ln.upper.mF))
    return lines


@dataclass(frozen=True)
class CoincidenceEntry:
    manifold: str
    F: int
    mF_low: int
    splitting: float  # MHz between adjacent Zeeman levels
    gap: float        # |splitting - trap frequency| MHz
    flagged: bool


def coincidence_report(B: float, trap_freq_axial: float = 1.2,
                       species: IonSpecies | None = None,
                       threshold: float = 0.050) -> list[CoincidenceEntry]:
    """Adjacent-Zeeman splittings vs the axial trap frequency.

    Entries whose splitting lies within ``threshold`` MHz of the trap
    frequency are flagged: there a motional sideband of one line coincides
    with the neighboring carrier.  ``threshold=0`` flags nothing.
    """
    if species is None:
        species = default_species()
    out = []
    for manifold in (S12, D52):
        by_label = {(lv.F, lv.mF): lv for lv in eigenlevels(species, manifold, B)}
        fmax = int(round(species.nuclear_spin + manifold_J(manifold)))
        fmin = int(round(abs(species.nuclear_spin - manifold_J(manifold))))
        for F in range(fmin, fmax + 1):
            for m in range(-F, F):
                split = abs(by_label[(F, m + 1)].energy - by_label[(F, m)].energy)
                gap = abs(split - trap_freq_axial)
                if gap < threshold:
                    out.append(CoincidenceEntry(manifold, F, m, split, gap, True))
    return out


@dataclass(frozen=True)
class ComparisonEntry:
    lower_label: tuple
    upper_label: tuple
    sensitivity: float       # MHz/G
    zero_field_amplitude: float


def insensitive_comparison_report(B: float, species: IonSpecies | None = None,
                                  allowed_only: bool = True) -> list[ComparisonEntry]:
    """Sensitivities of every S <-> D mF=0 -> mF=0 line at field B.

    With ``allowed_only`` (default) the set is restricted to lines with a
    nonvanishing zero-field quadrupole amplitude; pairs forbidden by the
    rank-2 selection rules (e.g. F + 2 + F' odd for m=0 -> 0) only acquire
    strength through field mixing and are excluded from the comparison.
    """
    if species is None:
        species = default_species()
    s_levels = {(lv.F, lv.mF): lv for lv in eigenlevels(species, S12, B)}
    d_levels = {(lv.F, lv.mF): lv for lv in eigenlevels(species, D52, B)}
    s0 = {(lv.F, lv.mF): lv for lv in eigenlevels(species, S12, 0.0)}
    d0 = {(lv.F, lv.mF): lv for lv in eigenlevels(species, D52, 0.0)}
    out = []
    for (FS, mS), lo in sorted(s_levels.items()):
        if mS != 0:
            continue
        for (FD, mD), up in sorted(d_levels.items()):
            if mD != 0 or abs(FD - FS) > 2:
                continue
            amp0 = quadrupole_amplitude(s0[(FS, 0)], d0[(FD, 0)], species)
            if allowed_only and abs(amp0) < 1e-9:
                continue
            sens = level_sensitivity(up, species) - level_sensitivity(lo, species)
            out.append(ComparisonEntry((S12, FS, 0), (D52, FD, 0), sens, amp0))
    return out
