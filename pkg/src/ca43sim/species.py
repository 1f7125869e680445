"""Ion species data: hyperfine constants, g-factors, lifetimes.

The species file is flat ``key = value`` text so the shipped constants can be
inspected and overridden without touching code.  All frequencies are MHz.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path


class ConfigurationError(ValueError):
    """Bad species or experiment configuration."""


@dataclass(frozen=True)
class IonSpecies:
    """Atomic constants of one ion species (default: 43Ca+).

    ``g_i`` is the nuclear g-factor mu/(I mu_N); the nuclear Zeeman term is
    ``-g_i * mu_N * B * m_I``.  ``hyperfine_splitting_s_mhz`` is the
    zero-field S1/2 F=3 <-> F=4 interval and must be consistent with
    ``a_s_mhz`` (equal to ``|4 a_s|`` for I=7/2) within 1 kHz.
    """

    name: str
    nuclear_spin: float
    a_s_mhz: float
    a_d_mhz: float
    b_d_mhz: float
    g_j_ground: float
    g_j_d: float
    g_i: float
    hyperfine_splitting_s_mhz: float
    d_lifetime_s: float
    mass_u: float

    def __post_init__(self):
        if self.nuclear_spin <= 0 or (2 * self.nuclear_spin) % 1 != 0:
            raise ConfigurationError(
                f"nuclear_spin must be a positive half-integer, got {self.nuclear_spin}")
        # Zero-field eigen-splitting of A*(I.J) for J=1/2:
        # E(F=I+1/2) - E(F=I-1/2) = A*(I+1/2)*2/... = A*(2I+1)/2 + A/2*... ->
        # computed directly from the K values.
        I = self.nuclear_spin
        k_up = (I + 0.5) * (I + 1.5) - I * (I + 1) - 0.75
        k_dn = (I - 0.5) * (I + 0.5) - I * (I + 1) - 0.75
        split = abs(0.5 * self.a_s_mhz * (k_up - k_dn))
        if not math.isclose(split, self.hyperfine_splitting_s_mhz, abs_tol=1e-3):
            raise ConfigurationError(
                f"hyperfine_splitting_s_mhz={self.hyperfine_splitting_s_mhz} inconsistent "
                f"with a_s_mhz={self.a_s_mhz} (eigen-splitting {split:.6f} MHz)")


def parse_kv_text(text: str) -> dict:
    """Parse flat ``key = value`` lines; '#' starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def load_species(path: str | Path | None = None) -> IonSpecies:
    """Load an :class:`IonSpecies` from a key-value file (default: shipped 43Ca+)."""
    if path is None:
        text = resources.files("ca43sim.data").joinpath("ca43.cfg").read_text()
    else:
        text = Path(path).read_text()
    raw = parse_kv_text(text)
    try:
        return IonSpecies(
            name=raw.get("name", "unnamed"),
            nuclear_spin=float(raw["nuclear_spin"]),
            a_s_mhz=float(raw["a_s_mhz"]),
            a_d_mhz=float(raw["a_d_mhz"]),
            b_d_mhz=float(raw["b_d_mhz"]),
            g_j_ground=float(raw["g_j_ground"]),
            g_j_d=float(raw["g_j_d"]),
            g_i=float(raw["g_i"]),
            hyperfine_splitting_s_mhz=float(raw["hyperfine_splitting_s_mhz"]),
            d_lifetime_s=float(raw["d_lifetime_s"]),
            mass_u=float(raw["mass_u"]),
        )
    except KeyError as exc:
        raise ConfigurationError(f"species file missing field {exc}") from exc


_DEFAULT = None


def default_species() -> IonSpecies:
    """The shipped 43Ca+ constants (cached)."""
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = load_species()
    return _DEFAULT
