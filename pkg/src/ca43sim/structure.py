"""Hyperfine + Zeeman level structure of the S1/2 and D5/2 manifolds.

The Hamiltonian per manifold, in the ``|m_I, m_J>`` product basis and in MHz,

    H = A (I.J) + B_q * quadrupole(I, J) + B * (g_J mu_B m_J - g_I mu_N m_I)

is block-diagonal in m_F = m_I + m_J.  Eigenlevels carry adiabatic (F, m_F)
labels assigned by maximum-overlap tracking from B = 0 in 0.1 G steps; at
zero field the labels coincide with the degenerate hyperfine multiplets.
Energies are referred to the manifold's zero-field centroid (every term in H
is traceless, so raw eigenvalues are already centroid-referenced).

Basis ordering: index = i_I * (2J+1) + i_J with m_I = I - i_I and
m_J = J - i_J (magnetic quantum numbers descending).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .constants import MU_B_MHZ_PER_G, MU_N_MHZ_PER_G
from .species import ConfigurationError, IonSpecies, default_species

S12 = "S12"
D52 = "D52"
_MANIFOLD_J = {S12: 0.5, D52: 2.5}

_TRACK_STEP_G = 0.1


class UsageError(ValueError):
    """Operation called with inconsistent arguments (e.g. mixed fields)."""


class DegeneratePointWarning(UserWarning):
    """Adiabatic tracking or differentiation near a level (near-)crossing."""


def manifold_J(manifold: str) -> float:
    try:
        return _MANIFOLD_J[manifold]
    except KeyError:
        raise ConfigurationError(f"unknown manifold {manifold!r}; expected S12 or D52")


def angular_momentum_ops(j: float):
    """(Jz, J+, J-, m-values) for spin j, m descending from +j."""
    dim = int(round(2 * j + 1))
    m = j - np.arange(dim)
    jz = np.diag(m)
    jp = np.zeros((dim, dim))
    for k in range(1, dim):
        jp[k - 1, k] = np.sqrt(j * (j + 1) - m[k] * (m[k] + 1))
    return jz, jp, jp.T.copy(), m


@dataclass(frozen=True)
class ZeemanLevel:
    """One eigenstate of the hyperfine+Zeeman Hamiltonian.

    ``F`` is the adiabatic zero-field label; ``mF`` is exact at all fields.
    ``energy`` is in MHz relative to the manifold's zero-field centroid.
    ``eigenvector`` lives in the full product basis of the manifold.
    """

    manifold: str
    F: int
    mF: int
    energy: float
    eigenvector: np.ndarray = field(repr=False, compare=False)
    field_g: float = 0.0

    @property
    def label(self):
        return (self.manifold, self.F, self.mF)


@dataclass(frozen=True)
class NamedQubit:
    lower: ZeemanLevel
    upper: ZeemanLevel
    kind: str  # "optical" or "hyperfine"


def _mf_values(species: IonSpecies, manifold: str) -> np.ndarray:
    I = species.nuclear_spin
    J = manifold_J(manifold)
    _, _, _, mi = angular_momentum_ops(I)
    _, _, _, mj = angular_momentum_ops(J)
    return np.add.outer(mi, mj).ravel()


def build_hamiltonian(species: IonSpecies, manifold: str, B: float) -> np.ndarray:
    """Dense Hermitian Hamiltonian (MHz) of one manifold at field B (gauss)."""
    if B < 0:
        raise UsageError(f"B must be >= 0, got {B}")
    I = species.nuclear_spin
    J = manifold_J(manifold)
    if manifold == S12:
        A, Bq, gj = species.a_s_mhz, 0.0, species.g_j_ground
    else:
        A, Bq, gj = species.a_d_mhz, species.b_d_mhz, species.g_j_d
    Iz, Ip, Im, _ = angular_momentum_ops(I)
    Jz, Jp, Jm, _ = angular_momentum_ops(J)
    di, dj = Iz.shape[0], Jz.shape[0]
    idot_j = np.kron(Iz, Jz) + 0.5 * (np.kron(Ip, Jm) + np.kron(Im, Jp))
    H = A * idot_j
    if Bq != 0.0 and I > 0.5 and J > 0.5:
        ii, jj = I * (I + 1), J * (J + 1)
        H = H + Bq * (3 * idot_j @ idot_j + 1.5 * idot_j - ii * jj * np.eye(di * dj)) / (
            2 * I * (2 * I - 1) * J * (2 * J - 1))
    H = H + B * (gj * MU_B_MHZ_PER_G * np.kron(np.eye(di), Jz)
                 - species.g_i * MU_N_MHZ_PER_G * np.kron(Iz, np.eye(dj)))
    return H


def zeeman_operator(species: IonSpecies, manifold: str) -> np.ndarray:
    """dH/dB (MHz/G), diagonal in the product basis."""
    I = species.nuclear_spin
    J = manifold_J(manifold)
    gj = species.g_j_ground if manifold == S12 else species.g_j_d
    Iz, _, _, _ = angular_momentum_ops(I)
    Jz, _, _, _ = angular_momentum_ops(J)
    return (gj * MU_B_MHZ_PER_G * np.kron(np.eye(Iz.shape[0]), Jz)
            - species.g_i * MU_N_MHZ_PER_G * np.kron(Iz, np.eye(Jz.shape[0])))


def _zero_field_f_energies(species: IonSpecies, manifold: str):
    """{F: hyperfine energy} at B = 0 (centroid-referenced closed forms)."""
    I = species.nuclear_spin
    J = manifold_J(manifold)
    if manifold == S12:
        A, Bq = species.a_s_mhz, 0.0
    else:
        A, Bq = species.a_d_mhz, species.b_d_mhz
    out = {}
    F = abs(I - J)
    while F <= I + J + 1e-9:
        K = F * (F + 1) - I * (I + 1) - J * (J + 1)
        E = 0.5 * A * K
        if Bq != 0.0 and I > 0.5 and J > 0.5:
            E += Bq * (1.5 * K * (K + 1) - 2 * I * (I + 1) * J * (J + 1)) / (
                2 * I * (2 * I - 1) * 2 * J * (2 * J - 1))
        out[int(round(F))] = E
        F += 1
    return out


class _BlockDiag:
    """Per-m_F-block eigensystem of one manifold at one field."""

    def __init__(self, species, manifold, B):
        H = build_hamiltonian(species, manifold, B)
        mf = _mf_values(species, manifold)
        self.blocks = {}
        for m in np.unique(mf):
            idx = np.where(np.abs(mf - m) < 1e-12)[0]
            evals, evecs = np.linalg.eigh(H[np.ix_(idx, idx)])
            self.blocks[float(m)] = (idx, evals, evecs)


class _LabelTracker:
    """Adiabatic F labels per block, tracked from B=0 on a 0.1 G grid.

    Stores only the label permutations at grid points plus the eigenvectors
    of the most recently diagonalized grid point, so memory stays small while
    arbitrary fields are labeled with one extra diagonalization.
    """

    def __init__(self, species, manifold):
        self.species = species
        self.manifold = manifold
        diag0 = _BlockDiag(species, manifold, 0.0)
        ef = _zero_field_f_energies(species, manifold)
        self.grid_labels = []
        labels0 = {}
        for m, (idx, evals, _) in diag0.blocks.items():
            # at B=0 each block holds every F >= |m| exactly once, ordered by
            # the hyperfine energies
            fs = sorted((E, F) for F, E in ef.items() if F >= abs(m) - 1e-9)
            if len(fs) != len(evals):
                raise ConfigurationError(
                    f"zero-field block m={m} has {len(evals)} states but {len(fs)} F labels")
            labels0[m] = tuple(F for _, F in fs)
        self.grid_labels.append(labels0)
        self._last_grid_diag = diag0
        self._last_grid_index = 0
        self.min_overlap = 1.0

    def _match(self, prev_diag, prev_labels, new_diag):
        new_labels = {}
        for m, (idx, evals, evecs) in new_diag.blocks.items():
            _, _, pvecs = prev_diag.blocks[m]
            ov = np.abs(pvecs.T @ evecs)  # real symmetric eigenvectors
            labels = []
            for col in range(ov.shape[1]):
                row = int(np.argmax(ov[:, col]))
                if ov[row, col] <= 0.5:
                    warnings.warn(
                        f"adiabatic tracking overlap {ov[row, col]:.3f} <= 0.5 in "
                        f"{self.manifold} block mF={m}", DegeneratePointWarning)
                self.min_overlap = min(self.min_overlap, ov[row, col])
                labels.append(prev_labels[m][row])
            new_labels[m] = tuple(labels)
        return new_labels

    def _extend_grid(self, k_target):
        while self._last_grid_index < k_target:
            k = self._last_grid_index + 1
            diag = _BlockDiag(self.species, self.manifold, k * _TRACK_STEP_G)
            self.grid_labels.append(
                self._match(self._last_grid_diag, self.grid_labels[-1], diag))
            self._last_grid_diag = diag
            self._last_grid_index = k

    def labels_at(self, B):
        """(labels dict, _BlockDiag) at field B."""
        k = int(np.floor(B / _TRACK_STEP_G + 1e-12))
        self._extend_grid(k)
        diag_b = _BlockDiag(self.species, self.manifold, B)
        if abs(B - k * _TRACK_STEP_G) < 1e-12:
            if k == self._last_grid_index:
                return self.grid_labels[k], self._last_grid_diag
            return self.grid_labels[k], diag_b
        if k == self._last_grid_index:
            ref = self._last_grid_diag
        else:
            ref = _BlockDiag(self.species, self.manifold, k * _TRACK_STEP_G)
        return self._match(ref, self.grid_labels[k], diag_b), diag_b


_trackers: dict = {}


def _tracker(species, manifold) -> _LabelTracker:
    key = (species, manifold)
    if key not in _trackers:
        _trackers[key] = _LabelTracker(species, manifold)
    return _trackers[key]


def eigenlevels(species: IonSpecies | None = None, manifold: str = S12,
                B: float = 0.0) -> list[ZeemanLevel]:
    """All Zeeman levels of a manifold at field B, sorted by (mF, energy, F)."""
    if species is None:
        species = default_species()
    if B < 0:
        raise UsageError(f"B must be >= 0, got {B}")
    manifold_J(manifold)
    labels, diag = _tracker(species, manifold).labels_at(B)
    dim = len(_mf_values(species, manifold))
    out = []
    for m, (idx, evals, evecs) in diag.blocks.items():
        for rank in range(len(evals)):
            vec = np.zeros(dim)
            vec[idx] = evecs[:, rank]
            out.append(ZeemanLevel(manifold=manifold, F=int(labels[m][rank]),
                                   mF=int(round(m)), energy=float(evals[rank]),
                                   eigenvector=vec, field_g=float(B)))
    out.sort(key=lambda lv: (lv.mF, lv.energy, lv.F))
    return out


def level(species: IonSpecies | None, manifold: str, F: int, mF: int,
          B: float) -> ZeemanLevel:
    """Single level by adiabatic (manifold, F, mF) label."""
    for lv in eigenlevels(species, manifold, B):
        if lv.F == F and lv.mF == mF:
            return lv
    raise ConfigurationError(f"no level {manifold}(F={F}, mF={mF}) at B={B}")


_NAMED_LEVELS = {
    "down": (S12, 4, 0),
    "up": (S12, 3, 0),
    "Y": (D52, 6, 1),
    "Y_prime": (D52, 4, 2),
}


def named_level(name: str, species: IonSpecies | None = None, B: float = 0.0) -> ZeemanLevel:
    """One of the four named states: down, up, Y, Y_prime."""
    try:
        man, F, mF = _NAMED_LEVELS[name]
    except KeyError:
        raise ConfigurationError(f"unknown level name {name!r}; expected one of "
                                 f"{sorted(_NAMED_LEVELS)}")
    return level(species, man, F, mF, B)


def named_qubit(kind: str, species: IonSpecies | None = None, B: float = 0.0,
                prime: bool = False) -> NamedQubit:
    """The optical (down <-> Y or Y') or hyperfine (down <-> up) qubit at B."""
    if kind == "optical":
        upper = named_level("Y_prime" if prime else "Y", species, B)
        return NamedQubit(lower=named_level("down", species, B), upper=upper,
                          kind="optical")
    if kind == "hyperfine":
        return NamedQubit(lower=named_level("down", species, B),
                          upper=named_level("up", species, B), kind="hyperfine")
    raise ConfigurationError(f"unknown qubit kind {kind!r}")


def breit_rabi_energy(species: IonSpecies | None, F: int, mF: int, B: float) -> float:
    """Closed-form S1/2 level energy (MHz), centroid-referenced.

    Exact for J = 1/2; used as the independent oracle for the S1/2
    diagonalization.  Stretched states |mF| = I + 1/2 take the explicit
    linear branch (no sign ambiguity from the square root).
    """
    if species is None:
        species = default_species()
    I = species.nuclear_spin
    if abs(mF) > F or F not in (int(round(I - 0.5)), int(round(I + 0.5))):
        raise UsageError(f"invalid S1/2 label F={F}, mF={mF} for I={I}")
    A = species.a_s_mhz
    b_j = species.g_j_ground * MU_B_MHZ_PER_G * B
    b_i = -species.g_i * MU_N_MHZ_PER_G * B
    if abs(mF) == int(round(I + 0.5)):
        sgn = 1.0 if mF > 0 else -1.0
        return A * I / 2 + sgn * (b_j / 2 + b_i * I)
    dw = A * (I + 0.5)  # signed zero-field splitting
    x = (b_j - b_i) / dw
    root = np.sqrt(1.0 + 4.0 * mF * x / (2 * I + 1) + x * x)
    sign = +1.0 if F == int(round(I + 0.5)) else -1.0
    return -A / 4 + b_i * mF + sign * (dw / 2) * root


def _resolve(species, B, lv):
    """Accept a ZeemanLevel or a (manifold, F, mF) label tuple."""
    if isinstance(lv, ZeemanLevel):
        return lv
    man, F, mF = lv
    return level(species, man, F, mF, B)


def transition_frequency(a, b, B: float | None = None,
                         species: IonSpecies | None = None) -> float:
    """Frequency offset (MHz) of the a -> b transition from the field-free
    manifold interval; antisymmetric under swapping a and b."""
    if species is None:
        species = default_species()
    if B is None:
        if not (isinstance(a, ZeemanLevel) and isinstance(b, ZeemanLevel)):
            raise UsageError("B is required when passing level labels")
        B = a.field_g
    a = _resolve(species, B, a)
    b = _resolve(species, B, b)
    if abs(a.field_g - b.field_g) > 1e-12:
        raise UsageError(
            f"levels computed at different fields: {a.field_g} vs {b.field_g} G")
    return b.energy - a.energy


def level_sensitivity(lv: ZeemanLevel, species: IonSpecies | None = None) -> float:
    """dE/dB (MHz/G) of a single level via the Hellmann-Feynman expectation."""
    if species is None:
        species = default_species()
    zop = zeeman_operator(species, lv.manifold)
    return float(lv.eigenvector @ (np.diag(zop) * lv.eigenvector))


def field_sensitivity(a, b, B: float, species: IonSpecies | None = None,
                      method: str = "both", fd_step_g: float = 1e-3,
                      rel_tol: float = 1e-3) -> float:
    """d(transition_frequency)/dB in MHz/G at field B.

    ``method`` selects the Hellmann-Feynman expectation ("hf"), a central
    finite difference with ``fd_step_g`` ("fd"), or both with a consistency
    check ("both", default): disagreement beyond ``rel_tol`` of the Zeeman
    scale emits a :class:`DegeneratePointWarning` (likely a level crossing
    inside the difference stencil).
    """
    if species is None:
        species = default_species()
    a_lbl = a.label if isinstance(a, ZeemanLevel) else tuple(a)
    b_lbl = b.label if isinstance(b, ZeemanLevel) else tuple(b)

    def hf():
        la = _resolve(species, B, a_lbl)
        lb = _resolve(species, B, b_lbl)
        return level_sensitivity(lb, species) - level_sensitivity(la, species)

    def fd():
        h = min(fd_step_g, B) if B > 0 else fd_step_g
        lo = max(B - h, 0.0)
        f_hi = transition_frequency(_resolve(species, B + h, a_lbl),
                                    _resolve(species, B + h, b_lbl))
        f_lo = transition_frequency(_resolve(species, lo, a_lbl),
                                    _resolve(species, lo, b_lbl))
        return (f_hi - f_lo) / (B + h - lo)

    if method == "hf":
        return hf()
    if method == "fd":
        return fd()
    if method != "both":
        raise UsageError(f"unknown method {method!r}")
    s_hf, s_fd = hf(), fd()
    scale = max(abs(s_hf), abs(s_fd), MU_B_MHZ_PER_G * 1e-3)
    if abs(s_hf - s_fd) > rel_tol * scale:
        warnings.warn(
            f"sensitivity methods disagree at B={B} G: HF={s_hf:.6g}, FD={s_fd:.6g}",
            DegeneratePointWarning)
    return s_hf


@dataclass(frozen=True)
class InsensitiveFieldResult:
    found: bool
    field_g: float | None
    iterations: int = 0


def find_insensitive_field(a_label, b_label, B_range,
                           species: IonSpecies | None = None,
                           xtol_g: float = 1e-3) -> InsensitiveFieldResult:
    """Bisect for the field where the transition sensitivity crosses zero.

    Returns a not-found result (rather than raising) when the sensitivity
    does not change sign over ``B_range``.
    """
    if species is None:
        species = default_species()
    lo, hi = float(B_range[0]), float(B_range[1])
    if not 0 <= lo < hi:
        raise UsageError(f"bad field range {B_range}")
    s = lambda b: field_sensitivity(a_label, b_label, b, species, method="hf")
    s_lo, s_hi = s(lo), s(hi)
    if s_lo == 0.0:
        return InsensitiveFieldResult(True, lo)
    if s_hi == 0.0:
        return InsensitiveFieldResult(True, hi)
    if np.sign(s_lo) == np.sign(s_hi):
        return InsensitiveFieldResult(False, None)
    it = 0
    while hi - lo > xtol_g:
        mid = 0.5 * (lo + hi)
        s_mid = s(mid)
        it += 1
        if s_mid == 0.0:
            return InsensitiveFieldResult(True, mid, it)
        if np.sign(s_mid) == np.sign(s_lo):
            lo, s_lo = mid, s_mid
        else:
            hi = mid
    return InsensitiveFieldResult(True, 0.5 * (lo + hi), it)
