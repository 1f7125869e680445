"""Shot-by-shot experiment sequences, photon-counting detection, parity scans.

A sequence starts with classical preparation (optical pumping, transfer
pulses, the mid-sequence PMT check with shot rejection), continues with
quantum steps on the two-ion internal state (carrier/microwave rotations,
entangling gates as thermally averaged channels, waits picking up per-shot
quasi-static phase noise), and ends in fluorescence detection: Poissonian
photon counting with D-state decay during the window, classified into 0/1/2
bright ions by two photon-count thresholds.

Internal basis per ion: ("down", "up", "Y") - the S1/2 qubit pair plus the
metastable upper level of the optical qubit.  Preparation imperfections are
classical leakage into bright (S-manifold) or dark (D-manifold) reservoirs;
leaked ions are inert spectators for the rest of the sequence.

Per-shot randomness comes from a dedicated stream seeded by (seed, shot
index), so results are bit-identical for a given config + seed regardless of
evaluation order.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .config import ExperimentConfig
from .constants import TWO_PI
from .coupling import beam1, beam2
from .gates import (BichromaticPulse, MotionalMode, SpinDependentDisplacementChannel,
                    carrier_rotation, closed_loop_pulse, lamb_dicke_parameter)
from .noise import NoiseModel, calibrate_noise, fit_gaussian_decay, shot_rng
from .species import ConfigurationError, IonSpecies, default_species
from .structure import (D52, S12, UsageError, field_sensitivity, level,
                        level_sensitivity, named_level)

LEVELS = ("down", "up", "Y")
OPTICAL = (0, 2)
HYPERFINE = (0, 1)
_BRIGHT = {"down": True, "up": True, "Y": False}


class RunError(RuntimeError):
    """Structured failure while executing a sequence."""


@dataclass(frozen=True)
class SequenceStep:
    """One element of an experiment sequence; ``params`` are step-specific."""

    kind: str
    duration_us: float = 0.0
    pair: tuple = OPTICAL
    theta: float = 0.0
    phase: float = 0.0
    wait_ms: float = 0.0
    gate_index: int = 0
    error_rate: float | None = None

    _KINDS = ("optical_pump", "transfer_pulse", "pmt_check", "carrier_pulse",
              "microwave_pulse", "ms_gate", "wait", "shelve", "detect",
              "parity_analysis")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ConfigurationError(f"unknown step kind {self.kind!r}")
        if self.duration_us < 0 or self.wait_ms < 0:
            raise ConfigurationError("durations must be >= 0")


@dataclass(frozen=True)
class DetectionModel:
    """Photon-counting model of the PMT detection window."""

    bright_rate: float = 20.0      # photons/ms per ion
    dark_rate: float = 0.2         # photons/ms (PMT background)
    detect_duration: float = 3.0   # ms
    check_duration: float = 0.5    # ms
    check_threshold: int = 3       # reject when counts exceed this
    d_decay_lifetime: float = 1.168  # s
    classify_thresholds: tuple | None = None  # None -> log-Poisson midpoints

    def __post_init__(self):
        if self.bright_rate < 10 * self.dark_rate:
            raise ConfigurationError("bright_rate must be >= 10x dark_rate")
        c1, c2 = self.thresholds()
        if not c1 < c2:
            raise ConfigurationError(f"classification thresholds not monotone: {c1}, {c2}")

    def thresholds(self):
        """(c1, c2): classify 0 bright if counts <= c1, 1 if <= c2, else 2.
        Defaults to the log-Poisson midpoints between the three count means."""
        if self.classify_thresholds is not None:
            return self.classify_thresholds
        t = self.detect_duration
        m0 = self.dark_rate * t
        m1 = self.bright_rate * t + m0
        m2 = 2 * self.bright_rate * t + m0
        c1 = (m1 - m0) / np.log(m1 / m0)
        c2 = (m2 - m1) / np.log(m2 / m1)
        return (int(np.floor(c1)), int(np.floor(c2)))

    def d_decay_probability(self) -> float:
        """Probability that a dark (D-state) ion decays during the detection
        window, the dominant misclassification of dark ions."""
        return float(1.0 - np.exp(-self.detect_duration / (self.d_decay_lifetime * 1e3)))


def detection_from_config(cfg: ExperimentConfig, species: IonSpecies) -> DetectionModel:
    return DetectionModel(bright_rate=cfg.bright_rate_per_ms,
                          dark_rate=cfg.dark_rate_per_ms,
                          detect_duration=cfg.detect_duration_ms,
                          check_duration=cfg.check_duration_ms,
                          check_threshold=cfg.check_threshold,
                          d_decay_lifetime=species.d_lifetime_s)


@dataclass
class ExperimentResult:
    shots_requested: int
    shots_accepted: int
    rejected_fraction: float
    counts_by_k: tuple
    p: tuple                 # (p0, p1, p2), post-rejection
    p_sigma: tuple
    parity_data: list = field(default_factory=list)  # (phase, parity, sigma)
    fidelity: float | None = None
    fidelity_sigma: float | None = None

    @property
    def parity(self) -> float:
        return self.p[0] + self.p[2] - self.p[1]


def estimate_fidelity(p0: float, p2: float, parity_contrast: float,
                      sigma: float = 0.0) -> float:
    """Bell fidelity from populations and parity contrast:
    F = (p0 + p2)/2 + contrast/2."""
    for v in (p0, p2, parity_contrast):
        if not -1e-9 <= v <= 1 + 1e-9:
            raise UsageError(f"inputs must lie in [0, 1], got {v}")
    f = (p0 + p2) / 2.0 + parity_contrast / 2.0
    if f > 1.0 + max(3.0 * sigma, 1e-9):
        warnings.warn(f"estimated fidelity {f:.4f} > 1 beyond statistical "
                      "tolerance; inconsistent inputs", UserWarning)
    return f


# ---------------------------------------------------------------------------
# Internal pipeline machinery (3 levels per ion)


def _rot3(pair, theta, phase):
    u = np.eye(3, dtype=complex)
    r = carrier_rotation(theta, phase)
    i, j = pair
    u[i, i], u[i, j], u[j, i], u[j, j] = r[0, 0], r[0, 1], r[1, 0], r[1, 1]
    return u


def _pair_block(pair):
    """Indices of the two-qubit block of ``pair`` inside the 9-dim basis."""
    return [a * 3 + b for a in pair for b in pair]


def _apply_ms_pair(rho9, channel, pair, depol=0.0):
    """MS channel on the qubit block; coherences between the driven subspace
    and spectator levels are conservatively dropped (they are error-sized in
    every preset)."""
    idx = _pair_block(pair)
    comp = [k for k in range(9) if k not in idx]
    out = rho9.copy()
    block = rho9[np.ix_(idx, idx)]
    new = channel(block)
    if depol > 0.0:
        tr = np.trace(new)
        new = (1 - depol) * new + depol * tr * np.eye(4) / 4.0
    out[np.ix_(idx, idx)] = new
    out[np.ix_(idx, comp)] = 0.0
    out[np.ix_(comp, idx)] = 0.0
    return out


def _apply_ms_single(rho3, channel1, pair, depol=0.0):
    i, j = pair
    idx = [i, j]
    comp = [k for k in range(3) if k not in idx]
    out = rho3.copy()
    block = rho3[np.ix_(idx, idx)]
    new = channel1(block)
    if depol > 0.0:
        new = (1 - depol) * new + depol * np.trace(new) * np.eye(2) / 2.0
    out[np.ix_(idx, idx)] = new
    out[np.ix_(idx, comp)] = 0.0
    out[np.ix_(comp, idx)] = 0.0
    return out


def _single_ion_ms_channel(pulse: BichromaticPulse, mode: MotionalMode):
    """Single-ion reduction of the analytic MS channel (one ion leaked): the
    remaining ion sees the same spin-dependent force; at the closed loop it
    returns to identity."""
    full = SpinDependentDisplacementChannel(pulse, mode)
    alpha, phi = full.alpha, full.phi
    p = pulse.phase
    w = -(np.sin(p) * np.array([[0, 1], [1, 0]], complex)
          + np.cos(p) * np.array([[0, -1j], [1j, 0]], complex))
    ev, vec = np.linalg.eigh(w)
    s = ev
    dphase = np.subtract.outer(s**2, s**2)
    ddispl = np.subtract.outer(s, s) ** 2
    factor = (np.exp(-1j * phi * dphase)
              * np.exp(-np.abs(alpha) ** 2 * ddispl * (mode.nbar + 0.5)))

    def channel(rho2):
        rs = vec.conj().T @ rho2 @ vec
        return vec @ (rs * factor) @ vec.conj().T

    return channel


class Sequencer:
    """Executes sequences for one configuration (precomputed channels)."""

    def __init__(self, cfg: ExperimentConfig, species: IonSpecies | None = None):
        self.cfg = cfg
        self.species = species or default_species()
        self.detection = detection_from_config(cfg, self.species)
        B = cfg.field_g
        eta = cfg.lamb_dicke_eta
        if eta is None:
            eta = lamb_dicke_parameter(
                freq_mhz=cfg.trap_axial_mhz, mass_u=self.species.mass_u,
                angle_to_axis=np.deg2rad(cfg.beam_to_axis_deg))
        self.mode = MotionalMode(frequency=cfg.trap_axial_mhz, lamb_dicke_eta=eta,
                                 nbar=cfg.nbar_com, n_max=cfg.n_max)
        self.pulse = closed_loop_pulse(self.mode, detuning_khz=cfg.detuning_khz)
        self.ms_channel = SpinDependentDisplacementChannel(self.pulse, self.mode)
        self.ms_single = _single_ion_ms_channel(self.pulse, self.mode)
        # per-level field sensitivities (MHz/G) at the operating field
        upper = "Y" if cfg.beam == "beam1" else "Y_prime"
        self.level_sens = np.array([
            level_sensitivity(named_level("down", self.species, B), self.species),
            level_sensitivity(named_level("up", self.species, B), self.species),
            level_sensitivity(named_level(upper, self.species, B), self.species),
        ])
        self.laser_flag = np.array([0.0, 0.0, 1.0])  # laser noise on D levels
        s_opt = self.level_sens[2] - self.level_sens[0]
        s_hf = self.level_sens[1] - self.level_sens[0]
        if cfg.b_field_rms_g is None or cfg.laser_freq_rms_khz is None:
            cal = calibrate_noise(s_opt, s_hf, seed=cfg.seed)
            b_rms = cfg.b_field_rms_g if cfg.b_field_rms_g is not None else cal.b_field_rms
            l_rms = (cfg.laser_freq_rms_khz if cfg.laser_freq_rms_khz is not None
                     else cal.laser_freq_rms)
        else:
            b_rms, l_rms = cfg.b_field_rms_g, cfg.laser_freq_rms_khz
        self.noise = NoiseModel(b_field_rms=b_rms, laser_freq_rms=l_rms,
                                laser_linewidth_hz=cfg.laser_linewidth_hz,
                                rng_seed=cfg.seed)

    # -- sequence validation and splitting

    @staticmethod
    def _is_prep(step):
        return step.kind in ("optical_pump", "transfer_pulse", "pmt_check")

    def _validate(self, seq):
        for s in seq:
            if s.kind in ("carrier_pulse", "microwave_pulse", "parity_analysis"):
                if not all(0 <= i < 3 for i in s.pair):
                    raise RunError(f"unresolvable level pair {s.pair}")

    # -- per-shot classical preparation

    def _prep_shot(self, prep_steps, rng):
        """Returns (ion_states, rejected): ion state is 'path', 'bright' or
        'dark'."""
        ions = ["path", "path"]
        rejected = False
        staged = [False, False]  # True once transferred to the D staging level
        for s in prep_steps:
            if s.kind == "optical_pump":
                e = self.cfg.pump_error if s.error_rate is None else s.error_rate
                for i in range(2):
                    if ions[i] == "path" and rng.random() < e:
                        ions[i] = "bright"
            elif s.kind == "transfer_pulse":
                to_dark = not staged[0]
                for i in range(2):
                    if ions[i] != "path":
                        continue
                    if not staged[i]:
                        e = (self.cfg.transfer1_error if s.error_rate is None
                             else s.error_rate)
                        if rng.random() < e:
                            ions[i] = "bright"  # left behind in S1/2
                        else:
                            staged[i] = True
                    else:
                        e = (self.cfg.transfer2_error if s.error_rate is None
                             else s.error_rate)
                        if rng.random() < e:
                            ions[i] = "dark"   # stuck in the D staging level
            elif s.kind == "pmt_check":
                n_bright = sum(1 for st in ions if st == "bright")
                mean = (n_bright * self.detection.bright_rate
                        + self.detection.dark_rate) * self.detection.check_duration
                counts = rng.poisson(mean) if mean > 0 else 0
                if counts > self.detection.check_threshold:
                    rejected = True
        return ions, rejected

    # -- quantum pipeline

    def _apply_step_pair(self, rho9, step, shot_detune_mhz):
        if step.kind in ("carrier_pulse", "microwave_pulse", "parity_analysis"):
            theta = step.theta if step.kind != "parity_analysis" else np.pi / 2
            u = _rot3(step.pair, theta, step.phase)
            U = np.kron(u, u)
            out = U @ rho9 @ U.conj().T
            if step.error_rate:
                idx = _pair_block(step.pair)
                block = out[np.ix_(idx, idx)]
                eps = (4.0 / 3.0) * step.error_rate
                out[np.ix_(idx, idx)] = ((1 - eps) * block
                                         + eps * np.trace(block) * np.eye(4) / 4)
            return out
        if step.kind == "ms_gate":
            e = (self.cfg.ms_errors[step.gate_index]
                 if step.error_rate is None else step.error_rate)
            eps = (4.0 / 3.0) * e + self.noise.excess_error_per_gate
            return _apply_ms_pair(rho9, self.ms_channel, step.pair, depol=eps)
        if step.kind == "wait":
            ph = np.exp(-1j * TWO_PI * shot_detune_mhz * (step.wait_ms * 1e3))
            d1 = np.array([ph[k] for k in range(3)])
            dd = np.kron(d1, d1)
            return rho9 * np.outer(dd, dd.conj())
        raise RunError(f"unexpected quantum step {step.kind}")

    def _apply_step_single(self, rho3, step, shot_detune_mhz):
        if step.kind in ("carrier_pulse", "microwave_pulse", "parity_analysis"):
            theta = step.theta if step.kind != "parity_analysis" else np.pi / 2
            u = _rot3(step.pair, theta, step.phase)
            out = u @ rho3 @ u.conj().T
            if step.error_rate:
                i, j = step.pair
                idx = [i, j]
                block = out[np.ix_(idx, idx)]
                eps = (4.0 / 3.0) * step.error_rate
                out[np.ix_(idx, idx)] = ((1 - eps) * block
                                         + eps * np.trace(block) * np.eye(2) / 2)
            return out
        if step.kind == "ms_gate":
            e = (self.cfg.ms_errors[step.gate_index]
                 if step.error_rate is None else step.error_rate)
            eps = (4.0 / 3.0) * e + self.noise.excess_error_per_gate
            return _apply_ms_single(rho3, self.ms_single, step.pair, depol=eps)
        if step.kind == "wait":
            ph = np.exp(-1j * TWO_PI * shot_detune_mhz * (step.wait_ms * 1e3))
            return rho3 * np.outer(ph, ph.conj())
        raise RunError(f"unexpected quantum step {step.kind}")

    def _shot_detuning(self, db_gauss, dlaser_khz):
        """Per-level frequency offsets (MHz) for one shot's noise draws."""
        return self.level_sens * db_gauss + self.laser_flag * dlaser_khz * 1e-3

    # -- detection

    def _detect_shot(self, ions, rho, shelved, rng):
        """Sample (counts, k bright)."""
        det = self.detection
        bright_flags = []
        if rho is not None:
            if rho.shape[0] == 9:
                diag = np.real(np.diag(rho)).clip(min=0)
                diag = diag / diag.sum()
                pick = rng.choice(9, p=diag)
                lv = (pick // 3, pick % 3)
            else:
                diag = np.real(np.diag(rho)).clip(min=0)
                diag = diag / diag.sum()
                lv = (rng.choice(3, p=diag),)
        else:
            lv = ()
        qi = 0
        for st in ions:
            if st == "bright":
                bright_flags.append(True)
            elif st == "dark":
                bright_flags.append(False)
            else:
                name = LEVELS[lv[qi]]
                qi += 1
                b = _BRIGHT[name]
                if shelved and name == "down":
                    b = rng.random() < self.cfg.shelve_error
                bright_flags.append(b)
        t = det.detect_duration
        counts = rng.poisson(det.dark_rate * t)
        tau_ms = det.d_decay_lifetime * 1e3
        p_dec = 1.0 - np.exp(-t / tau_ms)
        for b in bright_flags:
            if b:
                counts += rng.poisson(det.bright_rate * t)
            else:
                if rng.random() < p_dec:
                    s = -tau_ms * np.log(1.0 - rng.random() * p_dec)
                    counts += rng.poisson(det.bright_rate * (t - s))
        c1, c2 = det.thresholds()
        k = 0 if counts <= c1 else (1 if counts <= c2 else 2)
        return counts, k

    # -- main entry

    def run(self, seq, shots, seed=None) -> ExperimentResult:
        self._validate(seq)
        seed = self.cfg.seed if seed is None else seed
        noise = replace(self.noise, rng_seed=seed)
        prep_steps = [s for s in seq if self._is_prep(s)]
        rest = [s for s in seq if not self._is_prep(s)]
        quantum = [s for s in rest if s.kind in
                   ("carrier_pulse", "microwave_pulse", "ms_gate", "wait",
                    "parity_analysis")]
        shelved = any(s.kind == "shelve" for s in rest)
        if sum(1 for s in rest if s.kind == "detect") != 1:
            raise RunError("sequence must contain exactly one detect step")

        # deterministic prefix: everything before the first wait
        first_wait = next((i for i, s in enumerate(quantum) if s.kind == "wait"),
                          len(quantum))
        prefix, suffix = quantum[:first_wait], quantum[first_wait:]

        rho9_0 = np.zeros((9, 9), complex)
        rho9_0[0, 0] = 1.0
        rho3_0 = np.zeros((3, 3), complex)
        rho3_0[0, 0] = 1.0
        for s in prefix:
            rho9_0 = self._apply_step_pair(rho9_0, s, np.zeros(3))
            rho3_0 = self._apply_step_single(rho3_0, s, np.zeros(3))

        counts_by_k = [0, 0, 0]
        rejected = 0
        for shot in range(shots):
            rng = shot_rng(noise, shot)
            db = noise.b_field_rms * rng.standard_normal()
            dl = noise.laser_freq_rms * rng.standard_normal()
            ions, rej = self._prep_shot(prep_steps, rng)
            if rej:
                rejected += 1
                continue
            n_path = sum(1 for st in ions if st == "path")
            detune = self._shot_detuning(db, dl)
            if n_path == 2:
                rho = rho9_0
                for s in suffix:
                    rho = self._apply_step_pair(rho, s, detune)
            elif n_path == 1:
                rho = rho3_0
                for s in suffix:
                    rho = self._apply_step_single(rho, s, detune)
            else:
                rho = None
            _, k = self._detect_shot(ions, rho, shelved, rng)
            counts_by_k[k] += 1
        accepted = shots - rejected
        if accepted == 0:
            raise RunError("all shots rejected by the PMT check")
        p = tuple(c / accepted for c in counts_by_k)
        sig = tuple(np.sqrt(max(pk * (1 - pk), 1e-12) / accepted) for pk in p)
        return ExperimentResult(
            shots_requested=shots, shots_accepted=accepted,
            rejected_fraction=rejected / shots, counts_by_k=tuple(counts_by_k),
            p=p, p_sigma=sig)


# ---------------------------------------------------------------------------
# Sequence builders


def prep_steps(cfg: ExperimentConfig):
    return [
        SequenceStep("optical_pump", duration_us=600.0),
        SequenceStep("transfer_pulse", duration_us=20.0),
        SequenceStep("pmt_check", duration_us=500.0),
        SequenceStep("transfer_pulse", duration_us=20.0),
    ]


def map_steps(cfg: ExperimentConfig, inverse=False):
    err = cfg.map_inv_error if inverse else cfg.map_error
    steps = [
        SequenceStep("microwave_pulse", duration_us=100.0, pair=HYPERFINE, theta=np.pi),
        SequenceStep("carrier_pulse", duration_us=20.0, pair=OPTICAL, theta=np.pi,
                     error_rate=err),
    ]
    return list(reversed(steps)) if inverse else steps


def bell_sequence(cfg: ExperimentConfig, qubit_kind: str, analysis_phase=None,
                  wait_ms: float = 0.0):
    """Bell preparation on the optical qubit, optional map to the hyperfine
    qubit, optional wait, optional parity-analysis pulse, detection."""
    seq = prep_steps(cfg) + [SequenceStep("ms_gate", duration_us=100.0, pair=OPTICAL)]
    analysis_pair = OPTICAL
    if qubit_kind == "hyperfine":
        seq += map_steps(cfg)
        analysis_pair = HYPERFINE
    elif qubit_kind != "optical":
        raise ConfigurationError(f"unknown qubit kind {qubit_kind!r}")
    if wait_ms > 0:
        seq.append(SequenceStep("wait", wait_ms=wait_ms))
    if analysis_phase is not None:
        seq.append(SequenceStep("parity_analysis", pair=analysis_pair,
                                phase=analysis_phase))
    if qubit_kind == "hyperfine":
        seq.append(SequenceStep("shelve", duration_us=40.0))
    seq.append(SequenceStep("detect", duration_us=3000.0))
    return seq


# ---------------------------------------------------------------------------
# Public operations


def run_sequence(seq, config: ExperimentConfig, shots: int,
                 seed: int | None = None,
                 species: IonSpecies | None = None) -> ExperimentResult:
    """Execute a sequence shot by shot; deterministic under (config, seed)."""
    return Sequencer(config, species).run(seq, shots, seed)


def simulate_detection(state, model: DetectionModel, rng,
                       bright_labels=("down", "up")):
    """Sample one detection event from a two-ion internal state.

    ``state`` is a 9x9 internal density matrix over LEVELS x LEVELS (or a
    JointState, whose motional part is traced out).  Returns (counts, k).
    """
    from .gates import JointState
    if isinstance(state, JointState):
        rho = state.reduced_internal()
    else:
        rho = np.asarray(state, complex)
    diag = np.real(np.diag(rho)).clip(min=0)
    diag = diag / diag.sum()
    n = int(round(np.sqrt(len(diag))))
    pick = rng.choice(len(diag), p=diag)
    names = LEVELS[:n]
    pair = (names[pick // n], names[pick % n])
    t = model.detect_duration
    counts = rng.poisson(model.dark_rate * t)
    tau_ms = model.d_decay_lifetime * 1e3
    p_dec = 1.0 - np.exp(-t / tau_ms)
    for name in pair:
        if name in bright_labels:
            counts += rng.poisson(model.bright_rate * t)
        elif rng.random() < p_dec:
            s = -tau_ms * np.log(1.0 - rng.random() * p_dec)
            counts += rng.poisson(model.bright_rate * (t - s))
    c1, c2 = model.thresholds()
    k = 0 if counts <= c1 else (1 if counts <= c2 else 2)
    return counts, k


def parity_scan(config: ExperimentConfig, qubit_kind: str, phases,
                shots_per_point: int, seed: int | None = None,
                wait_ms: float = 0.0, species: IonSpecies | None = None):
    """Parity p0 + p2 - p1 versus analysis phase; binomial uncertainties."""
    seed = config.seed if seed is None else seed
    seq_runner = Sequencer(config, species)
    data = []
    for i, phi in enumerate(phases):
        seq = bell_sequence(config, qubit_kind, analysis_phase=phi, wait_ms=wait_ms)
        res = seq_runner.run(seq, shots_per_point, seed=seed + 1000 * (i + 1))
        par = res.parity
        sig = np.sqrt(max(1.0 - par**2, 1e-6) / res.shots_accepted)
        data.append((float(phi), float(par), float(sig)))
    return data


def fit_parity_contrast(parity_data, method: str = "lsq"):
    """Contrast of parity oscillations vs twice the analysis phase.

    "lsq": weighted linear least squares of A cos 2phi + B sin 2phi + c0;
    "fourier": discrete Fourier amplitude at the parity period.  Returns
    (contrast, sigma).
    """
    phi = np.array([d[0] for d in parity_data])
    par = np.array([d[1] for d in parity_data])
    sig = np.array([max(d[2], 1e-9) for d in parity_data])
    if method == "fourier":
        z = par * np.exp(-2j * phi)
        c = 2.0 * abs(z.mean())
        return float(c), float(np.sqrt(2.0 / len(phi)) * np.mean(sig))
    if method != "lsq":
        raise UsageError(f"unknown contrast fit method {method!r}")
    X = np.column_stack([np.cos(2 * phi), np.sin(2 * phi), np.ones_like(phi)])
    W = 1.0 / sig**2
    XtW = X.T * W
    cov = np.linalg.inv(XtW @ X)
    beta = cov @ (XtW @ par)
    A, Bc = beta[0], beta[1]
    C = float(np.hypot(A, Bc))
    if C < 1e-12:
        return 0.0, float(np.sqrt(cov[0, 0] + cov[1, 1]))
    var = (A**2 * cov[0, 0] + Bc**2 * cov[1, 1] + 2 * A * Bc * cov[0, 1]) / C**2
    return C, float(np.sqrt(max(var, 0.0)))


def bell_experiment(config: ExperimentConfig, qubit_kind: str = "optical",
                    shots: int | None = None, seed: int | None = None,
                    species: IonSpecies | None = None) -> ExperimentResult:
    """Populations run plus parity scan, composed into a Bell fidelity."""
    shots = config.shots if shots is None else shots
    seed = config.seed if seed is None else seed
    runner = Sequencer(config, species)
    res = runner.run(bell_sequence(config, qubit_kind), shots, seed=seed)
    phases = np.linspace(0.0, np.pi, config.parity_phases, endpoint=False)
    pdata = parity_scan(config, qubit_kind, phases, shots, seed=seed + 7,
                        species=species)
    contrast, csig = fit_parity_contrast(pdata)
    pops = res.p[0] + res.p[2]
    pops_sig = np.hypot(res.p_sigma[0], res.p_sigma[2])
    fid = estimate_fidelity(res.p[0], res.p[2], contrast,
                            sigma=np.hypot(pops_sig, csig) / 2)
    res.parity_data = pdata
    res.fidelity = float(fid)
    res.fidelity_sigma = float(np.hypot(pops_sig, csig) / 2)
    return res


def error_budget(config: ExperimentConfig):
    """Cumulative-fidelity budget: multiplicative composition of the per-step
    errors, reported as (step, duration us, error %, cumulative fidelity %)."""
    rows = []
    fid = 1.0
    for name, dur, err in config.budget_rows:
        fid *= (1.0 - err)
        rows.append((name, dur, 100.0 * err, 100.0 * fid))
    return rows


def decay_experiment(qubit_kind: str, wait_times_ms, shots_per_point: int,
                     seed: int | None = None,
                     config: ExperimentConfig | None = None,
                     species: IonSpecies | None = None):
    """Bell preparation, variable wait, parity scan per wait time, Gaussian
    contrast fit.  Returns (DecayFit, curve rows (t, contrast, sigma))."""
    if config is None:
        config = ExperimentConfig()
    if not len(wait_times_ms):
        raise UsageError("wait_times_ms must be nonempty")
    seed = config.seed if seed is None else seed
    phases = np.linspace(0.0, np.pi, config.parity_phases, endpoint=False)
    curve = []
    for j, t in enumerate(wait_times_ms):
        pdata = parity_scan(config, qubit_kind, phases, shots_per_point,
                            seed=seed + 100000 * (j + 1), wait_ms=float(t),
                            species=species)
        c, cs = fit_parity_contrast(pdata)
        curve.append((float(t), c, cs))
    fit = fit_gaussian_decay(curve)
    return fit, curve
