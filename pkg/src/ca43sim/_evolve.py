"""Split-unitary propagation kernels for the bichromatic gate Hamiltonian.

The interaction-picture Hamiltonian separates into a fast carrier part
(spin-only, handled by exact axis-angle SU(2) substeps on each ion's gate
subspace) and a slow part (sideband and near-resonant spectator terms with
kHz-scale phase evolution), combined with Strang splitting.  The slow-part
exponential uses a short Lanczos recursion, so every factor is unitary to
machine precision and the global propagator inherits unitarity regardless of
step size; the step size only controls the splitting accuracy.

State layout: complex vector indexed by (s1, s2, n) -> (s1 * L + s2) * F + n
with L internal levels per ion (0 = gate lower, 1 = gate upper) and F Fock
states of the driven mode.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _carrier_su2(omega_amp, freq_ang, phase, t1, t2, nsub):
    """SU(2) propagator of sum_tones (amp)[sx cos th + sy sin th] over [t1, t2],
    th = freq*t - phase, by midpoint axis-angle substeps."""
    r00 = 1.0 + 0.0j
    r01 = 0.0 + 0.0j
    r10 = 0.0 + 0.0j
    r11 = 1.0 + 0.0j
    dt = (t2 - t1) / nsub
    for k in range(nsub):
        tm = t1 + (k + 0.5) * dt
        ax = 0.0
        ay = 0.0
        for j in range(omega_amp.shape[0]):
            th = freq_ang[j] * tm - phase[j]
            ax += omega_amp[j] * np.cos(th)
            ay += omega_amp[j] * np.sin(th)
        amp = np.sqrt(ax * ax + ay * ay)
        ang = amp * dt
        if amp < 1e-300:
            continue
        c = np.cos(ang)
        s = np.sin(ang)
        nx = ax / amp
        ny = ay / amp
        # U = cos(ang) I - i sin(ang) (nx sx + ny sy)
        u00 = c + 0.0j
        u01 = -1j * s * (nx - 1j * ny)
        u10 = -1j * s * (nx + 1j * ny)
        u11 = c + 0.0j
        n00 = u00 * r00 + u01 * r10
        n01 = u00 * r01 + u01 * r11
        n10 = u10 * r00 + u11 * r10
        n11 = u10 * r01 + u11 * r11
        r00, r01, r10, r11 = n00, n01, n10, n11
    return r00, r01, r10, r11


@njit(cache=True)
def _apply_pair_rotation(psi, r00, r01, r10, r11, L, F):
    """Apply the same 2x2 rotation on internal levels (0,1) of both ions."""
    # ion 1 (first internal index)
    for s2 in range(L):
        for n in range(F):
            i0 = (0 * L + s2) * F + n
            i1 = (1 * L + s2) * F + n
            a = psi[i0]
            b = psi[i1]
            psi[i0] = r00 * a + r01 * b
            psi[i1] = r10 * a + r11 * b
    # ion 2 (second internal index)
    for s1 in range(L):
        for n in range(F):
            i0 = (s1 * L + 0) * F + n
            i1 = (s1 * L + 1) * F + n
            a = psi[i0]
            b = psi[i1]
            psi[i0] = r00 * a + r01 * b
            psi[i1] = r10 * a + r11 * b


@njit(cache=True)
def _slow_matvec(out, psi, t, amp, freq_ang, rows, cols, vals, ptr):
    """out = H_slow(t) psi with H = sum_k amp_k e^{-i w_k t} M_k + h.c."""
    out[:] = 0.0
    for k in range(amp.shape[0]):
        ph = freq_ang[k] * t
        c = amp[k] * (np.cos(ph) - 1j * np.sin(ph))
        cc = np.conj(c)
        for e in range(ptr[k], ptr[k + 1]):
            r = rows[e]
            q = cols[e]
            v = vals[e]
            out[r] += c * v * psi[q]
            out[q] += cc * v * psi[r]


@njit(cache=True)
def _lanczos_expm(psi, t, h, amp, freq_ang, rows, cols, vals, ptr, m, work, w):
    """psi <- exp(-i h H_slow(t)) psi, Krylov dimension m."""
    dim = psi.shape[0]
    nrm = 0.0
    for i in range(dim):
        nrm += psi[i].real**2 + psi[i].imag**2
    nrm = np.sqrt(nrm)
    if nrm < 1e-300:
        return
    alpha = np.zeros(m)
    beta = np.zeros(m)
    for i in range(dim):
        work[0, i] = psi[i] / nrm
    _slow_matvec(w, work[0], t, amp, freq_ang, rows, cols, vals, ptr)
    a0 = 0.0
    for i in range(dim):
        a0 += (np.conj(work[0, i]) * w[i]).real
    alpha[0] = a0
    for i in range(dim):
        w[i] -= a0 * work[0, i]
    used = 1
    for k in range(1, m):
        b = 0.0
        for i in range(dim):
            b += w[i].real**2 + w[i].imag**2
        b = np.sqrt(b)
        if b < 1e-13:
            break
        beta[k - 1] = b
        for i in range(dim):
            work[k, i] = w[i] / b
        _slow_matvec(w, work[k], t, amp, freq_ang, rows, cols, vals, ptr)
        ak = 0.0
        for i in range(dim):
            ak += (np.conj(work[k, i]) * w[i]).real
        alpha[k] = ak
        for i in range(dim):
            w[i] -= ak * work[k, i] + b * work[k - 1, i]
        used = k + 1
    T = np.zeros((used, used))
    for k in range(used):
        T[k, k] = alpha[k]
        if k + 1 < used:
            T[k, k + 1] = beta[k]
            T[k + 1, k] = beta[k]
    ev, U = np.linalg.eigh(T)
    coef = np.zeros(used, dtype=np.complex128)
    for k in range(used):
        acc = 0.0 + 0.0j
        for j in range(used):
            ph = ev[j] * h
            acc += U[k, j] * (np.cos(ph) - 1j * np.sin(ph)) * U[0, j]
        coef[k] = acc
    for i in range(dim):
        acc = 0.0 + 0.0j
        for k in range(used):
            acc += coef[k] * work[k, i]
        psi[i] = acc * nrm


@njit(cache=True)
def evolve(psi, t0, duration, nsteps, L, F,
           car_amp, car_freq, car_phase, car_nsub,
           amp, freq_ang, rows, cols, vals, ptr, lanczos_m):
    """Strang-split propagation; returns the running maximum of the summed
    population in the top two Fock levels (truncation monitor)."""
    dim = psi.shape[0]
    work = np.zeros((lanczos_m, dim), dtype=np.complex128)
    w = np.zeros(dim, dtype=np.complex128)
    h = duration / nsteps
    include_carrier = car_amp.shape[0] > 0
    top2_max = 0.0
    t = t0
    for _step in range(nsteps):
        if include_carrier:
            r00, r01, r10, r11 = _carrier_su2(car_amp, car_freq, car_phase,
                                              t, t + 0.5 * h, car_nsub)
            _apply_pair_rotation(psi, r00, r01, r10, r11, L, F)
        if amp.shape[0] > 0:
            _lanczos_expm(psi, t + 0.5 * h, h, amp, freq_ang,
                          rows, cols, vals, ptr, lanczos_m, work, w)
        if include_carrier:
            r00, r01, r10, r11 = _carrier_su2(car_amp, car_freq, car_phase,
                                              t + 0.5 * h, t + h, car_nsub)
            _apply_pair_rotation(psi, r00, r01, r10, r11, L, F)
        t += h
        top2 = 0.0
        for s in range(L * L):
            base = s * F
            if F >= 2:
                top2 += (psi[base + F - 1].real**2 + psi[base + F - 1].imag**2
                         + psi[base + F - 2].real**2 + psi[base + F - 2].imag**2)
        if top2 > top2_max:
            top2_max = top2
    return top2_max
