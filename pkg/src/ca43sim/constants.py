"""Physical constants in the simulator's working units (MHz, gauss, u, nm)."""

import numpy as np

# Bohr and nuclear magnetons over h, in MHz per gauss (CODATA 2018).
MU_B_MHZ_PER_G = 1.3996245042
MU_N_MHZ_PER_G = 7.622593285e-4

# Planck constant (J s) and atomic mass unit (kg), for Lamb-Dicke factors.
H_PLANCK = 6.62607015e-34
HBAR = H_PLANCK / (2.0 * np.pi)
ATOMIC_MASS_KG = 1.66053906660e-27

TWO_PI = 2.0 * np.pi
