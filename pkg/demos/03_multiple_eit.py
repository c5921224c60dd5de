"""Multiple EIT: numerical absorption against the analytic sideband series.

With the mode in its ground state the transparency window at zero
detuning is joined by extra features at integer multiples of the
mechanical frequency.  The analytic series is accurate only while G stays
below Omega.
"""
import warnings

import numpy as np

from lambda_phonon.model import SystemParams
from lambda_phonon.spectra import eit_absorption_analytic, eit_absorption_numeric

grid = np.round(np.arange(-2.5, 2.51, 0.1), 10)
for G, cutoff in ((0.0, 2), (0.5, 30), (1.0, 40)):
    p = SystemParams(G=G, Nbar=0.0, E_c=1.0, E_p=0.1, delta_c=0.0, fock_cutoff=cutoff)
    num = eit_absorption_numeric(p, grid)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ana = eit_absorption_analytic(p, grid)
    err = np.max(np.abs(num.values - ana.values)) / num.values.max()
    print(f"G = {G}: signal attenuation {ana.metadata['alpha']:.3f}, sup-norm mismatch {err:.1%} of the peak")
    for d in (-2.0, -1.0, 0.0, 1.0, 2.0):
        i = int(np.argmin(abs(grid - d)))
        print(f"   delta_p = {d:+.0f}: numeric {num.values[i]:.3f}  analytic {ana.values[i]:.3f}"
              f"  nbar {num.extras['nbar'][i]:.3f}")
