"""Phonon-sideband frequency comb in resonance fluorescence.

At strong coupling the emission spectrum of the mode-cooled system splits
into a comb of lines spaced by the mechanical frequency.  Runs in about a
minute at a Fock cutoff of 40.
"""
import numpy as np
from scipy.signal import find_peaks

from lambda_phonon.model import SystemParams
from lambda_phonon.spectra import rfs

step = 0.02
nu = np.arange(-40.0, 6.0, step)
for G in (1.0, 5.0):
    p = SystemParams(G=G, Nbar=0.0, E_c=1.0, E_p=0.1, delta_p=1.0, fock_cutoff=40)
    spec = rfs(p, nu, t_max=60.0)
    down = spec.extras["down"]
    peaks, _ = find_peaks(down, distance=int(0.5 / step), prominence=1e-3 * down.max())
    weight = np.trapezoid(down, nu) / (2 * np.pi)
    spacing = np.diff(nu[peaks])
    print(f"G = {G}: {len(peaks)} lines; {np.sum(np.abs(spacing - 1.0) <= step)} neighbouring pairs spaced by Omega")
    print(f"   bluest lines at {np.round(nu[peaks][-6:], 2)}")
    print(f"   integrated weight {weight:.3e} vs excited population {spec.extras['excited_population']:.3e}")

try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 3))
    ax.semilogy(nu, np.clip(down, 1e-9, None), lw=0.7)
    ax.set(xlabel="(omega - omega_eg) / Omega", ylabel="S")
    fig.tight_layout()
    fig.savefig("comb.svg")
    print("wrote comb.svg")
except ImportError:
    pass
