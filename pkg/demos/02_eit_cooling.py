"""EIT cooling of the ribbon mode.

The probe is tuned across the Fano-shaped absorption of the strongly
driven Lambda system.  Driving on the red flank of the first Fano peak
removes phonons; the steady-state occupation is compared with the bath
value of 210 and the settling time is read off the Liouvillian gap.
This takes about half a minute on one core.
"""
import numpy as np

from lambda_phonon.model import SystemParams, liouvillian
from lambda_phonon.quantum_core import boson_ops
from lambda_phonon.solvers import expectation, spectral_gap, steady_state
from lambda_phonon.spectra import coherence

p = SystemParams(G=5.0, delta_c=10.0, E_c=14.0, E_p=1.4, Nbar=210.0, fock_cutoff=40)
print(f"gamma = {p.gamma:.3f} Omega, Gamma = {p.Gamma:.2e} Omega")
_, _, n = boson_ops(p.space)

detunings = np.arange(13.0, 20.01, 0.5)
rows = []
for d in detunings:
    q = p.replace(delta_p=float(d))
    rho = steady_state(liouvillian(q))
    absorption = (coherence(rho, q.space) / (1j * q.E_p) * q.gamma / 2).real
    rows.append((d, expectation(rho, n), absorption))
    print(f"delta_p = {d:5.1f}   nbar_ss = {rows[-1][1]:8.3f}   absorption = {absorption:.4f}")

best = min(rows, key=lambda r: r[1])
peak = max(rows, key=lambda r: r[2])
print(f"\ncoldest point delta_p = {best[0]} with nbar = {best[1]:.3f} (cooling efficiency {210 / best[1]:.0f})")
print(f"absorption maximum at delta_p = {peak[0]}")

gap = spectral_gap(liouvillian(p.replace(delta_p=float(best[0]))))
print(f"slowest relaxation rate {gap.gap:.4f} Omega -> settling time {gap.t_ss:.1f} mechanical periods")
