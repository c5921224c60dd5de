"""Coupling of an emitter to a suspended h-BN ribbon above a dielectric.

The emitter's transition frequency shifts with its distance to the
substrate; the ribbon's zero-point motion turns that gradient into a
coupling rate.  Stronger strain raises the mode frequency and lowers the
zero-point amplitude.
"""
import math

import numpy as np

from lambda_phonon.device import DeviceParams, coupling_rate, to_system_params

base = DeviceParams()
res = coupling_rate(base)
print(f"frequency shift at 10 nm: {res.delta_omega:.3e} rad/s")
print(f"mode frequency: {res.Omega_m / 2 / math.pi / 1e6:.2f} MHz, zero-point amplitude {res.z_zp * 1e12:.1f} pm")
print(f"|G| / 2 pi = {res.G_hz / 1e6:.2f} MHz, |G| tau_eg = {abs(res.G) * base.tau_eg:.3f}")

print("\ndistance scan")
for z in (4e-9, 6e-9, 8e-9, 10e-9, 15e-9):
    r = coupling_rate(base.replace(z=z))
    print(f"  z = {z * 1e9:4.0f} nm: |G|/2pi = {r.G_hz / 1e6:8.2f} MHz  strong = {r.strong_coupling}")

print("\nstrain scan at z = 10 nm")
for strain in np.geomspace(1e-7, 1e-4, 4):
    r = coupling_rate(base.replace(strain=strain))
    print(f"  strain {strain:.1e}: Omega/2pi = {r.Omega_m / 2 / math.pi / 1e6:7.2f} MHz, |G|/2pi = {r.G_hz / 1e6:.2f} MHz")

p = to_system_params(base)
print(f"\nmodel units: G = {p.G:.3f} Omega, gamma = {p.gamma:.3f} Omega, Nbar = {p.Nbar:.0f}")
