"""Dispersion-force coupling of an emitter in a suspended ribbon.

SI units throughout.  The emitter transition shifts near a dielectric
substrate as z**-3; its gradient times the zero-point amplitude of the
ribbon's fundamental mode gives the electromechanical coupling rate G.

The ribbon is modelled as a clamped string under tension, whose
fundamental mode has effective mass m/2 at the centre.  Material defaults
are literature values for monolayer h-BN.
"""
from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass

from scipy import constants

from .model import DEFAULT_NBAR, DEFAULT_TEMPERATURE, SystemParams, bath_frequency

__all__ = [
    "HBN_YOUNG_2D",
    "HBN_AREAL_DENSITY",
    "DeviceParams",
    "CouplingResult",
    "omega_from_ev",
    "frequency_shift",
    "frequency_pull",
    "mode_frequency",
    "strain_for_frequency",
    "effective_mass",
    "zero_point_amplitude",
    "coupling_rate",
    "to_system_params",
]

#: 2D Young's modulus of monolayer h-BN [N/m] (literature value).
HBN_YOUNG_2D = 289.0
#: Areal mass density of monolayer h-BN [kg/m^2] (literature value).
HBN_AREAL_DENSITY = 7.6e-7


def omega_from_ev(energy_ev):
    """Angular frequency [rad/s] of a photon with the given energy [eV]."""
    return energy_ev * constants.electron_volt / constants.hbar


def strain_for_frequency(omega_m, L=1e-6, E_2d=HBN_YOUNG_2D, rho_2d=HBN_AREAL_DENSITY):
    """Tensile strain that tunes the string fundamental to ``omega_m`` [rad/s]."""
    return rho_2d / E_2d * (omega_m * L / math.pi) ** 2


_OMEGA_WORKING = float(bath_frequency(DEFAULT_NBAR, DEFAULT_TEMPERATURE))


@dataclass(frozen=True)
class DeviceParams:
    """Emitter, substrate and ribbon parameters (SI).

    The default strain puts the fundamental mode at the frequency where a
    0.1 K bath holds 210 phonons (about 9.9 MHz).
    """

    z: float = 10e-9
    omega_eg: float = omega_from_ev(1.95)
    tau_eg: float = 3.2e-9
    epsilon: complex = 2.1
    L: float = 1e-6
    w: float = 10e-9
    rho_2d: float = HBN_AREAL_DENSITY
    E_2d: float = HBN_YOUNG_2D
    strain: float = strain_for_frequency(_OMEGA_WORKING)

    def __post_init__(self):
        for name in ("z", "omega_eg", "tau_eg", "L", "w", "rho_2d", "E_2d"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.strain < 0:
            raise ValueError("strain must be non-negative")
        wavelength = 2 * math.pi * constants.c / self.omega_eg
        if self.z > wavelength / 10:
            warnings.warn(
                f"z = {self.z:.3g} m exceeds a tenth of the transition wavelength ({wavelength:.3g} m); "
                "the near-field shift formula is not reliable there",
                stacklevel=3,
            )

    def replace(self, **changes) -> "DeviceParams":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class CouplingResult:
    delta_omega: float  # rad/s
    pull: float  # rad/s/m
    Omega_m: float  # rad/s
    z_zp: float  # m
    G: float  # rad/s
    strong_coupling: bool

    @property
    def G_hz(self) -> float:
        """|G| / 2 pi in Hz."""
        return abs(self.G) / (2 * math.pi)


def frequency_shift(p: DeviceParams) -> float:
    """Near-field dispersion shift of the transition frequency [rad/s]."""
    eps = complex(p.epsilon)
    denom = abs(eps + 1) ** 2
    if denom < 1e-24:
        raise ValueError("substrate permittivity epsilon = -1 makes the shift singular")
    material = (abs(eps) ** 2 - 1) / denom
    return 3.0 / 32.0 * constants.c ** 3 / (p.tau_eg * p.omega_eg ** 3 * p.z ** 3) * material


def frequency_pull(p: DeviceParams) -> float:
    """Gradient of the shift with respect to z [rad/s/m]."""
    return -3.0 * frequency_shift(p) / p.z


def mode_frequency(p: DeviceParams) -> float:
    """Fundamental angular frequency of a clamped string under tension [rad/s]."""
    if p.strain <= 0:
        raise ValueError("zero strain: the bending-dominated ribbon is not modelled")
    return math.pi / p.L * math.sqrt(p.E_2d * p.strain / p.rho_2d)


def effective_mass(p: DeviceParams) -> float:
    return 0.5 * p.rho_2d * p.L * p.w


def zero_point_amplitude(p: DeviceParams, omega_m: float | None = None) -> float:
    if omega_m is None:
        omega_m = mode_frequency(p)
    return math.sqrt(constants.hbar / (2.0 * effective_mass(p) * omega_m))


def coupling_rate(p: DeviceParams) -> CouplingResult:
    """Shift, pull, mode frequency, zero-point amplitude and G = pull * z_zp."""
    shift = frequency_shift(p)
    pull = -3.0 * shift / p.z
    omega_m = mode_frequency(p)
    z_zp = zero_point_amplitude(p, omega_m)
    G = pull * z_zp
    return CouplingResult(
        delta_omega=shift,
        pull=pull,
        Omega_m=omega_m,
        z_zp=z_zp,
        G=G,
        strong_coupling=abs(G) * p.tau_eg >= 1.0,
    )


def to_system_params(p: DeviceParams, temperature=DEFAULT_TEMPERATURE, **overrides) -> SystemParams:
    """Dimensionless model parameters for the device's fundamental mode.

    ``G`` and ``gamma`` are expressed in units of the mode frequency and
    ``Nbar`` follows from ``temperature``.  Further ``SystemParams``
    fields can be passed as dimensionless ``overrides``.
    """
    res = coupling_rate(p)
    kw = dict(
        G=abs(res.G) / res.Omega_m,
        gamma=1.0 / (p.tau_eg * res.Omega_m),
        Nbar=float(1.0 / math.expm1(constants.hbar * res.Omega_m / (constants.k * temperature))),
        omega_phys=res.Omega_m,
    )
    kw.update(overrides)
    return SystemParams(**kw)
