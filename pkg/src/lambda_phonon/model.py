"""Rotating-frame Hamiltonian, Liouvillian and polaron transform.

All rates are dimensionless, measured in units of the mechanical angular
frequency Omega (``Omega == 1`` internally).  ``SystemParams.omega_phys``
keeps the physical value in rad/s for conversion to SI.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy import constants
from scipy.special import eval_genlaguerre, gammaln

from .quantum_core import (
    HilbertSpace,
    TruncationError,
    boson_ops,
    dissipator,
    emitter_op,
    lift_left,
    lift_right,
)

__all__ = [
    "SystemParams",
    "bath_frequency",
    "thermal_occupation",
    "hamiltonian",
    "liouvillian",
    "displacement_matrix",
    "polaron_transform",
    "DEFAULT_TEMPERATURE",
    "DEFAULT_NBAR",
    "DEFAULT_TAU_EG",
]

DEFAULT_TEMPERATURE = 0.1  # K
DEFAULT_NBAR = 210.0
DEFAULT_TAU_EG = 3.2e-9  # s


def thermal_occupation(omega, temperature):
    """Bose-Einstein occupation of a mode at angular frequency ``omega`` [rad/s]."""
    return 1.0 / np.expm1(constants.hbar * np.asarray(omega) / (constants.k * temperature))


def bath_frequency(nbar, temperature):
    """Angular frequency [rad/s] at which the thermal occupation equals ``nbar``."""
    return constants.k * temperature / constants.hbar * np.log1p(1.0 / nbar)


_OMEGA_WORKING = float(bath_frequency(DEFAULT_NBAR, DEFAULT_TEMPERATURE))


@dataclass(frozen=True)
class SystemParams:
    """Dimensionless model parameters (rates in units of Omega).

    ``Gamma`` is derived from the quality factor, ``Gamma = Omega / Q``.
    The default emitter decay ``gamma`` combines a 3.2 ns excited-state
    lifetime with the mechanical frequency at which a 0.1 K bath holds
    210 phonons (Omega / 2 pi ~ 9.9 MHz), giving gamma ~ 5.02 Omega.
    """

    G: float = 0.0
    gamma: float = 1.0 / (DEFAULT_TAU_EG * _OMEGA_WORKING)
    Q: float = 7000.0
    delta_p: float = 0.0
    delta_c: float = 0.0
    E_p: float = 0.0
    E_c: float = 0.0
    Nbar: float = 0.0
    fock_cutoff: int = 20
    Delta0: float = 100.0
    Omega: float = 1.0
    omega_phys: float = _OMEGA_WORKING

    def __post_init__(self):
        for name in ("gamma", "E_p", "E_c", "Nbar"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")
        if not self.Q > 0:
            raise ValueError("quality factor Q must be positive")
        if self.Omega != 1.0:
            raise ValueError("rates are expressed in units of Omega; Omega must be 1")
        if int(self.fock_cutoff) != self.fock_cutoff or self.fock_cutoff < 2:
            raise ValueError(f"fock_cutoff must be an integer >= 2, got {self.fock_cutoff}")
        if self.omega_phys <= 0:
            raise ValueError("omega_phys must be positive")

    @property
    def Gamma(self) -> float:
        return self.Omega / self.Q

    @property
    def space(self) -> HilbertSpace:
        return HilbertSpace(int(self.fock_cutoff))

    def replace(self, **changes) -> "SystemParams":
        return dataclasses.replace(self, **changes)

    # unit conversion
    def to_si(self, rate: float) -> float:
        """Convert a rate in units of Omega to rad/s."""
        return rate * self.omega_phys

    def from_si(self, rate_si: float) -> float:
        return rate_si / self.omega_phys

    @property
    def period(self) -> float:
        """Mechanical period tau_m = 2 pi / Omega in internal time units."""
        return 2.0 * math.pi / self.Omega

    @classmethod
    def from_physical(cls, omega_phys, *, G=0.0, gamma=None, tau_eg=None, Q=7000.0, delta_p=0.0,
                      delta_c=0.0, E_p=0.0, E_c=0.0, Nbar=None, temperature=None, fock_cutoff=20,
                      Delta0=None):
        """Build parameters from SI rates [rad/s].

        Exactly one of ``gamma`` and ``tau_eg`` may be given; ``Nbar`` may be
        replaced by a bath ``temperature`` [K].
        """
        if gamma is not None and tau_eg is not None:
            raise ValueError("give either gamma or tau_eg, not both")
        if tau_eg is not None:
            gamma = 1.0 / tau_eg
        if gamma is None:
            gamma = 1.0 / DEFAULT_TAU_EG
        if Nbar is None:
            Nbar = float(thermal_occupation(omega_phys, temperature)) if temperature is not None else 0.0
        kw = dict(
            G=G / omega_phys, gamma=gamma / omega_phys, Q=Q, delta_p=delta_p / omega_phys,
            delta_c=delta_c / omega_phys, E_p=E_p / omega_phys, E_c=E_c / omega_phys, Nbar=Nbar,
            fock_cutoff=fock_cutoff, omega_phys=omega_phys,
        )
        if Delta0 is not None:
            kw["Delta0"] = Delta0 / omega_phys
        return cls(**kw)


def hamiltonian(p: SystemParams) -> sp.csr_matrix:
    """Rotating-frame Lambda-system Hamiltonian coupled to the mechanical mode."""
    space = p.space
    s_ee = emitter_op("e", "e", space)
    s_uu = emitter_op("up", "up", space)
    s_ed = emitter_op("e", "down", space)
    s_eu = emitter_op("e", "up", space)
    b, bd, n = boson_ops(space)
    drive = p.E_p * s_ed + p.E_c * s_eu
    h = (
        -p.delta_p * s_ee
        - (p.delta_p - p.delta_c) * s_uu
        + p.Omega * n
        + p.G * (s_ee @ (b + bd))
        + drive
        + drive.conj().T
    )
    return h.tocsr()


def liouvillian(p: SystemParams, hamiltonian_override=None) -> sp.csr_matrix:
    """Sparse Liouvillian acting on column-stacked density matrices.

    Emitter decay runs through ``|down><e|`` only; the mechanical mode
    couples to a thermal bath at rate Gamma with occupation Nbar.
    """
    h = hamiltonian(p) if hamiltonian_override is None else hamiltonian_override
    space = p.space
    b, bd, _ = boson_ops(space)
    L = -1j * (lift_left(h) - lift_right(h))
    if p.gamma:
        L = L + 0.5 * p.gamma * dissipator(emitter_op("down", "e", space))
    if p.Gamma:
        L = L + 0.5 * p.Gamma * (p.Nbar + 1.0) * dissipator(b)
        if p.Nbar:
            L = L + 0.5 * p.Gamma * p.Nbar * dissipator(bd)
    return L.tocsr()


def displacement_matrix(beta: float, cutoff: int) -> np.ndarray:
    """Exact matrix elements <m|exp(beta (b^+ - b))|n> for m, n < cutoff (real beta)."""
    m = np.arange(cutoff)[:, None]
    n = np.arange(cutoff)[None, :]
    lo = np.minimum(m, n)
    hi = np.maximum(m, n)
    x = beta * beta
    with np.errstate(divide="ignore", invalid="ignore"):
        lag = eval_genlaguerre(lo, hi - lo, x)
        if beta == 0:
            return np.eye(cutoff)
        logmag = 0.5 * (gammaln(lo + 1) - gammaln(hi + 1)) + (hi - lo) * np.log(abs(beta)) - 0.5 * x
        sign = np.where(m >= n, np.sign(beta) ** (hi - lo), (-np.sign(beta)) ** (hi - lo))
    return sign * np.exp(logmag) * lag


def _required_polaron_cutoff(beta, tol, start):
    cutoff = max(start, 2)
    while cutoff < 4096:
        cutoff *= 2
        if _polaron_truncation_error(beta, cutoff) < tol:
            return cutoff
    return None


def _polaron_truncation_error(beta, cutoff):
    gen = beta * (np.diag(np.sqrt(np.arange(1, cutoff)), -1) - np.diag(np.sqrt(np.arange(1, cutoff)), 1))
    d_trunc = la.expm(gen)
    d_exact = displacement_matrix(beta, cutoff)
    half = max(cutoff // 2, 1)
    return float(np.abs(d_trunc[:, :half] - d_exact[:, :half]).max())


def polaron_transform(p: SystemParams, tol: float = 1e-6):
    """Polaron unitary ``U = exp{(G/Omega) s_ee (b^+ - b)}`` and ``U H U^+``.

    ``U`` is the matrix exponential of the truncated generator, which is
    unitary by construction; truncation is instead judged by comparing its
    action on the lower half of the Fock space with the exact displacement
    matrix elements.  The returned Hamiltonian is assembled analytically:
    the coupling term is absorbed, the excited level is shifted by
    ``-G^2/Omega`` and both drives pick up the displacement operator.

    Raises
    ------
    TruncationError
        If the truncated displacement deviates from the exact one by more
        than ``tol`` on the low-lying Fock states.
    """
    space = p.space
    N = space.fock_cutoff
    beta = p.G / p.Omega
    if beta == 0:
        U = sp.identity(space.total_dim, dtype=complex, format="csr")
    else:
        err = _polaron_truncation_error(beta, N)
        if err > tol:
            need = _required_polaron_cutoff(beta, tol, N)
            raise TruncationError(
                f"polaron displacement G/Omega={beta} is not resolved at fock_cutoff={N} "
                f"(deviation {err:.2e}); need fock_cutoff >= {need}",
                required_cutoff=need,
            )
        b, bd, _ = boson_ops(space)
        gen = (beta * (emitter_op("e", "e", space) @ (bd - b))).toarray()
        U = sp.csr_matrix(la.expm(gen))
    d = sp.csr_matrix(displacement_matrix(beta, N).astype(complex))
    _, _, n = boson_ops(space)
    proj = lambda i, j: sp.coo_matrix(([1.0 + 0j], ([i], [j])), shape=(3, 3))  # noqa: E731
    drive = p.E_p * sp.kron(proj(2, 0), d) + p.E_c * sp.kron(proj(2, 1), d)
    h_tilde = (
        -(p.delta_p + p.G ** 2 / p.Omega) * emitter_op("e", "e", space)
        - (p.delta_p - p.delta_c) * emitter_op("up", "up", space)
        + p.Omega * n
        + drive
        + drive.conj().T
    )
    return U, h_tilde.tocsr()
