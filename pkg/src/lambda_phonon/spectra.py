"""Probe absorption, two-time correlations and emission spectra.

Absorption is reported normalized,

    A(delta_p) = Re[rho_de / (i E_p)] * gamma / 2,

with ``rho_de = <down|rho|e> = tr(rho s_ed)`` so that a bare two-level
emitter reads 1 on resonance.  The complex ratio is also kept; its
imaginary part is the dispersive response.

Emission spectra are returned on the axis ``omega - omega_eg`` in units of
Omega.  The branch emitted on the up-e transition is offset by
``-Delta0``.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .model import SystemParams, liouvillian
from .quantum_core import TruncationError, boson_ops, emitter_op, vec, validate_density_matrix
from .solvers import (
    RTOL,
    ATOL,
    SolverError,
    _integrate,
    _trace_functional,
    expectation,
    propagate,
    steady_state,
)

__all__ = [
    "SpectrumResult",
    "AnalyticEitTerms",
    "WindowError",
    "attenuation",
    "coherence",
    "eit_absorption_numeric",
    "analytic_eit_terms",
    "eit_absorption_analytic",
    "two_time_correlation",
    "correlation_spectrum",
    "rfs",
    "cooling_map",
    "local_maxima",
]


class WindowError(SolverError):
    """The correlation has not decayed within the integration window."""

    def __init__(self, message, required_t_max=None):
        super().__init__(message)
        self.required_t_max = required_t_max


@dataclass
class SpectrumResult:
    axis: np.ndarray
    values: np.ndarray
    metadata: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.axis = np.asarray(self.axis, dtype=float)
        self.values = np.asarray(self.values)
        if self.axis.size > 1 and np.any(np.diff(self.axis) <= 0):
            raise ValueError("spectrum axis must be strictly increasing")


def attenuation(p: SystemParams) -> float:
    """Signal attenuation ``exp{-(G/Omega)^2 (2 Nbar + 1) / 2}``."""
    return math.exp(-0.5 * (p.G / p.Omega) ** 2 * (2.0 * p.Nbar + 1.0))


def coherence(rho, space) -> complex:
    """``rho_de = <down|rho|e>`` summed over the phonon number."""
    N = space.fock_cutoff
    return complex(np.trace(rho[0:N, 2 * N:3 * N]))


def _normalized(p, rho_de):
    return rho_de / (1j * p.E_p) * (p.gamma / 2.0)


# numerical absorption


def _absorption_point(args):
    p, mode, t, rho0, method = args
    L = liouvillian(p)
    if mode == "steady":
        rho = steady_state(L)
    else:
        rho = propagate(L, rho0, 2.0 * math.pi * t, method=method)
    _, _, n = boson_ops(p.space)
    return coherence(rho, p.space), expectation(rho, n)


def _map(fn, items, workers):
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def eit_absorption_numeric(p: SystemParams, delta_p_grid, mode="steady", t=None, rho0=None, method="rk",
                           workers=1) -> SpectrumResult:
    """Probe absorption from the full master equation.

    Parameters
    ----------
    p : SystemParams
        ``delta_p`` is overridden by the grid values.
    delta_p_grid : array_like
        Probe detunings in units of Omega.
    mode : {'steady', 'at_time'}
        Steady state, or the state at time ``t`` (mechanical periods)
        after starting from ``rho0``.
    workers : int
        Number of worker processes for the grid sweep.
    """
    if p.E_p <= 0:
        raise ValueError("absorption needs a non-zero probe E_p")
    grid = np.asarray(delta_p_grid, dtype=float)
    if mode not in ("steady", "at_time"):
        raise ValueError("mode must be 'steady' or 'at_time'")
    if mode == "at_time" and (rho0 is None or t is None):
        raise ValueError("at_time mode needs an initial state rho0 and a time t")
    items = [(p.replace(delta_p=float(d)), mode, t, rho0, method) for d in grid]
    try:
        res = _map(_absorption_point, items, workers)
    except SolverError as exc:
        raise SolverError(f"absorption sweep failed: {exc}") from exc
    chi = np.array([_normalized(p, r[0]) for r in res])
    nbar = np.array([r[1] for r in res])
    meta = {"params": p, "mode": mode if mode == "steady" else f"t={t}"}
    return SpectrumResult(grid, chi.real, meta, {"dispersion": chi.imag, "coherence": chi, "nbar": nbar})


# analytic multiple-EIT coherence


@dataclass(frozen=True)
class AnalyticEitTerms:
    """Series data of the analytic coherence at one probe detuning.

    ``shells[n]`` is the sum over ``k`` of the ``n``-th order sideband
    terms, already divided by ``n!``.
    """

    alpha: float
    n_max: int
    shells: np.ndarray
    rho_de: complex

    @property
    def series(self) -> complex:
        return complex(self.shells.sum())


def _shell(p, n, delta_p):
    """Sum over k of C(n,k) (G/Omega)^2n Nbar^(n-k) (Nbar+1)^k / n! / (n Gamma/2 + i[delta_p + (n-2k) Omega])."""
    beta2 = (p.G / p.Omega) ** 2
    k = np.arange(n + 1)
    if p.Nbar == 0:
        k = np.array([n])
    with np.errstate(divide="ignore"):
        logw = (
            gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
            + n * (math.log(beta2) if beta2 > 0 else -np.inf)
            + (n - k) * (math.log(p.Nbar) if p.Nbar > 0 else 0.0)
            + k * math.log(p.Nbar + 1.0)
            - gammaln(n + 1)
        )
    if n == 0:
        logw = np.zeros(1)
    denom = n * p.Gamma / 2.0 + 1j * (delta_p + (n - 2 * k) * p.Omega)
    return complex(np.sum(np.exp(logw) / denom))


def analytic_eit_terms(p: SystemParams, delta_p: float, n_max=None, tol=1e-8, polaron_shift=True,
                       hard_limit=2000) -> AnalyticEitTerms:
    """Analytic probe coherence with mechanical sidebands at one detuning.

    The series over phonon shells is extended until the last shell
    contributes less than ``tol`` relative to the accumulated sum (and past
    the peak of the shell weights).  With ``n_max`` given, failing to meet
    that bound by ``n_max`` raises ``TruncationError``.
    """
    alpha = attenuation(p)
    shift = p.G ** 2 / p.Omega if polaron_shift else 0.0
    if delta_p == 0 and p.E_c > 0:
        # the zero-phonon dark resonance makes the series diverge: full transparency
        return AnalyticEitTerms(alpha, 0, np.array([np.inf + 0j]), 0j)
    limit = hard_limit if n_max is None else n_max
    x = (p.G / p.Omega) ** 2 * (2 * p.Nbar + 1)
    shells = []
    total = 0j
    converged = False
    for n in range(limit + 1):
        s = _shell(p, n, delta_p)
        shells.append(s)
        total += s
        if n > x and abs(s) <= tol * max(abs(total), 1e-300):
            converged = True
            break
        if p.G == 0:
            converged = True
            break
    if not converged:
        raise TruncationError(
            f"sideband series not converged at n_max={limit} (last shell {abs(shells[-1]):.3e}, "
            f"sum {abs(total):.3e})"
        )
    shells = np.array(shells)
    denom = p.gamma / 2.0 + 1j * (delta_p + shift) + p.E_c ** 2 * alpha ** 2 * total
    rho = 1j * p.E_p * alpha / denom
    return AnalyticEitTerms(alpha, len(shells) - 1, shells, rho)


def eit_absorption_analytic(p: SystemParams, delta_p_grid, n_max=None, polaron_shift=True, tol=1e-8
                            ) -> SpectrumResult:
    """Analytic weak-probe absorption including mechanical sidebands.

    Valid for G of order Omega or below; a warning is issued otherwise.
    ``polaron_shift`` selects whether the single-photon detuning carries
    the excited-state shift ``G^2/Omega``.

    The coherence is returned in the same convention as the numerical
    path (``<down|rho|e>``), which is the complex conjugate of the
    opposite-ordering convention; the absorption is unaffected.
    """
    if p.G > p.Omega:
        warnings.warn("the analytic sideband series is only reliable for G <~ Omega", stacklevel=2)
    if p.E_p <= 0:
        raise ValueError("absorption needs a non-zero probe E_p")
    grid = np.asarray(delta_p_grid, dtype=float)
    terms = [analytic_eit_terms(p, float(d), n_max=n_max, tol=tol, polaron_shift=polaron_shift) for d in grid]
    chi = np.array([_normalized(p, t.rho_de) for t in terms])
    meta = {"params": p, "mode": "analytic", "alpha": attenuation(p), "polaron_shift": polaron_shift}
    return SpectrumResult(grid, chi.real, meta, {"dispersion": chi.imag, "coherence": chi,
                                                  "n_max": np.array([t.n_max for t in terms])})


# correlations and emission spectra


def two_time_correlation(L, rho, A, B, tau_grid, method="rk", rtol=RTOL, atol=ATOL) -> np.ndarray:
    """``C(tau) = tr{A exp(L tau)[B rho]}`` on ``tau_grid`` (quantum regression)."""
    tau = np.asarray(tau_grid, dtype=float)
    if tau.size == 0 or tau[0] != 0 or np.any(np.diff(tau) <= 0):
        raise ValueError("tau_grid must start at 0 and increase strictly")
    rho = np.asarray(rho, dtype=complex)
    Bd = B.toarray() if hasattr(B, "toarray") else np.asarray(B)
    v0 = vec(Bd @ rho).astype(complex)
    w = _trace_functional(A)
    out = np.empty(tau.size, dtype=complex)

    def record(i, v):
        out[i] = w @ v

    _integrate(L, v0, tau, method=method, rtol=rtol, atol=atol, callback=record)
    return out


def _window(name, tau, t_max):
    if name == "hann":
        return 0.5 * (1.0 + np.cos(np.pi * tau / t_max))
    if name in ("none", "exp-tail"):
        return np.ones_like(tau)
    raise ValueError(f"unknown window {name!r}")


def correlation_spectrum(tau, corr, nu, window="hann", tail_tol=1e-3, frame_frequency=0.0):
    """One-sided transform ``2 Re int_0^T exp(-i nu tau) w(tau) C(tau) dtau``.

    ``frame_frequency`` multiplies the correlation by
    ``exp(i frame_frequency tau)`` before transforming.  With
    ``window='exp-tail'`` the final segment is fitted to a single damped
    exponential and integrated analytically to infinity; a correlation
    that has not decayed below ``tail_tol`` of its initial magnitude
    raises ``WindowError``.  ``'hann'`` tapers smoothly to zero at the end
    of the window and never raises.
    """
    tau = np.asarray(tau, dtype=float)
    nu = np.asarray(nu, dtype=float)
    c = np.asarray(corr, dtype=complex) * np.exp(1j * frame_frequency * tau)
    t_max = tau[-1]
    f = c * _window(window, tau, t_max)
    dt = np.diff(tau)
    wq = np.zeros_like(tau)
    wq[:-1] += dt / 2
    wq[1:] += dt / 2
    spec = np.empty(nu.size, dtype=complex)
    step = max(1, int(2e7 // max(tau.size, 1)))
    for lo in range(0, nu.size, step):
        phase = np.exp(-1j * np.outer(nu[lo:lo + step], tau))
        spec[lo:lo + step] = phase @ (wq * f)
    if window == "exp-tail":
        c0 = abs(c[0]) if abs(c[0]) > 0 else 1.0
        ratio = abs(c[-1]) / c0
        if ratio > tail_tol:
            # estimate the envelope decay from the last half of the window
            half = tau.size // 2
            env_rate = math.log(max(abs(c[half]), 1e-300) / max(abs(c[-1]), 1e-300)) / (t_max - tau[half])
            need = None if env_rate <= 0 else t_max + math.log(ratio / tail_tol) / env_rate
            raise WindowError(
                f"correlation decayed only to {ratio:.2e} of its initial value by tau={t_max:.4g}; "
                + (f"need t_max >= {need:.4g}" if need else "it does not decay; use a taper window"),
                required_t_max=need,
            )
        if abs(c[-1]) > 0:
            lam = np.log(c[-1] / c[-2]) / (tau[-1] - tau[-2])
            if lam.real < 0:
                spec += c[-1] * np.exp(-1j * nu * t_max) / (1j * nu - lam)
    return 2.0 * spec.real


def rfs(p: SystemParams, omega_grid, state="steady", t=None, rho0=None, stages=None, t_max=60.0,
        n_tau=None, window="hann", method="rk", rtol=RTOL, atol=ATOL) -> SpectrumResult:
    """Resonance fluorescence spectrum of both ground-state branches.

    Parameters
    ----------
    p : SystemParams
        Parameters of the emitting stage.
    omega_grid : array_like
        ``omega - omega_eg`` in units of Omega.
    state : {'steady', 'at_time'}
        Stationary spectrum, or the one-sided spectrum at time ``t``
        (mechanical periods) after ``rho0`` evolves under ``p``.  Earlier
        stages (e.g. a cooling pulse) may be prepended through ``stages``
        as in :func:`lambda_phonon.solvers.evolve_stages`.
    t_max : float
        Correlation window in units of 1/Omega.
    window : {'hann', 'exp-tail', 'none'}

    Returns
    -------
    SpectrumResult
        ``values`` is the sum of both branches; ``extras`` holds each
        branch, the correlation functions and the excited population.
    """
    from .solvers import evolve_stages

    L = liouvillian(p)
    if state == "steady":
        rho = steady_state(L)
    elif state == "at_time":
        if rho0 is None or t is None:
            raise ValueError("at_time mode needs rho0 and t")
        rho = np.asarray(rho0, dtype=complex)
        if stages:
            rho = evolve_stages(stages, rho)[-1].final_state
        rho = validate_density_matrix(propagate(L, rho, 2.0 * math.pi * t, method=method, rtol=rtol, atol=atol),
                                      clip=True)
    else:
        raise ValueError("state must be 'steady' or 'at_time'")
    space = p.space
    if n_tau is None:
        n_tau = int(math.ceil(t_max * 20)) + 1
    tau = np.linspace(0.0, t_max, n_tau)
    nu = np.asarray(omega_grid, dtype=float)
    corr_d = two_time_correlation(L, rho, emitter_op("e", "down", space), emitter_op("down", "e", space), tau,
                                  method=method, rtol=rtol, atol=atol)
    corr_u = two_time_correlation(L, rho, emitter_op("e", "up", space), emitter_op("up", "e", space), tau,
                                  method=method, rtol=rtol, atol=atol)
    s_d = correlation_spectrum(tau, corr_d, nu, window=window, frame_frequency=p.delta_p)
    s_u = correlation_spectrum(tau, corr_u, nu + p.Delta0, window=window, frame_frequency=p.delta_c)
    pe = expectation(rho, emitter_op("e", "e", space))
    _, _, n = boson_ops(space)
    meta = {"params": p, "state": state if state == "steady" else f"t={t}", "window": window, "t_max": t_max}
    extras = {"down": s_d, "up": s_u, "tau": tau, "corr_down": corr_d, "corr_up": corr_u,
              "excited_population": pe, "nbar": expectation(rho, n), "rho": rho}
    return SpectrumResult(nu, s_d + s_u, meta, extras)


def local_maxima(x, y, threshold=0.0):
    """Positions of strict interior local maxima of ``y`` above ``threshold * max(y)``."""
    y = np.asarray(y)
    i = np.arange(1, y.size - 1)
    keep = (y[i] > y[i - 1]) & (y[i] > y[i + 1]) & (y[i] > threshold * y.max())
    return np.asarray(x)[i[keep]]


# cooling map


def _cooling_point(args):
    p = args
    try:
        rho = steady_state(liouvillian(p))
    except (SolverError, ValueError) as exc:
        return float("nan"), str(exc)
    _, _, n = boson_ops(p.space)
    return expectation(rho, n), None


def cooling_map(p: SystemParams, delta_p_grid, E_c_grid, probe_ratio=0.1, workers=1):
    """Steady-state phonon number over probe detuning and control strength.

    The probe is tied to the control, ``E_p = probe_ratio * E_c``.  Failed
    points are recorded as NaN with their error message; the map is always
    completed.

    Returns
    -------
    dict
        ``delta_p``, ``E_c``, ``nbar`` (shape ``(len(E_c), len(delta_p))``),
        ``efficiency`` = Nbar / nbar, and ``failures``.
    """
    dps = np.asarray(delta_p_grid, dtype=float)
    ecs = np.asarray(E_c_grid, dtype=float)
    items = [p.replace(delta_p=float(d), E_c=float(e), E_p=probe_ratio * float(e)) for e in ecs for d in dps]
    res = _map(_cooling_point, items, workers)
    nbar = np.array([r[0] for r in res]).reshape(ecs.size, dps.size)
    failures = {(float(items[i].E_c), float(items[i].delta_p)): r[1] for i, r in enumerate(res) if r[1]}
    with np.errstate(divide="ignore", invalid="ignore"):
        eff = p.Nbar / nbar
    return {"delta_p": dps, "E_c": ecs, "nbar": nbar, "efficiency": eff, "failures": failures}
