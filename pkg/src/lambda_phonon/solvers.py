"""Steady states, time evolution and the Liouvillian spectral gap."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import solve_ivp

from .quantum_core import DENSE_THRESHOLD, devec, validate_density_matrix, vec

__all__ = [
    "SolverError",
    "MultiplicityError",
    "StiffnessError",
    "ConvergenceError",
    "Trajectory",
    "GapResult",
    "steady_state",
    "evolve",
    "propagate",
    "spectral_gap",
    "expectation",
    "converge_cutoff",
    "evolve_stages",
    "trace_distance",
]

RTOL = 1e-8
ATOL = 1e-10
GAP_FLOOR = 1e-8
GMRES_THRESHOLD = 400_000


class SolverError(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class MultiplicityError(SolverError):
    """The Liouvillian null space is not one-dimensional."""


class StiffnessError(SolverError):
    pass


class ConvergenceError(SolverError):
    """Observable did not converge with respect to the Fock cutoff."""


@dataclass
class Trajectory:
    """Result of :func:`evolve`.

    ``times`` are in internal units (1/Omega); ``periods`` gives them in
    mechanical periods.
    """

    times: np.ndarray
    observables: dict = field(default_factory=dict)
    states: list | None = None
    final_state: np.ndarray | None = None

    @property
    def periods(self) -> np.ndarray:
        return self.times / (2.0 * math.pi)

    def __getitem__(self, name):
        return self.observables[name]


@dataclass(frozen=True)
class GapResult:
    gap: float
    eigenvalue: complex

    @property
    def t_ss(self) -> float:
        """Settling time 1/gap in mechanical periods."""
        return 1.0 / (self.gap * 2.0 * math.pi)


def _dim_of(L) -> int:
    n = int(round(math.sqrt(L.shape[0])))
    if n * n != L.shape[0] or L.shape[0] != L.shape[1]:
        raise ValueError(f"superoperator shape {L.shape} is not (d^2, d^2)")
    return n


def _trace_row(n):
    return vec(np.eye(n)).astype(complex)


def _norm1(L):
    if sp.issparse(L):
        return spla.norm(L, 1)
    return np.linalg.norm(L, 1)


def steady_state(L, method: str = "auto", tol: float = 1e-9) -> np.ndarray:
    """Unique steady state of ``d vec(rho)/dt = L vec(rho)``.

    The first row of ``L`` (the equation for rho_00) is replaced by the
    trace functional and the resulting bordered system is solved by
    sparse LU, or GMRES with a diagonal preconditioner for very large
    systems (``method='gmres'``).

    Raises
    ------
    MultiplicityError
        If the bordered system is singular, i.e. the null space of L is
        degenerate.
    SolverError
        If the residual ``||L rho|| / ||L||`` exceeds ``tol``.
    """
    n = _dim_of(L)
    L = sp.csr_matrix(L, dtype=complex)
    tr = _trace_row(n)
    A = L.tolil()
    A[0, :] = tr
    A = A.tocsc()
    rhs = np.zeros(n * n, dtype=complex)
    rhs[0] = 1.0
    if method == "auto":
        method = "dense" if n <= DENSE_THRESHOLD // 2 else ("lu" if n * n <= GMRES_THRESHOLD else "gmres")
    if method == "dense":
        Ad = A.toarray()
        if np.linalg.matrix_rank(L.toarray(), tol=1e-10 * max(_norm1(L), 1.0)) < n * n - 1:
            raise MultiplicityError("Liouvillian null space is degenerate")
        x = np.linalg.solve(Ad, rhs)
    elif method == "lu":
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", category=spla.MatrixRankWarning)
                lu = spla.splu(A, permc_spec="COLAMD")
        except (RuntimeError, spla.MatrixRankWarning) as exc:
            raise MultiplicityError(f"bordered steady-state system is singular: {exc}") from exc
        x = lu.solve(rhs)
        if not np.all(np.isfinite(x)):
            raise MultiplicityError("bordered steady-state system is singular")
    elif method == "gmres":
        d = A.diagonal()
        d[d == 0] = 1.0
        M = spla.LinearOperator(A.shape, matvec=lambda v: v / d, dtype=complex)
        x, info = spla.gmres(A, rhs, M=M, rtol=1e-12, atol=0.0, restart=200, maxiter=2000)
        if info != 0:
            res = np.linalg.norm(A @ x - rhs)
            raise SolverError(f"GMRES did not converge (info={info}, residual={res:.3e})", residual=res)
    else:
        raise ValueError(f"unknown method {method!r}")
    rho = devec(x, n)
    rho = validate_density_matrix(rho, clip=True)
    residual = np.linalg.norm(L @ vec(rho)) / max(_norm1(L), 1e-300)
    if residual > tol:
        raise SolverError(f"steady-state residual {residual:.3e} exceeds {tol:g}", residual=residual)
    return rho


def _expm_propagate(L, v0, times):
    """``exp(L t) v0`` for each ``t`` in ``times`` (relative, starting at 0)."""
    out = np.empty((len(times), v0.size), dtype=complex)
    v = v0
    t_prev = 0.0
    for i, t in enumerate(times):
        if t > t_prev:
            v = spla.expm_multiply(L * (t - t_prev), v)
        out[i] = v
        t_prev = t
    return out


def evolve(L, rho0, times, observables=None, store_states=False, method="rk", rtol=RTOL, atol=ATOL,
           trace_tol=1e-7, max_step=np.inf) -> Trajectory:
    """Integrate the master equation from ``rho0`` over ``times``.

    Parameters
    ----------
    L : sparse matrix
        Liouvillian.
    rho0 : ndarray
        Initial density matrix at ``t = times[0]``.
    times : array_like
        Strictly increasing output times in units of 1/Omega.
    observables : dict of name -> operator, optional
        Expectation values recorded at each output time.
    method : {'rk', 'krylov'}
        ``'rk'`` is the adaptive 8th-order Dormand-Prince scheme with the
        given tolerances; ``'krylov'`` propagates with the action of the
        matrix exponential and is preferable for stiff generators.

    Raises
    ------
    StiffnessError
        If the adaptive step size collapses.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ValueError("times must be a non-empty 1D grid")
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")
    n = _dim_of(L)
    rho0 = validate_density_matrix(rho0)
    if rho0.shape != (n, n):
        raise ValueError("rho0 does not match the Liouvillian dimension")
    L = sp.csr_matrix(L, dtype=complex)
    v0 = vec(rho0).astype(complex)
    observables = observables or {}
    obs_lift = {k: _trace_functional(o) for k, o in observables.items()}
    states = [] if store_states else None
    records = {k: np.empty(times.size, dtype=complex) for k in observables}
    tr = _trace_row(n)

    def record(i, v):
        for k, w in obs_lift.items():
            records[k][i] = w @ v
        if store_states:
            states.append(devec(v, n).copy())

    v_end = _integrate(L, v0, times, method, rtol, atol, max_step, callback=record)
    drift = abs(tr @ v_end - tr @ v0)
    if drift > trace_tol:
        raise SolverError(f"trace drifted by {drift:.3e} during evolution")
    for k, o in observables.items():
        if _hermitian_op(o):
            records[k] = _real_if_close(records[k], k)
    rho_end = devec(v_end, n)
    return Trajectory(times=times, observables=records, states=states, final_state=rho_end)


def _integrate(L, v0, times, method="rk", rtol=RTOL, atol=ATOL, max_step=np.inf, callback=None, chunk=64):
    """Solve ``dv/dt = L v`` with ``v(times[0]) = v0`` and return the final vector.

    ``callback(i, v)`` is invoked for every output time.  Integration
    proceeds in chunks of output points so that the full set of state
    vectors is never held in memory.
    """
    times = np.asarray(times, dtype=float)
    if method not in ("rk", "krylov"):
        raise ValueError(f"unknown method {method!r}")
    if callback is not None:
        callback(0, v0)
    v = v0
    for lo in range(0, times.size - 1, chunk):
        seg = times[lo:lo + chunk + 1]
        if method == "krylov":
            ys = _expm_propagate(L, v, seg - seg[0])[1:]
        else:
            sol = solve_ivp(lambda t, y: L @ y, (seg[0], seg[-1]), v, method="DOP853", t_eval=seg,
                            rtol=rtol, atol=atol, max_step=max_step)
            if sol.status != 0:
                t_fail = sol.t[-1] if sol.t.size else seg[0]
                raise StiffnessError(
                    f"integration failed at t={t_fail:.4g}: {sol.message}; "
                    "reduce the Fock cutoff or use method='krylov'"
                )
            ys = sol.y.T[1:]
        if callback is not None:
            for j, y in enumerate(ys):
                callback(lo + 1 + j, y)
        v = ys[-1].copy()
    return v


def propagate(L, rho0, t, method="rk", rtol=RTOL, atol=ATOL) -> np.ndarray:
    """Return the state at time ``t`` (no observables recorded)."""
    if t == 0:
        return np.asarray(rho0, dtype=complex)
    traj = evolve(L, rho0, [0.0, t], method=method, rtol=rtol, atol=atol)
    return 0.5 * (traj.final_state + traj.final_state.conj().T)


def _trace_functional(o):
    """Row vector w with ``w @ vec(rho) == tr(o rho)``."""
    o = o.toarray() if sp.issparse(o) else np.asarray(o)
    return o.T.reshape(-1, order="F").astype(complex)


def _hermitian_op(o):
    if sp.issparse(o):
        diff = o - o.conj().T
        return diff.nnz == 0 or abs(diff).max() <= 1e-14
    o = np.asarray(o)
    return np.allclose(o, o.conj().T, atol=1e-14)


def _real_if_close(x, name="value", tol=1e-9):
    x = np.asarray(x)
    if np.any(np.abs(x.imag) > tol * np.maximum(1.0, np.abs(x.real))):
        raise SolverError(f"expectation of Hermitian {name} has imaginary residue {np.abs(x.imag).max():.3e}")
    return x.real.copy()


def expectation(rho, o):
    """``tr(o rho)``; real for Hermitian ``o``."""
    if not sp.issparse(rho):
        rho = np.asarray(rho)
    if o.shape != rho.shape:
        raise ValueError(f"operator shape {o.shape} does not match state shape {rho.shape}")
    if sp.issparse(o) or sp.issparse(rho):
        o = o if sp.issparse(o) else sp.csr_matrix(o)
        val = complex(o.multiply(rho.T).sum())
    else:
        val = complex(np.einsum("ij,ji->", np.asarray(o), rho))
    if _hermitian_op(o):
        return float(_real_if_close(np.array([val]), "operator")[0])
    return val


def trace_distance(rho, sigma) -> float:
    return 0.5 * float(np.abs(np.linalg.eigvalsh(np.asarray(rho) - np.asarray(sigma))).sum())


def _nonzero_rates(evals, floor):
    rates = -evals.real
    keep = np.abs(rates) > floor
    return evals[keep]


def spectral_gap(L, gap_floor=GAP_FLOOR, n_shifts=4, k=8, dense_limit=4096) -> GapResult:
    """Slowest nonzero decay rate of ``L``.

    Below ``dense_limit`` superoperator dimension the full spectrum is
    computed.  Otherwise shift-invert Arnoldi is run around the shifts
    ``i*m*Omega`` for ``|m| <= n_shifts`` (slow eigenvalues of a damped
    oscillator sit near the mechanical harmonics), keeping ``k``
    eigenvalues per shift.
    """
    d2 = L.shape[0]
    if d2 <= dense_limit:
        Ld = L.toarray() if sp.issparse(L) else np.asarray(L)
        evals = la.eigvals(Ld)
    else:
        L = sp.csc_matrix(L, dtype=complex)
        found = []
        ident = sp.identity(d2, dtype=complex, format="csc")
        for m in range(-n_shifts, n_shifts + 1):
            sigma = -1e-3 + 1j * m
            try:
                lu = spla.splu(L - sigma * ident)
                op = spla.LinearOperator(L.shape, matvec=lu.solve, dtype=complex)
                mu = spla.eigs(op, k=k, which="LM", return_eigenvectors=False, tol=1e-10, maxiter=5000)
            except spla.ArpackNoConvergence as exc:
                raise SolverError(f"shift-invert Arnoldi did not converge at shift {sigma}: {exc}") from exc
            found.append(sigma + 1.0 / mu)
        evals = np.concatenate(found)
    if np.any(evals.real > 1e-8 * max(1.0, np.abs(evals).max())):
        raise SolverError(f"Liouvillian has an eigenvalue with positive real part {evals.real.max():.3e}")
    nz = _nonzero_rates(evals, gap_floor)
    if nz.size == 0:
        raise SolverError("no nonzero eigenvalue found")
    i = np.argmin(-nz.real)
    return GapResult(gap=float(-nz[i].real), eigenvalue=complex(nz[i]))


def converge_cutoff(compute, params, start=None, step=10, rtol=0.01, max_cutoff=200):
    """Raise the Fock cutoff until ``compute(params)`` changes by < ``rtol``.

    ``compute`` maps ``SystemParams`` to a float.  Returns
    ``(value, cutoff, history)`` where ``history`` lists (cutoff, value)
    pairs.  Raises ``ConvergenceError`` if ``max_cutoff`` is reached.
    """
    cutoff = params.fock_cutoff if start is None else start
    history = [(cutoff, compute(params.replace(fock_cutoff=cutoff)))]
    while True:
        nxt = cutoff + step
        if nxt > max_cutoff:
            raise ConvergenceError(f"cutoff gate failed up to fock_cutoff={cutoff}: history={history}")
        val = compute(params.replace(fock_cutoff=nxt))
        history.append((nxt, val))
        prev = history[-2][1]
        if abs(val - prev) <= rtol * max(abs(val), 1e-12):
            return val, nxt, history
        cutoff = nxt


def evolve_stages(stages, rho0, observables=None, points_per_period=4, method="rk", rtol=RTOL, atol=ATOL):
    """Run piecewise-constant Liouvillian stages back to back.

    Parameters
    ----------
    stages : sequence of (SystemParams, duration)
        Durations are in mechanical periods.  All stages must share the
        Fock cutoff; parameters switch instantaneously between stages.
    rho0 : ndarray
        Initial state.
    observables : callable or dict, optional
        ``observables(space) -> dict`` or a fixed dict of operators.

    Returns
    -------
    list of Trajectory
        One per stage, with times measured from the start of the first
        stage.
    """
    from .model import liouvillian

    cutoffs = {p.fock_cutoff for p, _ in stages}
    if len(cutoffs) != 1:
        raise ValueError(f"all stages must share the Fock cutoff, got {sorted(cutoffs)}")
    out = []
    t0 = 0.0
    rho = rho0
    for p, duration in stages:
        if duration <= 0:
            raise ValueError("stage durations must be positive")
        obs = observables(p.space) if callable(observables) else observables
        t1 = t0 + 2.0 * math.pi * duration
        npts = max(2, int(math.ceil(duration * points_per_period)) + 1)
        traj = evolve(liouvillian(p), rho, np.linspace(t0, t1, npts), observables=obs, method=method,
                      rtol=rtol, atol=atol)
        rho = validate_density_matrix(traj.final_state, clip=True)
        traj.final_state = rho
        out.append(traj)
        t0 = t1
    return out
