"""Hilbert-space bookkeeping and superoperator lifting.

The composite space is a three-level emitter tensored with a truncated
bosonic mode.  Basis ordering is emitter-major: the state |s, m> (emitter
level ``s`` in {0: down, 1: up, 2: e}, Fock number ``m``) sits at index
``s * fock_cutoff + m``.

Density matrices are vectorized by column stacking, so that
``vec(A @ rho @ B) == kron(B.T, A) @ vec(rho)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

__all__ = [
    "LABELS",
    "HilbertSpace",
    "TruncationError",
    "emitter_op",
    "boson_ops",
    "identity",
    "thermal_occupation_tail",
    "thermal_state",
    "vec",
    "devec",
    "lift_left",
    "lift_right",
    "dissipator",
    "validate_density_matrix",
    "is_hermitian",
]

#: Emitter level names and their basis index.
LABELS = {"down": 0, "up": 1, "e": 2, "↓": 0, "↑": 1}

DENSE_THRESHOLD = 64


class TruncationError(ValueError):
    """The Fock cutoff is too small for the requested state or operator."""

    def __init__(self, message, required_cutoff=None):
        super().__init__(message)
        self.required_cutoff = required_cutoff


@dataclass(frozen=True)
class HilbertSpace:
    """Three-level emitter times a Fock space truncated at ``fock_cutoff``."""

    fock_cutoff: int
    emitter_dim: int = 3

    def __post_init__(self):
        if int(self.fock_cutoff) != self.fock_cutoff or self.fock_cutoff < 1:
            raise ValueError(f"fock_cutoff must be a positive integer, got {self.fock_cutoff!r}")
        if self.emitter_dim != 3:
            raise ValueError("only a three-level emitter is supported")

    @property
    def total_dim(self) -> int:
        return self.emitter_dim * self.fock_cutoff

    def index(self, level, m: int) -> int:
        """Basis index of |level, m>."""
        s = _level_index(level)
        if not 0 <= m < self.fock_cutoff:
            raise ValueError(f"Fock number {m} outside 0..{self.fock_cutoff - 1}")
        return s * self.fock_cutoff + m

    def basis(self, level, m: int) -> np.ndarray:
        psi = np.zeros(self.total_dim, dtype=complex)
        psi[self.index(level, m)] = 1.0
        return psi


def _level_index(level) -> int:
    if isinstance(level, (int, np.integer)) and not isinstance(level, bool):
        if 0 <= level < 3:
            return int(level)
    elif level in LABELS:
        return LABELS[level]
    raise ValueError(f"invalid emitter level {level!r}; expected one of 'down', 'up', 'e' or 0..2")


def identity(space: HilbertSpace) -> sp.csr_matrix:
    return sp.identity(space.total_dim, dtype=complex, format="csr")


def emitter_op(i, j, space: HilbertSpace) -> sp.csr_matrix:
    """Return ``|i><j| (x) 1_Fock`` on the composite space."""
    a, b = _level_index(i), _level_index(j)
    sigma = sp.coo_matrix(([1.0 + 0j], ([a], [b])), shape=(3, 3))
    return sp.kron(sigma, sp.identity(space.fock_cutoff), format="csr")


def _annihilator(n: int) -> sp.csr_matrix:
    return sp.diags(np.sqrt(np.arange(1, n, dtype=float)), 1, shape=(n, n), format="csr", dtype=complex)


def boson_ops(space: HilbertSpace):
    """Truncated ``(b, b_dag, n)`` lifted to the composite space."""
    if space.fock_cutoff < 2:
        raise ValueError("boson operators need fock_cutoff >= 2")
    a = _annihilator(space.fock_cutoff)
    eye3 = sp.identity(3, dtype=complex)
    b = sp.kron(eye3, a, format="csr")
    b_dag = b.conj().T.tocsr()
    n = sp.kron(eye3, sp.diags(np.arange(space.fock_cutoff, dtype=complex)), format="csr")
    return b, b_dag, n


def thermal_occupation_tail(nbar: float, cutoff: int) -> float:
    """Probability weight of the geometric distribution at Fock numbers >= cutoff."""
    if nbar <= 0:
        return 0.0
    return float((nbar / (nbar + 1.0)) ** cutoff)


def minimal_thermal_cutoff(nbar: float, tail: float = 1e-6) -> int:
    if nbar <= 0:
        return 1
    return int(np.ceil(np.log(tail) / np.log(nbar / (nbar + 1.0))))


def thermal_state(nbar: float, space: HilbertSpace, emitter="down", tail_tol: float = 1e-6, sparse=False):
    """Emitter pure state tensored with a thermal Fock distribution.

    Parameters
    ----------
    nbar : float
        Mean occupation of the untruncated thermal state.
    space : HilbertSpace
    emitter : label, int or array_like, optional
        Emitter level, or a 3x3 emitter density matrix.
    tail_tol : float
        Maximum allowed probability weight beyond the cutoff.
    sparse : bool
        Return a sparse matrix (useful for large thermal occupations).

    Raises
    ------
    TruncationError
        If the thermal tail beyond the cutoff exceeds ``tail_tol``.
    """
    if nbar < 0:
        raise ValueError("nbar must be non-negative")
    tail = thermal_occupation_tail(nbar, space.fock_cutoff)
    if tail >= tail_tol:
        need = minimal_thermal_cutoff(nbar, tail_tol)
        raise TruncationError(
            f"thermal state with nbar={nbar} has tail weight {tail:.3g} beyond cutoff "
            f"{space.fock_cutoff}; need fock_cutoff >= {need}",
            required_cutoff=need,
        )
    m = np.arange(space.fock_cutoff)
    if nbar == 0:
        p = (m == 0).astype(float)
    else:
        p = (nbar / (nbar + 1.0)) ** m
        p /= p.sum()
    if isinstance(emitter, np.ndarray) or isinstance(emitter, (list, tuple)):
        rho_e = np.asarray(emitter, dtype=complex)
        if rho_e.shape != (3, 3):
            raise ValueError("emitter density matrix must be 3x3")
    else:
        rho_e = np.zeros((3, 3), dtype=complex)
        s = _level_index(emitter)
        rho_e[s, s] = 1.0
    if sparse:
        return sp.kron(sp.csr_matrix(rho_e), sp.diags(p.astype(complex)), format="csr")
    return np.kron(rho_e, np.diag(p).astype(complex))


def vec(rho) -> np.ndarray:
    """Column-stacked vectorization."""
    rho = np.asarray(rho)
    return rho.reshape(-1, order="F")


def devec(v, dim: int | None = None) -> np.ndarray:
    v = np.asarray(v)
    if dim is None:
        dim = int(round(np.sqrt(v.size)))
    if dim * dim != v.size:
        raise ValueError(f"vector of length {v.size} is not a vectorized {dim}x{dim} matrix")
    return v.reshape((dim, dim), order="F")


def _as_sparse(a) -> sp.csr_matrix:
    a = sp.csr_matrix(a, dtype=complex)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"operator must be square, got shape {a.shape}")
    return a


def lift_left(a) -> sp.csr_matrix:
    """Superoperator of ``rho -> A rho``."""
    a = _as_sparse(a)
    return sp.kron(sp.identity(a.shape[0], dtype=complex), a, format="csr")


def lift_right(a) -> sp.csr_matrix:
    """Superoperator of ``rho -> rho A``."""
    a = _as_sparse(a)
    return sp.kron(a.T, sp.identity(a.shape[0], dtype=complex), format="csr")


def dissipator(o) -> sp.csr_matrix:
    """Lifted ``D_o rho = 2 o rho o^+ - o^+ o rho - rho o^+ o``."""
    o = _as_sparse(o)
    od = o.conj().T.tocsr()
    odo = (od @ o).tocsr()
    # vec(o rho o^+) = kron(conj(o), o) vec(rho)
    jump = sp.kron(o.conj(), o, format="csr")
    return (2.0 * jump - lift_left(odo) - lift_right(odo)).tocsr()


def is_hermitian(a, rtol: float = 1e-12) -> bool:
    if sp.issparse(a):
        diff = abs(a - a.conj().T).max() if a.nnz else 0.0
        scale = abs(a).max() if a.nnz else 0.0
    else:
        a = np.asarray(a)
        diff = np.abs(a - a.conj().T).max(initial=0.0)
        scale = np.abs(a).max(initial=0.0)
    return diff <= rtol * max(scale, 1e-300)


def validate_density_matrix(rho, trace_tol=1e-9, herm_tol=1e-9, neg_tol=1e-8, clip=False, hard_neg=1e-6):
    """Check (and optionally repair) the density-matrix invariants.

    With ``clip=True`` the matrix is Hermitized, eigenvalues in
    ``[-hard_neg, 0)`` are clipped to zero and the trace renormalized.
    Anything more negative than ``-hard_neg`` raises ``ValueError``.
    Returns the (possibly repaired) matrix.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError("density matrix must be square")
    if clip:
        rho = 0.5 * (rho + rho.conj().T)
        w, v = np.linalg.eigh(rho)
        if w.min() < -hard_neg * max(1.0, abs(w).max()):
            raise ValueError(f"density matrix has eigenvalue {w.min():.3e} below -{hard_neg:g}")
        if w.min() < 0:
            w = np.clip(w, 0.0, None)
            rho = (v * w) @ v.conj().T
        rho = rho / np.trace(rho).real
        return rho
    tr = np.trace(rho)
    if abs(tr - 1) > trace_tol:
        raise ValueError(f"trace {tr:.12g} deviates from 1")
    if np.abs(rho - rho.conj().T).max() > herm_tol:
        raise ValueError("density matrix is not Hermitian")
    wmin = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min()
    if wmin < -neg_tol:
        raise ValueError(f"density matrix has negative eigenvalue {wmin:.3e}")
    return rho
