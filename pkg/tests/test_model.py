import math

import numpy as np
import pytest
import scipy.linalg as la
from hypothesis import given, settings
from hypothesis import strategies as st

from lambda_phonon.model import (
    SystemParams,
    bath_frequency,
    displacement_matrix,
    hamiltonian,
    liouvillian,
    polaron_transform,
    thermal_occupation,
)
from lambda_phonon.quantum_core import TruncationError, boson_ops, devec, emitter_op, thermal_state, vec
from lambda_phonon.solvers import evolve, steady_state, trace_distance

from conftest import random_density, random_hermitian

WORKING = dict(G=1.3, delta_p=0.7, delta_c=-0.4, E_p=0.3, E_c=1.1, Nbar=0.8, gamma=2.0, Q=50.0)


def test_default_gamma_from_lifetime_and_bath():
    omega = bath_frequency(210, 0.1)
    assert abs(omega / (2 * math.pi) - 9.8987e6) < 1e3
    assert abs(SystemParams().gamma - 1 / (3.2e-9 * omega)) < 1e-12
    assert abs(SystemParams().gamma - 5.02) < 0.01
    assert abs(thermal_occupation(omega, 0.1) - 210) < 1e-9


def test_params_validation():
    with pytest.raises(ValueError):
        SystemParams(gamma=-1)
    with pytest.raises(ValueError):
        SystemParams(fock_cutoff=1)
    with pytest.raises(ValueError):
        SystemParams(Nbar=-0.1)
    p = SystemParams(Q=7000)
    assert abs(p.Gamma * p.Q - 1) < 1e-12


def test_physical_unit_roundtrip():
    omega = 2 * math.pi * 10e6
    p = SystemParams.from_physical(omega, G=3e7, tau_eg=3.2e-9, E_c=5e8, temperature=0.1)
    assert abs(p.to_si(p.G) - 3e7) / 3e7 < 1e-12
    assert abs(p.to_si(p.gamma) * 3.2e-9 - 1) < 1e-12
    assert abs(p.from_si(p.to_si(p.E_c)) - p.E_c) < 1e-12 * p.E_c
    assert abs(p.Nbar - thermal_occupation(omega, 0.1)) < 1e-9


def test_free_hamiltonian_spectrum():
    p = SystemParams(fock_cutoff=6)
    h = hamiltonian(p).toarray()
    w = np.sort(np.linalg.eigvalsh(h))
    assert np.allclose(w, np.repeat(np.arange(6), 3))


def test_probe_matrix_element():
    p = SystemParams(fock_cutoff=4, E_p=0.37, E_c=1.2, G=0.5)
    space = p.space
    h = hamiltonian(p)
    assert abs(h[space.index("e", 0), space.index("down", 0)] - 0.37) < 1e-15


def _hamiltonian_by_elements(p):
    N = p.fock_cutoff
    d = 3 * N
    h = np.zeros((d, d), dtype=complex)
    energy = {0: 0.0, 1: -(p.delta_p - p.delta_c), 2: -p.delta_p}
    for s in range(3):
        for m in range(N):
            i = s * N + m
            h[i, i] = energy[s] + m
            if s == 2:
                if m + 1 < N:
                    h[i, 2 * N + m + 1] += p.G * math.sqrt(m + 1)
                if m > 0:
                    h[i, 2 * N + m - 1] += p.G * math.sqrt(m)
    for m in range(N):
        h[2 * N + m, m] += p.E_p
        h[m, 2 * N + m] += p.E_p
        h[2 * N + m, N + m] += p.E_c
        h[N + m, 2 * N + m] += p.E_c
    return h


def test_hamiltonian_matches_element_oracle():
    p = SystemParams(fock_cutoff=4, **WORKING)
    assert np.abs(hamiltonian(p).toarray() - _hamiltonian_by_elements(p)).max() < 1e-13


finite = st.floats(-5, 5, allow_nan=False)
positive = st.floats(0, 5, allow_nan=False)


@settings(max_examples=30, deadline=None)
@given(finite, finite, finite, positive, positive)
def test_hamiltonian_hermitian(G, dp, dc, ep, ec):
    h = hamiltonian(SystemParams(G=G, delta_p=dp, delta_c=dc, E_p=ep, E_c=ec, fock_cutoff=5))
    assert abs(h - h.conj().T).max() <= 1e-12 * max(abs(h).max(), 1)


def test_liouvillian_trace_preservation(rng):
    p = SystemParams(fock_cutoff=5, **WORKING)
    L = liouvillian(p)
    for _ in range(100):
        rho = random_hermitian(15, rng)
        assert abs(np.trace(devec(L @ vec(rho)))) < 1e-9


def test_liouvillian_thermal_fixed_point():
    p = SystemParams(Nbar=0.7, fock_cutoff=40, gamma=3.0, Q=20)
    rho = thermal_state(0.7, p.space)
    assert np.abs(liouvillian(p) @ vec(rho)).max() < 1e-13


def test_excited_state_decays_at_gamma():
    p = SystemParams(fock_cutoff=3, gamma=2.5)
    rho0 = np.zeros((9, 9), dtype=complex)
    rho0[6, 6] = 1
    times = np.linspace(0, 2, 11)
    traj = evolve(liouvillian(p), rho0, times, observables={"pe": emitter_op("e", "e", p.space)})
    assert np.abs(traj["pe"] - np.exp(-2.5 * times)).max() < 1e-6


def _liouvillian_rhs_loops(p, rho):
    h = _hamiltonian_by_elements(p)
    N = p.fock_cutoff
    d = 3 * N
    out = np.zeros((d, d), dtype=complex)
    for i in range(d):
        for j in range(d):
            out[i, j] = -1j * sum(h[i, k] * rho[k, j] - rho[i, k] * h[k, j] for k in range(d))
    s = np.zeros((d, d))
    for m in range(N):
        s[m, 2 * N + m] = 1.0
    b = np.zeros((d, d))
    for blk in range(3):
        for m in range(1, N):
            b[blk * N + m - 1, blk * N + m] = math.sqrt(m)

    def D(o):
        od = o.conj().T
        return 2 * o @ rho @ od - od @ o @ rho - rho @ od @ o

    out += p.gamma / 2 * D(s)
    out += p.Gamma / 2 * ((p.Nbar + 1) * D(b) + p.Nbar * D(b.T))
    return out


def test_liouvillian_matches_loop_oracle(rng):
    p = SystemParams(fock_cutoff=4, **WORKING)
    L = liouvillian(p)
    for _ in range(50):
        rho = random_density(12, rng)
        got = devec(L @ vec(rho))
        assert np.abs(got - _liouvillian_rhs_loops(p, rho)).max() < 1e-12


def test_liouvillian_stable():
    p = SystemParams(fock_cutoff=5, **WORKING)
    w = la.eigvals(liouvillian(p).toarray())
    assert w.real.max() <= 1e-10


def _emitter_only_steady_state(p):
    """3x3 steady state of the bare driven Lambda system (dense, independent)."""
    h = np.zeros((3, 3), dtype=complex)
    h[2, 2] = -p.delta_p
    h[1, 1] = -(p.delta_p - p.delta_c)
    h[2, 0] = h[0, 2] = p.E_p
    h[2, 1] = h[1, 2] = p.E_c
    s = np.zeros((3, 3))
    s[0, 2] = 1
    eye = np.eye(3)
    L = -1j * (np.kron(eye, h) - np.kron(h.T, eye))
    L += p.gamma / 2 * (2 * np.kron(s.conj(), s) - np.kron(eye, s.T @ s) - np.kron((s.T @ s).T, eye))
    w, v = np.linalg.eig(L)
    x = v[:, np.argmin(abs(w))].reshape(3, 3, order="F")
    return x / np.trace(x)


def test_uncoupled_steady_state_factorizes():
    p = SystemParams(G=0.0, delta_p=0.4, delta_c=0.1, E_p=0.5, E_c=1.5, Nbar=0.3, Q=30, fock_cutoff=20)
    rho = steady_state(liouvillian(p))
    expected = np.kron(_emitter_only_steady_state(p), thermal_state(0.3, p.space)[:20, :20])
    assert trace_distance(rho, expected) < 1e-8


def test_polaron_identity_at_zero_coupling():
    U, _ = polaron_transform(SystemParams(fock_cutoff=6))
    assert abs(U - np.eye(18)).max() < 1e-15


def test_polaron_energy_shift():
    p = SystemParams(G=0.5, delta_p=0.3, E_p=0.2, E_c=1.0, fock_cutoff=40)
    _, ht = polaron_transform(p)
    i = p.space.index("e", 0)
    assert abs(ht[i, i] - (-0.3 - 0.25)) < 1e-12


def test_polaron_dressed_hamiltonian_matches_expm():
    p = SystemParams(G=0.5, delta_p=0.3, delta_c=0.1, E_p=0.2, E_c=1.0, fock_cutoff=40)
    space = p.space
    b, bd, _ = boson_ops(space)
    gen = (0.5 * (emitter_op("e", "e", space) @ (bd - b))).toarray()
    U = la.expm(gen)
    dressed = U @ hamiltonian(p).toarray() @ U.conj().T
    _, ht = polaron_transform(p)
    # compare on Fock states well below the cutoff in every emitter block
    low = [s * 40 + m for s in range(3) for m in range(20)]
    err = np.abs(dressed[np.ix_(low, low)] - ht.toarray()[np.ix_(low, low)]).max()
    assert err < 1e-6


def test_displacement_elements_match_expm():
    n = 60
    a = np.diag(np.sqrt(np.arange(1, n)), 1)
    ex = la.expm(0.8 * (a.T - a))
    assert np.abs(displacement_matrix(0.8, n)[:30, :30] - ex[:30, :30]).max() < 1e-12
    assert np.abs(displacement_matrix(-0.8, n)[:30, :30] - la.expm(-0.8 * (a.T - a))[:30, :30]).max() < 1e-12


def test_polaron_truncation_error():
    with pytest.raises(TruncationError) as err:
        polaron_transform(SystemParams(G=4.0, fock_cutoff=10))
    assert err.value.required_cutoff and err.value.required_cutoff > 10
