import math

import numpy as np
import pytest
import scipy.linalg as la
import scipy.sparse as sp

from lambda_phonon.model import SystemParams, hamiltonian, liouvillian
from lambda_phonon.quantum_core import (
    HilbertSpace,
    boson_ops,
    devec,
    emitter_op,
    identity,
    lift_left,
    lift_right,
    thermal_state,
    vec,
)
from lambda_phonon.solvers import (
    ConvergenceError,
    MultiplicityError,
    converge_cutoff,
    evolve,
    evolve_stages,
    expectation,
    spectral_gap,
    steady_state,
    trace_distance,
)

from conftest import random_density

# control drive on, probe and coupling off: |down> is dark and the only steady emitter state
DARK = dict(E_c=1.0, delta_c=0.3, gamma=5.0, Q=20.0, Nbar=0.5)
SMALL = dict(G=0.8, delta_p=0.5, delta_c=0.2, E_p=0.4, E_c=1.2, gamma=2.0, Q=10.0, Nbar=0.6)


def test_steady_state_dark_thermal():
    p = SystemParams(fock_cutoff=40, **DARK)
    rho = steady_state(liouvillian(p))
    assert trace_distance(rho, thermal_state(0.5, p.space)) < 1e-8


def test_steady_state_matches_dense_null_space():
    p = SystemParams(fock_cutoff=3, **SMALL)
    L = liouvillian(p).toarray()
    w, v = la.eig(L)
    x = v[:, np.argmin(abs(w))]
    oracle = devec(x / devec(x).trace())
    for method in ("dense", "lu", "gmres"):
        rho = steady_state(liouvillian(p), method=method)
        assert np.abs(rho - oracle).max() < 1e-10, method


def test_steady_state_invariants():
    p = SystemParams(fock_cutoff=12, **SMALL)
    L = liouvillian(p)
    rho = steady_state(L)
    assert abs(np.trace(rho) - 1) < 1e-9
    assert np.abs(rho - rho.conj().T).max() < 1e-9
    assert np.linalg.eigvalsh(rho).min() > -1e-8
    assert np.linalg.norm(L @ vec(rho)) < 1e-9 * sp.linalg.norm(L, 1)


def test_degenerate_null_space_raises():
    p = SystemParams(fock_cutoff=8, E_c=1.0)
    h = hamiltonian(p)
    L = (-1j * (lift_left(h) - lift_right(h))).tocsr()
    with pytest.raises(MultiplicityError):
        steady_state(L)


def test_evolve_constant_under_zero_generator(rng):
    rho = random_density(6, rng)
    L = sp.csr_matrix((36, 36), dtype=complex)
    traj = evolve(L, rho, [0, 1, 2], store_states=True)
    for s in traj.states:
        assert np.abs(s - rho).max() < 1e-14


def test_evolve_matches_expm_oracle(rng):
    p = SystemParams(fock_cutoff=4, **SMALL)
    L = liouvillian(p)
    rho0 = random_density(12, rng)
    t = 3 * 2 * math.pi
    oracle = devec(la.expm(L.toarray() * t) @ vec(rho0))
    for method in ("rk", "krylov"):
        traj = evolve(L, rho0, [0, t], method=method)
        assert np.abs(traj.final_state - oracle).max() < 1e-7, method


def test_evolve_rejects_bad_grid(rng):
    L = liouvillian(SystemParams(fock_cutoff=2))
    with pytest.raises(ValueError):
        evolve(L, random_density(6, rng), [0, 1, 1])


def test_trajectory_periods_and_trace():
    p = SystemParams(fock_cutoff=10, **SMALL)
    times = 2 * math.pi * np.arange(4)
    traj = evolve(liouvillian(p), thermal_state(0.2, p.space), times,
                  observables={"n": boson_ops(p.space)[2], "one": identity(p.space)})
    assert np.allclose(traj.periods, np.arange(4))
    assert np.abs(traj["one"] - 1).max() < 1e-7
    assert traj["n"].dtype == float


def test_steady_state_is_fixed_point_of_evolution():
    p = SystemParams(fock_cutoff=15, **SMALL)
    L = liouvillian(p)
    rho = steady_state(L)
    n = boson_ops(p.space)[2]
    traj = evolve(L, rho, [0, 10 * 2 * math.pi], observables={"n": n})
    assert abs(traj["n"][-1] - traj["n"][0]) < 1e-6


@pytest.mark.parametrize("nbar, cutoff", [(0.0, 6), (0.5, 40)])
def test_gap_of_free_damped_oscillator(nbar, cutoff):
    p = SystemParams(fock_cutoff=cutoff, **{**DARK, "Nbar": nbar})
    res = spectral_gap(liouvillian(p))
    # amplitude <b> relaxes at Gamma / 2, the occupation at Gamma
    assert abs(res.gap - p.Gamma / 2) < 1e-6
    assert abs(abs(res.eigenvalue.imag) - 1.0) < 1e-6
    assert abs(res.t_ss - 1 / (2 * math.pi * res.gap)) < 1e-12


def test_gap_matches_dense_oracle_small():
    p = SystemParams(fock_cutoff=3, **SMALL)
    w = la.eigvals(liouvillian(p).toarray())
    rates = -w.real[np.abs(w.real) > 1e-8]
    res = spectral_gap(liouvillian(p))
    assert abs(res.gap - rates.min()) < 1e-9
    assert np.all(res.gap <= rates + 1e-12)


def test_sparse_gap_path_matches_dense():
    p = SystemParams(fock_cutoff=8, **SMALL)
    dense = spectral_gap(liouvillian(p))
    sparse = spectral_gap(liouvillian(p), dense_limit=0)
    assert abs(dense.gap - sparse.gap) < 1e-9


def test_expectation_identities(rng):
    space = HilbertSpace(4)
    rho = random_density(12, rng)
    assert abs(expectation(rho, identity(space)) - 1) < 1e-12
    s = emitter_op("down", "e", space).toarray()
    naive = 0j
    for i in range(12):
        for j in range(12):
            naive += s[i, j] * rho[j, i]
    assert abs(expectation(rho, emitter_op("down", "e", space)) - naive) < 1e-13
    with pytest.raises(ValueError):
        expectation(rho, identity(HilbertSpace(3)))


def test_expectation_large_thermal():
    from lambda_phonon.quantum_core import minimal_thermal_cutoff

    space = HilbertSpace(minimal_thermal_cutoff(210))
    rho = thermal_state(210, space, sparse=True)
    assert abs(expectation(rho, boson_ops(space)[2]) - 210) / 210 < 1e-4


def test_converge_cutoff_gate():
    p = SystemParams(fock_cutoff=10, **SMALL)

    def nbar(q):
        return expectation(steady_state(liouvillian(q)), boson_ops(q.space)[2])

    val, cutoff, history = converge_cutoff(nbar, p, step=5)
    assert abs(history[-1][1] - history[-2][1]) <= 0.01 * abs(val)
    with pytest.raises(ConvergenceError):
        converge_cutoff(lambda q: float(q.fock_cutoff), p, step=5, max_cutoff=30)


def test_stages_share_cutoff():
    a = SystemParams(fock_cutoff=5, **SMALL)
    b = a.replace(fock_cutoff=6)
    with pytest.raises(ValueError):
        evolve_stages([(a, 1), (b, 1)], thermal_state(0.1, a.space))


def test_stages_continue_state():
    a = SystemParams(fock_cutoff=8, **SMALL)
    b = a.replace(E_p=0.0, G=0.0)
    rho0 = thermal_state(0.1, a.space)
    trajs = evolve_stages([(a, 1), (b, 2)], rho0, observables=lambda s: {"n": boson_ops(s)[2]})
    assert trajs[1].times[0] == pytest.approx(2 * math.pi)
    one_shot = evolve(liouvillian(a), rho0, [0, 2 * math.pi]).final_state
    direct = evolve(liouvillian(b), one_shot, [0, 4 * math.pi]).final_state
    assert np.abs(trajs[1].final_state - direct).max() < 1e-7
