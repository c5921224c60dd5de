import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm
from scipy.signal import find_peaks

from lambda_phonon.model import SystemParams, liouvillian
from lambda_phonon.quantum_core import TruncationError, emitter_op, vec, devec
from lambda_phonon.solvers import steady_state
from lambda_phonon.spectra import (
    SpectrumResult,
    WindowError,
    _shell,
    analytic_eit_terms,
    attenuation,
    cooling_map,
    correlation_spectrum,
    eit_absorption_analytic,
    eit_absorption_numeric,
    rfs,
    two_time_correlation,
)


def weak(**kw):
    base = dict(G=0.0, Nbar=0.0, fock_cutoff=2, gamma=2.0, E_p=1e-3, E_c=0.0, delta_c=0.0)
    base.update(kw)
    return SystemParams(**base)


def textbook_eit(p, d):
    # weak-probe coherence of a bare three-level system, same sign convention as the package
    return 1j * p.E_p / (p.gamma / 2 + 1j * d + p.E_c ** 2 / (1j * (d - p.delta_c)))


def test_two_level_lorentzian():
    p = weak(E_c=0.0, delta_c=50.0)
    grid = np.linspace(-6, 6, 25)
    # the up level is decoupled when E_c = 0; a tiny far-detuned control fixes the steady state
    res = eit_absorption_numeric(p.replace(E_c=0.05), grid)
    oracle = (p.gamma / 2) ** 2 / ((p.gamma / 2) ** 2 + grid ** 2)
    np.testing.assert_allclose(res.values, oracle, atol=1e-3)
    assert res.values.max() == pytest.approx(1.0, abs=1e-3)


def test_eit_transparency_dip():
    p = weak(E_c=1.0)
    res = eit_absorption_numeric(p, [0.0, 0.5, 1.0, 2.0])
    assert abs(res.values[0]) < 1e-4
    chi = np.array([textbook_eit(p, d) * (p.gamma / 2) / (1j * p.E_p) for d in res.axis[1:]])
    np.testing.assert_allclose(res.extras["coherence"][1:], chi, atol=2e-4)


def test_analytic_reduces_to_textbook_eit():
    p = weak(E_c=1.3, delta_c=0.4, gamma=1.7)
    for d in (-2.0, -0.3, 0.7, 1.5):
        t = analytic_eit_terms(p, d, polaron_shift=True)
        assert t.alpha == 1.0
        assert t.n_max == 0
        assert t.rho_de == pytest.approx(textbook_eit(p.replace(delta_c=0.0), d), rel=1e-12)


@given(G=st.floats(0.0, 2.0), nbar=st.floats(0.0, 50.0))
@settings(max_examples=50, deadline=None)
def test_attenuation_closed_form(G, nbar):
    p = SystemParams(G=G, Nbar=nbar)
    assert attenuation(p) == pytest.approx(math.exp(-(G ** 2) * (2 * nbar + 1) / 2), rel=1e-12)


def test_zero_temperature_keeps_only_emission_terms():
    p = SystemParams(G=0.8, Nbar=0.0, Q=50.0)
    for n in range(6):
        expect = 0.8 ** (2 * n) / math.factorial(n) / (n * p.Gamma / 2 + 1j * (0.3 - n))
        assert _shell(p, n, 0.3) == pytest.approx(expect, rel=1e-12)


def test_shell_matches_direct_double_sum():
    p = SystemParams(G=0.6, Nbar=1.7, Q=30.0)
    for n in range(5):
        direct = sum(math.comb(n, k) * 0.36 ** n * 1.7 ** (n - k) * 2.7 ** k / math.factorial(n)
                     / (n * p.Gamma / 2 + 1j * (0.2 + (n - 2 * k))) for k in range(n + 1))
        assert _shell(p, n, 0.2) == pytest.approx(direct, rel=1e-12)


def test_analytic_truncation_error():
    p = SystemParams(G=1.0, Nbar=5.0, E_p=0.1, E_c=1.0)
    with pytest.raises(TruncationError):
        analytic_eit_terms(p, 0.5, n_max=2)


def test_analytic_warns_beyond_validity():
    p = SystemParams(G=1.5, Nbar=0.0, E_p=0.1, E_c=1.0)
    with pytest.warns(UserWarning):
        eit_absorption_analytic(p, [0.5])


def test_qrt_initial_value_and_expm_oracle():
    p = SystemParams(G=0.7, Nbar=0.3, fock_cutoff=4, E_p=0.4, E_c=0.9, delta_p=0.5, delta_c=0.2, gamma=1.3,
                     Q=20.0)
    L = liouvillian(p)
    rho = steady_state(L)
    A = emitter_op("e", "down", p.space).toarray()
    B = emitter_op("down", "e", p.space).toarray()
    tau = np.linspace(0, 3, 13)
    c = two_time_correlation(L, rho, A, B, tau, rtol=1e-11, atol=1e-13)
    assert c[0] == pytest.approx(np.trace(A @ B @ rho), abs=1e-12)
    Ld = L.toarray()
    for t, ci in zip(tau, c):
        oracle = np.trace(A @ devec(expm(Ld * t) @ vec(B @ rho), p.space.total_dim))
        assert ci == pytest.approx(oracle, abs=1e-7)


def test_qrt_optical_coherence_envelope():
    p = SystemParams(G=0.0, Nbar=0.0, fock_cutoff=2, gamma=1.6, E_p=0.0, E_c=0.0)
    space = p.space
    rho = np.zeros((space.total_dim,) * 2, complex)
    i = space.index("e", 0)
    rho[i, i] = 1.0
    tau = np.linspace(0, 4, 41)
    c = two_time_correlation(liouvillian(p), rho, emitter_op("e", "down", space),
                             emitter_op("down", "e", space), tau)
    np.testing.assert_allclose(np.abs(c), np.exp(-p.gamma * tau / 2), atol=1e-8)


def test_qrt_rejects_bad_grid():
    p = SystemParams(fock_cutoff=2)
    with pytest.raises(ValueError):
        two_time_correlation(liouvillian(p), np.eye(6) / 6, np.eye(6), np.eye(6), [0.5, 1.0])


def test_window_error_for_non_decaying_correlation():
    tau = np.linspace(0, 10, 201)
    with pytest.raises(WindowError) as exc:
        correlation_spectrum(tau, np.exp(2j * tau), [0.0, 1.0], window="exp-tail")
    assert exc.value.required_t_max is None
    with pytest.raises(WindowError) as exc:
        correlation_spectrum(tau, np.exp(-0.3 * tau), [0.0], window="exp-tail")
    assert exc.value.required_t_max > 10
    # a taper never raises
    correlation_spectrum(tau, np.exp(2j * tau), [0.0], window="hann")


def test_exp_tail_transform_of_exponential():
    tau = np.linspace(0, 40, 8001)
    g = 0.7
    nu = np.linspace(-3, 3, 13)
    s = correlation_spectrum(tau, np.exp(-g * tau), nu, window="exp-tail")
    np.testing.assert_allclose(s, 2 * g / (g ** 2 + nu ** 2), rtol=1e-4)


def test_spectrum_axis_must_increase():
    with pytest.raises(ValueError):
        SpectrumResult(np.array([0.0, 0.0]), np.zeros(2))


@pytest.fixture(scope="module")
def small_rfs():
    p = SystemParams(G=0.5, gamma=0.5, Nbar=0.0, fock_cutoff=8, E_p=0.2, E_c=0.5, delta_p=1.0, delta_c=0.0)
    nu = np.arange(-40, 40, 0.01)
    return p, nu, rfs(p, nu, t_max=60), rfs(p, nu - p.Delta0, t_max=60)


def test_rfs_sum_rule_each_branch(small_rfs):
    p, nu, r, r_up = small_rfs
    pe = r.extras["excited_population"]
    assert np.trapezoid(r.extras["down"], nu) / (2 * np.pi) == pytest.approx(pe, rel=0.02)
    assert np.trapezoid(r_up.extras["up"], nu) / (2 * np.pi) == pytest.approx(pe, rel=0.02)
    assert r.values == pytest.approx(r.extras["down"] + r.extras["up"])


def test_rfs_without_coupling_is_a_single_line():
    p = SystemParams(G=0.0, gamma=0.5, Nbar=0.0, fock_cutoff=2, E_p=0.05, E_c=0.5, delta_p=1.0, delta_c=0.0)
    nu = np.arange(-10, 10, 0.01)
    d = rfs(p, nu, t_max=60).extras["down"]
    peaks, _ = find_peaks(d, distance=50, prominence=0.05 * d.max())
    assert len(peaks) == 1
    assert nu[peaks[0]] == pytest.approx(p.delta_p, abs=0.02)


def test_cooling_map_without_coupling():
    p = SystemParams(G=0.0, Nbar=0.5, fock_cutoff=16, Q=50.0)
    m = cooling_map(p, [-1.0, 0.5, 2.0], [0.5, 2.0])
    np.testing.assert_allclose(m["nbar"], 0.5, rtol=1e-6)
    np.testing.assert_allclose(m["efficiency"], 1.0, rtol=1e-6)
    assert m["nbar"].shape == (2, 3)
    assert not m["failures"]


def test_cooling_map_records_failures():
    # a one-level Fock space cannot hold a phonon operator
    p = SystemParams(G=0.5, Nbar=0.0, fock_cutoff=8)
    m = cooling_map(p, [1.0], [0.0])
    assert np.isnan(m["nbar"]).all()
    assert m["failures"]


def test_numeric_absorption_validates_mode():
    p = weak(E_c=1.0)
    with pytest.raises(ValueError):
        eit_absorption_numeric(p, [0.0], mode="at_time")
    with pytest.raises(ValueError):
        eit_absorption_numeric(p.replace(E_p=0.0), [0.0])
