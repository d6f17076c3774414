import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.interpolate import CubicSpline

from scle.correlation import TimeGrid
from scle.dynamics import (PulseEvent, apply_pulse, commutator_constants, init_vector,
                           integrate_batch, integrate_trajectory, pulse_map,
                           structure_constants)
from scle.errors import ModelDefinitionError, UsageError
from scle.models import (PAULI_BASIS, SX, SY, SZ, build_model, make_pure_dephasing,
                         make_spin_boson)
from scle.noise import sample_bundle

I, X, Y, Z = range(4)


def generator(model, xi, eta):
    return (1j * model.H_mat + 1j * xi / math.sqrt(2) * model.Sc_mat
            + eta / math.sqrt(2) * model.Sa_mat)


def test_pure_dephasing_equations():
    w0, xi, eta = 1.3, 0.7 - 0.2j, -0.4 + 0.9j
    A = generator(make_pure_dephasing(w0), xi, eta)
    expect = np.zeros((4, 4), dtype=complex)
    expect[X, Y] = -(w0 + math.sqrt(2) * xi)
    expect[Y, X] = w0 + math.sqrt(2) * xi
    expect[Z, I] = math.sqrt(2) * eta
    expect[I, Z] = math.sqrt(2) * eta
    assert np.allclose(A, expect, atol=1e-14)


def test_spin_boson_equations():
    w0, xi, eta = 1.0, 0.3 + 0.1j, 0.5 - 0.6j
    A = generator(make_spin_boson(w0), xi, eta)
    r2 = math.sqrt(2)
    assert A[Z, Y] == pytest.approx(r2 * xi)
    assert A[Y, Z] == pytest.approx(-r2 * xi)
    assert A[X, Y] == pytest.approx(-w0)
    assert A[Y, X] == pytest.approx(w0)
    assert A[X, I] == pytest.approx(r2 * eta)
    assert A[I, X] == pytest.approx(r2 * eta)
    assert abs(A[Z, X]) < 1e-14 and abs(A[X, Z]) < 1e-14


def test_zero_coupling_operator():
    _, Sc, Sa = structure_constants(SZ, np.zeros((2, 2)), PAULI_BASIS)
    assert not Sc.any() and not Sa.any()


def test_closure_failure_names_element():
    basis = (np.eye(2), SX, SZ)  # missing sigma_y
    with pytest.raises(ModelDefinitionError, match=r"Y_1"):
        structure_constants(SZ, SZ, basis)


def test_dependent_basis_rejected():
    with pytest.raises(ModelDefinitionError):
        structure_constants(SZ, SZ, (np.eye(2), SX, SX, SZ))


@pytest.mark.parametrize("rho,expect", [
    (0.5 * (np.eye(2) + SX), (1, 1, 0, 0)),
    (0.5 * (np.eye(2) + SZ), (1, 0, 0, 1)),
    (0.5 * np.eye(2), (1, 0, 0, 0)),
])
def test_init_vector(rho, expect):
    assert np.allclose(init_vector(PAULI_BASIS, rho), expect)


@pytest.mark.parametrize("rho", [
    np.array([[1, 1], [0, 0]]),           # not Hermitian
    np.eye(2),                            # trace 2
    np.array([[1.5, 0], [0, -0.5]]),      # negative eigenvalue
])
def test_init_vector_rejects(rho):
    with pytest.raises(ModelDefinitionError):
        init_vector(PAULI_BASIS, rho)


def test_three_level_closure():
    # Gell-Mann basis closes for any H and S
    gm = [np.eye(3, dtype=complex)]
    for a in range(3):
        for b in range(a + 1, 3):
            s = np.zeros((3, 3), dtype=complex)
            s[a, b] = s[b, a] = 1
            gm.append(s)
            s = np.zeros((3, 3), dtype=complex)
            s[a, b], s[b, a] = -1j, 1j
            gm.append(s)
    gm.append(np.diag([1, -1, 0]).astype(complex))
    gm.append(np.diag([1, 1, -2]).astype(complex) / math.sqrt(3))
    H = np.diag([0.0, 1.0, 2.5]).astype(complex)
    S = gm[1]
    Hm, Sc, Sa = structure_constants(H, S, gm)
    for l, Yl in enumerate(gm):
        assert np.allclose(sum(Hm[l, m] * gm[m] for m in range(9)), H @ Yl - Yl @ H)
        assert np.allclose(sum(Sa[l, m] * gm[m] for m in range(9)), S @ Yl + Yl @ S)


def _zeros(grid, b=1):
    return np.zeros((b, grid.n_half), dtype=complex)


def test_free_precession_vs_expm():
    grid = TimeGrid.from_span(0.02, 20.0)
    m = make_pure_dephasing(1.0)
    Yp, valid = integrate_batch(m, _zeros(grid), _zeros(grid), grid)
    t = grid.times()
    exact = np.stack([scipy.linalg.expm(1j * m.H_mat * tt) @ m.init_vector for tt in t])
    assert valid[0]
    # RK4 phase error per step is (w dt)^5 / 120
    bound = grid.t_end * grid.dt**4 / 120
    assert np.abs(Yp[0] - exact).max() < 1.5 * bound
    assert np.allclose(Yp[0, :, X].real, np.cos(t), rtol=0, atol=1.5 * bound)


def test_single_pi_pulse():
    grid = TimeGrid.from_span(0.1, 2.0)
    zero = np.zeros((2, 2))
    m = build_model("bare", zero, zero, PAULI_BASIS, 0.5 * np.eye(2),
                    pulses=[PulseEvent(1.0, pulse_map(commutator_constants(SY, PAULI_BASIS),
                                                      math.pi / 2))])
    y0 = np.array([1, 0.3, 0.2, 0.1], dtype=complex)
    Yp, _ = integrate_batch(m, _zeros(grid), _zeros(grid), grid, y0=y0)
    t = grid.times()
    assert np.allclose(Yp[0, t < 0.99], y0)
    assert np.allclose(Yp[0, t > 0.99], [1, -0.3, 0.2, -0.1])


def test_apply_pulse_properties():
    m = pulse_map(commutator_constants(SY, PAULI_BASIS), math.pi / 2)
    p = PulseEvent(0.0, m)
    y = np.array([1, 1, 0, 0], dtype=complex)
    assert np.allclose(apply_pulse(y, p), [1, -1, 0, 0])
    assert np.allclose(apply_pulse(apply_pulse(y, p), p), y)
    assert np.allclose(apply_pulse(y, PulseEvent(0.0, np.eye(4))), y)


@settings(max_examples=25, deadline=None)
@given(axis=st.sampled_from([SX, SY, SZ]), angle=st.floats(-math.pi, math.pi),
       y=st.lists(st.floats(-1, 1), min_size=3, max_size=3))
def test_pulse_preserves_identity_component(axis, angle, y):
    m = pulse_map(commutator_constants(axis, PAULI_BASIS), angle)
    v = np.array([1.0, *y], dtype=complex)
    out = m @ v
    assert out[0] == pytest.approx(1.0, abs=1e-12)
    assert np.linalg.norm(out[1:]) == pytest.approx(np.linalg.norm(v[1:]), abs=1e-12)


def test_linearity_in_initial_vector(short_plan):
    grid = short_plan.grid
    m = make_spin_boson(1.0)
    b = sample_bundle(short_plan, 1, 0)
    v = np.array([1, 0.2, -0.1, 0.5], dtype=complex)
    w = np.array([0.3, -0.4, 0.9, 0.1], dtype=complex)
    a1, a2 = 0.7 - 0.1j, -1.3
    f = lambda y0: integrate_batch(m, b.xi[None], b.eta[None], grid, y0=y0)[0][0]
    lhs = f(a1 * v + a2 * w)
    rhs = a1 * f(v) + a2 * f(w)
    assert np.abs(lhs - rhs).max() < 1e-10 * np.abs(rhs).max()


def test_nonfinite_trajectory_flagged():
    grid = TimeGrid.from_span(0.1, 1.0)
    m = make_pure_dephasing(1.0)
    xi = _zeros(grid, 2)
    xi[1, 5] = np.inf
    Yp, valid = integrate_batch(m, xi, _zeros(grid, 2), grid)
    assert valid.tolist() == [True, False]
    assert np.isnan(Yp[1, -1]).all()


def test_noise_shape_checked():
    grid = TimeGrid.from_span(0.1, 1.0)
    with pytest.raises(UsageError):
        integrate_batch(make_pure_dephasing(1.0), np.zeros((1, 5)), np.zeros((1, 5)), grid)


def test_trajectory_records_zeta(short_plan):
    b = sample_bundle(short_plan, 0, 3)
    tr = integrate_trajectory(make_pure_dephasing(1.0), b, short_plan.grid)
    assert tr.valid and tr.Y_path.shape == (short_plan.grid.n_steps + 1, 4)
    assert np.array_equal(tr.zeta_path, b.zeta[::2])


def _band_limit(x, h, omega_max):
    X_ = np.fft.fft(x)
    w = 2 * np.pi * np.fft.fftfreq(x.size, d=h)
    X_[np.abs(w) > omega_max] = 0
    return np.fft.ifft(X_)


def _midpoint_reference(model, xi_fn, eta_fn, t_end, h, record_every):
    # explicit midpoint rule on the interpolated path
    A0 = 1j * model.H_mat
    Sc = 1j * model.Sc_mat / math.sqrt(2)
    Sa = model.Sa_mat / math.sqrt(2)
    n = int(round(t_end / h))
    t = np.arange(n + 1) * h
    xs, es = xi_fn(t), eta_fn(t)
    xm, em = xi_fn(t[:-1] + h / 2), eta_fn(t[:-1] + h / 2)
    y = model.init_vector.astype(complex)
    out = [y.copy()]
    for i in range(n):
        ym = y + h / 2 * ((A0 + xs[i] * Sc + es[i] * Sa) @ y)
        y = y + h * ((A0 + xm[i] * Sc + em[i] * Sa) @ ym)
        if (i + 1) % record_every == 0:
            out.append(y.copy())
    return np.array(out)


@pytest.mark.parametrize("make", [make_pure_dephasing, make_spin_boson])
def test_fine_step_oracle(debye, make):
    """dt = 0.02 RK4 vs dt = 1e-4 reference on the same (band-limited) noise path."""
    from scle.correlation import build_kernels
    from scle.noise import build_noise_plan

    grid = TimeGrid.from_span(0.02, 2.0)
    plan = build_noise_plan(build_kernels(debye, 1.0, grid))
    b = sample_bundle(plan, 3, 0)
    h = grid.half_step
    xi = _band_limit(b.xi, h, debye.omega_max)
    eta = _band_limit(b.eta, h, debye.omega_max)
    model = make(1.0)
    Yp, _ = integrate_batch(model, xi[None], eta[None], grid)
    th = grid.half_times()
    ref = _midpoint_reference(model, CubicSpline(th, xi), CubicSpline(th, eta), grid.t_end,
                              1e-4, record_every=200)
    assert np.abs(ref - Yp[0]).max() < 1e-4
