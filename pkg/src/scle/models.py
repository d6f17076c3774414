"""Benchmark two-level systems, their drives and analytic references.

Conventions: the basis is ``(I, sigma_x, sigma_y, sigma_z)`` and the excited
state ``|e>`` is the +1 eigenstate of ``sigma_z``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .correlation import KernelTable, TimeGrid
from .dynamics import (DriveTerm, OperatorBasisModel, PulseEvent, commutator_constants,
                       init_vector, operator_coeffs, pulse_map, structure_constants)
from .errors import DomainError, UsageError

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI_BASIS = (I2, SX, SY, SZ)
PAULI_NAMES = ("I", "sx", "sy", "sz")

#: k_B / hbar in ps^-1 K^-1 from the exact SI k_B and CODATA 2018 hbar.
KB_OVER_HBAR = 1.380649e-23 / 1.054571817e-34 * 1e-12

_STATES = {
    "plus_x": 0.5 * (I2 + SX),
    "excited": 0.5 * (I2 + SZ),
    "ground": 0.5 * (I2 - SZ),
    "mixed": 0.5 * I2,
}


def density_matrix(state):
    """Named state (plus_x, excited, ground, mixed) or an explicit matrix."""
    if isinstance(state, str):
        try:
            return _STATES[state].copy()
        except KeyError:
            raise UsageError(f"unknown initial state {state!r}; use {sorted(_STATES)}") from None
    return np.asarray(state, dtype=complex)


def kelvin_to_beta(T_kelvin, units="inverse_ps"):
    """Inverse temperature in ps for a temperature in kelvin."""
    if units != "inverse_ps":
        raise UsageError(f"temperature conversion needs units='inverse_ps', got {units!r}")
    if not T_kelvin > 0:
        raise DomainError(f"temperature must be > 0 K, got {T_kelvin}")
    return 1.0 / (KB_OVER_HBAR * T_kelvin)


def beta_to_kelvin(beta, units="inverse_ps"):
    if units != "inverse_ps":
        raise UsageError(f"temperature conversion needs units='inverse_ps', got {units!r}")
    if not beta > 0:
        raise DomainError(f"beta must be > 0, got {beta}")
    return 1.0 / (KB_OVER_HBAR * beta)


def build_model(name, H_sys, S, basis, rho0, *, names=None, extra_observables=None,
                drive=(), pulses=(), params=None):
    """General constructor from explicit matrices with closure checks.

    Parameters
    ----------
    names : sequence of str, optional
        Observable names for the basis elements themselves.
    extra_observables : dict, optional
        Name -> operator matrix, expanded in the basis.
    drive : sequence of (name, operator, coefficient)
        Control Hamiltonian terms ``c(t) O``.
    """
    basis = tuple(np.asarray(b, dtype=complex) for b in basis)
    H_mat, Sc_mat, Sa_mat = structure_constants(H_sys, S, basis)
    d = basis[0].shape[0]
    obs = {}
    if names is not None:
        for k, nm in enumerate(names):
            e = np.zeros(len(basis), dtype=complex)
            e[k] = 1
            obs[nm] = e
    for nm, op in (extra_observables or {}).items():
        obs[nm] = operator_coeffs(op, basis)
    terms = tuple(DriveTerm(nm, commutator_constants(op, basis), fn) for nm, op, fn in drive)
    return OperatorBasisModel(
        name=name, H_mat=H_mat, Sc_mat=Sc_mat, Sa_mat=Sa_mat,
        init_vector=init_vector(basis, rho0), observable_maps=obs,
        coupling_coeffs=operator_coeffs(S, basis),
        identity_coeffs=operator_coeffs(np.eye(d), basis),
        drive=terms, pulses=tuple(pulses), basis=basis, params=dict(params or {}),
    )


def pi_pulse_train(period, t_end, axis="y", t_first=None):
    """Ideal pi pulses about ``axis`` at ``t_first + k period`` up to ``t_end``.

    The first pulse defaults to ``t = period``; no pulse acts at ``t = 0``.
    """
    if not period > 0:
        raise DomainError(f"pulse period must be > 0, got {period}")
    gen = {"x": SX, "y": SY, "z": SZ}[axis]
    m = pulse_map(commutator_constants(gen, PAULI_BASIS), math.pi / 2)
    first = period if t_first is None else t_first
    n = int(math.floor((t_end - first) / period + 1e-9)) + 1 if t_end >= first else 0
    return tuple(PulseEvent(first + k * period, m) for k in range(n))


def make_pure_dephasing(omega0, *, pulse_period=None, t_end=None, initial_state="plus_x"):
    """H = omega0/2 sz, S = sz; optional pi-pulse train about y."""
    if not omega0 > 0:
        raise DomainError(f"omega0 must be > 0, got {omega0}")
    pulses = ()
    if pulse_period is not None:
        if t_end is None:
            raise UsageError("a pulse train needs t_end")
        pulses = pi_pulse_train(pulse_period, t_end)
    return build_model("pure_dephasing", 0.5 * omega0 * SZ, SZ, PAULI_BASIS,
                       density_matrix(initial_state), names=PAULI_NAMES, pulses=pulses,
                       params={"omega0": omega0, "pulse_period": pulse_period})


def _cumtrapz(y, dx):
    out = np.zeros_like(y)
    out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1])) * dx
    return out


def pure_dephasing_oracle(omega0, kernels: KernelTable, grid: TimeGrid, x0=1.0):
    """Exact pure-dephasing averages on the full-step grid.

    Returns a dict with ``envelope``, ``sx``, ``sy`` and ``H_I`` (the
    coupling energy ``2 int_0^t Im alpha``), all from trapezoidal
    integrals on the half-step kernel grid.
    """
    if kernels.grid.n_half != grid.n_half or kernels.grid.dt != grid.dt:
        raise UsageError("kernel table and grid differ")
    h = grid.half_step
    inner = _cumtrapz(kernels.alpha_T.real, h)
    env = np.exp(-4.0 * _cumtrapz(inner, h))[::2]
    t = grid.times() - grid.t_start
    H_I = 2.0 * _cumtrapz(kernels.alpha.imag, h)[::2]
    return {
        "t": t,
        "envelope": env,
        "sx": np.cos(omega0 * t) * env * x0,
        "sy": np.sin(omega0 * t) * env * x0,
        "H_I": H_I,
    }


def pulsed_dephasing_oracle(omega0, kernels: KernelTable, grid: TimeGrid, pulse_times, x0=1.0):
    """Exact pure-dephasing averages under ideal pi pulses about y.

    Each pulse maps the coherence ``c = <sx> + i <sy>`` to ``-conj(c)``, so the
    bath sees the coupling with a sign ``f(s) = +-1`` that flips at every
    pulse. The envelope is ``exp(-4 int_0^t ds f(s) int_0^s ds1 f(s1) Re alpha_T(s - s1))``
    and the phase follows the noise-free pulsed precession. Pulse times are
    snapped to full steps like the integrator does.
    """
    if kernels.grid.n_half != grid.n_half or kernels.grid.dt != grid.dt:
        raise UsageError("kernel table and grid differ")
    h = grid.half_step
    steps = sorted(int(round((p - grid.t_start) / grid.dt)) for p in pulse_times)
    steps = [k for k in steps if 0 <= k <= grid.n_steps]
    n = grid.n_half
    # f on the half-step grid; a pulse at full step k flips f after point 2k
    f = np.ones(n)
    for k in steps:
        f[2 * k + 1:] *= -1
    k_re = kernels.alpha_T.real
    lag = np.abs(np.arange(n)[:, None] - np.arange(n)[None, :])
    w = np.tril(k_re[lag]) * f[None, :]
    w[:, 0] *= 0.5
    w[np.arange(n), np.arange(n)] *= 0.5
    inner = h * w.sum(axis=1)
    inner[0] = 0.0
    env = np.exp(-4.0 * _cumtrapz(f * inner, h))[::2]
    t = grid.times() - grid.t_start
    c = np.empty(grid.n_steps + 1, dtype=complex)
    cur, last, queue = complex(x0), 0.0, list(steps)
    for j in range(grid.n_steps + 1):
        cur *= np.exp(1j * omega0 * (t[j] - last))
        last = t[j]
        while queue and queue[0] == j:
            cur = -cur.conjugate()
            queue.pop(0)
        c[j] = cur
    return {"t": t, "envelope": env, "sx": c.real * env, "sy": c.imag * env}


@dataclass(frozen=True)
class Pump:
    """Lab-frame pump ``(rabi/2) sin((omega0 + detuning) t) sx``."""

    rabi: float
    detuning: float = 0.0


def make_spin_boson(omega0, pump: Pump | None = None, *, initial_state=None):
    """H = omega0/2 sz, S = sx; excited start, or ground start when pumped."""
    if not omega0 > 0:
        raise DomainError(f"omega0 must be > 0, got {omega0}")
    if initial_state is None:
        initial_state = "excited" if pump is None else "ground"
    drive = ()
    if pump is not None and pump.rabi != 0:
        w = omega0 + pump.detuning
        amp = 0.5 * pump.rabi
        drive = (("pump", SX, lambda t: amp * np.sin(w * t)),)
    params = {"omega0": omega0}
    if pump is not None:
        params.update(pump_rabi=pump.rabi, pump_detuning=pump.detuning)
    return build_model("spin_boson", 0.5 * omega0 * SZ, SX, PAULI_BASIS,
                       density_matrix(initial_state), names=PAULI_NAMES, drive=drive,
                       params=params)


@dataclass(frozen=True)
class GaussianPulse:
    """Rabi envelope ``peak exp(-(t/tau)^2)`` centred at t = 0."""

    peak: float
    tau: float

    @property
    def area(self):
        return math.sqrt(math.pi) * self.peak * self.tau

    def __call__(self, t):
        return self.peak * np.exp(-((np.asarray(t) / self.tau) ** 2))

    def start_time(self, widths=3.0):
        return -widths * self.tau


def make_quantum_dot(delta, rabi, *, initial_state="ground"):
    """Rotating-frame dot: H = delta/2 sz + Omega(t)/2 sx, S = sz/2.

    ``rabi`` is a constant Rabi frequency or a :class:`GaussianPulse`.
    Units are ps^-1 throughout.
    """
    H = 0.5 * delta * SZ
    drive = ()
    params = {"delta": delta}
    if isinstance(rabi, GaussianPulse):
        pulse = rabi
        drive = (("rabi", 0.5 * SX, lambda t: pulse(t)),)
        params.update(rabi_peak=rabi.peak, rabi_tau=rabi.tau)
    else:
        H = H + 0.5 * float(rabi) * SX
        params["rabi"] = float(rabi)
    return build_model("quantum_dot", H, 0.5 * SZ, PAULI_BASIS,
                       density_matrix(initial_state), names=PAULI_NAMES,
                       extra_observables={"population": 0.5 * (I2 + SZ)}, drive=drive,
                       params=params)
