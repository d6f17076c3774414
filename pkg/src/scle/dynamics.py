"""Linear stochastic equations for operator expectation vectors.

For a closed operator basis ``Y_l`` the structure constants are defined by::

    [H, Y_l] = sum_m H_lm Y_m,   [S, Y_l] = sum_m Sc_lm Y_m,   {S, Y_l} = sum_m Sa_lm Y_m

and one trajectory obeys::

    dY/dt = (i H + i C(t) + i xi/sqrt(2) Sc + eta/sqrt(2) Sa) Y
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable

import numba
import numpy as np
import scipy.linalg

from .correlation import TimeGrid
from .errors import ModelDefinitionError, UsageError

CLOSURE_TOL = 1e-12
DENSITY_TOL = 1e-10


def _project(basis_cols, target, label, tol=CLOSURE_TOL):
    coef, *_ = np.linalg.lstsq(basis_cols, target.ravel(), rcond=None)
    resid = np.linalg.norm(basis_cols @ coef - target.ravel())
    if resid > tol * max(1.0, np.linalg.norm(target)):
        raise ModelDefinitionError(
            f"basis is not closed: {label} leaves residual {resid:.3e}"
        )
    return coef


def _basis_columns(basis):
    mats = [np.asarray(b, dtype=complex) for b in basis]
    d = mats[0].shape[0]
    if any(m.shape != (d, d) for m in mats):
        raise ModelDefinitionError("basis elements must be square matrices of equal size")
    cols = np.stack([m.ravel() for m in mats], axis=1)
    if np.linalg.matrix_rank(cols) < len(mats):
        raise ModelDefinitionError("basis elements are linearly dependent")
    return mats, cols


def structure_constants(H_sys, S, basis):
    """Structure-constant matrices (H_mat, Sc_mat, Sa_mat) of H and S.

    Row ``l`` holds the expansion of the (anti)commutator with ``basis[l]``.
    Raises :class:`ModelDefinitionError` naming the first basis element
    whose image falls outside the span.
    """
    mats, cols = _basis_columns(basis)
    H = np.asarray(H_sys, dtype=complex)
    Sm = np.asarray(S, dtype=complex)
    n = len(mats)
    out = np.zeros((3, n, n), dtype=complex)
    for l, Y in enumerate(mats):
        out[0, l] = _project(cols, H @ Y - Y @ H, f"[H, Y_{l}]")
        out[1, l] = _project(cols, Sm @ Y - Y @ Sm, f"[S, Y_{l}]")
        out[2, l] = _project(cols, Sm @ Y + Y @ Sm, f"{{S, Y_{l}}}")
    return out[0], out[1], out[2]


def commutator_constants(op, basis):
    """Matrix G with [op, Y_l] = sum_m G_lm Y_m."""
    mats, cols = _basis_columns(basis)
    op = np.asarray(op, dtype=complex)
    return np.stack([_project(cols, op @ Y - Y @ op, f"[op, Y_{l}]")
                     for l, Y in enumerate(mats)])


def operator_coeffs(op, basis):
    """Expansion ``op = sum_l b_l Y_l``, so ``<op> = sum_l b_l <Y_l>``."""
    _, cols = _basis_columns(basis)
    return _project(cols, np.asarray(op, dtype=complex), "operator expansion")


def init_vector(basis, rho0):
    """Initial expectation vector ``Tr(Y_l rho0)``."""
    rho = np.asarray(rho0, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ModelDefinitionError("density matrix must be square")
    if np.abs(rho - rho.conj().T).max() > DENSITY_TOL:
        raise ModelDefinitionError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1) > DENSITY_TOL:
        raise ModelDefinitionError(f"density matrix trace is {np.trace(rho).real:.12g}, not 1")
    if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() < -DENSITY_TOL:
        raise ModelDefinitionError("density matrix is not positive semidefinite")
    return np.array([np.trace(np.asarray(Y, dtype=complex) @ rho) for Y in basis])


@dataclass(frozen=True)
class PulseEvent:
    """Impulsive control: ``Y <- map @ Y`` at ``time``."""

    time: float
    map: np.ndarray = field(repr=False)


def pulse_map(generator_constants, angle):
    """Adjoint action of ``exp(-i angle G)`` on the expectation vector.

    ``generator_constants`` is the commutator matrix of ``G`` (see
    :func:`commutator_constants`); for ``G = sigma_y`` and ``angle = pi/2``
    this flips the signs of the x and z components.
    """
    return scipy.linalg.expm(1j * angle * np.asarray(generator_constants, dtype=complex))


def apply_pulse(Y, pulse: PulseEvent):
    return pulse.map @ Y


@dataclass(frozen=True)
class DriveTerm:
    """One term ``c(t) O`` of a time-dependent control Hamiltonian."""

    name: str
    constants: np.ndarray = field(repr=False)  # commutator matrix of O
    coefficient: Callable = field(repr=False)  # vectorized c(t), real valued


@dataclass(frozen=True)
class OperatorBasisModel:
    """Everything one trajectory needs besides its noise.

    ``observable_maps`` maps names to coefficient vectors ``b`` with
    ``<B> = sum_l b_l <Y_l>``. ``coupling_coeffs`` and ``identity_coeffs``
    expand S and the identity; they feed the bath estimators.
    """

    name: str
    H_mat: np.ndarray = field(repr=False)
    Sc_mat: np.ndarray = field(repr=False)
    Sa_mat: np.ndarray = field(repr=False)
    init_vector: np.ndarray = field(repr=False)
    observable_maps: dict = field(default_factory=dict, repr=False)
    coupling_coeffs: np.ndarray | None = field(default=None, repr=False)
    identity_coeffs: np.ndarray | None = field(default=None, repr=False)
    drive: tuple = ()
    pulses: tuple = ()
    basis: tuple | None = field(default=None, repr=False)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.basis_dim
        for name in ("H_mat", "Sc_mat", "Sa_mat"):
            if np.shape(getattr(self, name)) != (n, n):
                raise ModelDefinitionError(f"{name} must be {n}x{n}")
        for d in self.drive:
            if np.shape(d.constants) != (n, n):
                raise ModelDefinitionError(f"drive term {d.name!r} must be {n}x{n}")
        for p in self.pulses:
            if np.shape(p.map) != (n, n):
                raise ModelDefinitionError(f"pulse map at t={p.time} must be {n}x{n}")
        for k, b in self.observable_maps.items():
            if np.shape(b) != (n,):
                raise ModelDefinitionError(f"observable {k!r} needs {n} coefficients")
        object.__setattr__(self, "pulses", tuple(sorted(self.pulses, key=lambda p: p.time)))

    @property
    def basis_dim(self):
        return int(np.shape(self.init_vector)[0])

    def with_init(self, y0):
        return dataclasses.replace(self, init_vector=np.asarray(y0, dtype=complex))


@dataclass(frozen=True)
class Trajectory:
    """Expectation vector at full steps plus the matching zeta samples."""

    grid: TimeGrid
    Y_path: np.ndarray
    zeta_path: np.ndarray | None
    valid: bool = True


def _drive_table(model, grid):
    n = model.basis_dim
    if not model.drive:
        return np.zeros((0, n, n), dtype=complex), np.zeros((0, grid.n_half))
    mats = np.stack([1j * np.asarray(d.constants, dtype=complex) for d in model.drive])
    t = grid.half_times()
    coef = np.stack([np.broadcast_to(np.asarray(d.coefficient(t), dtype=float), t.shape)
                     for d in model.drive])
    return mats, coef


def _pulse_table(model, grid):
    n = model.basis_dim
    steps, maps = [], []
    for p in model.pulses:
        k = int(round((p.time - grid.t_start) / grid.dt))
        if 0 <= k <= grid.n_steps:
            steps.append(k)
            maps.append(np.asarray(p.map, dtype=complex))
    if not steps:
        return np.full(1, -1, dtype=np.int64), np.zeros((1, n, n), dtype=complex)
    return np.asarray(steps + [-1], dtype=np.int64), np.stack(maps + [np.eye(n)])


@numba.njit(cache=True)
def _assemble(A, base, dmats, dcoef, j, xi_j, eta_j, Sc_i, Sa_h):
    n = base.shape[0]
    for r in range(n):
        for c in range(n):
            v = base[r, c] + xi_j * Sc_i[r, c] + eta_j * Sa_h[r, c]
            for d in range(dmats.shape[0]):
                v += dcoef[d, j] * dmats[d, r, c]
            A[r, c] = v


@numba.njit(cache=True)
def _matvec(out, A, y):
    n = A.shape[0]
    for r in range(n):
        acc = 0j
        for c in range(n):
            acc += A[r, c] * y[c]
        out[r] = acc


@numba.njit(cache=True)
def _rk4_kernel(base, Sc_i, Sa_h, dmats, dcoef, xi, eta, y0, dt,
                pulse_steps, pulse_maps, out, valid):
    n_traj = xi.shape[0]
    n_steps = out.shape[1] - 1
    n = base.shape[0]
    A = np.empty((n, n), dtype=np.complex128)
    y = np.empty(n, dtype=np.complex128)
    tmp = np.empty(n, dtype=np.complex128)
    k1 = np.empty(n, dtype=np.complex128)
    k2 = np.empty(n, dtype=np.complex128)
    k3 = np.empty(n, dtype=np.complex128)
    k4 = np.empty(n, dtype=np.complex128)
    h2 = 0.5 * dt
    for b in range(n_traj):
        for r in range(n):
            y[r] = y0[r]
        ok = True
        p = 0
        for s in range(n_steps + 1):
            if s > 0:
                j = 2 * (s - 1)
                _assemble(A, base, dmats, dcoef, j, xi[b, j], eta[b, j], Sc_i, Sa_h)
                _matvec(k1, A, y)
                for r in range(n):
                    tmp[r] = y[r] + h2 * k1[r]
                _assemble(A, base, dmats, dcoef, j + 1, xi[b, j + 1], eta[b, j + 1], Sc_i, Sa_h)
                _matvec(k2, A, tmp)
                for r in range(n):
                    tmp[r] = y[r] + h2 * k2[r]
                _matvec(k3, A, tmp)
                for r in range(n):
                    tmp[r] = y[r] + dt * k3[r]
                _assemble(A, base, dmats, dcoef, j + 2, xi[b, j + 2], eta[b, j + 2], Sc_i, Sa_h)
                _matvec(k4, A, tmp)
                for r in range(n):
                    y[r] = y[r] + dt / 6.0 * (k1[r] + 2.0 * k2[r] + 2.0 * k3[r] + k4[r])
            while pulse_steps[p] == s:
                for r in range(n):
                    acc = 0j
                    for c in range(n):
                        acc += pulse_maps[p, r, c] * y[c]
                    tmp[r] = acc
                for r in range(n):
                    y[r] = tmp[r]
                p += 1
            for r in range(n):
                v = y[r]
                if not (math.isfinite(v.real) and math.isfinite(v.imag)):
                    ok = False
                out[b, s, r] = v
            if not ok:
                for s2 in range(s + 1, n_steps + 1):
                    for r in range(n):
                        out[b, s2, r] = np.nan
                break
        valid[b] = ok


@dataclass(frozen=True)
class CompiledModel:
    """Plain-array form of a model on one grid (picklable for workers)."""

    base: np.ndarray
    Sc_i: np.ndarray
    Sa_h: np.ndarray
    dmats: np.ndarray
    dcoef: np.ndarray
    pulse_steps: np.ndarray
    pulse_maps: np.ndarray
    y0: np.ndarray
    dt: float
    n_steps: int

    @property
    def n_half(self):
        return 2 * self.n_steps + 1


def compile_model(model: OperatorBasisModel, grid: TimeGrid, y0=None) -> CompiledModel:
    """Evaluate drives on the half-step grid and snap pulses to full steps."""
    c = np.ascontiguousarray
    y0 = np.asarray(model.init_vector if y0 is None else y0, dtype=complex)
    if y0.shape != (model.basis_dim,):
        raise UsageError(f"initial vector must have {model.basis_dim} entries")
    dmats, dcoef = _drive_table(model, grid)
    psteps, pmaps = _pulse_table(model, grid)
    return CompiledModel(
        base=c(1j * np.asarray(model.H_mat, dtype=complex)),
        Sc_i=c(1j * np.asarray(model.Sc_mat, dtype=complex) / math.sqrt(2.0)),
        Sa_h=c(np.asarray(model.Sa_mat, dtype=complex) / math.sqrt(2.0)),
        dmats=c(dmats), dcoef=c(dcoef), pulse_steps=psteps, pulse_maps=c(pmaps),
        y0=c(y0), dt=float(grid.dt), n_steps=grid.n_steps,
    )


def integrate_compiled(cm: CompiledModel, xi, eta):
    """RK4 over a batch of noise paths; see :func:`integrate_batch`."""
    xi = np.ascontiguousarray(np.atleast_2d(xi), dtype=complex)
    eta = np.ascontiguousarray(np.atleast_2d(eta), dtype=complex)
    if xi.shape != eta.shape or xi.shape[1] != cm.n_half:
        raise UsageError(
            f"noise shape {xi.shape}/{eta.shape} does not match grid with {cm.n_half} points"
        )
    out = np.empty((xi.shape[0], cm.n_steps + 1, cm.y0.size), dtype=complex)
    valid = np.empty(xi.shape[0], dtype=np.bool_)
    _rk4_kernel(cm.base, cm.Sc_i, cm.Sa_h, cm.dmats, cm.dcoef, xi, eta, cm.y0, cm.dt,
                cm.pulse_steps, cm.pulse_maps, out, valid)
    return out, valid


def integrate_batch(model: OperatorBasisModel, xi, eta, grid: TimeGrid, y0=None):
    """RK4 integration of several trajectories.

    Parameters
    ----------
    xi, eta : ndarray, complex, shape (B, 2 n_steps + 1)
        Noise on the half-step grid, read at step starts, midpoints and ends.
    y0 : ndarray, optional
        Initial vector (defaults to ``model.init_vector``).

    Returns
    -------
    Y : ndarray, complex, shape (B, n_steps + 1, n)
    valid : ndarray of bool, shape (B,)
        False where a non-finite value appeared; later entries are NaN.
    """
    return integrate_compiled(compile_model(model, grid, y0), xi, eta)


def integrate_trajectory(model: OperatorBasisModel, bundle, grid: TimeGrid) -> Trajectory:
    """Integrate one trajectory driven by a :class:`NoiseBundle`."""
    Y, valid = integrate_batch(model, bundle.xi[None], bundle.eta[None], grid)
    zeta = None if bundle.zeta is None else bundle.zeta[::2]
    return Trajectory(grid, Y[0], zeta, bool(valid[0]))
