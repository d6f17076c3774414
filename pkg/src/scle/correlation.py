"""Bath spectral densities and their correlation kernels on the simulation grid.

All kernels are one-sided cosine/sine transforms of the spectral density,
truncated at ``omega_max`` and evaluated with composite Gauss-Legendre
quadrature whose panel count is doubled until the tabulated values settle.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, QuadratureError, UsageError

#: Default truncation of the frequency integrals, in units of the cutoff.
DEFAULT_BAND_RATIO = 50.0
#: Smallest admissible ``omega_max / cutoff``.
MIN_BAND_RATIO = 10.0

_GL_ORDER = 16
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(_GL_ORDER)
# cap on the size of one cos/sin block (elements) so memory stays bounded
_BLOCK_ELEMS = 2_000_000


class SpectralKind(str, enum.Enum):
    OHMIC_DEBYE = "ohmic_debye"
    SUPER_OHMIC_GAUSS = "super_ohmic_gauss"


@dataclass(frozen=True)
class SpectralDensity:
    """Continuous bath spectrum J(omega).

    Parameters
    ----------
    kind : SpectralKind
        ``OHMIC_DEBYE``: ``J = G wc^2 w / (pi (wc^2 + w^2))``.
        ``SUPER_OHMIC_GAUSS``: ``J = a w^3 exp(-(w/wc)^2)``.
    coupling : float
        Gamma (frequency units) or alpha (inverse frequency squared).
    cutoff : float
        Cutoff frequency ``wc``.
    omega_max : float, optional
        Upper limit of every frequency integral. Defaults to
        ``50 * cutoff``; must be at least ``min_band_ratio * cutoff``.
    """

    kind: SpectralKind
    coupling: float
    cutoff: float
    omega_max: float | None = None
    min_band_ratio: float = MIN_BAND_RATIO

    def __post_init__(self):
        object.__setattr__(self, "kind", SpectralKind(self.kind))
        if not (self.coupling >= 0 and math.isfinite(self.coupling)):
            raise DomainError(f"coupling must be finite and >= 0, got {self.coupling}")
        if not (self.cutoff > 0 and math.isfinite(self.cutoff)):
            raise DomainError(f"cutoff must be finite and > 0, got {self.cutoff}")
        if self.omega_max is None:
            object.__setattr__(self, "omega_max", DEFAULT_BAND_RATIO * self.cutoff)
        if not (self.omega_max > 0 and math.isfinite(self.omega_max)):
            raise DomainError(f"omega_max must be finite and > 0, got {self.omega_max}")
        if self.omega_max < self.min_band_ratio * self.cutoff * (1 - 1e-12):
            raise DomainError(
                f"omega_max={self.omega_max} is below {self.min_band_ratio} x cutoff"
            )

    def __call__(self, omega):
        return eval_spectral_density(self, omega)

    def over_omega(self, omega):
        """J(omega)/omega, finite at omega = 0."""
        w = np.asarray(omega, dtype=float)
        wc = self.cutoff
        if self.kind is SpectralKind.OHMIC_DEBYE:
            return self.coupling * wc**2 / (np.pi * (wc**2 + w**2))
        return self.coupling * w**2 * np.exp(-((w / wc) ** 2))

    def slope_at_zero(self):
        """J'(0)."""
        return float(self.over_omega(0.0))

    def thermal_weight(self, omega, beta):
        """J(omega) coth(beta omega / 2) with the omega -> 0 limit built in."""
        w = np.asarray(omega, dtype=float)
        if math.isinf(beta):
            return self.over_omega(w) * w
        x = 0.5 * beta * w
        small = np.abs(x) < 1e-6
        xs = np.where(small, 1.0, x)
        x_coth_x = np.where(small, 1.0 + x**2 / 3.0, xs / np.tanh(xs))
        return self.over_omega(w) * (2.0 / beta) * x_coth_x


def eval_spectral_density(spec: SpectralDensity, omega):
    """Evaluate J(omega) for ``omega >= 0`` (scalar or array)."""
    w = np.asarray(omega, dtype=float)
    if np.any(w < 0) or np.any(np.isnan(w)):
        raise DomainError("spectral density is defined for omega >= 0 only")
    out = spec.over_omega(w) * w
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_start + j dt`` plus its half-step refinement.

    Kernels and noises live on the half-step points ``k dt/2`` for
    ``k = 0 .. 2 n_steps``; observables are recorded at full steps.
    """

    dt: float
    n_steps: int
    t_start: float = 0.0

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise DomainError(f"dt must be > 0, got {self.dt}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise DomainError(f"n_steps must be a positive integer, got {self.n_steps}")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @classmethod
    def from_span(cls, dt, t_end, t_start=0.0, rtol=1e-9):
        """Grid covering ``[t_start, t_end]``; the span must be a multiple of dt."""
        ratio = (t_end - t_start) / dt
        n = round(ratio)
        if n < 1 or abs(ratio - n) > rtol * max(1.0, abs(ratio)):
            raise UsageError(
                f"t_end - t_start = {t_end - t_start} is not a positive multiple of dt = {dt}"
            )
        return cls(dt=dt, n_steps=n, t_start=t_start)

    @property
    def half_step(self):
        return 0.5 * self.dt

    @property
    def n_half(self):
        return 2 * self.n_steps + 1

    @property
    def t_end(self):
        return self.t_start + self.n_steps * self.dt

    def times(self):
        """Full-step times (length ``n_steps + 1``)."""
        return self.t_start + self.dt * np.arange(self.n_steps + 1)

    def half_times(self):
        """Half-step times (length ``2 n_steps + 1``)."""
        return self.t_start + self.half_step * np.arange(self.n_half)

    def lags(self):
        """Non-negative lags ``k dt/2`` on which kernels are tabulated."""
        return self.half_step * np.arange(self.n_half)


def _panel_rule(omega_max, n_panels):
    edges = np.linspace(0.0, omega_max, n_panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * _GL_NODES).ravel()
    weights = (half[:, None] * _GL_WEIGHTS).ravel()
    return nodes, weights


def _transform(weight_fn, t, omega_max, n_panels, parts):
    """Return {part: sum_w weight(w) trig(w t)} for part in ('cos', 'sin')."""
    nodes, weights = _panel_rule(omega_max, n_panels)
    f = weights * weight_fn(nodes)
    out = {p: np.empty(t.shape) for p in parts}
    block = max(1, _BLOCK_ELEMS // max(1, nodes.size))
    for i in range(0, t.size, block):
        ph = np.outer(t[i:i + block], nodes)
        if "cos" in parts:
            out["cos"][i:i + block] = np.cos(ph) @ f
        if "sin" in parts:
            out["sin"][i:i + block] = np.sin(ph) @ f
    return out


def _converged_transform(weight_fn, t, omega_max, parts, tol, max_panels):
    """Doubling loop around :func:`_transform` until all parts settle."""
    t = np.asarray(t, dtype=float)
    t_max = float(np.max(np.abs(t))) if t.size else 0.0
    # enough panels to resolve the fastest oscillation before the first check
    n_panels = max(64, int(math.ceil(omega_max * t_max / math.pi)))
    prev = _transform(weight_fn, t, omega_max, n_panels, parts)
    while True:
        n_panels *= 2
        cur = _transform(weight_fn, t, omega_max, n_panels, parts)
        scale = max(max(np.max(np.abs(cur[p]), initial=0.0) for p in parts), 1e-300)
        change = max(np.max(np.abs(cur[p] - prev[p]), initial=0.0) for p in parts)
        if change <= tol * scale or scale <= 1e-300:
            return cur, {"panels": n_panels, "change": change, "scale": scale}
        if n_panels >= max_panels:
            raise QuadratureError(
                f"kernel quadrature did not settle: change {change:.3e} vs "
                f"tolerance {tol * scale:.3e} at {n_panels} panels",
                {"panels": n_panels, "change": change, "scale": scale, "tol": tol},
            )
        prev = cur


def correlation_at(spec: SpectralDensity, t, beta=math.inf, *, tol=1e-8,
                   max_panels=1 << 16, zero_temperature=False):
    """alpha_T(t) (or alpha(t) if ``zero_temperature``) at arbitrary times.

    Negative times are allowed; the real part is even and the imaginary
    part odd in ``t``.
    """
    if not (beta > 0):
        raise DomainError(f"beta must be > 0 or inf, got {beta}")
    t = np.asarray(t, dtype=float)
    def im_fn(w):
        return spec.over_omega(w) * w

    if zero_temperature or math.isinf(beta):
        re_fn = im_fn
    else:
        def re_fn(w):
            return spec.thermal_weight(w, beta)
    flat = t.ravel()
    re, _ = _converged_transform(re_fn, flat, spec.omega_max, ("cos",), tol, max_panels)
    im, _ = _converged_transform(im_fn, flat, spec.omega_max, ("sin",), tol, max_panels)
    return (re["cos"] - 1j * im["sin"]).reshape(t.shape)


def tabulate_alpha(spec: SpectralDensity, grid: TimeGrid, *, tol=1e-8):
    """Zero-temperature kernel alpha on the half-step lags of ``grid``."""
    return correlation_at(spec, grid.lags(), zero_temperature=True, tol=tol)


def tabulate_alpha_T(spec: SpectralDensity, beta, grid: TimeGrid, *, tol=1e-8):
    """Thermal kernel alpha_T on the half-step lags of ``grid``."""
    return correlation_at(spec, grid.lags(), beta=beta, tol=tol)


def tabulate_alpha_tilde(alpha, alpha_T):
    """alpha_T - alpha/2, pointwise."""
    alpha = np.asarray(alpha)
    alpha_T = np.asarray(alpha_T)
    if alpha.shape != alpha_T.shape:
        raise UsageError(
            f"kernel grids differ: alpha has {alpha.shape}, alpha_T has {alpha_T.shape}"
        )
    return alpha_T - alpha / 2


@dataclass(frozen=True)
class KernelTable:
    """Correlation kernels sampled on the half-step lags of ``grid``."""

    grid: TimeGrid
    spec: SpectralDensity
    beta: float
    alpha: np.ndarray = field(repr=False)
    alpha_T: np.ndarray = field(repr=False)
    alpha_tilde: np.ndarray = field(repr=False)

    def __post_init__(self):
        for name in ("alpha", "alpha_T", "alpha_tilde"):
            arr = np.asarray(getattr(self, name), dtype=complex)
            if arr.shape != (self.grid.n_half,):
                raise UsageError(f"{name} has shape {arr.shape}, expected ({self.grid.n_half},)")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def lags(self):
        return self.grid.lags()


def build_kernels(spec: SpectralDensity, beta, grid: TimeGrid, *, tol=1e-8) -> KernelTable:
    """Tabulate alpha, alpha_T and alpha_tilde for one bath on one grid."""
    alpha = tabulate_alpha(spec, grid, tol=tol)
    if math.isinf(beta):
        alpha_T = alpha.copy()
    else:
        alpha_T = tabulate_alpha_T(spec, beta, grid, tol=tol)
    return KernelTable(grid, spec, float(beta), alpha, alpha_T,
                       tabulate_alpha_tilde(alpha, alpha_T))


def omega_max_report(spec: SpectralDensity, beta, grid: TimeGrid,
                     ratios=(10, 20, 50, 100, 200)):
    """Sensitivity of the kernels to the frequency truncation.

    Returns one row per ``omega_max = ratio * cutoff`` with Re alpha_T(0)
    and the largest change of alpha_T over the grid relative to the
    widest band.
    """
    tables = []
    for r in ratios:
        s = SpectralDensity(spec.kind, spec.coupling, spec.cutoff,
                            omega_max=r * spec.cutoff, min_band_ratio=min(ratios))
        tables.append((r, s.omega_max, tabulate_alpha_T(s, beta, grid)))
    ref = tables[-1][2]
    rows = []
    for r, om, aT in tables:
        diff = np.abs(aT - ref)
        rows.append({
            "ratio": r,
            "omega_max": om,
            "re_alphaT0": float(aT[0].real),
            "max_abs_change": float(diff.max()),
            "max_abs_change_t_ge_1": float(diff[grid.lags() >= 1.0].max(initial=0.0)),
        })
    return rows
