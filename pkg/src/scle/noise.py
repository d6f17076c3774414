"""Correlated complex Gaussian noises (xi, eta, zeta) on the half-step grid.

Every noise path is a linear filter of six white sources on a circulant
of length ``pad_length``::

    x = ifft(a1 W1 + a3 W3 + b N + d Nbar + b2 N2 + d2 N2bar)

with ``W1, W3`` the DFTs of independent real standard normals, ``N, N2`` the
DFTs of independent circular complex normal paths ``n, n2`` and ``Nbar``
the DFT of ``conj(n)`` (likewise ``N2bar``). Only pseudo-correlations (no
conjugation) are ever contracted. For two such paths they are
``ifft(P_xy)`` at the lag with::

    P_xy(f) = a1x(f) a1y(-f) + a3x(f) a3y(-f) + bx(f) dy(-f) + dx(f) by(-f)
              + b2x(f) d2y(-f) + d2x(f) b2y(-f)

so the target kernels can be matched exactly on the grid, frequency by
frequency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .correlation import KernelTable, TimeGrid, correlation_at
from .errors import NoiseConstructionError, UsageError

CONSTRUCTIONS = ("minimal", "white")
PAIRS = ("eta_eta", "xi_eta", "xi_xi", "zeta_xi", "zeta_eta")
SQRT2 = math.sqrt(2.0)


def _neg(a):
    """a(-f) on the DFT frequency index."""
    return np.roll(a[..., ::-1], 1, axis=-1)


N_SOURCES = 6
# partner of each source under pseudo-pairing
_PARTNER = (0, 1, 3, 2, 5, 4)


def _pairing(x, y):
    """Pseudo cross-spectrum P_xy(f) of two filter sets of shape (6, L)."""
    ny = _neg(y)
    return sum(x[i] * ny[j] for i, j in enumerate(_PARTNER))


def _causal_fft(values, length):
    buf = np.zeros(length, dtype=complex)
    buf[: values.size] = values
    return np.fft.fft(buf)


def _even_fft(values, length):
    n = values.size
    buf = np.zeros(length)
    buf[:n] = values
    buf[length - n + 1:] = values[1:][::-1]
    return np.fft.fft(buf).real


def _safe_div(num, den):
    ok = den != 0
    return np.where(ok, num / np.where(ok, den, 1.0), 0.0)


@dataclass(frozen=True)
class NoisePlan:
    """Immutable filters that realize the target pseudo-correlations.

    Attributes
    ----------
    kernel_K, kernel_C, kernel_Q : ndarray
        Causal targets ``M{xi_t eta_s}``, ``M{zeta_t xi_s}``,
        ``M{zeta_t eta_s}`` at lags ``t - s = k dt/2 >= 0``.
        ``kernel_C[0]`` carries the half weight of the step function.
    kernel_xx : ndarray
        ``2 Re alpha_T`` at non-negative lags (``M{xi_t xi_s}``).
    chi_filter : ndarray
        Real even spectral root of ``kernel_xx``.
    filters : dict
        ``{"xi", "eta", "zeta"}`` -> complex (6, pad_length) source weights.
    diagnostics : dict
        Realized-kernel residuals, clipping and variance information.
    """

    grid: TimeGrid
    construction: str
    pad_length: int
    kernel_K: np.ndarray = field(repr=False)
    kernel_C: np.ndarray = field(repr=False)
    kernel_Q: np.ndarray = field(repr=False)
    kernel_xx: np.ndarray = field(repr=False)
    chi_filter: np.ndarray = field(repr=False)
    filters: dict = field(repr=False)
    diagnostics: dict = field(default_factory=dict)

    @property
    def mixing(self):
        m = self.__dict__.get("_mixing")
        if m is None:
            m = {k: _mixing(v) for k, v in self.filters.items()}
            object.__setattr__(self, "_mixing", m)
        return m

    @property
    def n_points(self):
        return self.grid.n_half

    def target(self, pair, lag_index):
        """Target pseudo-correlation for ``pair`` at signed half-step lags."""
        k = np.asarray(lag_index)
        ka = np.abs(k)
        pos = k >= 0
        if pair == "eta_eta":
            return np.zeros(k.shape, dtype=complex)
        if pair == "xi_xi":
            return self.kernel_xx[ka].astype(complex)
        table = {"xi_eta": self.kernel_K, "zeta_xi": self.kernel_C,
                 "zeta_eta": self.kernel_Q}[pair]
        return np.where(pos, table[ka], 0.0).astype(complex)


def causal_kernels(kernels: KernelTable):
    """(K, C, Q, xx) target kernels from a KernelTable."""
    aT = kernels.alpha_T
    at = kernels.alpha_tilde
    K = 2.0 * aT.imag
    C = 2.0 * SQRT2 * at.real
    C[0] *= 0.5
    Q = 2.0 * SQRT2 * at.imag
    # Im kernels vanish at zero lag; pin the roundoff so theta(0) is moot
    K[0] = 0.0
    Q[0] = 0.0
    return K, C, Q, 2.0 * aT.real


def _extend_xx(kernels: KernelTable, xx, n_lags):
    """2 Re alpha_T at lags 0 .. n_lags-1, computing lags beyond the table."""
    if n_lags <= xx.size:
        return xx[:n_lags]
    h = kernels.grid.half_step
    extra = correlation_at(kernels.spec, h * np.arange(xx.size, n_lags), kernels.beta)
    return np.concatenate([xx, 2.0 * extra.real])


def _default_length(n):
    return 1 << int(math.ceil(math.log2(2 * n - 1))) if n > 1 else 2


def _zeta_filters(xi, eta, C_hat, Q_hat, fixed):
    """Least-norm zeta weights with P_zx = C_hat and P_ze = Q_hat per frequency.

    ``fixed`` holds preset zeta weights on the second circular source; the
    first four weights are solved for the remainder.
    """
    L = C_hat.size
    targets = [C_hat - _pairing(fixed, xi), Q_hat - _pairing(fixed, eta)]
    rows = []
    for other in (xi, eta):
        o = _neg(other)
        rows.append(np.stack([o[_PARTNER[i]] for i in range(4)], axis=-1))
    A = np.stack(rows, axis=1)  # (L, 2, 4)
    y = np.stack(targets, axis=-1)[:, :, None]
    AH = np.conj(np.transpose(A, (0, 2, 1)))
    gram = A @ AH
    scale = np.abs(gram).max()
    out = fixed.astype(complex)
    if scale == 0:
        return out
    lam = 1e-12 * scale
    h = AH @ np.linalg.solve(gram + lam * np.eye(2), y)
    out[:4] = h[:, :, 0].T
    return out


def build_noise_plan(kernels: KernelTable, construction="minimal", *,
                     regularization=1e-3, zeta_split=1e-3, clip_tolerance=1e-2,
                     pad_length=None, max_pad=1 << 20):
    """Design filters for one kernel table.

    Parameters
    ----------
    kernels : KernelTable
    construction : {"minimal", "white"}
        ``"white"``: eta is complex white noise of intensity one,
        ``eta_k = (v1 + i v2)/sqrt(2 dt/2)``, and xi = K * conj(eta) + chi.
        ``"minimal"``: eta carries only the spectral content needed for the
        xi-eta cross kernel, which keeps trajectory variance bounded.
    regularization : float
        Relative floor ``rho / max(S)`` splitting the xi-eta cross spectrum
        between the chi source and the circular source (minimal only).
    zeta_split : float
        Relative floor ``rc / max(S)``: the part ``C rc/(S + rc)`` of the
        zeta-xi cross spectrum is carried by a second circular source shared
        by xi and zeta instead of by the chi source. Without it zeta needs
        ``C/G`` where the xi spectrum is tiny, which inflates its variance.
        0 disables the split.
    clip_tolerance : float
        Negative values of the xi spectrum above ``-clip_tolerance * max``
        are clipped to zero; deeper dips raise.
    pad_length : int, optional
        Circulant length, at least ``2 n - 1`` for ``n`` half-step points.
        By default the smallest power of two that also keeps the xi
        spectrum within the clip tolerance (up to ``max_pad``).
    """
    if construction not in CONSTRUCTIONS:
        raise UsageError(f"unknown noise construction {construction!r}; use {CONSTRUCTIONS}")
    grid = kernels.grid
    n = grid.n_half
    L = _default_length(n) if pad_length is None else int(pad_length)
    if L < 2 * n - 1:
        raise UsageError(f"pad_length {L} < 2*{n}-1; circular wrap would alias lags")
    delta = grid.half_step
    K, C, Q, xx = causal_kernels(kernels)

    # The xi autocovariance is embedded with its true values out to lag L/2.
    # A kernel cut at the end of a short grid is not positive definite on
    # the circulant, so L doubles until the spectrum is non-negative within
    # tolerance. The targets on the grid are unchanged by this.
    while True:
        S_raw = _even_fft(_extend_xx(kernels, xx, L // 2 + 1), L)
        s_max = float(S_raw.max(initial=0.0))
        worst = int(np.argmin(S_raw))
        bad = s_max > 0 and S_raw[worst] < -clip_tolerance * s_max
        if not bad or pad_length is not None or L >= max_pad:
            break
        L *= 2
    clipped = S_raw < 0
    if bad:
        freq = np.fft.fftfreq(L, d=delta)[worst] * 2 * np.pi
        raise NoiseConstructionError(
            f"xi spectrum negative beyond tolerance: {S_raw[worst]:.3e} at "
            f"omega={freq:.4g} (max {s_max:.3e}, tolerance {clip_tolerance:g}, length {L})",
            {"worst_value": float(S_raw[worst]), "worst_omega": float(freq), "max": s_max,
             "pad_length": L},
        )
    S = np.where(clipped, 0.0, S_raw)
    G = np.sqrt(S)
    K_hat = _causal_fft(K, L)
    C_hat = _causal_fft(C, L)
    Q_hat = _causal_fft(Q, L)

    zero = np.zeros(L, dtype=complex)
    if construction == "white":
        d_eta = np.full(L, 1.0 / math.sqrt(delta), dtype=complex)
        eta = np.stack([zero, zero, zero, d_eta, zero, zero])
        xi = np.stack([G.astype(complex), zero, K_hat * math.sqrt(delta), zero, zero, zero])
    else:
        rho = regularization * s_max
        den = S + rho
        K_c = _safe_div(K_hat * rho, den)
        M = _safe_div(np.conj(K_hat) * G, den)
        D = np.sqrt(np.abs(K_c))
        B = _safe_div(K_c, D)
        eta = np.stack([M, 1j * np.abs(M), zero, D.astype(complex), zero, zero])
        xi = np.stack([G.astype(complex), zero, B, zero, zero, zero])
    fixed = np.zeros((N_SOURCES, L), dtype=complex)
    if zeta_split > 0 and s_max > 0:
        rc = zeta_split * s_max
        C_c = C_hat * rc / (S + rc)
        b2 = np.sqrt(np.abs(C_c))
        xi[4] = b2
        fixed[5] = _safe_div(C_c, _neg(b2))
    zeta = _zeta_filters(xi, eta, C_hat, Q_hat, fixed)
    filters = {"xi": xi, "eta": eta, "zeta": zeta}
    for arr in filters.values():
        arr.setflags(write=False)

    plan = NoisePlan(grid, construction, L, K, C, Q, xx, G, filters)
    plan.diagnostics.update(
        clipped_count=int(clipped.sum()),
        clipped_weight=float(-S_raw[clipped].sum() / s_max) if s_max > 0 else 0.0,
        worst_negative=float(S_raw[worst] / s_max) if s_max > 0 else 0.0,
        residuals=realized_residuals(plan),
        variances={k: float((np.abs(v) ** 2).sum() / L) for k, v in filters.items()},
    )
    return plan


def realized_kernel(plan: NoisePlan, pair):
    """Exact pseudo-correlation of the plan at lags ``-(n-1) .. n-1``."""
    a, b = pair.split("_")
    pk = np.fft.ifft(_pairing(plan.filters[a], plan.filters[b]))
    n = plan.n_points
    lags = np.arange(-(n - 1), n)
    return lags, pk[lags % plan.pad_length]


def realized_residuals(plan: NoisePlan):
    """Max |realized - target| per pair, over all lags on the grid."""
    out = {}
    for pair in PAIRS:
        lags, vals = realized_kernel(plan, pair)
        out[pair] = float(np.abs(vals - plan.target(pair, lags)).max())
    return out


@dataclass(frozen=True)
class NoiseBundle:
    """One realization of the three noise paths on the half-step grid."""

    xi: np.ndarray
    eta: np.ndarray
    zeta: np.ndarray
    seed_tag: tuple


def trajectory_rng(master_seed, index):
    """Counter-based stream fully determined by (master_seed, index)."""
    key = np.array([int(master_seed) % (1 << 64), int(index) % (1 << 64)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _draw_sources(plan, master_seed, indices):
    """Spectra F = fft(w1 + i w3), N = fft(n), N2 = fft(n2) per trajectory."""
    L = plan.pad_length
    z = np.empty((len(indices), N_SOURCES, L))
    for row, i in enumerate(indices):
        trajectory_rng(master_seed, i).standard_normal(out=z[row])
    F = np.fft.fft(z[:, 0] + 1j * z[:, 1], axis=-1)
    N = np.fft.fft((z[:, 2] + 1j * z[:, 3]) / SQRT2, axis=-1)
    N2 = np.fft.fft((z[:, 4] + 1j * z[:, 5]) / SQRT2, axis=-1)
    return F, N, N2


def _mixing(filters):
    """Weights on (F, conj F(-f), N, conj N(-f), N2, conj N2(-f)).

    Uses W1 = (F + conj F(-f))/2, W3 = (F - conj F(-f))/(2i) and
    fft(conj n)(f) = conj N(-f).
    """
    a1, a3 = filters[0], filters[1]
    return np.stack([0.5 * (a1 - 1j * a3), 0.5 * (a1 + 1j * a3), *filters[2:]])


def sample_arrays(plan: NoisePlan, master_seed, indices):
    """Noise paths for several trajectories at once.

    Returns
    -------
    xi, eta, zeta : ndarray, complex, shape (len(indices), 2 n_steps + 1)
        Row ``r`` depends only on ``(master_seed, indices[r])``.
    """
    indices = list(indices)
    F, N, N2 = _draw_sources(plan, master_seed, indices)
    srcs = (F, np.conj(_neg(F)), N, np.conj(_neg(N)), N2, np.conj(_neg(N2)))
    n = plan.n_points
    out = []
    for name in ("xi", "eta", "zeta"):
        w = plan.mixing[name]
        spec = w[0] * srcs[0]
        for k in range(1, N_SOURCES):
            if np.any(w[k]):
                spec += w[k] * srcs[k]
        out.append(np.fft.ifft(spec, axis=-1)[:, :n])
    return tuple(out)


def sample_bundle(plan: NoisePlan, master_seed, index) -> NoiseBundle:
    """Single trajectory's noise bundle."""
    xi, eta, zeta = sample_arrays(plan, master_seed, [index])
    return NoiseBundle(xi[0], eta[0], zeta[0], (int(master_seed), int(index)))


class CorrelationAccumulator:
    """Streaming estimate of pseudo-correlations on a (t, s) probe grid.

    Sums of ``a_t b_s`` and of the squared real and imaginary parts are
    accumulated with matrix products so 200 x 200 probes stay cheap.
    """

    def __init__(self, probe, pairs=PAIRS):
        self.probe = np.asarray(probe, dtype=int)
        self.pairs = tuple(pairs)
        p = self.probe.size
        self.count = 0
        self.s1 = {k: np.zeros((p, p), dtype=complex) for k in self.pairs}
        self.s_re2 = {k: np.zeros((p, p)) for k in self.pairs}
        self.s_im2 = {k: np.zeros((p, p)) for k in self.pairs}

    def update(self, xi, eta, zeta):
        paths = {"xi": xi[:, self.probe], "eta": eta[:, self.probe],
                 "zeta": zeta[:, self.probe]}
        for pair in self.pairs:
            a_name, b_name = pair.split("_")
            a, b = paths[a_name], paths[b_name]
            ar, ai, br, bi = a.real, a.imag, b.real, b.imag
            self.s1[pair] += a.T @ b
            cross = (ar * ai).T @ (br * bi)
            ar2, ai2, br2, bi2 = ar**2, ai**2, br**2, bi**2
            self.s_re2[pair] += ar2.T @ br2 - 2 * cross + ai2.T @ bi2
            self.s_im2[pair] += ar2.T @ bi2 + 2 * cross + ai2.T @ br2
        self.count += xi.shape[0]

    def estimate(self, pair):
        """(mean, stderr_re, stderr_im) matrices indexed [t, s]."""
        n = self.count
        m = self.s1[pair] / n
        var_re = np.maximum(self.s_re2[pair] / n - m.real**2, 0.0) * n / max(n - 1, 1)
        var_im = np.maximum(self.s_im2[pair] / n - m.imag**2, 0.0) * n / max(n - 1, 1)
        return m, np.sqrt(var_re / n), np.sqrt(var_im / n)


def _zscore(diff, se):
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, diff / np.where(se > 0, se, 1.0),
                     np.where(np.abs(diff) > 0, np.inf, 0.0))
    return z


@dataclass
class CorrelationReport:
    """Per-pair comparison of empirical and target pseudo-correlations."""

    samples: int
    probe: np.ndarray
    lag_step: float
    rows: dict  # pair -> dict of (P, P) arrays: target, mean, se_re, se_im, z_re, z_im
    threshold: float = 5.0

    def max_abs_z(self, pair):
        r = self.rows[pair]
        return float(max(np.abs(r["z_re"]).max(), np.abs(r["z_im"]).max()))

    def passed(self, pair=None):
        pairs = self.rows if pair is None else [pair]
        return all(self.max_abs_z(p) <= self.threshold for p in pairs)


def empirical_correlation(source, pairs=PAIRS, *, probe=None, n_probe=200,
                          threshold=5.0, batch=256, min_samples=1000):
    """Compare empirical pseudo-correlations to the plan's targets.

    Parameters
    ----------
    source : tuple
        ``(plan, master_seed, n_samples)`` to draw bundles on the fly, or
        ``(plan, bundles)`` with a sequence of :class:`NoiseBundle`.
    pairs : sequence of str
        Any of ``eta_eta, xi_eta, xi_xi, zeta_xi, zeta_eta``.
    probe : array of int, optional
        Half-step indices probed for both t and s; by default ``n_probe``
        evenly spaced points over the grid.
    """
    plan = source[0]
    if probe is None:
        probe = np.unique(np.round(np.linspace(0, plan.n_points - 1,
                                               min(n_probe, plan.n_points))).astype(int))
    acc = CorrelationAccumulator(probe, pairs)
    if len(source) == 3:
        _, seed, n_samples = source
        if n_samples < min_samples:
            raise UsageError(f"need at least {min_samples} samples, got {n_samples}")
        for start in range(0, n_samples, batch):
            idx = range(start, min(start + batch, n_samples))
            acc.update(*sample_arrays(plan, seed, idx))
    else:
        bundles = list(source[1])
        if len(bundles) < min_samples:
            raise UsageError(f"need at least {min_samples} bundles, got {len(bundles)}")
        for start in range(0, len(bundles), batch):
            chunk = bundles[start:start + batch]
            acc.update(np.stack([b.xi for b in chunk]), np.stack([b.eta for b in chunk]),
                       np.stack([b.zeta for b in chunk]))
    lag = probe[:, None] - probe[None, :]
    rows = {}
    for pair in pairs:
        m, se_re, se_im = acc.estimate(pair)
        tgt = plan.target(pair, lag)
        rows[pair] = {
            "target": tgt, "mean": m, "se_re": se_re, "se_im": se_im,
            "z_re": _zscore(m.real - tgt.real, se_re),
            "z_im": _zscore(m.imag - tgt.imag, se_im),
        }
    return CorrelationReport(acc.count, probe, plan.grid.half_step, rows, threshold)
