"""Trajectory ensembles, streaming statistics and checkpoints.

Trajectories are grouped into fixed chunks of ``chunk_size`` indices and,
inside a chunk, fixed blocks of ``batch_size``. Statistics of a block are
computed directly and merged in index order, so the result does not depend
on how chunks are distributed over worker processes.
"""

from __future__ import annotations

import enum
import json
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .correlation import TimeGrid
from .dynamics import CompiledModel, OperatorBasisModel, compile_model, integrate_compiled
from .errors import RunError, UsageError
from .noise import NoisePlan, sample_arrays

MAX_REJECT_FRACTION = 1e-3
CHECKPOINT_MAGIC = b"SCLECKPT"
CHECKPOINT_VERSION = 1


class ObservableKind(str, enum.Enum):
    SYSTEM = "system"
    COUPLING_ENERGY = "coupling_energy"
    BATH_DISPLACEMENT = "bath_displacement"


@dataclass(frozen=True)
class ObservableRequest:
    """Estimator ``sum_l b_l Y_l``, times zeta for the bath kinds."""

    name: str
    kind: ObservableKind
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", ObservableKind(self.kind))
        object.__setattr__(self, "coeffs", np.asarray(self.coeffs, dtype=complex))


def requests_for(model: OperatorBasisModel, names):
    """Resolve observable names against a model.

    ``coupling_energy`` and ``bath_displacement`` are the bath estimators;
    every other name must be one of ``model.observable_maps``.
    """
    out = []
    for nm in names:
        if nm == "coupling_energy":
            out.append(ObservableRequest(nm, ObservableKind.COUPLING_ENERGY, model.coupling_coeffs))
        elif nm == "bath_displacement":
            out.append(ObservableRequest(nm, ObservableKind.BATH_DISPLACEMENT,
                                         model.identity_coeffs))
        elif nm in model.observable_maps:
            out.append(ObservableRequest(nm, ObservableKind.SYSTEM, model.observable_maps[nm]))
        else:
            known = sorted(model.observable_maps) + ["coupling_energy", "bath_displacement"]
            raise UsageError(f"unknown observable {nm!r} for model {model.name}; known: {known}")
    for r in out:
        if r.coeffs.shape != (model.basis_dim,):
            raise UsageError(f"observable {r.name!r} needs {model.basis_dim} coefficients")
    return out


class EnsembleAccumulator:
    """Per-observable, per-time streaming mean and M2.

    Real and imaginary parts keep separate M2 so their standard errors can
    be reported independently.
    """

    def __init__(self, names, n_times, master_seed=0):
        self.names = tuple(names)
        self.n_times = int(n_times)
        self.master_seed = int(master_seed)
        self.count = 0
        self.rejected = 0
        shape = (len(self.names), self.n_times)
        self.mean = np.zeros(shape, dtype=complex)
        self.m2_re = np.zeros(shape)
        self.m2_im = np.zeros(shape)

    @classmethod
    def from_samples(cls, names, values, master_seed=0, rejected=0):
        """Accumulator of a block; ``values`` has shape (B, R, T)."""
        values = np.asarray(values, dtype=complex)
        acc = cls(names, values.shape[2], master_seed)
        acc.rejected = int(rejected)
        if values.shape[0]:
            acc.count = values.shape[0]
            acc.mean = values.mean(axis=0)
            dev = values - acc.mean
            acc.m2_re = np.sum(dev.real**2, axis=0)
            acc.m2_im = np.sum(dev.imag**2, axis=0)
        return acc

    def _check(self, other):
        if self.names != other.names or self.n_times != other.n_times:
            raise UsageError("cannot merge accumulators with different observables or grids")

    def merge(self, other):
        """Pairwise (Chan) combination; returns a new accumulator."""
        self._check(other)
        out = EnsembleAccumulator(self.names, self.n_times, self.master_seed)
        out.rejected = self.rejected + other.rejected
        na, nb = self.count, other.count
        n = na + nb
        out.count = n
        if nb == 0:
            out.mean, out.m2_re, out.m2_im = self.mean.copy(), self.m2_re.copy(), self.m2_im.copy()
        elif na == 0:
            out.mean, out.m2_re, out.m2_im = other.mean.copy(), other.m2_re.copy(), other.m2_im.copy()
        else:
            delta = other.mean - self.mean
            out.mean = self.mean + delta * (nb / n)
            w = na * nb / n
            out.m2_re = self.m2_re + other.m2_re + delta.real**2 * w
            out.m2_im = self.m2_im + other.m2_im + delta.imag**2 * w
        return out

    def variance(self):
        """(var_re, var_im) with the unbiased denominator."""
        d = max(self.count - 1, 1)
        return self.m2_re / d, self.m2_im / d

    def stderr(self):
        n = max(self.count, 1)
        vr, vi = self.variance()
        return np.sqrt(vr / n), np.sqrt(vi / n)


def merge_accumulators(a: EnsembleAccumulator, b: EnsembleAccumulator):
    return a.merge(b)


@dataclass
class EnsembleResult:
    """Averaged estimators on the full-step grid.

    ``stderr`` combines real and imaginary parts,
    ``sqrt(stderr_re**2 + stderr_im**2)``.
    """

    grid: TimeGrid
    names: tuple
    mean: np.ndarray
    stderr_re: np.ndarray
    stderr_im: np.ndarray
    count: int
    rejected: int
    metadata: dict = field(default_factory=dict)
    complete: bool = True

    @property
    def stderr(self):
        return np.hypot(self.stderr_re, self.stderr_im)

    def __getitem__(self, name):
        return self.mean[self.names.index(name)]

    def error(self, name, part="total"):
        k = self.names.index(name)
        return {"total": self.stderr, "re": self.stderr_re, "im": self.stderr_im}[part][k]

    @classmethod
    def from_accumulator(cls, grid, acc: EnsembleAccumulator, metadata=None, complete=True):
        se_re, se_im = acc.stderr()
        return cls(grid, acc.names, acc.mean.copy(), se_re, se_im, acc.count, acc.rejected,
                   dict(metadata or {}), complete)


def estimator_values(Y, zeta_full, requests):
    """Stack estimator samples, shape (B, R, T)."""
    out = np.empty((Y.shape[0], len(requests), Y.shape[1]), dtype=complex)
    for k, r in enumerate(requests):
        v = Y @ r.coeffs
        if r.kind is not ObservableKind.SYSTEM:
            v = v * zeta_full
        out[:, k] = v
    return out


_WORKER = {}


def _init_worker(cm, plan, requests, names, seed, batch_size):
    _WORKER.update(cm=cm, plan=plan, requests=requests, names=names, seed=seed,
                   batch_size=batch_size)


def _chunk_stats(cm: CompiledModel, plan: NoisePlan, requests, names, seed, start, stop,
                 batch_size):
    acc = EnsembleAccumulator(names, cm.n_steps + 1, seed)
    for b0 in range(start, stop, batch_size):
        idx = range(b0, min(b0 + batch_size, stop))
        xi, eta, zeta = sample_arrays(plan, seed, idx)
        Y, valid = integrate_compiled(cm, xi, eta)
        vals = estimator_values(Y[valid], zeta[valid][:, ::2], requests)
        acc = acc.merge(EnsembleAccumulator.from_samples(names, vals, seed,
                                                         rejected=int((~valid).sum())))
    return acc


def _chunk_task(bounds):
    w = _WORKER
    return _chunk_stats(w["cm"], w["plan"], w["requests"], w["names"], w["seed"],
                        bounds[0], bounds[1], w["batch_size"])


def write_checkpoint(path, acc: EnsembleAccumulator, header: dict):
    """Binary snapshot.

    Layout (little endian): 8-byte magic ``SCLECKPT``, uint32 format
    version, uint32 length of a UTF-8 JSON header, the header, then the raw
    arrays ``mean`` (complex128), ``m2_re`` and ``m2_im`` (float64), each of
    shape (n_observables, n_times) in C order.
    """
    head = dict(header)
    head.update(names=list(acc.names), n_times=acc.n_times, count=acc.count,
                rejected=acc.rejected, master_seed=acc.master_seed)
    blob = json.dumps(head, sort_keys=True).encode()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(acc.mean.astype("<c16").tobytes())
        fh.write(acc.m2_re.astype("<f8").tobytes())
        fh.write(acc.m2_im.astype("<f8").tobytes())
    os.replace(tmp, path)


def read_checkpoint(path):
    """Inverse of :func:`write_checkpoint`; returns (accumulator, header)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != CHECKPOINT_MAGIC:
        raise RunError(f"{path} is not a checkpoint file")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != CHECKPOINT_VERSION:
        raise RunError(f"checkpoint format {version} is not supported")
    head = json.loads(data[16:16 + hlen].decode())
    acc = EnsembleAccumulator(head["names"], head["n_times"], head["master_seed"])
    r, t = len(acc.names), acc.n_times
    off = 16 + hlen
    nb = r * t
    acc.mean = np.frombuffer(data, "<c16", nb, off).reshape(r, t).astype(complex)
    off += 16 * nb
    acc.m2_re = np.frombuffer(data, "<f8", nb, off).reshape(r, t).astype(float)
    off += 8 * nb
    acc.m2_im = np.frombuffer(data, "<f8", nb, off).reshape(r, t).astype(float)
    acc.count = head["count"]
    acc.rejected = head["rejected"]
    return acc, head


def run_ensemble(model: OperatorBasisModel, plan: NoisePlan, n_traj, master_seed, requests,
                 *, workers=1, chunk_size=1000, batch_size=250, checkpoint_path=None,
                 checkpoint_every=None, resume=False, stop_after=None, run_id="",
                 metadata=None, max_reject_fraction=MAX_REJECT_FRACTION):
    """Average the requested estimators over ``n_traj`` trajectories.

    Trajectory ``i`` uses the noise stream ``(master_seed, i)``.

    Parameters
    ----------
    workers : int
        Worker processes; 1 runs in-process. Results do not depend on it.
    chunk_size : int
        Trajectories per scheduling unit; also the checkpoint granularity.
    checkpoint_every : int, optional
        Write ``checkpoint_path`` after this many completed chunks.
    resume : bool
        Continue from ``checkpoint_path`` if it exists. ``run_id`` must
        match the one stored in the file.
    stop_after : int, optional
        Stop (with a checkpoint) once this many chunks are done in total;
        the returned result has ``complete=False``.
    """
    if n_traj < 1:
        raise UsageError("n_traj must be >= 1")
    if chunk_size < 1 or batch_size < 1:
        raise UsageError("chunk_size and batch_size must be >= 1")
    grid = plan.grid
    names = tuple(r.name for r in requests)
    cm = compile_model(model, grid)
    n_chunks = -(-n_traj // chunk_size)
    bounds = [(c * chunk_size, min((c + 1) * chunk_size, n_traj)) for c in range(n_chunks)]
    header = {"run_id": run_id, "n_traj": n_traj, "chunk_size": chunk_size,
              "batch_size": batch_size}

    acc = EnsembleAccumulator(names, grid.n_steps + 1, master_seed)
    done = 0
    if resume and checkpoint_path and os.path.exists(checkpoint_path):
        acc, head = read_checkpoint(checkpoint_path)
        for key in ("run_id", "n_traj", "chunk_size", "batch_size"):
            if head.get(key) != header[key]:
                raise RunError(f"checkpoint {key} {head.get(key)!r} does not match {header[key]!r}")
        if acc.names != names or acc.master_seed != int(master_seed):
            raise RunError("checkpoint belongs to a different run")
        done = head["next_chunk"]

    limit = n_chunks if stop_after is None else min(n_chunks, int(stop_after))
    every = checkpoint_every if (checkpoint_every and checkpoint_path) else None
    pending = bounds[done:limit]

    def results():
        if workers <= 1 or len(pending) <= 1:
            for b in pending:
                yield _chunk_stats(cm, plan, requests, names, int(master_seed), b[0], b[1],
                                   batch_size)
        else:
            with ProcessPoolExecutor(workers, initializer=_init_worker,
                                     initargs=(cm, plan, requests, names, int(master_seed),
                                               batch_size)) as ex:
                yield from ex.map(_chunk_task, pending)

    for part in results():
        acc = acc.merge(part)
        done += 1
        if every and done % every == 0:
            write_checkpoint(checkpoint_path, acc, dict(header, next_chunk=done))

    complete = done == n_chunks
    if not complete and checkpoint_path:
        write_checkpoint(checkpoint_path, acc, dict(header, next_chunk=done))
    total = acc.count + acc.rejected
    if total and acc.rejected / total > max_reject_fraction:
        raise RunError(
            f"{acc.rejected} of {total} trajectories produced non-finite values "
            f"(limit {max_reject_fraction:.3%})",
            {"rejected": acc.rejected, "total": total},
        )
    meta = {"master_seed": int(master_seed), "n_traj": int(n_traj), "count": acc.count,
            "rejected": acc.rejected, "model": model.name, "model_params": model.params,
            "noise_construction": plan.construction, "chunk_size": chunk_size,
            "batch_size": batch_size}
    meta.update(metadata or {})
    return EnsembleResult.from_accumulator(grid, acc, meta, complete)


def accumulated_error(oracle_series, stochastic_series, grid: TimeGrid):
    """Running integral of ``|oracle - stochastic|^2`` (trapezoidal)."""
    a = np.asarray(oracle_series)
    s = np.asarray(stochastic_series)
    if a.shape != s.shape or a.shape != (grid.n_steps + 1,):
        raise UsageError(
            f"series shapes {a.shape} and {s.shape} do not match a grid of {grid.n_steps + 1} points"
        )
    d2 = np.abs(a - s) ** 2
    out = np.zeros(d2.shape)
    out[1:] = np.cumsum(0.5 * (d2[1:] + d2[:-1])) * grid.dt
    return out
