"""Run configuration: strict JSON schema, defaults and object construction."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass

import jsonschema
import numpy as np

from . import models
from .correlation import DEFAULT_BAND_RATIO, SpectralDensity, TimeGrid
from .errors import ConfigError, SCLEError

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_STATE = {"type": "string", "enum": ["plus_x", "excited", "ground", "mixed"]}
_ENTRY = {"oneOf": [_NUM, {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}]}
_MATRIX = {"type": "array", "minItems": 1, "items": {"type": "array", "minItems": 1,
                                                      "items": _ENTRY}}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


SCHEMA = _obj({
    "model": {"type": "object", "required": ["name"],
              "properties": {"name": {"enum": ["pure_dephasing", "spin_boson",
                                               "quantum_dot", "custom"]}}},
    "bath": _obj({
        "kind": {"enum": ["ohmic_debye", "super_ohmic_gauss"]},
        "coupling": {"type": "number", "minimum": 0},
        "cutoff": _POS,
        "omega_max": _POS,
        "beta": {"oneOf": [_POS, {"const": "inf"}]},
        "temperature_kelvin": _POS,
    }, ["kind", "coupling", "cutoff"]),
    "units": {"enum": ["normalized", "inverse_ps"]},
    "grid": _obj({"dt": _POS, "t_end": _NUM, "t_start": _NUM}, ["dt", "t_end"]),
    "trajectories": {"type": "integer", "minimum": 1},
    "master_seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
    "observables": {"type": "array", "items": {"type": "string"}, "minItems": 1,
                    "uniqueItems": True},
    "output_path": {"type": "string", "minLength": 1},
    "checkpoint_every": {"type": "integer", "minimum": 1},
    "chunk_size": {"type": "integer", "minimum": 1},
    "batch_size": {"type": "integer", "minimum": 1},
    "noise": _obj({
        "construction": {"enum": ["minimal", "white"]},
        "regularization": _POS,
        "zeta_split": {"type": "number", "minimum": 0},
        "clip_tolerance": {"type": "number", "minimum": 0},
    }),
}, ["model", "bath", "grid", "trajectories", "master_seed", "observables", "output_path"])

MODEL_SCHEMAS = {
    "pure_dephasing": _obj({"name": {}, "omega0": _POS, "initial_state": _STATE,
                            "pulse_period": _POS}, ["omega0"]),
    "spin_boson": _obj({"name": {}, "omega0": _POS, "initial_state": _STATE,
                        "pump": _obj({"rabi": _NUM, "detuning": _NUM}, ["rabi"])},
                       ["omega0"]),
    "quantum_dot": _obj({"name": {}, "delta": _NUM, "rabi": _NUM,
                         "rabi_pulse": _obj({"peak": _NUM, "tau": _POS}, ["peak", "tau"]),
                         "pulse_start_widths": _POS, "initial_state": _STATE}, ["delta"]),
    "custom": _obj({"name": {}, "hamiltonian": _MATRIX, "coupling": _MATRIX,
                    "basis": {"type": "array", "items": _MATRIX, "minItems": 1},
                    "basis_names": {"type": "array", "items": {"type": "string"}},
                    "rho0": _MATRIX},
                   ["hamiltonian", "coupling", "basis", "basis_names", "rho0"]),
}

DEFAULTS = {"units": "normalized", "chunk_size": 1000, "batch_size": 250,
            "noise": {"construction": "minimal", "regularization": 1e-3,
                      "zeta_split": 1e-3, "clip_tolerance": 1e-2}}


def _validate(instance, schema, prefix=""):
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(instance), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = prefix + "".join(f"/{p}" for p in err.absolute_path)
        raise ConfigError(err.message, path)


def _matrix(rows):
    return np.array([[complex(*e) if isinstance(e, list) else complex(e) for e in r]
                     for r in rows], dtype=complex)


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration with every default made explicit in ``data``."""

    data: dict

    def __getitem__(self, key):
        return self.data[key]

    @property
    def beta(self):
        b = self.data["bath"]["beta"]
        return math.inf if b == "inf" else float(b)

    def grid(self) -> TimeGrid:
        g = self.data["grid"]
        return TimeGrid.from_span(g["dt"], g["t_end"], g["t_start"])

    def spectral_density(self) -> SpectralDensity:
        b = self.data["bath"]
        return SpectralDensity(b["kind"], b["coupling"], b["cutoff"], b["omega_max"])

    def model(self):
        return build_model(self.data["model"], self.grid())

    def run_id(self):
        """Hash of everything that determines the numbers in a result."""
        d = {k: v for k, v in self.data.items()
             if k not in ("output_path", "checkpoint_every")}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def with_seed(self, seed):
        d = copy.deepcopy(self.data)
        d["master_seed"] = int(seed)
        _validate(d, SCHEMA)
        return RunConfig(d)

    def dumps(self):
        return json.dumps(self.data, indent=2, sort_keys=True)


def build_model(m, grid: TimeGrid):
    name = m["name"]
    if name == "pure_dephasing":
        return models.make_pure_dephasing(m["omega0"], pulse_period=m.get("pulse_period"),
                                          t_end=grid.t_end, initial_state=m["initial_state"])
    if name == "spin_boson":
        pump = m.get("pump")
        pump = None if pump is None else models.Pump(pump["rabi"], pump.get("detuning", 0.0))
        return models.make_spin_boson(m["omega0"], pump, initial_state=m["initial_state"])
    if name == "quantum_dot":
        rp = m.get("rabi_pulse")
        rabi = m.get("rabi", 0.0) if rp is None else models.GaussianPulse(rp["peak"], rp["tau"])
        return models.make_quantum_dot(m["delta"], rabi, initial_state=m["initial_state"])
    basis = [_matrix(b) for b in m["basis"]]
    if len(m["basis_names"]) != len(basis):
        raise ConfigError("basis_names must name every basis element", "/model/basis_names")
    return models.build_model("custom", _matrix(m["hamiltonian"]), _matrix(m["coupling"]),
                              basis, _matrix(m["rho0"]), names=m["basis_names"])


def _resolve(data):
    d = copy.deepcopy(data)
    for k, v in DEFAULTS.items():
        if isinstance(v, dict):
            d[k] = {**v, **d.get(k, {})}
        else:
            d.setdefault(k, v)
    m = d["model"]
    _validate(m, MODEL_SCHEMAS[m["name"]], "/model")
    if m["name"] in ("pure_dephasing", "spin_boson"):
        default_state = {"pure_dephasing": "plus_x",
                         "spin_boson": "ground" if "pump" in m else "excited"}[m["name"]]
        m.setdefault("initial_state", default_state)
        if "pump" in m:
            m["pump"].setdefault("detuning", 0.0)
    if m["name"] == "quantum_dot":
        m.setdefault("initial_state", "ground")
        if "rabi" in m and "rabi_pulse" in m:
            raise ConfigError("give either rabi or rabi_pulse, not both", "/model")
        if "rabi_pulse" in m:
            m.setdefault("pulse_start_widths", 3.0)
        else:
            m.setdefault("rabi", 0.0)

    b = d["bath"]
    has_beta, has_T = "beta" in b, "temperature_kelvin" in b
    if has_beta == has_T:
        raise ConfigError("exactly one of beta or temperature_kelvin is required", "/bath")
    if has_T:
        if d["units"] != "inverse_ps":
            raise ConfigError("temperature_kelvin needs units 'inverse_ps'",
                              "/bath/temperature_kelvin")
        b["beta"] = models.kelvin_to_beta(b["temperature_kelvin"])
    b.setdefault("omega_max", DEFAULT_BAND_RATIO * b["cutoff"])

    g = d["grid"]
    if "t_start" not in g:
        if m["name"] == "quantum_dot" and "rabi_pulse" in m:
            g["t_start"] = -m["pulse_start_widths"] * m["rabi_pulse"]["tau"]
        else:
            g["t_start"] = 0.0
    if d.get("checkpoint_every") is not None and d["checkpoint_every"] % d["chunk_size"]:
        raise ConfigError("checkpoint_every must be a multiple of chunk_size",
                          "/checkpoint_every")
    return d


def parse_config(text) -> RunConfig:
    """Parse and validate a JSON configuration document.

    Raises :class:`ConfigError` carrying the JSON pointer of the first
    offending entry.
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None
    _validate(data, SCHEMA)
    d = _resolve(data)
    cfg = RunConfig(d)
    try:
        cfg.grid()
    except SCLEError as exc:
        raise ConfigError(str(exc.args[0]), "/grid") from None
    try:
        cfg.spectral_density()
    except SCLEError as exc:
        raise ConfigError(str(exc.args[0]), "/bath") from None
    try:
        model = cfg.model()
    except ConfigError:
        raise
    except SCLEError as exc:
        raise ConfigError(str(exc.args[0]), "/model") from None
    from .ensemble import requests_for
    try:
        requests_for(model, d["observables"])
    except SCLEError as exc:
        raise ConfigError(str(exc.args[0]), "/observables") from None
    return cfg


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
