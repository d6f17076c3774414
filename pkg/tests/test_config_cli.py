import csv
import json
import math

import pytest

from scle.cli import EXIT_CHECK_FAILED, EXIT_OK, EXIT_USAGE, main
from scle.config import load_config, parse_config
from scle.errors import ConfigError


def base_config(**over):
    cfg = {
        "model": {"name": "pure_dephasing", "omega0": 1.0},
        "bath": {"kind": "ohmic_debye", "coupling": 1.0, "cutoff": 0.5, "beta": 1.0},
        "grid": {"dt": 0.02, "t_end": 20.0},
        "trajectories": 100000,
        "master_seed": 1,
        "observables": ["sx", "sy"],
        "output_path": "out/pd.csv",
    }
    cfg.update(over)
    return cfg


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def test_minimal_pure_dephasing_config():
    cfg = parse_config(json.dumps(base_config()))
    assert cfg.grid().n_steps == 1000
    assert cfg["noise"]["construction"] == "minimal"
    assert cfg["bath"]["omega_max"] == pytest.approx(25.0)
    assert cfg["model"]["initial_state"] == "plus_x"
    assert cfg.beta == 1.0


def test_unknown_key_rejected_with_pointer():
    bad = base_config()
    bad["bath"]["temprature"] = 3
    with pytest.raises(ConfigError) as e:
        parse_config(json.dumps(bad))
    assert e.value.pointer == "/bath"
    assert "temprature" in str(e.value)


def test_model_parameter_error_pointer():
    bad = base_config(model={"name": "pure_dephasing", "omega0": -1})
    with pytest.raises(ConfigError) as e:
        parse_config(json.dumps(bad))
    assert e.value.pointer == "/model/omega0"


def test_both_temperatures_rejected():
    bad = base_config()
    bad["bath"]["temperature_kelvin"] = 50
    with pytest.raises(ConfigError, match="exactly one"):
        parse_config(json.dumps(bad))


def test_grid_not_divisible():
    with pytest.raises(ConfigError) as e:
        parse_config(json.dumps(base_config(grid={"dt": 0.03, "t_end": 1.0})))
    assert e.value.pointer == "/grid"


def test_unknown_observable():
    with pytest.raises(ConfigError) as e:
        parse_config(json.dumps(base_config(observables=["population"])))
    assert e.value.pointer == "/observables"


def test_quantum_dot_kelvin_and_pulse_start():
    cfg = parse_config(json.dumps(base_config(
        model={"name": "quantum_dot", "delta": 0.0, "rabi_pulse": {"peak": 1.28, "tau": 20.2}},
        bath={"kind": "super_ohmic_gauss", "coupling": 0.027, "cutoff": 2.2,
              "temperature_kelvin": 4.2},
        units="inverse_ps", grid={"dt": 0.1, "t_end": 60.6},
        observables=["population", "bath_displacement"])))
    assert cfg.beta == pytest.approx(1.8186, rel=2e-4)
    assert cfg.grid().t_start == pytest.approx(-60.6)


def test_kelvin_needs_physical_units():
    bad = base_config()
    bad["bath"] = {"kind": "ohmic_debye", "coupling": 1.0, "cutoff": 0.5,
                   "temperature_kelvin": 50}
    with pytest.raises(ConfigError, match="inverse_ps"):
        parse_config(json.dumps(bad))


def test_custom_model():
    I = [[1, 0], [0, 1]]
    cfg = parse_config(json.dumps(base_config(model={
        "name": "custom",
        "hamiltonian": [[0.5, 0], [0, -0.5]],
        "coupling": [[1, 0], [0, -1]],
        "basis": [I, [[0, 1], [1, 0]], [[0, [0, -1]], [[0, 1], 0]], [[1, 0], [0, -1]]],
        "basis_names": ["I", "sx", "sy", "sz"],
        "rho0": [[0.5, 0.5], [0.5, 0.5]],
    })))
    m = cfg.model()
    assert m.basis_dim == 4


def test_run_id_ignores_output_path():
    a = parse_config(json.dumps(base_config()))
    b = parse_config(json.dumps(base_config(output_path="elsewhere.csv")))
    c = parse_config(json.dumps(base_config(master_seed=2)))
    assert a.run_id() == b.run_id() != c.run_id()


def test_inf_beta():
    cfg = base_config()
    cfg["bath"]["beta"] = "inf"
    assert math.isinf(parse_config(json.dumps(cfg)).beta)


# CLI -------------------------------------------------------------------------

def small(tmp_path, **over):
    kw = dict(grid={"dt": 0.02, "t_end": 2.0}, trajectories=600, chunk_size=200,
              batch_size=100, output_path=str(tmp_path / "res.csv"))
    kw.update(over)
    return base_config(**kw)


def test_run_writes_csv_and_meta(tmp_path):
    path = write(tmp_path, small(tmp_path, observables=["sx", "coupling_energy"]))
    assert main(["run", "--config", path, "--workers", "1"]) == EXIT_OK
    with open(tmp_path / "res.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "Re_sx", "Im_sx", "stderr_sx", "Re_coupling_energy",
                       "Im_coupling_energy", "stderr_coupling_energy"]
    assert len(rows) == 102
    meta = json.loads((tmp_path / "res.meta.json").read_text())
    assert meta["config"]["noise"]["zeta_split"] == 1e-3
    assert meta["counts"] == {"accepted": 600, "rejected": 0}


def test_rerun_byte_identical_across_workers(tmp_path):
    cfg = small(tmp_path)
    path = write(tmp_path, cfg)
    assert main(["run", "--config", path, "--workers", "1"]) == EXIT_OK
    first = (tmp_path / "res.csv").read_bytes()
    assert main(["run", "--config", path, "--workers", "2"]) == EXIT_OK
    assert (tmp_path / "res.csv").read_bytes() == first


def test_seed_override_changes_output(tmp_path):
    path = write(tmp_path, small(tmp_path))
    main(["run", "--config", path, "--workers", "1"])
    a = (tmp_path / "res.csv").read_bytes()
    main(["run", "--config", path, "--workers", "1", "--seed", "77"])
    assert (tmp_path / "res.csv").read_bytes() != a


def test_stop_and_resume(tmp_path):
    path = write(tmp_path, small(tmp_path, checkpoint_every=200))
    assert main(["run", "--config", path, "--workers", "1"]) == EXIT_OK
    full = (tmp_path / "res.csv").read_bytes()
    (tmp_path / "res.csv").unlink()
    assert main(["run", "--config", path, "--workers", "1", "--stop-after", "1"]) == EXIT_OK
    assert not (tmp_path / "res.csv").exists() and (tmp_path / "res.ckpt").exists()
    assert main(["run", "--config", path, "--workers", "1", "--resume"]) == EXIT_OK
    assert (tmp_path / "res.csv").read_bytes() == full


def test_correlations_infinite_beta(tmp_path):
    cfg = small(tmp_path)
    cfg["bath"]["beta"] = "inf"
    path = write(tmp_path, cfg)
    out = tmp_path / "k.csv"
    assert main(["correlations", "--config", path, "--output", str(out)]) == EXIT_OK
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 201
    for r in rows:
        assert r["Re_alpha"] == r["Re_alphaT"] and r["Im_alpha"] == r["Im_alphaT"]


def test_noise_check_zero_coupling(tmp_path, capsys):
    cfg = small(tmp_path)
    cfg["bath"]["coupling"] = 0.0
    path = write(tmp_path, cfg)
    assert main(["noise-check", "--config", path, "--samples", "1000", "--probe", "20"]) == EXIT_OK
    assert "PASS" in capsys.readouterr().out
    assert (tmp_path / "res_noise_check.csv").exists()


def test_noise_check_debye(tmp_path, capsys):
    path = write(tmp_path, small(tmp_path))
    code = main(["noise-check", "--config", path, "--samples", "5000", "--probe", "30"])
    assert code in (EXIT_OK, EXIT_CHECK_FAILED)
    out = capsys.readouterr().out
    assert code == EXIT_OK, out


def test_convergence_report(tmp_path, capsys):
    path = write(tmp_path, small(tmp_path))
    assert main(["convergence", "--config", path]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("ratio,omega_max") and len(lines) == 6


def test_bad_config_exit_code(tmp_path, capsys):
    path = write(tmp_path, small(tmp_path, trajectories=0))
    assert main(["run", "--config", path]) == EXIT_USAGE
    assert "/trajectories" in capsys.readouterr().err


def test_missing_file_exit_code(tmp_path):
    assert main(["run", "--config", str(tmp_path / "nope.json")]) == EXIT_USAGE


def test_load_config_roundtrip(tmp_path):
    path = write(tmp_path, base_config())
    cfg = load_config(path)
    again = parse_config(cfg.dumps())
    assert again.data == cfg.data
