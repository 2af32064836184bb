import csv
import hashlib
import json

import numpy as np
import pytest
import yaml

from qndspin.cli import main
from qndspin.config import dump_config, load_config, parse_quantity, to_raw, validate_config
from qndspin.errors import ConfigError
from qndspin.pipelines import resolve_probe


def write_cfg(tmp_path, raw, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(raw))
    return str(p)


def test_nominal_values(nominal_cfg, cs):
    assert nominal_cfg.delta_d2 / (2 * np.pi * 1e9) == pytest.approx(-3.0, abs=0.05)
    assert nominal_cfg.waist == pytest.approx(17e-6)
    assert nominal_cfg.N1 == 1e6
    assert nominal_cfg.dt == pytest.approx(0.2e-6)
    probe, design = resolve_probe(nominal_cfg, cs)
    assert probe.gamma_total == pytest.approx(1 / 35e-6, rel=1e-12)
    assert design is not None


def test_quantity_parsing(cs):
    assert parse_quantity("3 GHz", "frequency") == pytest.approx(2 * np.pi * 3e9)
    assert parse_quantity("-2.5e2 gamma_d2", "frequency", cs) == pytest.approx(-250 * cs.manifold("3/2").gamma)
    assert parse_quantity("12 um", "length") == pytest.approx(12e-6)
    for bad, kind in (("12", "length"), ("3 furlongs", "length"), (3.0, "time"), ("1 W", "time")):
        with pytest.raises(ValueError):
            parse_quantity(bad, kind)


def test_round_trip(nominal_cfg):
    again = validate_config(yaml.safe_load(dump_config(nominal_cfg)))
    assert again.hash == nominal_cfg.hash
    assert to_raw(again) == to_raw(nominal_cfg)


def test_hash_changes_with_content(nominal_cfg):
    other = validate_config({"integration": {"base_seed": 2}})
    assert other.hash != nominal_cfg.hash


def test_all_errors_reported_with_field_names():
    raw = {"probe": {"waist": "-3 um", "delta_d2": "banana"},
           "cloud": {"N1": "many"},
           "basis": {"p_max": 1.5},
           "analysis": {"spin_ratio": "upside"},
           "fig2": {"N1_fractions": [0.5]}}
    with pytest.raises(ConfigError) as info:
        validate_config(raw)
    text = "\n".join(info.value.errors)
    for field in ("probe.waist", "probe.delta_d2", "cloud.N1", "basis.p_max",
                  "analysis.spin_ratio", "fig2.N1_fractions"):
        assert field in text
    assert len(info.value.errors) >= 6


def test_window_must_fit_records():
    with pytest.raises(ConfigError) as info:
        validate_config({"integration": {"T": "200 us"}})
    assert any("T_stop" in e for e in info.value.errors)


def test_unreadable_config(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("- just\n- a list\n")
    with pytest.raises(ConfigError):
        load_config(p)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


# -- CLI ---------------------------------------------------------------------

def test_cli_config_error_exit_code(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"probe": {"waist": "-1 um"}})
    assert main(["show-config", "--config", cfg]) == 2
    assert "probe.waist" in capsys.readouterr().err


def test_cli_usage_error_exit_code():
    with pytest.raises(SystemExit) as info:
        main(["pipeline", "fig9"])
    assert info.value.code == 2


def test_cli_numerical_abort_exit_code(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"integration": {"dt": "3000 us", "T": "3000 us"}})
    assert main(["evolve", "--config", cfg, "--out", str(tmp_path / "o")]) == 3
    assert "numerical abort" in capsys.readouterr().err


def test_cli_check_failure_exit_code(tmp_path):
    cfg = write_cfg(tmp_path, {"fig1c": {"n_atoms": 200}})
    out = str(tmp_path / "o")
    assert main(["pipeline", "fig1c", "--config", cfg, "--out", out]) == 0
    assert main(["pipeline", "fig1c", "--config", cfg, "--out", out, "--check"]) == 4


def test_cli_show_config_and_tables(tmp_path, capsys):
    assert main(["show-config"]) == 0
    text = capsys.readouterr().out
    assert validate_config(yaml.safe_load(text)).hash == validate_config({}).hash
    assert main(["dump-pumping-tables"]) == 0
    tables = json.loads(capsys.readouterr().out)
    assert np.array(tables["T_nn"]).shape == (3, 3)
    assert main(["design-point"]) == 0
    dp = json.loads(capsys.readouterr().out)
    assert dp["signed_delta_ratio"] == pytest.approx(-0.9417, abs=1e-3)


def test_fig1b_rerun_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path, {"fig1b": {"n_delta": 12, "n_power": 10}})
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["pipeline", "fig1b", "--config", cfg, "--out", str(a)]) == 0
    assert main(["pipeline", "fig1b", "--config", cfg, "--out", str(b)]) == 0
    for name in ("fig1b_scan.csv", "fig1b_design.json"):
        assert (a / "fig1b" / name).read_bytes() == (b / "fig1b" / name).read_bytes()
    man = json.loads((a / "fig1b" / "manifest.json").read_text())
    for name, h in man["files"].items():
        assert hashlib.sha256((a / "fig1b" / name).read_bytes()).hexdigest() == h
    assert man["config"]["config_hash"] == validate_config(yaml.safe_load(open(cfg))).hash
    assert "rng" in man["config"]


@pytest.fixture(scope="module")
def small_records(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    raw = {"integration": {"n_traj": 12, "T": "60 us"},
           "analysis": {"T_start": "10 us", "T_stop": "30 us", "n_T": 3, "n_boot": 20},
           "basis": {"n_slices": 4}}
    cfg = write_cfg(d, raw)
    assert main(["simulate", "--config", cfg, "--out", str(d)]) == 0
    return cfg, d / "simulate"


def test_simulate_writes_replayable_records(small_records):
    cfg, rec_dir = small_records
    files = sorted(rec_dir.glob("traj_*.csv"))
    assert len(files) == 12
    head = files[0].read_text().splitlines()[:5]
    assert any(line.startswith("# config_hash:") for line in head)
    assert any(line.startswith("# seed:") for line in head)


def test_analyze_deterministic(small_records, tmp_path):
    cfg, rec_dir = small_records
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["analyze", str(rec_dir), "--config", cfg, "--out", str(a)]) == 0
    assert main(["analyze", str(rec_dir), "--config", cfg, "--out", str(b)]) == 0
    ja, jb = (a / "analysis.json").read_bytes(), (b / "analysis.json").read_bytes()
    assert ja == jb
    res = json.loads(ja)
    assert res["n_traj"] == 12 and len(res["T_s"]) == 3


def test_analyze_empty_directory(tmp_path):
    assert main(["analyze", str(tmp_path)]) == 2


def first_column(path):
    rows = csv.reader(line for line in path.read_text().splitlines() if not line.startswith("#"))
    next(rows)
    return [float(r[0]) for r in rows]


def test_fig3_shares_grid(tmp_path):
    raw = {"integration": {"n_traj": 40}, "analysis": {"n_boot": 20}, "basis": {"n_slices": 4}}
    cfg = write_cfg(tmp_path, raw)
    assert main(["pipeline", "fig3", "--config", cfg, "--out", str(tmp_path)]) == 0
    rec_T = first_column(tmp_path / "fig3" / "fig3_records.csv")
    mod_T = first_column(tmp_path / "fig3" / "fig3_model.csv")
    assert rec_T == mod_T
    np.testing.assert_allclose(rec_T, validate_config(raw).T_grid, rtol=1e-11)


def test_oracle_cli(tmp_path):
    assert main(["oracle", "compare", "--atoms", "2", "--n-traj", "2", "--out", str(tmp_path), "--check"]) == 0
    rep = json.loads((tmp_path / "oracle_compare.json").read_text())
    assert rep["n_atoms"] == 2 and rep["weak_coupling"]
