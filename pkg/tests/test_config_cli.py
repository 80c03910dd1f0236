import hashlib
import json
import math
import os

import pytest
import yaml

from ionladder import cli
from ionladder import config as config_mod
from ionladder.exceptions import ConfigError

TRAP = {"omega_x": 1.43e6, "omega_y": 20e6, "omega_z": 1e6}


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump({"trap": dict(TRAP), "output_dir": str(tmp_path / "out")}))
    return path


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


# -- config ------------------------------------------------------------------

def test_defaults_fill_missing_keys():
    cfg = config_mod.validate({"trap": dict(TRAP)})
    assert cfg["trap"]["n_ions"] == 3
    assert cfg["dynamics"]["couplings"] == "rwa"


def test_required_keys():
    with pytest.raises(ConfigError, match="missing required"):
        config_mod.validate({"trap": {"omega_x": 1.0, "omega_y": 2.0}})


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown key trap.omega_w"):
        config_mod.validate({"trap": dict(TRAP, omega_w=3.0)})


def test_wrong_type_rejected():
    with pytest.raises(ConfigError):
        config_mod.validate({"trap": dict(TRAP, n_ions="three")})
    with pytest.raises(ConfigError):
        config_mod.validate({"trap": dict(TRAP), "frequencies_are_angular": "yes"})


def test_exponent_strings_are_numbers(tmp_path):
    # PyYAML reads 1e6 (no dot) as a string
    path = tmp_path / "c.yaml"
    path.write_text("trap:\n  omega_x: 1.43e6\n  omega_y: 2e7\n  omega_z: 1e6\n")
    cfg = config_mod.load(path)
    assert cfg["trap"]["omega_y"] == 2e7 and cfg["trap"]["omega_z"] == 1e6


def test_schema_version_checked():
    with pytest.raises(ConfigError, match="schema_version"):
        config_mod.validate({"schema_version": 2, "trap": dict(TRAP)})


def test_coupling_source_checked():
    with pytest.raises(ConfigError):
        config_mod.validate({"trap": dict(TRAP), "dynamics": {"couplings": "guess"}})


def test_resolve_converts_to_angular():
    cfg = config_mod.validate({"trap": dict(TRAP)})
    res = config_mod.resolve(cfg)
    assert res["trap"]["omega_z"] == pytest.approx(2 * math.pi * 1e6)
    assert res["frequencies_are_angular"]
    assert config_mod.resolve(res)["trap"]["omega_z"] == res["trap"]["omega_z"]


def test_overrides_parse_yaml_values():
    cfg = config_mod.validate({"trap": dict(TRAP)})
    out = config_mod.apply_overrides(cfg, ["trap.n_ions=5", "laser.inhibit_pair=[1, 2]"])
    assert out["trap"]["n_ions"] == 5 and out["laser"]["inhibit_pair"] == [1, 2]
    with pytest.raises(ConfigError):
        config_mod.apply_overrides(cfg, ["trap.nope=1"])
    with pytest.raises(ConfigError):
        config_mod.apply_overrides(cfg, ["trap.n_ions"])


def test_parse_grid():
    assert config_mod.parse_grid("0:0.3:0.1") == [0.0, 0.1, 0.2, 0.3]
    assert config_mod.parse_grid("0.5") == [0.5]
    assert config_mod.parse_grid("0:0.2:0.1,0.8") == [0.0, 0.1, 0.2, 0.8]
    assert config_mod.parse_grid(0.69) == [0.69]
    for bad in ("", "a", "1:0:0.1", "0:1:0"):
        with pytest.raises(ConfigError):
            config_mod.parse_grid(bad)


def test_output_root_precedence(monkeypatch):
    cfg = config_mod.validate({"trap": dict(TRAP), "output_dir": "from-config"})
    monkeypatch.delenv(config_mod.OUTPUT_ENV, raising=False)
    assert config_mod.output_root(cfg) == "from-config"
    monkeypatch.setenv(config_mod.OUTPUT_ENV, "from-env")
    assert config_mod.output_root(cfg) == "from-env"
    assert config_mod.output_root(cfg, "from-flag") == "from-flag"


def test_config_hash_is_order_independent():
    a = config_mod.validate({"trap": dict(TRAP)})
    b = json.loads(json.dumps(a, sort_keys=False))
    assert config_mod.config_hash(a) == config_mod.config_hash(b)


# -- CLI ---------------------------------------------------------------------

def test_equilibrium_writes_files_and_manifest(cfg_file, tmp_path, capsys):
    code, out, _ = run(["equilibrium", "--config", cfg_file], capsys)
    assert code == 0
    directory = tmp_path / "out" / "equilibrium"
    manifest = json.loads((directory / "manifest.json").read_text())
    for name, digest in manifest["files"].items():
        assert hashlib.sha256((directory / name).read_bytes()).hexdigest() == digest
    assert "crystal.csv" in manifest["files"]
    assert "n_legs: 2" in out


def test_json_summary(cfg_file, capsys):
    code, out, _ = run(["modes", "--config", cfg_file, "--json"], capsys)
    assert code == 0
    doc = json.loads(out)
    assert doc["summary"]["n_modes_transverse"] == 3


def test_out_flag_wins(cfg_file, tmp_path, capsys):
    target = tmp_path / "elsewhere"
    code, _, _ = run(["equilibrium", "--config", cfg_file, "--out", target], capsys)
    assert code == 0 and (target / "equilibrium" / "crystal.csv").exists()


def test_config_error_exit_code_and_no_output(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("trap:\n  omega_x: 1.0\n")
    code, out, err = run(["equilibrium", "--config", bad, "--out", tmp_path / "o"], capsys)
    assert code == cli.EXIT_CONFIG
    assert json.loads(err)["error"]["code"] == cli.EXIT_CONFIG
    assert not (tmp_path / "o").exists()


def test_compute_error_exit_code_and_no_output(cfg_file, tmp_path, capsys):
    # omega_x above omega_y is not a ladder trap
    code, _, err = run(["equilibrium", "--config", cfg_file, "--out", tmp_path / "o",
                        "--override", "trap.omega_x=30e6"], capsys)
    assert code == cli.EXIT_COMPUTE
    assert json.loads(err)["error"]["type"] == "UnstableTrap"
    assert not (tmp_path / "o").exists()


def test_missing_config_file_is_io_error(tmp_path, capsys):
    code, _, err = run(["equilibrium", "--config", tmp_path / "absent.yaml"], capsys)
    assert code == cli.EXIT_IO
    assert json.loads(err)["error"]["id"] == "io_error"


def test_usage_errors(capsys):
    assert run(["frobnicate"], capsys)[0] == cli.EXIT_USAGE
    assert run(["equilibrium", "--seed", "x"], capsys)[0] == cli.EXIT_USAGE
    assert run(["reproduce", "fig99"], capsys)[0] == cli.EXIT_USAGE


def test_bad_phi_is_config_error(cfg_file, capsys):
    code, _, _ = run(["couplings", "--config", cfg_file, "--phi", "1-2"], capsys)
    assert code == cli.EXIT_CONFIG


def test_couplings_phi(cfg_file, tmp_path, capsys):
    code, _, _ = run(["couplings", "--config", cfg_file, "--phi", "1-2=1.5707963267948966"],
                     capsys)
    assert code == 0
    doc = json.loads((tmp_path / "out" / "couplings" / "couplings.json").read_text())
    signs = [p["sign"] for p in doc["plaquettes_exact"]]
    assert signs == [None]


def test_rerun_reproduces_bytes(cfg_file, tmp_path, capsys):
    code, _, _ = run(["ed-scan", "--config", cfg_file, "--L", 8, "--f2", "0.45",
                      "--g", "0.2,0.6", "--override", "ed.delta_max=3"], capsys)
    assert code == 0
    first = tmp_path / "out" / "ed-scan"
    before = {p.name: p.read_bytes() for p in first.iterdir()}
    code, _, _ = run(["rerun", first / "manifest.json", "--out", tmp_path / "again"], capsys)
    assert code == 0
    after = {p.name: p.read_bytes() for p in (tmp_path / "again" / "ed-scan").iterdir()}
    assert before == after


def test_manifest_loads_as_config(cfg_file, tmp_path, capsys):
    run(["equilibrium", "--config", cfg_file, "--seed", 4], capsys)
    manifest = tmp_path / "out" / "equilibrium" / "manifest.json"
    cfg = config_mod.load(manifest)
    assert cfg["rng_seed"] == 4


def test_threads_do_not_change_results(cfg_file, tmp_path, capsys):
    args = ["ed-scan", "--config", cfg_file, "--L", 8, "--f2", "0.45,0.69", "--g", "0.3",
            "--override", "ed.delta_max=3"]
    run(args + ["--out", tmp_path / "a"], capsys)
    run(args + ["--out", tmp_path / "b", "--threads", 2], capsys)
    a = (tmp_path / "a" / "ed-scan" / "phase_map.csv").read_bytes()
    b = (tmp_path / "b" / "ed-scan" / "phase_map.csv").read_bytes()
    assert a == b


def test_plot_flag_writes_png(cfg_file, tmp_path, capsys):
    code, _, _ = run(["equilibrium", "--config", cfg_file, "--plot"], capsys)
    assert code == 0
    png = tmp_path / "out" / "equilibrium" / "equilibrium.png"
    assert png.read_bytes()[:4] == b"\x89PNG"


def test_no_plot_by_default(cfg_file, tmp_path, capsys):
    run(["equilibrium", "--config", cfg_file], capsys)
    assert not any(name.endswith(".png")
                   for name in os.listdir(tmp_path / "out" / "equilibrium"))


def test_reproduce_bundle(cfg_file, tmp_path, capsys):
    code, _, _ = run(["reproduce", "fig3", "--config", cfg_file], capsys)
    assert code == 0
    verdict = json.loads((tmp_path / "out" / "reproduce-fig3" / "verdict.json").read_text())
    assert verdict["passed"]
