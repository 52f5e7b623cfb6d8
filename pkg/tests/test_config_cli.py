import json

import pytest

from coexsim.cli import EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION, main
from coexsim.config import ConfigError, dump_defaults, parse_override, validate_config
from coexsim.scenario import dbm_to_watt


def test_empty_config_gives_defaults():
    c = validate_config("")
    n, f = c.network, c.frame
    assert (n.L, n.M, n.K, n.alpha) == (4, 100, 20, 0.2)
    assert n.rho_max == pytest.approx(dbm_to_watt(46.0))
    assert n.sigma2_dl == pytest.approx(dbm_to_watt(-94.0))
    assert (f.tau_c, f.tau_p, f.T, f.n_d, f.b) == (580, 80, 5, 100, 160)
    assert f.a_u == pytest.approx(10**-0.5)
    assert c.n_snapshots == 200 and c.n_realizations == 500


def test_defaults_dump_roundtrips():
    assert validate_config(dump_defaults()) == validate_config("")


def test_every_violation_is_listed():
    text = """
[network]
K = 20
alpha = 0.23
colour = "red"
[frame]
tau_p = 80
T = 5
n_d = 120
[campaign]
powers = ["epa", "max"]
"""
    with pytest.raises(ConfigError) as exc:
        validate_config(text)
    msgs = exc.value.problems
    assert any("colour" in m for m in msgs)
    # cross-field problems are reported after the key-level ones are fixed
    with pytest.raises(ConfigError) as exc:
        validate_config(text.replace('colour = "red"\n', ""))
    msgs = exc.value.problems
    assert any("alpha" in m and "K" in m for m in msgs)
    assert any("tau_p=80" in m and "n_d=120" in m and "tau_c=580" in m for m in msgs)
    assert any("'max'" in m for m in msgs)


def test_type_and_section_errors():
    with pytest.raises(ConfigError) as exc:
        validate_config('[network]\nM = "many"\n[plotting]\nx = 1\n')
    assert len(exc.value.problems) == 2
    with pytest.raises(ConfigError):
        validate_config("[network\n")


def test_dbm_keys_and_overrides():
    c = validate_config("[network]\nrho_max_dbm = 40\n", ["frame.a_u=0.1", "campaign.fpa_omega=alpha", "sweep.K=[10,20]"])
    assert c.network.rho_max == pytest.approx(10.0)
    assert c.frame.a_u == 0.1 and c.fpa_omega == "alpha"
    assert len(c.points()) == 2
    with pytest.raises(ConfigError):
        validate_config("[network]\nrho_max = 1.0\nrho_max_dbm = 30\n")
    assert parse_override("frame.T = 8") == ("frame.T", 8)
    with pytest.raises(ConfigError):
        parse_override("T=8")


def test_reuse_factor_sets_pilot_length():
    c = validate_config("[network]\nK = 10\n[frame]\nf = 3\n")
    assert c.frame.tau_p == 30 and c.frame.n_d == 110


def test_smoke_profile():
    assert validate_config('[campaign]\nprofile = "smoke"\n').n_snapshots == 50
    assert validate_config('[campaign]\nprofile = "smoke"\nn_snapshots = 3\n').n_snapshots == 3


def test_cli_validate(capsys, tmp_path):
    assert main(["validate", "--set", "frame.a_u=0.1"]) == EXIT_OK
    assert "1 sweep point" in capsys.readouterr().out
    bad = tmp_path / "bad.toml"
    bad.write_text("[network]\nalpha = 0.33\n")
    assert main(["validate", str(bad)]) == EXIT_VALIDATION
    assert "alpha" in capsys.readouterr().err


def test_cli_run_and_emit(tmp_path, monkeypatch):
    monkeypatch.setenv("COEXSIM_OUTPUT_ROOT", str(tmp_path))
    cfg = tmp_path / "c.toml"
    cfg.write_text(
        '[network]\nL = 2\nM = 8\nK = 5\n[frame]\ntau_c = 200\ntau_p = 10\nT = 4\nn_d = 40\n'
        '[campaign]\nn_realizations = 10\noutput_dir = "r"\n'
    )
    rc = main(["run", str(cfg), "--snapshots", "1", "--power", "epa,fpa", "--precoder", "mr", "--fpa-nu", "0.0", "--fpa-omega", "0.3"])
    assert rc == EXIT_OK
    index = json.loads((tmp_path / "r" / "index.json").read_text())
    assert index["config"]["powers"] == ["epa", "fpa"] and index["config"]["fpa_omega"] == 0.3
    assert main(["emit-figures", str(tmp_path / "r"), "--figure", "avg_se"]) == EXIT_OK
    assert (tmp_path / "r" / "figures" / "avg_se.csv").exists()
    assert main(["emit-figures", str(tmp_path / "missing")]) == EXIT_RUNTIME
