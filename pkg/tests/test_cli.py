import hashlib
import json
import subprocess
import sys

import pytest

from beamdiverge import cli

SWEEP = ["sweep", "--preset", "fig8a", "--trials", "2", "--snr", "35", "--methods", "two-phase", "--seed", "4"]


def run(argv, capsys):
    code = cli.parse_and_dispatch(argv)
    cap = capsys.readouterr()
    return code, cap.out, cap.err


@pytest.fixture(autouse=True)
def out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env_out"))
    return tmp_path / "env_out"


def test_nf_region_prints_rayleigh(capsys):
    code, out, _ = run(["nf-region", "--nx", "64", "--nz", "64", "--f-ghz", "28"], capsys)
    assert code == 0
    assert "rayleigh_m 42.525" in out


def test_nf_region_volume_needs_seed(capsys):
    code, _, err = run(["nf-region", "--nx", "16", "--nz", "16", "--samples", "20000"], capsys)
    assert code == 2 and "--seed" in err
    code, out, _ = run(["nf-region", "--nx", "16", "--nz", "16", "--samples", "20000", "--seed", "1"], capsys)
    assert code == 0 and "nf_volume_fraction" in out


def test_train_example(capsys):
    code, out, _ = run(["train", "--method", "two-phase", "--preset", "fig5", "--ue", "1,10,1", "--seed", "7"], capsys)
    assert code == 0
    d = json.loads(out)
    assert d["pilots_per_phase"][0] == 36
    assert d["seed"] == 7


def test_help_exits_zero(capsys):
    code, out, _ = run(["accuracy", "--help"], capsys)
    assert code == 0 and "usage" in out


@pytest.mark.parametrize("argv", [["train", "--bogus"], ["frobnicate"], [], ["train", "--nx", "many"]])
def test_usage_errors(argv, capsys):
    code, _, err = run(argv, capsys)
    assert code == 2
    assert "usage" in err or "error" in err


def test_stochastic_needs_seed(capsys):
    code, _, err = run(["train", "--ue", "1,10,1"], capsys)
    assert code == 2 and "seed" in err


def test_runtime_error(capsys):
    code, _, err = run(["train", "--ue", "100,10,1", "--seed", "1"], capsys)
    assert code == 1 and "outside" in err


def test_empty_config_equals_flags(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text("{}")
    argv = ["train", "--ue", "1,10,1", "--seed", "7"]
    _, a, _ = run(argv, capsys)
    _, b, _ = run(argv + ["--config", str(cfg)], capsys)
    assert a == b


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"seed": 1, "warp_factor": 9}')
    code, _, err = run(["train", "--config", str(cfg)], capsys)
    assert code == 2 and "warp_factor" in err
    with pytest.raises(cli.UsageError, match="warp_factor"):
        cli.load_config(cfg)


def test_malformed_config_reports_position(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text('{\n  "seed": 1,\n  "ue": [1, 10\n}')
    with pytest.raises(cli.UsageError, match=r"line 4, column 1"):
        cli.load_config(cfg)
    code, _, _ = run(["train", "--config", str(cfg)], capsys)
    assert code == 2


def test_missing_config(tmp_path, capsys):
    code, _, err = run(["train", "--config", str(tmp_path / "nope.json")], capsys)
    assert code == 2 and "nope.json" in err


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"subcommand": "train", "seed": 1, "ue": [1, 10, 1], "method": "three-phase"}))
    rc = cli.resolve(["train", "--config", str(cfg), "--seed", "5"])
    assert rc.seed == 5 and rc.options["method"] == "three-phase"
    rc = cli.load_config(cfg)
    assert rc.subcommand == "train"


def test_preset_expansion():
    spec = cli.build_spec(cli.RunConfig("train", {"preset": "fig5", "seed": 0}))
    assert (spec.n_x, spec.n_z, spec.carrier_hz, spec.M, spec.rician_db, spec.L, spec.k_set) == \
        (64, 64, 28e9, 9, 13.0, 8, (2, 4, 6))
    spec = cli.build_spec(cli.RunConfig("train", {"preset": "fig5", "k_set": "2,4", "nx": 32, "nz": 32}))
    assert spec.k_set == (2, 4) and spec.n_x == 32
    with pytest.raises(cli.UsageError):
        cli.build_spec(cli.RunConfig("train", {"preset": "fig77"}))


def test_config_round_trip_hash(tmp_path, capsys, out_dir):
    code, _, _ = run(SWEEP, capsys)
    assert code == 0
    produced = out_dir / "sweep_fig8a.csv"
    h_flags = hashlib.sha256(produced.read_bytes()).hexdigest()
    meta = json.loads(produced.with_suffix(".json").read_text())
    assert meta["seed"] == 4
    produced.unlink()
    cfg = tmp_path / "sweep.json"
    cfg.write_text(json.dumps({"subcommand": "sweep", "preset": "fig8a", "trials": 2, "snr": [35],
                               "methods": ["two-phase"], "seed": 4}))
    code, _, _ = run(["sweep", "--config", str(cfg)], capsys)
    assert code == 0
    assert hashlib.sha256(produced.read_bytes()).hexdigest() == h_flags


def test_out_flag_beats_env(tmp_path, capsys, out_dir):
    target = tmp_path / "explicit"
    code, _, _ = run(["field", "--nx", "8", "--nz", "8", "--y", "2", "--resolution", "8", "--out", str(target)], capsys)
    assert code == 0
    assert (target / "field_diverging_y2.csv").exists()
    assert not out_dir.exists()


def test_field_kinds(capsys, out_dir):
    code, out, _ = run(["field", "--nx", "8", "--nz", "8", "--kind", "focusing", "--point", "0,1,0",
                        "--resolution", "8", "--y", "1"], capsys)
    assert code == 0 and json.loads(out)["codeword"] == "focusing"
    code, _, _ = run(["field", "--nx", "8", "--nz", "8", "--kind", "focusing"], capsys)
    assert code == 2
    code, out, _ = run(["field", "--nx", "8", "--nz", "8", "--kind", "axis-diverging", "--axis", "vertical",
                        "--index", "2,3,1", "--resolution", "8"], capsys)
    assert code == 0


def test_overhead_and_accuracy(capsys, out_dir):
    code, out, _ = run(["overhead", "--preset", "fig8a", "--trials", "2", "--methods", "two-phase", "--seed", "0"],
                       capsys)
    assert code == 0 and "two-phase,phase1_mean,32.0" in out
    code, out, _ = run(["accuracy", "--preset", "table2", "--trials", "20", "--snr", "40", "--seed", "0"], capsys)
    assert code == 0 and (out_dir / "accuracy_table2.csv").exists()


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "beamdiverge.cli", "nf-region", "--nx", "32", "--nz", "32"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "rayleigh_m 10.296" in res.stdout
    res = subprocess.run([sys.executable, "-m", "beamdiverge.cli", "train", "--oops"], capture_output=True, text=True)
    assert res.returncode == 2
