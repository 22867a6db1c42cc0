import json

import pytest

from pulsecomm import cli
from pulsecomm.config import config_digest, defaults, resolve, surrogate_from, validate
from pulsecomm.errors import ConfigError


def test_unknown_key_reports_path():
    with pytest.raises(ConfigError) as e:
        resolve("loopback", {"hardware": {"fifo": 3}})
    assert e.value.key_path == "hardware.fifo"
    with pytest.raises(ConfigError) as e:
        resolve("loopback", {"sede": 1})
    assert e.value.key_path == "sede"


def test_type_errors_and_bad_command():
    with pytest.raises(ConfigError) as e:
        resolve("bench", {"bench": {"nph": [0]}})
    assert e.value.key_path.startswith("bench.nph")
    with pytest.raises(ConfigError):
        defaults("dance")
    validate(defaults("bench"))


def test_precedence_flag_over_file_over_default():
    assert resolve("loopback")["seed"] == 0
    assert resolve("loopback", {"seed": 4})["seed"] == 4
    assert resolve("loopback", {"seed": 4}, {"seed": 9})["seed"] == 9
    cfg = resolve("loopback", {"hardware": {"merger_depth": 4}})
    assert cfg["hardware"]["merger_depth"] == 4 and cfg["hardware"]["downstream_fifo_depth"] == 16


def test_compensation_defaults_per_command():
    assert defaults("bench")["packing"]["delay_compensation_ns"] == 230
    assert defaults("char-downstream")["packing"]["delay_compensation_ns"] == 0
    assert surrogate_from(defaults("bench")).target_total_rate_hz == 19900


def test_digest_ignores_output_location():
    a = resolve("loopback", None, {"out_dir": "/x", "jobs": 3})
    b = resolve("loopback")
    assert config_digest(a) == config_digest(b)
    assert config_digest(resolve("loopback", {"seed": 1})) != config_digest(b)


def _run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out.strip(), out.err


def test_loopback_cli_is_deterministic(tmp_path, capsys):
    argv = ["loopback", "--out-dir", str(tmp_path), "--rates", "417"]
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n_pulses": 300}))
    code, out, _ = _run(argv + ["--config", str(cfg)], capsys)
    assert code == 0
    run_dir = tmp_path / out.split("/")[-1]
    names = {p.name for p in run_dir.iterdir()}
    assert {"playback.pbm.bin", "trace.bin", "trace.csv", "ground_truth.csv", "packing.csv",
            "matches.csv", "delay_vs_isi.csv", "summary.json", "config.json"} <= names
    first = (run_dir / "summary.json").read_bytes()
    trace = (run_dir / "trace.bin").read_bytes()
    code, out2, _ = _run(argv + ["--config", str(cfg)], capsys)
    assert out2 == out
    assert (run_dir / "summary.json").read_bytes() == first
    assert (run_dir / "trace.bin").read_bytes() == trace
    summary = json.loads(first)
    assert summary["qos"]["loss_fraction"] == 0.0
    assert summary["qos"]["sent_count"] == summary["trace"]["records"]

    code, _, _ = _run(["report", str(run_dir)], capsys)
    assert code == 0
    report = json.loads((run_dir / "report.json").read_text())
    assert report["loss_fraction"] == 0.0
    assert (run_dir / "plot" / "delay_histogram.csv").exists()


def test_env_var_sets_output_root(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv(cli.ENV_OUT_DIR, str(tmp_path / "env"))
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n_pulses": 50}))
    code, out, _ = _run(["loopback", "--config", str(cfg)], capsys)
    assert code == 0 and out.startswith(str(tmp_path / "env"))


def test_char_and_bench_cli(tmp_path, capsys):
    code, out, _ = _run(["char-upstream", "--out-dir", str(tmp_path), "--rates", "1000,2600"],
                        capsys)
    assert code == 0
    code, _, _ = _run(["report", out], capsys)
    report = json.loads((tmp_path / out.split("/")[-1] / "report.json").read_text())
    assert set(report["modes"]) == {"regular", "pseudorandom"}
    assert report["modes"]["regular"]["max_loss_fraction"] > 0

    cfg = tmp_path / "b.json"
    cfg.write_text(json.dumps({"bench": {"nph": [20, 64], "surrogate": {
        "n_neurons": 100, "duration_ms": 1000}}}))
    code, out, _ = _run(["bench", "--out-dir", str(tmp_path), "--config", str(cfg)], capsys)
    assert code == 0
    d = tmp_path / out.split("/")[-1]
    assert (d / "sweep.csv").exists() and (d / "nph-020" / "activity.csv").exists()
    assert _run(["report", str(d)], capsys)[0] == 0


def test_bench_spike_file_with_silent_neurons(tmp_path, capsys):
    spikes = tmp_path / "s.csv"
    spikes.write_text("0,1.0\n3,2.0\n3,5.0\n")
    cfg = tmp_path / "b.json"
    cfg.write_text(json.dumps({"bench": {"nph": [2], "spike_file": str(spikes)}}))
    code, out, _ = _run(["bench", "--out-dir", str(tmp_path), "--config", str(cfg)], capsys)
    assert code == 0
    summary = json.loads((tmp_path / out.split("/")[-1] / "summary.json").read_text())
    assert summary["n_neurons"] == 4 and summary["points"][0]["traced"] == 3


def test_cli_error_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"bogus": 1}))
    code, _, err = _run(["loopback", "--config", str(bad)], capsys)
    assert code == 2 and "bogus" in err
    code, _, err = _run(["report", str(tmp_path / "nowhere")], capsys)
    assert code == 1 and "config.json" in err
    run_dir = tmp_path / "r"
    run_dir.mkdir()
    (run_dir / "config.json").write_text(json.dumps({"command": "bench"}))
    (run_dir / "sweep.csv").write_text("nph,loss\n5,notanumber\n")
    code, _, err = _run(["report", str(run_dir)], capsys)
    assert code == 1 and "sweep.csv" in err
