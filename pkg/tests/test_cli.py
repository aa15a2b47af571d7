import json
from pathlib import Path

import pytest

from nonautolin.cli import RunConfig, main
from nonautolin.errors import ConfigError


def run(args):
    return main(args)


def load(path):
    return json.loads(Path(path).read_text())


class TestCheckCommand:
    def test_ex1_passes(self, tmp_path):
        out = tmp_path / "rep.json"
        rc = run(["check", "--system", "ex1", "--lambda", "0.693",
                  "--gamma-scale", "0.9", "--out", str(out)])
        assert rc == 0
        rep = load(out)
        assert rep["verdict"] == "pass"
        assert rep["schema_version"] == "1"
        assert rep["hypothesis"]["q_bound"] < 1.0
        assert rep["hypothesis"]["bc4_ok"] is True

    def test_emo_fails_with_divergence_witness(self, tmp_path):
        out = tmp_path / "rep.json"
        rc = run(["check", "--system", "emo", "--c", "0.01", "--window", "50",
                  "--out", str(out)])
        assert rc == 1
        rep = load(out)
        assert rep["verdict"] == "fail"
        j_verdicts = {
            n: entry["j_series"]["verdict"] for n, entry in rep["hypothesis"]["ac2"].items()
        }
        assert all(v == "divergent" for v in j_verdicts.values())

    def test_gamma_scale_zero_passes_with_zero_sums(self, tmp_path):
        out = tmp_path / "rep.json"
        rc = run(["check", "--system", "ex1", "--gamma-scale", "0", "--out", str(out)])
        assert rc == 0
        rep = load(out)
        assert rep["hypothesis"]["bc2"]["partial_sum"] == 0.0
        assert rep["hypothesis"]["q_bound"] == 0.0

    def test_stdout_json(self, capsys):
        rc = run(["check", "--system", "remm", "--gamma-scale", "0.5",
                  "--n-min", "-3", "--n-max", "3", "--window", "20"])
        assert rc == 0
        rep = json.loads(capsys.readouterr().out)
        assert rep["verdict"] == "pass"


class TestConjugateCommand:
    def test_ex1_small_run(self, tmp_path):
        out = tmp_path / "rep.json"
        rc = run(["conjugate", "--system", "ex1", "--gamma-scale", "0.5",
                  "--n-min", "-2", "--n-max", "2", "--out", str(out)])
        assert rc == 0
        rep = load(out)
        assert rep["inverse"]["ok"] is True
        assert rep["inverse"]["max_residual"] <= rep["inverse"]["threshold"]
        assert rep["equivariance"]["ok"] is True
        assert rep["equivariance"]["max_residual"] <= 1e-7
        assert rep["jacobians"] is None

    def test_gate_blocks_uncertified_system(self, tmp_path):
        out = tmp_path / "rep.json"
        rc = run(["conjugate", "--system", "emo", "--c", "0.01",
                  "--n-min", "-1", "--n-max", "1", "--out", str(out)])
        assert rc == 1
        rep = load(out)
        assert rep["equivariance"] is None  # phase skipped without --force

    def test_force_runs_and_records_probe_errors(self, tmp_path):
        out = tmp_path / "rep.json"
        rc = run(["conjugate", "--system", "emo", "--c", "0.01", "--force",
                  "--n-min", "0", "--n-max", "0", "--out", str(out)])
        assert rc == 1
        rep = load(out)
        assert rep["inverse"] is not None
        assert rep["inverse"]["errors"]  # contraction violations per n


class TestDerivativesCommand:
    def test_end_cfg_run(self, tmp_path):
        out = tmp_path / "rep.json"
        rc = run(["derivatives", "--system", "end_cfg", "--gamma-scale", "0.9",
                  "--n-min", "-2", "--n-max", "2", "--out", str(out)])
        assert rc == 0
        rep = load(out)
        assert rep["jacobians"]["ok"] is True
        assert rep["jacobians"]["max_rel_error"] <= 1e-4
        kinds = {r["kind"] for r in rep["jacobians"]["rows"]}
        assert "d_barh_deta" in kinds and "d_h_deta" in kinds


class TestReportCommand:
    def test_report_writes_json_and_csv(self, tmp_path):
        out = tmp_path / "run"
        rc = run(["report", "--system", "ex1", "--gamma-scale", "0.5",
                  "--n-min", "-2", "--n-max", "2", "--out", str(out)])
        assert rc == 0
        names = sorted(p.name for p in out.iterdir())
        assert names == ["equivariance.csv", "inverse.csv", "jacobians.csv", "report.json"]
        header = (out / "inverse.csv").read_text().splitlines()[0]
        assert header.startswith("n,xi0,xi1,value0,value1,residual,tail_bound")

    def test_report_validates_against_schema(self, tmp_path):
        jsonschema = pytest.importorskip("jsonschema")
        import nonautolin

        out = tmp_path / "run"
        rc = run(["report", "--system", "ex1", "--gamma-scale", "0.5",
                  "--n-min", "-1", "--n-max", "1", "--out", str(out)])
        assert rc == 0
        schema = json.loads(
            (Path(nonautolin.__file__).parent / "report_schema.json").read_text()
        )
        jsonschema.validate(load(out / "report.json"), schema)

    def test_determinism(self, tmp_path):
        args = ["report", "--system", "ex1", "--gamma-scale", "0.5",
                "--n-min", "-1", "--n-max", "1", "--seed", "7"]
        rc1 = run(args + ["--out", str(tmp_path / "a")])
        rc2 = run(args + ["--out", str(tmp_path / "b")])
        assert rc1 == rc2 == 0
        rep_a = load(tmp_path / "a" / "report.json")
        rep_b = load(tmp_path / "b" / "report.json")
        rep_a.pop("timing")
        rep_b.pop("timing")
        assert rep_a == rep_b


class TestConfigHandling:
    def test_unknown_system_exits_2(self, capsys):
        assert run(["check", "--system", "nope"]) == 2
        assert "configuration error" in capsys.readouterr().err

    def test_bad_flag_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            run(["check", "--system", "ex1", "--window", "not-an-int"])
        assert exc.value.code == 2

    def test_missing_parameter_file(self, capsys):
        assert run(["check", "--system", "missing.json"]) == 2

    def test_parameter_file_round_trip(self, tmp_path):
        params = {
            "system": "ex2",
            "theta_ratio": 2.0,
            "rotation_angle": 0.3,
            "gamma_scale": 0.7,
            "n_min": -2,
            "n_max": 2,
            "window_halfwidth": 30,
        }
        pfile = tmp_path / "params.json"
        pfile.write_text(json.dumps(params))
        out = tmp_path / "rep.json"
        rc = run(["check", "--system", str(pfile), "--out", str(out)])
        assert rc == 0
        rep = load(out)
        assert rep["config"]["system"] == "ex2"
        assert rep["config"]["window_halfwidth"] == 30

    def test_parameter_file_rejects_unknown_keys(self, tmp_path):
        pfile = tmp_path / "params.json"
        pfile.write_text(json.dumps({"system": "ex1", "wat": 1}))
        assert run(["check", "--system", str(pfile)]) == 2

    def test_flags_override_file(self, tmp_path):
        pfile = tmp_path / "params.json"
        pfile.write_text(json.dumps({"system": "ex1", "gamma_scale": 0.9}))
        out = tmp_path / "rep.json"
        rc = run(["check", "--system", str(pfile), "--gamma-scale", "0.1",
                  "--n-min", "-1", "--n-max", "1", "--out", str(out)])
        assert rc == 0
        assert load(out)["config"]["system_params"]["gamma_scale"] == 0.1

    def test_csv_format_requires_out(self, capsys):
        assert run(["check", "--system", "ex1", "--format", "csv",
                    "--n-min", "-1", "--n-max", "1"]) == 2

    def test_run_config_validation(self):
        with pytest.raises(ConfigError):
            RunConfig(system="ex1", series_tol=-1.0)
        with pytest.raises(ConfigError):
            RunConfig(system="ex1", n_min=5, n_max=1)
        with pytest.raises(ConfigError):
            RunConfig(system="bogus")

    def test_nl_threads_cap(self, monkeypatch):
        from nonautolin.cli import _worker_count

        monkeypatch.setenv("NL_THREADS", "2")
        assert _worker_count(100) == 2
        monkeypatch.setenv("NL_THREADS", "1")
        assert _worker_count(100) == 1
        monkeypatch.delenv("NL_THREADS")
        assert _worker_count(1) == 1

    def test_thread_count_does_not_change_results(self, tmp_path, monkeypatch):
        args = ["conjugate", "--system", "ex1", "--gamma-scale", "0.5",
                "--n-min", "-2", "--n-max", "2", "--seed", "3"]
        monkeypatch.setenv("NL_THREADS", "1")
        assert run(args + ["--out", str(tmp_path / "serial.json")]) == 0
        monkeypatch.setenv("NL_THREADS", "4")
        assert run(args + ["--out", str(tmp_path / "pooled.json")]) == 0
        a, b = load(tmp_path / "serial.json"), load(tmp_path / "pooled.json")
        a.pop("timing")
        b.pop("timing")
        assert a == b
