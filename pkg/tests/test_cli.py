import hashlib
import json

import numpy as np
import pytest

from molcom.channel_models import VerticalChannelParams, peak_time
from molcom.cli import main
from molcom.particle_sim import synthetic_trace
from molcom.traces import parse_trace, read_trace, write_trace

REF = VerticalChannelParams(1.8788, 60.4567, 0.0301, 0.1)


def run_ok(*argv):
    assert main([str(a) for a in argv]) == 0


def manifest(path):
    return json.loads((path / "manifest.json").read_text())


class TestEval:
    def test_vertical_reference(self, capsys):
        run_ok("eval")
        ts = parse_trace(capsys.readouterr().out)
        assert len(ts) == 110
        assert abs(ts.t[np.argmax(ts.values)] - peak_time(REF)) <= 0.1

    def test_diffusion_table1(self, tmp_path):
        run_ok("eval", "--model", "diffusion", "--t-end", 2000, "--rate", 1, "--output", tmp_path)
        ts = read_trace(tmp_path / "eval.csv")
        assert np.all(ts.values > 0)
        rising = np.sign(np.diff(ts.values))
        assert np.count_nonzero(np.diff(rising[rising != 0]) != 0) == 1
        assert abs(ts.t[np.argmax(ts.values)] - 100 / (2 * 0.0993)) <= 1.0
        m = manifest(tmp_path)
        assert m["status"] == "ok" and m["config"]["distance"] == 10.0

    def test_clamp_negative(self, capsys):
        run_ok("eval", "--t-end", 30, "--clamp-negative")
        ts = parse_trace(capsys.readouterr().out)
        assert ts.values.min() == 0.0

    def test_empty_grid_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["eval", "--t-start", "5", "--t-end", "5"])
        assert info.value.code == 2
        assert "grid is empty" in capsys.readouterr().err

    def test_invalid_parameter_names_flag(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["eval", "--b", "-1"])
        assert info.value.code == 2
        assert "--b" in capsys.readouterr().err

    def test_json_format(self, capsys):
        run_ok("eval", "--format", "json", "--times", "0.5,1,2")
        doc = json.loads(capsys.readouterr().out)
        assert doc["t"] == [0.5, 1.0, 2.0]

    def test_config_precedence(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"eval": {"t_end": 2.0}, "rate": 2.0}))
        run_ok("eval", "--config", cfg)
        assert len(parse_trace(capsys.readouterr().out)) == 4
        run_ok("eval", "--config", cfg, "--t-end", "3")
        assert len(parse_trace(capsys.readouterr().out)) == 6


def synth(out, noise, seed=0):
    run_ok("synth", "--output", out, "--noise", noise, "--seed", seed)
    return sorted(out.glob("trial_*.csv"))


class TestSynthFit:
    def test_noiseless_average(self, tmp_path):
        files = synth(tmp_path / "s", 0.0)
        assert len(files) == 6
        run_ok("fit", *files, "--output", tmp_path / "f")
        report = json.loads((tmp_path / "f" / "fit_report.json").read_text())
        assert report["schema"] == "1"
        avg = report["average"]
        np.testing.assert_allclose([avg["a"], avg["b"], avg["e"]], REF.coefficients, rtol=1e-6)
        assert {"trial_id", "a", "b", "e", "rss", "iterations", "converged"} <= set(report["trials"][0])
        assert (tmp_path / "f" / "fit_trial_01.csv").exists()

    def test_noisy_average(self, tmp_path):
        files = synth(tmp_path / "s", 0.01, seed=17)
        run_ok("fit", *files, "--output", tmp_path / "f")
        avg = json.loads((tmp_path / "f" / "fit_report.json").read_text())["average"]
        rel = np.abs(np.array([avg["a"], avg["b"], avg["e"]]) / REF.coefficients - 1)
        assert np.all(rel <= 0.05)

    def test_malformed_without_keep_going(self, tmp_path, capsys):
        files = synth(tmp_path / "s", 0.01)
        bad = tmp_path / "bad.csv"
        bad.write_text("0.1,1\n0.2,oops\n")
        out = tmp_path / "f"
        assert main(["fit", *map(str, files), str(bad), "--output", str(out)]) == 1
        assert not (out / "fit_report.json").exists()
        assert manifest(out)["status"] == "error"
        assert "bad" in capsys.readouterr().err

    def test_keep_going_reports_partial(self, tmp_path):
        files = synth(tmp_path / "s", 0.01)
        bad = tmp_path / "bad.csv"
        bad.write_text("0.2,1\n0.1,2\n")
        out = tmp_path / "f"
        run_ok("fit", *files, bad, "--keep-going", "--output", out)
        report = json.loads((out / "fit_report.json").read_text())
        assert len(report["trials"]) == 6
        assert report["failures"][0]["trial_id"] == str(bad)

    @pytest.mark.parametrize("k", [4.0, 3.7])
    def test_normalize_removes_scale(self, tmp_path, k):
        ts = synthetic_trace(REF, np.arange(1, 111) / 10, 0.01, rng_seed=3, trial_id="x")
        # few enough decimals that k * value survives 9-digit formatting exactly
        ts = ts.with_values(np.round(ts.values, 6))
        write_trace(ts, tmp_path / "x.csv")
        write_trace(ts.with_values(k * ts.values), tmp_path / "kx.csv")
        run_ok("fit", tmp_path / "x.csv", "--normalize", "--output", tmp_path / "a")
        run_ok("fit", tmp_path / "kx.csv", "--normalize", "--output", tmp_path / "b")
        ra = json.loads((tmp_path / "a" / "fit_report.json").read_text())["trials"][0]
        rb = json.loads((tmp_path / "b" / "fit_report.json").read_text())["trials"][0]
        ca = np.loadtxt(tmp_path / "a" / "fit_x.csv", delimiter=",", comments="#")
        cb = np.loadtxt(tmp_path / "b" / "fit_x.csv", delimiter=",", comments="#")
        if k == 4.0:
            # power-of-two scaling is exact in binary floating point
            assert ra["b"] == rb["b"]
            assert np.array_equal(ca, cb)
        else:
            assert rb["b"] == pytest.approx(ra["b"], rel=1e-9)
            # curves are written with 9 significant digits
            np.testing.assert_allclose(cb, ca, rtol=2e-8, atol=1e-12)

    def test_baseline_auto(self, tmp_path):
        grid = np.arange(1, 1101) / 100
        ts = synthetic_trace(REF, grid, 0.0, trial_id="off")
        write_trace(ts.with_values(ts.values + 0.7), tmp_path / "off.csv")
        run_ok("fit", tmp_path / "off.csv", "--baseline", "auto", "--output", tmp_path / "f")
        tr = json.loads((tmp_path / "f" / "fit_report.json").read_text())["trials"][0]
        assert tr["b"] == pytest.approx(REF.b, rel=0.01)

    def test_manifest_digests(self, tmp_path):
        files = synth(tmp_path / "s", 0.0)
        run_ok("fit", files[0], "--output", tmp_path / "f")
        m = manifest(tmp_path / "f")
        assert m["inputs"][str(files[0])] == hashlib.sha256(files[0].read_bytes()).hexdigest()
        assert all((tmp_path / "f" / name).exists() for name in m["outputs"])
        assert m["wall_clock_seconds"] is None


class TestCompare:
    def test_model_against_itself(self, tmp_path):
        files = synth(tmp_path / "s", 0.0)
        run_ok("compare", *files, "--output", tmp_path / "c")
        data = np.loadtxt(tmp_path / "c" / "compare.csv", delimiter=",", comments="#")
        np.testing.assert_allclose(data[:, 1], data[:, 2], rtol=1e-7)
        assert manifest(tmp_path / "c")["summary"]["peak_lag_s"] == 0.0

    def test_delayed_experiment_has_positive_lag(self, tmp_path):
        delayed = VerticalChannelParams(1.8788, 120.0, 0.0301, 0.1)
        grid = np.arange(1, 111) / 10
        for i in range(3):
            write_trace(synthetic_trace(delayed, grid, 0.005, rng_seed=i, trial_id=f"d{i}"), tmp_path / f"d{i}.csv")
        run_ok("compare", *sorted(tmp_path.glob("d*.csv")), "--output", tmp_path / "c")
        assert manifest(tmp_path / "c")["summary"]["peak_lag_s"] > 0

    def test_mismatched_spans(self, tmp_path, capsys):
        write_trace(synthetic_trace(REF, np.arange(1, 111) / 10, trial_id="long"), tmp_path / "a.csv")
        write_trace(synthetic_trace(REF, np.arange(1, 51) / 10, trial_id="short"), tmp_path / "b.csv")
        assert main(["compare", str(tmp_path / "a.csv"), str(tmp_path / "b.csv")]) == 1
        err = capsys.readouterr().err
        assert "long covers [0.1, 11]" in err and "short covers [0.1, 5]" in err

    def test_resamples_offset_grids(self, tmp_path):
        write_trace(synthetic_trace(REF, np.linspace(0.1, 11, 110), trial_id="a"), tmp_path / "a.csv")
        write_trace(synthetic_trace(REF, np.linspace(0.1, 11, 56), trial_id="b"), tmp_path / "b.csv")
        run_ok("compare", tmp_path / "a.csv", tmp_path / "b.csv", "--format", "json", "--output", tmp_path / "c")
        doc = json.loads((tmp_path / "c" / "compare.json").read_text())
        assert len(doc["t"]) == 110


class TestSimulate:
    def write_config(self, path, **overrides):
        cfg = {"particle_count": 20000, "time_step": 0.1, "duration": 1.0, "diffusion_coefficient": 0.25,
               "snapshot_times": [0.5, 1.0], "measurement_distance": 0.5, "rng_seed": 3}
        cfg.update(overrides)
        path.write_text(json.dumps(cfg))
        return path

    def test_outputs(self, tmp_path):
        cfg = self.write_config(tmp_path / "sim.json")
        run_ok("simulate", cfg, "--output", tmp_path / "o")
        m = manifest(tmp_path / "o")
        assert m["outputs"] == ["snapshot_000.csv", "snapshot_001.csv", "receiver.csv"]
        assert len(m["summary"]["snapshots"]) == 2
        prof = read_trace(tmp_path / "o" / "snapshot_001.csv")
        assert prof.extra["particle_count"] == "20000"

    def test_seed_flag_overrides_config(self, tmp_path):
        cfg = self.write_config(tmp_path / "sim.json")
        run_ok("simulate", cfg, "--seed", 99, "--output", tmp_path / "o")
        assert manifest(tmp_path / "o")["config"]["rng_seed"] == 99

    def test_zero_particles(self, tmp_path, capsys):
        cfg = self.write_config(tmp_path / "sim.json", particle_count=0)
        assert main(["simulate", str(cfg), "--output", str(tmp_path / "o")]) == 1
        assert "$.particle_count" in capsys.readouterr().err
        assert manifest(tmp_path / "o")["status"] == "error"

    def test_timing_is_opt_in(self, tmp_path):
        cfg = self.write_config(tmp_path / "sim.json", particle_count=100)
        run_ok("simulate", cfg, "--timing", "--output", tmp_path / "o")
        assert manifest(tmp_path / "o")["wall_clock_seconds"] >= 0
