"""End-to-end CLI tests: exit codes, file formats, determinism, and the
documented error categories, all through in-process main() calls."""

import json

import numpy as np
import pytest

from qdcascade import CascadeForm, from_cascade_form, simulate_counts, write_records
from qdcascade.cli import main

REFERENCE = from_cascade_form(CascadeForm(0.5, 0.5, 0.05 + 0.17j))


def write_config(tmp_path, payload, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


def stderr_json(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    return json.loads(err[-1])


class TestGammaCurve:
    def test_writes_expected_columns_and_values(self, tmp_path, capsys):
        out = tmp_path / "curve.csv"
        rc = main(["gamma-curve", "--w-grid", "10,25,200", "--out", str(out)])
        assert rc == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "w_ueV,gamma_abs_numeric,gamma_abs_analytic,detection_prob"
        assert len(lines) == 4
        w, g, a, p = (float(v) for v in lines[1].split(","))
        assert w == 10.0
        assert g == pytest.approx(0.4533115941014563, rel=1e-8)
        assert a == pytest.approx(0.45294090152023825, rel=1e-6)  # closed form at 10/27
        assert p == pytest.approx(0.016114404190789047, rel=1e-8)

    def test_analytic_column_is_nan_beyond_splitting(self, tmp_path):
        out = tmp_path / "curve.csv"
        assert main(["gamma-curve", "--w-grid", "25,30", "--out", str(out)]) == 0
        row = out.read_text().splitlines()[2].split(",")
        assert row[2] == "nan"

    def test_byte_identical_reruns(self, tmp_path):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        main(["gamma-curve", "--w-grid", "5,25,120", "--out", str(a)])
        main(["gamma-curve", "--w-grid", "5,25,120", "--out", str(b)])
        assert a.read_bytes() == b.read_bytes()

    def test_decreasing_grid_rejected(self, tmp_path, capsys):
        rc = main(["gamma-curve", "--w-grid", "3,2", "--out", str(tmp_path / "x.csv")])
        assert rc == 2
        assert stderr_json(capsys)["error"] == "config"

    def test_unparsable_grid_rejected(self, tmp_path, capsys):
        rc = main(["gamma-curve", "--w-grid", "abc", "--out", str(tmp_path / "x.csv")])
        assert rc == 2

    def test_missing_output_directory_is_io_error(self, tmp_path, capsys):
        out = tmp_path / "no_such_dir" / "curve.csv"
        rc = main(["gamma-curve", "--w-grid", "5,25", "--out", str(out)])
        assert rc == 3
        assert stderr_json(capsys)["error"] == "io"


class TestConfigHandling:
    def test_unknown_field_names_the_path(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"cascade": {"bogus": 1}})
        rc = main(["gamma-curve", "--config", cfg, "--out", str(tmp_path / "x.csv")])
        assert rc == 2
        msg = stderr_json(capsys)
        assert msg["error"] == "config"
        assert "cascade.bogus" in msg["message"]

    def test_missing_config_file_is_io_error(self, tmp_path, capsys):
        rc = main(
            [
                "gamma-curve",
                "--config",
                str(tmp_path / "nope.json"),
                "--out",
                str(tmp_path / "x.csv"),
            ]
        )
        assert rc == 3

    def test_invalid_json_reports_line(self, tmp_path, capsys):
        path = tmp_path / "broken.json"
        path.write_text("{\n  bad\n}\n")
        rc = main(["gamma-curve", "--config", str(path), "--out", str(tmp_path / "x.csv")])
        assert rc == 2
        assert "broken.json:2" in stderr_json(capsys)["message"]

    def test_flag_overrides_config_seed(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"seed": 7, "w_grid": [5.0, 25.0]})
        rc = main(
            ["gamma-curve", "--config", cfg, "--seed", "9", "--out", str(tmp_path / "x.csv")]
        )
        assert rc == 0
        echo = json.loads(capsys.readouterr().out.splitlines()[0])
        assert echo["command"] == "gamma-curve"
        assert echo["config"]["seed"] == 9

    def test_defaults_are_resolved_in_echo(self, tmp_path, capsys):
        rc = main(["gamma-curve", "--w-grid", "5,25", "--out", str(tmp_path / "x.csv")])
        assert rc == 0
        echo = json.loads(capsys.readouterr().out.splitlines()[0])
        cfg = echo["config"]
        assert cfg["window"]["center"] == 0.0
        assert cfg["cascade"]["width_upper"] == 3.2
        assert cfg["tomography"]["settings"][0] == "HH"
        assert cfg["w_grid"] == [5.0, 25.0]

    def test_bad_state_section(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"state": {"p_hh": 0.5}})
        rc = main(["gamma-curve", "--config", cfg, "--out", str(tmp_path / "x.csv")])
        assert rc == 2
        assert "state" in stderr_json(capsys)["message"]

    def test_too_few_resamples_rejected(self, tmp_path, capsys):
        rc = main(
            [
                "tomo-sim",
                "--resamples",
                "10",
                "--out",
                str(tmp_path / "r.json"),
            ]
        )
        assert rc == 2
        assert "n_resamples" in stderr_json(capsys)["message"]

    def test_missing_required_flag_exits_via_argparse(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["reconstruct", "--out", str(tmp_path / "x.json")])
        assert exc.value.code == 2


class TestTomoSim:
    def run(self, tmp_path, name, extra=()):
        out = tmp_path / name
        rc = main(
            [
                "tomo-sim",
                "--n-per-setting",
                "2000",
                "--resamples",
                "100",
                "--out",
                str(out),
                *extra,
            ]
        )
        assert rc == 0
        return out

    def test_report_structure(self, tmp_path, capsys):
        out = self.run(tmp_path, "report.json")
        report = json.loads(out.read_text())
        assert report["schema_version"] == 1
        assert report["command"] == "tomo-sim"
        assert len(report["records"]) == 16
        assert report["config"]["tomography"]["n_per_setting"] == 2000.0
        recon = report["reconstruction"]
        assert 0.0 < recon["cascade_fit"]["coherence_abs"] <= 0.5
        assert recon["significance_sigmas"] > 3.0
        wit = report["witnesses"]
        assert set(wit) == {"bell_cascade", "bell_general", "ppt_min_eigenvalue"}
        assert wit["ppt_min_eigenvalue"] < 0.0
        true_state = np.array(report["true_state"]["real"])
        assert true_state[0, 0] == pytest.approx(0.5, abs=1e-6)

    def test_byte_identical_reruns(self, tmp_path):
        a = self.run(tmp_path, "a.json")
        b = self.run(tmp_path, "b.json")
        assert a.read_bytes() == b.read_bytes()

    def test_seed_changes_output(self, tmp_path):
        a = self.run(tmp_path, "a.json")
        b = self.run(tmp_path, "b.json", extra=("--seed", "99"))
        assert a.read_bytes() != b.read_bytes()

    def test_state_override(self, tmp_path):
        cfg = write_config(
            tmp_path,
            {"state": {"p_hh": 0.5, "p_vv": 0.5, "coherence": [0.25, 0.0]}},
        )
        out = self.run(tmp_path, "state.json", extra=("--config", cfg))
        report = json.loads(out.read_text())
        assert report["true_state"]["real"][0][3] == pytest.approx(0.25)
        assert report["reconstruction"]["cascade_fit"]["coherence"][0] == pytest.approx(
            0.25, abs=0.05
        )


class TestHbtSim:
    def run(self, tmp_path, name, extra=()):
        out = tmp_path / name
        rc = main(["hbt-sim", "--duration", "2e6", "--out", str(out), *extra])
        assert rc == 0
        return out

    def test_outputs_and_lifetime(self, tmp_path):
        out = self.run(tmp_path, "run")
        for label in ("hh", "hv", "vh"):
            assert (out / f"events_{label}.csv").exists()
            assert (out / f"corr_{label}.csv").exists()
        assert (out / "reduced.csv").exists()
        report = json.loads((out / "lifetime.json").read_text())
        assert report["command"] == "hbt-sim"
        assert set(report["coincidences"]) == {"HH", "HV", "VH"}
        assert report["lifetime_ns"] == pytest.approx(0.8, abs=0.15)
        assert 0.0 < report["lifetime_err_ns"] < 0.1
        header = (out / "events_hh.csv").read_text().splitlines()[0]
        assert header == "arm,t_ns,energy_ueV,pol"
        header = (out / "corr_hh.csv").read_text().splitlines()[0]
        assert header == "tau_ns,counts"

    def test_byte_identical_reruns(self, tmp_path):
        a = self.run(tmp_path, "a")
        b = self.run(tmp_path, "b")
        for name in (
            "events_hh.csv",
            "events_hv.csv",
            "events_vh.csv",
            "corr_hh.csv",
            "corr_hv.csv",
            "corr_vh.csv",
            "reduced.csv",
            "lifetime.json",
        ):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name

    def test_zero_pump_rate_still_succeeds(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"events": {"pump_rate_per_ns": 0.0}})
        out = tmp_path / "empty"
        rc = main(["hbt-sim", "--config", cfg, "--duration", "1e5", "--out", str(out)])
        assert rc == 0
        report = json.loads((out / "lifetime.json").read_text())
        assert report["lifetime_ns"] is None
        assert all(v == 0 for v in report["coincidences"].values())

    def test_too_little_data_is_a_computation_error(self, tmp_path, capsys):
        out = tmp_path / "tiny"
        rc = main(["hbt-sim", "--duration", "5e3", "--out", str(out)])
        assert rc == 4
        msg = stderr_json(capsys)
        assert msg["error"] == "computation"
        assert "FitFailed" in msg["message"]


class TestReconstruct:
    def make_records(self, tmp_path, n=20000.0, seed=3):
        records = simulate_counts(REFERENCE, n_per_setting=n, seed=seed)
        path = tmp_path / "records.csv"
        write_records(records, path)
        return path

    def test_round_trip_recovery(self, tmp_path):
        path = self.make_records(tmp_path)
        out = tmp_path / "report.json"
        rc = main(["reconstruct", "--records", str(path), "--out", str(out)])
        assert rc == 0
        report = json.loads(out.read_text())
        assert report["n_records"] == 16
        assert report["reconstruction"]["cascade_fit"]["coherence_abs"] == pytest.approx(
            abs(0.05 + 0.17j), abs=0.05
        )

    def test_matches_tomo_sim_reconstruction(self, tmp_path):
        # feeding tomo-sim's simulated records back through reconstruct with
        # the same seed must reproduce the reconstruction block exactly
        sim_out = tmp_path / "sim.json"
        rc = main(
            ["tomo-sim", "--n-per-setting", "2000", "--out", str(sim_out), "--seed", "5"]
        )
        assert rc == 0
        sim = json.loads(sim_out.read_text())
        csv_path = tmp_path / "records.csv"
        lines = ["arm1,arm2,counts,weight"]
        for r in sim["records"]:
            lines.append(f"{r['arm1']},{r['arm2']},{r['counts']!r},{r['weight']!r}")
        csv_path.write_text("\n".join(lines) + "\n")
        rec_out = tmp_path / "rec.json"
        rc = main(
            ["reconstruct", "--records", str(csv_path), "--out", str(rec_out), "--seed", "5"]
        )
        assert rc == 0
        rec = json.loads(rec_out.read_text())
        assert rec["reconstruction"] == sim["reconstruction"]
        assert rec["witnesses"] == sim["witnesses"]

    def test_missing_records_file_is_io_error(self, tmp_path, capsys):
        rc = main(
            [
                "reconstruct",
                "--records",
                str(tmp_path / "missing.csv"),
                "--out",
                str(tmp_path / "x.json"),
            ]
        )
        assert rc == 3
        assert stderr_json(capsys)["error"] == "io"

    def test_malformed_records_are_config_errors(self, tmp_path, capsys):
        path = tmp_path / "bad.csv"
        path.write_text("wrong,header,entirely,here\nH,H,1,1\n")
        rc = main(
            ["reconstruct", "--records", str(path), "--out", str(tmp_path / "x.json")]
        )
        assert rc == 2
        assert stderr_json(capsys)["error"] == "config"

    def test_rank_deficient_records_are_computation_errors(self, tmp_path, capsys):
        records = simulate_counts(
            REFERENCE,
            settings=tuple((a, b) for a in "HVD" for b in "HVDR"),
            n_per_setting=1e4,
            seed=6,
        )
        path = tmp_path / "twelve.csv"
        write_records(records, path)
        rc = main(
            ["reconstruct", "--records", str(path), "--out", str(tmp_path / "x.json")]
        )
        assert rc == 4
        msg = stderr_json(capsys)
        assert msg["error"] == "computation"
        assert "SingularDesign" in msg["message"]
