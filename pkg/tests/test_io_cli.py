"""CSV schema, JSON reports, and the command-line surface."""

import io as stdio
import json
import re

import jsonschema
import numpy as np
import pytest

from scalefit import cli, dataset, io, laws
from scalefit.dataset import NoiseModel, Split, generate_collinear
from scalefit.errors import DatasetFormatError
from scalefit.laws import LawKind, LawParams

TRUTH = LawParams.from_named(
    LawKind.CHINCHILLA, A=406.4, B=410.7, E=1.69, alpha=0.34, beta=0.28
)

TRUTH_FLAG = "A=406.4,B=410.7,E=1.69,alpha=0.34,beta=0.28"


class TestParseDataset:
    def test_minimal_file(self):
        ds = io.parse_dataset(stdio.StringIO("n_params,d_tokens,loss\n1e7,2e8,3.5\n"))
        assert len(ds) == 1
        o = ds.observations[0]
        assert (o.n, o.d, o.loss) == (1e7, 2e8, 3.5)
        assert o.ray == 20.0
        assert o.split is Split.TRAIN

    def test_malformed_number_names_line(self):
        with pytest.raises(DatasetFormatError) as err:
            io.parse_dataset(
                stdio.StringIO("n_params,d_tokens,loss\n1e7,not_a_number,3.5\n")
            )
        assert err.value.line == 2
        assert "line 2" in str(err.value)

    def test_unknown_column_rejected(self):
        with pytest.raises(DatasetFormatError):
            io.parse_dataset(stdio.StringIO("n_params,d_tokens,loss,color\n1,2,3,red\n"))

    def test_nonpositive_values_rejected(self):
        with pytest.raises(DatasetFormatError) as err:
            io.parse_dataset(stdio.StringIO("n_params,d_tokens,loss\n1e7,2e8,3.5\n1e7,-2,3.5\n"))
        assert err.value.line == 3

    def test_split_and_ray_columns(self):
        text = (
            "n_params,d_tokens,loss,split,ray\n"
            "1e7,2e8,3.5,holdout_co,20\n"
            "1e7,3e8,3.4,train,\n"
        )
        ds = io.parse_dataset(stdio.StringIO(text))
        assert ds.observations[0].split is Split.HOLDOUT_COLLINEAR
        assert ds.observations[0].ray == 20.0
        assert ds.observations[1].ray == 30.0

    def test_unknown_split_rejected(self):
        with pytest.raises(DatasetFormatError):
            io.parse_dataset(
                stdio.StringIO("n_params,d_tokens,loss,split\n1e7,2e8,3.5,test\n")
            )

    def test_header_mandatory(self):
        with pytest.raises(DatasetFormatError):
            io.parse_dataset(stdio.StringIO(""))
        with pytest.raises(DatasetFormatError):
            io.parse_dataset(stdio.StringIO("n_params,d_tokens,loss\n"))

    def test_round_trip_is_a_fixed_point(self):
        ds = generate_collinear(TRUTH, np.logspace(7, 9, 5), [20.0, 50.0], NoiseModel(0.01, 3))
        once = io.dumps_dataset(ds)
        twice = io.dumps_dataset(io.parse_dataset(stdio.StringIO(once)))
        assert once == twice


class TestReportSerialization:
    def test_seventeen_significant_digits(self):
        text = io.dumps_report({"x": 1.0 / 3.0})
        assert "0.33333333333333331" in text

    def test_non_finite_floats_become_strings(self):
        text = io.dumps_report({"a": float("inf"), "b": float("nan"), "c": float("-inf")})
        assert '"inf"' in text and '"nan"' in text and '"-inf"' in text
        assert "Infinity" not in text and "NaN" not in text

    def test_round_trip_is_lossless(self):
        payload = {
            "f": 0.1 + 0.2,
            "tiny": 5e-324,
            "big": 1.7976931348623157e308,
            "list": [1, 2.5, None, True, "text"],
        }
        decoded = json.loads(io.dumps_report(payload))
        assert decoded["f"] == payload["f"]
        assert decoded["tiny"] == payload["tiny"]
        assert decoded["big"] == payload["big"]

    def test_skeleton_has_all_sections(self):
        rep = io.report_skeleton({"command": "x"})
        assert set(rep) == {
            "schema_version", "config", "fit", "diagnostics", "design", "evaluation",
        }


def run(capsys, tmp_path, *argv):
    code = cli.run_cli(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestCliExitCodes:
    def test_unknown_flag_is_usage_error(self, capsys, tmp_path):
        code, _, err = run(capsys, tmp_path, "fit", "--data", "x.csv", "--no-such-flag")
        assert code == 1
        assert "usage" in err.lower()

    def test_missing_file_is_data_error(self, capsys, tmp_path):
        code, _, err = run(capsys, tmp_path, "fit", "--data", str(tmp_path / "nope.csv"))
        assert code == 2

    def test_bad_csv_is_data_error(self, capsys, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("n_params,d_tokens,loss\n1e7,zzz,3.5\n")
        code, _, err = run(capsys, tmp_path, "fit", "--data", str(bad))
        assert code == 2
        assert "line 2" in err

    def test_single_ray_check_design_fails_with_exit_three(self, capsys, tmp_path):
        out = tmp_path / "report.json"
        code, _, err = run(
            capsys, tmp_path, "check-design", "--ratios", "20",
            "--beta-eff", "0.28", "--kappa-target", "100", "--out", str(out),
        )
        assert code == 3
        report = json.loads(out.read_text())
        assert report["design"]["diversity"]["v_k"] == 0.0
        assert not report["design"]["diversity"]["passes"]
        assert "v_k = 0" in report["design"]["verdict"]

    def test_diverse_check_design_passes(self, capsys, tmp_path):
        code, out_text, _ = run(
            capsys, tmp_path, "check-design", "--ratios", "20,100",
            "--beta-eff", "0.28", "--kappa-target", "500",
        )
        assert code == 0
        report = json.loads(out_text)
        assert report["design"]["diversity"]["passes"]


class TestCliPipeline:
    def simulate(self, capsys, tmp_path, name="data.csv", sigma="0", extra=()):
        path = tmp_path / name
        code, _, _ = run(
            capsys, tmp_path, "simulate", "--law", "chinchilla",
            "--truth", TRUTH_FLAG, "--design", "grid",
            "--sizes", "log:5.04e6:7.65e7:10", "--tokens", "log:1.01e7:2.759e8:8",
            "--sigma", sigma, "--seed", "5", "--out", str(path), *extra,
        )
        assert code == 0
        return path

    def test_simulate_then_fit_recovers_truth(self, capsys, tmp_path):
        data = self.simulate(capsys, tmp_path)
        out = tmp_path / "fit.json"
        code, _, _ = run(
            capsys, tmp_path, "fit", "--data", str(data), "--law", "chinchilla",
            "--restarts", "24", "--out", str(out),
        )
        assert code == 0
        report = json.loads(out.read_text())
        params = report["fit"]["params"]
        assert params["A"] == pytest.approx(406.4, rel=1e-5)
        assert params["alpha"] == pytest.approx(0.34, rel=1e-6)
        jsonschema.validate(report, io.REPORT_SCHEMA)

    def test_diagnose_on_single_ray_reports_inflation(self, capsys, tmp_path):
        data = tmp_path / "co.csv"
        code, _, _ = run(
            capsys, tmp_path, "simulate", "--law", "chinchilla", "--truth", TRUTH_FLAG,
            "--design", "collinear", "--sizes", "log:1e7:1e9:10", "--ratios", "20",
            "--sigma", "0.002", "--seed", "3", "--out", str(data),
        )
        assert code == 0
        out = tmp_path / "diag.json"
        code, _, _ = run(
            capsys, tmp_path, "diagnose", "--data", str(data), "--law", "chinchilla",
            "--restarts", "16", "--sigma", "0.002", "--out", str(out),
        )
        assert code == 0
        report = json.loads(out.read_text())
        jsonschema.validate(report, io.REPORT_SCHEMA)
        ci = report["diagnostics"]["ci"]
        assert ci["inflation_ratio"] is not None
        assert ci["inflation_ratio"] >= 1.0 - 1e-6

    def test_evaluate_reports_split_metrics(self, capsys, tmp_path):
        data = self.simulate(
            capsys, tmp_path, sigma="0.01", extra=("--token-cut", "2.0e8")
        )
        out = tmp_path / "eval.json"
        code, _, _ = run(
            capsys, tmp_path, "evaluate", "--data", str(data), "--law", "chinchilla",
            "--restarts", "8", "--out", str(out),
        )
        assert code == 0
        report = json.loads(out.read_text())
        jsonschema.validate(report, io.REPORT_SCHEMA)
        assert "train" in report["evaluation"]["splits"]
        assert "holdout_nc" in report["evaluation"]["splits"]

    def test_isoflop_emits_curve_table(self, capsys, tmp_path):
        data = self.simulate(
            capsys, tmp_path, sigma="0.01", extra=("--token-cut", "2.0e8")
        )
        out = tmp_path / "curves.csv"
        code, _, _ = run(
            capsys, tmp_path, "isoflop", "--data", str(data), "--law", "chinchilla",
            "--restarts", "6", "--samples", "7", "--out", str(out),
        )
        assert code == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "curve,n_params,predicted_loss,compute"
        assert len(lines) > 7
        assert not re.search(r"np\.float", lines[1])

    def test_plan_passes_and_emits_table(self, capsys, tmp_path):
        out = tmp_path / "plan.json"
        code, out_text, err_text = run(
            capsys, tmp_path, "plan", "--budget", "20", "--k-range", "20:100",
            "--n-range", "1e7:1e9", "--rays", "2", "--kappa-target", "500",
            "--epsilon", "0.06", "--beta-eff", "0.28", "--out", str(out),
        )
        assert code == 0
        report = json.loads(out.read_text())
        jsonschema.validate(report, io.REPORT_SCHEMA)
        assert report["design"]["feasible"] is True
        assert "tokens/param" in out_text  # human-readable table

    def test_plan_infeasible_range_exits_three(self, capsys, tmp_path):
        code, _, err = run(
            capsys, tmp_path, "plan", "--budget", "20", "--k-range", "20:20",
            "--n-range", "1e7:1e9", "--rays", "2", "--kappa-target", "100",
            "--epsilon", "0.06",
        )
        assert code == 3
        assert "infeasible" in err.lower()

    def test_subset_sweep_report(self, capsys, tmp_path):
        out = tmp_path / "sweep.json"
        code, _, _ = run(
            capsys, tmp_path, "subset-sweep", "--law", "chinchilla",
            "--truth", TRUTH_FLAG, "--sizes", "log:1e7:1e9:6",
            "--ratio-pool", "1,2,3", "--tokens", "log:2e7:2e9:6",
            "--holdout-ratios", "6,8", "--holdout-tokens", "4e9",
            "--sigma", "0.01", "--seeds", "1", "--restarts", "4",
            "--kappa-target", "100", "--out", str(out),
        )
        assert code == 0
        report = json.loads(out.read_text())
        jsonschema.validate(report, io.REPORT_SCHEMA)
        assert len(report["evaluation"]["sweep"]["records"]) == 7
        assert report["evaluation"]["win_rate"]["total"] == 7

    def test_reports_are_byte_identical_across_runs(self, capsys, tmp_path):
        data = self.simulate(capsys, tmp_path, sigma="0.01")
        outputs = []
        for tag in ("a", "b"):
            out = tmp_path / f"fit_{tag}.json"
            code, _, _ = run(
                capsys, tmp_path, "fit", "--data", str(data), "--law", "chinchilla",
                "--restarts", "8", "--out", str(out),
            )
            assert code == 0
            outputs.append(out.read_bytes())
        assert outputs[0] == outputs[1]

    def test_simulate_deterministic(self, capsys, tmp_path):
        a = self.simulate(capsys, tmp_path, name="a.csv", sigma="0.02")
        b = self.simulate(capsys, tmp_path, name="b.csv", sigma="0.02")
        assert a.read_bytes() == b.read_bytes()

    def test_no_raw_nan_or_infinity_tokens(self, capsys, tmp_path):
        # a design whose report carries an infinite sentinel
        out = tmp_path / "check.json"
        code, _, _ = run(
            capsys, tmp_path, "check-design", "--ratios", "20",
            "--kappa-target", "100", "--out", str(out),
        )
        assert code == 3
        text = out.read_text()
        assert "Infinity" not in text and "NaN" not in text
        assert '"inf"' in text  # the leading-order ratio diverges on one ray
        jsonschema.validate(json.loads(text), io.REPORT_SCHEMA)
