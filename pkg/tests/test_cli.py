"""Tests for the command-line pipelines."""

import hashlib
import json

import numpy as np
import pytest
from click.testing import CliRunner

from twinbeam.cli import main
from twinbeam.config import CONFIG_SCHEMA, default_config, load_config, validate_config


@pytest.fixture()
def runner():
    return CliRunner()


def small_doc(**overrides):
    doc = default_config()
    doc["master_seed"] = 4242
    doc["source"].update(
        {
            "shots": 120,
            "nu_per_mode": 4.5,
        }
    )
    doc["analysis"]["bootstrap_resamples"] = 50
    doc["hom"].update(
        {
            "t2_values": [-180.0, -90.0, 0.0, 90.0, 180.0],
            "shots_per_point": 150,
            "fock_n_max": 8,
        }
    )
    doc.update(overrides)
    return doc


def write_doc(tmp_path, doc, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc, indent=2))
    return path


def tree_digest(out_dir):
    return {
        f.name: hashlib.sha256(f.read_bytes()).hexdigest()
        for f in sorted(out_dir.iterdir())
    }


class TestConfigValidation:
    def test_default_config_is_valid(self):
        validate_config(default_config())

    def test_unknown_key_rejected(self, tmp_path, runner):
        doc = small_doc()
        doc["surprise"] = 1
        path = write_doc(tmp_path, doc)
        result = runner.invoke(
            main, ["simulate-source", "--config", str(path), "--out", str(tmp_path / "o")]
        )
        assert result.exit_code == 2
        assert "surprise" in result.output

    def test_nested_unknown_key_rejected(self, tmp_path):
        doc = small_doc()
        doc["source"]["extra"] = 2
        with pytest.raises(ValueError):
            validate_config(doc)

    def test_zero_shots_rejected(self, tmp_path, runner):
        doc = small_doc()
        doc["source"]["shots"] = 0
        path = write_doc(tmp_path, doc)
        result = runner.invoke(
            main, ["simulate-source", "--config", str(path), "--out", str(tmp_path / "o")]
        )
        assert result.exit_code == 2
        assert "shots" in result.output

    def test_not_json_rejected(self, tmp_path, runner):
        path = tmp_path / "bad.json"
        path.write_text("{nope")
        result = runner.invoke(
            main, ["simulate-source", "--config", str(path), "--out", str(tmp_path / "o")]
        )
        assert result.exit_code == 2

    def test_schema_has_no_loose_objects(self):
        # every object level must reject unknown keys
        def walk(node):
            if isinstance(node, dict):
                if node.get("type") == "object":
                    assert node.get("additionalProperties") is False
                for value in node.values():
                    walk(value)
            elif isinstance(node, list):
                for value in node:
                    walk(value)

        walk(CONFIG_SCHEMA)

    def test_loader_roundtrip(self, tmp_path):
        path = write_doc(tmp_path, small_doc())
        doc = load_config(path)
        assert doc["master_seed"] == 4242


class TestSimulateSource:
    def test_outputs_and_manifest(self, tmp_path, runner):
        path = write_doc(tmp_path, small_doc())
        out = tmp_path / "run"
        result = runner.invoke(
            main, ["simulate-source", "--config", str(path), "--out", str(out)]
        )
        assert result.exit_code == 0, result.output
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 4242
        assert manifest["timestamp"] is None
        listed = {f["name"] for f in manifest["files"]}
        assert listed == {"events.csv", "events.meta.json"}
        for entry in manifest["files"]:
            digest = hashlib.sha256((out / entry["name"]).read_bytes()).hexdigest()
            assert digest == entry["sha256"]

    def test_rerun_is_byte_identical(self, tmp_path, runner):
        path = write_doc(tmp_path, small_doc())
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        for out in (out_a, out_b):
            result = runner.invoke(
                main, ["simulate-source", "--config", str(path), "--out", str(out)]
            )
            assert result.exit_code == 0, result.output
        assert tree_digest(out_a) == tree_digest(out_b)

    def test_seed_override(self, tmp_path, runner):
        path = write_doc(tmp_path, small_doc())
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        runner.invoke(main, ["simulate-source", "--config", str(path), "--out", str(out_a)])
        runner.invoke(
            main,
            ["simulate-source", "--config", str(path), "--out", str(out_b), "--seed", "7"],
        )
        assert tree_digest(out_a) != tree_digest(out_b)
        manifest = json.loads((out_b / "manifest.json").read_text())
        assert manifest["seed"] == 7


class TestAnalyzeCounts:
    @pytest.fixture()
    def events_dir(self, tmp_path, runner):
        doc = small_doc()
        doc["source"]["shots"] = 400
        path = write_doc(tmp_path, doc)
        out = tmp_path / "events"
        result = runner.invoke(
            main, ["simulate-source", "--config", str(path), "--out", str(out)]
        )
        assert result.exit_code == 0, result.output
        return path, out

    def test_full_analysis(self, tmp_path, runner, events_dir):
        config_path, events_out = events_dir
        out = tmp_path / "analysis"
        result = runner.invoke(
            main,
            [
                "analyze-counts",
                "--events", str(events_out / "events.csv"),
                "--config", str(config_path),
                "--out", str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        summed = (out / "summed_histogram.csv").read_text().splitlines()
        assert summed[0] == "n,occurrences,probability,err,thermal,poisson"
        pooled = (out / "pooled_histogram.csv").read_text().splitlines()
        assert pooled[0] == "n,occurrences,probability,err,thermal,poisson,multimode"
        fit = json.loads((out / "degeneracy_fit.json").read_text())
        assert fit["degeneracy"] > 0
        assert fit["std_err"] > 0
        assert fit["bootstrap_std_err"] is not None
        cells = (out / "cell_stats.csv").read_text().splitlines()
        assert cells[0] == "ix,iy,iz,mean,kept"
        assert len(cells) == 46

    def test_empty_selection_exits_3(self, tmp_path, runner, events_dir):
        config_path, events_out = events_dir
        doc = json.loads(config_path.read_text())
        doc["analysis"]["min_mean"] = 99.0
        path = write_doc(tmp_path, doc, "strict.json")
        result = runner.invoke(
            main,
            [
                "analyze-counts",
                "--events", str(events_out / "events.csv"),
                "--config", str(path),
                "--out", str(tmp_path / "empty"),
            ],
        )
        assert result.exit_code == 3

    def test_malformed_event_row_exits_2_naming_line(self, tmp_path, runner, events_dir):
        config_path, events_out = events_dir
        csv_path = events_out / "events.csv"
        lines = csv_path.read_text().splitlines()
        lines[5] = "0,oops,0.0,0.0"
        broken = tmp_path / "broken.csv"
        broken.write_text("\n".join(lines) + "\n")
        (tmp_path / "broken.meta.json").write_text(
            (events_out / "events.meta.json").read_text()
        )
        result = runner.invoke(
            main,
            [
                "analyze-counts",
                "--events", str(broken),
                "--config", str(config_path),
                "--out", str(tmp_path / "x"),
            ],
        )
        assert result.exit_code == 2
        assert ":6:" in result.output

    def test_rerun_is_byte_identical(self, tmp_path, runner, events_dir):
        config_path, events_out = events_dir
        outs = (tmp_path / "r1", tmp_path / "r2")
        for out in outs:
            result = runner.invoke(
                main,
                [
                    "analyze-counts",
                    "--events", str(events_out / "events.csv"),
                    "--config", str(config_path),
                    "--out", str(out),
                ],
            )
            assert result.exit_code == 0, result.output
        assert tree_digest(outs[0]) == tree_digest(outs[1])


class TestSimulateHomAndFitDip:
    @pytest.fixture()
    def scan_dir(self, tmp_path, runner):
        doc = small_doc()
        doc["hom"]["shots_per_point"] = 600
        doc["hom"]["t2_values"] = list(np.linspace(-240, 240, 9))
        path = write_doc(tmp_path, doc)
        out = tmp_path / "hom"
        result = runner.invoke(
            main, ["simulate-hom", "--config", str(path), "--out", str(out)]
        )
        assert result.exit_code == 0, result.output
        return path, out

    def test_scan_outputs(self, scan_dir):
        _, out = scan_dir
        lines = (out / "hom_scan.csv").read_text().splitlines()
        assert lines[0] == "t2_us,corr,err"
        assert len(lines) == 10
        events = (out / "hom_events.csv").read_text().splitlines()
        assert events[0] == "shot,vx,vy,vz,port,t2_us"

    def test_dip_visible(self, scan_dir):
        _, out = scan_dir
        rows = [
            [float(v) for v in line.split(",")]
            for line in (out / "hom_scan.csv").read_text().splitlines()[1:]
        ]
        center = min(rows, key=lambda r: abs(r[0]))[1]
        edge = max(rows, key=lambda r: abs(r[0]))[1]
        assert center < edge

    def test_fit_dip(self, tmp_path, runner, scan_dir):
        _, out = scan_dir
        fit_out = tmp_path / "fit"
        result = runner.invoke(
            main,
            [
                "fit-dip", str(out / "hom_scan.csv"),
                "--nu", "0.33", "--nu-std", "0.07",
                "--out", str(fit_out),
            ],
        )
        assert result.exit_code == 0, result.output
        fit = json.loads((fit_out / "dip_fit.json").read_text())
        assert 0.3 < fit["visibility"] <= 1.0
        assert fit["converged"]
        assert "comparison" in fit
        assert round(fit["comparison"]["v_predicted"], 2) == 0.72
        curve = (fit_out / "fitted_curve.csv").read_text().splitlines()
        assert curve[0] == "t2_us,corr_fit"
        assert len(curve) == 201

    def test_fit_dip_too_few_rows_exits_2(self, tmp_path, runner):
        path = tmp_path / "tiny.csv"
        path.write_text("t2_us,corr,err\n0.0,1.0,0.1\n1.0,0.9,0.1\n")
        result = runner.invoke(
            main, ["fit-dip", str(path), "--out", str(tmp_path / "f")]
        )
        assert result.exit_code == 2

    def test_fit_dip_malformed_row_exits_2(self, tmp_path, runner):
        path = tmp_path / "bad.csv"
        path.write_text("t2_us,corr,err\n0.0,1.0\n")
        result = runner.invoke(
            main, ["fit-dip", str(path), "--out", str(tmp_path / "f")]
        )
        assert result.exit_code == 2
        assert ":2:" in result.output

    def test_flat_scan_when_overlap_never_opens(self, tmp_path, runner):
        # Dip centre far outside the scanned window: overlap stays ~0 and
        # the correlation curve is flat within its errors.
        doc = small_doc()
        doc["hom"]["t0"] = 1.0e6
        doc["hom"]["shots_per_point"] = 2000
        path = write_doc(tmp_path, doc)
        out = tmp_path / "flat"
        result = runner.invoke(
            main, ["simulate-hom", "--config", str(path), "--out", str(out)]
        )
        assert result.exit_code == 0, result.output
        rows = [
            [float(v) for v in line.split(",")]
            for line in (out / "hom_scan.csv").read_text().splitlines()[1:]
        ]
        corr = np.array([r[1] for r in rows])
        err = np.array([r[2] for r in rows])
        assert corr.max() - corr.min() < 4 * err.max()

    def test_hom_rerun_byte_identical(self, tmp_path, runner):
        doc = small_doc()
        path = write_doc(tmp_path, doc)
        outs = (tmp_path / "h1", tmp_path / "h2")
        for out in outs:
            result = runner.invoke(
                main, ["simulate-hom", "--config", str(path), "--out", str(out)]
            )
            assert result.exit_code == 0, result.output
        assert tree_digest(outs[0]) == tree_digest(outs[1])


class TestPredictVisibility:
    def test_present_work_row(self, tmp_path, runner):
        out = tmp_path / "pred"
        result = runner.invoke(
            main,
            ["predict-visibility", "--nu", "0.33", "--nu-std", "0.07", "--out", str(out)],
        )
        assert result.exit_code == 0, result.output
        assert "0.72 +/- 0.03" in result.output or "0.72 +/- 0.02" in result.output
        payload = json.loads((out / "visibility_prediction.json").read_text())
        assert round(payload["v_pred"], 2) == 0.72

    def test_exact_value_with_zero_std(self, tmp_path, runner):
        out = tmp_path / "pred0"
        result = runner.invoke(
            main, ["predict-visibility", "--nu", "0.33", "--nu-std", "0", "--out", str(out)]
        )
        assert result.exit_code == 0
        payload = json.loads((out / "visibility_prediction.json").read_text())
        assert payload["v_pred"] == pytest.approx(0.715517241379, abs=1e-9)
        assert payload["v_std"] == 0.0

    def test_config_section_used(self, tmp_path, runner):
        path = write_doc(tmp_path, small_doc())
        out = tmp_path / "predc"
        result = runner.invoke(
            main, ["predict-visibility", "--config", str(path), "--out", str(out)]
        )
        assert result.exit_code == 0
        payload = json.loads((out / "visibility_prediction.json").read_text())
        assert payload["nu"] == 0.33

    def test_nonpositive_nu_exits_2(self, tmp_path, runner):
        result = runner.invoke(
            main, ["predict-visibility", "--nu", "0", "--out", str(tmp_path / "p")]
        )
        assert result.exit_code == 2
