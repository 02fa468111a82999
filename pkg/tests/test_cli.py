"""End-to-end tests for the command-line interface."""

import json
import sys

import numpy as np
import pytest

from reliascore.attribution import load_attribution
from reliascore.cli import _write_atomic, main
from reliascore.images import BinaryMask, GrayImage, load_image, save_image, save_mask

SERVER = f"{sys.executable} -m reliascore.wire_server"


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    monkeypatch.delenv("RELIASCORE_CLASSIFIER", raising=False)
    monkeypatch.delenv("RELIASCORE_WORKERS", raising=False)


def build_tree(root):
    """Two dark benign and two bright malignant 24x24 images with lesion masks."""
    for category, bg, lesion in (("benign", 0.15, 0.35), ("malignant", 0.45, 0.8)):
        d = root / category
        d.mkdir(parents=True)
        for i in (1, 2):
            img = np.full((24, 24), bg)
            img[8:16, 8:16] = lesion
            bits = np.zeros((24, 24), dtype=bool)
            bits[8:16, 8:16] = True
            save_image(GrayImage(img), d / f"s{i}.png")
            save_mask(BinaryMask(bits), d / f"s{i}_mask.png")
    return root


def write_config(path, **extra):
    raw = {
        "classifier": {
            "kind": "synthetic",
            "synthetic": {
                "kind": "brightness_threshold",
                "parameters": {"threshold": 0.3},
            },
        },
        "seed": 7,
        "sampling": {"sample_count": 40, "mode": "grid"},
    }
    raw.update(extra)
    path.write_text(json.dumps(raw))
    return path


def run_ingest(tmp_path):
    root = build_tree(tmp_path / "data")
    manifest = tmp_path / "manifest.ndjson"
    assert main(["ingest", str(root), "--manifest", str(manifest)]) == 0
    return manifest


class TestExitCodes:
    def test_usage_error_is_config_exit(self, capsys):
        assert main(["score"]) == 1  # --manifest is required
        assert "config error" in capsys.readouterr().err

    def test_unknown_subcommand_is_config_exit(self):
        assert main(["frobnicate"]) == 1

    def test_missing_config_file(self, tmp_path, capsys):
        manifest = run_ingest(tmp_path)
        code = main(
            ["score", "--manifest", str(manifest), "--config", str(tmp_path / "no.json")]
        )
        assert code == 1
        assert "config error" in capsys.readouterr().err

    def test_unknown_config_key_rejected(self, tmp_path, capsys):
        manifest = run_ingest(tmp_path)
        config = tmp_path / "c.json"
        write_config(config, bogus_knob=1)
        code = main(["score", "--manifest", str(manifest), "--config", str(config)])
        assert code == 1
        assert "bogus_knob" in capsys.readouterr().err

    def test_missing_manifest_is_data_exit(self, tmp_path, capsys):
        config = write_config(tmp_path / "c.json")
        code = main(
            ["score", "--manifest", str(tmp_path / "gone.ndjson"), "--config", str(config)]
        )
        assert code == 2
        assert "data error" in capsys.readouterr().err

    def test_missing_image_file_is_data_exit(self, tmp_path):
        manifest = run_ingest(tmp_path)
        (tmp_path / "data" / "benign" / "s1.png").unlink()
        config = write_config(tmp_path / "c.json")
        code = main(
            ["score", "--manifest", str(manifest), "--config", str(config),
             "--output-dir", str(tmp_path / "out")]
        )
        assert code == 2

    def test_dying_classifier_is_classifier_exit(self, tmp_path, capsys):
        manifest = run_ingest(tmp_path)
        code = main(
            ["prs", "--manifest", str(manifest),
             "--classifier", f"{SERVER} --kind brightness --fail-after 1",
             "--output-dir", str(tmp_path / "out")]
        )
        assert code == 3
        assert "classifier error" in capsys.readouterr().err


class TestEnvOverrides:
    def test_classifier_from_env(self, tmp_path, monkeypatch):
        manifest = run_ingest(tmp_path)
        monkeypatch.setenv(
            "RELIASCORE_CLASSIFIER", f"{SERVER} --kind constant --scores 0.2,0.8"
        )
        out = tmp_path / "out"
        code = main(["prs", "--manifest", str(manifest), "--output-dir", str(out)])
        assert code == 0
        lines = (out / "prs.ndjson").read_text().splitlines()
        assert len(lines) == 4
        # A constant classifier votes identically on every variant.
        assert all(json.loads(line)["prs"] == 1.0 for line in lines)

    def test_workers_from_env(self, tmp_path, monkeypatch):
        manifest = run_ingest(tmp_path)
        config = write_config(tmp_path / "c.json")
        monkeypatch.setenv("RELIASCORE_WORKERS", "3")
        out = tmp_path / "out"
        code = main(
            ["score", "--manifest", str(manifest), "--config", str(config),
             "--output-dir", str(out)]
        )
        assert code == 0
        echoed = json.loads((out / "config.echo").read_text())
        assert echoed["config"]["workers"] == 3

    def test_invalid_workers_env_is_config_exit(self, tmp_path, monkeypatch, capsys):
        manifest = run_ingest(tmp_path)
        config = write_config(tmp_path / "c.json")
        monkeypatch.setenv("RELIASCORE_WORKERS", "three")
        code = main(["score", "--manifest", str(manifest), "--config", str(config)])
        assert code == 1
        assert "RELIASCORE_WORKERS" in capsys.readouterr().err


class TestScoreFlow:
    def test_ingest_score_calibrate(self, tmp_path, capsys):
        manifest = run_ingest(tmp_path)
        assert "wrote 4 entries" in capsys.readouterr().out
        config = write_config(tmp_path / "c.json")
        out = tmp_path / "run"
        code = main(
            ["score", "--manifest", str(manifest), "--config", str(config),
             "--output-dir", str(out)]
        )
        assert code == 0

        reports = [
            json.loads(line) for line in (out / "reports.ndjson").read_text().splitlines()
        ]
        assert [r["sample_id"] for r in reports] == [
            "benign/s1", "benign/s2", "malignant/s1", "malignant/s2",
        ]
        # Bright images sit above the 0.3 mean-intensity threshold.
        assert [r["predicted_class"] for r in reports] == [0, 0, 1, 1]
        assert all(r["correct"] for r in reports)

        # The emitted summary must be exactly recomputable from the reports.
        summary = json.loads((out / "summary.json").read_text())
        tp = sum(1 for r in reports if r["predicted_class"] == 1 and r["label"] == 1)
        fp = sum(1 for r in reports if r["predicted_class"] == 1 and r["label"] != 1)
        fn = sum(1 for r in reports if r["predicted_class"] != 1 and r["label"] == 1)
        assert summary["confusion"] == {
            "tp": tp, "fp": fp, "fn": fn, "tn": len(reports) - tp - fp - fn,
        }
        assert summary["accuracy"] == sum(r["correct"] for r in reports) / len(reports)
        assert summary["mdrs"] == sum(r["drs"] for r in reports) / len(reports)
        assert summary["samples"] == 4
        assert summary["accuracy"] == 1.0
        assert summary["precision"] == 1.0
        assert summary["recall"] == 1.0
        assert summary["f1"] == 1.0
        assert summary["confusion"] == {"tp": 2, "fp": 0, "fn": 0, "tn": 2}
        assert 0.0 <= summary["mdrs"] <= 1.0

        echoed = json.loads((out / "config.echo").read_text())
        assert len(echoed["fingerprint"]) == 64
        assert echoed["config"]["output_dir"] == str(out)
        assert "workers" in echoed["config"]

        calib_out = tmp_path / "calib.json"
        code = main(
            ["calibrate", "--reports", str(out / "reports.ndjson"),
             "--channel", "all", "--bins", "2", "--out", str(calib_out)]
        )
        assert code == 0
        calib = json.loads(calib_out.read_text())
        assert set(calib["channels"]) == {"confidence", "prs", "drs"}
        for entry in calib["channels"].values():
            assert 0.0 <= entry["adaptive"]["ece"] <= 1.0
            assert 0.0 <= entry["fixed"]["ece"] <= 1.0

    def test_two_runs_byte_identical(self, tmp_path):
        manifest = run_ingest(tmp_path)
        config = write_config(tmp_path / "c.json")
        blobs = []
        prints = []
        for name in ("run_a", "run_b"):
            out = tmp_path / name
            assert main(
                ["score", "--manifest", str(manifest), "--config", str(config),
                 "--output-dir", str(out)]
            ) == 0
            blobs.append((out / "reports.ndjson").read_bytes())
            prints.append(json.loads((out / "config.echo").read_text())["fingerprint"])
        assert blobs[0] == blobs[1]
        # Output location does not participate in the config fingerprint.
        assert prints[0] == prints[1]

    def test_calibrate_bins_beyond_sample_count_is_config_exit(self, tmp_path, capsys):
        manifest = run_ingest(tmp_path)
        config = write_config(tmp_path / "c.json")
        out = tmp_path / "run"
        assert main(
            ["score", "--manifest", str(manifest), "--config", str(config),
             "--output-dir", str(out)]
        ) == 0
        code = main(
            ["calibrate", "--reports", str(out / "reports.ndjson"), "--bins", "99"]
        )
        assert code == 1
        assert "config error" in capsys.readouterr().err

    def test_calibrate_rejects_single_report(self, tmp_path):
        reports = tmp_path / "r.ndjson"
        reports.write_text('{"correct": true}\n')
        assert main(["calibrate", "--reports", str(reports)]) == 2


class TestAttributeAndRender:
    def test_attribute_then_render(self, tmp_path):
        manifest = run_ingest(tmp_path)
        config = write_config(tmp_path / "c.json")
        out = tmp_path / "run"
        code = main(
            ["attribute", "--manifest", str(manifest), "--config", str(config),
             "--output-dir", str(out), "--sample-count", "30"]
        )
        assert code == 0

        attr_files = sorted((out / "maps").glob("*.attr"))
        assert len(attr_files) == 4
        amap = load_attribution(attr_files[0])
        assert amap.values.shape == (24, 24)

        overlays = sorted((out / "overlays").glob("*.png"))
        assert len(overlays) == 4
        assert load_image(overlays[0]).shape == (24, 24)

        rendered = tmp_path / "again.png"
        code = main(
            ["render", "--image", str(tmp_path / "data" / "benign" / "s1.png"),
             "--attribution", str(attr_files[0]), "--out", str(rendered),
             "--alpha", "0.7"]
        )
        assert code == 0
        assert load_image(rendered).shape == (24, 24)

    def test_render_rejects_missing_attribution(self, tmp_path):
        build_tree(tmp_path / "data")
        code = main(
            ["render", "--image", str(tmp_path / "data" / "benign" / "s1.png"),
             "--attribution", str(tmp_path / "no.attr"), "--out", str(tmp_path / "o.png")]
        )
        assert code == 2


class TestWriteAtomic:
    def test_writes_content_without_leftovers(self, tmp_path):
        target = tmp_path / "result.json"
        _write_atomic(target, "payload\n")
        assert target.read_text() == "payload\n"
        assert list(tmp_path.iterdir()) == [target]

    def test_overwrites_existing(self, tmp_path):
        target = tmp_path / "result.json"
        target.write_text("old")
        _write_atomic(target, "new")
        assert target.read_text() == "new"
