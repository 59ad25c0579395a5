import json
import shutil

import pytest

from nibkit.cli import main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One init-toy run shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    code = main(["init-toy", "--seed", "4", "--out", str(root / "toy"), "--count", "6"])
    assert code == 0
    return root / "toy"


class TestInitToy:
    def test_outputs_exist(self, workspace):
        for name in ("model.json", "model.nibt", "data.json", "data.nibt"):
            assert (workspace / name).exists()

    def test_dataset_manifest_schema(self, workspace):
        doc = json.loads((workspace / "data.json").read_text())
        assert doc["bundle"] == "data.nibt"
        rec = doc["samples"][0]
        assert set(rec) == {"id", "image", "tokens"}


class TestAttribute:
    def test_nib_outputs_byte_identical_across_runs(self, workspace, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        for out in (out1, out2):
            code = main([
                "attribute", "--model", str(workspace / "model.json"),
                "--dataset", str(workspace / "data.json"),
                "--method", "nib", "--modality", "image", "--out", str(out),
            ])
            assert code == 0
        files1 = sorted(p.name for p in out1.iterdir())
        assert files1 == sorted(p.name for p in out2.iterdir())
        assert any(n.endswith(".pgm") for n in files1)
        for name in files1:
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name

    def test_text_modality_emits_csv_and_json(self, workspace, tmp_path):
        out = tmp_path / "txt"
        code = main([
            "attribute", "--model", str(workspace / "model.json"),
            "--dataset", str(workspace / "data.json"),
            "--method", "nib", "--modality", "text", "--out", str(out),
        ])
        assert code == 0
        names = [p.name for p in out.iterdir()]
        assert any(n.endswith(".csv") for n in names)
        assert not any(n.endswith(".pgm") for n in names)

    def test_heatmap_metadata_fields(self, workspace, tmp_path):
        out = tmp_path / "meta"
        main([
            "attribute", "--model", str(workspace / "model.json"),
            "--dataset", str(workspace / "data.json"),
            "--method", "nib", "--modality", "image", "--out", str(out),
        ])
        meta = json.loads(next(out.glob("*.json")).read_text())
        assert meta["method"] == "nib"
        assert meta["layer"] == 3  # manifest default
        assert meta["num_steps"] == 10
        assert "completeness_gap" in meta

    def test_pgm_dims_equal_input_resolution(self, workspace, tmp_path):
        out = tmp_path / "pgm"
        main([
            "attribute", "--model", str(workspace / "model.json"),
            "--dataset", str(workspace / "data.json"),
            "--method", "random", "--modality", "image", "--out", str(out),
        ])
        header = next(out.glob("*.pgm")).read_bytes()[:15].split(b"\n")
        assert header[0] == b"P5"
        assert header[1] == b"32 32"


class TestEvaluate:
    def test_report_file_and_fields(self, workspace, tmp_path):
        report = tmp_path / "report.json"
        code = main([
            "evaluate", "--model", str(workspace / "model.json"),
            "--dataset", str(workspace / "data.json"),
            "--methods", "nib,random", "--out", str(report),
        ])
        assert code == 0
        doc = json.loads(report.read_text())
        assert [r["method"] for r in doc] == ["nib", "random"]
        for r in doc:
            assert r["samples"] == 7  # 6 + adversarial fixture
            assert r["fps"] is None

    def test_byte_reproducible_report(self, workspace, tmp_path):
        outs = []
        for name in ("r1.json", "r2.json"):
            path = tmp_path / name
            main([
                "evaluate", "--model", str(workspace / "model.json"),
                "--dataset", str(workspace / "data.json"),
                "--methods", "nib", "--out", str(path),
            ])
            outs.append(path.read_bytes())
        assert outs[0] == outs[1]


class TestErrors:
    def test_unknown_method_is_usage_error(self, workspace, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main([
                "attribute", "--model", str(workspace / "model.json"),
                "--dataset", str(workspace / "data.json"),
                "--method", "lime", "--out", str(tmp_path / "x"),
            ])
        assert exc.value.code == 2

    def test_unknown_flag_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["verify", "--frobnicate"])
        assert exc.value.code == 2

    def test_missing_file_is_runtime_error(self, tmp_path):
        code = main([
            "evaluate", "--model", str(tmp_path / "nope.json"),
            "--dataset", str(tmp_path / "nope-data.json"),
            "--methods", "nib", "--out", str(tmp_path / "r.json"),
        ])
        assert code == 1

    def test_corrupt_bundle_reports_code(self, workspace, tmp_path, capsys):
        broken = tmp_path / "broken"
        broken.mkdir()
        shutil.copy(workspace / "model.json", broken / "model.json")
        (broken / "model.nibt").write_bytes(b"XXXX")
        code = main([
            "evaluate", "--model", str(broken / "model.json"),
            "--dataset", str(workspace / "data.json"),
            "--methods", "nib", "--out", str(tmp_path / "r.json"),
        ])
        assert code == 1
        assert "bad-magic" in capsys.readouterr().err


class TestSweepBeta:
    def test_two_point_sweep(self, workspace, tmp_path):
        out = tmp_path / "sweep.json"
        code = main([
            "sweep-beta", "--model", str(workspace / "model.json"),
            "--dataset", str(workspace / "data.json"),
            "--betas", "0.01,0.5", "--out", str(out),
        ])
        assert code == 0
        doc = json.loads(out.read_text())
        assert doc["betas"] == [0.01, 0.5]
        assert len(doc["reports"]) == 2
        assert doc["img_drop_relative_variation"] >= 0.0
