import json

import pytest

from vlmlab.cli import main


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestSpectrum:
    def test_interleaved_report(self, capsys):
        code, out, _ = run_cli(capsys, "spectrum", "--head-dim", "12")
        assert code == 0
        doc = json.loads(out)
        assert doc["axes"]["t"]["max_gap"] == 3
        assert all(doc["spans_ends"].values())

    def test_chunked_fails_span(self, capsys):
        code, out, _ = run_cli(capsys, "spectrum", "--head-dim", "24", "--scheme", "chunked")
        assert code == 0
        doc = json.loads(out)
        assert not all(doc["spans_ends"].values())

    def test_odd_head_dim_is_config_error(self, capsys):
        code, _, err = run_cli(capsys, "spectrum", "--head-dim", "7")
        assert code == 2
        assert "config error" in err

    def test_config_file(self, capsys, tmp_path):
        path = tmp_path / "alloc.json"
        path.write_text(json.dumps({"head_dim": 12, "scheme": "chunked",
                                    "chunk_split": [2, 2, 2]}))
        code, out, _ = run_cli(capsys, "spectrum", "--config", str(path))
        assert code == 0
        assert json.loads(out)["allocation"]["scheme"] == "chunked"

    def test_missing_config_file(self, capsys):
        code, _, err = run_cli(capsys, "spectrum", "--config", "/nonexistent.json")
        assert code == 2


class TestSparsity:
    def test_two_hour_scenario(self, capsys):
        code, out, _ = run_cli(capsys, "sparsity", "--duration", "7200",
                               "--spacing", "2", "--granularity", "0.1")
        assert code == 0
        doc = json.loads(out)
        assert doc["textual_timestamp"]["sparsity"] == 1.0
        assert abs(doc["absolute_time"]["sparsity"] - 20.0) < 0.01
        assert doc["absolute_time"]["max_t"] == 71980

    def test_bad_duration(self, capsys):
        code, _, err = run_cli(capsys, "sparsity", "--duration", "-5")
        assert code == 2


class TestGround:
    def test_valid_point_file(self, capsys, tmp_path):
        path = tmp_path / "p.json"
        path.write_text('[{"point_2d": [10, 20], "label": "a"}]')
        code, out, _ = run_cli(capsys, "ground", "--kind", "point", "--input", str(path))
        assert code == 0
        assert out.strip() == '[{"point_2d": [10, 20], "label": "a"}]'

    def test_invalid_payload_exit_3(self, capsys, tmp_path):
        path = tmp_path / "p.json"
        path.write_text('[{"point_2d": [10], "label": "a"}]')
        code, _, err = run_cli(capsys, "ground", "--kind", "point", "--input", str(path))
        assert code == 3
        assert "validation error" in err

    def test_missing_input_exit_2(self, capsys):
        code, _, _ = run_cli(capsys, "ground", "--kind", "box2d", "--input", "/nope.json")
        assert code == 2


class TestTrain:
    def test_s0_run_writes_curve(self, capsys, tmp_path):
        out_path = tmp_path / "curve.json"
        cfg = tmp_path / "train.json"
        cfg.write_text(json.dumps({
            "stage": "S0", "steps": 3, "lr": 0.2, "examples": 2, "text_len": 5,
            "model": {"encoder_depth": 3, "decoder_depth": 3, "dim": 4,
                      "llm_dim": 8, "head_dim": 4, "taps": [0, 1, 2],
                      "inject_layers": [0, 1, 2], "vocab": 32},
        }))
        code, out, _ = run_cli(capsys, "train", "--config", str(cfg),
                               "--seed", "0", "--out", str(out_path))
        assert code == 0
        doc = json.loads(out_path.read_text())
        assert doc["stage"] == "S0"
        assert doc["trainable"] == ["merger"]
        assert len(doc["losses"]) == 3

    def test_unknown_stage_exit_2(self, capsys):
        code, _, err = run_cli(capsys, "train", "--stage", "S7")
        assert code == 2
        assert "S0, S1, S2, S3" in err


class TestNiah:
    def test_small_grid_reports(self, capsys, tmp_path):
        cfg = tmp_path / "niah.json"
        cfg.write_text(json.dumps({"durations_min": [0.2, 0.5],
                                   "needle_depths": [0.25, 0.75],
                                   "trials": 2, "num_frames": 64}))
        code, out, _ = run_cli(capsys, "niah", "--config", str(cfg),
                               "--seed", "1", "--out", str(tmp_path / "reports"))
        assert code == 0
        assert "minimum cell accuracy 1.000" in out
        report = json.loads((tmp_path / "reports" / "niah.json").read_text())
        assert len(report["cells"]) == 4
        csv_lines = (tmp_path / "reports" / "niah.csv").read_text().splitlines()
        assert len(csv_lines) == 5

    def test_unknown_key_exit_2(self, capsys, tmp_path):
        cfg = tmp_path / "niah.json"
        cfg.write_text(json.dumps({"frames": 10}))
        code, _, err = run_cli(capsys, "niah", "--config", str(cfg))
        assert code == 2
        assert "unknown niah config keys" in err

    def test_identical_seeds_identical_bytes(self, capsys, tmp_path):
        cfg = tmp_path / "niah.json"
        cfg.write_text(json.dumps({"durations_min": [0.2], "needle_depths": [0.5],
                                   "trials": 1, "num_frames": 16}))
        outs = []
        for sub in ("a", "b"):
            code, _, _ = run_cli(capsys, "niah", "--config", str(cfg),
                                 "--seed", "5", "--out", str(tmp_path / sub))
            assert code == 0
            outs.append(((tmp_path / sub / "niah.json").read_bytes(),
                         (tmp_path / sub / "niah.csv").read_bytes()))
        assert outs[0] == outs[1]


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
