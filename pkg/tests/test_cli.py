import csv
import json

import pytest

from pegeo.attnlab import build_projection_pair, expected_kernel
from pegeo.cli import main
from pegeo.config import ConfigError, from_dict
from pegeo.grid import GridShape
from pegeo.posenc import build_learned_random
from pegeo.tensorio import read_tensor


def run(tmp_path, cfg, *extra, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return main(["--config", str(path), *extra])


def strip_time(path):
    d = json.loads(path.read_text())
    d.pop("timestamp")
    return d


class TestConfig:
    def test_defaults_fill_in(self):
        cfg = from_dict({"probe": "stereo"})
        assert cfg.scene_kinds == ["periodic-texture"]
        assert [iv["kind"] for iv in cfg.interventions] == ["vanilla", "zeroed", "pairwise-shuffled", "shuffled"]
        assert cfg.tau == 50.0 and cfg.recall_n == [1, 2, 5]
        assert "out" not in cfg.effective()

    @pytest.mark.parametrize("raw", [
        {"probe": "fit"}, {"tau": 0}, {"weights": [1.5]}, {"offsets": [8]}, {"recall_n": [0]},
        {"model": {"dim": 30}}, {"kernel": {"samples": 0}}, {"kernel": {"method": "exact"}},
        {"interventions": [{"kind": "warp"}]}, {"corpus": "/no/such/file.json"}, {"layer": 9},
        {"disparity": {"kind": "constant", "value": 1.5}}, {"sweep": {"ridge": 0}}, {"unknown": 1},
        {"scene_kinds": ["photo"]}, {"upsample": "cubic"}, {"probe": "overlap", "offsets": [0]},
    ])
    def test_validation_errors(self, raw):
        with pytest.raises(ConfigError):
            from_dict(raw)


class TestExitCodes:
    def test_missing_config_file(self, tmp_path, capsys):
        assert main(["--config", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 2
        assert "config error" in capsys.readouterr().err

    def test_invalid_json(self, tmp_path):
        (tmp_path / "c.json").write_text("{")
        assert main(["--config", str(tmp_path / "c.json"), "--out", str(tmp_path)]) == 2

    def test_missing_out(self, tmp_path):
        assert run(tmp_path, {"probe": "kernel"}) == 2

    def test_zero_samples(self, tmp_path):
        assert run(tmp_path, {"probe": "kernel", "kernel": {"samples": 0}}, "--out", str(tmp_path / "o")) == 2

    def test_empty_corpus(self, tmp_path):
        (tmp_path / "m.json").write_text("[]")
        assert run(tmp_path, {"probe": "overlap", "corpus": "m.json"}, "--out", str(tmp_path / "o")) == 2

    def test_probe_failure_is_exit_3(self, tmp_path, capsys):
        (tmp_path / "m.json").write_text(json.dumps([{"kind": "random-texture", "size": 64, "seed": 0}]))
        code = run(tmp_path, {"probe": "stereo", "corpus": "m.json", "scene_kinds": ["random-texture"]},
                   "--out", str(tmp_path / "o"))
        assert code == 3
        assert "probe failed" in capsys.readouterr().err


class TestKernel:
    def test_absolute_matches_library_bytewise(self, tmp_path):
        desc = {"kind": "absolute-learned", "shape": [3, 3], "dim": 8, "seed": 4, "std": 1.0}
        cfg = {"probe": "kernel", "scheme": desc, "kernel": {"method": "analytic"}, "seeds": {"probe": 2}}
        assert run(tmp_path, cfg, "--out", str(tmp_path / "k")) == 0
        table = build_learned_random(GridShape(3, 3), 8, 4, 1.0)
        ref = expected_kernel(table, build_projection_pair(8, 2), "analytic").kernel
        got = read_tensor(tmp_path / "k" / "kernel.pgt")
        assert got.tobytes() == ref.tobytes()
        rows = list(csv.reader((tmp_path / "k" / "kernel.csv").open()))
        assert len(rows) == 10 and float(rows[4][3 + 5]) == ref[3, 5]
        summary = json.loads((tmp_path / "k" / "kernel.json").read_text())
        assert (summary["method"], summary["samples"], summary["seed"]) == ("analytic", 0, 2)

    def test_rotary_analytic_is_stationary(self, tmp_path):
        cfg = {"probe": "kernel", "model": {"scheme": "rotary"},
               "kernel": {"method": "analytic", "samples": 2000, "grid": [4, 4], "dim": 16}}
        assert run(tmp_path, cfg, "--out", str(tmp_path / "k")) == 0
        summary = json.loads((tmp_path / "k" / "kernel.json").read_text())
        assert summary["stationarity_gap"] <= 1e-12
        assert len(summary["lambdas"]) == 8

    def test_monte_carlo_writes_stderr(self, tmp_path):
        cfg = {"probe": "kernel", "kernel": {"samples": 500, "grid": [2, 3]}}
        assert run(tmp_path, cfg, "--out", str(tmp_path / "k")) == 0
        assert read_tensor(tmp_path / "k" / "kernel_stderr.pgt").shape == (6, 6)


class TestProbeCommands:
    def test_overlap_six_rows_and_idempotent(self, tmp_path):
        cfg = {"probe": "overlap", "max_scenes": 3}
        assert run(tmp_path, cfg, "--out", str(tmp_path / "a")) == 0
        assert run(tmp_path, cfg, "--out", str(tmp_path / "b")) == 0
        rows = list(csv.reader((tmp_path / "a" / "overlap.csv").open()))
        assert len(rows) == 7
        assert strip_time(tmp_path / "a" / "overlap.json") == strip_time(tmp_path / "b" / "overlap.json")
        assert (tmp_path / "a" / "overlap.csv").read_bytes() == (tmp_path / "b" / "overlap.csv").read_bytes()

    def test_stereo_rows_slices_and_annotation(self, tmp_path, capsys):
        cfg = {"probe": "stereo", "max_scenes": 2}
        assert run(tmp_path, cfg, "--out", str(tmp_path / "s"), "--dump-slices") == 0
        rep = json.loads((tmp_path / "s" / "stereo.json").read_text())
        assert [c["name"].split("/")[1] for c in rep["conditions"]] == \
            ["vanilla", "zeroed", "pairwise-shuffled", "shuffled"]
        slices = sorted((tmp_path / "s" / "slices").glob("*.pgt"))
        assert len(slices) == 4 * 5
        assert read_tensor(slices[0]).shape == (8, 8, 8)
        assert "direction consistent" in capsys.readouterr().out
        assert rep["config"]["tau"] == 50.0 and "out" not in rep["config"]

    def test_seed_flag_overrides(self, tmp_path):
        cfg = {"probe": "stereo", "max_scenes": 1, "interventions": [{"kind": "vanilla"}]}
        assert run(tmp_path, cfg, "--out", str(tmp_path / "s"), "--seed", "7") == 0
        rep = json.loads((tmp_path / "s" / "stereo.json").read_text())
        assert rep["seeds"] == {"model": 7, "probe": 7}

    def test_sweep_reports(self, tmp_path):
        cfg = {"probe": "sweep", "max_scenes": 5, "weights": [0.0, 1.0], "sweep": {"steps": 20}}
        assert run(tmp_path, cfg, "--out", str(tmp_path / "w")) == 0
        names = sorted(p.name for p in (tmp_path / "w").iterdir())
        assert names == ["decodability.csv", "decodability.json", "offset_sweep.csv", "offset_sweep.json",
                         "reconstruction.csv", "reconstruction.json"]
        sweep = json.loads((tmp_path / "w" / "offset_sweep.json").read_text())
        assert len(sweep["conditions"]) == 6
        dec = json.loads((tmp_path / "w" / "decodability.json").read_text())
        assert len(dec["conditions"]) == 5

    def test_corpus_export(self, tmp_path):
        cfg = {"probe": "corpus", "scene_kinds": ["gradient"], "max_scenes": 2}
        assert run(tmp_path, cfg, "--out", str(tmp_path / "c")) == 0
        side = json.loads((tmp_path / "c" / "gradient_001_right.f32.json").read_text())
        assert side["disparity_profile"] == {"kind": "constant", "value": 8.0}
        assert side["seed"] == 1 and side["view"] == "right" and side["height"] == 64

    def test_threads_do_not_change_reports(self, tmp_path, monkeypatch):
        cfg = {"probe": "stereo", "max_scenes": 3}
        monkeypatch.setenv("PEGEO_THREADS", "1")
        assert run(tmp_path, cfg, "--out", str(tmp_path / "one")) == 0
        monkeypatch.setenv("PEGEO_THREADS", "3")
        assert run(tmp_path, cfg, "--out", str(tmp_path / "three")) == 0
        assert (tmp_path / "one" / "stereo.csv").read_bytes() == (tmp_path / "three" / "stereo.csv").read_bytes()
