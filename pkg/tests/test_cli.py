import json

import pytest

from depthtrack.cli import PipelineConfig, UsageError, build_parser, config_from_args, main, read_config
from depthtrack.depth_io import read_box_records

SCENE = {
    "frames": 16,
    "width": 200,
    "height": 120,
    "actors": [
        {"shape": "rectangle", "x": 10, "y": 15, "width": 40, "height": 30, "depth": 2000, "velocity": [3, 0]},
        {"shape": "disc", "x": 140, "y": 70, "width": 36, "height": 36, "depth": 2500, "velocity": [-2, 0]},
    ],
}


def report_rows(path):
    rows = {}
    for line in path.read_text().splitlines()[2:]:
        metric, _, value = line.split("\t")
        rows[metric] = value
    return rows


@pytest.fixture(scope="module")
def seq(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec = root / "scene.json"
    spec.write_text(json.dumps(SCENE))
    assert main(["synth", str(spec), "--seed", "3", "--out", str(root / "seq")]) == 0
    return root, root / "seq" / "manifest.txt"


class TestSynth:
    def test_deterministic(self, seq, tmp_path):
        root, manifest = seq
        assert main(["synth", str(root / "scene.json"), "--seed", "3", "--out", str(tmp_path)]) == 0
        for f in manifest.parent.iterdir():
            assert (tmp_path / f.name).read_bytes() == f.read_bytes()

    def test_invalid_spec_writes_nothing(self, tmp_path):
        bad = dict(SCENE, actors=[dict(SCENE["actors"][0], velocity=[40, 0])])
        spec = tmp_path / "bad.json"
        spec.write_text(json.dumps(bad))
        with pytest.raises(SystemExit) as exc:
            main(["synth", str(spec), "--out", str(tmp_path / "out")])
        assert exc.value.code == 2
        assert not (tmp_path / "out").exists()


class TestDetect:
    def test_scores(self, seq, tmp_path):
        _, manifest = seq
        assert main(["detect", "--manifest", str(manifest), "--out", str(tmp_path)]) == 0
        rows = report_rows(tmp_path / "report.txt")
        assert float(rows["f1"]) == 1.0
        assert int(rows["fp"]) == 0
        assert read_box_records(tmp_path / "detections.txt")

    def test_stationary_actor_absent(self, tmp_path):
        scene = dict(SCENE, actors=[SCENE["actors"][0], dict(SCENE["actors"][1], velocity=[0, 0])])
        spec = tmp_path / "s.json"
        spec.write_text(json.dumps(scene))
        main(["synth", str(spec), "--out", str(tmp_path / "seq")])
        main(["detect", "--manifest", str(tmp_path / "seq" / "manifest.txt"), "--out", str(tmp_path / "run")])
        recs = read_box_records(tmp_path / "run" / "detections.txt")
        assert recs and all(r.box.x < 130 and r.box.y < 60 for r in recs)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["detect", "--manifest", str(tmp_path / "nope.txt"), "--out", str(tmp_path)])
        assert exc.value.code == 2


class TestTrack:
    def test_track_outputs(self, seq, tmp_path):
        _, manifest = seq
        assert main(["track", "--manifest", str(manifest), "--out", str(tmp_path)]) == 0
        rows = report_rows(tmp_path / "report.txt")
        assert float(rows["sr@0.5"]) == 1.0
        assert int(rows["tracks"]) == 2
        recs = read_box_records(tmp_path / "tracks.txt")
        assert {r.object_id for r in recs} == {1, 2}
        header = (tmp_path / "occlusions.txt").read_text().splitlines()[0]
        assert header.split("\t")[:3] == ["frame", "occludee", "occluder"]

    def test_optimize_does_not_change_tracks(self, seq, tmp_path):
        _, manifest = seq
        main(["track", "--manifest", str(manifest), "--out", str(tmp_path / "on")])
        main(["track", "--manifest", str(manifest), "--out", str(tmp_path / "off"), "--no-optimize"])
        assert (tmp_path / "on" / "tracks.txt").read_bytes() == (tmp_path / "off" / "tracks.txt").read_bytes()

    def test_too_short(self, tmp_path):
        spec = tmp_path / "s.json"
        spec.write_text(json.dumps(dict(SCENE, frames=4)))
        main(["synth", str(spec), "--out", str(tmp_path / "seq")])
        with pytest.raises(SystemExit):
            main(["track", "--manifest", str(tmp_path / "seq" / "manifest.txt"), "--out", str(tmp_path)])


class TestBench:
    def test_modes(self, seq, tmp_path):
        _, manifest = seq
        assert main(["bench", "--manifest", str(manifest), "--out", str(tmp_path)]) == 0
        rows = report_rows(tmp_path / "bench.txt")
        assert float(rows["mean_candidates[optimized]"]) <= float(rows["mean_candidates[full]"])
        assert rows["identical_tracks"] == "1"
        assert "ms_per_frame[full]" in rows and "ms_per_frame[optimized]" in rows


class TestConfig:
    def test_report_reproduces_run(self, seq, tmp_path):
        _, manifest = seq
        out = tmp_path / "run"
        main(["track", "--manifest", str(manifest), "--out", str(out), "--delta", "60"])
        first = (out / "report.txt").read_bytes()
        cfg = tmp_path / "cfg.txt"
        cfg.write_bytes(first)
        main(["track", "--config", str(cfg)])
        assert (out / "report.txt").read_bytes() == first
        assert read_config(str(cfg))["delta"] == 60

    def test_flags_override_config(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"k": 7, "iota": 0.3}))
        args = build_parser().parse_args(["track", "--config", str(cfg), "--k", "4"])
        c = config_from_args(args)
        assert (c.k, c.iota) == (4, 0.3)

    @pytest.mark.parametrize(
        "field,value",
        [("k", 1), ("iota", 1.0), ("iota", 0.0), ("sigma", 0.0), ("r_min", 1.5), ("workers", 0), ("keep_ratio", 0.0)],
    )
    def test_validation(self, field, value):
        with pytest.raises(UsageError):
            PipelineConfig(**{field: value}).validate()

    def test_unknown_key(self):
        with pytest.raises(UsageError):
            PipelineConfig.from_mapping({"kappa": 3})

    def test_bad_flag_exits_2(self, seq, tmp_path):
        _, manifest = seq
        with pytest.raises(SystemExit) as exc:
            main(["track", "--manifest", str(manifest), "--out", str(tmp_path), "--iota", "2"])
        assert exc.value.code == 2
