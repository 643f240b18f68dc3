import json
from pathlib import Path

import pytest

from chunklab.cli import main
from chunklab.data import load_dataset


def run(args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    rc = run(["gen-data", "--task", "reach", "--episodes", "8", "--seed", "0",
              "--out", root / "reach.jsonl"])
    assert rc == 0
    rc = run([
        "train", "--data", root / "reach.jsonl", "--mode", "offset",
        "--delta-max", "2", "--steps", "40", "--batch-size", "16",
        "--width", "24", "--depth", "2", "--seed", "0",
        "--out", root / "pol.ckpt",
    ])
    assert rc == 0
    return root


class TestGenData:
    def test_writes_requested_episodes(self, workdir):
        ds = load_dataset(workdir / "reach.jsonl")
        assert len(ds) == 8

    def test_manifest_written(self, workdir):
        manifest = json.loads((workdir / "reach.jsonl.manifest.json").read_text())
        assert manifest["command"] == "gen-data"
        assert manifest["config"]["seed"] == 0
        assert "config_hash" in manifest and "version" in manifest

    def test_quantized_output(self, tmp_path):
        out = tmp_path / "q2.jsonl"
        assert run(["gen-data", "--task", "reach", "--episodes", "2", "--seed", "1",
                    "--out", out, "--quantize", "2"]) == 0
        ds = load_dataset(out)
        assert len(ds.trajectories[0]) == 30


class TestTrainEval:
    def test_eval_pipeline(self, workdir):
        out = workdir / "results.json"
        rc = run([
            "eval", "--ckpt", workdir / "pol.ckpt", "--task", "reach",
            "--strategy", "vlash", "--delta", "2", "--exec-horizon", "4",
            "--episodes", "4", "--seed", "0", "--out", out,
        ])
        assert rc == 0
        payload = json.loads(out.read_text())
        assert len(payload["episodes"]) == 4
        assert payload["aggregate"]["strategy"] == "vlash"
        assert set(payload["episodes"][0]) >= {
            "seed", "success", "steps", "idle_ticks", "reaction_latency_ticks",
        }

    def test_byte_identical_rerun(self, workdir, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        args = [
            "eval", "--ckpt", workdir / "pol.ckpt", "--task", "reach",
            "--strategy", "naive", "--delta", "1", "--exec-horizon", "4",
            "--episodes", "3", "--seed", "5",
        ]
        assert run(args + ["--out", a]) == 0
        assert run(args + ["--out", b]) == 0
        assert a.read_bytes().replace(str(a).encode(), b"") == b.read_bytes().replace(
            str(b).encode(), b""
        )

    def test_infeasible_schedule_is_config_error(self, workdir, tmp_path):
        rc = run([
            "eval", "--ckpt", workdir / "pol.ckpt", "--task", "reach",
            "--strategy", "vlash", "--delta", "6", "--exec-horizon", "4",
            "--episodes", "2", "--seed", "0", "--out", tmp_path / "r.json",
        ])
        assert rc == 2


class TestExitCodes:
    def test_missing_checkpoint_is_3(self, tmp_path):
        rc = run([
            "eval", "--ckpt", tmp_path / "nope.ckpt", "--task", "reach",
            "--strategy", "sync", "--delta", "0", "--exec-horizon", "4",
            "--out", tmp_path / "r.json",
        ])
        assert rc == 3

    def test_missing_dataset_is_3(self, tmp_path):
        rc = run(["train", "--data", tmp_path / "nope.jsonl", "--out", tmp_path / "p.ckpt"])
        assert rc == 3

    def test_unknown_sweep_key_is_2(self, workdir, tmp_path):
        cfg = tmp_path / "sweep.json"
        cfg.write_text(json.dumps({
            "checkpoints": {"reach": [str(workdir / "pol.ckpt")]},
            "surprise": True,
        }))
        rc = run(["sweep", "--preset", "delay", "--config", cfg, "--out", tmp_path / "out"])
        assert rc == 2

    def test_bad_task_name_is_2(self, tmp_path):
        rc = run(["gen-data", "--task", "flying", "--episodes", "1", "--seed", "0",
                  "--out", tmp_path / "x.jsonl"])
        assert rc == 2


class TestSweep:
    def test_sweep_outputs(self, workdir, tmp_path):
        cfg = tmp_path / "sweep.json"
        cfg.write_text(json.dumps({
            "tasks": ["reach"],
            "strategies": ["sync", "vlash"],
            "episodes_per_point": 2,
            "eval_seed": 0,
            "points": [[1, 2]],
            "checkpoints": {"reach": [str(workdir / "pol.ckpt")]},
        }))
        out = tmp_path / "sweepout"
        rc = run(["sweep", "--preset", "custom", "--config", cfg, "--out", out])
        assert rc == 0
        csv_text = (out / "results.csv").read_text()
        assert csv_text.startswith(
            "task,strategy,delta,K,q,success_rate,mean_steps,mean_discontinuity,"
            "mean_reaction_ticks,analytic_time_ms"
        )
        payload = json.loads((out / "results.json").read_text())
        assert len(payload["rows"]) == 2
        assert (out / "run_manifest.json").exists()

    def test_missing_listed_checkpoint_is_3(self, tmp_path):
        cfg = tmp_path / "sweep.json"
        cfg.write_text(json.dumps({
            "tasks": ["reach"],
            "points": [[1, 2]],
            "checkpoints": {"reach": ["/does/not/exist.ckpt"]},
        }))
        rc = run(["sweep", "--preset", "custom", "--config", cfg, "--out", tmp_path / "o"])
        assert rc == 3


class TestAnalytics:
    def test_prints_and_writes(self, tmp_path, capsys):
        out = tmp_path / "analytics.json"
        rc = run(["analytics", "--out", out, "--format", "json"])
        assert rc == 0
        captured = capsys.readouterr()
        assert "17.4x" in captured.out
        payload = json.loads(out.read_text())
        assert payload["reaction"][0]["sync_ms"] == pytest.approx(530.4)

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
