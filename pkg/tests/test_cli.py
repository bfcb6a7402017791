import json

import numpy as np
import pytest

from grpolab.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, OUTPUT_ROOT_ENV, main, resolve_run_dir
from grpolab.config import RunConfig, config_to_dict, load_config, parse_config
from grpolab.errors import ConfigError


def write(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


class TestConfig:
    def test_defaults_roundtrip(self, tmp_path):
        cfg = parse_config({})
        back = load_config(write(tmp_path, config_to_dict(cfg)))
        assert back == cfg

    def test_unknown_key_named(self):
        with pytest.raises(ConfigError, match="train.etaa"):
            parse_config({"train": {"etaa": 0.1}})

    def test_zero_K_named(self):
        with pytest.raises(ConfigError) as err:
            parse_config({"train": {"K": 0}})
        assert err.value.field == "train.K"

    def test_empty_grid(self):
        with pytest.raises(ConfigError, match="sweep.group_size"):
            parse_config({"sweep": {"group_size": []}})

    def test_bad_reward(self):
        with pytest.raises(ConfigError, match="task"):
            parse_config({"task": {"reward": {"kind": "target-sequence", "target": None}}}).build_task()

    def test_not_a_mapping(self):
        with pytest.raises(ConfigError):
            parse_config({"train": 3})

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.json")


class TestRunDir:
    def test_env_override(self, monkeypatch, tmp_path):
        cfg = RunConfig(name="x", seed=5, output_dir="ignored")
        monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
        assert resolve_run_dir(cfg, "train", None) == tmp_path / "x-train-seed5"
        assert resolve_run_dir(cfg, "train", "elsewhere").name == "elsewhere"

    def test_config_output_dir(self, monkeypatch):
        monkeypatch.delenv(OUTPUT_ROOT_ENV, raising=False)
        cfg = RunConfig(name="x", output_dir="out")
        assert str(resolve_run_dir(cfg, "sweep", None)) == "out/x-sweep-seed0"


class TestTrain:
    def test_minimal_run(self, tmp_path, capsys):
        out = tmp_path / "run"
        code = main(["train", "--config", write(tmp_path, {"train": {"N": 5}}), "--out", str(out)])
        assert code == EXIT_OK
        for name in ("config.json", "metrics.jsonl", "timing.jsonl", "final_params.npy", "summary.json"):
            assert (out / name).exists()
        summary = json.loads(capsys.readouterr().out.strip())
        assert summary["final_J"] is not None and summary["aborted"] is False
        assert load_config(out / "config.json") == parse_config({"train": {"N": 5}})
        first = json.loads((out / "metrics.jsonl").read_text().splitlines()[0])
        assert first["schema_version"] == 1

    def test_replay_is_byte_identical(self, tmp_path):
        cfg = write(tmp_path, {"train": {"N": 8, "algorithm": "grpo"}})
        main(["train", "--config", cfg, "--out", str(tmp_path / "a"), "--seed", "17"])
        main(["train", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "17"])
        assert (tmp_path / "a/metrics.jsonl").read_bytes() == (tmp_path / "b/metrics.jsonl").read_bytes()
        main(["train", "--config", cfg, "--out", str(tmp_path / "c"), "--seed", "18"])
        assert (tmp_path / "a/metrics.jsonl").read_bytes() != (tmp_path / "c/metrics.jsonl").read_bytes()

    def test_seed_override_recorded(self, tmp_path):
        main(["train", "--config", write(tmp_path, {"train": {"N": 2}}), "--out", str(tmp_path / "r"), "--seed", str(2**64 - 1)])
        assert json.loads((tmp_path / "r/config.json").read_text())["seed"] == 2**64 - 1

    def test_config_error_exit(self, tmp_path, capsys):
        code = main(["train", "--config", write(tmp_path, {"train": {"K": 0}}), "--out", str(tmp_path / "r")])
        assert code == EXIT_CONFIG
        assert "K" in capsys.readouterr().err

    def test_bad_seed(self, tmp_path):
        with pytest.raises(SystemExit) as err:
            main(["train", "--config", write(tmp_path, {}), "--seed", "-1"])
        assert err.value.code == 2

    def test_numeric_abort_exit(self, tmp_path):
        path = tmp_path / "nan.json"
        path.write_text('{"train": {"eta": Infinity, "N": 3}}')
        out = tmp_path / "r"
        assert main(["train", "--config", str(path), "--out", str(out)]) == EXIT_NUMERIC
        assert (out / "last_finite_params.npy").exists()
        assert np.all(np.isfinite(np.load(out / "last_finite_params.npy")))
        last = json.loads((out / "metrics.jsonl").read_text().splitlines()[-1])
        assert last["kind"] == "abort" and last["J"] is None


class TestWrappers:
    def test_sweep_one_cell(self, tmp_path):
        data = {"sweep": {"eta": [0.05], "K": [1], "group_size": [4], "seeds": 2, "N": 5, "algorithms": ["tic-grpo"]}}
        out = tmp_path / "s"
        assert main(["sweep", "--config", write(tmp_path, data), "--out", str(out)]) == EXIT_OK
        lines = (out / "sweep.tsv").read_text().splitlines()
        assert len(lines) == 2
        assert lines[1].split("\t")[-1] == "2"
        assert (out / "checks.tsv").exists()

    def test_sweep_empty_grid(self, tmp_path):
        assert main(["sweep", "--config", write(tmp_path, {"sweep": {"eta": []}}), "--out", str(tmp_path / "s")]) == EXIT_CONFIG

    def test_sweep_bad_grid_value(self, tmp_path, capsys):
        data = {"sweep": {"K": [0]}}
        assert main(["sweep", "--config", write(tmp_path, data), "--out", str(tmp_path / "s")]) == EXIT_CONFIG
        assert "sweep.K" in capsys.readouterr().err

    def test_decompose(self, tmp_path):
        data = {"train": {"K": 2, "eta": 0.5}, "decompose": {"groups": 16}, "oracle": {"stats_samples": 2000}}
        out = tmp_path / "d"
        assert main(["decompose", "--config", write(tmp_path, data), "--out", str(out)]) == EXIT_OK
        rows = [line.split("\t") for line in (out / "decompose.tsv").read_text().splitlines()[1:]]
        assert {r[0] for r in rows} == {"0", "1", "2"}
        drifts = sorted({float(r[1]) for r in rows})
        assert drifts[0] == 0.0 and drifts[-1] > 0.0
        recs = [json.loads(x) for x in (out / "decompose.jsonl").read_text().splitlines()]
        assert max(r["max_residual"] for r in recs) < 1e-10

    def test_decompose_rejects_ablation(self, tmp_path):
        data = {"train": {"algorithm": "ablation"}}
        assert main(["decompose", "--config", write(tmp_path, data), "--out", str(tmp_path / "d")]) == EXIT_CONFIG

    def test_bias_study(self, tmp_path):
        data = {
            "bias_study": {"samples": 10_000, "pairs": 1, "estimators": ["tic-grpo", "ablation"]},
            "oracle": {"stats_samples": 5000},
        }
        out = tmp_path / "b"
        assert main(["bias-study", "--config", write(tmp_path, data), "--out", str(out)]) == EXIT_OK
        rows = (out / "bias.tsv").read_text().splitlines()
        assert rows[0].startswith("pair\testimator\tquantity\tz_current\tz_old")
        assert [r.split("\t")[1:3] for r in rows[1:]] == [
            ["tic-grpo", "estimate"],
            ["tic-grpo", "unbiased-term"],
            ["ablation", "estimate"],
        ]

    def test_writes_only_inside_run_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path / "root"))
        cfg = write(tmp_path, {"name": "iso", "train": {"N": 2}})
        before = set(p.name for p in tmp_path.iterdir())
        main(["train", "--config", cfg])
        after = set(p.name for p in tmp_path.iterdir())
        assert after - before == {"root"}
        assert [p.name for p in (tmp_path / "root").iterdir()] == ["iso-train-seed0"]
