import json
import re

import pytest

from mmosim.cli import main
from tests.conftest import make_config


@pytest.fixture
def config_file(tmp_path):
    cfg = make_config(run_id="cli-run", seed=11, total_days=1,
                      population={"clusters": "default", "n": 25, "seed": 11},
                      feature_flags={"informal_trade_enabled": True})
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg.to_dict()))
    return path


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestRun:
    def test_same_seed_twice_gives_identical_log_hashes(self, tmp_path,
                                                        config_file, capsys):
        code, out_a, _ = run_cli(capsys, "run", "--config", str(config_file),
                                 "--out", str(tmp_path / "a"))
        assert code == 0
        code, out_b, _ = run_cli(capsys, "run", "--config", str(config_file),
                                 "--out", str(tmp_path / "b"))
        assert code == 0
        hash_a = re.search(r"sha256 (\w+)", out_a).group(1)
        hash_b = re.search(r"sha256 (\w+)", out_b).group(1)
        assert hash_a == hash_b

    def test_seed_flag_overrides_config(self, tmp_path, config_file, capsys):
        code, out_a, _ = run_cli(capsys, "run", "--config", str(config_file),
                                 "--out", str(tmp_path / "a"))
        code, out_c, _ = run_cli(capsys, "run", "--config", str(config_file),
                                 "--out", str(tmp_path / "c"), "--seed", "99")
        hash_a = re.search(r"sha256 (\w+)", out_a).group(1)
        hash_c = re.search(r"sha256 (\w+)", out_c).group(1)
        assert hash_a != hash_c

    def test_bad_config_exits_nonzero_with_one_line(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{\"run_id\": \"x\"}")
        code, out, err = run_cli(capsys, "run", "--config", str(bad),
                                 "--out", str(tmp_path / "o"))
        assert code != 0
        assert err.strip().startswith("error:")
        assert len(err.strip().splitlines()) == 1


class TestReplayResume:
    def test_replay_reproduces_log_hash(self, tmp_path, config_file, capsys):
        run_cli(capsys, "run", "--config", str(config_file),
                "--out", str(tmp_path / "orig"))
        code, out, _ = run_cli(capsys, "replay", "--run", str(tmp_path / "orig"),
                               "--out", str(tmp_path / "replayed"))
        assert code == 0
        assert "replay match" in out

    def test_resume_from_interior_snapshot_matches(self, tmp_path, capsys):
        cfg = make_config(run_id="resumable", seed=23, total_days=2,
                          population={"clusters": "default", "n": 20,
                                      "seed": 23})
        cfg_path = tmp_path / "c.json"
        cfg_path.write_text(json.dumps(cfg.to_dict()))
        code, out, _ = run_cli(capsys, "run", "--config", str(cfg_path),
                               "--out", str(tmp_path / "full"))
        assert code == 0
        snap = tmp_path / "full" / "snapshots" / "step-00000024.json"
        assert snap.exists()
        code, out, _ = run_cli(capsys, "resume", "--snapshot", str(snap),
                               "--out", str(tmp_path / "resumed"))
        assert code == 0
        assert "finished at step 48" in out
        # the resumed tail equals the original tail
        from mmosim.persistence import read_log
        _, full = read_log(tmp_path / "full" / "events.log")
        _, tail = read_log(tmp_path / "resumed" / "events.log")
        expected = [e.to_record() for e in full if e.step.abs_step >= 24]
        assert [e.to_record() for e in tail] == expected


class TestDataTools:
    def test_datagen_population_and_season(self, tmp_path, capsys):
        code, out, _ = run_cli(capsys, "datagen", "population", "--n", "50",
                               "--seed", "3", "--out",
                               str(tmp_path / "pop.jsonl"))
        assert code == 0 and "50 profiles" in out
        code, out, _ = run_cli(capsys, "datagen", "season", "--n", "40",
                               "--seed", "3", "--out", str(tmp_path / "seasons"))
        assert code == 0
        assert (tmp_path / "seasons" / "s1.jsonl").exists()
        assert (tmp_path / "seasons" / "s2.jsonl").exists()

    def test_fit_and_predict_curve(self, tmp_path, capsys):
        run_cli(capsys, "datagen", "season", "--n", "60", "--seed", "5",
                "--out", str(tmp_path / "seasons"))
        code, out, _ = run_cli(capsys, "fit", "--logs",
                               str(tmp_path / "seasons" / "s1.jsonl"),
                               "--min-bin-count", "10",
                               "--out", str(tmp_path / "model.params"))
        assert code == 0 and "fitted 5 classes" in out
        code, out, _ = run_cli(capsys, "predict-curve", "--model",
                               str(tmp_path / "model.params"),
                               "--class", "III", "--n-max", "10")
        assert code == 0
        doc = json.loads(out)
        assert doc["profile_class"] == "wealth_elite"
        assert len(doc["series"]) == 10

    def test_trajectories_then_eval_replay_is_perfect(self, tmp_path,
                                                      config_file, capsys):
        run_cli(capsys, "run", "--config", str(config_file),
                "--out", str(tmp_path / "r"))
        code, out, _ = run_cli(capsys, "datagen", "trajectories",
                               "--run", str(tmp_path / "r"), "--day", "0",
                               "--out", str(tmp_path / "corpus.jsonl"))
        assert code == 0
        code, out, _ = run_cli(capsys, "eval",
                               "--pred", str(tmp_path / "corpus.jsonl"),
                               "--truth", str(tmp_path / "corpus.jsonl"))
        assert code == 0
        report = json.loads(out)
        assert report["accuracy"] == 1.0

    def test_stats_and_report(self, tmp_path, config_file, capsys):
        run_cli(capsys, "run", "--config", str(config_file),
                "--out", str(tmp_path / "r"))
        code, out, _ = run_cli(capsys, "stats", "--run", str(tmp_path / "r"),
                               "--step", "12")
        assert code == 0
        frame = json.loads(out)
        assert frame["step"] == 12
        assert "money_supply" in frame
        code, out, _ = run_cli(capsys, "report", "--run", str(tmp_path / "r"))
        assert code == 0
        assert (tmp_path / "r" / "report" / "daily_stats.jsonl").exists()

    def test_unknown_run_dir_is_an_error(self, tmp_path, capsys):
        code, out, err = run_cli(capsys, "stats", "--run",
                                 str(tmp_path / "nope"), "--step", "0")
        assert code != 0
        assert err.startswith("error:")


def test_builtin_scenario_config_loads():
    from mmosim.config import RunConfig

    cfg = RunConfig.from_file("builtin:scenario_black_market")
    assert cfg.run_id == "black-market-study"
    assert cfg.feature_flags["black_market_enabled"] is False
    assert cfg.interventions[0]["at_step"] == 132
    cfg.validate()
