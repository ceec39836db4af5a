import csv
import json

import pytest
import yaml

from spdelab.cli import main
from spdelab.config import ExperimentConfig
from spdelab.errors import ConfigError
from spdelab.presets import PRESETS, build

P48 = {"preset": "semilinear-p48", "n_steps": 32, "replicas": 40, "problem": {"modes": 8}}


def write_config(tmp_path, name="cfg.yaml", **data):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return str(path)


def run_cli(tmp_path, data, out, *extra):
    return main(["run", "--config", write_config(tmp_path, **data), "--out", str(tmp_path / out), *extra])


@pytest.fixture(scope="module")
def p48_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("p48")
    code = run_cli(tmp, {**P48, "export_increments": True}, "a")
    return tmp, code


class TestExitCodes:
    def test_pass(self, tmp_path):
        assert run_cli(tmp_path, {"preset": "zero", "replicas": 8, "n_steps": 16}, "out") == 0

    def test_fail(self, tmp_path, capsys):
        assert run_cli(tmp_path, {"preset": "linear-shift", "replicas": 4, "n_steps": 4}, "out") == 1
        assert "shift_oracle: FAIL" in capsys.readouterr().out

    def test_bad_config(self, tmp_path, capsys):
        assert run_cli(tmp_path, {"preset": "zero", "p": 4.0}, "out") == 2
        assert "p = 2" in capsys.readouterr().err

    def test_hypothesis_violation(self, tmp_path):
        # sigma outside the admissible window for beta
        assert run_cli(tmp_path, {"preset": "cable-linear", "exponents": {"sigma": 0.9}}, "out") == 2

    def test_missing_config_file(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "absent.yaml")]) == 3

    def test_truncated_increments(self, p48_run):
        tmp, _ = p48_run
        lines = (tmp / "a" / "increments.csv").read_text().splitlines()
        (tmp / "short.csv").write_text("\n".join(lines[: len(lines) // 2]) + "\n")
        code = main(["replay", "--config", write_config(tmp, "r.yaml", **P48), "--out", str(tmp / "r"),
                     "--increments", str(tmp / "short.csv")])
        assert code == 2


class TestCommands:
    def test_list_presets(self, capsys):
        assert main(["list-presets"]) == 0
        out = capsys.readouterr().out.splitlines()
        assert [line.split()[0] for line in out] == list(PRESETS)

    def test_validate(self, tmp_path, capsys):
        assert main(["validate-config", "--config", write_config(tmp_path, **P48)]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["valid"] and report["preset"] == "semilinear-p48"

    def test_validate_rejects_unknown_key(self, tmp_path):
        assert main(["validate-config", "--config", write_config(tmp_path, preset="zero", colour="red")]) == 2


class TestArtifacts:
    def test_p48_outputs(self, p48_run):
        tmp, code = p48_run
        assert code == 0
        summary = json.loads((tmp / "a" / "summary.json").read_text())
        assert 0 < summary["local_time"]["t_loc"] <= 1.0
        assert summary["local_time"]["binding"] in ("ball_eta", "ball_beta", "contraction")
        trace = list(csv.DictReader(open(tmp / "a" / "trace.csv")))
        assert trace and float(trace[-1]["xi_distance"]) < 1e-6
        timing = json.loads((tmp / "a" / "timing.json").read_text())
        assert timing["workers"] == 1 and not timing["replayed"]
        assert "output" not in summary["config"] and "workers" not in summary["config"]

    def test_rerun_and_workers_identical(self, p48_run):
        tmp, _ = p48_run
        first = (tmp / "a" / "summary.json").read_bytes()
        assert run_cli(tmp, {**P48, "export_increments": True}, "b") == 0
        assert run_cli(tmp, {**P48, "export_increments": True}, "c", "--workers", "3") == 0
        for out in ("b", "c"):
            assert (tmp / out / "summary.json").read_bytes() == first
            assert (tmp / out / "solutions.csv").read_bytes() == (tmp / "a" / "solutions.csv").read_bytes()

    def test_seed_changes_output(self, p48_run):
        tmp, _ = p48_run
        run_cli(tmp, P48, "s", "--seed", "9")
        assert (tmp / "s" / "solutions.csv").read_bytes() != (tmp / "a" / "solutions.csv").read_bytes()

    def test_replay_identical(self, p48_run):
        tmp, _ = p48_run
        code = main(["replay", "--config", write_config(tmp, "r.yaml", **P48, export_increments=True),
                     "--out", str(tmp / "replay"), "--increments", str(tmp / "a" / "increments.csv")])
        assert code == 0
        assert (tmp / "replay" / "summary.json").read_bytes() == (tmp / "a" / "summary.json").read_bytes()
        assert json.loads((tmp / "replay" / "timing.json").read_text())["replayed"]

    def test_zero_preset_all_zero(self, tmp_path):
        assert run_cli(tmp_path, {"preset": "zero", "replicas": 8, "n_steps": 16}, "z") == 0
        rows = list(csv.DictReader(open(tmp_path / "z" / "solutions.csv")))
        assert rows and all(float(r["value"]) == 0.0 for r in rows)
        audits = list(csv.DictReader(open(tmp_path / "z" / "audits.csv")))
        assert audits and all(float(r["lhs"]) == 0.0 and r["verdict"] == "PASS" for r in audits)


class TestConfig:
    def test_defaults(self):
        cfg = ExperimentConfig("zero")
        assert cfg.seed == 0 and cfg.workers == 1 and cfg.p == 2.0

    @pytest.mark.parametrize("data", [
        {"preset": "nope"},
        {"preset": "zero", "p": 3},
        {"preset": "zero", "n_steps": 30},
        {"preset": "zero", "replicas": 0},
        {"preset": "zero", "seed": -1},
        {"preset": "zero", "exponents": {"gamma": 0.1}},
        {"preset": "zero", "problem": {"colour": 1}},
        {"preset": "zero", "extra": 1},
        {"seed": 1},
        [1, 2],
    ])
    def test_rejects(self, data):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_mapping(data)

    def test_yaml_round_trip(self, tmp_path):
        cfg = ExperimentConfig("cable-linear", seed=3, exponents={"beta": 0.35})
        path = tmp_path / "c.yaml"
        path.write_text(yaml.safe_dump(cfg.to_dict()))
        assert ExperimentConfig.from_yaml(path) == cfg
        assert cfg.problem_params() == {"beta": 0.35}

    def test_malformed_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("preset: [zero\n")
        with pytest.raises(ConfigError):
            ExperimentConfig.from_yaml(path)


class TestPresets:
    @pytest.mark.parametrize("name", list(PRESETS))
    def test_builds_valid_problem(self, name):
        exp = build(name)
        assert exp.name == name and exp.n_steps % 4 == 0
        if exp.is_semilinear:
            exp.problem.validate()
        else:
            exp.problem.validate(strict="strict_convergence" in exp.suites)

    def test_overrides(self):
        assert build("cable-linear", modes=8, beta=0.35).linear.beta == 0.35
        assert build("cable-linear", modes=8).linear.op.mode_count == 8

    def test_unknown(self):
        with pytest.raises(ConfigError):
            build("nope")

    def test_beta_thresholds(self):
        assert build("cable-mild-gb").linear.beta >= 0.25 > build("divform-gb").linear.beta
