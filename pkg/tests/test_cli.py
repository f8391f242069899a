import csv
import io
import math
import subprocess
import sys

import numpy as np
import pytest
import yaml

from rksmooth import experiments as ex
from rksmooth.cli import main, parse_point
from rksmooth.config import RunConfig
from rksmooth.tableau import ParamPoint

SMALL = {
    "data": {"n_per_class": 40},
    "model": {"state_dim": 6, "hidden_dim": 8, "n_steps": 4},
    "train": {"epochs": 3},
    "sweep": {"u_grid": [0.5, 1.0], "epsilons": [0.0, 0.03], "seeds": [0, 1]},
    "compare": {"seeds": [0, 1]},
}


def read_csv(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.yaml"
    path.write_text(yaml.safe_dump(SMALL))
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


class TestHelpers:
    def test_mean_stderr(self):
        m, s = ex.mean_stderr([0.5, 0.6, 0.7])
        assert m == pytest.approx(0.6)
        assert s == pytest.approx(np.std([0.5, 0.6, 0.7], ddof=1) / math.sqrt(3))
        assert ex.mean_stderr([0.4]) == (0.4, None)

    def test_parse_point(self):
        assert parse_point("midpoint") == ParamPoint("rk2_u", (0.5,))
        assert parse_point("rk4_uv:1/3,2/3") == ParamPoint("rk4_uv", (1 / 3, 2 / 3))

    def test_parallel_map_order(self):
        assert ex.parallel_map(abs, [-3, 1, -2], jobs=2) == [3, 1, 2]


class TestTableauCommand:
    def test_midpoint(self, capsys):
        code, out, _ = run(capsys, "tableau", "rk2_u", "0.5")
        assert code == 0 and "order: 2" in out and "0.5 | 0.5" in out

    def test_classic(self, capsys):
        code, out, _ = run(capsys, "tableau", "rk4_u2", "0.3333333333333333")
        assert code == 0 and "order: 4" in out

    def test_named_and_json(self, capsys):
        code, out, _ = run(capsys, "tableau", "rk4_38", "--json")
        import json

        doc = json.loads(out)
        assert code == 0 and doc["order"] == 4 and doc["b"] == pytest.approx([1 / 8, 3 / 8, 3 / 8, 1 / 8])

    def test_infeasible(self, capsys):
        code, _, err = run(capsys, "tableau", "rk2_u", "0")
        assert code == 1
        assert err.startswith("error: infeasible-parameter:") and "(0, 1]" in err

    def test_unknown_family(self, capsys):
        code, _, err = run(capsys, "tableau", "rk7")
        assert code == 1 and err.startswith("error: unknown-method:")


class TestConvergenceCommand:
    def test_rk2_grid(self, capsys):
        code, out, _ = run(capsys, "convergence", "rk2_u", "0.25", "0.5", "0.75", "1.0")
        rows = list(csv.DictReader(io.StringIO(out)))
        assert code == 0 and len(rows) == 4
        assert all(1.7 <= float(r["slope"]) <= 2.3 for r in rows)

    def test_euler(self, capsys, tmp_path):
        out_file = tmp_path / "conv.csv"
        assert run(capsys, "convergence", "euler", "--out", out_file)[0] == 0
        assert 0.7 <= float(read_csv(out_file)[0]["slope"]) <= 1.3

    def test_three_eighths(self, capsys):
        _, out, _ = run(capsys, "convergence", "rk4_uv", "1/3,2/3", "--problem", "sin")
        assert 3.7 <= float(list(csv.DictReader(io.StringIO(out)))[0]["slope"]) <= 4.3

    def test_needs_points(self, capsys):
        code, _, err = run(capsys, "convergence", "rk2_u")
        assert code == 1 and err.startswith("error: config:")


class TestPipeline:
    def test_train_rerun_identical(self, capsys, tmp_path, small_config):
        code, out, _ = run(capsys, "train", "--config", small_config, "--out", tmp_path / "a")
        assert code == 0
        first = tmp_path / "a" / out.strip().split("/")[-1]
        assert {p.name for p in first.iterdir()} == {"config.yaml", "train_log.csv", "draws.csv", "checkpoint.json"}
        assert first.name.startswith("run-") and first.name.endswith(RunConfig.load(small_config).digest())
        _, out2, _ = run(capsys, "train", "--config", small_config, "--out", tmp_path / "b")
        second = tmp_path / "b" / out2.strip().split("/")[-1]
        for name in ("train_log.csv", "checkpoint.json", "draws.csv"):
            assert (first / name).read_bytes() == (second / name).read_bytes()

    def test_smoothing_log_statistics(self, capsys, tmp_path):
        doc = dict(SMALL, train={"epochs": 60},
                   strategy={"kind": "smoothing", "base": {"family": "rk2_u", "params": [0.5]}})
        doc["data"] = {"n_per_class": 8}
        path = tmp_path / "s.yaml"
        path.write_text(yaml.safe_dump(doc))
        _, out, _ = run(capsys, "train", "--config", path, "--out", tmp_path)
        log = read_csv(tmp_path / out.strip().split("/")[-1] / "train_log.csv")
        u = np.array([float(r["param0"]) for r in log])
        assert len(u) == 60 and 0.5 * 0.0125 <= u.std(ddof=1) <= 2 * 0.0125

    def test_usweep_from_checkpoint(self, capsys, tmp_path, small_config):
        _, out, _ = run(capsys, "train", "--config", small_config, "--out", tmp_path)
        ck = tmp_path / out.strip().split("/")[-1] / "checkpoint.json"
        code, out, _ = run(capsys, "usweep", "--checkpoint", ck, "--u-grid", "0.7",
                           "--epsilons", "0,2/255", "--seeds", "0", "--out", tmp_path / "sw")
        run_dir = tmp_path / "sw" / out.strip().split("/")[-1]
        rows = read_csv(run_dir / "usweep.csv")
        assert code == 0 and len(rows) == 2 and {r["u"] for r in rows} == {"0.7"}
        summary = read_csv(run_dir / "usweep_summary.csv")
        assert all(r["clean_stderr"] == "" for r in summary)
        assert "checkpoint" in (run_dir / "usweep_caption.txt").read_text()

    def test_usweep_missing_checkpoint(self, capsys, tmp_path):
        code, _, err = run(capsys, "usweep", "--checkpoint", tmp_path / "none.json")
        assert code == 1 and err.startswith("error: missing-checkpoint:")

    def test_usweep_from_config(self, capsys, tmp_path, small_config):
        code, out, _ = run(capsys, "usweep", "--config", small_config, "--out", tmp_path, "--jobs", "2")
        run_dir = tmp_path / out.strip().split("/")[-1]
        rows = read_csv(run_dir / "usweep.csv")
        assert code == 0 and len(rows) == 2 * 2 * 2
        summary = read_csv(run_dir / "usweep_summary.csv")
        assert len(summary) == 4 and all(r["n_seeds"] == "2" for r in summary)

    def test_compare(self, capsys, tmp_path, small_config):
        code, out, _ = run(capsys, "compare", "--config", small_config, "--out", tmp_path, "--seeds", "0")
        assert code == 0 and "Training schedule" in out
        run_dir = tmp_path / out.strip().splitlines()[-1].split("/")[-1]
        rows = read_csv(run_dir / "compare.csv")
        assert [r["schedule"] for r in rows] == ["standard", "smoothing", "adversarial", "smoothing+adversarial"]
        assert all(r["error"] == "" for r in rows)
        assert (run_dir / "compare_table.txt").read_text().startswith("Robust accuracy")

    def test_compare_parallel_matches_serial(self, tmp_path):
        cfg = RunConfig(SMALL)
        assert ex.compare(cfg, [0, 1], jobs=1) == ex.compare(cfg, [0, 1], jobs=2)

    def test_compare_records_failed_cell(self):
        doc = dict(SMALL, strategy={"kind": "smoothing", "base": {"family": "rk2_u", "params": [0.999]},
                                    "scale": [1e4]})
        rows = ex.compare(RunConfig(doc), [0])
        by = {r["schedule"]: r for r in rows}
        assert by["smoothing"]["error"].startswith("rejection-limit")
        assert not by["standard"].get("error")
        table = ex.format_compare_table(ex.summarize_compare(rows), RunConfig(doc), [0])
        assert "failed" in table

    def test_ensemble_eval(self, capsys, tmp_path, small_config):
        _, out, _ = run(capsys, "train", "--config", small_config, "--out", tmp_path)
        ck = tmp_path / out.strip().split("/")[-1] / "checkpoint.json"
        code, out, _ = run(capsys, "ensemble-eval", "--checkpoint", ck, "--points", "midpoint", "heun",
                           "--epsilons", "0")
        rows = list(csv.DictReader(io.StringIO(out)))
        assert code == 0 and [r["solver"] for r in rows] == ["rk2_u(0.5)", "rk2_u(1.0)", "ensemble"]


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "rksmooth", "tableau", "rk4_uv", "0.5", "0.3"],
                          capture_output=True, text=True)
    assert proc.returncode == 1
    assert proc.stderr.startswith("error: infeasible-parameter:")


def test_usage_error_exit_code(capsys):
    with pytest.raises(SystemExit) as err:
        main(["frobnicate"])
    assert err.value.code == 2
