import csv
import io
import json
import subprocess
import sys

import pytest

from timeline_tamp import cli


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def m4(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "m4.json"
    assert run("gen-mosaic", "mosaic-4", "--out", path) == 0
    return path


def test_parse_budget():
    assert cli.parse_budget("0ms") == 0.0
    assert cli.parse_budget("250ms") == 0.25
    assert cli.parse_budget("10s") == 10.0
    assert cli.parse_budget("2m") == 120.0
    assert cli.parse_budget("3") == 3.0
    with pytest.raises(Exception):
        cli.parse_budget("soon")


def test_plan_success(m4, tmp_path):
    out = tmp_path / "plan.json"
    assert run("plan", m4, "--out", out) == 0
    doc = json.loads(out.read_text())
    assert set(doc["assignment"]) == {"PickPlace_A1", "PickPlace_A2", "PickPlace_B1", "PickPlace_B2"}


def test_plan_missing_file(tmp_path, capsys):
    assert run("plan", tmp_path / "nope.json") == cli.EXIT_ERROR
    assert "nope.json" in capsys.readouterr().err


def test_plan_zero_budget(m4):
    assert run("plan", m4, "--budget", "0ms") == cli.EXIT_TIMEOUT


def test_plan_infeasible(m4, tmp_path):
    doc = json.loads(m4.read_text())
    doc["horizon"] = 5
    bad = tmp_path / "short.json"
    bad.write_text(json.dumps(doc))
    assert run("plan", bad) == cli.EXIT_INFEASIBLE


def test_plan_invalid_file(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert run("plan", bad) == cli.EXIT_ERROR
    assert "line" in capsys.readouterr().err


def test_plan_reproducible(m4, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    run("plan", m4, "--no-timing", "--out", a)
    run("plan", m4, "--no-timing", "--out", b)
    assert a.read_bytes() == b.read_bytes()


def test_gen_mosaic_reproducible(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    run("gen-mosaic", "mosaic-9", "--seed", 3, "--out", a)
    run("gen-mosaic", "mosaic-9", "--seed", 3, "--out", b)
    assert a.read_bytes() == b.read_bytes()


def test_gen_mosaic_unknown(capsys):
    assert run("gen-mosaic", "mosaic-7") == cli.EXIT_ERROR


def test_oracle_and_plan_agree(m4, tmp_path):
    po, oo = tmp_path / "p.json", tmp_path / "o.json"
    assert run("plan", m4, "--midpoints", "--out", po) == 0
    assert run("oracle", m4, "--midpoints", "--out", oo) == 0
    plan, orc = json.loads(po.read_text()), json.loads(oo.read_text())
    assert plan["cost"]["f_d"] == pytest.approx(orc["selected"]["f_d"], abs=1e-9)
    assert orc["pareto"]


def test_simulate(m4, tmp_path):
    plan, out, trace = tmp_path / "p.json", tmp_path / "m.csv", tmp_path / "t.jsonl"
    run("plan", m4, "--out", plan)
    assert run("simulate", m4, plan, "--runs", 3, "--seed", 2, "--trace", trace, "--out", out) == 0
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert [r["seed"] for r in rows] == ["2", "3", "4"]
    assert trace.read_text().count("TaskEnd") == 12


def test_estimate_synergy(m4, tmp_path):
    out = tmp_path / "s.json"
    assert run("estimate-synergy", m4, "--samples", 1, "--out", out) == 0
    doc = json.loads(out.read_text())
    assert ["PickPlace_A1", "PickPlace_A1", "incompatible"] in doc["synergy"]


def test_unknown_suite(capsys):
    assert run("bench", "exp9") == cli.EXIT_ERROR
    assert "unknown suite" in capsys.readouterr().err
    with pytest.raises(cli.UnknownSuite):
        cli.run_bench("exp9")


def test_bench_exp3_rows(tmp_path):
    out = tmp_path / "exp3.csv"
    assert run("bench", "exp3", "--runs", 20, "--seed", 7, "--out", out) == 0
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert len(rows) == 40
    keys = [(r["config"], int(r["seed"])) for r in rows]
    assert keys == sorted(keys)
    summary = list(csv.DictReader(io.StringIO((tmp_path / "exp3_summary.csv").read_text())))
    et = {r["config"]: float(r["mean"]) for r in summary if r["metric"] == "et_p"}
    for cfg in ("optimized", "feasible"):
        vals = [float(r["et_p"]) for r in rows if r["config"] == cfg]
        assert et[cfg] == pytest.approx(sum(vals) / len(vals))


def test_bench_exp2_single_run():
    report = cli.run_bench("exp2", runs=1, seed=0)
    assert report.mean("multi_goal", "distance") <= report.mean("single_goal", "distance")
    assert {r["config"] for r in report.rows} == {"multi_goal", "single_goal", "precomputed"}


def test_bench_exp1_configs():
    report = cli.run_bench("exp1", runs=2, seed=0)
    assert sorted({r["config"] for r in report.rows}) == ["flexible", "rigid"]
    assert len(report.rows) == 4


def test_help_lists_flags():
    out = subprocess.run([sys.executable, "-m", "timeline_tamp.cli", "plan", "--help"],
                         capture_output=True, text=True, check=True).stdout
    for flag in ("--seed", "--budget", "--out", "--mode", "--search"):
        assert flag in out
