import csv
import json

import numpy as np
import pytest

from raftsplit import cli
from raftsplit.cli import RunConfig, main
from raftsplit.raft_sim import SimConfig
from raftsplit.split_model import ModelParams
from raftsplit.stats import EmpiricalCdf, ks_distance


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def parse_summary(text):
    out = {}
    for line in text.strip().splitlines():
        k, _, v = line.partition(": ")
        out[k] = v
    return out


def test_analyze_forced_split(tmp_path, capsys):
    out = tmp_path / "a.csv"
    assert main(["analyze", "--nodes", "5", "--loss", "1", "--timeout-steps", "3",
                 "--out", str(out)]) == 0
    rows = read_csv(out)
    assert [r["split_cdf"] for r in rows] == ["0", "0", "0", "1"]
    summary = parse_summary(capsys.readouterr().out)
    assert summary["mean_steps"] == "3" and summary["variance_steps"] == "0"


def test_analyze_columns_self_consistent(tmp_path, capsys):
    out = tmp_path / "a.csv"
    assert main(["analyze", "--nodes", "25", "--loss", "0.2", "--timeout-steps", "6",
                 "--out", str(out)]) == 0
    rows = read_csv(out)
    assert list(rows[0]) == ["step", "absorption_prob", "split_cdf", "split_pdf",
                             "split_cdf_poisson"]
    cdf = np.array([float(r["split_cdf"]) for r in rows])
    pdf = np.array([float(r["split_pdf"]) for r in rows])
    np.testing.assert_allclose(pdf[1:], np.diff(cdf), atol=1e-11)
    assert [int(r["step"]) for r in rows] == list(range(len(rows)))
    summary = parse_summary(capsys.readouterr().out)
    mean = float(summary["mean_steps"])
    assert mean == pytest.approx(np.sum(1 - cdf), rel=1e-9)
    assert float(summary["mean_ms"]) == pytest.approx(50 * mean, rel=1e-11)
    assert summary["truncated_by_cap"] == "false"


def test_analyze_p0_is_computational_error(capsys):
    assert main(["analyze", "--nodes", "5", "--loss", "0", "--timeout-steps", "3"]) == 3
    assert "loss rate 0" in capsys.readouterr().err


def test_analyze_json(tmp_path, capsys):
    out = tmp_path / "a.json"
    assert main(["analyze", "--nodes", "5", "--loss", "0.3", "--timeout-steps", "3",
                 "--format", "json", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert set(doc) == {"config", "rows", "summary"}
    assert doc["config"]["model"]["timeout_steps"] == [3]
    assert doc["rows"][3]["absorption_prob"] == pytest.approx(0.027)
    assert doc["summary"]["t_in"] == pytest.approx(1.39)


def test_analyze_json_stdout(capsys):
    assert main(["analyze", "--nodes", "5", "--loss", "1", "--timeout-steps", "2",
                 "--format", "json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["summary"]["mean_steps"] == 2


def test_simulate_forced(tmp_path, capsys):
    out = tmp_path / "s.csv"
    assert main(["simulate", "--nodes", "5", "--loss", "1", "--timeout-steps", "3",
                 "--trials", "10", "--out", str(out)]) == 0
    rows = read_csv(out)
    assert list(rows[0]) == ["trial", "split_step", "split_time_ms", "censored", "seed"]
    assert {r["split_step"] for r in rows} == {"3"}
    assert {r["censored"] for r in rows} == {"false"}
    cdf = read_csv(tmp_path / "s.cdf.csv")
    assert cdf == [{"step": "3", "empirical_cdf": "1"}]


def test_simulate_deterministic_and_round_trips(tmp_path, capsys):
    args = ["simulate", "--nodes", "5", "--loss", "0.3", "--timeout-steps", "3",
            "--trials", "500", "--seed", "42"]
    assert main(args + ["--out", str(tmp_path / "1.csv")]) == 0
    s1 = capsys.readouterr().out
    assert main(args + ["--out", str(tmp_path / "2.csv")]) == 0
    s2 = capsys.readouterr().out
    assert (tmp_path / "1.csv").read_bytes() == (tmp_path / "2.csv").read_bytes()
    assert s1 == s2
    steps = np.array([float(r["split_step"]) for r in read_csv(tmp_path / "1.csv")])
    summary = parse_summary(s1)
    assert float(summary["mean_steps"]) == pytest.approx(steps.mean(), abs=1e-9)
    assert float(summary["variance_steps"]) == pytest.approx(steps.var(ddof=1), rel=1e-9)


def test_simulate_all_censored(capsys):
    assert main(["simulate", "--nodes", "5", "--loss", "0", "--timeout-steps", "3",
                 "--trials", "3", "--max-steps", "100"]) == 3


def test_compare_passes_and_ks_matches_table(tmp_path, capsys):
    out = tmp_path / "c.csv"
    assert main(["compare", "--nodes", "5", "--loss", "0.3", "--timeout-steps", "3",
                 "--trials", "3000", "--seed", "1", "--out", str(out)]) == 0
    summary = parse_summary(capsys.readouterr().out)
    assert summary["pass"] == "true"
    rows = read_csv(out)
    assert list(rows[0]) == ["step", "analytical_cdf", "empirical_cdf"]
    steps = np.array([int(r["step"]) for r in rows])
    ana = EmpiricalCdf(steps, np.array([float(r["analytical_cdf"]) for r in rows]), 0, 0)
    emp = EmpiricalCdf(steps, np.array([float(r["empirical_cdf"]) for r in rows]), 0, 0)
    assert ks_distance(ana, emp) == pytest.approx(float(summary["ks_distance"]), abs=1e-11)


def test_compare_negative_control(capsys):
    # model K=3, simulation K = floor(200/50) = 4
    code = main(["compare", "--nodes", "5", "--loss", "0.3", "--timeout-steps", "3",
                 "--timeout-range-ms", "200:210", "--trials", "1000"])
    assert code == 2
    assert float(parse_summary(capsys.readouterr().err)["ks_distance"]) > 0.3


def test_compare_timed_reports_without_failing(capsys):
    code = main(["compare", "--nodes", "5", "--loss", "0.3", "--timeout-steps", "3",
                 "--fidelity", "timed", "--trials", "500"])
    assert code == 0
    summary = parse_summary(capsys.readouterr().err)
    assert summary["checked"] == "false"
    assert float(summary["ks_distance"]) > 0


def test_compare_inconsistent_config_rejected(capsys):
    cfg = RunConfig(
        command="compare",
        model=ModelParams(5, 0.3, (3,)),
        sim=SimConfig.for_timeout_steps(5, 0.2, (3,), trials=10),
    )
    assert cli.run(cfg) == 1
    assert "loss_rate" in capsys.readouterr().err


def test_sweep_rows_and_order(tmp_path, capsys):
    out = tmp_path / "w.csv"
    assert main(["sweep", "--nodes", "7,5", "--loss", "0.3,0", "--timeout-steps", "4,3",
                 "--out", str(out)]) == 0
    rows = read_csv(out)
    assert list(rows[0]) == ["N", "K", "p", "mean_steps", "variance_steps", "n11", "t_c", "t_in"]
    keys = [(int(r["N"]), int(r["K"]), float(r["p"])) for r in rows]
    assert keys == sorted(keys) and len(keys) == 8
    for r in rows:
        if float(r["p"]) == 0:
            assert {r[c] for c in ("mean_steps", "variance_steps", "n11", "t_c", "t_in")} == {"inf"}
        else:
            assert float(r["mean_steps"]) > 0


def test_sweep_t_in_monotone_in_k(tmp_path, capsys):
    out = tmp_path / "w.csv"
    ks = ",".join(str(k) for k in range(1, 9))
    assert main(["sweep", "--nodes", "5", "--loss", "0.3", "--timeout-steps", ks,
                 "--out", str(out), "--workers", "2"]) == 0
    t_in = [float(r["t_in"]) for r in read_csv(out)]
    assert t_in == sorted(t_in)
    assert t_in[-1] == pytest.approx(1 / 0.7, abs=1e-4)


def test_chain_k1(tmp_path, capsys):
    out = tmp_path / "c.json"
    assert main(["chain", "--nodes", "5", "--loss", "0.5", "--timeout-steps", "1",
                 "--format", "json", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    p = {(r["row"], r["col"]): r["value"] for r in doc["rows"] if r["matrix"] == "P"}
    assert p == {(0, 0): 0.5, (0, 1): 0.5, (1, 0): 0, (1, 1): 1}
    assert doc["summary"]["spectral_bound_below_one"] is True


def test_chain_timeout_set_dimensions(capsys):
    assert main(["chain", "--nodes", "5", "--loss", "0.4", "--timeout-steps", "2,3"]) == 0
    summary = parse_summary(capsys.readouterr().err)
    assert summary["dimension"] == "7"
    assert float(summary["max_row_sum_error"]) < 1e-12
    assert summary["transient"] == "true"


def test_chain_p0_marks_fundamental_unavailable(capsys):
    assert main(["chain", "--nodes", "5", "--loss", "0", "--timeout-steps", "3"]) == 0
    captured = capsys.readouterr()
    assert parse_summary(captured.err)["fundamental_available"] == "false"
    assert "\nN," not in captured.out


def test_config_file_precedence(tmp_path, capsys):
    conf = tmp_path / "run.json"
    conf.write_text(json.dumps({"nodes": 5, "loss": 0.5, "timeout_steps": "2", "format": "json"}))
    assert main(["analyze", "--config", str(conf)]) == 0
    assert json.loads(capsys.readouterr().out)["config"]["model"]["loss_rate"] == 0.5
    assert main(["analyze", "--config", str(conf), "--loss", "1"]) == 0
    assert json.loads(capsys.readouterr().out)["summary"]["mean_steps"] == 2


def test_config_file_unknown_key(tmp_path, capsys):
    conf = tmp_path / "run.json"
    conf.write_text(json.dumps({"nodez": 5}))
    assert main(["analyze", "--config", str(conf)]) == 1


@pytest.mark.parametrize("argv", [
    ["analyze", "--loss", "0.3", "--timeout-steps", "3"],
    ["analyze", "--nodes", "5", "--loss", "0.3"],
    ["simulate", "--nodes", "5", "--loss", "0.3", "--timeout-steps", "3", "--latency-ms", "1-2"],
    ["simulate", "--nodes", "5", "--loss", "0.3", "--timeout-steps", "3", "--latency-ms", "1:60"],
    ["analyze", "--nodes", "5", "--loss", "2", "--timeout-steps", "3"],
])
def test_usage_errors_exit_1(argv, capsys):
    assert main(argv) == 1


def test_argparse_errors_exit_1(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--fidelity", "sloppy"])
    assert exc.value.code == 1


def test_float_format():
    assert cli.fmt(1 / 3) == "0.333333333333"
    assert cli.fmt(float("inf")) == "inf"
    assert cli.fmt(True) == "true"
    assert cli.fmt(7) == "7"
