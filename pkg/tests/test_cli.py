import io
import json
from argparse import Namespace

import pytest

from oedgrid.cli import RUN_OPTIONS, UsageError, main, read_run_csv, resolve_options, run_csv_header


def call(*argv):
    out = io.StringIO()
    code = main(list(argv), out=out)
    return code, out.getvalue()


def test_parse_prints_json():
    code, text = call("parse", "case5")
    assert code == 0
    data = json.loads(text)
    assert (data["n_buses"], data["n_lines"], data["n_generators"]) == (5, 6, 4)


def test_powerflow_exit_codes():
    code, text = call("powerflow", "case5")
    assert code == 0 and json.loads(text)["residual"] <= 1e-10
    assert call("powerflow", "case5", "--u", "1,2")[0] == 1
    assert call("powerflow", "case5", "--u", "200,0,200,0,200,0")[0] == 2


def test_usage_errors(tmp_path):
    assert call()[0] == 1
    assert call("run", "case5")[0] == 1  # --out is required
    assert call("run", str(tmp_path / "missing.m"), "--out", str(tmp_path / "o.csv"))[0] == 1
    assert call("run", "case5", "--policy", "random", "--out", "x.csv")[0] == 1
    bad = tmp_path / "bad.m"
    bad.write_text("mpc.baseMVA = 100;\n")
    assert call("parse", str(bad))[0] == 1
    assert call("--help")[0] == 0


def test_run_csv_is_reproducible(tmp_path, net):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ("case5", "--seed", "3", "--max-iters", "3", "--no-timing")
    assert call("run", *args, "--out", str(a))[0] == 0
    assert call("run", *args, "--out", str(b))[0] == 0
    assert a.read_bytes() == b.read_bytes()
    header = a.read_text().splitlines()[0].split(",")
    assert header == run_csv_header(net)
    assert header[4:6] == ["p_g3", "q_g3"]


def test_csv_round_trips_17_digits(tmp_path, case5):
    from oedgrid.loop import RunConfig, run
    from oedgrid.cli import write_run_csv

    res = run(RunConfig(model=case5, seed=2, max_iters=2))
    p = tmp_path / "r.csv"
    write_run_csv(p, case5.network, res.records)
    rows = read_run_csv(p)
    for row, rec in zip(rows, res.records):
        assert row["iter"] == rec.iter
        assert row["mre_g"] == rec.mre_g and row["trace_v"] == rec.total_variance
        assert [row[c] for c in run_csv_header(case5.network)[4:-2]] == rec.u.tolist()
        assert row["wall_ms"] == 1e3 * rec.wall_time


def _ns(**kw):
    base = {name: None for name in RUN_OPTIONS}
    base["config"] = None
    base.update(kw)
    return Namespace(**base)


def test_option_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 5, "rho": 0.5}))
    assert resolve_options(_ns(), {})["seed"] == 0
    assert resolve_options(_ns(), {"OEDGRID_SEED": "9"})["seed"] == 9
    kw = resolve_options(_ns(config=str(cfg)), {"OEDGRID_SEED": "9"})
    assert kw["seed"] == 5 and kw["rho"] == 0.5
    kw = resolve_options(_ns(config=str(cfg), seed=7, rho=0.1), {"OEDGRID_SEED": "9"})
    assert kw["seed"] == 7 and kw["rho"] == 0.1
    assert kw["noise_variance"] == 1e-4


def test_config_errors(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"sede": 5}))
    with pytest.raises(UsageError):
        resolve_options(_ns(config=str(cfg)), {})
    with pytest.raises(UsageError):
        resolve_options(_ns(), {"OEDGRID_SEED": "abc"})
    cfg.write_text("[1, 2]")
    with pytest.raises(UsageError):
        resolve_options(_ns(config=str(cfg)), {})


def test_compare_summary(tmp_path):
    out = tmp_path / "s.csv"
    code, text = call("compare", "case5", "--seeds", "1", "--max-iters", "8", "--out", str(out))
    assert code == 0 and text.startswith("seed 1")
    lines = out.read_text().splitlines()
    row = dict(zip(lines[0].split(","), lines[1].split(",")))
    assert float(row["oed_trace"]) <= float(row["const_trace"])


@pytest.mark.slow
def test_full_run_reaches_target_accuracy(tmp_path):
    out, truth = tmp_path / "run.csv", tmp_path / "truth.json"
    code, _ = call("run", "case5", "--policy", "oed", "--seed", "1", "--out", str(out),
                   "--truth-out", str(truth))
    assert code == 0
    rows = read_run_csv(out)
    assert len(rows) == 100
    assert rows[-1]["mre_g"] <= 0.05
    data = json.loads(truth.read_text())
    assert len(data["g_est"]) == 6
