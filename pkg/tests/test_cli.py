import csv
import io
import json

import pytest

from stpn_hybrid.cli import UsageError, main, parse_proposal, parse_times


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_parse_times():
    assert parse_times("0:1:0.25") == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert parse_times("0:21:0.5")[-1] == 21.0 and len(parse_times("0:21:0.5")) == 43
    assert parse_times("1, 0.5,0.5") == [0.5, 1.0]
    for bad in ("", "1:0:1", "0:1", "a,b", "-1", "0:1:0"):
        with pytest.raises(UsageError):
            parse_times(bad)


def test_parse_proposal():
    name, mix = parse_proposal("ups=0.5*uniform(9.95,10)+0.5*uniform(10,12)")
    assert name == "ups" and [w for w, _ in mix] == [0.5, 0.5]
    assert mix[1][1].kind == "UNIFORM" and mix[1][1].params == (10.0, 12.0)
    _, mix = parse_proposal("x=exp(2)+3*erlang(2,1)")
    assert [w for w, _ in mix] == [0.25, 0.75] and mix[1][1].params == (2, 1.0)
    for bad in ("ups", "ups=gauss(0,1)", "ups=uniform(1)", "ups=uniform(2,1)"):
        with pytest.raises(UsageError):
            parse_proposal(bad)


def test_hybrid_csv(capsys):
    code, out, _ = run(capsys, "hybrid", "four_activities", "--depth", "1", "--offspring", "500",
                       "--sampler", "is", "--times", "0.5,1")
    assert code == 0
    r = rows(out)
    assert [float(x["time"]) for x in r] == [0.5, 1.0]
    assert all(x["n_runs"] == "3000" and x["method"] == "hybrid" for x in r)
    assert all(float(x["ci_low"]) <= float(x["estimate"]) <= float(x["ci_high"]) for x in r)


def test_mc_and_ground_truth(capsys):
    code, out, _ = run(capsys, "mc", "--model", "four-activities", "--runs", "10000", "--times", "1")
    assert code == 0 and rows(out)[0]["n_runs"] == "10000"
    assert abs(float(rows(out)[0]["estimate"]) - 0.25) < 0.02
    code, out, _ = run(capsys, "ground-truth", "four_activities", "--times", "0.5", "--format", "json")
    doc = json.loads(out)
    assert code == 0 and doc["depth"] == "inf"
    assert doc["curve"][0]["mean"] == pytest.approx(0.078125, abs=1e-9)


def test_is_baseline_command(capsys):
    code, out, _ = run(capsys, "is", "dft", "--runs", "2000", "--times", "21",
                       "--proposal", "ups=0.5*uniform(9.95,10)+0.5*uniform(10,12)",
                       "--proposal", "ac=0.5*uniform(18,19.9)+0.5*uniform(19.9,20)")
    assert code == 0 and rows(out)[0]["method"] == "is"
    code, _, err = run(capsys, "is", "dft", "--runs", "100", "--times", "21", "--proposal", "ups=uniform(10,12)")
    assert code == 2 and "error[MODEL]" in err
    code, _, err = run(capsys, "is", "dft", "--runs", "100", "--times", "21", "--proposal", "nope=exp(1)")
    assert code == 2 and "nope" in err


def test_sc_graph(capsys):
    code, out, _ = run(capsys, "sc-graph", "four_activities")
    doc = json.loads(out)
    assert code == 0 and len(doc["nodes"]) == 17


def test_malformed_json(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"places": [', encoding="utf-8")
    code, _, err = run(capsys, "mc", str(p))
    assert code == 2 and err.startswith("stpn-hybrid: error[MODEL]: /:")
    p.write_text(json.dumps({"places": ["P"], "transitions": [{"name": "t"}], "initial_marking": {"P": 1}}))
    code, _, err = run(capsys, "mc", str(p))
    assert code == 2 and "/transitions/0" in err


def test_dft_parse_error(tmp_path, capsys):
    p = tmp_path / "bad.dft"
    p.write_text('toplevel "T";\n"T" nand "A" "B";\n', encoding="utf-8")
    code, _, err = run(capsys, "hybrid", str(p))
    assert code == 2 and "error[PARSE]: line 2, column 5" in err


def test_usage_errors(capsys):
    assert run(capsys, "hybrid")[0] == 2
    assert run(capsys, "bogus", "four_activities")[0] == 2
    assert run(capsys, "mc", "four_activities", "--confidence", "1.5")[0] == 2
    assert run(capsys, "mc", "no/such/file.json")[0] == 2
    assert run(capsys, "hybrid", "four_activities", "--offspring", "1")[0] == 2


def test_piece_cap_exit_code(capsys):
    code, _, err = run(capsys, "hybrid", "dft", "--depth", "5", "--piece-cap", "2", "--times", "21")
    assert code == 3 and "error[PIECE_CAP]" in err


def test_node_cap_exit_code(capsys):
    code, _, err = run(capsys, "sc-graph", "dft", "--node-cap", "50")
    assert code == 3 and "error[NODE_CAP]" in err


def test_seed_from_environment(monkeypatch, capsys):
    args = ("hybrid", "four_activities", "--offspring", "50", "--times", "0.5,1")
    monkeypatch.setenv("STPN_HYBRID_SEED", "7")
    a = run(capsys, *args)[1]
    b = run(capsys, *args, "--seed", "7")[1]
    c = run(capsys, *args, "--seed", "8")[1]
    assert a == b and a != c
    monkeypatch.setenv("STPN_HYBRID_SEED", "x")
    assert run(capsys, *args)[0] == 2


def test_output_file_and_workers(tmp_path, capsys):
    one, two = tmp_path / "a.csv", tmp_path / "b.csv"
    base = ("hybrid", "four_activities", "--depth", "1", "--offspring", "100", "--seed", "3")
    assert run(capsys, *base, "-o", str(one))[0] == 0
    assert run(capsys, *base, "--workers", "2", "--output", str(two))[0] == 0
    assert one.read_bytes() == two.read_bytes() and one.read_text().startswith("time,estimate")


def test_plot_flag(tmp_path, capsys):
    png = tmp_path / "curve.png"
    code, out, _ = run(capsys, "ground-truth", "four_activities", "--plot", str(png))
    assert code == 0 and out.startswith("time,")
    assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_marking_graph_option(capsys):
    code, out, _ = run(capsys, "hybrid", "four_activities", "--graph", "marking", "--times", "1",
                       "--offspring", "20")
    assert code == 0 and rows(out)[0]["n_runs"] == "120"
