import json

import pytest

from netmatch import cli
from netmatch.graph import CircuitGraph


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert cli.main(["synth", "--seed", "3", "--size", "400", "--plant", "nand2:3", "--plant", "inv:2",
                     "--out", str(d / "host.sp"), "--report", str(d / "synth.json")]) == 0
    assert cli.main(["synth", "--seed", "4", "--size", "300", "--plant", "nand2:2", "--plant", "inv:2",
                     "--out", str(d / "ev.sp")]) == 0
    assert cli.main(["train", "--seed", "1", "--host", str(d / "host.sp"), "--target", "nand2", "--target", "inv",
                     "--epochs", "20", "--lr", "0.01", "--hidden", "8", "--mlp-hidden", "16",
                     "--positive", "10", "--partial", "5", "--mutation", "3", "--others", "3", "--random", "15",
                     "--eval-host", str(d / "ev.sp"), "--eval-positive", "5", "--eval-random", "5",
                     "--out", str(d / "model.bin"), "--report", str(d / "train.json"), "--no-timings"]) == 0
    return d


def _report(path):
    return json.loads(path.read_text())


def test_synth_report_and_truth(workdir):
    rep = _report(workdir / "synth.json")
    assert rep["command"] == "synth"
    assert rep["result"]["truth"]["nand2"] >= 3
    truth = json.loads((workdir / "host.truth.json").read_text())
    assert truth["targets"]["nand2"]["count"] == rep["result"]["truth"]["nand2"]


def test_convert_formats(workdir):
    assert cli.main(["convert", str(workdir / "host.sp"), "--out", str(workdir / "host.bin")]) == 0
    assert cli.main(["convert", str(workdir / "host.sp"), "--out", str(workdir / "host.json"), "--format", "json"]) == 0
    a = cli.load_graph(str(workdir / "host.bin"))
    b = cli.load_graph(str(workdir / "host.json"))
    c = cli.load_graph(str(workdir / "host.sp"))
    assert a.to_bytes() == b.to_bytes() == c.to_bytes()


def test_train_report(workdir):
    rep = _report(workdir / "train.json")["result"]["shared"]
    assert len(rep["losses"]) == 20
    assert set(rep["evaluation"]) == {"nand2", "inv"}
    assert "seconds" not in rep
    assert len(rep["config_hash"]) == 64


def test_sample_then_train_from_file(workdir):
    out = workdir / "s.jsonl"
    assert cli.main(["sample", "--host", str(workdir / "host.sp"), "--target", "nand2", "--kinds", "P+R",
                     "--positive", "6", "--random", "6", "--out", str(out)]) == 0
    kinds = {json.loads(line)["kind"] for line in out.read_text().splitlines()}
    assert kinds == {"Positive", "Random"}
    assert cli.main(["train", "--host", str(workdir / "host.sp"), "--target", "nand2", "--samples", str(out),
                     "--epochs", "2", "--hidden", "8", "--out", str(workdir / "m2.bin")]) == 0


def test_eval(workdir):
    rep_path = workdir / "eval.json"
    assert cli.main(["eval", "--model", str(workdir / "model.bin"), "--host", str(workdir / "ev.sp"),
                     "--target", "nand2", "--eval-positive", "4", "--eval-random", "4",
                     "--report", str(rep_path)]) == 0
    res = _report(rep_path)["result"]["evaluation"]["nand2"]
    assert res["positives"] == 4 and res["negatives"] == 4 and 0.0 <= res["auroc"] <= 1.0


@pytest.mark.parametrize("mode", ["all", "one"])
def test_match_with_baseline(workdir, mode):
    rep_path = workdir / f"match_{mode}.json"
    assert cli.main(["match", "--model", str(workdir / "model.bin"), "--host", str(workdir / "host.sp"),
                     "--target", "nand2", "--mode", mode, "--baseline-vf2", "--report", str(rep_path)]) == 0
    rep = _report(rep_path)["result"]
    assert rep["baseline"]["agrees"]
    truth = json.loads((workdir / "host.truth.json").read_text())["targets"]["nand2"]
    if mode == "all":
        assert sorted(m["mapping"] for m in rep["matches"]) == sorted(truth["mappings"])
    else:
        assert len(rep["matches"]) == 1
        assert rep["stats"]["regions_examined"] == rep["matches"][0]["verified_at"]
    for key in ("regions_examined", "regions_total", "vf2_calls", "K", "complete"):
        assert key in rep["stats"]


@pytest.mark.parametrize("extra", [[], ["--baseline-vf2"]])
def test_match_deterministic_without_timings(workdir, extra):
    paths = []
    for i in range(2):
        p = workdir / "det.json"
        assert cli.main(["match", "--model", str(workdir / "model.bin"), "--host", str(workdir / "host.sp"),
                         "--target", "inv", "--no-timings", "--report", str(p)] + extra) == 0
        paths.append(p.read_bytes())
    assert paths[0] == paths[1]
    assert "seconds" not in paths[0].decode() and "reduction" not in paths[0].decode()


def test_match_target_from_file(workdir):
    assert cli.main(["match", "--model", str(workdir / "model.bin"), "--host", str(workdir / "host.bin"),
                     "--target", str(workdir / "host.json"), "--K", "0", "--report", str(workdir / "self.json")]) == 0


def test_match_rejects_wrong_config(workdir):
    args = ["match", "--model", str(workdir / "model.bin"), "--host", str(workdir / "host.sp"), "--target", "nand2"]
    assert cli.main(args + ["--hidden", "32"]) == cli.EXIT_DATA
    assert cli.main(args + ["--config-hash", "0" * 64]) == cli.EXIT_DATA


def test_bench(workdir):
    rep_path = workdir / "bench.json"
    assert cli.main(["bench", "--model", str(workdir / "model.bin"), "--sizes", "300",
                     "--host", str(workdir / "host.sp"), "--max-centers", "40", "--report", str(rep_path)]) == 0
    hosts = _report(rep_path)["result"]["hosts"]
    assert set(hosts) == {"host", "synth300"}
    for r in hosts.values():
        assert r["max_rel_diff"] < 1e-9
        assert {"extraction_seconds", "per_subgraph_seconds", "reduction_pct"} <= set(r)


def test_exit_codes(workdir, tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["match", "--bogus"])
    assert e.value.code == cli.EXIT_USAGE
    with pytest.raises(SystemExit) as e:
        cli.main([])
    assert e.value.code == cli.EXIT_USAGE
    assert cli.main(["match", "--model", str(workdir / "model.bin"), "--host", str(workdir / "host.sp"),
                     "--target", "no_such_cell"]) == cli.EXIT_USAGE
    bad = tmp_path / "bad.sp"
    bad.write_text("M1 a b\n")
    assert cli.main(["convert", str(bad), "--out", str(tmp_path / "x.bin")]) == cli.EXIT_DATA
    junk = tmp_path / "junk.bin"
    junk.write_bytes(b"nope")
    assert cli.main(["match", "--model", str(junk), "--host", str(workdir / "host.sp"),
                     "--target", "nand2"]) == cli.EXIT_DATA
    assert cli.main(["synth", "--size", "10", "--plant", "decoder2_4:4", "--out", str(tmp_path / "t.sp")]) == cli.EXIT_DATA
    assert "error" in capsys.readouterr().err


def test_seed_from_environment(monkeypatch):
    monkeypatch.setenv("NETMATCH_SEED", "77")
    assert cli.build_parser().parse_args(["synth", "--out", "x"]).seed == 77
    monkeypatch.setenv("NETMATCH_SEED", "not a number")
    assert cli.build_parser().parse_args(["synth", "--out", "x"]).seed == 0


def test_per_target_models(workdir):
    out = workdir / "pt.bin"
    assert cli.main(["train", "--host", str(workdir / "host.sp"), "--target", "nand2", "--target", "inv",
                     "--per-target", "--epochs", "1", "--hidden", "8", "--positive", "4", "--partial", "0",
                     "--mutation", "0", "--others", "0", "--random", "4", "--out", str(out)]) == 0
    assert (workdir / "pt.nand2.bin").exists() and (workdir / "pt.inv.bin").exists()


def test_graph_file_loading_round_trip(tmp_path):
    g = CircuitGraph([2, 3, 0], [0, 2], [1, 1], [1, 3])
    p = tmp_path / "g.bin"
    p.write_bytes(g.to_bytes())
    assert cli.load_graph(str(p)).to_bytes() == g.to_bytes()
