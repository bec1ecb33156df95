import csv
import hashlib
import json

import pytest
import yaml

from codednet.cli import config_hash, main

NET = "1 -> 2,3 [p=0.9,0.8]\n2 -> 4 [p=0.9]\n3 -> 4 [p=0.7]\n"


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def _config(tmp_path, **cfg):
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def test_exp_reruns_are_byte_identical(tmp_path):
    cfg = _config(tmp_path, networks=1, episodes=2, nodes=5, horizon=10)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["exp", "dynmulti", "--config", cfg, "--seed", "3", "--out", str(a)]) == 0
    assert main(["exp", "dynmulti", "--config", cfg, "--seed", "3", "--out", str(b)]) == 0
    assert _files(a) == _files(b)
    man = json.loads((a / "manifest.json").read_text())
    assert man["seed"] == 3
    assert man["config_hash"] == config_hash(man["config"])
    for name, digest in man["outputs"].items():
        assert hashlib.sha256((a / name).read_bytes()).hexdigest() == digest


def test_parallel_matches_serial(tmp_path):
    cfg = _config(tmp_path, sizes=[5], instances=3)
    a, b = tmp_path / "a", tmp_path / "b"
    main(["exp", "wucast", "--config", cfg, "--out", str(a)])
    main(["exp", "wucast", "--config", cfg, "--out", str(b), "--parallel", "2"])
    assert _files(a) == _files(b)


def test_empty_study_writes_header_only(tmp_path):
    main(["exp", "wucast", "--instances", "0", "--out", str(tmp_path)])
    rows = list(csv.reader(open(tmp_path / "unicast_instances.csv")))
    assert rows == [["nodes", "instance", "seed", "source", "sink", "e2e_retransmission",
                     "e2e_coding", "link_retransmission", "path_coding", "full_coding"]]


def test_environment_sits_between_flag_and_config(tmp_path, monkeypatch):
    cfg = _config(tmp_path, seed=5, out=str(tmp_path / "from_cfg"))
    monkeypatch.setenv("CODEDNET_SEED", "7")
    monkeypatch.setenv("CODEDNET_OUT", str(tmp_path / "from_env"))
    assert main(["exp", "aloha", "--config", cfg]) == 0
    assert json.loads((tmp_path / "from_env" / "manifest.json").read_text())["seed"] == 7
    main(["exp", "aloha", "--config", cfg, "--seed", "9", "--out", str(tmp_path / "flag")])
    assert json.loads((tmp_path / "flag" / "manifest.json").read_text())["seed"] == 9


def test_sim_and_opt_on_a_net_file(tmp_path, capsys):
    net = tmp_path / "net.txt"
    net.write_text(NET)
    out = tmp_path / "sim"
    assert main(["sim", "--net", str(net), "--sinks", "4", "--rate", "0.3", "-K", "8",
                 "--duration", "400", "--out", str(out), "--seed", "1"]) == 0
    session = json.loads((out / "session.json").read_text())
    assert session
    assert (out / "ranks.csv").read_text().startswith("tau,rank_4")
    cfg = _config(tmp_path, costs={"1 -> 2,3": 2.0})
    out = tmp_path / "opt"
    assert main(["opt", "--net", str(net), "--source", "1", "--sinks", "4",
                 "--variant", "lossy", "--config", cfg, "--out", str(out)]) == 0
    sol = json.loads((out / "solution.json").read_text())
    assert sol["status"] == "optimal"
    assert (out / "problem.lp").read_text().startswith("minimize")


def test_dist_finmem_dyn_commands(tmp_path):
    assert main(["dist", "--nodes", "15", "--n-sinks", "2", "--iters", "20",
                 "--out", str(tmp_path / "sg")]) == 0
    rows = list(csv.reader(open(tmp_path / "sg" / "subgradient.csv")))
    assert len(rows) == 21
    assert main(["dist", "--method", "primal-dual", "--iters", "200",
                 "--out", str(tmp_path / "pd")]) == 0
    assert main(["finmem", "--M", "2", "--epochs", "2000", "--out", str(tmp_path / "fm")]) == 0
    assert len(list(csv.reader(open(tmp_path / "fm" / "loss.csv")))) == 3
    assert main(["dyn", "--network", "four_node", "--initial", "4", "--horizon", "5",
                 "--out", str(tmp_path / "dy")]) == 0
    man = json.loads((tmp_path / "dy" / "manifest.json").read_text())
    assert man["checks"] == {"admissible": True, "continuity": True}


def test_verify_writes_acceptance_table(tmp_path):
    assert main(["verify", "--only", "1", "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "acceptance.csv")))
    assert [(r["criterion"], r["status"]) for r in rows] == [("1", "PASS")]


def test_errors_exit_with_code_two(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("1 -> 2\nnonsense\n")
    assert main(["opt", "--net", str(bad), "--source", "1", "--sinks", "2",
                 "--out", str(tmp_path)]) == 2
    assert "line 2" in capsys.readouterr().err
    assert main(["opt", "--net", str(tmp_path / "missing.txt"), "--source", "1",
                 "--sinks", "2", "--out", str(tmp_path)]) == 2
    with pytest.raises(SystemExit):
        main(["exp", "nosuchstudy"])
