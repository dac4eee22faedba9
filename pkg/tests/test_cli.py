import argparse

import pytest

from cluster import ProcessCluster
from weakmvc.cli import _parse_peers, build_parser, main, parse_op
from weakmvc.kv import KvCommand


def test_parse_op():
    assert parse_op("put a 1") == KvCommand.put(b"a", b"1")
    assert parse_op("GET a  # comment") == KvCommand.get(b"a")
    assert parse_op("mget a b") == KvCommand.mget([b"a", b"b"])
    assert parse_op("mput a 1 b 2") == KvCommand.mput([(b"a", b"1"), (b"b", b"2")])
    assert parse_op("   # nothing") is None
    with pytest.raises(ValueError):
        parse_op("put a")


def test_parse_peers():
    assert _parse_peers("1=h:1,3=g:2") == {1: ("h", 1), 3: ("g", 2)}
    assert _parse_peers("h:1, :2") == {1: ("h", 1), 2: ("127.0.0.1", 2)}
    with pytest.raises(argparse.ArgumentTypeError):
        _parse_peers(" , ")


def test_sim_run(tmp_path, capsys):
    stats = tmp_path / "s.txt"
    assert main(["sim", "run", "--requests", "20", "--stats", str(stats)]) == 0
    assert "20 slots" in capsys.readouterr().out
    assert "\ndecided=20\n" in stats.read_text()


def test_sim_run_with_config(tmp_path):
    conf = tmp_path / "c.conf"
    conf.write_text("replica.1 = :1\nreplica.2 = :2\nreplica.3 = :3\nreplica.4 = :4\nreplica.5 = :5\nf = 2\n")
    stats = tmp_path / "s.txt"
    assert main(["sim", "run", "--config", str(conf), "--clients", "2", "--requests", "10",
                 "--crash", "5@2000", "--stats", str(stats)]) == 0
    assert "decided=" in stats.read_text()


def test_sim_explore(capsys):
    assert main(["sim", "explore", "--pattern", "distinct", "--max-phases", "2"]) == 0
    assert "violations=0" in capsys.readouterr().out
    assert main(["sim", "explore", "--pattern", "BBC", "--mutant", "--max-phases", "3"]) == 2


def test_sim_measure(tmp_path, capsys):
    out = tmp_path / "m.txt"
    assert main(["sim", "measure", "--trials", "200", "--show", "3", "--stats", str(out)]) == 0
    text = capsys.readouterr().out
    assert "phase,cdf,geometric_bound" in text and text == out.read_text()
    assert text.strip().splitlines()[-1].startswith("3,")


def test_replica_sim_transport(tmp_path, capsys):
    conf = tmp_path / "c.conf"
    conf.write_text("replica.1 = :1\nreplica.2 = :2\nreplica.3 = :3\n")
    assert main(["replica", "--config", str(conf), "--id", "2", "--transport", "sim", "--requests", "5"]) == 0
    assert "applied through slot 5" in capsys.readouterr().out
    assert main(["replica", "--config", str(conf), "--id", "9", "--transport", "sim"]) == 2


def test_client_against_process_cluster(tmp_path, capsys):
    ops = tmp_path / "ops.txt"
    ops.write_text("put a 1\nput b 2\nget a\nmget a b c\n# done\n")
    with ProcessCluster(tmp_path) as pc:
        peers = ",".join(f"{rid}={h}:{p}" for rid, (h, p) in pc.cluster.addresses.items())
        assert main(["client", "--peers", peers, "--ops", str(ops)]) == 0
        assert capsys.readouterr().out.split("\n")[:4] == ["OK", "OK", "1", "1 2 (nil)"]
        assert main(["client", "--peers", peers, "--bench", "closed-loop", "--duration", "0.5", "--clients", "2"]) == 0
        out = capsys.readouterr().out
        assert "throughput_ops_s=" in out and "p99_ms=" in out


def test_parser_requires_a_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])
