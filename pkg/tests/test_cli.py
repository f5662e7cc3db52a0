import json
from pathlib import Path

import numpy as np
import pytest

from latem.cli import main

from conftest import FIVE_NODE_ENTRIES, FIXTURES, minimal_manifest_dict, write_manifest


@pytest.fixture
def matrix_file(tmp_path) -> Path:
    path = tmp_path / "matrix.txt"
    np.savetxt(path, FIVE_NODE_ENTRIES, fmt="%d")
    return path


@pytest.fixture
def classes_file(tmp_path, matrix_file) -> Path:
    out = tmp_path / "classes.json"
    rc = main(
        ["plan-delays", "--matrix", str(matrix_file), "--out", str(out),
         "--ip-base", "10.0.0.1"]
    )
    assert rc == 0
    return out


def test_plan_delays_writes_class_map(classes_file):
    payload = json.loads(classes_file.read_text())
    assert len(payload["classes"]) == 3
    assert payload["quantum_ms"] == 10


def test_plan_delays_with_subsample_and_inflate(tmp_path, matrix_file, capsys):
    rc = main(
        ["plan-delays", "--matrix", str(matrix_file), "--count", "3", "--seed", "7",
         "--inflate", "2", "--ip-base", "10.0.0.1"]
    )
    assert rc == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["classes"]


def test_emit_nft_matches_golden(classes_file, tmp_path, capsys):
    rc = main(["emit-nft", "--classes", str(classes_file)])
    assert rc == 0
    golden = (Path(__file__).parent / "goldens" / "nft_5node3class.txt").read_text()
    assert capsys.readouterr().out == golden


def test_emit_tc_matches_golden(classes_file, capsys):
    rc = main(["emit-tc", "--classes", str(classes_file), "--veth", "vetha1"])
    assert rc == 0
    golden = (Path(__file__).parent / "goldens" / "tc_5node3class.txt").read_text()
    assert capsys.readouterr().out == golden


def test_emit_fdb_from_nodes_file(tmp_path, capsys):
    nodes = tmp_path / "nodes.txt"
    nodes.write_text("10.0.0.1 vetha1\n10.0.0.2 vetha2\n")
    rc = main(["emit-fdb", "--nodes-file", str(nodes)])
    assert rc == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "bridge fdb add 02:42:0a:00:00:01 dev vetha1 master static"


def test_emit_fdb_from_manifest(tmp_path, capsys):
    path = write_manifest(tmp_path, minimal_manifest_dict())
    rc = main(["emit-fdb", "--manifest", str(path)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "dev {veth:node001}" in out


def test_gen_topology_edge_list(capsys):
    rc = main(["gen-topology", "--kind", "nws", "--n", "6", "--k", "2", "--p", "0", "--seed", "1"])
    assert rc == 0
    out = capsys.readouterr().out
    assert len(out.strip().splitlines()) == 6  # pure ring


def test_gen_topology_neighbors_json(capsys):
    rc = main(
        ["gen-topology", "--kind", "random", "--n", "6", "--degree", "2",
         "--seed", "3", "--neighbors"]
    )
    assert rc == 0
    lists = json.loads(capsys.readouterr().out)
    assert len(lists) == 6


def test_gen_bpf_source(tmp_path, capsys):
    out = tmp_path / "tcp-rto.c"
    rc = main(["gen-bpf", "--timeout-s", "3", "--hz", "250", "--source-out", str(out)])
    assert rc == 0
    assert out.read_text() == (FIXTURES / "tcp-rto-reference.c").read_text()
    err = capsys.readouterr().err
    assert "bpftool prog load tcp-rto.o /sys/fs/bpf/tcp-rto" in err


def test_plan_batches_prints_schedule(capsys):
    rc = main(
        ["plan-batches", "--total", "1072", "--cap", "0.80",
         "--startup", "0.80/750", "--steady", "0.54/750"]
    )
    assert rc == 0
    out = capsys.readouterr().out
    assert "batch 2: 243 nodes" in out
    assert "batch 3: 79 nodes" in out


def test_plan_batches_paper_rounding(capsys):
    rc = main(
        ["plan-batches", "--total", "1077", "--cap", "0.80",
         "--startup", "0.80/750", "--steady", "0.54/750", "--paper-rounding"]
    )
    assert rc == 0
    assert "batch 3: 84 nodes" in capsys.readouterr().out


def test_plan_batches_reports_unschedulable_remainder(capsys):
    rc = main(
        ["plan-batches", "--total", "5000", "--cap", "0.80",
         "--startup", "0.80/750", "--steady", "0.54/750"]
    )
    assert rc == 1
    assert "unscheduled" in capsys.readouterr().out


def test_preflight_fragments(tmp_path):
    limits = tmp_path / "limits.conf"
    sysctl = tmp_path / "sysctl.conf"
    rc = main(
        ["preflight", "--nodes", "3500", "--limits-out", str(limits),
         "--sysctl-out", str(sysctl)]
    )
    assert rc == 0
    assert "root soft nofile 1574415" in limits.read_text()
    assert "kernel.pty.max=11000" in sysctl.read_text()


def test_preflight_audit_exit_code(tmp_path, capsys):
    readings = tmp_path / "readings.txt"
    readings.write_text("kernel.pty.max = 4096\n")
    rc = main(["preflight", "--nodes", "3500", "--readings", str(readings)])
    assert rc == 1
    out = capsys.readouterr().out
    assert "FAIL" in out and "kernel.pty.max" in out


def test_run_dry_run_tree(tmp_path, matrix_file):
    data = minimal_manifest_dict()
    data["delay"] = {"matrix_path": str(matrix_file), "quantum_ms": 10}
    path = write_manifest(tmp_path, data)
    out_dir = tmp_path / "out"
    rc = main(["run", "--manifest", str(path), "--dry-run", "--out", str(out_dir)])
    assert rc == 0
    names = sorted(p.name for p in out_dir.iterdir())
    assert any(n.endswith("-nft.sh") for n in names)
    assert any(n.endswith("-tc.sh") for n in names)
    assert any("launch" in n for n in names)


def test_run_dry_run_with_inflation(tmp_path):
    matrix = tmp_path / "m.txt"
    matrix.write_text("0 30\n30 0\n")
    data = minimal_manifest_dict()
    data["delay"] = {"matrix_path": "m.txt", "quantum_ms": 10}
    data["timers"] = {"block_time_s": {"value": 12, "kind": "duration"}}
    path = write_manifest(tmp_path, data)
    out_dir = tmp_path / "out"
    rc = main(
        ["run", "--manifest", str(path), "--dry-run", "--out", str(out_dir),
         "--inflate", "2"]
    )
    assert rc == 0
    tc_file = next(p for p in out_dir.iterdir() if p.name.endswith("-tc.sh"))
    assert "netem delay 60ms" in tc_file.read_text()


def test_autoarpd_emit_sysctls(capsys):
    rc = main(["autoarpd", "--interface", "eth0", "--emit-sysctls"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "net.ipv4.neigh.eth0.mcast_solicit = 0" in out
    assert "app_solicit = 1" in out
    assert "base_reachable_time_ms = 72000000" in out


def test_stats_summary(capsys):
    rc = main(["stats", "--available-mib", "393216", str(FIXTURES / "stats_sample.csv")])
    assert rc == 0
    out = capsys.readouterr().out
    assert "stats_sample" in out
    assert "nodes=6" in out


def test_validation_error_maps_to_exit_2(tmp_path, capsys):
    data = minimal_manifest_dict()
    data["nodes"][1]["ip"] = data["nodes"][0]["ip"]
    path = write_manifest(tmp_path, data)
    rc = main(["run", "--manifest", str(path), "--dry-run", "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "duplicate IP" in capsys.readouterr().err
