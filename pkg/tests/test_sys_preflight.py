import pytest

from latem.sys_preflight import (
    FAIL,
    MISSING,
    PASS,
    ParameterPlan,
    PerNodeUsage,
    audit,
    emit_audit_commands,
    emit_conf,
    parse_readings,
    recommend,
)

# Stock values a freshly installed host reports for the plan's keys.
STOCK_DEFAULTS = {
    "kernel.pty.max": "4096",
    "net.core.rmem_max": "212992",
    "net.core.rmem_default": "212992",
    "net.core.wmem_max": "212992",
    "net.core.wmem_default": "212992",
    "net.ipv4.tcp_rmem": "4096 131072 6291456",
    "net.ipv4.tcp_wmem": "4096 16384 4194304",
    "net.ipv4.neigh.default.gc_thresh1": "128",
    "net.ipv4.neigh.default.gc_thresh2": "512",
    "net.ipv4.neigh.default.gc_thresh3": "1024",
    "nofile": "1024",
    "nproc": "63139",
}


class TestRecommend:
    def test_pty_for_3500_nodes(self):
        plan = recommend(3500)
        assert plan.entry("kernel.pty.max").required == "11000"

    def test_gc_thresholds(self):
        plan = recommend(100)
        for key in ("gc_thresh1", "gc_thresh2", "gc_thresh3"):
            assert plan.entry(f"net.ipv4.neigh.default.{key}").required == "200000"

    def test_small_run_keeps_floors(self):
        plan = recommend(1, PerNodeUsage(files=10, procs=5))
        assert int(plan.entry("nofile").required) >= 1_574_415
        assert int(plan.entry("nproc").required) >= 1_574_415
        assert int(plan.entry("kernel.pty.max").required) >= 11_000

    def test_large_run_scales_above_floor(self):
        plan = recommend(10_000, PerNodeUsage(files=500, procs=200))
        assert plan.entry("nofile").required == str(10_000 * 500)
        assert plan.entry("nproc").required == str(10_000 * 200)
        assert plan.entry("kernel.pty.max").required == str(10_000 + 1_000)

    def test_socket_buffer_values(self):
        plan = recommend(100)
        assert plan.entry("net.core.wmem_default").required == "2147483647"
        assert plan.entry("net.ipv4.tcp_rmem").required == "10240 87380 16777216"

    def test_duplicate_keys_rejected(self):
        entry = recommend(1).entries[0]
        with pytest.raises(ValueError):
            ParameterPlan(entries=(entry, entry))

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            recommend(0)
        with pytest.raises(ValueError):
            PerNodeUsage(files=0)


class TestAudit:
    def test_stock_host_fails_the_right_keys(self):
        plan = recommend(3500)
        report = audit(plan, STOCK_DEFAULTS)
        assert "kernel.pty.max" in report.failing_keys()
        assert "net.ipv4.tcp_rmem" in report.failing_keys()
        assert "net.ipv4.tcp_wmem" in report.failing_keys()
        assert {"net.ipv4.neigh.default.gc_thresh1",
                "net.ipv4.neigh.default.gc_thresh2",
                "net.ipv4.neigh.default.gc_thresh3"} <= report.failing_keys()

    def test_pty_fail_detail(self):
        plan = recommend(3500)
        report = audit(plan, {"kernel.pty.max": "4096"})
        row = next(r for r in report.rows if r.key == "kernel.pty.max")
        assert row.status == FAIL
        assert "6904" in row.detail  # 11000 - 4096

    def test_exact_value_passes(self):
        plan = recommend(100)
        report = audit(plan, {"net.core.rmem_max": "2147483647"})
        row = next(r for r in report.rows if r.key == "net.core.rmem_max")
        assert row.status == PASS

    def test_higher_value_passes(self):
        plan = recommend(100)
        report = audit(plan, {"kernel.pty.max": "999999"})
        assert next(r for r in report.rows if r.key == "kernel.pty.max").status == PASS

    def test_triple_requires_exact_match(self):
        plan = recommend(100)
        report = audit(plan, {"net.ipv4.tcp_rmem": "4096 131072 6291456"})
        row = next(r for r in report.rows if r.key == "net.ipv4.tcp_rmem")
        assert row.status == FAIL

    def test_triple_whitespace_normalized(self):
        plan = recommend(100)
        report = audit(plan, {"net.ipv4.tcp_rmem": "10240\t87380  16777216"})
        row = next(r for r in report.rows if r.key == "net.ipv4.tcp_rmem")
        assert row.status == PASS

    def test_unread_keys_missing(self):
        plan = recommend(100)
        report = audit(plan, {})
        assert all(r.status == MISSING for r in report.rows)

    def test_plan_against_itself_all_pass(self):
        plan = recommend(750)
        assert audit(plan, plan.required_readings()).all_pass


class TestEmitConf:
    def test_limits_lines(self):
        fragments = emit_conf(recommend(1))
        assert "root hard nofile 1574415" in fragments.limits_conf
        assert "root soft nofile 1574415" in fragments.limits_conf
        assert "root hard nproc 1574415" in fragments.limits_conf
        assert "root soft nproc 1574415" in fragments.limits_conf

    def test_sysctl_lines(self):
        fragments = emit_conf(recommend(1))
        assert "net.core.wmem_default=2147483647" in fragments.sysctl_conf
        assert "net.ipv4.tcp_rmem=10240 87380 16777216" in fragments.sysctl_conf

    def test_empty_plan(self):
        fragments = emit_conf(ParameterPlan(entries=()))
        assert fragments.limits_conf == ""
        assert fragments.sysctl_conf == ""

    def test_round_trip_through_parse(self):
        plan = recommend(2000)
        fragments = emit_conf(plan)
        parsed = parse_readings(fragments.sysctl_conf)
        for entry in plan.entries:
            if entry.kind != "ulimit":
                assert parsed[entry.key] == entry.required
        # limits lines carry the ulimit values verbatim
        for entry in plan.entries:
            if entry.kind == "ulimit":
                assert f"root hard {entry.key} {entry.required}" in fragments.limits_conf

    def test_round_trip_audit_passes(self):
        plan = recommend(500)
        readings = parse_readings(emit_conf(plan).sysctl_conf)
        sysctl_rows = [
            r for r in audit(plan, readings).rows if r.key not in ("nofile", "nproc")
        ]
        assert all(r.status == PASS for r in sysctl_rows)


def test_parse_readings_formats():
    text = "a.b = 1\nc.d=2\n# comment\n\ne.f =  3 4 5\n"
    assert parse_readings(text) == {"a.b": "1", "c.d": "2", "e.f": "3 4 5"}


def test_audit_commands_shape():
    lines = emit_audit_commands(recommend(100))
    assert any("ulimit -Hn" in l for l in lines)
    assert any("sysctl -n kernel.pty.max" in l for l in lines)
    assert all(l.startswith("test ") for l in lines)
