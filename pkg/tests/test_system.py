import io

import pytest

from noc_accel import cli
from noc_accel.config import load_config, load_string
from noc_accel.experiments import (NotSweepable, apply, parse_values, run_suite, saturation_index,
                                   set_workloads, sweep)
from noc_accel.metrics import metrics_from_trace, isclose_metrics
from noc_accel.system import TASK_LOG_COLUMNS, Deadlock, System, run
from oracles import idle_request_timeline

US = 1_000_000


def single(proc, n_in, n_out, exec_cycles, **system):
    extra = "\n".join(f"{k} = {v}" for k, v in system.items())
    return load_string(f"""
[system]
warmup_us = 0
duration_us = 50
{extra}
[hwa a]
id = 3
exec_cycles = {exec_cycles}
input_flits = {n_in}
output_flits = {n_out}
[workload w]
processors = {proc}
targets = a
arrival = burst
max_requests = 1
""")


@pytest.fixture(scope="module")
def small():
    return load_config("izigzag").replace(duration_ps=20 * US, warmup_ps=5 * US)


class TestSingleRequestLatency:
    @pytest.mark.parametrize("proc", range(8))
    @pytest.mark.parametrize("shape", [(1, 1, 1), (4, 3, 5), (3, 4, 17), (2, 2, 300)])
    def test_matches_closed_form(self, proc, shape):
        cfg = single(proc, *shape)
        s = System(cfg)
        r = s.run()
        (rec,) = r.tasks
        x, y = cfg.processor_nodes[proc][1]
        hops = abs(2 - x) + abs(2 - y)
        want = idle_request_timeline(hops, *shape)
        got = {e: t for t, e in s.collector.milestones[rec.tid]}
        assert {k: got[k] for k in want} == want
        assert rec.finish - rec.issue == want["done"]
        assert r.metrics.mean_latency_ns * 1000 == want["done"]

    def test_breakdown_accounts_for_everything(self):
        r = run(single(0, 4, 3, 5))
        m = r.metrics
        assert m.latency_residual_ns == 0
        total = m.latency_processor_ns + m.latency_transmission_ns + m.latency_fpga_ns
        assert total == pytest.approx(m.mean_latency_ns)
        assert min(m.latency_processor_ns, m.latency_transmission_ns, m.latency_fpga_ns) > 0


class TestRunMetrics:
    def test_zero_rate(self, small):
        r = run(apply(small, "request_rate", 0.0))
        m = r.metrics
        assert m.throughput == 0 and m.fpga_busy_fraction == 0 and m.injection_rate == 0

    def test_result_throughput_bounded_by_payload_injection(self, small):
        m = run(small).metrics
        assert 0 < m.result_throughput <= m.payload_injection_rate * 1.05
        assert m.throughput > m.result_throughput  # grants and notifies add output flits

    def test_deterministic_csv(self, small):
        a, b = run(small), run(small)
        assert a.metrics_csv() == b.metrics_csv()
        assert a.task_log_csv() == b.task_log_csv()
        assert a.task_log_csv().splitlines()[0].split(",") == TASK_LOG_COLUMNS

    def test_seed_matters(self, small):
        assert run(small).task_log_csv() != run(small.replace(seed=2)).task_log_csv()

    def test_trace_replay_equals_live(self, small):
        buf = io.StringIO()
        live = System(small, trace=buf).run()
        replay = metrics_from_trace(buf.getvalue().splitlines(), small.warmup_ps, live.end_ps)
        assert isclose_metrics(live.metrics, replay)

    def test_trace_digest_is_stable(self, small):
        a = System(small, hash_trace=True).run().trace_digest
        b = System(small, hash_trace=True).run().trace_digest
        assert a == b and a

    def test_doubling_warmup_keeps_rates(self):
        cfg = set_workloads(load_config("izigzag"), rate=0.2, arrival="fixed")
        cfg = cfg.replace(duration_ps=200 * US)
        a = run(cfg.replace(warmup_ps=20 * US)).metrics
        b = run(cfg.replace(warmup_ps=40 * US)).metrics
        for key in ("injection_rate", "throughput", "tasks_per_us"):
            assert getattr(b, key) == pytest.approx(getattr(a, key), rel=0.01)


class TestSystemInvariants:
    @pytest.mark.parametrize("variant", [
        dict(),
        dict(interconnect="bus"),
        dict(fpga_buffering="shared_cache"),
        dict(num_tb=1),
        dict(tb_release="hwac_end"),
        dict(pr_channels=None, ps_group=None),
    ])
    def test_quiescent_run_is_clean(self, variant):
        cfg = load_config("eight_mixed").replace(duration_ps=2000 * US, warmup_ps=0, **variant)
        r = run(set_workloads(cfg, rate=0.5, max_requests=6))
        c = r.counters
        assert r.violations == ()
        assert c["tasks_completed"] == 48 and c["tasks_failed"] == 0
        assert c["requests"] == c["grants"] == c["tasks_started"] == c["notifies"] == 48
        assert c["net_injected"] == c["net_ejected"] and c["net_in_flight"] == 0

    def test_memory_scenario(self):
        cfg = load_config("tb_izigzag").replace(duration_ps=400 * US)
        r = run(set_workloads(cfg, scenario="memory", max_requests=3))
        assert r.violations == () and r.counters["dma_jobs"] == 24
        assert r.counters["results_written"] == 24

    def test_watchdog_reports_deadlock(self):
        # a one-entry request buffer is rejected by validation because of exactly this
        cfg = load_config("tb_izigzag").replace(rb_depth=1, num_tb=1, watchdog_ps=5 * US)
        with pytest.raises(Deadlock, match="cpu0: outstanding"):
            System(cfg).run()


class TestSweep:
    def test_num_tb_rows(self):
        cfg = load_config("tb_izigzag")
        rows = sweep(cfg, "num_tb", [1, 2, 3, 4])
        assert [r["num_tb"] for r in rows] == [1, 2, 3, 4]
        assert rows[0]["completion_time_us"] > rows[1]["completion_time_us"]

    def test_pr_strategies_all_run(self, small):
        rows = sweep(small, "pr_channels", parse_values("pr_channels", "4, 8, 16, 32"))
        assert len(rows) == 4 and all(r["violations"] == 0 and r["tasks_completed"] for r in rows)

    def test_parallel_matches_serial_order(self, small):
        vals = [0.2, 0.1, 0.4]
        assert sweep(small, "rate", vals, jobs=2) == sweep(small, "rate", vals, jobs=1)

    def test_not_sweepable(self, small):
        with pytest.raises(NotSweepable, match="mesh_width"):
            sweep(small, "mesh_width", [2])

    def test_values_validated(self, small):
        with pytest.raises(ValueError):
            sweep(small, "num_tb", [9])

    def test_bad_choice_rejected(self, small):
        with pytest.raises(ValueError, match="tb_release"):
            apply(small, "tb_release", "pg_end")

    def test_saturation_index(self):
        assert saturation_index([1, 5, 9.8, 10, 9.9]) == 2


class TestCli:
    def test_validate(self, capsys):
        assert cli.main(["validate", "jpeg_chain"]) == 0
        assert "4 accelerators" in capsys.readouterr().out

    def test_validate_reports_errors(self, tmp_path, capsys):
        p = tmp_path / "bad.cfg"
        p.write_text("[hwa a]\nid = 1\n[hwa b]\nid = 1\n")
        assert cli.main(["validate", str(p)]) == 2
        assert "duplicate hwa_id 1" in capsys.readouterr().err

    def test_run_writes_csvs_and_trace(self, tmp_path):
        trace = tmp_path / "t" / "trace.txt"
        assert cli.main(["run", "tb_izigzag", "--seed", "3", "--out-dir", str(tmp_path),
                         "--trace", str(trace)]) == 0
        metrics = (tmp_path / "tb_izigzag_metrics.csv").read_text().splitlines()
        assert metrics[0].startswith("window_us,") and metrics[1].endswith(",3")
        assert len((tmp_path / "tb_izigzag_tasks.csv").read_text().splitlines()) == 129
        assert trace.stat().st_size > 0

    def test_sweep(self, tmp_path):
        out = tmp_path / "s.csv"
        assert cli.main(["sweep", "tb_izigzag", "--axis", "num_tb", "--values", "1,2",
                         "-o", str(out)]) == 0
        assert len(out.read_text().splitlines()) == 3

    def test_sweep_bad_axis(self, capsys):
        assert cli.main(["sweep", "tb_izigzag", "--axis", "fpga_node", "--values", "1"]) == 2
        assert "not sweepable" in capsys.readouterr().err

    def test_unknown_suite(self):
        with pytest.raises(SystemExit):
            cli.main(["suite", "nope"])

    def test_suite_exit_code(self, capsys):
        code = cli.main(["suite", "chaining"])
        out = capsys.readouterr().out
        assert code == (1 if "FAIL" in out else 0)
        assert out.count("PASS") + out.count("FAIL") == len(run_suite("chaining").checks)
