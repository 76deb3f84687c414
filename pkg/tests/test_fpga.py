import pytest

from noc_accel import codec
from noc_accel.channel import ChainGroup, HwaSpec, ProtocolViolation, TbState
from noc_accel.codec import HeadFields, PacketKind, encode_routing
from noc_accel.endpoints import expected_output
from noc_accel.fpga import FifoDrain, Fpga, FpgaParams
from noc_accel.kernel import ClockDomain, Simulator
from noc_accel.microbench import expected_contracts, measure_contracts

NOC = 1000
FPGA_NODE = encode_routing(2, 2)


class Harness:
    """Drives an FPGA directly through its receive fifo, answering grants with payloads."""

    def __init__(self, specs, groups=(), **params):
        self.sim = Simulator()
        self.noc = ClockDomain(NOC, name="noc")
        self.specs = {s.hwa_id: s for s in specs}
        self.fpga = Fpga(self.sim, self.noc, specs, groups, FpgaParams(**params),
                         reply_routing=lambda s: encode_routing(0, s & 1))
        self.drain = FifoDrain(self.sim, self.fpga.tx, self.noc)
        self.t = 0
        self.seen = 0
        self.requests = {}
        self.grants = []
        self.results = {}
        self.notifies = []

    def push(self, flit):
        while True:
            self.t += NOC
            self.sim.run_until(self.t)
            if self.fpga.rx.push(flit, self.t):
                return

    def request(self, tag, source, hwa, data, depth=0, index=0, priority=0):
        hdr = HeadFields(routing_info=FPGA_NODE, source_id=source, hwa_id=hwa,
                         chaining_depth=depth, chaining_index=index, packet_priority=priority,
                         data_size=len(data))
        self.requests[tag] = (hdr, data)
        self.push(codec.command_packet(hdr, tag=tag).flits[0])

    def _collect(self):
        new = []
        for t, f in self.drain.got[self.seen:]:
            self.seen += 1
            if not f.is_head:
                continue
            hdr = codec.decode_head(f)
            if hdr.packet_type == codec.PKT_COMMAND and hdr.task_head_tail == codec.CMD_GRANT:
                self.grants.append((t, f.tag, hdr.hwa_id, hdr.task_buffer_id))
                new.append((f.tag, hdr.task_buffer_id))
            elif hdr.packet_type == codec.PKT_COMMAND and hdr.task_head_tail == codec.CMD_NOTIFY:
                self.notifies.append((t, f.tag, hdr.hwa_id))
            else:
                self.results.setdefault(f.tag, t)
        return new

    def settle(self, limit=200):
        """Answer every grant until the FPGA has nothing left to do."""
        for _ in range(limit):
            self.sim.run()
            self.t = max(self.t, self.sim.now)
            new = self._collect()
            if not new:
                return
            for tag, tb in new:
                hdr, data = self.requests[tag]
                pkt = codec.segment(data, hdr._replace(task_buffer_id=tb,
                                                        task_head_tail=codec.HEAD_TAIL), tag=tag)
                for f in pkt.flits:
                    self.push(f)
        raise AssertionError("harness did not settle")

    def result_bytes(self, tag):
        flits = [f for _, f in self.drain.got if f.tag == tag]
        flits = [f for f in flits if not (f.is_head and codec.decode_head(f).packet_type
                                          == codec.PKT_COMMAND)]
        return codec.reassemble(codec.Packet(flits, PacketKind.RESULT))


def spec(hwa_id, exec_cycles=5, n_in=3, n_out=3):
    return HwaSpec(hwa_id, exec_base=exec_cycles, input_flits=n_in, output_flits=n_out)


def data_for(s, seed=0):
    return bytes((seed * 7 + i) & 0xFF for i in range(s.input_bytes))


class TestContracts:
    @pytest.mark.parametrize("n", [1, 3, 18, 64])
    def test_idle_block_latencies(self, n):
        assert measure_contracts(n) == expected_contracts(n)

    @pytest.mark.parametrize("exec_cycles", [1, 7, 250])
    def test_exec_cycles(self, exec_cycles):
        assert measure_contracts(3, exec_cycles)["exec"] == exec_cycles


class TestGrantControl:
    def test_idle_request_uses_bypass(self):
        h = Harness([spec(1)])
        h.request(1, 1, 1, data_for(h.specs[1]))
        h.settle()
        ch = h.fpga.channel(1)
        assert ch.bypass_grants == 1 and ch.grants == 1

    def test_task_buffer_capacity_bounds_outstanding_grants(self):
        h = Harness([spec(1, exec_cycles=400)], num_tb=2)
        for tag in range(3):
            h.request(tag, tag, 1, data_for(h.specs[1], tag))
        h.sim.run()
        h._collect()
        assert [g[3] for g in h.grants] == [0, 1]
        assert len(h.fpga.channel(1).rb) == 1

    @pytest.mark.parametrize("num_tb", [1, 2, 4])
    def test_first_come_first_served(self, num_tb):
        h = Harness([spec(1, exec_cycles=50)], num_tb=num_tb)
        tags = [10, 11, 12, 13, 14, 15]
        for k, tag in enumerate(tags):
            h.request(tag, k % 8, 1, data_for(h.specs[1], k))
        h.settle()
        assert [g[1] for g in h.grants] == tags
        assert [n[1] for n in h.notifies] == tags
        busy = {tb for _, _, _, tb in h.grants}
        assert busy <= set(range(num_tb))

    def test_all_buffers_released_at_end(self):
        h = Harness([spec(1), spec(2)], num_tb=2)
        for tag in range(6):
            h.request(tag, tag, 1 + tag % 2, data_for(h.specs[1], tag))
        h.settle()
        for ch in h.fpga.channels:
            assert all(tb.state is TbState.FREE for tb in ch.tbs)
            assert ch.requests == ch.grants == ch.notifies

    def test_results_are_correct(self):
        h = Harness([spec(4, n_in=5, n_out=2)])
        d = data_for(h.specs[4], 3)
        h.request(7, 2, 4, d)
        h.settle()
        assert h.result_bytes(7) == expected_output((4,), h.specs, d)

    def test_notify_follows_result(self):
        h = Harness([spec(1)])
        h.request(5, 1, 1, data_for(h.specs[1]))
        h.settle()
        (tn, tag, _), = h.notifies
        assert tag == 5 and h.results[5] < tn


class TestReleasePolicy:
    def test_early_release_grants_sooner(self):
        times = {}
        for policy in ("task_end", "hwac_end"):
            h = Harness([spec(1, exec_cycles=300)], num_tb=1, tb_release=policy)
            for tag in range(2):
                h.request(tag, tag, 1, data_for(h.specs[1], tag))
            h.settle()
            times[policy] = h.grants[1][0]
        assert times["hwac_end"] < times["task_end"]

    def test_unknown_policy_rejected(self):
        with pytest.raises(ValueError):
            Harness([spec(1)], tb_release="never")


class TestChaining:
    @pytest.mark.parametrize("depth", [1, 2, 3])
    def test_chained_result_and_single_notify(self, depth):
        specs = [spec(i, exec_cycles=3 + i, n_in=4, n_out=4) for i in (3, 5, 6, 9)]
        h = Harness(specs, [ChainGroup((3, 5, 6, 9))])
        d = data_for(specs[0])
        h.request(1, 1, 3, d, depth=depth, index=codec.pack_chain_index(list(range(1, depth + 1))))
        h.settle()
        hops = (3, 5, 6, 9)[:depth + 1]
        assert h.result_bytes(1) == expected_output(hops, h.specs, d)
        assert [n[2] for n in h.notifies] == [hops[-1]]
        assert sum(ch.invocations for ch in h.fpga.channels) == depth + 1

    @pytest.mark.parametrize("n", [1, 3, 18, 64])
    def test_chain_hop_latency(self, n):
        m = measure_contracts(n)
        assert m["chain_buffer"] == 4 + n
        assert m["cc"] == 1


class TestProtocolErrors:
    def test_unknown_hwa_is_dropped(self):
        h = Harness([spec(1)])
        h.request(1, 1, 9, b"")
        h.settle()
        assert h.fpga.interface.unknown_hwa == 1 and h.grants == []

    def test_payload_without_grant(self):
        h = Harness([spec(1)])
        hdr = HeadFields(routing_info=FPGA_NODE, source_id=1, hwa_id=1,
                         task_head_tail=codec.HEAD_TAIL, data_size=16)
        with pytest.raises(ProtocolViolation):
            for f in codec.segment(bytes(16), hdr).flits:
                h.push(f)
            h.sim.run()

    def test_double_grant_guard(self):
        h = Harness([spec(1)])
        ch = h.fpga.channel(1)
        ch.tbs[0].state = TbState.GRANTED
        req = codec.command_packet(HeadFields(routing_info=FPGA_NODE, hwa_id=1), tag=1).flits[0]
        with pytest.raises(ProtocolViolation):
            h.fpga.interface._grant(ch, ch.tbs[0], req, 0)

    def test_duplicate_hwa_ids(self):
        with pytest.raises(ValueError):
            Harness([spec(1), spec(1)])
