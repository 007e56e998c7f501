"""Controller behavior: install scheduling, redundancy accounting, records, export."""

import io
import json

import pytest

from ofmon.controller import (
    EXPORT_FIELDS,
    ControllerConfig,
    ControllerStateError,
    MonitoringController,
    export_records,
    record_to_dict,
)
from ofmon.model import ExpiryReason, Protocol, flow_key_of, format_ip
from ofmon.sampling import SamplingConfig, SamplingMethod
from ofmon.simulate import replay
from ofmon.switch import (
    FLOW_RECORD_PRIORITY,
    FlowEntry,
    FlowRemoved,
    FlowRemovedReason,
    MatchFields,
    PacketIn,
)

from helpers import pkt, random_trace

RATE_ONE = SamplingConfig(SamplingMethod.IP_SUFFIX, src_size=0)
MS = 1_000_000


def cc(delay=0, idle=15_000 * MS, hard=0):
    return ControllerConfig(install_delay_ns=delay, idle_timeout_ns=idle,
                            hard_timeout_ns=hard)


class TestConfigValidation:
    def test_defaults_are_valid(self):
        ControllerConfig()

    @pytest.mark.parametrize(
        "kw",
        [
            dict(install_delay_ns=-1),
            dict(idle_timeout_ns=0),
            dict(idle_timeout_ns=-5),
            dict(hard_timeout_ns=-1),
            dict(idle_timeout_ns=10 * MS, hard_timeout_ns=5 * MS),
        ],
    )
    def test_bad_values_are_rejected(self, kw):
        with pytest.raises(ValueError):
            ControllerConfig(**kw)

    def test_hard_timeout_zero_means_disabled(self):
        ControllerConfig(idle_timeout_ns=10 * MS, hard_timeout_ns=0)


class TestPacketInHandling:
    def test_first_packet_schedules_an_install(self):
        ctl = MonitoringController(cc(delay=3 * MS, idle=10 * MS, hard=40 * MS))
        p = pkt(ts=7 * MS)
        mod = ctl.on_packet_in(PacketIn(packet=p, table_id=0))
        assert mod.execute_at_ns == 10 * MS
        assert mod.key == flow_key_of(p)
        e = mod.entry
        assert e.match == MatchFields.exact(flow_key_of(p))
        assert e.priority == FLOW_RECORD_PRIORITY
        assert e.idle_timeout_ns == 10 * MS
        assert e.hard_timeout_ns == 40 * MS
        assert e.send_flow_removed is True

    def test_repeat_packets_before_install_are_redundant(self):
        ctl = MonitoringController(cc(delay=10 * MS))
        first = pkt(ts=0, length=100)
        assert ctl.on_packet_in(PacketIn(packet=first, table_id=0)) is not None
        for ts in (1, 2, 3):
            assert ctl.on_packet_in(PacketIn(packet=pkt(ts=ts * MS, length=50),
                                             table_id=0)) is None
        assert ctl.redundant_packets_by_protocol[Protocol.TCP] == 3
        assert ctl.redundant_bytes_by_protocol[Protocol.TCP] == 150

    def test_packet_in_from_other_tables_is_ignored(self):
        ctl = MonitoringController(cc())
        assert ctl.on_packet_in(PacketIn(packet=pkt(), table_id=1)) is None
        # key is still unknown, so table-0 treats it as brand new
        assert ctl.on_packet_in(PacketIn(packet=pkt(), table_id=0)) is not None

    def test_packet_in_for_installed_flow_is_a_state_error(self):
        ctl = MonitoringController(cc())
        p = pkt()
        mod = ctl.on_packet_in(PacketIn(packet=p, table_id=0))
        ctl.on_flow_mod_installed(mod.key, entry_id=5)
        with pytest.raises(ControllerStateError):
            ctl.on_packet_in(PacketIn(packet=pkt(ts=1), table_id=0))

    def test_flow_removed_for_unknown_key_is_a_state_error(self):
        ctl = MonitoringController(cc())
        stray = FlowEntry(match=MatchFields.exact(flow_key_of(pkt())),
                          priority=FLOW_RECORD_PRIORITY, actions=())
        with pytest.raises(ControllerStateError):
            ctl.on_flow_removed(FlowRemoved(entry=stray, reason=FlowRemovedReason.IDLE,
                                            removal_time_ns=9))


class TestRecordAccounting:
    def test_ten_packet_flow_with_install_window(self):
        # 10 packets, 1 ms apart; install 2.5 ms after the first
        trace = [pkt(ts=i * MS, length=100) for i in range(10)]
        result = replay(trace, RATE_ONE, cc(delay=2_500_000))
        (rec,) = result.records
        assert rec.packet_count == 10
        assert rec.byte_count == 1000
        assert rec.controller_packet_count == 3  # first + two in the window
        assert rec.first_seen_ns == 0
        assert rec.last_seen_ns == 9 * MS
        assert result.redundant_packets_by_protocol[Protocol.TCP] == 2

    def test_packet_at_exact_install_instant_is_not_redundant(self):
        trace = [pkt(ts=0), pkt(ts=1 * MS)]
        result = replay(trace, RATE_ONE, cc(delay=1 * MS))
        (rec,) = result.records
        assert rec.packet_count == 2
        assert rec.controller_packet_count == 1
        assert result.redundant_packets_by_protocol[Protocol.TCP] == 0

    def test_single_packet_flow_expires_idle(self):
        p = pkt(proto=Protocol.UDP, length=77)
        closer = pkt(ts=40 * MS, sport=9)  # outlives the idle window
        result = replay([p, closer], RATE_ONE, cc(delay=0, idle=10 * MS))
        rec = next(r for r in result.records if r.key == flow_key_of(p))
        assert rec.packet_count == 1
        assert rec.byte_count == 77
        assert rec.controller_packet_count == 1
        assert rec.first_seen_ns == rec.last_seen_ns == 0
        assert rec.expiry_reason is ExpiryReason.IDLE_TIMEOUT

    def test_hard_timeout_splits_a_long_flow(self):
        s = 1_000 * MS
        trace = [pkt(ts=i * 10 * s) for i in range(8)]  # 0..70 s, one packet per 10 s
        result = replay(trace, RATE_ONE, cc(delay=0, idle=15 * s, hard=30 * s))
        recs = sorted(result.records, key=lambda r: r.first_seen_ns)
        assert len(recs) == 2
        assert recs[0].expiry_reason is ExpiryReason.HARD_TIMEOUT
        assert recs[0].first_seen_ns == 0
        assert recs[0].last_seen_ns == 30 * s
        assert recs[0].packet_count == 4
        assert recs[1].first_seen_ns == 40 * s
        assert recs[1].packet_count == 4
        assert recs[0].last_seen_ns < recs[1].first_seen_ns

    def test_never_installed_flow_still_gets_a_record(self):
        # trace ends before the install delay elapses
        trace = [pkt(ts=0, length=10), pkt(ts=1 * MS, length=20)]
        result = replay(trace, RATE_ONE, cc(delay=500 * MS))
        (rec,) = result.records
        assert rec.expiry_reason is ExpiryReason.END_OF_TRACE
        assert rec.packet_count == 2
        assert rec.byte_count == 30
        assert rec.controller_packet_count == 2
        assert rec.last_seen_ns == 1 * MS

    def test_zero_delay_means_zero_redundancy(self):
        trace = random_trace(150, seed=4, packets_per_flow=3)
        result = replay(trace, RATE_ONE, cc(delay=0))
        assert not result.redundant_packets_by_protocol
        assert all(r.controller_packet_count == 1 for r in result.records)

    def test_per_flow_totals_match_the_trace(self):
        trace = random_trace(120, seed=8, packets_per_flow=5, gap_ns=2 * MS)
        result = replay(trace, RATE_ONE, cc(delay=3 * MS))
        by_key = {}
        for r in result.records:
            by_key[r.key] = by_key.get(r.key, 0) + r.packet_count
        expect = {}
        for p in trace:
            expect[flow_key_of(p)] = expect.get(flow_key_of(p), 0) + 1
        assert by_key == expect


class TestFinalizePending:
    def test_records_synthesized_from_controller_state(self):
        ctl = MonitoringController(cc(delay=100 * MS))
        first = pkt(ts=0, length=60)
        ctl.on_packet_in(PacketIn(packet=first, table_id=0))
        ctl.on_packet_in(PacketIn(packet=pkt(ts=5 * MS, length=40), table_id=0))
        records = ctl.finalize_pending(end_ns=5 * MS)
        (rec,) = records
        assert rec.expiry_reason is ExpiryReason.END_OF_TRACE
        assert rec.packet_count == 2
        assert rec.byte_count == 100
        assert rec.controller_packet_count == 2
        assert rec.last_seen_ns == 5 * MS

    def test_finalize_twice_is_empty(self):
        ctl = MonitoringController(cc(delay=100 * MS))
        ctl.on_packet_in(PacketIn(packet=pkt(), table_id=0))
        assert len(ctl.finalize_pending(end_ns=0)) == 1
        assert ctl.finalize_pending(end_ns=0) == []


class TestExport:
    def records(self):
        trace = random_trace(25, seed=14, packets_per_flow=2)
        return replay(trace, RATE_ONE, cc()).records

    def test_jsonl_round_trip(self):
        records = self.records()
        sink = io.StringIO()
        n = export_records(records, sink, fmt="jsonl")
        lines = sink.getvalue().splitlines()
        assert n == len(records) == len(lines)
        rows = [json.loads(line) for line in lines]
        assert all(set(row) == set(EXPORT_FIELDS) for row in rows)
        keys = [(row["first_seen_ns"], row["src_ip"]) for row in rows]
        assert keys == sorted(keys)

    def test_csv_matches_jsonl_content(self):
        records = self.records()
        jsink, csink = io.StringIO(), io.StringIO()
        export_records(records, jsink, fmt="jsonl")
        export_records(records, csink, fmt="csv")
        csv_lines = csink.getvalue().splitlines()
        assert csv_lines[0] == ",".join(EXPORT_FIELDS)
        assert len(csv_lines) == len(records) + 1
        first_json = json.loads(jsink.getvalue().splitlines()[0])
        first_csv = csv_lines[1].split(",")
        assert first_csv[EXPORT_FIELDS.index("src_ip")] == first_json["src_ip"]
        assert first_csv[EXPORT_FIELDS.index("packets")] == str(first_json["packets"])

    def test_dict_form_uses_dotted_quads_and_wire_reasons(self):
        rec = self.records()[0]
        row = record_to_dict(rec)
        assert row["src_ip"] == format_ip(rec.key.src_ip)
        assert row["protocol"] == rec.key.protocol.name
        assert row["expiry"] in {"idle", "hard", "eot"}

    def test_unknown_format_is_rejected(self):
        with pytest.raises(ValueError):
            export_records([], io.StringIO(), fmt="parquet")
