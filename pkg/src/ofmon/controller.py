"""Reactive monitoring controller.

First packet of a sampled flow arrives as a PacketIn; the controller asks for
an exact-match record entry that becomes active only after the configured
install delay.  Every further PacketIn inside that window is redundant load
and gets counted as such.  When the switch later evicts the entry, the
controller merges its own view (packets it saw directly) with the entry
counters into one flow record.
"""

import csv
import io
import json
from collections import Counter
from dataclasses import dataclass

from .model import (
    ExpiryReason,
    FlowKey,
    FlowRecord,
    Protocol,
    flow_key_of,
    format_ip,
)
from .switch import (
    FLOW_RECORD_PRIORITY,
    FlowEntry,
    FlowRemoved,
    FlowRemovedReason,
    GotoTable,
    MatchFields,
    MONITORING_TABLE,
    PacketIn,
)

DEFAULT_IDLE_TIMEOUT_NS = 15_000_000_000
EXPORT_FIELDS = (
    "src_ip",
    "dst_ip",
    "src_port",
    "dst_port",
    "protocol",
    "first_seen_ns",
    "last_seen_ns",
    "packets",
    "bytes",
    "controller_packets",
    "expiry",
)

_REASON_MAP = {
    FlowRemovedReason.IDLE: ExpiryReason.IDLE_TIMEOUT,
    FlowRemovedReason.HARD: ExpiryReason.HARD_TIMEOUT,
    FlowRemovedReason.DELETE: ExpiryReason.END_OF_TRACE,
}


class ControllerStateError(Exception):
    """The switch and controller views of the flow table diverged."""


@dataclass(frozen=True)
class ControllerConfig:
    """Record-entry parameters.  Timeout 0 disables that timeout."""

    install_delay_ns: int = 0
    idle_timeout_ns: int = DEFAULT_IDLE_TIMEOUT_NS
    hard_timeout_ns: int = 0

    def __post_init__(self) -> None:
        if self.install_delay_ns < 0:
            raise ValueError("install delay cannot be negative")
        if self.idle_timeout_ns <= 0:
            raise ValueError("idle timeout must be positive")
        if self.hard_timeout_ns < 0:
            raise ValueError("hard timeout cannot be negative")
        if self.hard_timeout_ns and self.hard_timeout_ns < self.idle_timeout_ns:
            raise ValueError("hard timeout cannot undercut the idle timeout")


@dataclass(slots=True)
class PendingInstall:
    """A flow whose record entry is still in flight."""

    key: FlowKey
    first_packet_ns: int
    first_packet_bytes: int
    last_packet_ns: int
    redundant_packets: int = 0
    redundant_bytes: int = 0


@dataclass(frozen=True, slots=True)
class ScheduledFlowMod:
    """Entry install request taking effect at execute_at_ns."""

    execute_at_ns: int
    key: FlowKey
    entry: FlowEntry


@dataclass(slots=True)
class _ActiveFlow:
    entry_id: int
    first_seen_ns: int
    controller_packets: int
    controller_bytes: int
    last_controller_packet_ns: int


def _key_of_exact(match: MatchFields) -> FlowKey:
    if (
        match.src_ip is None
        or match.dst_ip is None
        or match.src_port is None
        or match.dst_port is None
        or match.protocol is None
    ):
        raise ControllerStateError(f"record entry match is not an exact 5-tuple: {match}")
    return FlowKey(match.src_ip, match.dst_ip, match.src_port, match.dst_port, match.protocol)


class MonitoringController:
    """Builds per-flow records out of PacketIn and FlowRemoved streams."""

    def __init__(self, config: ControllerConfig):
        self.config = config
        self.records: list[FlowRecord] = []
        self._pending: dict[FlowKey, PendingInstall] = {}
        self._active: dict[FlowKey, _ActiveFlow] = {}
        # aggregate redundant load per transport protocol, for overhead curves
        self.redundant_packets_by_protocol: Counter[Protocol] = Counter()
        self.redundant_bytes_by_protocol: Counter[Protocol] = Counter()

    def on_packet_in(self, event: PacketIn) -> ScheduledFlowMod | None:
        """Handle a controller copy of a packet.

        First sighting of a flow returns the install request for its record
        entry (to be applied install_delay later); repeats within the install
        window only bump the redundancy counters.  A PacketIn for a flow
        whose entry is already active means events were fed out of order.
        """
        if event.table_id != MONITORING_TABLE:
            return None
        pkt = event.packet
        key = flow_key_of(pkt)
        if key in self._active:
            raise ControllerStateError(
                f"packet-in for flow {key} which already has an active record entry"
            )
        pending = self._pending.get(key)
        if pending is not None:
            pending.redundant_packets += 1
            pending.redundant_bytes += pkt.length_bytes
            pending.last_packet_ns = pkt.timestamp_ns
            self.redundant_packets_by_protocol[key.protocol] += 1
            self.redundant_bytes_by_protocol[key.protocol] += pkt.length_bytes
            return None
        self._pending[key] = PendingInstall(
            key=key,
            first_packet_ns=pkt.timestamp_ns,
            first_packet_bytes=pkt.length_bytes,
            last_packet_ns=pkt.timestamp_ns,
        )
        entry = FlowEntry(
            match=MatchFields.exact(key),
            priority=FLOW_RECORD_PRIORITY,
            actions=(GotoTable(),),
            idle_timeout_ns=self.config.idle_timeout_ns,
            hard_timeout_ns=self.config.hard_timeout_ns,
            send_flow_removed=True,
        )
        return ScheduledFlowMod(
            execute_at_ns=pkt.timestamp_ns + self.config.install_delay_ns,
            key=key,
            entry=entry,
        )

    def on_flow_mod_installed(self, key: FlowKey, entry_id: int) -> None:
        """Acknowledge that the scheduled entry for `key` is now in the table."""
        pending = self._pending.pop(key, None)
        if pending is None:
            raise ControllerStateError(f"install acknowledged for unknown flow {key}")
        self._active[key] = _ActiveFlow(
            entry_id=entry_id,
            first_seen_ns=pending.first_packet_ns,
            controller_packets=1 + pending.redundant_packets,
            controller_bytes=pending.first_packet_bytes + pending.redundant_bytes,
            last_controller_packet_ns=pending.last_packet_ns,
        )

    def on_flow_removed(self, event: FlowRemoved) -> FlowRecord:
        """Close the record for an evicted entry, merging both counter views."""
        key = _key_of_exact(event.entry.match)
        state = self._active.pop(key, None)
        if state is None:
            raise ControllerStateError(f"flow-removed for flow {key} this controller does not own")
        entry = event.entry
        if entry.packet_count > 0:
            last_seen = entry.last_match_time_ns
        else:
            last_seen = state.last_controller_packet_ns
        record = FlowRecord(
            key=key,
            first_seen_ns=state.first_seen_ns,
            last_seen_ns=last_seen,
            packet_count=entry.packet_count + state.controller_packets,
            byte_count=entry.byte_count + state.controller_bytes,
            controller_packet_count=state.controller_packets,
            expiry_reason=_REASON_MAP[event.reason],
        )
        self.records.append(record)
        return record

    def finalize_pending(self, end_ns: int) -> list[FlowRecord]:
        """Close flows whose entry never made it in before the trace ended.

        Every packet of such a flow went to the controller, so the record is
        complete from the controller-side counters alone.
        """
        out = []
        for key in sorted(self._pending):
            pending = self._pending[key]
            record = FlowRecord(
                key=key,
                first_seen_ns=pending.first_packet_ns,
                last_seen_ns=pending.last_packet_ns,
                packet_count=1 + pending.redundant_packets,
                byte_count=pending.first_packet_bytes + pending.redundant_bytes,
                controller_packet_count=1 + pending.redundant_packets,
                expiry_reason=ExpiryReason.END_OF_TRACE,
            )
            self.records.append(record)
            out.append(record)
        self._pending.clear()
        return out

    @property
    def pending_count(self) -> int:
        return len(self._pending)

    @property
    def active_count(self) -> int:
        return len(self._active)

    def export_records(self, sink: io.TextIOBase, fmt: str = "jsonl") -> int:
        return export_records(self.records, sink, fmt)


def record_to_dict(record: FlowRecord) -> dict:
    return {
        "src_ip": format_ip(record.key.src_ip),
        "dst_ip": format_ip(record.key.dst_ip),
        "src_port": record.key.src_port,
        "dst_port": record.key.dst_port,
        "protocol": record.key.protocol.name,
        "first_seen_ns": record.first_seen_ns,
        "last_seen_ns": record.last_seen_ns,
        "packets": record.packet_count,
        "bytes": record.byte_count,
        "controller_packets": record.controller_packet_count,
        "expiry": record.expiry_reason.value,
    }


def export_records(records: list[FlowRecord], sink, fmt: str = "jsonl") -> int:
    """Write records ordered by (first_seen, key); returns how many."""
    if fmt not in ("jsonl", "csv"):
        raise ValueError(f"unknown export format {fmt!r}")
    ordered = sorted(records, key=lambda r: (r.first_seen_ns, r.key))
    if fmt == "jsonl":
        for record in ordered:
            sink.write(json.dumps(record_to_dict(record), separators=(",", ":")))
            sink.write("\n")
    else:
        writer = csv.DictWriter(sink, fieldnames=EXPORT_FIELDS, lineterminator="\n")
        writer.writeheader()
        for record in ordered:
            writer.writerow(record_to_dict(record))
    return len(ordered)
