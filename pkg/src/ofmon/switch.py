"""Simulated OpenFlow switch pipeline.

Table 0 holds the monitoring logic in three priority blocks: per-flow record
entries on top, sampling entries in the middle, a catch-all at the bottom.
Table 1 stands in for the forwarding pipeline and exists so tests can assert
that monitoring is transparent: every packet is handed over exactly once.

Time is virtual.  The clock only moves through process_packet/advance_clock,
and expired entries are evicted lazily but with their exact expiry instant,
so results do not depend on how often the clock happens to advance.
"""

import enum
import heapq
from collections import Counter
from dataclasses import dataclass, replace
from typing import Callable

from .model import FlowKey, PacketRecord, Protocol

FLOW_RECORD_PRIORITY = 3000  # block 1: per-flow record entries
SAMPLING_PRIORITY = 2000     # block 2: sampling decision entries
DEFAULT_PRIORITY = 0         # block 3: catch-all pass-through

MONITORING_TABLE = 0
FORWARD_TABLE = 1

_FULL_MASK = 0xFFFFFFFF


class SwitchError(Exception):
    """Misuse of the switch API or corrupted table state."""


class TableStateError(SwitchError):
    """Table 0 failed to handle a packet the expected way."""


class GroupError(SwitchError):
    """Bad group install or a dangling group reference."""


@dataclass(frozen=True, slots=True)
class MatchFields:
    """Table-0 match: absent fields are wildcards.

    IP fields compare under their mask: (packet & mask) == (value & mask).
    Ports and protocol are exact.  The *_port_in sets express membership in a
    port list as one composite predicate; a hardware table would expand them
    to one entry per port, which RuleSet accounts for separately.
    """

    src_ip: int | None = None
    src_ip_mask: int = _FULL_MASK
    dst_ip: int | None = None
    dst_ip_mask: int = _FULL_MASK
    src_port: int | None = None
    dst_port: int | None = None
    src_port_in: frozenset[int] | None = None
    dst_port_in: frozenset[int] | None = None
    protocol: Protocol | None = None

    @classmethod
    def exact(cls, key: FlowKey) -> "MatchFields":
        return cls(
            src_ip=key.src_ip,
            dst_ip=key.dst_ip,
            src_port=key.src_port,
            dst_port=key.dst_port,
            protocol=key.protocol,
        )

    def matches(self, pkt: PacketRecord) -> bool:
        if self.src_ip is not None and (pkt.src_ip & self.src_ip_mask) != (
            self.src_ip & self.src_ip_mask
        ):
            return False
        if self.dst_ip is not None and (pkt.dst_ip & self.dst_ip_mask) != (
            self.dst_ip & self.dst_ip_mask
        ):
            return False
        if self.src_port is not None and pkt.src_port != self.src_port:
            return False
        if self.dst_port is not None and pkt.dst_port != self.dst_port:
            return False
        if self.src_port_in is not None and pkt.src_port not in self.src_port_in:
            return False
        if self.dst_port_in is not None and pkt.dst_port not in self.dst_port_in:
            return False
        if self.protocol is not None and pkt.protocol != self.protocol:
            return False
        return True


@dataclass(frozen=True, slots=True)
class GotoTable:
    table_id: int = FORWARD_TABLE


@dataclass(frozen=True, slots=True)
class OutputToController:
    pass


@dataclass(frozen=True, slots=True)
class Group:
    group_id: int


@dataclass(frozen=True, slots=True)
class Drop:
    pass


Action = GotoTable | OutputToController | Group | Drop


@dataclass(slots=True)
class FlowEntry:
    """One table-0 entry.  A timeout of 0 means that timeout is disabled."""

    match: MatchFields
    priority: int
    actions: tuple[Action, ...]
    idle_timeout_ns: int = 0
    hard_timeout_ns: int = 0
    send_flow_removed: bool = False
    install_time_ns: int = 0
    last_match_time_ns: int = 0
    packet_count: int = 0
    byte_count: int = 0
    entry_id: int = -1


class GroupType(enum.Enum):
    SELECT = "select"


@dataclass(frozen=True, slots=True)
class Bucket:
    weight: int
    actions: tuple[Action, ...]


@dataclass(frozen=True, slots=True)
class GroupEntry:
    group_id: int
    buckets: tuple[Bucket, ...]
    group_type: GroupType = GroupType.SELECT


@dataclass(frozen=True, slots=True)
class PacketIn:
    packet: PacketRecord
    table_id: int


class FlowRemovedReason(enum.Enum):
    IDLE = "idle"
    HARD = "hard"
    DELETE = "delete"  # explicit removal, e.g. the end-of-trace drain


@dataclass(frozen=True, slots=True)
class FlowRemoved:
    """Entry eviction notice; entry is the retired object with final counters."""

    entry: FlowEntry
    reason: FlowRemovedReason
    removal_time_ns: int


SwitchEvent = PacketIn | FlowRemoved

# (group, key) -> bucket index; the select algorithm is pluggable because it
# sits outside the wire protocol.  See sampling.select_bucket.
BucketSelector = Callable[[GroupEntry, FlowKey], int]


def _expiry_of(entry: FlowEntry) -> tuple[int, FlowRemovedReason] | None:
    """Exact instant the entry stops matching, and why.  None if untimed."""
    idle = entry.last_match_time_ns + entry.idle_timeout_ns if entry.idle_timeout_ns > 0 else None
    hard = entry.install_time_ns + entry.hard_timeout_ns if entry.hard_timeout_ns > 0 else None
    if idle is None and hard is None:
        return None
    if hard is not None and (idle is None or hard <= idle):  # tie goes to Hard
        return hard, FlowRemovedReason.HARD
    return idle, FlowRemovedReason.IDLE


class Switch:
    """Two-table pipeline with select groups and timeout-driven eviction."""

    def __init__(self, bucket_selector: BucketSelector | None = None):
        self._selector = bucket_selector
        self._entries: dict[int, FlowEntry] = {}
        self._by_match: dict[tuple[MatchFields, int], int] = {}
        # match indexes; semantics stay identical to a linear scan, these only
        # narrow which entries need to be inspected per packet
        self._exact: dict[FlowKey, list[int]] = {}
        self._by_sport: dict[tuple[Protocol, int], list[int]] = {}
        self._by_dport: dict[tuple[Protocol, int], list[int]] = {}
        self._generic: list[int] = []
        self._inexact_priorities: Counter[int] = Counter()
        self._inexact_max = -1
        self._groups: dict[int, GroupEntry] = {}
        self._expiry_heap: list[tuple[int, int]] = []
        self._clock_ns = 0
        self._next_entry_id = 1
        self._priority_counts: Counter[int] = Counter()
        self.packets_processed = 0
        self.table1_packet_count = 0
        self.table1_byte_count = 0

    # -- queries ------------------------------------------------------------

    @property
    def clock_ns(self) -> int:
        return self._clock_ns

    def active_entry_count(self, priority: int | None = None) -> int:
        if priority is None:
            return len(self._entries)
        return self._priority_counts[priority]

    def get_entry(self, entry_id: int) -> FlowEntry | None:
        return self._entries.get(entry_id)

    def flow_stats(self) -> list[FlowEntry]:
        """Read-only counter snapshot of every active entry (poll analogue)."""
        return [replace(self._entries[eid]) for eid in sorted(self._entries)]

    # -- table management ---------------------------------------------------

    def install_flow_entry(self, entry: FlowEntry, install_time_ns: int) -> int:
        """Install a copy of `entry` active from install_time_ns on.

        Reinstalling an existing (match, priority) pair replaces the old entry
        and resets its counters; the replaced entry leaves silently.
        """
        old = self._by_match.get((entry.match, entry.priority))
        if old is not None:
            self._remove_entry(old)
        live = replace(
            entry,
            install_time_ns=install_time_ns,
            last_match_time_ns=install_time_ns,
            packet_count=0,
            byte_count=0,
            entry_id=self._next_entry_id,
        )
        self._next_entry_id += 1
        eid = live.entry_id
        self._entries[eid] = live
        self._by_match[(live.match, live.priority)] = eid
        self._priority_counts[live.priority] += 1
        self._index_entry(live)
        if _expiry_of(live) is not None:
            heapq.heappush(self._expiry_heap, (_expiry_of(live)[0], eid))
        return eid

    def remove_flow_entry(self, entry_id: int) -> FlowEntry:
        """Explicitly delete an entry (no FlowRemoved event)."""
        entry = self._entries.get(entry_id)
        if entry is None:
            raise SwitchError(f"no entry with id {entry_id}")
        self._remove_entry(entry_id)
        return entry

    def install_group(self, group: GroupEntry) -> int:
        if group.group_id in self._groups:
            raise GroupError(f"group {group.group_id} already installed")
        if not group.buckets:
            raise GroupError(f"group {group.group_id} has no buckets")
        if any(b.weight <= 0 for b in group.buckets):
            raise GroupError(f"group {group.group_id} has a non-positive bucket weight")
        self._groups[group.group_id] = group
        return group.group_id

    def remove_group(self, group_id: int) -> None:
        if group_id not in self._groups:
            raise GroupError(f"no group with id {group_id}")
        del self._groups[group_id]

    # -- time ---------------------------------------------------------------

    def advance_clock(self, now_ns: int) -> list[FlowRemoved]:
        """Move virtual time forward, evicting entries that expired before now.

        Eviction uses the exact expiry instant (last match + idle, or install
        + hard, whichever comes first; ties report Hard), not `now_ns`.
        Entries without send_flow_removed leave silently.
        """
        if now_ns < self._clock_ns:
            raise SwitchError(
                f"clock moved backwards: {now_ns} < {self._clock_ns}"
            )
        events = self._evict_expired(now_ns)
        self._clock_ns = now_ns
        return events

    def flush_all(self, now_ns: int, priority: int = FLOW_RECORD_PRIORITY) -> list[FlowRemoved]:
        """Drain every entry of one priority block, default block 1.

        Emits FlowRemoved(DELETE) for entries that asked for notification.
        Sampling and catch-all entries are untouched.
        """
        victims = sorted(
            eid for eid, e in self._entries.items() if e.priority == priority
        )
        events = []
        for eid in victims:
            entry = self._entries[eid]
            self._remove_entry(eid)
            if entry.send_flow_removed:
                events.append(
                    FlowRemoved(entry=entry, reason=FlowRemovedReason.DELETE, removal_time_ns=now_ns)
                )
        return events

    # -- packet path ----------------------------------------------------------

    def process_packet(self, pkt: PacketRecord) -> list[SwitchEvent]:
        """Run one packet through table 0.

        Returns eviction events due before the packet, then any PacketIn it
        produced.  The packet must match some entry (the deployment always
        installs a catch-all) and must be forwarded to table 1 exactly once;
        anything else means the table state is corrupt and raises.
        """
        ts = pkt.timestamp_ns
        if ts < self._clock_ns:
            raise SwitchError(f"packet timestamp {ts} behind switch clock {self._clock_ns}")
        events: list[SwitchEvent] = self._evict_expired(ts)
        self._clock_ns = ts
        key = FlowKey(pkt.src_ip, pkt.dst_ip, pkt.src_port, pkt.dst_port, pkt.protocol)

        entry: FlowEntry | None = None
        ids = self._exact.get(key)
        if ids:
            cand = self._entries[ids[0]]
            # exact lists are kept best-first; a strict priority win needs no
            # tie-break against the inexact entries
            if cand.priority > self._inexact_max and cand.install_time_ns <= ts:
                entry = cand
        if entry is None:
            entry = self._lookup(pkt, key, ts)
        if entry is None:
            raise TableStateError(
                f"packet at {ts}ns matched nothing in table 0: catch-all entry missing"
            )

        entry.packet_count += 1
        entry.byte_count += pkt.length_bytes
        entry.last_match_time_ns = ts
        self.packets_processed += 1

        forwarded = 0
        for act in entry.actions:
            cls = type(act)
            if cls is GotoTable:
                self.table1_packet_count += 1
                self.table1_byte_count += pkt.length_bytes
                forwarded += 1
                break  # goto ends table-0 processing
            if cls is OutputToController:
                events.append(PacketIn(packet=pkt, table_id=MONITORING_TABLE))
            elif cls is Group:
                forwarded += self._run_group(act.group_id, pkt, key, events)
            # Drop: nothing to do
        if forwarded != 1:
            raise TableStateError(
                f"packet at {ts}ns reached the forwarding table {forwarded} times, expected exactly 1"
            )
        return events

    # -- internals ------------------------------------------------------------

    def _run_group(self, group_id: int, pkt: PacketRecord, key: FlowKey, events: list) -> int:
        group = self._groups.get(group_id)
        if group is None:
            raise GroupError(f"entry references unknown group {group_id}")
        if len(group.buckets) == 1:
            bucket = group.buckets[0]
        else:
            if self._selector is None:
                raise GroupError("multi-bucket group used without a bucket selector")
            bucket = group.buckets[self._selector(group, key)]
        forwarded = 0
        for act in bucket.actions:
            cls = type(act)
            if cls is OutputToController:
                events.append(PacketIn(packet=pkt, table_id=MONITORING_TABLE))
            elif cls is GotoTable:
                self.table1_packet_count += 1
                self.table1_byte_count += pkt.length_bytes
                forwarded += 1
        return forwarded

    def _lookup(self, pkt: PacketRecord, key: FlowKey, ts: int) -> FlowEntry | None:
        best: FlowEntry | None = None
        best_rank: tuple[int, int, int] | None = None

        def consider(e: FlowEntry) -> None:
            nonlocal best, best_rank
            rank = (e.priority, -e.install_time_ns, -e.entry_id)
            if best_rank is None or rank > best_rank:
                best, best_rank = e, rank

        ids = self._exact.get(key)
        if ids:
            for eid in ids:  # match holds by key equality
                e = self._entries[eid]
                if e.install_time_ns <= ts:
                    consider(e)
        for index, field in ((self._by_sport, pkt.src_port), (self._by_dport, pkt.dst_port)):
            lst = index.get((pkt.protocol, field))
            if lst:
                for eid in lst:  # match holds by index construction
                    e = self._entries[eid]
                    if e.install_time_ns <= ts:
                        consider(e)
        for eid in self._generic:
            e = self._entries[eid]
            if e.install_time_ns <= ts and e.match.matches(pkt):
                consider(e)
        return best

    def _classify(self, m: MatchFields) -> tuple[str, object]:
        if (
            m.src_ip is not None
            and m.dst_ip is not None
            and m.src_ip_mask == _FULL_MASK
            and m.dst_ip_mask == _FULL_MASK
            and m.src_port is not None
            and m.dst_port is not None
            and m.protocol is not None
            and m.src_port_in is None
            and m.dst_port_in is None
        ):
            return "exact", FlowKey(m.src_ip, m.dst_ip, m.src_port, m.dst_port, m.protocol)
        only_sport = (
            m.protocol is not None
            and m.src_port is not None
            and m.src_ip is None
            and m.dst_ip is None
            and m.dst_port is None
            and m.src_port_in is None
            and m.dst_port_in is None
        )
        if only_sport:
            return "sport", (m.protocol, m.src_port)
        only_dport = (
            m.protocol is not None
            and m.dst_port is not None
            and m.src_ip is None
            and m.dst_ip is None
            and m.src_port is None
            and m.src_port_in is None
            and m.dst_port_in is None
        )
        if only_dport:
            return "dport", (m.protocol, m.dst_port)
        return "generic", None

    def _index_entry(self, e: FlowEntry) -> None:
        kind, where = self._classify(e.match)
        if kind == "exact":
            lst = self._exact.setdefault(where, [])
            lst.append(e.entry_id)
            lst.sort(key=lambda i: (
                -self._entries[i].priority,
                self._entries[i].install_time_ns,
                i,
            ))
            return
        if kind == "sport":
            self._by_sport.setdefault(where, []).append(e.entry_id)
        elif kind == "dport":
            self._by_dport.setdefault(where, []).append(e.entry_id)
        else:
            self._generic.append(e.entry_id)
        self._inexact_priorities[e.priority] += 1
        if e.priority > self._inexact_max:
            self._inexact_max = e.priority

    def _remove_entry(self, eid: int) -> None:
        e = self._entries.pop(eid)
        del self._by_match[(e.match, e.priority)]
        self._priority_counts[e.priority] -= 1
        kind, where = self._classify(e.match)
        if kind == "exact":
            lst = self._exact[where]
            lst.remove(eid)
            if not lst:
                del self._exact[where]
            return
        if kind == "sport":
            lst = self._by_sport[where]
            lst.remove(eid)
            if not lst:
                del self._by_sport[where]
        elif kind == "dport":
            lst = self._by_dport[where]
            lst.remove(eid)
            if not lst:
                del self._by_dport[where]
        else:
            self._generic.remove(eid)
        self._inexact_priorities[e.priority] -= 1
        if self._inexact_priorities[e.priority] == 0:
            del self._inexact_priorities[e.priority]
            if e.priority == self._inexact_max:
                self._inexact_max = max(self._inexact_priorities, default=-1)

    def _evict_expired(self, now_ns: int) -> list[FlowRemoved]:
        heap = self._expiry_heap
        if not heap or heap[0][0] >= now_ns:  # expiry instant itself still matches
            return []
        dead: list[tuple[int, int, FlowEntry, FlowRemovedReason]] = []
        while heap and heap[0][0] < now_ns:
            _, eid = heapq.heappop(heap)
            entry = self._entries.get(eid)
            if entry is None:
                continue  # removed or replaced since scheduling
            expiry = _expiry_of(entry)
            if expiry is None:
                continue
            instant, reason = expiry
            if instant < now_ns:
                self._remove_entry(eid)
                dead.append((instant, eid, entry, reason))
            else:
                heapq.heappush(heap, (instant, eid))  # matched since; rescheduled
        dead.sort(key=lambda item: (item[0], item[1]))
        return [
            FlowRemoved(entry=entry, reason=reason, removal_time_ns=instant)
            for instant, _, entry, reason in dead
            if entry.send_flow_removed
        ]
