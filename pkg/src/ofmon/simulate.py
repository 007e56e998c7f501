"""Trace replay: one switch, one controller, one virtual clock.

Scheduled entry installs are interleaved with trace packets in timestamp
order; an install due at the same instant as a packet applies first, so the
packet already matches the new entry.  Identical (trace, config, seed) input
replays to identical output, always.
"""

import heapq
from collections import Counter
from dataclasses import dataclass, replace as dc_replace
from typing import Iterable

from .controller import ControllerConfig, MonitoringController, ScheduledFlowMod
from .model import FlowKey, FlowRecord, PacketRecord, flow_key_of
from .sampling import RuleSet, SamplingConfig, derive_seed, generate_rules, select_bucket
from .switch import (
    DEFAULT_PRIORITY,
    FLOW_RECORD_PRIORITY,
    FlowEntry,
    GotoTable,
    MatchFields,
    PacketIn,
    Switch,
)


@dataclass
class SimulationResult:
    """Replay outcome: the flow records plus bookkeeping for summaries."""

    records: list[FlowRecord]
    packets_processed: int
    flows_seen: int | None  # None when flow tracking was turned off
    flows_sampled: int
    entries_installed: int
    peak_record_entries: int
    redundant_packets_by_protocol: Counter
    redundant_bytes_by_protocol: Counter


class Simulation:
    """Wires generated sampling rules and a controller onto a fresh switch."""

    def __init__(
        self,
        sampling: SamplingConfig | RuleSet,
        controller_config: ControllerConfig | None = None,
        *,
        rotation_interval_ns: int = 0,
        track_flows: bool = True,
    ):
        self.rule_set = sampling if isinstance(sampling, RuleSet) else generate_rules(sampling)
        seed = self.rule_set.config.seed
        self.switch = Switch(bucket_selector=lambda group, key: select_bucket(group, key, seed))
        self.controller = MonitoringController(controller_config or ControllerConfig())
        if rotation_interval_ns < 0:
            raise ValueError("rotation interval cannot be negative")
        self._rotation_interval = rotation_interval_ns
        self._track_flows = track_flows
        # block 3: the catch-all that keeps unmonitored traffic flowing
        self.switch.install_flow_entry(
            FlowEntry(match=MatchFields(), priority=DEFAULT_PRIORITY, actions=(GotoTable(),)),
            install_time_ns=0,
        )
        self._sampling_ids: list[int] = []
        self._install_sampling_rules(self.rule_set, at_ns=0)

    def _install_sampling_rules(self, rule_set: RuleSet, at_ns: int) -> None:
        for group in rule_set.groups:
            self.switch.install_group(group)
        self._sampling_ids = [
            self.switch.install_flow_entry(entry, at_ns) for entry in rule_set.flow_entries
        ]

    def _rotate(self, at_ns: int, rotation_index: int) -> None:
        """Replace the sampling block with a fresh draw (same parameters)."""
        for eid in self._sampling_ids:
            self.switch.remove_flow_entry(eid)
        for group in self.rule_set.groups:
            self.switch.remove_group(group.group_id)
        cfg = self.rule_set.config
        fresh = generate_rules(
            dc_replace(cfg, seed=derive_seed(cfg.seed, "rotation", rotation_index))
        )
        self._install_sampling_rules(fresh, at_ns)
        self.rule_set = fresh

    def run(self, trace: Iterable[PacketRecord]) -> SimulationResult:
        switch = self.switch
        controller = self.controller
        pending_mods: list[tuple[int, int, ScheduledFlowMod]] = []
        mod_seq = 0
        installs = 0
        peak = 0
        seen: set[FlowKey] | None = set() if self._track_flows else None
        rotation = self._rotation_interval
        next_rotation = rotation if rotation else None
        rotation_index = 0
        last_ts = 0

        for pkt in trace:
            ts = pkt.timestamp_ns
            while True:
                due_mod = pending_mods[0][0] if pending_mods else None
                if (
                    next_rotation is not None
                    and next_rotation <= ts
                    and (due_mod is None or next_rotation <= due_mod)
                ):
                    self._rotate(next_rotation, rotation_index)
                    rotation_index += 1
                    next_rotation += rotation
                    continue
                if due_mod is not None and due_mod <= ts:
                    _, _, mod = heapq.heappop(pending_mods)
                    eid = switch.install_flow_entry(mod.entry, mod.execute_at_ns)
                    controller.on_flow_mod_installed(mod.key, eid)
                    installs += 1
                    occupancy = switch.active_entry_count(FLOW_RECORD_PRIORITY)
                    if occupancy > peak:
                        peak = occupancy
                    continue
                break
            if seen is not None:
                seen.add(flow_key_of(pkt))
            for event in switch.process_packet(pkt):
                if type(event) is PacketIn:
                    mod = controller.on_packet_in(event)
                    if mod is not None:
                        heapq.heappush(pending_mods, (mod.execute_at_ns, mod_seq, mod))
                        mod_seq += 1
                else:
                    controller.on_flow_removed(event)
            last_ts = ts

        for event in switch.flush_all(last_ts):
            controller.on_flow_removed(event)
        controller.finalize_pending(last_ts)

        records = controller.records
        return SimulationResult(
            records=records,
            packets_processed=switch.packets_processed,
            flows_seen=len(seen) if seen is not None else None,
            flows_sampled=len({r.key for r in records}),
            entries_installed=installs,
            peak_record_entries=peak,
            redundant_packets_by_protocol=controller.redundant_packets_by_protocol,
            redundant_bytes_by_protocol=controller.redundant_bytes_by_protocol,
        )


def replay(
    trace: Iterable[PacketRecord],
    sampling: SamplingConfig | RuleSet,
    controller_config: ControllerConfig | None = None,
    **kwargs,
) -> SimulationResult:
    """One-shot convenience wrapper around Simulation."""
    return Simulation(sampling, controller_config, **kwargs).run(trace)
