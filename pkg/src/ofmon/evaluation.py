"""Experiment harness: sampling-rate accuracy, FSD/WMRD fidelity, overhead.

Every experiment replays the same immutable trace once per trial with a
trial-specific seed, so results are reproducible to the byte.  Statistics
stay in the standard library; rates stay exact fractions.
"""

import statistics
from collections import Counter
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Iterable, Sequence

from .controller import ControllerConfig
from .model import FlowRecord, PacketRecord, Protocol, flow_key_of
from .sampling import (
    SamplingConfig,
    SamplingMethod,
    SamplingMode,
    config_for_rate,
    derive_seed,
    generate_rules,
)
from .simulate import Simulation

Fsd = Counter  # flow-size histogram: packets-per-flow -> number of flows


def compute_fsd(items: Iterable) -> Counter:
    """Histogram of flow sizes.

    Accepts trace packets (grouped by 5-tuple), flow records (merged per key,
    so idle-split flows count once) or bare integer sizes.
    """
    it = iter(items)
    first = next(it, None)
    if first is None:
        return Counter()
    if isinstance(first, PacketRecord):
        per_flow: Counter = Counter()
        per_flow[flow_key_of(first)] += 1
        for pkt in it:
            per_flow[flow_key_of(pkt)] += 1
        return Counter(per_flow.values())
    if isinstance(first, FlowRecord):
        per_flow = Counter()
        per_flow[first.key] += first.packet_count
        for rec in it:
            per_flow[rec.key] += rec.packet_count
        return Counter(per_flow.values())
    sizes = Counter()
    sizes[int(first)] += 1
    for value in it:
        sizes[int(value)] += 1
    return sizes


def wmrd(original: Counter, sampled: Counter) -> float:
    """Weighted mean relative difference between two normalized FSDs.

    sum|f_i - g_i| / sum (f_i + g_i)/2 over the union of sizes, with f and g
    the per-size fractions of flows.  Ranges over [0, 2]: 0 for identical
    shapes, 2 for disjoint supports.  An empty sampled FSD reports 2.
    """
    if not original:
        raise ValueError("original FSD is empty")
    if not sampled:
        return 2.0
    total_f = sum(original.values())
    total_g = sum(sampled.values())
    numerator = 0.0
    denominator = 0.0
    for size in sorted(set(original) | set(sampled)):
        f = original.get(size, 0) / total_f
        g = sampled.get(size, 0) / total_g
        numerator += abs(f - g)
        denominator += (f + g) / 2.0
    return numerator / denominator


def _percentiles(values: Sequence[float | int]) -> tuple[float, float, float]:
    """(p5, median, p95) with interpolation; degenerate for single values."""
    if len(values) == 1:
        v = float(values[0])
        return v, v, v
    grid = statistics.quantiles(values, n=20, method="inclusive")
    return grid[0], float(statistics.median(values)), grid[-1]


def _quartiles(values: Sequence[float]) -> tuple[float, float, float, float, float]:
    if len(values) == 1:
        v = float(values[0])
        return v, v, v, v, v
    q1, med, q3 = statistics.quantiles(values, n=4, method="inclusive")
    return min(values), q1, med, q3, max(values)


@dataclass(frozen=True)
class RateTrialSummary:
    """Sampled-flow counts across trials for one (method, mode, rate) cell."""

    method: SamplingMethod
    mode: SamplingMode
    target_rate: Fraction
    realized_rate: Fraction  # nearest rate the method can actually express
    trials: int
    counts: tuple[int, ...]
    theoretical_count: float
    median: float
    p5: float
    p95: float


def count_flows(trace: Iterable[PacketRecord]) -> int:
    return len({flow_key_of(p) for p in trace})


def run_rate_experiment(
    trace: Sequence[PacketRecord],
    method: SamplingMethod,
    mode: SamplingMode,
    target_rate: Fraction,
    trials: int,
    seed: int,
    controller_config: ControllerConfig | None = None,
) -> RateTrialSummary:
    """Replay `trials` independent rule draws and count sampled flows.

    The hash method is deterministic given its seed, so it runs one trial.
    If the target rate is not representable, the nearest one is used and
    reported as realized_rate.
    """
    method, mode = SamplingMethod(method), SamplingMode(mode)
    if trials < 1:
        raise ValueError("need at least one trial")
    if method is SamplingMethod.HASH_BASED:
        trials = 1
    base = config_for_rate(method, mode, target_rate, seed)
    realized = generate_rules(base).theoretical_rate
    cc = controller_config or ControllerConfig()
    counts = []
    for trial in range(trials):
        cfg = replace(base, seed=derive_seed(seed, trial))
        result = Simulation(cfg, cc, track_flows=False).run(trace)
        counts.append(result.flows_sampled)
    total_flows = count_flows(trace)
    p5, median, p95 = _percentiles(counts)
    return RateTrialSummary(
        method=method,
        mode=mode,
        target_rate=target_rate,
        realized_rate=realized,
        trials=trials,
        counts=tuple(counts),
        theoretical_count=float(total_flows * realized),
        median=median,
        p5=p5,
        p95=p95,
    )


@dataclass(frozen=True)
class WmrdSummary:
    """WMRD of sampled vs original FSD across trials, boxplot-style."""

    method: SamplingMethod
    mode: SamplingMode
    target_rate: Fraction
    realized_rate: Fraction
    trials: int
    values: tuple[float, ...]
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float


def run_wmrd_experiment(
    trace: Sequence[PacketRecord],
    method: SamplingMethod,
    mode: SamplingMode,
    target_rate: Fraction,
    trials: int,
    seed: int,
    controller_config: ControllerConfig | None = None,
) -> WmrdSummary:
    """Per-trial WMRD between the sampled-flow FSD and the full-trace FSD."""
    method, mode = SamplingMethod(method), SamplingMode(mode)
    if trials < 1:
        raise ValueError("need at least one trial")
    if method is SamplingMethod.HASH_BASED:
        trials = 1
    base = config_for_rate(method, mode, target_rate, seed)
    realized = generate_rules(base).theoretical_rate
    cc = controller_config or ControllerConfig()
    original = compute_fsd(trace)
    values = []
    for trial in range(trials):
        cfg = replace(base, seed=derive_seed(seed, trial))
        result = Simulation(cfg, cc, track_flows=False).run(trace)
        values.append(wmrd(original, compute_fsd(result.records)))
    vmin, q1, med, q3, vmax = _quartiles(values)
    return WmrdSummary(
        method=method,
        mode=mode,
        target_rate=target_rate,
        realized_rate=realized,
        trials=trials,
        values=tuple(values),
        minimum=vmin,
        q1=q1,
        median=med,
        q3=q3,
        maximum=vmax,
    )


@dataclass(frozen=True)
class OverheadPoint:
    """Redundant controller load for one install delay and protocol."""

    install_delay_ns: int
    protocol: Protocol
    flows: int
    redundant_packets: int
    mean_redundant_packets_per_flow: float
    redundant_bytes: int
    total_flow_bytes: int
    redundant_byte_percent: float


def run_overhead_experiment(
    trace: Sequence[PacketRecord],
    delays_ns: Sequence[int],
    sampling: SamplingConfig | None = None,
    idle_timeout_ns: int | None = None,
) -> list[OverheadPoint]:
    """Redundant packets/bytes as a function of the entry install delay.

    Default sampling is an all-flows rule (rate 1), matching how the install
    window hurts worst-case.  Redundant bytes are reported relative to the
    total trace bytes of the sampled flows, per protocol.
    """
    cfg = sampling or SamplingConfig(method=SamplingMethod.IP_SUFFIX)
    points = []
    for delay in delays_ns:
        cc_kwargs = {"install_delay_ns": delay}
        if idle_timeout_ns is not None:
            cc_kwargs["idle_timeout_ns"] = idle_timeout_ns
        result = Simulation(cfg, ControllerConfig(**cc_kwargs), track_flows=False).run(trace)
        flows_by_proto: Counter = Counter()
        bytes_by_proto: Counter = Counter()
        seen = set()
        for record in result.records:
            if record.key not in seen:
                seen.add(record.key)
                flows_by_proto[record.key.protocol] += 1
            bytes_by_proto[record.key.protocol] += record.byte_count
        for protocol in (Protocol.TCP, Protocol.UDP):
            flows = flows_by_proto[protocol]
            red_packets = result.redundant_packets_by_protocol[protocol]
            red_bytes = result.redundant_bytes_by_protocol[protocol]
            total_bytes = bytes_by_proto[protocol]
            points.append(
                OverheadPoint(
                    install_delay_ns=delay,
                    protocol=protocol,
                    flows=flows,
                    redundant_packets=red_packets,
                    mean_redundant_packets_per_flow=(red_packets / flows) if flows else 0.0,
                    redundant_bytes=red_bytes,
                    total_flow_bytes=total_bytes,
                    redundant_byte_percent=(100.0 * red_bytes / total_bytes) if total_bytes else 0.0,
                )
            )
    return points
