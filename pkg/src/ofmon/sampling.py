"""Flow-sampling rule generators and their exact sampling rates.

Three ways to pick which flows get mirrored to the controller:

* ip-suffix: one wildcarded entry matching the low bits of the address(es);
  a flow is sampled iff its address suffix equals the drawn value.
* port: entries matching drawn port values, installed for TCP and UDP alike;
  a flow is sampled iff its port (or port pair) was drawn.
* hash: a select group splits flows between a controller-mirror bucket and a
  pass bucket in proportion to the bucket weights, keyed on the 5-tuple.

Rates are carried as exact fractions, never floats.
"""

import enum
import hashlib
import logging
import math
import random
import struct
from dataclasses import dataclass
from fractions import Fraction

from .model import FlowKey, Protocol
from .switch import (
    Bucket,
    Drop,
    FlowEntry,
    GotoTable,
    Group,
    GroupEntry,
    MatchFields,
    OutputToController,
    SAMPLING_PRIORITY,
)

log = logging.getLogger(__name__)

PORT_SPACE = 65535  # sampled ports are drawn from 1..65535; 0 is reserved
HASH_GROUP_ID = 1
_SAMPLE_THEN_FORWARD = (OutputToController(), GotoTable())


class SamplingMethod(enum.Enum):
    IP_SUFFIX = "ip-suffix"
    PORT_BASED = "port"
    HASH_BASED = "hash"


class SamplingMode(enum.Enum):
    SOURCE_ONLY = "source"
    PAIR = "pair"


@dataclass(frozen=True)
class SamplingConfig:
    """Parameters for one rule-set draw.

    src_size/dst_size mean suffix bits for IP_SUFFIX and number of drawn
    ports for PORT_BASED; dst_size stays 0 in SOURCE_ONLY mode.  The bucket
    weights only apply to HASH_BASED.  The seed fixes every random choice:
    the drawn suffixes, the drawn port sets and the hash keying.
    """

    method: SamplingMethod
    mode: SamplingMode = SamplingMode.SOURCE_ONLY
    src_size: int = 0
    dst_size: int = 0
    sample_weight: int = 1
    drop_weight: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "method", SamplingMethod(self.method))
        object.__setattr__(self, "mode", SamplingMode(self.mode))

    def validate(self) -> None:
        if self.mode is SamplingMode.SOURCE_ONLY and self.dst_size != 0:
            raise ValueError("dst_size must be 0 in source-only mode")
        if self.method is SamplingMethod.IP_SUFFIX:
            if not (0 <= self.src_size <= 32 and 0 <= self.dst_size <= 32):
                raise ValueError("suffix bit counts must lie in [0, 32]")
        elif self.method is SamplingMethod.PORT_BASED:
            if not (0 <= self.src_size <= PORT_SPACE and 0 <= self.dst_size <= PORT_SPACE):
                raise ValueError(f"port counts must lie in [0, {PORT_SPACE}]")
        else:
            if self.sample_weight < 1 or self.drop_weight < 0:
                raise ValueError("hash weights need sample_weight >= 1 and drop_weight >= 0")


@dataclass(frozen=True)
class RuleSet:
    """Generated table-0 block-2 content plus its exact sampling rate.

    entries_per_protocol is the flow-table cost a hardware switch would pay
    per transport protocol: the drawn port count (or the two-stage sum
    src+dst in pair mode) for the port method, otherwise just the number of
    generated entries.  The pair-mode port predicate itself is folded into
    one composite entry per protocol rather than materializing the
    src x dst cross-product.
    """

    config: SamplingConfig
    flow_entries: tuple[FlowEntry, ...]
    groups: tuple[GroupEntry, ...]
    theoretical_rate: Fraction
    entries_per_protocol: int


def _mix64(key: FlowKey, seed: int) -> int:
    """Keyed 64-bit hash of the 5-tuple with avalanche behavior."""
    payload = struct.pack(
        ">IIHHBQ",
        key.src_ip,
        key.dst_ip,
        key.src_port,
        key.dst_port,
        int(key.protocol),
        seed & 0xFFFFFFFFFFFFFFFF,
    )
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "big")


def derive_seed(master: int, *parts: int | str) -> int:
    """Counter-based seed split: independent streams per (master, parts)."""
    h = hashlib.blake2b(digest_size=8)
    h.update(struct.pack(">Q", master & 0xFFFFFFFFFFFFFFFF))
    for part in parts:
        if isinstance(part, int):
            h.update(b"i" + struct.pack(">q", part))
        else:
            h.update(b"s" + part.encode())
    return int.from_bytes(h.digest(), "big")


def select_bucket(group: GroupEntry, key: FlowKey, seed: int) -> int:
    """Pick a select-group bucket for a flow, weight-proportionally.

    Deterministic in (key, seed) and blind to everything else, so every
    packet of a flow lands in the same bucket regardless of arrival order.
    """
    buckets = group.buckets
    if not buckets:
        raise ValueError(f"group {group.group_id} has no buckets")
    if len(buckets) == 1:
        return 0
    total = sum(b.weight for b in buckets)
    point = (_mix64(key, seed) * total) >> 64
    acc = 0
    for i, bucket in enumerate(buckets):
        acc += bucket.weight
        if point < acc:
            return i
    return len(buckets) - 1


def gen_ip_suffix_rules(config: SamplingConfig) -> RuleSet:
    """One wildcarded entry matching drawn low address bits.

    Sampling rate 1 / 2^(src_size + dst_size); zero total bits degenerates to
    rate 1 (match everything), which is allowed but warned about.
    """
    if config.method is not SamplingMethod.IP_SUFFIX:
        raise ValueError(f"wrong method {config.method} for suffix rules")
    config.validate()
    bits_src = config.src_size
    bits_dst = config.dst_size
    if bits_src + bits_dst == 0:
        log.warning("ip-suffix rule with 0 mask bits matches every flow (rate 1)")
    rng = random.Random(config.seed)
    fields: dict = {}
    if bits_src > 0:
        fields["src_ip"] = rng.randrange(1 << bits_src)
        fields["src_ip_mask"] = (1 << bits_src) - 1
    if bits_dst > 0:
        fields["dst_ip"] = rng.randrange(1 << bits_dst)
        fields["dst_ip_mask"] = (1 << bits_dst) - 1
    entry = FlowEntry(
        match=MatchFields(**fields),
        priority=SAMPLING_PRIORITY,
        actions=_SAMPLE_THEN_FORWARD,
    )
    return RuleSet(
        config=config,
        flow_entries=(entry,),
        groups=(),
        theoretical_rate=Fraction(1, 1 << (bits_src + bits_dst)),
        entries_per_protocol=1,
    )


def gen_port_rules(config: SamplingConfig) -> RuleSet:
    """Entries for src_size drawn source ports (and dst_size destination
    ports in pair mode), duplicated for TCP and UDP.

    Source-only rate: src_size / 65535.  Pair rate: src*dst / 65535^2, with
    the pair check modeled as the two-stage src-then-dst scheme whose
    hardware cost is src_size + dst_size entries per protocol, not the
    cross-product.
    """
    if config.method is not SamplingMethod.PORT_BASED:
        raise ValueError(f"wrong method {config.method} for port rules")
    config.validate()
    m = config.src_size
    n = config.dst_size
    if m == 0 or (config.mode is SamplingMode.PAIR and n == 0):
        raise ValueError("port sampling needs at least one port on every matched side")
    rng = random.Random(config.seed)
    src_ports = sorted(rng.sample(range(1, PORT_SPACE + 1), m))
    entries = []
    if config.mode is SamplingMode.SOURCE_ONLY:
        for proto in (Protocol.TCP, Protocol.UDP):  # same drawn set for both
            for port in src_ports:
                entries.append(
                    FlowEntry(
                        match=MatchFields(protocol=proto, src_port=port),
                        priority=SAMPLING_PRIORITY,
                        actions=_SAMPLE_THEN_FORWARD,
                    )
                )
        rate = Fraction(m, PORT_SPACE)
        per_protocol = m
    else:
        dst_ports = sorted(rng.sample(range(1, PORT_SPACE + 1), n))
        src_set = frozenset(src_ports)
        dst_set = frozenset(dst_ports)
        for proto in (Protocol.TCP, Protocol.UDP):
            entries.append(
                FlowEntry(
                    match=MatchFields(protocol=proto, src_port_in=src_set, dst_port_in=dst_set),
                    priority=SAMPLING_PRIORITY,
                    actions=_SAMPLE_THEN_FORWARD,
                )
            )
        rate = Fraction(m * n, PORT_SPACE * PORT_SPACE)
        per_protocol = m + n
    return RuleSet(
        config=config,
        flow_entries=tuple(entries),
        groups=(),
        theoretical_rate=rate,
        entries_per_protocol=per_protocol,
    )


def gen_hash_rules(config: SamplingConfig) -> RuleSet:
    """All traffic through a select group: one mirror bucket, one pass bucket.

    Rate sample_weight / (sample_weight + drop_weight).  The flow entry keeps
    the forwarding goto itself; the group only decides the controller copy.
    """
    if config.method is not SamplingMethod.HASH_BASED:
        raise ValueError(f"wrong method {config.method} for hash rules")
    config.validate()
    buckets = [Bucket(weight=config.sample_weight, actions=(OutputToController(),))]
    if config.drop_weight > 0:
        buckets.append(Bucket(weight=config.drop_weight, actions=(Drop(),)))
    group = GroupEntry(group_id=HASH_GROUP_ID, buckets=tuple(buckets))
    entry = FlowEntry(
        match=MatchFields(),
        priority=SAMPLING_PRIORITY,
        actions=(Group(HASH_GROUP_ID), GotoTable()),
    )
    return RuleSet(
        config=config,
        flow_entries=(entry,),
        groups=(group,),
        theoretical_rate=Fraction(config.sample_weight, config.sample_weight + config.drop_weight),
        entries_per_protocol=1,
    )


_GENERATORS = {
    SamplingMethod.IP_SUFFIX: gen_ip_suffix_rules,
    SamplingMethod.PORT_BASED: gen_port_rules,
    SamplingMethod.HASH_BASED: gen_hash_rules,
}


def generate_rules(config: SamplingConfig) -> RuleSet:
    """Dispatch to the generator for config.method."""
    return _GENERATORS[config.method](config)


def theoretical_rate(rule_set: RuleSet) -> Fraction:
    """Recover the exact sampling rate from the generated rules themselves.

    Deliberately ignores the stored rate and the config: the answer is read
    off the masks, port sets and bucket weights, so tests can cross-check it
    against the closed-form value.
    """
    if rule_set.groups:
        group = rule_set.groups[0]
        mirror = sum(
            b.weight
            for b in group.buckets
            if any(type(a) is OutputToController for a in b.actions)
        )
        total = sum(b.weight for b in group.buckets)
        return Fraction(mirror, total)
    entries = rule_set.flow_entries
    tcp_entries = [e for e in entries if e.match.protocol is Protocol.TCP]
    if tcp_entries:
        composite = tcp_entries[0].match
        if composite.src_port_in is not None:
            return Fraction(
                len(composite.src_port_in) * len(composite.dst_port_in or ()),
                PORT_SPACE * PORT_SPACE,
            )
        return Fraction(len({e.match.src_port for e in tcp_entries}), PORT_SPACE)
    match = entries[0].match
    bits = 0
    if match.src_ip is not None:
        bits += match.src_ip_mask.bit_count()
    if match.dst_ip is not None:
        bits += match.dst_ip_mask.bit_count()
    return Fraction(1, 1 << bits)


def config_for_rate(
    method: SamplingMethod,
    mode: SamplingMode,
    target_rate: Fraction,
    seed: int = 0,
) -> SamplingConfig:
    """Nearest representable parameters for a requested sampling rate.

    Methods quantize differently (power-of-two for suffixes, 1/65535 steps
    for ports, weight ratios for hash), so the realized rate can differ from
    the target; read it back off the generated RuleSet.
    """
    method = SamplingMethod(method)
    mode = SamplingMode(mode)
    if not 0 < target_rate <= 1:
        raise ValueError(f"sampling rate must lie in (0, 1], got {target_rate}")
    if method is SamplingMethod.IP_SUFFIX:
        bits = round(math.log2(1 / target_rate))
        if mode is SamplingMode.PAIR:
            bits = min(bits, 64)
            src, dst = (bits + 1) // 2, bits // 2
        else:
            src, dst = min(bits, 32), 0
        return SamplingConfig(method=method, mode=mode, src_size=src, dst_size=dst, seed=seed)
    if method is SamplingMethod.PORT_BASED:
        if mode is SamplingMode.PAIR:
            count = round(math.sqrt(float(target_rate)) * PORT_SPACE)
            count = min(max(count, 1), PORT_SPACE)
            return SamplingConfig(method=method, mode=mode, src_size=count, dst_size=count, seed=seed)
        count = min(max(round(float(target_rate) * PORT_SPACE), 1), PORT_SPACE)
        return SamplingConfig(method=method, mode=mode, src_size=count, seed=seed)
    drop = max(round(1 / target_rate) - 1, 0)
    return SamplingConfig(
        method=method, mode=mode, sample_weight=1, drop_weight=drop, seed=seed
    )
