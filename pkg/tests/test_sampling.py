"""Rule generation: closed-form rates, drawn values, bucket selection."""

import logging
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ofmon.model import FlowKey, Protocol
from ofmon.sampling import (
    PORT_SPACE,
    SamplingConfig,
    SamplingMethod,
    SamplingMode,
    config_for_rate,
    derive_seed,
    gen_ip_suffix_rules,
    gen_port_rules,
    generate_rules,
    select_bucket,
    theoretical_rate,
)
from ofmon.switch import SAMPLING_PRIORITY, Bucket, Drop, GroupEntry, OutputToController

# chi-square critical value, 1 degree of freedom, alpha = 0.001
CHI2_CRIT_DF1 = 10.828


def random_keys(n, seed):
    rng = random.Random(seed)
    return [
        FlowKey(rng.getrandbits(32), rng.getrandbits(32),
                rng.randint(1, 65535), rng.randint(1, 65535),
                Protocol.TCP if rng.random() < 0.5 else Protocol.UDP)
        for _ in range(n)
    ]


def closed_form(cfg):
    if cfg.method is SamplingMethod.IP_SUFFIX:
        return Fraction(1, 2 ** (cfg.src_size + cfg.dst_size))
    if cfg.method is SamplingMethod.PORT_BASED:
        if cfg.mode is SamplingMode.PAIR:
            return Fraction(cfg.src_size * cfg.dst_size, PORT_SPACE**2)
        return Fraction(cfg.src_size, PORT_SPACE)
    return Fraction(cfg.sample_weight, cfg.sample_weight + cfg.drop_weight)


class TestClosedFormRates:
    @pytest.mark.parametrize(
        "cfg,rate",
        [
            (SamplingConfig(SamplingMethod.IP_SUFFIX, src_size=6), Fraction(1, 64)),
            (SamplingConfig(SamplingMethod.IP_SUFFIX, SamplingMode.PAIR,
                            src_size=5, dst_size=5), Fraction(1, 1024)),
            (SamplingConfig(SamplingMethod.PORT_BASED, src_size=328),
             Fraction(328, 65535)),
            (SamplingConfig(SamplingMethod.PORT_BASED, SamplingMode.PAIR,
                            src_size=4634, dst_size=4634),
             Fraction(4634 * 4634, 65535 * 65535)),
            (SamplingConfig(SamplingMethod.HASH_BASED, sample_weight=1,
                            drop_weight=63), Fraction(1, 64)),
        ],
    )
    def test_known_rates(self, cfg, rate):
        assert generate_rules(cfg).theoretical_rate == rate

    def test_port_entry_budget_for_one_in_two_hundred(self):
        source = gen_port_rules(config_for_rate(
            SamplingMethod.PORT_BASED, SamplingMode.SOURCE_ONLY, Fraction(1, 200)))
        assert source.entries_per_protocol == 328
        assert len(source.flow_entries) == 2 * 328  # one per port per protocol
        pair = gen_port_rules(config_for_rate(
            SamplingMethod.PORT_BASED, SamplingMode.PAIR, Fraction(1, 200)))
        assert pair.entries_per_protocol == 9268
        assert len(pair.flow_entries) == 2  # folded into one predicate per protocol

    @settings(max_examples=200, deadline=None)
    @given(data=st.data())
    def test_structural_rate_equals_closed_form(self, data):
        method = data.draw(st.sampled_from(list(SamplingMethod)))
        mode = data.draw(st.sampled_from(list(SamplingMode)))
        seed = data.draw(st.integers(0, 2**32 - 1))
        if method is SamplingMethod.IP_SUFFIX:
            src = data.draw(st.integers(0, 16))
            dst = data.draw(st.integers(0, 16)) if mode is SamplingMode.PAIR else 0
            cfg = SamplingConfig(method, mode, src, dst, seed=seed)
        elif method is SamplingMethod.PORT_BASED:
            src = data.draw(st.integers(1, 3000))
            dst = data.draw(st.integers(1, 3000)) if mode is SamplingMode.PAIR else 0
            cfg = SamplingConfig(method, mode, src, dst, seed=seed)
        else:
            cfg = SamplingConfig(method, mode,
                                 sample_weight=data.draw(st.integers(1, 100)),
                                 drop_weight=data.draw(st.integers(0, 10_000)),
                                 seed=seed)
        rules = generate_rules(cfg)
        assert rules.theoretical_rate == closed_form(cfg)
        assert theoretical_rate(rules) == closed_form(cfg)


class TestIpSuffixRules:
    def test_masks_have_the_requested_bit_width(self):
        cfg = SamplingConfig(SamplingMethod.IP_SUFFIX, SamplingMode.PAIR,
                             src_size=6, dst_size=4, seed=3)
        (e,) = gen_ip_suffix_rules(cfg).flow_entries
        assert e.match.src_ip_mask == (1 << 6) - 1
        assert e.match.dst_ip_mask == (1 << 4) - 1
        assert 0 <= e.match.src_ip <= e.match.src_ip_mask
        assert 0 <= e.match.dst_ip <= e.match.dst_ip_mask
        assert e.priority == SAMPLING_PRIORITY

    def test_matched_fraction_is_the_rate(self):
        cfg = SamplingConfig(SamplingMethod.IP_SUFFIX, src_size=4, seed=5)
        (e,) = gen_ip_suffix_rules(cfg).flow_entries
        hits = sum(1 for ip in range(4096) if (ip & 0xF) == e.match.src_ip)
        assert hits == 4096 // 16

    def test_draw_is_seeded(self):
        a = gen_ip_suffix_rules(SamplingConfig(SamplingMethod.IP_SUFFIX, src_size=8, seed=1))
        b = gen_ip_suffix_rules(SamplingConfig(SamplingMethod.IP_SUFFIX, src_size=8, seed=1))
        c = gen_ip_suffix_rules(SamplingConfig(SamplingMethod.IP_SUFFIX, src_size=8, seed=2))
        assert a.flow_entries == b.flow_entries
        values = {
            gen_ip_suffix_rules(SamplingConfig(SamplingMethod.IP_SUFFIX,
                                               src_size=8, seed=s)).flow_entries[0].match.src_ip
            for s in range(20)
        }
        assert len(values) > 1
        assert c.theoretical_rate == a.theoretical_rate

    def test_zero_bits_means_rate_one_and_warns(self, caplog):
        cfg = SamplingConfig(SamplingMethod.IP_SUFFIX, src_size=0)
        with caplog.at_level(logging.WARNING):
            rules = gen_ip_suffix_rules(cfg)
        assert rules.theoretical_rate == 1
        assert "every flow" in caplog.text

    def test_rejects_out_of_range_bits(self):
        with pytest.raises(ValueError):
            generate_rules(SamplingConfig(SamplingMethod.IP_SUFFIX, src_size=33))


class TestPortRules:
    def test_source_mode_shares_ports_across_protocols(self):
        cfg = SamplingConfig(SamplingMethod.PORT_BASED, src_size=50, seed=9)
        rules = gen_port_rules(cfg)
        tcp = {e.match.src_port for e in rules.flow_entries
               if e.match.protocol is Protocol.TCP}
        udp = {e.match.src_port for e in rules.flow_entries
               if e.match.protocol is Protocol.UDP}
        assert tcp == udp
        assert len(tcp) == 50
        assert all(1 <= p <= 65535 for p in tcp)

    def test_pair_mode_builds_one_predicate_per_protocol(self):
        cfg = SamplingConfig(SamplingMethod.PORT_BASED, SamplingMode.PAIR,
                             src_size=30, dst_size=20, seed=9)
        rules = gen_port_rules(cfg)
        assert len(rules.flow_entries) == 2
        for e in rules.flow_entries:
            assert len(e.match.src_port_in) == 30
            assert len(e.match.dst_port_in) == 20
        assert rules.entries_per_protocol == 50

    def test_zero_ports_is_rejected(self):
        with pytest.raises(ValueError):
            gen_port_rules(SamplingConfig(SamplingMethod.PORT_BASED, src_size=0))
        with pytest.raises(ValueError):
            gen_port_rules(SamplingConfig(SamplingMethod.PORT_BASED, SamplingMode.PAIR,
                                          src_size=10, dst_size=0))


class TestBucketSelection:
    def group(self, *weights):
        return GroupEntry(group_id=1, buckets=tuple(
            Bucket(weight=w, actions=(OutputToController(),) if i == 0 else (Drop(),))
            for i, w in enumerate(weights)))

    def test_deterministic_in_key_and_seed(self):
        g = self.group(1, 63)
        keys = random_keys(300, 1)
        first = [select_bucket(g, k, seed=7) for k in keys]
        assert first == [select_bucket(g, k, seed=7) for k in keys]

    def test_seed_changes_the_assignment(self):
        g = self.group(1, 1)
        keys = random_keys(1000, 2)
        a = [select_bucket(g, k, seed=1) for k in keys]
        b = [select_bucket(g, k, seed=2) for k in keys]
        assert a != b

    @pytest.mark.parametrize("weights", [(1, 1), (1, 63), (3, 5)])
    def test_split_is_proportional(self, weights):
        g = self.group(*weights)
        n = 100_000
        counts = [0] * len(weights)
        for k in random_keys(n, 11):
            counts[select_bucket(g, k, seed=4)] += 1
        total_w = sum(weights)
        chi2 = sum(
            (counts[i] - n * w / total_w) ** 2 / (n * w / total_w)
            for i, w in enumerate(weights)
        )
        assert chi2 < CHI2_CRIT_DF1, (weights, counts)

    def test_index_always_valid(self):
        g = self.group(5, 2, 3)
        assert {select_bucket(g, k, seed=0) for k in random_keys(2000, 3)} == {0, 1, 2}


class TestRateSolver:
    @pytest.mark.parametrize(
        "method,mode,rate,expect",
        [
            (SamplingMethod.IP_SUFFIX, SamplingMode.SOURCE_ONLY, Fraction(1, 64),
             dict(src_size=6, dst_size=0)),
            (SamplingMethod.IP_SUFFIX, SamplingMode.SOURCE_ONLY, Fraction(1, 200),
             dict(src_size=8, dst_size=0)),  # nearest power of two is 1/256
            (SamplingMethod.IP_SUFFIX, SamplingMode.PAIR, Fraction(1, 1024),
             dict(src_size=5, dst_size=5)),
            (SamplingMethod.PORT_BASED, SamplingMode.SOURCE_ONLY, Fraction(1, 200),
             dict(src_size=328, dst_size=0)),
            (SamplingMethod.PORT_BASED, SamplingMode.PAIR, Fraction(1, 200),
             dict(src_size=4634, dst_size=4634)),
            (SamplingMethod.HASH_BASED, SamplingMode.SOURCE_ONLY, Fraction(1, 200),
             dict(sample_weight=1, drop_weight=199)),
            (SamplingMethod.HASH_BASED, SamplingMode.SOURCE_ONLY, Fraction(1, 64),
             dict(sample_weight=1, drop_weight=63)),
        ],
    )
    def test_known_parameter_choices(self, method, mode, rate, expect):
        cfg = config_for_rate(method, mode, rate, seed=0)
        for field, value in expect.items():
            assert getattr(cfg, field) == value

    def test_hash_expresses_any_unit_fraction_exactly(self):
        for denom in (2, 7, 64, 200, 1024):
            cfg = config_for_rate(SamplingMethod.HASH_BASED, SamplingMode.SOURCE_ONLY,
                                  Fraction(1, denom))
            assert generate_rules(cfg).theoretical_rate == Fraction(1, denom)

    @pytest.mark.parametrize("bad", [Fraction(0), Fraction(-1, 2), Fraction(3, 2)])
    def test_rejects_rates_outside_unit_interval(self, bad):
        with pytest.raises(ValueError):
            config_for_rate(SamplingMethod.HASH_BASED, SamplingMode.SOURCE_ONLY, bad)

    def test_accepts_plain_strings(self):
        cfg = config_for_rate("port", "source", Fraction(1, 200))
        assert cfg.method is SamplingMethod.PORT_BASED
        assert cfg.src_size == 328


class TestSeedDerivation:
    def test_deterministic_and_sensitive_to_every_part(self):
        assert derive_seed(1, "a", 2) == derive_seed(1, "a", 2)
        seen = {derive_seed(1, "a", 2), derive_seed(1, "a", 3),
                derive_seed(1, "b", 2), derive_seed(2, "a", 2)}
        assert len(seen) == 4

    def test_streams_do_not_collide_over_many_trials(self):
        seeds = {derive_seed(99, trial) for trial in range(10_000)}
        assert len(seeds) == 10_000
