from __future__ import annotations

import pytest
from conftest import small_config
from hypothesis import given
from hypothesis import strategies as st

from racescan import oracle
from racescan.trace import Op, Trace, check_well_formed, standard_locksets
from racescan.trace_io import (
    GenConfig,
    TraceSyntaxError,
    dump_trace,
    fixture_expectations,
    fixture_names,
    gen_random_trace,
    load_fixture,
    load_trace,
    parse_trace,
    serialize_trace,
)


class TestParse:
    def test_basic(self):
        t = parse_trace("T1|acq(x)|\nT1|w(a)|L12\nT1|rel(x)|")
        assert len(t) == 3
        assert t.ids == (1, 2, 3)
        assert t[1].op is Op.WRITE and t[1].target == "a" and t[1].loc == "L12"
        assert t[0].loc is None

    def test_location_field_optional(self):
        assert parse_trace("T1|w(a)")[0].loc is None

    def test_four_field_form(self):
        t = parse_trace("t1|w|a|main.c:3")
        assert (t[0].op, t[0].target, t[0].loc) == (Op.WRITE, "a", "main.c:3")

    def test_comments_and_blank_lines(self):
        t = parse_trace("# header\n\nt1|w(a)|  # trailing\n\n   \nt1|r(a)|\n")
        assert [e.op for e in t] == [Op.WRITE, Op.READ]
        assert t.ids == (1, 2)

    def test_unknown_op(self):
        with pytest.raises(TraceSyntaxError) as exc:
            parse_trace("T1|frob(x)")
        assert exc.value.line == 1

    def test_line_number_counts_comments(self):
        with pytest.raises(TraceSyntaxError) as exc:
            parse_trace("# c\nt1|w(a)|\nt1|w(a|")
        assert exc.value.line == 3

    @pytest.mark.parametrize("bad", ["t1", "t1|w()", "t1|w(a)|l|extra", "|w(a)", "t1|w(a b)"])
    def test_malformed(self, bad):
        with pytest.raises(TraceSyntaxError):
            parse_trace(bad)

    def test_explicit_ids(self):
        t = parse_trace("10: t1|w(a)|\n20: t1|r(a)|")
        assert t.ids == (10, 20)

    def test_duplicate_explicit_ids(self):
        with pytest.raises(TraceSyntaxError, match="duplicate"):
            parse_trace("1: t1|w(a)|\n1: t1|r(a)|")

    def test_mixed_ids_rejected(self):
        with pytest.raises(TraceSyntaxError):
            parse_trace("1: t1|w(a)|\nt1|r(a)|")

    def test_empty(self):
        assert len(parse_trace("")) == 0


class TestSerialize:
    def test_empty(self):
        assert serialize_trace(Trace([])) == ""

    @pytest.mark.parametrize("name", fixture_names())
    def test_fixture_round_trip(self, name):
        t = load_fixture(name)
        assert parse_trace(serialize_trace(t)) == t

    def test_locations_preserved(self):
        text = "t1|w(a)|src/x.c:10\nt1|r(a)|\n"
        assert serialize_trace(parse_trace(text)) == text

    def test_explicit_ids_kept(self):
        t = parse_trace("5: t1|w(a)|\n7: t1|r(a)|")
        assert parse_trace(serialize_trace(t)).ids == (5, 7)

    def test_canonical_is_idempotent(self):
        text = serialize_trace(parse_trace("t1 | w | a | x.c:1\nt1|acq(l)"))
        assert serialize_trace(parse_trace(text)) == text

    def test_file_round_trip(self, tmp_path):
        t = load_fixture("cross-thread-critical-sections")
        dump_trace(t, tmp_path / "x.trace")
        assert load_trace(tmp_path / "x.trace") == t

    @given(st.integers(0, 5_000))
    def test_generated_round_trip(self, seed):
        t = gen_random_trace(small_config(seed, events=40))
        assert parse_trace(serialize_trace(t)) == t


class TestFixtures:
    def test_cross_thread_fixture_shape(self):
        t = load_fixture("cross-thread-critical-sections")
        assert len(t) == 9 and len(t.threads) == 3

    @pytest.mark.parametrize("name", fixture_names())
    def test_all_fixtures_well_formed(self, name):
        assert check_well_formed(load_fixture(name)).ok

    def test_expectations_parsed(self):
        exp = fixture_expectations("cross-thread-critical-sections")
        assert exp["guard_confirmations"] == "1"
        assert exp["races_pwr"] == "4-8"


class TestGenerator:
    def test_seed_one(self):
        assert check_well_formed(gen_random_trace(GenConfig(seed=1, events=12))).ok

    def test_deterministic(self):
        cfg = GenConfig(seed=42, events=50, threads=4)
        assert gen_random_trace(cfg) == gen_random_trace(cfg)

    def test_seeds_differ(self):
        assert gen_random_trace(GenConfig(seed=1, events=50)) != gen_random_trace(GenConfig(seed=2, events=50))

    def test_respects_length(self):
        for seed in range(50):
            assert len(gen_random_trace(GenConfig(seed=seed, events=12))) <= 12

    def test_locks_released_at_end(self):
        for seed in range(100):
            t = gen_random_trace(small_config(seed, events=30))
            held: dict[str, int] = {}
            for e in t:
                if e.is_acquire:
                    held[e.target] = held.get(e.target, 0) + 1
                elif e.is_release:
                    held[e.target] -= 1
            assert not any(held.values())

    @pytest.mark.parametrize(
        "bad",
        [dict(threads=0), dict(events=0), dict(locks=-1), dict(nesting=0), dict(cross_thread=1.5),
         dict(threads=1, locks=0, variables=0)],
    )
    def test_infeasible_config(self, bad):
        with pytest.raises(ValueError):
            gen_random_trace(GenConfig(**bad))

    def test_overrides(self):
        assert len(gen_random_trace(events=5)) <= 5

    def test_cross_thread_shapes_appear(self):
        """With density 1.0 some event is covered by a lock only through another thread."""
        found = 0
        for seed in range(40):
            cfg = GenConfig(seed=seed, events=12, threads=3, locks=1, variables=2,
                            fork_join_density=0.8, cross_thread=1.0)
            t = gen_random_trace(cfg)
            std = standard_locksets(t)
            ct = oracle.ct_locksets(t)
            found += any(std[e] < ct[e] for e in std)
        assert found > 0

    def test_soundness_sweep(self):
        for seed in range(10_000):
            cfg = small_config(seed, events=8 + seed % 25)
            assert check_well_formed(gen_random_trace(cfg)).ok, seed
