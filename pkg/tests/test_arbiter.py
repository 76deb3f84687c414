from collections import Counter

import pytest
from hypothesis import given, strategies as st

from noc_accel.arbiter import (FlatArbiter, HierarchicalArbiter, PriorityRoundRobin, RoundRobin,
                               make_arbiter)
from oracles import rr_sequence


class TestRoundRobin:
    @pytest.mark.parametrize("n", [1, 2, 5, 8])
    def test_all_pending_cycles(self, n):
        rr = RoundRobin(n)
        assert [rr.grant(range(n)) for _ in range(3 * n)] == rr_sequence(n, 3 * n)

    def test_empty(self):
        assert RoundRobin(3).grant([]) is None

    def test_skips_idle(self):
        rr = RoundRobin(4)
        assert rr.grant([2]) == 2
        assert rr.grant([0, 2]) == 0  # 3 is next in line but idle
        assert rr.grant([0, 2]) == 2

    def test_pick_does_not_advance(self):
        rr = RoundRobin(3)
        assert rr.pick([0, 1]) == 0 and rr.pick([0, 1]) == 0

    def test_bad_size(self):
        with pytest.raises(ValueError):
            RoundRobin(0)

    @given(st.lists(st.sets(st.integers(0, 5), min_size=1), min_size=1, max_size=60))
    def test_no_starvation(self, rounds):
        """A requester pending continuously waits at most n-1 grants."""
        rr = RoundRobin(6)
        waiting = Counter()
        for pending in rounds:
            w = rr.grant(pending)
            assert w in pending
            for i in pending:
                waiting[i] = 0 if i == w else waiting[i] + 1
                assert waiting[i] <= 5
            for i in set(range(6)) - pending:
                waiting[i] = 0


class TestPriority:
    def test_highest_priority_wins(self):
        arb = PriorityRoundRobin(4)
        assert arb.grant([(0, 0), (1, 3), (2, 1)]) == 1

    def test_ties_round_robin(self):
        arb = PriorityRoundRobin(4)
        order = [arb.grant([(0, 2), (2, 2), (3, 0)]) for _ in range(4)]
        assert order == [0, 2, 0, 2]

    def test_all_zero_is_plain_round_robin(self):
        arb = PriorityRoundRobin(5)
        assert [arb.grant([(i, 0) for i in range(5)]) for _ in range(7)] == rr_sequence(5, 7)


class TestHierarchical:
    def test_fair_across_groups(self):
        arb = HierarchicalArbiter(8, 4)
        pending = [(i, 0) for i in range(8)]
        got = [arb.grant(pending) for _ in range(8)]
        # alternate groups, round-robin inside each
        assert got == [0, 4, 1, 5, 2, 6, 3, 7]

    def test_priority_crosses_groups(self):
        arb = HierarchicalArbiter(8, 4)
        assert arb.grant([(1, 0), (6, 2), (2, 1)]) == 6

    def test_share_per_group_not_per_requester(self):
        # one requester alone in its group gets half the grants
        arb = HierarchicalArbiter(8, 4)
        pending = [(0, 0), (4, 0), (5, 0), (6, 0), (7, 0)]
        c = Counter(arb.grant(pending) for _ in range(40))
        assert c[0] == 20

    @pytest.mark.parametrize("group", [None, 8, 16])
    def test_flat_selection(self, group):
        assert isinstance(make_arbiter(8, group), FlatArbiter)

    def test_grouped_selection(self):
        arb = make_arbiter(8, 2)
        assert isinstance(arb, HierarchicalArbiter) and len(arb.groups) == 4

    def test_empty(self):
        assert HierarchicalArbiter(4, 2).grant([]) is None
