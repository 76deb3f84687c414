"""Round-robin arbiters used by the packet sender, task arbiter and chaining controller."""

from __future__ import annotations

from typing import Iterable, Optional, Sequence


class RoundRobin:
    """Fair arbiter over ``n`` requesters.

    The requester granted last gets the lowest priority on the next
    arbitration, so with everyone pending the grants cycle 0, 1, ..., n-1.
    """

    def __init__(self, n: int):
        if n < 1:
            raise ValueError("arbiter needs at least one requester")
        self.n = n
        self.pointer = 0  # highest-priority requester for the next grant

    def pick(self, pending: Iterable[int]) -> Optional[int]:
        """Return the winner among ``pending`` without updating state."""
        best = None
        best_key = self.n
        for i in pending:
            key = (i - self.pointer) % self.n
            if key < best_key:
                best, best_key = i, key
        return best

    def grant(self, pending: Iterable[int]) -> Optional[int]:
        winner = self.pick(pending)
        if winner is not None:
            self.advance(winner)
        return winner

    def advance(self, winner: int) -> None:
        self.pointer = (winner + 1) % self.n


class PriorityRoundRobin:
    """Highest priority wins; round-robin breaks ties within a priority level.

    A single pointer is shared by all levels, so with every priority zero the
    arbiter is a plain round-robin.
    """

    def __init__(self, n: int):
        self.rr = RoundRobin(n)

    @property
    def pointer(self):
        return self.rr.pointer

    def pick(self, pending: Sequence[tuple[int, int]]) -> Optional[int]:
        """``pending`` holds (requester, priority) pairs."""
        if not pending:
            return None
        top = max(p for _, p in pending)
        return self.rr.pick(i for i, p in pending if p == top)

    def grant(self, pending: Sequence[tuple[int, int]]) -> Optional[int]:
        winner = self.pick(pending)
        if winner is not None:
            self.rr.advance(winner)
        return winner


class HierarchicalArbiter:
    """Two-level arbiter: per-group priority round-robin, then round-robin over groups.

    The second level prefers the highest priority offered by any group, so
    priority semantics match a flat arbiter while fairness is per group.
    """

    def __init__(self, n: int, group_size: int):
        if group_size < 1:
            raise ValueError("group size must be >= 1")
        self.n = n
        self.group_size = group_size
        self.groups = [list(range(g, min(g + group_size, n))) for g in range(0, n, group_size)]
        self.first = [PriorityRoundRobin(len(g)) for g in self.groups]
        self.second = PriorityRoundRobin(len(self.groups))

    def group_of(self, i: int) -> int:
        return i // self.group_size

    def grant(self, pending: Sequence[tuple[int, int]]) -> Optional[int]:
        if not pending:
            return None
        by_group: dict[int, list] = {}
        for i, p in pending:
            g = self.group_of(i)
            by_group.setdefault(g, []).append((i - g * self.group_size, p))
        offers = []
        local = {}
        for g, reqs in by_group.items():
            w = self.first[g].pick(reqs)
            prio = dict(reqs)[w]
            local[g] = w
            offers.append((g, prio))
        g = self.second.grant(offers)
        w = local[g]
        self.first[g].rr.advance(w)
        return g * self.group_size + w


class FlatArbiter:
    """Adapter giving :class:`PriorityRoundRobin` the hierarchical interface."""

    def __init__(self, n: int):
        self.inner = PriorityRoundRobin(n)

    def grant(self, pending):
        return self.inner.grant(pending)


def make_arbiter(n: int, group_size: Optional[int]):
    """``group_size`` None (or >= n) selects a single global arbiter."""
    if group_size is None or group_size >= n:
        return FlatArbiter(n)
    return HierarchicalArbiter(n, group_size)
