"""Shared test oracles, deliberately independent of the code they check."""

from __future__ import annotations

import random
from collections import deque
from copy import deepcopy

import pytest

from xvliw.isa import MapDef
from xvliw.vm import (
    MapStore,
    PacketContext,
    MachineState,
    PKT_BASE,
    STACK_BASE,
)


def brute_force_min_rows(n: int, edges: dict, lanes: int) -> int:
    """Exhaustive minimum row count for scheduling a dependence graph.

    ``edges`` maps (i, j) with i < j to a set of kinds. A row is a set of
    pairwise-independent ready nodes, at most ``lanes`` wide; a node whose
    RAW producer sits in the immediately previous row must take that
    producer's lane, so two nodes sharing one previous-row RAW producer
    cannot coexist and a node with two such producers must wait. BFS over
    (done, previous row), empty rows allowed.
    """
    all_nodes = frozenset(range(n))
    preds = {i: set() for i in range(n)}
    raw_preds = {i: set() for i in range(n)}
    for (i, j), kinds in edges.items():
        preds[j].add(i)
        if "RAW" in kinds:
            raw_preds[j].add(i)

    def independent(cand):
        return not any((i, j) in edges for i in cand for j in cand if i < j)

    start = (frozenset(), frozenset())
    seen = {start}
    frontier = deque([start])
    depth = 0
    while frontier:
        depth += 1
        for _ in range(len(frontier)):
            done, prev = frontier.popleft()
            ready = [x for x in all_nodes - done if preds[x] <= done]
            feasible = []
            for x in ready:
                pins = raw_preds[x] & prev
                if len(pins) > 1:
                    continue
                feasible.append((x, next(iter(pins)) if pins else None))
            for row in _subsets(feasible, lanes):
                nodes = frozenset(x for x, _ in row)
                if not independent(nodes):
                    continue
                pinned = [p for _, p in row if p is not None]
                if len(pinned) != len(set(pinned)):
                    continue
                nd = done | nodes
                state = (nd, nodes)
                if nd == all_nodes:
                    return depth
                if state not in seen:
                    seen.add(state)
                    frontier.append(state)
            empty = (done, frozenset())
            if empty not in seen:
                seen.add(empty)
                frontier.append(empty)
    return 0 if n else 0


def _subsets(items, limit):
    out = [[]]
    for it in items:
        out += [s + [it] for s in out if len(s) < limit]
    return [s for s in out if s]


def rfc1071_sum16(data: bytes, seed: int = 0) -> int:
    """Reference internet checksum accumulator (16-bit ones' complement)."""
    if len(data) % 2:
        data += b"\x00"
    s = seed
    for i in range(0, len(data), 2):
        s += int.from_bytes(data[i:i + 2], "little")
    while s >> 16:
        s = (s & 0xFFFF) + (s >> 16)
    return s


def fold16(v: int) -> int:
    while v >> 16:
        v = (v & 0xFFFF) + (v >> 16)
    return v


def make_state(rng: random.Random, *, pkt_len: int = 128,
               with_map: bool = True) -> MachineState:
    maps = MapStore([MapDef(1, "hash", 4, 8, 8)] if with_map else [])
    if with_map:
        for _ in range(3):
            maps.init_entry(1, rng.randbytes(4), rng.randbytes(8))
    pkt = PacketContext(rng.randbytes(pkt_len), head_room=64,
                        ingress_port=rng.randint(0, 3))
    state = MachineState(packet=pkt, maps=maps)
    for r in range(10):
        if r in (1,):
            continue
        state.regs[r] = rng.getrandbits(64)
    state.stack[:] = rng.randbytes(len(state.stack))
    return state


def clone_state(state: MachineState) -> MachineState:
    return deepcopy(state)


def point_into_stack(state, reg, rng, span=16):
    state.regs[reg] = STACK_BASE + rng.randrange(span, 512 - span)


def point_into_packet(state, reg, rng, span=16):
    lo = state.packet.start
    hi = state.packet.end - span
    state.regs[reg] = PKT_BASE + rng.randrange(lo, hi)


@pytest.fixture
def rng():
    return random.Random(20260810)
