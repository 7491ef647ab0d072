"""List scheduling and upward code motion.

Scheduling is structural first (which instructions share a row), then
lanes are assigned per block by a small permutation search that honours
the two hardware rules: back-to-back dependents share a lane, and a
row's branches occupy ascending lanes in original program order (lane
index is taken-branch priority).

Row feasibility during structural scheduling mirrors the hardware checks:
no dependence edge inside a row, at most one helper call, and every
instruction has at most one producer in the immediately previous row
(two producers would demand two lanes at once); two consumers of the
same previous-row producer cannot share a row either. When nothing fits,
a new row is opened.
"""

from __future__ import annotations

from dataclasses import replace
from itertools import permutations

from .analysis import (
    ControlFlowGraph,
    DataDependenceGraph,
    LivenessInfo,
    candidate_blocks,
    control_equivalent,
)
from .isa import (Instruction, Kind, Program, io_sets, reg,
                  sets_conflict, written_register)
from .schedule import BlockSchedule, LaneConstraints, Slot

MOVABLE_PURE = (Kind.ALU_BINARY, Kind.ALU_UNARY, Kind.MOV_IMM, Kind.MOV_REG,
                Kind.LOAD_IMM64, Kind.ALU_THREE_OP)
MOVABLE_LOADS = (Kind.LOAD, Kind.LOAD48)


# ---------------------------------------------------------------------------
# structural list scheduling
# ---------------------------------------------------------------------------

def _critical_path(ddg: DataDependenceGraph) -> dict[int, int]:
    cp: dict[int, int] = {}
    for n in sorted(ddg.nodes, reverse=True):
        succs = ddg.succs[n]
        cp[n] = 1 + max((cp[s] for s in succs), default=0)
    return cp


def _schedule_structural(nodes, ddg, program, budget, helpers_per_row):
    """Greedy row construction at a given lane budget. Returns row lists of
    node indices. Critical-path priority, original order breaking ties."""
    cp = _critical_path(ddg)
    control = [n for n in nodes if program[n].is_control]
    work = [n for n in nodes if not program[n].is_control]
    placed_row: dict[int, int] = {}
    rows: list[list[int]] = []
    remaining = set(work)

    while remaining:
        r = len(rows)
        row: list[int] = []
        used_producers: set[int] = set()
        helpers = 0
        while True:
            best = None
            for n in sorted(remaining, key=lambda n: (-cp[n], n)):
                if any(placed_row[p] >= r for p in ddg.preds[n] if p in placed_row):
                    continue
                if any(p not in placed_row for p in ddg.preds[n]):
                    continue
                prev_raw = {p for p in ddg.raw_preds(n) if placed_row[p] == r - 1}
                if len(prev_raw) > 1 or (prev_raw & used_producers):
                    continue
                if program[n].kind is Kind.CALL and helpers >= helpers_per_row:
                    continue
                if any(((m, n) in ddg.edges or (n, m) in ddg.edges) for m in row):
                    continue
                if len(row) >= budget:
                    continue
                best = (n, prev_raw)
                break
            if best is None:
                break
            n, prev_raw = best
            row.append(n)
            used_producers |= prev_raw
            placed_row[n] = r
            remaining.discard(n)
            if program[n].kind is Kind.CALL:
                helpers += 1
        rows.append(row)     # may be empty when all ready nodes need distance 2

    # control instruction joins or follows the last row
    for n in control:
        earliest = max((placed_row[p] + 1 for p in ddg.preds[n]), default=0)
        prev_raw = lambda r: {p for p in ddg.raw_preds(n) if placed_row[p] == r - 1}
        target = max(earliest, len(rows) - 1 if rows else 0)
        while True:
            row = rows[target] if target < len(rows) else None
            if row is None:
                rows.append([])
                row = rows[-1]
            conflict = any(((m, n) in ddg.edges or (n, m) in ddg.edges) for m in row)
            producers = prev_raw(target)
            taken = {p for m in row for p in ddg.raw_preds(m)
                     if placed_row.get(p) == target - 1}
            if conflict or len(row) >= budget or len(producers) > 1 or \
                    (producers & taken):
                target += 1
                continue
            row.append(n)
            placed_row[n] = target
            break
    while rows and not rows[-1]:
        rows.pop()
    return rows


def list_schedule(block, ddg: DataDependenceGraph, constraints: LaneConstraints,
                  program: Program) -> BlockSchedule:
    """Schedule one block. Every lane budget up to the configured width is
    tried and the fewest-rows result kept, so row counts cannot grow when
    lanes are added."""
    nodes = list(ddg.nodes)
    if not nodes:
        return BlockSchedule(block.id, [])
    best = None
    for budget in range(1, constraints.lanes + 1):
        rows = _schedule_structural(nodes, ddg, program, budget,
                                    constraints.helpers_per_row)
        if best is None or len(rows) < len(best):
            best = rows
        elif len(rows) == len(best):
            best = rows                      # prefer the widest budget on ties
    slot_rows = [[Slot(program[n], block.id, n) for n in row] for row in best]
    return BlockSchedule(block.id, slot_rows)


# ---------------------------------------------------------------------------
# lane assignment
# ---------------------------------------------------------------------------

def _slot_io(slot: Slot):
    return io_sets(slot.instr)


def _raw_sources(slot: Slot, prev_slots):
    """Previous-row slots whose outputs feed this slot (register or memory)."""
    ins = _slot_io(slot).inputs
    return [p for p in prev_slots if sets_conflict(_slot_io(p).outputs, ins)]


def assign_lanes(rows: list[list[Slot]], lanes: int,
                 entry_pins: dict[int, int] | None = None):
    """Assign a lane to every slot, row by row. ``entry_pins`` maps id(slot)
    of first-row slots to required lanes (cross-block forwarding). Returns
    lane-indexed rows or None when some row has no valid assignment."""
    entry_pins = entry_pins or {}
    out: list[list[Slot | None]] = []
    prev_assign: dict[int, int] = {}        # id(slot) -> lane
    prev_slots: list[Slot] = []
    for r, slots in enumerate(rows):
        pins: dict[int, int] = {}
        for s in slots:
            wanted = set()
            if r == 0 and id(s) in entry_pins:
                wanted.add(entry_pins[id(s)])
            for p in _raw_sources(s, prev_slots):
                wanted.add(prev_assign[id(p)])
            if len(wanted) > 1:
                return None
            if wanted:
                pins[id(s)] = wanted.pop()
        assignment = _pick_lanes(slots, pins, lanes)
        if assignment is None:
            return None
        row: list[Slot | None] = [None] * lanes
        for s, lane in assignment:
            row[lane] = s
        out.append(row)
        prev_assign = {id(s): lane for s, lane in assignment}
        prev_slots = slots
    return out


def _pick_lanes(slots, pins, lanes):
    """First valid lane assignment; branches tried lowest-lane first so a
    lone unpinned branch lands on lane 0 and pulled branch groups come out
    ascending in original order."""
    if len(slots) > lanes:
        return None
    branches = sorted((s for s in slots if s.instr.kind in
                       (Kind.BRANCH, Kind.JUMP_ALWAYS)), key=lambda s: s.src_index)
    branch_ids = {id(s) for s in branches}
    others = sorted((s for s in slots if id(s) not in branch_ids),
                    key=lambda s: s.src_index)
    order = branches + others

    def ok(assign):
        for s in order:
            want = pins.get(id(s))
            if want is not None and assign[id(s)] != want:
                return False
        lanes_of = [assign[id(b)] for b in branches]
        if lanes_of != sorted(lanes_of):
            return False
        return True

    for perm in permutations(range(lanes), len(order)):
        assign = {id(s): lane for s, lane in zip(order, perm)}
        if ok(assign):
            return list(zip(order, perm))
    return None


# ---------------------------------------------------------------------------
# upward code motion
# ---------------------------------------------------------------------------

def _blocks_between(cfg: ControlFlowGraph, b: int, s: int) -> set[int] | None:
    """Blocks on some path b -> s, both endpoints excluded."""
    fwd = {b}
    work = [b]
    while work:
        x = work.pop()
        for t in cfg.blocks[x].successors:
            if t not in fwd and t != s:
                fwd.add(t)
                work.append(t)
    back = {s}
    work = [s]
    preds_reach = set()
    while work:
        x = work.pop()
        for t in cfg.blocks[x].predecessors:
            if t not in back:
                back.add(t)
                work.append(t)
    return (fwd & back) - {b, s}


def _block_io(program, cfg, bid):
    ins_syms: set = set()
    out_syms: set = set()
    for i in cfg.blocks[bid].indices():
        io = io_sets(program[i])
        ins_syms |= io.inputs
        out_syms |= io.outputs
    return ins_syms, out_syms


class CodeMotion:
    """Moves ready instructions from candidate blocks into empty slots."""

    def __init__(self, schedules, cfg, live, constraints, program, ddgs):
        self.schedules: dict[int, BlockSchedule] = schedules
        self.cfg = cfg
        self.live = live
        self.constraints = constraints
        self.program = program
        self.ddgs = ddgs
        self.moved_log: list[tuple[int, int, int]] = []   # (src_index, from, to)
        self.renames: list[tuple[int, int, int]] = []

    def run(self):
        for blk in self.cfg.blocks:
            self._pull_into(blk.id)
            self._pull_branches(blk.id)
        return self.schedules

    # -- general motion ----------------------------------------------------

    def _pull_into(self, b: int):
        bs = self.schedules[b]
        if not bs.rows:
            return
        ctrl_eq = control_equivalent(self.cfg, b)
        for cand in sorted(candidate_blocks(self.cfg, b)):
            # anticipation only: the source must lie below b, or the "move"
            # would sink a definition past its uses
            if not self.cfg.dominates(b, cand):
                continue
            if not self.schedules[cand].rows:
                continue
            between = _blocks_between(self.cfg, b, cand)
            self._move_from(b, cand, cand in ctrl_eq, between)

    def _move_from(self, b, cand, is_ctrl_eq, between):
        bs = self.schedules[b]
        cs = self.schedules[cand]
        ddg = self.ddgs[cand]
        moved_nodes: set[int] = set()
        progressed = True
        while progressed:
            progressed = False
            for row in list(cs.rows):
                for slot in list(row):
                    if slot.src_block != cand:     # already migrated once
                        continue
                    if not self._movable_kind(slot.instr, is_ctrl_eq):
                        continue
                    node = slot.src_index
                    if any(p not in moved_nodes for p in ddg.preds[node]):
                        continue
                    if not self._interference_free(slot, b, cand, between,
                                                   is_ctrl_eq):
                        continue
                    placement = self._find_slot(bs, slot)
                    if placement is None:
                        continue
                    r, needs_rename = placement
                    if needs_rename and not self._rename_now(slot, b):
                        continue
                    bs.rows[r].append(slot)
                    if assign_lanes(bs.rows, self.constraints.lanes) is None:
                        bs.rows[r].remove(slot)
                        continue
                    row.remove(slot)
                    slot.moved = True
                    moved_nodes.add(node)
                    self.moved_log.append((node, cand, b))
                    progressed = True
        self._compact(cs)

    def _compact(self, bs: BlockSchedule):
        """Drop empty rows where the forwarding distances still work out
        (an empty row keeping two same-row producers away from a common
        consumer must stay)."""
        changed = True
        while changed:
            changed = False
            for k, row in enumerate(bs.rows):
                if row:
                    continue
                trial = bs.rows[:k] + bs.rows[k + 1:]
                if assign_lanes(trial, self.constraints.lanes) is not None:
                    bs.rows = trial
                    changed = True
                    break

    def _movable_kind(self, ins: Instruction, is_ctrl_eq: bool) -> bool:
        if ins.kind in MOVABLE_PURE:
            return True
        # speculative loads could trap on paths that never reach the source
        return ins.kind in MOVABLE_LOADS and is_ctrl_eq

    def _interference_free(self, slot, b, cand, between, is_ctrl_eq):
        io = _slot_io(slot)
        for t in between:
            t_in, t_out = self._current_block_io(t)
            if sets_conflict(t_out, io.inputs):
                return False
            if sets_conflict(t_out, io.outputs) or sets_conflict(t_in, io.outputs):
                return False
        # instructions still in the source block ahead of the mover are its
        # DDG predecessors (already required to have moved); nothing to check.
        if not is_ctrl_eq:
            region = set(between) | {b}
            inside = region | {cand}
            for e in region:
                for t in self.cfg.blocks[e].successors:
                    if t not in inside and sets_conflict(
                            io.outputs, self.live.live_in[t]):
                        return False
        return True

    def _current_block_io(self, bid):
        ins_syms: set = set()
        out_syms: set = set()
        for row in self.schedules[bid].rows:
            for s in row:
                io = _slot_io(s)
                ins_syms |= io.inputs
                out_syms |= io.outputs
        return ins_syms, out_syms

    def _find_slot(self, bs: BlockSchedule, slot: Slot):
        """Earliest row of b with capacity where dependences, forwarding
        feasibility and the row invariants hold.

        A mover whose output register gets renamed is only ordered by its
        data sources (writers of its inputs); read-after and write-after
        conflicts against b concern the old register and disappear with
        the rename. Placements at or past ``plain`` need no rename."""
        io = _slot_io(slot)
        lanes = self.constraints.lanes
        raw_only = 0
        plain = 0
        last_control = None
        for r, row in enumerate(bs.rows):
            for other in row:
                oio = _slot_io(other)
                if sets_conflict(oio.outputs, io.inputs):
                    raw_only = max(raw_only, r + 1)
                    plain = max(plain, r + 1)
                if sets_conflict(oio.inputs, io.outputs) or \
                   sets_conflict(oio.outputs, io.outputs):
                    plain = max(plain, r + 1)
                if other.instr.is_control:
                    last_control = r
        limit = last_control if last_control is not None else len(bs.rows) - 1
        renameable = written_register(slot.instr) is not None
        for r in range(raw_only, limit + 1):
            needs_rename = r < plain
            if needs_rename and not renameable:
                continue
            row = bs.rows[r]
            if len(row) >= lanes:
                continue
            if slot.instr.kind is Kind.CALL and \
                    sum(1 for s in row if s.instr.kind is Kind.CALL) >= \
                    self.constraints.helpers_per_row:
                continue
            bad = False
            for other in row:
                oio = _slot_io(other)
                if sets_conflict(oio.outputs, io.inputs) or \
                        sets_conflict(io.inputs, oio.outputs):
                    bad = True
                    break
                if not needs_rename and (
                        sets_conflict(oio.inputs, io.outputs) or
                        sets_conflict(oio.outputs, io.outputs)):
                    needs_rename = True
                    if not renameable:
                        bad = True
                        break
            if bad:
                continue
            if not self._forwarding_feasible(bs, r, row, slot):
                continue
            return r, needs_rename
        return None

    def _forwarding_feasible(self, bs, r, row, slot):
        prev = bs.rows[r - 1] if r > 0 else []
        producers = _raw_sources(slot, prev)
        if len(producers) > 1:
            return False
        if producers:
            p = producers[0]
            for other in row:
                if p in _raw_sources(other, prev):
                    return False
        return True

    def _rename_now(self, slot, b) -> bool:
        """Rename the mover's output so it can share rows with conflicting
        writers. Applied immediately: a valid rename is semantically a
        no-op, so a later placement failure leaves a correct program."""
        from .regalloc import _apply_rename, plan_rename
        plan = plan_rename(self.program, self.cfg, self.live, self.schedules,
                           slot, b)
        if plan is None:
            return False
        registry = {}
        for bs in self.schedules.values():
            for row in bs.rows:
                for s in row:
                    registry[s.src_index] = s
        _apply_rename(plan, registry)
        self.renames.append((slot.src_index, plan.old_reg, plan.new_reg))
        return True

    # -- parallel branching -------------------------------------------------

    def _pull_branches(self, b: int):
        bs = self.schedules[b]
        if not bs.rows:
            return
        lanes = self.constraints.lanes
        prev_block = b
        while True:
            last = bs.rows[-1]
            branches = [s for s in last if s.instr.kind is Kind.BRANCH]
            if len(last) >= lanes:
                return
            if branches:
                tail = max(branches, key=lambda s: s.src_index)
                fall_index = tail.src_index + 1
                prev_block = self.cfg.block_of(tail.src_index) \
                    if tail.moved else prev_block
            else:
                blk = self.cfg.blocks[b]
                if self.program[blk.end].is_control:
                    return
                fall_index = blk.end + 1
            fb = self.cfg.block_of(fall_index)
            if fb is None:
                return
            fblk = self.cfg.blocks[fb]
            if fblk.predecessors != (prev_block,) or len(fblk) != 1 or \
                    self.program[fblk.start].kind is not Kind.BRANCH or \
                    not self.schedules[fb].rows:
                return
            fslot = None
            for s in self.schedules[fb].rows[0]:
                if s.src_index == fblk.start:
                    fslot = s
            if fslot is None:
                return
            io = _slot_io(fslot)
            for other in last:
                oio = _slot_io(other)
                if sets_conflict(oio.outputs, io.inputs) or \
                   sets_conflict(oio.inputs, io.outputs):
                    return
            if not self._forwarding_feasible(bs, len(bs.rows) - 1, last, fslot):
                return
            last.append(fslot)
            if assign_lanes(bs.rows, lanes) is None:
                last.pop()
                return
            fslot.moved = True
            self.schedules[fb].rows = []
            self.moved_log.append((fslot.src_index, fb, b))


def code_motion(schedules, cfg, live: LivenessInfo, constraints: LaneConstraints,
                program: Program, ddgs):
    """Move ready instructions upward from candidate blocks; pull trailing
    single-branch blocks up for parallel branching. Returns (schedules,
    moved_log, renames)."""
    cm = CodeMotion(schedules, cfg, live, constraints, program, ddgs)
    cm.run()
    return schedules, cm.moved_log, cm.renames
