"""Instruction reduction and compressed-opcode rewrites.

Five per-block passes, each individually toggleable, iterated to a fixed
point by the :func:`peephole` driver:

* boundary-check removal - the three-instruction packet bounds idiom
  (cursor copy, cursor += header size, compare against packet end and jump
  to an abort block) is deleted; the simulator's hardware bounds trap
  keeps out-of-bounds accesses safe.
* zeroing removal - register/stack-slot writes of immediate zero that are
  either still-virgin initialisation (state self-reset makes them no-ops)
  or plain dead stores.
* three-operand fusion - (mov; alu) pairs into one extended ALU op.
* 6-byte load/store fusion - the MAC-copy idiom (adjacent 4B+2B load pair
  plus the matching adjacent store pair) into load48 + store48.
* early-exit fusion - (mov r0, imm; exit) into one parametrized exit.
"""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass, replace

from .analysis import (
    build_program_cfg,
    find_basic_blocks,
    live_before,
    liveness,
)
from .isa import (
    ALU3_OPS,
    FRAME_REG,
    Instruction,
    Kind,
    Program,
    STACK_SIZE,
    build_program,
    io_sets,
    provenance_states,
    reg,
    sets_conflict,
)

COMMUTATIVE = ("add", "mul", "and", "or", "xor")
PASS_NAMES = ("boundary_checks", "zeroing", "three_operand", "load_store_6b",
              "early_exit")


def _rebuild(program: Program, items: list[tuple[int, Instruction]]) -> Program:
    """Rebuild a program from (old_anchor, instruction) pairs, remapping
    branch targets. A deleted old index maps to the next surviving one."""
    anchors = [a for a, _ in items]

    def new_of(old: int) -> int:
        idx = bisect_left(anchors, old)
        return min(idx, len(items) - 1)

    out = []
    for _, ins in items:
        if ins.kind in (Kind.BRANCH, Kind.JUMP_ALWAYS):
            ins = replace(ins, target=new_of(ins.target))
        out.append(ins)
    return build_program(out, program.maps)


def _leaders(program: Program) -> set[int]:
    return {b.start for b in find_basic_blocks(program)}


def _blocks_by_index(program: Program):
    blocks = find_basic_blocks(program)
    owner = {}
    for b in blocks:
        for i in b.indices():
            owner[i] = b
    return blocks, owner


# ---------------------------------------------------------------------------
# boundary checks
# ---------------------------------------------------------------------------

def _is_abort_block(program: Program, block) -> bool:
    body = [program[i] for i in block.indices()]
    if len(body) == 1:
        return body[0].kind in (Kind.EXIT, Kind.EARLY_EXIT)
    if len(body) == 2:
        return body[0].kind is Kind.MOV_IMM and body[0].dst == 0 and \
            body[1].kind is Kind.EXIT
    return False


def remove_boundary_checks(program: Program):
    """Delete matched packet-bounds checks. Returns (program, removed).

    A match is (1) a copy of a packet-data cursor, (2) adding a constant,
    (3) an unsigned compare against the packet-end value jumping to a
    block that only aborts - with the scratch register dead afterwards.
    The pre-fused two-instruction form (three-operand add, compare) is
    matched too.
    """
    cfg = build_program_cfg(program)
    states = provenance_states(program.instructions)
    live = liveness(cfg, program)
    block_of = {i: b for b in cfg.blocks for i in b.indices()}

    removed: list[tuple[int, ...]] = []
    consumed: set[int] = set()
    for blk in cfg.blocks:
        i = blk.start
        while i + 1 <= blk.end:
            if i in consumed:
                i += 1
                continue
            window = _match_check(program, states, blk, i)
            if window is None:
                i += 1
                continue
            branch_idx = window[-1]
            br = program[branch_idx]
            tgt_block = block_of[br.target]
            fall_block = block_of.get(branch_idx + 1)
            if not _is_abort_block(program, tgt_block) or fall_block is None:
                i += 1
                continue
            scratch = reg(br.dst)
            if scratch in live.live_in[tgt_block.id] or \
               scratch in live.live_in[fall_block.id]:
                i += 1
                continue
            consumed.update(window)
            removed.append(window)
            i = branch_idx + 1
    if not removed:
        return program, []
    items = [(i, ins) for i, ins in enumerate(program.instructions)
             if i not in consumed]
    return _rebuild(program, items), removed


def _match_check(program, states, blk, i):
    def prov(idx, r):
        st = states[idx]
        return st.get(r) if st else None

    a = program[i]
    # mov T, P ; T += C ; if T > E goto abort
    if a.kind is Kind.MOV_REG and a.width == 64 and i + 2 <= blk.end:
        b, c = program[i + 1], program[i + 2]
        if (b.kind is Kind.ALU_BINARY and b.op == "add" and b.width == 64
                and b.dst == a.dst and b.src is None and b.imm > 0
                and c.kind is Kind.BRANCH and c.op == "jgt"
                and c.dst == a.dst and c.src is not None
                and prov(i, a.src) == ("pkt",)
                and prov(i + 2, c.src) == ("pkt_end",)):
            return (i, i + 1, i + 2)
    # T = P + C ; if T > E goto abort
    if a.kind is Kind.ALU_THREE_OP and a.op == "add" and a.src2 is None \
            and a.imm > 0 and i + 1 <= blk.end:
        c = program[i + 1]
        if (c.kind is Kind.BRANCH and c.op == "jgt" and c.dst == a.dst
                and c.src is not None
                and prov(i, a.src) == ("pkt",)
                and prov(i + 1, c.src) == ("pkt_end",)):
            return (i, i + 1)
    return None


# ---------------------------------------------------------------------------
# zeroing
# ---------------------------------------------------------------------------

def remove_zeroing(program: Program):
    """Delete writes of immediate zero that are initialisation of still
    zero-initialised state (never read or written before on any path) or
    dead stores (target not live afterwards). Returns (program, removed)."""
    cfg = build_program_cfg(program)
    live = liveness(cfg, program)
    touched = _touched_before(program, cfg)

    removed = []
    for blk in cfg.blocks:
        for i in blk.indices():
            ins = program[i]
            target = _zeroing_target(ins)
            if target is None:
                continue
            virgin = touched[i] is not None and \
                not sets_conflict({target}, touched[i])
            if not virgin:
                after = (live.live_out[blk.id] if i == blk.end else
                         live_before(live, program, blk.id, i + 1))
                if sets_conflict({target}, after):
                    continue
            removed.append(i)
    if not removed:
        return program, []
    dropped = set(removed)
    items = [(i, ins) for i, ins in enumerate(program.instructions)
             if i not in dropped]
    return _rebuild(program, items), removed


def _zeroing_target(ins: Instruction):
    if ins.kind is Kind.MOV_IMM and ins.imm == 0:
        return reg(ins.dst)
    if ins.kind is Kind.STORE and ins.src is None and ins.imm == 0 \
            and ins.addr_space == "stack":
        if ins.stack_slot is not None:
            return ("stack", ins.stack_slot[0], ins.stack_slot[1])
        if ins.dst == FRAME_REG:
            lo = STACK_SIZE + ins.offset
            return ("stack", lo, lo + ins.width)
    return None


def _touched_before(program: Program, cfg):
    """May-analysis: symbols read or written on some path from entry to each
    instruction (None for unreachable). r1/r10 are live-in, so touched."""
    n = len(program)
    entry_touched = frozenset({reg(1), reg(FRAME_REG)})
    block_in: dict[int, frozenset | None] = {b.id: None for b in cfg.blocks}
    block_in[0] = entry_touched
    order = [b.id for b in cfg.blocks]
    result: list[frozenset | None] = [None] * n
    changed = True
    while changed:
        changed = False
        for bid in order:
            cur = block_in[bid]
            if cur is None:
                continue
            blk = cfg.blocks[bid]
            t = set(cur)
            for i in blk.indices():
                result[i] = frozenset(t)
                io = io_sets(program[i])
                t |= io.inputs | io.outputs
            for s in blk.successors:
                merged = t if block_in[s] is None else (block_in[s] | t)
                merged = frozenset(merged)
                if merged != block_in[s]:
                    block_in[s] = merged
                    changed = True
    return result


# ---------------------------------------------------------------------------
# three-operand fusion
# ---------------------------------------------------------------------------

def fuse_three_operand(program: Program) -> Program:
    """(mov d, s ; alu d, x) and commutative (mov d, imm ; alu d, x)
    rewrite to one three-operand instruction."""
    _, owner = _blocks_by_index(program)
    items: list[tuple[int, Instruction]] = []
    i = 0
    n = len(program)
    while i < n:
        a = program[i]
        fused = None
        if i + 1 < n and owner.get(i) is owner.get(i + 1):
            b = program[i + 1]
            if (b.kind is Kind.ALU_BINARY and b.width == 64
                    and b.op in ALU3_OPS and b.dst is not None):
                fused = _try_fuse_pair(a, b)
        if fused is not None:
            items.append((i, fused))
            i += 2
        else:
            items.append((i, a))
            i += 1
    if len(items) == n:
        return program
    return _rebuild(program, items)


def _try_fuse_pair(a: Instruction, b: Instruction):
    if a.kind is Kind.MOV_REG and a.width == 64 and b.dst == a.dst:
        if b.src is None:
            return Instruction(Kind.ALU_THREE_OP, op=b.op, width=64,
                               dst=a.dst, src=a.src, imm=b.imm)
        src2 = a.src if b.src == a.dst else b.src
        return Instruction(Kind.ALU_THREE_OP, op=b.op, width=64,
                           dst=a.dst, src=a.src, src2=src2)
    if a.kind is Kind.MOV_IMM and a.width == 64 and b.dst == a.dst \
            and b.src is not None and b.src != a.dst and b.op in COMMUTATIVE:
        return Instruction(Kind.ALU_THREE_OP, op=b.op, width=64,
                           dst=a.dst, src=b.src, imm=a.imm)
    return None


# ---------------------------------------------------------------------------
# 6-byte load/store fusion
# ---------------------------------------------------------------------------

def fuse_load_store_6b(program: Program) -> Program:
    """MAC-copy idiom: an adjacent load pair covering 6 contiguous bytes
    (4B+2B or 2B+4B) plus the matching adjacent store pair rewrite to
    load48 + store48, eliminating the second scratch register."""
    cfg = build_program_cfg(program)
    live = liveness(cfg, program)
    consumed: set[int] = set()
    rewrites: dict[int, Instruction] = {}

    for blk in cfg.blocks:
        for i in blk.indices():
            if i in consumed or i + 1 > blk.end:
                continue
            lp = _match_load_pair(program, blk, i)
            if lp is None:
                continue
            a_reg, c_reg, base, off = lp
            match = _find_store_pair(program, blk, live, i, a_reg, c_reg)
            if match is None:
                continue
            j, d_base, p_off = match
            consumed.update((i, i + 1, j, j + 1))
            rewrites[i] = Instruction(Kind.LOAD48, width=6, dst=a_reg,
                                      src=base, offset=off)
            rewrites[j] = Instruction(Kind.STORE48, width=6, dst=d_base,
                                      src=a_reg, offset=p_off)
    if not rewrites:
        return program
    items = []
    for i, ins in enumerate(program.instructions):
        if i in rewrites:
            items.append((i, rewrites[i]))
        elif i not in consumed:
            items.append((i, ins))
    return _rebuild(program, items)


def _match_load_pair(program, blk, i):
    a, b = program[i], program[i + 1]
    if a.kind is not Kind.LOAD or b.kind is not Kind.LOAD:
        return None
    if a.src != b.src or a.dst == b.dst or b.dst == b.src or a.dst == a.src:
        return None
    if {a.width, b.width} != {4, 2}:
        return None
    if b.offset != a.offset + a.width:
        return None
    return a.dst, b.dst, a.src, a.offset


def _find_store_pair(program, blk, live, load_idx, a_reg, c_reg):
    """Scan forward for the adjacent stores of (a_reg, c_reg) with matching
    widths and contiguous offsets. Any intervening instruction touching
    either scratch register, or liveness of a scratch past the stores,
    rejects the idiom (the fused form changes their contents)."""
    a_w = program[load_idx].width
    c_w = program[load_idx + 1].width
    for j in range(load_idx + 2, blk.end):      # j+1 must stay inside the block
        s1, s2 = program[j], program[j + 1]
        if (_is_store_of(s1, a_reg) and _is_store_of(s2, c_reg)
                and s1.width == a_w and s2.width == c_w
                and s1.dst == s2.dst and s1.dst not in (a_reg, c_reg)
                and s2.offset == s1.offset + a_w):
            after = (live.live_out[blk.id] if j + 1 == blk.end else
                     live_before(live, program, blk.id, j + 2))
            if sets_conflict({reg(a_reg), reg(c_reg)}, after):
                return None
            return j, s1.dst, s1.offset
        if _touches_regs(program[j], {a_reg, c_reg}):
            return None
    return None


def _is_store_of(ins, r):
    return ins.kind is Kind.STORE and ins.src == r


def _touches_regs(ins, regs_set):
    io = io_sets(ins)
    syms = {reg(r) for r in regs_set}
    return sets_conflict(io.inputs | io.outputs, syms)


# ---------------------------------------------------------------------------
# early exit fusion
# ---------------------------------------------------------------------------

def fuse_early_exit(program: Program) -> Program:
    """(mov r0, imm ; exit) pairs rewrite to a parametrized exit."""
    _, owner = _blocks_by_index(program)
    items: list[tuple[int, Instruction]] = []
    i = 0
    n = len(program)
    while i < n:
        a = program[i]
        if (i + 1 < n and owner.get(i) is owner.get(i + 1)
                and a.kind is Kind.MOV_IMM and a.dst == 0
                and (a.width == 64 or a.imm >= 0)
                and program[i + 1].kind is Kind.EXIT):
            items.append((i, Instruction(Kind.EARLY_EXIT, imm=a.imm)))
            i += 2
        else:
            items.append((i, a))
            i += 1
    if len(items) == n:
        return program
    return _rebuild(program, items)


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

@dataclass
class PeepholeStats:
    boundary_checks: int = 0       # instructions removed
    zeroing: int = 0
    three_operand: int = 0         # pairs fused
    load_store_6b: int = 0         # instructions saved
    early_exit: int = 0            # pairs fused

    def as_dict(self):
        return {name: getattr(self, name) for name in PASS_NAMES}

    @property
    def total_removed(self):
        return sum(self.as_dict().values())


def peephole(program: Program, enabled: dict[str, bool] | None = None,
             max_rounds: int = 10):
    """Run all enabled passes to a fixed point. Returns (program, stats)."""
    on = {name: True for name in PASS_NAMES}
    if enabled:
        on.update(enabled)
    stats = PeepholeStats()
    for _ in range(max_rounds):
        before_round = len(program)
        if on["boundary_checks"]:
            n = len(program)
            program, _removed = remove_boundary_checks(program)
            stats.boundary_checks += n - len(program)
        if on["zeroing"]:
            n = len(program)
            program, _removed = remove_zeroing(program)
            stats.zeroing += n - len(program)
        if on["three_operand"]:
            n = len(program)
            program = fuse_three_operand(program)
            stats.three_operand += n - len(program)
        if on["load_store_6b"]:
            n = len(program)
            program = fuse_load_store_6b(program)
            stats.load_store_6b += n - len(program)
        if on["early_exit"]:
            n = len(program)
            program = fuse_early_exit(program)
            stats.early_exit += n - len(program)
        if len(program) == before_round:
            break
    return program, stats
