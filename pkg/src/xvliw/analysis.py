"""Control and data flow analysis.

Basic blocks, the CFG with dominator/post-dominator sets, backward
liveness over register and memory-region symbols, per-block data
dependence graphs, the pairwise parallelizability predicate and the
quadratic check-count formula a runtime scheduler would need.

Post-dominance uses a virtual exit node joining every block without
successors; blocks that cannot reach an exit keep conservative (full)
post-dominator sets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .asm import format_instruction
from .errors import ProgramError
from .isa import Instruction, Kind, Program, io_sets, sets_conflict

_EXITV = -1


@dataclass(frozen=True)
class BasicBlock:
    id: int
    start: int                      # leader instruction index
    end: int                        # last instruction index, inclusive
    successors: tuple[int, ...]
    predecessors: tuple[int, ...]

    def indices(self):
        return range(self.start, self.end + 1)

    def __len__(self):
        return self.end - self.start + 1


def reachable_instructions(program: Program) -> set[int]:
    seen: set[int] = set()
    work = [0]
    n = len(program)
    while work:
        i = work.pop()
        if i in seen or not 0 <= i < n:
            continue
        seen.add(i)
        ins = program[i]
        if ins.kind in (Kind.EXIT, Kind.EARLY_EXIT):
            continue
        if ins.kind is Kind.JUMP_ALWAYS:
            work.append(ins.target)
        elif ins.kind is Kind.BRANCH:
            work.extend((ins.target, i + 1))
        else:
            work.append(i + 1)
    return seen


def find_basic_blocks(program: Program) -> list[BasicBlock]:
    """Partition the reachable instructions into maximal blocks.

    Leaders are the entry, every branch target and every instruction
    following a control transfer. Unreachable code is dropped (the
    caller can diff against ``reachable_instructions`` for diagnostics).
    """
    reach = reachable_instructions(program)
    leaders = {0}
    for i in sorted(reach):
        ins = program[i]
        if ins.kind in (Kind.BRANCH, Kind.JUMP_ALWAYS):
            leaders.add(ins.target)
            leaders.add(i + 1)
        elif ins.kind in (Kind.EXIT, Kind.EARLY_EXIT):
            leaders.add(i + 1)
    leaders = sorted(x for x in leaders if x in reach)

    spans = []
    for bi, start in enumerate(leaders):
        end = start
        nxt = leaders[bi + 1] if bi + 1 < len(leaders) else len(program)
        while end + 1 < nxt and end + 1 in reach and \
                program[end].kind not in (Kind.BRANCH, Kind.JUMP_ALWAYS,
                                          Kind.EXIT, Kind.EARLY_EXIT):
            end += 1
        spans.append((start, end))

    id_of_leader = {s: i for i, (s, _) in enumerate(spans)}
    succs: list[list[int]] = [[] for _ in spans]
    preds: list[list[int]] = [[] for _ in spans]
    for bid, (start, end) in enumerate(spans):
        last = program[end]
        targets = []
        if last.kind is Kind.JUMP_ALWAYS:
            targets = [last.target]
        elif last.kind is Kind.BRANCH:
            targets = [last.target, end + 1]
        elif last.kind in (Kind.EXIT, Kind.EARLY_EXIT):
            targets = []
        else:
            targets = [end + 1]
        for t in targets:
            if t not in id_of_leader:
                raise ProgramError(f"block {bid}: control flows to non-leader {t}")
            succs[bid].append(id_of_leader[t])
    for bid, ss in enumerate(succs):
        for s in ss:
            preds[s].append(bid)

    return [BasicBlock(bid, start, end, tuple(succs[bid]), tuple(sorted(set(preds[bid]))))
            for bid, (start, end) in enumerate(spans)]


@dataclass
class ControlFlowGraph:
    blocks: list[BasicBlock]
    entry: int
    dom: dict[int, frozenset]
    pdom: dict[int, frozenset]

    def block_of(self, instr_index: int) -> int | None:
        for b in self.blocks:
            if b.start <= instr_index <= b.end:
                return b.id
        return None

    def dominates(self, a: int, b: int) -> bool:
        return a in self.dom[b]

    def postdominates(self, a: int, b: int) -> bool:
        return a in self.pdom[b]


def build_cfg(blocks: list[BasicBlock]) -> ControlFlowGraph:
    """Attach dominator and post-dominator sets (iterative dataflow)."""
    ids = [b.id for b in blocks]
    preds = {b.id: list(b.predecessors) for b in blocks}
    succs = {b.id: list(b.successors) for b in blocks}

    dom = {b: set(ids) for b in ids}
    dom[0] = {0}
    changed = True
    while changed:
        changed = False
        for b in ids:
            if b == 0:
                continue
            new = set(ids)
            for p in preds[b]:
                new &= dom[p]
            new |= {b}
            if new != dom[b]:
                dom[b] = new
                changed = True

    rsuccs = {b: (succs[b] or [_EXITV]) for b in ids}
    universe = set(ids) | {_EXITV}
    pdom = {b: set(universe) for b in ids}
    pdom[_EXITV] = {_EXITV}
    changed = True
    while changed:
        changed = False
        for b in ids:
            new = set(universe)
            for s in rsuccs[b]:
                new &= pdom[s]
            new |= {b}
            if new != pdom[b]:
                pdom[b] = new
                changed = True

    return ControlFlowGraph(
        blocks=list(blocks), entry=0,
        dom={b: frozenset(dom[b]) for b in ids},
        pdom={b: frozenset(pdom[b] - {_EXITV}) for b in ids})


def build_program_cfg(program: Program) -> ControlFlowGraph:
    return build_cfg(find_basic_blocks(program))


def control_equivalent(cfg: ControlFlowGraph, b: int) -> set[int]:
    """Blocks executed iff ``b`` executes: two-sided dom/post-dom."""
    out = {b}
    for c in (blk.id for blk in cfg.blocks):
        if c == b:
            continue
        if (cfg.dominates(b, c) and cfg.postdominates(c, b)) or \
           (cfg.dominates(c, b) and cfg.postdominates(b, c)):
            out.add(c)
    return out


def candidate_blocks(cfg: ControlFlowGraph, b: int) -> set[int]:
    """Code-motion sources: control-equivalent blocks plus their dominated
    successors; ``b`` itself is never a source."""
    ce = control_equivalent(cfg, b) - {b}
    out = set(ce)
    for x in ce:
        for s in cfg.blocks[x].successors:
            if s != b and cfg.dominates(x, s):
                out.add(s)
    return out


# ---------------------------------------------------------------------------
# liveness
# ---------------------------------------------------------------------------

def _covers(d, k) -> bool:
    """True when a write of symbol d definitely overwrites all of k."""
    if d == k and d[0] in ("reg",):
        return True
    if d[0] == "stack" and k[0] == "stack" and len(d) == 3 and len(k) == 3:
        return d[1] <= k[1] and k[2] <= d[2]
    return False


def _kill(live: set, defs) -> set:
    return {s for s in live if not any(_covers(d, s) for d in defs)}


@dataclass
class LivenessInfo:
    cfg: ControlFlowGraph
    use: dict[int, frozenset]
    defs: dict[int, frozenset]
    live_in: dict[int, frozenset]
    live_out: dict[int, frozenset]


def liveness(cfg: ControlFlowGraph, program: Program) -> LivenessInfo:
    """Backward dataflow to the least fixed point. Memory-region symbols
    participate like registers; only register writes and exact stack
    ranges kill (anything else is an over-approximation kept live)."""
    use: dict[int, set] = {}
    defs: dict[int, set] = {}
    for blk in cfg.blocks:
        u: set = set()
        d: set = set()
        for i in blk.indices():
            io = io_sets(program[i])
            u |= {s for s in io.inputs if not any(_covers(x, s) for x in d)}
            d |= io.outputs
        use[blk.id] = u
        defs[blk.id] = d

    live_in = {b.id: set() for b in cfg.blocks}
    live_out = {b.id: set() for b in cfg.blocks}
    changed = True
    while changed:
        changed = False
        for blk in reversed(cfg.blocks):
            out: set = set()
            for s in blk.successors:
                out |= live_in[s]
            new_in = use[blk.id] | _kill(out, defs[blk.id])
            if out != live_out[blk.id] or new_in != live_in[blk.id]:
                live_out[blk.id] = out
                live_in[blk.id] = new_in
                changed = True

    return LivenessInfo(cfg,
                        {b: frozenset(use[b]) for b in use},
                        {b: frozenset(defs[b]) for b in defs},
                        {b: frozenset(live_in[b]) for b in live_in},
                        {b: frozenset(live_out[b]) for b in live_out})


def live_before(info: LivenessInfo, program: Program, block_id: int,
                index: int) -> frozenset:
    """Symbols live immediately before instruction ``index`` of a block."""
    blk = info.cfg.blocks[block_id]
    live = set(info.live_out[block_id])
    for i in range(blk.end, index - 1, -1):
        io = io_sets(program[i])
        live = _kill(live, io.outputs) | set(io.inputs)
    return frozenset(live)


# ---------------------------------------------------------------------------
# data dependence
# ---------------------------------------------------------------------------

@dataclass
class DataDependenceGraph:
    block_id: int
    nodes: list[int]                              # absolute instruction indices
    edges: dict[tuple[int, int], frozenset]       # (from, to) -> {RAW, WAR, WAW}
    preds: dict[int, set] = field(default_factory=dict)
    succs: dict[int, set] = field(default_factory=dict)

    def __post_init__(self):
        if not self.preds:
            self.preds = {n: set() for n in self.nodes}
            self.succs = {n: set() for n in self.nodes}
            for (i, j) in self.edges:
                self.succs[i].add(j)
                self.preds[j].add(i)

    def raw_preds(self, j: int) -> set:
        return {i for i in self.preds[j] if "RAW" in self.edges[(i, j)]}


def build_ddg(block: BasicBlock, program: Program,
              liveness_info: LivenessInfo | None = None) -> DataDependenceGraph:
    """RAW/WAR/WAW edges between a block's instructions, in program order."""
    nodes = list(block.indices())
    ios = {i: io_sets(program[i]) for i in nodes}
    edges: dict[tuple[int, int], frozenset] = {}
    for a, i in enumerate(nodes):
        for j in nodes[a + 1:]:
            kinds = set()
            if sets_conflict(ios[i].outputs, ios[j].inputs):
                kinds.add("RAW")
            if sets_conflict(ios[i].inputs, ios[j].outputs):
                kinds.add("WAR")
            if sets_conflict(ios[i].outputs, ios[j].outputs):
                kinds.add("WAW")
            if kinds:
                edges[(i, j)] = frozenset(kinds)
    return DataDependenceGraph(block.id, nodes, edges)


def bernstein_ok(i: Instruction, j: Instruction) -> bool:
    """True iff the two instructions may execute in parallel: both
    input/output crossings and the output/output intersection are empty."""
    a, b = io_sets(i), io_sets(j)
    return not (sets_conflict(a.inputs, b.outputs)
                or sets_conflict(a.outputs, b.inputs)
                or sets_conflict(a.outputs, b.outputs))


def n_checks(n: int) -> int:
    """Pairwise-check count a runtime scheduler needs for n instructions:
    three set tests per unordered pair."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return 3 * n * (n - 1) // 2


# ---------------------------------------------------------------------------
# dot export
# ---------------------------------------------------------------------------

def cfg_to_dot(cfg: ControlFlowGraph, program: Program) -> str:
    lines = ["digraph cfg {", "  node [shape=box, fontname=monospace];"]
    for blk in cfg.blocks:
        body = "\\l".join(
            f"{i}: {format_instruction(program[i])}" for i in blk.indices())
        lines.append(f'  b{blk.id} [label="B{blk.id}\\l{body}\\l"];')
        for s in blk.successors:
            lines.append(f"  b{blk.id} -> b{s};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def ddg_to_dot(ddg: DataDependenceGraph, program: Program) -> str:
    lines = ["digraph ddg {", "  node [shape=box, fontname=monospace];"]
    for n in ddg.nodes:
        lines.append(f'  n{n} [label="{n}: {format_instruction(program[n])}"];')
    for (i, j), kinds in sorted(ddg.edges.items()):
        lines.append(f'  n{i} -> n{j} [label="{",".join(sorted(kinds))}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
