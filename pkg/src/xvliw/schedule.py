"""Schedule containers and the stable text dump format.

``BlockSchedule`` holds one block's rows while the compiler is working;
``VliwProgram`` is the assembled whole-program artifact the simulator
executes. Both obey the same row invariants (pairwise parallelizability,
branch ordering, one helper per row, per-lane forwarding); the simulator
revalidates on load.

In a ``VliwProgram`` branch targets are row indices; the dump format
writes them as ``@row``. One row per line::

    lane0 | lane1 | lane2 | lane3        # b0.2 b0.4m - -

Empty slots print ``---``; the provenance comment names the originating
block and instruction index per occupied lane, with ``m`` marking moved
instructions.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .asm import format_instruction, parse_instruction
from .errors import AsmSyntaxError
from .isa import Instruction, Kind


@dataclass(frozen=True)
class LaneConstraints:
    lanes: int = 4
    branch_lane_priority: bool = True
    helpers_per_row: int = 1
    forwarding: str = "per-lane"     # back-to-back dependents share a lane

    def __post_init__(self):
        if not 1 <= self.lanes <= 8:
            raise ValueError("lane count must be in [1, 8]")


@dataclass
class Slot:
    instr: Instruction
    src_block: int
    src_index: int
    moved: bool = False


@dataclass
class BlockSchedule:
    block_id: int
    rows: list[list[Slot]]           # occupied slots only, order pre-lane

    def instruction_count(self):
        return sum(len(r) for r in self.rows)


@dataclass
class VliwProgram:
    lane_count: int
    rows: list[list[Slot | None]]    # lane-indexed, fixed width
    row_block: list[int] = field(default_factory=list)
    maps: tuple = ()

    @property
    def row_count(self):
        return len(self.rows)

    @property
    def instruction_count(self):
        return sum(1 for row in self.rows for s in row if s is not None)

    @property
    def static_ipc(self):
        return self.instruction_count / len(self.rows) if self.rows else 0.0

    def row_slots(self, r):
        return [s for s in self.rows[r] if s is not None]

    def dump(self) -> str:
        lines = [f"# xvliw schedule lanes={self.lane_count}"]
        for r, row in enumerate(self.rows):
            cells = []
            prov = []
            for s in row:
                if s is None:
                    cells.append("---")
                    prov.append("-")
                else:
                    cells.append(format_instruction(s.instr))
                    prov.append(f"b{s.src_block}.{s.src_index}"
                                + ("m" if s.moved else ""))
            lines.append(f"{' | '.join(cells)}    # {' '.join(prov)}")
        return "\n".join(lines) + "\n"


def parse_dump(text: str, maps=()) -> VliwProgram:
    """Load a schedule dump (hand-edited ones included; provenance optional)."""
    lanes = None
    rows: list[list[Slot | None]] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if "lanes=" in line and lanes is None:
                lanes = int(line.split("lanes=")[1].split()[0])
            continue
        body, _, comment = line.partition("#")
        cells = [c.strip() for c in body.split("|")]
        prov = comment.split() if comment else []
        if lanes is None:
            lanes = len(cells)
        if len(cells) != lanes:
            raise AsmSyntaxError(line_no, f"expected {lanes} lanes, got {len(cells)}")
        row: list[Slot | None] = []
        for lane, cell in enumerate(cells):
            if cell in ("---", ""):
                row.append(None)
                continue
            ins = parse_instruction(cell, line_no)
            src_block, src_index, moved = -1, -1, False
            if lane < len(prov) and prov[lane] not in ("-", ""):
                tag = prov[lane]
                moved = tag.endswith("m")
                tag = tag.rstrip("m")
                try:
                    src_block = int(tag.split(".")[0].lstrip("b"))
                    src_index = int(tag.split(".")[1])
                except (ValueError, IndexError):
                    pass
            row.append(Slot(ins, src_block, src_index, moved))
        rows.append(row)
    if not rows:
        raise AsmSyntaxError(0, "empty schedule dump")
    for r, row in enumerate(rows):
        for s in row:
            if s is not None and s.instr.kind in (Kind.BRANCH, Kind.JUMP_ALWAYS):
                if s.instr.target is None or not 0 <= s.instr.target < len(rows):
                    raise AsmSyntaxError(r + 1, "branch row target out of range")
    return VliwProgram(lane_count=lanes, rows=rows,
                       row_block=[-1] * len(rows), maps=tuple(maps))


def retarget(ins: Instruction, row: int) -> Instruction:
    return replace(ins, target=row)
