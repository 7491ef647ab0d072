"""Textual assembly front end.

Kernel-style mnemonics plus the infix sugar used throughout the listings:

    r4 = r1                 ; mov
    r4 += 20                ; two-operand alu
    r4 = r1 + 20            ; three-operand alu (extended ISA)
    r2 = *(u32 *)(r1 + 0)   ; loads (u8/u16/u32/u48/u64)
    *(u16 *)(r10 - 8) = r5  ; stores, register or immediate source
    if r4 > r3 goto drop    ; conditional branches
    goto out / call 1 / call map_lookup / exit / early_exit 1
    r1 = map[3]             ; lddw map reference
    r1 = 0x11223344aabb ll  ; lddw 64-bit immediate
    .map 3 hash 4 8 64      ; map definition directive

Labels are ``name:`` on their own line. ``w`` registers select the 32-bit
ALU forms. Comments start with ``;`` or ``#``.
"""

from __future__ import annotations

import re
from dataclasses import replace

from .errors import AsmSyntaxError, UndefinedLabel, UnknownMnemonic
from .isa import (
    ALU3_OPS,
    Instruction,
    Kind,
    MapDef,
    Program,
    build_program,
)

ALU_SYMS = {"+=": "add", "-=": "sub", "*=": "mul", "/=": "div", "%=": "mod",
            "&=": "and", "|=": "or", "^=": "xor", "<<=": "lsh", ">>=": "rsh",
            "s>>=": "arsh"}
ALU_INFIX = {"+": "add", "-": "sub", "*": "mul", "/": "div", "%": "mod",
             "&": "and", "|": "or", "^": "xor", "<<": "lsh", ">>": "rsh",
             "s>>": "arsh"}
CMP_SYMS = {"==": "jeq", "!=": "jne", ">": "jgt", ">=": "jge", "<": "jlt",
            "<=": "jle", "s>": "jsgt", "s>=": "jsge", "s<": "jslt",
            "s<=": "jsle", "&": "jset"}
_ALU_FOR = {v: k for k, v in ALU_SYMS.items()}
_INFIX_FOR = {v: k for k, v in ALU_INFIX.items()}
_CMP_FOR = {v: k for k, v in CMP_SYMS.items()}
WIDTH_NAMES = {"u8": 1, "u16": 2, "u32": 4, "u48": 6, "u64": 8}
_WIDTH_FOR = {v: k for k, v in WIDTH_NAMES.items()}

HELPER_NAMES = {"map_lookup": 1, "map_update": 2, "map_delete": 3,
                "csum_diff": 28, "adjust_head": 44, "redirect_map": 51}
_HELPER_FOR = {v: k for k, v in HELPER_NAMES.items()}

_REG = r"([rw])(\d+)"
_IMM = r"(-?(?:0x[0-9a-fA-F]+|\d+))"
_LABEL = r"([A-Za-z_][A-Za-z0-9_]*)"

_re_label = re.compile(rf"^{_LABEL}:$")
_re_mov_reg = re.compile(rf"^{_REG}\s*=\s*{_REG}$")
_re_mov_imm = re.compile(rf"^{_REG}\s*=\s*{_IMM}$")
_re_lddw = re.compile(rf"^r(\d+)\s*=\s*{_IMM}\s+ll$")
_re_map_ref = re.compile(rf"^r(\d+)\s*=\s*map\[{_IMM}\]$")
_re_alu = re.compile(rf"^{_REG}\s*(s>>=|<<=|>>=|[-+*/%&|^]=)\s*(?:{_REG}|{_IMM})$")
_re_alu3 = re.compile(
    rf"^r(\d+)\s*=\s*r(\d+)\s*(s>>|<<|>>|[-+*/%&|^])\s*(?:r(\d+)|{_IMM})$")
_re_neg = re.compile(rf"^{_REG}\s*=\s*-\s*{_REG}$")
_re_end = re.compile(rf"^{_REG}\s*=\s*(be|le)(16|32|64)\s+{_REG}$")
_re_load = re.compile(
    rf"^r(\d+)\s*=\s*\*\((u8|u16|u32|u48|u64)\s*\*\)\s*\(\s*r(\d+)\s*([-+])\s*{_IMM}\s*\)$")
_re_store = re.compile(
    rf"^\*\((u8|u16|u32|u48|u64)\s*\*\)\s*\(\s*r(\d+)\s*([-+])\s*{_IMM}\s*\)"
    rf"\s*=\s*(?:r(\d+)|{_IMM})$")
_re_branch = re.compile(
    rf"^if\s+{_REG}\s*(s>=|s<=|s>|s<|==|!=|>=|<=|>|<|&)\s*(?:{_REG}|{_IMM})"
    rf"\s+goto\s+(@?\w+)$")
_re_goto = re.compile(r"^goto\s+(@?\w+)$")
_re_call = re.compile(r"^call\s+(\w+)$")
_re_early = re.compile(rf"^early_exit\s+{_IMM}$")
_re_map_def = re.compile(
    rf"^\.map\s+(\d+)\s+(array|hash|lru_hash)\s+(\d+)\s+(\d+)\s+(\d+)$")


def _int(text):
    """32-bit immediate; hex literals up to 0xffffffff take their two's
    complement value, matching the wire format's signed field."""
    v = int(text, 0)
    if 1 << 31 <= v < 1 << 32:
        v -= 1 << 32
    return v


def parse_asm(text: str) -> Program:
    """Parse assembly text into a validated Program."""
    instrs, maps, labels, fixups = _parse_lines(text)
    resolved = []
    for idx, ins in enumerate(instrs):
        if idx in fixups:
            name, line_no = fixups[idx]
            if name not in labels:
                raise UndefinedLabel(line_no, f"undefined label {name!r}")
            ins = replace(ins, target=labels[name])
        resolved.append(ins)
    return build_program(resolved, maps)


def _parse_lines(text):
    instrs: list[Instruction] = []
    maps: list[MapDef] = []
    labels: dict[str, int] = {}
    fixups: dict[int, tuple[str, int]] = {}

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = re.split(r"[;#]", raw, maxsplit=1)[0].strip()
        if not line:
            continue
        m = _re_label.match(line)
        if m:
            labels[m.group(1)] = len(instrs)
            continue
        m = _re_map_def.match(line)
        if m:
            maps.append(MapDef(int(m.group(1)), m.group(2), int(m.group(3)),
                               int(m.group(4)), int(m.group(5))))
            continue
        ins, label = _parse_instruction(line, line_no)
        if label is not None:
            fixups[len(instrs)] = (label, line_no)
        instrs.append(ins)
    return instrs, maps, labels, fixups


def parse_instruction(line: str, line_no: int = 0) -> Instruction:
    """Parse a single instruction (no label targets). Used by the dump loader."""
    ins, label = _parse_instruction(line.strip(), line_no)
    if label is not None:
        raise AsmSyntaxError(line_no, "only @row targets allowed here")
    return ins


def _parse_instruction(line, line_no):
    if line == "exit":
        return Instruction(Kind.EXIT), None
    m = _re_early.match(line)
    if m:
        return Instruction(Kind.EARLY_EXIT, imm=_int(m.group(1))), None
    m = _re_goto.match(line)
    if m:
        t = m.group(1)
        if t.startswith("@"):
            return Instruction(Kind.JUMP_ALWAYS, target=int(t[1:])), None
        return Instruction(Kind.JUMP_ALWAYS, target=0), t
    m = _re_call.match(line)
    if m:
        name = m.group(1)
        if name.isdigit():
            return Instruction(Kind.CALL, imm=int(name)), None
        if name not in HELPER_NAMES:
            raise UnknownMnemonic(line_no, f"unknown helper {name!r}")
        return Instruction(Kind.CALL, imm=HELPER_NAMES[name]), None
    m = _re_branch.match(line)
    if m:
        lcls, lreg, op, rcls, rreg, imm, target = m.groups()
        if rcls is not None and lcls != rcls:
            raise AsmSyntaxError(line_no, "mixed r/w registers in compare")
        if lcls == "w":
            raise UnknownMnemonic(line_no, "32-bit conditional jumps are unsupported")
        kw = dict(op=CMP_SYMS[op], dst=int(lreg))
        if rreg is not None:
            kw["src"] = int(rreg)
        else:
            kw["imm"] = _int(imm)
        if target.startswith("@"):
            return Instruction(Kind.BRANCH, target=int(target[1:]), **kw), None
        return Instruction(Kind.BRANCH, target=0, **kw), target
    m = _re_load.match(line)
    if m:
        dst, wname, base, sign, off = m.group(1), m.group(2), m.group(3), m.group(4), m.group(5)
        width = WIDTH_NAMES[wname]
        offset = _int(off) * (-1 if sign == "-" else 1)
        kind = Kind.LOAD48 if width == 6 else Kind.LOAD
        return Instruction(kind, width=width, dst=int(dst), src=int(base),
                           offset=offset), None
    m = _re_store.match(line)
    if m:
        wname, base, sign, off, srcreg, imm = m.groups()
        width = WIDTH_NAMES[wname]
        offset = _int(off) * (-1 if sign == "-" else 1)
        if width == 6:
            if srcreg is None:
                raise AsmSyntaxError(line_no, "store48 needs a register source")
            return Instruction(Kind.STORE48, width=6, dst=int(base),
                               src=int(srcreg), offset=offset), None
        if srcreg is not None:
            return Instruction(Kind.STORE, width=width, dst=int(base),
                               src=int(srcreg), offset=offset), None
        return Instruction(Kind.STORE, width=width, dst=int(base),
                           offset=offset, imm=_int(imm)), None
    m = _re_alu3.match(line)
    if m:
        dst, src, op, src2, imm = m.groups()
        name = ALU_INFIX[op]
        if name not in ALU3_OPS:
            raise UnknownMnemonic(line_no, f"{op} not valid in three-operand form")
        if src2 is not None:
            return Instruction(Kind.ALU_THREE_OP, op=name, width=64, dst=int(dst),
                               src=int(src), src2=int(src2)), None
        return Instruction(Kind.ALU_THREE_OP, op=name, width=64, dst=int(dst),
                           src=int(src), imm=_int(imm)), None
    m = _re_neg.match(line)
    if m:
        dcls, dst, scls, src = m.groups()
        if dst != src or dcls != scls:
            raise AsmSyntaxError(line_no, "negation must be rX = -rX")
        return Instruction(Kind.ALU_UNARY, op="neg",
                           width=64 if dcls == "r" else 32, dst=int(dst)), None
    m = _re_end.match(line)
    if m:
        dcls, dst, op, bits, scls, src = m.groups()
        if dst != src:
            raise AsmSyntaxError(line_no, "byteswap must be rX = be16 rX")
        return Instruction(Kind.ALU_UNARY, op=op, width=64 if dcls == "r" else 32,
                           dst=int(dst), imm=int(bits)), None
    m = _re_lddw.match(line)
    if m:
        return Instruction(Kind.LOAD_IMM64, dst=int(m.group(1)),
                           imm=int(m.group(2), 0) & 0xFFFFFFFFFFFFFFFF), None
    m = _re_map_ref.match(line)
    if m:
        return Instruction(Kind.LOAD_IMM64, dst=int(m.group(1)), src=1,
                           imm=_int(m.group(2))), None
    m = _re_mov_reg.match(line)
    if m:
        dcls, dst, scls, src = m.groups()
        if dcls != scls:
            raise AsmSyntaxError(line_no, "mixed r/w registers in mov")
        return Instruction(Kind.MOV_REG, width=64 if dcls == "r" else 32,
                           dst=int(dst), src=int(src)), None
    m = _re_mov_imm.match(line)
    if m:
        cls, dst, imm = m.groups()
        return Instruction(Kind.MOV_IMM, width=64 if cls == "r" else 32,
                           dst=int(dst), imm=_int(imm)), None
    m = _re_alu.match(line)
    if m:
        dcls, dst, op, scls, src, imm = m.groups()
        name = ALU_SYMS[op]
        width = 64 if dcls == "r" else 32
        if src is not None:
            if dcls != scls:
                raise AsmSyntaxError(line_no, "mixed r/w registers in alu op")
            return Instruction(Kind.ALU_BINARY, op=name, width=width,
                               dst=int(dst), src=int(src)), None
        return Instruction(Kind.ALU_BINARY, op=name, width=width,
                           dst=int(dst), imm=_int(imm)), None
    raise AsmSyntaxError(line_no, f"cannot parse {line!r}")


# ---------------------------------------------------------------------------
# formatting
# ---------------------------------------------------------------------------

def format_instruction(ins: Instruction, target_text=None) -> str:
    """Render one instruction; branch target via ``target_text`` override."""
    k = ins.kind
    if k is Kind.EXIT:
        return "exit"
    if k is Kind.EARLY_EXIT:
        return f"early_exit {ins.imm}"
    if k is Kind.JUMP_ALWAYS:
        return f"goto {target_text or f'@{ins.target}'}"
    if k is Kind.CALL:
        return f"call {_HELPER_FOR.get(ins.imm, ins.imm)}"
    if k is Kind.BRANCH:
        rhs = f"r{ins.src}" if ins.src is not None else str(ins.imm)
        return (f"if r{ins.dst} {_CMP_FOR[ins.op]} {rhs} "
                f"goto {target_text or f'@{ins.target}'}")
    if k is Kind.MOV_REG:
        c = "r" if ins.width == 64 else "w"
        return f"{c}{ins.dst} = {c}{ins.src}"
    if k is Kind.MOV_IMM:
        c = "r" if ins.width == 64 else "w"
        return f"{c}{ins.dst} = {ins.imm}"
    if k is Kind.LOAD_IMM64:
        if ins.is_map_ref:
            return f"r{ins.dst} = map[{ins.imm}]"
        return f"r{ins.dst} = 0x{ins.imm:x} ll"
    if k is Kind.ALU_UNARY:
        c = "r" if ins.width == 64 else "w"
        if ins.op == "neg":
            return f"{c}{ins.dst} = -{c}{ins.dst}"
        return f"{c}{ins.dst} = {ins.op}{ins.imm} {c}{ins.dst}"
    if k is Kind.ALU_BINARY:
        c = "r" if ins.width == 64 else "w"
        rhs = f"{c}{ins.src}" if ins.src is not None else str(ins.imm)
        return f"{c}{ins.dst} {_ALU_FOR[ins.op]} {rhs}"
    if k is Kind.ALU_THREE_OP:
        rhs = f"r{ins.src2}" if ins.src2 is not None else str(ins.imm)
        return f"r{ins.dst} = r{ins.src} {_INFIX_FOR[ins.op]} {rhs}"
    if k in (Kind.LOAD, Kind.LOAD48):
        sign, off = ("-", -ins.offset) if ins.offset < 0 else ("+", ins.offset)
        return (f"r{ins.dst} = *({_WIDTH_FOR[ins.width]} *)"
                f"(r{ins.src} {sign} {off})")
    if k in (Kind.STORE, Kind.STORE48):
        sign, off = ("-", -ins.offset) if ins.offset < 0 else ("+", ins.offset)
        lhs = f"*({_WIDTH_FOR[ins.width]} *)(r{ins.dst} {sign} {off})"
        rhs = f"r{ins.src}" if ins.src is not None else str(ins.imm)
        return f"{lhs} = {rhs}"
    raise AssertionError(f"unhandled kind {k}")


def format_asm(program: Program) -> str:
    """Render a Program as assembly; parse_asm(format_asm(p)) == p."""
    targets = {ins.target for ins in program.instructions
               if ins.kind in (Kind.BRANCH, Kind.JUMP_ALWAYS)}
    lines = []
    for m in program.maps:
        lines.append(f".map {m.id} {m.kind} {m.key_size} {m.value_size} "
                     f"{m.max_entries}")
    for i, ins in enumerate(program.instructions):
        if i in targets:
            lines.append(f"L{i}:")
        if ins.kind in (Kind.BRANCH, Kind.JUMP_ALWAYS):
            lines.append(f"  {format_instruction(ins, target_text=f'L{ins.target}')}")
        else:
            lines.append(f"  {format_instruction(ins)}")
    return "\n".join(lines) + "\n"
