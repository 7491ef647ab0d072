"""eBPF/XDP bytecode to VLIW schedule compiler with a cycle-accounting
simulator and a sequential interpreter as differential oracle."""

__version__ = "0.1.0"

from .asm import format_asm, parse_asm
from .isa import Instruction, Kind, MapDef, Program, decode, encode, io_sets

__all__ = ["Instruction", "Kind", "MapDef", "Program", "decode", "encode",
           "io_sets", "parse_asm", "format_asm", "__version__"]
