"""Input file formats: map configuration, hex packet lists, classic pcap."""

from __future__ import annotations

import struct

from .errors import XvliwError
from .isa import MapDef


class FormatError(XvliwError):
    pass


def parse_map_config(text: str):
    """Map configuration: `map <id> <kind> <key> <value> <max_entries>`
    lines plus optional `init <id> <key hex> <value hex>` entries.
    Returns (defs, inits)."""
    defs: list[MapDef] = []
    inits: list[tuple[int, bytes, bytes]] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "map":
                defs.append(MapDef(int(parts[1]), parts[2], int(parts[3]),
                                   int(parts[4]), int(parts[5])))
            elif parts[0] == "init":
                inits.append((int(parts[1]), bytes.fromhex(parts[2]),
                              bytes.fromhex(parts[3])))
            else:
                raise FormatError(f"map config line {line_no}: "
                                  f"unknown directive {parts[0]!r}")
        except (IndexError, ValueError) as exc:
            raise FormatError(f"map config line {line_no}: {exc}") from exc
    return defs, inits


def format_map_config(defs, inits=()):
    lines = [f"map {m.id} {m.kind} {m.key_size} {m.value_size} {m.max_entries}"
             for m in defs]
    lines += [f"init {mid} {key.hex()} {value.hex()}" for mid, key, value in inits]
    return "\n".join(lines) + "\n"


def parse_hex_packets(text: str) -> list[bytes]:
    """One packet per line, hex digits, blank lines and # comments ignored."""
    out = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip().replace(" ", "")
        if not line:
            continue
        try:
            out.append(bytes.fromhex(line))
        except ValueError as exc:
            raise FormatError(f"packet line {line_no}: {exc}") from exc
    return out


_PCAP_MAGICS = {
    0xA1B2C3D4: ("<", False), 0xD4C3B2A1: (">", False),
    0xA1B23C4D: ("<", True), 0x4D3CB2A1: (">", True),
}


def parse_pcap(data: bytes) -> list[bytes]:
    """Minimal classic-pcap reader (both byte orders, usec/nsec)."""
    if len(data) < 24:
        raise FormatError("pcap: truncated global header")
    magic = struct.unpack("<I", data[:4])[0]
    if magic not in _PCAP_MAGICS:
        raise FormatError(f"pcap: bad magic 0x{magic:08x}")
    endian, _nsec = _PCAP_MAGICS[magic]
    packets = []
    off = 24
    while off < len(data):
        if off + 16 > len(data):
            raise FormatError("pcap: truncated record header")
        _ts_sec, _ts_frac, incl, _orig = struct.unpack(
            endian + "IIII", data[off:off + 16])
        off += 16
        if off + incl > len(data):
            raise FormatError("pcap: truncated record body")
        packets.append(data[off:off + incl])
        off += incl
    return packets


def load_packets(path: str) -> list[bytes]:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) >= 4 and struct.unpack("<I", data[:4])[0] in _PCAP_MAGICS:
        return parse_pcap(data)
    return parse_hex_packets(data.decode())
