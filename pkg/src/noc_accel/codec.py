"""
137-bit flit format and packet segmentation.

A head flit carries routing and accelerator-invocation metadata in named
bit fields; body and tail flits carry 9 bits of routing/packet information
followed by 128 bits of payload. Payload bytes are packed little-endian,
byte 0 at bit 0 of each 128-bit chunk.
"""

from __future__ import annotations

from collections import namedtuple
from enum import Enum
from typing import Iterable, Optional, Sequence

FLIT_BITS = 137
FLIT_MASK = (1 << FLIT_BITS) - 1
BODY_PAYLOAD_BITS = 128
BODY_PAYLOAD_BYTES = BODY_PAYLOAD_BITS // 8
MAX_DATA_BYTES = (1 << 10) - 1

# name -> (lsb, width); order is most-significant first.
HEAD_FIELDS = {
    "routing_info": (130, 7),
    "packet_head_tail": (128, 2),
    "source_id": (125, 3),
    "hwa_id": (120, 5),
    "packet_type": (119, 1),
    "task_head_tail": (117, 2),
    "task_buffer_id": (115, 2),
    "chaining_depth": (113, 2),
    "chaining_index": (107, 6),
    "packet_priority": (105, 2),
    "packet_direction": (103, 2),
    "start_address": (71, 32),
    "data_size": (61, 10),
    "payload": (0, 61),
}

# packet_head_tail / task_head_tail flag values
HEAD = 0b10
TAIL = 0b01
HEAD_TAIL = 0b11
BODY = 0b00

PKT_COMMAND = 1
PKT_PAYLOAD = 0

DIR_DIRECT = 0b00
DIR_MEMORY = 0b01

# Command packets reuse task_head_tail to say which command they are.
CMD_REQUEST = 0b00
CMD_GRANT = 0b10
CMD_NOTIFY = 0b01

CHAIN_SLOTS = 3


class CodecError(ValueError):
    """Base class for flit/packet encoding errors."""


class FieldOverflow(CodecError):
    def __init__(self, name: str, value: int, width: int):
        super().__init__(f"field {name}={value} does not fit in {width} bits")
        self.name = name
        self.value = value
        self.width = width


class NotHeadFlit(CodecError):
    pass


class Oversize(CodecError):
    pass


class Malformed(CodecError):
    pass


class Flit:
    """One 137-bit word.

    ``tag`` is simulator side-band (task/packet bookkeeping for metrics). It
    never influences behaviour and is ignored by equality.
    """

    __slots__ = ("raw", "tag")

    def __init__(self, raw: int, tag=None):
        if raw < 0 or raw > FLIT_MASK:
            raise FieldOverflow("raw", raw, FLIT_BITS)
        self.raw = raw
        self.tag = tag

    def __eq__(self, other):
        return isinstance(other, Flit) and other.raw == self.raw

    def __hash__(self):
        return hash(self.raw)

    def __repr__(self):
        return f"Flit(0x{self.raw:035x})"

    @property
    def routing_info(self) -> int:
        return self.raw >> 130

    @property
    def head_tail(self) -> int:
        return (self.raw >> 128) & 0b11

    @property
    def is_head(self) -> bool:
        return bool(self.raw >> 129 & 1)

    @property
    def is_tail(self) -> bool:
        return bool(self.raw >> 128 & 1)

    def field(self, name: str) -> int:
        lsb, width = HEAD_FIELDS[name]
        return (self.raw >> lsb) & ((1 << width) - 1)

    def with_field(self, name: str, value: int) -> "Flit":
        lsb, width = HEAD_FIELDS[name]
        if value < 0 or value >> width:
            raise FieldOverflow(name, value, width)
        mask = ((1 << width) - 1) << lsb
        return Flit((self.raw & ~mask) | (value << lsb), self.tag)


_HeadBase = namedtuple("_HeadBase", list(HEAD_FIELDS), defaults=[0] * len(HEAD_FIELDS))


class HeadFields(_HeadBase):
    """Decoded head-flit fields. Every value is range-checked on construction."""

    __slots__ = ()

    def __new__(cls, routing_info=0, packet_head_tail=0, source_id=0, hwa_id=0,
                packet_type=0, task_head_tail=0, task_buffer_id=0, chaining_depth=0,
                chaining_index=0, packet_priority=0, packet_direction=0,
                start_address=0, data_size=0, payload=0):
        values = (routing_info, packet_head_tail, source_id, hwa_id, packet_type,
                  task_head_tail, task_buffer_id, chaining_depth, chaining_index,
                  packet_priority, packet_direction, start_address, data_size, payload)
        _check_widths(values)
        return tuple.__new__(cls, values)

    def _replace(self, **kwargs):
        return HeadFields(**{**self._asdict(), **kwargs})

    replace = _replace


def _check_widths(values: Sequence[int]) -> None:
    (routing, pht, src, hwa, ptype, tht, tb, depth, index,
     prio, direction, addr, size, payload) = values
    # a negative value shifts to -1, so one OR catches both failure modes
    if (routing >> 7 | pht >> 2 | src >> 3 | hwa >> 5 | ptype >> 1 | tht >> 2 | tb >> 2
            | depth >> 2 | index >> 6 | prio >> 2 | direction >> 2 | addr >> 32
            | size >> 10 | payload >> 61):
        for (name, (_, width)), value in zip(HEAD_FIELDS.items(), values):
            if value < 0 or value >> width:
                raise FieldOverflow(name, value, width)


def encode_head(fields: HeadFields) -> Flit:
    if type(fields) is not HeadFields:
        _check_widths(fields)
    (routing, pht, src, hwa, ptype, tht, tb, depth, index,
     prio, direction, addr, size, payload) = fields
    # assemble the top 66 bits first; keeps most shifts on two-digit ints
    upper = (routing << 59 | pht << 57 | src << 54 | hwa << 49 | ptype << 48 | tht << 46
             | tb << 44 | depth << 42 | index << 36 | prio << 34 | direction << 32 | addr)
    raw = upper << 71 | size << 61 | payload
    return Flit(raw)


def decode_head(flit: Flit) -> HeadFields:
    raw = flit.raw
    if not raw >> 129 & 1:
        raise NotHeadFlit(f"packet_head flag clear in {flit!r}")
    # fields decoded from a 137-bit word cannot overflow; skip the checks
    return tuple.__new__(HeadFields, (
        raw >> 130,
        raw >> 128 & 0x3,
        raw >> 125 & 0x7,
        raw >> 120 & 0x1F,
        raw >> 119 & 0x1,
        raw >> 117 & 0x3,
        raw >> 115 & 0x3,
        raw >> 113 & 0x3,
        raw >> 107 & 0x3F,
        raw >> 105 & 0x3,
        raw >> 103 & 0x3,
        raw >> 71 & 0xFFFFFFFF,
        raw >> 61 & 0x3FF,
        raw & 0x1FFFFFFFFFFFFFFF,
    ))


def encode_body(routing_and_packet_info: int, payload: int) -> Flit:
    if routing_and_packet_info < 0 or routing_and_packet_info >> 9:
        raise FieldOverflow("routing_and_packet_info", routing_and_packet_info, 9)
    if payload < 0 or payload >> BODY_PAYLOAD_BITS:
        raise FieldOverflow("payload", payload, BODY_PAYLOAD_BITS)
    return Flit(routing_and_packet_info << 128 | payload)


def decode_body(flit: Flit) -> tuple[int, int]:
    return flit.raw >> 128, flit.raw & ((1 << BODY_PAYLOAD_BITS) - 1)


# -- routing info -------------------------------------------------------------

def encode_routing(x: int, y: int, sub: int = 0) -> int:
    """{3-bit X, 3-bit Y, 1-bit local endpoint select}."""
    if not (0 <= x < 8 and 0 <= y < 8 and sub in (0, 1)):
        raise FieldOverflow("routing_info", (x, y, sub), 7)
    return x << 4 | y << 1 | sub


def decode_routing(info: int) -> tuple[int, int, int]:
    return info >> 4 & 0x7, info >> 1 & 0x7, info & 1


# -- chaining index -----------------------------------------------------------

def pack_chain_index(entries: Sequence[int]) -> int:
    """Pack up to three 2-bit chain entries, front entry in the top bits."""
    if len(entries) > CHAIN_SLOTS:
        raise FieldOverflow("chaining_index", len(entries), CHAIN_SLOTS)
    value = 0
    for i in range(CHAIN_SLOTS):
        e = entries[i] if i < len(entries) else 0
        if e < 0 or e > 3:
            raise FieldOverflow("chaining_index", e, 2)
        value = value << 2 | e
    return value


def unpack_chain_index(index: int, depth: int) -> list[int]:
    return [(index >> (4 - 2 * i)) & 0x3 for i in range(depth)]


def chain_front(index: int) -> int:
    return index >> 4 & 0x3


def shift_chain_index(index: int) -> int:
    return (index << 2) & 0x3F


# -- packets ------------------------------------------------------------------

class PacketKind(Enum):
    COMMAND = "command"
    PAYLOAD = "payload"
    GRANT = "grant"
    NOTIFY = "notify"
    RESULT = "result"


SINGLE_FLIT_KINDS = (PacketKind.COMMAND, PacketKind.GRANT, PacketKind.NOTIFY)


class Packet:
    __slots__ = ("flits", "kind")

    def __init__(self, flits: Sequence[Flit], kind: PacketKind):
        flits = tuple(flits)
        _check_packet(flits, kind)
        self.flits = flits
        self.kind = kind

    def __len__(self):
        return len(self.flits)

    def __repr__(self):
        return f"Packet({self.kind.value}, {len(self.flits)} flits)"

    @property
    def head(self) -> HeadFields:
        return decode_head(self.flits[0])


def _check_packet(flits: Sequence[Flit], kind: PacketKind) -> None:
    if not flits:
        raise Malformed("empty packet")
    if kind in SINGLE_FLIT_KINDS and len(flits) != 1:
        raise Malformed(f"{kind.value} packets have exactly one flit, got {len(flits)}")
    last = len(flits) - 1
    routing = flits[0].raw >> 130
    for i, f in enumerate(flits):
        ht = f.raw >> 128 & 0b11
        want = (HEAD if i == 0 else 0) | (TAIL if i == last else 0)
        if ht != want:
            raise Malformed(f"flit {i} has head/tail flags {ht:02b}, expected {want:02b}")
        if f.raw >> 130 != routing:
            raise Malformed(f"flit {i} routing_info differs from head")


def command_packet(fields: HeadFields, kind: PacketKind = PacketKind.COMMAND, tag=None) -> Packet:
    fields = fields._replace(packet_head_tail=HEAD_TAIL, packet_type=PKT_COMMAND)
    flit = encode_head(fields)
    flit.tag = tag
    return Packet((flit,), kind)


def segment(data: bytes, header: HeadFields, kind: PacketKind = PacketKind.PAYLOAD,
            tag=None) -> Packet:
    """Split ``data`` into a head flit plus ceil(len/16) body/tail flits."""
    if len(data) > MAX_DATA_BYTES:
        raise Oversize(f"{len(data)} bytes exceeds the {MAX_DATA_BYTES}-byte data_size field")
    nbody = -(-len(data) // BODY_PAYLOAD_BYTES)
    head = header._replace(
        packet_head_tail=HEAD_TAIL if nbody == 0 else HEAD,
        packet_type=PKT_PAYLOAD,
        data_size=len(data),
        payload=0,
    )
    first = encode_head(head)
    first.tag = tag
    flits = [first]
    top = head.routing_info << 2
    for i in range(nbody):
        chunk = data[i * BODY_PAYLOAD_BYTES:(i + 1) * BODY_PAYLOAD_BYTES]
        ht = TAIL if i == nbody - 1 else BODY
        f = Flit((top | ht) << 128 | int.from_bytes(chunk, "little"), tag)
        flits.append(f)
    return Packet(flits, kind)


def reassemble(packet: Packet) -> bytes:
    flits = packet.flits
    _check_packet(flits, packet.kind)
    size = decode_head(flits[0]).data_size
    if -(-size // BODY_PAYLOAD_BYTES) != len(flits) - 1:
        raise Malformed(f"data_size {size} inconsistent with {len(flits) - 1} body flits")
    mask = (1 << BODY_PAYLOAD_BITS) - 1
    data = b"".join((f.raw & mask).to_bytes(BODY_PAYLOAD_BYTES, "little") for f in flits[1:])
    return data[:size]


def payload_flit_count(nbytes: int) -> int:
    return 1 + -(-nbytes // BODY_PAYLOAD_BYTES)


# -- hex dump -----------------------------------------------------------------

def dump_hex(flits: Iterable[Flit]) -> str:
    return "".join(f"{f.raw:035x}\n" for f in flits)


def load_hex(text: str) -> list[Flit]:
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if len(line) != 35:
            raise Malformed(f"line {lineno}: expected 35 hex digits, got {len(line)}")
        out.append(Flit(int(line, 16)))
    return out


def describe(flit: Flit) -> Optional[dict]:
    """Field dictionary of a head flit, or None for body/tail flits."""
    if not flit.is_head:
        return None
    return decode_head(flit)._asdict()
