"""Wire messages and their canonical binary layout.

Layout: one tag byte, then each field in declaration order.

* ``V``     Value256, 32 raw bytes
* ``VL``    list of Value256: 4-byte BE count, then 32 bytes each
* ``TS``    timestamp, 8-byte BE unsigned milliseconds
* ``BYTES`` 4-byte BE length, then the bytes
* ``BOOL``  one byte, 0 or 1
* ``?X``    optional field: one presence byte (0/1), then ``X`` if present

Adversary tampering and trace payloads both operate on this encoding, so it
must stay bit-exact.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import ClassVar, Optional, Union

from .crypto import Value256


class DecodeError(ValueError):
    pass


@dataclass(frozen=True)
class RegReq:
    TAG: ClassVar[int] = 0x01
    LAYOUT: ClassVar[tuple[str, ...]] = ("V",)
    id: Value256


@dataclass(frozen=True)
class RegChallenge:
    TAG: ClassVar[int] = 0x02
    LAYOUT: ClassVar[tuple[str, ...]] = ("V", "VL")
    c: Value256
    c_add: tuple[Value256, ...]


@dataclass(frozen=True)
class RegResponse:
    TAG: ClassVar[int] = 0x03
    LAYOUT: ClassVar[tuple[str, ...]] = ("V", "VL")
    r: Value256
    r_add: tuple[Value256, ...]


@dataclass(frozen=True)
class RegIssue:
    TAG: ClassVar[int] = 0x04
    LAYOUT: ClassVar[tuple[str, ...]] = ("V", "V")
    beta: Value256
    k: Value256


@dataclass(frozen=True)
class M1:
    TAG: ClassVar[int] = 0x11
    LAYOUT: ClassVar[tuple[str, ...]] = ("V", "V", "?TS", "?V")
    beta_u: Value256
    n1: Value256
    ts: Optional[int] = None
    v1: Optional[Value256] = None


@dataclass(frozen=True)
class M2:
    TAG: ClassVar[int] = 0x12
    LAYOUT: ClassVar[tuple[str, ...]] = ("V", "V", "V", "V", "V", "?V", "?TS")
    n2: Value256
    k_u_star: Value256
    c_u_star: Value256
    sk_u_star: Value256
    beta_u_new: Value256
    j: Optional[Value256] = None
    ts: Optional[int] = None


@dataclass(frozen=True)
class M3:
    TAG: ClassVar[int] = 0x13
    LAYOUT: ClassVar[tuple[str, ...]] = ("V", "V", "V", "?TS")
    r_u_star: Value256
    n3: Value256
    beta_sn: Value256
    ts: Optional[int] = None


@dataclass(frozen=True)
class M4:
    TAG: ClassVar[int] = 0x14
    LAYOUT: ClassVar[tuple[str, ...]] = ("V", "V", "V", "V", "V", "V", "?V", "?TS")
    n4: Value256
    beta_u: Value256
    k_sn_star: Value256
    c_sn_star: Value256
    sk_sn_star: Value256
    beta_sn_new: Value256
    auth_sn: Optional[Value256] = None
    ts: Optional[int] = None


@dataclass(frozen=True)
class M5:
    TAG: ClassVar[int] = 0x15
    LAYOUT: ClassVar[tuple[str, ...]] = ("V", "V", "?TS")
    n5: Value256
    r_sn_star: Value256
    ts: Optional[int] = None


@dataclass(frozen=True)
class LedgerTx:
    TAG: ClassVar[int] = 0x21
    LAYOUT: ClassVar[tuple[str, ...]] = ("BYTES", "V", "V", "TS", "V")
    g: bytes
    tx_hash: Value256
    contract_addr: Value256
    ts: int
    nonce: Value256


@dataclass(frozen=True)
class LedgerReply:
    TAG: ClassVar[int] = 0x22
    LAYOUT: ClassVar[tuple[str, ...]] = ("BOOL",)
    ok: bool


Message = Union[
    RegReq, RegChallenge, RegResponse, RegIssue, M1, M2, M3, M4, M5, LedgerTx, LedgerReply
]

MESSAGE_TYPES: dict[int, type] = {
    cls.TAG: cls
    for cls in (RegReq, RegChallenge, RegResponse, RegIssue, M1, M2, M3, M4, M5, LedgerTx, LedgerReply)
}

REGISTRATION_TYPES = (RegReq, RegChallenge, RegResponse, RegIssue)


def _encode_field(kind: str, value) -> bytes:
    if kind.startswith("?"):
        if value is None:
            return b"\x00"
        return b"\x01" + _encode_field(kind[1:], value)
    if kind == "V":
        if len(value) != 32:
            raise ValueError("Value256 field must be 32 bytes")
        return bytes(value)
    if kind == "VL":
        return len(value).to_bytes(4, "big") + b"".join(bytes(v) for v in value)
    if kind == "TS":
        return int(value).to_bytes(8, "big")
    if kind == "BYTES":
        return len(value).to_bytes(4, "big") + bytes(value)
    if kind == "BOOL":
        return b"\x01" if value else b"\x00"
    raise AssertionError(kind)


def _take(data: bytes, pos: int, n: int) -> tuple[bytes, int]:
    if pos + n > len(data):
        raise DecodeError("truncated message")
    return data[pos : pos + n], pos + n


def _decode_field(kind: str, data: bytes, pos: int):
    if kind.startswith("?"):
        flag, pos = _take(data, pos, 1)
        if flag == b"\x00":
            return None, pos
        if flag != b"\x01":
            raise DecodeError("bad presence byte")
        return _decode_field(kind[1:], data, pos)
    if kind == "V":
        raw, pos = _take(data, pos, 32)
        return Value256(raw), pos
    if kind == "VL":
        raw, pos = _take(data, pos, 4)
        items = []
        for _ in range(int.from_bytes(raw, "big")):
            v, pos = _take(data, pos, 32)
            items.append(Value256(v))
        return tuple(items), pos
    if kind == "TS":
        raw, pos = _take(data, pos, 8)
        return int.from_bytes(raw, "big"), pos
    if kind == "BYTES":
        raw, pos = _take(data, pos, 4)
        return _take(data, pos, int.from_bytes(raw, "big"))
    if kind == "BOOL":
        raw, pos = _take(data, pos, 1)
        if raw not in (b"\x00", b"\x01"):
            raise DecodeError("bad boolean byte")
        return raw == b"\x01", pos
    raise AssertionError(kind)


def encode(msg: Message) -> bytes:
    parts = [bytes([msg.TAG])]
    for f, kind in zip(fields(msg), msg.LAYOUT):
        parts.append(_encode_field(kind, getattr(msg, f.name)))
    return b"".join(parts)


def decode(data: bytes) -> Message:
    if not data:
        raise DecodeError("empty message")
    cls = MESSAGE_TYPES.get(data[0])
    if cls is None:
        raise DecodeError(f"unknown message tag 0x{data[0]:02x}")
    pos = 1
    values = {}
    for f, kind in zip(fields(cls), cls.LAYOUT):
        values[f.name], pos = _decode_field(kind, data, pos)
    if pos != len(data):
        raise DecodeError("trailing bytes after message")
    return cls(**values)


def field_offset(msg: Message, name: str) -> int:
    """Byte offset of field ``name`` (its value, past any presence byte) in ``encode(msg)``."""
    pos = 1
    for f, kind in zip(fields(msg), msg.LAYOUT):
        value = getattr(msg, f.name)
        if f.name == name:
            return pos + (1 if kind.startswith("?") else 0)
        pos += len(_encode_field(kind, value))
    raise KeyError(name)
