"""Connectionless management protocol between end-hosts and the controller.

Frame layout, all integers big-endian::

    u16 frame_len | u8 variant | u32 requester_addr | payload

``frame_len`` counts the whole frame. Tree lists are ``u8 count`` then
``u16 route_tag, u32 share_kbps`` per tree. Node ids travel as u16,
group and session ids as u32, byte counts and durations as u64.

Requests carry the requester's address; replies echo it so the
controller can target the host that asked.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import ClassVar, Union

MGMT_ADDRESS = 0xF0F0_0001
HEADER = struct.Struct(">HBI")
TREE = struct.Struct(">HI")
MAX_TREES = 255
MAX_TAG = 0xFFF

REQUEST_RETRY_INTERVAL = 100_000_000  # ns
REQUEST_MAX_ATTEMPTS = 3


class Status(enum.IntEnum):
    OK = 0
    REJECTED = 1


class EncodeError(ValueError):
    pass


class DecodeError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


TreeShares = tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class GroupJoin:
    code: ClassVar[int] = 1
    requester: int
    group_id: int
    receiver: int


@dataclass(frozen=True)
class GroupJoinReply:
    code: ClassVar[int] = 2
    requester: int
    group_id: int
    status: Status = Status.OK


@dataclass(frozen=True)
class GroupLeave:
    code: ClassVar[int] = 3
    requester: int
    group_id: int
    receiver: int


@dataclass(frozen=True)
class SessionInit:
    code: ClassVar[int] = 4
    requester: int
    group_id: int
    sender: int
    block_len_bytes: int  # 0 means an open-ended stream


@dataclass(frozen=True)
class SessionInitReply:
    code: ClassVar[int] = 5
    requester: int
    session_id: int
    trees: TreeShares = field(default_factory=tuple)
    status: Status = Status.OK


@dataclass(frozen=True)
class SessionEnd:
    code: ClassVar[int] = 6
    requester: int
    session_id: int


@dataclass(frozen=True)
class NetworkUpdate:
    code: ClassVar[int] = 7
    requester: int
    session_id: int
    trees: TreeShares = field(default_factory=tuple)


@dataclass(frozen=True)
class StatsReport:
    code: ClassVar[int] = 8
    requester: int
    session_id: int
    receiver: int
    bytes_received: int
    window: int  # ns


ManagementMessage = Union[GroupJoin, GroupJoinReply, GroupLeave, SessionInit,
                          SessionInitReply, SessionEnd, NetworkUpdate, StatsReport]

# fixed-width payload fields per variant; tree lists are appended separately
_LAYOUT: dict[type, tuple[str, tuple[str, ...]]] = {
    GroupJoin: (">IH", ("group_id", "receiver")),
    GroupJoinReply: (">IB", ("group_id", "status")),
    GroupLeave: (">IH", ("group_id", "receiver")),
    SessionInit: (">IHQ", ("group_id", "sender", "block_len_bytes")),
    SessionInitReply: (">BI", ("status", "session_id")),
    SessionEnd: (">I", ("session_id",)),
    NetworkUpdate: (">I", ("session_id",)),
    StatsReport: (">IHQQ", ("session_id", "receiver", "bytes_received", "window")),
}
_STRUCTS = {cls: struct.Struct(fmt) for cls, (fmt, _) in _LAYOUT.items()}
_BY_CODE = {cls.code: cls for cls in _LAYOUT}
_WITH_TREES = (SessionInitReply, NetworkUpdate)

REPLY_FOR = {GroupJoin: GroupJoinReply, SessionInit: SessionInitReply}
FIRE_AND_FORGET = (GroupLeave, SessionEnd, StatsReport)


def _check_trees(msg) -> None:
    if len(msg.trees) > MAX_TREES:
        raise EncodeError(f"{len(msg.trees)} trees exceed the limit of {MAX_TREES}")
    if isinstance(msg, SessionInitReply):
        if msg.status == Status.OK and not msg.trees:
            raise EncodeError("a successful SessionInitReply must carry at least one tree")
        if msg.status != Status.OK and msg.trees:
            raise EncodeError("a rejected SessionInitReply carries no trees")
    for tag, share in msg.trees:
        if not 1 <= tag <= MAX_TAG:
            raise EncodeError(f"route tag {tag} outside 1..{MAX_TAG}")
        if share < 0 or share % 1000 or share // 1000 > 0xFFFF_FFFF:
            raise EncodeError(f"share {share} bps is not a u32 count of kbps")


def encode(msg: ManagementMessage) -> bytes:
    cls = type(msg)
    if cls not in _STRUCTS:
        raise EncodeError(f"not a management message: {msg!r}")
    names = _LAYOUT[cls][1]
    try:
        body = _STRUCTS[cls].pack(*(int(getattr(msg, n)) for n in names))
    except struct.error as exc:
        raise EncodeError(f"{cls.__name__}: {exc}") from None
    if cls in _WITH_TREES:
        _check_trees(msg)
        parts = [body, bytes([len(msg.trees)])]
        parts += [TREE.pack(tag, share // 1000) for tag, share in msg.trees]
        body = b"".join(parts)
    total = HEADER.size + len(body)
    if not 0 <= msg.requester <= 0xFFFF_FFFF:
        raise EncodeError(f"requester address {msg.requester} is not a u32")
    return HEADER.pack(total, cls.code, msg.requester) + body


def decode(data: bytes) -> ManagementMessage:
    data = bytes(data)
    if len(data) < HEADER.size:
        raise DecodeError("short frame", len(data))
    frame_len, code, requester = HEADER.unpack_from(data, 0)
    if frame_len != len(data):
        raise DecodeError(f"frame length {frame_len} does not match {len(data)} bytes", 0)
    cls = _BY_CODE.get(code)
    if cls is None:
        raise DecodeError(f"unknown variant code {code:#04x}", 2)
    st = _STRUCTS[cls]
    off = HEADER.size
    if len(data) < off + st.size:
        raise DecodeError("short frame", len(data))
    values = dict(zip(_LAYOUT[cls][1], st.unpack_from(data, off)))
    off += st.size
    if "status" in values:
        try:
            values["status"] = Status(values["status"])
        except ValueError:
            raise DecodeError(f"unknown status {values['status']}", off - st.size) from None
    if cls in _WITH_TREES:
        if len(data) < off + 1:
            raise DecodeError("short frame", len(data))
        count = data[off]
        off += 1
        if len(data) != off + count * TREE.size:
            raise DecodeError(f"tree list of {count} does not fit the frame", off - 1)
        trees = []
        for _ in range(count):
            tag, kbps = TREE.unpack_from(data, off)
            if not 1 <= tag <= MAX_TAG:
                raise DecodeError(f"route tag {tag} outside 1..{MAX_TAG}", off)
            trees.append((tag, kbps * 1000))
            off += TREE.size
        values["trees"] = tuple(trees)
        if cls is SessionInitReply and (values["status"] == Status.OK) != bool(trees):
            raise DecodeError("tree list inconsistent with reply status", off)
    if off != len(data):
        raise DecodeError("trailing bytes", off)
    return cls(requester=requester, **values)
