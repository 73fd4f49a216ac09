from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

KINDS = frozenset({
    "data", "rs", "ra", "pbu", "pba", "aaa_query", "aaa_reply",
    "nd_context", "nd_ack", "mih_event", "probe", "reassoc", "end_marker",
})

SIGNALING_KINDS = KINDS - {"data"}


@dataclass
class Packet:
    """A unit of traffic or signaling moving between entities.

    ``size_bytes == 0`` marks a control marker; links serialize it as a
    single bit. ``outer_dst``/``encap`` describe an active tunnel header.
    """

    id: int
    kind: str
    src: str
    dst: str
    created_at: int
    size_bytes: int = 0
    flow_id: str | None = None
    seq: int | None = None
    frame_ref: int | None = None
    outer_dst: str | None = None
    encap: int = 0
    via: list[str] = field(default_factory=list)
    body: Any = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown packet kind {self.kind!r}")
        if self.size_bytes < 0:
            raise ValueError("negative packet size")

    @property
    def wire_bits(self) -> int:
        return max(1, 8 * (self.size_bytes + self.encap))

    def describe(self) -> str:
        parts = [f"id={self.id}", f"src={self.src}", f"dst={self.dst}"]
        if self.flow_id is not None:
            parts.append(f"flow={self.flow_id}")
        if self.seq is not None:
            parts.append(f"seq={self.seq}")
        if self.outer_dst is not None:
            parts.append(f"tun={self.outer_dst}")
        parts.append("via=" + (",".join(self.via) or "-"))
        return " ".join(parts)


class PacketFactory:
    """Per-simulation id source; keeps ids deterministic across runs."""

    def __init__(self):
        self._next = 0

    def make(self, kind: str, src: str, dst: str, now: int, **kw) -> Packet:
        pkt = Packet(self._next, kind, src, dst, now, **kw)
        self._next += 1
        return pkt


@dataclass
class Arrival:
    """Engine payload: ``packet`` finished crossing the link from ``hop``."""

    packet: Packet
    hop: str

    @property
    def kind(self) -> str:
        return self.packet.kind

    def describe(self) -> str:
        return f"from={self.hop} " + self.packet.describe()


@dataclass
class Timer:
    """Engine payload for an entity-local timer or indication."""

    kind: str
    data: dict = field(default_factory=dict)

    def describe(self) -> str:
        if not self.data:
            return "-"
        return " ".join(f"{k}={v.describe() if isinstance(v, Packet) else v}"
                        for k, v in sorted(self.data.items()))
