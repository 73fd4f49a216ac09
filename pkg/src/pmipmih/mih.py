"""Media-independent handover extension: LGD-triggered context transfer,
downlink hold buffering and hint-shortened scanning.

The MAG side of the scheme lives in :class:`MihAgent`, which a
:class:`~pmipmih.pmipv6.Mag` owns when the scenario runs ``pmipv6_mih``.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterator

from .packet import Packet

if TYPE_CHECKING:
    from .pmipv6 import Mag, MhProfile

BUFFER_LOCATIONS = ("pmag", "lma")


def scan_with_hints(hints, channels_total: int, per_channel_probe: int,
                    full_scan: int | None = None) -> int:
    """Scan time when only the hinted channels need probing.

    ``hints`` is an iterable of ``(ap, channel)``; duplicate channels are
    probed once. No usable hint falls back to the full scan.
    """
    channels = {ch for _, ch in hints}
    n = min(len(channels), channels_total) if channels_total else len(channels)
    if n == 0:
        return channels_total * per_channel_probe if full_scan is None else full_scan
    return n * per_channel_probe


@dataclass
class NdContextMessage:
    profile: "MhProfile"
    originating_mag: str
    target_mag: str
    issued_at: int


class HoldBuffer:
    """Bounded FIFO of downlink packets for one MH; overflow drops the oldest."""

    def __init__(self, mh_id: str, capacity: int):
        if capacity < 0:
            raise ValueError("capacity must be >= 0")
        self.mh_id = mh_id
        self.capacity = capacity
        self.packets: deque[Packet] = deque()
        self.drops_on_overflow = 0
        self.accepted = 0
        self.flushed = 0

    def __len__(self) -> int:
        return len(self.packets)

    def push(self, pkt: Packet) -> Packet | None:
        """Append ``pkt``; return the packet evicted to make room, if any."""
        self.accepted += 1
        self.packets.append(pkt)
        if len(self.packets) > self.capacity:
            self.drops_on_overflow += 1
            return self.packets.popleft()
        return None

    def drain(self) -> Iterator[Packet]:
        while self.packets:
            self.flushed += 1
            yield self.packets.popleft()


@dataclass
class _Departing:
    """p-MAG state for an MH whose link is going down."""

    target: str | None
    predicted_ld: int
    buffer: HoldBuffer
    acked: bool = False


@dataclass
class _Arriving:
    """n-MAG state for an MH announced by an ND context message."""

    profile: "MhProfile"
    origin: str
    staging: HoldBuffer
    released: bool = False
    end_marker_seen: bool = False
    pending_new: deque = field(default_factory=deque)


class MihAgent:
    def __init__(self, mag: "Mag", capacity: int, buffer_at: str = "pmag"):
        if buffer_at not in BUFFER_LOCATIONS:
            raise ValueError(f"buffer_at must be one of {BUFFER_LOCATIONS}")
        self.mag = mag
        self.capacity = capacity
        self.buffer_at = buffer_at
        self.departing: dict[str, _Departing] = {}
        self.arriving: dict[str, _Arriving] = {}

    # -- p-MAG side ---------------------------------------------------------
    def on_link_going_down(self, mh: str, now: int, candidate_mag: str | None,
                           predicted_ld: int, hints: list) -> None:
        mag, ctx = self.mag, self.mag.ctx
        if mh in self.departing:
            return
        profile = mag.profiles.get(mh)
        if candidate_mag is None or profile is None:
            ctx.note(f"{mag.name}: LGD for {mh} without neighbour candidate; baseline behaviour")
            return
        self.departing[mh] = _Departing(candidate_mag, predicted_ld, HoldBuffer(mh, self.capacity))
        profile = profile.with_hints(hints)
        msg = NdContextMessage(profile, mag.name, candidate_mag, now)
        mag.send_signal("nd_context", candidate_mag, body=msg)
        if hints:
            mag.send_to_mh(mh, ctx.make("mih_event", mag.name, mh, body={"event": "hints", "hints": hints}))

    def holds(self, mh: str) -> bool:
        return mh in self.departing

    def divert(self, pkt: Packet) -> bool:
        """Hold ``pkt`` instead of sending it over a link that will be gone
        before it arrives. Returns True if the packet was taken."""
        st = self.departing.get(pkt.dst)
        if st is None:
            return False
        mag = self.mag
        if mag.estimate_to_mh(pkt) <= st.predicted_ld:
            return False
        mag.ctx.hold_event(pkt.dst, "buffered")
        if self.buffer_at == "lma":
            self._return_to_lma(pkt)
            return True
        if st.acked:
            self._forward(pkt, st.target)
        else:
            evicted = st.buffer.push(pkt)
            if evicted is not None:
                mag.ctx.drop(evicted, "buffer_overflow")
                mag.ctx.hold_event(pkt.dst, "overflow")
        return True

    def on_nd_ack(self, mh: str) -> None:
        st = self.departing.get(mh)
        if st is None:
            return
        st.acked = True
        for pkt in st.buffer.drain():
            self._forward(pkt, st.target)

    def on_end_marker(self, mh: str) -> None:
        """Binding moved away: push out anything still held, forget the MH.
        The MAG relays the marker itself, after these packets."""
        st = self.departing.pop(mh, None)
        if st is None:
            return
        for held in st.buffer.drain():
            if self.buffer_at == "lma":
                self._return_to_lma(held)
            else:
                self._forward(held, st.target)

    def _forward(self, pkt: Packet, target: str) -> None:
        pkt.outer_dst = target
        pkt.encap = self.mag.ctx.encap_overhead
        pkt.body = "forwarded"
        self.mag.route(pkt)

    def _return_to_lma(self, pkt: Packet) -> None:
        pkt.outer_dst = self.mag.ctx.lma
        pkt.encap = self.mag.ctx.encap_overhead
        pkt.body = "returned"
        self.mag.route(pkt)

    # -- n-MAG side -----------------------------------------------------------
    def on_nd_context(self, msg: NdContextMessage) -> None:
        mh = msg.profile.mh_id
        self.mag.profiles[mh] = msg.profile
        self.arriving[mh] = _Arriving(msg.profile, msg.originating_mag,
                                      HoldBuffer(mh, self.capacity),
                                      end_marker_seen=self.buffer_at == "lma")
        self.mag.send_signal("nd_ack", msg.originating_mag, body={"mh": mh})

    def expecting(self, mh: str) -> bool:
        return mh in self.arriving

    def on_link_up(self, mh: str, now: int) -> bool:
        """PBU without AAA when the context arrived; False means fall back."""
        st = self.arriving.get(mh)
        if st is None:
            return False
        mag = self.mag
        # estimate first: the PBU must not queue behind itself
        commit = mag.estimate_pbu_effect(now)
        mag.send_pbu(mh)
        mag.ctx.engine.schedule(commit - now, mag.name, mag.timer("mih_commit", mh=mh))
        return True

    def commit(self, mh: str) -> None:
        """Binding has switched at the LMA: advertise and release held data."""
        mag = self.mag
        mag.send_ra(mh)
        st = self.arriving.get(mh)
        if st is None:
            return
        st.released = True
        for pkt in st.staging.drain():
            mag.ctx.hold_event(mh, "flushed")
            mag.deliver_local(pkt)
        self._maybe_finish(mh)

    def on_downlink(self, pkt: Packet) -> bool:
        """n-MAG handling of downlink data while a handover is in progress."""
        st = self.arriving.get(pkt.dst)
        if st is None:
            return False
        mag = self.mag
        if pkt.body == "forwarded":
            if st.released:
                mag.ctx.hold_event(pkt.dst, "flushed")
                mag.deliver_local(pkt)
            else:
                evicted = st.staging.push(pkt)
                if evicted is not None:
                    mag.ctx.drop(evicted, "buffer_overflow")
                    mag.ctx.hold_event(pkt.dst, "overflow")
            return True
        if st.released and st.end_marker_seen:
            return False
        st.pending_new.append(pkt)
        return True

    def on_end_marker_arrival(self, mh: str) -> None:
        st = self.arriving.get(mh)
        if st is None:
            return
        st.end_marker_seen = True
        self._maybe_finish(mh)

    def _maybe_finish(self, mh: str) -> None:
        st = self.arriving.get(mh)
        if st is None or not (st.released and st.end_marker_seen):
            return
        del self.arriving[mh]
        while st.pending_new:
            self.mag.deliver_local(st.pending_new.popleft())

    def abandon(self, mh: str) -> None:
        """Fallback path taken: stop expecting forwarded data ordering."""
        st = self.arriving.get(mh)
        if st is not None:
            st.end_marker_seen = True
