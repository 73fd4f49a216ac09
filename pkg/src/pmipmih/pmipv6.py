"""Proxy Mobile IPv6 entities: MH, AP, MAG, LMA, CN and AAA.

Every entity is an engine target. Packets move only through
:class:`~pmipmih.topology.Topology` links; timers and co-located
indications (AP to MAG attach notification, MH L2 state changes) are
engine events with explicit delays.
"""
from __future__ import annotations

import dataclasses
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Any

from .analytics import DeliveryRecord, HandoverRecord, LatencyParams, VARIANTS
from .engine import Engine, ScenarioError
from .mih import MihAgent, scan_with_hints
from .packet import Arrival, Packet, PacketFactory, Timer
from .topology import RadioCell, Topology, mh_position, MobilityPath

__all__ = [
    "MhProfile", "BindingCacheEntry", "Tunnel", "HandoverRecord", "Context",
    "MobileHost", "AccessPoint", "Mag", "Lma", "CorrespondentNode", "AaaServer",
    "l2_handover_time",
]


@dataclass(frozen=True)
class MhProfile:
    mh_id: str
    hnp: str
    lmaa: str
    channel_hints: tuple = ()

    def with_hints(self, hints) -> "MhProfile":
        return dataclasses.replace(self, channel_hints=tuple(hints))


@dataclass
class BindingCacheEntry:
    mh_id: str
    hnp: str
    serving_mag: str
    lifetime: int
    last_update: int

    def live(self, now: int) -> bool:
        return self.last_update + self.lifetime >= now


@dataclass(frozen=True)
class Tunnel:
    lma: str
    mag: str
    encap_overhead_bytes: int


def l2_handover_time(params: LatencyParams, variant: str, hints=()) -> int:
    """Link-layer handover duration: scan, authentication, re-association.

    The MIH variant skips authentication (the profile was pushed ahead of
    time) and probes only hinted channels.
    """
    if variant == "pmipv6":
        return params.t_scan + 4 * params.t_a + params.t_re_ass
    if variant == "pmipv6_mih":
        scan = scan_with_hints(hints, params.channels_total, params.per_channel_probe, params.t_scan)
        return scan + params.t_re_ass
    raise ValueError(f"unknown variant {variant!r}")


@dataclass
class HandoverTrack:
    """Protocol-side facts about one handover, merged with trace measurements."""

    t_detach: int | None
    old_ap: str
    t_lgd: int | None = None
    new_ap: str | None = None
    t_l2_start: int | None = None
    t_l2_done: int | None = None
    t_ra: int | None = None
    fallback: bool = False
    buffered: int = 0
    flushed: int = 0
    overflow: int = 0
    marks: dict = field(default_factory=dict)


class Recorder:
    """Per-packet fate of every data packet, keyed by packet id."""

    def __init__(self):
        self.records: dict[int, DeliveryRecord] = {}
        self.by_flow: dict[str, list[DeliveryRecord]] = defaultdict(list)
        self.drops: dict[str, Counter] = defaultdict(Counter)
        self.sent: Counter = Counter()
        self.delivered: Counter = Counter()

    def sent_packet(self, pkt: Packet, now: int) -> None:
        rec = DeliveryRecord(pkt.flow_id, pkt.seq, now, None, None, pkt.size_bytes, pkt.frame_ref)
        self.records[pkt.id] = rec
        self.by_flow[pkt.flow_id].append(rec)
        self.sent[pkt.flow_id] += 1

    def delivered_packet(self, pkt: Packet, now: int, via_mag: str | None) -> None:
        rec = self.records[pkt.id]
        if rec.delivered_us is not None:
            raise RuntimeError(f"packet {pkt.id} delivered twice")
        rec.delivered_us = now
        rec.via_mag = via_mag
        self.delivered[pkt.flow_id] += 1

    def dropped(self, pkt: Packet, reason: str) -> None:
        self.drops[pkt.flow_id][reason] += 1


class Context:
    """Shared scenario state handed to every entity."""

    def __init__(self, engine: Engine, topo: Topology, params: LatencyParams, variant: str, *,
                 lma: str = "lma", aaa: str | None = "aaa", cn: str = "cn",
                 encap_overhead: int = 40, signaling_bytes: int = 0,
                 binding_lifetime: int = 30_000_000, refresh_interval: int = 10_000_000,
                 mih_hints=None, buffer_capacity: int = 1000, buffer_at: str = "pmag"):
        if variant not in VARIANTS:
            raise ScenarioError(f"unknown variant {variant!r}")
        self.engine = engine
        self.topo = topo
        self.params = params
        self.variant = variant
        self.lma = lma
        self.aaa = aaa
        self.cn = cn
        self.encap_overhead = encap_overhead
        self.signaling_bytes = signaling_bytes
        self.binding_lifetime = binding_lifetime
        self.refresh_interval = refresh_interval
        self.mih_hints = mih_hints
        self.buffer_capacity = buffer_capacity
        self.buffer_at = buffer_at
        self.factory = PacketFactory()
        self.recorder = Recorder()
        self.mh_ids: set[str] = set()
        self.ap_mag: dict[str, str] = {}
        self.mag_aps: dict[str, list[str]] = defaultdict(list)
        self.cells: dict[str, RadioCell] = {}
        self.tracks: dict[str, list[HandoverTrack]] = defaultdict(list)
        self.notes: list[str] = []
        self.counters: Counter = Counter()

    @property
    def mih(self) -> bool:
        return self.variant == "pmipv6_mih"

    def make(self, kind: str, src: str, dst: str, **kw) -> Packet:
        if kind != "data":
            kw.setdefault("size_bytes", self.signaling_bytes)
        return self.factory.make(kind, src, dst, self.engine.now, **kw)

    def drop(self, pkt: Packet, reason: str) -> None:
        if pkt.kind == "data":
            self.recorder.dropped(pkt, reason)
        else:
            self.counters[f"signal_drop.{pkt.kind}.{reason}"] += 1

    def note(self, msg: str) -> None:
        self.notes.append(f"{self.engine.now} {msg}")

    def current_track(self, mh: str) -> HandoverTrack | None:
        tracks = self.tracks.get(mh)
        return tracks[-1] if tracks else None

    def mark(self, mh: str, name: str) -> None:
        """Stamp the first occurrence of a handover phase on the open track."""
        tr = self.current_track(mh)
        if tr is not None and tr.t_detach is not None:
            tr.marks.setdefault(name, self.engine.now)

    def hold_event(self, mh: str, what: str) -> None:
        tr = self.current_track(mh)
        self.counters[f"hold.{what}"] += 1
        if tr is None:
            return
        if what == "buffered":
            tr.buffered += 1
        elif what == "flushed":
            tr.flushed += 1
        elif what == "overflow":
            tr.overflow += 1

    def estimate_path(self, src: str, dst: str, bits: int, at: int) -> int:
        here, t = src, at
        while here != dst:
            nxt = self.topo.next_hop(here, dst)
            t = self.topo.link(here, nxt).estimate_delivery(here, bits, t)
            here = nxt
        return t


class Node:
    def __init__(self, name: str, ctx: Context):
        self.name = name
        self.ctx = ctx

    def timer(self, kind: str, **data) -> Timer:
        return Timer(kind, data)

    def handle(self, payload: Any) -> None:
        if isinstance(payload, Arrival):
            pkt = payload.packet
            if pkt.outer_dst is not None:
                if pkt.outer_dst != self.name:
                    self.route(pkt)
                    return
                pkt.outer_dst = None
                pkt.encap = 0
            elif pkt.kind != "data" and pkt.dst != self.name and pkt.dst not in self.ctx.mh_ids:
                self.route(pkt)
                return
            self.on_packet(pkt, payload.hop)
        else:
            self.on_timer(payload)

    def on_packet(self, pkt: Packet, hop: str) -> None:
        self.ctx.note(f"{self.name}: ignored {pkt.kind} from {hop}")

    def on_timer(self, t: Timer) -> None:
        raise ScenarioError(f"{self.name}: unexpected timer {t.kind}")

    def send_to(self, nxt: str, pkt: Packet) -> bool:
        if not self.ctx.topo.send(self.name, nxt, pkt):
            self.ctx.drop(pkt, "queue")
            return False
        return True

    def route(self, pkt: Packet) -> None:
        dst = pkt.outer_dst or pkt.dst
        self.send_to(self.ctx.topo.next_hop(self.name, dst), pkt)

    def send_signal(self, kind: str, dst: str, body=None) -> Packet:
        pkt = self.ctx.make(kind, self.name, dst, body=body)
        self.route(pkt)
        return pkt


class AaaServer(Node):
    def on_packet(self, pkt: Packet, hop: str) -> None:
        if pkt.kind == "aaa_query":
            self.send_signal("aaa_reply", pkt.src, body=pkt.body)
        else:
            super().on_packet(pkt, hop)


class CorrespondentNode(Node):
    """Traffic sources live here; they schedule ``source`` timers on the CN."""

    def __init__(self, name: str, ctx: Context):
        super().__init__(name, ctx)
        self.sources: dict[str, Any] = {}

    def add_source(self, source) -> None:
        self.sources[source.flow_id] = source
        source.attach(self)

    def emit(self, pkt: Packet) -> None:
        self.ctx.recorder.sent_packet(pkt, self.ctx.engine.now)
        self.send_to(self.ctx.topo.next_hop(self.name, self.ctx.lma), pkt)

    def on_packet(self, pkt: Packet, hop: str) -> None:
        if pkt.kind == "data":
            self.ctx.recorder.delivered_packet(pkt, self.ctx.engine.now, None)
            owner = self.sources.get(pkt.flow_id.split("/")[0])
            if owner is not None:
                owner.on_packet(pkt)
            return
        super().on_packet(pkt, hop)

    def on_timer(self, t: Timer) -> None:
        self.sources[t.data["flow"]].on_timer(t)


class Lma(Node):
    def __init__(self, name: str, ctx: Context):
        super().__init__(name, ctx)
        self.cache: dict[str, BindingCacheEntry] = {}
        self._lifetime_timers: dict[str, Any] = {}
        self._next_hnp = 0
        self.malformed_pbu = 0
        # buffer_at == "lma" state
        self.holds: dict[str, Any] = {}
        self.awaiting_marker: dict[str, list] = {}

    def tunnel_for(self, mh: str) -> Tunnel | None:
        entry = self.binding(mh)
        return None if entry is None else Tunnel(self.name, entry.serving_mag, self.ctx.encap_overhead)

    def binding(self, mh: str) -> BindingCacheEntry | None:
        entry = self.cache.get(mh)
        if entry is None or not entry.live(self.ctx.engine.now):
            return None
        return entry

    def on_packet(self, pkt: Packet, hop: str) -> None:
        ctx = self.ctx
        if pkt.kind == "pbu":
            if isinstance(pkt.body, dict) and not pkt.body.get("refresh") and "mh" in pkt.body:
                ctx.mark(pkt.body["mh"], "pbu_rx")
            if ctx.params.lma_processing:
                ctx.engine.schedule(ctx.params.lma_processing, self.name, self.timer("pbu", pkt=pkt))
            else:
                self.process_pbu(pkt)
        elif pkt.kind == "end_marker":
            self._marker_back(pkt.body["mh"])
        elif pkt.kind == "data":
            if pkt.dst in ctx.mh_ids:
                if pkt.body == "returned":
                    self._returned(pkt)
                else:
                    self.downlink(pkt)
            else:
                self.route(pkt)
        else:
            super().on_packet(pkt, hop)

    def on_timer(self, t: Timer) -> None:
        if t.kind == "pbu":
            self.process_pbu(t.data["pkt"])
        elif t.kind == "lifetime_expiry":
            mh = t.data["mh"]
            self.cache.pop(mh, None)
            self._lifetime_timers.pop(mh, None)
            self.ctx.note(f"{self.name}: binding for {mh} expired")
        else:
            super().on_timer(t)

    def process_pbu(self, pkt: Packet) -> None:
        ctx, now = self.ctx, self.ctx.engine.now
        body = pkt.body if isinstance(pkt.body, dict) else None
        if body is None or "mh" not in body or pkt.src not in ctx.mag_aps:
            self.malformed_pbu += 1
            return
        mh, mag = body["mh"], pkt.src
        entry = self.cache.get(mh)
        if body.get("refresh") and (entry is None or entry.serving_mag != mag):
            ctx.counters["pbu.stale_refresh"] += 1
            return
        if entry is not None and entry.serving_mag != mag:
            ctx.mark(mh, "switch")
        lifetime = body.get("lifetime", ctx.binding_lifetime)
        old_mag = entry.serving_mag if entry is not None else None
        if entry is None:
            entry = BindingCacheEntry(mh, f"hnp{self._next_hnp}::/64", mag, lifetime, now)
            self._next_hnp += 1
            self.cache[mh] = entry
        else:
            entry.serving_mag = mag
            entry.lifetime = lifetime
            entry.last_update = now
        ctx.engine.cancel(self._lifetime_timers.get(mh))
        self._lifetime_timers[mh] = ctx.engine.schedule(
            lifetime + 1, self.name, self.timer("lifetime_expiry", mh=mh))
        self.send_signal("pba", mag, body={"mh": mh, "hnp": entry.hnp, "lmaa": self.name})
        if old_mag is not None and old_mag != mag and ctx.mih:
            self.send_signal("end_marker", old_mag, body={"mh": mh, "new_mag": mag, "stage": "pmag"})
            if ctx.buffer_at == "lma":
                self.awaiting_marker[mh] = []
        hold = self.holds.pop(mh, None)
        if hold is not None:
            for held in hold.drain():
                ctx.hold_event(mh, "flushed")
                self._tunnel(held, mag)

    def downlink(self, pkt: Packet) -> None:
        mh = pkt.dst
        if mh in self.awaiting_marker:
            self.awaiting_marker[mh].append(pkt)
            return
        entry = self.binding(mh)
        if entry is None:
            self.ctx.drop(pkt, "no_binding")
            return
        self._tunnel(pkt, entry.serving_mag)

    def _tunnel(self, pkt: Packet, mag: str) -> None:
        pkt.outer_dst = mag
        pkt.encap = self.ctx.encap_overhead
        pkt.body = None
        self.route(pkt)

    def _returned(self, pkt: Packet) -> None:
        from .mih import HoldBuffer
        mh = pkt.dst
        if mh in self.awaiting_marker:
            entry = self.binding(mh)
            self.ctx.hold_event(mh, "flushed")
            if entry is None:
                self.ctx.drop(pkt, "no_binding")
            else:
                self._tunnel(pkt, entry.serving_mag)
            return
        hold = self.holds.get(mh)
        if hold is None:
            hold = self.holds[mh] = HoldBuffer(mh, self.ctx.buffer_capacity)
        evicted = hold.push(pkt)
        if evicted is not None:
            self.ctx.drop(evicted, "buffer_overflow")
            self.ctx.hold_event(mh, "overflow")

    def _marker_back(self, mh: str) -> None:
        pending = self.awaiting_marker.pop(mh, None)
        for pkt in pending or ():
            self.downlink(pkt)


class Mag(Node):
    def __init__(self, name: str, ctx: Context):
        super().__init__(name, ctx)
        self.profiles: dict[str, MhProfile] = {}
        self.registered: set[str] = set()
        self.serving: dict[str, str] = {}
        self.pending_ra: set[str] = set()
        self._refresh: dict[str, Any] = {}
        self._aaa: dict[str, dict] = {}
        self.mih = MihAgent(self, ctx.buffer_capacity, ctx.buffer_at) if ctx.mih else None

    # -- helpers --------------------------------------------------------------
    def ap_of(self, mh: str) -> str:
        return self.serving.get(mh) or self.ctx.mag_aps[self.name][0]

    def send_to_mh(self, mh: str, pkt: Packet) -> None:
        self.send_to(self.ap_of(mh), pkt)

    def deliver_local(self, pkt: Packet) -> None:
        self.send_to_mh(pkt.dst, pkt)

    def send_pbu(self, mh: str, refresh: bool = False) -> None:
        if not refresh:
            self.ctx.mark(mh, "pbu_sent")
        self.send_signal("pbu", self.ctx.lma, body={
            "mh": mh, "lifetime": self.ctx.binding_lifetime, "refresh": refresh})

    def send_ra(self, mh: str) -> None:
        self.ctx.mark(mh, "ra_sent")
        profile = self.profiles.get(mh)
        self.send_to_mh(mh, self.ctx.make("ra", self.name, mh,
                                          body={"hnp": profile.hnp if profile else None}))

    def estimate_pbu_effect(self, now: int) -> int:
        bits = max(1, 8 * self.ctx.signaling_bytes)
        return self.ctx.estimate_path(self.name, self.ctx.lma, bits, now) + self.ctx.params.lma_processing

    def estimate_to_mh(self, pkt: Packet) -> int:
        topo, now = self.ctx.topo, self.ctx.engine.now
        ap = self.ap_of(pkt.dst)
        bits = max(1, 8 * pkt.size_bytes)
        t = topo.link(self.name, ap).estimate_delivery(self.name, bits, now)
        return topo.link(ap, pkt.dst).estimate_delivery(ap, bits, t)

    def _arm_refresh(self, mh: str) -> None:
        self.ctx.engine.cancel(self._refresh.get(mh))
        self._refresh[mh] = self.ctx.engine.schedule(
            self.ctx.refresh_interval, self.name, self.timer("refresh", mh=mh))

    def _start_aaa(self, mh: str, then: str) -> None:
        if self.ctx.aaa is None:
            self.ctx.note(f"{self.name}: no AAA reachable, attachment of {mh} rejected")
            self.ctx.counters["attach.rejected"] += 1
            return
        self._aaa[mh] = {"round": 1, "then": then}
        self.send_signal("aaa_query", self.ctx.aaa, body={"mh": mh, "round": 1})

    # -- packets --------------------------------------------------------------
    def on_packet(self, pkt: Packet, hop: str) -> None:
        ctx = self.ctx
        kind = pkt.kind
        if kind == "data":
            if pkt.dst in ctx.mh_ids:
                if self.mih is not None and (self.mih.divert(pkt) or self.mih.on_downlink(pkt)):
                    return
                self.deliver_local(pkt)
            else:
                pkt.outer_dst = ctx.lma
                pkt.encap = ctx.encap_overhead
                self.route(pkt)
        elif kind == "rs":
            mh = pkt.src
            self.serving[mh] = hop
            if mh not in self.registered:
                self.pending_ra.add(mh)
                self.send_pbu(mh)
            else:
                self.send_ra(mh)
        elif kind == "pba":
            mh = pkt.body["mh"]
            self.registered.add(mh)
            self.profiles[mh] = MhProfile(mh, pkt.body["hnp"], pkt.body["lmaa"])
            self._arm_refresh(mh)
            if mh in self.pending_ra:
                self.pending_ra.discard(mh)
                ctx.mark(mh, "pba_rx")
                self.send_ra(mh)
        elif kind == "aaa_reply":
            self._aaa_reply(pkt.body["mh"])
        elif kind == "nd_context" and self.mih is not None:
            self.mih.on_nd_context(pkt.body)
        elif kind == "nd_ack" and self.mih is not None:
            self.mih.on_nd_ack(pkt.body["mh"])
        elif kind == "mih_event" and self.mih is not None:
            b = pkt.body
            if b.get("event") == "link_going_down":
                self.mih.on_link_going_down(b["mh"], ctx.engine.now, b.get("candidate_mag"),
                                            b["predicted_ld"], b.get("hints", []))
        elif kind == "end_marker" and self.mih is not None:
            b = pkt.body
            if b.get("stage") == "pmag":
                self.mih.on_end_marker(b["mh"])
                self.registered.discard(b["mh"])
                if ctx.buffer_at == "lma":
                    self.send_signal("end_marker", ctx.lma, body={"mh": b["mh"], "stage": "lma"})
                else:
                    self.send_signal("end_marker", b["new_mag"], body={"mh": b["mh"], "stage": "nmag"})
            else:
                self.mih.on_end_marker_arrival(b["mh"])
        else:
            super().on_packet(pkt, hop)

    def _aaa_reply(self, mh: str) -> None:
        st = self._aaa.get(mh)
        if st is None:
            return
        if st["round"] == 1:
            st["round"] = 2
            self.send_signal("aaa_query", self.ctx.aaa, body={"mh": mh, "round": 2})
            return
        del self._aaa[mh]
        if st["then"] == "auth_ok":
            self.ctx.engine.schedule(0, mh, self.timer("auth_ok", mag=self.name))
        else:
            self.pending_ra.add(mh)
            self.send_pbu(mh)

    # -- timers and indications -------------------------------------------
    def on_timer(self, t: Timer) -> None:
        mh = t.data.get("mh")
        if t.kind == "auth_request":
            self._start_aaa(mh, "auth_ok")
        elif t.kind == "attach_notify":
            self.serving[mh] = t.data["ap"]
            self.pending_ra.add(mh)
            self.send_pbu(mh)
        elif t.kind == "link_up":
            self.serving[mh] = t.data["ap"]
            if self.mih is None or not self.mih.on_link_up(mh, self.ctx.engine.now):
                self.ctx.note(f"{self.name}: no ND context for {mh}; AAA fallback")
                tr = self.ctx.current_track(mh)
                if tr is not None:
                    tr.fallback = True
                if self.mih is not None:
                    self.mih.abandon(mh)
                self._start_aaa(mh, "pbu")
        elif t.kind == "mih_commit":
            self.mih.commit(mh)
        elif t.kind == "detach_notify":
            self.ctx.engine.cancel(self._refresh.pop(mh, None))
            self.serving.pop(mh, None)
        elif t.kind == "refresh":
            self._refresh.pop(mh, None)
            self.send_pbu(mh, refresh=True)
            self._arm_refresh(mh)
        elif t.kind == "stop":
            for h in list(self._refresh.values()):
                self.ctx.engine.cancel(h)
            self._refresh.clear()
        else:
            super().on_timer(t)


class AccessPoint(Node):
    def __init__(self, name: str, ctx: Context, mag: str):
        super().__init__(name, ctx)
        self.mag = mag
        self.associated: set[str] = set()

    def on_packet(self, pkt: Packet, hop: str) -> None:
        if pkt.dst in self.ctx.mh_ids:
            self.send_to(pkt.dst, pkt)
        else:
            self.send_to(self.mag, pkt)

    def on_timer(self, t: Timer) -> None:
        ctx, mh = self.ctx, t.data.get("mh")
        if t.kind == "link_going_down":
            if mh in self.associated and ctx.mih:
                cand = t.data.get("candidate_ap")
                body = {"event": "link_going_down", "mh": mh,
                        "predicted_ld": t.data["predicted_ld"],
                        "candidate_mag": ctx.ap_mag.get(cand) if cand else None,
                        "hints": t.data.get("hints", [])}
                self.send_to(self.mag, ctx.make("mih_event", self.name, self.mag, body=body))
        elif t.kind == "link_down":
            if mh in self.associated:
                self.associated.discard(mh)
                ctx.engine.schedule(ctx.params.t_attach, self.mag,
                                    self.timer("detach_notify", mh=mh, ap=self.name))
        elif t.kind == "associated":
            self.associated.add(mh)
            if t.data.get("initial"):
                return
            if ctx.mih:
                ctx.engine.schedule(0, self.mag, self.timer("link_up", mh=mh, ap=self.name))
            else:
                ctx.engine.schedule(ctx.params.t_attach, self.mag,
                                    self.timer("attach_notify", mh=mh, ap=self.name))
        else:
            super().on_timer(t)


class MobileHost(Node):
    """Protocol-unaware host: L2 handover state machine plus traffic sinks."""

    def __init__(self, name: str, ctx: Context, path: MobilityPath):
        super().__init__(name, ctx)
        self.path = path
        self.ap: str | None = None
        self.last_ap: str | None = None
        self.last_ld: int | None = None
        self.target: str | None = None
        self.waiting_for_cell = False
        self.configured = False
        self.hints: list = []
        self.sinks: dict[str, Any] = {}
        self.state = "idle"
        self.t_boot: int | None = None
        self.t_configured: int | None = None

    # -- radio ----------------------------------------------------------------
    def link_alive(self, ap: str) -> bool:
        now = self.ctx.engine.now
        return ap == self.ap or (ap == self.last_ap and self.last_ld is not None and now <= self.last_ld)

    def _candidate(self, exclude: str) -> str | None:
        pos = mh_position(self.path, self.ctx.engine.now)
        sign = 1 if self.path.velocity >= 0 else -1
        best = None
        for ap, cell in self.ctx.cells.items():
            if ap == exclude or not cell.covers(pos):
                continue
            key = (sign * (cell.center - pos), ap)
            if best is None or key > best[0]:
                best = (key, ap)
        return None if best is None else best[1]

    def on_timer(self, t: Timer) -> None:
        ctx, now = self.ctx, self.ctx.engine.now
        k = t.kind
        if k == "boot":
            self.ap = t.data["ap"]
            self.state = "associated"
            self.t_boot = now
            ctx.engine.schedule(0, self.ap, self.timer("associated", mh=self.name, initial=True))
            self.send_up(ctx.make("rs", self.name, ctx.ap_mag[self.ap]))
        elif k == "link_detected":
            if self.waiting_for_cell:
                self.waiting_for_cell = False
                self._start_l2(t.data["ap"])
        elif k == "link_going_down":
            if t.data["ap"] == self.ap:
                ctx.tracks[self.name].append(HandoverTrack(None, self.ap, t_lgd=now))
        elif k == "link_down":
            if t.data["ap"] != self.ap:
                return
            self.last_ap, self.last_ld, self.ap = self.ap, now, None
            self.state = "detached"
            tr = ctx.current_track(self.name)
            if tr is None or tr.t_detach is not None or tr.old_ap != self.last_ap:
                tr = HandoverTrack(None, self.last_ap)
                ctx.tracks[self.name].append(tr)
            tr.t_detach = now
            ctx.mark(self.name, "detach")
            target = self._candidate(self.last_ap)
            if target is None:
                self.waiting_for_cell = True
                ctx.note(f"{self.name}: no AP in range at LD; waiting for LinkDetected")
            else:
                self._start_l2(target)
        elif k == "scan_done":
            ctx.mark(self.name, "scan_done")
            if ctx.mih:
                self.state = "reassociating"
                ctx.engine.schedule(ctx.params.t_re_ass, self.name, self.timer("re_ass_done"))
            else:
                self.state = "authenticating"
                ctx.engine.schedule(0, ctx.ap_mag[self.target], self.timer("auth_request", mh=self.name))
        elif k == "auth_ok":
            ctx.mark(self.name, "auth_ok")
            self.state = "reassociating"
            ctx.engine.schedule(ctx.params.t_re_ass, self.name, self.timer("re_ass_done"))
        elif k == "re_ass_done":
            self.ap = self.target
            self.state = "associated"
            tr = ctx.current_track(self.name)
            if tr is not None:
                tr.t_l2_done = now
            ctx.mark(self.name, "l2_done")
            ctx.engine.schedule(0, self.ap, self.timer("associated", mh=self.name))
        elif k == "config_done":
            ctx.engine.schedule(ctx.params.t_dad, self.name, self.timer("dad_done"))
        elif k == "dad_done":
            self.configured = True
            self.t_configured = now
        else:
            super().on_timer(t)

    def _start_l2(self, target: str) -> None:
        ctx = self.ctx
        self.target = target
        self.state = "scanning"
        tr = ctx.current_track(self.name)
        if tr is not None:
            tr.new_ap = target
            tr.t_l2_start = ctx.engine.now
        ctx.mark(self.name, "l2_start")
        p = ctx.params
        if ctx.mih:
            scan = scan_with_hints(self.hints, p.channels_total, p.per_channel_probe, p.t_scan)
        else:
            scan = p.t_scan
        self.hints = []
        ctx.engine.schedule(scan, self.name, self.timer("scan_done", scan=scan))

    # -- packets --------------------------------------------------------------
    def send_up(self, pkt: Packet) -> bool:
        if self.ap is None:
            self.ctx.drop(pkt, "mh_detached")
            return False
        return self.send_to(self.ap, pkt)

    def send_data(self, pkt: Packet) -> None:
        self.ctx.recorder.sent_packet(pkt, self.ctx.engine.now)
        self.send_up(pkt)

    def handle(self, payload: Any) -> None:
        if isinstance(payload, Arrival):
            self.on_packet(payload.packet, payload.hop)
        else:
            self.on_timer(payload)

    def on_packet(self, pkt: Packet, hop: str) -> None:
        ctx = self.ctx
        if not self.link_alive(hop):
            ctx.drop(pkt, "radio")
            return
        if pkt.kind == "data":
            ctx.recorder.delivered_packet(pkt, ctx.engine.now, ctx.ap_mag[hop])
            sink = self.sinks.get(pkt.flow_id)
            if sink is not None:
                sink.on_packet(pkt)
        elif pkt.kind == "ra":
            if not self.configured and not ctx.tracks.get(self.name):
                ctx.engine.schedule(ctx.params.t_config, self.name, self.timer("config_done"))
            tr = ctx.current_track(self.name)
            if tr is not None and tr.t_ra is None:
                tr.t_ra = ctx.engine.now
            ctx.mark(self.name, "ra_rx")
        elif pkt.kind == "mih_event":
            if pkt.body.get("event") == "hints":
                self.hints = list(pkt.body["hints"])
        else:
            ctx.note(f"{self.name}: ignored {pkt.kind}")


def merge_handover_records(ctx: Context, mh: str, measured: list[HandoverRecord]) -> list[HandoverRecord]:
    """Attach protocol-side facts (detach, RA, buffer counters) to trace-measured records."""
    out = []
    for tr in ctx.tracks.get(mh, []):
        if tr.t_detach is None:
            continue
        match = None
        for rec in measured:
            if rec.complete and rec.t_last_old <= tr.t_detach < rec.t_first_new:
                match = rec
                break
        if match is None:
            match = HandoverRecord(mh, ctx.variant, None, None)
        rec = dataclasses.replace(
            match, variant=ctx.variant, t_detach=tr.t_detach, t_ra=tr.t_ra,
            buffered_packets=tr.buffered, flushed_packets=tr.flushed,
            buffer_drops=tr.overflow, fallback=tr.fallback,
            old_mag=match.old_mag or ctx.ap_mag.get(tr.old_ap),
            new_mag=match.new_mag or (ctx.ap_mag.get(tr.new_ap) if tr.new_ap else None))
        out.append(rec)
    return out
