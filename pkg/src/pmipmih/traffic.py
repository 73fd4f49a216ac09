"""Downlink traffic: CBR over UDP, a Reno-style TCP, and an MPEG-4-like
video source with I/P/B frames, plus per-frame-type loss accounting."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .analytics import DeliveryRecord
from .engine import ScenarioError
from .packet import Packet, Timer

CLASSES = ("A", "I", "P", "B")


# --- CBR ------------------------------------------------------------------------

@dataclass
class CbrFlowSpec:
    flow_id: str
    src: str
    dst: str
    packet_size_bytes: int = 1000
    interval_us: int = 1000
    start: int = 0
    stop: int = 1_000_000

    def __post_init__(self):
        if self.interval_us <= 0:
            raise ScenarioError(f"flow {self.flow_id}: interval must be > 0")
        if self.stop < self.start:
            raise ScenarioError(f"flow {self.flow_id}: stop before start")


def cbr_generate(spec: CbrFlowSpec) -> list[int]:
    """Send instants ``start + k*interval`` for every k with instant <= stop."""
    n = (spec.stop - spec.start) // spec.interval_us + 1
    return [spec.start + k * spec.interval_us for k in range(n)]


class CbrSource:
    def __init__(self, spec: CbrFlowSpec):
        self.spec = spec
        self.flow_id = spec.flow_id
        self.seq = 0
        self.cn = None

    def attach(self, cn) -> None:
        self.cn = cn
        eng = cn.ctx.engine
        eng.schedule(self.spec.start - eng.now, cn.name, Timer("cbr_send", {"flow": self.flow_id}))

    def on_timer(self, t: Timer) -> None:
        ctx = self.cn.ctx
        now = ctx.engine.now
        if now > self.spec.stop:
            return
        pkt = ctx.make("data", self.cn.name, self.spec.dst, size_bytes=self.spec.packet_size_bytes,
                       flow_id=self.flow_id, seq=self.seq)
        self.seq += 1
        self.cn.emit(pkt)
        if now + self.spec.interval_us <= self.spec.stop:
            ctx.engine.schedule(self.spec.interval_us, self.cn.name, t)

    def on_packet(self, pkt: Packet) -> None:
        pass


# --- TCP-lite -----------------------------------------------------------------

@dataclass
class TcpLiteFlowSpec:
    flow_id: str
    src: str
    dst: str
    segment_size_bytes: int = 1040
    init_cwnd: int = 1
    rto_us: int = 200_000
    max_cwnd: int = 20
    ack_size_bytes: int = 40
    start: int = 0
    stop: int = 1_000_000
    max_backoff: int = 64


@dataclass
class TcpLiteState:
    """Sender state. Sequence numbers count segments; ``snd_una`` is the
    next segment the receiver expects (cumulative ACK)."""

    cwnd: float
    max_cwnd: int
    rto_us: int
    ssthresh: float = math.inf
    snd_una: int = 0
    snd_nxt: int = 0
    backoff: int = 1
    max_backoff: int = 64
    timeouts_in_row: int = 0
    collapses: int = 0
    collapse_times: list = field(default_factory=list)

    @property
    def current_rto(self) -> int:
        return self.rto_us * self.backoff


def tcp_lite_step(state: TcpLiteState, event: str, ack: int | None = None,
                  now: int | None = None) -> list[tuple]:
    """Advance the sender for one event; returns actions.

    Actions are ``("send", seq)``, ``("arm_rto", delay_us)`` and
    ``("cancel_rto",)``. Slow start adds one segment per new ACK below
    ``ssthresh`` and ``1/cwnd`` above it. A timeout halves ``ssthresh``
    (held constant on back-to-back timeouts), resets ``cwnd`` to 1 and
    goes back to the first unacknowledged segment.
    """
    actions: list[tuple] = []
    if event == "ack":
        if ack is None or ack <= state.snd_una:
            return actions
        state.snd_una = ack
        state.snd_nxt = max(state.snd_nxt, ack)
        state.backoff = 1
        state.timeouts_in_row = 0
        if state.cwnd < state.ssthresh:
            state.cwnd += 1
        else:
            state.cwnd += 1.0 / state.cwnd
        state.cwnd = min(state.cwnd, state.max_cwnd)
    elif event == "timeout":
        if state.cwnd > 1:
            state.collapses += 1
            state.collapse_times.append(now)
        if state.timeouts_in_row == 0:
            state.ssthresh = max(state.cwnd / 2, 2)
        state.timeouts_in_row += 1
        state.cwnd = 1
        state.snd_nxt = state.snd_una
        state.backoff = min(state.backoff * 2, state.max_backoff)
    elif event != "send_opportunity":
        raise ValueError(f"unknown TCP event {event!r}")
    window_end = state.snd_una + int(state.cwnd)
    while state.snd_nxt < window_end:
        actions.append(("send", state.snd_nxt))
        state.snd_nxt += 1
    if state.snd_nxt > state.snd_una:
        actions.append(("arm_rto", state.current_rto))
    else:
        actions.append(("cancel_rto",))
    return actions


class TcpLiteSender:
    def __init__(self, spec: TcpLiteFlowSpec):
        self.spec = spec
        self.flow_id = spec.flow_id
        self.state = TcpLiteState(float(spec.init_cwnd), spec.max_cwnd, spec.rto_us,
                                  max_backoff=spec.max_backoff)
        self.cn = None
        self._rto = None
        self.cwnd_trace: list[tuple[int, float]] = []
        self.stopped = False

    def attach(self, cn) -> None:
        self.cn = cn
        eng = cn.ctx.engine
        eng.schedule(self.spec.start - eng.now, cn.name, Timer("tcp_start", {"flow": self.flow_id}))
        eng.schedule(self.spec.stop - eng.now, cn.name, Timer("tcp_stop", {"flow": self.flow_id}))

    def _apply(self, actions) -> None:
        ctx = self.cn.ctx
        eng = ctx.engine
        for act in actions:
            if act[0] == "send":
                pkt = ctx.make("data", self.cn.name, self.spec.dst,
                               size_bytes=self.spec.segment_size_bytes,
                               flow_id=self.flow_id, seq=act[1])
                self.cn.emit(pkt)
            elif act[0] == "arm_rto":
                eng.cancel(self._rto)
                self._rto = eng.schedule(act[1], self.cn.name, Timer("tcp_rto", {"flow": self.flow_id}))
            else:
                eng.cancel(self._rto)
                self._rto = None
        self.cwnd_trace.append((eng.now, self.state.cwnd))

    def on_timer(self, t: Timer) -> None:
        if t.kind == "tcp_stop":
            self.stopped = True
            self.cn.ctx.engine.cancel(self._rto)
            return
        if self.stopped:
            return
        if t.kind == "tcp_start":
            self._apply(tcp_lite_step(self.state, "send_opportunity"))
        elif t.kind == "tcp_rto":
            self._rto = None
            self._apply(tcp_lite_step(self.state, "timeout", now=self.cn.ctx.engine.now))

    def on_packet(self, pkt: Packet) -> None:
        if self.stopped:
            return
        if (self._rto is not None and pkt.seq > self.state.snd_una) or pkt.seq > self.state.snd_una:
            # an ACK for new data restarts the retransmission timer
            self.cn.ctx.engine.cancel(self._rto)
            self._rto = None
        self._apply(tcp_lite_step(self.state, "ack", ack=pkt.seq))


class TcpLiteReceiver:
    """Cumulative-ACK receiver at the MH; out-of-order segments are kept."""

    def __init__(self, spec: TcpLiteFlowSpec, mh):
        self.spec = spec
        self.mh = mh
        self.expected = 0
        self.out_of_order: set[int] = set()
        self.ack_seq = 0
        self.in_order_times: list[tuple[int, int]] = []

    def on_packet(self, pkt: Packet) -> None:
        ctx = self.mh.ctx
        if pkt.seq >= self.expected:
            self.out_of_order.add(pkt.seq)
            while self.expected in self.out_of_order:
                self.out_of_order.discard(self.expected)
                self.in_order_times.append((ctx.engine.now, self.expected))
                self.expected += 1
        ack = ctx.make("data", self.mh.name, self.spec.src, size_bytes=self.spec.ack_size_bytes,
                       flow_id=f"{self.spec.flow_id}/ack", seq=self.expected)
        self.mh.send_data(ack)

    def goodput_series(self, window_us: int, start: int, end: int) -> list[tuple[int, float]]:
        """In-order application bytes per window, as Mb/s."""
        n = max(0, -(-(end - start) // window_us))
        bins = [0] * n
        for t, _ in self.in_order_times:
            if start <= t < end:
                bins[(t - start) // window_us] += 8 * self.spec.segment_size_bytes
        return [(start + k * window_us, b / window_us) for k, b in enumerate(bins)]


# --- video ---------------------------------------------------------------------

VIDEO_PACKET_BYTES = 1028


@dataclass
class VideoFrame:
    index: int
    kind: str
    size_bytes: int
    packets: int
    send_time: int = 0
    first_seq: int = 0


@dataclass
class VideoSchedule:
    frames: list[VideoFrame]
    packets: list[tuple[int, int, int]]   # (send_time_us, frame_index, seq)
    packet_size: int
    strict_b_refs: bool = False

    def frame_of_seq(self) -> dict[int, int]:
        return {seq: fi for _, fi, seq in self.packets}


def video_generate(gop: str, sizes: dict[str, int], fps: float, n_frames: int,
                   packet_size: int = VIDEO_PACKET_BYTES, packet_interval_us: int = 1000,
                   start: int = 0, strict_b_refs: bool = False) -> VideoSchedule:
    """Frame and packet schedule for a repeating GOP pattern.

    Frames are emitted every ``1/fps`` seconds and cut into fixed-size
    packets sent ``packet_interval_us`` apart; a frame never starts before
    the previous frame's last packet.
    """
    if not gop:
        raise ScenarioError("empty GOP pattern")
    if gop[0] != "I" or set(gop) - {"I", "P", "B"}:
        raise ScenarioError(f"GOP pattern must start with I and use only I/P/B: {gop!r}")
    if fps <= 0:
        raise ScenarioError("fps must be > 0")
    frames, packets = [], []
    seq, next_free = 0, start
    for i in range(n_frames):
        kind = gop[i % len(gop)]
        size = sizes[kind]
        n = max(1, math.ceil(size / packet_size))
        t = max(start + round(i * 1_000_000 / fps), next_free)
        frames.append(VideoFrame(i, kind, size, n, t, seq))
        for k in range(n):
            packets.append((t + k * packet_interval_us, i, seq))
            seq += 1
        next_free = t + n * packet_interval_us
    return VideoSchedule(frames, packets, packet_size, strict_b_refs)


def frame_references(frames: Sequence[VideoFrame], strict_b_refs: bool = False) -> dict[int, list[int]]:
    """Reference frames of each frame: P uses the previous anchor (I or P);
    B uses the previous anchor, plus the next one when ``strict_b_refs``."""
    refs: dict[int, list[int]] = {}
    anchors = [f.index for f in frames if f.kind in "IP"]
    prev_anchor = None
    for f in frames:
        if f.kind == "I":
            refs[f.index] = []
        elif f.kind == "P":
            refs[f.index] = [] if prev_anchor is None else [prev_anchor]
        else:
            r = [] if prev_anchor is None else [prev_anchor]
            if strict_b_refs:
                nxt = next((a for a in anchors if a > f.index), None)
                if nxt is not None:
                    r.append(nxt)
            refs[f.index] = r
        if f.kind in "IP":
            prev_anchor = f.index
    return refs


def decodable_frames(schedule: VideoSchedule, complete: Sequence[bool]) -> list[bool]:
    """Frame n is decodable iff all its packets arrived and its references decode."""
    refs = frame_references(schedule.frames, schedule.strict_b_refs)
    ok = [False] * len(schedule.frames)
    # anchors first, in order, so forward B references are resolved
    for f in schedule.frames:
        if f.kind in "IP":
            ok[f.index] = complete[f.index] and all(ok[r] for r in refs[f.index])
    for f in schedule.frames:
        if f.kind == "B":
            ok[f.index] = complete[f.index] and all(ok[r] for r in refs[f.index])
    return ok


def frames_complete(schedule: VideoSchedule, trace: Iterable[DeliveryRecord]) -> list[bool]:
    got = {r.seq for r in trace if r.delivered_us is not None}
    return [all(s in got for s in range(f.first_seq, f.first_seq + f.packets))
            for f in schedule.frames]


@dataclass
class LossReport:
    packets_sent: Counter
    packets_lost: Counter
    frames_sent: Counter
    frames_lost: Counter

    def format(self) -> str:
        def row(prefix, tag, c):
            return ", ".join(f"{tag}{k}:{c[k]}" for k in CLASSES)
        return (f"Packet sent:{row('', 'p->n', self.packets_sent)}\n"
                f" Packet lost:{row('', 'p->l', self.packets_lost)}\n"
                f"\n"
                f"Frame sent:{row('', 'f->n', self.frames_sent)}\n"
                f" Frame lost:{row('', 'f->l', self.frames_lost)}\n")


def classify_losses(trace: Iterable[DeliveryRecord], schedule: VideoSchedule) -> LossReport:
    trace = list(trace)
    kind_of = {f.index: f.kind for f in schedule.frames}
    seq_frame = schedule.frame_of_seq()
    ps, pl, fs, fl = Counter(), Counter(), Counter(), Counter()
    for r in trace:
        k = kind_of[seq_frame[r.seq]]
        ps[k] += 1
        if r.delivered_us is None:
            pl[k] += 1
    ok = decodable_frames(schedule, frames_complete(schedule, trace))
    for f in schedule.frames:
        fs[f.kind] += 1
        if not ok[f.index]:
            fl[f.kind] += 1
    for c in (ps, pl, fs, fl):
        c["A"] = c["I"] + c["P"] + c["B"]
    return LossReport(ps, pl, fs, fl)


class VideoSource:
    def __init__(self, flow_id: str, dst: str, schedule: VideoSchedule):
        self.flow_id = flow_id
        self.dst = dst
        self.schedule = schedule
        self.cn = None
        self._i = 0

    def attach(self, cn) -> None:
        self.cn = cn
        if self.schedule.packets:
            t0 = self.schedule.packets[0][0]
            cn.ctx.engine.schedule(t0 - cn.ctx.engine.now, cn.name, Timer("video_send", {"flow": self.flow_id}))

    def on_timer(self, t: Timer) -> None:
        ctx = self.cn.ctx
        pk = self.schedule.packets
        while self._i < len(pk) and pk[self._i][0] <= ctx.engine.now:
            _, fi, seq = pk[self._i]
            pkt = ctx.make("data", self.cn.name, self.dst, size_bytes=self.schedule.packet_size,
                           flow_id=self.flow_id, seq=seq, frame_ref=fi)
            self.cn.emit(pkt)
            self._i += 1
        if self._i < len(pk):
            ctx.engine.schedule(pk[self._i][0] - ctx.engine.now, self.cn.name, t)

    def on_packet(self, pkt: Packet) -> None:
        pass
