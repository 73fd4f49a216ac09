"""Build a simulation from a :class:`~pmipmih.scenario.Scenario`, run it and
collect traces, handover records and conservation counts."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Any

from .analytics import (DeliveryRecord, HandoverRecord, PsnrSeries, closed_form, measure_handovers,
                        psnr, synthetic_frames, throughput_series)
from .engine import Engine, RunSummary, ScenarioError
from .mih import scan_with_hints
from .packet import Timer
from .pmipv6 import (AaaServer, AccessPoint, Context, CorrespondentNode, Lma, Mag, MobileHost,
                     merge_handover_records)
from .scenario import Scenario
from .topology import LinkEventKind, MobilityPath, Topology, link_events_for_path, mh_position
from .traffic import (CbrFlowSpec, CbrSource, LossReport, TcpLiteFlowSpec, TcpLiteReceiver,
                      TcpLiteSender, VideoSchedule, VideoSource, classify_losses, decodable_frames,
                      frames_complete, video_generate)

MH = "mh"


@dataclass
class FlowConservation:
    sent: int
    delivered: int
    drops: Counter

    @property
    def unaccounted(self) -> int:
        return self.sent - self.delivered - sum(self.drops.values())

    @property
    def buffer_dropped(self) -> int:
        return self.drops["buffer_overflow"] + self.drops["stranded"]

    @property
    def lost(self) -> int:
        return sum(self.drops.values()) - self.buffer_dropped


@dataclass
class VideoResult:
    schedule: VideoSchedule
    report: LossReport
    decodable: list[bool]
    psnr: PsnrSeries


@dataclass
class RunResult:
    scenario: Scenario
    variant: str
    summary: RunSummary
    log: list[str]
    ctx: Context
    traces: dict[str, list[DeliveryRecord]]
    handovers: list[HandoverRecord]
    conservation: dict[str, FlowConservation]
    link_stats: list
    primary_flow: str | None
    tcp: dict[str, tuple[TcpLiteSender, TcpLiteReceiver]] = field(default_factory=dict)
    video: dict[str, VideoResult] = field(default_factory=dict)
    throughput: dict[str, list] = field(default_factory=dict)
    mh: Any = None
    scan_reduced: int | None = None

    @property
    def links_balanced(self) -> bool:
        return all(st.in_flight == 0 for _, _, st in self.link_stats)

    @property
    def flows_balanced(self) -> bool:
        return all(c.unaccounted == 0 for c in self.conservation.values())

    def first_handover(self) -> HandoverRecord | None:
        return self.handovers[0] if self.handovers else None

    def closed_form_total(self) -> int:
        return closed_form(self.variant, self.scenario.params, self.scan_reduced).total

    def mean_throughput(self, flow: str | None = None) -> float:
        flow = flow or self.primary_flow
        series = self.throughput.get(flow) or []
        return sum(v for _, v in series) / len(series) if series else 0.0


def _hints_for(sc: Scenario, cells: dict, candidate: str | None) -> list:
    if sc.hints == "none":
        return []
    if sc.hints == "auto":
        return [] if candidate is None else [(candidate, cells[candidate].channel)]
    return list(sc.hints)


class Simulation:
    """One scenario, one variant, one engine."""

    def __init__(self, scenario: Scenario, variant: str | None = None):
        self.scenario = sc = scenario
        self.variant = variant or sc.variant
        self.engine = eng = Engine(log_events=sc.log_events)
        self.topo = Topology(eng, sc.link_specs(), stub_nodes={"aaa"})
        self.ctx = ctx = Context(
            eng, self.topo, sc.params, self.variant,
            encap_overhead=sc.encap_overhead_bytes, signaling_bytes=sc.signaling_bytes,
            binding_lifetime=sc.binding_lifetime_us, refresh_interval=sc.refresh_interval_us,
            buffer_capacity=sc.buffer_capacity, buffer_at=sc.buffer_at)
        ctx.mh_ids.add(MH)
        for c in sc.cells:
            ctx.ap_mag[c.cell.ap] = c.mag
            ctx.mag_aps[c.mag].append(c.cell.ap)
            ctx.cells[c.cell.ap] = c.cell
        self.cn = CorrespondentNode("cn", ctx)
        self.lma = Lma("lma", ctx)
        self.mags = {m: Mag(m, ctx) for m in sc.mags}
        self.aps = {c.cell.ap: AccessPoint(c.cell.ap, ctx, c.mag) for c in sc.cells}
        self.path = MobilityPath(sc.start_position, sc.speed, 0, sc.stop_position)
        self.mh = MobileHost(MH, ctx, self.path)
        for ent in (self.cn, self.lma, AaaServer("aaa", ctx), *self.mags.values(),
                    *self.aps.values(), self.mh):
            eng.register(ent)
        self.tcp: dict[str, tuple[TcpLiteSender, TcpLiteReceiver]] = {}
        self.video: dict[str, VideoSchedule] = {}
        self.scan_reduced: int | None = None
        self._scheduled = False

    # -- set-up ------------------------------------------------------------------
    def _initial_ap(self) -> str:
        x = self.scenario.start_position
        inside = [(abs(c.center - x), ap) for ap, c in self.ctx.cells.items() if c.covers(x)]
        if not inside:
            raise ScenarioError(f"start position {x} is outside every cell")
        return min(inside)[1]

    def _candidate_at(self, t: int, leaving: str) -> str | None:
        pos = mh_position(self.path, t)
        sign = 1 if self.path.velocity >= 0 else -1
        best = None
        for ap, cell in self.ctx.cells.items():
            if ap == leaving or not cell.covers(pos):
                continue
            key = (sign * (cell.center - pos), ap)
            if best is None or key > best[0]:
                best = (key, ap)
        return None if best is None else best[1]

    def _schedule_radio(self) -> None:
        sc, eng = self.scenario, self.engine
        events = [e for e in link_events_for_path([c.cell for c in sc.cells], self.path)
                  if e.time <= sc.duration_us]
        p = sc.params
        for i, ev in enumerate(events):
            ap = ev.cell.ap
            if ev.kind is LinkEventKind.LINK_DETECTED:
                eng.schedule_at(ev.time, MH, Timer("link_detected", {"ap": ap}))
            elif ev.kind is LinkEventKind.LINK_GOING_DOWN:
                ld = next((e.time for e in events[i + 1:]
                           if e.cell.ap == ap and e.kind is LinkEventKind.LINK_DOWN), None)
                eng.schedule_at(ev.time, MH, Timer("link_going_down", {"ap": ap}))
                if ld is None:
                    continue
                cand = self._candidate_at(ld, ap)
                hints = _hints_for(sc, self.ctx.cells, cand)
                if self.scan_reduced is None:
                    self.scan_reduced = scan_with_hints(hints, p.channels_total,
                                                        p.per_channel_probe, p.t_scan)
                eng.schedule_at(ev.time, ap, Timer("link_going_down", {
                    "mh": MH, "predicted_ld": ld, "candidate_ap": cand, "hints": hints}))
                # the MH learns the hints through the MAG, not from this timer
            else:
                eng.schedule_at(ev.time, MH, Timer("link_down", {"ap": ap}))
                eng.schedule_at(ev.time, ap, Timer("link_down", {"mh": MH}))

    def _add_flows(self) -> None:
        sc = self.scenario
        end = sc.duration_us
        for f in sc.flows:
            o = f.options
            if f.type == "cbr":
                stop = min(end, o["stop"]) if o["stop"] is not None else end
                if o["start"] > stop:
                    continue
                self.cn.add_source(CbrSource(CbrFlowSpec(
                    f.id, "cn", MH, o["packet_size_bytes"], o["interval_us"], o["start"], stop)))
            elif f.type == "tcp":
                stop = min(end, o["stop"]) if o["stop"] is not None else end
                spec = TcpLiteFlowSpec(f.id, "cn", MH, o["segment_size_bytes"], o["init_cwnd"],
                                       o["rto_us"], o["max_cwnd"], o["ack_size_bytes"],
                                       o["start"], stop)
                sender, receiver = TcpLiteSender(spec), TcpLiteReceiver(spec, self.mh)
                self.mh.sinks[f.id] = receiver
                self.cn.add_source(sender)
                self.tcp[f.id] = (sender, receiver)
            else:
                sched = video_generate(o["gop"], o["sizes"], o["fps"], o["frames"],
                                       o["packet_size_bytes"], o["packet_interval_us"],
                                       o["start"], o["strict_b_refs"])
                sched.packets = [pk for pk in sched.packets if pk[0] <= end]
                self.video[f.id] = sched
                self.cn.add_source(VideoSource(f.id, MH, sched))

    def schedule(self) -> None:
        if self._scheduled:
            return
        self._scheduled = True
        self.engine.schedule(0, MH, Timer("boot", {"ap": self._initial_ap()}))
        self._schedule_radio()
        self._add_flows()

    # -- run ----------------------------------------------------------------------
    def _strand_leftovers(self) -> None:
        ctx = self.ctx
        for mag in self.mags.values():
            if mag.mih is None:
                continue
            for st in mag.mih.departing.values():
                for pkt in st.buffer.drain():
                    ctx.drop(pkt, "stranded")
            for st in mag.mih.arriving.values():
                for pkt in list(st.staging.drain()) + list(st.pending_new):
                    ctx.drop(pkt, "stranded")
                st.pending_new.clear()
        for hold in self.lma.holds.values():
            for pkt in hold.drain():
                ctx.drop(pkt, "stranded")
        for pending in self.lma.awaiting_marker.values():
            for pkt in pending:
                ctx.drop(pkt, "stranded")
            pending.clear()

    def run(self) -> RunResult:
        self.schedule()
        sc, eng = self.scenario, self.engine
        eng.run_until(sc.duration_us)
        for m in self.mags:
            eng.schedule(0, m, Timer("stop"))
        eng.run_until(sc.duration_us + sc.drain_us)
        eng.finish()
        self._strand_leftovers()
        return self._collect()

    def _collect(self) -> RunResult:
        sc, ctx = self.scenario, self.ctx
        rec = ctx.recorder
        traces = {fid: list(rs) for fid, rs in sorted(rec.by_flow.items())}
        conservation = {fid: FlowConservation(rec.sent[fid], rec.delivered[fid], Counter(rec.drops[fid]))
                        for fid in traces}
        primary = sc.measure_flow
        if primary is None:
            primary = next((f.id for f in sc.flows if f.type != "tcp"), None)
            if primary is None and sc.flows:
                primary = sc.flows[0].id
        detach_times = [tr.t_detach for tr in ctx.tracks.get(MH, []) if tr.t_detach is not None]
        measured = (measure_handovers(traces.get(primary, []), MH, self.variant, detach_times)
                    if primary else [])
        handovers = merge_handover_records(ctx, MH, measured)
        throughput = {}
        for f in sc.flows:
            throughput[f.id] = throughput_series(traces.get(f.id, []), sc.throughput_window_us,
                                                 f.options["start"], sc.duration_us)
        video = {}
        for fid, sched in self.video.items():
            trace = traces.get(fid, [])
            mask = decodable_frames(sched, frames_complete(sched, trace))
            series = psnr(synthetic_frames(len(sched.frames), seed=sc.seed), mask)
            video[fid] = VideoResult(sched, classify_losses(trace, sched), mask, series)
        return RunResult(
            scenario=sc, variant=self.variant,
            summary=RunSummary(self.engine.processed, self.engine.now),
            log=self.engine.log, ctx=ctx, traces=traces, handovers=handovers,
            conservation=conservation, link_stats=self.topo.link_report(), primary_flow=primary,
            tcp=self.tcp, video=video, throughput=throughput, mh=self.mh,
            scan_reduced=self.scan_reduced)


def run_scenario(scenario: Scenario, variant: str | None = None) -> RunResult:
    return Simulation(scenario, variant).run()
