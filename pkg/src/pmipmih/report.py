"""Per-run CSV/text outputs and the sweep summary."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable

from .analytics import LatencyBudget, closed_form
from .engine import US_PER_MS
from .pmipv6 import HandoverTrack
from .sim import RunResult

# Measured phases as consecutive marks: (row, mark that ends the phase)
_CHAINS = {
    "pmipv6": [("L2.wait", "l2_start"), ("L2.scan", "scan_done"), ("L2.aaa", "auth_ok"),
               ("L2.re_ass", "l2_done"), ("L3.attach", "pbu_sent"), ("L3.pbu", "pbu_rx"),
               ("L3.lma_processing", "switch"), ("L3.pba", "pba_rx"), ("L3.ra", "ra_rx")],
    "pmipv6_mih": [("L2.wait", "l2_start"), ("L2.scan", "scan_done"), ("L2.re_ass", "l2_done"),
                   ("L3.link_up", "pbu_sent"), ("L3.pbu", "pbu_rx"),
                   ("L3.lma_processing", "switch"), ("L3.commit", "ra_sent"), ("L3.ra", "ra_rx")],
}


def _ms(v: int | None) -> str:
    return "" if v is None else f"{v / US_PER_MS:.3f}"


def measured_phases(track: HandoverTrack, variant: str) -> dict[str, int | None]:
    """Durations between consecutive handover marks; they sum to detach-to-RA."""
    out: dict[str, int | None] = {}
    prev = track.marks.get("detach")
    for row, mark in _CHAINS[variant]:
        cur = track.marks.get(mark)
        out[row] = None if cur is None or prev is None else cur - prev
        if cur is not None:
            prev = cur
    return out


def budget_table(budget: LatencyBudget, measured: dict[str, int | None] | None = None) -> str:
    """Plain-text closed-form budget, optionally beside measured phases."""
    rows = dict.fromkeys(list(measured or {}) + list(budget.breakdown))
    lines = [f"variant: {budget.variant}",
             f"{'term':<20}{'closed_ms':>12}" + (f"{'measured_ms':>14}" if measured is not None else "")]
    m_l2 = m_l3 = 0
    for row in rows:
        closed = budget.breakdown.get(row, 0)
        line = f"{row:<20}{closed / US_PER_MS:>12.3f}"
        if measured is not None:
            m = measured.get(row)
            line += f"{'-' if m is None else f'{m / US_PER_MS:.3f}':>14}"
            if m is not None:
                if row.startswith("L2."):
                    m_l2 += m
                else:
                    m_l3 += m
        lines.append(line)
    totals = [("L2", budget.l2, m_l2), ("L3", budget.l3, m_l3), ("total", budget.total, m_l2 + m_l3)]
    for name, closed, meas in totals:
        line = f"{name:<20}{closed / US_PER_MS:>12.3f}"
        if measured is not None:
            line += f"{meas / US_PER_MS:>14.3f}"
        lines.append(line)
    return "\n".join(lines) + "\n"


def _write_csv(path: Path, header: list[str], rows: Iterable) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _safe(flow_id: str) -> str:
    return flow_id.replace("/", "_")


def emit_report(result: RunResult, out_dir) -> list[Path]:
    """Write every per-run artifact of ``result`` under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    def path(name: str) -> Path:
        p = out / name
        written.append(p)
        return p

    with open(path("events.log"), "w") as fh:
        for line in result.log:
            fh.write(line + "\n")

    _write_csv(path("handover_records.csv"),
               ["mh_id", "variant", "old_mag", "new_mag", "t_detach_us", "t_ra_us", "t_last_old_us",
                "t_first_new_us", "latency_ms", "signaling_latency_ms", "lost_packets",
                "buffered_packets", "flushed_packets", "buffer_drops", "fallback"],
               [[h.mh_id, h.variant, h.old_mag or "", h.new_mag or "", _v(h.t_detach), _v(h.t_ra),
                 _v(h.t_last_old), _v(h.t_first_new), _ms(h.latency), _ms(h.signaling_latency),
                 h.lost_packets, h.buffered_packets, h.flushed_packets, h.buffer_drops,
                 int(h.fallback)] for h in result.handovers])

    _write_csv(path("throughput.csv"), ["flow_id", "t_s", "mbps"],
               [[fid, f"{t:.3f}", f"{v:.6f}"] for fid, series in result.throughput.items()
                for t, v in series])

    for fid, trace in result.traces.items():
        _write_csv(path(f"trace_{_safe(fid)}.csv"),
                   ["flow_id", "seq", "sent_us", "delivered_us", "via_mag"],
                   [[r.flow_id, r.seq, r.sent_us, "LOST" if r.delivered_us is None else r.delivered_us,
                     r.via_mag or ""] for r in trace])

    _write_csv(path("conservation.csv"),
               ["flow_id", "sent", "delivered", "lost", "buffer_dropped", "unaccounted", "drop_reasons"],
               [[fid, c.sent, c.delivered, c.lost, c.buffer_dropped, c.unaccounted,
                 ";".join(f"{k}={v}" for k, v in sorted(c.drops.items()))]
                for fid, c in result.conservation.items()])
    _write_csv(path("links.csv"), ["src", "dst", "enqueued", "delivered", "dropped", "in_flight"],
               [[a, b, st.enqueued, st.delivered, st.dropped, st.in_flight]
                for a, b, st in result.link_stats])

    _write_csv(path("psnr.csv"), ["flow_id", "frame", "psnr_db"],
               [[fid, n, f"{v:.4f}"] for fid, vr in result.video.items()
                for n, v in zip(vr.psnr.frames, vr.psnr.values)])
    with open(path("loss_report.txt"), "w") as fh:
        if not result.video:
            fh.write("no video flow in this run\n")
        for fid, vr in result.video.items():
            if len(result.video) > 1:
                fh.write(f"# {fid}\n")
            fh.write(vr.report.format())

    budget = closed_form(result.variant, result.scenario.params, result.scan_reduced)
    tracks = [t for t in result.ctx.tracks.get("mh", []) if t.t_detach is not None]
    with open(path("budget.txt"), "w") as fh:
        if not tracks:
            fh.write(budget_table(budget))
        for i, tr in enumerate(tracks):
            fh.write(f"# handover {i} at {tr.t_detach} us\n")
            fh.write(budget_table(budget, measured_phases(tr, result.variant)))
    return written


def _v(x) -> str:
    return "" if x is None else str(x)


SWEEP_HEADER = ["param_value", "variant", "latency_ms", "loss", "mean_throughput_mbps",
                "signaling_latency_ms", "closed_form_ms", "error"]


def sweep_row(value, variant: str, result: RunResult | None, error: str = "") -> list:
    if result is None:
        return [value, variant, "", "", "", "", "", error]
    h = result.first_handover()
    latency = h.latency if h is not None and h.latency is not None else None
    signaling = h.signaling_latency if h is not None else None
    if latency is None:
        latency = signaling
    primary = result.conservation.get(result.primary_flow) if result.primary_flow else None
    loss = "" if primary is None else primary.lost + primary.buffer_dropped
    return [value, variant, _ms(latency), loss, f"{result.mean_throughput():.6f}",
            _ms(signaling), _ms(result.closed_form_total()), error]


def write_sweep_summary(rows: list[list], out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    p = out / "sweep_summary.csv"
    _write_csv(p, SWEEP_HEADER, rows)
    return p
