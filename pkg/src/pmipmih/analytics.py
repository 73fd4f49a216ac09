"""Closed-form handover latency model and trace metrics.

All durations are integer microseconds so the closed form can be compared
exactly with simulated timestamps.
"""
from __future__ import annotations

import dataclasses
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .engine import US_PER_MS, US_PER_S

VARIANTS = ("pmipv6", "pmipv6_mih")
BUDGET_VARIANTS = VARIANTS + ("initial_entry",)

PSNR_CAP_DB = 100.0


@dataclass
class LatencyParams:
    """Delay terms of the analytical model, in microseconds.

    ``t_scan`` may be omitted when ``channels_total`` and
    ``per_channel_probe`` are given; it is then their product.
    """

    t_pm: int = 2_000        # MH <-> AP (wireless)
    t_ma: int = 500          # AP <-> MAG
    t_ag: int = 1_000        # MAG <-> LMA
    t_ca: int = 10_000       # CN <-> LMA
    t_cm: int = 11_000       # CN <-> MAG (housed, not used by the model)
    t_a: int = 2_000         # mobility agent <-> AAA
    t_scan: int | None = None
    t_re_ass: int = 4_000
    t_attach: int = 1_000
    t_config: int = 10_000
    t_dad: int = 1_000_000
    channels_total: int = 11
    per_channel_probe: int = 5_000
    lma_processing: int = 0

    def __post_init__(self):
        product = self.channels_total * self.per_channel_probe
        if self.t_scan is None:
            self.t_scan = product
        elif self.per_channel_probe and self.channels_total and self.t_scan != product:
            raise ValueError(
                f"t_scan={self.t_scan} disagrees with channels_total*per_channel_probe={product}")
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, int) or v < 0:
                raise ValueError(f"{f.name} must be a non-negative integer, got {v!r}")

    @classmethod
    def from_ms(cls, **values) -> "LatencyParams":
        counts = {"channels_total"}
        conv = {k: (int(v) if k in counts else int(round(v * US_PER_MS))) for k, v in values.items()}
        return cls(**conv)

    def replace(self, **changes) -> "LatencyParams":
        return dataclasses.replace(self, **changes)


@dataclass
class LatencyBudget:
    variant: str
    l2_terms: dict[str, int]
    l3_terms: dict[str, int]

    @property
    def l2(self) -> int:
        return sum(self.l2_terms.values())

    @property
    def l3(self) -> int:
        return sum(self.l3_terms.values())

    @property
    def total(self) -> int:
        return self.l2 + self.l3

    @property
    def breakdown(self) -> dict[str, int]:
        return {**{f"L2.{k}": v for k, v in self.l2_terms.items()},
                **{f"L3.{k}": v for k, v in self.l3_terms.items()}}

    @property
    def total_ms(self) -> float:
        return self.total / US_PER_MS


def closed_form(variant: str, params: LatencyParams, scan_reduced: int | None = None) -> LatencyBudget:
    """Seamless handover latency as L2 + L3 for one variant.

    ``scan_reduced`` is the hint-shortened scan of the MIH variant; when
    omitted the full ``t_scan`` is used. ``initial_entry`` budgets the first
    attachment to the domain (address configuration, DAD, RS/RA).
    """
    p = params
    if variant == "pmipv6":
        l2 = {"scan": p.t_scan, "aaa": 4 * p.t_a, "re_ass": p.t_re_ass}
        l3 = {"attach": p.t_attach, "pbu": p.t_ag, "lma_processing": p.lma_processing,
              "pba": p.t_ag, "ra": p.t_ma + p.t_pm}
    elif variant == "pmipv6_mih":
        scan = p.t_scan if scan_reduced is None else scan_reduced
        l2 = {"scan": scan, "re_ass": p.t_re_ass}
        l3 = {"pbu": p.t_ag, "lma_processing": p.lma_processing, "ra": p.t_ma + p.t_pm}
    elif variant == "initial_entry":
        l2 = {}
        l3 = {"rs": p.t_pm + p.t_ma, "pbu": p.t_ag, "lma_processing": p.lma_processing,
              "pba": p.t_ag, "ra": p.t_ma + p.t_pm, "config": p.t_config, "dad": p.t_dad}
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return LatencyBudget(variant, l2, l3)


def latency_gap(params: LatencyParams, scan_reduced: int) -> int:
    """Closed-form PMIPv6 minus PMIPv6-MIH latency."""
    return params.t_attach + params.t_ag + 4 * params.t_a + (params.t_scan - scan_reduced)


# --- trace metrics ------------------------------------------------------------

@dataclass
class DeliveryRecord:
    flow_id: str
    seq: int
    sent_us: int
    delivered_us: int | None
    via_mag: str | None
    size_bytes: int = 0
    frame_ref: int | None = None

    @property
    def lost(self) -> bool:
        return self.delivered_us is None


@dataclass
class HandoverRecord:
    mh_id: str
    variant: str
    t_last_old: int | None
    t_first_new: int | None
    old_mag: str | None = None
    new_mag: str | None = None
    lost_packets: int = 0
    buffered_packets: int = 0
    flushed_packets: int = 0
    buffer_drops: int = 0
    t_detach: int | None = None
    t_ra: int | None = None
    fallback: bool = False

    @property
    def complete(self) -> bool:
        return self.t_last_old is not None and self.t_first_new is not None

    @property
    def latency(self) -> int | None:
        if not self.complete:
            return None
        return self.t_first_new - self.t_last_old

    @property
    def signaling_latency(self) -> int | None:
        """Detach at the old AP to router advertisement at the MH."""
        if self.t_detach is None or self.t_ra is None:
            return None
        return self.t_ra - self.t_detach


def measure_handovers(trace: Iterable[DeliveryRecord], mh_id: str = "mh",
                      variant: str = "?", detach_times: Sequence[int] = ()) -> list[HandoverRecord]:
    """One record per change of serving MAG in the delivery sequence of a flow.

    Deliveries are ordered by arrival time; ``lost_packets`` counts the
    undelivered sequence numbers between the last packet through the old
    MAG and the first through the new one. A detach time with no later
    change of MAG yields an incomplete record.
    """
    records = list(trace)
    delivered = sorted((r for r in records if r.delivered_us is not None),
                       key=lambda r: (r.delivered_us, r.seq))
    lost_seqs = sorted(r.seq for r in records if r.delivered_us is None)
    out: list[HandoverRecord] = []
    for prev, cur in zip(delivered, delivered[1:]):
        if cur.via_mag == prev.via_mag:
            continue
        lo, hi = sorted((prev.seq, cur.seq))
        lost = sum(1 for s in lost_seqs if lo < s < hi)
        out.append(HandoverRecord(mh_id, variant, prev.delivered_us, cur.delivered_us,
                                  prev.via_mag, cur.via_mag, lost_packets=lost))
    for td in detach_times:
        if any(r.complete and r.t_last_old <= td < r.t_first_new for r in out):
            continue
        before = [d.delivered_us for d in delivered if d.delivered_us <= td]
        out.append(HandoverRecord(mh_id, variant, max(before, default=None), None, t_detach=td))
    out.sort(key=lambda r: (r.t_last_old if r.t_last_old is not None else -1))
    return out


def measure_handover(trace: Iterable[DeliveryRecord], **kw) -> HandoverRecord:
    recs = measure_handovers(trace, **kw)
    if not recs:
        return HandoverRecord(kw.get("mh_id", "mh"), kw.get("variant", "?"), None, None)
    return recs[0]


def throughput_series(trace: Iterable[DeliveryRecord], window_us: int, start: int = 0,
                      end: int | None = None) -> list[tuple[float, float]]:
    """Delivered payload Mb/s per window, windows aligned to ``start``."""
    if window_us <= 0:
        raise ValueError("window must be > 0")
    bins: dict[int, int] = defaultdict(int)
    last = start
    for r in trace:
        if r.delivered_us is None or r.delivered_us < start:
            continue
        if end is not None and r.delivered_us >= end:
            continue
        bins[(r.delivered_us - start) // window_us] += 8 * r.size_bytes
        last = max(last, r.delivered_us)
    stop = end if end is not None else last + 1
    n = max(0, math.ceil((stop - start) / window_us))
    return [((start + k * window_us) / US_PER_S, bins.get(k, 0) / window_us)
            for k in range(n)]


# --- video quality ------------------------------------------------------------

@dataclass
class PsnrSeries:
    frames: list[int]
    values: list[float]
    cap: float = PSNR_CAP_DB
    skipped: list[int] = field(default_factory=list)

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.frames, self.values))


def frame_psnr(src: np.ndarray, dst: np.ndarray, bits: int = 8, cap: float = PSNR_CAP_DB) -> float:
    diff = src.astype(np.float64) - dst.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return cap
    peak = 2 ** bits - 1
    return min(cap, 20.0 * math.log10(peak / math.sqrt(mse)))


def psnr(source_frames: Iterable[np.ndarray], received_mask: Sequence[bool], bits: int = 8,
         cap: float = PSNR_CAP_DB) -> PsnrSeries:
    """Per-frame PSNR with repeat-last-decodable concealment.

    Frames before the first decodable one have nothing to show and are
    listed in ``skipped``.
    """
    series = PsnrSeries([], [], cap)
    shown = None
    for n, frame in enumerate(source_frames):
        if n >= len(received_mask):
            break
        if received_mask[n]:
            shown = frame
        if shown is None:
            series.skipped.append(n)
            continue
        series.frames.append(n)
        series.values.append(frame_psnr(frame, shown, bits, cap))
    return series


def synthetic_frames(count: int, width: int = 352, height: int = 288, seed: int = 1,
                     pan: int = 3) -> Iterator[np.ndarray]:
    """Deterministic luminance frames: a textured base panning ``pan`` px/frame.

    Neighbouring frames are similar, so concealing a lost frame with an
    older one costs more the further back the shown frame is.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width]
    base = (96 + 64 * np.sin(xx / 17.0) * np.cos(yy / 23.0)
            + rng.normal(0, 24, size=(height, width)))
    base = np.clip(base, 0, 255).astype(np.uint8)
    for i in range(count):
        yield np.roll(base, shift=pan * i, axis=1)
