"""Scenario files: TOML with strict key checking.

Durations carry their unit in the key name (``_ms`` or ``_s``) and are
converted to integer microseconds on load. Every problem found is reported
at once through :class:`ScenarioValidationError`.
"""
from __future__ import annotations

import copy
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .analytics import LatencyParams, VARIANTS
from .engine import ScenarioError, US_PER_MS, US_PER_S
from .mih import BUFFER_LOCATIONS
from .topology import LinkSpec, RadioCell

SHIPPED = ("paper_fig8",)

FLOW_TYPES = ("cbr", "tcp", "video")


class ScenarioValidationError(ScenarioError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid scenario:\n  " + "\n  ".join(self.errors))


@dataclass
class CellConfig:
    cell: RadioCell
    mag: str


@dataclass
class FlowConfig:
    id: str
    type: str
    options: dict[str, Any]


@dataclass
class Scenario:
    raw: dict
    name: str
    duration_us: int
    drain_us: int
    seed: int
    out_dir: str
    throughput_window_us: int
    measure_flow: str | None
    log_events: bool
    variant: str
    params: LatencyParams
    binding_lifetime_us: int
    refresh_interval_us: int
    encap_overhead_bytes: int
    signaling_bytes: int
    buffer_at: str
    buffer_capacity: int
    hints: Any
    wired_bandwidth_bps: int
    wireless_bandwidth_bps: int
    queue_capacity: int
    mag_mag_link: bool
    cells: list[CellConfig]
    link_overrides: list[dict]
    start_position: float
    speed: float
    stop_position: float | None
    speeds: list[float]
    flows: list[FlowConfig] = field(default_factory=list)

    @property
    def mags(self) -> list[str]:
        return sorted({c.mag for c in self.cells})

    def with_override(self, key: str, value) -> "Scenario":
        """Copy with one dotted key (``section.key``) replaced and re-validated."""
        raw = copy.deepcopy(self.raw)
        key = SWEEP_ALIASES.get(key, key)
        section, _, name = key.partition(".")
        if not name or section not in raw and section not in SECTION_KEYS:
            raise ScenarioError(f"sweep key must be section.key, got {key!r}")
        if name not in SECTION_KEYS.get(section, ()):
            raise ScenarioError(f"unknown sweep key {key!r}")
        raw.setdefault(section, {})[name] = value
        return scenario_from_dict(raw, self.name)

    def link_specs(self) -> list[LinkSpec]:
        p = self.params
        wired, q = self.wired_bandwidth_bps, self.queue_capacity
        specs: dict[frozenset, LinkSpec] = {}

        def add(a, b, delay, bw=wired, tunnel=False, wireless=False):
            specs[frozenset((a, b))] = LinkSpec(a, b, delay, bw, q, tunnel, wireless)

        add("cn", "lma", p.t_ca)
        for mag in self.mags:
            add("lma", mag, p.t_ag, tunnel=True)
            add(mag, "aaa", p.t_a)
        for c in self.cells:
            add(c.mag, c.cell.ap, p.t_ma)
            add(c.cell.ap, "mh", c.cell.wireless_delay_us, self.wireless_bandwidth_bps, wireless=True)
        if self.mag_mag_link:
            mags = self.mags
            for a, b in zip(mags, mags[1:]):
                add(a, b, 2 * p.t_ag)
        for o in self.link_overrides:
            key = frozenset((o["a"], o["b"]))
            base = specs.get(key)
            if base is None:
                add(o["a"], o["b"], _ms(o.get("delay_ms", 0)))
                base = specs[key]
            specs[key] = LinkSpec(
                base.a, base.b,
                _ms(o["delay_ms"]) if "delay_ms" in o else base.delay_us,
                _mbps(o["bandwidth_mbps"]) if "bandwidth_mbps" in o else base.bandwidth_bps,
                o.get("queue_capacity", base.queue_capacity), base.tunnel, base.wireless)
        return list(specs.values())


SECTION_KEYS: dict[str, tuple[str, ...]] = {
    "run": ("duration_s", "drain_s", "seed", "out_dir", "throughput_window_ms", "measure_flow",
            "log_events", "name"),
    "protocol": ("variant", "t_pm_ms", "t_ma_ms", "t_ag_ms", "t_ca_ms", "t_cm_ms", "t_a_ms",
                 "t_re_ass_ms", "t_attach_ms", "t_config_ms", "t_dad_ms", "lma_processing_ms",
                 "binding_lifetime_s", "refresh_interval_s", "encap_overhead_bytes",
                 "signaling_bytes"),
    "mih": ("buffer_at", "buffer_capacity", "per_channel_probe_ms", "channels_total", "hints"),
    "topology": ("wired_bandwidth_mbps", "wireless_bandwidth_mbps", "queue_capacity",
                 "mag_mag_link", "cells", "links"),
    "mobility": ("start_position", "speed", "stop_position", "speeds"),
    "flows": (),
}
CELL_KEYS = ("ap", "mag", "center", "radius", "lgd_threshold", "ld_threshold",
             "beacon_interval_ms", "channel")
LINK_KEYS = ("a", "b", "delay_ms", "bandwidth_mbps", "queue_capacity")
FLOW_KEYS = {
    "cbr": ("packet_size_bytes", "interval_ms", "start_s", "stop_s"),
    "tcp": ("segment_size_bytes", "init_cwnd", "rto_ms", "max_cwnd", "start_s", "stop_s",
            "ack_size_bytes"),
    "video": ("gop", "i_bytes", "p_bytes", "b_bytes", "fps", "frames", "packet_size_bytes",
              "packet_interval_ms", "start_s", "strict_b_refs"),
}
SWEEP_ALIASES = {"speed": "mobility.speed", "variant": "protocol.variant"}

PARAM_KEYS = {"t_pm_ms": "t_pm", "t_ma_ms": "t_ma", "t_ag_ms": "t_ag", "t_ca_ms": "t_ca",
              "t_cm_ms": "t_cm", "t_a_ms": "t_a", "t_re_ass_ms": "t_re_ass",
              "t_attach_ms": "t_attach", "t_config_ms": "t_config", "t_dad_ms": "t_dad",
              "lma_processing_ms": "lma_processing"}
PARAM_DEFAULTS_MS = {"t_pm_ms": 2.0, "t_ma_ms": 0.5, "t_ag_ms": 1.0, "t_ca_ms": 10.0,
                     "t_cm_ms": 11.0, "t_a_ms": 2.0, "t_re_ass_ms": 4.0, "t_attach_ms": 1.0,
                     "t_config_ms": 10.0, "t_dad_ms": 1000.0, "lma_processing_ms": 0.0}


def _ms(v) -> int:
    return int(round(v * US_PER_MS))


def _s(v) -> int:
    return int(round(v * US_PER_S))


def _mbps(v) -> int:
    return int(round(v * 1_000_000))


class _Reader:
    """Typed access to one table, collecting errors instead of raising."""

    def __init__(self, table: dict, where: str, allowed, errors: list[str]):
        self.t = table if isinstance(table, dict) else {}
        self.where = where
        self.errors = errors
        if not isinstance(table, dict):
            errors.append(f"[{where}] must be a table")
        for k in self.t:
            if k not in allowed:
                errors.append(f"[{where}] unknown key {k!r}")

    def get(self, key, kind, default=None, required=False, minimum=None, positive=False):
        if key not in self.t:
            if required:
                self.errors.append(f"[{self.where}] missing required key {key!r}")
            return default
        v = self.t[key]
        ok = isinstance(v, kind) and not (kind is not bool and isinstance(v, bool))
        if kind is float and isinstance(v, int) and not isinstance(v, bool):
            v, ok = float(v), True
        if not ok:
            self.errors.append(f"[{self.where}] {key} must be {getattr(kind, '__name__', kind)}, "
                               f"got {v!r}")
            return default
        if minimum is not None and v < minimum:
            self.errors.append(f"[{self.where}] {key} must be >= {minimum}, got {v!r}")
            return default
        if positive and v <= 0:
            self.errors.append(f"[{self.where}] {key} must be > 0, got {v!r}")
            return default
        return v


def scenario_from_dict(raw: dict, name: str = "scenario") -> Scenario:
    errors: list[str] = []
    for section in raw:
        if section not in SECTION_KEYS:
            errors.append(f"unknown section [{section}]")

    run = _Reader(raw.get("run", {}), "run", SECTION_KEYS["run"], errors)
    duration = run.get("duration_s", float, 30.0, positive=True)
    drain = run.get("drain_s", float, 2.0, minimum=0)
    seed = run.get("seed", int, 1)
    out_dir = run.get("out_dir", str, "out")
    window = run.get("throughput_window_ms", float, 100.0, positive=True)
    measure_flow = run.get("measure_flow", str)
    log_events = run.get("log_events", bool, True)
    name = run.get("name", str, name)

    proto = _Reader(raw.get("protocol", {}), "protocol", SECTION_KEYS["protocol"], errors)
    variant = proto.get("variant", str, required=True)
    if variant is not None and variant not in VARIANTS:
        errors.append(f"[protocol] variant must be one of {VARIANTS}, got {variant!r}")
    values = {PARAM_KEYS[k]: _ms(proto.get(k, float, d, minimum=0))
              for k, d in PARAM_DEFAULTS_MS.items()}
    lifetime = proto.get("binding_lifetime_s", float, 30.0, positive=True)
    refresh = proto.get("refresh_interval_s", float, 10.0, positive=True)
    encap = proto.get("encap_overhead_bytes", int, 40, minimum=0)
    sig_bytes = proto.get("signaling_bytes", int, 0, minimum=0)
    if lifetime is not None and refresh is not None and refresh >= lifetime:
        errors.append("[protocol] refresh_interval_s must be shorter than binding_lifetime_s")

    mih = _Reader(raw.get("mih", {}), "mih", SECTION_KEYS["mih"], errors)
    buffer_at = mih.get("buffer_at", str, "pmag")
    if buffer_at not in BUFFER_LOCATIONS:
        errors.append(f"[mih] buffer_at must be one of {BUFFER_LOCATIONS}, got {buffer_at!r}")
    capacity = mih.get("buffer_capacity", int, 1000, minimum=0)
    probe = mih.get("per_channel_probe_ms", float, 5.0, minimum=0)
    channels = mih.get("channels_total", int, 11, minimum=0)
    hints = mih.get("hints", (str, list), "auto")
    if isinstance(hints, str) and hints not in ("auto", "none"):
        errors.append(f"[mih] hints must be 'auto', 'none' or a list of [ap, channel], got {hints!r}")
    elif isinstance(hints, list):
        if not all(isinstance(h, list) and len(h) == 2 and isinstance(h[0], str)
                   and isinstance(h[1], int) for h in hints):
            errors.append("[mih] hints list entries must be [ap, channel]")
        else:
            hints = [tuple(h) for h in hints]
    values["per_channel_probe"] = _ms(probe or 0)
    values["channels_total"] = channels or 0
    params = None
    try:
        params = LatencyParams(**values)
    except ValueError as exc:
        errors.append(f"[protocol] {exc}")

    topo = _Reader(raw.get("topology", {}), "topology", SECTION_KEYS["topology"], errors)
    wired = topo.get("wired_bandwidth_mbps", float, 100.0, positive=True)
    wireless = topo.get("wireless_bandwidth_mbps", float, 11.0, positive=True)
    queue = topo.get("queue_capacity", int, 1000, minimum=0)
    mag_mag = topo.get("mag_mag_link", bool, False)
    cells: list[CellConfig] = []
    raw_cells = topo.get("cells", list, [], required=True)
    if raw_cells == [] and "cells" in topo.t:
        errors.append("[topology] at least one cell is required")
    t_pm = params.t_pm if params else 0
    for i, rc in enumerate(raw_cells or []):
        r = _Reader(rc, f"topology.cells[{i}]", CELL_KEYS, errors)
        ap = r.get("ap", str, required=True)
        mag = r.get("mag", str, required=True)
        center = r.get("center", float, required=True)
        radius = r.get("radius", float, required=True, positive=True)
        lgd = r.get("lgd_threshold", float, required=True)
        ld = r.get("ld_threshold", float, required=True)
        beacon = r.get("beacon_interval_ms", float, 102.4)
        channel = r.get("channel", int, i + 1, minimum=1)
        if None in (ap, mag, center, radius, lgd, ld, beacon):
            continue
        try:
            cell = RadioCell(ap, center, radius, lgd, ld, _ms(beacon), t_pm, channel)
        except ScenarioError as exc:
            errors.append(f"[topology.cells[{i}]] {exc}")
            continue
        cells.append(CellConfig(cell, mag))
    names = [c.cell.ap for c in cells] + [c.mag for c in cells]
    reserved = {"cn", "lma", "aaa", "mh"}
    if len({c.cell.ap for c in cells}) != len(cells):
        errors.append("[topology] duplicate AP names")
    if {c.cell.ap for c in cells} & {c.mag for c in cells}:
        errors.append("[topology] an AP and a MAG share a name")
    for n in names:
        if n in reserved:
            errors.append(f"[topology] name {n!r} is reserved")
    overrides = []
    known = reserved | set(names)
    for i, lo in enumerate(topo.get("links", list, []) or []):
        r = _Reader(lo, f"topology.links[{i}]", LINK_KEYS, errors)
        a, b = r.get("a", str, required=True), r.get("b", str, required=True)
        r.get("delay_ms", float, minimum=0)
        r.get("bandwidth_mbps", float, positive=True)
        r.get("queue_capacity", int, minimum=0)
        for end in (a, b):
            if end is not None and end not in known:
                errors.append(f"[topology.links[{i}]] unknown entity {end!r}")
        if a is not None and b is not None:
            overrides.append(dict(lo))

    mob = _Reader(raw.get("mobility", {}), "mobility", SECTION_KEYS["mobility"], errors)
    start = mob.get("start_position", float, 0.0)
    speed = mob.get("speed", float, 20.0, minimum=0)
    stop = mob.get("stop_position", float)
    speeds = mob.get("speeds", list, [])
    if not all(isinstance(v, (int, float)) and not isinstance(v, bool) and v >= 0 for v in speeds):
        errors.append("[mobility] speeds must be non-negative numbers")
    if cells and start is not None and not any(c.cell.covers(start) for c in cells):
        errors.append(f"[mobility] start_position {start} is outside every cell")

    flows: list[FlowConfig] = []
    raw_flows = raw.get("flows", [])
    if not isinstance(raw_flows, list):
        errors.append("[[flows]] must be an array of tables")
        raw_flows = []
    for i, rf in enumerate(raw_flows):
        ftype = rf.get("type") if isinstance(rf, dict) else None
        if ftype not in FLOW_TYPES:
            errors.append(f"[flows[{i}]] type must be one of {FLOW_TYPES}, got {ftype!r}")
            continue
        r = _Reader(rf, f"flows[{i}]", ("id", "type") + FLOW_KEYS[ftype], errors)
        fid = r.get("id", str, required=True)
        if fid is not None and "/" in fid:
            errors.append(f"[flows[{i}]] id may not contain '/'")
        opts = _flow_options(r, ftype)
        if fid is not None:
            if any(f.id == fid for f in flows):
                errors.append(f"[flows[{i}]] duplicate flow id {fid!r}")
            flows.append(FlowConfig(fid, ftype, opts))
    if measure_flow is not None and not any(f.id == measure_flow for f in flows):
        errors.append(f"[run] measure_flow {measure_flow!r} names no flow")

    if errors:
        raise ScenarioValidationError(errors)
    return Scenario(
        raw=raw, name=name, duration_us=_s(duration), drain_us=_s(drain), seed=seed,
        out_dir=out_dir, throughput_window_us=_ms(window), measure_flow=measure_flow,
        log_events=log_events, variant=variant, params=params,
        binding_lifetime_us=_s(lifetime), refresh_interval_us=_s(refresh),
        encap_overhead_bytes=encap, signaling_bytes=sig_bytes, buffer_at=buffer_at,
        buffer_capacity=capacity, hints=hints, wired_bandwidth_bps=_mbps(wired),
        wireless_bandwidth_bps=_mbps(wireless), queue_capacity=queue, mag_mag_link=mag_mag,
        cells=cells, link_overrides=overrides, start_position=start, speed=speed,
        stop_position=stop, speeds=[float(v) for v in speeds], flows=flows)


def _flow_options(r: _Reader, ftype: str) -> dict:
    o: dict[str, Any] = {"start": _s(r.get("start_s", float, 0.0, minimum=0))}
    if ftype == "cbr":
        o["packet_size_bytes"] = r.get("packet_size_bytes", int, 1000, positive=True)
        o["interval_us"] = _ms(r.get("interval_ms", float, 1.0, positive=True))
        stop = r.get("stop_s", float)
        o["stop"] = None if stop is None else _s(stop)
        if o["interval_us"] <= 0:
            r.errors.append(f"[{r.where}] interval_ms rounds to 0 us")
    elif ftype == "tcp":
        o["segment_size_bytes"] = r.get("segment_size_bytes", int, 1040, positive=True)
        o["ack_size_bytes"] = r.get("ack_size_bytes", int, 40, positive=True)
        o["init_cwnd"] = r.get("init_cwnd", int, 1, minimum=1)
        o["max_cwnd"] = r.get("max_cwnd", int, 20, minimum=1)
        o["rto_us"] = _ms(r.get("rto_ms", float, 200.0, positive=True))
        stop = r.get("stop_s", float)
        o["stop"] = None if stop is None else _s(stop)
    else:
        o["gop"] = r.get("gop", str, "IBBPBBPBBPBB")
        if not o["gop"] or o["gop"][0] != "I" or set(o["gop"]) - set("IPB"):
            r.errors.append(f"[{r.where}] gop must be non-empty, start with I and use I/P/B only")
        o["sizes"] = {"I": r.get("i_bytes", int, 8192, positive=True),
                      "P": r.get("p_bytes", int, 3072, positive=True),
                      "B": r.get("b_bytes", int, 1024, positive=True)}
        o["fps"] = r.get("fps", float, 30.0, positive=True)
        o["frames"] = r.get("frames", int, 300, positive=True)
        o["packet_size_bytes"] = r.get("packet_size_bytes", int, 1028, positive=True)
        o["packet_interval_us"] = _ms(r.get("packet_interval_ms", float, 1.0, minimum=0))
        o["strict_b_refs"] = r.get("strict_b_refs", bool, False)
    return o


def shipped_scenario_path(name: str) -> Path:
    return Path(str(resources.files("pmipmih") / "scenarios" / f"{name}.toml"))


def load_scenario(path) -> Scenario:
    """Load a scenario file; a bare shipped name such as ``paper_fig8`` also works."""
    p = Path(path)
    if not p.exists() and str(path) in SHIPPED:
        p = shipped_scenario_path(str(path))
    try:
        text = p.read_text()
    except OSError as exc:
        raise ScenarioValidationError([f"cannot read {path}: {exc}"]) from None
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioValidationError([f"{path}: {exc}"]) from None
    return scenario_from_dict(raw, p.stem)
