"""Wired links, 1-D radio cells and linear MH mobility."""
from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field

import networkx as nx

from .engine import Engine, ScenarioError, US_PER_S
from .packet import Arrival, Packet


@dataclass
class LinkSpec:
    a: str
    b: str
    delay_us: int
    bandwidth_bps: int = 100_000_000
    queue_capacity: int = 1000
    tunnel: bool = False
    wireless: bool = False

    def __post_init__(self):
        if self.delay_us < 0:
            raise ScenarioError(f"link {self.a}-{self.b}: negative delay")
        if self.bandwidth_bps <= 0:
            raise ScenarioError(f"link {self.a}-{self.b}: bandwidth must be > 0")
        if self.queue_capacity < 0:
            raise ScenarioError(f"link {self.a}-{self.b}: negative queue capacity")
        if self.a == self.b:
            raise ScenarioError(f"link {self.a}-{self.b}: self loop")

    @property
    def endpoints(self) -> tuple[str, str]:
        return (self.a, self.b)


def serialization_us(bits: int, bandwidth_bps: int) -> int:
    # nearest microsecond; a 1-bit marker on a fast link costs 0
    return (bits * US_PER_S + bandwidth_bps // 2) // bandwidth_bps


@dataclass
class DirectionStats:
    enqueued: int = 0
    delivered: int = 0
    dropped: int = 0

    @property
    def in_flight(self) -> int:
        return self.enqueued - self.delivered - self.dropped


class Link:
    """Full-duplex link, drop-tail FIFO per direction.

    ``queue_capacity`` counts packets waiting behind the one currently
    being serialized.
    """

    def __init__(self, spec: LinkSpec):
        self.spec = spec
        self._busy: dict[str, deque[int]] = {spec.a: deque(), spec.b: deque()}
        self.stats: dict[str, DirectionStats] = {spec.a: DirectionStats(), spec.b: DirectionStats()}

    def peer(self, src: str) -> str:
        if src == self.spec.a:
            return self.spec.b
        if src == self.spec.b:
            return self.spec.a
        raise ScenarioError(f"{src!r} is not an endpoint of {self.spec.a}-{self.spec.b}")

    def _backlog(self, src: str, now: int) -> deque[int]:
        q = self._busy[src]
        while q and q[0] <= now:
            q.popleft()
        return q

    def transmit(self, src: str, pkt: Packet, now: int) -> int | None:
        """Delivery time at the far end, or ``None`` if the queue was full."""
        self.peer(src)
        q = self._backlog(src, now)
        stats = self.stats[src]
        stats.enqueued += 1
        waiting = max(0, len(q) - 1)
        if q and waiting >= self.spec.queue_capacity:
            stats.dropped += 1
            return None
        start = q[-1] if q else now
        finish = max(start, now) + serialization_us(pkt.wire_bits, self.spec.bandwidth_bps)
        q.append(finish)
        return finish + self.spec.delay_us

    def estimate_delivery(self, src: str, bits: int, at: int) -> int:
        """Delivery time a packet handed over at ``at`` would see, assuming
        no other traffic joins the queue before then."""
        q = self._busy[src]
        start = max(at, q[-1]) if q else at
        return start + serialization_us(bits, self.spec.bandwidth_bps) + self.spec.delay_us


# --- radio and mobility ------------------------------------------------------

class LinkEventKind(enum.Enum):
    LINK_DETECTED = "link_detected"
    LINK_GOING_DOWN = "link_going_down"
    LINK_DOWN = "link_down"


_KIND_RANK = {LinkEventKind.LINK_DETECTED: 0, LinkEventKind.LINK_GOING_DOWN: 1,
              LinkEventKind.LINK_DOWN: 2}


@dataclass
class RadioCell:
    ap: str
    center: float
    radius: float
    lgd_threshold: float
    ld_threshold: float
    beacon_interval_us: int = 102_400
    wireless_delay_us: int = 2_000
    channel: int = 1

    def __post_init__(self):
        if not 0 < self.lgd_threshold < self.ld_threshold <= self.radius:
            raise ScenarioError(
                f"cell {self.ap}: need 0 < lgd_threshold < ld_threshold <= radius, got "
                f"{self.lgd_threshold}, {self.ld_threshold}, {self.radius}")
        if self.beacon_interval_us <= 0:
            raise ScenarioError(f"cell {self.ap}: beacon_interval must be > 0")

    def covers(self, x: float) -> bool:
        return abs(x - self.center) <= self.radius


@dataclass(frozen=True)
class MobilityPath:
    """Linear motion; with ``stop_position`` the MH halts once it gets there."""

    start_position: float
    velocity: float
    start_time: int = 0
    stop_position: float | None = None

    def _beyond_stop(self, x: float) -> bool:
        if self.stop_position is None or self.velocity == 0:
            return False
        return (x - self.stop_position) * self.velocity > 0


def mh_position(path: MobilityPath, t: int) -> float:
    if t < path.start_time:
        raise ScenarioError(f"t={t}us precedes path start {path.start_time}us")
    x = path.start_position + path.velocity * (t - path.start_time) / US_PER_S
    return path.stop_position if path._beyond_stop(x) else x


@dataclass(frozen=True)
class LinkEvent:
    time: int
    cell: RadioCell = field(compare=False)
    kind: LinkEventKind


def _crossing(path: MobilityPath, target: float) -> int | None:
    tau = (target - path.start_position) / path.velocity
    if tau <= 0 or path._beyond_stop(target):
        return None
    return path.start_time + int(round(tau * US_PER_S))


def link_events_for_path(cells: list[RadioCell], path: MobilityPath) -> list[LinkEvent]:
    """Chronological LinkDetected / LGD / LD crossings strictly after start.

    An MH that starts already past a cell's LGD threshold (but inside LD)
    and moving outward gets its LGD at ``start_time``.
    """
    if path.velocity == 0:
        return []
    direction = math.copysign(1.0, path.velocity)
    events: list[tuple[int, int, int, LinkEvent]] = []
    for idx, cell in enumerate(cells):
        def add(t, kind):
            if t is not None:
                events.append((t, idx, _KIND_RANK[kind], LinkEvent(t, cell, kind)))

        add(_crossing(path, cell.center - direction * cell.radius), LinkEventKind.LINK_DETECTED)
        offset = (path.start_position - cell.center) * direction
        if cell.lgd_threshold <= offset < cell.ld_threshold:
            add(path.start_time, LinkEventKind.LINK_GOING_DOWN)
        else:
            add(_crossing(path, cell.center + direction * cell.lgd_threshold),
                LinkEventKind.LINK_GOING_DOWN)
        add(_crossing(path, cell.center + direction * cell.ld_threshold), LinkEventKind.LINK_DOWN)
    events.sort(key=lambda e: e[:3])
    return [e[3] for e in events]


# --- wired network ---------------------------------------------------------------

# equal-delay routes are broken by hop count
_HOP_WEIGHT = 1
_DELAY_SCALE = 1_000


class Topology:
    """Links plus delay-weighted static routing between wired entities.

    ``stub_nodes`` (the AAA server, typically) are reachable but never used
    as transit hops.
    """

    def __init__(self, engine: Engine, specs: list[LinkSpec], stub_nodes=()):
        self.engine = engine
        self.links: dict[frozenset, Link] = {}
        self.graph = nx.Graph()
        for spec in specs:
            key = frozenset(spec.endpoints)
            if key in self.links:
                raise ScenarioError(f"duplicate link {spec.a}-{spec.b}")
            self.links[key] = Link(spec)
            if not spec.wireless:
                self.graph.add_edge(spec.a, spec.b, delay=spec.delay_us,
                                    weight=spec.delay_us * _DELAY_SCALE + _HOP_WEIGHT)
        self.stub_nodes = frozenset(stub_nodes)
        self._paths: dict[str, dict[str, list[str]]] = {}
        self._build_routes()
        engine.observers.append(self._on_event)

    def _build_routes(self) -> None:
        g, stubs = self.graph, self.stub_nodes
        for src in g.nodes:
            core = g.subgraph(n for n in g.nodes if n not in stubs or n == src)
            self._paths[src] = dict(nx.single_source_dijkstra_path(core, src, weight="weight"))
            for stub in stubs - {src}:
                sub = g.subgraph(n for n in g.nodes if n not in stubs or n in (src, stub))
                try:
                    self._paths[src][stub] = nx.dijkstra_path(sub, src, stub, weight="weight")
                except nx.NetworkXNoPath:
                    pass

    def link(self, a: str, b: str) -> Link:
        try:
            return self.links[frozenset((a, b))]
        except KeyError:
            raise ScenarioError(f"no link between {a!r} and {b!r}") from None

    def has_link(self, a: str, b: str) -> bool:
        return frozenset((a, b)) in self.links

    def next_hop(self, here: str, dst: str) -> str:
        path = self.path(here, dst)
        if len(path) < 2:
            raise ScenarioError(f"no route from {here!r} to {dst!r}")
        return path[1]

    def path(self, src: str, dst: str) -> list[str]:
        try:
            return self._paths[src][dst]
        except KeyError:
            raise ScenarioError(f"no route from {src!r} to {dst!r}") from None

    def path_delay(self, src: str, dst: str) -> int:
        p = self.path(src, dst)
        return sum(self.graph.edges[a, b]["delay"] for a, b in zip(p, p[1:]))

    def send(self, src: str, nxt: str, pkt: Packet) -> bool:
        """Put ``pkt`` on the link ``src``-``nxt``; False if queue-dropped."""
        now = self.engine.now
        pkt.via.append(src)
        when = self.link(src, nxt).transmit(src, pkt, now)
        if when is None:
            return False
        self.engine.schedule(when - now, nxt, Arrival(pkt, src))
        return True

    def _on_event(self, ev) -> None:
        payload = ev.payload
        if isinstance(payload, Arrival):
            self.link(payload.hop, ev.target).stats[payload.hop].delivered += 1

    def link_report(self) -> list[tuple[str, str, DirectionStats]]:
        rows = []
        for link in self.links.values():
            for src in (link.spec.a, link.spec.b):
                rows.append((src, link.peer(src), link.stats[src]))
        return rows
