"""Deterministic discrete-event core.

Time is kept as integer microseconds. Events are popped in
``(fire_time, seq)`` order, where ``seq`` is a per-engine insertion
counter, so simultaneous events run in the order they were scheduled.
"""
from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol

US_PER_S = 1_000_000
US_PER_MS = 1_000


def us(seconds: float) -> int:
    """Convert seconds to integer microseconds (round half up)."""
    return int(seconds * US_PER_S + 0.5)


def ms(milliseconds: float) -> int:
    return int(milliseconds * US_PER_MS + 0.5)


def fmt_s(time_us: int) -> str:
    return f"{time_us / US_PER_S:.6f}"


class ScenarioError(ValueError):
    """Raised for invalid scenario construction or use of the engine."""


class SimulationError(RuntimeError):
    """A handler raised while processing an event; wraps the original."""

    def __init__(self, event: Event, cause: BaseException):
        super().__init__(
            f"handler for event seq={event.seq} at t={event.fire_time}us "
            f"target={event.target} kind={payload_kind(event.payload)} failed: {cause!r}"
        )
        self.event = event
        self.cause = cause


class Entity(Protocol):
    name: str

    def handle(self, payload: Any) -> None: ...


@dataclass(order=True)
class Event:
    fire_time: int
    seq: int
    target: str = field(compare=False)
    payload: Any = field(compare=False)
    cancelled: bool = field(default=False, compare=False)
    fired: bool = field(default=False, compare=False)


class EventHandle:
    __slots__ = ("_event",)

    def __init__(self, event: Event):
        self._event = event

    @property
    def fire_time(self) -> int:
        return self._event.fire_time

    @property
    def pending(self) -> bool:
        return not (self._event.fired or self._event.cancelled)


@dataclass
class RunSummary:
    events_processed: int
    final_clock: int


def payload_kind(payload: Any) -> str:
    kind = getattr(payload, "kind", None)
    if kind is None:
        return type(payload).__name__
    return str(kind)


def payload_detail(payload: Any) -> str:
    describe = getattr(payload, "describe", None)
    if callable(describe):
        return describe()
    return "-"


class Engine:
    """Single global event queue with a simulated clock."""

    def __init__(self, log_events: bool = True):
        self.now = 0
        self._queue: list[Event] = []
        self._seq = itertools.count()
        self._entities: dict[str, Entity] = {}
        self._finished = False
        self.processed = 0
        self.log_events = log_events
        self.log: list[str] = []
        self.observers: list[Callable[[Event], None]] = []

    def register(self, entity: Entity) -> None:
        if entity.name in self._entities:
            raise ScenarioError(f"duplicate entity id {entity.name!r}")
        self._entities[entity.name] = entity

    def entity(self, name: str) -> Entity:
        try:
            return self._entities[name]
        except KeyError:
            raise ScenarioError(f"unknown entity {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._entities

    def schedule(self, delay: int, target: str, payload: Any) -> EventHandle:
        if self._finished:
            raise ScenarioError("simulation already finished")
        if delay < 0:
            raise ScenarioError(f"negative delay {delay}us for {target}")
        if target not in self._entities:
            raise ScenarioError(f"unknown entity {target!r}")
        ev = Event(self.now + int(delay), next(self._seq), target, payload)
        heapq.heappush(self._queue, ev)
        return EventHandle(ev)

    def schedule_at(self, time_us: int, target: str, payload: Any) -> EventHandle:
        return self.schedule(time_us - self.now, target, payload)

    def cancel(self, handle: EventHandle | None) -> bool:
        if handle is None:
            return False
        ev = handle._event
        if ev.fired or ev.cancelled:
            return False
        ev.cancelled = True
        return True

    def pending(self) -> int:
        return sum(1 for ev in self._queue if not ev.cancelled)

    def run_until(self, end: int) -> RunSummary:
        """Dispatch every event with ``fire_time <= end``; clock ends at ``end``."""
        count = 0
        while self._queue and self._queue[0].fire_time <= end:
            ev = heapq.heappop(self._queue)
            if ev.cancelled:
                continue
            assert ev.fire_time >= self.now, "clock would run backwards"
            self.now = ev.fire_time
            ev.fired = True
            if self.log_events:
                self.log.append(
                    f"{ev.fire_time} {ev.seq} {ev.target} "
                    f"{payload_kind(ev.payload)} {payload_detail(ev.payload)}"
                )
            for obs in self.observers:
                obs(ev)
            try:
                self._entities[ev.target].handle(ev.payload)
            except Exception as exc:
                raise SimulationError(ev, exc) from exc
            count += 1
        self.processed += count
        self.now = max(self.now, end)
        return RunSummary(events_processed=count, final_clock=self.now)

    def finish(self) -> None:
        self._finished = True

    def write_log(self, path) -> None:
        with open(path, "w") as fh:
            for line in self.log:
                fh.write(line + "\n")
