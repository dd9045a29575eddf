"""In-process message bus: named topics (publish/subscribe) and services (request/response).

Topics are many-to-many and asynchronous; every subscription owns a bounded
queue that drops its oldest envelope on overflow. Services are one-to-one and
blocking. Names may be remapped before any node is wired.
"""

from __future__ import annotations

import itertools
import threading
from collections import deque
from dataclasses import dataclass
from typing import Any, Callable


class BusError(Exception):
    pass


class InvalidName(BusError):
    pass


class WiringError(BusError):
    pass


class DuplicateService(BusError):
    pass


class UnknownService(BusError):
    pass


class ServiceTimeout(BusError):
    pass


def validate_name(name: str) -> str:
    if not isinstance(name, str) or not name:
        raise InvalidName("name must be a non-empty string")
    if not name.startswith("/"):
        raise InvalidName(f"name {name!r} must begin with '/'")
    if any(c.isspace() for c in name):
        raise InvalidName(f"name {name!r} contains whitespace")
    return name


@dataclass(frozen=True)
class Envelope:
    topic: str
    seq: int
    stamp: float
    payload: Any
    publisher: int


class Subscription:
    """Bounded FIFO of envelopes for one subscriber (drop-oldest on overflow)."""

    def __init__(self, bus: "Bus", topic: str, queue_capacity: int, node: str | None,
                 callback: Callable[[Envelope], None] | None = None):
        self.bus = bus
        self.topic = topic
        self.node = node
        self.capacity = queue_capacity
        self.callback = callback
        self.dropped = 0
        self._queue: deque[Envelope] = deque()
        self._cond = threading.Condition()
        self._closed = False

    def _deliver(self, env: Envelope) -> None:
        if self.callback is not None:
            self.callback(env)
            return
        with self._cond:
            if len(self._queue) >= self.capacity:
                self._queue.popleft()
                self.dropped += 1
            self._queue.append(env)
            self._cond.notify_all()

    def poll(self) -> Envelope | None:
        with self._cond:
            return self._queue.popleft() if self._queue else None

    def drain(self) -> list[Envelope]:
        with self._cond:
            items = list(self._queue)
            self._queue.clear()
            return items

    def latest(self) -> Envelope | None:
        """Drain the queue and return only the newest envelope (or None)."""
        with self._cond:
            if not self._queue:
                return None
            env = self._queue[-1]
            self._queue.clear()
            return env

    def get(self, timeout: float | None = None) -> Envelope | None:
        """Block until an envelope is available; None on timeout."""
        with self._cond:
            if not self._cond.wait_for(lambda: self._queue or self._closed, timeout):
                return None
            return self._queue.popleft() if self._queue else None

    def __len__(self) -> int:
        with self._cond:
            return len(self._queue)

    def close(self) -> None:
        self.bus._unsubscribe(self)
        with self._cond:
            self._closed = True
            self._cond.notify_all()


class Publisher:
    _ids = itertools.count(1)

    def __init__(self, bus: "Bus", topic: str, node: str | None):
        self.bus = bus
        self.topic = topic
        self.node = node
        self.id = next(Publisher._ids)
        self._seq = 0
        self._last_stamp = float("-inf")
        self._lock = threading.Lock()

    def publish(self, payload: Any, stamp: float | None = None) -> Envelope:
        if stamp is None:
            stamp = self.bus.now()
        with self._lock:
            if stamp < self._last_stamp:
                raise BusError(
                    f"stamp {stamp} on {self.topic} is older than the previous {self._last_stamp}")
            self._seq += 1
            self._last_stamp = stamp
            env = Envelope(self.topic, self._seq, stamp, payload, self.id)
            # delivery happens under the publisher lock so one publisher's stream stays ordered
            for sub in self.bus._subscribers(self.topic):
                sub._deliver(env)
        return env


@dataclass
class ServiceHandle:
    name: str
    node: str | None
    handler: Callable[[Any], Any]


class Bus:
    """Registry of topics and services for one simulated robot.

    ``time_source`` supplies default envelope stamps (simulation time).
    """

    def __init__(self, time_source: Callable[[], float] | None = None):
        self._time_source = time_source or (lambda: 0.0)
        self._lock = threading.RLock()
        self._remaps: dict[str, str] = {}
        self._subs: dict[str, tuple[Subscription, ...]] = {}
        self._pubs: dict[str, list[Publisher]] = {}
        self._services: dict[str, ServiceHandle] = {}
        self._clients: dict[str, set[str | None]] = {}
        self._wired = False

    def now(self) -> float:
        return self._time_source()

    def set_time_source(self, fn: Callable[[], float]) -> None:
        self._time_source = fn

    # -- naming -----------------------------------------------------------
    def remap(self, src: str, dst: str) -> None:
        validate_name(src)
        validate_name(dst)
        with self._lock:
            if self._wired:
                raise WiringError("remap must be applied before any node is wired")
            if src == dst:
                return
            previous = self._remaps.get(src)
            self._remaps[src] = dst
            try:
                self.resolve(src)
            except WiringError:
                if previous is None:
                    del self._remaps[src]
                else:
                    self._remaps[src] = previous
                raise

    def resolve(self, name: str) -> str:
        validate_name(name)
        seen = {name}
        while name in self._remaps:
            name = self._remaps[name]
            if name in seen:
                raise WiringError(f"remap cycle through {name!r}")
            seen.add(name)
        return name

    @property
    def remaps(self) -> dict[str, str]:
        return dict(self._remaps)

    # -- topics -----------------------------------------------------------
    def advertise(self, topic: str, node: str | None = None) -> Publisher:
        with self._lock:
            resolved = self.resolve(topic)
            self._wired = True
            pub = Publisher(self, resolved, node)
            self._pubs.setdefault(resolved, []).append(pub)
            return pub

    def subscribe(self, topic: str, queue_capacity: int = 10, node: str | None = None,
                  callback: Callable[[Envelope], None] | None = None) -> Subscription:
        if not isinstance(queue_capacity, int) or queue_capacity < 1:
            raise ValueError("queue_capacity must be a positive integer")
        with self._lock:
            resolved = self.resolve(topic)
            self._wired = True
            sub = Subscription(self, resolved, queue_capacity, node, callback)
            self._subs[resolved] = self._subs.get(resolved, ()) + (sub,)
            return sub

    def _subscribers(self, topic: str) -> tuple[Subscription, ...]:
        return self._subs.get(topic, ())

    def _unsubscribe(self, sub: Subscription) -> None:
        with self._lock:
            self._subs[sub.topic] = tuple(s for s in self._subs.get(sub.topic, ()) if s is not sub)

    # -- services ---------------------------------------------------------
    def register_service(self, name: str, handler: Callable[[Any], Any],
                         node: str | None = None) -> ServiceHandle:
        with self._lock:
            resolved = self.resolve(name)
            self._wired = True
            if resolved in self._services:
                raise DuplicateService(f"service {resolved!r} is already registered")
            handle = ServiceHandle(resolved, node, handler)
            self._services[resolved] = handle
            return handle

    def declare_client(self, name: str, node: str | None) -> None:
        """Record that ``node`` calls ``name`` (topology introspection only)."""
        with self._lock:
            self._wired = True
            self._clients.setdefault(self.resolve(name), set()).add(node)

    def call_service(self, name: str, request: Any, timeout: float | None = None) -> Any:
        """Invoke a service and return its response.

        With ``timeout=None`` the handler runs on the caller's thread (lockstep
        use). Otherwise it runs on a worker thread and :class:`ServiceTimeout`
        is raised after ``timeout`` wall-clock seconds; a late response is
        discarded.
        """
        with self._lock:
            handle = self._services.get(self.resolve(name))
        if handle is None:
            raise UnknownService(f"no service registered as {name!r}")
        if timeout is None:
            return handle.handler(request)

        box: dict[str, Any] = {}
        done = threading.Event()

        def _run():
            try:
                box["response"] = handle.handler(request)
            except BaseException as exc:  # re-raised on the caller's side
                box["error"] = exc
            done.set()

        worker = threading.Thread(target=_run, name=f"svc{handle.name}", daemon=True)
        worker.start()
        if not done.wait(timeout):
            raise ServiceTimeout(f"service {handle.name!r} did not answer within {timeout} s")
        if "error" in box:
            raise box["error"]
        return box["response"]

    # -- introspection ----------------------------------------------------
    def topology(self) -> dict:
        """Static wiring graph: topic -> publishers/subscribers, service -> server/clients."""
        with self._lock:
            topics = {}
            for t in sorted(set(self._pubs) | set(self._subs)):
                topics[t] = {
                    "publishers": sorted({p.node or "?" for p in self._pubs.get(t, [])}),
                    "subscribers": sorted({s.node or "?" for s in self._subs.get(t, ())}),
                }
            services = {
                n: {"server": h.node or "?",
                    "clients": sorted(c or "?" for c in self._clients.get(n, ()))}
                for n, h in sorted(self._services.items())
            }
            return {"topics": topics, "services": services, "remaps": dict(sorted(self._remaps.items()))}

