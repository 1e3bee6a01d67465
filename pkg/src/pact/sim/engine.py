"""Discrete-event driver: agents, registry and adversaries on one virtual clock.

Every co-location ``[s, e)`` delivers one broadcast per overlapping epoch in
each direction, at ``max(s, epoch start)``. At equal times, events run in
the order: report, publication, hear, sync. Agents talk to the registry
through the same request handler the HTTP service uses.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import random
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable

from pact.agent import Agent, AgentConfig, Alert, Protocol
from pact.api import Api
from pact.core import Params, epoch_index
from pact.registry import Registry, RegistryConfig
from pact.sim.scenario import Scenario
from pact.store import DAY, Redaction
from pact.transport import LocalTransport, RegistryClient

log = logging.getLogger(__name__)

PRIO_REPORT, PRIO_RELEASE, PRIO_HEAR, PRIO_SYNC = 0, 1, 2, 3

ADVERSARY = -1  # reporter id for entries no simulated agent submitted

Exposure = tuple[int, int, int]  # (listener, reporter, epoch start)


class Clock:
    def __init__(self, t: int):
        self.t = t

    def __call__(self) -> int:
        return self.t


class CountingTransport:
    def __init__(self, inner: LocalTransport):
        self.inner = inner
        self.sent = 0
        self.received = 0
        self.writes = 0

    def request(self, method, path, params=None, body=None):
        self.sent += len(method) + len(path) + sum(len(f"{k}={v}") for k, v in (params or {}).items())
        self.sent += len(body or b"")
        if method.upper() != "GET":
            self.writes += 1
        status, content = self.inner.request(method, path, params, body)
        self.received += len(content)
        return status, content


@dataclass
class AgentResult:
    alerts: list[Alert] = field(default_factory=list)
    bytes_sent: int = 0
    bytes_received: int = 0
    broadcasts: int = 0
    heard: int = 0


@dataclass
class SimResult:
    name: str
    protocol: Protocol
    matches: set[Exposure]
    alerted_pairs: set[tuple[int, int]]
    agents: dict[int, AgentResult]
    accepted_reports: int
    rejected_reports: int
    attacks: list[dict] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "scenario": self.name,
            "protocol": self.protocol.value,
            "agents": len(self.agents),
            "alerts": sum(len(a.alerts) for a in self.agents.values()),
            "alerted_agents": sorted({l for l, _ in self.alerted_pairs}),
            "exposure_pairs": len(self.alerted_pairs),
            "accepted_reports": self.accepted_reports,
            "rejected_reports": self.rejected_reports,
            "bytes_sent": sum(a.bytes_sent for a in self.agents.values()),
            "bytes_received": sum(a.bytes_received for a in self.agents.values()),
            "attacks": self.attacks,
        }


def window_start(sc: Scenario, report_time: int, protocol: Protocol | None = None) -> int:
    """Earliest time whose broadcasts a report at ``report_time`` reveals."""
    protocol = protocol or sc.protocol
    if protocol is Protocol.ALT:
        return max(sc.start, (report_time // DAY - 13) * DAY)
    p = sc.params
    e_t, _ = epoch_index(report_time, p)
    e_c, _ = epoch_index(sc.start, p)
    first = max(e_c, e_t - p.delta + 1)
    return p.origin + (first - 1) * p.dt


def oracle_exposures(sc: Scenario, adopters_only: bool = True) -> set[Exposure]:
    """Ground-truth exposures from co-locations and reports alone.

    A listener is exposed to a reporter in every epoch where they were
    co-located before the report time and inside the reporter's window. With
    ``adopters_only`` False, everyone counts, whether or not they run the app.
    """
    p = sc.params
    out: set[Exposure] = set()
    by_agent = defaultdict(list)
    for c in sc.colocations:
        by_agent[c.a].append((c.b, c))
        by_agent[c.b].append((c.a, c))
    for pos in sc.positives:
        if adopters_only and not sc.adopts(pos.agent):
            continue
        w = window_start(sc, pos.time)
        for other, c in by_agent[pos.agent]:
            if adopters_only and not sc.adopts(other):
                continue
            if not (c.start < pos.time and c.end > w):
                continue
            k, start_k = epoch_index(max(c.start, w), p)
            while start_k < c.end and max(c.start, start_k) < pos.time:
                out.add((other, pos.agent, start_k))
                start_k += p.dt
    return out


class Simulation:
    def __init__(self, sc: Scenario, registry_config: RegistryConfig | None = None):
        sc.validate()
        self.sc = sc
        self.params: Params = sc.params
        self.rng = random.Random(sc.seed)
        self.clock = Clock(sc.start)
        max_skew = max((abs(s) for s in sc.skew.values()), default=0)
        cfg = registry_config or RegistryConfig(
            params=sc.params,
            delay=sc.publication_delay,
            clock_slack=max_skew,
            require_strong_integrity=sc.protocol is Protocol.CORE_SI,
            seed=sc.seed,
        )
        self.registry = Registry(cfg)
        self.api = Api(self.registry, None, self.clock)
        self.regen_cache: dict = {}
        self.owner: dict[str, int] = {}  # entry locator -> reporting agent
        self.queue: list = []
        self._seq = itertools.count()
        self.results = {i: AgentResult() for i in range(sc.n_agents) if sc.adopts(i)}
        self.transports: dict[int, CountingTransport] = {}
        self.agents: dict[int, Agent] = {}
        self.accepted = self.rejected = 0
        self.adversaries: list = []
        retention = self.params.window + sc.publication_delay + sc.sync_interval
        for i in self.results:
            t = CountingTransport(LocalTransport(self.api, source=f"agent-{i}"))
            self.transports[i] = t
            self.agents[i] = Agent(
                AgentConfig(
                    params=sc.params,
                    protocol=sc.protocol,
                    retention=retention,
                    redaction=Redaction.NONE,
                    time_tolerance=sc.time_tolerance,
                ),
                self.local(i, sc.start),
                registry=RegistryClient(t),
                randbytes=random.Random(self.rng.getrandbits(64)).randbytes,
                regen_cache=self.regen_cache,
            )

    def local(self, agent: int, t: int) -> int:
        return t + self.sc.skew.get(agent, 0)

    def schedule(self, t: int, prio: int, fn: Callable[[int], None]) -> None:
        heapq.heappush(self.queue, (t, prio, next(self._seq), fn))

    # -- event handlers -------------------------------------------------------

    def hear(self, speaker: int, listener: int, t: int) -> None:
        if speaker not in self.agents or listener not in self.agents:
            return
        if self.sc.drop_prob and self.rng.random() < self.sc.drop_prob:
            return
        payload = self.agents[speaker].tick(self.local(speaker, t))
        self.results[speaker].broadcasts += 1
        if self.agents[listener].on_hear(payload, self.local(listener, t)):
            self.results[listener].heard += 1

    def report(self, agent: int, t: int) -> None:
        if agent not in self.agents:
            return
        a = self.agents[agent]
        if a.protocol is not Protocol.ALT:
            a.tick(self.local(agent, t))
        rep = a.make_report(self.local(agent, t), consent=True)
        self.note_submission(rep, agent, a.last_response, t)

    def note_submission(self, rep, agent: int, response: dict | None, t: int) -> None:
        if response and response.get("accepted"):
            self.accepted += 1
            if hasattr(rep, "verification_keys"):
                for vk in rep.verification_keys:
                    self.owner[vk.hex()] = agent
            else:
                self.owner[rep.locator] = agent
            self.schedule(t + self.sc.publication_delay, PRIO_RELEASE, self.release)
        else:
            self.rejected += 1

    def release(self, t: int) -> None:
        self.registry.release_tick(t)

    def sync(self, agent: int, t: int) -> None:
        a = self.agents[agent]
        alert = a.sync_and_check(self.local(agent, t))
        if alert is not None:
            self.results[agent].alerts.append(alert)
        for tag, ev in a.last_matches:
            reporter = self.owner.get(tag, ADVERSARY)
            self.matches.add((agent, reporter, ev.epoch_start if ev.epoch_start is not None else -1))
        a.purge(self.local(agent, t))

    # -- driver ---------------------------------------------------------------

    def _plan(self) -> None:
        sc, p = self.sc, self.params
        for pos in sc.positives:
            self.schedule(pos.time, PRIO_REPORT, lambda t, a=pos.agent: self.report(a, t))
        for c in sc.colocations:
            _, start_k = epoch_index(c.start, p)
            while start_k < c.end:
                h = max(c.start, start_k)
                self.schedule(h, PRIO_HEAR, lambda t, a=c.a, b=c.b: self.hear(a, b, t))
                self.schedule(h, PRIO_HEAR, lambda t, a=c.a, b=c.b: self.hear(b, a, t))
                start_k += p.dt
        final = sc.end + sc.publication_delay
        t = sc.start + sc.sync_interval
        while t < final:
            for i in self.agents:
                self.schedule(t, PRIO_SYNC, lambda tt, i=i: self.sync(i, tt))
            t += sc.sync_interval
        for i in self.agents:
            self.schedule(final, PRIO_SYNC, lambda tt, i=i: self.sync(i, tt))

    def add_adversary(self, adv) -> None:
        self.adversaries.append(adv)

    def run(self) -> SimResult:
        self.matches: set[Exposure] = set()
        self._plan()
        for adv in self.adversaries:
            adv.install(self)
        while self.queue:
            t, _, _, fn = heapq.heappop(self.queue)
            self.clock.t = t
            fn(t)
        for i, tr in self.transports.items():
            self.results[i].bytes_sent = tr.sent
            self.results[i].bytes_received = tr.received
        if self.sc.protocol is Protocol.ALT:
            # day-granular detection carries no epoch
            self.matches = {(l, r, -1) for l, r, _ in self.matches}
        return SimResult(
            name=self.sc.name,
            protocol=self.sc.protocol,
            matches=self.matches,
            alerted_pairs={(l, r) for l, r, _ in self.matches},
            agents=self.results,
            accepted_reports=self.accepted,
            rejected_reports=self.rejected,
        )


def run_scenario(sc: Scenario) -> SimResult:
    from pact.sim.attacks import make_adversary

    sim = Simulation(sc)
    advs = [make_adversary(spec) for spec in sc.adversaries]
    for adv in advs:
        sim.add_adversary(adv)
    result = sim.run()
    oracle = oracle_exposures(sc)
    result.attacks = [adv.metrics(sim, result, oracle) for adv in advs]
    return result
