"""Executable adversaries.

Each adversary installs hooks into a ``Simulation`` before it runs and
reports outcome metrics afterwards. ``run_attack`` runs one scenario with
one adversary and returns those metrics.
"""

from __future__ import annotations

import random
from dataclasses import replace

from pact import core, keys
from pact.agent import Protocol
from pact.core import Entry
from pact.groups import P256, TOY_Z23
from pact.sim.engine import ADVERSARY, PRIO_HEAR, PRIO_REPORT, SimResult, Simulation, oracle_exposures
from pact.sim.scenario import AttackSpec, Scenario, ScenarioError, parse_duration
from pact.transport import LocalTransport, RegistryClient
from pact.variants import DualServer, dual_check, dual_keygen, dual_make_id, dual_rerandomize, dual_is_mine


def false_alert_pairs(result: SimResult, oracle) -> set[tuple[int, int]]:
    truth = {(l, r) for l, r, _ in oracle}
    return {(l, r) for l, r in result.alerted_pairs if (l, r) not in truth}


def _agents_param(spec_params: dict, name: str, sc: Scenario, default: list[int]) -> list[int]:
    vals = [int(x) for x in spec_params.get(name, default)]
    for v in vals:
        if not 0 <= v < sc.n_agents:
            raise ScenarioError(f"{name}: unknown agent {v}")
    return vals


def _dur(params: dict, name: str, default) -> int:
    return parse_duration(params.get(name, default))


def isolated_agents(sc: Scenario) -> list[int]:
    busy = {c.a for c in sc.colocations} | {c.b for c in sc.colocations}
    busy |= {p.agent for p in sc.positives}
    return [i for i in range(sc.n_agents) if i not in busy]


def _derive_seed(seed: bytes, steps: int, vk: bytes | None) -> bytes:
    for _ in range(steps):
        seed, _ = core.derive_next(seed, vk)
    return seed


class Adversary:
    kind = "base"

    def __init__(self, params: dict):
        self.params = params

    def install(self, sim: Simulation) -> None:
        pass

    def client(self, sim: Simulation, source: str = "adversary") -> RegistryClient:
        return RegistryClient(LocalTransport(sim.api, source=source))

    def metrics(self, sim: Simulation, result: SimResult, oracle) -> dict:
        fa = false_alert_pairs(result, oracle)
        return {"kind": self.kind, "protocol": sim.sc.protocol.value, "false_alerts": len(fa)}


class Replay(Adversary):
    """Rebroadcasts published material to victims far from any reporter.

    Against the seed-chain protocols every regenerated id of a fresh entry is
    replayed at publication time. Against the signature protocol, broadcasts
    captured from each positive are replayed when that positive's keys appear.
    """

    kind = "replay"

    def install(self, sim):
        self.victims = _agents_param(self.params, "victims", sim.sc, isolated_agents(sim.sc))
        self.replayed = 0
        self.captured: dict[int, list[bytes]] = {}
        sim.registry.listeners.append(lambda kind, obj, now: self.on_publish(sim, kind, obj, now))
        if sim.sc.protocol is Protocol.ALT:
            interval = _dur(self.params, "capture_interval", 3600)
            for pos in sim.sc.positives:
                t = sim.sc.start
                while t < pos.time:
                    sim.schedule(t, PRIO_HEAR, lambda tt, a=pos.agent: self.capture(sim, a, tt))
                    t += interval

    def capture(self, sim, agent, t):
        if agent in sim.agents:
            self.captured.setdefault(agent, []).append(sim.agents[agent].tick(sim.local(agent, t)))

    def on_publish(self, sim, kind, obj, now):
        if kind == "entry":
            payloads = [x.id for x in core.regenerate(obj, sim.params)]
        else:
            owner = sim.owner.get(obj.verification_keys[0].hex())
            payloads = self.captured.get(owner, [])
        for v in self.victims:
            if v in sim.agents:
                for p in payloads:
                    sim.agents[v].on_hear(p, sim.local(v, now))
                    self.replayed += 1

    def metrics(self, sim, result, oracle):
        out = super().metrics(sim, result, oracle)
        out.update(
            delay=sim.sc.publication_delay,
            replayed=self.replayed,
            victims_alerted=len({l for l, _ in result.alerted_pairs if l in self.victims}),
        )
        return out


class Relay(Adversary):
    """Forwards a source's live broadcasts to distant victims after ``latency`` seconds."""

    kind = "relay"

    def install(self, sim):
        sc = sim.sc
        self.source = int(self.params.get("source", sc.positives[0].agent if sc.positives else 0))
        self.victims = _agents_param(self.params, "victims", sc, isolated_agents(sc))
        self.latency = _dur(self.params, "latency", 30)
        start = sc.start + _dur(self.params, "start", 0)
        end = sc.start + _dur(self.params, "end", 6 * 3600)
        step = _dur(self.params, "interval", 600)
        self.relayed = 0
        for t in range(start, end, step):
            sim.schedule(t, PRIO_HEAR, lambda tt: self.capture(sim, tt))

    def capture(self, sim, t):
        if self.source not in sim.agents:
            return
        payload = sim.agents[self.source].tick(sim.local(self.source, t))
        for v in self.victims:
            sim.schedule(t + self.latency, PRIO_HEAR, lambda tt, v=v: self.deliver(sim, v, payload, tt))

    def deliver(self, sim, v, payload, t):
        if v in sim.agents:
            sim.agents[v].on_hear(payload, sim.local(v, t))
            self.relayed += 1

    def metrics(self, sim, result, oracle):
        out = super().metrics(sim, result, oracle)
        alerted = {l for l, r in result.alerted_pairs if l in self.victims and r == self.source}
        out.update(latency=self.latency, relayed=self.relayed, victims_alerted=len(alerted), success=bool(alerted))
        return out


class SeedSharing(Adversary):
    """Colluders run copies of one chain; a single report alerts everyone's contacts."""

    kind = "seed-sharing"

    def install(self, sim):
        if sim.sc.protocol is Protocol.ALT:
            raise ScenarioError("seed sharing targets the seed-chain protocols")
        self.colluders = _agents_param(self.params, "colluders", sim.sc, [])
        if len(self.colluders) < 2:
            raise ScenarioError("seed sharing needs at least two colluders")
        leader = sim.agents[self.colluders[0]]
        for c in self.colluders[1:]:
            sim.agents[c].chain = leader.chain
            sim.agents[c].si_key = leader.si_key

    def metrics(self, sim, result, oracle):
        out = super().metrics(sim, result, oracle)
        out.update(colluders=self.colluders, success=out["false_alerts"] > 0)
        return out


class Flood(Adversary):
    """Submits bogus self-reports from one source as fast as it likes."""

    kind = "flood"

    def install(self, sim):
        self.count = int(self.params.get("count", 100))
        self.interval = _dur(self.params, "interval", 60)
        self.rng = random.Random(sim.sc.seed ^ 0xF100D)
        self.accepted = self.rejected = self.rate_limited = 0
        client = self.client(sim, "flooder")
        start = sim.sc.start + _dur(self.params, "start", 3600)
        for k in range(self.count):
            sim.schedule(start + k * self.interval, PRIO_REPORT, lambda t: self.submit(sim, client, t))

    def submit(self, sim, client, t):
        dt = sim.params.dt
        end = t - t % dt
        e = Entry(self.rng.randbytes(sim.params.nbytes), end - 4 * dt, end)
        resp = client.submit(e)
        if resp.get("accepted"):
            self.accepted += 1
            sim.schedule(t + sim.sc.publication_delay, 1, sim.release)
        else:
            self.rejected += 1
            self.rate_limited += resp.get("reason") == "rate-limited"

    def metrics(self, sim, result, oracle):
        out = super().metrics(sim, result, oracle)
        out.update(
            submitted=self.count,
            accepted=self.accepted,
            rejected=self.rejected,
            rate_limited=self.rate_limited,
            rate_limit=sim.registry.config.rate_limit,
        )
        return out


class Linkage(Adversary):
    """Listening posts record ids; a later report links the reporter's visits."""

    kind = "linkage"

    def install(self, sim):
        sc = sim.sc
        if sc.protocol is Protocol.ALT:
            raise ScenarioError("linkage posts here collect seed-chain ids")
        self.target = int(self.params.get("target", sc.positives[0].agent if sc.positives else 0))
        self.control = self.params.get("control")
        visits = self.params.get("visits") or [[k, 3600 * (1 + 2 * k), 3600 * (2 + 2 * k)] for k in range(3)]
        self.sightings: list[tuple[int, int, bytes]] = []  # (post, agent, id)
        self.linked: dict[int, set[int]] = {}
        for post, s, e in visits:
            for who in [self.target] + ([int(self.control)] if self.control is not None else []):
                for t in range(sc.start + parse_duration(s), sc.start + parse_duration(e), sim.params.dt):
                    sim.schedule(t, PRIO_HEAR, lambda tt, p=int(post), w=who: self.record(sim, p, w, tt))
        sim.registry.listeners.append(lambda kind, obj, now: self.on_publish(sim, kind, obj))

    def record(self, sim, post, who, t):
        if who in sim.agents:
            self.sightings.append((post, who, sim.agents[who].tick(sim.local(who, t))))

    def on_publish(self, sim, kind, obj):
        if kind != "entry":
            return
        ids = {x.id for x in core.regenerate(obj, sim.params)}
        posts = {post for post, _, pid in self.sightings if pid in ids}
        if posts:
            self.linked[len(self.linked)] = posts

    def metrics(self, sim, result, oracle):
        out = super().metrics(sim, result, oracle)
        target_ids = {pid for _, w, pid in self.sightings if w == self.target}
        control_ids = {pid for _, w, pid in self.sightings if w != self.target}
        linked_sites = max((len(p) for p in self.linked.values()), default=0)
        linkable = 0
        for posts in self.linked.values():
            linkable = max(linkable, len(posts))
        all_ids = set()
        for e in sim.registry.fetch(0)[0]:
            all_ids |= {x.id for x in core.regenerate(e, sim.params)}
        out.update(
            target=self.target,
            sites_visited=len({p for p, w, _ in self.sightings if w == self.target}),
            linked_sites=linked_sites,
            linkable_ids=len(target_ids & all_ids),
            control_linked_ids=len(control_ids & all_ids),
            success=linked_sites >= 2,
        )
        return out


class DerivedSeed(Adversary):
    """Re-reports a later seed derived from a published entry.

    Variant "reuse" keeps the original key and signature; variant "own"
    (strong-integrity scenarios) binds the derived seed to the attacker's key.
    """

    kind = "derived-seed"

    def install(self, sim):
        self.steps = int(self.params.get("steps", 1))
        self.attacker = keys.SigningKey.from_seed(random.Random(sim.sc.seed ^ 0xD5).randbytes(32))
        self.client = self.client(sim, "rereporter")
        self.attempts = self.accepted = 0
        self.accepted_by_variant = {"reuse": 0, "own": 0}
        self.mine: set[str] = set()
        sim.registry.listeners.append(lambda kind, obj, now: self.on_publish(sim, kind, obj, now))

    def on_publish(self, sim, kind, obj, now):
        if kind != "entry" or obj.locator in self.mine:
            return
        dt = sim.params.dt
        seed = _derive_seed(obj.window_seed, self.steps, obj.vk)
        if obj.t_start + self.steps * dt > obj.t_end:
            return
        base = Entry(seed, obj.t_start + self.steps * dt, obj.t_end, vk=obj.vk, vk_signature=obj.vk_signature)
        variants = [("reuse", base)]
        if obj.vk is not None:
            variants.append(("own", core.sign_entry(replace(base, vk=None, vk_signature=None), self.attacker)))
        for name, e in variants:
            self.attempts += 1
            self.mine.add(e.locator)
            resp = self.client.submit(e)
            if resp.get("accepted"):
                self.accepted += 1
                self.accepted_by_variant[name] += 1
                sim.schedule(now + sim.sc.publication_delay, 1, sim.release)

    def metrics(self, sim, result, oracle):
        out = super().metrics(sim, result, oracle)
        effective = {l for l, r, _ in result.matches if r == ADVERSARY}
        out.update(
            attempts=self.attempts,
            accepted=self.accepted,
            accepted_reusing_key=self.accepted_by_variant["reuse"],
            accepted_with_own_key=self.accepted_by_variant["own"],
            listeners_matched=len(effective),
            success=bool(effective),
        )
        return out


def _group(name: str):
    return {"toy": TOY_Z23, "p256": P256}[name]


class DualFraming(Adversary):
    """A malicious positive uploads ids an accomplice heard near the victim.

    The dual scheme alerts the victim. The same adversary against the seed
    chain can only upload seeds it knows, so the captured ids are useless.
    """

    kind = "dual-framing"

    def install(self, sim):
        sc = sim.sc
        self.victim = int(self.params.get("victim", 0))
        self.attacker = int(self.params.get("attacker", 1))
        for c in sc.colocations:
            if {c.a, c.b} == {self.victim, self.attacker}:
                raise ScenarioError("framing needs victim and attacker never co-located")
        t_cap = sc.start + _dur(self.params, "capture_at", 3600)
        t_rep = sc.start + _dur(self.params, "report_at", 7200)
        self.captured: list[bytes] = []
        sim.schedule(t_cap, PRIO_HEAR, lambda t: self.capture(sim, t))
        sim.schedule(t_rep, PRIO_REPORT, lambda t: self.frame(sim, t))
        self.submitted = 0

    def capture(self, sim, t):
        if self.victim in sim.agents:
            self.captured.append(sim.agents[self.victim].tick(sim.local(self.victim, t)))

    def frame(self, sim, t):
        # the attacker's own (honest-format) report, then entries built from the
        # captured ids: a broadcast id used as a seed regenerates unrelated ids
        att = sim.agents.get(self.attacker)
        if att is not None:
            rep = att.make_report(sim.local(self.attacker, t), consent=True)
            sim.note_submission(rep, self.attacker, att.last_response, t)
        client = self.client(sim, "framer")
        dt = sim.params.dt
        for pid in self.captured:
            if sim.sc.protocol is Protocol.ALT:
                continue
            end = t - t % dt
            resp = client.submit(Entry(pid[: sim.params.nbytes].ljust(sim.params.nbytes, b"\0"), end - 4 * dt, end))
            self.submitted += 1
            if resp.get("accepted"):
                sim.schedule(t + sim.sc.publication_delay, 1, sim.release)

    def dual_world(self, rng) -> bool:
        g = _group(self.params.get("group", "toy"))
        victim = dual_keygen(g, rng)
        heard = [dual_make_id(victim, g, rng) for _ in range(3)]  # accomplice near the victim
        server = DualServer()
        server.upload([dual_rerandomize(x, g, rng) for x in heard])  # attacker "tests positive"
        return dual_check(server, victim, g)

    def metrics(self, sim, result, oracle):
        out = super().metrics(sim, result, oracle)
        core_framed = any(l == self.victim for l, _ in result.alerted_pairs)
        dual_framed = self.dual_world(random.Random(sim.sc.seed))
        out.update(
            victim=self.victim,
            dual_framed=dual_framed,
            core_framed=core_framed,
            success=dual_framed,
        )
        return out


class DualSurveillance(Adversary):
    """A location-keyed broadcaster traces positives who visited it.

    Under the dual scheme, ids of the form (x, x^s_L) come back in positives'
    uploads and reveal the visit. Under the seed chain, uploads carry only the
    positives' own seeds, so the broadcaster's ids never reappear.
    """

    kind = "dual-surveillance"

    def install(self, sim):
        sc = sim.sc
        self.visitors = _agents_param(self.params, "visitors", sc, [p.agent for p in sc.positives])
        self.locations = int(self.params.get("locations", 3))
        self.post_agent = sim.agents.get(int(self.params.get("post", isolated_agents(sc)[0] if isolated_agents(sc) else 0)))
        self.post_ids: set[bytes] = set()
        t0 = sc.start + _dur(self.params, "visit_at", 1800)
        for k, v in enumerate(self.visitors):
            sim.schedule(t0 + k * 60, PRIO_HEAR, lambda t, v=v: self.visit(sim, v, t))

    def visit(self, sim, v, t):
        if self.post_agent is None or v not in sim.agents:
            return
        pid = self.post_agent.tick(t)
        self.post_ids.add(pid)
        sim.agents[v].on_hear(pid, sim.local(v, t))

    def dual_world(self, rng) -> tuple[int, int]:
        g = _group(self.params.get("group", "toy"))
        loc_secrets = [dual_keygen(g, rng) for _ in range(self.locations)]
        server = DualServer()
        visits = {}
        for v in self.visitors:
            loc = rng.randrange(self.locations)
            visits[v] = loc
            pid = dual_make_id(loc_secrets[loc], g, rng)
            server.upload([dual_rerandomize(pid, g, rng)])
        traced = 0
        for batch, v in zip(server.uploads, self.visitors):
            found = [k for k, s in enumerate(loc_secrets) if any(dual_is_mine(x, s, g) for x in batch)]
            traced += visits[v] in found
        return traced, len(self.visitors)

    def metrics(self, sim, result, oracle):
        out = super().metrics(sim, result, oracle)
        traced_dual, n = self.dual_world(random.Random(sim.sc.seed))
        traced_core = 0
        for e in sim.registry.fetch(0)[0]:
            ids = {x.id for x in core.regenerate(e, sim.params)}
            traced_core += bool(ids & self.post_ids)
        out.update(
            uploads=n,
            traced_dual=traced_dual,
            traced_core=traced_core,
            success=traced_dual > 0,
        )
        return out


_KINDS = {
    cls.kind: cls
    for cls in (Replay, Relay, SeedSharing, Flood, Linkage, DerivedSeed, DualFraming, DualSurveillance)
}


def make_adversary(spec: AttackSpec) -> Adversary:
    return _KINDS[spec.kind](dict(spec.params))


def run_attack(sc: Scenario, spec: AttackSpec | None = None) -> dict:
    """Run ``sc`` with one adversary (default: its first) and return its metrics."""
    if spec is None:
        if not sc.adversaries:
            raise ScenarioError("scenario has no adversary")
        spec = sc.adversaries[0]
    sim = Simulation(sc)
    adv = make_adversary(spec)
    sim.add_adversary(adv)
    result = sim.run()
    return adv.metrics(sim, result, oracle_exposures(sc))
