"""Scenario descriptions for the simulator and their text-file form.

Scenario files are YAML. Times are offsets from the scenario start and may
be written as integers (seconds) or with an ``s``/``m``/``h``/``d`` suffix::

    version: 1
    agents: 2
    days: 1
    colocations:
      - [0, 1, 2h, 3h]
    positives:
      - [0, 5h]
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from pact.agent import Protocol
from pact.core import Params
from pact.store import DAY

T0 = 1_598_400_000  # a UTC midnight; every scenario starts here
SCHEMA_VERSION = 1

ATTACK_KINDS = (
    "replay",
    "relay",
    "seed-sharing",
    "flood",
    "linkage",
    "dual-framing",
    "dual-surveillance",
    "derived-seed",
)


class ScenarioError(ValueError):
    pass


_UNITS = {"s": 1, "m": 60, "h": 3600, "d": DAY}


def parse_duration(v) -> int:
    if isinstance(v, bool):
        raise ScenarioError(f"not a duration: {v!r}")
    if isinstance(v, int):
        return v
    m = re.fullmatch(r"\s*(-?\d+(?:\.\d+)?)\s*([smhd]?)\s*", str(v))
    if not m:
        raise ScenarioError(f"not a duration: {v!r}")
    return round(float(m.group(1)) * _UNITS[m.group(2) or "s"])


@dataclass(frozen=True)
class Colocation:
    a: int
    b: int
    start: int  # absolute seconds, start inclusive
    end: int  # exclusive


@dataclass(frozen=True)
class Positive:
    agent: int
    time: int


@dataclass
class AttackSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ScenarioError(f"unknown attack kind {self.kind!r}")


@dataclass
class Scenario:
    n_agents: int
    duration: int
    colocations: list[Colocation] = field(default_factory=list)
    positives: list[Positive] = field(default_factory=list)
    params: Params = field(default_factory=Params)
    protocol: Protocol = Protocol.CORE
    delay: int | None = None  # registry publication delay, default 2 * dt
    sync_interval: int = DAY
    skew: dict[int, int] = field(default_factory=dict)
    adopters: frozenset[int] | None = None  # None: everyone runs the app
    drop_prob: float = 0.0
    time_tolerance: int | None = None
    adversaries: list[AttackSpec] = field(default_factory=list)
    seed: int = 0
    name: str = "scenario"
    start: int = T0

    @property
    def end(self) -> int:
        return self.start + self.duration

    @property
    def publication_delay(self) -> int:
        return 2 * self.params.dt if self.delay is None else self.delay

    def adopts(self, agent: int) -> bool:
        return self.adopters is None or agent in self.adopters

    def validate(self) -> None:
        n = self.n_agents
        if n < 1:
            raise ScenarioError("need at least one agent")
        if self.duration <= 0:
            raise ScenarioError("duration must be positive")
        for c in self.colocations:
            if not (0 <= c.a < n and 0 <= c.b < n) or c.a == c.b:
                raise ScenarioError(f"bad agents in colocation {c}")
            if not self.start <= c.start < c.end <= self.end:
                raise ScenarioError(f"colocation interval out of order or range: {c}")
        seen = set()
        for p in self.positives:
            if not 0 <= p.agent < n:
                raise ScenarioError(f"unknown positive agent {p.agent}")
            if p.agent in seen:
                raise ScenarioError(f"agent {p.agent} reports twice")
            seen.add(p.agent)
            if not self.start <= p.time <= self.end:
                raise ScenarioError(f"report time out of range: {p}")
        for a in self.skew:
            if not 0 <= a < n:
                raise ScenarioError(f"skew for unknown agent {a}")
        if not 0 <= self.drop_prob <= 1:
            raise ScenarioError("drop_prob must be in [0, 1]")
        if self.sync_interval <= 0:
            raise ScenarioError("sync_interval must be positive")


def _protocol(v) -> Protocol:
    try:
        return Protocol(v)
    except ValueError:
        raise ScenarioError(f"unknown protocol {v!r}") from None


def scenario_from_dict(d: dict) -> Scenario:
    if not isinstance(d, dict):
        raise ScenarioError("scenario must be a mapping")
    version = d.get("version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported scenario version {version}")
    start = int(d.get("start", T0))
    try:
        params = Params(**d.get("params", {}))
        n = int(d["agents"])
        duration = parse_duration(d["duration"]) if "duration" in d else parse_duration(d.get("days", 1)) * DAY
        colocs = [
            Colocation(int(a), int(b), start + parse_duration(s), start + parse_duration(e))
            for a, b, s, e in d.get("colocations", [])
        ]
        positives = [Positive(int(a), start + parse_duration(t)) for a, t in d.get("positives", [])]
        attacks = [AttackSpec(x["kind"], dict(x.get("params", {}))) for x in d.get("adversaries", [])]
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"malformed scenario: {exc}") from None
    sc = Scenario(
        n_agents=n,
        duration=duration,
        colocations=colocs,
        positives=positives,
        params=params,
        protocol=_protocol(d.get("protocol", "core")),
        delay=None if d.get("delay") is None else parse_duration(d["delay"]),
        sync_interval=parse_duration(d.get("sync_interval", DAY)),
        skew={int(k): parse_duration(v) for k, v in (d.get("skew") or {}).items()},
        adopters=frozenset(d["adopters"]) if d.get("adopters") is not None else None,
        drop_prob=float(d.get("drop_prob", 0.0)),
        time_tolerance=d.get("time_tolerance"),
        adversaries=attacks,
        seed=int(d.get("seed", 0)),
        name=str(d.get("name", "scenario")),
        start=start,
    )
    sc.validate()
    return sc


def load_scenario(path: str | Path) -> Scenario:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ScenarioError(f"cannot parse {path}: {exc}") from None
    return scenario_from_dict(data)


def random_scenario(
    rng: random.Random,
    max_agents: int = 50,
    days: int = 14,
    params: Params | None = None,
    positive_rate: float = 0.1,
    contacts_per_agent: float = 4.0,
    protocol: Protocol = Protocol.CORE,
    **kw,
) -> Scenario:
    """Random contacts of 5 minutes to 3 hours and a sprinkling of positives."""
    params = params or Params()
    n = rng.randint(2, max_agents)
    duration = days * DAY
    colocs = []
    for _ in range(round(contacts_per_agent * n)):
        a, b = rng.sample(range(n), 2)
        length = rng.randint(300, 3 * 3600)
        s = rng.randrange(0, duration - length)
        colocs.append(Colocation(a, b, T0 + s, T0 + s + length))
    k = max(1, round(positive_rate * n))
    positives = [Positive(a, T0 + rng.randrange(3600, duration)) for a in rng.sample(range(n), k)]
    sc = Scenario(
        n_agents=n,
        duration=duration,
        colocations=colocs,
        positives=positives,
        params=params,
        protocol=protocol,
        seed=rng.randrange(2**32),
        name="random",
        **kw,
    )
    sc.validate()
    return sc
