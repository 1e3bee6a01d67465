import inspect
import logging
import random

import pytest
from fastapi.testclient import TestClient

from pact import api as api_mod, core, keys
from pact.alt import AltReport
from pact.api import Api
from pact.core import Entry, Params
from pact.narrowcast import Area, NarrowcastServer, region_of, sign_announcement
from pact.registry import Registry, RegistryConfig, SignaturePolicy, Tier
from pact.server import create_app
from pact.transport import (
    LocalTransport,
    NarrowcastClient,
    RegistryClient,
    ServiceError,
    SpyTransport,
    TransportError,
)

P = Params(dt=900, delta=16)
T0 = 1_598_400_000
HA = keys.SigningKey.from_seed(b"\x07" * 32)


class Clock:
    def __init__(self, t):
        self.t = t

    def __call__(self):
        return self.t


@pytest.fixture
def world():
    pol = SignaturePolicy()
    pol.add("lab", HA.verification_key, Tier.HEALTHCARE)
    clock = Clock(T0)
    api = Api(Registry(RegistryConfig(params=P), pol), NarrowcastServer(pol), clock)
    return api, clock


def test_report_fetch_round_trip_local(world):
    api, clock = world
    client = RegistryClient(LocalTransport(api))
    e = Entry(bytes(range(16)), T0 - 3600, T0)
    assert client.submit(e) == {"accepted": True, "tier": "unsigned", "locator": e.locator}
    assert client.submit(e) == {"accepted": False, "reason": "duplicate"}
    assert client.fetch(0) == ([], 0)
    clock.t += 2 * P.dt
    assert client.fetch(0) == ([e], 1)
    assert client.fetch(1) == ([], 1)
    assert client.health()["entries"] == 1


def test_countersign_over_api(world):
    api, clock = world
    client = RegistryClient(LocalTransport(api))
    e = Entry(b"\x01" * 16, T0 - 60, T0)
    client.submit(e)
    sig = HA.sign(core.signed_payload(e))
    assert client.countersign(e.locator, "lab", sig)["tier"] == "healthcare-validated"
    assert client.countersign(e.locator, "lab", b"\x00" * 64) == {"accepted": False, "reason": "bad-signature"}


def test_alt_over_api(world):
    api, clock = world
    client = RegistryClient(LocalTransport(api))
    vk = keys.SigningKey.from_seed(b"\x02" * 32).verification_key
    assert client.submit_alt(AltReport((vk,)))["accepted"]
    clock.t += 10**4
    reports, nxt = client.fetch_alt(0)
    assert reports == [AltReport((vk,))] and nxt == 1


def test_bad_requests(world):
    api, _ = world
    assert api.handle("GET", "/nope")[0] == 404
    assert api.handle("POST", "/report", body=b"[1]")[0] == 400
    assert api.handle("POST", "/report", body=b"{not json")[0] == 400
    assert api.handle("POST", "/report", body=b'{"entry":"AAAA"}')[0] == 400
    assert api.handle("GET", "/entries", {"cursor": "-1"})[0] == 400
    assert api.handle("GET", "/entries", {"limit": "x"})[0] == 400
    with pytest.raises(ServiceError):
        RegistryClient(LocalTransport(api)).fetch(-1)


def test_missing_service_is_404():
    api = Api(registry=None, narrowcast=None)
    assert api.handle("GET", "/entries")[0] == 404
    assert api.handle("GET", "/narrowcast/size")[0] == 404


def test_rate_limit_status(world):
    api, _ = world
    api.registry.limiter.limit = 1
    client = RegistryClient(LocalTransport(api, source="phone"))
    client.submit(Entry(b"\x03" * 16, T0 - 60, T0))
    status, _ = api.handle(
        "POST", "/report", body=api_mod.dumps({"entry": keys.b64e(core.encode_entry(Entry(b"\x04" * 16, T0 - 60, T0)))}),
        source="phone",
    )
    assert status == 429


def test_outage_raises_transport_error(world):
    api, _ = world
    t = LocalTransport(api)
    t.fail = True
    with pytest.raises(TransportError):
        RegistryClient(t).fetch(0)


def test_http_and_local_bytes_identical(world):
    api, clock = world
    nc = NarrowcastClient(LocalTransport(api))
    area = Area(40.71455, -74.00712, 200, T0, T0 + 3600)
    assert nc.announce(sign_announcement(area, "Sperrung Spielplatz ü".encode(), HA, "lab"))["accepted"]
    RegistryClient(LocalTransport(api)).submit(Entry(b"\x05" * 16, T0 - 60, T0))
    clock.t += 10**4
    http = TestClient(create_app(api))
    region = region_of(40.71455, -74.00712, 8, 9)
    q = {"lat_prefix": 40, "lon_prefix": -74, "lat_bits": 8, "lon_bits": 9, "since": 0}
    for path, params in [("/narrowcast/messages", q), ("/narrowcast/size", q), ("/entries", {"cursor": 0})]:
        r = http.get(path, params=params)
        assert r.status_code == 200
        assert r.content == api.handle("GET", path, {k: str(v) for k, v in params.items()})[1]
    body = http.get("/narrowcast/messages", params=q).content
    assert http.get("/narrowcast/size", params=q).json()["bytes"] == len(body)
    assert nc.how_big(region) == len(body)
    assert [m.message for m in nc.get_messages(region)] == ["Sperrung Spielplatz ü".encode()]


def test_http_submit_and_errors(world):
    api, _ = world
    http = TestClient(create_app(api))
    e = Entry(b"\x06" * 16, T0 - 60, T0)
    r = http.post("/report", json={"entry": keys.b64e(core.encode_entry(e))})
    assert r.status_code == 200 and r.json()["accepted"]
    assert http.post("/report", json={"entry": keys.b64e(core.encode_entry(e))}).status_code == 409
    assert http.get("/health").json()["status"] == "ok"
    assert http.get("/missing").status_code == 404


def test_narrowcast_read_schema_is_region_only(world):
    api, _ = world
    assert set(inspect.signature(NarrowcastClient.get_messages).parameters) == {"self", "region", "since"}
    status, _ = api.handle("GET", "/narrowcast/messages", {"lat": "40.71455", "lon": "-74.00712"})
    assert status == 400
    spy = SpyTransport(LocalTransport(api))
    NarrowcastClient(spy).get_messages(region_of(40.71455, -74.00712, 8, 9))
    NarrowcastClient(spy).how_big(region_of(40.71455, -74.00712, 12, 13))
    for rec in spy.log:
        assert set(rec.params) == set(api_mod.REGION_FIELDS)
        assert rec.body == b""
        assert "40.71" not in rec.egress.decode() and "74.00" not in rec.egress.decode()


def test_server_logs_no_client_location(world, caplog):
    api, _ = world
    caplog.set_level(logging.DEBUG)
    rng = random.Random(1)
    lat, lon = rng.uniform(-80, 80), rng.uniform(-170, 170)
    nc = NarrowcastClient(LocalTransport(api))
    nc.get_messages(region_of(lat, lon, 20, 21))
    text = caplog.text + repr(api.narrowcast.entries)
    assert f"{lat:.4f}" not in text and f"{lon:.4f}" not in text
