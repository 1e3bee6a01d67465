import argparse
import json
import socket
import threading
import time

import pytest
import uvicorn

from pact import cli, core, keys
from pact.api import Api
from pact.core import Entry, Params
from pact.narrowcast import NarrowcastServer
from pact.registry import Registry, RegistryConfig, SignaturePolicy, Tier
from pact.server import create_app
from pact.transport import LocalTransport, SpyTransport


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def run_json(capsys, *argv):
    code, out, err = run(capsys, "--format", "json", *argv)
    assert code == 0, err
    doc = json.loads(out)
    assert set(doc) == {"command", "result"}
    return doc["result"]


def test_no_arguments_is_usage_error(capsys):
    code, _, err = run(capsys)
    assert code == 2 and "usage" in err


def test_unknown_subcommand(capsys):
    code, _, err = run(capsys, "teleport")
    assert code == 2 and "invalid choice" in err


def test_simulate_two_agents(capsys):
    code, out, _ = run(capsys, "simulate", "two_agents.scn")
    assert code == 0 and "1 alert(s)" in out
    res = run_json(capsys, "simulate", "two_agents.scn")
    assert res["summary"]["alerts"] == 1 and res["summary"]["oracle_pairs"] == 1
    assert [a["agent"] for a in res["agents"]] == [0, 1]


def test_simulate_writes_csv(capsys, tmp_path):
    run_json(capsys, "simulate", "two_agents.scn", "--out", str(tmp_path))
    assert (tmp_path / "two-agents.csv").read_text().startswith("agent,alerts,")


def test_simulate_missing_file(capsys):
    code, _, err = run(capsys, "simulate", "nowhere.scn")
    assert code == 1 and "not found" in err


def test_agent_demo(capsys):
    for proto in ("core", "core-strong-integrity", "alt-sig"):
        res = run_json(capsys, "agent", "demo", "--protocol", proto)
        assert len(res["alerts"]) == 1 and res["alerts"][0]["agent"] == 1


def test_attack_compares_protocols(capsys):
    rows = run_json(capsys, "attack", "derived_seed.scn", "--protocols", "core,core-strong-integrity")
    by = {r["protocol"]: r for r in rows}
    assert by["core"]["success"] and not by["core-strong-integrity"]["success"]
    rows = run_json(capsys, "attack", "seed_sharing.scn", "--protocols", "alt-sig")
    assert "not_applicable" in rows[0]


def test_attack_requires_adversary(capsys):
    code, _, err = run(capsys, "attack", "two_agents.scn")
    assert code == 1 and "no adversaries" in err


def test_bench_table_and_fit(capsys, tmp_path):
    code, out, _ = run(capsys, "bench", "--protocol", "core", "--L", "1,2,4,8", "--delta", "64", "--repeats", "1")
    assert code == 0
    assert out.splitlines()[0].split() == ["protocol", "L", "S", "delta", "seconds"]
    assert "fit core S=16" in out and "R^2=" in out
    res = run_json(capsys, "bench", "--protocol", "core", "--L", "1,2,4,8", "--delta", "64", "--repeats", "1",
                   "--out", str(tmp_path))
    assert [r["L"] for r in res["rows"]] == [1, 2, 4, 8]
    assert set(res["fits"][0]) == {"protocol", "S", "slope", "intercept", "r2", "unit_cost"}
    for name in ("bench.csv", "bench_fit.csv", "bench.png"):
        assert (tmp_path / name).stat().st_size > 0


def test_bench_adoption_files(capsys, tmp_path):
    res = run_json(capsys, "bench", "--adoption", "--scenarios", "3", "--out", str(tmp_path))
    assert [r["p"] for r in res["adoption"]] == [0.2, 0.5, 0.8]
    assert (tmp_path / "adoption.png").read_bytes()[:4] == b"\x89PNG"
    assert (tmp_path / "adoption.csv").read_text().startswith("p,scenarios,")


def test_bench_rejects_bad_list(capsys):
    code, _, _ = run(capsys, "bench", "--L", "1,x")
    assert code == 2


def test_keygen_and_whitelist(capsys, tmp_path):
    key = tmp_path / "lab.json"
    res = run_json(capsys, "keygen", "--out", str(key))
    code, _, err = run(capsys, "keygen", "--out", str(key))
    assert code == 1 and "exists" in err
    pol = tmp_path / "policy.json"
    run_json(capsys, "whitelist", "add", "--policy", str(pol), "--cert", "lab", "--key", str(key))
    run_json(capsys, "whitelist", "add", "--policy", str(pol), "--cert", "me", "--vk", res["vk"], "--tier", "self-report")
    loaded = SignaturePolicy.load(pol)
    assert loaded.whitelist["lab"] == (keys.b64d(res["vk"]), Tier.HEALTHCARE)
    assert loaded.whitelist["me"][1] is Tier.SELF_REPORT
    code, _, _ = run(capsys, "whitelist", "add", "--policy", str(pol), "--cert", "x", "--vk", "!!")
    assert code == 1


def test_endpoint_precedence(monkeypatch, tmp_path):
    cfg = tmp_path / "pact.yaml"
    cfg.write_text("registry_url: http://from-file\n")
    args = argparse.Namespace(registry_url=None, config=str(cfg))
    monkeypatch.delenv("PACT_REGISTRY_URL", raising=False)
    assert cli.resolve(args, "registry_url", "PACT_REGISTRY_URL") == "http://from-file"
    monkeypatch.setenv("PACT_REGISTRY_URL", "http://from-env")
    assert cli.resolve(args, "registry_url", "PACT_REGISTRY_URL") == "http://from-env"
    args.registry_url = "http://from-flag"
    assert cli.resolve(args, "registry_url", "PACT_REGISTRY_URL") == "http://from-flag"


def test_missing_endpoint(capsys, monkeypatch):
    monkeypatch.delenv("PACT_REGISTRY_URL", raising=False)
    code, _, err = run(capsys, "entries", "fetch")
    assert code == 1 and "registry endpoint" in err


def test_unreachable_service(capsys):
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    code, _, err = run(capsys, "--registry-url", f"http://127.0.0.1:{port}", "entries", "fetch")
    assert code == 3 and "unreachable" in err


# -- against services -------------------------------------------------------------

T0 = 1_598_400_000


@pytest.fixture
def services(tmp_path):
    lab = keys.SigningKey.from_seed(b"\x05" * 32)
    (tmp_path / "lab.json").write_text(json.dumps({"seed": keys.b64e(lab.seed_bytes())}))
    pol = SignaturePolicy()
    pol.add("lab", lab.verification_key, Tier.HEALTHCARE)
    clock = [T0 + 3600]
    reg = Registry(RegistryConfig(params=Params(), delay=0), pol)
    api = Api(reg, NarrowcastServer(pol), lambda: clock[0])
    return api, tmp_path


def test_only_submit_and_announce_write(capsys, monkeypatch, services):
    api, tmp = services
    spy = SpyTransport(LocalTransport(api))
    monkeypatch.setattr(cli, "HttpTransport", lambda url: spy)
    base = ["--registry-url", "http://x", "--narrowcast-url", "http://x"]
    seed = "ab" * 16
    commands = {
        "report submit": ["report", "submit", "--seed", seed, "--t-start", str(T0), "--t-end", str(T0 + 1800),
                          "--sign-key", str(tmp / "lab.json"), "--cert", "lab"],
        "entries fetch": ["entries", "fetch"],
        "narrowcast announce": ["narrowcast", "announce", "--lat", "40.7", "--lon", "-74.0", "--radius", "200",
                                "--begin", str(T0), "--end", str(T0 + 7200), "--message", "boil water",
                                "--key", str(tmp / "lab.json"), "--cert", "lab"],
        "narrowcast query": ["narrowcast", "query", "--lat", "40.7", "--lon", "-74.0"],
    }
    results = {}
    for name, argv in commands.items():
        before = len(spy.writes())
        results[name] = run_json(capsys, *base, *argv)
        wrote = len(spy.writes()) > before
        assert wrote == (name in ("report submit", "narrowcast announce")), name
    assert results["report submit"]["tier"] == "healthcare-validated"
    assert results["entries fetch"]["entries"][0]["locator"] == seed
    assert results["entries fetch"]["entries"][0]["signers"] == ["lab"]
    assert [m["message"] for m in results["narrowcast query"]["messages"]] == ["boil water"]


def test_report_rejection_exit_code(capsys, monkeypatch, services):
    api, tmp = services
    monkeypatch.setattr(cli, "HttpTransport", lambda url: LocalTransport(api))
    code, out, _ = run(capsys, "--registry-url", "http://x", "report", "submit", "--seed", "ab" * 16,
                       "--t-start", str(T0 + 9000), "--t-end", str(T0 + 10000))
    assert code == 1 and "rejected: future" in out


def test_report_from_entry_file(capsys, monkeypatch, services):
    api, tmp = services
    monkeypatch.setattr(cli, "HttpTransport", lambda url: LocalTransport(api))
    f = tmp / "entry.b64"
    f.write_text(keys.b64e(core.encode_entry(Entry(b"\x07" * 16, T0, T0 + 900))))
    res = run_json(capsys, "--registry-url", "http://x", "report", "submit", "--entry", str(f))
    assert res["accepted"] and res["tier"] == "unsigned"


def test_live_http_round_trip(capsys, services):
    api, tmp = services
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    server = uvicorn.Server(uvicorn.Config(create_app(api), host="127.0.0.1", port=port, log_level="error"))
    th = threading.Thread(target=server.run, daemon=True)
    th.start()
    try:
        for _ in range(200):
            if server.started:
                break
            time.sleep(0.02)
        url = f"http://127.0.0.1:{port}"
        res = run_json(capsys, "--registry-url", url, "report", "submit", "--seed", "cd" * 16,
                       "--t-start", str(T0), "--t-end", str(T0 + 900))
        assert res["accepted"]
        res = run_json(capsys, "--registry-url", url, "entries", "fetch")
        assert [e["locator"] for e in res["entries"]] == ["cd" * 16] and res["next_cursor"] == 1
    finally:
        server.should_exit = True
        th.join(timeout=5)
