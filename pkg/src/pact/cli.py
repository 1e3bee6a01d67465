"""``pact`` command line.

Endpoints come from ``--registry-url``/``--narrowcast-url``, then the
``PACT_REGISTRY_URL``/``PACT_NARROWCAST_URL`` environment variables, then a
YAML config file (``--config``). Exit codes: 0 ok, 1 failure, 2 usage,
3 service unreachable.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

import yaml

from pact import core, keys
from pact.agent import Protocol
from pact.core import Entry, Params
from pact.narrowcast import Area, NarrowcastEntry, Region, region_of, sign_announcement
from pact.registry import SignaturePolicy, Tier
from pact.sim.scenario import AttackSpec, ScenarioError, load_scenario
from pact.transport import HttpTransport, NarrowcastClient, RegistryClient, ServiceError, TransportError

log = logging.getLogger("pact")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_UNREACHABLE = 0, 1, 2, 3

_TIERS = {t.label: t for t in Tier if t is not Tier.UNSIGNED}


class CliError(Exception):
    pass


# -- config -----------------------------------------------------------------


def _config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise CliError(f"config file not found: {path}")
    data = yaml.safe_load(p.read_text()) or {}
    if not isinstance(data, dict):
        raise CliError(f"config file must be a mapping: {path}")
    return data


def resolve(args, name: str, env: str) -> str | None:
    """Flag, then environment, then config file."""
    flag = getattr(args, name, None)
    if flag:
        return flag
    if os.environ.get(env):
        return os.environ[env]
    return _config_file(args.config).get(name)


def _registry(args) -> RegistryClient:
    url = resolve(args, "registry_url", "PACT_REGISTRY_URL")
    if not url:
        raise CliError("no registry endpoint: pass --registry-url or set PACT_REGISTRY_URL")
    return RegistryClient(HttpTransport(url))


def _narrowcast(args) -> NarrowcastClient:
    url = resolve(args, "narrowcast_url", "PACT_NARROWCAST_URL")
    if not url:
        raise CliError("no narrowcast endpoint: pass --narrowcast-url or set PACT_NARROWCAST_URL")
    return NarrowcastClient(HttpTransport(url))


def _existing(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"{what} not found: {path}")
    return p


def load_key(path: str) -> keys.SigningKey:
    data = json.loads(_existing(path, "key file").read_text())
    try:
        return keys.SigningKey.from_seed(keys.b64d(data["seed"]))
    except (KeyError, ValueError) as exc:
        raise CliError(f"bad key file {path}: {exc}") from None


def scenario_path(name: str) -> Path:
    """A scenario file path, falling back to the packaged scenarios."""
    p = Path(name)
    if p.is_file():
        return p
    packaged = resources.files("pact") / "scenarios" / p.name
    if packaged.is_file():
        return Path(str(packaged))
    raise CliError(f"scenario not found: {name}")


# -- output -----------------------------------------------------------------


def emit(args, command: str, result, human: str) -> None:
    if args.format == "json":
        print(json.dumps({"command": command, "result": result}, sort_keys=True, default=str))
    else:
        print(human)


def _table(rows: list[dict]) -> str:
    if not rows:
        return "(none)"
    cols = list(rows[0])
    width = {c: max(len(c), *(len(str(r[c])) for r in rows)) for c in cols}
    lines = ["  ".join(c.ljust(width[c]) for c in cols)]
    lines += ["  ".join(str(r[c]).ljust(width[c]) for c in cols) for r in rows]
    return "\n".join(lines)


def _entry_json(e: Entry) -> dict:
    return {
        "locator": e.locator,
        "t_start": e.t_start,
        "t_end": e.t_end,
        "signers": [cert for _, cert in e.signatures],
        "strong_integrity": e.vk is not None,
    }


# -- services -----------------------------------------------------------------


def cmd_registry_serve(args) -> int:
    from pact.api import Api
    from pact.registry import Registry, RegistryConfig
    from pact.server import serve

    policy = SignaturePolicy.load(_existing(args.policy, "policy")) if args.policy else SignaturePolicy()
    params = Params(dt=args.dt, delta=args.delta)
    cfg = RegistryConfig(
        params=params,
        delay=args.delay if args.delay is not None else 2 * params.dt,
        require_strong_integrity=args.require_strong_integrity,
        require_signature=args.require_signature,
    )
    reg = Registry(cfg, policy, data_dir=args.data_dir)
    serve(Api(registry=reg), args.host, args.port, title="pact registry")
    return EXIT_OK


def cmd_narrowcast_serve(args) -> int:
    from pact.api import Api
    from pact.narrowcast import NarrowcastServer
    from pact.server import serve

    policy = SignaturePolicy.load(_existing(args.policy, "policy")) if args.policy else SignaturePolicy()
    serve(Api(narrowcast=NarrowcastServer(policy)), args.host, args.port, title="pact narrowcast")
    return EXIT_OK


# -- simulation -----------------------------------------------------------------


def cmd_agent_demo(args) -> int:
    from pact.sim.engine import run_scenario

    sc = load_scenario(scenario_path("two_agents.scn"))
    sc.protocol = Protocol(args.protocol)
    res = run_scenario(sc)
    alerts = [
        {"agent": i, **a.to_json()} for i, r in sorted(res.agents.items()) for a in r.alerts
    ]
    human = f"two agents, protocol {sc.protocol.value}: {len(alerts)} alert(s)"
    for a in alerts:
        human += f"\n  agent {a['agent']}: at risk, {a['count']} matching sighting(s)"
    emit(args, "agent demo", {"protocol": sc.protocol.value, "alerts": alerts}, human)
    return EXIT_OK


def cmd_simulate(args) -> int:
    from pact.sim.engine import oracle_exposures, run_scenario

    sc = load_scenario(scenario_path(args.scenario))
    if args.protocol:
        sc.protocol = Protocol(args.protocol)
    if args.seed is not None:
        sc.seed = args.seed
    res = run_scenario(sc)
    summary = res.summary()
    oracle = oracle_exposures(sc)
    summary["oracle_pairs"] = len({(l, r) for l, r, _ in oracle})
    per_agent = [
        {
            "agent": i,
            "alerts": len(r.alerts),
            "broadcasts": r.broadcasts,
            "heard": r.heard,
            "bytes_sent": r.bytes_sent,
            "bytes_received": r.bytes_received,
        }
        for i, r in sorted(res.agents.items())
    ]
    if args.out:
        from pact.plotting import write_csv

        write_csv(per_agent, Path(args.out) / f"{sc.name}.csv")
    human = (
        f"scenario {sc.name} ({sc.protocol.value}, {sc.n_agents} agents): "
        f"{summary['alerts']} alert(s), {summary['exposure_pairs']} exposure pair(s), "
        f"oracle {summary['oracle_pairs']}\n" + _table(per_agent)
    )
    for a in summary["attacks"]:
        human += "\nattack " + ", ".join(f"{k}={v}" for k, v in a.items())
    emit(args, "simulate", {"summary": summary, "agents": per_agent}, human)
    return EXIT_OK


def cmd_attack(args) -> int:
    from pact.sim.attacks import run_attack

    sc = load_scenario(scenario_path(args.spec))
    if not sc.adversaries:
        raise CliError(f"{args.spec} declares no adversaries")
    protocols = [Protocol(p) for p in args.protocols.split(",")] if args.protocols else [sc.protocol]
    rows = []
    for proto in protocols:
        for spec in sc.adversaries:
            sc.protocol = proto
            try:
                m = run_attack(sc, AttackSpec(spec.kind, dict(spec.params)))
            except ScenarioError as exc:
                m = {"kind": spec.kind, "protocol": proto.value, "not_applicable": str(exc)}
            rows.append(m)
    human = "\n".join(", ".join(f"{k}={v}" for k, v in m.items()) for m in rows)
    emit(args, "attack", rows, human)
    return EXIT_OK


def _int_list(text: str) -> list[int]:
    try:
        out = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not out or min(out) < 1:
        raise argparse.ArgumentTypeError("values must be positive")
    return out


def cmd_bench(args) -> int:
    from pact.sim.bench import adoption_experiment, bench_check_cost

    if args.adoption:
        rows = adoption_experiment(n_scenarios=args.scenarios, seed=args.seed)
        table = [
            {"p": r.p, "scenarios": r.scenarios, "exposures": r.exposures, "detected": r.detected,
             "fraction": round(r.fraction, 4), "p_squared": round(r.p**2, 4)}
            for r in rows
        ]
        if args.out:
            from pact.plotting import plot_adoption, write_csv

            write_csv(table, Path(args.out) / "adoption.csv")
            plot_adoption(rows, Path(args.out) / "adoption.png")
        emit(args, "bench", {"adoption": table}, _table(table))
        return EXIT_OK
    protocols = [Protocol.CORE, Protocol.ALT] if args.protocol == "both" else [Protocol(args.protocol)]
    rows, fits = bench_check_cost(args.L, args.S, args.delta, protocols, args.repeats, args.seed)
    table = [dataclasses.asdict(r) for r in rows]
    fit_rows = [{k: (float(v) if isinstance(v, float) else v) for k, v in dataclasses.asdict(f).items()} for f in fits]
    if args.out:
        from pact.plotting import plot_bench, write_csv

        write_csv(table, Path(args.out) / "bench.csv")
        write_csv(fit_rows, Path(args.out) / "bench_fit.csv")
        plot_bench(rows, fits, Path(args.out) / "bench.png")
    human = _table([{**r, "seconds": f"{r['seconds']:.6f}"} for r in table])
    for f in fits:
        human += (
            f"\nfit {f.protocol} S={f.S}: time = {f.slope:.3e}*L + {f.intercept:.3e}"
            f"  R^2={f.r2:.4f}  unit cost={f.unit_cost:.3e}s"
        )
    emit(args, "bench", {"rows": table, "fits": fit_rows}, human)
    return EXIT_OK


# -- keys and policy ------------------------------------------------------------


def cmd_keygen(args) -> int:
    out = Path(args.out)
    if out.exists() and not args.force:
        raise CliError(f"{out} exists; pass --force to overwrite")
    sk = keys.SigningKey.generate()
    vk = keys.b64e(sk.verification_key)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps({"seed": keys.b64e(sk.seed_bytes()), "vk": vk}) + "\n")
    out.chmod(0o600)
    emit(args, "keygen", {"path": str(out), "vk": vk}, f"wrote {out}\nverification key: {vk}")
    return EXIT_OK


def cmd_whitelist_add(args) -> int:
    path = Path(args.policy)
    policy = SignaturePolicy.load(path) if path.exists() else SignaturePolicy()
    if args.key:
        vk = load_key(args.key).verification_key
    else:
        try:
            vk = keys.b64d(args.vk)
            keys.load_public(vk)
        except ValueError:
            raise CliError("--vk is not a base64 Ed25519 verification key") from None
    policy.add(args.cert, vk, _TIERS[args.tier])
    policy.save(path)
    emit(args, "whitelist add", {"policy": str(path), "cert": args.cert, "tier": args.tier},
         f"{args.cert} -> {args.tier} in {path}")
    return EXIT_OK


# -- registry clients ----------------------------------------------------------


def _entry_from_args(args) -> Entry:
    if args.entry:
        raw = _existing(args.entry, "entry file").read_bytes()
        try:
            return core.decode_entry(keys.b64d(raw.decode().strip()))
        except (UnicodeDecodeError, ValueError):
            return core.decode_entry(raw)
    if not (args.seed and args.t_start is not None and args.t_end is not None):
        raise CliError("give --entry FILE or all of --seed, --t-start, --t-end")
    try:
        seed = bytes.fromhex(args.seed)
    except ValueError:
        raise CliError("--seed must be hex") from None
    return Entry(seed, args.t_start, args.t_end)


def cmd_report_submit(args) -> int:
    entry = _entry_from_args(args)
    if args.sign_key:
        if not args.cert:
            raise CliError("--sign-key needs --cert")
        sk = load_key(args.sign_key)
        sig = sk.sign(core.signed_payload(entry))
        entry = dataclasses.replace(entry, signatures=entry.signatures + ((sig, args.cert),))
    resp = _registry(args).submit(entry)
    ok = bool(resp.get("accepted"))
    human = f"accepted ({resp.get('tier')})" if ok else f"rejected: {resp.get('reason')}"
    emit(args, "report submit", resp, human)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_entries_fetch(args) -> int:
    entries, nxt = _registry(args).fetch(args.cursor, args.limit)
    rows = [_entry_json(e) for e in entries]
    human = _table([{**r, "signers": ",".join(r["signers"])} for r in rows]) + f"\nnext cursor: {nxt}"
    emit(args, "entries fetch", {"entries": rows, "next_cursor": nxt}, human)
    return EXIT_OK


def cmd_nc_announce(args) -> int:
    area = Area(args.lat, args.lon, args.radius, args.begin, args.end)
    problem = area.problem()
    if problem:
        raise CliError(f"invalid area: {problem}")
    entry = sign_announcement(area, args.message.encode(), load_key(args.key), args.cert)
    resp = _narrowcast(args).announce(entry)
    ok = bool(resp.get("accepted"))
    emit(args, "narrowcast announce", resp, "announced" if ok else f"rejected: {resp.get('reason')}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_nc_query(args) -> int:
    if args.lat is not None and args.lon is not None:
        region = region_of(args.lat, args.lon, args.lat_bits, args.lon_bits)
    elif args.lat_prefix is not None and args.lon_prefix is not None:
        region = Region(args.lat_prefix, args.lon_prefix, args.lat_bits, args.lon_bits)
    else:
        raise CliError("give --lat/--lon or --lat-prefix/--lon-prefix")
    msgs: list[NarrowcastEntry] = _narrowcast(args).get_messages(region, args.since)
    rows = [
        {"lat": m.area.lat, "lon": m.area.lon, "radius": m.area.radius, "t_begin": m.area.t_begin,
         "t_end": m.area.t_end, "signer": m.signer, "message": m.message.decode("utf-8", "replace")}
        for m in msgs
    ]
    emit(args, "narrowcast query", {"region": dataclasses.asdict(region), "messages": rows}, _table(rows))
    return EXIT_OK


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pact", description="Contact tracing services, simulator and tools.")
    ap.add_argument("--format", choices=("human", "json"), default="human")
    ap.add_argument("--config", help="YAML file with registry_url / narrowcast_url")
    ap.add_argument("--registry-url")
    ap.add_argument("--narrowcast-url")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND")

    def serve_opts(p):
        p.add_argument("--host", default="127.0.0.1")
        p.add_argument("--port", type=int, default=8080)
        p.add_argument("--policy", help="signature whitelist JSON")

    reg = sub.add_parser("registry", help="run the report registry").add_subparsers(dest="action", required=True)
    p = reg.add_parser("serve")
    serve_opts(p)
    p.add_argument("--data-dir")
    p.add_argument("--dt", type=int, default=900)
    p.add_argument("--delta", type=int, default=1344)
    p.add_argument("--delay", type=int, help="publication delay in seconds (default 2*dt)")
    p.add_argument("--require-strong-integrity", action="store_true")
    p.add_argument("--require-signature", action="store_true")
    p.set_defaults(fn=cmd_registry_serve)

    nc = sub.add_parser("narrowcast", help="narrowcast service and client").add_subparsers(dest="action", required=True)
    p = nc.add_parser("serve")
    serve_opts(p)
    p.set_defaults(fn=cmd_narrowcast_serve)
    p = nc.add_parser("announce")
    p.add_argument("--lat", type=float, required=True)
    p.add_argument("--lon", type=float, required=True)
    p.add_argument("--radius", type=int, required=True, help="meters")
    p.add_argument("--begin", type=int, required=True)
    p.add_argument("--end", type=int, required=True)
    p.add_argument("--message", required=True)
    p.add_argument("--key", required=True)
    p.add_argument("--cert", required=True)
    p.set_defaults(fn=cmd_nc_announce)
    p = nc.add_parser("query")
    p.add_argument("--lat", type=float)
    p.add_argument("--lon", type=float)
    p.add_argument("--lat-prefix", type=int)
    p.add_argument("--lon-prefix", type=int)
    p.add_argument("--lat-bits", type=int, default=8)
    p.add_argument("--lon-bits", type=int, default=9)
    p.add_argument("--since", type=int, default=0)
    p.set_defaults(fn=cmd_nc_query)

    ag = sub.add_parser("agent", help="device agent").add_subparsers(dest="action", required=True)
    p = ag.add_parser("demo", help="two agents meet, one reports")
    p.add_argument("--protocol", choices=[x.value for x in Protocol], default="core")
    p.set_defaults(fn=cmd_agent_demo)

    p = sub.add_parser("simulate", help="run a scenario file")
    p.add_argument("scenario")
    p.add_argument("--protocol", choices=[x.value for x in Protocol])
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="directory for the per-agent CSV")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("attack", help="run a scenario's adversaries and report metrics")
    p.add_argument("spec")
    p.add_argument("--protocols", help="comma-separated protocols to compare")
    p.set_defaults(fn=cmd_attack)

    p = sub.add_parser("bench", help="exposure-check cost or adoption curve")
    p.add_argument("--protocol", choices=["core", "alt-sig", "both"], default="both")
    p.add_argument("--L", type=_int_list, default=[1, 2, 4, 8, 16, 32, 64])
    p.add_argument("--S", type=_int_list, default=[16])
    p.add_argument("--delta", type=int, default=1344)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--adoption", action="store_true", help="run the adoption experiment instead")
    p.add_argument("--scenarios", type=int, default=200)
    p.add_argument("--out", help="directory for CSV and PNG output")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("keygen", help="create an Ed25519 key file")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_keygen)

    wl = sub.add_parser("whitelist", help="signature policy").add_subparsers(dest="action", required=True)
    p = wl.add_parser("add")
    p.add_argument("--policy", required=True)
    p.add_argument("--cert", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--vk", help="base64 verification key")
    g.add_argument("--key", help="key file")
    p.add_argument("--tier", choices=list(_TIERS), default=Tier.HEALTHCARE.label)
    p.set_defaults(fn=cmd_whitelist_add)

    rp = sub.add_parser("report", help="submit a report").add_subparsers(dest="action", required=True)
    p = rp.add_parser("submit")
    p.add_argument("--entry", help="encoded entry file (raw or base64)")
    p.add_argument("--seed", help="window seed, hex")
    p.add_argument("--t-start", type=int)
    p.add_argument("--t-end", type=int)
    p.add_argument("--sign-key")
    p.add_argument("--cert")
    p.set_defaults(fn=cmd_report_submit)

    en = sub.add_parser("entries", help="read the registry").add_subparsers(dest="action", required=True)
    p = en.add_parser("fetch")
    p.add_argument("--cursor", type=int, default=0)
    p.add_argument("--limit", type=int, default=1000)
    p.set_defaults(fn=cmd_entries_fetch)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not getattr(args, "fn", None):
        ap.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except TransportError as exc:
        print(f"pact: service unreachable: {exc}", file=sys.stderr)
        return EXIT_UNREACHABLE
    except ServiceError as exc:
        print(f"pact: service error {exc.status}: {exc.payload}", file=sys.stderr)
        return EXIT_FAIL
    except (CliError, ScenarioError, ValueError, OSError) as exc:
        print(f"pact: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
