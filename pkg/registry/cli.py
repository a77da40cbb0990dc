"""
Command-line surface of a registry node.

``cli_dispatch(argv)`` returns the exit code: 0 on success, 1 when the
registry refuses the request, 2 on usage errors. It is what
``python manage.py ssivdr ...`` runs.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
from pathlib import Path

from django.conf import settings

from .bench import BenchConfig, run_benchmark, write_report
from .crypto import generate_keypair
from .exceptions import InvalidSeed, RegistryError, UnknownPrincipal
from .identity import DID, Claim, DeviceType, IdentityRecord, Role, canonical_json
from .ledger import Genesis, Ledger, Mode, audit_issuance
from .orchestrator import DeviceBinding, LogicalClock, Node
from .storage import Keystore, LedgerFile, create_ledger, open_ledger, save_genesis
from .trust import DEFAULT_TAU, find_trust_linkage, trust_score

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_REJECTED = 1
EXIT_USAGE = 2


def _csv_ints(text):
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _claim(text):
    key, sep, val = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"claims look like key=value, got {text!r}")
    return Claim(key, val)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--ledger", default=settings.SSIVDR_LEDGER, type=Path
    )
    common.add_argument(
        "--genesis", default=settings.SSIVDR_GENESIS, type=Path
    )
    common.add_argument(
        "--keystore", default=settings.SSIVDR_KEYSTORE, type=Path
    )

    parser = argparse.ArgumentParser(
        prog="ssivdr", description="Endorsement-driven SSI registry node."
    )
    commands = parser.add_subparsers(dest="command", required=True, metavar="command")

    def command(name, help_text):
        return commands.add_parser(name, parents=[common], help=help_text)

    sub = command("keygen", "create a named keypair in the keystore")
    sub.add_argument("--name", required=True)
    sub.add_argument("--seed", help="32-byte seed as hex")
    sub.add_argument("--force", action="store_true")

    sub = command("init", "write a genesis file and start an empty ledger")
    sub.add_argument("--manufacturers", required=True, help="comma-separated key names")
    sub.add_argument("--tau", type=float, default=settings.SSIVDR_TAU)
    sub.add_argument(
        "--batch-limit",
        type=int,
        default=settings.SSIVDR_BATCH_LIMIT,
    )
    sub.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.ENDORSEMENT.value)
    sub.add_argument("--force", action="store_true")

    sub = command("register", "register a user or a device")
    sub.add_argument("--name", required=True)
    sub.add_argument("--role", choices=[Role.USER.value, Role.DEVICE.value], required=True)
    sub.add_argument("--device-type", choices=[t.value for t in DeviceType])
    sub.add_argument("--owner")

    sub = command("endorse", "endorse another issuer")
    sub.add_argument("--endorser", required=True)
    sub.add_argument("--subject", required=True)
    sub.add_argument("--score", type=float, required=True)

    sub = command("proxy", "designate a proxy issuer")
    sub.add_argument("--manufacturer", required=True)
    sub.add_argument("--proxy", required=True)
    sub.add_argument("--min-trust", type=float, default=0.8)

    sub = command("onboard", "onboard a user as an issuer")
    sub.add_argument("--name", required=True)

    sub = command("issue", "issue a credential")
    sub.add_argument("--issuer", required=True)
    sub.add_argument("--holder", required=True)
    sub.add_argument("--claim", type=_claim, action="append", default=[])

    sub = command("verify", "check a credential's status")
    sub.add_argument("--vc", required=True)
    sub.add_argument("--verifier", help="record the verification on the ledger as this principal")

    sub = command("revoke", "revoke a credential")
    sub.add_argument("--vc", required=True)
    sub.add_argument("--by", required=True)
    sub.add_argument("--rationale", required=True)

    sub = command("transfer", "transfer a device to a new owner")
    sub.add_argument("--device", required=True)
    sub.add_argument("--from", dest="old_owner", required=True)
    sub.add_argument("--to", dest="new_owner", required=True)

    sub = command("bind", "bind a weak device to a strong one")
    sub.add_argument("--owner", required=True)
    sub.add_argument("--strong", required=True)
    sub.add_argument("--weak", required=True)

    sub = command("auth", "run a challenge-response authentication")
    sub.add_argument("--holder", required=True)
    sub.add_argument("--vc", required=True)
    sub.add_argument("--verifier")
    sub.add_argument("--via", help="strong device answering for a bound weak holder")

    bench = command("bench", "run a benchmark")
    bench.add_argument("kind", choices=["throughput", "latency", "resource"])
    bench.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.ENDORSEMENT.value)
    bench.add_argument("--rates", type=_csv_ints, default=(25, 50, 100, 200))
    bench.add_argument("--parallel", type=_csv_ints, default=(1, 4, 16, 64))
    bench.add_argument("--duration", type=float, default=10.0)
    bench.add_argument("--tau", type=float, default=DEFAULT_TAU)
    bench.add_argument("--seed", type=int, default=7)
    bench.add_argument("--operations", type=int, default=200)
    bench.add_argument(
        "--link-delay",
        type=int,
        default=settings.SSIVDR_LINK_DELAY_MS,
        help="simulated device round trip in ms",
    )
    bench.add_argument("--out", type=Path, default=Path("bench"))
    bench.add_argument("--compare", action="store_true", help="run both modes")

    sub = command("ledger", "inspect the ledger file")
    sub.add_argument("action", choices=["audit", "replay", "export"])
    sub.add_argument("--out", type=Path)

    sub = command("trustgraph", "inspect the web of trust")
    sub.add_argument("action", choices=["export"])
    sub.add_argument("--out", type=Path)

    sub = command("demo", "scripted end-to-end lifecycle on an in-memory ledger")
    sub.add_argument("--tau", type=float, default=DEFAULT_TAU)
    sub.add_argument("--seed", type=int, default=7)
    return parser


class Session:
    """Keystore, ledger and node for one CLI invocation."""

    def __init__(self, args, stdout):
        self.args = args
        self.stdout = stdout
        self.keystore = Keystore(args.keystore)
        self._ledger = None
        self._node = None

    def echo(self, message=""):
        print(message, file=self.stdout)

    @property
    def ledger(self):
        if self._ledger is None:
            self._ledger = open_ledger(self.args.ledger)
        return self._ledger

    @property
    def node(self):
        if self._node is None:
            self._node = Node(self.ledger, expiry_ms=settings.SSIVDR_CHALLENGE_EXPIRY_MS)
        return self._node

    def key(self, name):
        return self.keystore.load(name)

    def did(self, name_or_did):
        if name_or_did.startswith("did:"):
            return DID.parse(name_or_did)
        return self.keystore.did(name_or_did)

    def record(self, name_or_did):
        return self.node.record(self.did(name_or_did))

    def close(self):
        if self._ledger is not None:
            self._ledger.flush()


def cmd_keygen(session, args):
    seed = None
    if args.seed:
        try:
            seed = bytes.fromhex(args.seed)
        except ValueError as exc:
            raise InvalidSeed("seed must be hex") from exc
    keypair = generate_keypair(seed)
    session.keystore.save(args.name, keypair, overwrite=args.force)
    session.echo(f"{args.name} {DID.from_key(keypair)}")


def cmd_init(session, args):
    names = [name.strip() for name in args.manufacturers.split(",") if name.strip()]
    genesis = Genesis(
        manufacturers=tuple(
            IdentityRecord.for_key(session.key(name), Role.MANUFACTURER) for name in names
        ),
        tau=args.tau,
        batch_limit=args.batch_limit,
        mode=args.mode,
    )
    save_genesis(args.genesis, genesis)
    create_ledger(args.ledger, genesis, overwrite=args.force)
    session.echo(f"genesis {args.genesis}: {len(names)} manufacturers, tau {genesis.tau}")
    session.echo(f"ledger {args.ledger} ({genesis.mode.value} mode)")


def cmd_register(session, args):
    key = session.key(args.name)
    if args.role == Role.USER.value:
        record = session.node.register_user(key)
    else:
        record = session.node.register_device(session.key(args.owner), key, args.device_type)
    session.echo(f"registered {args.name} {record.did} ({record.role.value})")


def cmd_endorse(session, args):
    endorsement = session.node.endorse(
        session.key(args.endorser), session.did(args.subject), args.score
    )
    session.echo(f"{endorsement.endorser} endorsed {endorsement.subject} with {endorsement.score}")


def cmd_proxy(session, args):
    proxy = session.did(args.proxy)
    session.node.designate_proxy(session.key(args.manufacturer), proxy, args.min_trust)
    session.echo(f"designated proxy {proxy} (min trust {args.min_trust})")


def cmd_onboard(session, args):
    record = session.record(args.name)
    session.node.onboard_issuer(record, session.key(args.name))
    score = session.ledger.state.onboarded_issuers[record.did]
    session.echo(f"onboarded {record.did} with score {score.value:.4f}")


def cmd_issue(session, args):
    credential = session.node.issue_device_credential(
        session.key(args.issuer), session.record(args.holder), args.claim
    )
    session.echo(credential.vc_id)


def cmd_verify(session, args):
    if args.verifier:
        outcome = session.node.verify_credential(session.key(args.verifier), args.vc)
    else:
        outcome = session.node.query_credential(args.vc)
    if outcome.valid:
        session.echo("valid")
        return EXIT_OK
    session.echo(f"invalid: {outcome}")
    return EXIT_REJECTED


def cmd_revoke(session, args):
    session.node.revoke_credential(session.key(args.by), args.vc, args.rationale)
    session.echo(f"revoked {args.vc}")


def cmd_transfer(session, args):
    credential = session.node.transfer_ownership(
        session.key(args.old_owner),
        session.record(args.new_owner),
        session.key(args.new_owner),
        session.record(args.device),
    )
    session.echo(credential.vc_id)


def cmd_bind(session, args):
    binding = session.node.bind_weak_device(
        session.key(args.owner), session.record(args.strong), session.record(args.weak)
    )
    session.echo(binding.credential_id)


def _binding_for(state, strong, weak):
    entry = state.active_binding(strong, weak)
    if entry is None:
        return None
    credential = entry.credential
    return DeviceBinding(
        strong=strong,
        weak=weak,
        owner=credential.issuer,
        bound_at=credential.issued_at,
        signature=credential.signature,
        credential_id=credential.vc_id,
    )


def cmd_auth(session, args):
    node = session.node
    entry = node.state.credentials.get(args.vc)
    if entry is None:
        raise UnknownPrincipal(f"no credential {args.vc}")
    if args.verifier:
        verifier = session.did(args.verifier)
    else:
        verifier = session.ledger.genesis.manufacturers[0].did
    challenge = node.issue_challenge(verifier)
    if args.via:
        strong = session.did(args.via)
        binding = _binding_for(node.state, strong, session.did(args.holder))
        if binding is None:
            session.echo("reject(UnboundDevice)")
            return EXIT_REJECTED
        result = node.delegated_authenticate(
            session.key(args.via), binding, entry.credential, challenge
        )
    else:
        result = node.authenticate(session.key(args.holder), entry.credential, challenge)
    session.echo(str(result))
    return EXIT_OK if result.accepted else EXIT_REJECTED


def cmd_bench(session, args):
    bench_config = BenchConfig(
        mode=args.mode,
        send_rates=args.rates,
        parallelism_levels=args.parallel,
        duration_s=args.duration,
        tau=args.tau,
        seed=args.seed,
        out_dir=args.out,
        link_delay_ms=args.link_delay,
        operations=args.operations,
    )
    report = run_benchmark(args.kind, bench_config, compare=args.compare)
    for path in write_report(report, args.out):
        session.echo(f"wrote {path}")
    for row in report.rows:
        session.echo(", ".join(f"{k}={v}" for k, v in row.items() if k != "ledger_digest"))
    if "cv" in report.summary:
        for mode, cv in report.summary["cv"].items():
            session.echo(f"{mode}: coefficient of variation of mean latency {cv:.4f}")
    for mode, cv in report.summary.get("cv_service", {}).items():
        session.echo(f"{mode}: coefficient of variation of service latency {cv:.4f}")
    for ratio in report.summary.get("ratios", ()):
        session.echo(f"ratio {ratio['counter']}: {ratio['ratio']}")


def _emit(session, data, out):
    text = json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
        session.echo(f"wrote {out}")
    else:
        session.echo(text)


def cmd_ledger(session, args):
    if args.action == "audit":
        audit = LedgerFile(args.ledger).audit()
        if not audit.intact:
            session.echo(f"{audit.report}: {audit.report.detail}")
            return EXIT_REJECTED
        findings = audit_issuance(list(audit.chain), audit.genesis)
        for finding in findings:
            session.echo(
                f"unauthorized issue {finding.tx_id} at height {finding.height} "
                f"by {finding.issuer} (score {finding.score:.4f})"
            )
        if findings:
            return EXIT_REJECTED
        session.echo(f"intact: {len(audit.chain)} blocks")
        return EXIT_OK
    ledger = session.ledger
    if args.action == "replay":
        session.echo(f"blocks {len(ledger.chain)}")
        session.echo(f"head {ledger.chain_digest()}")
        session.echo(f"state {ledger.state_digest()}")
    else:
        _emit(session, ledger.state.to_map(), args.out)
    return EXIT_OK


def cmd_trustgraph(session, args):
    _emit(session, session.ledger.state.graph.to_map(), args.out)


def cmd_demo(session, args):
    """Manufacturer, proxy, user, device, transfer, revoke on a throwaway ledger."""
    from .bench import derive_key

    echo = session.echo
    seed = args.seed
    keys = {
        name: derive_key(seed, f"demo-{name}")
        for name in ("manufacturer", "proxy", "alice", "bob", "hub", "sensor", "verifier")
    }
    manufacturer = IdentityRecord.for_key(keys["manufacturer"], Role.MANUFACTURER)
    genesis = Genesis(manufacturers=(manufacturer,), tau=args.tau)
    ledger = Ledger(genesis)
    node = Node(ledger, clock=LogicalClock())
    echo(f"genesis: manufacturer {manufacturer.did}, tau {genesis.tau}")

    proxy = node.register_user(keys["proxy"])
    alice = node.register_user(keys["alice"])
    bob = node.register_user(keys["bob"])
    node.register_user(keys["verifier"])
    echo(f"registered proxy {proxy.did}, alice {alice.did}, bob {bob.did}")

    node.endorse(keys["manufacturer"], proxy.did, 0.95)
    node.onboard_issuer(proxy, keys["proxy"])
    node.designate_proxy(keys["manufacturer"], proxy.did, 0.8)
    echo(f"proxy onboarded and designated (score {trust_score(ledger.state.graph, proxy.did).value:.4f})")

    node.endorse(keys["proxy"], alice.did, 0.8)
    linkage = find_trust_linkage(ledger.state.graph, alice.did)
    node.onboard_issuer(alice, keys["alice"])
    echo(
        "alice onboarded via "
        + " -> ".join(str(did) for did in linkage.chain)
        + f" (score {ledger.state.onboarded_issuers[alice.did].value:.4f})"
    )
    node.endorse(keys["manufacturer"], bob.did, 0.9)
    node.onboard_issuer(bob, keys["bob"])
    echo(f"bob onboarded (score {ledger.state.onboarded_issuers[bob.did].value:.4f})")

    hub = node.register_device(keys["alice"], keys["hub"], DeviceType.STRONG)
    sensor = node.register_device(keys["alice"], keys["sensor"], DeviceType.WEAK)
    hub_vc = node.issue_device_credential(keys["alice"], hub, [Claim("model", "hub-1")])
    sensor_vc = node.issue_device_credential(keys["alice"], sensor, [Claim("model", "thermo-2")])
    echo(f"alice credentialed hub {hub_vc.vc_id} and sensor {sensor_vc.vc_id}")

    verifier = DID.from_key(keys["verifier"])
    echo(f"hub authenticates: {node.authenticate(keys['hub'], hub_vc, node.issue_challenge(verifier))}")
    binding = node.bind_weak_device(keys["alice"], hub, sensor)
    result = node.delegated_authenticate(
        keys["hub"], binding, sensor_vc, node.issue_challenge(verifier)
    )
    echo(f"sensor bound to hub; delegated authentication: {result}")

    new_vc = node.transfer_ownership(keys["alice"], bob, keys["bob"], hub)
    echo(f"hub transferred to bob, new credential {new_vc.vc_id}")
    echo(f"old hub credential now: {node.verify_credential(keys['verifier'], hub_vc.vc_id)}")
    result = node.delegated_authenticate(
        keys["hub"], binding, sensor_vc, node.issue_challenge(verifier)
    )
    echo(f"sensor via hub after transfer: {result}")

    node.revoke_credential(keys["bob"], new_vc.vc_id, "stolen")
    result = node.authenticate(keys["hub"], new_vc, node.issue_challenge(verifier))
    echo(f"bob revoked the hub credential (stolen); hub authenticates: {result}")

    ledger.flush()
    audit = audit_issuance(ledger.chain, genesis)
    echo(f"ledger: {len(ledger.chain)} blocks, {ledger.committed} committed, {ledger.rejected} rejected")
    echo(f"unauthorized issues: {len(audit)}")
    echo(f"state digest {ledger.state_digest()}")


HANDLERS = {
    "keygen": cmd_keygen,
    "init": cmd_init,
    "register": cmd_register,
    "endorse": cmd_endorse,
    "proxy": cmd_proxy,
    "onboard": cmd_onboard,
    "issue": cmd_issue,
    "verify": cmd_verify,
    "revoke": cmd_revoke,
    "transfer": cmd_transfer,
    "bind": cmd_bind,
    "auth": cmd_auth,
    "bench": cmd_bench,
    "ledger": cmd_ledger,
    "trustgraph": cmd_trustgraph,
    "demo": cmd_demo,
}


def _check_usage(parser, args):
    if args.command == "register" and args.role == Role.DEVICE.value:
        if not args.device_type or not args.owner:
            parser.error("register --role device needs --device-type and --owner")


def cli_dispatch(argv, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        with contextlib.redirect_stdout(stdout), contextlib.redirect_stderr(stderr):
            args = parser.parse_args(list(argv))
            _check_usage(parser, args)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK

    session = Session(args, stdout)
    try:
        code = HANDLERS[args.command](session, args)
        session.close()
    except RegistryError as exc:
        reason = exc.reason or type(exc).__name__
        print(f"error: {reason}: {exc}", file=stderr)
        logger.debug("command %s failed", args.command, exc_info=True)
        return EXIT_REJECTED
    return EXIT_OK if code is None else code

