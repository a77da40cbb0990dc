"""
Desk-scale benchmarks comparing the endorsement ledger with the
manufacturer-only baseline: issue throughput against send rate,
authentication latency against parallelism, and a resource profile built
from operation counters.

Workloads are generated from the seed alone, so paired runs in the two modes
submit the same transaction shapes in the same order.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .crypto import counters, generate_keypair
from .exceptions import InsufficientFixture, InvalidConfig, InvalidValue
from .identity import DID, Claim, DeviceType, IdentityRecord, Role, new_credential
from .ledger import Genesis, Ledger, Mode, TxKind, VerifyRequest, build_transaction
from .orchestrator import DEFAULT_EXPIRY_MS, LogicalClock, Node
from .ordering import OrderingService
from .trust import Threshold

try:
    import resource
except ImportError:  # pragma: no cover - not available on Windows
    resource = None

logger = logging.getLogger(__name__)

WORKLOAD_EPOCH = 1_700_000_000_000
FIXTURE_DEVICES = 16
ENDORSEMENT_SCORE = 0.9

THROUGHPUT_COLUMNS = (
    "mode",
    "target_rate",
    "sent",
    "committed",
    "rejected",
    "achieved_tps",
    "mean_ms",
    "p50_ms",
    "p95_ms",
    "p99_ms",
    "signature_verifications",
    "hash_computations",
    "wall_s",
    "ledger_digest",
)
LATENCY_COLUMNS = (
    "mode",
    "parallelism",
    "requests",
    "accepted",
    "rejected",
    "mean_ms",
    "p50_ms",
    "p95_ms",
    "p99_ms",
    "service_mean_ms",
    "service_p95_ms",
    "wall_s",
    "cv_of_means",
    "cv_of_service_means",
)
RESOURCE_COLUMNS = (
    "mode",
    "operations",
    "committed",
    "rejected",
    "wall_s",
    "mean_issue_ms",
    "mean_verify_ms",
    "signatures",
    "signature_verifications",
    "hash_computations",
    "peak_rss_kb",
    "ledger_digest",
)
RATIO_COLUMNS = ("counter", "endorsement", "baseline", "ratio")
RESOURCE_COUNTERS = counters.FIELDS + ("mean_issue_ms", "wall_s")


@dataclass(frozen=True)
class BenchConfig:
    mode: Mode = Mode.ENDORSEMENT
    send_rates: tuple = (25, 50, 100, 200)
    parallelism_levels: tuple = (1, 4, 16, 64)
    duration_s: float = 10.0
    tau: float = 0.5
    seed: int = 7
    out_dir: Path = Path("bench")
    link_delay_ms: int = 25
    batch_limit: int = 16
    issuers: int = 4
    operations: int = 200
    submitters: int = 8
    expiry_ms: int = DEFAULT_EXPIRY_MS

    def validate(self):
        try:
            mode = Mode(self.mode)
            Threshold(self.tau)
        except (ValueError, InvalidValue) as exc:
            raise InvalidConfig(str(exc)) from exc
        for name in ("send_rates", "parallelism_levels"):
            values = tuple(getattr(self, name))
            if not values:
                raise InvalidConfig(f"{name} must not be empty")
            if any(isinstance(v, bool) or not isinstance(v, int) or v <= 0 for v in values):
                raise InvalidConfig(f"{name} must be strictly positive integers")
        if self.duration_s < 1:
            raise InvalidConfig("duration_s must be at least 1")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidConfig("seed must fit in 64 bits")
        for name in ("issuers", "operations", "submitters", "batch_limit", "expiry_ms"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be at least 1")
        if self.link_delay_ms < 0:
            raise InvalidConfig("link_delay_ms must not be negative")
        return replace(
            self,
            mode=mode,
            send_rates=tuple(self.send_rates),
            parallelism_levels=tuple(self.parallelism_levels),
            out_dir=Path(self.out_dir),
        )


@dataclass
class BenchReport:
    kind: str
    columns: tuple
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def add(self, **row):
        self.rows.append({column: row.get(column) for column in self.columns})

    def extend(self, other):
        self.rows.extend(other.rows)
        for key, value in other.summary.items():
            self.summary.setdefault(key, {})
            if isinstance(value, dict):
                self.summary[key].update(value)
            else:
                self.summary[key] = value
        return self

    def column(self, name):
        return [row[name] for row in self.rows]

    def write_csv(self, path, rows=None, columns=None):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.DictWriter(handle, fieldnames=columns or self.columns)
            writer.writeheader()
            writer.writerows(self.rows if rows is None else rows)
        return path


def derive_key(seed, label):
    return generate_keypair(hashlib.sha256(f"{seed}:{label}".encode()).digest())


def summarize(latencies_ms):
    values = np.asarray(latencies_ms, dtype=float)
    if values.size == 0:
        return {"mean_ms": 0.0, "p50_ms": 0.0, "p95_ms": 0.0, "p99_ms": 0.0}
    p50, p95, p99 = np.percentile(values, [50, 95, 99])
    return {
        "mean_ms": round(float(values.mean()), 4),
        "p50_ms": round(float(p50), 4),
        "p95_ms": round(float(p95), 4),
        "p99_ms": round(float(p99), 4),
    }


def coefficient_of_variation(values):
    values = np.asarray(values, dtype=float)
    if values.size == 0 or values.mean() == 0:
        return 0.0
    return float(values.std() / values.mean())


@dataclass
class Fixture:
    node: Node
    manufacturers: list
    users: list
    issuers: list
    devices: list
    verifier: object
    credentials: list = field(default_factory=list)

    @property
    def ledger(self):
        return self.node.ledger


def build_fixture(config: BenchConfig, mode, devices=FIXTURE_DEVICES, credentialed=False):
    """Populate a fresh in-memory ledger with the same principals in either mode.

    Endorsement mode draws its issuer pool from onboarded users, baseline mode
    from the manufacturers; both pools have ``config.issuers`` members.
    """
    seed = config.seed
    mode = Mode(mode)
    manufacturers = [derive_key(seed, f"manufacturer-{i}") for i in range(config.issuers)]
    genesis = Genesis(
        manufacturers=tuple(IdentityRecord.for_key(k, Role.MANUFACTURER) for k in manufacturers),
        tau=config.tau,
        batch_limit=config.batch_limit,
        mode=mode,
    )
    node = Node(Ledger(genesis), clock=LogicalClock(), expiry_ms=config.expiry_ms)
    users = [derive_key(seed, f"user-{i}") for i in range(config.issuers)]
    records = [node.register_user(key) for key in users]
    if mode is Mode.ENDORSEMENT:
        score = ENDORSEMENT_SCORE if config.tau <= ENDORSEMENT_SCORE else 1.0
        for index, (key, record) in enumerate(zip(users, records)):
            node.endorse(manufacturers[index % len(manufacturers)], record.did, score)
            node.onboard_issuer(record, key)
    verifier = derive_key(seed, "verifier")
    node.register_user(verifier)
    fixture = Fixture(
        node=node,
        manufacturers=manufacturers,
        users=users,
        issuers=users if mode is Mode.ENDORSEMENT else manufacturers,
        devices=[],
        verifier=verifier,
    )
    for index in range(devices):
        key = derive_key(seed, f"device-{index}")
        owner = users[index % len(users)]
        fixture.devices.append((key, node.register_device(owner, key, DeviceType.STRONG)))
    if credentialed:
        for index, (_, record) in enumerate(fixture.devices):
            issuer = fixture.issuers[index % len(fixture.issuers)]
            fixture.credentials.append(
                node.issue_device_credential(
                    issuer,
                    record,
                    [Claim("model", "bench-sensor"), Claim("serial", f"{index:06d}")],
                )
            )
    node.ledger.flush()
    return fixture


def issue_workload(fixture: Fixture, count, seed):
    """Pre-signed issue transactions; shape depends only on ``count`` and ``seed``."""
    state = fixture.node.state
    transactions = []
    for index in range(count):
        issuer = fixture.issuers[index % len(fixture.issuers)]
        _, device = fixture.devices[index % len(fixture.devices)]
        timestamp = WORKLOAD_EPOCH + index
        credential = new_credential(
            state.identities[DID.from_key(issuer)],
            issuer,
            device.did,
            [Claim("serial", f"{seed}-{index:06d}"), Claim("firmware", f"1.{index % 7}")],
            timestamp,
        )
        transactions.append(build_transaction(TxKind.ISSUE, credential, issuer, timestamp))
    return transactions


def verify_workload(fixture: Fixture, issues):
    verifier = DID.from_key(fixture.verifier)
    base = WORKLOAD_EPOCH + len(issues)
    return [
        build_transaction(
            TxKind.VERIFY,
            VerifyRequest(tx.payload.vc_id, verifier),
            fixture.verifier,
            base + index,
        )
        for index, tx in enumerate(issues)
    ]


def _delta(before):
    after = counters.snapshot()
    return {name: after[name] - before[name] for name in counters.FIELDS}


def run_issue_throughput(config: BenchConfig) -> BenchReport:
    """Open-loop issue load at each send rate.

    Transactions are signed up front and released on a fixed schedule by a
    pool of submitters; the ordering service applies them in schedule order.
    """
    config = config.validate()
    report = BenchReport("throughput", THROUGHPUT_COLUMNS)
    for rate in config.send_rates:
        fixture = build_fixture(config, config.mode)
        ledger = fixture.ledger
        count = max(1, int(round(rate * config.duration_s)))
        transactions = issue_workload(fixture, count, config.seed)
        latencies = [0.0] * count
        before = counters.snapshot()

        with OrderingService(ledger) as ordering, ThreadPoolExecutor(
            max_workers=config.submitters, thread_name_prefix="submitter"
        ) as pool:
            tickets = ordering.reserve(count)
            start = time.perf_counter()

            def send(index):
                delay = start + index / rate - time.perf_counter()
                if delay > 0:
                    time.sleep(delay)
                sent = time.perf_counter()
                receipt = ordering.submit(tickets[index], transactions[index]).result()
                latencies[index] = (time.perf_counter() - sent) * 1000.0
                return receipt

            receipts = list(pool.map(send, range(count)))
            wall = time.perf_counter() - start
        ledger.flush()

        committed = sum(1 for receipt in receipts if receipt.committed)
        delta = _delta(before)
        row = dict(
            mode=config.mode.value,
            target_rate=rate,
            sent=count,
            committed=committed,
            rejected=count - committed,
            achieved_tps=round(committed / max(wall, config.duration_s), 4),
            signature_verifications=delta["signature_verifications"],
            hash_computations=delta["hash_computations"],
            wall_s=round(wall, 4),
            ledger_digest=ledger.chain_digest(),
            **summarize(latencies),
        )
        report.add(**row)
        logger.info(
            "throughput %s rate=%d committed=%d achieved=%.2f tx/s",
            config.mode.value,
            rate,
            committed,
            row["achieved_tps"],
        )
    return report


def run_auth_latency(config: BenchConfig, fixture: Fixture | None = None) -> BenchReport:
    """Closed-loop challenge-response clients at each parallelism level."""
    config = config.validate()
    needed = max(config.parallelism_levels)
    if fixture is None:
        fixture = build_fixture(config, config.mode, devices=needed, credentialed=True)
    if len(fixture.credentials) < needed:
        raise InsufficientFixture(
            f"{len(fixture.credentials)} credentialed devices, {needed} needed"
        )
    node = fixture.node
    verifier = DID.from_key(fixture.verifier)
    link_delay = config.link_delay_ms / 1000.0
    report = BenchReport("latency", LATENCY_COLUMNS)

    for level in config.parallelism_levels:
        barrier = threading.Barrier(level)

        def client(index):
            key, _ = fixture.devices[index]
            credential = fixture.credentials[index]
            latencies, service, accepted = [], [], 0
            barrier.wait()
            deadline = time.perf_counter() + config.duration_s
            while True:
                began = time.perf_counter()
                challenge = node.issue_challenge(verifier)
                slept = time.perf_counter()
                if link_delay:
                    time.sleep(link_delay)
                slept = time.perf_counter() - slept
                response = node.respond_to_challenge(key, challenge)
                result = node.verify_response(challenge, response, credential)
                elapsed = time.perf_counter() - began
                latencies.append(elapsed * 1000.0)
                service.append((elapsed - slept) * 1000.0)
                accepted += int(result.accepted)
                if time.perf_counter() >= deadline:
                    return latencies, service, accepted

        start = time.perf_counter()
        with ThreadPoolExecutor(max_workers=level, thread_name_prefix="auth") as pool:
            outcomes = list(pool.map(client, range(level)))
        wall = time.perf_counter() - start
        latencies = [value for values, _, _ in outcomes for value in values]
        service = summarize([value for _, values, _ in outcomes for value in values])
        accepted = sum(count for _, _, count in outcomes)
        report.add(
            mode=config.mode.value,
            parallelism=level,
            requests=len(latencies),
            accepted=accepted,
            rejected=len(latencies) - accepted,
            wall_s=round(wall, 4),
            service_mean_ms=service["mean_ms"],
            service_p95_ms=service["p95_ms"],
            **summarize(latencies),
        )
        logger.info(
            "latency %s parallel=%d requests=%d mean=%.2f ms service=%.2f ms",
            config.mode.value,
            level,
            len(latencies),
            report.rows[-1]["mean_ms"],
            service["mean_ms"],
        )

    cv = round(coefficient_of_variation(report.column("mean_ms")), 6)
    service_cv = round(coefficient_of_variation(report.column("service_mean_ms")), 6)
    for row in report.rows:
        row["cv_of_means"] = cv
        row["cv_of_service_means"] = service_cv
    report.summary["cv"] = {config.mode.value: cv}
    report.summary["cv_service"] = {config.mode.value: service_cv}
    return report


def _peak_rss_kb():
    if resource is None:
        return None
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss


def _profile_mode(config, mode):
    fixture = build_fixture(config, mode)
    ledger = fixture.ledger
    issues = issue_workload(fixture, config.operations, config.seed)
    verifies = verify_workload(fixture, issues)
    issue_ms, verify_ms = [], []
    committed, rejected = ledger.committed, ledger.rejected
    before = counters.snapshot()
    start = time.perf_counter()
    for batch, timings in ((issues, issue_ms), (verifies, verify_ms)):
        for tx in batch:
            began = time.perf_counter()
            ledger.submit(tx)
            timings.append((time.perf_counter() - began) * 1000.0)
    ledger.flush()
    wall = time.perf_counter() - start
    delta = _delta(before)
    return dict(
        mode=mode.value,
        operations=config.operations,
        committed=ledger.committed - committed,
        rejected=ledger.rejected - rejected,
        wall_s=round(wall, 4),
        mean_issue_ms=round(float(np.mean(issue_ms)), 4),
        mean_verify_ms=round(float(np.mean(verify_ms)), 4),
        peak_rss_kb=_peak_rss_kb(),
        ledger_digest=ledger.chain_digest(),
        **delta,
    )


def run_resource_profile(config: BenchConfig) -> BenchReport:
    """The same issue+verify workload in both modes, with counter ratios."""
    config = config.validate()
    report = BenchReport("resource", RESOURCE_COLUMNS)
    measured = {}
    for mode in (Mode.ENDORSEMENT, Mode.BASELINE):
        row = _profile_mode(config, mode)
        measured[mode] = row
        report.add(**row)
        logger.info(
            "resource %s: %d verifications, %d hashes, %.3f s",
            mode.value,
            row["signature_verifications"],
            row["hash_computations"],
            row["wall_s"],
        )
    ratios = []
    for name in RESOURCE_COUNTERS:
        endorsement = measured[Mode.ENDORSEMENT][name]
        baseline = measured[Mode.BASELINE][name]
        ratios.append(
            {
                "counter": name,
                "endorsement": endorsement,
                "baseline": baseline,
                "ratio": round(endorsement / baseline, 6) if baseline else None,
            }
        )
    report.summary["ratios"] = ratios
    return report


RUNNERS = {
    "throughput": run_issue_throughput,
    "latency": run_auth_latency,
    "resource": run_resource_profile,
}


def run_benchmark(kind, config: BenchConfig, compare=False) -> BenchReport:
    """Run one benchmark; ``compare`` runs throughput or latency in both modes."""
    try:
        runner = RUNNERS[kind]
    except KeyError as exc:
        raise InvalidConfig(f"unknown benchmark {kind!r}") from exc
    if not compare or kind == "resource":
        return runner(config)
    report = runner(replace(config, mode=Mode.ENDORSEMENT))
    return report.extend(runner(replace(config, mode=Mode.BASELINE)))


def write_report(report: BenchReport, out_dir):
    """CSV plus a chart for ``report``; returns the written paths."""
    from . import charts

    out_dir = Path(out_dir)
    paths = [report.write_csv(out_dir / f"{report.kind}.csv")]
    if report.kind == "resource":
        paths.append(
            report.write_csv(
                out_dir / "resource_ratio.csv",
                rows=report.summary["ratios"],
                columns=RATIO_COLUMNS,
            )
        )
    paths.append(charts.render(report, out_dir / f"{report.kind}.svg"))
    return paths
