"""
Files behind a node: the line-delimited ledger, the genesis file and the
keystore directory.
"""

from __future__ import annotations

import json
import logging
import os
import re
from dataclasses import dataclass
from pathlib import Path

from . import crypto
from .crypto import KeyPair
from .exceptions import IntegrityViolation, InvalidConfig, InvalidKey, InvalidValue
from .identity import FORMAT_VERSION, DID, canonical_json, canonical_serialize, parse
from .ledger import Block, Genesis, IntegrityReport, Ledger, replay, verify_chain_integrity

logger = logging.getLogger(__name__)

HEADER_TYPE = "ledger_header"
LEDGER_VERSION = 1

_NAME = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.-]*$")


def genesis_hash(genesis: Genesis) -> str:
    return crypto.digest(canonical_json(genesis.to_map())).hex()


def header_line(genesis: Genesis) -> bytes:
    return canonical_json(
        {
            "fmt": FORMAT_VERSION,
            "type": HEADER_TYPE,
            "version": LEDGER_VERSION,
            "genesis": genesis.to_map(),
            "genesis_hash": genesis_hash(genesis),
        }
    )


def _read_header(line: bytes) -> Genesis:
    try:
        data = json.loads(line)
        if data.get("type") != HEADER_TYPE or data.get("version") != LEDGER_VERSION:
            raise InvalidValue("unsupported ledger header")
        genesis = Genesis.from_map(data["genesis"])
    except (ValueError, KeyError, TypeError, AttributeError, InvalidValue, InvalidConfig) as exc:
        raise IntegrityViolation(f"unreadable ledger header: {exc}", height=0) from exc
    if header_line(genesis) != line:
        raise IntegrityViolation("ledger header is not canonical or its hash mismatches", height=0)
    return genesis


@dataclass(frozen=True)
class LedgerAudit:
    report: IntegrityReport
    genesis: Genesis | None
    chain: tuple

    @property
    def intact(self):
        return self.report.intact


class LedgerFile:
    """Append-only ledger file: a versioned header line, then one block per line."""

    def __init__(self, path):
        self.path = Path(path)

    def exists(self):
        return self.path.exists()

    def create(self, genesis: Genesis, overwrite=False):
        if self.path.exists() and not overwrite:
            raise InvalidConfig(f"{self.path} already exists")
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_bytes(header_line(genesis) + b"\n")
        logger.info("created ledger %s", self.path)

    def append(self, block: Block):
        with self.path.open("ab") as handle:
            handle.write(canonical_serialize(block) + b"\n")
            handle.flush()
            os.fsync(handle.fileno())

    def audit(self) -> LedgerAudit:
        """Check every raw line against its canonical form, then the hash chain."""
        try:
            raw = self.path.read_bytes()
        except FileNotFoundError as exc:
            raise InvalidConfig(f"no ledger at {self.path}") from exc
        lines = raw.split(b"\n")
        unterminated = lines.pop()
        try:
            genesis = _read_header(lines[0] if lines else unterminated)
        except IntegrityViolation as exc:
            return LedgerAudit(IntegrityReport(False, 0, str(exc)), None, ())
        if not lines:
            return LedgerAudit(IntegrityReport(False, 0, "unterminated header"), genesis, ())

        blocks = []
        failure = None
        for height, line in enumerate(lines[1:]):
            try:
                block = parse(line)
                if not isinstance(block, Block):
                    raise InvalidValue("line is not a block")
                if canonical_serialize(block) != line:
                    raise InvalidValue("line is not in canonical form")
                if len(block.transactions) > genesis.batch_limit:
                    raise InvalidValue("block exceeds the batch limit")
            except (InvalidValue, InvalidConfig) as exc:
                failure = IntegrityReport(False, height, str(exc))
                break
            blocks.append(block)
        else:
            if unterminated:
                failure = IntegrityReport(False, len(blocks), "unterminated final line")

        report = verify_chain_integrity(blocks)
        if report.intact and failure is not None:
            report = failure
        if not report.intact:
            logger.error("ledger %s broken at height %s: %s", self.path, report.height, report.detail)
            blocks = blocks[: report.height]
        return LedgerAudit(report, genesis, tuple(blocks))

    def read(self):
        """``(genesis, chain)`` of an intact file; IntegrityViolation otherwise."""
        audit = self.audit()
        if not audit.intact:
            raise IntegrityViolation(audit.report.detail, height=audit.report.height)
        return audit.genesis, list(audit.chain)


def create_ledger(path, genesis: Genesis, overwrite=False) -> Ledger:
    store = LedgerFile(path)
    store.create(genesis, overwrite=overwrite)
    return Ledger(genesis, store=store)


def open_ledger(path) -> Ledger:
    """Rebuild a live ledger from its file by replaying every block."""
    store = LedgerFile(path)
    genesis, chain = store.read()
    state = replay(chain, genesis)
    return Ledger(genesis, chain=chain, state=state, store=store)


def load_genesis(path) -> Genesis:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return Genesis.from_map(data)
    except FileNotFoundError as exc:
        raise InvalidConfig(f"no genesis file at {path}") from exc
    except (ValueError, KeyError, TypeError, AttributeError, InvalidValue) as exc:
        raise InvalidConfig(f"malformed genesis file {path}: {exc}") from exc


def save_genesis(path, genesis: Genesis):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = {"fmt": FORMAT_VERSION, **genesis.to_map()}
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


class Keystore:
    """Directory of named keypairs, one JSON file per principal."""

    def __init__(self, directory):
        self.directory = Path(directory)

    def path_for(self, name):
        if not _NAME.match(name or ""):
            raise InvalidKey(f"invalid key name {name!r}")
        return self.directory / f"{name}.json"

    def save(self, name, keypair: KeyPair, overwrite=False):
        path = self.path_for(name)
        if path.exists() and not overwrite:
            raise InvalidKey(f"a key named {name!r} already exists")
        self.directory.mkdir(parents=True, exist_ok=True)
        data = {"fmt": FORMAT_VERSION, "type": "keypair", "name": name, **keypair.to_map()}
        path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        os.chmod(path, 0o600)
        return path

    def load(self, name) -> KeyPair:
        path = self.path_for(name)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise InvalidKey(f"no key named {name!r} in {self.directory}") from exc
        except ValueError as exc:
            raise InvalidKey(f"unreadable key file {path}") from exc
        return KeyPair.from_map(data)

    def did(self, name) -> DID:
        return DID.from_key(self.load(name))

    def names(self):
        if not self.directory.exists():
            return []
        return sorted(path.stem for path in self.directory.glob("*.json"))
