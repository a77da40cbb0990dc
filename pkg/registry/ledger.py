"""
Verifiable data registry: signed transactions, hash-chained blocks and the
registry state they fold into.

Every transaction is validated by the handler for its kind against the live
state. Handlers check everything first and only then mutate, so a rejected
transaction leaves the state exactly as it was. Committed transactions wait in
a pending batch until the batch limit is reached or the batch is flushed.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, replace
from enum import Enum

from . import crypto
from .crypto import ZERO_DIGEST, Digest, Signature
from .exceptions import (
    IntegrityViolation,
    InvalidConfig,
    InvalidValue,
    RegistryError,
    RejectReason,
    TransactionRejected,
)
from .identity import (
    BINDS_CLAIM,
    DID,
    DeviceType,
    Endorsement,
    IdentityRecord,
    RevocationRecord,
    Role,
    VerifiableCredential,
    canonical_json,
    content_id,
    register_type,
    signing_payload,
    verify_signed,
)
from .trust import (
    DEFAULT_TAU,
    Threshold,
    TrustGraph,
    TrustPath,
    add_endorsement,
    check_linkage,
    designate_proxy,
    find_trust_linkage,
    register_principal,
    trust_score,
)

logger = logging.getLogger(__name__)

DEFAULT_BATCH_LIMIT = 16


class TxKind(str, Enum):
    REGISTER = "register"
    ENDORSE = "endorse"
    DESIGNATE = "designate"
    ONBOARD = "onboard"
    ISSUE = "issue"
    VERIFY = "verify"
    REVOKE = "revoke"
    TRANSFER = "transfer"


class Mode(str, Enum):
    ENDORSEMENT = "endorsement"
    BASELINE = "baseline"


class Status(str, Enum):
    ACTIVE = "active"
    REVOKED = "revoked"


class VerifyOutcome(str, Enum):
    VALID = "valid"
    UNKNOWN = "Unknown"
    BAD_SIGNATURE = "BadSignature"
    REVOKED = "Revoked"

    @property
    def valid(self):
        return self is VerifyOutcome.VALID

    def __str__(self):
        return self.value


# --------------------------------------------------------------------------
# payloads


@dataclass(frozen=True)
class ProxyDesignation:
    manufacturer: DID
    proxy: DID
    min_trust: float

    TYPE = "proxy_designation"

    def __post_init__(self):
        object.__setattr__(self, "min_trust", Threshold(self.min_trust).tau)

    def to_map(self):
        return {
            "type": self.TYPE,
            "manufacturer": str(self.manufacturer),
            "proxy": str(self.proxy),
            "min_trust": self.min_trust,
        }

    @classmethod
    def from_map(cls, data):
        return cls(
            manufacturer=DID.parse(data["manufacturer"]),
            proxy=DID.parse(data["proxy"]),
            min_trust=data["min_trust"],
        )


@dataclass(frozen=True)
class OnboardRequest:
    """Subject record plus the linkage it claims; the claimed score is ignored."""

    subject: IdentityRecord
    linkage: TrustPath

    TYPE = "onboard_request"

    def to_map(self):
        return {
            "type": self.TYPE,
            "subject": self.subject.to_map(),
            "linkage": self.linkage.to_map(),
        }

    @classmethod
    def from_map(cls, data):
        return cls(
            subject=IdentityRecord.from_map(data["subject"]),
            linkage=TrustPath.from_map(data["linkage"]),
        )


@dataclass(frozen=True)
class VerifyRequest:
    vc_id: str
    verifier: DID

    TYPE = "verify_request"

    def to_map(self):
        return {"type": self.TYPE, "vc_id": self.vc_id, "verifier": str(self.verifier)}

    @classmethod
    def from_map(cls, data):
        return cls(vc_id=str(data["vc_id"]), verifier=DID.parse(data["verifier"]))


@dataclass(frozen=True)
class OwnershipTransfer:
    device: DID
    new_owner: DID

    TYPE = "ownership_transfer"

    def to_map(self):
        return {
            "type": self.TYPE,
            "device": str(self.device),
            "new_owner": str(self.new_owner),
        }

    @classmethod
    def from_map(cls, data):
        return cls(
            device=DID.parse(data["device"]),
            new_owner=DID.parse(data["new_owner"]),
        )


PAYLOADS = {
    TxKind.REGISTER: IdentityRecord,
    TxKind.ENDORSE: Endorsement,
    TxKind.DESIGNATE: ProxyDesignation,
    TxKind.ONBOARD: OnboardRequest,
    TxKind.ISSUE: VerifiableCredential,
    TxKind.VERIFY: VerifyRequest,
    TxKind.REVOKE: RevocationRecord,
    TxKind.TRANSFER: OwnershipTransfer,
}


# --------------------------------------------------------------------------
# transactions and blocks


@register_type
@dataclass(frozen=True)
class Transaction:
    tx_id: str
    kind: TxKind
    payload: object
    timestamp: int
    submitter: DID
    signature: Signature | None = None

    TYPE = "transaction"

    def __post_init__(self):
        object.__setattr__(self, "kind", TxKind(self.kind))
        if not isinstance(self.payload, PAYLOADS[self.kind]):
            expected = PAYLOADS[self.kind].__name__
            raise InvalidValue(f"{self.kind.value} transactions carry a {expected}")
        if isinstance(self.timestamp, bool) or not isinstance(self.timestamp, int):
            raise InvalidValue("timestamp must be integer milliseconds")

    def to_map(self):
        data = {
            "type": self.TYPE,
            "tx_id": self.tx_id,
            "kind": self.kind.value,
            "payload": self.payload.to_map(),
            "timestamp": self.timestamp,
            "submitter": str(self.submitter),
        }
        if self.signature is not None:
            data["signature"] = self.signature.to_map()
        return data

    @classmethod
    def from_map(cls, data):
        kind = TxKind(data["kind"])
        signature = data.get("signature")
        return cls(
            tx_id=str(data["tx_id"]),
            kind=kind,
            payload=PAYLOADS[kind].from_map(data["payload"]),
            timestamp=data["timestamp"],
            submitter=DID.parse(data["submitter"]),
            signature=Signature.from_map(signature) if signature else None,
        )


def build_transaction(kind, payload, submitter_key, timestamp) -> Transaction:
    """Derive the tx_id from the payload and sign the whole envelope."""
    unsigned = Transaction(
        tx_id=content_id(payload.to_map()),
        kind=kind,
        payload=payload,
        timestamp=timestamp,
        submitter=DID.from_key(submitter_key),
    )
    signature = crypto.sign(signing_payload(unsigned), submitter_key.signing_key)
    return replace(unsigned, signature=signature)


def block_hash_of(height, prev_hash, transactions) -> Digest:
    return crypto.digest(
        canonical_json(
            {
                "height": height,
                "prev_hash": prev_hash.hex(),
                "transactions": [tx.to_map() for tx in transactions],
            }
        )
    )


@register_type
@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: Digest
    transactions: tuple
    block_hash: Digest

    TYPE = "block"

    @classmethod
    def seal(cls, height, prev_hash, transactions):
        transactions = tuple(transactions)
        return cls(
            height=height,
            prev_hash=prev_hash,
            transactions=transactions,
            block_hash=block_hash_of(height, prev_hash, transactions),
        )

    def recompute_hash(self):
        return block_hash_of(self.height, self.prev_hash, self.transactions)

    def to_map(self):
        return {
            "type": self.TYPE,
            "height": self.height,
            "prev_hash": self.prev_hash.hex(),
            "block_hash": self.block_hash.hex(),
            "transactions": [tx.to_map() for tx in self.transactions],
        }

    @classmethod
    def from_map(cls, data):
        return cls(
            height=data["height"],
            prev_hash=Digest.from_hex(data["prev_hash"]),
            transactions=tuple(Transaction.from_map(t) for t in data["transactions"]),
            block_hash=Digest.from_hex(data["block_hash"]),
        )


# --------------------------------------------------------------------------
# genesis and state


@register_type
@dataclass(frozen=True)
class Genesis:
    manufacturers: tuple
    tau: float = DEFAULT_TAU
    batch_limit: int = DEFAULT_BATCH_LIMIT
    mode: Mode = Mode.ENDORSEMENT

    TYPE = "genesis"

    def __post_init__(self):
        manufacturers = tuple(self.manufacturers)
        object.__setattr__(self, "manufacturers", manufacturers)
        try:
            object.__setattr__(self, "tau", Threshold(self.tau).tau)
            object.__setattr__(self, "mode", Mode(self.mode))
        except (InvalidValue, ValueError) as exc:
            raise InvalidConfig(str(exc)) from exc
        if isinstance(self.batch_limit, bool) or not isinstance(self.batch_limit, int):
            raise InvalidConfig("batch limit must be an integer")
        if self.batch_limit < 1:
            raise InvalidConfig("batch limit must be at least 1")
        if not manufacturers:
            raise InvalidConfig("genesis lists at least one manufacturer")
        if len({record.did for record in manufacturers}) != len(manufacturers):
            raise InvalidConfig("duplicate manufacturer in genesis")
        for record in manufacturers:
            if record.role is not Role.MANUFACTURER or not record.self_certifying:
                raise InvalidConfig(f"{record.did} is not a self-certifying manufacturer")

    @property
    def threshold(self):
        return Threshold(self.tau)

    def to_map(self):
        return {
            "type": self.TYPE,
            "manufacturers": [record.to_map() for record in self.manufacturers],
            "tau": self.tau,
            "batch_limit": self.batch_limit,
            "mode": self.mode.value,
        }

    @classmethod
    def from_map(cls, data):
        return cls(
            manufacturers=tuple(IdentityRecord.from_map(m) for m in data["manufacturers"]),
            tau=data.get("tau", DEFAULT_TAU),
            batch_limit=data.get("batch_limit", DEFAULT_BATCH_LIMIT),
            mode=data.get("mode", Mode.ENDORSEMENT.value),
        )


@dataclass(frozen=True)
class CredentialRecord:
    credential: VerifiableCredential
    status: Status = Status.ACTIVE
    revocation: RevocationRecord | None = None

    def to_map(self):
        return {
            "credential": self.credential.to_map(),
            "status": self.status.value,
            "revocation": self.revocation.to_map() if self.revocation else None,
        }


@dataclass(frozen=True)
class VerificationEvent:
    vc_id: str
    verifier: DID
    timestamp: int
    outcome: VerifyOutcome

    def to_map(self):
        return {
            "vc_id": self.vc_id,
            "verifier": str(self.verifier),
            "timestamp": self.timestamp,
            "outcome": self.outcome.value,
        }


class _KeyView:
    def __init__(self, identities):
        self._identities = identities

    def get(self, did):
        record = self._identities.get(did)
        return record.verification_key if record is not None else None


class LedgerState:
    """Materialized registry state; only ever mutated by the ledger's writer."""

    def __init__(self, genesis: Genesis):
        self.genesis = genesis
        self.identities = {record.did: record for record in genesis.manufacturers}
        self.onboarded_issuers = {}
        self.credentials = {}
        self.graph = TrustGraph.with_roots(self.identities)
        self.verification_log = []
        # holder DID -> vc_ids held, in issue order
        self.holdings = {}
        # weak device DID -> vc_ids of binding credentials naming it
        self.bindings = {}
        # envelope ids of every committed transaction
        self.committed_envelopes = set()
        # transferred device DID -> new owner, until the new owner reissues
        self.awaiting_reissue = {}

    @classmethod
    def from_genesis(cls, genesis):
        return cls(genesis)

    @property
    def mode(self):
        return self.genesis.mode

    @property
    def threshold(self):
        return self.genesis.threshold

    @property
    def keys(self):
        return _KeyView(self.identities)

    def copy(self):
        clone = LedgerState.__new__(LedgerState)
        clone.genesis = self.genesis
        clone.identities = dict(self.identities)
        clone.onboarded_issuers = dict(self.onboarded_issuers)
        clone.credentials = dict(self.credentials)
        clone.graph = self.graph
        clone.verification_log = list(self.verification_log)
        clone.holdings = {did: list(ids) for did, ids in self.holdings.items()}
        clone.bindings = {did: list(ids) for did, ids in self.bindings.items()}
        clone.committed_envelopes = set(self.committed_envelopes)
        clone.awaiting_reissue = dict(self.awaiting_reissue)
        return clone

    def is_manufacturer(self, did):
        record = self.identities.get(did)
        return record is not None and record.role is Role.MANUFACTURER

    def check_credential(self, vc_id) -> VerifyOutcome:
        entry = self.credentials.get(vc_id)
        if entry is None:
            return VerifyOutcome.UNKNOWN
        issuer = self.identities.get(entry.credential.issuer)
        if issuer is None or not verify_signed(entry.credential, issuer.verification_key):
            return VerifyOutcome.BAD_SIGNATURE
        if entry.status is Status.REVOKED:
            return VerifyOutcome.REVOKED
        return VerifyOutcome.VALID

    def active_credentials(self, holder):
        return [
            self.credentials[vc_id]
            for vc_id in self.holdings.get(holder, ())
            if self.credentials[vc_id].status is Status.ACTIVE
        ]

    def active_binding(self, strong, weak):
        """The committed, unrevoked binding of ``weak`` to ``strong``, if any."""
        for vc_id in self.bindings.get(weak, ()):
            entry = self.credentials[vc_id]
            if entry.status is Status.ACTIVE and entry.credential.holder == strong:
                return entry
        return None

    def to_map(self):
        return {
            "type": "ledger_state",
            "genesis": self.genesis.to_map(),
            "identities": [self.identities[did].to_map() for did in sorted(self.identities)],
            "onboarded": {
                str(did): score.value
                for did, score in sorted(self.onboarded_issuers.items())
            },
            "credentials": [self.credentials[k].to_map() for k in sorted(self.credentials)],
            "trust_graph": self.graph.to_map(),
            "verification_log": [event.to_map() for event in self.verification_log],
        }

    def digest(self):
        return crypto.digest(canonical_json(self.to_map()))


# --------------------------------------------------------------------------
# validators


def _reject(reason, message=""):
    raise TransactionRejected(reason, message)


def _require_endorsement_mode(state):
    if state.mode is Mode.BASELINE:
        _reject(RejectReason.ENDORSEMENT_DISABLED, "baseline ledgers keep no web of trust")


def apply_register(state, record: IdentityRecord, submitter, timestamp=0):
    if record.did in state.identities:
        _reject(RejectReason.ALREADY_REGISTERED, f"{record.did} is already registered")
    if not record.self_certifying:
        _reject(RejectReason.INVALID_RECORD, "DID does not match the verification key")
    if record.role is Role.MANUFACTURER:
        _reject(RejectReason.NOT_AUTHORIZED, "manufacturers only come from genesis")
    if record.role is Role.USER and submitter != record.did:
        _reject(RejectReason.NOT_AUTHORIZED, "users register themselves")
    if record.role is Role.DEVICE:
        owner = state.identities.get(record.owner)
        if owner is None or owner.role is Role.DEVICE:
            _reject(RejectReason.UNKNOWN_PRINCIPAL, f"owner {record.owner} is not registered")
        if submitter != record.owner:
            _reject(RejectReason.NOT_AUTHORIZED, "devices are registered by their owner")
    state.identities[record.did] = record
    if record.role is Role.USER:
        state.graph = register_principal(state.graph, record.did, record.role)


def apply_endorse(state, endorsement: Endorsement, submitter, timestamp=0):
    _require_endorsement_mode(state)
    if submitter != endorsement.endorser:
        _reject(RejectReason.NOT_AUTHORIZED, "endorsements are submitted by the endorser")
    endorser = endorsement.endorser
    if not state.is_manufacturer(endorser) and endorser not in state.onboarded_issuers:
        _reject(RejectReason.NOT_ONBOARDED, f"{endorser} is not an onboarded issuer")
    current = state.graph.edge(endorser, endorsement.subject)
    if current is not None and endorsement.endorsed_at <= current.endorsed_at:
        _reject(RejectReason.STALE_ENDORSEMENT, "a newer endorsement is already recorded")
    try:
        state.graph = add_endorsement(
            state.graph, endorsement, state.keys.get(endorser)
        )
    except RegistryError as exc:
        _reject(exc.reason or RejectReason.INVALID_ENDORSEMENT, str(exc))


def apply_designate(state, designation: ProxyDesignation, submitter, timestamp=0):
    _require_endorsement_mode(state)
    if submitter != designation.manufacturer:
        _reject(RejectReason.NOT_AUTHORIZED, "proxies are designated by a manufacturer")
    try:
        state.graph = designate_proxy(
            state.graph,
            designation.manufacturer,
            designation.proxy,
            Threshold(designation.min_trust),
        )
    except RegistryError as exc:
        _reject(exc.reason, str(exc))


def apply_onboard(state, request: OnboardRequest, submitter, timestamp=0):
    _require_endorsement_mode(state)
    subject = request.subject
    if submitter != subject.did:
        _reject(RejectReason.NOT_AUTHORIZED, "issuers onboard themselves")
    if state.identities.get(subject.did) != subject:
        _reject(RejectReason.UNKNOWN_PRINCIPAL, f"{subject.did} is not registered as given")
    if subject.did in state.onboarded_issuers or subject.role is Role.MANUFACTURER:
        _reject(RejectReason.ALREADY_ONBOARDED, f"{subject.did} is already an issuer")
    if subject.role is not Role.USER:
        _reject(RejectReason.NOT_AUTHORIZED, "only users onboard as issuers")
    if request.linkage.subject != subject.did:
        _reject(RejectReason.LINKAGE_NOT_VERIFIABLE, "linkage ends at another principal")
    if check_linkage(state.graph, request.linkage, state.keys) is None:
        _reject(RejectReason.LINKAGE_NOT_VERIFIABLE, "linkage edges do not hold on the ledger")
    score = trust_score(state.graph, subject.did)
    if score.value < state.threshold.tau:
        _reject(
            RejectReason.BELOW_THRESHOLD,
            f"score {score.value:.4f} below tau {state.threshold.tau:.4f}",
        )
    state.onboarded_issuers[subject.did] = score


def _linkage_holds(state, issuer):
    checks = state.graph.evaluator.linkage_checks
    if issuer not in checks:
        try:
            path = find_trust_linkage(state.graph, issuer)
        except RegistryError:
            checks[issuer] = False
        else:
            checks[issuer] = check_linkage(state.graph, path, state.keys) is not None
    return checks[issuer]


def _check_issuer(state, issuer):
    if state.mode is Mode.BASELINE:
        if not state.is_manufacturer(issuer):
            _reject(RejectReason.NOT_A_MANUFACTURER, "baseline ledgers only let manufacturers issue")
        return
    if state.is_manufacturer(issuer):
        return
    if issuer not in state.onboarded_issuers:
        _reject(RejectReason.NOT_ONBOARDED, f"{issuer} is not an onboarded issuer")
    score = trust_score(state.graph, issuer)
    if score.value < state.threshold.tau:
        _reject(
            RejectReason.TRUST_BELOW_THRESHOLD,
            f"issuer score {score.value:.4f} below tau {state.threshold.tau:.4f}",
        )
    if not _linkage_holds(state, issuer):
        _reject(RejectReason.LINKAGE_NOT_VERIFIABLE, "issuer linkage no longer verifies")


def _check_binding(state, credential):
    weak_did = credential.claim_map.get(BINDS_CLAIM)
    if weak_did is None:
        return None
    try:
        weak = state.identities.get(DID.parse(weak_did))
    except InvalidValue:
        weak = None
    strong = state.identities.get(credential.holder)
    if (
        weak is None
        or strong is None
        or strong.device_type is not DeviceType.STRONG
        or weak.device_type is not DeviceType.WEAK
    ):
        _reject(RejectReason.MALFORMED_CREDENTIAL, "bindings pair a strong and a weak device")
    if strong.owner != credential.issuer or weak.owner != credential.issuer:
        _reject(RejectReason.NOT_OWNER, "only the owner of both devices binds them")
    return weak.did


def apply_issue(state, credential: VerifiableCredential, submitter, timestamp=0):
    if credential.signature is None or credential.vc_id != credential.derived_id():
        _reject(RejectReason.MALFORMED_CREDENTIAL, "credential is unsigned or mislabelled")
    if submitter != credential.issuer:
        _reject(RejectReason.NOT_AUTHORIZED, "credentials are submitted by their issuer")
    _check_issuer(state, credential.issuer)
    if credential.holder not in state.identities:
        _reject(RejectReason.UNKNOWN_HOLDER, f"{credential.holder} is not registered")
    if credential.vc_id in state.credentials:
        _reject(RejectReason.DUPLICATE_CREDENTIAL, f"{credential.vc_id} already issued")
    awaited = state.awaiting_reissue.get(credential.holder)
    if awaited is not None and awaited != credential.issuer:
        _reject(RejectReason.NOT_OWNER, f"{credential.holder} awaits a credential from {awaited}")
    if not verify_signed(credential, state.keys.get(credential.issuer)):
        _reject(RejectReason.BAD_SIGNATURE, "credential signature does not verify")
    weak = _check_binding(state, credential)
    state.credentials[credential.vc_id] = CredentialRecord(credential)
    state.holdings.setdefault(credential.holder, []).append(credential.vc_id)
    if weak is not None:
        state.bindings.setdefault(weak, []).append(credential.vc_id)
    if awaited is not None:
        del state.awaiting_reissue[credential.holder]


def apply_verify(state, request: VerifyRequest, submitter, timestamp=0) -> VerifyOutcome:
    if submitter != request.verifier:
        _reject(RejectReason.NOT_AUTHORIZED, "verifications are submitted by the verifier")
    outcome = state.check_credential(request.vc_id)
    state.verification_log.append(
        VerificationEvent(request.vc_id, request.verifier, timestamp, outcome)
    )
    return outcome


def apply_revoke(state, record: RevocationRecord, submitter, timestamp=0):
    if submitter != record.revoker:
        _reject(RejectReason.NOT_AUTHORIZED, "revocations are submitted by the revoker")
    entry = state.credentials.get(record.vc_id)
    if entry is None:
        _reject(RejectReason.UNKNOWN_CREDENTIAL, f"{record.vc_id} was never issued")
    credential = entry.credential
    holder = state.identities.get(credential.holder)
    owner = holder.owner if holder is not None else None
    if record.revoker not in (credential.issuer, owner):
        _reject(RejectReason.NOT_AUTHORIZED, "only the issuer or the device owner revokes")
    if entry.status is Status.REVOKED:
        _reject(RejectReason.ALREADY_REVOKED, f"{record.vc_id} is already revoked")
    state.credentials[record.vc_id] = replace(
        entry, status=Status.REVOKED, revocation=record
    )


def apply_transfer(state, transfer: OwnershipTransfer, submitter, timestamp=0):
    device = state.identities.get(transfer.device)
    if device is None or device.role is not Role.DEVICE:
        _reject(RejectReason.UNKNOWN_PRINCIPAL, f"{transfer.device} is not a device")
    new_owner = state.identities.get(transfer.new_owner)
    if new_owner is None or new_owner.role is Role.DEVICE:
        _reject(RejectReason.UNKNOWN_PRINCIPAL, f"{transfer.new_owner} cannot own devices")
    if submitter != device.owner:
        _reject(RejectReason.NOT_OWNER, f"{submitter} does not own {device.did}")
    if device.did in state.awaiting_reissue:
        _reject(RejectReason.INCOMPLETE_TRANSFER, f"{device.did} is already changing hands")
    if state.active_credentials(device.did) or any(
        state.credentials[vc_id].status is Status.ACTIVE
        for vc_id in state.bindings.get(device.did, ())
    ):
        _reject(
            RejectReason.INCOMPLETE_TRANSFER,
            f"{device.did} still holds active credentials of its old owner",
        )
    state.identities[device.did] = replace(device, owner=new_owner.did)
    state.awaiting_reissue[device.did] = new_owner.did


HANDLERS = {
    TxKind.REGISTER: apply_register,
    TxKind.ENDORSE: apply_endorse,
    TxKind.DESIGNATE: apply_designate,
    TxKind.ONBOARD: apply_onboard,
    TxKind.ISSUE: apply_issue,
    TxKind.VERIFY: apply_verify,
    TxKind.REVOKE: apply_revoke,
    TxKind.TRANSFER: apply_transfer,
}


@dataclass(frozen=True)
class Receipt:
    tx_id: str
    kind: TxKind
    committed: bool
    reason: RejectReason | None = None
    message: str = ""
    outcome: VerifyOutcome | None = None

    @property
    def status(self):
        return "committed" if self.committed else "rejected"

    def to_map(self):
        data = {"tx_id": self.tx_id, "kind": self.kind.value, "status": self.status}
        if self.reason is not None:
            data["reason"] = self.reason.value
            data["message"] = self.message
        if self.outcome is not None:
            data["outcome"] = self.outcome.value
        return data


def _submitter_key(state, tx):
    key = state.keys.get(tx.submitter)
    if key is None and tx.kind is TxKind.REGISTER and tx.payload.did == tx.submitter:
        key = tx.payload.verification_key
    return key


def envelope_id(tx) -> str:
    """Identifier of a signed envelope; repeats of it are replays."""
    data = tx.to_map()
    data.pop("signature", None)
    return content_id(data)


def apply_transaction(state, tx: Transaction) -> Receipt:
    """Validate ``tx`` against ``state`` and apply it when it is admitted."""
    try:
        if tx.signature is None or tx.tx_id != content_id(tx.payload.to_map()):
            _reject(RejectReason.MALFORMED_TRANSACTION, "tx_id does not match the payload")
        envelope = envelope_id(tx)
        if envelope in state.committed_envelopes:
            _reject(RejectReason.DUPLICATE_TRANSACTION, f"{tx.tx_id} was already committed")
        key = _submitter_key(state, tx)
        if key is None:
            _reject(RejectReason.UNKNOWN_SUBMITTER, f"{tx.submitter} is not registered")
        if not crypto.verify_signature(signing_payload(tx), tx.signature, key):
            _reject(RejectReason.BAD_SIGNATURE, "transaction signature does not verify")
        outcome = HANDLERS[tx.kind](state, tx.payload, tx.submitter, tx.timestamp)
    except TransactionRejected as exc:
        return Receipt(tx.tx_id, tx.kind, False, exc.reason, str(exc))
    state.committed_envelopes.add(envelope)
    return Receipt(tx.tx_id, tx.kind, True, outcome=outcome)


# --------------------------------------------------------------------------
# chain checks and replay


@dataclass(frozen=True)
class IntegrityReport:
    intact: bool
    height: int | None = None
    detail: str = ""

    def __str__(self):
        return "intact" if self.intact else f"broken({self.height})"


def verify_chain_integrity(chain) -> IntegrityReport:
    expected_prev = ZERO_DIGEST
    for index, block in enumerate(chain):
        if block.height != index:
            return IntegrityReport(False, index, "height out of sequence")
        if block.prev_hash != expected_prev:
            return IntegrityReport(False, index, "prev_hash does not link")
        if not block.transactions:
            return IntegrityReport(False, index, "empty block")
        if block.recompute_hash() != block.block_hash:
            return IntegrityReport(False, index, "block_hash does not recompute")
        expected_prev = block.block_hash
    return IntegrityReport(True)


def iter_replay(chain, state: LedgerState):
    """Walk the log, yielding ``(height, tx, state)`` before each transaction.

    The transaction is applied to ``state`` when the generator is resumed; a
    committed transaction that no longer applies is an IntegrityViolation.
    """
    report = verify_chain_integrity(chain)
    if not report.intact:
        logger.error("chain broken at height %s: %s", report.height, report.detail)
        raise IntegrityViolation(report.detail, height=report.height)
    for block in chain:
        for tx in block.transactions:
            yield block.height, tx, state
            receipt = apply_transaction(state, tx)
            if not receipt.committed:
                logger.error(
                    "logged tx %s no longer applies: %s", tx.tx_id, receipt.reason
                )
                raise IntegrityViolation(
                    f"tx {tx.tx_id} does not replay: {receipt.reason}",
                    height=block.height,
                )


def replay(chain, genesis: Genesis) -> LedgerState:
    state = LedgerState(genesis)
    for _ in iter_replay(chain, state):
        pass
    return state


@dataclass(frozen=True)
class IssuanceFinding:
    height: int
    tx_id: str
    issuer: DID
    score: float


def audit_issuance(chain, genesis: Genesis):
    """Committed issues whose issuer lacked authority when the issue applied."""
    findings = []
    state = LedgerState(genesis)
    for height, tx, current in iter_replay(chain, state):
        if tx.kind is not TxKind.ISSUE:
            continue
        issuer = tx.payload.issuer
        if current.is_manufacturer(issuer):
            continue
        score = trust_score(current.graph, issuer).value
        if (
            current.mode is Mode.BASELINE
            or issuer not in current.onboarded_issuers
            or score < current.threshold.tau
        ):
            findings.append(IssuanceFinding(height, tx.tx_id, issuer, score))
    return findings


# --------------------------------------------------------------------------
# the single writer


class Ledger:
    """Single-writer ledger over a genesis, with optional block persistence.

    ``store`` only needs an ``append(block)`` method; ``on_seal`` callbacks run
    after every sealed block, once the writer lock is released. A failing
    callback is logged and never undoes a commit.
    """

    def __init__(self, genesis: Genesis, chain=None, state=None, store=None):
        self.genesis = genesis
        self.chain = list(chain or ())
        self.state = state if state is not None else LedgerState(genesis)
        self.pending = []
        self.store = store
        self.on_seal = []
        self.committed = 0
        self.rejected = 0
        self._lock = threading.RLock()

    @property
    def batch_limit(self):
        return self.genesis.batch_limit

    @property
    def head(self) -> Digest:
        return self.chain[-1].block_hash if self.chain else ZERO_DIGEST

    def _record(self, tx, receipt):
        if receipt.committed:
            self.committed += 1
            logger.debug("committed %s %s", tx.kind.value, tx.tx_id)
        else:
            self.rejected += 1
            logger.warning(
                "rejected %s %s: %s", tx.kind.value, tx.tx_id, receipt.reason
            )

    def submit(self, tx: Transaction) -> Receipt:
        sealed = []
        with self._lock:
            if tx.kind is TxKind.TRANSFER:
                receipt = Receipt(
                    tx.tx_id,
                    tx.kind,
                    False,
                    RejectReason.INCOMPLETE_TRANSFER,
                    "transfers commit only in a group with the new owner's reissue",
                )
            else:
                receipt = apply_transaction(self.state, tx)
            self._record(tx, receipt)
            if receipt.committed:
                self.pending.append(tx)
                sealed = self._seal_full()
        self._notify(sealed)
        return receipt

    def submit_atomic(self, transactions):
        """Commit every transaction of the group or none of them.

        Returns the receipts; on failure the last receipt is the rejected one
        and the live state is untouched. A group that transfers a device must
        also carry the new owner's reissue.
        """
        transactions = list(transactions)
        sealed = []
        with self._lock:
            scratch = self.state.copy()
            receipts = []
            for tx in transactions:
                receipt = apply_transaction(scratch, tx)
                receipts.append(receipt)
                if not receipt.committed:
                    self._record(tx, receipt)
                    return receipts
            if scratch.awaiting_reissue:
                transfer = next(tx for tx in transactions if tx.kind is TxKind.TRANSFER)
                receipt = Receipt(
                    transfer.tx_id,
                    transfer.kind,
                    False,
                    RejectReason.INCOMPLETE_TRANSFER,
                    "the new owner does not reissue in the same group",
                )
                receipts.append(receipt)
                self._record(transfer, receipt)
                return receipts
            if self.pending and len(self.pending) + len(transactions) > self.batch_limit:
                sealed.append(self._seal())
            self.state = scratch
            for tx, receipt in zip(transactions, receipts):
                self._record(tx, receipt)
            self.pending.extend(transactions)
            sealed.extend(self._seal_full())
        self._notify(sealed)
        return receipts

    def _seal_full(self):
        sealed = []
        while len(self.pending) >= self.batch_limit:
            sealed.append(self._seal())
        return sealed

    def _seal(self):
        transactions = self.pending[: self.batch_limit]
        block = Block.seal(len(self.chain), self.head, transactions)
        if self.store is not None:
            self.store.append(block)
        self.chain.append(block)
        self.pending = self.pending[len(transactions) :]
        logger.info(
            "sealed block %d with %d transactions", block.height, len(block.transactions)
        )
        return block

    def _notify(self, blocks):
        for block in blocks:
            for callback in list(self.on_seal):
                try:
                    callback(block)
                except Exception:
                    logger.exception("seal callback failed for block %d", block.height)

    def flush(self):
        with self._lock:
            block = self._seal() if self.pending else None
        if block is not None:
            self._notify([block])
        return block

    def query(self, vc_id) -> VerifyOutcome:
        """Unlogged status check against the last committed state."""
        return self.state.check_credential(vc_id)

    def state_digest(self) -> str:
        with self._lock:
            return self.state.digest().hex()

    def chain_digest(self) -> str:
        with self._lock:
            return self.head.hex()
