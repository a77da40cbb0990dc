"""
Application-layer flows over a ledger: issuer onboarding, device credentials,
challenge-response authentication, weak-device binding and delegation,
ownership transfer and revocation.
"""

from __future__ import annotations

import logging
import secrets
import threading
import time
from dataclasses import dataclass
from enum import Enum

from . import crypto
from .crypto import KeyPair, Signature
from .exceptions import (
    InvalidConfig,
    InvalidKey,
    InvalidValue,
    NewOwnerNotOnboarded,
    NoTrustLinkage,
    NotOwner,
    TransactionRejected,
    TypeMismatch,
    UnknownPrincipal,
)
from .identity import (
    BINDS_CLAIM,
    DID,
    HOLDER_CLAIM,
    Claim,
    DeviceType,
    IdentityRecord,
    Rationale,
    RationaleKind,
    RevocationRecord,
    Role,
    canonical_json,
    new_credential,
    new_endorsement,
)
from .ledger import (
    Mode,
    OnboardRequest,
    OwnershipTransfer,
    ProxyDesignation,
    Status,
    TxKind,
    VerifyRequest,
    build_transaction,
)
from .trust import find_trust_linkage, is_onboardable

logger = logging.getLogger(__name__)

DEFAULT_EXPIRY_MS = 30_000
NONCE_SIZE = 32
OWNER_CLAIM = "owner"
_PRUNE_ABOVE = 4096


class SystemClock:
    """Wall-clock milliseconds; readings never repeat within one process."""

    def __init__(self):
        self._last = 0
        self._lock = threading.Lock()

    def now(self):
        with self._lock:
            self._last = max(int(time.time() * 1000), self._last + 1)
            return self._last


class LogicalClock:
    """Deterministic millisecond clock: every reading advances it by ``step``."""

    def __init__(self, start=1_000, step=1):
        self._value = start
        self._step = step
        self._lock = threading.Lock()

    def now(self):
        with self._lock:
            value = self._value
            self._value += self._step
            return value

    def advance(self, ms):
        with self._lock:
            self._value += ms


class AuthReject(str, Enum):
    EXPIRED = "Expired"
    BAD_NONCE_SIGNATURE = "BadNonceSignature"
    HOLDER_MISMATCH = "HolderMismatch"
    CREDENTIAL_INVALID = "CredentialInvalid"
    UNBOUND_DEVICE = "UnboundDevice"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class AuthResult:
    accepted: bool
    reason: AuthReject | None = None

    def __bool__(self):
        return self.accepted

    def __str__(self):
        return "accept" if self.accepted else f"reject({self.reason})"


ACCEPT = AuthResult(True)


def _reject(reason):
    return AuthResult(False, reason)


@dataclass(frozen=True)
class AuthenticationChallenge:
    nonce: bytes
    verifier: DID
    issued_at: int
    expiry_ms: int = DEFAULT_EXPIRY_MS

    def __post_init__(self):
        if len(self.nonce) != NONCE_SIZE:
            raise InvalidValue("nonce must be 32 bytes")
        if self.expiry_ms <= 0:
            raise InvalidValue("expiry_ms must be positive")

    def message(self) -> bytes:
        return canonical_json(
            {
                "type": "auth_challenge",
                "nonce": self.nonce.hex(),
                "verifier": str(self.verifier),
                "issued_at": self.issued_at,
                "expiry_ms": self.expiry_ms,
            }
        )


@dataclass(frozen=True)
class AuthResponse:
    responder: DID
    signature: Signature


@dataclass(frozen=True)
class DeviceBinding:
    strong: DID
    weak: DID
    owner: DID
    bound_at: int
    signature: Signature
    credential_id: str

    def to_map(self):
        return {
            "strong": str(self.strong),
            "weak": str(self.weak),
            "owner": str(self.owner),
            "bound_at": self.bound_at,
            "signature": self.signature.to_map(),
            "credential_id": self.credential_id,
        }


class Node:
    """A registry node: the flows every principal runs against one ledger.

    All mutation goes through the ledger's single writer. Challenge
    bookkeeping is guarded by its own lock, so authentications against
    distinct nonces run concurrently.
    """

    def __init__(self, ledger, clock=None, expiry_ms=DEFAULT_EXPIRY_MS):
        if expiry_ms <= 0:
            raise InvalidConfig("challenge expiry must be positive")
        self.ledger = ledger
        self.clock = clock or SystemClock()
        self.expiry_ms = expiry_ms
        self._challenges = {}
        self._lock = threading.Lock()

    @property
    def state(self):
        return self.ledger.state

    # -- plumbing ---------------------------------------------------------

    def transaction(self, kind, payload, key):
        return build_transaction(kind, payload, key, self.clock.now())

    def submit(self, tx):
        receipt = self.ledger.submit(tx)
        if not receipt.committed:
            raise TransactionRejected(receipt.reason, receipt.message)
        return receipt

    def record(self, did) -> IdentityRecord:
        record = self.state.identities.get(did)
        if record is None:
            raise UnknownPrincipal(f"{did} is not registered")
        return record

    # -- registry maintenance -------------------------------------------

    def register_user(self, user_key: KeyPair) -> IdentityRecord:
        record = IdentityRecord.for_key(user_key, Role.USER)
        self.submit(self.transaction(TxKind.REGISTER, record, user_key))
        return record

    def register_device(self, owner_key: KeyPair, device_key: KeyPair, device_type):
        record = IdentityRecord.for_key(
            device_key,
            Role.DEVICE,
            device_type=DeviceType(device_type),
            owner=DID.from_key(owner_key),
        )
        self.submit(self.transaction(TxKind.REGISTER, record, owner_key))
        return record

    def endorse(self, endorser_key: KeyPair, subject, score):
        endorsement = new_endorsement(endorser_key, subject, score, self.clock.now())
        self.submit(self.transaction(TxKind.ENDORSE, endorsement, endorser_key))
        return endorsement

    def designate_proxy(self, manufacturer_key: KeyPair, proxy, min_trust):
        designation = ProxyDesignation(DID.from_key(manufacturer_key), proxy, min_trust)
        return self.submit(self.transaction(TxKind.DESIGNATE, designation, manufacturer_key))

    # -- issuer and credential flows -----------------------------------

    def onboard_issuer(self, user: IdentityRecord, user_key: KeyPair):
        self.record(user.did)
        linkage = find_trust_linkage(self.state.graph, user.did)
        receipt = self.submit(
            self.transaction(TxKind.ONBOARD, OnboardRequest(user, linkage), user_key)
        )
        logger.info("onboarded issuer %s via %d-hop linkage", user.did, len(linkage.chain) - 1)
        return receipt

    def issue_device_credential(self, issuer_key: KeyPair, device: IdentityRecord, claims):
        issuer = self.record(DID.from_key(issuer_key))
        credential = new_credential(issuer, issuer_key, device.did, claims, self.clock.now())
        self.submit(self.transaction(TxKind.ISSUE, credential, issuer_key))
        logger.info("issued %s to %s", credential.vc_id, device.did)
        return credential

    def verify_credential(self, verifier_key: KeyPair, vc_id):
        """Logged verification: the outcome is recorded on the ledger."""
        request = VerifyRequest(vc_id, DID.from_key(verifier_key))
        return self.submit(self.transaction(TxKind.VERIFY, request, verifier_key)).outcome

    def query_credential(self, vc_id):
        return self.ledger.query(vc_id)

    def revoke_credential(self, key: KeyPair, vc_id, rationale):
        if not isinstance(rationale, Rationale):
            rationale = Rationale.parse(str(rationale))
        record = RevocationRecord(vc_id, rationale, self.clock.now(), DID.from_key(key))
        receipt = self.submit(self.transaction(TxKind.REVOKE, record, key))
        logger.info("revoked %s (%s)", vc_id, rationale)
        return receipt

    # -- authentication ---------------------------------------------------

    def issue_challenge(self, verifier) -> AuthenticationChallenge:
        now = self.clock.now()
        challenge = AuthenticationChallenge(
            nonce=secrets.token_bytes(NONCE_SIZE),
            verifier=verifier,
            issued_at=now,
            expiry_ms=self.expiry_ms,
        )
        with self._lock:
            if len(self._challenges) > _PRUNE_ABOVE:
                self._challenges = {
                    nonce: c
                    for nonce, c in self._challenges.items()
                    if now - c.issued_at <= c.expiry_ms
                }
            self._challenges[challenge.nonce] = challenge
        return challenge

    def respond_to_challenge(self, key: KeyPair, challenge) -> AuthResponse:
        return AuthResponse(
            responder=DID.from_key(key),
            signature=crypto.sign(challenge.message(), key.signing_key),
        )

    def _consume(self, challenge):
        with self._lock:
            stored = self._challenges.pop(challenge.nonce, None)
        if stored is None or stored != challenge:
            return False
        return self.clock.now() - stored.issued_at <= stored.expiry_ms

    def _signed_by_responder(self, challenge, response):
        responder = self.state.identities.get(response.responder)
        return responder is not None and crypto.verify_signature(
            challenge.message(), response.signature, responder.verification_key
        )

    def _credential_valid(self, vc):
        entry = self.state.credentials.get(vc.vc_id)
        return (
            entry is not None
            and entry.credential == vc
            and self.ledger.query(vc.vc_id).valid
        )

    def verify_response(self, challenge, response: AuthResponse, vc) -> AuthResult:
        if not self._consume(challenge):
            result = _reject(AuthReject.EXPIRED)
        elif not self._signed_by_responder(challenge, response):
            result = _reject(AuthReject.BAD_NONCE_SIGNATURE)
        elif vc.holder != response.responder:
            result = _reject(AuthReject.HOLDER_MISMATCH)
        elif not self._credential_valid(vc):
            result = _reject(AuthReject.CREDENTIAL_INVALID)
        else:
            result = ACCEPT
        logger.debug("authentication of %s for %s: %s", response.responder, vc.vc_id, result)
        return result

    def authenticate(self, holder_key: KeyPair, vc, challenge) -> AuthResult:
        return self.verify_response(
            challenge, self.respond_to_challenge(holder_key, challenge), vc
        )

    # -- weak devices -----------------------------------------------------

    def bind_weak_device(self, owner_key: KeyPair, strong: IdentityRecord, weak: IdentityRecord):
        owner = DID.from_key(owner_key)
        strong = self.record(strong.did)
        weak = self.record(weak.did)
        if strong.device_type is not DeviceType.STRONG or weak.device_type is not DeviceType.WEAK:
            raise TypeMismatch("a binding pairs a strong device with a weak one")
        if strong.owner != owner or weak.owner != owner:
            raise NotOwner(f"{owner} does not own both devices")
        credential = self.issue_device_credential(
            owner_key, strong, [Claim(BINDS_CLAIM, str(weak.did))]
        )
        logger.info("bound weak device %s to %s", weak.did, strong.did)
        return DeviceBinding(
            strong=strong.did,
            weak=weak.did,
            owner=owner,
            bound_at=credential.issued_at,
            signature=credential.signature,
            credential_id=credential.vc_id,
        )

    def verify_delegated_response(self, challenge, response, binding, weak_vc) -> AuthResult:
        if not self._consume(challenge):
            return _reject(AuthReject.EXPIRED)
        if not self._signed_by_responder(challenge, response):
            return _reject(AuthReject.BAD_NONCE_SIGNATURE)
        entry = self.state.active_binding(response.responder, weak_vc.holder)
        if (
            entry is None
            or entry.credential.vc_id != binding.credential_id
            or binding.strong != response.responder
            or binding.weak != weak_vc.holder
        ):
            return _reject(AuthReject.UNBOUND_DEVICE)
        if not self._credential_valid(weak_vc):
            return _reject(AuthReject.CREDENTIAL_INVALID)
        return ACCEPT

    def delegated_authenticate(self, strong_key: KeyPair, binding, weak_vc, challenge):
        return self.verify_delegated_response(
            challenge, self.respond_to_challenge(strong_key, challenge), binding, weak_vc
        )

    # -- ownership --------------------------------------------------------

    def _ensure_issuer(self, new_owner: IdentityRecord, new_owner_key: KeyPair):
        """Onboarding transactions the new owner still needs before it can issue."""
        state = self.state
        did = new_owner.did
        if state.is_manufacturer(did):
            return []
        if state.mode is Mode.BASELINE or new_owner.role is not Role.USER:
            raise NewOwnerNotOnboarded(f"{did} cannot issue credentials")
        if not is_onboardable(state.graph, did, state.threshold).admit:
            raise NewOwnerNotOnboarded(f"{did} does not meet the trust threshold")
        if did in state.onboarded_issuers:
            return []
        try:
            linkage = find_trust_linkage(state.graph, did)
        except NoTrustLinkage as exc:
            raise NewOwnerNotOnboarded(str(exc)) from exc
        return [
            self.transaction(TxKind.ONBOARD, OnboardRequest(new_owner, linkage), new_owner_key)
        ]

    def transfer_ownership(
        self,
        old_owner_key: KeyPair,
        new_owner: IdentityRecord,
        new_owner_key: KeyPair,
        device: IdentityRecord,
    ):
        """Revoke, re-own and re-issue in one atomic group; returns the new credential."""
        state = self.state
        old_owner = DID.from_key(old_owner_key)
        device = self.record(device.did)
        if device.role is not Role.DEVICE:
            raise TypeMismatch(f"{device.did} is not a device")
        if device.owner != old_owner:
            raise NotOwner(f"{old_owner} does not own {device.did}")
        new_owner = self.record(new_owner.did)
        if new_owner.did != DID.from_key(new_owner_key):
            raise InvalidKey("new owner key does not match the new owner")

        group = self._ensure_issuer(new_owner, new_owner_key)
        now = self.clock.now()
        rationale = Rationale(RationaleKind.OWNERSHIP_TRANSFER)
        carried = {}
        to_revoke = []
        for entry in state.active_credentials(device.did):
            claims = entry.credential.claim_map
            if BINDS_CLAIM not in claims:
                carried.update(claims)
            to_revoke.append(entry.credential.vc_id)
        for vc_id in state.bindings.get(device.did, ()):
            if state.credentials[vc_id].status is Status.ACTIVE and vc_id not in to_revoke:
                to_revoke.append(vc_id)
        for vc_id in to_revoke:
            record = RevocationRecord(vc_id, rationale, now, old_owner)
            group.append(build_transaction(TxKind.REVOKE, record, old_owner_key, now))
        transfer = OwnershipTransfer(device.did, new_owner.did)
        group.append(build_transaction(TxKind.TRANSFER, transfer, old_owner_key, now))

        carried.pop(HOLDER_CLAIM, None)
        carried[OWNER_CLAIM] = str(new_owner.did)
        credential = new_credential(
            new_owner,
            new_owner_key,
            device.did,
            [Claim(key, val) for key, val in sorted(carried.items())],
            now,
        )
        group.append(build_transaction(TxKind.ISSUE, credential, new_owner_key, now))

        receipts = self.ledger.submit_atomic(group)
        failed = receipts[-1]
        if not failed.committed:
            raise TransactionRejected(failed.reason, failed.message)
        logger.info(
            "transferred %s from %s to %s, %d credentials revoked",
            device.did,
            old_owner,
            new_owner.did,
            len(to_revoke),
        )
        return credential

    # -- resolution -------------------------------------------------------

    def resolve(self, did) -> dict:
        """DID document for a registered principal."""
        record = self.record(did)
        state = self.state
        controller = str(record.owner) if record.owner else str(record.did)
        key_ref = f"{record.did}#key-1"
        document = {
            "@context": ["https://www.w3.org/ns/did/v1"],
            "id": str(record.did),
            "controller": controller,
            "verificationMethod": [
                {
                    "id": key_ref,
                    "type": "Ed25519VerificationKey2020",
                    "controller": controller,
                    "publicKeyHex": record.verification_key.hex(),
                }
            ],
            "authentication": [key_ref],
            "role": record.role.value,
        }
        if record.role is not Role.DEVICE:
            document["assertionMethod"] = [key_ref]
        if record.device_type is not None:
            document["deviceType"] = record.device_type.value
        if record.did in state.onboarded_issuers:
            document["onboardedScore"] = state.onboarded_issuers[record.did].value
        return document
