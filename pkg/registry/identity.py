"""
Entity model: DIDs, identity records, claims, credentials, endorsements and
revocation records, plus the canonical text-map encoding they are signed,
stored and hashed in.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, replace
from enum import Enum

from . import crypto
from .crypto import KeyPair, Signature
from .exceptions import DuplicateClaim, InvalidValue

FORMAT_VERSION = "1"
DID_METHOD = "ssivdr"
HOLDER_CLAIM = "holder_did"
BINDS_CLAIM = "binds"
ID_BYTES = 16

_HEX_ID = re.compile(r"^[0-9a-f]{32}$")


def canonical_json(data) -> bytes:
    return json.dumps(
        data,
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
        allow_nan=False,
    ).encode("utf-8")


def content_id(data) -> str:
    """16-byte hex identifier derived from the digest of a canonical map."""
    return crypto.digest(canonical_json(data)).value[:ID_BYTES].hex()


@dataclass(frozen=True, order=True)
class DecentralizedIdentifier:
    id: str
    method: str = DID_METHOD

    def __post_init__(self):
        if self.method != DID_METHOD:
            raise InvalidValue(f"unsupported DID method {self.method!r}")
        if not isinstance(self.id, str) or not _HEX_ID.match(self.id):
            raise InvalidValue(f"malformed DID id {self.id!r}")

    def __str__(self):
        return f"did:{self.method}:{self.id}"

    @classmethod
    def parse(cls, text):
        parts = str(text).split(":")
        if len(parts) != 3 or parts[0] != "did":
            raise InvalidValue(f"malformed DID {text!r}")
        return cls(id=parts[2], method=parts[1])

    @classmethod
    def from_key(cls, keypair_or_verification_key):
        if isinstance(keypair_or_verification_key, KeyPair):
            return cls(id=keypair_or_verification_key.key_id)
        return cls(id=crypto.key_id_for(keypair_or_verification_key))


DID = DecentralizedIdentifier


class Role(str, Enum):
    MANUFACTURER = "manufacturer"
    USER = "user"
    DEVICE = "device"


class DeviceType(str, Enum):
    STRONG = "strong"
    WEAK = "weak"


@dataclass(frozen=True)
class IdentityRecord:
    did: DecentralizedIdentifier
    role: Role
    verification_key: bytes
    device_type: DeviceType | None = None
    owner: DecentralizedIdentifier | None = None

    TYPE = "identity"

    def __post_init__(self):
        object.__setattr__(self, "role", Role(self.role))
        if self.device_type is not None:
            object.__setattr__(self, "device_type", DeviceType(self.device_type))
        if len(self.verification_key) != crypto.KEY_SIZE:
            raise InvalidValue("verification key must be 32 bytes")
        is_device = self.role is Role.DEVICE
        if is_device != (self.device_type is not None) or is_device != (
            self.owner is not None
        ):
            raise InvalidValue("device_type and owner are required for devices only")

    @property
    def self_certifying(self):
        return self.did.id == crypto.key_id_for(self.verification_key)

    def to_map(self):
        data = {
            "type": self.TYPE,
            "did": str(self.did),
            "role": self.role.value,
            "verification_key": self.verification_key.hex(),
        }
        if self.device_type is not None:
            data["device_type"] = self.device_type.value
            data["owner"] = str(self.owner)
        return data

    @classmethod
    def from_map(cls, data):
        owner = data.get("owner")
        return cls(
            did=DID.parse(data["did"]),
            role=Role(data["role"]),
            verification_key=bytes.fromhex(data["verification_key"]),
            device_type=data.get("device_type"),
            owner=DID.parse(owner) if owner is not None else None,
        )

    @classmethod
    def for_key(cls, keypair, role, device_type=None, owner=None):
        return cls(
            did=DID.from_key(keypair),
            role=role,
            verification_key=keypair.verification_key,
            device_type=device_type,
            owner=owner,
        )


@dataclass(frozen=True)
class Claim:
    key: str
    val: str

    def __post_init__(self):
        if not isinstance(self.key, str) or not self.key:
            raise InvalidValue("claim key must be a non-empty string")
        if not isinstance(self.val, str):
            raise InvalidValue("claim value must be a string")

    def to_map(self):
        return {"key": self.key, "val": self.val}


def _check_unique(claims):
    seen = set()
    for claim in claims:
        if claim.key in seen:
            raise DuplicateClaim(f"duplicate claim key {claim.key!r}")
        seen.add(claim.key)


@dataclass(frozen=True)
class VerifiableCredential:
    vc_id: str
    issuer: DecentralizedIdentifier
    holder: DecentralizedIdentifier
    claims: tuple
    issued_at: int
    signature: Signature | None = None

    TYPE = "credential"

    def __post_init__(self):
        claims = tuple(self.claims)
        _check_unique(claims)
        # claim order carries no meaning; keep the canonical order
        object.__setattr__(self, "claims", tuple(sorted(claims, key=lambda c: c.key)))
        if not claims:
            raise InvalidValue("a credential carries at least one claim")
        if self.claim_map.get(HOLDER_CLAIM) != str(self.holder):
            raise InvalidValue("holder_did claim must name the holder")
        if not _HEX_ID.match(self.vc_id):
            raise InvalidValue(f"malformed vc_id {self.vc_id!r}")
        _check_timestamp(self.issued_at)

    @property
    def claim_map(self):
        return {claim.key: claim.val for claim in self.claims}

    def body_map(self):
        """Fields the vc_id is derived from."""
        return {
            "type": self.TYPE,
            "issuer": str(self.issuer),
            "holder": str(self.holder),
            "claims": [claim.to_map() for claim in self.claims],
            "issued_at": self.issued_at,
        }

    def derived_id(self):
        return content_id(self.body_map())

    def to_map(self):
        data = self.body_map()
        data["vc_id"] = self.vc_id
        if self.signature is not None:
            data["signature"] = self.signature.to_map()
        return data

    @classmethod
    def from_map(cls, data):
        signature = data.get("signature")
        return cls(
            vc_id=data["vc_id"],
            issuer=DID.parse(data["issuer"]),
            holder=DID.parse(data["holder"]),
            claims=tuple(Claim(c["key"], c["val"]) for c in data["claims"]),
            issued_at=data["issued_at"],
            signature=Signature.from_map(signature) if signature else None,
        )


@dataclass(frozen=True)
class Endorsement:
    endorser: DecentralizedIdentifier
    subject: DecentralizedIdentifier
    score: float
    endorsed_at: int
    signature: Signature | None = None

    TYPE = "endorsement"

    def __post_init__(self):
        score = float(self.score)
        if math.isnan(score) or not 0.0 <= score <= 1.0:
            raise InvalidValue("endorsement score must lie in [0, 1]")
        object.__setattr__(self, "score", score)
        _check_timestamp(self.endorsed_at)

    def to_map(self):
        data = {
            "type": self.TYPE,
            "endorser": str(self.endorser),
            "subject": str(self.subject),
            "score": self.score,
            "endorsed_at": self.endorsed_at,
        }
        if self.signature is not None:
            data["signature"] = self.signature.to_map()
        return data

    @classmethod
    def from_map(cls, data):
        signature = data.get("signature")
        return cls(
            endorser=DID.parse(data["endorser"]),
            subject=DID.parse(data["subject"]),
            score=data["score"],
            endorsed_at=data["endorsed_at"],
            signature=Signature.from_map(signature) if signature else None,
        )


class RationaleKind(str, Enum):
    COMPROMISED = "compromised"
    STOLEN = "stolen"
    OWNERSHIP_TRANSFER = "ownership_transfer"
    OTHER = "other"


@dataclass(frozen=True)
class Rationale:
    kind: RationaleKind
    text: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", RationaleKind(self.kind))
        if self.kind is RationaleKind.OTHER and not self.text:
            raise InvalidValue("an 'other' rationale needs a description")
        if self.kind is not RationaleKind.OTHER and self.text:
            raise InvalidValue("only 'other' rationales carry free text")

    def __str__(self):
        if self.kind is RationaleKind.OTHER:
            return f"other:{self.text}"
        return self.kind.value

    @classmethod
    def parse(cls, text):
        if not text:
            raise InvalidValue("rationale is required")
        if text.startswith("other:"):
            return cls(RationaleKind.OTHER, text[len("other:"):])
        try:
            return cls(RationaleKind(text))
        except ValueError:
            return cls(RationaleKind.OTHER, text)


@dataclass(frozen=True)
class RevocationRecord:
    vc_id: str
    rationale: Rationale
    revoked_at: int
    revoker: DecentralizedIdentifier

    TYPE = "revocation"

    def __post_init__(self):
        if not _HEX_ID.match(self.vc_id):
            raise InvalidValue(f"malformed vc_id {self.vc_id!r}")
        _check_timestamp(self.revoked_at)

    def to_map(self):
        return {
            "type": self.TYPE,
            "vc_id": self.vc_id,
            "rationale": str(self.rationale),
            "revoked_at": self.revoked_at,
            "revoker": str(self.revoker),
        }

    @classmethod
    def from_map(cls, data):
        return cls(
            vc_id=data["vc_id"],
            rationale=Rationale.parse(data["rationale"]),
            revoked_at=data["revoked_at"],
            revoker=DID.parse(data["revoker"]),
        )


def _check_timestamp(value):
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise InvalidValue("timestamps are non-negative integer milliseconds")


TYPES = {
    cls.TYPE: cls
    for cls in (IdentityRecord, VerifiableCredential, Endorsement, RevocationRecord)
}


def register_type(cls):
    """Make ``cls`` parseable by :func:`parse`; used by the ledger types."""
    TYPES[cls.TYPE] = cls
    return cls


def canonical_serialize(value) -> bytes:
    if not hasattr(value, "to_map"):
        raise InvalidValue(f"{type(value).__name__} has no canonical form")
    return canonical_json({"fmt": FORMAT_VERSION, **value.to_map()})


def signing_payload(value) -> bytes:
    """Canonical bytes of ``value`` without its own signature field."""
    data = value.to_map()
    data.pop("signature", None)
    return canonical_json({"fmt": FORMAT_VERSION, **data})


def parse(data: bytes):
    try:
        decoded = json.loads(data)
    except (UnicodeDecodeError, ValueError) as exc:
        raise InvalidValue("not a canonical text map") from exc
    if not isinstance(decoded, dict) or decoded.get("fmt") != FORMAT_VERSION:
        raise InvalidValue("unsupported or missing format version")
    try:
        cls = TYPES[decoded["type"]]
        return cls.from_map(decoded)
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise InvalidValue(f"cannot parse value: {exc}") from exc


def new_credential(
    issuer_record: IdentityRecord,
    issuer_key: KeyPair,
    holder: DecentralizedIdentifier,
    claims,
    now: int,
) -> VerifiableCredential:
    if issuer_key.verification_key != issuer_record.verification_key:
        raise InvalidValue("issuer key does not match the issuer record")
    claims = list(claims)
    _check_unique(claims)
    if not any(claim.key == HOLDER_CLAIM for claim in claims):
        claims.append(Claim(HOLDER_CLAIM, str(holder)))
    unsigned = VerifiableCredential(
        vc_id="0" * 32,
        issuer=issuer_record.did,
        holder=holder,
        claims=tuple(claims),
        issued_at=now,
    )
    unsigned = replace(unsigned, vc_id=unsigned.derived_id())
    signature = crypto.sign(signing_payload(unsigned), issuer_key.signing_key)
    return replace(unsigned, signature=signature)


def new_endorsement(endorser_key: KeyPair, subject, score, now) -> Endorsement:
    unsigned = Endorsement(
        endorser=DID.from_key(endorser_key),
        subject=subject,
        score=score,
        endorsed_at=now,
    )
    signature = crypto.sign(signing_payload(unsigned), endorser_key.signing_key)
    return replace(unsigned, signature=signature)


def verify_signed(value, verification_key) -> bool:
    if getattr(value, "signature", None) is None:
        return False
    return crypto.verify_signature(
        signing_payload(value), value.signature, verification_key
    )
