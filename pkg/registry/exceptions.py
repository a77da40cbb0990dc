from enum import Enum


class RejectReason(str, Enum):
    """Typed reasons carried by rejected receipts and failed checks."""

    BAD_SIGNATURE = "BadSignature"
    MALFORMED_TRANSACTION = "MalformedTransaction"
    UNKNOWN_SUBMITTER = "UnknownSubmitter"
    NOT_AUTHORIZED = "NotAuthorized"
    DUPLICATE_TRANSACTION = "DuplicateTransaction"
    # register
    ALREADY_REGISTERED = "AlreadyRegistered"
    INVALID_RECORD = "InvalidRecord"
    UNKNOWN_PRINCIPAL = "UnknownPrincipal"
    # endorse / designate
    ENDORSEMENT_DISABLED = "EndorsementDisabled"
    INVALID_ENDORSEMENT = "InvalidEndorsement"
    SELF_ENDORSEMENT = "SelfEndorsement"
    STALE_ENDORSEMENT = "StaleEndorsement"
    NOT_A_MANUFACTURER = "NotAManufacturer"
    PROXY_TRUST_TOO_LOW = "ProxyTrustTooLow"
    # onboard
    LINKAGE_NOT_VERIFIABLE = "LinkageNotVerifiable"
    BELOW_THRESHOLD = "BelowThreshold"
    ALREADY_ONBOARDED = "AlreadyOnboarded"
    NO_TRUST_LINKAGE = "NoTrustLinkage"
    # issue
    NOT_ONBOARDED = "NotOnboarded"
    TRUST_BELOW_THRESHOLD = "TrustBelowThreshold"
    UNKNOWN_HOLDER = "UnknownHolder"
    DUPLICATE_CREDENTIAL = "DuplicateCredential"
    MALFORMED_CREDENTIAL = "MalformedCredential"
    # revoke
    UNKNOWN_CREDENTIAL = "UnknownCredential"
    ALREADY_REVOKED = "AlreadyRevoked"
    # transfer
    NOT_OWNER = "NotOwner"
    INCOMPLETE_TRANSFER = "IncompleteTransfer"

    def __str__(self):
        return self.value


class RegistryError(Exception):
    """Base class for every typed error of the registry."""

    reason = None

    def __init__(self, message="", reason=None):
        super().__init__(message or self.__class__.__name__)
        if reason is not None:
            self.reason = reason


class InvalidSeed(RegistryError):
    pass


class InvalidKey(RegistryError):
    pass


class InvalidValue(RegistryError):
    pass


class DuplicateClaim(InvalidValue):
    pass


class InvalidEndorsement(RegistryError):
    reason = RejectReason.INVALID_ENDORSEMENT


class SelfEndorsement(RegistryError):
    reason = RejectReason.SELF_ENDORSEMENT


class UnknownPrincipal(RegistryError):
    reason = RejectReason.UNKNOWN_PRINCIPAL


class NoEndorsements(RegistryError):
    pass


class NoTrustLinkage(RegistryError):
    reason = RejectReason.NO_TRUST_LINKAGE


class ProxyTrustTooLow(RegistryError):
    reason = RejectReason.PROXY_TRUST_TOO_LOW


class NotAManufacturer(RegistryError):
    reason = RejectReason.NOT_A_MANUFACTURER


class IntegrityViolation(RegistryError):
    def __init__(self, message="", height=None):
        super().__init__(message)
        self.height = height


class TransactionRejected(RegistryError):
    """A ledger validator refused a transaction."""

    def __init__(self, reason, message=""):
        super().__init__(message or str(reason), reason=RejectReason(reason))


class NotOwner(RegistryError):
    reason = RejectReason.NOT_OWNER


class TypeMismatch(RegistryError):
    pass


class NewOwnerNotOnboarded(RegistryError):
    pass


class InvalidConfig(RegistryError):
    pass


class InsufficientFixture(RegistryError):
    pass
