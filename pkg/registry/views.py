import logging
import threading

from django.conf import settings
from django.http import Http404, JsonResponse
from django.shortcuts import get_object_or_404
from django.utils.decorators import method_decorator
from django.views import View
from django.views.decorators.csrf import csrf_exempt

from .exceptions import IntegrityViolation, InvalidConfig, RegistryError, UnknownPrincipal
from .identity import DID, parse
from .ledger import Transaction
from .models import Identity
from .orchestrator import Node
from .storage import LedgerFile, open_ledger
from .tasks import sync_registry_index

logger = logging.getLogger(__name__)


class NodeHolder:
    """
    Process-wide node, opened on demand over the ledger at
    ``settings.SSIVDR_LEDGER``.

    Every committed transaction restarts a timer; once the node has been idle
    for ``SSIVDR_IDLE_FLUSH_MS`` milliseconds the pending batch is sealed.
    Every sealed block queues ``sync_registry_index``.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._node = None
        self._path = None
        self._timer = None

    def get(self):
        with self._lock:
            path = settings.SSIVDR_LEDGER
            if self._node is None or self._path != path:
                ledger = open_ledger(path)
                ledger.on_seal.append(lambda block: sync_registry_index.delay(str(path)))
                self._node = Node(ledger, expiry_ms=settings.SSIVDR_CHALLENGE_EXPIRY_MS)
                self._path = path
                logger.info("serving ledger %s at height %d", path, len(ledger.chain))
            return self._node

    def touch(self):
        """Restart the idle countdown after a committed transaction."""
        with self._lock:
            if self._timer is not None:
                self._timer.cancel()
            node = self._node
            self._timer = threading.Timer(
                settings.SSIVDR_IDLE_FLUSH_MS / 1000, lambda: node.ledger.flush()
            )
            self._timer.daemon = True
            self._timer.start()

    def reset(self):
        with self._lock:
            if self._timer is not None:
                self._timer.cancel()
            if self._node is not None:
                self._node.ledger.flush()
            self._node = None
            self._path = None
            self._timer = None


node_holder = NodeHolder()


def error_response(status, reason, message=""):
    return JsonResponse({"error": str(reason), "message": message}, status=status)


class NodeView(View):
    """Base view: a missing or damaged ledger answers 503."""

    def dispatch(self, request, *args, **kwargs):
        try:
            return super().dispatch(request, *args, **kwargs)
        except (InvalidConfig, IntegrityViolation) as exc:
            logger.error("ledger unavailable: %s", exc)
            return error_response(503, type(exc).__name__, str(exc))


class Index(View):
    """
    Lists the onboarded issuers known to the registry index.

    Methods:
        get(request):
            Returns the onboarded DIDs with their trust score.
    """

    def get(self, request):
        issuers = Identity.objects.filter(onboarded_score__isnull=False)
        return JsonResponse(
            {
                "issuers": [
                    {"did": issuer.did, "role": issuer.role, "score": issuer.onboarded_score}
                    for issuer in issuers
                ]
            }
        )


class DidDetail(NodeView):
    """
    DID resolution.

    Methods:
        get(request, did):
            Returns the DID document of an indexed identity.
    """

    def get(self, request, did):
        """
        Args:
            request (HttpRequest): The HTTP request.
            did (str): DID to resolve.

        Returns:
            JsonResponse: The DID document, or 404 when the identity is not indexed.
        """
        identity = get_object_or_404(Identity, did=did)
        try:
            document = node_holder.get().resolve(DID.parse(identity.did))
        except UnknownPrincipal as exc:
            raise Http404(str(exc)) from exc
        return JsonResponse(document)


class CredentialStatus(NodeView):
    """
    Quick credential status lookup; the check is not logged on the ledger.
    """

    def get(self, request, vc_id):
        outcome = node_holder.get().ledger.query(vc_id)
        return JsonResponse({"vc_id": vc_id, "status": outcome.value, "valid": outcome.valid})


@method_decorator(csrf_exempt, name="dispatch")
class SubmitTransaction(NodeView):
    """
    Accepts a signed canonical transaction and submits it to the ledger.

    Methods:
        post(request):
            Parses the request body as a transaction.
    """

    def post(self, request):
        """
        Args:
            request (HttpRequest): Request whose body is the canonical form of
                a transaction.

        Returns:
            JsonResponse: The receipt, with status 201 when the transaction
                committed, 409 when it was rejected and 400 when the body is
                not a valid transaction.
        """
        try:
            tx = parse(request.body)
        except RegistryError as exc:
            return error_response(400, "MalformedTransaction", str(exc))
        if not isinstance(tx, Transaction):
            return error_response(400, "MalformedTransaction", "body is not a transaction")

        node = node_holder.get()
        receipt = node.ledger.submit(tx)
        if receipt.committed:
            node_holder.touch()
        return JsonResponse(receipt.to_map(), status=201 if receipt.committed else 409)


class LedgerAuditView(NodeView):
    """
    Checks the integrity of the block chain in the ledger file on disk.
    """

    def get(self, request):
        audit = LedgerFile(settings.SSIVDR_LEDGER).audit()
        report = audit.report
        return JsonResponse(
            {
                "result": str(report),
                "intact": report.intact,
                "height": report.height,
                "detail": report.detail,
                "blocks": len(audit.chain),
            }
        )
