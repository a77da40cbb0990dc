import logging

from django.db import transaction

from .models import Credential, Identity, SealedBlock

logger = logging.getLogger(__name__)


@transaction.atomic
def sync_index(state, chain):
    """Rebuild the ORM read model from a replayed ledger state and its chain."""
    Credential.objects.all().delete()
    Identity.objects.all().delete()
    SealedBlock.objects.all().delete()

    rows = {}
    for did, record in sorted(state.identities.items()):
        score = state.onboarded_issuers.get(did)
        rows[did] = Identity.objects.create(
            did=str(did),
            role=record.role.value,
            device_type=record.device_type.value if record.device_type else "",
            owner=str(record.owner) if record.owner else "",
            verification_key=record.verification_key.hex(),
            onboarded_score=score.value if score is not None else None,
        )

    Credential.objects.bulk_create(
        Credential(
            vc_id=vc_id,
            issuer=rows[entry.credential.issuer],
            holder=rows[entry.credential.holder],
            claims=entry.credential.claim_map,
            issued_at=entry.credential.issued_at,
            status=entry.status.value,
            revocation_reason=str(entry.revocation.rationale) if entry.revocation else "",
        )
        for vc_id, entry in sorted(state.credentials.items())
    )
    SealedBlock.objects.bulk_create(
        SealedBlock(
            height=block.height,
            prev_hash=block.prev_hash.hex(),
            block_hash=block.block_hash.hex(),
            transaction_count=len(block.transactions),
        )
        for block in chain
    )
    logger.info(
        "indexed %d identities, %d credentials, %d blocks",
        len(rows),
        len(state.credentials),
        len(chain),
    )
