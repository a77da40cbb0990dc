"""
Read model of the replayed ledger state.

These tables are rebuilt from the ledger file by ``index.sync_index``; the
ledger never reads them back.
"""

from django.db import models


class Identity(models.Model):
    ROLE_CHOICES = [
        ("manufacturer", "manufacturer"),
        ("user", "user"),
        ("device", "device"),
    ]
    DEVICE_TYPE_CHOICES = [("strong", "strong"), ("weak", "weak")]

    did = models.CharField(max_length=128, unique=True)
    role = models.CharField(max_length=16, choices=ROLE_CHOICES)
    device_type = models.CharField(max_length=8, choices=DEVICE_TYPE_CHOICES, blank=True)
    owner = models.CharField(max_length=128, blank=True)
    verification_key = models.CharField(max_length=64)
    onboarded_score = models.FloatField(null=True, blank=True)

    class Meta:
        ordering = ["did"]
        verbose_name_plural = "identities"

    def __str__(self):
        return self.did

    @property
    def onboarded(self):
        return self.onboarded_score is not None


class Credential(models.Model):
    STATUS_CHOICES = [("active", "active"), ("revoked", "revoked")]

    vc_id = models.CharField(max_length=32, unique=True)
    issuer = models.ForeignKey(Identity, on_delete=models.CASCADE, related_name="issued")
    holder = models.ForeignKey(Identity, on_delete=models.CASCADE, related_name="held")
    claims = models.JSONField(default=dict)
    issued_at = models.BigIntegerField()
    status = models.CharField(max_length=8, choices=STATUS_CHOICES, default="active")
    revocation_reason = models.CharField(max_length=255, blank=True)

    class Meta:
        ordering = ["issued_at", "vc_id"]

    def __str__(self):
        return self.vc_id


class SealedBlock(models.Model):
    height = models.PositiveIntegerField(unique=True)
    prev_hash = models.CharField(max_length=64)
    block_hash = models.CharField(max_length=64)
    transaction_count = models.PositiveIntegerField()

    class Meta:
        ordering = ["height"]

    def __str__(self):
        return f"#{self.height} {self.block_hash[:12]}"
