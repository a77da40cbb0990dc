from django.contrib import admin

from .models import Credential, Identity, SealedBlock


@admin.register(Identity)
class IdentityAdmin(admin.ModelAdmin):
    list_display = (
        "did",
        "role",
        "device_type",
        "owner",
        "onboarded_score",
    )
    list_filter = ("role",)
    search_fields = ("did", "owner")


@admin.register(Credential)
class CredentialAdmin(admin.ModelAdmin):
    list_display = (
        "vc_id",
        "issuer",
        "holder",
        "status",
        "issued_at",
    )
    list_filter = ("status",)
    search_fields = ("vc_id",)


@admin.register(SealedBlock)
class SealedBlockAdmin(admin.ModelAdmin):
    list_display = (
        "height",
        "block_hash",
        "transaction_count",
    )
