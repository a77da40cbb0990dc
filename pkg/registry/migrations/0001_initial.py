import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name="Identity",
            fields=[
                (
                    "id",
                    models.BigAutoField(
                        auto_created=True,
                        primary_key=True,
                        serialize=False,
                        verbose_name="ID",
                    ),
                ),
                ("did", models.CharField(max_length=128, unique=True)),
                (
                    "role",
                    models.CharField(
                        choices=[
                            ("manufacturer", "manufacturer"),
                            ("user", "user"),
                            ("device", "device"),
                        ],
                        max_length=16,
                    ),
                ),
                (
                    "device_type",
                    models.CharField(
                        blank=True,
                        choices=[("strong", "strong"), ("weak", "weak")],
                        max_length=8,
                    ),
                ),
                ("owner", models.CharField(blank=True, max_length=128)),
                ("verification_key", models.CharField(max_length=64)),
                ("onboarded_score", models.FloatField(blank=True, null=True)),
            ],
            options={
                "ordering": ["did"],
                "verbose_name_plural": "identities",
            },
        ),
        migrations.CreateModel(
            name="SealedBlock",
            fields=[
                (
                    "id",
                    models.BigAutoField(
                        auto_created=True,
                        primary_key=True,
                        serialize=False,
                        verbose_name="ID",
                    ),
                ),
                ("height", models.PositiveIntegerField(unique=True)),
                ("prev_hash", models.CharField(max_length=64)),
                ("block_hash", models.CharField(max_length=64)),
                ("transaction_count", models.PositiveIntegerField()),
            ],
            options={
                "ordering": ["height"],
            },
        ),
        migrations.CreateModel(
            name="Credential",
            fields=[
                (
                    "id",
                    models.BigAutoField(
                        auto_created=True,
                        primary_key=True,
                        serialize=False,
                        verbose_name="ID",
                    ),
                ),
                ("vc_id", models.CharField(max_length=32, unique=True)),
                ("claims", models.JSONField(default=dict)),
                ("issued_at", models.BigIntegerField()),
                (
                    "status",
                    models.CharField(
                        choices=[("active", "active"), ("revoked", "revoked")],
                        default="active",
                        max_length=8,
                    ),
                ),
                ("revocation_reason", models.CharField(blank=True, max_length=255)),
                (
                    "holder",
                    models.ForeignKey(
                        on_delete=django.db.models.deletion.CASCADE,
                        related_name="held",
                        to="registry.identity",
                    ),
                ),
                (
                    "issuer",
                    models.ForeignKey(
                        on_delete=django.db.models.deletion.CASCADE,
                        related_name="issued",
                        to="registry.identity",
                    ),
                ),
            ],
            options={
                "ordering": ["issued_at", "vc_id"],
            },
        ),
    ]
