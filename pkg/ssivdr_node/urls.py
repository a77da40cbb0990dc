"""ssivdr_node URL Configuration

The registry app serves the JSON application layer at the root; the admin
site browses the ledger index.
"""

from django.contrib import admin
from django.urls import include, path

urlpatterns = [
    path("", include("registry.urls")),
    path("admin/", admin.site.urls),
]
