from django.urls import path

from . import views

urlpatterns = [
    path("", views.Index.as_view(), name="index"),
    path("dids/<str:did>/", views.DidDetail.as_view(), name="did"),
    path("credentials/<str:vc_id>/", views.CredentialStatus.as_view(), name="credential"),
    path("transactions/", views.SubmitTransaction.as_view(), name="transactions"),
    path("ledger/audit/", views.LedgerAuditView.as_view(), name="ledger_audit"),
]
