import threading
from dataclasses import replace
from unittest import mock

from django.test import SimpleTestCase

from registry.crypto import Signature
from registry.exceptions import InvalidConfig, IntegrityViolation, RejectReason, TransactionRejected
from registry.identity import (
    Claim,
    IdentityRecord,
    Rationale,
    RationaleKind,
    RevocationRecord,
    Role,
    new_credential,
    new_endorsement,
)
from registry.ledger import (
    Block,
    Genesis,
    Ledger,
    Mode,
    OwnershipTransfer,
    Status,
    TxKind,
    VerifyOutcome,
    audit_issuance,
    build_transaction,
    replay,
    verify_chain_integrity,
)

from .helpers import Registry, did, keypair


class GenesisTests(SimpleTestCase):
    def manufacturer(self, name="maker"):
        return IdentityRecord.for_key(keypair(name), Role.MANUFACTURER)

    def test_defaults(self):
        genesis = Genesis(manufacturers=(self.manufacturer(),))
        self.assertEqual(genesis.tau, 0.5)
        self.assertEqual(genesis.batch_limit, 16)
        self.assertIs(genesis.mode, Mode.ENDORSEMENT)

    def test_invalid_settings(self):
        m = self.manufacturer()
        for kwargs in (
            {"manufacturers": ()},
            {"manufacturers": (m,), "tau": 0.0},
            {"manufacturers": (m,), "tau": 1.2},
            {"manufacturers": (m,), "batch_limit": 0},
            {"manufacturers": (m,), "mode": "proof-of-work"},
            {"manufacturers": (m, m)},
            {"manufacturers": (IdentityRecord.for_key(keypair("u"), Role.USER),)},
        ):
            with self.assertRaises(InvalidConfig, msg=str(kwargs)):
                Genesis(**kwargs)


class BatchingTests(SimpleTestCase):
    def test_three_commits_with_limit_two(self):
        registry = Registry(batch_limit=2)
        for name in ("a", "b", "c"):
            registry.user(name)
        self.assertEqual(len(registry.ledger.chain), 1)
        self.assertEqual(len(registry.ledger.pending), 1)
        self.assertEqual(len(registry.ledger.chain[0].transactions), 2)

    def test_flush_seals_pending(self):
        registry = Registry(batch_limit=4)
        registry.user("a")
        block = registry.ledger.flush()
        self.assertEqual(block.height, 0)
        self.assertIsNone(registry.ledger.flush())

    def test_rejections_are_not_logged(self):
        registry = Registry(batch_limit=1)
        registry.user("a")
        with self.assertRaises(TransactionRejected):
            registry.user("a")
        self.assertEqual(len(registry.ledger.chain), 1)
        self.assertEqual(registry.ledger.rejected, 1)
        self.assertEqual(registry.ledger.committed, 1)

    def test_blocks_link(self):
        registry = Registry(batch_limit=1)
        for name in ("a", "b", "c"):
            registry.user(name)
        chain = registry.ledger.chain
        self.assertTrue(verify_chain_integrity(chain).intact)
        self.assertEqual(chain[1].prev_hash, chain[0].block_hash)
        self.assertEqual(registry.ledger.head, chain[-1].block_hash)

    def test_seal_callbacks(self):
        registry = Registry(batch_limit=1)
        sealed = []
        registry.ledger.on_seal.append(sealed.append)
        registry.user("a")
        self.assertEqual([block.height for block in sealed], [0])


class EnvelopeTests(SimpleTestCase):
    def setUp(self):
        self.registry = Registry()
        self.record = IdentityRecord.for_key(keypair("a"), Role.USER)

    def test_unknown_submitter(self):
        tx = build_transaction(TxKind.ENDORSE, new_endorsement(keypair("x"), did("maker"), 0.5, 1), keypair("x"), 1)
        receipt = self.registry.ledger.submit(tx)
        self.assertFalse(receipt.committed)
        self.assertEqual(receipt.reason, RejectReason.UNKNOWN_SUBMITTER)
        self.assertEqual(receipt.status, "rejected")

    def test_bad_signature(self):
        tx = build_transaction(TxKind.REGISTER, self.record, keypair("a"), 1)
        forged = replace(tx, signature=Signature(tx.signature.scheme, bytes(64)))
        receipt = self.registry.ledger.submit(forged)
        self.assertEqual(receipt.reason, RejectReason.BAD_SIGNATURE)

    def test_mislabelled_transaction(self):
        tx = build_transaction(TxKind.REGISTER, self.record, keypair("a"), 1)
        receipt = self.registry.ledger.submit(replace(tx, tx_id="0" * 32))
        self.assertEqual(receipt.reason, RejectReason.MALFORMED_TRANSACTION)

    def test_receipt_map(self):
        tx = build_transaction(TxKind.REGISTER, self.record, keypair("a"), 1)
        receipt = self.registry.ledger.submit(tx)
        self.assertEqual(
            receipt.to_map(), {"tx_id": tx.tx_id, "kind": "register", "status": "committed"}
        )


class RegisterTests(SimpleTestCase):
    def setUp(self):
        self.registry = Registry()

    def reason(self, tx):
        return self.registry.ledger.submit(tx).reason

    def test_users_register_themselves(self):
        registry = self.registry
        record = IdentityRecord.for_key(keypair("a"), Role.USER)
        registry.user("b")
        tx = build_transaction(TxKind.REGISTER, record, keypair("b"), 1)
        self.assertEqual(self.reason(tx), RejectReason.NOT_AUTHORIZED)

    def test_manufacturers_only_from_genesis(self):
        record = IdentityRecord.for_key(keypair("m2"), Role.MANUFACTURER)
        tx = build_transaction(TxKind.REGISTER, record, keypair("m2"), 1)
        self.assertEqual(self.reason(tx), RejectReason.NOT_AUTHORIZED)

    def test_forged_did(self):
        record = IdentityRecord(did("a"), Role.USER, keypair("b").verification_key)
        self.registry.user("b")
        tx = build_transaction(TxKind.REGISTER, record, keypair("b"), 1)
        self.assertEqual(self.reason(tx), RejectReason.INVALID_RECORD)

    def test_devices_registered_by_owner(self):
        registry = self.registry
        registry.user("alice")
        registry.user("mallory")
        record = IdentityRecord.for_key(keypair("d"), Role.DEVICE, "strong", did("alice"))
        tx = build_transaction(TxKind.REGISTER, record, keypair("mallory"), 1)
        self.assertEqual(self.reason(tx), RejectReason.NOT_AUTHORIZED)
        registry.device("alice", "d")
        self.assertEqual(registry.record("d").owner, did("alice"))

    def test_device_owner_must_exist(self):
        record = IdentityRecord.for_key(keypair("d"), Role.DEVICE, "strong", did("ghost"))
        tx = build_transaction(TxKind.REGISTER, record, keypair("maker"), 1)
        self.assertEqual(self.reason(tx), RejectReason.UNKNOWN_PRINCIPAL)

    def test_manufacturer_registers_its_devices(self):
        self.registry.device("maker", "d")
        self.assertIn(did("d"), self.registry.state.identities)


class EndorsementFlowTests(SimpleTestCase):
    def setUp(self):
        self.registry = Registry()
        self.registry.user("a")
        self.registry.user("b")

    def submit(self, endorser, subject, score, at):
        e = new_endorsement(keypair(endorser), did(subject), score, at)
        return self.registry.ledger.submit(
            build_transaction(TxKind.ENDORSE, e, keypair(endorser), at)
        )

    def test_stale_endorsement(self):
        self.assertTrue(self.submit("maker", "a", 0.9, 10).committed)
        self.assertEqual(self.submit("maker", "a", 0.4, 10).reason, RejectReason.STALE_ENDORSEMENT)
        self.assertTrue(self.submit("maker", "a", 0.4, 11).committed)
        self.assertEqual(self.registry.state.graph.edge(did("maker"), did("a")).score, 0.4)

    def test_endorser_must_be_onboarded(self):
        self.assertEqual(self.submit("a", "b", 0.9, 1).reason, RejectReason.NOT_ONBOARDED)

    def test_self_endorsement(self):
        self.registry.node.endorse(keypair("maker"), did("a"), 0.9)
        self.registry.node.onboard_issuer(self.registry.record("a"), keypair("a"))
        self.assertEqual(self.submit("a", "a", 0.9, 99).reason, RejectReason.SELF_ENDORSEMENT)

    def test_unknown_subject(self):
        self.assertEqual(self.submit("maker", "ghost", 0.9, 1).reason, RejectReason.UNKNOWN_PRINCIPAL)


class OnboardTests(SimpleTestCase):
    def test_onboard_records_score(self):
        registry = Registry()
        registry.issuer("a", score=0.9)
        self.assertAlmostEqual(registry.state.onboarded_issuers[did("a")].value, 0.9)

    def test_below_threshold(self):
        registry = Registry(tau=0.6)
        registry.user("a")
        registry.node.endorse(keypair("maker"), did("a"), 0.55)
        with self.assertRaises(TransactionRejected) as ctx:
            registry.node.onboard_issuer(registry.record("a"), keypair("a"))
        self.assertEqual(ctx.exception.reason, RejectReason.BELOW_THRESHOLD)

    def test_already_onboarded(self):
        registry = Registry()
        registry.issuer("a")
        with self.assertRaises(TransactionRejected) as ctx:
            registry.node.onboard_issuer(registry.record("a"), keypair("a"))
        self.assertEqual(ctx.exception.reason, RejectReason.ALREADY_ONBOARDED)

    def test_chain_through_onboarded_issuer(self):
        registry = Registry()
        registry.issuer("a", score=0.9)
        registry.user("b")
        registry.node.endorse(keypair("a"), did("b"), 0.8)
        registry.node.onboard_issuer(registry.record("b"), keypair("b"))
        self.assertAlmostEqual(registry.state.onboarded_issuers[did("b")].value, 0.72)

    def test_proxy_anchored_linkage(self):
        registry = Registry()
        registry.issuer("p", score=0.95)
        registry.node.designate_proxy(keypair("maker"), did("p"), 0.8)
        self.assertTrue(registry.state.graph.is_proxy(did("p")))

    def test_designate_rejects_low_proxy(self):
        registry = Registry()
        registry.issuer("p", score=0.6)
        with self.assertRaises(TransactionRejected) as ctx:
            registry.node.designate_proxy(keypair("maker"), did("p"), 0.8)
        self.assertEqual(ctx.exception.reason, RejectReason.PROXY_TRUST_TOO_LOW)


class IssueTests(SimpleTestCase):
    def setUp(self):
        self.registry = Registry()
        self.registry.user("a")
        self.device = self.registry.device("a", "d")

    def issue(self, issuer):
        return self.registry.node.issue_device_credential(
            keypair(issuer), self.device, [Claim("model", "x")]
        )

    def assertRejected(self, reason, fn, *args):
        with self.assertRaises(TransactionRejected) as ctx:
            fn(*args)
        self.assertEqual(ctx.exception.reason, reason)

    def test_not_onboarded(self):
        self.assertRejected(RejectReason.NOT_ONBOARDED, self.issue, "a")

    def test_manufacturer_issues(self):
        vc = self.issue("maker")
        self.assertEqual(self.registry.ledger.query(vc.vc_id), VerifyOutcome.VALID)

    def test_onboarded_issuer(self):
        self.registry.node.endorse(keypair("maker"), did("a"), 0.9)
        self.registry.node.onboard_issuer(self.registry.record("a"), keypair("a"))
        vc = self.issue("a")
        self.assertEqual(self.registry.state.credentials[vc.vc_id].status, Status.ACTIVE)

    def test_score_drop_blocks_issue(self):
        node = self.registry.node
        node.endorse(keypair("maker"), did("a"), 0.9)
        node.onboard_issuer(self.registry.record("a"), keypair("a"))
        node.endorse(keypair("maker"), did("a"), 0.2)
        self.assertRejected(RejectReason.TRUST_BELOW_THRESHOLD, self.issue, "a")

    def test_unknown_holder(self):
        ghost = IdentityRecord.for_key(keypair("ghost"), Role.DEVICE, "weak", did("a"))
        self.assertRejected(
            RejectReason.UNKNOWN_HOLDER,
            self.registry.node.issue_device_credential,
            keypair("maker"),
            ghost,
            [Claim("model", "x")],
        )

    def test_duplicate_credential(self):
        maker = self.registry.state.identities[did("maker")]
        vc = new_credential(maker, keypair("maker"), did("d"), [Claim("model", "x")], 5)
        tx = build_transaction(TxKind.ISSUE, vc, keypair("maker"), 5)
        self.assertTrue(self.registry.ledger.submit(tx).committed)
        again = build_transaction(TxKind.ISSUE, vc, keypair("maker"), 6)
        self.assertEqual(
            self.registry.ledger.submit(again).reason, RejectReason.DUPLICATE_CREDENTIAL
        )

    def test_baseline_mode(self):
        registry = Registry(mode=Mode.BASELINE)
        registry.user("a")
        device = registry.device("a", "d")
        with self.assertRaises(TransactionRejected) as ctx:
            registry.node.endorse(keypair("maker"), did("a"), 0.9)
        self.assertEqual(ctx.exception.reason, RejectReason.ENDORSEMENT_DISABLED)
        with self.assertRaises(TransactionRejected) as ctx:
            registry.node.issue_device_credential(keypair("a"), device, [Claim("m", "x")])
        self.assertEqual(ctx.exception.reason, RejectReason.NOT_A_MANUFACTURER)
        registry.node.issue_device_credential(keypair("maker"), device, [Claim("m", "x")])


class VerifyRevokeTests(SimpleTestCase):
    def setUp(self):
        self.registry = Registry()
        self.registry.user("a")
        self.registry.user("v")
        self.device = self.registry.device("a", "d")
        self.vc = self.registry.node.issue_device_credential(
            keypair("maker"), self.device, [Claim("model", "x")]
        )

    def test_verify_is_logged(self):
        node = self.registry.node
        self.assertEqual(node.verify_credential(keypair("v"), self.vc.vc_id), VerifyOutcome.VALID)
        self.assertEqual(node.verify_credential(keypair("v"), "f" * 32), VerifyOutcome.UNKNOWN)
        log = self.registry.state.verification_log
        self.assertEqual([event.outcome for event in log], [VerifyOutcome.VALID, VerifyOutcome.UNKNOWN])
        self.assertEqual(log[0].verifier, did("v"))

    def test_revoke_by_issuer(self):
        node = self.registry.node
        node.revoke_credential(keypair("maker"), self.vc.vc_id, "compromised")
        self.assertEqual(node.verify_credential(keypair("v"), self.vc.vc_id), VerifyOutcome.REVOKED)
        entry = self.registry.state.credentials[self.vc.vc_id]
        self.assertEqual(str(entry.revocation.rationale), "compromised")

    def test_revoke_by_device_owner(self):
        self.registry.node.revoke_credential(keypair("a"), self.vc.vc_id, "stolen")
        self.assertEqual(self.registry.ledger.query(self.vc.vc_id), VerifyOutcome.REVOKED)

    def test_revocation_is_absorbing(self):
        node = self.registry.node
        node.revoke_credential(keypair("maker"), self.vc.vc_id, "stolen")
        with self.assertRaises(TransactionRejected) as ctx:
            node.revoke_credential(keypair("maker"), self.vc.vc_id, "compromised")
        self.assertEqual(ctx.exception.reason, RejectReason.ALREADY_REVOKED)
        self.assertEqual(self.registry.ledger.query(self.vc.vc_id), VerifyOutcome.REVOKED)

    def test_strangers_cannot_revoke(self):
        with self.assertRaises(TransactionRejected) as ctx:
            self.registry.node.revoke_credential(keypair("v"), self.vc.vc_id, "stolen")
        self.assertEqual(ctx.exception.reason, RejectReason.NOT_AUTHORIZED)

    def test_unknown_credential(self):
        with self.assertRaises(TransactionRejected) as ctx:
            self.registry.node.revoke_credential(keypair("maker"), "e" * 32, "stolen")
        self.assertEqual(ctx.exception.reason, RejectReason.UNKNOWN_CREDENTIAL)


class AtomicTests(SimpleTestCase):
    def test_failed_group_leaves_state_untouched(self):
        registry = Registry()
        before = registry.ledger.state_digest()
        good = build_transaction(
            TxKind.REGISTER, IdentityRecord.for_key(keypair("a"), Role.USER), keypair("a"), 1
        )
        bad = build_transaction(
            TxKind.REGISTER, IdentityRecord.for_key(keypair("a"), Role.USER), keypair("a"), 2
        )
        receipts = registry.ledger.submit_atomic([good, bad])
        self.assertFalse(receipts[-1].committed)
        self.assertEqual(receipts[-1].reason, RejectReason.ALREADY_REGISTERED)
        self.assertEqual(registry.ledger.state_digest(), before)
        self.assertEqual(registry.ledger.pending, [])

    def test_group_seals_pending_batch_first(self):
        registry = Registry(batch_limit=3)
        registry.user("a")
        registry.user("b")
        group = [
            build_transaction(
                TxKind.REGISTER, IdentityRecord.for_key(keypair(n), Role.USER), keypair(n), 1
            )
            for n in ("c", "d")
        ]
        self.assertTrue(all(r.committed for r in registry.ledger.submit_atomic(group)))
        self.assertEqual(len(registry.ledger.chain), 1)
        self.assertEqual(len(registry.ledger.chain[0].transactions), 2)
        self.assertEqual(len(registry.ledger.pending), 2)


class ReplayTests(SimpleTestCase):
    def build(self):
        registry = Registry(batch_limit=3)
        registry.issuer("a")
        registry.user("v")
        device = registry.device("a", "d")
        vc = registry.node.issue_device_credential(keypair("a"), device, [Claim("m", "x")])
        registry.node.verify_credential(keypair("v"), vc.vc_id)
        registry.node.revoke_credential(keypair("a"), vc.vc_id, "other:lost")
        registry.ledger.flush()
        return registry

    def test_replay_matches_live_state(self):
        registry = self.build()
        state = replay(registry.ledger.chain, registry.genesis)
        self.assertEqual(state.digest(), registry.state.digest())

    def test_identical_runs_agree(self):
        first, second = self.build(), self.build()
        self.assertEqual(first.ledger.state_digest(), second.ledger.state_digest())
        self.assertEqual(first.ledger.chain_digest(), second.ledger.chain_digest())
        self.assertEqual(
            (first.ledger.committed, first.ledger.rejected),
            (second.ledger.committed, second.ledger.rejected),
        )

    def test_tampered_chain_refuses_replay(self):
        registry = self.build()
        chain = list(registry.ledger.chain)
        chain[1] = replace(chain[1], transactions=chain[1].transactions[:-1])
        with self.assertRaises(IntegrityViolation) as ctx:
            replay(chain, registry.genesis)
        self.assertEqual(ctx.exception.height, 1)

    def test_resealed_invalid_block_is_caught(self):
        registry = self.build()
        chain = list(registry.ledger.chain)
        # a block that hashes correctly but repeats an already-applied register
        chain.append(Block.seal(len(chain), chain[-1].block_hash, chain[0].transactions[:1]))
        with self.assertRaises(IntegrityViolation):
            replay(chain, registry.genesis)

    def test_audit_issuance_is_clean(self):
        registry = self.build()
        self.assertEqual(audit_issuance(registry.ledger.chain, registry.genesis), [])


class ResubmissionTests(SimpleTestCase):
    def setUp(self):
        self.registry = Registry()
        self.registry.user("a")
        self.registry.user("v")
        self.device = self.registry.device("a", "d")

    def test_resubmitted_issue_is_rejected(self):
        maker = self.registry.state.identities[did("maker")]
        vc = new_credential(maker, keypair("maker"), did("d"), [Claim("model", "x")], 5)
        tx = build_transaction(TxKind.ISSUE, vc, keypair("maker"), 5)
        ledger = self.registry.ledger
        self.assertTrue(ledger.submit(tx).committed)
        before = ledger.state_digest()
        receipt = ledger.submit(tx)
        self.assertEqual(receipt.reason, RejectReason.DUPLICATE_TRANSACTION)
        self.assertEqual(ledger.state_digest(), before)
        self.assertEqual(ledger.pending.count(tx), 1)

    def test_duplicate_inside_one_group(self):
        record = IdentityRecord.for_key(keypair("c"), Role.USER)
        tx = build_transaction(TxKind.REGISTER, record, keypair("c"), 7)
        receipts = self.registry.ledger.submit_atomic([tx, tx])
        self.assertEqual(receipts[-1].reason, RejectReason.DUPLICATE_TRANSACTION)
        self.assertNotIn(did("c"), self.registry.state.identities)

    def test_repeated_verifications_stay_logged(self):
        node = self.registry.node
        vc = node.issue_device_credential(keypair("maker"), self.device, [Claim("m", "x")])
        node.verify_credential(keypair("v"), vc.vc_id)
        node.verify_credential(keypair("v"), vc.vc_id)
        self.assertEqual(len(self.registry.state.verification_log), 2)

    def test_replay_rebuilds_the_envelope_set(self):
        registry = self.registry
        registry.ledger.flush()
        state = replay(registry.ledger.chain, registry.genesis)
        self.assertEqual(state.committed_envelopes, registry.state.committed_envelopes)


class TransferGuardTests(SimpleTestCase):
    def setUp(self):
        self.registry = Registry()
        self.registry.issuer("alice")
        self.registry.issuer("bob")
        self.hub = self.registry.device("alice", "hub")
        self.vc = self.registry.node.issue_device_credential(
            keypair("alice"), self.hub, [Claim("model", "hub-1")]
        )

    def transfer_tx(self, owner="alice", new_owner="bob", at=50_000):
        transfer = OwnershipTransfer(did("hub"), did(new_owner))
        return build_transaction(TxKind.TRANSFER, transfer, keypair(owner), at)

    def revoke_tx(self, vc_id, owner="alice", at=50_000):
        record = RevocationRecord(
            vc_id, Rationale(RationaleKind.OWNERSHIP_TRANSFER), at, did(owner)
        )
        return build_transaction(TxKind.REVOKE, record, keypair(owner), at)

    def reissue_tx(self, issuer="bob", at=50_000):
        record = self.registry.state.identities[did(issuer)]
        vc = new_credential(record, keypair(issuer), did("hub"), [Claim("model", "hub-1")], at)
        return build_transaction(TxKind.ISSUE, vc, keypair(issuer), at)

    def assertUntouched(self, before):
        self.assertEqual(self.registry.ledger.state_digest(), before)
        self.assertEqual(self.registry.record("hub").owner, did("alice"))
        self.assertEqual(self.registry.ledger.query(self.vc.vc_id), VerifyOutcome.VALID)

    def test_bare_transfer_is_rejected(self):
        before = self.registry.ledger.state_digest()
        receipt = self.registry.ledger.submit(self.transfer_tx())
        self.assertEqual(receipt.reason, RejectReason.INCOMPLETE_TRANSFER)
        self.assertUntouched(before)

    def test_transfer_group_keeping_old_credentials(self):
        before = self.registry.ledger.state_digest()
        receipts = self.registry.ledger.submit_atomic([self.transfer_tx(), self.reissue_tx()])
        self.assertEqual(receipts[-1].reason, RejectReason.INCOMPLETE_TRANSFER)
        self.assertUntouched(before)

    def test_transfer_group_without_reissue(self):
        before = self.registry.ledger.state_digest()
        receipts = self.registry.ledger.submit_atomic(
            [self.revoke_tx(self.vc.vc_id), self.transfer_tx()]
        )
        self.assertEqual(len(receipts), 3)
        self.assertEqual(receipts[-1].reason, RejectReason.INCOMPLETE_TRANSFER)
        self.assertUntouched(before)

    def test_reissue_by_another_issuer(self):
        before = self.registry.ledger.state_digest()
        receipts = self.registry.ledger.submit_atomic(
            [self.revoke_tx(self.vc.vc_id), self.transfer_tx(), self.reissue_tx("maker")]
        )
        self.assertEqual(receipts[-1].reason, RejectReason.NOT_OWNER)
        self.assertUntouched(before)

    def test_complete_group_commits(self):
        reissue = self.reissue_tx()
        receipts = self.registry.ledger.submit_atomic(
            [self.revoke_tx(self.vc.vc_id), self.transfer_tx(), reissue]
        )
        self.assertTrue(all(r.committed for r in receipts))
        self.assertEqual(self.registry.record("hub").owner, did("bob"))
        self.assertEqual(self.registry.state.awaiting_reissue, {})
        self.assertEqual(
            self.registry.ledger.query(reissue.payload.vc_id), VerifyOutcome.VALID
        )

    def test_replayed_transfer_group_cannot_take_the_device_back(self):
        ledger = self.registry.ledger
        node = self.registry.node
        with mock.patch.object(ledger, "submit_atomic", wraps=ledger.submit_atomic) as spy:
            node.transfer_ownership(keypair("alice"), self.registry.record("bob"), keypair("bob"), self.hub)
        captured = spy.call_args.args[0]
        node.transfer_ownership(
            keypair("bob"), self.registry.record("alice"), keypair("alice"), self.registry.record("hub")
        )
        before = ledger.state_digest()
        receipts = ledger.submit_atomic(captured)
        self.assertEqual(receipts[-1].reason, RejectReason.DUPLICATE_TRANSACTION)
        transfer = next(tx for tx in captured if tx.kind is TxKind.TRANSFER)
        self.assertEqual(ledger.submit(transfer).reason, RejectReason.INCOMPLETE_TRANSFER)
        self.assertEqual(ledger.state_digest(), before)
        self.assertEqual(self.registry.record("hub").owner, did("alice"))


class SealCallbackTests(SimpleTestCase):
    def build(self):
        registry = Registry(batch_limit=2)
        registry.issuer("alice")
        registry.issuer("bob")
        hub = registry.device("alice", "hub")
        registry.node.issue_device_credential(keypair("alice"), hub, [Claim("model", "hub-1")])
        return registry, hub

    def test_failing_callback_keeps_log_and_state_in_step(self):
        registry, hub = self.build()

        def broken(block):
            raise RuntimeError("index backend down")

        registry.ledger.on_seal.append(broken)
        with self.assertLogs("registry.ledger", level="ERROR") as logs:
            new_vc = registry.node.transfer_ownership(
                keypair("alice"), registry.record("bob"), keypair("bob"), hub
            )
            registry.ledger.flush()
        self.assertIn("seal callback failed", logs.output[0])
        self.assertEqual(registry.record("hub").owner, did("bob"))
        self.assertEqual(registry.ledger.pending, [])
        state = replay(registry.ledger.chain, registry.genesis)
        self.assertEqual(state.digest(), registry.state.digest())
        self.assertEqual(state.check_credential(new_vc.vc_id), VerifyOutcome.VALID)

    def test_callbacks_run_outside_the_writer_lock(self):
        registry, _ = self.build()
        seen = []

        def read_from_another_thread(block):
            worker = threading.Thread(target=lambda: seen.append(registry.ledger.state_digest()))
            worker.start()
            worker.join(timeout=5)

        registry.ledger.on_seal.append(read_from_another_thread)
        registry.user("carol")
        registry.user("dave")
        self.assertTrue(seen)
