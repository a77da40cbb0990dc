"""Randomized lifecycle workloads checked for soundness after every step."""

import random

from django.test import SimpleTestCase

from registry.exceptions import RegistryError
from registry.identity import Claim, DeviceType
from registry.ledger import (
    OwnershipTransfer,
    Status,
    TxKind,
    VerifyOutcome,
    audit_issuance,
    build_transaction,
    replay,
)
from registry.trust import trust_score

from .helpers import Registry, did, keypair

SEEDS = range(20)
MIN_TRANSACTIONS = 500
SCORES = (0.2, 0.45, 0.55, 0.7, 0.8, 0.9, 1.0)


class LifecycleRun:
    def __init__(self, seed):
        self.rng = random.Random(seed)
        self.registry = Registry(manufacturers=("m0", "m1"), tau=0.5, batch_limit=8)
        self.node = self.registry.node
        self.ledger = self.registry.ledger
        self.manufacturers = ["m0", "m1"]
        self.names = {did(name): name for name in self.manufacturers}
        self.users = []
        self.devices = []
        self.credentials = []
        self.bindings = []
        self.revoked = set()
        self.violations = []
        self.serial = 0
        self.groups = []
        self.submit_atomic = self.ledger.submit_atomic
        self.ledger.submit_atomic = self.recording_submit_atomic

    def recording_submit_atomic(self, transactions):
        transactions = list(transactions)
        receipts = self.submit_atomic(transactions)
        if receipts[-1].committed:
            self.groups.append(transactions)
        return receipts

    @property
    def state(self):
        return self.ledger.state

    def fresh(self, prefix):
        self.serial += 1
        return f"{prefix}{self.serial}"

    def pick(self, items):
        return self.rng.choice(items) if items else None

    def attempt(self, fn, *args):
        try:
            return fn(*args)
        except RegistryError:
            return None

    def violation(self, message):
        self.violations.append(message)

    # -- operations -------------------------------------------------------

    def op_register_user(self):
        name = self.fresh("u")
        if self.attempt(self.node.register_user, keypair(name)):
            self.users.append(name)
            self.names[did(name)] = name

    def op_register_device(self):
        owner = self.pick(self.users + self.manufacturers)
        name = self.fresh("d")
        device_type = self.rng.choice([DeviceType.STRONG, DeviceType.WEAK])
        if self.attempt(self.node.register_device, keypair(owner), keypair(name), device_type):
            self.devices.append(name)
            self.names[did(name)] = name

    def op_endorse(self):
        pool = self.manufacturers if self.rng.random() < 0.5 else self.users
        endorser = self.pick(pool)
        subject = self.pick(self.users)
        if subject is None:
            return
        self.attempt(self.node.endorse, keypair(endorser), did(subject), self.rng.choice(SCORES))

    def op_onboard(self):
        user = self.pick(self.users)
        if user is None:
            return
        self.attempt(self.node.onboard_issuer, self.state.identities[did(user)], keypair(user))

    def op_issue(self):
        issuer = self.pick(self.users + self.manufacturers)
        device = self.pick(self.devices)
        if device is None:
            return
        state = self.state
        authorized = state.is_manufacturer(did(issuer)) or (
            did(issuer) in state.onboarded_issuers
            and trust_score(state.graph, did(issuer)).value >= state.threshold.tau
        )
        vc = self.attempt(
            self.node.issue_device_credential,
            keypair(issuer),
            state.identities[did(device)],
            [Claim("serial", self.fresh("s"))],
        )
        if vc is not None:
            if not authorized:
                self.violation(f"unauthorized issue by {issuer}")
            self.credentials.append(vc)

    def op_verify(self):
        vc = self.pick(self.credentials)
        verifier = self.pick(self.users)
        if vc is None or verifier is None:
            return
        outcome = self.attempt(self.node.verify_credential, keypair(verifier), vc.vc_id)
        if vc.vc_id in self.revoked and outcome is not None and outcome is not VerifyOutcome.REVOKED:
            self.violation(f"revoked {vc.vc_id} verified as {outcome}")

    def op_revoke(self):
        vc = self.pick(self.credentials)
        if vc is None:
            return
        holder = self.state.identities[vc.holder]
        candidates = [self.names[vc.issuer], self.names[holder.owner], self.pick(self.users)]
        name = self.rng.choice([c for c in candidates if c is not None])
        receipt = self.attempt(
            self.node.revoke_credential, keypair(name), vc.vc_id, self.rng.choice(["stolen", "compromised"])
        )
        if receipt is not None:
            self.revoked.add(vc.vc_id)

    def op_authenticate(self):
        vc = self.pick(self.credentials)
        if vc is None:
            return
        device = self.names[vc.holder]
        responder = device if self.rng.random() < 0.9 else self.pick(self.devices)
        challenge = self.node.issue_challenge(did(self.pick(self.users) or "m0"))
        invalid_at_challenge = self.ledger.query(vc.vc_id) is not VerifyOutcome.VALID
        result = self.node.authenticate(keypair(responder), vc, challenge)
        if result.accepted and invalid_at_challenge:
            self.violation(f"accepted invalid {vc.vc_id}")
        if result.accepted and self.node.authenticate(keypair(responder), vc, challenge).accepted:
            self.violation("nonce accepted twice")

    def op_bind(self):
        strong = [n for n in self.devices if self.state.identities[did(n)].device_type is DeviceType.STRONG]
        weak = [n for n in self.devices if self.state.identities[did(n)].device_type is DeviceType.WEAK]
        if not strong or not weak:
            return
        hub, sensor = self.rng.choice(strong), self.rng.choice(weak)
        owner_did = self.state.identities[did(hub)].owner
        owner = self.names[owner_did]
        binding = self.attempt(
            self.node.bind_weak_device,
            keypair(owner),
            self.state.identities[did(hub)],
            self.state.identities[did(sensor)],
        )
        if binding is not None:
            self.bindings.append((hub, binding))

    def op_delegate(self):
        if not self.bindings:
            return
        hub, binding = self.rng.choice(self.bindings)
        weak_vcs = [vc for vc in self.credentials if vc.holder == binding.weak]
        if not weak_vcs:
            return
        weak_vc = self.rng.choice(weak_vcs)
        bound = self.state.active_binding(did(hub), binding.weak)
        challenge = self.node.issue_challenge(did("m0"))
        result = self.node.delegated_authenticate(keypair(hub), binding, weak_vc, challenge)
        if result.accepted and (bound is None or bound.credential.vc_id != binding.credential_id):
            self.violation("delegation accepted without an active binding")

    def op_transfer(self):
        device = self.pick(self.devices)
        new_owner = self.pick(self.users + self.manufacturers)
        if device is None:
            return
        state = self.state
        record = state.identities[did(device)]
        old_owner = self.names[record.owner]
        before_owner = record.owner
        before_active = {e.credential.vc_id for e in state.active_credentials(did(device))}
        new_vc = self.attempt(
            self.node.transfer_ownership,
            keypair(old_owner),
            self.state.identities[did(new_owner)],
            keypair(new_owner),
            record,
        )
        after = self.state
        owner = after.identities[did(device)].owner
        active = {e.credential.vc_id for e in after.active_credentials(did(device))}
        if new_vc is None:
            if owner != before_owner or active != before_active:
                self.violation(f"failed transfer of {device} left partial state")
            return
        self.credentials.append(new_vc)
        self.revoked |= before_active
        if owner != did(new_owner) or active != {new_vc.vc_id}:
            self.violation(f"transfer of {device} incomplete")
        if any(after.credentials[vc_id].status is not Status.REVOKED for vc_id in before_active):
            self.violation(f"transfer of {device} kept an old credential")

    def op_hijack_transfer(self):
        """Bare or replayed transfers must never move a device."""
        if self.groups and self.rng.random() < 0.5:
            group = self.rng.choice(self.groups)
            replayed = True
        else:
            device = self.pick(self.devices)
            new_owner = self.pick(self.users)
            if device is None or new_owner is None:
                return
            owner = self.names[self.state.identities[did(device)].owner]
            transfer = OwnershipTransfer(did(device), did(new_owner))
            group = [
                build_transaction(
                    TxKind.TRANSFER, transfer, keypair(owner), self.registry.clock.now()
                )
            ]
            replayed = False
        devices = [tx.payload.device for tx in group if tx.kind is TxKind.TRANSFER]
        before = {device: self.snapshot(device) for device in devices}
        receipts = self.submit_atomic(group) if replayed else [self.ledger.submit(group[0])]
        if receipts[-1].committed:
            self.violation("a bare or replayed transfer committed")
        for device, snapshot in before.items():
            if self.snapshot(device) != snapshot:
                self.violation(f"hijacked transfer moved {device}")

    def snapshot(self, device):
        state = self.state
        active = {e.credential.vc_id for e in state.active_credentials(device)}
        return state.identities[device].owner, active

    OPERATIONS = (
        (op_register_user, 4),
        (op_register_device, 4),
        (op_endorse, 5),
        (op_onboard, 3),
        (op_issue, 6),
        (op_verify, 3),
        (op_revoke, 3),
        (op_authenticate, 4),
        (op_bind, 1),
        (op_delegate, 2),
        (op_transfer, 2),
        (op_hijack_transfer, 1),
    )

    def check_absorbing(self):
        for vc_id in self.revoked:
            if self.state.credentials[vc_id].status is not Status.REVOKED:
                self.violation(f"{vc_id} came back from revocation")

    def run(self, minimum=MIN_TRANSACTIONS):
        for _ in range(3):
            self.op_register_user()
        operations, weights = zip(*self.OPERATIONS)
        while self.ledger.committed + self.ledger.rejected < minimum:
            operation = self.rng.choices(operations, weights)[0]
            operation(self)
            self.check_absorbing()
        self.ledger.flush()
        return self


class LifecycleSoundnessTests(SimpleTestCase):
    def test_seeded_workloads(self):
        for seed in SEEDS:
            with self.subTest(seed=seed):
                run = LifecycleRun(seed).run()
                ledger = run.ledger
                self.assertEqual(run.violations, [])
                self.assertGreaterEqual(ledger.committed + ledger.rejected, MIN_TRANSACTIONS)
                self.assertGreater(ledger.rejected, 0)
                self.assertEqual(audit_issuance(ledger.chain, run.registry.genesis), [])
                self.assertEqual(
                    replay(ledger.chain, run.registry.genesis).digest(), ledger.state.digest()
                )

    def test_runs_are_reproducible(self):
        first = LifecycleRun(3).run(200)
        second = LifecycleRun(3).run(200)
        self.assertEqual(first.ledger.state_digest(), second.ledger.state_digest())
        self.assertEqual(first.ledger.chain_digest(), second.ledger.chain_digest())
        self.assertEqual(
            (first.ledger.committed, first.ledger.rejected),
            (second.ledger.committed, second.ledger.rejected),
        )
