"""Shared fixtures for the registry tests."""

import hashlib

from registry.crypto import generate_keypair
from registry.identity import DID, Claim, Endorsement, IdentityRecord, Role
from registry.ledger import Genesis, Ledger, Mode
from registry.orchestrator import LogicalClock, Node
from registry.storage import create_ledger
from registry.trust import TrustGraph


def keypair(label):
    return generate_keypair(hashlib.sha256(f"test:{label}".encode()).digest())


def did(label):
    return DID.from_key(keypair(label))


def graph_of(roots, users, edges):
    """Unsigned endorsement graph; ``edges`` holds (endorser, subject, score)."""
    graph = TrustGraph.with_roots(did(name) for name in roots)
    for name in users:
        graph = graph.with_node(did(name), Role.USER)
    for stamp, (endorser, subject, score) in enumerate(edges):
        graph = graph.with_edge(Endorsement(did(endorser), did(subject), score, stamp))
    return graph


class Registry:
    """In-memory ledger and node with named keys, for flow tests."""

    def __init__(self, manufacturers=("maker",), tau=0.5, batch_limit=16, mode=Mode.ENDORSEMENT):
        self.genesis = Genesis(
            manufacturers=tuple(
                IdentityRecord.for_key(keypair(name), Role.MANUFACTURER)
                for name in manufacturers
            ),
            tau=tau,
            batch_limit=batch_limit,
            mode=mode,
        )
        self.ledger = Ledger(self.genesis)
        self.clock = LogicalClock()
        self.node = Node(self.ledger, clock=self.clock)

    @property
    def state(self):
        return self.ledger.state

    def key(self, name):
        return keypair(name)

    def did(self, name):
        return did(name)

    def record(self, name):
        return self.state.identities[did(name)]

    def user(self, name):
        return self.node.register_user(keypair(name))

    def issuer(self, name, endorser="maker", score=0.9):
        """Register, endorse and onboard ``name``."""
        record = self.user(name)
        self.node.endorse(keypair(endorser), record.did, score)
        self.node.onboard_issuer(record, keypair(name))
        return record

    def device(self, owner, name, device_type="strong"):
        return self.node.register_device(keypair(owner), keypair(name), device_type)


def seed_ledger_file(path, batch_limit=2):
    """Ledger file with maker, an onboarded alice and her credentialed hub."""
    genesis = Genesis(
        manufacturers=(IdentityRecord.for_key(keypair("maker"), Role.MANUFACTURER),),
        batch_limit=batch_limit,
    )
    node = Node(create_ledger(path, genesis), clock=LogicalClock())
    alice = node.register_user(keypair("alice"))
    node.endorse(keypair("maker"), alice.did, 0.9)
    node.onboard_issuer(alice, keypair("alice"))
    hub = node.register_device(keypair("alice"), keypair("hub"), "strong")
    vc = node.issue_device_credential(keypair("alice"), hub, [Claim("model", "hub-1")])
    node.ledger.flush()
    return node, vc
