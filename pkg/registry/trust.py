"""
Web of trust: endorsement graph, weighted direct trust, chain propagation,
threshold onboarding, linkage discovery and proxy issuers.

Resolution rule used everywhere a score is needed:

* manufacturers (roots) score 1.0;
* a subject endorsed directly by at least one manufacturer gets the weighted
  mean of all its incoming endorsements, each weighted by the endorser's own
  score;
* any other subject gets the best product over simple root-to-subject chains
  of the intermediate issuers' scores times the final endorsement;
* a subject no root reaches scores 0.0.

While a subject is being scored it is removed from the graph its evidence is
computed on, which is what keeps the recursion finite on cyclic graphs.
"""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from types import MappingProxyType

from .exceptions import (
    InvalidEndorsement,
    InvalidValue,
    NoEndorsements,
    NoTrustLinkage,
    NotAManufacturer,
    ProxyTrustTooLow,
    SelfEndorsement,
    UnknownPrincipal,
)
from .identity import DID, Role, verify_signed

logger = logging.getLogger(__name__)

DEFAULT_TAU = 0.5
_EMPTY = frozenset()


@dataclass(frozen=True)
class TrustScore:
    value: float

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise InvalidValue(f"trust score {self.value} outside [0, 1]")

    def __float__(self):
        return float(self.value)


@dataclass(frozen=True)
class Threshold:
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        tau = float(self.tau)
        if not 0.0 < tau <= 1.0:
            raise InvalidValue("tau must lie in (0, 1]")
        object.__setattr__(self, "tau", tau)


@dataclass(frozen=True)
class TrustPath:
    chain: tuple
    score: TrustScore
    factors: tuple = ()

    TYPE = "trust_path"

    def __post_init__(self):
        object.__setattr__(self, "chain", tuple(self.chain))
        if not self.chain:
            raise InvalidValue("a trust path names at least one principal")
        if len(set(self.chain)) != len(self.chain):
            raise InvalidValue("a trust path never repeats a principal")

    @property
    def anchor(self):
        return self.chain[0]

    @property
    def subject(self):
        return self.chain[-1]

    def edges(self):
        return list(zip(self.chain, self.chain[1:]))

    def to_map(self):
        return {
            "type": self.TYPE,
            "chain": [str(did) for did in self.chain],
            "score": self.score.value,
        }

    @classmethod
    def from_map(cls, data):
        return cls(
            chain=tuple(DID.parse(text) for text in data["chain"]),
            score=TrustScore(float(data["score"])),
        )


@dataclass(frozen=True)
class Decision:
    admit: bool
    score: TrustScore


@dataclass(frozen=True, eq=False)
class TrustGraph:
    """Immutable endorsement graph; every update returns a new graph."""

    nodes: MappingProxyType
    edges: MappingProxyType
    proxies: MappingProxyType = field(default_factory=lambda: MappingProxyType({}))
    revision: int = 0

    @classmethod
    def empty(cls):
        return cls(nodes=MappingProxyType({}), edges=MappingProxyType({}))

    @classmethod
    def with_roots(cls, roots):
        return cls(
            nodes=MappingProxyType({did: Role.MANUFACTURER for did in roots}),
            edges=MappingProxyType({}),
        )

    @cached_property
    def roots(self):
        return frozenset(
            did for did, role in self.nodes.items() if role is Role.MANUFACTURER
        )

    @cached_property
    def incoming(self):
        table = {}
        for (_, subject), endorsement in self.edges.items():
            table.setdefault(subject, []).append(endorsement)
        return {
            subject: tuple(sorted(items, key=lambda e: str(e.endorser)))
            for subject, items in table.items()
        }

    @cached_property
    def outgoing(self):
        table = {}
        for (endorser, _), endorsement in self.edges.items():
            table.setdefault(endorser, []).append(endorsement)
        return {
            endorser: tuple(sorted(items, key=lambda e: str(e.subject)))
            for endorser, items in table.items()
        }

    @cached_property
    def ancestors(self):
        """Nodes from which each node can be reached along endorsements."""
        result = {}
        for did in self.nodes:
            seen = set()
            stack = [did]
            while stack:
                current = stack.pop()
                for endorsement in self.incoming.get(current, ()):
                    if endorsement.endorser not in seen:
                        seen.add(endorsement.endorser)
                        stack.append(endorsement.endorser)
            result[did] = frozenset(seen)
        return result

    @cached_property
    def evaluator(self):
        return _Evaluator(self)

    def edge(self, endorser, subject):
        return self.edges.get((endorser, subject))

    def is_proxy(self, did):
        return did in self.proxies

    def _evolve(self, **changes):
        return replace(self, revision=self.revision + 1, **changes)

    def with_node(self, did, role):
        if did in self.nodes:
            return self
        nodes = dict(self.nodes)
        nodes[did] = Role(role)
        return self._evolve(nodes=MappingProxyType(nodes))

    def with_edge(self, endorsement):
        edges = dict(self.edges)
        edges[(endorsement.endorser, endorsement.subject)] = endorsement
        return self._evolve(edges=MappingProxyType(edges))

    def with_proxy(self, did, min_trust):
        proxies = dict(self.proxies)
        proxies[did] = float(min_trust)
        return self._evolve(proxies=MappingProxyType(proxies))

    def to_map(self):
        return {
            "type": "trust_graph",
            "nodes": {str(did): role.value for did, role in sorted(self.nodes.items())},
            "edges": [
                self.edges[key].to_map()
                for key in sorted(self.edges, key=lambda k: (str(k[0]), str(k[1])))
            ],
            "proxies": {str(did): tau for did, tau in sorted(self.proxies.items())},
        }


class _Evaluator:
    """Memoized scores and witness chains for one graph revision."""

    def __init__(self, graph):
        self.graph = graph
        self._scores = {}
        self._chains = {}
        # issuer DID -> whether its current linkage re-verified
        self.linkage_checks = {}

    def _key(self, did, excluded):
        return did, excluded & self.graph.ancestors.get(did, _EMPTY)

    def score(self, did, excluded=_EMPTY):
        if did in excluded:
            return 0.0
        key = self._key(did, excluded)
        cached = self._scores.get(key)
        if cached is not None:
            return cached
        graph = self.graph
        if did not in graph.nodes:
            value = 0.0
        elif did in graph.roots:
            value = 1.0
        elif self.has_root_endorsement(did):
            value = self.direct(did, excluded) or 0.0
        else:
            found = self.best_chain(did, excluded)
            value = found[0] if found else 0.0
        self._scores[key] = value
        return value

    def has_root_endorsement(self, did):
        return any(
            e.endorser in self.graph.roots for e in self.graph.incoming.get(did, ())
        )

    def direct(self, did, excluded=_EMPTY):
        incoming = [
            e for e in self.graph.incoming.get(did, ()) if e.endorser not in excluded
        ]
        if not incoming:
            return None
        inner = excluded | {did}
        total = 0.0
        for endorsement in incoming:
            total += self.score(endorsement.endorser, inner) * endorsement.score
        return total / len(incoming)

    def best_chain(self, target, excluded=_EMPTY):
        """Best-first search for the maximum-product simple chain to ``target``.

        Returns ``(score, chain, factors)`` or ``None`` when no root reaches it.
        Intermediate scores are computed lazily: a node enters the frontier
        with its predecessor's product as an upper bound and is only scored
        once that bound reaches the top of the heap.
        """
        key = self._key(target, excluded)
        if key in self._chains:
            return self._chains[key]
        graph = self.graph
        blocked = excluded | {target}
        useful = graph.ancestors.get(target, _EMPTY)
        frontier = []
        # entries: (-value, rank, length, names, chain, factors)
        # rank 0 = terminal chain to target, 1 = exact node, 2 = bound only
        for root in sorted(graph.roots, key=str):
            if root in blocked:
                continue
            heapq.heappush(frontier, (-1.0, 1, 1, (str(root),), (root,), ()))
        settled = set()
        result = None
        while frontier:
            negative, rank, _, names, chain, factors = heapq.heappop(frontier)
            value = -negative
            node = chain[-1]
            if rank == 0:
                result = (value, chain, factors)
                break
            if node in settled:
                continue
            if rank == 2:
                weight = self.score(node, blocked)
                exact = value * weight
                heapq.heappush(
                    frontier,
                    (-exact, 1, len(chain), names, chain, factors + (weight,)),
                )
                continue
            settled.add(node)
            for endorsement in graph.outgoing.get(node, ()):
                nxt = endorsement.subject
                step = (
                    len(chain) + 1,
                    names + (str(nxt),),
                    chain + (nxt,),
                )
                if nxt == target:
                    final = value * endorsement.score
                    heapq.heappush(
                        frontier, (-final, 0, *step, factors + (endorsement.score,))
                    )
                elif (
                    nxt in blocked
                    or nxt in graph.roots
                    or nxt in settled
                    or nxt not in useful
                ):
                    continue
                else:
                    heapq.heappush(frontier, (-value, 2, *step, factors))
        self._chains[key] = result
        return result


def register_principal(graph, did, role):
    if Role(role) is Role.DEVICE:
        raise InvalidValue("devices are not issuers and stay out of the web of trust")
    return graph.with_node(did, role)


def add_endorsement(graph, e, endorser_key):
    """Insert or replace the (endorser, subject) edge; the newer endorsement wins."""
    if e.endorser == e.subject:
        raise SelfEndorsement(f"{e.endorser} cannot endorse itself")
    if e.endorser not in graph.nodes or e.subject not in graph.nodes:
        raise UnknownPrincipal("both parties of an endorsement must be registered")
    if not verify_signed(e, endorser_key):
        raise InvalidEndorsement("endorsement signature does not verify")
    current = graph.edge(e.endorser, e.subject)
    if current is not None and current.endorsed_at > e.endorsed_at:
        return graph
    return graph.with_edge(e)


def direct_trust(graph, subject) -> TrustScore:
    if subject in graph.roots:
        return TrustScore(1.0)
    value = graph.evaluator.direct(subject)
    if value is None:
        raise NoEndorsements(f"{subject} has no endorsements")
    return TrustScore(value)


def propagated_trust(graph, subject):
    """Best chain from any root to ``subject``: ``(TrustScore, TrustPath)``."""
    if subject in graph.roots:
        return TrustScore(1.0), TrustPath((subject,), TrustScore(1.0))
    found = graph.evaluator.best_chain(subject)
    if found is None:
        raise NoTrustLinkage(f"no root reaches {subject}")
    value, chain, factors = found
    score = TrustScore(value)
    return score, TrustPath(chain, score, factors)


def trust_score(graph, subject) -> TrustScore:
    return TrustScore(graph.evaluator.score(subject))


def is_onboardable(graph, subject, t: Threshold) -> Decision:
    score = trust_score(graph, subject)
    return Decision(admit=score.value >= t.tau, score=score)


def find_trust_linkage(graph, subject) -> TrustPath:
    evaluator = graph.evaluator
    if subject in graph.roots:
        return TrustPath((subject,), TrustScore(1.0))
    if evaluator.has_root_endorsement(subject):
        best = min(
            (e for e in graph.incoming[subject] if e.endorser in graph.roots),
            key=lambda e: (-e.score, str(e.endorser)),
        )
        return TrustPath(
            (best.endorser, subject), trust_score(graph, subject), (best.score,)
        )
    return propagated_trust(graph, subject)[1]


def designate_proxy(graph, manufacturer, proxy, min_trust: Threshold):
    if manufacturer not in graph.roots:
        raise NotAManufacturer(f"{manufacturer} is not a manufacturer")
    if proxy not in graph.nodes:
        raise UnknownPrincipal(f"{proxy} is not registered")
    score = trust_score(graph, proxy)
    if score.value < min_trust.tau:
        raise ProxyTrustTooLow(
            f"{proxy} scores {score.value:.3f}, below {min_trust.tau:.3f}"
        )
    logger.info("designated proxy issuer %s (score %.3f)", proxy, score.value)
    return graph.with_proxy(proxy, min_trust.tau)


def check_linkage(graph, path: TrustPath, keys):
    """Recheck a claimed linkage against ``graph``.

    Every consecutive pair must be an endorsement edge whose signature
    verifies under the endorser's key from ``keys``. A chain may start at a
    root or at a designated proxy whose current score still meets the bar it
    was designated with; a proxy-anchored chain is completed with the proxy's
    own best linkage. Returns the full root-anchored chain, or ``None`` when
    the evidence does not hold.
    """
    chain = path.chain
    anchor = chain[0]
    if anchor in graph.roots:
        prefix = ()
    elif graph.is_proxy(anchor):
        if trust_score(graph, anchor).value < graph.proxies[anchor]:
            return None
        try:
            prefix = find_trust_linkage(graph, anchor).chain[:-1]
        except NoTrustLinkage:
            return None
    else:
        return None
    full = prefix + chain
    if len(set(full)) != len(full):
        return None
    for endorser, subject in zip(full, full[1:]):
        edge = graph.edge(endorser, subject)
        key = keys.get(endorser)
        if edge is None or key is None or not verify_signed(edge, key):
            return None
    return full
