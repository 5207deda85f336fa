"""Circular (neighborhood-hashing) fingerprints and Tanimoto similarity."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from molgram.errors import LengthMismatch, NonTerminalPresent
from molgram.molgraph.core import OrderedMolGraph, is_terminal


def _stable_hash(parts: tuple) -> int:
    data = repr(parts).encode()
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "big")


@dataclass(frozen=True)
class Fingerprint:
    bits: int  # bitmask over nbits positions
    nbits: int
    radius: int

    def popcount(self) -> int:
        return self.bits.bit_count()

    def on_bits(self) -> list[int]:
        return [i for i in range(self.nbits) if self.bits >> i & 1]


def circular_fingerprint(g: OrderedMolGraph, radius: int = 2,
                         nbits: int = 2048) -> Fingerprint:
    """Iterative neighborhood hashing over atom environments.

    The round-0 invariant of an atom is (element, charge, degree, total bond
    order); each round rehashes it together with the sorted (bond order,
    neighbor invariant) pairs.  Every intermediate invariant sets one bit.
    Invariant under renumbering of the input nodes.
    """
    live = g.live_nodes()
    for v in live:
        if not is_terminal(g.node_labels[v]):
            raise NonTerminalPresent(f"node {v} is not a terminal atom")
    invariants = {}
    for v in live:
        lab = g.node_labels[v]
        invariants[v] = _stable_hash(
            ("atom", lab.element, lab.charge, g.degree(v), g.bond_order_sum(v))
        )
    bits = 0
    for v in live:
        bits |= 1 << (invariants[v] % nbits)
    for _ in range(radius):
        updated = {}
        for v in live:
            env = sorted(
                (label, invariants[w]) for (_, w, label) in g.star(v)
            )
            updated[v] = _stable_hash(("env", invariants[v], tuple(env)))
        invariants = updated
        for v in live:
            bits |= 1 << (invariants[v] % nbits)
    return Fingerprint(bits=bits, nbits=nbits, radius=radius)


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    """Intersection over union of the two bitsets; 1.0 when both are empty."""
    if a.nbits != b.nbits:
        raise LengthMismatch(f"fingerprint lengths differ: {a.nbits} != {b.nbits}")
    union = (a.bits | b.bits).bit_count()
    if union == 0:
        return 1.0
    return (a.bits & b.bits).bit_count() / union
