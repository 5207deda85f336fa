"""Molecular graph data model: labeled nodes/edges with per-node edge order.

Molecule graphs are simple (no parallel edges, no self loops) and carry only
terminal atom labels and Kekule bond orders.  Intermediate rewrite graphs built
by the derivation engine reuse the same class but may contain placeholder
nodes and parallel placeholder edges; the validators here are only defined for
terminal molecule graphs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from molgram.errors import DataError, NonTerminalPresent

# Node placeholder labels. Terminal nodes carry an AtomLabel instead.
NT_X = "x"        # unexpanded component placeholder
NT_NS = "ns"      # atom slot inside a multi-atom skeleton
NT_START = "s"    # initial symbol

CHIRALITIES = ("none", "cw", "ccw")

# Bond labels are small ints: 1/2/3 = single/double/triple, 0 = the empty
# (placeholder) edge label used inside rule skeletons.
EPS_EDGE = 0
BOND_ORDERS = (1, 2, 3)

ORGANIC_ELEMENTS = ("B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I")

# Allowed total bond order per element, lowest first; an atom may use any
# value in its tuple, implicit hydrogens fill up to the smallest that fits.
VALENCES = {
    "B": (3,),
    "C": (4,),
    "N": (3,),
    "O": (2,),
    "P": (3, 5),
    "S": (2, 4, 6),
    "F": (1,),
    "Cl": (1,),
    "Br": (1,),
    "I": (1,),
}

# Charge-adjusted valences for the common onium / oxide cases.
CHARGED_VALENCES = {
    ("N", 1): (4,),
    ("O", 1): (3,),
    ("N", -1): (2,),
    ("O", -1): (1,),
}

ATOMIC_MASS = {
    "H": 1.008,
    "B": 10.811,
    "C": 12.011,
    "N": 14.007,
    "O": 15.999,
    "F": 18.998,
    "P": 30.974,
    "S": 32.06,
    "Cl": 35.453,
    "Br": 79.904,
    "I": 126.904,
}


@dataclass(frozen=True, order=True)
class AtomLabel:
    """Terminal node label: element symbol, formal charge, chirality tag."""

    element: str
    charge: int = 0
    chirality: str = "none"

    def __post_init__(self):
        if self.element not in ORGANIC_ELEMENTS:
            raise ValueError(f"element {self.element!r} outside the supported set")
        if not -2 <= self.charge <= 2:
            raise ValueError(f"charge {self.charge} outside [-2, 2]")
        if self.chirality not in CHIRALITIES:
            raise ValueError(f"unknown chirality tag {self.chirality!r}")


NodeLabel = AtomLabel | str  # AtomLabel for terminals, NT_* strings otherwise


def is_terminal(label: NodeLabel) -> bool:
    return isinstance(label, AtomLabel)


def max_valence(element: str, charge: int) -> int:
    allowed = CHARGED_VALENCES.get((element, charge))
    if allowed is None:
        allowed = VALENCES[element]
    return allowed[-1]


def effective_valence(element: str, charge: int, bond_sum: int) -> int | None:
    """Smallest allowed valence >= bond_sum, or None if the atom is overbonded."""
    allowed = CHARGED_VALENCES.get((element, charge))
    if allowed is None:
        allowed = VALENCES[element]
    for v in allowed:
        if bond_sum <= v:
            return v
    return None


@dataclass
class ValidityReport:
    valid: bool
    violations: list[tuple[int, str]] = field(default_factory=list)


class OrderedMolGraph:
    """Node/edge-labeled graph with an ordered incident-edge list per node.

    Edges are stored as indexed records so the incident lists can reference
    them stably; removed nodes/edges leave tombstones until ``compact`` is
    called.  The incident list order is significant: it encodes the edge
    ordering used by grammar context matching.
    """

    def __init__(self):
        self.node_labels: list[NodeLabel | None] = []
        self.edges: list[tuple[int, int, int] | None] = []  # (u, v, label)
        self.incident: list[list[int] | None] = []  # node id -> ordered edge ids

    # -- construction ------------------------------------------------------

    def add_node(self, label: NodeLabel) -> int:
        self.node_labels.append(label)
        self.incident.append([])
        return len(self.node_labels) - 1

    def add_edge(self, u: int, v: int, label: int) -> int:
        if u == v:
            raise ValueError("self loops are not allowed")
        eid = len(self.edges)
        self.edges.append((u, v, label))
        self.incident[u].append(eid)
        self.incident[v].append(eid)
        return eid

    def copy(self) -> "OrderedMolGraph":
        g = OrderedMolGraph.__new__(OrderedMolGraph)
        g.node_labels = list(self.node_labels)
        g.edges = list(self.edges)
        g.incident = [None if lst is None else list(lst) for lst in self.incident]
        return g

    # -- queries -----------------------------------------------------------

    def live_nodes(self) -> list[int]:
        return [i for i, lab in enumerate(self.node_labels) if lab is not None]

    @property
    def n_nodes(self) -> int:
        return sum(1 for lab in self.node_labels if lab is not None)

    @property
    def n_edges(self) -> int:
        return sum(1 for e in self.edges if e is not None)

    def edge_other(self, eid: int, v: int) -> int:
        u, w, _ = self.edges[eid]
        return w if u == v else u

    def edge_label(self, eid: int) -> int:
        return self.edges[eid][2]

    def star(self, v: int) -> list[tuple[int, int, int]]:
        """Incident edges of v in order, as (edge id, other endpoint, label)."""
        return [
            (eid, self.edge_other(eid, v), self.edges[eid][2])
            for eid in self.incident[v]
        ]

    def neighbors(self, v: int) -> list[int]:
        return [self.edge_other(eid, v) for eid in self.incident[v]]

    def degree(self, v: int) -> int:
        return len(self.incident[v])

    def bond_order_sum(self, v: int) -> int:
        return sum(self.edges[eid][2] for eid in self.incident[v])

    def edge_between(self, u: int, v: int) -> int | None:
        for eid in self.incident[u]:
            if self.edge_other(eid, u) == v:
                return eid
        return None

    def is_terminal_graph(self) -> bool:
        return all(
            lab is None or is_terminal(lab) for lab in self.node_labels
        )

    def is_connected(self) -> bool:
        live = self.live_nodes()
        if not live:
            return True
        seen = {live[0]}
        stack = [live[0]]
        while stack:
            v = stack.pop()
            for w in self.neighbors(v):
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return len(seen) == len(live)

    # -- mutation (used by the derivation engine) ---------------------------

    def remove_node(self, v: int):
        for eid in list(self.incident[v]):
            self.remove_edge(eid)
        self.node_labels[v] = None
        self.incident[v] = None

    def remove_edge(self, eid: int):
        u, v, _ = self.edges[eid]
        self.incident[u].remove(eid)
        self.incident[v].remove(eid)
        self.edges[eid] = None

    def compact(self) -> "OrderedMolGraph":
        """Renumber live nodes densely (0..n-1), dropping tombstones."""
        remap = {}
        g = OrderedMolGraph()
        for old in self.live_nodes():
            remap[old] = g.add_node(self.node_labels[old])
        edge_remap = {}
        for old in self.live_nodes():
            for eid in self.incident[old]:
                if eid in edge_remap:
                    continue
                u, v, lab = self.edges[eid]
                # register edge; incident order fixed up below
                edge_remap[eid] = len(g.edges)
                g.edges.append((remap[u], remap[v], lab))
        for old in self.live_nodes():
            g.incident[remap[old]] = [edge_remap[eid] for eid in self.incident[old]]
        return g

    # -- serialization -------------------------------------------------------

    def to_json_dict(self) -> dict:
        if not self.is_terminal_graph():
            raise NonTerminalPresent("JSON schema covers molecule graphs only")
        g = self.compact() if any(lab is None for lab in self.node_labels) else self
        nodes = [
            {"id": i, "element": lab.element, "charge": lab.charge,
             "chirality": lab.chirality}
            for i, lab in enumerate(g.node_labels)
        ]
        bonds = [{"a": u, "b": v, "order": lab} for (u, v, lab) in g.edges]
        edge_order = {str(v): list(g.incident[v]) for v in range(len(g.incident))}
        return {"nodes": nodes, "bonds": bonds, "edge_order": edge_order}

    @classmethod
    def from_json_dict(cls, data: dict) -> "OrderedMolGraph":
        try:
            nodes = data["nodes"]
            bonds = data.get("bonds", [])
        except (TypeError, KeyError) as exc:
            raise DataError(f"bad graph record: {exc}") from exc
        g = cls()
        ids = {}
        for rec in nodes:
            label = AtomLabel(rec["element"], rec.get("charge", 0),
                              rec.get("chirality", "none"))
            ids[rec["id"]] = g.add_node(label)
        for rec in bonds:
            order = rec["order"]
            if order not in BOND_ORDERS:
                raise DataError(f"bond order {order} not in 1..3")
            g.add_edge(ids[rec["a"]], ids[rec["b"]], order)
        order_map = data.get("edge_order")
        if order_map:
            for key, eids in order_map.items():
                v = ids[int(key)]
                if sorted(eids) != sorted(g.incident[v]):
                    raise DataError(f"edge_order for node {key} is not a "
                                    "permutation of its incident bonds")
                g.incident[v] = list(eids)
        return g

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "OrderedMolGraph":
        return cls.from_json_dict(json.loads(text))


def validate_valence(g: OrderedMolGraph) -> ValidityReport:
    """Check each atom's total bond order against the valence table.

    Implicit hydrogens are assumed to fill the gap up to the effective
    valence, so only overbonded atoms are violations.
    """
    violations = []
    for v in g.live_nodes():
        lab = g.node_labels[v]
        if not is_terminal(lab):
            raise NonTerminalPresent(f"node {v} has placeholder label {lab!r}")
        bond_sum = g.bond_order_sum(v)
        if effective_valence(lab.element, lab.charge, bond_sum) is None:
            violations.append(
                (v, f"{lab.element}{lab.charge:+d} carries total bond order "
                    f"{bond_sum} > {max_valence(lab.element, lab.charge)}")
            )
    return ValidityReport(valid=not violations, violations=violations)


def implicit_hydrogens(g: OrderedMolGraph, v: int) -> int:
    lab = g.node_labels[v]
    bond_sum = g.bond_order_sum(v)
    eff = effective_valence(lab.element, lab.charge, bond_sum)
    if eff is None:
        return 0
    return eff - bond_sum


def molecular_weight(g: OrderedMolGraph) -> float:
    """Heavy atoms plus implicit hydrogens, from the standard mass table."""
    total = 0.0
    for v in g.live_nodes():
        lab = g.node_labels[v]
        if not is_terminal(lab):
            raise NonTerminalPresent(f"node {v} has placeholder label {lab!r}")
        total += ATOMIC_MASS[lab.element]
        total += ATOMIC_MASS["H"] * implicit_hydrogens(g, v)
    return total


def ring_count(g: OrderedMolGraph) -> int:
    """Cyclomatic number |E| - |V| + number of connected components."""
    live = set(g.live_nodes())
    seen: set[int] = set()
    components = 0
    for start in g.live_nodes():
        if start in seen:
            continue
        components += 1
        stack = [start]
        seen.add(start)
        while stack:
            v = stack.pop()
            for w in g.neighbors(v):
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
    return g.n_edges - len(live) + components


def _label_key(label: NodeLabel):
    if is_terminal(label):
        return ("t", label.element, label.charge, label.chirality)
    return ("n", label)


def is_isomorphic(g1: OrderedMolGraph, g2: OrderedMolGraph) -> bool:
    """Label-preserving graph isomorphism by backtracking search.

    Incident-edge order is ignored; node labels, adjacency, and edge labels
    (with multiplicity) must all correspond.
    """
    n1, n2 = g1.live_nodes(), g2.live_nodes()
    if len(n1) != len(n2) or g1.n_edges != g2.n_edges:
        return False

    def signature(g, nodes):
        sig = {}
        for v in nodes:
            labels = sorted(lab for (_, _, lab) in g.star(v))
            sig[v] = (_label_key(g.node_labels[v]), tuple(labels))
        return sig

    sig1, sig2 = signature(g1, n1), signature(g2, n2)
    if sorted(sig1.values()) != sorted(sig2.values()):
        return False

    def adj_labels(g, u, v):
        return sorted(lab for (_, w, lab) in g.star(u) if w == v)

    # Order candidates so constrained nodes (rare signature, high degree)
    # are matched first.
    from collections import Counter

    freq = Counter(sig2.values())
    order = sorted(n1, key=lambda v: (freq[sig1[v]], -g1.degree(v)))
    mapping: dict[int, int] = {}
    used: set[int] = set()

    def consistent(a, b):
        if sig1[a] != sig2[b]:
            return False
        for (_, w, _) in g1.star(a):
            if w in mapping:
                if adj_labels(g1, a, w) != adj_labels(g2, b, mapping[w]):
                    return False
        # mapped g2 neighbors of b must correspond to mapped g1 neighbors of a
        mapped_neighbors_b = {x for (_, x, _) in g2.star(b) if x in used}
        mapped_images = {mapping[w] for (_, w, _) in g1.star(a) if w in mapping}
        return mapped_neighbors_b == mapped_images

    def backtrack(i):
        if i == len(order):
            return True
        a = order[i]
        for b in n2:
            if b in used or not consistent(a, b):
                continue
            mapping[a] = b
            used.add(b)
            if backtrack(i + 1):
                return True
            del mapping[a]
            used.remove(b)
        return False

    return backtrack(0)
