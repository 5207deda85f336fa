"""Production rules and grammars for node-replacement molecule generation.

A rule rewrites one placeholder node.  Its left side is an ordered star: a
center (``x`` or the start symbol) plus one boundary slot per incident edge of
the node being replaced, each slot carrying the edge label that must be
present.  Its right side is a replacement graph over atom/skeleton nodes
(``T``) and component placeholders (``x``), and the embedding maps every
boundary slot to a ``T`` node with the bond label that reconnects the host
neighbor.

Kinds:

* ``start``   -- center is the start symbol, no boundary; seeds a derivation.
* ``simple``  -- one ``T`` node carrying a real atom; right-side edges carry
  real bond orders.
* ``complex`` -- several ``T`` nodes, all label-less skeleton slots; edges
  carry the empty label and the atoms are filled in by per-slot child rules
  drawn from the observed child-sequence table.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from molgram.errors import InvalidGrammar, InvalidRule, NoPendingNonterminal
from molgram.molgraph.core import (
    AtomLabel,
    BOND_ORDERS,
    EPS_EDGE,
    NT_NS,
    NT_START,
    NT_X,
    NodeLabel,
    OrderedMolGraph,
    is_terminal,
)

GRAMMAR_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ProductionRule:
    """Canonical-form production rule; construct via ``make_rule``."""

    kind: str                      # "start" | "simple" | "complex"
    lhs_slots: tuple[int, ...]     # edge label per boundary slot, in order
    rhs_labels: tuple[NodeLabel, ...]
    rhs_edges: tuple[tuple[int, int, int], ...]      # (u, v, label)
    rhs_incident: tuple[tuple[int, ...], ...]        # per node: ordered edge ids
    t_nodes: tuple[int, ...]       # atom/skeleton nodes in slot-filling order
    x_nodes: tuple[int, ...]       # component placeholders in creation order
    embedding: tuple[tuple[tuple[int, int], ...], ...]  # per slot: (T node, bond)

    @property
    def lhs_center(self) -> str:
        return NT_START if self.kind == "start" else NT_X

    def n_rhs_nodes(self) -> int:
        return len(self.rhs_labels)


def _label_primitive(label: NodeLabel):
    if is_terminal(label):
        return ("t", label.element, label.charge, label.chirality)
    return ("n", label)


def _label_from_primitive(prim) -> NodeLabel:
    if prim[0] == "t":
        return AtomLabel(prim[1], prim[2], prim[3])
    if prim[1] in (NT_X, NT_NS, NT_START):
        return prim[1]
    raise InvalidGrammar(f"unknown node label {prim!r}")


def make_rule(kind: str,
              lhs_slots: list[int],
              rhs_labels: list[NodeLabel],
              rhs_edges: list[tuple[int, int, int]],
              rhs_incident: list[list[int]],
              t_nodes: list[int],
              x_nodes: list[int],
              embedding: list[list[tuple[int, int]]]) -> ProductionRule:
    """Validate, canonicalize node/edge numbering, and freeze a rule.

    Canonicalization renumbers nodes by a depth-first traversal from the
    first ``T`` node that follows the right side's incident-edge orders, so
    structurally identical rules built with different internal ids collapse
    to the same object.
    """
    _validate_draft(kind, lhs_slots, rhs_labels, rhs_edges, rhs_incident,
                    t_nodes, x_nodes, embedding)

    # DF traversal over the RHS respecting incident order
    order: dict[int, int] = {}
    stack = [t_nodes[0]]
    while stack:
        v = stack.pop()
        if v in order:
            continue
        order[v] = len(order)
        nxt = []
        for eid in rhs_incident[v]:
            a, b, _ = rhs_edges[eid]
            w = b if a == v else a
            if w not in order:
                nxt.append(w)
        stack.extend(reversed(nxt))
    if len(order) != len(rhs_labels):
        raise InvalidRule("right side is not connected")

    edge_map: dict[int, int] = {}
    new_edges: list[tuple[int, int, int]] = []
    for old in sorted(range(len(rhs_labels)), key=order.get):
        for eid in rhs_incident[old]:
            if eid not in edge_map:
                a, b, lab = rhs_edges[eid]
                na, nb = order[a], order[b]
                edge_map[eid] = len(new_edges)
                new_edges.append((min(na, nb), max(na, nb), lab))
    new_labels = [None] * len(rhs_labels)
    new_incident: list[tuple[int, ...]] = [None] * len(rhs_labels)
    for old, new in order.items():
        new_labels[new] = rhs_labels[old]
        new_incident[new] = tuple(edge_map[eid] for eid in rhs_incident[old])

    return ProductionRule(
        kind=kind,
        lhs_slots=tuple(lhs_slots),
        rhs_labels=tuple(new_labels),
        rhs_edges=tuple(new_edges),
        rhs_incident=tuple(new_incident),
        t_nodes=tuple(order[v] for v in t_nodes),
        x_nodes=tuple(order[v] for v in x_nodes),
        embedding=tuple(
            tuple((order[t], lab) for (t, lab) in slot) for slot in embedding
        ),
    )


def _validate_draft(kind, lhs_slots, rhs_labels, rhs_edges, rhs_incident,
                    t_nodes, x_nodes, embedding):
    if kind not in ("start", "simple", "complex"):
        raise InvalidRule(f"unknown rule kind {kind!r}")
    n = len(rhs_labels)
    if sorted(t_nodes + x_nodes) != list(range(n)):
        raise InvalidRule("T and X node lists must partition the right side")
    if not t_nodes:
        raise InvalidRule("right side needs at least one T node")
    if kind == "start" and lhs_slots:
        raise InvalidRule("start rules take no boundary slots")
    if kind == "start" and len(t_nodes) != 1:
        raise InvalidRule("start rules carry exactly one atom node")
    if kind == "complex" and len(t_nodes) < 2:
        raise InvalidRule("complex rules need more than one T node")
    if kind == "simple" and len(t_nodes) != 1:
        raise InvalidRule("simple rules carry exactly one T node")
    t_set, x_set = set(t_nodes), set(x_nodes)
    for v in t_nodes:
        lab = rhs_labels[v]
        if kind == "complex":
            if lab != NT_NS:
                raise InvalidRule("complex T nodes must carry the slot label")
        elif not is_terminal(lab):
            raise InvalidRule("simple/start rules must place a real atom")
    for v in x_nodes:
        if rhs_labels[v] != NT_X:
            raise InvalidRule("component placeholders must be labeled x")
    seen_pairs = set()
    for (u, v, lab) in rhs_edges:
        if u == v:
            raise InvalidRule("self loop on the right side")
        if u in x_set and v in x_set:
            raise InvalidRule("edges between two placeholders are not allowed")
        if u in t_set and v in t_set:
            pair = (min(u, v), max(u, v))
            if pair in seen_pairs:
                raise InvalidRule("parallel edge between two T nodes")
            seen_pairs.add(pair)
        want_eps = kind == "complex"
        if want_eps and lab != EPS_EDGE:
            raise InvalidRule("complex right sides carry only the empty label")
        if not want_eps and lab not in BOND_ORDERS:
            raise InvalidRule("simple/start right sides carry real bond orders")
    if len(rhs_incident) != n:
        raise InvalidRule("incident list count must match node count")
    counts = [0] * len(rhs_edges)
    for v, lst in enumerate(rhs_incident):
        for eid in lst:
            if not 0 <= eid < len(rhs_edges):
                raise InvalidRule("incident list references unknown edge")
            if v not in rhs_edges[eid][:2]:
                raise InvalidRule("incident list references non-incident edge")
            counts[eid] += 1
    if any(c != 2 for c in counts):
        raise InvalidRule("every edge must appear in exactly two incident lists")
    if len(embedding) != len(lhs_slots):
        raise InvalidRule("embedding must map every boundary slot")
    for slot in embedding:
        if not slot:
            raise InvalidRule("boundary slot with no embedding target")
        for (t, lab) in slot:
            if t not in t_set:
                raise InvalidRule("embedding target must be a T node")
            if lab not in BOND_ORDERS:
                raise InvalidRule("embedding labels must be real bond orders")
    for lab in lhs_slots:
        if lab != EPS_EDGE and lab not in BOND_ORDERS:
            raise InvalidRule(f"unknown boundary edge label {lab!r}")


def canonical_encode(rule: ProductionRule) -> bytes:
    """Deterministic byte encoding; equal iff rules are identical up to
    internal node renumbering (orders and labels all significant)."""
    payload = (
        rule.kind,
        rule.lhs_slots,
        tuple(_label_primitive(lab) for lab in rule.rhs_labels),
        rule.rhs_edges,
        rule.rhs_incident,
        rule.t_nodes,
        rule.x_nodes,
        rule.embedding,
    )
    return repr(payload).encode()


def match_context(graph: OrderedMolGraph, v: int, rule: ProductionRule) -> bool:
    """Ordered-star match of node v's incident edges against the rule's left
    side: same center class, same degree, equal edge labels position by
    position.  Neighbor node labels are not constrained."""
    label = graph.node_labels[v]
    if label == NT_START:
        if rule.kind != "start":
            return False
    elif label in (NT_X, NT_NS):
        if rule.kind == "start":
            return False
    else:
        return False
    star = graph.incident[v]
    if len(star) != len(rule.lhs_slots):
        return False
    for eid, want in zip(star, rule.lhs_slots):
        if graph.edges[eid][2] != want:
            return False
    return True


@dataclass
class Grammar:
    """Immutable rule table plus the observed child-sequence table."""

    rules: list[ProductionRule]
    encodings: list[bytes]
    child_table: dict[int, dict[tuple[int, ...], int]]
    start_rules: tuple[int, ...]
    _slot_index: dict[tuple, list[int]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self._slot_index:
            for rid, rule in enumerate(self.rules):
                if rule.kind == "start":
                    continue
                self._slot_index.setdefault(rule.lhs_slots, []).append(rid)

    def n_rules(self) -> int:
        return len(self.rules)

    def context_matches(self, graph: OrderedMolGraph, v: int) -> list[int]:
        """Rule ids whose left side matches node v's ordered star."""
        if graph.node_labels[v] == NT_START:
            return list(self.start_rules)
        key = tuple(graph.edges[eid][2] for eid in graph.incident[v])
        return list(self._slot_index.get(key, ()))

    def child_candidates(self, parent: int, prefix: tuple[int, ...],
                         position: int) -> set[int]:
        """Rules observed at ``position`` under ``parent`` after ``prefix``."""
        out = set()
        for tup in self.child_table.get(parent, ()):
            if tup[:position] == prefix:
                out.add(tup[position])
        return out

    # -- serialization -----------------------------------------------------

    def to_json_dict(self) -> dict:
        rules = []
        for rule in self.rules:
            rules.append({
                "kind": rule.kind,
                "slots": list(rule.lhs_slots),
                "nodes": [list(_label_primitive(lab)) for lab in rule.rhs_labels],
                "edges": [list(e) for e in rule.rhs_edges],
                "incident": [list(lst) for lst in rule.rhs_incident],
                "t": list(rule.t_nodes),
                "x": list(rule.x_nodes),
                "phi": [[list(pair) for pair in slot] for slot in rule.embedding],
            })
        child = {
            str(rid): sorted([list(tup), cnt] for tup, cnt in table.items())
            for rid, table in sorted(self.child_table.items())
        }
        return {
            "version": GRAMMAR_FORMAT_VERSION,
            "rules": rules,
            "child_table": child,
            "start_rules": list(self.start_rules),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)

    @classmethod
    def from_json_dict(cls, data: dict) -> "Grammar":
        if data.get("version") != GRAMMAR_FORMAT_VERSION:
            raise InvalidGrammar(
                f"unsupported grammar format version {data.get('version')!r}"
            )
        rules = []
        encodings = []
        seen = set()
        for rec in data["rules"]:
            rule = make_rule(
                rec["kind"],
                list(rec["slots"]),
                [_label_from_primitive(tuple(p)) for p in rec["nodes"]],
                [tuple(e) for e in rec["edges"]],
                [list(lst) for lst in rec["incident"]],
                list(rec["t"]),
                list(rec["x"]),
                [[tuple(p) for p in slot] for slot in rec["phi"]],
            )
            enc = canonical_encode(rule)
            if enc in seen:
                raise InvalidGrammar("duplicate rule in grammar file")
            seen.add(enc)
            rules.append(rule)
            encodings.append(enc)
        child_table: dict[int, dict[tuple[int, ...], int]] = {}
        for key, entries in data.get("child_table", {}).items():
            rid = int(key)
            table: dict[tuple[int, ...], int] = {}
            for tup, cnt in entries:
                table[tuple(tup)] = int(cnt)
            child_table[rid] = table
        start_rules = tuple(data["start_rules"])
        grammar = cls(rules=rules, encodings=encodings,
                      child_table=child_table, start_rules=start_rules)
        grammar.validate()
        return grammar

    @classmethod
    def from_json(cls, text: str) -> "Grammar":
        return cls.from_json_dict(json.loads(text))

    def validate(self):
        n = len(self.rules)
        for rid in self.start_rules:
            if not 0 <= rid < n or self.rules[rid].kind != "start":
                raise InvalidGrammar(f"start rule id {rid} invalid")
        declared_starts = {rid for rid, r in enumerate(self.rules)
                           if r.kind == "start"}
        if set(self.start_rules) != declared_starts:
            raise InvalidGrammar("start rule set does not match rule kinds")
        for rid, rule in enumerate(self.rules):
            if rule.kind != "complex":
                continue
            table = self.child_table.get(rid)
            if not table:
                raise InvalidGrammar(f"complex rule {rid} has no child tuples")
            for tup, cnt in table.items():
                if len(tup) != len(rule.t_nodes):
                    raise InvalidGrammar(
                        f"child tuple arity {len(tup)} != |T| of rule {rid}"
                    )
                if cnt < 1:
                    raise InvalidGrammar("child tuple count must be positive")
                for cid in tup:
                    if not 0 <= cid < n or self.rules[cid].kind != "simple":
                        raise InvalidGrammar(
                            f"child tuple of rule {rid} names non-simple rule"
                        )
        for rid in self.child_table:
            if self.rules[rid].kind != "complex":
                raise InvalidGrammar("child table keyed by non-complex rule")
        if len(set(self.encodings)) != n:
            raise InvalidGrammar("canonical encodings collide")


def legal_rules(grammar: Grammar, state) -> list[int]:
    """Rule ids legal for the state's pending placeholder, ascending.

    Empty derivation: the start rules.  A skeleton slot under a complex
    parent: context-matching simple rules that extend the already-assigned
    sibling prefix to an observed child tuple.  Any other placeholder: every
    context-matching rule.
    """
    entry = state.pending_entry()
    if entry is None:
        raise NoPendingNonterminal("derivation is complete")
    matches = grammar.context_matches(state.graph, entry.node)
    if entry.group is None:
        return sorted(matches)
    prefix = entry.group.prefix(entry.position)
    allowed = grammar.child_candidates(entry.group.parent_rule, prefix,
                                       entry.position)
    return sorted(set(matches) & allowed)
