"""Generative semantics: rewriting placeholder nodes with production rules.

Intermediate graphs may carry parallel placeholder edges ("stubs"): one per
eventual real bond toward an unexpanded component.  Stub multiplicity is what
lets the boundary-slot match enforce an atom's exact bond complement, which in
turn makes every completed derivation valence-valid.

The rewrite agenda follows two priorities: skeleton slots before component
placeholders, and later-created entries first.  Within one rule application
timestamps are assigned in reverse right-side order, so entries are consumed
in right-side order and a decoded parse tree is visited in exact preorder.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from molgram.errors import (
    AgendaCorruption,
    EmptyAgenda,
    IllegalRule,
    IllegalSequence,
    IncompleteDerivation,
)
from molgram.grammar import Grammar, legal_rules
from molgram.molgraph.core import (
    NT_NS,
    NT_START,
    NT_X,
    OrderedMolGraph,
)
from molgram.molgraph.core import validate_valence


@dataclass
class EnvConfig:
    """Episode limits and step rewards for the generation process."""

    t_max: int = 100
    l_max: float = float("inf")   # cap on applied rules; inf allowed
    r_eps: float = 0.0
    r_incomp: float = -1.0

    def __post_init__(self):
        if self.t_max < 1:
            raise ValueError("t_max must be at least 1")
        if self.r_incomp > 0:
            raise ValueError("r_incomp must be non-positive")


class SiblingGroup:
    """Shared record of which child rule filled each slot of a complex rule."""

    __slots__ = ("parent_rule", "assigned")

    def __init__(self, parent_rule: int, size: int):
        self.parent_rule = parent_rule
        self.assigned: list[int | None] = [None] * size

    def prefix(self, position: int) -> tuple[int, ...]:
        front = self.assigned[:position]
        if any(a is None for a in front):
            raise AgendaCorruption("sibling slots filled out of order")
        return tuple(front)

    def clone(self) -> "SiblingGroup":
        g = SiblingGroup(self.parent_rule, 0)
        g.assigned = list(self.assigned)
        return g


@dataclass(frozen=True)
class AgendaEntry:
    node: int
    label: str                     # NT_START, NT_NS, or NT_X
    timestamp: int
    group: SiblingGroup | None = None   # set for skeleton slots
    position: int = 0


@dataclass
class DerivationState:
    """Value-semantics snapshot of a derivation in progress."""

    graph: OrderedMolGraph
    agenda: list[AgendaEntry]
    sequence: tuple[int, ...] = ()
    steps: int = 0
    clock: int = 0

    def copy(self) -> "DerivationState":
        groups: dict[int, SiblingGroup] = {}
        agenda = []
        for e in self.agenda:
            if e.group is None:
                agenda.append(e)
            else:
                g = groups.get(id(e.group))
                if g is None:
                    g = e.group.clone()
                    groups[id(e.group)] = g
                agenda.append(replace(e, group=g))
        return DerivationState(
            graph=self.graph.copy(),
            agenda=agenda,
            sequence=self.sequence,
            steps=self.steps,
            clock=self.clock,
        )

    def pending_index(self) -> int | None:
        """Index of the entry to rewrite next: skeleton slots first, then
        component placeholders; latest-created within each class."""
        best = None
        for i, e in enumerate(self.agenda):
            if best is None:
                best = i
                continue
            b = self.agenda[best]
            rank_e = 0 if e.label == NT_NS else 1
            rank_b = 0 if b.label == NT_NS else 1
            if (rank_e, -e.timestamp) < (rank_b, -b.timestamp):
                best = i
        return best

    def pending_entry(self) -> AgendaEntry | None:
        i = self.pending_index()
        return None if i is None else self.agenda[i]

    @property
    def done(self) -> bool:
        return not self.agenda


def initial_state() -> DerivationState:
    g = OrderedMolGraph()
    v = g.add_node(NT_START)
    return DerivationState(
        graph=g, agenda=[AgendaEntry(node=v, label=NT_START, timestamp=0)],
        clock=1,
    )


def next_nonterminal(state: DerivationState) -> int:
    entry = state.pending_entry()
    if entry is None:
        raise EmptyAgenda("no placeholder left to rewrite")
    return entry.node


def apply_rule(grammar: Grammar, state: DerivationState,
               rule_id: int) -> DerivationState:
    """Apply one production rule to the pending placeholder.

    Host edges not incident to the rewritten node are untouched.  New nodes
    adopt their right-side incident order followed by embedding edges in
    boundary-slot order; each host stub is replaced in place on the host
    side, keeping surviving incident orders stable.
    """
    if not 0 <= rule_id < grammar.n_rules():
        raise IllegalRule(f"rule id {rule_id} out of range")
    if rule_id not in legal_rules(grammar, state):
        raise IllegalRule(f"rule {rule_id} is not legal here")
    rule = grammar.rules[rule_id]

    new = state.copy()
    idx = new.pending_index()
    entry = new.agenda.pop(idx)
    v = entry.node
    g = new.graph

    star = list(g.incident[v])
    if len(star) != len(rule.lhs_slots):
        raise AgendaCorruption("star degree drifted from the matched rule")

    # place right-side nodes
    node_map = [g.add_node(lab) for lab in rule.rhs_labels]
    edge_map: dict[int, int] = {}
    for re_id, (a, b, lab) in enumerate(rule.rhs_edges):
        eid = len(g.edges)
        g.edges.append((node_map[a], node_map[b], lab))
        edge_map[re_id] = eid
    for local, gid in enumerate(node_map):
        g.incident[gid] = [edge_map[re_id] for re_id in rule.rhs_incident[local]]

    # embedding: replace each host stub in place, then append the new edges
    # to the receiving T nodes in boundary-slot order
    appended: dict[int, list[int]] = {gid: [] for gid in node_map}
    for slot, host_eid in enumerate(star):
        if g.edges[host_eid][2] != rule.lhs_slots[slot]:
            raise AgendaCorruption("stub label drifted from the matched rule")
        u = g.edge_other(host_eid, v)
        pos = g.incident[u].index(host_eid)
        new_eids = []
        for (t_local, bond) in rule.embedding[slot]:
            eid = len(g.edges)
            g.edges.append((u, node_map[t_local], bond))
            new_eids.append(eid)
            appended[node_map[t_local]].append(eid)
        g.incident[u][pos:pos + 1] = new_eids
        g.edges[host_eid] = None
    for gid, eids in appended.items():
        g.incident[gid].extend(eids)

    # retire the rewritten node; its stubs were all consumed above
    g.node_labels[v] = None
    g.incident[v] = None

    # fill the sibling slot when expanding a skeleton position
    if entry.group is not None:
        if rule.kind != "simple":
            raise AgendaCorruption("skeleton slot expanded by non-simple rule")
        entry.group.assigned[entry.position] = rule_id

    # enqueue new placeholders: skeleton slots (complex) then components,
    # timestamps descending along that list so the first is rewritten first
    items: list[AgendaEntry] = []
    group = None
    if rule.kind == "complex":
        group = SiblingGroup(rule_id, len(rule.t_nodes))
    pending = []
    if rule.kind == "complex":
        for j, local in enumerate(rule.t_nodes):
            pending.append((node_map[local], NT_NS, group, j))
    for local in rule.x_nodes:
        pending.append((node_map[local], NT_X, None, 0))
    base = new.clock
    for k, (node, lab, grp, pos) in enumerate(pending):
        items.append(AgendaEntry(node=node, label=lab,
                                 timestamp=base + len(pending) - 1 - k,
                                 group=grp, position=pos))
    new.clock = base + len(pending)
    new.agenda.extend(items)

    expected_delta = len(rule.x_nodes) - 1
    if rule.kind == "complex":
        expected_delta += len(rule.t_nodes)
    if len(new.agenda) - len(state.agenda) != expected_delta:
        raise AgendaCorruption("agenda size delta mismatch")

    new.sequence = state.sequence + (rule_id,)
    new.steps = state.steps + 1
    return new


def finish(state: DerivationState) -> OrderedMolGraph:
    """Extract the completed molecule; every label must be terminal."""
    if state.agenda:
        raise IncompleteDerivation(
            f"{len(state.agenda)} placeholder(s) still pending"
        )
    mol = state.graph.compact()
    report = validate_valence(mol)
    if not report.valid:
        # the grammar construction makes this unreachable; see module docs
        raise AssertionError(f"valence guarantee violated: {report.violations}")
    return mol


def decode(grammar: Grammar, sequence) -> OrderedMolGraph:
    """Fold apply_rule over a rule sequence from the empty derivation."""
    state = initial_state()
    for i, rid in enumerate(sequence):
        if state.done:
            raise IllegalSequence(i, "derivation already complete")
        try:
            state = apply_rule(grammar, state, rid)
        except IllegalRule as exc:
            raise IllegalSequence(i, str(exc)) from exc
    return finish(state)


def sample_random(grammar: Grammar, seed, config: EnvConfig | None = None):
    """Uniform-random derivation.  Returns (molecule or None, sequence, kind)
    with kind in {"complete", "dead_end", "limit"}."""
    config = config or EnvConfig()
    rng = seed if isinstance(seed, np.random.Generator) \
        else np.random.default_rng(seed)
    state = initial_state()
    while not state.done:
        if state.steps >= config.t_max or state.steps >= config.l_max:
            return None, state.sequence, "limit"
        legal = legal_rules(grammar, state)
        if not legal:
            return None, state.sequence, "dead_end"
        rid = legal[int(rng.integers(len(legal)))]
        state = apply_rule(grammar, state, rid)
    return finish(state), state.sequence, "complete"
