"""Rule extraction: parse molecules into trees while accumulating a grammar.

A molecule is peeled front by front.  Each call owns an interior node set, an
ordered stub list (host bonds crossing from already-placed atoms into the
interior), and the front ``T`` (interior atoms adjacent to the boundary).  The
call emits one rule -- the boundary star as its left side, the front plus one
placeholder per remaining component as its right side, the crossing bonds as
its embedding -- and recurses into each component.  Multi-atom fronts emit a
skeleton rule plus one per-atom child rule, whose observed orderings feed the
child-sequence table.

All extraction orders mirror what the rewrite engine will reconstruct, which
is what makes parse -> preorder -> decode the identity on the corpus.
"""

from __future__ import annotations

from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from molgram.derive import apply_rule, initial_state
from molgram.errors import (
    DisconnectedInput,
    IllegalRule,
    IllegalSequence,
    IncompleteDerivation,
    InvalidGrammar,
    NonTerminalInput,
)
from molgram.grammar import (
    Grammar,
    ProductionRule,
    canonical_encode,
    make_rule,
)
from molgram.molgraph.core import EPS_EDGE, NT_NS, NT_X, OrderedMolGraph, is_terminal


@dataclass(frozen=True)
class ParseTree:
    """Tree of rule ids; preorder replay regenerates the molecule."""

    rule: int
    children: tuple["ParseTree", ...] = ()

    def size(self) -> int:
        return 1 + sum(c.size() for c in self.children)


def preorder(tree: ParseTree) -> tuple[int, ...]:
    out: list[int] = []
    stack = [tree]
    while stack:
        node = stack.pop()
        out.append(node.rule)
        stack.extend(reversed(node.children))
    return tuple(out)


@dataclass
class InferenceStats:
    rule_count: int
    molecules_parsed: int
    molecules_failed: int
    max_rules_per_molecule: int
    mean_rules_per_molecule: float

    def to_json_dict(self) -> dict:
        return {
            "rule_count": self.rule_count,
            "molecules_parsed": self.molecules_parsed,
            "molecules_failed": self.molecules_failed,
            "max_rules_per_molecule": self.max_rules_per_molecule,
            "mean_rules_per_molecule": self.mean_rules_per_molecule,
        }


class GrammarBuilder:
    """Order-independent rule accumulator keyed by canonical encodings."""

    def __init__(self):
        self.rules: dict[bytes, ProductionRule] = {}
        self.child_counts: dict[bytes, Counter] = {}

    def add(self, rule: ProductionRule) -> bytes:
        enc = canonical_encode(rule)
        self.rules.setdefault(enc, rule)
        return enc

    def add_child_tuple(self, parent: bytes, children: tuple[bytes, ...]):
        self.child_counts.setdefault(parent, Counter())[children] += 1

    def merge(self, other: "GrammarBuilder"):
        for enc, rule in other.rules.items():
            self.rules.setdefault(enc, rule)
        for enc, counts in other.child_counts.items():
            self.child_counts.setdefault(enc, Counter()).update(counts)

    def freeze(self) -> tuple[Grammar, dict[bytes, int]]:
        """Assign ids by sorted canonical encoding and build the grammar."""
        encodings = sorted(self.rules)
        ids = {enc: i for i, enc in enumerate(encodings)}
        rules = [self.rules[enc] for enc in encodings]
        child_table: dict[int, dict[tuple[int, ...], int]] = {}
        for enc, counts in self.child_counts.items():
            table = {}
            for tup, cnt in counts.items():
                table[tuple(ids[c] for c in tup)] = cnt
            child_table[ids[enc]] = table
        start_rules = tuple(
            i for i, r in enumerate(rules) if r.kind == "start"
        )
        grammar = Grammar(rules=rules, encodings=encodings,
                          child_table=child_table, start_rules=start_rules)
        grammar.validate()
        return grammar, ids


class CoverageMiss(Exception):
    """Frozen-grammar parse hit an unknown rule or child tuple."""


class FrozenGrammarChecker:
    """Accumulator view of a frozen grammar: admits nothing new."""

    def __init__(self, grammar: Grammar):
        self.grammar = grammar
        self._ids = {enc: i for i, enc in enumerate(grammar.encodings)}

    def add(self, rule: ProductionRule) -> int:
        enc = canonical_encode(rule)
        rid = self._ids.get(enc)
        if rid is None:
            raise CoverageMiss("rule not in grammar")
        return rid

    def add_child_tuple(self, parent: int, children: tuple[int, ...]):
        if children not in self.grammar.child_table.get(parent, {}):
            raise CoverageMiss("child tuple not in grammar")


def _df_ranks(g: OrderedMolGraph, root: int) -> dict[int, int]:
    """Preorder depth-first ranks from root, following incident order."""
    rank: dict[int, int] = {}
    stack = [root]
    while stack:
        v = stack.pop()
        if v in rank:
            continue
        rank[v] = len(rank)
        nxt = [w for w in g.neighbors(v) if w not in rank]
        stack.extend(reversed(nxt))
    return rank


def parse_molecule(g: OrderedMolGraph, builder, root: int = 0) -> ParseTree:
    """Parse one molecule into a tree, feeding rules into the accumulator.

    ``builder`` is a GrammarBuilder (inference) or FrozenGrammarChecker
    (coverage); tree nodes carry whatever keys the accumulator returns.
    """
    live = g.live_nodes()
    if not live:
        raise NonTerminalInput("empty graph")
    for v in live:
        if not is_terminal(g.node_labels[v]):
            raise NonTerminalInput(f"node {v} is not a terminal atom")
    if not g.is_connected():
        raise DisconnectedInput("molecule graph must be connected")
    if g.node_labels[root] is None:
        raise ValueError(f"root {root} is not a live node")

    rank = _df_ranks(g, root)
    work = g.copy()
    for v in live:
        work.incident[v].sort(key=lambda eid: rank[work.edge_other(eid, v)])

    class _Node:
        __slots__ = ("rule", "children")

        def __init__(self):
            self.rule = None
            self.children = []

    root_node = _Node()
    # frame: (interior set, stub list [(eid, boundary atom, front atom)],
    #         front list, tree node)
    stack = [(frozenset(live), [], [root], root_node)]
    while stack:
        interior, stubs, front, tnode = stack.pop()
        t_index = {t: j for j, t in enumerate(front)}

        def interior_edges(t):
            return [eid for eid in work.incident[t]
                    if work.edge_other(eid, t) in interior]

        # connected components of the interior minus the front
        rest = set(interior) - set(front)
        comp_of: dict[int, int] = {}
        comps: list[list[int]] = []
        for seed in sorted(rest, key=rank.get):
            if seed in comp_of:
                continue
            comp = []
            dfs = [seed]
            comp_of[seed] = len(comps)
            while dfs:
                u = dfs.pop()
                comp.append(u)
                for w in work.neighbors(u):
                    if w in rest and w not in comp_of:
                        comp_of[w] = len(comps)
                        dfs.append(w)
            comps.append(comp)

        is_root_call = not stubs
        simple = len(front) == 1
        kind = "start" if is_root_call else ("simple" if simple else "complex")

        lhs_slots = [work.edge_label(eid) for (eid, _, _) in stubs]
        embedding = [
            [(t_index[t], work.edge_label(eid))] for (eid, _, t) in stubs
        ]

        # right side: front nodes then one placeholder per component
        rhs_labels: list = []
        for t in front:
            rhs_labels.append(g.node_labels[t] if simple else NT_NS)
        x_local = {}
        for ci in range(len(comps)):
            x_local[ci] = len(rhs_labels)
            rhs_labels.append(NT_X)
        t_local = {t: j for j, t in enumerate(front)}

        rhs_edges: list[tuple[int, int, int]] = []
        rhs_incident: list[list[int]] = [[] for _ in rhs_labels]
        seen_tt: dict[int, int] = {}  # host eid -> rhs edge id
        child_stubs: list[list[tuple[int, int, int]]] = [[] for _ in comps]
        for t in front:
            for eid in interior_edges(t):
                w = work.edge_other(eid, t)
                if w in t_index:
                    if eid in seen_tt:
                        rid = seen_tt[eid]
                    else:
                        label = EPS_EDGE if kind == "complex" \
                            else work.edge_label(eid)
                        rid = len(rhs_edges)
                        rhs_edges.append((t_local[t], t_local[w], label))
                        seen_tt[eid] = rid
                    rhs_incident[t_local[t]].append(rid)
                else:
                    ci = comp_of[w]
                    label = EPS_EDGE if kind == "complex" \
                        else work.edge_label(eid)
                    rid = len(rhs_edges)
                    rhs_edges.append((t_local[t], x_local[ci], label))
                    rhs_incident[t_local[t]].append(rid)
                    rhs_incident[x_local[ci]].append(rid)
                    child_stubs[ci].append((eid, t, w))

        child_keys = []
        if kind == "complex":
            # one per-atom rule per front node, in front order
            for j, t in enumerate(front):
                slots: list[int] = []
                phi: list[list[tuple[int, int]]] = []
                for eid in interior_edges(t):
                    w = work.edge_other(eid, t)
                    real = work.edge_label(eid)
                    if w in t_index and t_index[w] < j:
                        slots.append(real)      # sibling already expanded
                    else:
                        slots.append(EPS_EDGE)  # later sibling or component
                    phi.append([(0, real)])
                for (eid, b, tt) in stubs:
                    if tt == t:
                        slots.append(work.edge_label(eid))
                        phi.append([(0, work.edge_label(eid))])
                child = make_rule("simple", slots, [g.node_labels[t]],
                                  [], [[]], [0], [], phi)
                child_keys.append(builder.add(child))

        rule = make_rule(kind, lhs_slots, rhs_labels, rhs_edges,
                         rhs_incident, list(range(len(front))),
                         [x_local[ci] for ci in range(len(comps))], embedding)
        key = builder.add(rule)
        if kind == "complex":
            builder.add_child_tuple(key, tuple(child_keys))

        tnode.rule = key
        tnode.children = [
            _Node() for _ in range(len(child_keys) + len(comps))
        ]
        for j, ck in enumerate(child_keys):
            leaf = tnode.children[j]
            leaf.rule = ck
            leaf.children = []
        for ci, comp in enumerate(comps):
            sub_stubs = child_stubs[ci]
            sub_front = sorted({w for (_, _, w) in sub_stubs}, key=rank.get)
            child_node = tnode.children[len(child_keys) + ci]
            stack.append((frozenset(comp), sub_stubs, sub_front, child_node))

    def freeze_node(node: _Node) -> ParseTree:
        return ParseTree(rule=node.rule,
                         children=tuple(freeze_node(c) for c in node.children))

    import sys

    limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(limit, 4 * len(live) + 100))
    try:
        return freeze_node(root_node)
    finally:
        sys.setrecursionlimit(limit)


def _remap_tree(tree: ParseTree, ids: dict) -> ParseTree:
    return ParseTree(rule=ids[tree.rule],
                     children=tuple(_remap_tree(c, ids) for c in tree.children))


def infer_grammar(corpus: list[OrderedMolGraph], multi_root: bool = False,
                  threads: int = 1):
    """Parse every corpus molecule into a shared grammar.

    Returns (Grammar, list of ParseTree, InferenceStats).  Output is
    deterministic and independent of the thread count: rules are merged as
    encoding sets and final ids come from sorted encodings.
    """
    if not corpus:
        raise ValueError("corpus is empty")

    def parse_one(g: OrderedMolGraph):
        local = GrammarBuilder()
        trees = []
        roots = g.live_nodes() if multi_root else [0]
        for root in roots:
            trees.append(parse_molecule(g, local, root=root))
        return local, trees

    results: list = [None] * len(corpus)
    failures = 0
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = list(pool.map(_safe(parse_one), corpus))
        results = futures
    else:
        results = [_safe(parse_one)(g) for g in corpus]

    builder = GrammarBuilder()
    raw_trees: list = []
    for res in results:
        if res is None:
            failures += 1
            continue
        local, trees = res
        builder.merge(local)
        raw_trees.extend(trees)

    if not builder.rules:
        raise InvalidGrammar("no molecule in the corpus could be parsed")
    grammar, ids = builder.freeze()
    trees = [_remap_tree(t, ids) for t in raw_trees]
    sizes = [t.size() for t in trees]
    stats = InferenceStats(
        rule_count=grammar.n_rules(),
        molecules_parsed=len(corpus) - failures,
        molecules_failed=failures,
        max_rules_per_molecule=max(sizes),
        mean_rules_per_molecule=sum(sizes) / len(sizes),
    )
    return grammar, trees, stats


def _safe(fn):
    def wrapped(arg):
        try:
            return fn(arg)
        except (DisconnectedInput, NonTerminalInput, ValueError):
            return None
    return wrapped


def coverage(grammar: Grammar, held_out: list[OrderedMolGraph]):
    """(covered, uncovered) counts under the frozen grammar, root node 0."""
    checker = FrozenGrammarChecker(grammar)
    covered = uncovered = 0
    for g in held_out:
        try:
            parse_molecule(g, checker, root=0)
            covered += 1
        except (CoverageMiss, DisconnectedInput, NonTerminalInput, ValueError):
            uncovered += 1
    return covered, uncovered


def tree_from_sequence(grammar: Grammar, sequence) -> ParseTree:
    """Rebuild the parse tree by replaying the derivation.

    Mirrors the rewrite agenda: each applied rule consumes the pending
    placeholder, whose tree slot is tracked alongside the agenda."""

    class _Node:
        __slots__ = ("rule", "children")

        def __init__(self, rule, n_children):
            self.rule = rule
            self.children = [None] * n_children

    state = initial_state()
    mirror: list[tuple] = [(None, 0)]  # (parent node, child index)
    root_holder: list = [None]
    for i, rid in enumerate(sequence):
        if state.done:
            raise IllegalSequence(i, "derivation already complete")
        idx = state.pending_index()
        slot_parent, slot_index = mirror[idx]
        try:
            state = apply_rule(grammar, state, rid)
        except IllegalRule as exc:
            raise IllegalSequence(i, str(exc)) from exc
        rule = grammar.rules[rid]
        k = len(rule.t_nodes) if rule.kind == "complex" else 0
        node = _Node(rid, k + len(rule.x_nodes))
        if slot_parent is None:
            root_holder[0] = node
        else:
            slot_parent.children[slot_index] = node
        del mirror[idx]
        mirror.extend((node, j) for j in range(k + len(rule.x_nodes)))
    if not state.done:
        raise IncompleteDerivation(
            f"{len(state.agenda)} placeholder(s) still pending"
        )

    def freeze(node: _Node) -> ParseTree:
        return ParseTree(rule=node.rule,
                         children=tuple(freeze(c) for c in node.children))

    return freeze(root_holder[0])
