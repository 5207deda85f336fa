"""SMILES subset reader/writer for Kekule heavy-atom molecule graphs.

Supported: organic-subset atoms (B C N O P S F Cl Br I), bracket atoms with
charge/chirality/H-count, bonds ``- = #``, branches, ring closures ``1``-``9``
and ``%nn``.  Aromatic (lowercase) atoms, isotopes, wildcard atoms, and
directional stereo bonds are rejected by name.  Explicit H counts are parsed
and discarded: the graph is heavy-atom only and hydrogens are implied by the
valence table.
"""

from __future__ import annotations

import sys

from molgram.errors import NonTerminalPresent, SmilesSyntaxError, UnsupportedFeature
from molgram.molgraph.core import (
    AtomLabel,
    ORGANIC_ELEMENTS,
    OrderedMolGraph,
    is_terminal,
)

_BOND_CHARS = {"-": 1, "=": 2, "#": 3}
_BOND_SYMBOL = {1: "", 2: "=", 3: "#"}
_TWO_LETTER = ("Cl", "Br")
_AROMATIC_CHARS = set("bcnops")


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.atoms: list[AtomLabel] = []
        self.bonds: list[tuple[int, int, int]] = []
        # per-atom ordered slots; an entry is a bond index or a pending
        # ring-closure marker ("ring", digit)
        self.slots: list[list] = []
        self.prev: int | None = None
        self.pending_bond: int | None = None
        self.branch_stack: list[int] = []
        # ring digit -> (atom, bond or None, slot index, text position)
        self.open_rings: dict[int, tuple[int, int | None, int, int]] = {}

    def error(self, reason: str, pos: int | None = None):
        raise SmilesSyntaxError(self.pos if pos is None else pos, reason)

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def take(self) -> str:
        ch = self.peek()
        self.pos += 1
        return ch

    # -- atoms ---------------------------------------------------------------

    def _add_atom(self, label: AtomLabel):
        idx = len(self.atoms)
        self.atoms.append(label)
        self.slots.append([])
        if self.prev is not None:
            order = 1 if self.pending_bond is None else self.pending_bond
            bid = len(self.bonds)
            self.bonds.append((self.prev, idx, order))
            self.slots[self.prev].append(bid)
            self.slots[idx].append(bid)
        self.pending_bond = None
        self.prev = idx

    def _parse_bare_atom(self):
        start = self.pos
        ch = self.take()
        if ch + self.peek() in _TWO_LETTER:
            ch += self.take()
        if ch not in ORGANIC_ELEMENTS:
            self.error(f"unknown atom symbol {ch!r}", start)
        self._add_atom(AtomLabel(ch))

    def _parse_bracket_atom(self):
        start = self.pos
        self.take()  # consume '['
        if self.peek().isdigit():
            raise UnsupportedFeature(
                f"isotope specification at position {self.pos}"
            )
        if self.peek() == "*":
            raise UnsupportedFeature(f"wildcard atom at position {self.pos}")
        if self.peek() in _AROMATIC_CHARS:
            raise UnsupportedFeature(
                f"aromatic atom {self.peek()!r} at position {self.pos}; "
                "input must be Kekule"
            )
        if not self.peek().isupper():
            self.error("expected element symbol in bracket atom")
        element = self.take()
        if element + self.peek() in _TWO_LETTER:
            element += self.take()
        elif self.peek().islower():
            element += self.take()  # e.g. [Si] -> caught by whitelist below
        if element not in ORGANIC_ELEMENTS:
            raise UnsupportedFeature(
                f"element {element!r} outside the supported set "
                f"(position {start})"
            )
        chirality = "none"
        if self.peek() == "@":
            self.take()
            if self.peek() == "@":
                self.take()
                chirality = "cw"
            else:
                chirality = "ccw"
        if self.peek() == "H":
            self.take()
            while self.peek().isdigit():
                self.take()  # explicit H count: accepted, discarded
        charge = 0
        if self.peek() in "+-":
            sign = 1 if self.take() == "+" else -1
            if self.peek().isdigit():
                charge = sign * int(self.take())
            else:
                charge = sign
                while self.peek() in "+-":  # ++ / -- forms
                    if (self.peek() == "+") != (sign > 0):
                        self.error("mixed charge signs in bracket atom")
                    self.take()
                    charge += sign
        if self.peek() == ":":
            self.error("atom class maps are not supported")
        if self.peek() != "]":
            self.error(f"unexpected {self.peek()!r} in bracket atom")
        self.take()
        if not -2 <= charge <= 2:
            self.error(f"charge {charge:+d} outside [-2, +2]", start)
        self._add_atom(AtomLabel(element, charge, chirality))

    # -- ring closures ---------------------------------------------------------

    def _ring_digit(self, digit: int, pos: int):
        if self.prev is None:
            self.error("ring closure before any atom", pos)
        if digit in self.open_rings:
            a0, bond0, slot_idx, _ = self.open_rings.pop(digit)
            if bond0 is not None and self.pending_bond is not None \
                    and bond0 != self.pending_bond:
                self.error(f"conflicting bond orders on ring closure {digit}", pos)
            order = bond0 if bond0 is not None else self.pending_bond
            if order is None:
                order = 1
            if a0 == self.prev:
                self.error(f"ring closure {digit} forms a self loop", pos)
            if any(
                (a == a0 and b == self.prev) or (a == self.prev and b == a0)
                for (a, b, _) in self.bonds
            ):
                self.error(f"ring closure {digit} duplicates an existing bond", pos)
            bid = len(self.bonds)
            self.bonds.append((a0, self.prev, order))
            self.slots[a0][slot_idx] = bid
            self.slots[self.prev].append(bid)
        else:
            self.open_rings[digit] = (
                self.prev, self.pending_bond, len(self.slots[self.prev]), pos,
            )
            self.slots[self.prev].append(("ring", digit))
        self.pending_bond = None

    # -- main loop --------------------------------------------------------------

    def run(self) -> OrderedMolGraph:
        if not self.text:
            self.error("empty SMILES string")
        while self.pos < len(self.text):
            ch = self.peek()
            if ch in _AROMATIC_CHARS:
                raise UnsupportedFeature(
                    f"aromatic atom {ch!r} at position {self.pos}; "
                    "input must be Kekule"
                )
            if ch == "*":
                raise UnsupportedFeature(f"wildcard atom at position {self.pos}")
            if ch in "/\\":
                raise UnsupportedFeature(
                    f"directional stereo bond {ch!r} at position {self.pos}"
                )
            if ch.isupper():
                self._parse_bare_atom()
            elif ch == "[":
                self._parse_bracket_atom()
            elif ch in _BOND_CHARS:
                if self.pending_bond is not None:
                    self.error("two bond symbols in a row")
                self.pending_bond = _BOND_CHARS[self.take()]
            elif ch.isdigit():
                pos = self.pos
                self._ring_digit(int(self.take()), pos)
            elif ch == "%":
                pos = self.pos
                self.take()
                d1, d2 = self.take(), self.take()
                if not (d1.isdigit() and d2.isdigit()):
                    self.error("%% ring closure needs two digits", pos)
                self._ring_digit(int(d1 + d2), pos)
            elif ch == "(":
                if self.prev is None:
                    self.error("branch before any atom")
                if self.pending_bond is not None:
                    self.error("bond symbol before branch open")
                self.take()
                self.branch_stack.append(self.prev)
            elif ch == ")":
                if not self.branch_stack:
                    self.error("unmatched ')'")
                if self.pending_bond is not None:
                    self.error("dangling bond symbol before ')'")
                self.take()
                self.prev = self.branch_stack.pop()
            elif ch == ".":
                raise UnsupportedFeature(
                    f"dot-disconnected components at position {self.pos}"
                )
            else:
                self.error(f"unexpected character {ch!r}")
        if self.branch_stack:
            self.error("unclosed branch")
        if self.pending_bond is not None:
            self.error("dangling bond symbol at end of input")
        if self.open_rings:
            digit, (_, _, _, pos) = next(iter(self.open_rings.items()))
            self.error(f"unclosed ring {digit}", pos)

        g = OrderedMolGraph()
        for label in self.atoms:
            g.add_node(label)
        g.edges = list(self.bonds)
        g.incident = [list(s) for s in self.slots]
        return g


def parse_smiles(text: str) -> OrderedMolGraph:
    """Parse a SMILES string into an OrderedMolGraph.

    Incident-edge order follows the order bonds appear in the string;
    a ring-closure bond sits at the position of its closure digit.
    """
    return _Parser(text.strip()).run()


def _atom_token(label: AtomLabel) -> str:
    if label.charge == 0 and label.chirality == "none":
        return label.element
    token = label.element
    if label.chirality == "ccw":
        token += "@"
    elif label.chirality == "cw":
        token += "@@"
    if label.charge:
        sign = "+" if label.charge > 0 else "-"
        token += sign if abs(label.charge) == 1 else f"{sign}{abs(label.charge)}"
    return f"[{token}]"


def write_smiles(g: OrderedMolGraph) -> str:
    """Deterministic SMILES for a connected terminal graph, starting at node 0.

    Round-trips through parse_smiles up to graph isomorphism; not canonical
    across isomorphic inputs with different node orders.
    """
    for v in g.live_nodes():
        if not is_terminal(g.node_labels[v]):
            raise NonTerminalPresent(f"node {v} is not a terminal atom")
    live = g.live_nodes()
    if not live:
        raise ValueError("cannot write an empty graph")
    if any(lab is None for lab in g.node_labels):
        g = g.compact()
        live = g.live_nodes()
    if not g.is_connected():
        raise ValueError("cannot write a disconnected graph")

    root = 0
    preorder: dict[int, int] = {}
    tree_children: dict[int, list[tuple[int, int]]] = {v: [] for v in live}
    back_edges: list[int] = []
    seen_edges: set[int] = set()

    def explore(v: int):
        preorder[v] = len(preorder)
        for eid, w, _ in g.star(v):
            if eid in seen_edges:
                continue
            if w in preorder:
                seen_edges.add(eid)
                back_edges.append(eid)
            else:
                seen_edges.add(eid)
                tree_children[v].append((eid, w))
                explore(w)

    old_limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old_limit, 4 * len(live) + 100))
    try:
        explore(root)
    finally:
        sys.setrecursionlimit(old_limit)

    # ring digit assignment: openers at the earlier endpoint
    ring_open: dict[int, list[int]] = {v: [] for v in live}   # node -> eids
    ring_close: dict[int, list[int]] = {v: [] for v in live}
    for eid in back_edges:
        u, w, _ = g.edges[eid]
        first, second = (u, w) if preorder[u] < preorder[w] else (w, u)
        ring_open[first].append(eid)
        ring_close[second].append(eid)

    digit_of: dict[int, int] = {}
    free_digits = list(range(99, 0, -1))

    def digit_token(d: int, bond: str = "") -> str:
        return f"{bond}{d}" if d < 10 else f"{bond}%{d:02d}"

    out: list[str] = []

    def emit(v: int):
        out.append(_atom_token(g.node_labels[v]))
        for eid in ring_open[v]:
            d = free_digits.pop()
            digit_of[eid] = d
            out.append(digit_token(d))
        for eid in ring_close[v]:
            d = digit_of.pop(eid)
            out.append(digit_token(d, _BOND_SYMBOL[g.edge_label(eid)]))
            free_digits.append(d)
        kids = tree_children[v]
        for i, (eid, w) in enumerate(kids):
            bond = _BOND_SYMBOL[g.edge_label(eid)]
            if i < len(kids) - 1:
                out.append("(")
                out.append(bond)
                emit(w)
                out.append(")")
            else:
                out.append(bond)
                emit(w)

    sys.setrecursionlimit(max(old_limit, 4 * len(live) + 100))
    try:
        emit(root)
    finally:
        sys.setrecursionlimit(old_limit)
    return "".join(out)
