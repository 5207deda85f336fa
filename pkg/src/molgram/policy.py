"""Graph-convolutional policy/critic over derivation states, with exact
hand-written reverse-mode gradients.

Per layer, node features are updated channel-wise through the edge-feature
matrices with a tanh nonlinearity and a residual connection, averaging over
the edge channels; edge features are then refreshed from the incident node
pair (direction-sensitive) and their previous value.  The policy head reads
the focus node's row, the critic head reads the node average.

Everything is float64 numpy; gradients are checked against central finite
differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from molgram.errors import EmptyLegalSet, NumericalError, ShapeMismatch
from molgram.grammar import Grammar, legal_rules
from molgram.molgraph.core import EPS_EDGE, NT_NS, NT_START, NT_X, is_terminal

N_EDGE_CHANNELS = 4  # single, double, triple, placeholder

CHECKPOINT_VERSION = 1


class Featurizer:
    """Maps derivation states of one grammar to numeric features.

    Node columns: one-hot over the atom labels appearing in the grammar,
    then the three placeholder classes, then a focus indicator."""

    def __init__(self, grammar: Grammar):
        labels = set()
        for rule in grammar.rules:
            for lab in rule.rhs_labels:
                if is_terminal(lab):
                    labels.add(lab)
        self.atom_labels = sorted(labels)
        self.atom_index = {lab: i for i, lab in enumerate(self.atom_labels)}
        base = len(self.atom_labels)
        self.x_col = base
        self.ns_col = base + 1
        self.s_col = base + 2
        self.focus_col = base + 3
        self.width = base + 4

    def featurize(self, state) -> "Featurization":
        graph = state.graph
        live = graph.live_nodes()
        index = {v: i for i, v in enumerate(live)}
        n = len(live)
        nodes = np.zeros((n, self.width))
        for v, i in index.items():
            lab = graph.node_labels[v]
            if is_terminal(lab):
                col = self.atom_index.get(lab)
                if col is None:
                    raise ShapeMismatch(f"label {lab} unknown to this grammar")
                nodes[i, col] = 1.0
            elif lab == NT_X:
                nodes[i, self.x_col] = 1.0
            elif lab == NT_NS:
                nodes[i, self.ns_col] = 1.0
            elif lab == NT_START:
                nodes[i, self.s_col] = 1.0
        entry = state.pending_entry()
        focus = None
        if entry is not None:
            focus = index[entry.node]
            nodes[focus, self.focus_col] = 1.0
        entries = set()   # (channel, src, dst) for the layer-0 scatter
        directed = set()  # unique (src, dst); parallel stubs share a cell
        for v in live:
            for eid in graph.incident[v]:
                u, w, lab = graph.edges[eid]
                if u != v:
                    continue  # handle each edge once, from its u side
                ch = 3 if lab == EPS_EDGE else lab - 1
                entries.add((ch, index[u], index[w]))
                entries.add((ch, index[w], index[u]))
                directed.add((index[u], index[w]))
                directed.add((index[w], index[u]))
        e0 = np.array(sorted(entries), dtype=np.int64).reshape(-1, 3)
        pairs = np.array(sorted(directed), dtype=np.int64).reshape(-1, 2)
        return Featurization(
            nodes=nodes, e0_entries=e0, pairs=pairs, focus=focus,
        )


@dataclass
class Featurization:
    nodes: np.ndarray       # (n, d0) one-hot + focus
    e0_entries: np.ndarray  # (k, 3) rows (channel, src, dst) set to 1 at layer 0
    pairs: np.ndarray       # (m, 2) unique directed edge endpoints
    focus: int | None

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]


def featurize(grammar: Grammar, state) -> Featurization:
    return _featurizer_for(grammar).featurize(state)


def _featurizer_for(grammar: Grammar) -> Featurizer:
    feat = getattr(grammar, "_featurizer", None)
    if feat is None:
        feat = Featurizer(grammar)
        grammar._featurizer = feat
    return feat


class PolicyParams:
    """All network parameters as a flat name -> float64 array mapping."""

    def __init__(self, layers: int, width: int, n_rules: int,
                 n_channels: int = N_EDGE_CHANNELS,
                 tensors: dict[str, np.ndarray] | None = None):
        self.layers = layers
        self.width = width
        self.n_rules = n_rules
        self.n_channels = n_channels
        if tensors is None:
            tensors = {}
        self.tensors = tensors

    @classmethod
    def init(cls, n_rules: int, width: int = 64, layers: int = 3,
             n_channels: int = N_EDGE_CHANNELS, seed: int = 0,
             scale: float = 0.1) -> "PolicyParams":
        rng = np.random.default_rng(seed)
        p = cls(layers, width, n_rules, n_channels)
        d, s_e = width, n_channels

        def u(*shape):
            return rng.uniform(-scale, scale, size=shape)

        for l in range(layers):
            p.tensors[f"W{l}"] = u(s_e, d, d)
            p.tensors[f"b{l}"] = u(s_e, d)
            p.tensors[f"We{l}"] = u(2 * d, s_e)
            p.tensors[f"be{l}"] = u(s_e)
            p.tensors[f"WE{l}"] = u(2 * s_e, s_e)
            p.tensors[f"bE{l}"] = u(s_e)
        p.tensors["Whead"] = u(d, n_rules)
        p.tensors["bhead"] = u(n_rules)
        p.tensors["Wc"] = u(d)
        p.tensors["bc"] = u(1)
        return p

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.layers, self.width, self.n_rules,
                            self.n_channels,
                            {k: v.copy() for k, v in self.tensors.items()})

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}

    # -- persistence ---------------------------------------------------------

    def save(self, path: str):
        meta = np.array([CHECKPOINT_VERSION, self.layers, self.width,
                         self.n_rules, self.n_channels], dtype=np.int64)
        np.savez(path, __meta__=meta, **self.tensors)

    @classmethod
    def load(cls, path: str) -> "PolicyParams":
        data = np.load(path)
        meta = data["__meta__"]
        if int(meta[0]) != CHECKPOINT_VERSION:
            raise ShapeMismatch(f"unsupported checkpoint version {int(meta[0])}")
        tensors = {k: data[k] for k in data.files if k != "__meta__"}
        return cls(int(meta[1]), int(meta[2]), int(meta[3]), int(meta[4]),
                   tensors)


def _lift(feat: Featurization, width: int) -> np.ndarray:
    d0 = feat.nodes.shape[1]
    if d0 > width:
        raise ShapeMismatch(
            f"feature width {d0} exceeds network width {width}; "
            "increase the hidden width"
        )
    if d0 == width:
        return feat.nodes.copy()
    lifted = np.zeros((feat.n_nodes, width))
    lifted[:, :d0] = feat.nodes
    return lifted


def _dense_edges(feat: Featurization, n_channels: int) -> np.ndarray:
    n = feat.n_nodes
    e0 = np.zeros((n_channels, n, n))
    if len(feat.e0_entries):
        ent = feat.e0_entries
        e0[ent[:, 0], ent[:, 1], ent[:, 2]] = 1.0
    return e0


def gcn_forward(params: PolicyParams, feat: Featurization,
                want_cache: bool = False):
    """Run the stacked node/edge updates; returns final node features
    (n, width), plus the layer cache when requested."""
    v = _lift(feat, params.width)
    e = _dense_edges(feat, params.n_channels)
    src = feat.pairs[:, 0] if len(feat.pairs) else None
    dst = feat.pairs[:, 1] if len(feat.pairs) else None
    d = params.width
    cache = {"layers": [], "v0": v}
    for l in range(params.layers):
        w, b = params.tensors[f"W{l}"], params.tensors[f"b{l}"]
        p = np.matmul(e, v)                       # (S_E, n, d)
        z = np.matmul(p, w) + b[:, None, :]
        t = np.tanh(z)
        v_next = t.mean(axis=0) + v
        layer = {"v_in": v, "p": p, "t": t, "e_in": e}
        if src is not None:
            we, be = params.tensors[f"We{l}"], params.tensors[f"be{l}"]
            wE, bE = params.tensors[f"WE{l}"], params.tensors[f"bE{l}"]
            cat = np.concatenate([v_next[src], v_next[dst]], axis=1)  # (m, 2d)
            e_vec = np.maximum(cat @ we + be, 0.0)                    # (m, S_E)
            e_old = e[:, src, dst].T                                  # (m, S_E)
            g_vec = np.concatenate([e_vec, e_old], axis=1)            # (m, 2S_E)
            e_new_pairs = np.maximum(g_vec @ wE + bE, 0.0)
            e_next = np.zeros_like(e)
            e_next[:, src, dst] = e_new_pairs.T
            layer.update(cat=cat, e_vec=e_vec, g_vec=g_vec,
                         e_new_pairs=e_new_pairs)
            e = e_next
        cache["layers"].append(layer)
        v = v_next
    if not np.all(np.isfinite(v)):
        raise NumericalError("non-finite node features in forward pass")
    return (v, cache) if want_cache else v


def head_logits(params: PolicyParams, v_final: np.ndarray,
                focus: int) -> np.ndarray:
    return v_final[focus] @ params.tensors["Whead"] + params.tensors["bhead"]


def head_value(params: PolicyParams, v_final: np.ndarray) -> float:
    avg = v_final.mean(axis=0)
    return float(avg @ params.tensors["Wc"] + params.tensors["bc"][0])


def masked_log_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Log-probabilities over the legal set; illegal entries are -inf."""
    out = np.full_like(logits, -np.inf)
    legal = np.flatnonzero(mask)
    if len(legal) == 0:
        raise EmptyLegalSet("mask admits no action")
    z = logits[legal]
    z = z - z.max()
    logp = z - np.log(np.exp(z).sum())
    out[legal] = logp
    return out


def masked_entropy(logits: np.ndarray, mask: np.ndarray) -> float:
    logp = masked_log_softmax(logits, mask)
    legal = np.flatnonzero(mask)
    p = np.exp(logp[legal])
    return float(-(p * logp[legal]).sum())


def legal_mask(grammar: Grammar, state) -> np.ndarray:
    mask = np.zeros(grammar.n_rules(), dtype=bool)
    for rid in legal_rules(grammar, state):
        mask[rid] = True
    return mask


def policy_logits(params: PolicyParams, grammar: Grammar, state):
    """(logits, legal mask) at the pending placeholder."""
    feat = featurize(grammar, state)
    if feat.focus is None:
        raise EmptyLegalSet("derivation is complete; no focus node")
    mask = legal_mask(grammar, state)
    if not mask.any():
        raise EmptyLegalSet("no rule matches the focus context")
    v_final = gcn_forward(params, feat)
    return head_logits(params, v_final, feat.focus), mask


def critic_value(params: PolicyParams, grammar: Grammar, state) -> float:
    feat = featurize(grammar, state)
    return head_value(params, gcn_forward(params, feat))


@dataclass
class LossTerm:
    """One state's contribution to a scalar loss.

    The loss is coef_logp * log pi(action) + coef_value * value +
    coef_entropy * entropy(policy); backward accumulates its exact gradient.
    """

    feat: Featurization
    mask: np.ndarray
    action: int | None = None
    coef_logp: float = 0.0
    coef_value: float = 0.0
    coef_entropy: float = 0.0


def backward(params: PolicyParams, terms: list[LossTerm]) -> dict[str, np.ndarray]:
    """Exact gradients of the summed loss terms for every parameter."""
    grads = params.zeros_like()
    for term in terms:
        _accumulate_term(params, term, grads)
    for key, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in {key}")
    return grads


def loss_value(params: PolicyParams, term: LossTerm) -> float:
    """Scalar loss of one term; the quantity backward differentiates."""
    v_final = gcn_forward(params, term.feat)
    total = 0.0
    if term.coef_logp or term.coef_entropy:
        logits = head_logits(params, v_final, term.feat.focus)
        logp = masked_log_softmax(logits, term.mask)
        if term.coef_logp:
            total += term.coef_logp * logp[term.action]
        if term.coef_entropy:
            legal = np.flatnonzero(term.mask)
            p = np.exp(logp[legal])
            total += term.coef_entropy * float(-(p * logp[legal]).sum())
    if term.coef_value:
        total += term.coef_value * head_value(params, v_final)
    return float(total)


def _accumulate_term(params: PolicyParams, term: LossTerm,
                     grads: dict[str, np.ndarray]):
    feat = term.feat
    v_final, cache = gcn_forward(params, feat, want_cache=True)
    n = feat.n_nodes
    d_v = np.zeros_like(v_final)

    if term.coef_logp or term.coef_entropy:
        logits = head_logits(params, v_final, feat.focus)
        logp = masked_log_softmax(logits, term.mask)
        legal = np.flatnonzero(term.mask)
        p = np.exp(logp[legal])
        d_logits = np.zeros_like(logits)
        if term.coef_logp:
            d_legal = -p * term.coef_logp
            d_logits[legal] += d_legal
            d_logits[term.action] += term.coef_logp
        if term.coef_entropy:
            h = float(-(p * logp[legal]).sum())
            d_logits[legal] += term.coef_entropy * (-p * (logp[legal] + h))
        v_f = v_final[feat.focus]
        grads["Whead"] += np.outer(v_f, d_logits)
        grads["bhead"] += d_logits
        d_v[feat.focus] += params.tensors["Whead"] @ d_logits

    if term.coef_value:
        avg = v_final.mean(axis=0)
        grads["Wc"] += term.coef_value * avg
        grads["bc"] += term.coef_value
        d_v += (term.coef_value / n) * params.tensors["Wc"][None, :]

    src = feat.pairs[:, 0] if len(feat.pairs) else None
    dst = feat.pairs[:, 1] if len(feat.pairs) else None
    d_e = np.zeros((params.n_channels, n, n))
    s_e = params.n_channels

    for l in reversed(range(params.layers)):
        layer = cache["layers"][l]
        if src is not None:
            # edge-update backward contributes to this layer's output nodes
            wE = params.tensors[f"WE{l}"]
            we = params.tensors[f"We{l}"]
            d_enew = d_e[:, src, dst].T                       # (m, S_E)
            d_enew = d_enew * (layer["e_new_pairs"] > 0.0)
            grads[f"WE{l}"] += layer["g_vec"].T @ d_enew
            grads[f"bE{l}"] += d_enew.sum(axis=0)
            d_g = d_enew @ wE.T                               # (m, 2S_E)
            d_evec = d_g[:, :s_e] * (layer["e_vec"] > 0.0)
            d_eold_pairs = d_g[:, s_e:]
            grads[f"We{l}"] += layer["cat"].T @ d_evec
            grads[f"be{l}"] += d_evec.sum(axis=0)
            d_cat = d_evec @ we.T                             # (m, 2d)
            np.add.at(d_v, src, d_cat[:, :params.width])
            np.add.at(d_v, dst, d_cat[:, params.width:])
            d_e = np.zeros_like(d_e)
            d_e[:, src, dst] = d_eold_pairs.T
        else:
            d_e = np.zeros_like(d_e)

        # node-update backward
        w = params.tensors[f"W{l}"]
        d_t = np.broadcast_to(d_v / s_e, layer["t"].shape)
        d_z = d_t * (1.0 - layer["t"] ** 2)
        grads[f"W{l}"] += np.einsum("end,enk->edk", layer["p"], d_z)
        grads[f"b{l}"] += d_z.sum(axis=1)
        d_p = np.einsum("enk,edk->end", d_z, w)
        d_v = np.einsum("enm,end->md", layer["e_in"], d_p) + d_v
        d_e += np.einsum("end,md->enm", d_p, layer["v_in"])
