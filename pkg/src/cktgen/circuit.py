"""Circuit DAG data model, validity checks, canonical ordering and hashing.

A circuit is a list of typed subgraph nodes plus a set of directed edges
``(src, dst)`` given as 0-based node indices. In canonical order every edge
points forward (``src < dst``), which makes the graph acyclic by construction
and lets the edge set be flattened into the upper-triangular list used by the
decoder.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .profiles import PROFILE_101, DatasetProfile


@dataclass(frozen=True)
class Node:
    type: int
    position: int
    params: tuple = ()

    def padded_params(self, width):
        p = tuple(float(x) for x in self.params)
        if len(p) > width:
            raise ValueError(f"node has {len(p)} parameters, width is {width}")
        return p + (0.0,) * (width - len(p))


@dataclass(frozen=True)
class Circuit:
    nodes: tuple
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", frozenset((int(j), int(i)) for j, i in self.edges))
        n = len(self.nodes)
        for j, i in self.edges:
            if not (0 <= j < n and 0 <= i < n):
                raise ValueError(f"edge ({j}, {i}) references a missing node")

    def __len__(self):
        return len(self.nodes)

    @property
    def types(self):
        return [nd.type for nd in self.nodes]

    @property
    def positions(self):
        return [nd.position for nd in self.nodes]

    def is_forward(self):
        """True when every edge goes from a lower to a higher node index."""
        return all(j < i for j, i in self.edges)

    def adjacency(self):
        n = len(self.nodes)
        a = np.zeros((n, n), dtype=np.int8)
        for j, i in self.edges:
            a[j, i] = 1
        return a

    def edge_vector(self):
        """Flattened upper-triangular edge list of length N(N-1)/2."""
        if not self.is_forward():
            raise ValueError("edge list is only defined for forward-ordered circuits")
        return flatten_adjacency(self.adjacency())

    def param_array(self, width):
        if not self.nodes:
            return np.zeros((0, width))
        return np.array([nd.padded_params(width) for nd in self.nodes], dtype=np.float64)

    @classmethod
    def from_adjacency(cls, nodes, adjacency):
        a = np.asarray(adjacency)
        edges = {(int(j), int(i)) for j, i in zip(*np.nonzero(a))}
        return cls(tuple(nodes), frozenset(edges))

    def with_params(self, params):
        nodes = tuple(Node(nd.type, nd.position, tuple(float(x) for x in p))
                      for nd, p in zip(self.nodes, params))
        return Circuit(nodes, self.edges)


@dataclass(frozen=True)
class ValidityReport:
    is_dag: bool
    single_io: bool
    no_floating: bool
    main_path_ok: bool

    @property
    def is_valid_circuit(self):
        return self.is_dag and self.single_io and self.no_floating and self.main_path_ok


# ---------------------------------------------------------------------------
# edge-list flattening

def flatten_index(j, i, n):
    """Position of edge ``j -> i`` (1-based, ``j < i <= n``) in the flattened list.

    Edges are ordered by target first, then by source:
    ``(1,2), (1,3), (2,3), (1,4), ...``.
    """
    if not (isinstance(j, (int, np.integer)) and isinstance(i, (int, np.integer))):
        raise TypeError("indices must be integers")
    if not 1 <= j < i <= n:
        raise ValueError(f"need 1 <= j < i <= n, got j={j}, i={i}, n={n}")
    return (i - 1) * (i - 2) // 2 + (j - 1)


def edge_pairs(n):
    """0-based ``(src, dst)`` pairs in flattened-list order."""
    return [(j, i) for i in range(1, n) for j in range(i)]


def flatten_adjacency(a):
    a = np.asarray(a)
    n = a.shape[0]
    rows, cols = _triu_index(n)
    return a[rows, cols].copy()


def unflatten_edges(xe, n):
    xe = np.asarray(xe)
    if xe.shape[0] != n * (n - 1) // 2:
        raise ValueError(f"edge list of length {xe.shape[0]} does not match n={n}")
    a = np.zeros((n, n), dtype=xe.dtype)
    rows, cols = _triu_index(n)
    a[rows, cols] = xe
    return a


def _triu_index(n):
    pairs = edge_pairs(n)
    if not pairs:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    src, dst = zip(*pairs)
    return np.array(src), np.array(dst)


# ---------------------------------------------------------------------------
# validity

def _succ_lists(n, edges):
    succ = [[] for _ in range(n)]
    for j, i in edges:
        succ[j].append(i)
    return succ


def _is_acyclic(n, succ):
    indeg = [0] * n
    for s in succ:
        for i in s:
            indeg[i] += 1
    stack = [v for v in range(n) if indeg[v] == 0]
    seen = 0
    while stack:
        v = stack.pop()
        seen += 1
        for w in succ[v]:
            indeg[w] -= 1
            if indeg[w] == 0:
                stack.append(w)
    return seen == n


def _reach(starts, nbrs):
    seen = set(starts)
    stack = list(starts)
    while stack:
        v = stack.pop()
        for w in nbrs[v]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return seen


def validity_flags(types, positions, edges, profile: DatasetProfile = PROFILE_101):
    """Validity checks on raw node/edge data; see :func:`validate`."""
    n = len(types)
    succ = _succ_lists(n, edges)
    is_dag = _is_acyclic(n, succ)

    inputs = [v for v in range(n) if types[v] == profile.input_type]
    outputs = [v for v in range(n) if types[v] == profile.output_type]
    single_io = len(inputs) == 1 and len(outputs) == 1

    pred = [[] for _ in range(n)]
    for j, i in edges:
        pred[i].append(j)
    fwd = _reach(inputs, succ)
    bwd = _reach(outputs, pred)
    terminals = set(inputs) | set(outputs)
    no_floating = all(v in fwd and v in bwd for v in range(n) if v not in terminals)

    main_path_ok = single_io and _main_path_ok(types, positions, edges, inputs[0], outputs[0], profile)
    return ValidityReport(is_dag, single_io, no_floating, main_path_ok)


def _main_path_ok(types, positions, edges, v_in, v_out, profile):
    if len(set(positions)) != len(positions):
        return False
    main = [v for v in range(len(types))
            if v in (v_in, v_out) or profile.is_main_path(positions[v])]
    main.sort(key=lambda v: positions[v])
    if main[0] != v_in or main[-1] != v_out:
        return False
    rank = {v: r for r, v in enumerate(main)}
    for j, i in edges:
        if j in rank and i in rank and rank[j] > rank[i]:
            return False
    edge_set = set(edges)
    return all((u, v) in edge_set for u, v in zip(main, main[1:]))


def validate(c: Circuit, profile: DatasetProfile = PROFILE_101) -> ValidityReport:
    """Check a circuit for acyclicity, terminals, floating nodes and the main path.

    * ``is_dag``: the edge relation has no directed cycle.
    * ``single_io``: exactly one INPUT and one OUTPUT node.
    * ``no_floating``: every non-terminal node is reachable from an INPUT and
      reaches an OUTPUT.
    * ``main_path_ok``: positions are unique, and the main-path nodes sorted by
      position start at INPUT, end at OUTPUT, are linked consecutively by edges,
      and no edge between them runs backwards.

    Never raises; decoder output of any shape is accepted.
    """
    return validity_flags(c.types, c.positions, c.edges, profile)


# ---------------------------------------------------------------------------
# canonical form

def canonical_order(c: Circuit, profile: DatasetProfile = PROFILE_101):
    """Node permutation: INPUT first, OUTPUT last, others by (position, type, index)."""
    def key(v):
        nd = c.nodes[v]
        rank = 0 if nd.type == profile.input_type else 2 if nd.type == profile.output_type else 1
        return (rank, nd.position, nd.type, v)
    return sorted(range(len(c.nodes)), key=key)


def canonicalize(c: Circuit, profile: DatasetProfile = PROFILE_101) -> Circuit:
    order = canonical_order(c, profile)
    new_index = {old: new for new, old in enumerate(order)}
    nodes = tuple(c.nodes[v] for v in order)
    edges = frozenset((new_index[j], new_index[i]) for j, i in c.edges)
    return Circuit(nodes, edges)


def canonical_hash(c: Circuit, profile: DatasetProfile = PROFILE_101) -> str:
    """Digest of node types, positions and edges; device parameters are ignored."""
    if not _is_acyclic(len(c.nodes), _succ_lists(len(c.nodes), c.edges)):
        raise ValueError("canonical_hash requires an acyclic circuit")
    cc = canonicalize(c, profile)
    payload = {
        "t": cc.types,
        "p": cc.positions,
        "e": sorted(cc.edges),
    }
    return hashlib.sha256(json.dumps(payload, separators=(",", ":")).encode()).hexdigest()


# ---------------------------------------------------------------------------
# export

def to_dot(c: Circuit, profile: DatasetProfile = PROFILE_101, name="circuit"):
    """Graphviz source for one circuit.

    Main-path nodes are drawn as boxes. A virtual GND vertex is added when the
    profile's ground rule applies; it is not part of the graph proper.
    """
    lines = [f'digraph "{name}" {{', "  rankdir=LR;"]
    for v, nd in enumerate(c.nodes):
        tname = profile.type_names[nd.type] if 0 <= nd.type < len(profile.type_names) else f"T{nd.type}"
        shape = "box" if profile.is_main_path(nd.position) else "ellipse"
        lines.append(f'  n{v} [label="{tname}@p{nd.position}", shape={shape}];')
    for j, i in sorted(c.edges):
        lines.append(f"  n{j} -> n{i};")
    positions = c.positions
    if profile.gnd_trigger_position is not None and profile.gnd_trigger_position in positions:
        lines.append('  gnd [label="GND", shape=point];')
        for v, p in enumerate(positions):
            if p in profile.gnd_positions:
                lines.append(f"  n{v} -> gnd [style=dashed, arrowhead=none];")
    lines.append("}")
    return "\n".join(lines) + "\n"
