"""Specification preprocessing, JSON-lines I/O, batching and toy data.

On-disk format is one JSON object per line::

    {"nodes": [{"t": 0, "p": 0, "b": [0.0, 0.0, 0.0]}, ...],
     "edges": [[1, 2], ...],
     "spec": {"gain": 3.7, "bw": 10.2, "pm": 2.9}}

Edge indices are 1-based into ``nodes`` with ``j < i``.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .circuit import Circuit, Node, canonical_hash, canonicalize, edge_pairs, validate
from .errors import CapacityError, SchemaError
from .profiles import DatasetProfile

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RawSpecification:
    gain: float
    bw: float
    pm: float


@dataclass(frozen=True, order=True)
class BinnedSpecification:
    gain: int
    bw: int
    pm: int

    def as_tuple(self):
        return (self.gain, self.bw, self.pm)

    def one_hot(self, profile: DatasetProfile):
        out = np.zeros(sum(profile.categories), dtype=np.float32)
        offset = 0
        for value, size in zip(self.as_tuple(), profile.categories):
            out[offset + value] = 1.0
            offset += size
        return out

    def check(self, profile: DatasetProfile):
        for name, value, size in zip(("gain", "bw", "pm"), self.as_tuple(), profile.categories):
            if not 0 <= value < size:
                raise ValueError(f"{name} category {value} outside [0, {size})")


@dataclass(frozen=True)
class Record:
    circuit: Circuit
    spec: BinnedSpecification
    raw: RawSpecification | None = None


def preprocess_spec(r: RawSpecification, p: DatasetProfile):
    """Bin a raw specification, or return ``None`` if the row is invalid.

    A row is rejected when the phase margin is negative, a value is not
    finite, or a truncated value falls outside the profile's category range.
    Accepted values are binned by ``floor`` and clamped into range.
    """
    values = (r.gain, r.bw, r.pm)
    if any(not math.isfinite(v) for v in values):
        return None
    if r.pm < 0:
        return None
    cats = []
    for v, size in zip(values, p.categories):
        if not 0 <= math.trunc(v) < size:
            return None
        cats.append(min(max(math.floor(v), 0), size - 1))
    return BinnedSpecification(*cats)


def make_filter_mask(specs):
    """``False`` where two distinct batch entries share a specification."""
    keys = [s.as_tuple() if isinstance(s, BinnedSpecification) else tuple(s) for s in specs]
    m = len(keys)
    mask = np.ones((m, m), dtype=bool)
    for a in range(m):
        for b in range(m):
            if a != b and keys[a] == keys[b]:
                mask[a, b] = False
    return mask


# ---------------------------------------------------------------------------
# JSON lines

def circuit_to_json(c: Circuit, profile: DatasetProfile):
    return {
        "nodes": [{"t": nd.type, "p": nd.position, "b": list(nd.padded_params(profile.param_width))}
                  for nd in c.nodes],
        "edges": [[j + 1, i + 1] for j, i in sorted(c.edges, key=lambda e: (e[1], e[0]))],
    }


def record_to_json(rec: Record, profile: DatasetProfile):
    d = circuit_to_json(rec.circuit, profile)
    raw = rec.raw if rec.raw is not None else RawSpecification(*map(float, rec.spec.as_tuple()))
    d["spec"] = {"gain": raw.gain, "bw": raw.bw, "pm": raw.pm}
    return d


def circuit_from_json(obj, profile: DatasetProfile, lineno=None):
    try:
        raw_nodes = obj["nodes"]
        raw_edges = obj.get("edges", [])
    except (KeyError, TypeError, AttributeError) as exc:
        raise SchemaError(f"missing field {exc}", lineno) from None
    if not isinstance(raw_nodes, list) or not isinstance(raw_edges, list):
        raise SchemaError("nodes and edges must be JSON arrays", lineno)
    nodes = []
    for k, nd in enumerate(raw_nodes):
        try:
            t, pos = int(nd["t"]), int(nd["p"])
            params = [float(x) for x in nd.get("b", [])]
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise SchemaError(f"bad node {k}: {exc}", lineno) from None
        if not 0 <= t < profile.n_types:
            raise SchemaError(f"unknown node type id {t}", lineno)
        if not 0 <= pos < profile.n_max:
            raise SchemaError(f"position {pos} outside [0, {profile.n_max})", lineno)
        if len(params) > profile.param_width:
            raise SchemaError(f"node {k} has {len(params)} parameters, width is {profile.param_width}", lineno)
        params += [0.0] * (profile.param_width - len(params))
        mask = profile.param_mask(t)
        if any(v != 0.0 and not live for v, live in zip(params, mask)):
            raise SchemaError(f"node {k} sets a parameter slot its type does not use", lineno)
        nodes.append(Node(t, pos, tuple(params)))
    edges = set()
    for e in raw_edges:
        try:
            j, i = int(e[0]), int(e[1])
        except (TypeError, ValueError, IndexError):
            raise SchemaError(f"bad edge {e!r}", lineno) from None
        if not 1 <= j < i <= len(nodes):
            raise SchemaError(f"edge {e!r} must satisfy 1 <= j < i <= {len(nodes)}", lineno)
        edges.add((j - 1, i - 1))
    return Circuit(tuple(nodes), frozenset(edges))


def load_ocb(path, p: DatasetProfile):
    """Read a JSON-lines file into records.

    Returns ``(records, dropped)``. Rows with an invalid specification, or whose
    canonical node order is not a topological order, are dropped and counted.
    """
    records = []
    dropped = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"malformed JSON: {exc.msg}", lineno) from None
            if not isinstance(obj, dict):
                raise SchemaError("record must be a JSON object", lineno)
            circuit = circuit_from_json(obj, p, lineno)
            try:
                s = obj["spec"]
                raw = RawSpecification(float(s["gain"]), float(s["bw"]), float(s["pm"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise SchemaError(f"bad spec: {exc}", lineno) from None
            binned = preprocess_spec(raw, p)
            if binned is None:
                dropped += 1
                continue
            circuit = canonicalize(circuit, p)
            if not circuit.is_forward():
                log.warning("line %d: canonical order is not topological, row dropped", lineno)
                dropped += 1
                continue
            records.append(Record(circuit, binned, raw))
    return records, dropped


def save_jsonl(records, path, p: DatasetProfile):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(record_to_json(rec, p)) + "\n")


def split(records, train_frac=0.9, seed=0):
    """Seeded random partition into ``(train, test)``."""
    if not 0 < train_frac < 1:
        raise ValueError("train_frac must lie strictly between 0 and 1")
    records = list(records)
    perm = np.random.default_rng(seed).permutation(len(records))
    n_train = int(round(len(records) * train_frac))
    return [records[k] for k in perm[:n_train]], [records[k] for k in perm[n_train:]]


def group_by_spec(records):
    groups = {}
    for rec in records:
        groups.setdefault(rec.spec, []).append(rec)
    return dict(sorted(groups.items()))


# ---------------------------------------------------------------------------
# toy data


def _bucket_range(bucket, n_buckets):
    width = 1.0 / n_buckets
    lo = bucket * width
    return lo + 0.1 * width, lo + 0.9 * width


def _stage_positions(profile):
    main = sorted(profile.main_path_positions)
    return main[1:-1], main[0], main[-1]


def _random_topology(rng, profile, type_pool):
    stages, p_in, p_out = _stage_positions(profile)
    off_path = [q for q in range(profile.n_max) if not profile.is_main_path(q)]
    k = int(rng.integers(1, len(stages) + 1))
    room = profile.n_max - 2 - k
    n_branch = int(rng.integers(0, min(2, room, len(off_path)) + 1))
    branch_pos = sorted(rng.choice(off_path, size=n_branch, replace=False).tolist()) if n_branch else []

    nodes = [Node(profile.input_type, p_in)]
    nodes += [Node(int(rng.choice(type_pool)), stages[s]) for s in range(k)]
    nodes += [Node(int(rng.choice(type_pool)), q) for q in branch_pos]
    nodes.append(Node(profile.output_type, p_out))
    out = len(nodes) - 1
    chain = list(range(k + 1)) + [out]
    edges = set(zip(chain, chain[1:]))
    # forward skip connection along the main path
    if k >= 2 and rng.random() < 0.3:
        a = int(rng.integers(0, k - 1))
        edges.add((a, a + 2))
    for b in range(k + 1, out):
        src = int(rng.integers(0, b))
        edges.add((src, b))
        edges.add((b, out))
    return Circuit(tuple(nodes), frozenset(edges))


def _with_bucket_params(c, rng, profile, bucket, n_buckets):
    lo, hi = _bucket_range(bucket, n_buckets)
    params = []
    for nd in c.nodes:
        live = profile.param_counts[nd.type]
        vals = [round(float(rng.uniform(lo, hi)), 4) for _ in range(live)]
        params.append(tuple(vals) + (0.0,) * (profile.param_width - live))
    return c.with_params(params)


def synthesize_toy(p: DatasetProfile, n_circuits, n_spec_types, seed=0, n_buckets=2):
    """Generate valid toy circuits with a learnable spec labelling.

    There are ``T = max(n_spec_types, n_buckets)`` topology classes and
    ``n_buckets`` disjoint parameter ranges. The label of a circuit is
    ``(t - b) mod n_spec_types`` for topology class ``t`` and bucket ``b``, so
    every label is reached from ``n_buckets`` different topologies and the
    topology alone does not pin down the label.
    """
    if n_circuits < 0:
        raise ValueError("n_circuits must be non-negative")
    if n_circuits == 0:
        return []
    if n_spec_types < 1:
        raise ValueError("n_spec_types must be positive")
    grid = p.n_gain * p.n_bw * p.n_pm
    if n_spec_types > grid:
        raise ValueError(f"{n_spec_types} spec types exceed the {grid}-cell category grid")
    if n_buckets < 2:
        raise ValueError("n_buckets must be at least 2")
    if n_circuits < n_buckets * n_spec_types:
        raise ValueError("need n_buckets circuits per spec type to cover every topology")

    rng = np.random.default_rng(seed)
    cells = rng.choice(grid, size=n_spec_types, replace=False)
    labels = []
    for cell in cells:
        g, rest = divmod(int(cell), p.n_bw * p.n_pm)
        b, q = divmod(rest, p.n_pm)
        labels.append(BinnedSpecification(g, b, q))

    n_topo = max(n_spec_types, n_buckets)
    type_pool = [t for t in range(p.n_types) if t not in (p.input_type, p.output_type)]
    topologies, seen = [], set()
    for _ in range(200 * n_topo):
        if len(topologies) == n_topo:
            break
        c = canonicalize(_random_topology(rng, p, type_pool), p)
        h = canonical_hash(c, p)
        if h not in seen and validate(c, p).is_valid_circuit:
            seen.add(h)
            topologies.append(c)
    if len(topologies) < n_topo:
        raise ValueError(f"could not build {n_topo} distinct topologies for this profile")

    records = []
    for k in range(n_circuits):
        label = k % n_spec_types
        bucket = (k // n_spec_types) % n_buckets
        topo = (label + bucket) % n_topo
        c = _with_bucket_params(topologies[topo], rng, p, bucket, n_buckets)
        spec = labels[(topo - bucket) % n_spec_types]
        frac = rng.uniform(0, 0.99, size=3).round(3)
        raw = RawSpecification(*(float(v + f) for v, f in zip(spec.as_tuple(), frac)))
        records.append(Record(c, spec, raw))
    order = rng.permutation(n_circuits)
    return [records[k] for k in order]


# ---------------------------------------------------------------------------
# batching

@dataclass
class Batch:
    types: torch.Tensor        # (M, N) long, padded with profile.none_type
    positions: torch.Tensor    # (M, N) long, padded with 0
    params: torch.Tensor       # (M, N, P) float, zero where masked
    param_mask: torch.Tensor   # (M, N, P) bool
    node_mask: torch.Tensor    # (M, N) bool
    adjacency: torch.Tensor    # (M, N, N) float
    edges: torch.Tensor        # (M, N(N-1)/2) float
    edge_mask: torch.Tensor    # (M, N(N-1)/2) bool
    lengths: torch.Tensor      # (M,) long
    specs: torch.Tensor        # (M, 3) long
    spec_onehot: torch.Tensor  # (M, sum C) float
    filter_mask: torch.Tensor  # (M, M) bool

    def __len__(self):
        return self.types.shape[0]

    def to(self, dtype):
        kw = {}
        for name in ("params", "adjacency", "edges", "spec_onehot"):
            kw[name] = getattr(self, name).to(dtype)
        return Batch(**{**self.__dict__, **kw})


def make_batch(records, profile: DatasetProfile, dtype=torch.float32):
    m, n, pw = len(records), profile.n_max, profile.param_width
    types = np.full((m, n), profile.none_type, dtype=np.int64)
    positions = np.zeros((m, n), dtype=np.int64)
    params = np.zeros((m, n, pw))
    pmask = np.zeros((m, n, pw), dtype=bool)
    adj = np.zeros((m, n, n))
    lengths = np.zeros(m, dtype=np.int64)
    specs = np.zeros((m, 3), dtype=np.int64)
    onehot = np.zeros((m, sum(profile.categories)), dtype=np.float32)
    for r, rec in enumerate(records):
        c = rec.circuit
        k = len(c)
        if k > n:
            raise CapacityError(f"circuit with {k} nodes exceeds n_max={n}")
        if not c.is_forward():
            raise ValueError("batched circuits must be forward-ordered")
        lengths[r] = k
        for v, nd in enumerate(c.nodes):
            if nd.position >= n:
                raise CapacityError(f"position {nd.position} exceeds n_max={n}")
            types[r, v] = nd.type
            positions[r, v] = nd.position
            mask = profile.param_mask(nd.type)
            pmask[r, v] = mask
            params[r, v] = np.where(mask, nd.padded_params(pw), 0.0)
        for j, i in c.edges:
            adj[r, j, i] = 1.0
        rec.spec.check(profile)
        specs[r] = rec.spec.as_tuple()
        onehot[r] = rec.spec.one_hot(profile)

    node_mask = np.arange(n)[None, :] < lengths[:, None]
    pairs = edge_pairs(n)
    src = np.array([j for j, _ in pairs], dtype=np.int64)
    dst = np.array([i for _, i in pairs], dtype=np.int64)
    edges = adj[:, src, dst]
    edge_mask = dst[None, :] < lengths[:, None]
    return Batch(
        types=torch.from_numpy(types),
        positions=torch.from_numpy(positions),
        params=torch.from_numpy(params).to(dtype),
        param_mask=torch.from_numpy(pmask),
        node_mask=torch.from_numpy(node_mask),
        adjacency=torch.from_numpy(adj).to(dtype),
        edges=torch.from_numpy(edges).to(dtype),
        edge_mask=torch.from_numpy(edge_mask),
        lengths=torch.from_numpy(lengths),
        specs=torch.from_numpy(specs),
        spec_onehot=torch.from_numpy(onehot).to(dtype),
        filter_mask=torch.from_numpy(make_filter_mask([r.spec for r in records])),
    )


def unbatch(batch: Batch):
    """Recover the circuits of a batch (parameters included)."""
    out = []
    for r in range(len(batch)):
        k = int(batch.lengths[r])
        nodes = tuple(
            Node(int(batch.types[r, v]), int(batch.positions[r, v]),
                 tuple(float(x) for x in batch.params[r, v].tolist()))
            for v in range(k)
        )
        a = batch.adjacency[r, :k, :k]
        edges = frozenset((int(j), int(i)) for j, i in torch.nonzero(a).tolist())
        out.append(Circuit(nodes, edges))
    return out


def iterate_minibatches(records, batch_size, rng):
    order = rng.permutation(len(records))
    for start in range(0, len(records), batch_size):
        yield [records[k] for k in order[start:start + batch_size]]


def spec_grid(profile: DatasetProfile):
    return [BinnedSpecification(*c) for c in itertools.product(*(range(k) for k in profile.categories))]
