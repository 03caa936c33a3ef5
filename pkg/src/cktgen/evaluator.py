"""Metrics and experiment protocols for conditional and unconditional generation.

Conditional metrics are computed in the latent space of a frozen evaluator
model: generated circuits and their conditioning specifications are encoded
and compared there. Latent means are used throughout.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch

from .circuit import canonical_hash, validate
from .dataset import group_by_spec
from .errors import NumericError
from .losses import reparameterize


@dataclass
class EvalReport:
    mode: str
    n: int = 0
    r_at: dict | None = None
    spec_accuracy: float | None = None
    mm_distance: float | None = None
    fid: float | None = None
    valid_circuit: float | None = None
    diversity: float | None = None
    reconstruction_accuracy: float | None = None
    valid_dag: float | None = None
    novel_circuit: float | None = None

    def to_dict(self):
        d = asdict(self)
        if d["r_at"] is not None:
            d["r_at"] = {str(k): v for k, v in d["r_at"].items()}
        return {k: v for k, v in d.items() if v is not None}


def _as_array(x):
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def _unit_rows(x):
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0):
        raise NumericError("zero-norm latent row")
    return x / norms[:, None]


def retrieval_precision(queries, candidates, ks=(1, 2, 3)):
    """Top-k hit rates when row ``i`` of ``queries`` should retrieve row ``i``.

    Candidates are ranked by cosine similarity; an equal-scoring candidate with
    a lower index ranks ahead of the true one.
    """
    q, c = _unit_rows(_as_array(queries)), _unit_rows(_as_array(candidates))
    if q.shape != c.shape:
        raise ValueError("query and candidate matrices must have the same shape")
    sim = q @ c.T
    k = len(q)
    true = sim[np.arange(k), np.arange(k)]
    better = sim > true[:, None]
    tied_before = (sim == true[:, None]) & (np.arange(k)[None, :] < np.arange(k)[:, None])
    rank = better.sum(1) + tied_before.sum(1)
    return {kk: float(np.mean(rank < kk)) for kk in ks}


def specification_accuracy(gen_circuits, conditions, eval_model):
    """Share of circuits whose three predicted categories all equal the condition."""
    if not gen_circuits:
        return 0.0
    pred = np.asarray(eval_model.predict_spec(gen_circuits))
    cond = np.array([c.as_tuple() if hasattr(c, "as_tuple") else tuple(c) for c in conditions])
    return float(np.mean(np.all(pred == cond, axis=1)))


def mm_distance(gen_latents, spec_latents):
    """Mean of ``1 - cos`` over paired rows; 0 is perfect agreement."""
    a, b = _unit_rows(_as_array(gen_latents)), _unit_rows(_as_array(spec_latents))
    if a.shape != b.shape:
        raise ValueError("paired latent matrices must have the same shape")
    return float(np.mean(1.0 - np.sum(a * b, axis=1)))


def _psd_sqrt(m):
    w, v = np.linalg.eigh((m + m.T) / 2)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def fid_latent(set_a, set_b, eps=1e-6):
    """Frechet distance between Gaussian fits of two latent sets.

    ``tr((C_a C_b)^{1/2})`` is evaluated as ``tr((S C_b S)^{1/2})`` with
    ``S = C_a^{1/2}``, which is symmetric, so both roots come from clipped
    eigendecompositions. ``eps * I`` is added to both covariances when either
    set has no more samples than dimensions.
    """
    a, b = _as_array(set_a), _as_array(set_b)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("need at least two samples per set")
    d = a.shape[1]
    ca, cb = np.cov(a, rowvar=False).reshape(d, d), np.cov(b, rowvar=False).reshape(d, d)
    if min(len(a), len(b)) < d + 1:
        ca = ca + eps * np.eye(d)
        cb = cb + eps * np.eye(d)
    s = _psd_sqrt(ca)
    cross = np.trace(_psd_sqrt(s @ cb @ s))
    diff = a.mean(0) - b.mean(0)
    return float(max(diff @ diff + np.trace(ca) + np.trace(cb) - 2 * cross, 0.0))


def diversity(groups, n_pairs=1000, seed=0):
    """Mean L2 distance over random latent pairs drawn from different groups.

    ``groups`` maps a spec label to an array of latents. Pairs are uniform over
    all ordered cross-group pairs.
    """
    labels, rows = [], []
    for label, lat in groups.items():
        lat = _as_array(lat).reshape(-1, _as_array(lat).shape[-1])
        rows.append(lat)
        labels += [label] * len(lat)
    if len(groups) < 2:
        raise ValueError("diversity needs at least two spec types")
    x = np.concatenate(rows)
    codes = np.unique(np.array([str(lb) for lb in labels]), return_inverse=True)[1]
    rng = np.random.default_rng(seed)
    dists = []
    while len(dists) < n_pairs:
        i, j = rng.integers(len(x), size=2)
        if codes[i] != codes[j]:
            dists.append(np.linalg.norm(x[i] - x[j]))
    return float(np.mean(dists))


def same_structure(generated, truth):
    """Types, positions and edge sets agree exactly (parameters ignored)."""
    return (generated.types == truth.types and generated.positions == truth.positions
            and generated.edges == truth.edges)


@torch.no_grad()
def reconstruction_accuracy(model, records, n_latent_samples=1, seed=0, sample=None, batch_size=256):
    """Share of (circuit, latent draw) pairs decoded back to the same structure.

    ``sample=None`` draws latents only for variational models; deterministic
    configurations decode the mean.
    """
    model.eval()
    if not records:
        return 0.0
    if sample is None:
        sample = model.cfg.variational
    gen = torch.Generator().manual_seed(seed)
    hits = total = 0
    for start in range(0, len(records), batch_size):
        chunk = records[start:start + batch_size]
        circuits = [r.circuit for r in chunk]
        g = model.encode_circuits(circuits)
        for _ in range(max(1, n_latent_samples)):
            z = reparameterize(g, generator=gen) if sample else g.mu
            decoded = model.generate(z)
            hits += sum(same_structure(d, c) for d, c in zip(decoded, circuits))
            total += len(chunk)
    return hits / total


@torch.no_grad()
def unconditional_eval(model, n_samples, train_hashes, seed=0, batch_size=500):
    """Valid-DAG, valid-circuit and novel-circuit rates for prior samples."""
    model.eval()
    gen = torch.Generator().manual_seed(seed)
    profile = model.profile
    n_dag = n_valid = n_novel = 0
    done = 0
    while done < n_samples:
        b = min(batch_size, n_samples - done)
        z = torch.randn((b, model.cfg.d_latent), generator=gen, dtype=model.dtype)
        for c in model.generate(z):
            rep = validate(c, profile)
            n_dag += rep.is_dag
            if rep.is_valid_circuit:
                n_valid += 1
                n_novel += canonical_hash(c, profile) not in train_hashes
        done += b
    return EvalReport(mode="uncond", n=n_samples, valid_dag=n_dag / n_samples,
                      valid_circuit=n_valid / n_samples, novel_circuit=n_novel / n_samples)


@torch.no_grad()
def conditional_eval(gen_model, eval_model, test_records, seed=0, n_div_pairs=1000,
                     sampler="greedy", temperature=1.0, sample_latent=True):
    """Specification-to-circuit generation metrics.

    For every spec type in ``test_records``: sample a spec latent from the
    generator, decode it, and draw one ground-truth circuit of that type.
    The evaluator then embeds generated circuits, specs and ground truth.
    """
    gen_model.eval()
    eval_model.eval()
    groups = group_by_spec(test_records)
    specs = list(groups)
    rng = np.random.default_rng(seed)
    gen = torch.Generator().manual_seed(seed)
    g = gen_model.encode_specs(specs)
    zs = reparameterize(g, generator=gen) if sample_latent and gen_model.cfg.variational else g.mu
    circuits = gen_model.generate(zs, sampler=sampler, temperature=temperature, generator=gen)
    truth = [groups[s][rng.integers(len(groups[s]))].circuit for s in specs]

    gen_lat = eval_model.encode_circuits(circuits).mu
    spec_lat = eval_model.encode_specs(specs).mu
    gt_lat = eval_model.encode_circuits(truth).mu
    report = EvalReport(mode="cond", n=len(specs))
    report.r_at = retrieval_precision(gen_lat, spec_lat, ks=(1, 2, 3))
    report.spec_accuracy = specification_accuracy(circuits, specs, eval_model)
    report.mm_distance = mm_distance(gen_lat, spec_lat)
    report.fid = fid_latent(gen_lat, gt_lat) if len(specs) >= 2 else None
    report.valid_circuit = float(np.mean([validate(c, gen_model.profile).is_valid_circuit for c in circuits]))
    if len(specs) >= 2:
        report.diversity = diversity({s: gen_lat[k][None] for k, s in enumerate(specs)}, n_div_pairs, seed)
    return report, circuits


@torch.no_grad()
def retrieval_experiment(model, test_records, seed=0, ks=(1, 3, 5), n_draws=1):
    """Spec-to-circuit retrieval with one random circuit per spec type.

    Spec latents query the circuit latents. Rates are averaged over
    ``n_draws`` independent selections.
    """
    model.eval()
    groups = group_by_spec(test_records)
    specs = list(groups)
    rng = np.random.default_rng(seed)
    spec_lat = model.encode_specs(specs).mu
    totals = dict.fromkeys(ks, 0.0)
    for _ in range(n_draws):
        picks = [groups[s][rng.integers(len(groups[s]))].circuit for s in specs]
        res = retrieval_precision(spec_lat, model.encode_circuits(picks).mu, ks)
        for k in ks:
            totals[k] += res[k] / n_draws
    return totals
