import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

import oracles
from cktgen.circuit import canonical_hash
from cktgen.config import ModelConfig
from cktgen.dataset import synthesize_toy
from cktgen.errors import NumericError
from cktgen.evaluator import (EvalReport, conditional_eval, diversity, fid_latent, mm_distance,
                              reconstruction_accuracy, retrieval_experiment, retrieval_precision,
                              same_structure, specification_accuracy, unconditional_eval)
from cktgen.profiles import PROFILE_101 as P
from cktgen.trainer import build_model


def test_retrieval_identity_and_shuffle():
    x = np.random.default_rng(0).normal(size=(20, 8))
    assert retrieval_precision(x, x, ks=(1, 2, 3)) == {1: 1.0, 2: 1.0, 3: 1.0}
    perm = np.roll(np.arange(20), 1)
    assert retrieval_precision(x, x[perm], ks=(1,))[1] == 0.0


def test_retrieval_ties_rank_lower_index_first():
    q = np.array([[1.0, 0.0], [1.0, 0.0]])
    # both candidates are identical, so row 1 loses the tie to row 0
    assert retrieval_precision(q, q, ks=(1, 2)) == {1: 0.5, 2: 1.0}


@given(st.integers(2, 12), st.integers(2, 5), st.integers(0, 2**31 - 1))
@settings(max_examples=50, deadline=None)
def test_retrieval_matches_oracle(k, d, seed):
    rng = np.random.default_rng(seed)
    q, c = rng.normal(size=(k, d)), rng.normal(size=(k, d))
    got = retrieval_precision(q, c, ks=(1, 2, 3))
    qn = q / np.linalg.norm(q, axis=1, keepdims=True)
    cn = c / np.linalg.norm(c, axis=1, keepdims=True)
    ranks = [oracles.topk_rank((qn @ cn.T)[i].tolist(), i) for i in range(k)]
    for kk in (1, 2, 3):
        assert got[kk] == pytest.approx(np.mean([r < kk for r in ranks]))


def test_retrieval_shape_and_zero_checks():
    with pytest.raises(ValueError):
        retrieval_precision(np.ones((3, 2)), np.ones((4, 2)))
    with pytest.raises(NumericError):
        retrieval_precision(np.zeros((2, 2)), np.ones((2, 2)))


def test_mm_distance():
    x = np.random.default_rng(1).normal(size=(6, 4))
    assert mm_distance(x, x) == pytest.approx(0.0, abs=1e-12)
    assert mm_distance(x, -x) == pytest.approx(2.0)
    assert mm_distance([[1.0, 0.0]], [[0.0, 1.0]]) == pytest.approx(1.0)


def test_fid_self_and_shift():
    x = np.random.default_rng(2).normal(size=(200, 5))
    assert fid_latent(x, x) == pytest.approx(0.0, abs=1e-6)
    shift = np.zeros(5)
    shift[0] = 3.0
    assert fid_latent(x, x + shift) == pytest.approx(9.0, abs=1e-6)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=20, deadline=None)
def test_fid_matches_scipy_oracle(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(60, 4))
    b = rng.normal(size=(50, 4)) @ rng.normal(size=(4, 4)) + rng.normal(size=4)
    assert fid_latent(a, b) == pytest.approx(oracles.fid(a, b), rel=1e-6, abs=1e-8)


def test_fid_is_symmetric_and_handles_few_samples():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(5, 8)), rng.normal(size=(6, 8))
    assert fid_latent(a, b) == pytest.approx(fid_latent(b, a), rel=1e-6)
    assert np.isfinite(fid_latent(a, b))
    with pytest.raises(ValueError):
        fid_latent(a[:1], b)


def test_diversity():
    same = {k: np.ones((3, 4)) for k in range(4)}
    assert diversity(same, n_pairs=50) == 0.0
    two = {0: np.zeros((1, 2)), 1: np.array([[3.0, 4.0]])}
    assert diversity(two, n_pairs=20) == pytest.approx(5.0)
    with pytest.raises(ValueError):
        diversity({0: np.zeros((2, 2))})


class _Echo:
    """Stand-in evaluator whose heads return each circuit's stored label."""

    def __init__(self, labels):
        self.labels = labels

    def predict_spec(self, circuits):
        return np.array([self.labels[id(c)] for c in circuits])


def test_specification_accuracy_echo():
    records = synthesize_toy(P, 20, 5, seed=0)
    circuits = [r.circuit for r in records]
    echo = _Echo({id(r.circuit): r.spec.as_tuple() for r in records})
    assert specification_accuracy(circuits, [r.spec for r in records], echo) == 1.0
    wrong = [(0, 0, 0) if r.spec.as_tuple() != (0, 0, 0) else (1, 1, 1) for r in records]
    assert specification_accuracy(circuits, wrong, echo) == 0.0
    assert specification_accuracy([], [], echo) == 0.0


def test_same_structure_ignores_params():
    c = synthesize_toy(P, 4, 2, seed=0)[0].circuit
    assert same_structure(c, c.with_params([(0.0,) * 3] * len(c)))


@pytest.fixture(scope="module")
def untrained():
    return build_model(ModelConfig.tiny(), P, seed=0).eval()


def test_protocol_runners_produce_reports(untrained):
    records = synthesize_toy(P, 40, 8, seed=1)
    report, circuits = conditional_eval(untrained, untrained, records, seed=0, n_div_pairs=50)
    assert report.n == 8 and len(circuits) == 8
    d = report.to_dict()
    assert set(d) >= {"mode", "r_at", "spec_accuracy", "mm_distance", "fid", "valid_circuit", "diversity"}
    assert set(d["r_at"]) == {"1", "2", "3"}
    again, _ = conditional_eval(untrained, untrained, records, seed=0, n_div_pairs=50)
    assert again == report

    r = retrieval_experiment(untrained, records, seed=0, n_draws=3)
    assert set(r) == {1, 3, 5} and all(0 <= v <= 1 for v in r.values())

    acc = reconstruction_accuracy(untrained, records[:10], n_latent_samples=2)
    assert 0.0 <= acc <= 1.0

    hashes = {canonical_hash(x.circuit) for x in records}
    u = unconditional_eval(untrained, 30, hashes, seed=0)
    assert u.valid_dag == 1.0
    assert u.novel_circuit <= u.valid_circuit <= u.valid_dag


def test_report_serialisation_drops_unset_fields():
    assert EvalReport(mode="recon", n=3, reconstruction_accuracy=0.5).to_dict() == {
        "mode": "recon", "n": 3, "reconstruction_accuracy": 0.5}


def test_eval_does_not_touch_weights(untrained):
    before = [p.clone() for p in untrained.parameters()]
    conditional_eval(untrained, untrained, synthesize_toy(P, 20, 4, seed=2), seed=1, n_div_pairs=10)
    assert all(torch.equal(a, b) for a, b in zip(before, untrained.parameters()))
