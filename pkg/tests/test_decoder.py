import math

import pytest
import torch

import oracles
from cktgen.circuit import validate
from cktgen.config import ModelConfig
from cktgen.dataset import make_batch, synthesize_toy
from cktgen.decoder import CircuitDecoder, DecoderOutput, reconstruction_loss
from cktgen.errors import CapacityError
from cktgen.profiles import PROFILE_101 as P


@pytest.fixture(scope="module")
def batch():
    return make_batch(synthesize_toy(P, 12, 6, seed=3), P)


def decoder(cfg=None, seed=0):
    torch.manual_seed(seed)
    return CircuitDecoder(cfg or ModelConfig.tiny(), P).eval()


def test_output_shapes(batch):
    dec = decoder()
    z = torch.randn(len(batch), 4)
    out = dec.decode_batch(z, batch)
    assert out.type_logits.shape == (12, 10, 27)
    assert out.pos_logits.shape == (12, 10, 10)
    assert out.edge_logits.shape == (12, 45)
    assert out.params.shape == (12, 10, 3)


def test_repeated_latent_blocks_match_single_calls(batch):
    dec = decoder()
    z1, z2 = torch.randn(len(batch), 4), torch.randn(len(batch), 4)
    both = dec.decode_batch(torch.cat([z1, z2]), batch)
    assert torch.allclose(both.slice(0, 12).type_logits, dec.decode_batch(z1, batch).type_logits, atol=1e-6)
    assert torch.allclose(both.slice(12, 24).edge_logits, dec.decode_batch(z2, batch).edge_logits, atol=1e-6)
    with pytest.raises(ValueError):
        dec.decode_batch(torch.randn(5, 4), batch)


def _clone(b):
    return b.to(torch.float32)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_causality(batch, k):
    dec = decoder(ModelConfig.desk())
    z = torch.randn(len(batch), 32)
    ref = dec.decode_batch(z, batch)
    pert = _clone(batch)
    pert.types = batch.types.clone()
    pert.positions = batch.positions.clone()
    pert.types[:, k] = (batch.types[:, k] + 5) % 26
    pert.positions[:, k] = (batch.positions[:, k] + 3) % 10
    pert.adjacency = batch.adjacency.clone()
    pert.adjacency[:, :k, k] = 1 - pert.adjacency[:, :k, k]
    out = dec.decode_batch(z, pert)
    # type logits for node i are read before node i is seen
    assert torch.equal(out.type_logits[:, :k + 1], ref.type_logits[:, :k + 1])
    assert torch.equal(out.pos_logits[:, :k], ref.pos_logits[:, :k])
    n_before = k * (k - 1) // 2                 # pairs whose target precedes node k
    assert torch.equal(out.edge_logits[:, :n_before], ref.edge_logits[:, :n_before])
    assert not torch.equal(out.type_logits[:, k + 1:], ref.type_logits[:, k + 1:])


def test_edges_into_a_node_do_not_see_themselves(batch):
    dec = decoder(ModelConfig.desk())
    z = torch.randn(len(batch), 32)
    ref = dec.decode_batch(z, batch)
    pert = _clone(batch)
    pert.adjacency = batch.adjacency.clone()
    pert.adjacency[:, 0, 3] = 1 - pert.adjacency[:, 0, 3]
    out = dec.decode_batch(z, pert)
    upto = 3 * 4 // 2                           # all pairs with target <= node 3
    assert torch.equal(out.edge_logits[:, :upto], ref.edge_logits[:, :upto])


def test_capacity():
    dec = decoder()
    t = torch.zeros(1, 11, dtype=torch.long)
    with pytest.raises(CapacityError):
        dec(torch.randn(1, 4), t, t, torch.zeros(1, 11, 11), torch.ones(1, 11, dtype=torch.bool))


def test_generation_is_acyclic_and_deterministic():
    dec = decoder(ModelConfig.desk())
    z = torch.randn(200, 32, generator=torch.Generator().manual_seed(0))
    a = dec.generate(z)
    assert a == dec.generate(z)
    for c in a:
        assert all(j < i for j, i in c.edges)
        assert validate(c, P).is_dag
        assert 1 <= len(c) <= 10
        assert all(t != P.none_type for t in c.types)


def test_sampling_is_seeded():
    dec = decoder()
    z = torch.randn(20, 4)
    a = dec.generate(z, sampler="sample", generator=torch.Generator().manual_seed(1))
    b = dec.generate(z, sampler="sample", generator=torch.Generator().manual_seed(1))
    assert a == b
    with pytest.raises(ValueError):
        dec.generate(z, sampler="beam")


def test_forced_output_gives_single_node_circuit():
    dec = decoder()
    with torch.no_grad():
        dec.type_head.bias.fill_(-1e4)
        dec.type_head.bias[P.output_type] = 1e4
    circuits = dec.generate(torch.randn(3, 4))
    assert all(c.types == [P.output_type] for c in circuits)
    assert not any(validate(c, P).is_valid_circuit for c in circuits)


def test_generated_params_respect_type_masks():
    dec = decoder()
    for c in dec.generate(torch.randn(30, 4)):
        for nd in c.nodes:
            mask = P.param_mask(nd.type)
            assert all(v == 0.0 for v, live in zip(nd.params, mask) if not live)


def _uniform(batch, type_value=0.0, edge_value=0.0):
    m, n = batch.types.shape
    return DecoderOutput(torch.full((m, n, 27), type_value), torch.zeros(m, n, 10),
                         torch.full((m, n * (n - 1) // 2), edge_value), batch.params.clone())


def test_recon_uniform_types(batch):
    out = _uniform(batch)
    r = reconstruction_loss(batch, out, 0.5, 0.05, 0.01)
    assert float(r.types) == pytest.approx(math.log(27), rel=1e-6)
    assert 0.5 * float(r.types) == pytest.approx(1.648, abs=5e-4)
    assert float(r.edges) == pytest.approx(math.log(2), rel=1e-6)
    assert float(r.params) == 0.0


def test_recon_saturated_is_near_zero(batch):
    m, n = batch.types.shape
    big = 50.0
    tl = torch.full((m, n, 27), -big).scatter(-1, batch.types[..., None], big)
    pl = torch.full((m, n, 10), -big).scatter(-1, batch.positions[..., None], big)
    el = (2 * batch.edges - 1) * big
    r = reconstruction_loss(batch, DecoderOutput(tl, pl, el, batch.params.clone()), 0.5, 0.05, 0.01)
    assert float(r.total) < 1e-12


def test_recon_matches_oracle(batch):
    torch.manual_seed(2)
    m, n = batch.types.shape
    out = DecoderOutput(torch.randn(m, n, 27), torch.randn(m, n, 10),
                        torch.randn(m, n * (n - 1) // 2), torch.rand(m, n, 3))
    got = float(reconstruction_loss(batch, out, 0.5, 0.05, 0.01).total)
    items = []
    for r in range(m):
        k = int(batch.lengths[r])
        items.append(dict(
            n=k, types=batch.types[r].tolist(), positions=batch.positions[r].tolist(),
            type_logits=out.type_logits[r].tolist(), pos_logits=out.pos_logits[r].tolist(),
            edges=batch.edges[r].tolist(), edge_logits=out.edge_logits[r].tolist(),
            params=batch.params[r].tolist(), param_pred=out.params[r].tolist(),
            param_mask=batch.param_mask[r].tolist()))
    # the oracle pools per component across the batch, as the package does
    assert got == pytest.approx(oracles.recon_loss(items, 0.5, 0.05, 0.01), rel=1e-5)


def test_recon_shape_mismatch(batch):
    out = _uniform(batch)
    out.edge_logits = out.edge_logits[:, :10]
    with pytest.raises(ValueError):
        reconstruction_loss(batch, out, 0.5, 0.05, 0.01)
