"""Autoregressive circuit decoder.

One causal transformer serves two streams. The node stream is
``[z', node_1, ..., node_{N-1}]``; its output at step ``i - 1`` gives the type
logits of node ``i`` and, combined with that type, its position logits. The
edge stream is ``[z', node_1 + g_1, ..., node_N + g_N]`` where ``g_k`` is a
graph convolution over the in-edges of node ``k``. Edge ``j -> i`` is scored
from the stream output at step ``i - 1`` (which has seen only edges into
earlier nodes) paired with the output at step ``j``. Device parameters come
straight from the latent.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .circuit import Circuit, Node, edge_pairs
from .config import ModelConfig
from .encoders import GraphConv, mlp, transformer
from .errors import CapacityError
from .profiles import DatasetProfile


@dataclass
class DecoderOutput:
    type_logits: torch.Tensor   # (M, N, n_types + 1)
    pos_logits: torch.Tensor    # (M, N, n_max)
    edge_logits: torch.Tensor   # (M, N(N-1)/2)
    params: torch.Tensor        # (M, N, P)

    def slice(self, start, stop):
        return DecoderOutput(self.type_logits[start:stop], self.pos_logits[start:stop],
                             self.edge_logits[start:stop], self.params[start:stop])


@dataclass
class ReconLoss:
    types: torch.Tensor
    positions: torch.Tensor
    edges: torch.Tensor
    params: torch.Tensor
    total: torch.Tensor


def _causal_mask(n, device):
    return torch.triu(torch.full((n, n), float("-inf"), device=device), diagonal=1)


class CircuitDecoder(nn.Module):
    def __init__(self, cfg: ModelConfig, profile: DatasetProfile):
        super().__init__()
        D, d = cfg.d_decoder, cfg.d_model
        self.profile = profile
        self.n_max = profile.n_max
        self.param_width = profile.param_width
        self.pair_latent_row = cfg.pair_latent_row
        self.latent_proj = nn.Linear(cfg.d_latent, D)
        self.type_emb = nn.Embedding(profile.n_types + 1, D)
        self.pos_emb = nn.Embedding(profile.n_max, D)
        self.step_emb = nn.Embedding(profile.n_max + 1, D)
        self.stream_emb = nn.Embedding(2, D)
        self.body = transformer(D, cfg.n_heads, cfg.d_ff, cfg.n_layers, cfg.dec_dropout)
        self.type_head = nn.Linear(D, profile.n_types + 1)
        self.pos_cond = nn.Embedding(profile.n_types + 1, D)
        self.pos_head = mlp(D, D, profile.n_max)
        self.edge_gnn = GraphConv(D, D, cfg.dec_dropout, mode="in")
        self.edge_src = nn.Linear(D, d)
        self.edge_tgt = nn.Linear(D, d)
        self.edge_self = nn.Linear(D, d)
        self.edge_mlp = mlp((3 if cfg.pair_latent_row else 2) * d, d, 1)
        self.param_head = mlp(cfg.d_latent, D, profile.n_max * profile.param_width)
        pairs = edge_pairs(profile.n_max)
        self.register_buffer("pair_src", torch.tensor([j for j, _ in pairs], dtype=torch.long), persistent=False)
        self.register_buffer("pair_dst", torch.tensor([i for _, i in pairs], dtype=torch.long), persistent=False)

    # -- shared pieces -----------------------------------------------------

    def _node_feat(self, types, positions):
        return self.type_emb(types) + self.pos_emb(positions)

    def _node_stream(self, zp, feat):
        n = feat.shape[1] + 1
        steps = torch.arange(n, device=zp.device)
        seq = torch.cat([zp[:, None], feat], dim=1) + self.step_emb(steps) + self.stream_emb.weight[0]
        return self.body(seq, mask=_causal_mask(n, zp.device))

    def _edge_seq(self, zp, feat, adjacency, node_mask):
        g = self.edge_gnn(feat, adjacency, node_mask)
        steps = torch.arange(feat.shape[1] + 1, device=zp.device)
        return torch.cat([zp[:, None], feat + g], dim=1) + self.step_emb(steps) + self.stream_emb.weight[1]

    def _pair_logits(self, h, feat, n_pairs):
        n = feat.shape[1]
        tgt = self.edge_tgt(h[:, :n]) + self.edge_self(feat)
        src = self.edge_src(h[:, 1:])
        dst_idx, src_idx = self.pair_dst[:n_pairs], self.pair_src[:n_pairs]
        y = [tgt[:, dst_idx], src[:, src_idx]]
        if self.pair_latent_row:
            y.append(self.edge_src(h[:, :1]).expand(-1, n_pairs, -1))
        return self.edge_mlp(torch.cat(y, dim=-1)).squeeze(-1)

    def _edge_logits(self, zp, feat, adjacency, node_mask, n_pairs):
        seq = self._edge_seq(zp, feat, adjacency, node_mask)
        h = self.body(seq, mask=_causal_mask(seq.shape[1], zp.device))
        return self._pair_logits(h, feat, n_pairs)

    def _params(self, z):
        return self.param_head(z).view(z.shape[0], self.n_max, self.param_width)

    # -- training ----------------------------------------------------------

    def forward(self, z, types, positions, adjacency, node_mask) -> DecoderOutput:
        """Teacher-forced logits for a padded batch of forward-ordered circuits.

        ``z`` may hold ``k * M`` rows for ``M`` circuits; the circuits are then
        decoded once per block of ``M`` latents.
        """
        n = types.shape[1]
        if n > self.n_max:
            raise CapacityError(f"{n} node slots exceed n_max={self.n_max}")
        reps = z.shape[0] // types.shape[0]
        if reps * types.shape[0] != z.shape[0]:
            raise ValueError("latent rows must be a multiple of the batch size")
        if reps > 1:
            types, positions = types.repeat(reps, 1), positions.repeat(reps, 1)
            adjacency, node_mask = adjacency.repeat(reps, 1, 1), node_mask.repeat(reps, 1)
        m = z.shape[0]
        zp = self.latent_proj(z)
        feat = self._node_feat(types, positions)
        # both streams share one pass; the node stream's last output is unused
        steps = torch.arange(n + 1, device=z.device)
        node_seq = torch.cat([zp[:, None], feat], dim=1) + self.step_emb(steps) + self.stream_emb.weight[0]
        edge_seq = self._edge_seq(zp, feat, adjacency, node_mask)
        h = self.body(torch.cat([node_seq, edge_seq]), mask=_causal_mask(n + 1, z.device))
        h_node, h_edge = h[:m, :n], h[m:]
        type_logits = self.type_head(h_node)
        pos_logits = self.pos_head(h_node + self.pos_cond(types))
        edge_logits = self._pair_logits(h_edge, feat, n * (n - 1) // 2)
        return DecoderOutput(type_logits, pos_logits, edge_logits, self._params(z)[:, :n])

    def decode_batch(self, z, batch) -> DecoderOutput:
        return self(z, batch.types, batch.positions, batch.adjacency, batch.node_mask)

    # -- inference ---------------------------------------------------------

    @torch.no_grad()
    def generate(self, z, max_nodes=None, sampler="greedy", temperature=1.0, generator=None):
        """Decode a batch of latents into circuits.

        Node types and positions are emitted until OUTPUT appears or
        ``max_nodes`` is reached; edges are then decided target by target with
        every earlier decision visible to the graph convolution.
        """
        if sampler not in ("greedy", "sample"):
            raise ValueError(f"unknown sampler {sampler!r}")
        if z.dim() == 1:
            z = z[None]
        n = min(max_nodes or self.n_max, self.n_max)
        B = z.shape[0]
        none, out_t = self.profile.none_type, self.profile.output_type
        zp = self.latent_proj(z)

        types = torch.full((B, n), none, dtype=torch.long, device=z.device)
        positions = torch.zeros((B, n), dtype=torch.long, device=z.device)
        lengths = torch.zeros(B, dtype=torch.long, device=z.device)
        done = torch.zeros(B, dtype=torch.bool, device=z.device)
        for s in range(n):
            feat = self._node_feat(types[:, :s], positions[:, :s])
            h = self._node_stream(zp, feat)[:, s]
            tl = self.type_head(h)
            tl[:, none] = float("-inf")
            t = self._choose(tl, sampler, temperature, generator)
            p = self._choose(self.pos_head(h + self.pos_cond(t)), sampler, temperature, generator)
            active = ~done
            types[active, s] = t[active]
            positions[active, s] = p[active]
            lengths += active.long()
            done |= t == out_t
            if bool(done.all()):
                break

        L = int(lengths.max())
        types, positions = types[:, :L], positions[:, :L]
        node_mask = torch.arange(L, device=z.device)[None] < lengths[:, None]
        feat = self._node_feat(types, positions)
        adj = torch.zeros((B, L, L), dtype=zp.dtype, device=z.device)
        for i in range(1, L):
            logits = self._edge_logits(zp, feat, adj, node_mask, i * (i + 1) // 2)
            logits = logits[:, i * (i - 1) // 2:]          # the pairs j -> i
            if sampler == "greedy":
                on = logits > 0
            else:
                on = torch.bernoulli(torch.sigmoid(logits / temperature), generator=generator).bool()
            on &= (i < lengths)[:, None]
            adj[:, :i, i] = on.to(adj.dtype)

        params = self._params(z)[:, :L]
        masks = torch.tensor([self.profile.param_mask(t) for t in range(self.profile.n_types + 1)],
                             dtype=torch.bool, device=z.device)
        params = params * masks[types]
        circuits = []
        for b in range(B):
            k = int(lengths[b])
            nodes = tuple(Node(int(types[b, v]), int(positions[b, v]),
                               tuple(float(x) for x in params[b, v].tolist())) for v in range(k))
            a = adj[b, :k, :k]
            circuits.append(Circuit(nodes, frozenset(map(tuple, torch.nonzero(a).tolist()))))
        return circuits

    @staticmethod
    def _choose(logits, sampler, temperature, generator):
        if sampler == "greedy":
            return logits.argmax(-1)
        probs = torch.softmax(logits / temperature, dim=-1)
        return torch.multinomial(probs, 1, generator=generator).squeeze(-1)


def reconstruction_loss(batch, out: DecoderOutput, lambda_t, lambda_p, lambda_b) -> ReconLoss:
    """Weighted type/position cross-entropy, edge BCE and masked parameter MSE.

    Every component is a mean over the live entries of the batch: real nodes
    for types and positions, real node pairs for edges, used slots for
    parameters.
    """
    n = batch.types.shape[1]
    if out.type_logits.shape[:2] != batch.types.shape or out.edge_logits.shape != batch.edges.shape:
        raise ValueError("decoder output does not match the batch shape")
    if out.params.shape != batch.params[:, :n].shape:
        raise ValueError("parameter prediction does not match the batch shape")
    nm = batch.node_mask
    l_t = F.cross_entropy(out.type_logits[nm], batch.types[nm])
    l_p = F.cross_entropy(out.pos_logits[nm], batch.positions[nm])
    em = batch.edge_mask
    if bool(em.any()):
        l_e = F.binary_cross_entropy_with_logits(out.edge_logits[em], batch.edges[em])
    else:
        l_e = out.edge_logits.sum() * 0.0
    pm = batch.param_mask
    if bool(pm.any()):
        l_b = F.mse_loss(out.params[pm], batch.params[pm])
    else:
        l_b = out.params.sum() * 0.0
    total = lambda_t * l_t + lambda_p * l_p + l_e + lambda_b * l_b
    return ReconLoss(l_t, l_p, l_e, l_b, total)
