"""Circuit and specification encoders mapping into the joint latent space."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .config import ModelConfig
from .errors import CapacityError
from .losses import LatentGaussian
from .profiles import DatasetProfile


def mlp(d_in, d_hidden, d_out):
    return nn.Sequential(nn.Linear(d_in, d_hidden), nn.GELU(), nn.Linear(d_hidden, d_out))


def transformer(d, n_heads, d_ff, n_layers, dropout):
    layer = nn.TransformerEncoderLayer(d, n_heads, d_ff, dropout, activation="gelu",
                                       batch_first=True, norm_first=True)
    return nn.TransformerEncoder(layer, n_layers, enable_nested_tensor=False)


class GraphConv(nn.Module):
    """Single propagation step with a degree-normalised adjacency.

    ``mode="symmetric"`` uses ``D^-1/2 (A + A^T + I) D^-1/2``; ``mode="in"``
    aggregates only over in-neighbours plus the node itself, which keeps the
    result causal when nodes are in topological order.
    """

    def __init__(self, d_in, d_out, dropout=0.0, mode="symmetric"):
        super().__init__()
        self.lin = nn.Linear(d_in, d_out)
        self.drop = nn.Dropout(dropout)
        self.mode = mode

    def forward(self, x, adj, node_mask):
        eye = torch.diag_embed(node_mask.to(x.dtype))
        if self.mode == "symmetric":
            a = adj + adj.transpose(-1, -2) + eye
            d = a.sum(-1).clamp(min=1.0).rsqrt()
            h = d[..., None] * (a @ (d[..., None] * x))
        else:
            a = adj.transpose(-1, -2) + eye     # row i gathers from predecessors of i
            h = (a @ x) / a.sum(-1, keepdim=True).clamp(min=1.0)
        return self.drop(F.gelu(self.lin(h)))


class CircuitEncoder(nn.Module):
    """Transformer over per-node tokens plus two learnable query tokens.

    Each node token is the sum of its type embedding, position embedding and
    graph-convolution feature. The two query outputs, each concatenated with
    a projection of the device parameters, give the latent mean and
    log-variance.
    """

    def __init__(self, cfg: ModelConfig, profile: DatasetProfile):
        super().__init__()
        d = cfg.d_model
        self.n_max = profile.n_max
        self.gnn_input = cfg.gnn_input
        self.type_emb = nn.Embedding(profile.n_types + 1, d)
        self.pos_emb = nn.Embedding(profile.n_max, d)
        self.pos_drop = nn.Dropout(cfg.enc_embed_dropout)
        self.gnn = GraphConv(d, d, cfg.enc_embed_dropout)
        self.queries = nn.Parameter(torch.randn(2, d) * 0.02)
        self.body = transformer(d, cfg.n_heads, cfg.d_ff, cfg.n_layers, cfg.enc_dropout)
        self.param_proj = mlp(profile.n_max * profile.param_width, d, d)
        self.mu_head = nn.Linear(2 * d, cfg.d_latent)
        self.logvar_head = nn.Linear(2 * d, cfg.d_latent)

    def forward(self, types, positions, params, param_mask, adjacency, node_mask) -> LatentGaussian:
        if types.shape[1] > self.n_max:
            raise CapacityError(f"{types.shape[1]} node slots exceed n_max={self.n_max}")
        m = types.shape[0]
        xt = self.type_emb(types)
        xp = self.pos_drop(self.pos_emb(positions))
        feats = xt + xp if self.gnn_input == "embeddings" else torch.ones_like(xt)
        a = self.gnn(feats, adjacency, node_mask)
        tokens = xt + xp + a
        seq = torch.cat([self.queries.expand(m, -1, -1), tokens], dim=1)
        pad = torch.cat([torch.zeros(m, 2, dtype=torch.bool, device=types.device), ~node_mask], dim=1)
        h = self.body(seq, src_key_padding_mask=pad)
        b = self.param_proj((params * param_mask).flatten(1))
        mu = self.mu_head(torch.cat([h[:, 0], b], dim=-1))
        logvar = self.logvar_head(torch.cat([h[:, 1], b], dim=-1))
        return LatentGaussian(mu, logvar)

    def encode_batch(self, batch) -> LatentGaussian:
        return self(batch.types, batch.positions, batch.params, batch.param_mask,
                    batch.adjacency, batch.node_mask)


class SpecEncoder(nn.Module):
    """Embed (gain, bw, pm) categories, concatenate, and map to a Gaussian."""

    def __init__(self, cfg: ModelConfig, profile: DatasetProfile):
        super().__init__()
        d = cfg.d_model
        self.categories = profile.categories
        self.embeds = nn.ModuleList(nn.Embedding(c, d) for c in self.categories)
        self.body = mlp(3 * d, d, d)
        self.mu_head = nn.Linear(d, cfg.d_latent)
        self.logvar_head = nn.Linear(d, cfg.d_latent)

    def forward(self, specs) -> LatentGaussian:
        specs = torch.as_tensor(specs, dtype=torch.long)
        if specs.dim() == 1:
            specs = specs[None]
        for k, c in enumerate(self.categories):
            col = specs[:, k]
            if bool((col < 0).any()) or bool((col >= c).any()):
                raise ValueError(f"spec element {k} outside [0, {c})")
        s = torch.cat([emb(specs[:, k]) for k, emb in enumerate(self.embeds)], dim=-1)
        h = F.gelu(self.body(s))
        return LatentGaussian(self.mu_head(h), self.logvar_head(h))
