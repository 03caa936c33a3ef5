"""Joint-latent objectives: Gaussian KL terms, consistency, masked InfoNCE and
classifier guidance."""

from __future__ import annotations

from typing import NamedTuple

import torch
import torch.nn.functional as F
from torch import nn

from .errors import NumericError


class LatentGaussian(NamedTuple):
    mu: torch.Tensor
    logvar: torch.Tensor


def standard_normal_like(g: LatentGaussian) -> LatentGaussian:
    return LatentGaussian(torch.zeros_like(g.mu), torch.zeros_like(g.logvar))


def reparameterize(g: LatentGaussian, noise=None, generator=None):
    """``mu + exp(logvar / 2) * noise``; draws the noise when it is not given."""
    if noise is None:
        noise = torch.randn(g.mu.shape, generator=generator, dtype=g.mu.dtype, device=g.mu.device)
    if noise.shape != g.mu.shape:
        raise ValueError(f"noise shape {tuple(noise.shape)} does not match latent {tuple(g.mu.shape)}")
    return g.mu + torch.exp(0.5 * g.logvar) * noise


def kl_diag(a: LatentGaussian, b: LatentGaussian):
    """KL(a || b) for diagonal Gaussians, summed over the last axis.

    Leading (batch) axes are averaged, so a single pair yields a scalar.
    """
    if a.mu.shape != b.mu.shape or a.logvar.shape != b.logvar.shape or a.mu.shape != a.logvar.shape:
        raise ValueError("KL arguments must have matching shapes")
    per_dim = (0.5 * (b.logvar - a.logvar)
               + (torch.exp(a.logvar) + (a.mu - b.mu) ** 2) / (2 * torch.exp(b.logvar))
               - 0.5)
    return per_dim.sum(-1).mean()


def kl_total(ac: LatentGaussian, as_: LatentGaussian):
    prior = standard_normal_like(ac)
    return kl_diag(ac, prior) + kl_diag(as_, prior) + kl_diag(ac, as_) + kl_diag(as_, ac)


def consistency_loss(zc, zs, beta=1.0, reduction="mean"):
    """Smooth-L1 distance between circuit and spec latents.

    ``reduction="mean"`` averages every element; ``"sum"`` sums over the latent
    axis and averages over the batch.
    """
    if zc.shape != zs.shape:
        raise ValueError("consistency_loss needs equal shapes")
    if reduction == "mean":
        return F.smooth_l1_loss(zc, zs, beta=beta, reduction="mean")
    if reduction == "sum":
        per = F.smooth_l1_loss(zc, zs, beta=beta, reduction="none")
        return per.sum(-1).mean()
    raise ValueError(f"unknown reduction {reduction!r}")


def cosine_matrix(a, b):
    na = a.norm(dim=-1)
    nb = b.norm(dim=-1)
    if bool((na == 0).any()) or bool((nb == 0).any()):
        raise NumericError("cosine similarity of a zero-norm latent is undefined")
    return (a / na[:, None]) @ (b / nb[:, None]).T


def infonce(zs, zc, mask=None, tau=0.1):
    """Symmetric InfoNCE over the spec/circuit cosine-similarity matrix.

    ``mask[i, j] == False`` removes candidate ``j`` from row ``i``'s softmax
    and candidate ``i`` from column ``j``'s softmax. The diagonal must stay
    ``True``.
    """
    if zs.shape != zc.shape or zs.dim() != 2:
        raise ValueError("infonce expects two (M, d) matrices of equal shape")
    if tau <= 0:
        raise ValueError("tau must be positive")
    m = zs.shape[0]
    logits = cosine_matrix(zs, zc) / tau
    if mask is not None:
        mask = torch.as_tensor(mask, dtype=torch.bool, device=logits.device)
        if mask.shape != (m, m):
            raise ValueError("mask must be (M, M)")
        if not bool(mask.diagonal().all()):
            raise ValueError("mask diagonal must be all True")
        logits = logits.masked_fill(~mask, float("-inf"))
    diag = torch.arange(m, device=logits.device)
    row = torch.log_softmax(logits, dim=1)[diag, diag]
    col = torch.log_softmax(logits, dim=0)[diag, diag]
    return -(row + col).sum() / (2 * m)


class ClassifierHeads(nn.Module):
    """Predict the three specification categories from a circuit latent."""

    def __init__(self, d_latent, categories, hidden=None):
        super().__init__()
        hidden = hidden or 2 * d_latent
        self.categories = tuple(categories)
        self.heads = nn.ModuleList(
            nn.Sequential(nn.Linear(d_latent, hidden), nn.GELU(), nn.Linear(hidden, c))
            for c in self.categories
        )

    def forward(self, z):
        return tuple(h(z) for h in self.heads)


def classifier_guidance(zc, heads: ClassifierHeads, targets):
    """Sum of the three mean cross-entropies."""
    return guidance_from_logits(heads(zc), targets)


def guidance_from_logits(logits, targets):
    targets = torch.as_tensor(targets, dtype=torch.long)
    if targets.dim() != 2 or targets.shape[1] != len(logits):
        raise ValueError("targets must be (M, 3)")
    total = 0.0
    for k, lg in enumerate(logits):
        t = targets[:, k]
        if bool((t < 0).any()) or bool((t >= lg.shape[-1]).any()):
            raise ValueError(f"target category out of range for head {k}")
        total = total + F.cross_entropy(lg, t)
    return total
