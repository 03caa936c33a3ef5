"""The full model: two encoders, the decoder and the classifier heads."""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .config import ModelConfig
from .dataset import BinnedSpecification, Record, make_batch
from .decoder import CircuitDecoder
from .encoders import CircuitEncoder, SpecEncoder
from .losses import ClassifierHeads, LatentGaussian
from .profiles import DatasetProfile


class CktGen(nn.Module):
    def __init__(self, cfg: ModelConfig, profile: DatasetProfile):
        super().__init__()
        self.cfg = cfg
        self.profile = profile
        self.circuit_encoder = CircuitEncoder(cfg, profile)
        self.spec_encoder = SpecEncoder(cfg, profile)
        self.decoder = CircuitDecoder(cfg, profile)
        self.heads = ClassifierHeads(cfg.d_latent, profile.categories)

    @property
    def dtype(self):
        return self.decoder.latent_proj.weight.dtype

    def circuit_batch(self, circuits):
        dummy = BinnedSpecification(0, 0, 0)
        return make_batch([Record(c, dummy) for c in circuits], self.profile, dtype=self.dtype)

    def spec_tensor(self, specs):
        return torch.tensor([s.as_tuple() if isinstance(s, BinnedSpecification) else tuple(s)
                             for s in specs], dtype=torch.long)

    @torch.no_grad()
    def encode_circuits(self, circuits) -> LatentGaussian:
        if not circuits:
            empty = torch.zeros((0, self.cfg.d_latent), dtype=self.dtype)
            return LatentGaussian(empty, empty)
        return self.circuit_encoder.encode_batch(self.circuit_batch(circuits))

    @torch.no_grad()
    def encode_specs(self, specs) -> LatentGaussian:
        return self.spec_encoder(self.spec_tensor(specs))

    @torch.no_grad()
    def predict_spec(self, circuits):
        """Arg-max categories of the classifier heads on circuit latent means."""
        mu = self.encode_circuits(circuits).mu
        return np.stack([lg.argmax(-1).numpy() for lg in self.heads(mu)], axis=1)

    def generate(self, z, **kw):
        return self.decoder.generate(z, **kw)
