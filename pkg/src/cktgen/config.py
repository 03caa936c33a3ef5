"""Model and training hyperparameters."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields


@dataclass
class ModelConfig:
    d_model: int = 128       # node embedding width in the circuit encoder
    d_latent: int = 64       # joint latent width
    d_decoder: int = 512     # decoder stream width
    n_heads: int = 8
    n_layers: int = 4
    d_ff: int = 512
    enc_embed_dropout: float = 0.2   # position embedding and graph conv
    enc_dropout: float = 0.3         # encoder transformer blocks
    dec_dropout: float = 0.1
    gnn_input: str = "embeddings"    # "embeddings" or "structure"
    variational: bool = True
    pair_latent_row: bool = False    # let the latent row act as an edge source

    @classmethod
    def paper(cls):
        return cls()

    @classmethod
    def desk(cls):
        """Reduced widths for CPU-scale experiments."""
        return cls(d_model=64, d_latent=32, d_decoder=128, n_heads=4, n_layers=2, d_ff=256)

    @classmethod
    def tiny(cls):
        return cls(d_model=8, d_latent=4, d_decoder=8, n_heads=2, n_layers=1, d_ff=8)

    @classmethod
    def named(cls, name):
        return {"paper": cls.paper, "desk": cls.desk, "tiny": cls.tiny}[name]()

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


# per-profile node type / position loss weights
RECON_WEIGHTS = {"101": (0.5, 0.05), "301": (0.7, 0.07)}


@dataclass
class TrainConfig:
    mode: str = "cond"               # "cond" or "uncond"
    lr: float = 1e-4
    batch_size: int = 32
    epochs: int = 300
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    lambda_kl: float | None = None   # None: 1e-5 for cond, 5e-3 for uncond
    lambda_t: float | None = None    # None: taken from the profile table
    lambda_p: float | None = None
    lambda_b: float = 0.01
    tau: float = 0.1
    seed: int = 0
    use_kl: bool = True
    use_recon: bool = True
    use_consistency: bool = True
    use_cg: bool = True
    use_nce: bool = True
    use_filter: bool = True
    sample_latent: bool = True
    consistency_reduction: str = "mean"
    deterministic: bool = True
    patience: int = 30
    train_frac: float = 0.9
    keep_all_checkpoints: bool = False

    def resolved(self, profile_name):
        """Copy with profile- and mode-dependent defaults filled in."""
        lt, lp = RECON_WEIGHTS.get(str(profile_name), RECON_WEIGHTS["101"])
        out = TrainConfig(**asdict(self))
        if out.lambda_kl is None:
            out.lambda_kl = 1e-5 if out.mode == "cond" else 5e-3
        if out.lambda_t is None:
            out.lambda_t = lt
        if out.lambda_p is None:
            out.lambda_p = lp
        return out

    def ablate(self, name):
        """Apply a named ablation: none, nce_cg, vae or filter."""
        out = TrainConfig(**asdict(self))
        if name == "nce_cg":
            out.use_nce = out.use_cg = False
        elif name == "filter":
            out.use_filter = False
        elif name == "vae":
            out.use_kl = False
            out.sample_latent = False
        elif name != "none":
            raise ValueError(f"unknown ablation {name!r}")
        return out

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})
