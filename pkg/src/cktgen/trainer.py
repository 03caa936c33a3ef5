"""Training loop, loss composition and checkpoints."""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .config import ModelConfig, TrainConfig
from .dataset import Batch, iterate_minibatches, make_batch
from .decoder import reconstruction_loss
from .errors import NumericError, ProfileMismatchError
from .losses import (LatentGaussian, classifier_guidance, consistency_loss, infonce, kl_diag,
                     kl_total, reparameterize, standard_normal_like)
from .model import CktGen
from .profiles import DatasetProfile

CHECKPOINT_FORMAT = "cktgen-checkpoint"
CHECKPOINT_VERSION = 1

TERMS = ("kl", "recon", "consistency", "cg", "nce")


@dataclass
class TrainLogRecord:
    step: int
    epoch: int
    kl: float
    recon: float
    consistency: float
    cg: float
    nce: float
    total: float
    wall_time: float

    def to_dict(self):
        return asdict(self)


def deterministic_requested(cfg: TrainConfig):
    return cfg.deterministic or os.environ.get("CKTGEN_DETERMINISTIC") == "1"


def build_model(model_cfg: ModelConfig, profile: DatasetProfile, seed=0, dtype=torch.float32):
    torch.manual_seed(seed)
    return CktGen(model_cfg, profile).to(dtype)


def make_optimizer(model, cfg: TrainConfig):
    return torch.optim.AdamW(model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2),
                             weight_decay=cfg.weight_decay)


def _noise(g: LatentGaussian, cfg, generator):
    if not cfg.sample_latent:
        return torch.zeros_like(g.mu)
    return torch.randn(g.mu.shape, generator=generator, dtype=g.mu.dtype)


def compute_terms(model: CktGen, batch: Batch, cfg: TrainConfig, generator=None):
    """Per-term losses for one batch; disabled terms are exact zeros.

    ``cfg`` must already be resolved (see :meth:`TrainConfig.resolved`).
    """
    zero = torch.zeros((), dtype=model.dtype)
    terms = dict.fromkeys(TERMS, zero)
    ac = model.circuit_encoder.encode_batch(batch)
    zc = reparameterize(ac, _noise(ac, cfg, generator))
    weights = (cfg.lambda_t, cfg.lambda_p, cfg.lambda_b)

    if cfg.mode == "uncond":
        if cfg.use_kl:
            terms["kl"] = kl_diag(ac, standard_normal_like(ac))
        if cfg.use_recon:
            terms["recon"] = reconstruction_loss(batch, model.decoder.decode_batch(zc, batch), *weights).total
        return terms
    if cfg.mode != "cond":
        raise ValueError(f"unknown mode {cfg.mode!r}")

    as_ = model.spec_encoder(batch.specs)
    zs = reparameterize(as_, _noise(as_, cfg, generator))
    if cfg.use_kl:
        terms["kl"] = kl_total(ac, as_)
    if cfg.use_recon:
        m = len(batch)
        out = model.decoder.decode_batch(torch.cat([zc, zs]), batch)
        rc = reconstruction_loss(batch, out.slice(0, m), *weights).total
        rs = reconstruction_loss(batch, out.slice(m, 2 * m), *weights).total
        terms["recon"] = rc + rs
    if cfg.use_consistency:
        terms["consistency"] = consistency_loss(zc, zs, reduction=cfg.consistency_reduction)
    if cfg.use_cg:
        terms["cg"] = classifier_guidance(zc, model.heads, batch.specs)
    if cfg.use_nce:
        mask = batch.filter_mask if cfg.use_filter else None
        terms["nce"] = infonce(zs, zc, mask, cfg.tau)
    return terms


def total_loss(terms, cfg: TrainConfig):
    return (cfg.lambda_kl * terms["kl"] + terms["recon"] + terms["consistency"]
            + terms["cg"] + terms["nce"])


def train_step(model, optimizer, batch, cfg: TrainConfig, generator=None, step=0, epoch=0):
    """One AdamW update on the composed objective. Mutates ``model`` in place."""
    t0 = time.perf_counter()
    model.train()
    terms = compute_terms(model, batch, cfg, generator)
    for name, value in terms.items():
        if not torch.isfinite(value):
            raise NumericError(f"non-finite {name} loss at step {step}: {float(value.detach())}")
    total = total_loss(terms, cfg)
    optimizer.zero_grad(set_to_none=True)
    total.backward()
    optimizer.step()
    vals = {k: float(v.detach()) for k, v in terms.items()}
    return TrainLogRecord(step=step, epoch=epoch, total=float(total.detach()),
                          wall_time=time.perf_counter() - t0, **vals)


@torch.no_grad()
def evaluate_loss(model, records, profile, cfg: TrainConfig):
    """Mean composed loss with latent sampling switched off."""
    if not records:
        return float("nan")
    model.eval()
    quiet = TrainConfig.from_dict({**cfg.to_dict(), "sample_latent": False})
    totals, weights = [], []
    for start in range(0, len(records), cfg.batch_size):
        chunk = records[start:start + cfg.batch_size]
        batch = make_batch(chunk, profile, dtype=model.dtype)
        totals.append(float(total_loss(compute_terms(model, batch, quiet), quiet)))
        weights.append(len(chunk))
    return float(np.average(totals, weights=weights))


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path, model: CktGen, optimizer=None, train_cfg: TrainConfig | None = None, state=None):
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "profile": model.profile.to_dict(),
        "model_config": model.cfg.to_dict(),
        "dtype": str(model.dtype).replace("torch.", ""),
        "model": model.state_dict(),
        "train_config": train_cfg.to_dict() if train_cfg is not None else None,
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "state": state or {},
    }
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)
    return path


def read_checkpoint(path):
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a checkpoint")
    if payload["version"] > CHECKPOINT_VERSION:
        raise ValueError(f"checkpoint version {payload['version']} is newer than supported")
    return payload


def load_checkpoint(path, profile: DatasetProfile | None = None):
    """Rebuild the model stored at ``path``.

    Returns ``(model, payload)``. Passing ``profile`` guards against loading a
    model trained on a different benchmark.
    """
    payload = read_checkpoint(path)
    stored = DatasetProfile.from_dict(payload["profile"])
    if profile is not None and stored != profile:
        raise ProfileMismatchError(f"checkpoint profile {stored.name!r} does not match {profile.name!r}")
    model = CktGen(ModelConfig.from_dict(payload["model_config"]), stored)
    model = model.to(getattr(torch, payload.get("dtype", "float32")))
    model.load_state_dict(payload["model"])
    model.eval()
    return model, payload


# ---------------------------------------------------------------------------
# fit

@dataclass
class FitResult:
    model: CktGen
    checkpoint: Path
    logs: list
    epochs_run: int


def fit(train_records, cfg: TrainConfig, model_cfg: ModelConfig, profile: DatasetProfile, out_dir,
        val_records=None, resume=False, dtype=torch.float32, max_steps=None, log_every=None):
    """Train on ``train_records`` and write ``last.pt`` after every epoch.

    With ``resume=True`` training continues from ``out_dir/last.pt``; in
    deterministic mode the result matches an uninterrupted run.
    """
    if not train_records:
        raise ValueError("training split is empty")
    rcfg = cfg.resolved(profile.name)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.use_deterministic_algorithms(deterministic_requested(cfg))

    model = build_model(model_cfg, profile, cfg.seed, dtype)
    optimizer = make_optimizer(model, rcfg)
    generator = torch.Generator().manual_seed(cfg.seed + 1)
    torch.manual_seed(cfg.seed + 2)
    state = {"epoch": 0, "step": 0, "best_val": math.inf, "bad_epochs": 0}
    last = out_dir / "last.pt"
    log_path = out_dir / "log.jsonl"

    if resume and last.exists():
        payload = read_checkpoint(last)
        if DatasetProfile.from_dict(payload["profile"]) != profile:
            raise ProfileMismatchError("cannot resume: checkpoint profile differs")
        model.load_state_dict(payload["model"])
        optimizer.load_state_dict(payload["optimizer"])
        state = dict(payload["state"])
        generator.set_state(state.pop("noise_rng"))
        torch.set_rng_state(state.pop("torch_rng"))
    else:
        (out_dir / "config.json").write_text(json.dumps({
            "train_config": cfg.to_dict(), "model_config": model_cfg.to_dict(),
            "profile": profile.to_dict()}, indent=2))
        log_path.write_text("")

    def snapshot():
        full = {**state, "noise_rng": generator.get_state(), "torch_rng": torch.get_rng_state()}
        save_checkpoint(last, model, optimizer, cfg, full)
        if cfg.keep_all_checkpoints:
            save_checkpoint(out_dir / f"epoch_{state['epoch']:04d}.pt", model, optimizer, cfg, full)

    if state["epoch"] == 0 and not last.exists():
        snapshot()

    logs = []
    with open(log_path, "a") as fh:
        while state["epoch"] < cfg.epochs:
            epoch = state["epoch"]
            rng = np.random.default_rng([cfg.seed, epoch])
            for chunk in iterate_minibatches(train_records, cfg.batch_size, rng):
                if max_steps is not None and state["step"] >= max_steps:
                    break
                batch = make_batch(chunk, profile, dtype=dtype)
                rec = train_step(model, optimizer, batch, rcfg, generator, state["step"], epoch)
                state["step"] += 1
                logs.append(rec)
                fh.write(json.dumps(rec.to_dict()) + "\n")
                if log_every and state["step"] % log_every == 0:
                    print(f"step {state['step']} total {rec.total:.4f}", flush=True)
            state["epoch"] = epoch + 1
            stop = max_steps is not None and state["step"] >= max_steps
            if val_records:
                val = evaluate_loss(model, val_records, profile, rcfg)
                if val < state["best_val"]:
                    state["best_val"], state["bad_epochs"] = val, 0
                else:
                    state["bad_epochs"] += 1
                stop = stop or state["bad_epochs"] >= cfg.patience
            snapshot()
            if stop:
                break
    model.eval()
    return FitResult(model, last, logs, state["epoch"])
