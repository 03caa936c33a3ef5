"""Command-line entry point.

Every subcommand writes the run configuration next to its outputs so the
artifact can be reproduced. Failures print one JSON line on stderr and exit
with 2 (usage), 3 (data or schema) or 4 (numeric).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import dataset as ds
from .circuit import canonical_hash, to_dot
from .config import ModelConfig, TrainConfig
from .errors import CapacityError, NumericError, ProfileMismatchError, SchemaError
from .evaluator import (EvalReport, conditional_eval, reconstruction_accuracy, retrieval_experiment,
                        unconditional_eval)
from .profiles import get_profile
from .trainer import fit, load_checkpoint

log = logging.getLogger("cktgen")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    subcommand: str
    profile: str | None = None
    paths: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    overrides: dict = field(default_factory=dict)
    deterministic: bool = False


def _write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _config_path(out):
    out = Path(out)
    return out / "config.json" if out.is_dir() else out.with_name(out.name + ".config.json")


def _record_run(run: RunConfig, out):
    _write_json(_config_path(out), {"run": asdict(run)})


def _parse_spec(text):
    try:
        g, b, p = (float(x) for x in text.split(","))
    except ValueError:
        raise UsageError(f"--spec expects three comma-separated numbers, got {text!r}") from None
    return ds.RawSpecification(g, b, p)


def _load(path, profile):
    records, dropped = ds.load_ocb(path, profile)
    if dropped:
        log.warning("%s: %d rows dropped", path, dropped)
    if not records:
        raise SchemaError(f"{path}: no usable records")
    return records


# -- subcommands -------------------------------------------------------------

def cmd_preprocess(a, run):
    profile = get_profile(a.profile)
    records = _load(a.inp, profile)
    ds.save_jsonl(records, a.out, profile)
    _record_run(run, a.out)
    print(json.dumps({"records": len(records), "out": str(a.out)}))


def cmd_synth(a, run):
    profile = get_profile(a.profile)
    records = ds.synthesize_toy(profile, a.n, a.types, a.seed)
    ds.save_jsonl(records, a.out, profile)
    _record_run(run, a.out)
    print(json.dumps({"records": len(records), "out": str(a.out)}))


def cmd_train(a, run):
    profile = get_profile(a.profile)
    cfg = TrainConfig(mode=a.mode, seed=a.seed)
    for name in ("epochs", "lr", "batch_size", "patience"):
        value = getattr(a, name)
        if value is not None:
            setattr(cfg, name, value)
    if a.deterministic:
        cfg.deterministic = True
    cfg = cfg.ablate(a.ablate)
    model_cfg = ModelConfig.named(a.model_size)
    if a.config:
        # the structured config file has the last word
        extra = json.loads(Path(a.config).read_text())
        cfg = TrainConfig.from_dict({**cfg.to_dict(), **extra.get("train_config", {})})
        model_cfg = ModelConfig.from_dict({**model_cfg.to_dict(), **extra.get("model_config", {})})
        run.overrides = extra
    records = _load(a.data, profile)
    train, held_out = ds.split(records, cfg.train_frac, cfg.seed)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    ds.save_jsonl(held_out, out / "test.jsonl", profile)
    res = fit(train, cfg, model_cfg, profile, out, val_records=held_out or None,
              resume=a.resume, max_steps=a.max_steps)
    cfg_file = out / "config.json"
    stored = json.loads(cfg_file.read_text())
    stored["run"] = asdict(run)
    _write_json(cfg_file, stored)
    last = res.logs[-1].to_dict() if res.logs else {}
    print(json.dumps({"checkpoint": str(res.checkpoint), "epochs": res.epochs_run, "last": last}))


def cmd_generate(a, run):
    model, _ = load_checkpoint(a.ckpt)
    profile = model.profile
    gen = torch.Generator().manual_seed(a.seed)
    if a.spec is not None:
        binned = ds.preprocess_spec(_parse_spec(a.spec), profile)
        if binned is None:
            raise SchemaError(f"specification {a.spec!r} is outside the profile bins")
        g = model.encode_specs([binned] * a.n)
        z = g.mu + torch.exp(0.5 * g.logvar) * torch.randn(g.mu.shape, generator=gen, dtype=model.dtype)
    else:
        z = torch.randn((a.n, model.cfg.d_latent), generator=gen, dtype=model.dtype)
    circuits = model.generate(z, sampler=a.sampler, temperature=a.temp, generator=gen)
    _write_circuits(circuits, a.out, profile)
    _record_run(run, a.out)
    print(json.dumps({"generated": len(circuits), "out": str(a.out)}))


def _write_circuits(circuits, out, profile):
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if out.suffix == ".dot":
        out.write_text("\n".join(to_dot(c, profile, f"circuit_{k}") for k, c in enumerate(circuits)))
    else:
        with open(out, "w") as fh:
            for c in circuits:
                fh.write(json.dumps(ds.circuit_to_json(c, profile)) + "\n")


def cmd_evaluate(a, run):
    gen_model, _ = load_checkpoint(a.gen_ckpt)
    profile = gen_model.profile
    records = _load(a.data, profile)
    if a.mode == "cond":
        if not a.eval_ckpt:
            raise UsageError("--mode cond needs --eval-ckpt")
        eval_model, _ = load_checkpoint(a.eval_ckpt, profile)
        report, _ = conditional_eval(gen_model, eval_model, records, seed=a.seed)
    elif a.mode == "recon":
        report = EvalReport(mode="recon", n=len(records),
                            reconstruction_accuracy=reconstruction_accuracy(gen_model, records, seed=a.seed))
    elif a.mode == "uncond":
        ref = _load(a.train_data, profile) if a.train_data else records
        hashes = {canonical_hash(r.circuit, profile) for r in ref}
        report = unconditional_eval(gen_model, a.n, hashes, seed=a.seed)
    else:
        r_at = retrieval_experiment(gen_model, records, seed=a.seed, n_draws=a.draws)
        report = EvalReport(mode="retrieval", n=len(ds.group_by_spec(records)), r_at=r_at)
    _write_json(a.report, report.to_dict())
    _record_run(run, a.report)
    print(json.dumps(report.to_dict()))


def cmd_retrieve(a, run):
    model, _ = load_checkpoint(a.ckpt)
    records = _load(a.data, model.profile)
    r_at = retrieval_experiment(model, records, seed=a.seed, n_draws=a.draws)
    report = EvalReport(mode="retrieval", n=len(ds.group_by_spec(records)), r_at=r_at).to_dict()
    if a.report:
        _write_json(a.report, report)
        _record_run(run, a.report)
    print(json.dumps(report))


def cmd_export(a, run):
    profile = get_profile(a.profile)
    circuits = []
    with open(a.inp) as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise SchemaError(f"malformed JSON: {exc.msg}", lineno) from None
                circuits.append(ds.circuit_from_json(obj, profile, lineno))
    _write_circuits(circuits, a.out, profile)
    _record_run(run, a.out)
    print(json.dumps({"exported": len(circuits), "out": str(a.out)}))


# -- parser ------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="cktgen", description="Specification-conditioned analog circuit generation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("preprocess", help="validate and bin a raw JSON-lines dataset")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--profile", default="101")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("synth-data", help="write a synthetic toy dataset")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--types", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--profile", default="101")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train a model")
    s.add_argument("--data", required=True)
    s.add_argument("--profile", default="101")
    s.add_argument("--mode", choices=("cond", "uncond"), default="cond")
    s.add_argument("--ablate", choices=("none", "nce_cg", "vae", "filter"), default="none")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--patience", type=int)
    s.add_argument("--max-steps", type=int)
    s.add_argument("--model-size", choices=("paper", "desk", "tiny"), default="paper")
    s.add_argument("--config", help="JSON file whose train_config/model_config override the flags")
    s.add_argument("--deterministic", action="store_true")
    s.add_argument("--resume", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("generate", help="decode circuits from a checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--spec", help='raw "gain,bw,pm"; omit to sample the prior')
    s.add_argument("--n", type=int, default=1)
    s.add_argument("--sampler", choices=("greedy", "sample"), default="greedy")
    s.add_argument("--temp", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("evaluate", help="run an evaluation protocol")
    s.add_argument("--gen-ckpt", required=True)
    s.add_argument("--eval-ckpt")
    s.add_argument("--data", required=True)
    s.add_argument("--mode", choices=("cond", "recon", "uncond", "retrieval"), default="cond")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n", type=int, default=1000, help="prior samples for --mode uncond")
    s.add_argument("--train-data", help="novelty reference for --mode uncond")
    s.add_argument("--draws", type=int, default=1)
    s.add_argument("--report", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("retrieve", help="spec-to-circuit retrieval rates")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--draws", type=int, default=1)
    s.add_argument("--report")
    s.set_defaults(func=cmd_retrieve)

    s = sub.add_parser("export", help="convert circuit JSON lines to DOT or JSON")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--profile", default="101")
    s.set_defaults(func=cmd_export)
    return p


def _fail(code, category, message):
    print(json.dumps({"error": category, "message": str(message).replace("\n", " ")}), file=sys.stderr)
    return code


def _run_config(a):
    skip = {"func", "command", "verbose"}
    args = {k: v for k, v in vars(a).items() if k not in skip}
    paths = {k: v for k, v in args.items()
             if k in ("inp", "out", "data", "ckpt", "gen_ckpt", "eval_ckpt", "report", "config", "train_data")
             and v is not None}
    seeds = {"seed": args["seed"]} if "seed" in args else {}
    rest = {k: v for k, v in args.items() if k not in paths and k != "seed"}
    det = bool(args.get("deterministic")) or os.environ.get("CKTGEN_DETERMINISTIC") == "1"
    return RunConfig(a.command, args.get("profile"), paths, seeds, rest, det)


def main(argv=None):
    try:
        a = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", exc)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    run = _run_config(a)
    if run.deterministic:
        torch.use_deterministic_algorithms(True)
    np.random.seed(run.seeds.get("seed", 0))
    try:
        a.func(a, run)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", exc)
    except NumericError as exc:
        return _fail(EXIT_NUMERIC, "numeric", exc)
    except (SchemaError, CapacityError, ProfileMismatchError) as exc:
        return _fail(EXIT_DATA, "data", exc)
    except (FileNotFoundError, IsADirectoryError, json.JSONDecodeError) as exc:
        return _fail(EXIT_DATA, "data", exc)
    except ValueError as exc:
        return _fail(EXIT_DATA, "data", exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
