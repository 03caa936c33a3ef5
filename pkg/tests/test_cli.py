import json
import shutil
import subprocess
import sys

import pytest

from cktgen.cli import main


def run(*argv):
    return main([str(a) for a in argv])


def test_synth_data(tmp_path):
    out = tmp_path / "d.jsonl"
    assert run("synth-data", "--n", 100, "--types", 10, "--seed", 7, "--out", out) == 0
    assert len(out.read_text().splitlines()) == 100
    cfg = json.loads((tmp_path / "d.jsonl.config.json").read_text())
    assert cfg["run"]["subcommand"] == "synth-data"
    assert cfg["run"]["seeds"] == {"seed": 7}


def test_synth_data_is_reproducible(tmp_path):
    run("synth-data", "--n", 30, "--types", 5, "--seed", 1, "--out", tmp_path / "a.jsonl")
    run("synth-data", "--n", 30, "--types", 5, "--seed", 1, "--out", tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_usage_errors(capsys):
    assert run("frobnicate") == 2
    assert run("synth-data", "--n", 10) == 2
    assert run("synth-data", "--n", 10, "--types", 2, "--out", "x", "--bogus") == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert all(json.loads(line)["error"] == "usage" for line in err)


def test_data_errors(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"nodes": [{"t": 99, "p": 0}], "edges": [], "spec": {"gain": 1, "bw": 1, "pm": 1}}\n')
    assert run("preprocess", "--in", bad, "--out", tmp_path / "o.jsonl") == 3
    line = capsys.readouterr().err.strip()
    assert "\n" not in line
    assert json.loads(line) == {"error": "data", "message": "line 1: unknown node type id 99"}
    assert run("preprocess", "--in", tmp_path / "missing.jsonl", "--out", tmp_path / "o.jsonl") == 3
    assert run("synth-data", "--n", 5, "--types", 10, "--out", tmp_path / "x.jsonl") == 3


def test_preprocess_round_trip(tmp_path):
    src = tmp_path / "d.jsonl"
    run("synth-data", "--n", 20, "--types", 4, "--out", src)
    assert run("preprocess", "--in", src, "--out", tmp_path / "p.jsonl", "--profile", "101") == 0
    assert (tmp_path / "p.jsonl").read_text() == src.read_text()


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    d = tmp_path_factory.mktemp("pipe")
    assert run("synth-data", "--n", 60, "--types", 6, "--seed", 2, "--out", d / "d.jsonl") == 0
    assert run("train", "--data", d / "d.jsonl", "--out", d / "run", "--epochs", 5, "--model-size", "tiny",
               "--batch-size", 16, "--seed", 0) == 0
    return d


def test_train_artifacts(trained):
    run_dir = trained / "run"
    assert {"config.json", "last.pt", "log.jsonl", "test.jsonl"} <= {p.name for p in run_dir.iterdir()}
    cfg = json.loads((run_dir / "config.json").read_text())
    assert cfg["train_config"]["epochs"] == 5
    assert cfg["model_config"]["d_latent"] == 4
    assert cfg["run"]["subcommand"] == "train"
    assert len((run_dir / "log.jsonl").read_text().splitlines()) == 5 * 4


@pytest.mark.parametrize("mode", ["cond", "recon", "uncond", "retrieval"])
def test_evaluate_reports(trained, mode):
    report = trained / f"{mode}.json"
    ckpt = trained / "run" / "last.pt"
    assert run("evaluate", "--gen-ckpt", ckpt, "--eval-ckpt", ckpt, "--data", trained / "run" / "test.jsonl",
               "--mode", mode, "--n", 20, "--seed", 0, "--report", report) == 0
    d = json.loads(report.read_text())
    assert d["mode"] == mode
    expected = {"cond": "spec_accuracy", "recon": "reconstruction_accuracy", "uncond": "valid_dag",
                "retrieval": "r_at"}[mode]
    assert expected in d


def test_evaluate_cond_needs_eval_ckpt(trained):
    assert run("evaluate", "--gen-ckpt", trained / "run" / "last.pt", "--data", trained / "d.jsonl",
               "--mode", "cond", "--report", trained / "x.json") == 2


def test_generate_and_export(trained, tmp_path):
    ckpt = trained / "run" / "last.pt"
    assert run("generate", "--ckpt", ckpt, "--spec", "1.5,3.2,2", "--n", 4, "--out", tmp_path / "g.jsonl") == 0
    lines = (tmp_path / "g.jsonl").read_text().splitlines()
    assert len(lines) == 4 and all("nodes" in json.loads(x) for x in lines)
    assert run("generate", "--ckpt", ckpt, "--n", 2, "--sampler", "sample", "--temp", "0.7",
               "--out", tmp_path / "g.dot") == 0
    assert (tmp_path / "g.dot").read_text().count("digraph") == 2
    assert run("export", "--in", tmp_path / "g.jsonl", "--out", tmp_path / "e.dot") == 0
    assert (tmp_path / "e.dot").read_text().count("digraph") == 4
    assert run("generate", "--ckpt", ckpt, "--spec", "1,2", "--out", tmp_path / "z.jsonl") == 2
    assert run("generate", "--ckpt", ckpt, "--spec", "1,2,-1", "--out", tmp_path / "z.jsonl") == 3


def test_generate_is_seeded(trained, tmp_path):
    ckpt = trained / "run" / "last.pt"
    for name in ("a", "b"):
        run("generate", "--ckpt", ckpt, "--n", 5, "--sampler", "sample", "--seed", 3, "--out", tmp_path / f"{name}.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_retrieve(trained, capsys):
    assert run("retrieve", "--ckpt", trained / "run" / "last.pt", "--data", trained / "run" / "test.jsonl") == 0
    assert "r_at" in json.loads(capsys.readouterr().out.strip().splitlines()[-1])


def test_config_file_overrides_flags(trained, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"train_config": {"epochs": 1, "batch_size": 30}}))
    assert run("train", "--data", trained / "d.jsonl", "--out", tmp_path / "r", "--epochs", 9,
               "--model-size", "tiny", "--config", cfg) == 0
    stored = json.loads((tmp_path / "r" / "config.json").read_text())
    assert stored["train_config"]["epochs"] == 1
    assert len((tmp_path / "r" / "log.jsonl").read_text().splitlines()) == 2


def test_config_replay_is_bit_exact(trained, tmp_path):
    args = ["train", "--data", trained / "d.jsonl", "--epochs", 1, "--model-size", "tiny", "--seed", 4]
    run(*args, "--out", tmp_path / "a")
    run(*args, "--out", tmp_path / "b")
    strip = lambda p: [{k: v for k, v in json.loads(x).items() if k != "wall_time"}
                       for x in p.read_text().splitlines()]
    assert strip(tmp_path / "a" / "log.jsonl") == strip(tmp_path / "b" / "log.jsonl")


@pytest.mark.skipif(shutil.which("cktgen") is None, reason="console script not installed")
def test_console_script(tmp_path):
    res = subprocess.run(["cktgen", "nope"], capture_output=True, text=True)
    assert res.returncode == 2
    res = subprocess.run([sys.executable, "-m", "cktgen.cli", "synth-data", "--n", "4", "--types", "2",
                          "--out", str(tmp_path / "d.jsonl")], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr


def test_numeric_failure_exit_code(trained, tmp_path, monkeypatch, capsys):
    import cktgen.cli as cli
    from cktgen.errors import NumericError

    def boom(*a, **kw):
        raise NumericError("non-finite nce loss at step 0: nan")

    monkeypatch.setattr(cli, "fit", boom)
    assert run("train", "--data", trained / "d.jsonl", "--out", tmp_path / "r", "--model-size", "tiny") == 4
    assert json.loads(capsys.readouterr().err.strip())["error"] == "numeric"
