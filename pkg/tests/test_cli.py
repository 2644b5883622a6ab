import json
import subprocess
import sys

import numpy as np
import pytest

from char2text import metrics as M
from char2text.cli import EXIT_ALIGNMENT, EXIT_CORRUPT, EXIT_INPUT, EXIT_OK, main, resolve_run_config
from char2text.data import DatasetInstance, parse_mr, write_e2e_csv
from char2text.model import DecoderTrace
from char2text.store import load_checkpoint, save_traces
from char2text.viz import read_heatmap, read_pgm

TRAIN = [("name[Aromi], food[Thai]", "Aromi serves Thai food."), ("name[Zizzi], near[Ecco]", "Zizzi is near Ecco."),
         ("name[Bibimbap], food[Korean]", "Bibimbap serves Korean food.")]
VALID = [("name[Aromi], near[Ecco]", "Aromi is near Ecco.")]
TINY = ["--hidden-size", "8", "--embedding-size", "4", "--set", "max_decode_len=12", "--seed", "1"]


def write_csv(path, rows, split):
    write_e2e_csv([DatasetInstance(parse_mr(m), [r], split) for m, r in rows], path)
    return str(path)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    return {"train": write_csv(d / "train.csv", TRAIN, "train"), "validation": write_csv(d / "valid.csv", VALID, "validation"),
            "test": write_csv(d / "test.csv", VALID, "test"), "dir": d}


def train_args(corpus, out, *extra):
    return ["train", "--train", corpus["train"], "--validation", corpus["validation"], "--output-dir", str(out),
            *TINY, *extra]


@pytest.fixture(scope="module")
def run_dir(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(train_args(corpus, out, "--max-iterations", "2", "--eval-every", "1")) == EXIT_OK
    return out


# ---------------------------------------------------------------- prepare-data


def write_pools(d, slots=("name", "near", "food")):
    values = {"name": ["Nobu", "Per Se", "Daniel"], "near": ["Katz", "Luger", "Balthazar"], "food": ["Peruvian", "Nepalese", "Basque"]}
    for slot in slots:
        for split, v in zip(("train", "validation", "test"), values[slot]):
            (d / f"{slot}.{split}.txt").write_text(v + "\n")


def test_prepare_data_missing_pool_names_path(corpus, tmp_path, capsys):
    pools = tmp_path / "pools"
    pools.mkdir()
    write_pools(pools, slots=("name", "near"))
    code = main(["prepare-data", "--train", corpus["train"], "--pools", str(pools), "--out", str(tmp_path / "o")])
    assert code == EXIT_INPUT
    assert str(pools / "food.train.txt") in capsys.readouterr().err


def test_prepare_data_is_byte_deterministic(corpus, tmp_path):
    pools = tmp_path / "pools"
    pools.mkdir()
    write_pools(pools)
    outs = []
    for name in ("a", "b"):
        args = ["prepare-data", "--train", corpus["train"], "--validation", corpus["validation"],
                "--pools", str(pools), "--out", str(tmp_path / name), "--seed", "4"]
        assert main(args) == EXIT_OK
        outs.append({p.name: p.read_bytes() for p in sorted((tmp_path / name).iterdir())})
    assert outs[0] == outs[1]
    assert set(outs[0]) == {"e2eplus.train.csv", "e2eplus.validation.csv", "e2eplus.build.json"}
    assert b"Nobu" in outs[0]["e2eplus.train.csv"] and b"Aromi" not in outs[0]["e2eplus.train.csv"]


def test_prepare_data_pool_violation(corpus, tmp_path, capsys):
    pools = tmp_path / "pools"
    pools.mkdir()
    write_pools(pools)
    (pools / "near.test.txt").write_text("Nobu\n")
    code = main(["prepare-data", "--train", corpus["train"], "--pools", str(pools), "--out", str(tmp_path / "o")])
    assert code == EXIT_INPUT and "pool" in capsys.readouterr().err


def test_prepare_data_stats(corpus, capsys):
    assert main(["prepare-data", "--train", corpus["train"], "--stats"]) == EXIT_OK
    stats = json.loads(capsys.readouterr().out)
    assert stats["counts"] == {"train": 3}


# ---------------------------------------------------------------- train


def test_variant_flag_mapping(corpus):
    cfg = resolve_run_config({}, {"variant": "eda", "train": corpus["train"], "validation": corpus["validation"]})
    assert cfg.model_config().copy is False
    assert (cfg.train_config().copy, cfg.train_config().switch) == (False, False)


def test_precedence_cli_over_file_over_defaults(corpus):
    cfg = resolve_run_config({"hidden_size": 64, "seed": 3, "synthetic": "copy"}, {"seed": "9"})
    assert (cfg.hidden_size, cfg.seed, cfg.embedding_size) == (64, 9, 32)


def test_unknown_config_key_fails_before_training(corpus, tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"hidden_size": 8, "hiddn_size": 9}))
    out = tmp_path / "never"
    assert main(train_args(corpus, out, "--config", str(path))) == EXIT_INPUT
    assert "hiddn_size" in capsys.readouterr().err
    assert not out.exists()


def test_bad_override_value(corpus, tmp_path):
    assert main(train_args(corpus, tmp_path / "x", "--set", "learning_rate=fast")) == EXIT_INPUT
    assert main(train_args(corpus, tmp_path / "x", "--set", "patience=0")) == EXIT_INPUT


def test_train_writes_artifacts(run_dir):
    assert {p.name for p in run_dir.iterdir()} >= {"best.ckpt", "last.ckpt", "train_log.jsonl"}
    last = load_checkpoint(run_dir / "last.ckpt")
    assert last.iteration == 2 and last.optimizer is not None and last.optimizer.t == 4
    assert load_checkpoint(run_dir / "best.ckpt").run_config["variant"] == "eda_cs"
    records = [json.loads(line) for line in (run_dir / "train_log.jsonl").read_text().splitlines()]
    assert [r["iteration"] for r in records] == [1, 2]


def test_training_is_deterministic(corpus, tmp_path):
    # identical arguments, output directory included, since the checkpoint echoes the run config
    out = tmp_path / "run"
    produced = []
    for _ in range(2):
        assert main(train_args(corpus, out, "--max-iterations", "2", "--eval-every", "1")) == EXIT_OK
        produced.append({n: (out / n).read_bytes() for n in ("best.ckpt", "last.ckpt", "train_log.jsonl")})
        for p in out.iterdir():
            p.unlink()
    assert produced[0] == produced[1]


def test_resume_continues_step_counter(corpus, run_dir, tmp_path):
    out = tmp_path / "resumed"
    out.mkdir()
    (out / "train_log.jsonl").write_bytes((run_dir / "train_log.jsonl").read_bytes())
    args = train_args(corpus, out, "--max-iterations", "2", "--eval-every", "1", "--resume", str(run_dir / "last.ckpt"))
    assert main(args) == EXIT_OK
    assert load_checkpoint(out / "last.ckpt").iteration == 4
    steps = [json.loads(line)["iteration"] for line in (out / "train_log.jsonl").read_text().splitlines()]
    assert steps == [1, 2, 3, 4]


def test_resume_with_other_dimensions_is_rejected(corpus, run_dir, tmp_path):
    args = train_args(corpus, tmp_path, "--resume", str(run_dir / "last.ckpt"), "--hidden-size", "10")
    assert main(args) == EXIT_INPUT


# ---------------------------------------------------------------- generate


def test_generate_empty_input(run_dir, tmp_path):
    (tmp_path / "in.txt").write_text("")
    code = main(["generate", "--checkpoint", str(run_dir / "best.ckpt"), "--input", str(tmp_path / "in.txt"),
                 "--output", str(tmp_path / "out.txt")])
    assert code == EXIT_OK and (tmp_path / "out.txt").read_text() == ""


def test_generate_is_deterministic_and_reports_bad_lines(run_dir, tmp_path, capsys):
    (tmp_path / "in.txt").write_text("name[Aromi], food[Thai]\nname[broken\nnear[Ecco]\n")
    outs = []
    for k in range(2):
        code = main(["generate", "--checkpoint", str(run_dir / "best.ckpt"), "--input", str(tmp_path / "in.txt"),
                     "--output", str(tmp_path / f"o{k}.txt"), "--trace", str(tmp_path / f"t{k}.bin"), "--max-len", "10"])
        assert code == EXIT_OK
        outs.append(((tmp_path / f"o{k}.txt").read_bytes(), (tmp_path / f"t{k}.bin").read_bytes()))
    assert outs[0] == outs[1]
    lines = outs[0][0].decode().split("\n")
    assert len(lines) == 4 and lines[1] == "" and lines[3] == ""
    errors = [json.loads(line) for line in capsys.readouterr().err.splitlines() if line.startswith("{")]
    assert errors and all(e["line"] == 2 for e in errors)


def test_generate_corrupt_checkpoint(run_dir, tmp_path):
    bad = tmp_path / "bad.ckpt"
    data = bytearray((run_dir / "best.ckpt").read_bytes())
    data[100] ^= 0xFF
    bad.write_bytes(bytes(data))
    (tmp_path / "in.txt").write_text("name[a]\n")
    code = main(["generate", "--checkpoint", str(bad), "--input", str(tmp_path / "in.txt"), "--output", str(tmp_path / "o.txt")])
    assert code == EXIT_CORRUPT


# ---------------------------------------------------------------- evaluate


def test_evaluate_identity(tmp_path, capsys):
    groups = [["The Eagle is a pub.", "A pub called The Eagle."], ["Aromi serves Thai food."]]
    (tmp_path / "h.txt").write_text("".join(g[0] + "\n" for g in groups))
    M.write_reference_groups(groups, tmp_path / "r.txt")
    code = main(["evaluate", "--hypotheses", str(tmp_path / "h.txt"), "--references", str(tmp_path / "r.txt"),
                 "--output", str(tmp_path / "scores.txt")])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "bleu: 1.0000" in out.splitlines()
    assert [line.split(":")[0] for line in out.splitlines()] == list(M.METRICS)
    assert (tmp_path / "scores.txt").read_text() == out


def test_evaluate_fixture_matches_module(tmp_path, capsys):
    hyps = ["the cat sat on the mat", "a dog runs very fast"]
    groups = [["the cat is on the mat"], ["a dog runs very quickly", "the dog runs fast"]]
    (tmp_path / "h.txt").write_text("".join(h + "\n" for h in hyps))
    M.write_reference_groups(groups, tmp_path / "r.txt")
    assert main(["evaluate", "--hypotheses", str(tmp_path / "h.txt"), "--references", str(tmp_path / "r.txt")]) == EXIT_OK
    printed = M.MetricReport.parse(capsys.readouterr().out)
    expected = M.score_corpus(hyps, groups)
    for k, v in expected.as_dict().items():
        assert printed.as_dict()[k] == pytest.approx(v, abs=5e-5)
    assert printed.bleu == pytest.approx((4 / 77) ** 0.25, abs=5e-5)


def test_evaluate_misalignment(tmp_path, capsys):
    (tmp_path / "h.txt").write_text("a\nb\nc\n")
    M.write_reference_groups([["a"], ["b"]], tmp_path / "r.txt")
    assert main(["evaluate", "--hypotheses", str(tmp_path / "h.txt"), "--references", str(tmp_path / "r.txt")]) == EXIT_ALIGNMENT
    assert "instance 2" in capsys.readouterr().err


# ---------------------------------------------------------------- inspect


def fixed_trace():
    rng = np.random.default_rng(0)
    att = rng.dirichlet(np.ones(5), size=3)
    flat = np.full((3, 98), 1 / 98)
    return DecoderTrace("abc", att, np.array([0.9, 0.2, 0.6]), flat, flat, flat, np.array([33, 34, 35]), True)


def test_inspect_renders_each_trace(tmp_path, capsys):
    tr = fixed_trace()
    save_traces(tmp_path / "t.bin", [tr, tr])
    assert main(["inspect", str(tmp_path / "t.bin"), "--out-dir", str(tmp_path / "img"), "--format", "both"]) == EXIT_OK
    names = sorted(p.name for p in (tmp_path / "img").iterdir())
    assert names == ["trace_0000.pgm", "trace_0000.svg", "trace_0001.pgm", "trace_0001.svg"]
    assert read_pgm(tmp_path / "img" / "trace_0000.pgm").shape == (5, 5)
    m, g = read_heatmap(tmp_path / "img" / "trace_0000.pgm")
    assert m.shape == (3, 5) and np.max(np.abs(m - tr.attention)) <= 1 / 255


def test_inspect_corrupt_trace(tmp_path):
    save_traces(tmp_path / "t.bin", [fixed_trace()])
    data = (tmp_path / "t.bin").read_bytes()
    (tmp_path / "t.bin").write_bytes(data[: len(data) // 2])
    assert main(["inspect", str(tmp_path / "t.bin"), "--out-dir", str(tmp_path)]) == EXIT_CORRUPT


def test_inspect_missing_file(tmp_path):
    assert main(["inspect", str(tmp_path / "nope.bin")]) == EXIT_INPUT


# ---------------------------------------------------------------- entry point


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "char2text", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("char2text ")
    res = subprocess.run([sys.executable, "-m", "char2text", "evaluate"], capture_output=True, text=True)
    assert res.returncode == 2
