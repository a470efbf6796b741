import json
import os

import pytest

from varnamer.cli import main


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    """Run the real subcommand pipeline end to end on a small dataset."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "toy.jsonl"
    assert main(["toygen", "--out", str(data), "--functions", "60", "--seed", "3"]) == 0
    out_dir = root / "corpus"
    assert main(["corpus", "--data", str(data), "--out-dir", str(out_dir)]) == 0
    vocab = root / "vocab"
    assert main([
        "tokenizer", "--corpus", str(out_dir / "corpus.txt"),
        "--vocab-size", "400", "--max-merges", "50000",
        "--max-token-length", "6", "--out", str(vocab),
    ]) == 0
    ckpt = root / "pre.ckpt"
    assert main([
        "pretrain", "--corpus-text", str(out_dir / "corpus.txt"),
        "--corpus-index", str(out_dir / "corpus.index.json"),
        "--vocab", str(vocab), "--out", str(ckpt),
        "--preset", "varbert-toy", "--objective", "mlm_ww",
        "--epochs", "2", "--batch", "8", "--micro-batch", "8",
        "--lr", "1e-3", "--dropout", "0.0", "--seed", "5",
        "--log", str(root / "train.log"),
    ]) == 0
    ft = root / "ft.ckpt"
    assert main([
        "finetune", "--corpus-text", str(out_dir / "corpus.txt"),
        "--corpus-index", str(out_dir / "corpus.index.json"),
        "--vocab", str(vocab), "--init", str(ckpt), "--out", str(ft),
        "--epochs", "2", "--batch", "8", "--micro-batch", "8",
        "--lr", "1e-3", "--dropout", "0.0", "--seed", "6",
    ]) == 0
    return root


def test_pipeline_artifacts_and_manifests(pipeline_dir):
    root = pipeline_dir
    for artifact in ("toy.jsonl", "corpus/corpus.txt", "corpus/corpus.index.json",
                     "vocab.tokens.txt", "vocab.merges.txt", "pre.ckpt", "ft.ckpt"):
        assert (root / artifact).exists(), artifact
    manifest = json.loads((root / "pre.ckpt.manifest.json").read_text())
    assert manifest["subcommand"] == "pretrain"
    assert manifest["config"]["seed"] == 5
    # provenance: every input artifact is fingerprinted
    assert any("corpus.txt" in k for k in manifest["inputs"])
    assert all(len(v) == 64 for v in manifest["inputs"].values())
    assert all(len(v) == 64 for v in manifest["outputs"].values())


def test_train_log_is_line_delimited(pipeline_dir):
    lines = (pipeline_dir / "train.log").read_text().strip().split("\n")
    entries = [json.loads(line) for line in lines]
    assert all({"step", "lr", "loss", "masked_tokens", "epoch"} <= set(e) for e in entries)


def test_eval_subcommand(pipeline_dir, capsys):
    root = pipeline_dir
    report_path = root / "report.json"
    code = main([
        "eval", "--corpus-text", str(root / "corpus/corpus.txt"),
        "--corpus-index", str(root / "corpus/corpus.index.json"),
        "--checkpoint", str(root / "ft.ckpt"), "--vocab", str(root / "vocab"),
        "--split", "validation", "--mode", "heuristic",
        "--out", str(report_path),
    ])
    assert code == 0
    out = capsys.readouterr().out
    assert "overall" in out
    report = json.loads(report_path.read_text())
    assert set(report["splits"]) == {"overall", "body_in_train", "body_not_in_train"}
    em = report["splits"]["overall"]["em_percent"]
    assert em["1"] <= em["3"] <= em["5"] <= em["10"]


def test_predict_subcommand(pipeline_dir, tmp_path, capsys):
    root = pipeline_dir
    code = "long count; count = count + 1;"
    request = {
        "code": code,
        "slots": [{"placeholder": "v1",
                   "spans": [[5, 10], [12, 17], [20, 25]]}],
        "mode": "heuristic",
    }
    req_path = tmp_path / "req.json"
    req_path.write_text(json.dumps(request))
    status = main([
        "predict", "--checkpoint", str(root / "ft.ckpt"), "--vocab", str(root / "vocab"),
        "--input", str(req_path), "--k", "10",
    ])
    assert status == 0
    out = json.loads(capsys.readouterr().out)
    assert "v1" in out
    assert 1 <= len(out["v1"]) <= 10
    names = [c["name"] for c in out["v1"]]
    assert len(names) == len(set(names))


def test_env_var_supplies_model_paths(pipeline_dir, tmp_path, capsys, monkeypatch):
    root = pipeline_dir
    model_dir = tmp_path / "modeldir"
    model_dir.mkdir()
    os.link(root / "ft.ckpt", model_dir / "model.ckpt")
    os.link(root / "vocab.tokens.txt", model_dir / "vocab.tokens.txt")
    os.link(root / "vocab.merges.txt", model_dir / "vocab.merges.txt")
    monkeypatch.setenv("VARNAMER_MODEL_DIR", str(model_dir))
    request = {"code": "long n; n = 2;",
               "slots": [{"placeholder": "v1", "spans": [[5, 6], [8, 9]]}]}
    req_path = tmp_path / "req.json"
    req_path.write_text(json.dumps(request))
    assert main(["predict", "--input", str(req_path)]) == 0


def test_usage_error_exit_code():
    assert main(["pretrain", "--nonsense"]) == 1
    assert main([]) == 1


def test_data_error_exit_code(tmp_path):
    missing = tmp_path / "absent.jsonl"
    assert main(["corpus", "--data", str(missing), "--out-dir", str(tmp_path / "o")]) == 2


def test_tokenizer_unreachable_vocab_size_is_data_error(pipeline_dir, capsys):
    root = pipeline_dir
    status = main([
        "tokenizer", "--corpus", str(root / "corpus/corpus.txt"),
        "--vocab-size", "50000", "--max-merges", "50000",
        "--out", str(root / "v50k"),
    ])
    assert status == 2
    assert "achievable" in capsys.readouterr().err


def test_tokenizer_exact_size(pipeline_dir):
    tokens = (pipeline_dir / "vocab.tokens.txt").read_text().split("\n")
    data_lines = [l for l in tokens[1:] if l != ""]
    assert len(data_lines) == 400


def test_corpus_reports_bad_lines(tmp_path, capsys):
    good = {"id": "a", "code": "int v1;", "vars": [
        {"dec_name": "v1", "gold_name": "x", "spans": [[4, 6]]}], "split": "train"}
    path = tmp_path / "d.jsonl"
    path.write_text(json.dumps(good) + "\nBROKEN\n")
    status = main(["corpus", "--data", str(path), "--out-dir", str(tmp_path / "o")])
    assert status == 2
    assert ":2:" in capsys.readouterr().err
    # and with --allow-errors the valid subset goes through
    status = main(["corpus", "--data", str(path), "--out-dir", str(tmp_path / "o2"),
                   "--allow-errors"])
    assert status == 0


def test_recipe_flag_sets_defaults(tmp_path, capsys):
    # recipe names resolve; a bad name is a usage error from choices
    assert main(["pretrain", "--recipe", "no-such", "--corpus-text", "x",
                 "--corpus-index", "y", "--vocab", "z", "--out", "o"]) == 1


def test_rerun_same_inputs_same_fingerprints(pipeline_dir, tmp_path):
    root = pipeline_dir
    out_a = tmp_path / "va"
    out_b = tmp_path / "vb"
    for out in (out_a, out_b):
        assert main([
            "tokenizer", "--corpus", str(root / "corpus/corpus.txt"),
            "--vocab-size", "380", "--max-merges", "50000", "--out", str(out),
        ]) == 0
    a = json.loads((tmp_path / "va.tokens.txt.manifest.json").read_text())
    b = json.loads((tmp_path / "vb.tokens.txt.manifest.json").read_text())
    assert list(a["outputs"].values()) == list(b["outputs"].values())
