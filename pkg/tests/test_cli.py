"""End-to-end command-line walkthrough on a miniature synthetic task."""

import pytest

from pmu.cli import main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """synth -> tokenizers -> short train -> decode, shared by the tests."""
    root = tmp_path_factory.mktemp("cliws")
    spec = root / "toy.spec"
    spec.write_text(
        "words = bad, cab, ace\nnum_utts = 20\nfeature_dim = 8\n"
        "frames_min = 10\nframes_max = 14\ngap_min = 2\ngap_max = 4\n",
        encoding="utf-8")
    assert main(["synth", "--spec", str(spec), "--seed", "0",
                 "--out", str(root / "toy")]) == 0
    assert main(["tokenize", "train-bpe",
                 "--corpus", str(root / "toy" / "corpus.txt"),
                 "--merges", "8", "--out", str(root / "bpe.tok")]) == 0
    assert main(["tokenize", "train-pasm",
                 "--corpus", str(root / "toy" / "corpus.txt"),
                 "--lexicon", str(root / "toy" / "lexicon.txt"),
                 "--size", "12", "--iters", "4",
                 "--out", str(root / "pasm.tok")]) == 0

    cfg = root / "exp.cfg"
    cfg.write_text(f"""
[model]
num_layers = 2
attention_dim = 8
ff_dim = 16
heads = 2
conv_kernel = 3
dropout = 0.1
input_dim = 8
lstm_dim = 8
joint_dim = 8
subsample_channels = 2

[pmu]
variant = para_ctc

[train]
base_lr = 0.5
warmup_steps = 10
max_steps = 4
batch_size = 2
eval_every = 2
label_smoothing = 0.0
out_dir = {root / 'run'}

[data]
train_manifest = {root / 'toy' / 'train.tsv'}
dev_manifest = {root / 'toy' / 'dev.tsv'}
bpe_model = {root / 'bpe.tok'}
pasm_model = {root / 'pasm.tok'}
""", encoding="utf-8")
    assert main(["train", "--config", str(cfg), "--quiet"]) == 0
    return root


def test_synth_outputs_exist(workspace):
    for name in ("train.tsv", "dev.tsv", "corpus.txt", "lexicon.txt"):
        assert (workspace / "toy" / name).exists()


def test_encode_command(workspace, capsys):
    assert main(["tokenize", "encode", "--model", str(workspace / "bpe.tok"),
                 "--text", "bad cab"]) == 0
    units, _, ids = capsys.readouterr().out.strip().partition("\t")
    assert units and ids
    assert all(tok.isdigit() for tok in ids.split())


def test_training_artifacts(workspace):
    assert (workspace / "run" / "final.ckpt").exists()
    assert (workspace / "run" / "runlog.jsonl").exists()
    lines = (workspace / "run" / "runlog.jsonl").read_text().splitlines()
    assert len(lines) == 4 + 2  # step records plus eval records


def test_decode_then_score(workspace, capsys):
    hyp = workspace / "dev.hyp"
    assert main(["decode", "--ckpt", str(workspace / "run" / "final.ckpt"),
                 "--data", str(workspace / "toy" / "dev.tsv"),
                 "--out", str(hyp)]) == 0
    capsys.readouterr()
    lines = hyp.read_text(encoding="utf-8").splitlines()
    assert lines and all("\t" in line for line in lines)

    assert main(["eval-wer", "--ref", str(workspace / "toy" / "dev.tsv"),
                 "--hyp", str(hyp)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("wer ")
    assert "ref_words" in out


def test_resume_continues_from_checkpoint(workspace, capsys):
    cfg = (workspace / "exp.cfg").read_text(encoding="utf-8")
    longer = workspace / "exp8.cfg"
    longer.write_text(cfg.replace("max_steps = 4", "max_steps = 8")
                      .replace(str(workspace / "run"),
                               str(workspace / "run8")),
                      encoding="utf-8")
    assert main(["train", "--config", str(longer),
                 "--resume", str(workspace / "run" / "final.ckpt"),
                 "--quiet"]) == 0
    capsys.readouterr()
    log = (workspace / "run8" / "runlog.jsonl").read_text().splitlines()
    import json
    steps = [json.loads(l)["step"] for l in log
             if json.loads(l)["kind"] == "step"]
    assert steps == [5, 6, 7, 8]


def test_bad_input_exits_2(workspace, capsys, tmp_path):
    assert main(["tokenize", "encode", "--model",
                 str(tmp_path / "missing.tok"), "--text", "x"]) == 2
    assert "error:" in capsys.readouterr().err
    # a malformed config is an input error, reported on stderr with code 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("[model]\nnum_layers = soon\n", encoding="utf-8")
    assert main(["train", "--config", str(bad)]) == 2
    assert "error:" in capsys.readouterr().err


def test_unknown_tokenizer_header_exits_2(workspace, capsys, tmp_path):
    junk = tmp_path / "junk.tok"
    junk.write_text("not-a-tokenizer\n", encoding="utf-8")
    assert main(["tokenize", "encode", "--model", str(junk),
                 "--text", "x"]) == 2
    assert "unrecognized tokenizer header" in capsys.readouterr().err
