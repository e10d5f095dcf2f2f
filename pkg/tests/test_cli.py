import json

import pytest

from sbnet.cli import main

FAST = ["--set", "model.hidden=32", "--set", "model.embed_dim=16", "--set", "batch_size=16",
        "--set", "optim.lr0=3e-3", "--set", "eval.n_trials=400", "--set", "eval.matching_trials=200"]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["gen-synth", "--out", str(out), "--n-identities", "24", "--samples", "6", "--d-in", "16",
                 "--latent-dim", "8", "--seed", "3"]) == 0
    return out / "corpus.jsonl"


@pytest.fixture(scope="module")
def run(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "r"
    assert main(["train", "--corpus", str(corpus), "--out", str(out), "--epochs", "2", "--loss", "git", *FAST]) == 0
    return out


def test_gen_synth_is_deterministic(corpus, tmp_path):
    main(["gen-synth", "--out", str(tmp_path), "--n-identities", "24", "--samples", "6", "--d-in", "16",
          "--latent-dim", "8", "--seed", "3"])
    assert (tmp_path / "corpus.jsonl").read_bytes() == corpus.read_bytes()


def test_train_outputs(run):
    assert sorted(p.name for p in run.iterdir()) == \
        ["checkpoint.json", "manifest.json", "matching.csv", "reports.json", "verification.csv"]
    m = json.loads((run / "manifest.json").read_text())
    for key in ("config", "code_version", "seed", "wall_clock_s", "loss_trace", "reports", "split"):
        assert key in m
    assert m["config"]["loss"]["loss"] == "git" and len(m["loss_trace"]) == 2


def test_same_config_same_bytes(corpus, run, tmp_path):
    out = tmp_path / "again"
    main(["train", "--corpus", str(corpus), "--out", str(out), "--epochs", "2", "--loss", "git", *FAST])
    for name in ("checkpoint.json", "reports.json", "verification.csv", "matching.csv"):
        assert (out / name).read_bytes() == (run / name).read_bytes(), name


def test_eval_commands(run, tmp_path, capsys):
    ck = str(run / "checkpoint.json")
    assert main(["eval-verification", "--checkpoint", ck, "--out", str(tmp_path), "--n-trials", "300",
                 "--strata", "random", "G"]) == 0
    rows = (tmp_path / "verification.csv").read_text().splitlines()
    assert rows[0] == "paradigm,stratify,eer,auc,n_trials" and len(rows) == 5
    assert main(["eval-matching", "--checkpoint", ck, "--out", str(tmp_path), "--n-trials", "100",
                 "--gallery-sizes", "2", "3", "4"]) == 0
    assert len((tmp_path / "matching.csv").read_text().splitlines()) == 4


def test_default_matching_has_five_rows(corpus, tmp_path):
    # n_c up to 10 needs 11 test identities
    big = tmp_path / "big"
    main(["gen-synth", "--out", str(big), "--n-identities", "60", "--samples", "3", "--d-in", "16"])
    out = tmp_path / "r"
    main(["train", "--corpus", str(big / "corpus.jsonl"), "--out", str(out), "--epochs", "0", *FAST])
    main(["eval-matching", "--checkpoint", str(out / "checkpoint.json"), "--out", str(tmp_path / "m")])
    lines = (tmp_path / "m" / "matching.csv").read_text().splitlines()
    assert [l.split(",")[1] for l in lines[1:]] == ["2", "4", "6", "8", "10"]


def test_gradcheck_exit_codes(capsys):
    assert main(["gradcheck"]) == 0
    assert "PASS" in capsys.readouterr().out
    assert main(["gradcheck", "--inject-fault", "Center"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_config_error_exit_code(corpus, tmp_path, capsys):
    assert main(["train", "--corpus", str(corpus), "--out", str(tmp_path), "--set", "loss.bogus=1"]) == 3
    assert "bogus" in capsys.readouterr().err
    assert main(["train", "--out", str(tmp_path)]) == 3
    assert not any(tmp_path.iterdir())


def test_io_error_exit_code(tmp_path):
    assert main(["train", "--corpus", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path / "o")]) == 2
    assert main(["eval-matching", "--checkpoint", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 2


def test_single_identity_stratified_eval_fails(tmp_path):
    main(["gen-synth", "--out", str(tmp_path), "--n-identities", "1", "--samples", "4", "--d-in", "8"])
    assert main(["train", "--corpus", str(tmp_path / "corpus.jsonl"), "--out", str(tmp_path / "o")]) == 1


def test_writes_only_under_out(corpus, tmp_path, monkeypatch):
    work = tmp_path / "cwd"
    work.mkdir()
    monkeypatch.chdir(work)
    out = tmp_path / "dest"
    main(["train", "--corpus", str(corpus), "--out", str(out), "--epochs", "1", *FAST])
    assert list(work.iterdir()) == []
    assert (out / "manifest.json").exists()


def test_data_root_env(corpus, tmp_path, monkeypatch):
    monkeypatch.setenv("SBNET_DATA_ROOT", str(corpus.parent))
    monkeypatch.chdir(tmp_path)
    assert main(["train", "--corpus", "corpus.jsonl", "--out", str(tmp_path / "o"), "--epochs", "0", *FAST]) == 0


def test_report_from_run(run, tmp_path, capsys):
    assert main(["report", str(run), "--out", str(tmp_path)]) == 0
    text = capsys.readouterr().out
    assert "runs" in text and (tmp_path / "runs.csv").exists()
    assert len((tmp_path / "runs.csv").read_text().splitlines()) == 2
