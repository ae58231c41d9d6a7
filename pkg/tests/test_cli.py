import re
import time

import pytest

from afm.cli import main
from afm.features import read_features

SMALL = """
[corpus]
n_utts = 10
num_phones = 4
max_duration = 0.6

[train]
epochs = 2
lr = 0.003

[f]
cell_units = 8
projection_dim = 4

[m]
hidden_units = 8
"""


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def kv(line):
    return dict(tok.split("=", 1) for tok in line.split()[1:])


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "small.ini").write_text(SMALL)
    assert main(["synth-data", "--config", str(d / "small.ini"), "--out", str(d / "data")]) == 0
    assert main(["train", "--mode", "sa-afm", "--config", str(d / "small.ini"),
                 "--data", str(d / "data"), "--out", str(d / "run")]) == 0
    return d


def test_pipeline_corpus_train_enhance_eval(workdir, capsys):
    d = workdir
    assert sorted(p.name for p in (d / "run").iterdir()) == [
        "cmvn_clean.json", "cmvn_noisy.json", "d.ckpt", "f.ckpt", "m.ckpt", "train.log"]
    code, out, _ = run(capsys, "enhance", "--model", d / "run" / "f.ckpt",
                       "--in", d / "data" / "feats" / "utt0000.noisy.feat", "--out", d / "e.feat")
    assert code == 0
    assert read_features(d / "e.feat").dims == 29
    code, out, _ = run(capsys, "eval", "--enhanced", d / "e.feat",
                       "--reference", d / "data" / "feats" / "utt0000.clean.feat")
    assert code == 0 and float(kv(out.splitlines()[-1])["mse_enhanced"]) >= 0


def test_enhance_from_wav(workdir, capsys, tmp_path):
    from afm.corpus import CorpusConfig, build_corpus
    build_corpus(CorpusConfig(n_utts=2, seed=9, num_phones=4, write_wav=True), out_dir=tmp_path)
    code, out, _ = run(capsys, "enhance", "--model", workdir / "run" / "f.ckpt",
                       "--in", tmp_path / "wav" / "utt0000.noisy.wav", "--out", tmp_path / "w.feat")
    assert code == 0
    assert read_features(tmp_path / "w.feat").frames == read_features(
        tmp_path / "feats" / "utt0000.noisy.feat").frames


def test_eval_modes(workdir, capsys, tmp_path):
    d = workdir
    code, out, _ = run(capsys, "eval", "--mode", "frames", "--model", d / "run", "--data", d / "data")
    assert code == 0
    assert 0.0 <= float(kv(out.splitlines()[-1])["frame_accuracy"]) <= 1.0
    code, out, _ = run(capsys, "eval", "--mode", "discriminator", "--model", d / "run",
                       "--data", d / "data")
    assert code == 0 and 0.0 <= float(kv(out.splitlines()[-1])["disc_accuracy"]) <= 1.0
    code, out, _ = run(capsys, "eval", "--mode", "enhancement", "--model", d / "run",
                       "--data", d / "data", "--per-utterance", "--plot-dir", tmp_path / "fig")
    assert code == 0
    lines = out.splitlines()
    assert lines[0].startswith("utt ") and lines[-1].startswith("corpus ")
    assert (tmp_path / "fig" / "feature_moments.png").stat().st_size > 0
    assert (tmp_path / "fig" / "loss_history.png").stat().st_size > 0


def test_eval_is_deterministic(workdir, capsys):
    args = ("eval", "--model", workdir / "run", "--data", workdir / "data", "--split", "all")
    assert run(capsys, *args)[1] == run(capsys, *args)[1]


def test_train_log_matches_recomputed_report(workdir, capsys):
    # the last logged l_f is the frame-weighted MSE over the training split
    last = (workdir / "run" / "train.log").read_text().splitlines()[-1]
    logged = float(re.search(r"l_f=(\S+)", last).group(1))
    code, out, _ = run(capsys, "eval", "--model", workdir / "run", "--data", workdir / "data",
                       "--split", "train")
    assert float(kv(out.splitlines()[-1])["mse_enhanced"]) == pytest.approx(logged, rel=1e-6)


def test_usage_errors_exit_1(workdir, capsys):
    assert run(capsys, "train", "--mode", "fm", "--bogus")[0] == 1
    assert run(capsys, "frobnicate")[0] == 1
    assert run(capsys, "train", "--mode", "gan", "--data", "x", "--out", "y")[0] == 1
    bad = workdir / "bad.ini"
    bad.write_text("[train]\nlrr = 1\n")
    code, _, err = run(capsys, "train", "--mode", "fm", "--config", bad, "--data",
                       workdir / "data", "--out", workdir / "r2")
    assert code == 1 and "lrr" in err


def test_data_errors_exit_2(workdir, capsys, tmp_path):
    code, _, err = run(capsys, "eval", "--model", tmp_path / "nope", "--data", workdir / "data")
    assert code == 2 and err.startswith("error:")
    (tmp_path / "junk.ckpt").write_bytes(b"garbage")
    assert run(capsys, "enhance", "--model", tmp_path / "junk.ckpt", "--in",
               workdir / "data" / "feats" / "utt0000.noisy.feat", "--out", tmp_path / "o.feat")[0] == 2
    assert run(capsys, "eval", "--model", workdir / "run", "--data", tmp_path)[0] == 2


def test_log_level_env(monkeypatch, capsys):
    monkeypatch.setenv("AFM_LOG_LEVEL", "chatty")
    assert run(capsys, "synth-data", "--out", "x")[0] == 1


def test_train_fm_on_shipped_config_is_desk_scale(tmp_path, capsys):
    from pathlib import Path
    toy = Path(__file__).resolve().parents[1] / "configs" / "toy.ini"
    t0 = time.perf_counter()
    assert run(capsys, "synth-data", "--config", toy, "--out", tmp_path / "data")[0] == 0
    code, out, _ = run(capsys, "train", "--mode", "fm", "--config", toy,
                       "--data", tmp_path / "data", "--out", tmp_path / "fm")
    elapsed = time.perf_counter() - t0
    assert code == 0 and len(out.splitlines()) == 8
    assert elapsed < 300, elapsed
