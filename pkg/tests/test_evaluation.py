import numpy as np
import pytest

from afm.autodiff import Tensor
from afm.corpus import CorpusConfig, build_corpus
from afm.errors import DataError, ShapeError, StageError
from afm.evaluation import (EvalReport, discriminator_accuracy, distribution_distance,
                            eval_discriminator, eval_enhancement, eval_features,
                            eval_frame_accuracy, frame_accuracy, frame_mse)
from afm.features import FeatureMatrix, Stage
from afm.losses import parse_record
from afm.networks import FfdnnTopology, LstmpTopology, NetworkParams, init_params


def test_identity_mse_zero(rng):
    y = rng.normal(size=(10, 29))
    assert frame_mse(y, y) == 0.0
    assert distribution_distance(y, y) == 0.0


def test_frame_mse_hand_value():
    assert frame_mse([[1.0, 1.0], [0.0, 2.0]], [[0.0, 0.0], [0.0, 0.0]]) == 3.0
    with pytest.raises(ShapeError):
        frame_mse(np.zeros((2, 3)), np.zeros((2, 4)))


def test_distribution_distance_hand_value():
    a = np.array([[0.0], [2.0]])   # mean 1, var 1
    b = np.array([[0.0], [0.0]])   # mean 0, var 0
    assert distribution_distance(a, b) == 2.0


def test_constant_half_discriminator_is_chance():
    assert discriminator_accuracy(np.full(50, 0.5), np.full(50, 0.5)) == 0.5
    assert discriminator_accuracy([0.9, 0.8], [0.1, 0.2]) == 1.0


def test_frame_accuracy_cases(rng):
    labels = rng.integers(0, 4, size=400)
    assert frame_accuracy(np.eye(4)[labels], labels) == 1.0
    # uniform posteriors: argmax picks class 0, so balanced labels give ~1/4
    balanced = np.repeat(np.arange(4), 100)
    assert frame_accuracy(np.full((400, 4), 0.25), balanced) == pytest.approx(0.25)


def test_report_lines_are_key_value():
    r = EvalReport(per_utterance=[{"id": "u1", "frames": 3, "mse_enhanced": 1.5}],
                   mse_enhanced=1.5, frames=3)
    lines = r.lines(per_utterance=True)
    assert lines[0].startswith("utt ") and lines[-1].startswith("corpus ")
    rec = parse_record(lines[-1].split(" ", 1)[1])
    assert rec == {"frames": 3, "mse_enhanced": 1.5}


@pytest.fixture(scope="module")
def corpus():
    return build_corpus(CorpusConfig(n_utts=10, seed=1, num_phones=4, max_duration=0.6))


def test_corpus_values_are_frame_weighted(corpus):
    f = init_params(LstmpTopology(87, 1, 6, 3, 29), 0, dtype=np.float32)
    r = eval_enhancement(f, corpus)
    frames = sum(p["frames"] for p in r.per_utterance)
    assert r.frames == frames
    for key in ("mse_enhanced", "mse_noisy"):
        weighted = sum(p["frames"] * p[key] for p in r.per_utterance) / frames
        assert getattr(r, key) == pytest.approx(weighted, rel=1e-12)
    again = eval_enhancement(f, corpus)
    assert again.lines(per_utterance=True) == r.lines(per_utterance=True)


def test_eval_features_stage_mismatch():
    a = FeatureMatrix(np.zeros((3, 29)), Stage.NORMALIZED)
    b = FeatureMatrix(np.zeros((3, 29)), Stage.STATIC)
    with pytest.raises(StageError):
        eval_features(a, b)
    assert eval_features(a, a).mse_enhanced == 0.0


def test_half_discriminator_on_corpus(corpus):
    f = init_params(LstmpTopology(87, 1, 6, 3, 29), 0, dtype=np.float32)
    top = FfdnnTopology(29, 1, 4, 1, "sigmoid")
    zero = NetworkParams(top, {k: Tensor(np.zeros(s, np.float32)) for k, s in top.shapes().items()})
    assert eval_discriminator(zero, f, corpus) == 0.5


def test_frame_accuracy_in_range_and_needs_labels(corpus):
    m = init_params(FfdnnTopology(29, 1, 8, 4, "softmax"), 0, dtype=np.float32)
    acc = eval_frame_accuracy(None, m, corpus)
    assert 0.0 <= acc <= 1.0
    from dataclasses import replace
    from afm.corpus import Corpus
    bare = Corpus([replace(u, labels=None) for u in corpus.utterances],
                  corpus.noisy_stats, corpus.clean_stats)
    with pytest.raises(DataError):
        eval_frame_accuracy(None, m, bare)
