"""Adversarial feature-mapping speech enhancement on a small numpy autodiff engine."""
from .autodiff import Tape, Tensor, backward, grl
from .corpus import Corpus, CorpusConfig, build_corpus, load_corpus
from .errors import AfmError
from .features import FeatureMatrix, Stage, Waveform
from .networks import FfdnnTopology, LstmpTopology, init_params
from .training import (TrainingConfig, decode_posteriors, enhance, train, train_afm, train_fm,
                       train_saafm)

__version__ = "0.1.0"
