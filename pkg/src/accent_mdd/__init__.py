"""Accent-aware hybrid CTC/attention mispronunciation detection and diagnosis."""
from .autodiff import Graph, Tensor, grad_check
from .checkpoint import load as load_checkpoint, save as save_checkpoint
from .config import RunConfig
from .corpus import Utterance, load_split, read_jsonl, write_jsonl
from .ctc import ARPABET_39, PhoneInventory, ctc_loss, ctc_nll
from .mdd_eval import MetricsReport, OutcomeCounts, aggregate, align, score_corpus, score_utterance
from .model import VARIANTS, AccentMDD, ConfigError, ModelConfig, predict_phones
from .synth import SynthSpec, gen_corpus
from .train import evaluate, train

__version__ = "0.1.0"

__all__ = [
    "ARPABET_39", "AccentMDD", "ConfigError", "Graph", "MetricsReport", "ModelConfig", "OutcomeCounts",
    "PhoneInventory", "RunConfig", "SynthSpec", "Tensor", "Utterance", "VARIANTS", "aggregate", "align",
    "ctc_loss", "ctc_nll", "evaluate", "gen_corpus", "grad_check", "load_checkpoint", "load_split",
    "predict_phones", "read_jsonl", "save_checkpoint", "score_corpus", "score_utterance", "train",
    "write_jsonl",
]
