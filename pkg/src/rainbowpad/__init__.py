"""Desk-scale masked-diffusion language-model lab.

Trains tiny bidirectional denoisers on synthetic instruction tasks, reproduces
the eos-overflow failure of eos-padded instruction tuning, and shows that a
single terminator plus a cyclic pad palette (rainbow padding) removes it.
"""

from .vocab import Vocab, VocabError, build_vocab, encode, decode as decode_ids
from .padding import PaddedExample, Scheme, LayoutError, layout, res_length
from .masking import MaskSpec, MaskingError, sample_mask, apply_mask, masked_ce_loss
from .denoiser import Denoiser, DenoiserConfig, DenoiserError, forward, backward
from .trainer import TrainConfig, TrainLog, AdamW, train, eval_loss
from .decoder import (DecodePolicy, DecodeTrace, Strategy, DecodeError,
                      score_positions, decode, decode_batch, cascade_probe)
from .metrics import (OverflowReport, eos_first50_ratio,
                      initial_confidence_profile, decode_order_map)
from .tasks import TaskInstance, TaskKind, generate_corpus, check, task_vocab
from .harness import ExperimentConfig, VariantSpec, run_experiment

__all__ = [
    "Vocab", "VocabError", "build_vocab", "encode", "decode_ids",
    "PaddedExample", "Scheme", "LayoutError", "layout", "res_length",
    "MaskSpec", "MaskingError", "sample_mask", "apply_mask", "masked_ce_loss",
    "Denoiser", "DenoiserConfig", "DenoiserError", "forward", "backward",
    "TrainConfig", "TrainLog", "AdamW", "train", "eval_loss",
    "DecodePolicy", "DecodeTrace", "Strategy", "DecodeError",
    "score_positions", "decode", "decode_batch", "cascade_probe",
    "OverflowReport", "eos_first50_ratio", "initial_confidence_profile",
    "decode_order_map",
    "TaskInstance", "TaskKind", "generate_corpus", "check", "task_vocab",
    "ExperimentConfig", "VariantSpec", "run_experiment",
]
