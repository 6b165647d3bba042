"""Source-free unsupervised domain adaptation with reliable-sample prototypes,
multi-view contrastive pseudo-labelling and adaptive noisy-label filtering."""
from .data import Dataset, ShiftSpec, apply_shift, gen_blobs, load_dataset, save_dataset, shifted_blobs
from .errors import (EmptyInput, EmptyIteration, FrozenModel, InvalidInput, NoPrototypes,
                     ParseError, SfudaError, ZeroNorm)
from .model import ModelParams, forward, load_model, predict_with_entropy, pretrain_source, save_model
from .pipeline import AdaptConfig, Evaluator, ablation_grid, accuracy, adapt, emit_metrics

__version__ = "0.1.0"
