"""Aligned visual attention for paired answer/rationale multiple choice.

A small reverse-mode autodiff core on numpy carries two models (a recurrent
re-attention model and a single-stream transformer) whose answering and
rationale processes can be trained to agree on where they look.
"""

from .align import (AlignConfig, RankVector, alignment_losses, approx_ranks, hard_ranks,
                    layerwise_similarity, ndcg, sim_dot, sim_rank, similarity, total_loss)
from .attention import ReAttentionParams, aggregate, object_wise_attention, token_wise_attention
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import (ConfigError, ContractError, DataError, DimensionError, DomainError,
                     NumericError, ParseError)
from .harness import (EpochRecord, TrainConfig, TrainReport, evaluate, lambda_sweep,
                      similarity_histogram, train)
from .numerics import Tensor, backward, finite_diff_check, no_grad
from .optim import AdamState, adam_step
from .synth import GenConfig, Instance, generate, oracle_predict, read_dataset, write_dataset
from .training import gist_loss, training_step
from .transformer import TransformerConfig, TransformerModel
from .vanilla import VanillaConfig, VanillaModel

__version__ = "0.1.0"
