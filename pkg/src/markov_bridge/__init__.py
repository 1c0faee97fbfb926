"""Learnable rate matrices and score-based reversal for continuous-time
Markov chains over finite state spaces."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, load_config, parse_config_text
from .core import (
    FactorizedRateMatrix,
    NoiseSchedule,
    ProbVector,
    ProductDistribution,
    evolve,
    kernel_rows,
    kl_divergence,
    materialize_dense,
    reverse_rate_row,
    transition_kernel,
)
from .data import Dataset, load_dataset, synthetic_ground_truth
from .errors import (
    BridgeError,
    CheckpointError,
    ConfigError,
    DegeneratePrefixError,
    DegenerateStateError,
    DivergenceError,
    UnsolvableSupportError,
    VocabularyOverflowError,
)
from .evaluation import ElboReport, elbo_estimate, kl_term
from .matrix_learning import (
    MatrixLearnState,
    init_rate_matrices,
    jq_grad,
    jq_loss,
    matrix_learning_loop,
    predict_terminal,
)
from .sampler import SamplerConfig, estimate_mu, euler_reverse_step, generate, tv_distance
from .score_learning import (
    OptimizerConfig,
    ScoreBatch,
    ScoreModel,
    exact_score_oracle,
    make_score_batch,
    oracle_ratio_fn,
    sample_xt_given_x0,
    score_entropy_loss,
    score_forward,
    score_grad,
    score_learning_loop,
)
from .solver import (
    SortedPair,
    estimate_marginals,
    exact_rate_matrix,
    permutation_from_data,
    sort_permutation,
)
from .training import train

__version__ = "0.1.0"
