"""Group-fair federated learning simulator (multiplicative weights with L1
regularization versus FedAvg under per-client feature noise)."""
from .config import ExperimentConfig, format_config, parse_config
from .data import (ClientShard, GroupedDataset, Sample, generate_synthetic, inject_gaussian_noise,
                   load_idx, partition, split_holdout)
from .fairness import (ImportanceWeights, LambdaState, ThresholdVerdict, compute_importance,
                       evaluate_threshold, init_lambda, mw_update, normalize_weights)
from .federation import (ClientState, MixtureLikelihoods, RoundRecord, fedavg, local_group_likelihoods,
                         mix_likelihoods, run_experiment, run_round)
from .metrics import FairnessReport, fairness_summary, gradient_correlation, group_tpr, spearman
from .model import (GroupLossVector, ModelParams, fit_group_likelihood, forward, gradient, sgd_epoch,
                    weighted_group_loss)
from .privacy import PrivacyBudget, laplace_noise, privatize_likelihoods

__version__ = "0.1.0"
