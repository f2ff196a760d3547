"""Bayesian classification trees with sequential MCMC, a parallel SMC sampler
(SUMD) and data-partitioned MCMC."""

from .core import (Dataset, DegenerateDatasetError, Hyperparams, InvalidTreeError, Leaf, Split,
                   Tree, TreeStats, descend, tree_stats, validate)
from .model import (Partition, fit_leaves, log_joint, log_likelihood, log_param_prior,
                    log_tree_prior, partitioned_log_likelihood)
from .moves import MoveKind, Proposal, propose, transition_log_prob, valid_moves
from .samplers import (ChainState, CollapsedParticlesError, ParticleSet, PosteriorSample,
                       acceptance_log_ratio, mcmc_step, multinomial_resample, normalize_weights,
                       run_mcmc, run_sumd)

__version__ = "0.1.0"
