"""Desk-scale laboratory for likelihood-based continuous diffusion language
models on exactly solvable categorical distributions.

Everything is built around small enumerable instances where the
Bayes-optimal denoiser, the optimal noise schedule, information curves, and
ODE likelihoods can all be computed exactly or cross-checked by quadrature.
"""

from .core import (CollapseError, DataDistribution, EmbeddingTable, Instance,
                   LinearShape, MonotoneParametricShape, NoiseSchedule,
                   TabulatedShape, Vocabulary, data_entropy, make_embedding_table,
                   make_instance, schedule_eval, tiny_instance, total_correlation)
from .losses import nelbo_estimate, per_timestep_ce, per_timestep_diffusion_loss, perplexity
from .noising import posterior_params, sample_forward, snr_gap
from .odelik import (DivergenceConfig, divergence_exact, divergence_hutchinson,
                     integrate_logweight, iwae_estimate, make_toy_selfcond_denoiser,
                     selfcond_divergence, velocity_gamma, velocity_t)
from .oracle import BayesDenoiser, Denoiser, bayes_denoiser, joint_posterior, mmse
from .rng import stream
from .samplers import SamplerConfig, run_sampler
from .schedule import compute_optimum, learn_schedule, loss_curve, weight_w
from .trainer import ToyDenoiser, TrainConfig, adaptive_split, output_prior_logits, train_loop

__version__ = "0.1.0"

__all__ = [
    "BayesDenoiser", "CollapseError", "DataDistribution", "Denoiser",
    "DivergenceConfig", "EmbeddingTable", "Instance", "LinearShape",
    "MonotoneParametricShape", "NoiseSchedule", "SamplerConfig",
    "TabulatedShape", "ToyDenoiser", "TrainConfig", "Vocabulary",
    "adaptive_split", "bayes_denoiser", "compute_optimum", "data_entropy",
    "divergence_exact", "divergence_hutchinson", "integrate_logweight",
    "iwae_estimate", "joint_posterior", "learn_schedule", "loss_curve",
    "make_embedding_table", "make_instance", "make_toy_selfcond_denoiser",
    "mmse", "nelbo_estimate", "output_prior_logits", "per_timestep_ce",
    "per_timestep_diffusion_loss", "perplexity", "posterior_params",
    "run_sampler", "sample_forward", "schedule_eval", "selfcond_divergence",
    "snr_gap", "stream", "tiny_instance", "total_correlation", "train_loop",
    "velocity_gamma", "velocity_t", "weight_w",
]
