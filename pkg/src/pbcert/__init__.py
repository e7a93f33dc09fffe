"""PAC-Bayes generalization certificates for small feedforward classifiers.

The package builds valid high-probability upper bounds on the expected
zero-one risk of randomized classifiers.  Posterior families range from
isotropic Gaussians through diagonal (mean-field) posteriors, closed-form
curvature-matched posteriors, up to per-neuron block posteriors.
Certificates over a (beta, lambda) grid are summarised as Risk-Complexity
Pareto fronts.
"""

from pbcert.gaussians import (
    BlockGaussian,
    DiagGaussian,
    PenaltyTerms,
    catoni_inv,
    chernoff_gap,
    kl_block,
    kl_diag,
    sample_gaussian,
    union_bound_nats,
)
from pbcert.rng import child_seed, rng_for

__all__ = [
    "BlockGaussian",
    "DiagGaussian",
    "PenaltyTerms",
    "catoni_inv",
    "chernoff_gap",
    "child_seed",
    "kl_block",
    "kl_diag",
    "rng_for",
    "sample_gaussian",
    "union_bound_nats",
]
