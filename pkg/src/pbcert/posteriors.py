"""Posterior construction for every family in the toolkit.

Families:
  iso-zero / iso-init   isotropic posterior N(theta*, lambda I) with the
                        prior centered at zero or at the initialization
  closed-diag           curvature-matched diagonal posterior (valid)
  closed-joint          jointly optimal diagonal posterior AND prior;
                        the prior depends on training data, so results
                        are tagged invalid-prior and serve as a sanity
                        ceiling only
  vi-diag               diagonal posterior optimized by stochastic
                        reparameterized gradients of the bound surrogate
  skfac-block           per-neuron block posterior built from the shared
                        layer activation Hessians

The closed-form solvers take the quadratic-objective weight directly
(the KL multiplier of 1/2 eta' H eta + beta KL).  Certificate assembly
maps the bound's beta to this weight via 1/(beta n), which makes the
quadratic objective the second-order expansion of the bound surrogate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pbcert.curvature import FISHER_FLOOR, CurvatureEstimate
from pbcert.gaussians import BlockGaussian, DiagGaussian, GaussianBlock, kl_diag
from pbcert.nnet import NetSpec, forward, grad as nnet_grad, loss as nnet_loss
from pbcert.rng import rng_for

FAMILIES = ("iso-zero", "iso-init", "closed-diag", "closed-joint",
            "vi-diag", "skfac-block")
DELTA_MU_FLOOR = 1e-16


class DegenerateCoordinateError(ValueError):
    pass


@dataclass(frozen=True)
class PosteriorSpec:
    family: str
    beta: float
    lam: float
    valid_prior: bool = True

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.family == "closed-joint" and self.valid_prior:
            raise ValueError("closed-joint results always carry invalid-prior")


def isotropic_posterior(theta_center: np.ndarray, prior_center: np.ndarray,
                        lam: float):
    """Posterior N(theta_center, lambda I) against prior N(prior_center,
    lambda I); the KL reduces to ||delta mu||^2 / (2 lambda)."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    posterior = DiagGaussian.isotropic(theta_center, lam)
    prior = DiagGaussian.isotropic(prior_center, lam)
    return posterior, prior


def closed_form_posterior(h, beta: float, lam: float, prior_var=None):
    """Curvature-matched covariance: beta * (H + (beta/lambda) Sigma_pi^-1)^-1.

    `h` may be a diagonal curvature vector or a full symmetric matrix;
    `prior_var` defaults to the identity (prior covariance lambda I).
    """
    if beta <= 0 or lam <= 0:
        raise ValueError("beta and lambda must be positive")
    h = np.asarray(h, dtype=np.float64)
    if h.ndim == 1:
        prior_var = np.ones_like(h) if prior_var is None else np.asarray(prior_var)
        if np.any(prior_var <= 0):
            raise ValueError("prior variance must be positive")
        return beta / (h + (beta / lam) / prior_var)
    if h.ndim == 2:
        k = h.shape[0]
        prior_prec = (np.eye(k) if prior_var is None
                      else np.linalg.inv(np.asarray(prior_var)))
        return beta * np.linalg.inv(h + (beta / lam) * prior_prec)
    raise ValueError("h must be a vector or a square matrix")


@dataclass
class JointOptimalResult:
    sigma_rho: np.ndarray       # posterior variances
    sigma_pi: np.ndarray        # prior variance factors (prior cov = lambda * sigma_pi)
    n_floored: int              # coordinates floored before evaluation


def joint_optimal_diag(h, beta: float, lam: float, mu_rho, mu_pi,
                       floor_degenerate: bool = True) -> JointOptimalResult:
    """Jointly optimal diagonal posterior and prior covariances.

    The prior here is fitted to the training data, so results must be
    treated as a sanity ceiling, never as a valid bound.  Coordinates with
    zero curvature or zero mean gap have no finite optimizer (the
    objective diverges at the domain boundary); they are floored at tiny
    epsilons and counted, or rejected when flooring is disabled.
    """
    if beta <= 0 or lam <= 0:
        raise ValueError("beta and lambda must be positive")
    h = np.asarray(h, dtype=np.float64)
    dmu2 = (np.asarray(mu_rho, dtype=np.float64)
            - np.asarray(mu_pi, dtype=np.float64)) ** 2
    degenerate = (h < FISHER_FLOOR) | (dmu2 < DELTA_MU_FLOOR)
    if np.any(degenerate) and not floor_degenerate:
        raise DegenerateCoordinateError(
            f"{int(degenerate.sum())} coordinates have h=0 or delta mu=0"
        )
    h = np.maximum(h, FISHER_FLOOR)
    dmu2 = np.maximum(dmu2, DELTA_MU_FLOOR)
    root = np.sqrt(h * h + 4.0 * beta * h / dmu2)
    sigma_rho = 2.0 * beta / (h + root)
    sigma_pi = 2.0 * beta / (lam * (root - h))
    return JointOptimalResult(sigma_rho=sigma_rho, sigma_pi=sigma_pi,
                              n_floored=int(degenerate.sum()))


def quadratic_objective_diag(h, sigma_rho, beta: float, lam: float,
                             mu_rho, mu_pi, sigma_pi=None) -> float:
    """Developed quadratic objective 1/2 sum(h sigma) + beta KL for
    diagonal posterior and prior N(mu_pi, lambda sigma_pi)."""
    h = np.asarray(h, dtype=np.float64)
    sigma_rho = np.asarray(sigma_rho, dtype=np.float64)
    sigma_pi = np.ones_like(h) if sigma_pi is None else np.asarray(sigma_pi)
    q = DiagGaussian.from_variance(mu_rho, sigma_rho)
    p = DiagGaussian.from_variance(mu_pi, lam * sigma_pi)
    return float(0.5 * np.sum(h * sigma_rho) + beta * kl_diag(q, p))


def quadratic_objective_block(hessians, block_covs, neuron_counts,
                              beta: float, lam: float, mu_rho, mu_pi) -> float:
    """Blockwise quadratic objective against an isotropic prior.

    sum over (layer, neuron) of 1/2 tr(H_i Sigma_i) + beta KL(block || N(., lambda I)).
    """
    mu_rho = np.asarray(mu_rho, dtype=np.float64)
    mu_pi = np.asarray(mu_pi, dtype=np.float64)
    total = 0.0
    offset = 0
    for H, cov, count in zip(hessians, block_covs, neuron_counts):
        k = H.shape[0]
        sign, logdet = np.linalg.slogdet(cov)
        if sign <= 0:
            raise ValueError("block covariance must be PD")
        quad = 0.5 * float(np.trace(H @ cov))
        kl_const = 0.5 * (float(np.trace(cov)) / lam - k
                          + k * np.log(lam) - logdet)
        for _ in range(count):
            dmu = mu_rho[offset:offset + k] - mu_pi[offset:offset + k]
            total += quad + beta * (kl_const + 0.5 * float(dmu @ dmu) / lam)
            offset += k
    return total


@dataclass
class VIResult:
    posterior: DiagGaussian
    surrogate_value: float
    surrogate_trace: list


def _surrogate_kl(sigma, lam, dmu2):
    return 0.5 * float(np.sum(sigma / lam + dmu2 / lam - 1.0
                              + np.log(lam) - np.log(sigma)))


def vi_optimize_log_sigma(grad_fn, theta_star: np.ndarray, lam: float,
                          kl_weight: float, epochs: int,
                          steps_per_epoch: int, seed: int, lr: float = 0.1,
                          lr_decay: float = 0.0,
                          average_tail: float = 0.0) -> np.ndarray:
    """Reparameterized Adam on posterior log-variances, mean held fixed.

    `grad_fn(theta, epoch, step)` returns the loss gradient at a sampled
    theta.  The analytic KL gradient against the isotropic prior is added
    with weight `kl_weight`.  The step size follows lr / (1 + lr_decay * t);
    `average_tail` in (0, 1] returns the iterate average over that trailing
    fraction of steps, damping the single-draw gradient noise.  Returns the
    optimized log-variances.
    """
    d = theta_star.shape[0]
    log_sigma = np.full(d, np.log(lam))
    m1 = np.zeros(d)
    m2 = np.zeros(d)
    b1, b2, eps = 0.9, 0.999, 1e-8
    t = 0
    total = epochs * steps_per_epoch
    tail_sum = np.zeros(d)
    tail_count = 0
    noise_rng = rng_for(seed, "vi-noise")
    for epoch in range(epochs):
        for step in range(steps_per_epoch):
            sigma = np.exp(log_sigma)
            z = noise_rng.standard_normal(d)
            theta = theta_star + np.sqrt(sigma) * z
            g_theta = grad_fn(theta, epoch, step)
            if not np.all(np.isfinite(g_theta)):
                raise FloatingPointError("VI gradient diverged")
            g_log_sigma = g_theta * z * 0.5 * np.sqrt(sigma)
            g_log_sigma += kl_weight * 0.5 * (sigma / lam - 1.0)
            t += 1
            m1 = b1 * m1 + (1 - b1) * g_log_sigma
            m2 = b2 * m2 + (1 - b2) * g_log_sigma ** 2
            step_size = lr / (1.0 + lr_decay * t)
            log_sigma -= step_size * (m1 / (1 - b1 ** t)) / (
                np.sqrt(m2 / (1 - b2 ** t)) + eps)
            if t > (1.0 - average_tail) * total:
                tail_sum += log_sigma
                tail_count += 1
    if tail_count:
        return tail_sum / tail_count
    return log_sigma


def vi_optimize_diag(spec: NetSpec, theta_star: np.ndarray,
                     theta0: np.ndarray, data, beta: float, lam: float,
                     epochs: int, seed: int, *, loss_kind: str = "categorical",
                     batch_size: int = 100, lr: float = 0.1,
                     delta: float = 0.025) -> VIResult:
    """Optimize diagonal posterior variances by reparameterized SGD on the
    bound surrogate E[loss] + (KL + ln(1/delta)) / (beta n).

    The posterior mean stays fixed at theta_star; only log-variances move.
    One shared noise draw per mini-batch (plain reparameterization).
    Deterministic given the seed.
    """
    if lam <= 0 or beta <= 0:
        raise ValueError("beta and lambda must be positive")
    X, y = np.asarray(data.X, dtype=np.float64), np.asarray(data.y)
    n = X.shape[0]
    d = theta_star.shape[0]
    dmu2 = (theta_star - theta0) ** 2
    kl_weight = 1.0 / (beta * n)
    shuffle_rng = rng_for(seed, "vi-shuffle")
    batches = []
    steps_per_epoch = (n + batch_size - 1) // batch_size
    for _ in range(epochs):
        order = shuffle_rng.permutation(n)
        batches.append([order[s:s + batch_size]
                        for s in range(0, n, batch_size)])

    def grad_fn(theta, epoch, step):
        idx = batches[epoch][step]
        return nnet_grad(spec, theta, X[idx], y[idx], loss_kind)

    log_sigma = vi_optimize_log_sigma(grad_fn, theta_star, lam, kl_weight,
                                      epochs, steps_per_epoch, seed, lr)
    sigma = np.exp(log_sigma)
    trace = [_surrogate_kl(sigma, lam, dmu2)]
    posterior = DiagGaussian(theta_star, log_sigma)
    # MC estimate of the achieved surrogate with a fixed evaluation draw
    eval_rng = rng_for(seed, "vi-eval")
    theta_eval = theta_star + np.sqrt(sigma) * eval_rng.standard_normal(d)
    value = (nnet_loss(loss_kind, forward(spec, theta_eval, X).outputs, y)
             + kl_weight * (_surrogate_kl(sigma, lam, dmu2) + np.log(1.0 / delta)))
    return VIResult(posterior=posterior, surrogate_value=float(value),
                    surrogate_trace=trace)


def skfac_posterior(spec: NetSpec, theta_star: np.ndarray,
                    curvature: CurvatureEstimate, beta: float,
                    lam: float) -> BlockGaussian:
    """Per-neuron block posterior from shared layer Hessians.

    Each block covariance is beta * (H_i + (beta/lambda) I)^-1, assembled
    from the cached eigendecomposition so sweeping lambda costs one
    diagonal rescale per layer rather than a fresh inversion.
    """
    if curvature.block_hessians is None:
        raise ValueError("curvature estimate lacks block Hessians")
    blocks = []
    for layer, eig in enumerate(curvature.block_eigs):
        scaled = beta / (eig.eigvals + beta / lam)
        cov = (eig.eigvecs * scaled) @ eig.eigvecs.T
        cov = 0.5 * (cov + cov.T)
        rows, _ = spec.layer_shapes[layer]
        blocks.append(GaussianBlock(layer=layer, neuron_count=rows, cov=cov))
    return BlockGaussian(mean=theta_star, blocks=tuple(blocks))
