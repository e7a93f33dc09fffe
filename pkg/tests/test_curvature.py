"""Fisher and block-Hessian estimators, landscape probe, error propagation."""

import hashlib

import numpy as np
import pytest

from conftest import random_theta
from pbcert.curvature import (
    all_block_hessians,
    block_hessian,
    diag_fisher,
    error_propagation_check,
    landscape_probe,
)
from pbcert.data import Dataset, synthetic_blobs
from pbcert.nnet import NetSpec, ParamIndex, forward, loss, softmax


def sampled_labels(seed, spec, theta, X):
    """Re-derive the per-sample labels via the content-hashed uniforms."""
    probs = softmax(forward(spec, theta, X).outputs)
    cdf = np.cumsum(probs, axis=1)
    seed_bytes = int(seed).to_bytes(8, "little", signed=True)
    labels = np.empty(X.shape[0], dtype=int)
    for i in range(X.shape[0]):
        digest = hashlib.blake2b(seed_bytes + X[i].tobytes(),
                                 digest_size=8).digest()
        u = int.from_bytes(digest, "little") / 2.0 ** 64
        labels[i] = int((u > cdf[i]).sum())
    return labels


def log_density(spec, theta, x, label):
    logits = forward(spec, theta, x[None, :]).outputs[0]
    shifted = logits - logits.max()
    return float(shifted[label] - np.log(np.exp(shifted).sum()))


class TestDiagFisher:
    def test_matches_finite_difference_oracle(self):
        spec = NetSpec((2, 3, 2))
        theta = random_theta(spec, seed=0)
        X = np.random.default_rng(1).standard_normal((4, 2))
        est = diag_fisher(spec, theta, X, seed=21)
        labels = sampled_labels(21, spec, theta, X)
        h = 1e-5
        oracle = np.zeros(spec.n_params)
        for s in range(X.shape[0]):
            for i in range(spec.n_params):
                up, down = theta.copy(), theta.copy()
                up[i] += h
                down[i] -= h
                g = (log_density(spec, up, X[s], labels[s])
                     - log_density(spec, down, X[s], labels[s])) / (2 * h)
                oracle[i] += g ** 2
        scale = np.maximum(oracle, 1e-8)
        assert np.max(np.abs(est.diag_fisher - oracle) / scale) < 1e-5

    def test_zero_input_kills_first_layer(self):
        spec = NetSpec((3, 2, 2))
        theta = random_theta(spec, seed=2)
        est = diag_fisher(spec, theta, np.zeros((5, 3)), seed=0)
        first = ParamIndex(spec).layer_slice(0)
        assert np.all(est.diag_fisher[first] == 0.0)

    def test_duplication_doubles(self):
        spec = NetSpec((3, 4, 2))
        theta = random_theta(spec, seed=3)
        X = np.random.default_rng(4).standard_normal((6, 3))
        single = diag_fisher(spec, theta, X, seed=9).diag_fisher
        double = diag_fisher(spec, theta, np.vstack([X, X]), seed=9).diag_fisher
        assert np.allclose(double, 2.0 * single, rtol=1e-10)

    def test_permutation_invariant(self):
        spec = NetSpec((3, 4, 2))
        theta = random_theta(spec, seed=5)
        X = np.random.default_rng(6).standard_normal((8, 3))
        base = diag_fisher(spec, theta, X, seed=9).diag_fisher
        perm = np.random.default_rng(7).permutation(8)
        permuted = diag_fisher(spec, theta, X[perm], seed=9).diag_fisher
        assert np.allclose(permuted, base, rtol=1e-10)

    def test_nonnegative_and_floored(self):
        spec = NetSpec((3, 2, 2))
        theta = random_theta(spec, seed=8)
        est = diag_fisher(spec, theta, np.zeros((2, 3)), seed=0)
        assert np.all(est.diag_fisher >= 0)
        assert np.all(est.fisher_floored() >= 1e-12)


class TestBlockHessian:
    def test_basis_inputs_give_identity(self):
        spec = NetSpec((2, 2, 2))
        theta = random_theta(spec, seed=0)
        X = np.array([[1.0, 0.0], [0.0, 1.0]])
        H = block_hessian(spec, theta, X, layer=0)
        assert np.allclose(H, np.eye(2), atol=1e-12)

    def test_zero_activations_give_zero(self):
        spec = NetSpec((2, 2, 2))
        H = block_hessian(spec, random_theta(spec, seed=1),
                          np.zeros((3, 2)), layer=0)
        assert np.all(H == 0.0)

    def test_half_quadratic_equals_exact_layer_error(self):
        spec = NetSpec((4, 3, 2))
        theta = random_theta(spec, seed=2)
        X = np.random.default_rng(3).standard_normal((10, 4))
        rng = np.random.default_rng(4)
        for layer in range(spec.n_layers):
            H = block_hessian(spec, theta, X, layer)
            A = forward(spec, theta, X).activations[layer]
            eta = rng.standard_normal(H.shape[0])
            exact = np.sum((A @ eta) ** 2) / X.shape[0]
            quad = 0.5 * eta @ H @ eta
            assert quad == pytest.approx(exact, rel=1e-8)

    def test_matches_finite_difference_hessian(self):
        spec = NetSpec((3, 3, 2))
        theta = random_theta(spec, seed=5)
        X = np.random.default_rng(6).standard_normal((7, 3))
        layer, neuron = 1, 0
        index = ParamIndex(spec)
        A = forward(spec, theta, X).activations[layer]
        w_star = theta[index.neuron_slice(layer, neuron)]

        def layer_error(w_row):
            return float(np.sum((A @ (w_row - w_star)) ** 2) / X.shape[0])

        H = block_hessian(spec, theta, X, layer)
        h = 1e-4
        k = w_star.shape[0]
        fd = np.empty((k, k))
        for i in range(k):
            for j in range(k):
                pts = []
                for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                    w = w_star.copy()
                    w[i] += si * h
                    w[j] += sj * h
                    pts.append(layer_error(w))
                fd[i, j] = (pts[0] - pts[1] - pts[2] + pts[3]) / (4 * h * h)
        assert np.max(np.abs(fd - H)) < 1e-5

    def test_psd_on_real_data(self, blob_data, trained_net):
        train_ds, _ = blob_data
        spec, record = trained_net
        est = all_block_hessians(spec, record.theta_star, train_ds.X)
        for H, eig in zip(est.block_hessians, est.block_eigs):
            assert eig.eigvals.min() >= -1e-8 * max(eig.eigvals.max(), 1e-30)
            recon = (eig.eigvecs * eig.eigvals) @ eig.eigvecs.T
            assert np.allclose(recon, H, atol=1e-10)
            assert np.all(np.diff(eig.eigvals) <= 1e-12)

    def test_layer_out_of_range(self):
        spec = NetSpec((2, 2, 2))
        with pytest.raises(IndexError):
            block_hessian(spec, random_theta(spec, seed=0),
                          np.zeros((1, 2)), layer=2)


class TestLandscapeProbe:
    def test_t_zero_equals_training_loss(self, blob_data, trained_net):
        train_ds, _ = blob_data
        spec, record = trained_net
        probe = landscape_probe(spec, record.theta_star, train_ds, 3,
                                np.array([-1.0, 0.0, 1.0]), [0.04], seed=1)
        at_zero = loss("categorical",
                       forward(spec, record.theta_star, train_ds.X).outputs,
                       train_ds.y)
        assert np.allclose(probe.losses[:, 1], at_zero, atol=1e-12)

    def test_directions_unit_norm(self, blob_data, trained_net):
        train_ds, _ = blob_data
        spec, record = trained_net
        probe = landscape_probe(spec, record.theta_star, train_ds, 5,
                                np.linspace(-1, 1, 5), [0.04], seed=2)
        norms = np.linalg.norm(probe.directions, axis=1)
        assert np.allclose(norms, 1.0, atol=1e-10)

    def test_quadratic_toy_fits_exactly(self):
        spec = NetSpec((2, 2, 2))
        theta = np.zeros(spec.n_params)
        probe = landscape_probe(
            spec, theta, None, 4, np.linspace(-3, 3, 11), [], seed=3,
            loss_fn=lambda p: float(p @ p))
        assert np.all(probe.fit_r2 >= 1.0 - 1e-10)

    def test_bubble_radius_formula(self):
        spec = NetSpec((2, 2, 2))
        theta = np.zeros(10000)
        probe = landscape_probe(
            spec, theta, None, 1, np.array([-1.0, 0.0, 1.0]), [0.04], seed=4,
            loss_fn=lambda p: float(p @ p))
        assert probe.bubble_radii[0.04] == pytest.approx(20.0, abs=1e-12)


class TestErrorPropagation:
    def _toy(self):
        spec = NetSpec((4, 5, 4, 3))
        theta = random_theta(spec, seed=10)
        data = synthetic_blobs(40, 4, 3, 2.0, seed=10)
        return spec, theta, data

    def test_zero_perturbation_all_zero(self):
        spec, theta, data = self._toy()
        report = error_propagation_check(spec, theta, data, scale=0.0, seed=1)
        trial = report.trials[0]
        assert np.all(trial.act_mse == 0.0)
        assert np.all(trial.accumulated == 0.0)
        assert report.all_ok

    def test_last_layer_only_has_no_propagation(self):
        spec, theta, data = self._toy()
        last = spec.n_layers - 1
        report = error_propagation_check(spec, theta, data, scale=0.5, seed=2,
                                         layers=[last])
        trial = report.trials[0]
        assert np.all(trial.accumulated[:last] == 0.0)
        assert trial.accumulated[last] == pytest.approx(
            np.sqrt(trial.act_mse[last]), rel=1e-12)
        assert report.all_ok

    def test_hundred_random_trials_hold(self):
        spec, theta, data = self._toy()
        report = error_propagation_check(spec, theta, data, scale=1.5, seed=3,
                                         n_trials=100)
        assert len(report.trials) == 100
        assert report.all_ok

    def test_deterministic(self):
        spec, theta, data = self._toy()
        a = error_propagation_check(spec, theta, data, scale=0.7, seed=4)
        b = error_propagation_check(spec, theta, data, scale=0.7, seed=4)
        assert np.array_equal(a.trials[0].accumulated, b.trials[0].accumulated)
