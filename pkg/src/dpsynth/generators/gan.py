"""Conditional Wasserstein GAN with a DP-SGD critic."""
from __future__ import annotations

import json
import logging
import math

import numpy as np
from sklearn.utils.validation import check_is_fitted

from ..dataset import Standardizer
from ..exceptions import NonFiniteLoss
from ..nn import DpSgdConfig, Mlp, RmsProp, clip_factors, privatize, sample_batch
from .base import SyntheticGenerator, as_rng, sample_labels
from .vae import one_hot, private_training_setup

logger = logging.getLogger(__name__)

MODEL_VERSION = 1


def clip_weights(net: Mlp, c: float) -> None:
    for k in range(len(net.weights)):
        np.clip(net.weights[k], -c, c, out=net.weights[k])
        np.clip(net.biases[k], -c, c, out=net.biases[k])


class DPCWGAN(SyntheticGenerator):
    """Conditional WGAN with weight clipping.

    Only the critic touches real rows, so only critic updates go through
    DP-SGD (and the accountant); the generator is private by
    post-processing. ``steps`` counts critic updates.

    With ``optimizer="rmsprop"`` both networks step with RMSProp, as the
    weight-clipped critic's gradients are tiny in absolute terms; the
    critic's input to RMSProp is already the clipped, noised gradient.
    """

    def __init__(
        self,
        epsilon=math.inf,
        delta=1e-5,
        latent_dim=32,
        hidden=(256, 256),
        weight_clip=0.01,
        n_critic=5,
        clip_norm=1.0,
        batch_size=64,
        critic_lr=1e-3,
        generator_lr=1e-3,
        optimizer="rmsprop",
        steps=2000,
        n_classes=None,
        random_state=None,
    ):
        self.epsilon = epsilon
        self.delta = delta
        self.latent_dim = latent_dim
        self.hidden = hidden
        self.weight_clip = weight_clip
        self.n_critic = n_critic
        self.clip_norm = clip_norm
        self.batch_size = batch_size
        self.critic_lr = critic_lr
        self.generator_lr = generator_lr
        self.optimizer = optimizer
        self.steps = steps
        self.n_classes = n_classes
        self.random_state = random_state

    def _stepper(self, lr):
        if self.optimizer == "rmsprop":
            return RmsProp(lr).step
        if self.optimizer == "sgd":
            return lambda net, grads: net.apply_update(grads, lr)
        raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def critic_step(self, D, G, x_real, y_real, rng, config, private, step_fn=None):
        """One critic update; returns the batch critic gap mean D(real) - mean D(fake)."""
        m = x_real.shape[0]
        Y = one_hot(y_real, self.n_classes_)
        z = rng.standard_normal((m, self.latent_dim))
        x_fake = G.forward(np.hstack([z, Y]))
        inp = np.vstack([np.hstack([x_real, Y]), np.hstack([x_fake, Y])])
        out, cache = D.forward(inp, return_cache=True)
        gap = float(out[:m].mean() - out[m:].mean())
        # per-example loss pairs fake_i with real_i: D(fake_i) - D(real_i)
        up = np.vstack([-np.ones((m, 1)), np.ones((m, 1))])
        deltas, _ = D.backward(cache, up)
        if private:
            scale = clip_factors(self._pair_sq_norms(cache, deltas, m), config.clip_norm)
            scale = np.concatenate([scale, scale])
            grads = privatize(D.grads_from_deltas(cache, deltas, scale), config, rng)
        else:
            grads = [g / m for g in D.grads_from_deltas(cache, deltas)]
        if step_fn is None:
            D.apply_update(grads, config.learning_rate)
        else:
            step_fn(D, grads)
        clip_weights(D, self.weight_clip)
        return gap

    @staticmethod
    def _pair_sq_norms(cache, deltas, m):
        """Squared norm of grad[D(fake_i) - D(real_i)] for each pair i."""
        inputs = cache[0]
        total = np.zeros(m)
        for a, delta in zip(inputs, deltas):
            ar, af = a[:m], a[m:]
            dr, df = delta[:m], delta[m:]
            # |ar dr^T + af df^T|_F^2 expanded
            w = (
                np.einsum("ij,ij->i", ar, ar) * np.einsum("ij,ij->i", dr, dr)
                + np.einsum("ij,ij->i", af, af) * np.einsum("ij,ij->i", df, df)
                + 2.0 * np.einsum("ij,ij->i", ar, af) * np.einsum("ij,ij->i", dr, df)
            )
            b = np.sum((dr + df) ** 2, axis=1)
            total += w + b
        return total

    def generator_step(self, D, G, y, rng, lr, step_fn=None):
        m = y.size
        Y = one_hot(y, self.n_classes_)
        z = rng.standard_normal((m, self.latent_dim))
        x_fake, g_cache = G.forward(np.hstack([z, Y]), return_cache=True)
        out, d_cache = D.forward(np.hstack([x_fake, Y]), return_cache=True)
        # minimize -mean D(G(z, y), y)
        _, g_in = D.backward(d_cache, -np.ones_like(out) / m)
        g_deltas, _ = G.backward(g_cache, g_in[:, : x_fake.shape[1]])
        grads = G.grads_from_deltas(g_cache, g_deltas)
        if step_fn is None:
            G.apply_update(grads, lr)
        else:
            step_fn(G, grads)
        return grads

    def fit(self, X, y):
        X, y = self._validate(X, y)
        rng = as_rng(self.random_state)
        self.scaler_ = Standardizer().fit(X)
        Xs = self.scaler_.transform(X)
        n, d = Xs.shape
        C = self.n_classes_

        sigma, acc, eps_spent = private_training_setup(n, self.batch_size, self.steps, self.epsilon, self.delta)
        private = math.isfinite(self.epsilon)
        self.noise_multiplier_ = sigma
        self.accountant_ = acc
        self.epsilon_spent_ = eps_spent
        config = DpSgdConfig(self.clip_norm, sigma, min(self.batch_size, n), self.critic_lr, self.steps)

        G = Mlp.init([self.latent_dim + C, *self.hidden, d], rng)
        D = Mlp.init([d + C, *self.hidden, 1], rng)
        clip_weights(D, self.weight_clip)
        d_step, g_step = self._stepper(self.critic_lr), self._stepper(self.generator_lr)
        gaps = []
        for step in range(self.steps):
            idx = sample_batch(n, self.batch_size, rng)
            gap = self.critic_step(D, G, Xs[idx], y[idx], rng, config, private, d_step)
            if not math.isfinite(gap):
                raise NonFiniteLoss(f"critic output became {gap} at step {step}")
            gaps.append(gap)
            if (step + 1) % self.n_critic == 0:
                y_fake = sample_labels(self.class_probs_, min(self.batch_size, n), rng)
                self.generator_step(D, G, y_fake, rng, self.generator_lr, g_step)
        self.generator_ = G
        self.critic_ = D
        self.history_ = np.asarray(gaps)
        return self

    def sample(self, n, random_state=None, class_probs=None):
        check_is_fitted(self, "generator_")
        rng = as_rng(random_state)
        probs = self.class_probs_ if class_probs is None else class_probs
        y = sample_labels(probs, n, rng)
        z = rng.standard_normal((n, self.latent_dim))
        out = self.generator_.forward(np.hstack([z, one_hot(y, self.n_classes_)]))
        return self.scaler_.inverse_transform(out), y

    def to_dict(self) -> dict:
        check_is_fitted(self, "generator_")
        return {
            "version": MODEL_VERSION,
            "kind": "gan",
            "generator": self.generator_.to_dict(),
            "critic": self.critic_.to_dict(),
            "latent_dim": self.latent_dim,
            "weight_clip": self.weight_clip,
            "class_probs": self.class_probs_.tolist(),
            "scaler": {"means": self.scaler_.means_.tolist(), "stds": self.scaler_.stds_.tolist()},
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)
