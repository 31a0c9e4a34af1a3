"""Conditional VAE trained with DP-SGD."""
from __future__ import annotations

import json
import logging
import math

import numpy as np
from sklearn.utils.validation import check_is_fitted

from ..dataset import Standardizer
from ..exceptions import NonFiniteLoss
from ..nn import DpSgdConfig, Mlp, clip_factors, privatize, sample_batch
from ..privacy import AccountantState, calibrate_noise_multiplier, rdp_subsampled_gaussian, rdp_to_eps
from .base import SyntheticGenerator, as_rng, sample_labels

logger = logging.getLogger(__name__)

MODEL_VERSION = 1


def one_hot(y, n_classes: int) -> np.ndarray:
    out = np.zeros((len(y), n_classes))
    out[np.arange(len(y)), y] = 1.0
    return out


def kl_standard_normal(mu, logvar) -> np.ndarray:
    """Per-example KL(N(mu, diag e^logvar) || N(0, I))."""
    return 0.5 * np.sum(mu * mu + np.exp(logvar) - 1.0 - logvar, axis=1)


class CvaeCore:
    """Encoder/decoder pair with an analytic per-example loss gradient."""

    def __init__(self, encoder: Mlp, decoder: Mlp, latent_dim: int, n_classes: int, recon_weight: float):
        self.encoder = encoder
        self.decoder = decoder
        self.latent_dim = latent_dim
        self.n_classes = n_classes
        self.recon_weight = recon_weight

    @classmethod
    def init(cls, d, n_classes, latent_dim, hidden, recon_weight, rng):
        enc = Mlp.init([d + n_classes, *hidden, 2 * latent_dim], rng)
        dec = Mlp.init([latent_dim + n_classes, *hidden, d], rng)
        return cls(enc, dec, latent_dim, n_classes, recon_weight)

    def loss_and_grads(self, x, y_onehot, eta):
        """Per-example losses plus what is needed for (clipped) gradients.

        ``eta`` is the standard normal draw used in the reparameterization.
        Returns ``(losses, parts)`` where ``parts`` pairs each network with
        its forward cache and per-layer deltas.
        """
        L = self.latent_dim
        h, enc_cache = self.encoder.forward(np.hstack([x, y_onehot]), return_cache=True)
        mu, logvar = h[:, :L], h[:, L:]
        std = np.exp(0.5 * logvar)
        z = mu + std * eta
        xhat, dec_cache = self.decoder.forward(np.hstack([z, y_onehot]), return_cache=True)
        d = x.shape[1]
        resid = xhat - x
        recon = self.recon_weight * np.mean(resid * resid, axis=1)
        kl = kl_standard_normal(mu, logvar)
        losses = recon + kl

        g_xhat = self.recon_weight * 2.0 * resid / d
        dec_deltas, g_in = self.decoder.backward(dec_cache, g_xhat)
        g_z = g_in[:, :L]
        g_mu = g_z + mu
        g_logvar = g_z * eta * 0.5 * std + 0.5 * (np.exp(logvar) - 1.0)
        enc_deltas, _ = self.encoder.backward(enc_cache, np.hstack([g_mu, g_logvar]))
        parts = [(self.encoder, enc_cache, enc_deltas), (self.decoder, dec_cache, dec_deltas)]
        return losses, {"recon": recon, "kl": kl, "parts": parts}

    def flat_params(self):
        return np.concatenate([self.encoder.get_flat(), self.decoder.get_flat()])

    def set_flat_params(self, flat):
        k = self.encoder.n_params
        self.encoder.set_flat(flat[:k])
        self.decoder.set_flat(flat[k:])

    def per_example_grads(self, parts) -> np.ndarray:
        return np.hstack([net.per_example_grads(cache, deltas) for net, cache, deltas in parts])

    def decode(self, z, y_onehot):
        return self.decoder.forward(np.hstack([z, y_onehot]))


def dp_update(parts, config: DpSgdConfig, rng, clip: bool = True):
    """Clip per-example gradients jointly across ``parts``, noise, and step."""
    batch = parts[0][1][0][0].shape[0]
    if clip:
        sq = sum(net.per_example_sq_norms(cache, deltas) for net, cache, deltas in parts)
        scale = clip_factors(sq, config.clip_norm)
    else:
        scale = None
    for net, cache, deltas in parts:
        sums = net.grads_from_deltas(cache, deltas, scale)
        if clip:
            grads = privatize(sums, config, rng)
        else:
            grads = [g / batch for g in sums]
        net.apply_update(grads, config.learning_rate)


def private_training_setup(n, batch_size, steps, epsilon, delta):
    """Noise multiplier and accountant for ``steps`` DP-SGD iterations."""
    q = min(batch_size, n) / n
    if math.isinf(epsilon):
        return 0.0, AccountantState(), math.inf
    sigma = calibrate_noise_multiplier(q, steps, epsilon, delta)
    acc = rdp_subsampled_gaussian(q, sigma, steps)
    return sigma, acc, rdp_to_eps(acc, delta)[0]


class DPCVAE(SyntheticGenerator):
    """Conditional VAE with Gaussian prior; DP-SGD on encoder and decoder.

    At ``epsilon = inf`` training is plain mini-batch SGD without clipping.
    """

    def __init__(
        self,
        epsilon=math.inf,
        delta=1e-5,
        latent_dim=32,
        hidden=(256, 256),
        recon_weight=10.0,
        clip_norm=2.0,
        batch_size=64,
        learning_rate=0.05,
        steps=2000,
        n_classes=None,
        random_state=None,
    ):
        self.epsilon = epsilon
        self.delta = delta
        self.latent_dim = latent_dim
        self.hidden = hidden
        self.recon_weight = recon_weight
        self.clip_norm = clip_norm
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.steps = steps
        self.n_classes = n_classes
        self.random_state = random_state

    def fit(self, X, y):
        X, y = self._validate(X, y)
        rng = as_rng(self.random_state)
        self.scaler_ = Standardizer().fit(X)
        Xs = self.scaler_.transform(X)
        n, d = Xs.shape
        Y = one_hot(y, self.n_classes_)

        sigma, acc, eps_spent = private_training_setup(n, self.batch_size, self.steps, self.epsilon, self.delta)
        private = math.isfinite(self.epsilon)
        self.noise_multiplier_ = sigma
        self.accountant_ = acc
        self.epsilon_spent_ = eps_spent
        config = DpSgdConfig(self.clip_norm, sigma, min(self.batch_size, n), self.learning_rate, self.steps)

        core = CvaeCore.init(d, self.n_classes_, self.latent_dim, tuple(self.hidden), self.recon_weight, rng)
        history = []
        for step in range(self.steps):
            idx = sample_batch(n, self.batch_size, rng)
            eta = rng.standard_normal((idx.size, self.latent_dim))
            losses, aux = core.loss_and_grads(Xs[idx], Y[idx], eta)
            mean_loss = float(losses.mean())
            if not math.isfinite(mean_loss):
                raise NonFiniteLoss(f"loss became {mean_loss} at step {step}")
            history.append((mean_loss, float(aux["recon"].mean()), float(aux["kl"].mean())))
            dp_update(aux["parts"], config, rng, clip=private)
        self.core_ = core
        self.history_ = np.asarray(history)
        return self

    def loss(self, X, y, random_state=None):
        """Per-example losses and flattened per-example gradients on (X, y)."""
        check_is_fitted(self, "core_")
        rng = as_rng(random_state)
        Xs = self.scaler_.transform(X)
        eta = rng.standard_normal((Xs.shape[0], self.latent_dim))
        losses, aux = self.core_.loss_and_grads(Xs, one_hot(np.asarray(y), self.n_classes_), eta)
        return losses, self.core_.per_example_grads(aux["parts"])

    def decode(self, z, y):
        check_is_fitted(self, "core_")
        out = self.core_.decode(np.asarray(z, dtype=float), one_hot(np.asarray(y), self.n_classes_))
        return self.scaler_.inverse_transform(out)

    def sample(self, n, random_state=None, class_probs=None):
        check_is_fitted(self, "core_")
        rng = as_rng(random_state)
        probs = self.class_probs_ if class_probs is None else class_probs
        y = sample_labels(probs, n, rng)
        z = rng.standard_normal((n, self.latent_dim))
        return self.decode(z, y), y

    def to_dict(self) -> dict:
        check_is_fitted(self, "core_")
        return {
            "version": MODEL_VERSION,
            "kind": "vae",
            "encoder": self.core_.encoder.to_dict(),
            "decoder": self.core_.decoder.to_dict(),
            "latent_dim": self.latent_dim,
            "class_probs": self.class_probs_.tolist(),
            "scaler": {"means": self.scaler_.means_.tolist(), "stds": self.scaler_.stds_.tolist()},
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)
