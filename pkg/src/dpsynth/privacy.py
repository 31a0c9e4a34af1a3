"""Gaussian mechanism, budget splitting and Renyi-DP accounting.

The accountant covers the Poisson-subsampled Gaussian mechanism at integer
Renyi orders, evaluated in log space with the binomial expansion.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from .exceptions import EmptyState, InvalidParams, Unachievable

DEFAULT_DELTA = 1e-5
DEFAULT_ORDERS = tuple(range(2, 65)) + (128, 256)


@dataclass(frozen=True)
class PrivacySpec:
    epsilon: float = math.inf
    delta: float = DEFAULT_DELTA

    def __post_init__(self):
        if not (self.epsilon > 0):
            raise InvalidParams(f"epsilon must be > 0, got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise InvalidParams(f"delta must lie in (0, 1), got {self.delta}")

    @property
    def is_private(self) -> bool:
        return math.isfinite(self.epsilon)


def calibrate_gaussian(sensitivity: float, epsilon: float, delta: float) -> float:
    """Noise std ``sqrt(2 ln(1.25/delta)) * sensitivity / epsilon``.

    ``epsilon = inf`` returns 0 (non-private limit).
    """
    if sensitivity < 0 or not epsilon > 0 or not 0 < delta < 1:
        raise InvalidParams(f"bad Gaussian parameters ({sensitivity}, {epsilon}, {delta})")
    if math.isinf(epsilon) or sensitivity == 0:
        return 0.0
    return math.sqrt(2.0 * math.log(1.25 / delta)) * sensitivity / epsilon


def gaussian_epsilon(sensitivity: float, sigma: float, delta: float) -> float:
    """Inverse of :func:`calibrate_gaussian` in ``epsilon``."""
    if sigma == 0:
        return math.inf
    return math.sqrt(2.0 * math.log(1.25 / delta)) * sensitivity / sigma


@dataclass(frozen=True)
class GaussianMech:
    sensitivity: float
    sigma: float

    @classmethod
    def calibrated(cls, sensitivity: float, epsilon: float, delta: float) -> "GaussianMech":
        return cls(sensitivity, calibrate_gaussian(sensitivity, epsilon, delta))

    def __call__(self, value, rng):
        return add_gaussian_noise(value, self.sigma, rng)


def add_gaussian_noise(vector, sigma: float, rng: np.random.Generator):
    if sigma < 0:
        raise InvalidParams("sigma must be >= 0")
    x = np.asarray(vector, dtype=float)
    if sigma == 0:
        return x.copy()
    return x + rng.normal(0.0, sigma, size=x.shape)


def split_budget(epsilon: float, weights) -> np.ndarray:
    """Split ``epsilon`` proportionally to ``weights`` (sequential composition)."""
    w = np.asarray(weights, dtype=float)
    if w.size == 0 or np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise InvalidParams("weights must be positive and finite")
    if math.isinf(epsilon):
        return np.full(w.shape, math.inf)
    return epsilon * w / w.sum()


# -- Renyi DP -------------------------------------------------------------

def _log_a_int(q: float, sigma: float, alpha: int) -> float:
    """log E[(p/q)^alpha] for the sampled Gaussian at integer alpha."""
    i = np.arange(alpha + 1)
    log_binom = gammaln(alpha + 1) - gammaln(i + 1) - gammaln(alpha - i + 1)
    terms = log_binom + i * math.log(q) + (alpha - i) * math.log1p(-q) + (i * i - i) / (2.0 * sigma**2)
    return float(logsumexp(terms))


def rdp_per_step(q: float, noise_multiplier: float, orders=DEFAULT_ORDERS) -> np.ndarray:
    if not 0 < q <= 1:
        raise InvalidParams(f"sampling rate must lie in (0, 1], got {q}")
    if not noise_multiplier > 0:
        raise InvalidParams("noise_multiplier must be > 0")
    orders = np.asarray(orders)
    if q == 1.0:
        return orders / (2.0 * noise_multiplier**2)
    out = np.empty(len(orders))
    for k, a in enumerate(orders):
        if a != int(a) or a < 2:
            raise InvalidParams("only integer orders >= 2 are supported")
        out[k] = _log_a_int(q, noise_multiplier, int(a)) / (a - 1)
    # binomial expansion can round a hair above the unsubsampled value
    return np.minimum(np.maximum(out, 0.0), orders / (2.0 * noise_multiplier**2))


@dataclass(frozen=True)
class AccountantState:
    orders: tuple = DEFAULT_ORDERS
    rdp: np.ndarray = field(default=None)
    steps: int = 0

    def __post_init__(self):
        rdp = np.zeros(len(self.orders)) if self.rdp is None else np.asarray(self.rdp, dtype=float)
        if rdp.shape != (len(self.orders),):
            raise InvalidParams("rdp length must match orders")
        if np.any(rdp < 0):
            raise InvalidParams("rdp values must be non-negative")
        object.__setattr__(self, "orders", tuple(self.orders))
        object.__setattr__(self, "rdp", rdp)

    def compose(self, other: "AccountantState") -> "AccountantState":
        if tuple(other.orders) != self.orders:
            raise InvalidParams("cannot compose accountants over different orders")
        return AccountantState(self.orders, self.rdp + other.rdp, self.steps + other.steps)

    def __add__(self, other):
        return self.compose(other)

    def epsilon(self, delta: float) -> float:
        return rdp_to_eps(self, delta)[0]

    def to_dict(self) -> dict:
        return {"orders": list(self.orders), "rdp": self.rdp.tolist(), "steps": self.steps}


def rdp_subsampled_gaussian(q: float, noise_multiplier: float, steps: int, orders=DEFAULT_ORDERS) -> AccountantState:
    if steps < 1:
        raise InvalidParams("steps must be >= 1")
    return AccountantState(tuple(orders), steps * rdp_per_step(q, noise_multiplier, orders), int(steps))


def rdp_to_eps(state: AccountantState, delta: float):
    """Convert accumulated RDP to (epsilon, best order) at ``delta``."""
    if not 0 < delta < 1:
        raise InvalidParams("delta must lie in (0, 1)")
    if len(state.orders) == 0:
        raise EmptyState("accountant has no orders")
    orders = np.asarray(state.orders, dtype=float)
    eps = state.rdp + math.log(1.0 / delta) / (orders - 1.0)
    k = int(np.nanargmin(eps))
    return float(eps[k]), state.orders[k]


def _eps_for(q, sigma, steps, delta, orders):
    return rdp_to_eps(rdp_subsampled_gaussian(q, sigma, steps, orders), delta)[0]


def calibrate_noise_multiplier(
    q: float,
    steps: int,
    epsilon: float,
    delta: float,
    orders=DEFAULT_ORDERS,
    rtol: float = 1e-3,
    max_sigma: float = 1e6,
) -> float:
    """Smallest-ish noise multiplier whose accounted epsilon is <= target.

    Bisection on sigma; the returned value satisfies
    ``0.99 * epsilon <= eps(sigma) <= epsilon``.
    """
    if math.isinf(epsilon):
        return 0.0
    if not epsilon > 0:
        raise InvalidParams("epsilon must be > 0")
    lo, hi = 1e-2, 1.0
    while _eps_for(q, hi, steps, delta, orders) > epsilon:
        lo, hi = hi, hi * 2.0
        if hi > max_sigma:
            raise Unachievable(f"epsilon={epsilon} not reachable with sigma <= {max_sigma}")
    if _eps_for(q, lo, steps, delta, orders) <= epsilon:
        # target is loose enough that tiny noise already meets it
        while lo > 1e-6 and _eps_for(q, lo, steps, delta, orders) <= epsilon:
            hi, lo = lo, lo / 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _eps_for(q, mid, steps, delta, orders) > epsilon:
            lo = mid
        else:
            hi = mid
        e_lo, e_hi = _eps_for(q, lo, steps, delta, orders), _eps_for(q, hi, steps, delta, orders)
        assert e_lo >= e_hi, "accounted epsilon must decrease in sigma"
        if (hi - lo) / hi < rtol and e_hi >= 0.99 * epsilon:
            break
    return hi
