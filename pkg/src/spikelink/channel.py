"""Binary symmetric channel: crossover law, marginalized spike statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import SeededRng, db_to_linear, ebn0_to_epsilon, log_sigmoid, sigmoid

__all__ = [
    "ChannelConfig",
    "transmit",
    "noisy_spike_prob",
    "log_prob_clean",
    "log_prob_noisy",
    "sample_noisy",
]


@dataclass(frozen=True)
class ChannelConfig:
    """Channel operating point, given as either epsilon or Eb/N0 in dB.

    Exactly one of the two fields is the source of truth; the other must be
    left as None.  The derived crossover probability must land in [0, 0.5].
    """

    epsilon: float | None = None
    ebn0_db: float | None = None
    mapping: str = "linear"

    def __post_init__(self):
        if (self.epsilon is None) == (self.ebn0_db is None):
            raise ValueError("set exactly one of epsilon and ebn0_db")
        if self.epsilon is not None:
            eps = float(self.epsilon)
            if not 0.0 <= eps <= 0.5:
                raise ValueError(f"epsilon must be in [0, 0.5], got {eps}")

    def crossover(self) -> float:
        """Resolve the configured point to a crossover probability."""
        if self.epsilon is not None:
            return float(self.epsilon)
        return ebn0_to_epsilon(db_to_linear(self.ebn0_db), form=self.mapping)


def _check_epsilon(epsilon: float, high: float = 1.0) -> float:
    eps = float(epsilon)
    if not 0.0 <= eps <= high:
        raise ValueError(f"crossover probability out of range: {eps}")
    return eps


def transmit(bits: np.ndarray, epsilon: float, rng: SeededRng) -> np.ndarray:
    """Flip each bit independently with probability epsilon."""
    eps = _check_epsilon(epsilon)
    bits = np.asarray(bits, dtype=np.uint8)
    flips = rng.uniform(bits.shape) < eps
    return np.bitwise_xor(bits, flips.astype(np.uint8))


def noisy_spike_prob(p, epsilon: float):
    """Probability that the received bit is 1 when the spike probability is p.

    Marginalizes the channel over the transmitted bit:
    p*(1-eps) + (1-p)*eps, the convex mix the flip law induces.  Written in
    that two-term form so it matches the explicit marginalization bit for
    bit, not merely to rounding.
    """
    eps = _check_epsilon(epsilon)
    p = np.asarray(p, dtype=np.float64)
    out = p * (1.0 - eps) + (1.0 - p) * eps
    if out.ndim == 0:
        return float(out)
    return out


def log_prob_clean(bits, u) -> float:
    """Log-likelihood of spike bits under Bernoulli(sigmoid(u)), stable form."""
    bits = np.asarray(bits, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    return float(np.sum(bits * log_sigmoid(u) + (1.0 - bits) * log_sigmoid(-u)))


def log_prob_noisy(zhat, u, epsilon: float) -> float:
    """Log-probability of received bits zhat given membrane potentials u.

    Sums zhat*log(q) + (1-zhat)*log(1-q) with q = noisy_spike_prob(sigmoid(u), eps).
    At epsilon = 0 this reduces exactly to the clean Bernoulli log-likelihood,
    which is evaluated in log-sigmoid form so saturated potentials stay finite.
    """
    eps = _check_epsilon(epsilon, high=0.5)
    if eps == 0.0:
        return log_prob_clean(zhat, u)
    zhat = np.asarray(zhat, dtype=np.float64)
    q = noisy_spike_prob(sigmoid(np.asarray(u, dtype=np.float64)), eps)
    # q is pinned inside [eps, 1-eps] for eps > 0, so the logs are finite
    return float(np.sum(zhat * np.log(q) + (1.0 - zhat) * np.log1p(-q)))


def sample_noisy(u, epsilon: float, rng: SeededRng) -> np.ndarray:
    """Draw received bits directly from the channel-marginalized law.

    One Bernoulli per bit; the law is identical to sampling clean spikes and
    pushing them through transmit, but costs a single draw.
    """
    eps = _check_epsilon(epsilon)
    q = noisy_spike_prob(sigmoid(np.asarray(u, dtype=np.float64)), eps)
    return rng.bernoulli(q)
