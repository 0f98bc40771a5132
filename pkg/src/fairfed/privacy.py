"""Laplace mechanism for the per-group likelihood vectors clients share once."""
from dataclasses import dataclass

import numpy as np

from .errors import ContractError

CLAMP_LOW = 1e-9


@dataclass(frozen=True)
class PrivacyBudget:
    """``epsilon=0`` is the fully private setting: nothing is revealed."""

    epsilon: float
    sensitivity: float

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ContractError(f"epsilon must be >= 0, got {self.epsilon}")
        if not self.sensitivity > 0:
            raise ContractError(f"sensitivity must be > 0, got {self.sensitivity}")

    @property
    def scale(self):
        return self.sensitivity / self.epsilon


def laplace_noise(scale, rng, size=None):
    """Laplace(0, scale) draws by inverting the CDF of a uniform draw."""
    if not scale > 0:
        raise ContractError(f"Laplace scale must be > 0, got {scale}")
    u = rng.random(size) - 0.5
    # 1 - 2|u| lies in (0, 1] because rng.random() < 1
    return -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))


def privatize_likelihoods(vector, budget, rng):
    """Release ``vector`` under ``budget`` (``None`` disables DP).

    Positive epsilon adds Laplace(sensitivity/epsilon) per component and
    clamps to ``[1e-9, 1]``; epsilon zero returns the uniform vector.
    """
    v = np.asarray(vector, dtype=np.float64)
    if np.any(v < 0) or np.any(v > 1):
        raise ContractError(f"likelihoods must lie in [0, 1], got {v}")
    if budget is None:
        return v.copy()
    if budget.epsilon == 0:
        return np.full(v.shape, 1.0 / v.size)
    noisy = v + laplace_noise(budget.scale, rng, size=v.shape)
    return np.clip(noisy, CLAMP_LOW, 1.0)
