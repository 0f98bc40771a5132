"""Multiplicative-weights group reweighting and the best-group threshold check."""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError, ContractError, NumericError

LAMBDA_FLOOR = 1e-300


@dataclass(frozen=True, eq=False)
class LambdaState:
    """Per-group multiplicative weights held by one client."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 1 or not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise NumericError(f"lambda must be a finite, strictly positive vector, got {v}")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True, eq=False)
class ImportanceWeights:
    raw: np.ndarray
    normalized: np.ndarray


@dataclass(frozen=True)
class ThresholdVerdict:
    btpr: float
    wtpr: float
    eta_mu: float
    threshold: float
    satisfied: bool
    observed_btpr: float


def init_lambda(group_priors):
    priors = np.asarray(group_priors, dtype=np.float64)
    if np.any(priors <= 0):
        raise ConfigurationError(f"group priors must be positive (empty group upstream?), got {priors}")
    if abs(priors.sum() - 1.0) > 1e-9:
        raise ConfigurationError(f"group priors must sum to 1, got sum {priors.sum()!r}")
    return LambdaState(priors)


def normalize_weights(sample_weights, groups, num_groups=None):
    """Share of the total importance mass held by each group.

    ``w_hat[j] = sum(w[i] for i in group j) / sum(w)``.
    """
    w = np.asarray(sample_weights, dtype=np.float64)
    groups = np.asarray(groups, dtype=np.int64)
    if w.shape != groups.shape:
        raise ContractError(f"{w.size} weights for {groups.size} group labels")
    if np.any(w < 0):
        raise ContractError("sample weights must be non-negative")
    total = w.sum()
    if not total > 0:
        raise ContractError("sample weights sum to zero")
    if num_groups is None:
        num_groups = int(groups.max()) + 1
    return np.bincount(groups, weights=w, minlength=num_groups) / total


def compute_importance(lam, mixture, groups=None):
    """Importance ``lambda / mixture`` per group, plus its normalized form.

    ``groups`` lists the group of every local sample; with it the
    normalization weighs each group by its local size. Without it each group
    counts once.
    """
    lam_v = lam.values if isinstance(lam, LambdaState) else np.asarray(lam, dtype=np.float64)
    mix = np.asarray(getattr(mixture, "per_group", mixture), dtype=np.float64)
    if mix.shape != lam_v.shape:
        raise ContractError(f"lambda has {lam_v.size} groups, mixture has {mix.size}")
    bad = np.flatnonzero(~(mix > 0))
    if bad.size:
        raise NumericError(f"mixture likelihood of group(s) {bad.tolist()} is not strictly positive")
    raw = lam_v / mix
    if groups is None:
        normalized = normalize_weights(raw, np.arange(raw.size))
    else:
        groups = np.asarray(groups, dtype=np.int64)
        normalized = normalize_weights(raw[groups], groups, num_groups=raw.size)
    return ImportanceWeights(raw, normalized)


def mw_update(lam, group_losses, eta_mu):
    """``lambda_j * exp(-eta_mu * loss_j)``, floored at 1e-300.

    With a negative ``eta_mu`` groups with higher loss gain weight.
    """
    losses = np.asarray(getattr(group_losses, "per_group", group_losses), dtype=np.float64)
    if np.any(np.isnan(losses)):
        raise NumericError(f"group losses contain NaN: {losses}")
    if not np.isfinite(eta_mu):
        raise NumericError(f"eta_mu must be finite, got {eta_mu}")
    with np.errstate(over="ignore"):
        updated = lam.values * np.exp(-eta_mu * losses)
    if not np.all(np.isfinite(updated)):
        raise NumericError(f"multiplicative update overflowed: {updated}")
    return LambdaState(np.maximum(updated, LAMBDA_FLOOR))


def evaluate_threshold(btpr, wtpr, eta_mu_threshold, observed_btpr: Optional[float] = None):
    """Minimum acceptable best-group TPR: ``btpr - eta * (btpr - wtpr)``.

    ``btpr``/``wtpr`` define the threshold. The verdict compares
    ``observed_btpr`` against it, which defaults to ``btpr`` itself; pass a
    baseline's btpr/wtpr and the mitigated model's btpr to check that
    mitigation has not pulled the best group below the threshold.
    """
    if not 0.0 <= eta_mu_threshold <= 1.0:
        raise ContractError(f"eta_mu_threshold must lie in [0, 1], got {eta_mu_threshold}")
    if not 0.0 <= wtpr <= btpr <= 1.0:
        raise ContractError(f"need 0 <= wtpr <= btpr <= 1, got wtpr={wtpr}, btpr={btpr}")
    observed = btpr if observed_btpr is None else observed_btpr
    threshold = btpr - eta_mu_threshold * (btpr - wtpr)
    return ThresholdVerdict(float(btpr), float(wtpr), float(eta_mu_threshold), float(threshold),
                            bool(observed >= threshold), float(observed))
