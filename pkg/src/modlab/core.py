"""Closed-form mathematics of modality-decoupled preference optimization.

This module is the numerical heart of the package: KL divergence, the
decoupled regularized objective, its closed-form optimal policy, reward
margins, and the Bradley-Terry pair losses (vanilla, decoupled, decoupled
with language-prior debiasing, and the joint-audiovisual variant).

Probability distributions over the response vocabulary are plain 1-D numpy
arrays of strictly positive entries summing to one; log-probabilities are
finite floats <= 0.  Everything here is a pure function of its arguments,
safe to call concurrently.

Sign conventions for a preference pair (y_w chosen, y_l rejected), writing
``dX = log X(y_w) - log X(y_l)``:

    margin = tau * d_policy
             - beta * d_ref
             - beta_inv * d_corrupt_irrelevant
             + beta_sens * d_corrupt_relevant

with temperature ``tau = beta + beta_inv - beta_sens`` ("appendix" mode;
a "maintext" mode with the plus sign is kept behind a flag for comparison).
The pair loss is ``-log sigmoid(margin)``.  The language-prior debiasing
penalty contributes ``-gamma_lpd * d_ref_text_only`` to the margin
("inside" placement) or is added to the loss as a constant ("outside").
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TAU_MODES = ("appendix", "maintext")
LPD_PLACEMENTS = ("inside", "outside")

# Sum-to-one slack for validating distributions.
_SUM_TOL = 1e-9


class DimensionError(ValueError):
    """Vector lengths disagree."""


class DomainError(ValueError):
    """A value is outside the mathematical domain of the operation."""


class ConfigurationError(ValueError):
    """Hyperparameters are ill-posed (e.g. non-positive temperature)."""


@dataclass(frozen=True)
class Hyperparams:
    """Regularization strengths and the derived margin temperature.

    beta:       pull toward the reference policy.
    beta_inv:   invariance pressure (stability under corruption of the
                prompt-irrelevant modality).
    beta_sens:  sensitivity pressure (shift under corruption of the
                prompt-relevant modality).
    gamma_lpd:  strength of the language-prior debiasing penalty.
    tau_mode:   "appendix" gives tau = beta + beta_inv - beta_sens (the
                value consistent with the stationarity derivation and the
                default); "maintext" gives beta + beta_inv + beta_sens.

    All strengths must be >= 0 and the resulting tau must be > 0, which is
    what makes the decoupled objective strictly concave on the simplex.
    """

    beta: float = 0.1
    beta_inv: float = 0.02
    beta_sens: float = 0.05
    gamma_lpd: float = 0.05
    tau_mode: str = "appendix"

    def __post_init__(self):
        for name in ("beta", "beta_inv", "beta_sens", "gamma_lpd"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ConfigurationError(f"{name} must be finite and >= 0, got {value}")
        if self.tau_mode not in TAU_MODES:
            raise ConfigurationError(f"tau_mode must be one of {TAU_MODES}, got {self.tau_mode!r}")
        if self.tau <= 0:
            raise ConfigurationError(
                f"temperature tau must be positive, got {self.tau} "
                f"(beta={self.beta}, beta_inv={self.beta_inv}, "
                f"beta_sens={self.beta_sens}, tau_mode={self.tau_mode})"
            )

    @property
    def tau(self) -> float:
        if self.tau_mode == "appendix":
            return self.beta + self.beta_inv - self.beta_sens
        return self.beta + self.beta_inv + self.beta_sens

    @property
    def tau_av(self) -> float:
        """Temperature of the joint-audiovisual loss (invariance term dropped)."""
        return self.beta - self.beta_sens


@dataclass(frozen=True)
class PairLogProbs:
    """Log-probabilities of (y_w, y_l) for one preference pair.

    policy_w / policy_l: trainable policy on the clean input (the only
        slots gradients ever flow through).
    ref_w / ref_l:       frozen reference on the clean input.
    inv_w / inv_l:       policy on the input with the prompt-IRRELEVANT
        modality corrupted (detached).
    sens_w / sens_l:     policy on the input with the prompt-RELEVANT
        modality corrupted (detached).  For joint-audiovisual pairs these
        slots hold the both-modalities-corrupted pass.
    text_w / text_l:     reference on the text-only input (features zeroed),
        realizing the language prior.

    The caller assigns the irrelevant/relevant slots according to the
    prompt's modality tag, so the audio-symmetric form is just a slot swap.
    Corrupted and text slots may be omitted (None) when the corresponding
    strength is zero and the trainer never evaluated them.
    """

    policy_w: float
    policy_l: float
    ref_w: float
    ref_l: float
    inv_w: float | None = None
    inv_l: float | None = None
    sens_w: float | None = None
    sens_l: float | None = None
    text_w: float | None = None
    text_l: float | None = None

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            if value is None:
                continue
            if not math.isfinite(value):
                raise DomainError(f"{name} must be finite, got {value}")
            if value > 0:
                raise DomainError(f"{name} is a log-probability and must be <= 0, got {value}")


def _as_probability_vector(p, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise DimensionError(f"{name} must be a non-empty 1-D vector")
    if not np.all(np.isfinite(p)):
        raise DomainError(f"{name} has non-finite entries")
    if np.any(p < 0):
        raise DomainError(f"{name} has negative entries")
    total = float(p.sum())
    if abs(total - 1.0) > _SUM_TOL:
        raise DomainError(f"{name} must sum to 1 within {_SUM_TOL}, got {total}")
    return p


def _as_strictly_positive_distribution(p, name: str) -> np.ndarray:
    p = _as_probability_vector(p, name)
    if np.any(p <= 0):
        raise DomainError(f"{name} must be strictly positive (zeros are rejected, not clamped)")
    return p


def kl_divergence(p, q) -> float:
    """KL(p || q) = sum_y p(y) * ln(p(y)/q(y)) in nats.

    Zero entries of p contribute nothing; a zero entry of q under positive
    p mass is a domain error (the divergence is infinite).
    """
    p = _as_probability_vector(p, "p")
    q = _as_probability_vector(q, "q")
    if p.shape != q.shape:
        raise DimensionError(f"length mismatch: p has {p.size} entries, q has {q.size}")
    support = p > 0
    if np.any(q[support] == 0):
        raise DomainError("q has zero mass where p is positive; KL(p||q) is infinite")
    ps = p[support]
    return float(np.sum(ps * np.log(ps / q[support])))


def mod_objective_value(p, r, p_ref, q_inv, q_sens, hp: Hyperparams) -> float:
    """Value of the decoupled objective at policy p.

    E_p[r] - beta*KL(p||p_ref) - beta_inv*KL(p||q_inv) + beta_sens*KL(p||q_sens).

    The sensitivity KL enters with a positive sign: shifting away from the
    relevant-modality-corrupted distribution is rewarded.  Strictly concave
    in p exactly when tau > 0.
    """
    p = _as_probability_vector(p, "p")
    r = np.asarray(r, dtype=np.float64)
    if r.shape != p.shape:
        raise DimensionError(f"reward length {r.size} does not match policy length {p.size}")
    if not np.all(np.isfinite(r)):
        raise DomainError("reward vector has non-finite entries")
    value = float(p @ r)
    value -= hp.beta * kl_divergence(p, p_ref)
    value -= hp.beta_inv * kl_divergence(p, q_inv)
    value += hp.beta_sens * kl_divergence(p, q_sens)
    return value


def closed_form_policy(r, p_ref, q_inv, q_sens, hp: Hyperparams) -> np.ndarray:
    """Maximizer of the decoupled objective over the probability simplex.

    Proportional to exp(r/tau) * p_ref^(beta/tau) * q_inv^(beta_inv/tau)
    * q_sens^(-beta_sens/tau), computed in log space with a max shift and
    normalized.  Requires tau > 0 (enforced by Hyperparams) and strictly
    positive input distributions; zeros in q_sens would put a negative
    exponent on zero.
    """
    if hp.tau <= 0:
        raise ConfigurationError(f"closed-form policy requires tau > 0, got {hp.tau}")
    r = np.asarray(r, dtype=np.float64)
    p_ref = _as_strictly_positive_distribution(p_ref, "p_ref")
    if r.shape != p_ref.shape:
        raise DimensionError(f"reward length {r.size} does not match vocabulary size {p_ref.size}")
    if not np.all(np.isfinite(r)):
        raise DomainError("reward vector has non-finite entries")
    q_inv = _as_strictly_positive_distribution(q_inv, "q_inv")
    q_sens = _as_strictly_positive_distribution(q_sens, "q_sens")
    if q_inv.shape != p_ref.shape or q_sens.shape != p_ref.shape:
        raise DimensionError("all distributions must share one vocabulary")

    log_kernel = (
        r
        + hp.beta * np.log(p_ref)
        + hp.beta_inv * np.log(q_inv)
        - hp.beta_sens * np.log(q_sens)
    ) / hp.tau
    log_kernel -= log_kernel.max()
    kernel = np.exp(log_kernel)
    return kernel / kernel.sum()


def _delta(w: float | None, l: float | None, coeff: float, name: str) -> float | None:
    """Difference log X(y_w) - log X(y_l), or None when both slots are absent."""
    if w is None and l is None:
        if coeff != 0.0:
            raise DomainError(f"{name} log-probs are required when their strength is nonzero")
        return None
    if w is None or l is None:
        raise DomainError(f"{name} log-probs must be given for both y_w and y_l")
    return w - l


def mod_margin(pl: PairLogProbs, hp: Hyperparams) -> float:
    """Reward difference r(y_w) - r(y_l) for the decoupled objective.

    The normalizer of the closed-form policy is shared by y_w and y_l and
    cancels here, which is why it is never computed or stored.  Setting
    beta_inv = beta_sens = 0 reduces this to the vanilla preference margin
    beta * (d_policy - d_ref).
    """
    d_policy = pl.policy_w - pl.policy_l
    d_ref = pl.ref_w - pl.ref_l
    margin = hp.tau * d_policy - hp.beta * d_ref
    d_inv = _delta(pl.inv_w, pl.inv_l, hp.beta_inv, "irrelevant-corrupted")
    if d_inv is not None:
        margin -= hp.beta_inv * d_inv
    d_sens = _delta(pl.sens_w, pl.sens_l, hp.beta_sens, "relevant-corrupted")
    if d_sens is not None:
        margin += hp.beta_sens * d_sens
    return margin


def lpd_margin(pl: PairLogProbs, hp: Hyperparams) -> float:
    """Language-prior debiasing contribution to the pair margin.

    -gamma_lpd * (log pi_text(y_w|x) - log pi_text(y_l|x)), with the text-only
    policy realized by the reference model on a feature-free input.
    """
    d_text = _delta(pl.text_w, pl.text_l, hp.gamma_lpd, "text-only")
    if d_text is None:
        return 0.0
    return -hp.gamma_lpd * d_text


def pair_loss(margin: float) -> float:
    """Bradley-Terry negative log-likelihood -ln(sigmoid(margin)).

    Evaluated as softplus(-margin) = ln(1 + exp(-margin)) via logaddexp,
    which is stable for margins of either sign.  Strictly decreasing in
    the margin; equals ln 2 at zero.
    """
    if not math.isfinite(margin):
        raise DomainError(f"margin must be finite, got {margin}")
    return float(np.logaddexp(0.0, -margin))


def modpp_pair_loss(pl: PairLogProbs, hp: Hyperparams, lpd_placement: str = "inside") -> float:
    """Pair loss of the debiased decoupled objective.

    "inside" (default) composes the debiasing penalty into the reward, so
    it sits inside the sigmoid and carries gradient signal; "outside" adds
    it to the loss after the sigmoid, reproducing the additive surface form
    (constant in the trainable parameters).
    """
    if lpd_placement not in LPD_PLACEMENTS:
        raise ConfigurationError(
            f"lpd_placement must be one of {LPD_PLACEMENTS}, got {lpd_placement!r}"
        )
    margin = mod_margin(pl, hp)
    lpd = lpd_margin(pl, hp)
    if lpd_placement == "inside":
        return pair_loss(margin + lpd)
    return pair_loss(margin) + lpd


def av_pair_loss(pl: PairLogProbs, hp: Hyperparams) -> float:
    """Pair loss for prompts that need both modalities at once.

    The invariance term is dropped (there is no irrelevant modality), so
    the temperature becomes tau_av = beta - beta_sens and the sens slots
    carry the both-modalities-corrupted pass:

        -ln sigmoid(tau_av*d_policy - beta*d_ref + beta_sens*d_corrupted)
    """
    tau_av = hp.tau_av
    if tau_av <= 0:
        raise ConfigurationError(
            f"joint-audiovisual loss requires beta > beta_sens, got tau_av={tau_av}"
        )
    d_policy = pl.policy_w - pl.policy_l
    d_ref = pl.ref_w - pl.ref_l
    margin = tau_av * d_policy - hp.beta * d_ref
    d_both = _delta(pl.sens_w, pl.sens_l, hp.beta_sens, "both-modalities-corrupted")
    if d_both is not None:
        margin += hp.beta_sens * d_both
    return pair_loss(margin)
