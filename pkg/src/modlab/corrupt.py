"""Feature-vector corruption strategies for audio/visual inputs.

Four ways to produce an uninformative (or partially informative) stand-in
for a feature vector:

    zeros        all-zero vector
    gaussian     i.i.d. N(0, sigma^2) replacement noise
    random_swap  a different vector drawn from a pool of real features
    diffusion    forward noising sqrt(abar_t)*x + sqrt(1-abar_t)*eps

Diffusion uses the standard linear-beta forward schedule; small t leaves
the vector close to the original (signal coefficient sqrt(abar_t) decays
monotonically in t), large t destroys it.  Corrupted vectors are not
renormalized to the input's scale statistics.  Every call is
deterministic given (input, spec) because the generator is rebuilt from
spec.seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

CORRUPTION_KINDS = ("zeros", "gaussian", "random_swap", "diffusion")

DEFAULT_T_MAX = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02


class CorruptionError(ValueError):
    """Invalid corruption request (bad kind, step out of range, empty pool)."""


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear forward-noising schedule with precomputed cumulative products.

    alpha_bar[t] = prod_{s=1..t} (1 - beta_s) with beta_s interpolated
    linearly from beta_start to beta_end over T steps; alpha_bar[0] = 1
    and the sequence is strictly decreasing.
    """

    T: int = DEFAULT_T_MAX
    beta_start: float = DEFAULT_BETA_START
    beta_end: float = DEFAULT_BETA_END
    alpha_bar: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.T < 1:
            raise CorruptionError(f"schedule length T must be >= 1, got {self.T}")
        if not (0 < self.beta_start <= self.beta_end < 1):
            raise CorruptionError(
                f"need 0 < beta_start <= beta_end < 1, got {self.beta_start}, {self.beta_end}"
            )
        betas = np.linspace(self.beta_start, self.beta_end, self.T)
        abar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
        object.__setattr__(self, "alpha_bar", abar)


DEFAULT_SCHEDULE = NoiseSchedule()


@dataclass(frozen=True)
class CorruptionSpec:
    """One corruption draw: kind, parameters, and the seed that fixes it.

    t is only meaningful for diffusion (step count in [0, T]); sigma only
    for gaussian.
    """

    kind: str = "diffusion"
    t: int = 500
    sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in CORRUPTION_KINDS:
            raise CorruptionError(f"kind must be one of {CORRUPTION_KINDS}, got {self.kind!r}")
        if not (0 <= self.t <= DEFAULT_T_MAX):
            raise CorruptionError(f"diffusion step t must be in [0, {DEFAULT_T_MAX}], got {self.t}")
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise CorruptionError(f"sigma must be finite and > 0, got {self.sigma}")

    def reseeded(self, seed: int) -> "CorruptionSpec":
        return CorruptionSpec(kind=self.kind, t=self.t, sigma=self.sigma, seed=seed)


def alpha_bar(schedule: NoiseSchedule, t: int) -> float:
    """Cumulative signal retention prod_{s=1..t}(1 - beta_s), in (0, 1]."""
    if not (0 <= t <= schedule.T):
        raise CorruptionError(f"t must be in [0, {schedule.T}], got {t}")
    return float(schedule.alpha_bar[t])


def corrupt(features, spec: CorruptionSpec, pool=None, schedule: NoiseSchedule = DEFAULT_SCHEDULE):
    """Corrupted copy of a feature vector, dimension-preserving and finite.

    gaussian replaces the vector with pure noise (an uninformative input)
    rather than adding noise to it.  random_swap draws uniformly from the
    pool, excluding members identical to the input so the result is a
    genuinely different source.  diffusion at t=0 is the identity.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 1:
        raise CorruptionError("features must be a 1-D vector")
    if not np.all(np.isfinite(x)):
        raise CorruptionError("features must be finite")
    rng = np.random.default_rng(spec.seed)

    if spec.kind == "zeros":
        return np.zeros_like(x)

    if spec.kind == "gaussian":
        return rng.normal(0.0, spec.sigma, size=x.shape)

    if spec.kind == "random_swap":
        if pool is None or len(pool) == 0:
            raise CorruptionError("random_swap needs a non-empty feature pool")
        candidates = [np.asarray(v, dtype=np.float64) for v in pool]
        for v in candidates:
            if v.shape != x.shape:
                raise CorruptionError("pool vectors must match the input dimension")
        eligible = [i for i, v in enumerate(candidates) if not np.array_equal(v, x)]
        if not eligible:
            raise CorruptionError("random_swap pool contains no vector different from the input")
        pick = eligible[rng.integers(len(eligible))]
        return candidates[pick].copy()

    # diffusion
    if spec.t == 0:
        return x.copy()
    abar = alpha_bar(schedule, spec.t)
    eps = rng.standard_normal(x.shape)
    return math.sqrt(abar) * x + math.sqrt(1.0 - abar) * eps
