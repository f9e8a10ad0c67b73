"""Preference-optimization training loop.

Implements the full recipe: supervised warm-up of a frozen reference,
strictly alternating visual/audio batches, corrupted forward passes that
enter the loss but never the gradient (stop-gradient contract), the four
loss variants, plain gradient-descent updates, and per-pair forward/backward
pass accounting.

Loss variants:

    dpo          vanilla preference loss (corruption strengths zeroed,
                 no corrupted or text-only passes)
    mod          decoupled loss with invariance + sensitivity terms
    modpp        mod plus the language-prior debiasing penalty (adds two
                 reference passes on the text-only input)
    mod_with_av  mod for single-modality pairs; audiovisual-tagged pairs
                 are trained with the joint loss (both modalities
                 corrupted, invariance term dropped)

Per-pair pass counts follow sequence-model accounting: scoring y_w and y_l
counts as two passes even though the desk-scale policy produces the whole
response distribution in one evaluation.  This keeps the counters
comparable across variants:

    dpo    fwd_policy=2  fwd_ref=2  bwd_policy=2  bwd_ref=0
    mod    fwd_policy=6  fwd_ref=2  bwd_policy=2  bwd_ref=0
    modpp  fwd_policy=6  fwd_ref=4  bwd_policy=2  bwd_ref=0

Determinism: everything derives from cfg.seed through tagged seed
sequences; each pair's corruption draw is seeded by (seed, step, pair
position, slot), so runs are exactly repeatable and variants that skip
corruption draw identical batch orders.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import core
from .core import ConfigurationError, Hyperparams, PairLogProbs
from .corrupt import CorruptionSpec, corrupt
from .policy import (
    GradAccumulator,
    ModalityContext,
    PolicyParams,
    apply_gradient_step,
    backward,
    forward_detached,
    forward_logprobs,
    init_params,
)
from .synth import N_PROMPTS, VOCAB_SIZE, PreferencePair

LOSS_VARIANTS = ("dpo", "mod", "modpp", "mod_with_av")

_WARMUP_STREAM = 11
_ORDER_STREAM = 12
_CORRUPT_STREAM = 13

_D_H_DEFAULT = 16


class TrainingError(ValueError):
    """Contract violation in the training loop (mixed batch, bad dataset)."""


@dataclass(frozen=True)
class PassCounter:
    """Forward/backward evaluations per preference pair (response-level)."""

    fwd_policy: int = 0
    fwd_ref: int = 0
    bwd_policy: int = 0
    bwd_ref: int = 0

    def __post_init__(self):
        for name in ("fwd_policy", "fwd_ref", "bwd_policy", "bwd_ref"):
            if getattr(self, name) < 0:
                raise TrainingError(f"{name} cannot be negative")
        if self.bwd_ref != 0:
            raise TrainingError("the reference model is frozen; bwd_ref must stay 0")


@dataclass(frozen=True)
class TrainConfig:
    """Everything a training run depends on.

    lr defaults to the full-scale recipe's 3e-7; desk-scale presets
    override it (see presets), since a toy policy tolerates and needs far
    larger steps.  Defaults keep beta_inv below beta_sens: cross-modal
    information is sometimes legitimately useful, so invariance is applied
    more gently than sensitivity.
    """

    hp: Hyperparams = field(default_factory=Hyperparams)
    loss_variant: str = "modpp"
    corruption: CorruptionSpec = field(default_factory=CorruptionSpec)
    lr: float = 3e-7
    epochs: int = 1
    batch_size: int = 16
    seed: int = 0
    alternate_batches: bool = True
    lpd_placement: str = "inside"
    warmup_steps: int = 500
    warmup_lr: float = 0.5

    def __post_init__(self):
        if self.loss_variant not in LOSS_VARIANTS:
            raise ConfigurationError(f"loss_variant must be one of {LOSS_VARIANTS}")
        if not (math.isfinite(self.lr) and self.lr > 0):
            raise ConfigurationError(f"lr must be positive, got {self.lr}")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.warmup_steps < 0:
            raise ConfigurationError("warmup_steps must be >= 0")
        if self.lpd_placement not in core.LPD_PLACEMENTS:
            raise ConfigurationError(f"lpd_placement must be one of {core.LPD_PLACEMENTS}")


@dataclass
class TrainResult:
    params: PolicyParams
    ref_params: PolicyParams
    losses: np.ndarray
    counters: list
    n_av_excluded: int = 0


def _rng(*key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(key)))


def _derived_seed(*key) -> int:
    return int(np.random.SeedSequence(list(key)).generate_state(1)[0])


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def feature_pools(dataset) -> dict:
    """Per-modality pools of real feature vectors for random_swap."""
    return {
        "audio": [p.context.audio for p in dataset],
        "visual": [p.context.visual for p in dataset],
    }


def _corrupted_context(ctx: ModalityContext, spec: CorruptionSpec, modalities, pools) -> ModalityContext:
    audio, visual = None, None
    if "audio" in modalities:
        audio = corrupt(ctx.audio, spec, pool=pools.get("audio") if pools else None)
    if "visual" in modalities:
        visual = corrupt(ctx.visual, spec, pool=pools.get("visual") if pools else None)
    return ctx.with_features(audio=audio, visual=visual)


def _relevant_irrelevant(tag: str):
    if tag == "visual_related":
        return "visual", "audio"
    if tag == "audio_related":
        return "audio", "visual"
    raise TrainingError(f"single-modality corruption roles undefined for tag {tag!r}")


def evaluate_pair(params: PolicyParams, ref_params: PolicyParams, pair: PreferencePair,
                  cfg: TrainConfig, step: int, pair_index: int, pools=None):
    """All log-probabilities a variant needs for one pair, plus pass counts.

    Clean policy passes are the only tracked evaluations; corrupted passes
    go through forward_detached and the reference is frozen throughout.
    Corruption seeds derive from (cfg.seed, step, pair_index, slot).
    """
    ctx = pair.context
    w, l = pair.y_w, pair.y_l
    clean = forward_logprobs(params, ctx)
    fwd_policy = 2
    ref = forward_logprobs(ref_params, ctx)
    fwd_ref = 2

    slots = {}
    variant = cfg.loss_variant
    if variant in ("mod", "modpp") or (variant == "mod_with_av" and ctx.modality_tag != "audiovisual"):
        relevant, irrelevant = _relevant_irrelevant(ctx.modality_tag)
        spec_inv = cfg.corruption.reseeded(_derived_seed(cfg.seed, _CORRUPT_STREAM, step, pair_index, 0))
        spec_sens = cfg.corruption.reseeded(_derived_seed(cfg.seed, _CORRUPT_STREAM, step, pair_index, 1))
        inv_lp = forward_detached(params, _corrupted_context(ctx, spec_inv, (irrelevant,), pools))
        sens_lp = forward_detached(params, _corrupted_context(ctx, spec_sens, (relevant,), pools))
        fwd_policy += 4
        slots.update(inv_w=inv_lp[w], inv_l=inv_lp[l], sens_w=sens_lp[w], sens_l=sens_lp[l])
    elif variant == "mod_with_av":
        spec_both = cfg.corruption.reseeded(_derived_seed(cfg.seed, _CORRUPT_STREAM, step, pair_index, 2))
        both_lp = forward_detached(params, _corrupted_context(ctx, spec_both, ("audio", "visual"), pools))
        fwd_policy += 2
        slots.update(sens_w=both_lp[w], sens_l=both_lp[l])

    if variant == "modpp":
        text_lp = forward_logprobs(ref_params, ctx.text_only())
        fwd_ref += 2
        slots.update(text_w=text_lp[w], text_l=text_lp[l])

    pl = PairLogProbs(policy_w=clean[w], policy_l=clean[l], ref_w=ref[w], ref_l=ref[l], **slots)
    counter = PassCounter(fwd_policy=fwd_policy, fwd_ref=fwd_ref, bwd_policy=2, bwd_ref=0)
    return pl, counter


def pair_loss_terms(pl: PairLogProbs, cfg: TrainConfig, tag: str):
    """(loss, sigmoid margin, policy coefficient) for one pair.

    The coefficient is what multiplies d(log pi(y_w) - log pi(y_l)) inside
    the sigmoid, i.e. the factor the gradient flows through.
    """
    hp = cfg.hp
    variant = cfg.loss_variant
    if variant == "dpo":
        hp = Hyperparams(beta=hp.beta, beta_inv=0.0, beta_sens=0.0, gamma_lpd=0.0,
                         tau_mode=hp.tau_mode)
        margin = core.mod_margin(pl, hp)
        return core.pair_loss(margin), margin, hp.tau
    if variant == "mod" or (variant == "mod_with_av" and tag != "audiovisual"):
        margin = core.mod_margin(pl, hp)
        return core.pair_loss(margin), margin, hp.tau
    if variant == "mod_with_av":
        if hp.tau_av <= 0:
            raise ConfigurationError("audiovisual pairs require beta > beta_sens")
        margin = hp.tau_av * (pl.policy_w - pl.policy_l) - hp.beta * (pl.ref_w - pl.ref_l)
        margin += hp.beta_sens * (pl.sens_w - pl.sens_l)
        return core.pair_loss(margin), margin, hp.tau_av
    # modpp
    margin = core.mod_margin(pl, hp)
    lpd = core.lpd_margin(pl, hp)
    if cfg.lpd_placement == "inside":
        margin = margin + lpd
        return core.pair_loss(margin), margin, hp.tau
    return core.pair_loss(margin) + lpd, margin, hp.tau


def train_step(params: PolicyParams, ref_params: PolicyParams, batch, cfg: TrainConfig,
               step: int = 0, pools=None):
    """One gradient-descent update on a batch of preference pairs.

    Returns (updated params, mean pair loss, per-pair PassCounter).  The
    batch must be modality-homogeneous when alternation is enabled.
    """
    if not batch:
        raise TrainingError("empty batch")
    tags = {p.context.modality_tag for p in batch}
    if cfg.alternate_batches and len(tags) > 1:
        raise TrainingError(f"mixed-modality batch under alternation: {sorted(tags)}")

    grads = GradAccumulator(params)
    losses = []
    counters = []
    for idx, pair in enumerate(batch):
        pl, counter = evaluate_pair(params, ref_params, pair, cfg, step, idx, pools)
        counters.append(counter)
        loss, margin, coef = pair_loss_terms(pl, cfg, pair.context.modality_tag)
        losses.append(loss)
        upstream = np.zeros(params.vocab_size)
        weight = _sigmoid(-margin) * coef
        upstream[pair.y_w] = -weight
        upstream[pair.y_l] = weight
        grads.add(backward(params, pair.context, upstream))
    if len(set(counters)) != 1:
        raise TrainingError(f"pass counts varied within one batch: {set(counters)}")
    grads.scale(1.0 / len(batch))
    return apply_gradient_step(params, grads, cfg.lr), float(np.mean(losses)), counters[0]


def init_policy_for(dataset, seed: int, d_h: int = _D_H_DEFAULT) -> PolicyParams:
    ctx = dataset[0].context
    return init_params(d_a=ctx.audio.size, d_v=ctx.visual.size, d_h=d_h,
                       vocab_size=VOCAB_SIZE, n_prompts=N_PROMPTS, seed=seed)


def warmup_reference(dataset, steps: int, seed: int, lr: float = 0.5,
                     batch_size: int = 16, d_h: int = _D_H_DEFAULT) -> PolicyParams:
    """Supervised warm-up: maximize log-likelihood of chosen responses.

    Returns the frozen reference parameters; steps=0 returns the seeded
    initialization untouched.
    """
    if not dataset:
        raise TrainingError("warm-up needs a non-empty dataset")
    params = init_policy_for(dataset, seed, d_h=d_h)
    rng = _rng(seed, _WARMUP_STREAM)
    order = np.arange(len(dataset))
    cursor = len(dataset)  # force an initial shuffle
    for _ in range(steps):
        batch = []
        for _ in range(min(batch_size, len(dataset))):
            if cursor >= len(dataset):
                rng.shuffle(order)
                cursor = 0
            batch.append(dataset[order[cursor]])
            cursor += 1
        grads = GradAccumulator(params)
        for pair in batch:
            upstream = np.zeros(params.vocab_size)
            upstream[pair.y_w] = -1.0  # minimize -log pi(y_w)
            grads.add(backward(params, pair.context, upstream))
        grads.scale(1.0 / len(batch))
        params = apply_gradient_step(params, grads, lr)
    return params


def _batches(pairs, batch_size: int):
    return [pairs[i : i + batch_size] for i in range(0, len(pairs), batch_size)]


def _epoch_schedule(groups: dict, cfg: TrainConfig, epoch: int):
    """Batch order for one epoch: strict visual/audio alternation, then any
    joint-audiovisual batches."""
    rng = _rng(cfg.seed, _ORDER_STREAM, epoch)
    shuffled = {}
    for tag, pairs in groups.items():
        order = np.arange(len(pairs))
        rng.shuffle(order)
        shuffled[tag] = [pairs[i] for i in order]

    if not cfg.alternate_batches:
        merged = [p for tag in ("visual_related", "audio_related", "audiovisual")
                  for p in shuffled.get(tag, [])]
        order = np.arange(len(merged))
        rng.shuffle(order)
        return _batches([merged[i] for i in order], cfg.batch_size)

    visual = _batches(shuffled.get("visual_related", []), cfg.batch_size)
    audio = _batches(shuffled.get("audio_related", []), cfg.batch_size)
    schedule = []
    for v, a in zip(visual, audio):
        schedule.extend((v, a))
    longer = visual if len(visual) > len(audio) else audio
    schedule.extend(longer[min(len(visual), len(audio)):])
    schedule.extend(_batches(shuffled.get("audiovisual", []), cfg.batch_size))
    return schedule


def train(dataset, cfg: TrainConfig, ref_params: PolicyParams = None) -> TrainResult:
    """Full preference-optimization run.

    Warm-up (unless reference params are supplied), then cfg.epochs passes
    of alternating modality batches.  Audiovisual-tagged pairs participate
    only under the mod_with_av variant and are excluded (with a count in
    the result) otherwise.  The reference is never modified.
    """
    if not dataset:
        raise TrainingError("training needs a non-empty dataset")

    groups: dict = {}
    for pair in dataset:
        groups.setdefault(pair.context.modality_tag, []).append(pair)
    n_av_excluded = 0
    if cfg.loss_variant != "mod_with_av" and "audiovisual" in groups:
        n_av_excluded = len(groups.pop("audiovisual"))
    if cfg.alternate_batches:
        missing = [t for t in ("visual_related", "audio_related") if not groups.get(t)]
        if missing:
            raise ConfigurationError(
                f"alternating batches need both modalities; dataset lacks {missing}"
            )

    if ref_params is None:
        ref_params = warmup_reference(dataset, cfg.warmup_steps, cfg.seed,
                                      lr=cfg.warmup_lr, batch_size=cfg.batch_size)
    ref_params = ref_params.copy()
    params = ref_params.copy()
    pools = feature_pools(dataset)

    losses = []
    counters = []
    step = 0
    for epoch in range(cfg.epochs):
        for batch in _epoch_schedule(groups, cfg, epoch):
            params, loss, counter = train_step(params, ref_params, batch, cfg, step, pools)
            losses.append(loss)
            counters.append(counter)
            step += 1
    return TrainResult(params=params, ref_params=ref_params, losses=np.array(losses),
                       counters=counters, n_av_excluded=n_av_excluded)


def desk_config(**overrides) -> TrainConfig:
    """Desk-scale defaults: the paper-sized strengths with a step size and
    epoch budget sized for the toy policy."""
    base = dict(lr=0.15, epochs=4, batch_size=16, warmup_steps=500, warmup_lr=0.5)
    base.update(overrides)
    return TrainConfig(**base)
