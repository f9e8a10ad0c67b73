"""Canonical desk-scale experiments.

Two experiment recipes are pinned here, both seed-parameterized so results
are quoted as means over fresh worlds:

``hallucination_benchmark``
    The reference is warmed up on matched-only scenes in which one modality
    of each corpus half carries heavy feature noise, so it enters preference
    training leaning on cross-modal shortcuts and an answer prior (the
    pathologies to be trained away).  Variants are then trained on one
    balanced matched+mismatched preference set under identical budgets and
    scored on conflict probes (mismatched contexts only).  The decoupled
    variant uses invariance-dominant desk strengths (see DESK_STRENGTHS):
    at this scale the invariance weight both raises the effective margin
    temperature and keeps training pressure on corruption-stable pairs,
    which is what separates it from the vanilla baseline here.

``shift_analysis``
    A milder world (symmetric warm-up noise, mixed-context evaluation) and
    the publication-default strengths, used for the log-likelihood shift
    phenomenology: the decoupled model should move a lot under
    relevant-modality corruption and little under irrelevant-modality
    corruption.

Budgets are equal across variants within an experiment (same lr, epochs,
batch size, seeds); only the loss differs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import eval as eval_mod
from . import synth
from . import train as training
from .core import Hyperparams
from .corrupt import CorruptionSpec
from .eval import MetricsReport
from .policy import PolicyParams

# Publication-default strengths.
PAPER_STRENGTHS = Hyperparams(beta=0.1, beta_inv=0.02, beta_sens=0.05, gamma_lpd=0.05)
# Desk-tuned strengths for the toy policy: invariance-dominant ordering.
# The single-token policy shares its answer logits across all prompts, so
# the sensitivity weight's margin credit mostly tracks the answer prior and
# stalls debiasing, while the invariance weight's margin discount keeps
# pressure on; tuning therefore lands with beta_inv above beta_sens here,
# the reverse of the full-scale recommendation.
DESK_STRENGTHS = Hyperparams(beta=0.1, beta_inv=0.08, beta_sens=0.02, gamma_lpd=0.02)
DPO_STRENGTHS = Hyperparams(beta=0.1, beta_inv=0.0, beta_sens=0.0, gamma_lpd=0.0)


@dataclass(frozen=True)
class ExperimentSpec:
    """World construction and training budget for one experiment family."""

    name: str
    warmup_noise_split: bool  # True: two halves with asymmetric feature noise
    warmup_bias: float
    train_matched_fraction: float
    train_bias: float
    eval_matched_fraction: float
    lr: float = 1.0
    epochs: int = 6
    batch_size: int = 16
    warmup_steps: int = 500
    warmup_lr: float = 0.5
    n_train: int = 2000
    n_eval: int = 2000
    n_scenes: int = 400


HALLUCINATION_BENCHMARK = ExperimentSpec(
    name="hallucination_benchmark",
    warmup_noise_split=True,
    warmup_bias=0.85,
    train_matched_fraction=0.5,
    train_bias=0.7,
    eval_matched_fraction=0.0,
)

SHIFT_ANALYSIS = ExperimentSpec(
    name="shift_analysis",
    warmup_noise_split=False,
    warmup_bias=0.7,
    train_matched_fraction=0.5,
    train_bias=0.5,
    eval_matched_fraction=0.5,
)


@dataclass
class VariantOutcome:
    name: str
    accuracy: float
    report: MetricsReport
    shift_relevant: float
    shift_irrelevant: float
    losses: np.ndarray = field(repr=False, default=None)
    params: PolicyParams = field(repr=False, default=None)


@dataclass
class BenchmarkRun:
    seed: int
    reference: VariantOutcome
    variants: dict


def build_world(spec: ExperimentSpec, seed: int):
    """(warmup pairs, training pairs, eval items, frozen reference)."""
    ws = 10_000 + seed
    if spec.warmup_noise_split:
        warmup = synth.generate_pairs(synth.SynthConfig(
            n_pairs=800, n_scenes=300, matched_fraction=1.0, matched_bias=spec.warmup_bias,
            presence_fraction=0.8, feature_noise=(0.05, 1.0), seed=seed * 4 + 1, world_seed=ws))
        warmup += synth.generate_pairs(synth.SynthConfig(
            n_pairs=800, n_scenes=300, matched_fraction=1.0, matched_bias=spec.warmup_bias,
            presence_fraction=0.8, feature_noise=(1.0, 0.05), seed=seed * 4 + 2, world_seed=ws))
    else:
        warmup = synth.generate_pairs(synth.SynthConfig(
            n_pairs=1500, n_scenes=spec.n_scenes, matched_fraction=1.0,
            matched_bias=spec.warmup_bias, presence_fraction=0.8,
            seed=seed * 4 + 1, world_seed=ws))
    train_pairs = synth.generate_pairs(synth.SynthConfig(
        n_pairs=spec.n_train, n_scenes=spec.n_scenes,
        matched_fraction=spec.train_matched_fraction, matched_bias=spec.train_bias,
        presence_fraction=0.7, seed=seed * 4 + 3, world_seed=ws))
    items = [eval_mod.item_from_record(rec) for rec in synth.generate_eval_records(
        synth.EvalConfig(n_items=spec.n_eval, n_scenes=spec.n_scenes,
                         matched_fraction=spec.eval_matched_fraction,
                         matched_bias=spec.train_bias, seed=seed * 4 + 4, world_seed=ws))]
    reference = training.warmup_reference(warmup, spec.warmup_steps, seed,
                                          lr=spec.warmup_lr, batch_size=spec.batch_size)
    return warmup, train_pairs, items, reference


def variant_config(spec: ExperimentSpec, name: str, seed: int,
                   corruption: CorruptionSpec = None) -> training.TrainConfig:
    hp = {"dpo": DPO_STRENGTHS, "modpp": PAPER_STRENGTHS, "modpp_desk": DESK_STRENGTHS}.get(name)
    if hp is None:
        raise KeyError(f"unknown experiment variant {name!r}")
    return training.TrainConfig(
        hp=hp, loss_variant="dpo" if name == "dpo" else "modpp",
        corruption=corruption or CorruptionSpec(),
        lr=spec.lr, epochs=spec.epochs, batch_size=spec.batch_size, seed=seed,
        warmup_steps=spec.warmup_steps, warmup_lr=spec.warmup_lr,
    )


def _outcome(name, params, items, shift_spec, losses=None) -> VariantOutcome:
    report = eval_mod.evaluate(params, items)
    rel = eval_mod.loglik_shift(params, items, shift_spec, "relevant")
    irr = eval_mod.loglik_shift(params, items, shift_spec, "irrelevant")
    return VariantOutcome(name=name, accuracy=report.accuracy, report=report,
                          shift_relevant=rel.mean_abs, shift_irrelevant=irr.mean_abs,
                          losses=losses, params=params)


def run_benchmark(spec: ExperimentSpec, seed: int, variants=("dpo", "modpp_desk"),
                  corruption_overrides=None, compute_shifts=True) -> BenchmarkRun:
    """Train the requested variants from one shared reference and score them."""
    corruption_overrides = corruption_overrides or {}
    shift_spec = CorruptionSpec(kind="diffusion", t=500, seed=seed)
    _, train_pairs, items, reference = build_world(spec, seed)

    def outcome(name, params, losses=None):
        if compute_shifts:
            return _outcome(name, params, items, shift_spec, losses)
        report = eval_mod.evaluate(params, items)
        return VariantOutcome(name=name, accuracy=report.accuracy, report=report,
                              shift_relevant=float("nan"), shift_irrelevant=float("nan"),
                              losses=losses, params=params)

    run = BenchmarkRun(seed=seed, reference=outcome("reference", reference), variants={})
    for name in variants:
        cfg = variant_config(spec, name, seed, corruption_overrides.get(name))
        result = training.train(train_pairs, cfg, ref_params=reference)
        run.variants[name] = outcome(name, result.params, result.losses)
    return run


def seed_averaged(runs, attribute: str) -> dict:
    """Mean of an outcome attribute across runs, including the reference."""
    out = {"reference": float(np.mean([getattr(r.reference, attribute) for r in runs]))}
    for name in runs[0].variants:
        out[name] = float(np.mean([getattr(r.variants[name], attribute) for r in runs]))
    return out
