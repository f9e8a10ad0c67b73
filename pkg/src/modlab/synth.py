"""Synthetic audiovisual world and preference-data pipeline.

A deterministic world oracle stands in for external annotation models:
scenes are small sets of entities with visible/sounding flags, and feature
vectors are sums of per-kind signature vectors plus seeded noise, so the
correct answer to a modality question is decodable from the corresponding
feature vector (and not from the other one).

The pipeline mirrors a three-stage construction:

    1. scenes are generated with disentangled audio/visual ground truth;
    2. entities are classified into a five-way taxonomy from which yes/no
       presence questions and their answers follow mechanically;
    3. preference pairs get a hard-negative rejected response: the answer
       implied by the *other* modality's content, which contradicts the
       relevant modality's ground truth (mismatched audio/visual contexts
       make such contradictions common).

Response vocabulary (size 8): id 0 = "yes", id 1 = "no", ids 2..7 are
caption summaries; caption questions are therefore a V-way choice whose
correct slot is a deterministic function of the active entity set.

Dataset files are line-delimited JSON, one record per line, with keys in
this fixed order (format version 1):

    visual_scene, audio_scene, question_kind, prompt_id, modality_tag,
    matched, y_w, y_l, audio_feat, visual_feat

Evaluation-item files use the same conventions with ``ground_truth`` and
``task_group`` in place of ``y_w``/``y_l``.  A sidecar JSON file
(``<path>.stats.json``) stores the generation parameters needed by the
verifier plus summary statistics.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .policy import ModalityContext

FORMAT_VERSION = 1

# Response vocabulary layout.
VOCAB_SIZE = 8
YES_ID = 0
NO_ID = 1
CAPTION_BASE = 2
N_CAPTION_SLOTS = VOCAB_SIZE - CAPTION_BASE

# Entity kinds: ids below N_OBJECT_KINDS are objects (things that can be
# seen and may or may not make sound); the rest are pure sound events.
KIND_NAMES = ("dog", "engine", "bell", "person", "music", "siren")
N_ENTITY_KINDS = len(KIND_NAMES)
N_OBJECT_KINDS = 4

FEATURE_DIM = 8
FEATURE_NOISE = 0.05

ENTITY_CATEGORIES = (
    "in_view_sound_source",
    "in_view_sound",
    "in_view_silent_object",
    "out_of_view_sound_source",
    "out_of_view_sound",
)

QUESTION_KINDS = ("visual_presence", "audio_presence", "visual_caption", "audio_caption")
# Evaluation files may additionally carry audiovisual matching probes.
EVAL_QUESTION_KINDS = QUESTION_KINDS + ("av_matching",)

TASK_GROUPS = ("adv_hallucination", "vda_hallucination", "matching", "dominance")

# Prompt table: ids 0..5 visual presence per kind, 6..11 audio presence per
# kind, 12/13 the two caption prompts, 14 the audiovisual matching prompt.
VISUAL_PRESENCE_BASE = 0
AUDIO_PRESENCE_BASE = N_ENTITY_KINDS
VISUAL_CAPTION_PROMPT = 2 * N_ENTITY_KINDS
AUDIO_CAPTION_PROMPT = VISUAL_CAPTION_PROMPT + 1
AV_MATCHING_PROMPT = VISUAL_CAPTION_PROMPT + 2
N_PROMPTS = AV_MATCHING_PROMPT + 1

PROMPT_TEXTS = tuple(
    [f"Can you see the {name} in the video?" for name in KIND_NAMES]
    + [f"Can you hear the {name} in the audio?" for name in KIND_NAMES]
    + [
        "Describe what is visible.",
        "Describe what is audible.",
        "Do the audio and the video belong together?",
    ]
)

# Seed-stream tags so scenes, pairs and eval items draw from disjoint
# deterministic streams.
_SCENE_STREAM = 1
_PAIR_STREAM = 2
_EVAL_STREAM = 3
_SIGNATURE_STREAM = 4

RECORD_FIELDS = (
    "visual_scene",
    "audio_scene",
    "question_kind",
    "prompt_id",
    "modality_tag",
    "matched",
    "y_w",
    "y_l",
    "audio_feat",
    "visual_feat",
)


class WorldError(ValueError):
    """Invalid entity/scene construction or infeasible generation config."""


def kind_of(entity_id: int) -> str:
    if not (0 <= entity_id < N_ENTITY_KINDS):
        raise WorldError(f"entity_id must be in [0, {N_ENTITY_KINDS}), got {entity_id}")
    return "object" if entity_id < N_OBJECT_KINDS else "pure_sound"


@dataclass(frozen=True)
class Entity:
    """One entity kind in a scene with its perceptual footprint flags."""

    entity_id: int
    visible: bool
    sounding: bool

    def __post_init__(self):
        kind_of(self.entity_id)
        if not (self.visible or self.sounding):
            raise WorldError("an entity must be visible or sounding (or both)")


@dataclass(frozen=True)
class Scene:
    scene_id: int
    entities: tuple
    audio_feat: np.ndarray
    visual_feat: np.ndarray

    def __post_init__(self):
        if not (1 <= len(self.entities) <= 4):
            raise WorldError(f"scenes hold 1-4 entities, got {len(self.entities)}")


@dataclass(frozen=True)
class PreferencePair:
    """One training record: context, chosen/rejected response ids, lineage."""

    context: ModalityContext
    question_kind: str
    y_w: int
    y_l: int
    matched: bool
    scene_refs: tuple  # (visual scene_id, audio scene_id)

    def __post_init__(self):
        if self.y_w == self.y_l:
            raise WorldError("chosen and rejected responses must differ")
        if self.matched != (self.scene_refs[0] == self.scene_refs[1]):
            raise WorldError("matched flag inconsistent with scene_refs")


def classify_entity(e: Entity, kind: str) -> str:
    """Five-way taxonomy from (visible, sounding, object-vs-pure-sound)."""
    if kind not in ("object", "pure_sound"):
        raise WorldError(f"kind must be 'object' or 'pure_sound', got {kind!r}")
    if not (e.visible or e.sounding):
        raise WorldError("invalid flag combination: neither visible nor sounding")
    if kind == "object":
        if e.visible and e.sounding:
            return "in_view_sound_source"
        if e.visible:
            return "in_view_silent_object"
        return "out_of_view_sound_source"
    # Pure sounds always sound; "visible" means the sound's source is on
    # screen.
    if not e.sounding:
        raise WorldError("invalid flag combination: a silent pure sound")
    return "in_view_sound" if e.visible else "out_of_view_sound"


# (category, question_kind) -> "yes" / "no"; combinations not listed are
# never emitted as questions.
_ANSWER_TABLE = {
    ("in_view_sound_source", "visual_presence"): "yes",
    ("out_of_view_sound_source", "visual_presence"): "no",
    ("out_of_view_sound", "visual_presence"): "no",
    ("in_view_sound_source", "audio_presence"): "yes",
    ("in_view_sound", "audio_presence"): "yes",
    ("in_view_silent_object", "audio_presence"): "no",
}


def answer_for(category: str, question_kind: str):
    """Ground-truth answer, or None as a skip signal for unmapped combos."""
    if category not in ENTITY_CATEGORIES:
        raise WorldError(f"unknown category {category!r}")
    if question_kind not in ("visual_presence", "audio_presence"):
        raise WorldError(f"answer_for handles presence questions, got {question_kind!r}")
    return _ANSWER_TABLE.get((category, question_kind))


class GroundTruthAnnotator:
    """Reads entity flags directly; the pluggable stand-in for external
    annotation models (swap in any object with the same two methods)."""

    def visible_kinds(self, scene: Scene) -> frozenset:
        return frozenset(e.entity_id for e in scene.entities if e.visible)

    def sounding_kinds(self, scene: Scene) -> frozenset:
        return frozenset(e.entity_id for e in scene.entities if e.sounding)


GROUND_TRUTH = GroundTruthAnnotator()


# ---------------------------------------------------------------------------
# World generation


def _rng(*key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(key)))


def build_signatures(world_seed: int):
    """Per-kind signature vectors, orthonormal rows from a seeded QR."""
    rng = _rng(world_seed, _SIGNATURE_STREAM)
    sigs = []
    for _ in range(2):  # audio then visual
        q, _ = np.linalg.qr(rng.standard_normal((FEATURE_DIM, FEATURE_DIM)))
        sigs.append(q[:N_ENTITY_KINDS])
    return sigs[0], sigs[1]


def _bias_for(matched_bias, kind: int) -> float:
    if np.isscalar(matched_bias):
        return float(matched_bias)
    return float(matched_bias[kind])


def generate_scene(scene_id: int, seed: int, signatures, matched_bias=0.5,
                   feature_noise=FEATURE_NOISE) -> Scene:
    """One scene from a per-scene derived stream.

    Object entities of kind k are visible-and-sounding with probability
    matched_bias (a scalar, or one value per kind), otherwise visible-only
    or sounding-only with equal odds: the per-kind co-occurrence rate
    decides how informative the wrong-modality shortcut is.  Pure sounds
    use the same value as their in-view probability.
    """
    audio_sigs, visual_sigs = signatures
    rng = _rng(seed, _SCENE_STREAM, scene_id)
    n_entities = int(rng.integers(1, 5))
    kinds = rng.choice(N_ENTITY_KINDS, size=n_entities, replace=False)
    entities = []
    for k in sorted(int(k) for k in kinds):
        bias = _bias_for(matched_bias, k)
        if kind_of(k) == "object":
            u = rng.random()
            rest = (1.0 - bias) / 2.0
            if u < bias:
                visible, sounding = True, True
            elif u < bias + rest:
                visible, sounding = True, False
            else:
                visible, sounding = False, True
        else:
            visible, sounding = bool(rng.random() < bias), True
        entities.append(Entity(k, visible, sounding))

    audio = np.zeros(FEATURE_DIM)
    visual = np.zeros(FEATURE_DIM)
    for e in entities:
        if e.sounding:
            audio += audio_sigs[e.entity_id]
        if e.visible:
            visual += visual_sigs[e.entity_id]
    if np.isscalar(feature_noise):
        audio_noise = visual_noise = float(feature_noise)
    else:
        audio_noise, visual_noise = (float(v) for v in feature_noise)
    audio += audio_noise * rng.standard_normal(FEATURE_DIM)
    visual += visual_noise * rng.standard_normal(FEATURE_DIM)
    return Scene(scene_id, tuple(entities), audio, visual)


def generate_scenes(n_scenes: int, seed: int, world_seed: int, matched_bias=0.5,
                    feature_noise=FEATURE_NOISE):
    if n_scenes < 1:
        raise WorldError("need at least one scene")
    signatures = build_signatures(world_seed)
    return [generate_scene(i, seed, signatures, matched_bias, feature_noise)
            for i in range(n_scenes)]


# ---------------------------------------------------------------------------
# Question construction


def prompt_for(question_kind: str, target_kind=None) -> int:
    if question_kind == "visual_presence":
        return VISUAL_PRESENCE_BASE + int(target_kind)
    if question_kind == "audio_presence":
        return AUDIO_PRESENCE_BASE + int(target_kind)
    if question_kind == "visual_caption":
        return VISUAL_CAPTION_PROMPT
    if question_kind == "audio_caption":
        return AUDIO_CAPTION_PROMPT
    if question_kind == "av_matching":
        return AV_MATCHING_PROMPT
    raise WorldError(f"unknown question kind {question_kind!r}")


def tag_for(question_kind: str) -> str:
    if question_kind.startswith("visual"):
        return "visual_related"
    if question_kind.startswith("audio"):
        return "audio_related"
    return "audiovisual"


def caption_slot(active_kinds) -> int:
    """Vocabulary id summarizing an active entity set (V-way caption)."""
    mask = 0
    for k in active_kinds:
        mask |= 1 << int(k)
    return CAPTION_BASE + (mask % N_CAPTION_SLOTS)


def _composite_entity(kind: int, visible: bool, sounding: bool):
    """Entity as it exists in a (possibly mismatched) audiovisual context;
    None when the flags are not a classifiable combination."""
    if not (visible or sounding):
        return None
    if kind_of(kind) == "pure_sound" and not sounding:
        return None
    return Entity(kind, visible, sounding)


def presence_candidates(visual_scene: Scene, audio_scene: Scene, question_kind: str,
                        annotator=GROUND_TRUTH):
    """Kinds eligible for a presence question in this context, with answers.

    Visibility is read from the visual scene and audibility from the audio
    scene, which is exactly what a (possibly mismatched) context presents.
    Returns a sorted list of (kind, answer) pairs.
    """
    visible = annotator.visible_kinds(visual_scene)
    sounding = annotator.sounding_kinds(audio_scene)
    out = []
    for k in sorted(visible | sounding):
        e = _composite_entity(k, k in visible, k in sounding)
        if e is None:
            continue
        answer = answer_for(classify_entity(e, kind_of(k)), question_kind)
        if answer is not None:
            out.append((k, answer))
    return out


def _answer_id(answer: str) -> int:
    return YES_ID if answer == "yes" else NO_ID


def _invert(answer_id: int) -> int:
    return NO_ID if answer_id == YES_ID else YES_ID


def oracle_responses(visual_scene: Scene, audio_scene: Scene, question_kind: str,
                     target_kind=None, annotator=GROUND_TRUTH):
    """(y_w, y_l) the pipeline must produce for this question, or None.

    Presence: y_w is the relevant modality's ground truth and y_l is its
    inversion, which coincides with the answer suggested by the irrelevant
    modality's footprint for every eligible category.  Captions: y_w is the
    caption slot of the relevant scene's active set, y_l the slot describing
    the other modality's content (shifted by one slot on collision so the
    rejected response always contradicts the ground truth).
    """
    if question_kind in ("visual_presence", "audio_presence"):
        candidates = dict(presence_candidates(visual_scene, audio_scene, question_kind, annotator))
        if target_kind not in candidates:
            return None
        y_w = _answer_id(candidates[target_kind])
        return y_w, _invert(y_w)
    if question_kind == "visual_caption":
        active = annotator.visible_kinds(visual_scene)
        other = annotator.sounding_kinds(audio_scene)
    elif question_kind == "audio_caption":
        active = annotator.sounding_kinds(audio_scene)
        other = annotator.visible_kinds(visual_scene)
    else:
        raise WorldError(f"no oracle for question kind {question_kind!r}")
    if not active:
        return None
    y_w = caption_slot(active)
    y_l = caption_slot(other)
    if y_l == y_w:
        y_l = CAPTION_BASE + ((y_l - CAPTION_BASE + 1) % N_CAPTION_SLOTS)
    return y_w, y_l


def context_for(visual_scene: Scene, audio_scene: Scene, question_kind: str,
                target_kind=None) -> ModalityContext:
    return ModalityContext(
        audio=audio_scene.audio_feat,
        visual=visual_scene.visual_feat,
        prompt_id=prompt_for(question_kind, target_kind),
        modality_tag=tag_for(question_kind),
    )


def build_pair(visual_scene: Scene, audio_scene: Scene, question_kind: str,
               rng: np.random.Generator, annotator=GROUND_TRUTH):
    """One preference pair, or None when the context has no eligible target."""
    if question_kind in ("visual_presence", "audio_presence"):
        candidates = presence_candidates(visual_scene, audio_scene, question_kind, annotator)
        if not candidates:
            return None
        target, _ = candidates[int(rng.integers(len(candidates)))]
    else:
        target = None
    responses = oracle_responses(visual_scene, audio_scene, question_kind, target, annotator)
    if responses is None:
        return None
    y_w, y_l = responses
    return PreferencePair(
        context=context_for(visual_scene, audio_scene, question_kind, target),
        question_kind=question_kind,
        y_w=y_w,
        y_l=y_l,
        matched=visual_scene.scene_id == audio_scene.scene_id,
        scene_refs=(visual_scene.scene_id, audio_scene.scene_id),
    )


# ---------------------------------------------------------------------------
# Dataset assembly


@dataclass(frozen=True)
class SynthConfig:
    """Knobs of the data generator.

    presence_fraction controls the presence-vs-caption task mix (presence
    is the majority by default); within each half the visual and audio
    variants are split evenly.  world_seed fixes the signature vectors so
    separately generated train/eval files can describe the same world.
    matched_bias is the co-occurrence rate of visible-and-sounding objects
    inside a scene.
    """

    n_pairs: int = 2000
    n_scenes: int = 500
    matched_fraction: float = 0.5
    presence_fraction: float = 0.7
    matched_bias: object = 0.5  # scalar or one co-occurrence rate per kind
    feature_noise: object = FEATURE_NOISE  # scalar or (audio, visual)
    seed: int = 0
    world_seed: int = 7

    def __post_init__(self):
        if not np.isscalar(self.matched_bias):
            object.__setattr__(self, "matched_bias", tuple(float(b) for b in self.matched_bias))
        if not np.isscalar(self.feature_noise):
            object.__setattr__(self, "feature_noise", tuple(float(v) for v in self.feature_noise))
        if self.n_pairs < 1 or self.n_scenes < 1:
            raise WorldError("n_pairs and n_scenes must be positive")
        if not (0.0 <= self.matched_fraction <= 1.0):
            raise WorldError("matched_fraction must lie in [0, 1]")
        if not (0.0 <= self.presence_fraction <= 1.0):
            raise WorldError("presence_fraction must lie in [0, 1]")
        if self.matched_fraction < 1.0 and self.n_scenes < 2:
            raise WorldError("mismatched contexts need at least two scenes")


def _exact_allocation(n: int, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Boolean vector with round(n * fraction) True entries, shuffled."""
    flags = np.zeros(n, dtype=bool)
    flags[: int(round(n * fraction))] = True
    rng.shuffle(flags)
    return flags


def _question_allocation(cfg: SynthConfig, rng: np.random.Generator):
    n_presence = int(round(cfg.n_pairs * cfg.presence_fraction))
    kinds = []
    for i in range(n_presence):
        kinds.append("visual_presence" if i % 2 == 0 else "audio_presence")
    for i in range(cfg.n_pairs - n_presence):
        kinds.append("visual_caption" if i % 2 == 0 else "audio_caption")
    kinds = np.array(kinds)
    rng.shuffle(kinds)
    return kinds


def _draw_scene_pair(scenes, matched: bool, rng: np.random.Generator):
    i = int(rng.integers(len(scenes)))
    if matched:
        return scenes[i], scenes[i]
    j = int(rng.integers(len(scenes) - 1))
    if j >= i:
        j += 1
    return scenes[i], scenes[j]


def generate_pairs(cfg: SynthConfig, annotator=GROUND_TRUTH):
    """Deterministic list of preference pairs for a config."""
    scenes = generate_scenes(cfg.n_scenes, cfg.seed, cfg.world_seed, cfg.matched_bias,
                             cfg.feature_noise)
    alloc_rng = _rng(cfg.seed, _PAIR_STREAM, 0)
    matched_flags = _exact_allocation(cfg.n_pairs, cfg.matched_fraction, alloc_rng)
    question_kinds = _question_allocation(cfg, alloc_rng)
    pairs = []
    for i in range(cfg.n_pairs):
        rng = _rng(cfg.seed, _PAIR_STREAM, i + 1)
        pair = None
        for _ in range(200):
            visual_scene, audio_scene = _draw_scene_pair(scenes, bool(matched_flags[i]), rng)
            pair = build_pair(visual_scene, audio_scene, str(question_kinds[i]), rng, annotator)
            if pair is not None:
                break
        if pair is None:
            raise WorldError(
                f"could not realize a {question_kinds[i]} pair after 200 attempts; "
                "the scene pool is too small or too sparse"
            )
        pairs.append(pair)
    return pairs


def pair_record(pair: PreferencePair) -> dict:
    return {
        "visual_scene": pair.scene_refs[0],
        "audio_scene": pair.scene_refs[1],
        "question_kind": pair.question_kind,
        "prompt_id": pair.context.prompt_id,
        "modality_tag": pair.context.modality_tag,
        "matched": pair.matched,
        "y_w": pair.y_w,
        "y_l": pair.y_l,
        "audio_feat": [float(v) for v in pair.context.audio],
        "visual_feat": [float(v) for v in pair.context.visual],
    }


def pair_from_record(rec: dict) -> PreferencePair:
    ctx = ModalityContext(
        audio=np.array(rec["audio_feat"], dtype=np.float64),
        visual=np.array(rec["visual_feat"], dtype=np.float64),
        prompt_id=int(rec["prompt_id"]),
        modality_tag=rec["modality_tag"],
    )
    return PreferencePair(
        context=ctx,
        question_kind=rec["question_kind"],
        y_w=int(rec["y_w"]),
        y_l=int(rec["y_l"]),
        matched=bool(rec["matched"]),
        scene_refs=(int(rec["visual_scene"]), int(rec["audio_scene"])),
    )


def dataset_stats(pairs, cfg: SynthConfig) -> dict:
    question_counts: dict = {}
    tag_counts: dict = {}
    answers = {"yes": 0, "no": 0}
    matched = 0
    for p in pairs:
        question_counts[p.question_kind] = question_counts.get(p.question_kind, 0) + 1
        tag = p.context.modality_tag
        tag_counts[tag] = tag_counts.get(tag, 0) + 1
        matched += int(p.matched)
        if p.y_w == YES_ID:
            answers["yes"] += 1
        elif p.y_w == NO_ID:
            answers["no"] += 1
    return {
        "format_version": FORMAT_VERSION,
        "kind": "preference",
        "seed": cfg.seed,
        "world_seed": cfg.world_seed,
        "n_scenes": cfg.n_scenes,
        "matched_bias": cfg.matched_bias,
        "feature_noise": cfg.feature_noise,
        "n_records": len(pairs),
        "matched_records": matched,
        "matched_ratio": matched / len(pairs) if pairs else 0.0,
        "question_kind_counts": dict(sorted(question_counts.items())),
        "modality_tag_counts": dict(sorted(tag_counts.items())),
        "presence_answer_balance": answers,
    }


def stats_path(path) -> str:
    return str(path) + ".stats.json"


def _write_jsonl(path, records) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)) or ".", exist_ok=True)
    with open(path, "w", encoding="ascii") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def assemble_dataset(cfg: SynthConfig, path, annotator=GROUND_TRUTH) -> dict:
    """Generate, write (records plus sidecar stats), and return the stats."""
    pairs = generate_pairs(cfg, annotator)
    _write_jsonl(path, (pair_record(p) for p in pairs))
    stats = dataset_stats(pairs, cfg)
    with open(stats_path(path), "w", encoding="ascii") as fh:
        fh.write(json.dumps(stats, indent=2, sort_keys=True) + "\n")
    return stats


def load_pairs(path):
    pairs = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if line:
                pairs.append(pair_from_record(json.loads(line)))
    return pairs


# ---------------------------------------------------------------------------
# Verification


@dataclass
class VerifyReport:
    n_records: int = 0
    n_violations: int = 0
    violations: list = field(default_factory=list)  # (line number, reason)
    parse_errors: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.n_violations == 0 and not self.parse_errors

    def add_violation(self, line_no: int, reason: str) -> None:
        self.n_violations += 1
        self.violations.append((line_no, reason))


def _check_record(rec: dict, scenes, annotator) -> list:
    problems = []
    qk = rec["question_kind"]
    if qk not in QUESTION_KINDS:
        return [f"unknown question_kind {qk!r}"]
    visual_scene = scenes[int(rec["visual_scene"])]
    audio_scene = scenes[int(rec["audio_scene"])]
    matched = visual_scene.scene_id == audio_scene.scene_id
    if bool(rec["matched"]) != matched:
        problems.append("matched flag inconsistent with scene references")
    if rec["modality_tag"] != tag_for(qk):
        problems.append("modality_tag inconsistent with question_kind")
    target = None
    if qk in ("visual_presence", "audio_presence"):
        base = VISUAL_PRESENCE_BASE if qk == "visual_presence" else AUDIO_PRESENCE_BASE
        target = int(rec["prompt_id"]) - base
        if not (0 <= target < N_ENTITY_KINDS):
            return problems + ["prompt_id outside the presence-prompt range"]
    elif int(rec["prompt_id"]) != prompt_for(qk):
        problems.append("prompt_id inconsistent with question_kind")
    expected = oracle_responses(visual_scene, audio_scene, qk, target, annotator)
    if expected is None:
        problems.append("question has no eligible target in this context")
        return problems
    y_w_true, _ = expected
    if int(rec["y_w"]) != y_w_true:
        problems.append(f"stored y_w={rec['y_w']} but the oracle answer is {y_w_true}")
    if int(rec["y_l"]) == y_w_true:
        problems.append("rejected response agrees with the ground truth")
    if not np.allclose(rec["audio_feat"], audio_scene.audio_feat, atol=0):
        problems.append("audio features do not match the referenced scene")
    if not np.allclose(rec["visual_feat"], visual_scene.visual_feat, atol=0):
        problems.append("visual features do not match the referenced scene")
    return problems


def verify_dataset(path, annotator=GROUND_TRUTH) -> VerifyReport:
    """Re-derive every record from the world oracle and report violations.

    Confirms the stored chosen response, that the rejected response
    contradicts the relevant modality's ground truth, the matched flag,
    and the inline features.  Parse failures are reported per line and do
    not abort the scan.
    """
    report = VerifyReport()
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln for ln in (raw.strip() for raw in fh) if ln]
    if not lines:
        return report

    try:
        with open(stats_path(path), "r", encoding="ascii") as fh:
            meta = json.load(fh)
        scenes = generate_scenes(
            int(meta["n_scenes"]), int(meta["seed"]), int(meta["world_seed"]),
            meta.get("matched_bias", 0.5), meta.get("feature_noise", FEATURE_NOISE),
        )
    except (OSError, KeyError, ValueError) as exc:
        report.parse_errors.append((0, f"cannot rebuild the world from sidecar stats: {exc}"))
        return report

    for line_no, line in enumerate(lines, start=1):
        try:
            rec = json.loads(line)
            report.n_records += 1
            for reason in _check_record(rec, scenes, annotator):
                report.add_violation(line_no, reason)
        except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
            report.parse_errors.append((line_no, str(exc)))
    return report


# ---------------------------------------------------------------------------
# Evaluation items


@dataclass(frozen=True)
class EvalConfig:
    """Generator knobs for the balanced yes/no evaluation benchmark.

    Presence items probe one modality about an entity that has a footprint
    in the other ("adv_hallucination" for visual questions about audible
    targets, "vda_hallucination" for audio questions about visible ones).
    Optional extras: "matching" probes (is the audio from the same scene
    as the video?) and "dominance" probes (questions about entities absent
    from both modalities, where only priors can mislead).
    """

    n_items: int = 2000
    n_scenes: int = 500
    matched_fraction: float = 0.5
    matched_bias: float = 0.5
    matched_bias: object = 0.5
    matching_fraction: float = 0.0
    dominance_fraction: float = 0.0
    feature_noise: object = FEATURE_NOISE
    seed: int = 0
    world_seed: int = 7

    def __post_init__(self):
        if not np.isscalar(self.matched_bias):
            object.__setattr__(self, "matched_bias", tuple(float(b) for b in self.matched_bias))
        if not np.isscalar(self.feature_noise):
            object.__setattr__(self, "feature_noise", tuple(float(v) for v in self.feature_noise))
        if self.n_items < 2:
            raise WorldError("need at least two eval items")
        if self.matching_fraction + self.dominance_fraction > 1.0:
            raise WorldError("matching and dominance fractions exceed the item budget")


def eval_record(visual_scene, audio_scene, question_kind, target, ground_truth, task_group):
    return {
        "visual_scene": visual_scene.scene_id,
        "audio_scene": audio_scene.scene_id,
        "question_kind": question_kind,
        "prompt_id": prompt_for(question_kind, target),
        "modality_tag": tag_for(question_kind),
        "matched": visual_scene.scene_id == audio_scene.scene_id,
        "ground_truth": ground_truth,
        "task_group": task_group,
        "audio_feat": [float(v) for v in audio_scene.audio_feat],
        "visual_feat": [float(v) for v in visual_scene.visual_feat],
    }


def generate_eval_records(cfg: EvalConfig, annotator=GROUND_TRUTH):
    """Evaluation records with an exactly balanced yes/no ground truth."""
    scenes = generate_scenes(cfg.n_scenes, cfg.seed, cfg.world_seed, cfg.matched_bias,
                             cfg.feature_noise)
    n_matching = int(round(cfg.n_items * cfg.matching_fraction))
    n_dominance = int(round(cfg.n_items * cfg.dominance_fraction))
    n_presence = cfg.n_items - n_matching - n_dominance
    quota = {"yes": cfg.n_items // 2, "no": cfg.n_items - cfg.n_items // 2}
    # Matching items answer "yes" exactly when matched; dominance items are
    # always "no".  Reserve their ground truths up front.
    records = []

    def consume(answer: str) -> bool:
        if quota[answer] <= 0:
            return False
        quota[answer] -= 1
        return True

    item_index = 0

    def next_rng():
        nonlocal item_index
        rng = _rng(cfg.seed, _EVAL_STREAM, item_index)
        item_index += 1
        return rng

    for i in range(n_matching):
        for _ in range(500):
            rng = next_rng()
            want_yes = quota["yes"] >= quota["no"]
            visual_scene, audio_scene = _draw_scene_pair(scenes, want_yes, rng)
            answer = "yes" if visual_scene.scene_id == audio_scene.scene_id else "no"
            if consume(answer):
                records.append(eval_record(visual_scene, audio_scene, "av_matching",
                                           None, answer, "matching"))
                break
        else:
            raise WorldError("could not satisfy the matching-item quota")

    for i in range(n_dominance):
        if not consume("no"):
            raise WorldError("dominance items need 'no' budget; lower dominance_fraction")
        for _ in range(500):
            rng = next_rng()
            visual_scene, audio_scene = _draw_scene_pair(
                scenes, bool(rng.random() < cfg.matched_fraction), rng)
            present = (annotator.visible_kinds(visual_scene)
                       | annotator.sounding_kinds(audio_scene))
            absent = [k for k in range(N_ENTITY_KINDS) if k not in present]
            if not absent:
                continue
            target = absent[int(rng.integers(len(absent)))]
            qk = "visual_presence" if i % 2 == 0 else "audio_presence"
            if kind_of(target) == "pure_sound" and qk == "visual_presence":
                qk = "audio_presence"
            records.append(eval_record(visual_scene, audio_scene, qk, target, "no", "dominance"))
            break
        else:
            raise WorldError("could not satisfy the dominance-item quota")

    matched_flags = _exact_allocation(n_presence, cfg.matched_fraction,
                                      _rng(cfg.seed, _EVAL_STREAM, 10 ** 6))
    for i in range(n_presence):
        qk = "visual_presence" if i % 2 == 0 else "audio_presence"
        group = "adv_hallucination" if qk == "visual_presence" else "vda_hallucination"
        for _ in range(500):
            rng = next_rng()
            visual_scene, audio_scene = _draw_scene_pair(scenes, bool(matched_flags[i]), rng)
            candidates = presence_candidates(visual_scene, audio_scene, qk, annotator)
            rng.shuffle(candidates)
            placed = False
            for target, answer in candidates:
                if consume(answer):
                    records.append(eval_record(visual_scene, audio_scene, qk,
                                               target, answer, group))
                    placed = True
                    break
            if placed:
                break
        else:
            raise WorldError("could not balance the presence items; enlarge the scene pool")
    return records


def eval_stats(records, cfg: EvalConfig) -> dict:
    groups: dict = {}
    answers = {"yes": 0, "no": 0}
    for rec in records:
        groups[rec["task_group"]] = groups.get(rec["task_group"], 0) + 1
        answers[rec["ground_truth"]] += 1
    return {
        "format_version": FORMAT_VERSION,
        "kind": "eval",
        "seed": cfg.seed,
        "world_seed": cfg.world_seed,
        "n_scenes": cfg.n_scenes,
        "matched_bias": cfg.matched_bias,
        "feature_noise": cfg.feature_noise,
        "n_records": len(records),
        "task_group_counts": dict(sorted(groups.items())),
        "answer_balance": answers,
    }


def assemble_eval_items(cfg: EvalConfig, path, annotator=GROUND_TRUTH) -> dict:
    records = generate_eval_records(cfg, annotator)
    _write_jsonl(path, records)
    stats = eval_stats(records, cfg)
    with open(stats_path(path), "w", encoding="ascii") as fh:
        fh.write(json.dumps(stats, indent=2, sort_keys=True) + "\n")
    return stats
