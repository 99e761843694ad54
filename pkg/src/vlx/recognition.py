"""Recognition applications built from the extractors.

Object class / feature / location, binary and character states, affordance
parts, spatial relations, and stepwise refinement (ground, crop, ask again).
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .backend.base import Backend, GroundingBox
from .errors import EmptyInput, GroundingEmpty, PreconditionError
from .extractors import (
    BinaryResult,
    ChoiceDistribution,
    ChoiceResult,
    ChoiceSet,
    Decision,
    DecisionPolicy,
    ask_grid,
    crop,
    run_bvqa,
    run_itr,
    run_mvqa,
    run_mvqa_freeform,
    run_vg,
)
from .image import ImageBuffer
from .text import normalize_answer
from .variation import DEFAULT_ARTICLES, NoiseConfig, QuestionTemplate, make_query_grid

CLASS_TEMPLATE = "what object is included in {art} image?"
FEATURE_TEMPLATES = {
    "shape": "what shape is {art} object?",
    "color": "what color is {art} object?",
    "size": "how big is {art} object?",
}
RELATION_TEMPLATE = "what is the relative relationship between {art} {a} and {b}?"
DEFAULT_RELATIONS = ("on top of", "in front of", "next to", "under", "on")


class Kind(str, Enum):
    OBJECT_CLASS = "object_class"
    FEATURE = "feature"
    LOCATION = "location"
    STATE_BINARY = "state_binary"
    STATE_CHARACTER = "state_character"
    AFFORDANCE = "affordance"
    RELATION = "relation"


class Method(str, Enum):
    BVQA = "bvqa"
    MVQA = "mvqa"
    ITR = "itr"
    VG = "vg"


LEGAL_METHODS = {
    Kind.OBJECT_CLASS: {Method.MVQA, Method.ITR},
    Kind.FEATURE: {Method.MVQA, Method.ITR},
    Kind.LOCATION: {Method.VG},
    Kind.STATE_BINARY: {Method.BVQA, Method.ITR},
    Kind.STATE_CHARACTER: {Method.MVQA},
    Kind.AFFORDANCE: {Method.VG},
    Kind.RELATION: {Method.MVQA},
}


@dataclass(frozen=True)
class RelationLexicon:
    """Preposition phrases, kept longest-first so ``"on top of"`` wins over ``"on"``."""

    phrases: tuple[str, ...] = DEFAULT_RELATIONS

    def __post_init__(self):
        normalized = [" ".join(normalize_answer(p)) for p in self.phrases]
        if not normalized or any(not p for p in normalized):
            raise PreconditionError("relation lexicon needs non-empty phrases")
        if len(set(normalized)) != len(normalized):
            raise PreconditionError(f"duplicate relation phrases: {self.phrases}")
        ordered = sorted(normalized, key=lambda p: (-len(p.split()), -len(p)))
        object.__setattr__(self, "phrases", tuple(ordered))

    def find(self, answer: str) -> str | None:
        tokens = normalize_answer(answer)
        for phrase in self.phrases:
            needle = phrase.split()
            n = len(needle)
            if any(tokens[i:i + n] == needle for i in range(len(tokens) - n + 1)):
                return phrase
        return None


@dataclass(frozen=True)
class SuiteSettings:
    noise: NoiseConfig = NoiseConfig()
    articles: tuple[str, ...] = DEFAULT_ARTICLES
    policy: DecisionPolicy = DecisionPolicy()
    itr_temperature: float = 1.0
    lexicon: RelationLexicon = RelationLexicon()
    workers: int = 1

    def template(self, text: str) -> QuestionTemplate:
        return QuestionTemplate(text, self.articles)


DEFAULT_SETTINGS = SuiteSettings()


@dataclass(frozen=True)
class RecognitionTask:
    kind: Kind
    method: Method
    template: str | None = None
    choices: ChoiceSet | None = None
    phrase: str | None = None
    attribute: str | None = None
    object_name: str | None = None
    part_name: str | None = None
    objects: tuple[str, str] | None = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "method", Method(self.method))
        if self.method not in LEGAL_METHODS[self.kind]:
            raise PreconditionError(f"{self.kind.value} cannot use {self.method.value}")
        needs_choices = self.kind in (Kind.OBJECT_CLASS, Kind.FEATURE) or (
            self.kind is Kind.STATE_BINARY and self.method is Method.ITR
        )
        if needs_choices and (self.choices is None or len(self.choices) < 2):
            raise PreconditionError(f"{self.kind.value} needs at least two choices")
        if self.kind is Kind.STATE_BINARY and self.method is Method.ITR and len(self.choices) != 2:
            raise PreconditionError("binary state via retrieval needs exactly two choices, positive first")
        if self.kind in (Kind.STATE_CHARACTER,) or (self.kind is Kind.STATE_BINARY and self.method is Method.BVQA):
            if not self.template:
                raise PreconditionError(f"{self.kind.value} needs a question template")
        if self.kind is Kind.FEATURE and self.method is Method.MVQA and not self.template:
            if self.attribute not in FEATURE_TEMPLATES:
                raise PreconditionError(f"feature task needs a template or one of {sorted(FEATURE_TEMPLATES)}")
        if self.kind is Kind.LOCATION and not (self.phrase and self.phrase.strip()):
            raise PreconditionError("location task needs a phrase")
        if self.kind is Kind.AFFORDANCE and not (self.object_name and self.part_name):
            raise PreconditionError("affordance task needs object_name and part_name")
        if self.kind is Kind.RELATION and (not self.objects or len(self.objects) != 2):
            raise PreconditionError("relation task needs two objects")

    @property
    def is_grounding(self) -> bool:
        return self.method is Method.VG


# -- object recognition ----------------------------------------------------------


def _choice_task(backend, image, template, choices, method, settings):
    method = Method(method)
    if len(choices) < 2:
        raise PreconditionError("need at least two choices")
    if method is Method.MVQA:
        return run_mvqa(backend, image, settings.template(template), choices, settings.noise, settings.workers)
    if method is Method.ITR:
        return run_itr(backend, image, choices, settings.itr_temperature)
    raise PreconditionError(f"method must be mvqa or itr, not {method.value}")


def recognize_object_class(
    backend: Backend,
    image: ImageBuffer,
    choices: ChoiceSet,
    method: Method | str = Method.MVQA,
    template: str = CLASS_TEMPLATE,
    settings: SuiteSettings = DEFAULT_SETTINGS,
) -> ChoiceResult | ChoiceDistribution:
    return _choice_task(backend, image, template, choices, method, settings)


def recognize_feature(
    backend: Backend,
    image: ImageBuffer,
    attribute: str,
    choices: ChoiceSet,
    method: Method | str = Method.MVQA,
    template: str | None = None,
    settings: SuiteSettings = DEFAULT_SETTINGS,
) -> ChoiceResult | ChoiceDistribution:
    if template is None:
        if Method(method) is Method.MVQA and attribute not in FEATURE_TEMPLATES:
            raise PreconditionError(f"no default question for attribute {attribute!r}")
        template = FEATURE_TEMPLATES.get(attribute, CLASS_TEMPLATE)
    return _choice_task(backend, image, template, choices, method, settings)


def locate_object(backend: Backend, image: ImageBuffer, phrase: str) -> GroundingBox:
    return run_vg(backend, image, phrase)


# -- state recognition ---------------------------------------------------------------


def recognize_state(
    backend: Backend,
    image: ImageBuffer,
    template: str | None = None,
    method: Method | str = Method.BVQA,
    choices: ChoiceSet | None = None,
    settings: SuiteSettings = DEFAULT_SETTINGS,
) -> BinaryResult:
    """Binary state. The retrieval path reads choice 0 as "yes" and choice 1 as "no"."""
    method = Method(method)
    if method is Method.BVQA:
        if not template:
            raise PreconditionError("BVQA state recognition needs a template")
        return run_bvqa(backend, image, settings.template(template), settings.noise, settings.policy, settings.workers)
    if method is not Method.ITR:
        raise PreconditionError(f"method must be bvqa or itr, not {method.value}")
    if choices is None or len(choices) != 2:
        raise PreconditionError("retrieval state recognition needs exactly two choices, positive first")
    dist = run_itr(backend, image, choices, settings.itr_temperature)
    p_yes, p_no = dist.probabilities
    if p_yes > 0.5:
        decision = Decision.YES
    elif p_yes < 0.5:
        decision = Decision.NO
    else:
        decision = Decision.UNDECIDED
    return BinaryResult(decision, p_yes, p_no, 0.0)


def read_text(
    backend: Backend, image: ImageBuffer, template: str, settings: SuiteSettings = DEFAULT_SETTINGS
) -> str:
    return run_mvqa_freeform(backend, image, settings.template(template), settings.noise, settings.workers)


# -- affordance and relation -------------------------------------------------------


def affordance_phrase(object_name: str, part_name: str) -> str:
    return f"{part_name} of the {object_name}"


def recognize_affordance(backend: Backend, image: ImageBuffer, object_name: str, part_name: str) -> GroundingBox:
    return run_vg(backend, image, affordance_phrase(object_name, part_name))


@dataclass(frozen=True)
class RelationResult:
    relation: str | None
    counts: dict
    unmatched: int
    tied: tuple[str, ...] = ()
    answers: tuple[str, ...] = ()

    def to_dict(self, audit: bool = False) -> dict:
        out = {
            "relation": self.relation,
            "counts": dict(self.counts),
            "unmatched": self.unmatched,
            "tied": list(self.tied),
        }
        if audit:
            out["answers"] = list(self.answers)
        return out


def aggregate_relations(answers: Sequence[str], lexicon: RelationLexicon) -> RelationResult:
    found = [lexicon.find(a) for a in answers]
    counts = Counter(f for f in found if f is not None)
    ordered = {p: counts[p] for p in lexicon.phrases if counts[p]}
    if not ordered:
        return RelationResult(None, {}, len(found), (), tuple(answers))
    best = max(ordered.values())
    modal = tuple(p for p, c in ordered.items() if c == best)
    relation = modal[0] if len(modal) == 1 else None
    return RelationResult(relation, ordered, found.count(None), modal if len(modal) > 1 else (), tuple(answers))


def relation_template(object_a: str, object_b: str) -> str:
    return RELATION_TEMPLATE.replace("{a}", object_a).replace("{b}", object_b)


def recognize_relation(
    backend: Backend,
    image: ImageBuffer,
    object_a: str,
    object_b: str,
    lexicon: RelationLexicon | None = None,
    settings: SuiteSettings = DEFAULT_SETTINGS,
) -> RelationResult:
    """Modal relation phrase over the query grid; ``None`` when nothing matched or the top phrases tie."""
    lexicon = lexicon or settings.lexicon
    grid = make_query_grid(image, settings.template(relation_template(object_a, object_b)), settings.noise)
    return aggregate_relations(ask_grid(backend, grid, settings.workers), lexicon)


# -- viewpoint statistics -----------------------------------------------------------


@dataclass(frozen=True)
class ViewpointStats:
    rates: tuple[float, ...]
    mean: float
    std: float

    def to_dict(self) -> dict:
        return {"rates": list(self.rates), "mean": self.mean, "std": self.std}


def viewpoint_stats(rates: Sequence[float]) -> ViewpointStats:
    """Mean and population standard deviation (divisor N) of per-view correct rates."""
    rates = tuple(float(r) for r in rates)
    if not rates:
        raise EmptyInput("need at least one view")
    if any(not (math.isfinite(r) and 0.0 <= r <= 1.0) for r in rates):
        raise PreconditionError("rates must lie in [0, 1]")
    arr = np.asarray(rates)
    return ViewpointStats(rates, float(arr.mean()), float(arr.std(ddof=0)))


def correct_rate(result, expected: str) -> float:
    """How strongly one view's result supports ``expected``."""
    if isinstance(result, ChoiceResult):
        return result.per_choice_ratio[result.choices.index(expected)]
    if isinstance(result, ChoiceDistribution):
        return result.probabilities[result.choices.index(expected)]
    if isinstance(result, BinaryResult):
        key = expected.strip().lower()
        if key not in ("yes", "no"):
            raise PreconditionError("expected must be 'yes' or 'no' for a binary task")
        return result.yes_ratio if key == "yes" else result.no_ratio
    if isinstance(result, str):
        return 1.0 if normalize_answer(result) == normalize_answer(expected) else 0.0
    if isinstance(result, RelationResult):
        return float(result.relation == " ".join(normalize_answer(expected)))
    raise PreconditionError(f"no correctness measure for {type(result).__name__}")


def is_correct(result, expected: str) -> bool:
    if isinstance(result, (ChoiceResult, ChoiceDistribution)):
        return result.selected == result.choices.index(expected)
    if isinstance(result, BinaryResult):
        return result.decision.value == expected.strip().upper()
    return correct_rate(result, expected) == 1.0


# -- task dispatch and stepwise refinement ------------------------------------------


def run_task(backend: Backend, image: ImageBuffer, task: RecognitionTask, settings: SuiteSettings = DEFAULT_SETTINGS):
    k = task.kind
    if k is Kind.OBJECT_CLASS:
        return recognize_object_class(backend, image, task.choices, task.method, task.template or CLASS_TEMPLATE, settings)
    if k is Kind.FEATURE:
        return recognize_feature(backend, image, task.attribute or "", task.choices, task.method, task.template, settings)
    if k is Kind.LOCATION:
        return locate_object(backend, image, task.phrase)
    if k is Kind.STATE_BINARY:
        return recognize_state(backend, image, task.template, task.method, task.choices, settings)
    if k is Kind.STATE_CHARACTER:
        return read_text(backend, image, task.template, settings)
    if k is Kind.AFFORDANCE:
        return recognize_affordance(backend, image, task.object_name, task.part_name)
    if k is Kind.RELATION:
        return recognize_relation(backend, image, task.objects[0], task.objects[1], settings=settings)
    raise PreconditionError(f"unhandled task kind {k}")


@dataclass(frozen=True)
class RefinementStep:
    """An ordered chain of tasks. Each grounding step crops the working image
    for the steps after it; other steps read the current working image.
    """

    tasks: tuple[RecognitionTask, ...]

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        if not self.tasks:
            raise PreconditionError("refinement chain needs at least one step")


@dataclass(frozen=True)
class StepOutcome:
    task: RecognitionTask
    result: object
    box_local: GroundingBox | None = None
    box_global: GroundingBox | None = None


@dataclass(frozen=True)
class RefinementResult:
    steps: tuple[StepOutcome, ...]
    box_chain: tuple[GroundingBox, ...]
    complete: bool
    error: str | None = None
    final_image: ImageBuffer | None = field(default=None, repr=False)


def stepwise_refine(
    backend: Backend,
    image: ImageBuffer,
    steps: RefinementStep | Sequence[RecognitionTask],
    settings: SuiteSettings = DEFAULT_SETTINGS,
) -> RefinementResult:
    if not isinstance(steps, RefinementStep):
        steps = RefinementStep(tuple(steps))
    working, ox, oy = image, 0, 0
    outcomes: list[StepOutcome] = []
    chain: list[GroundingBox] = []
    for task in steps.tasks:
        try:
            result = run_task(backend, working, task, settings)
        except GroundingEmpty as exc:
            return RefinementResult(tuple(outcomes), tuple(chain), False, str(exc), working)
        if task.is_grounding:
            local = result
            glob = local.offset(ox, oy)
            outcomes.append(StepOutcome(task, result, local, glob))
            chain.append(glob)
            working = crop(working, local)
            ox, oy = glob.x_min, glob.y_min
        else:
            outcomes.append(StepOutcome(task, result))
    return RefinementResult(tuple(outcomes), tuple(chain), True, None, working)
