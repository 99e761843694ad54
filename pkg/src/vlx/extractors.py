"""Reduce vision-language model outputs to values a robot program can branch on.

Five methods:

* BVQA  yes/no questions asked over a query grid, aggregated into a decision
* MVQA  free-form answers matched against a small choice set
* ITR   image-text scores turned into a probability per choice
* VG    a single bounding box for a phrase
* DIC   caption two images, compare caption embeddings by cosine similarity
"""
from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .backend.base import Backend, EmbeddingVector, GroundingBox
from .errors import DimensionMismatch, PreconditionError, ZeroVector
from .image import ImageBuffer
from .text import normalize_answer
from .variation import NoiseConfig, QueryGrid, QuestionTemplate, make_query_grid, rgb_shift

DEFAULT_DIC_THRESHOLD = 0.8
STOP_ARTICLES = frozenset({"a", "an", "the"})


class Label(str, Enum):
    YES = "YES"
    NO = "NO"
    INVALID = "INVALID"


class Decision(str, Enum):
    YES = "YES"
    NO = "NO"
    UNDECIDED = "UNDECIDED"


INVALID = Label.INVALID


@dataclass(frozen=True)
class DecisionPolicy:
    """``aliases`` maps a normalized answer (e.g. ``"yeah"``) to ``"yes"`` or ``"no"``."""

    min_valid_fraction: float = 0.5
    aliases: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.min_valid_fraction <= 1.0:
            raise PreconditionError("min_valid_fraction must lie in [0, 1]")
        for k, v in self.aliases.items():
            if v not in ("yes", "no"):
                raise PreconditionError(f"alias {k!r} must map to 'yes' or 'no', not {v!r}")


@dataclass(frozen=True)
class AnswerDistribution:
    tallies: dict
    total: int

    def __post_init__(self):
        if sum(self.tallies.values()) != self.total:
            raise PreconditionError("tallies do not sum to total")

    def ratio(self, label) -> float:
        return self.tallies.get(label, 0) / self.total if self.total else 0.0

    def to_dict(self) -> dict:
        return {"tallies": {_label_key(k): v for k, v in self.tallies.items()}, "total": self.total}


def _label_key(label) -> str:
    return label.value if isinstance(label, Enum) else str(label)


# -- answer normalization -----------------------------------------------------


def classify_binary_answer(raw: str, aliases: Mapping[str, str] | None = None) -> Label:
    tokens = normalize_answer(raw)
    if aliases and tokens:
        tokens = [aliases.get(" ".join(tokens), " ".join(tokens))]
    if tokens == ["yes"]:
        return Label.YES
    if tokens == ["no"]:
        return Label.NO
    return Label.INVALID


@dataclass(frozen=True)
class ChoiceSet:
    """Ordered candidate phrases.

    A choice matches an answer when all of its ``match_tokens`` occur among the
    answer's tokens. By default those are the phrase's words minus articles,
    so ``"a yellow cup"`` matches on ``{"yellow", "cup"}``.
    """

    phrases: tuple[str, ...]
    match_tokens: tuple[frozenset, ...] = None

    def __post_init__(self):
        phrases = tuple(self.phrases)
        if not phrases or any(not p or not p.strip() for p in phrases):
            raise PreconditionError("choices must be non-empty phrases")
        normalized = [" ".join(normalize_answer(p)) for p in phrases]
        if len(set(normalized)) != len(normalized):
            raise PreconditionError(f"choices are not distinct after normalization: {phrases}")
        if self.match_tokens is None:
            tokens = tuple(
                frozenset(t for t in normalize_answer(p) if t not in STOP_ARTICLES) or frozenset(normalize_answer(p))
                for p in phrases
            )
        else:
            tokens = tuple(frozenset(t for tok in ts for t in normalize_answer(tok)) for ts in self.match_tokens)
            if len(tokens) != len(phrases):
                raise PreconditionError("need one match-token set per choice")
        for p, ts in zip(phrases, tokens):
            if not ts:
                raise PreconditionError(f"choice {p!r} has no match tokens")
        object.__setattr__(self, "phrases", phrases)
        object.__setattr__(self, "match_tokens", tokens)

    @classmethod
    def of(cls, *phrases: str) -> "ChoiceSet":
        return cls(tuple(phrases))

    def __len__(self) -> int:
        return len(self.phrases)

    def __getitem__(self, i: int) -> str:
        return self.phrases[i]

    def index(self, phrase: str) -> int:
        key = " ".join(normalize_answer(phrase))
        for i, p in enumerate(self.phrases):
            if " ".join(normalize_answer(p)) == key:
                return i
        raise KeyError(phrase)


def match_answer(raw: str, choices: ChoiceSet):
    """Index of the single matching choice, or ``INVALID`` for zero or several matches."""
    tokens = set(normalize_answer(raw))
    hits = [i for i, need in enumerate(choices.match_tokens) if need <= tokens]
    return hits[0] if len(hits) == 1 else INVALID


# -- aggregation ----------------------------------------------------------------


def tally_binary(labels: Iterable[Label]) -> AnswerDistribution:
    counts = Counter(labels)
    tallies = {lab: counts.get(lab, 0) for lab in Label}
    return AnswerDistribution(tallies, sum(tallies.values()))


def decide_binary(dist: AnswerDistribution, policy: DecisionPolicy = DecisionPolicy()) -> Decision:
    yes, no = dist.tallies.get(Label.YES, 0), dist.tallies.get(Label.NO, 0)
    if dist.total == 0 or (yes + no) / dist.total < policy.min_valid_fraction:
        return Decision.UNDECIDED
    if yes > no:
        return Decision.YES
    if no > yes:
        return Decision.NO
    return Decision.UNDECIDED


@dataclass(frozen=True)
class BinaryResult:
    decision: Decision
    yes_ratio: float
    no_ratio: float
    invalid_ratio: float
    distribution: AnswerDistribution | None = None
    answers: tuple[str, ...] = ()

    def to_dict(self, audit: bool = False) -> dict:
        out = {
            "decision": self.decision.value,
            "yes_ratio": self.yes_ratio,
            "no_ratio": self.no_ratio,
            "invalid_ratio": self.invalid_ratio,
        }
        if self.distribution is not None:
            out["distribution"] = self.distribution.to_dict()
        if audit:
            out["answers"] = list(self.answers)
        return out


def aggregate_binary(answers: Sequence[str], policy: DecisionPolicy = DecisionPolicy()) -> BinaryResult:
    dist = tally_binary(classify_binary_answer(a, policy.aliases) for a in answers)
    n = dist.total
    yes, no, inv = (dist.tallies[lab] for lab in (Label.YES, Label.NO, Label.INVALID))
    return BinaryResult(
        decision=decide_binary(dist, policy),
        yes_ratio=yes / n if n else 0.0,
        no_ratio=no / n if n else 0.0,
        invalid_ratio=inv / n if n else 0.0,
        distribution=dist,
        answers=tuple(answers),
    )


def tally_choices(matches: Iterable, n_choices: int) -> AnswerDistribution:
    counts = Counter(matches)
    tallies = {i: counts.get(i, 0) for i in range(n_choices)}
    tallies[INVALID] = counts.get(INVALID, 0)
    if sum(tallies.values()) != sum(counts.values()):
        raise PreconditionError("match index outside the choice set")
    return AnswerDistribution(tallies, sum(tallies.values()))


@dataclass(frozen=True)
class ChoiceResult:
    choices: ChoiceSet
    per_choice_ratio: tuple[float, ...]
    invalid_ratio: float
    selected: int | None
    distribution: AnswerDistribution | None = None
    answers: tuple[str, ...] = ()

    @property
    def selected_phrase(self) -> str | None:
        return None if self.selected is None else self.choices[self.selected]

    def to_dict(self, audit: bool = False) -> dict:
        out = {
            "choices": list(self.choices.phrases),
            "per_choice_ratio": list(self.per_choice_ratio),
            "invalid_ratio": self.invalid_ratio,
            "selected": self.selected,
            "selected_phrase": self.selected_phrase,
        }
        if self.distribution is not None:
            out["distribution"] = self.distribution.to_dict()
        if audit:
            out["answers"] = list(self.answers)
        return out


def aggregate_choices(answers: Sequence[str], choices: ChoiceSet) -> ChoiceResult:
    dist = tally_choices((match_answer(a, choices) for a in answers), len(choices))
    n = dist.total
    counts = [dist.tallies[i] for i in range(len(choices))]
    best = max(counts, default=0)
    return ChoiceResult(
        choices=choices,
        per_choice_ratio=tuple(c / n if n else 0.0 for c in counts),
        invalid_ratio=dist.tallies[INVALID] / n if n else 0.0,
        selected=counts.index(best) if best > 0 else None,
        distribution=dist,
        answers=tuple(answers),
    )


def modal_answer(answers: Iterable[str]) -> str:
    """Most frequent normalized answer; ties go to the lexicographically smallest."""
    counts = Counter(" ".join(normalize_answer(a)) for a in answers)
    counts.pop("", None)
    if not counts:
        return ""
    return min(counts, key=lambda s: (-counts[s], s))


# -- running a grid -------------------------------------------------------------


def ask_grid(backend: Backend, grid: QueryGrid, workers: int = 1) -> list[str]:
    """Raw answers in grid pair order. Any backend failure aborts the whole run."""
    pairs = grid.pairs
    if workers <= 1:
        return [backend.vqa_answer(img, q) for img, q in pairs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda p: backend.vqa_answer(*p), pairs))


def _as_template(template) -> QuestionTemplate:
    return template if isinstance(template, QuestionTemplate) else QuestionTemplate(template)


def run_bvqa(
    backend: Backend,
    image: ImageBuffer,
    template: QuestionTemplate | str,
    noise: NoiseConfig = NoiseConfig(),
    policy: DecisionPolicy = DecisionPolicy(),
    workers: int = 1,
) -> BinaryResult:
    grid = make_query_grid(image, _as_template(template), noise)
    return aggregate_binary(ask_grid(backend, grid, workers), policy)


def run_mvqa(
    backend: Backend,
    image: ImageBuffer,
    template: QuestionTemplate | str,
    choices: ChoiceSet,
    noise: NoiseConfig = NoiseConfig(),
    workers: int = 1,
) -> ChoiceResult:
    grid = make_query_grid(image, _as_template(template), noise)
    return aggregate_choices(ask_grid(backend, grid, workers), choices)


def run_mvqa_freeform(
    backend: Backend,
    image: ImageBuffer,
    template: QuestionTemplate | str,
    noise: NoiseConfig = NoiseConfig(),
    workers: int = 1,
) -> str:
    grid = make_query_grid(image, _as_template(template), noise)
    return modal_answer(ask_grid(backend, grid, workers))


# -- retrieval ------------------------------------------------------------------


def softmax(scores: Sequence[float], temperature: float = 1.0) -> list[float]:
    if not temperature > 0:
        raise PreconditionError("temperature must be positive")
    z = np.asarray(scores, dtype=np.float64) / temperature
    e = np.exp(z - z.max())
    return (e / e.sum()).tolist()


@dataclass(frozen=True)
class ChoiceDistribution:
    choices: ChoiceSet
    probabilities: tuple[float, ...]
    selected: int
    scores: tuple[float, ...] = ()

    @property
    def selected_phrase(self) -> str:
        return self.choices[self.selected]

    def to_dict(self, audit: bool = False) -> dict:
        out = {
            "choices": list(self.choices.phrases),
            "probabilities": list(self.probabilities),
            "selected": self.selected,
            "selected_phrase": self.selected_phrase,
        }
        if audit:
            out["scores"] = list(self.scores)
        return out


def run_itr(
    backend: Backend,
    image: ImageBuffer,
    choices: ChoiceSet,
    temperature: float = 1.0,
    ensemble: NoiseConfig | None = None,
) -> ChoiceDistribution:
    """Single-image by default. With ``ensemble``, probabilities are averaged
    over that many channel-shifted variants of ``image``.
    """
    if len(choices) < 2:
        raise PreconditionError("retrieval needs at least two choices")
    if not temperature > 0:
        raise PreconditionError("temperature must be positive")
    if ensemble is None:
        scores = backend.itr_scores(image, choices.phrases)
        # argmax on raw scores: softmax is monotone, and this keeps ties exact
        return ChoiceDistribution(
            choices, tuple(softmax(scores, temperature)), int(np.argmax(scores)), tuple(scores)
        )
    per_variant = [
        backend.itr_scores(rgb_shift(image, ensemble, i), choices.phrases) for i in range(ensemble.n_variants)
    ]
    probs = np.mean([softmax(s, temperature) for s in per_variant], axis=0)
    probs = probs / probs.sum()
    mean_scores = np.mean(per_variant, axis=0)
    return ChoiceDistribution(choices, tuple(probs.tolist()), int(np.argmax(probs)), tuple(mean_scores.tolist()))


# -- grounding ------------------------------------------------------------------


def run_vg(backend: Backend, image: ImageBuffer, phrase: str) -> GroundingBox:
    if not phrase or not phrase.strip():
        raise PreconditionError("phrase must be non-empty")
    return backend.ground_phrase(image, phrase)


def crop(image: ImageBuffer, box: GroundingBox) -> ImageBuffer:
    if not box.fits(image.width, image.height):
        raise PreconditionError(f"box {box.as_tuple()} does not fit a {image.width}x{image.height} image")
    data = image.data[box.y_min:box.y_max, box.x_min:box.x_max]
    tag = f"{image.tag}@{box.x_min},{box.y_min},{box.x_max},{box.y_max}" if image.tag else None
    return ImageBuffer(np.array(data), tag=tag)


# -- caption difference ---------------------------------------------------------


def cosine_similarity(u, v) -> float:
    a = u.values if isinstance(u, EmbeddingVector) else np.asarray(u, dtype=np.float64)
    b = v.values if isinstance(v, EmbeddingVector) else np.asarray(v, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"dimensions differ: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVector("cosine similarity is undefined for a zero vector")
    if np.array_equal(a, b):
        return 1.0  # exact, so identical captions never read as a change at threshold 1
    return float(min(1.0, max(-1.0, np.dot(a, b) / (na * nb))))


@dataclass(frozen=True)
class DicResult:
    caption_a: str
    caption_b: str
    similarity: float
    changed: bool
    threshold: float

    def to_dict(self, audit: bool = False) -> dict:
        return {
            "caption_a": self.caption_a,
            "caption_b": self.caption_b,
            "similarity": self.similarity,
            "changed": self.changed,
            "threshold": self.threshold,
        }


def check_threshold(threshold: float) -> float:
    if not (math.isfinite(threshold) and -1.0 <= threshold <= 1.0):
        raise PreconditionError("threshold must lie in [-1, 1]")
    return float(threshold)


def run_dic(
    backend: Backend,
    image_a: ImageBuffer,
    image_b: ImageBuffer,
    threshold: float = DEFAULT_DIC_THRESHOLD,
) -> DicResult:
    threshold = check_threshold(threshold)
    cap_a, cap_b = backend.caption_image(image_a), backend.caption_image(image_b)
    sim = cosine_similarity(backend.embed_text(cap_a), backend.embed_text(cap_b))
    return DicResult(cap_a, cap_b, sim, sim < threshold, threshold)
