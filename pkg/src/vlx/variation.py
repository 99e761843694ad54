"""Query ensembles: RGB channel-shift image variants crossed with article rephrasings."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import MalformedTemplate, PreconditionError
from .image import ImageBuffer

ARTICLE_SLOT = "{art}"
DEFAULT_ARTICLES = ("a", "the", "this", "that")
DEFAULT_SEED = 17


@dataclass(frozen=True)
class NoiseConfig:
    shift_low: float = -0.1
    shift_high: float = 0.1
    n_variants: int = 5
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if not self.shift_low <= self.shift_high:
            raise PreconditionError("shift_low must not exceed shift_high")
        if self.n_variants < 1:
            raise PreconditionError("n_variants must be >= 1")
        if self.seed < 0:
            raise PreconditionError("seed must be a non-negative integer")


@dataclass(frozen=True)
class QuestionTemplate:
    template: str
    articles: tuple[str, ...] = DEFAULT_ARTICLES

    def __post_init__(self):
        object.__setattr__(self, "articles", tuple(self.articles))
        n = self.template.count(ARTICLE_SLOT)
        if n != 1:
            raise MalformedTemplate(f"template needs exactly one {ARTICLE_SLOT} slot, found {n}: {self.template!r}")
        if not self.articles:
            raise PreconditionError("article set must be non-empty")


def article_variants(template: QuestionTemplate | str, articles: Sequence[str] | None = None) -> list[str]:
    if isinstance(template, str):
        template = QuestionTemplate(template, DEFAULT_ARTICLES if articles is None else tuple(articles))
    elif articles is not None:
        template = QuestionTemplate(template.template, tuple(articles))
    return [template.template.replace(ARTICLE_SLOT, art) for art in template.articles]


def channel_shifts(config: NoiseConfig, variant_index: int) -> np.ndarray:
    """The three per-channel offsets for one variant. Variant ``i`` draws from seed ``seed ^ i``."""
    if not 0 <= variant_index < config.n_variants:
        raise PreconditionError(f"variant_index {variant_index} outside [0, {config.n_variants})")
    rng = np.random.default_rng(config.seed ^ variant_index)
    return rng.uniform(config.shift_low, config.shift_high, size=3)


def apply_channel_shift(image: ImageBuffer, deltas: Sequence[float], tag: str | None = None) -> ImageBuffer:
    deltas = np.asarray(deltas, dtype=np.float64)
    if deltas.shape != (3,):
        raise PreconditionError("need exactly one shift per RGB channel")
    return ImageBuffer(np.clip(image.data + deltas, 0.0, 1.0), tag=tag if tag is not None else image.tag)


def rgb_shift(image: ImageBuffer, config: NoiseConfig, variant_index: int) -> ImageBuffer:
    deltas = channel_shifts(config, variant_index)
    tag = f"{image.tag}#v{variant_index}" if image.tag else None
    return apply_channel_shift(image, deltas, tag=tag)


@dataclass(frozen=True, eq=False)
class QueryGrid:
    images: tuple[ImageBuffer, ...]
    questions: tuple[str, ...]
    shifts: tuple[tuple[float, float, float], ...]

    @property
    def pairs(self) -> list[tuple[ImageBuffer, str]]:
        """Image-major: all questions for variant 0, then variant 1, ..."""
        return [(img, q) for img in self.images for q in self.questions]

    def __len__(self) -> int:
        return len(self.images) * len(self.questions)


def make_query_grid(image: ImageBuffer, template: QuestionTemplate, noise: NoiseConfig = NoiseConfig()) -> QueryGrid:
    questions = tuple(article_variants(template))
    shifts, images = [], []
    for i in range(noise.n_variants):
        deltas = channel_shifts(noise, i)
        shifts.append(tuple(float(d) for d in deltas))
        images.append(apply_channel_shift(image, deltas, tag=f"{image.tag}#v{i}" if image.tag else None))
    return QueryGrid(tuple(images), questions, tuple(shifts))
