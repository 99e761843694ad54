"""Robot-usable values from pre-trained vision-language models."""

__version__ = "0.1.0"

from .backend import Backend, Capability, CountingBackend, EmbeddingVector, GroundingBox, HttpBackend, MockBackend
from .extractors import (
    BinaryResult,
    ChoiceDistribution,
    ChoiceResult,
    ChoiceSet,
    Decision,
    DecisionPolicy,
    DicResult,
    Label,
    classify_binary_answer,
    cosine_similarity,
    crop,
    match_answer,
    normalize_answer,
    run_bvqa,
    run_dic,
    run_itr,
    run_mvqa,
    run_mvqa_freeform,
    run_vg,
)
from .image import ImageBuffer
from .variation import NoiseConfig, QueryGrid, QuestionTemplate, article_variants, make_query_grid, rgb_shift

__all__ = [
    "Backend", "Capability", "CountingBackend", "EmbeddingVector", "GroundingBox", "HttpBackend",
    "MockBackend", "BinaryResult", "ChoiceDistribution", "ChoiceResult", "ChoiceSet", "Decision",
    "DecisionPolicy", "DicResult", "Label", "classify_binary_answer", "cosine_similarity", "crop",
    "match_answer", "normalize_answer", "run_bvqa", "run_dic", "run_itr", "run_mvqa",
    "run_mvqa_freeform", "run_vg", "ImageBuffer", "NoiseConfig", "QueryGrid", "QuestionTemplate",
    "article_variants", "make_query_grid", "rgb_shift",
]
