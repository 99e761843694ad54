from __future__ import annotations

import numpy as np
import pytest

from vlx.backend import MockBackend
from vlx.image import ImageBuffer
from vlx.variation import NoiseConfig, QuestionTemplate, article_variants


def grid_cells(tag, template, noise=NoiseConfig()):
    """(image_id, question) for every grid pair, in run order. Independent of make_query_grid."""
    tmpl = template if isinstance(template, QuestionTemplate) else QuestionTemplate(template)
    return [(f"{tag}#v{i}", q) for i in range(noise.n_variants) for q in article_variants(tmpl)]


def scripted_vqa(tag, template, answers, noise=NoiseConfig()):
    """Fixture entries giving the k-th grid cell the k-th scripted answer."""
    cells = grid_cells(tag, template, noise)
    assert len(cells) == len(answers)
    return [{"image_id": i, "task": "vqa", "text": q, "response": a} for (i, q), a in zip(cells, answers)]


def gradient_image(width=8, height=6, tag=None, seed=0):
    rng = np.random.default_rng(seed)
    return ImageBuffer(rng.integers(0, 256, size=(height, width, 3)) / 255.0, tag=tag)


@pytest.fixture
def image():
    return gradient_image(tag="scene")


@pytest.fixture
def kitchen_backend():
    entries = [
        {"image_id": "img1", "task": "caption", "text": None, "response": "a kitchen with a sink and a window"},
        {"image_id": "img7", "task": "vqa", "text": "is the door open?", "response": "yes"},
        {"image_id": "img7", "task": "vqa", "text": "what does the image describe?", "response": "a white door in a hallway"},
        {"image_id": "img7", "task": "itr", "text": "an open door", "response": 2.0},
        {"image_id": "img7", "task": "itr", "text": "a closed door", "response": 0.5},
        {"image_id": "img3", "task": "vg", "text": "handle of the kettle", "response": [120, 40, 180, 90]},
        {"image_id": "img3", "task": "vg", "text": "spout of the kettle", "response": [20, 30, 60, 70]},
    ]
    return MockBackend(entries)
