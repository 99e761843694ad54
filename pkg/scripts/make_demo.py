"""Write a small kitchen demo: synthetic images, mock fixtures, config, route.

    python scripts/make_demo.py            # into scripts/demo/
    python scripts/make_demo.py /tmp/demo

Images are flat-colour drawings; the mock backend matches them by file stem,
so the fixture answers stand in for what a real model would say.
"""
import json
import sys
from pathlib import Path

import numpy as np

from vlx.image import ImageBuffer
from vlx.variation import DEFAULT_ARTICLES, NoiseConfig

DOOR_Q = "is {art} door open?"
CUP_Q = "what color is {art} cup?"
REL_Q = "what is the relative relationship between {art} cup and table?"


def canvas(w, h, rgb):
    return np.tile(np.asarray(rgb, dtype=np.float64), (h, w, 1))


def rect(img, x0, y0, x1, y1, rgb):
    img[y0:y1, x0:x1] = rgb
    return img


def draw_door(open_):
    img = canvas(96, 128, (0.85, 0.85, 0.8))
    rect(img, 24, 16, 72, 128, (0.2, 0.15, 0.1))  # frame
    if open_:
        rect(img, 28, 20, 40, 128, (0.55, 0.35, 0.2))  # leaf swung aside
    else:
        rect(img, 28, 20, 68, 128, (0.55, 0.35, 0.2))
        rect(img, 60, 70, 64, 78, (0.8, 0.7, 0.2))  # knob
    return img


def draw_kitchen():
    img = canvas(320, 240, (0.9, 0.9, 0.85))
    rect(img, 0, 170, 320, 240, (0.5, 0.4, 0.3))  # counter
    rect(img, 100, 60, 220, 170, (0.7, 0.1, 0.1))  # kettle body
    rect(img, 220, 80, 260, 140, (0.2, 0.2, 0.2))  # handle
    rect(img, 60, 120, 100, 140, (0.7, 0.7, 0.7))  # spout
    return img


def draw_shelf(dishes):
    img = canvas(160, 120, (0.95, 0.95, 0.95))
    rect(img, 20, 10, 140, 110, (0.6, 0.45, 0.3))
    if dishes:
        rect(img, 30, 40, 130, 60, (1.0, 1.0, 1.0))
    return img


def grid_answers(tag, template, answers):
    ids = [f"{tag}#v{i}" for i in range(NoiseConfig().n_variants)]
    questions = [template.replace("{art}", a) for a in DEFAULT_ARTICLES]
    cells = [(i, q) for i in ids for q in questions]
    return [{"image_id": i, "task": "vqa", "text": q, "response": a} for (i, q), a in zip(cells, answers)]


def main(out):
    out = Path(out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    images = {
        "door_open": draw_door(True),
        "door_closed": draw_door(False),
        "kitchen": draw_kitchen(),
        "shelf": draw_shelf(False),
        "shelf_now": draw_shelf(True),
    }
    for name, data in images.items():
        ImageBuffer(data, tag=name).save(out / "images" / f"{name}.png")

    fixtures = (
        grid_answers("door_open", DOOR_Q, ["yes"] * 14 + ["no"] * 2 + ["the door"] * 4)
        + grid_answers("door_closed", DOOR_Q, ["no"] * 17 + ["yes"] + ["closed"] * 2)
        + grid_answers("kitchen", CUP_Q, ["red"] * 12 + ["a red cup"] * 4 + ["white"] * 3 + ["pink"])
        + grid_answers("kitchen", REL_Q, ["on top of"] * 9 + ["on"] * 6 + ["next to"] * 5)
        + [
            {"image_id": "door_open", "task": "itr", "text": "an open door", "response": 24.1},
            {"image_id": "door_open", "task": "itr", "text": "a closed door", "response": 19.7},
            {"image_id": "door_closed", "task": "itr", "text": "an open door", "response": 18.2},
            {"image_id": "door_closed", "task": "itr", "text": "a closed door", "response": 23.5},
            {"image_id": "kitchen", "task": "vg", "text": "kettle", "response": [60, 60, 260, 170]},
            {"image_id": "kitchen@60,60,260,170", "task": "vg", "text": "handle of the kettle",
             "response": [160, 20, 200, 80]},
            {"image_id": "kitchen", "task": "caption", "text": None, "response": "a red kettle on a kitchen counter"},
            {"image_id": "shelf", "task": "caption", "text": None, "response": "a closed wooden shelf"},
            {"image_id": "shelf_now", "task": "caption", "text": None,
             "response": "a wooden shelf with white dishes on it"},
        ]
    )
    (out / "fixtures.json").write_text(json.dumps(fixtures, indent=1) + "\n")

    config = {
        "schema_version": 1,
        "backend": {"type": "mock", "fixtures": "fixtures.json"},
        "seed": 17,
        "tasks": {
            "door": {"kind": "state_binary", "method": "bvqa", "template": DOOR_Q},
            "door_itr": {"kind": "state_binary", "method": "itr", "choices": ["an open door", "a closed door"]},
            "cup_color": {"kind": "feature", "method": "mvqa", "template": CUP_Q,
                          "choices": ["red", "white", "blue"]},
            "cup_on_table": {"kind": "relation", "method": "mvqa", "objects": ["cup", "table"]},
            "kettle_handle": {"kind": "chain", "steps": [
                {"kind": "location", "method": "vg", "phrase": "kettle"},
                {"kind": "affordance", "method": "vg", "object": "kettle", "part": "handle"},
            ]},
        },
    }
    (out / "config.json").write_text(json.dumps(config, indent=2) + "\n")
    route = [
        {"waypoint_id": "kitchen", "image": "images/kitchen.png"},
        {"waypoint_id": "shelf", "image": "images/shelf_now.png"},
    ]
    (out / "route.json").write_text(json.dumps(route, indent=2) + "\n")
    print(out)


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).parent / "demo")
