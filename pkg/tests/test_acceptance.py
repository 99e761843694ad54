"""Acceptance checks, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line (``MANUAL`` for the live
check). Run alone with ``pytest tests/test_acceptance.py -v``.
"""
import json
import math
import subprocess
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from vlx.backend import Capability, CountingBackend, MockBackend
from vlx.cli import main
from vlx.config import ENDPOINT_ENV
from vlx.extractors import (
    ChoiceSet,
    DecisionPolicy,
    aggregate_binary,
    aggregate_choices,
    cosine_similarity,
    crop,
    run_bvqa,
    run_dic,
    run_mvqa,
    softmax,
)
from vlx.image import ImageBuffer
from vlx.patrol import WaypointStore, check_waypoint, record_baseline
from vlx.recognition import RecognitionTask, RelationLexicon, aggregate_relations, stepwise_refine
from vlx.variation import NoiseConfig, channel_shifts, rgb_shift

from conftest import gradient_image, grid_cells, scripted_vqa

ROOT = Path(__file__).resolve().parents[1]
_MODULE_START = time.perf_counter()


@contextmanager
def criterion(capsys, n, title):
    try:
        yield
    except pytest.skip.Exception:
        raise
    except BaseException:
        with capsys.disabled():
            print(f"\nFAIL    criterion {n:>2}: {title}")
        raise
    with capsys.disabled():
        print(f"\nPASS    criterion {n:>2}: {title}")


def test_c01_grid_protocol(capsys):
    with criterion(capsys, 1, "default BVQA/MVQA issue exactly 20 queries (5 variants x 4 articles), < 1 s"):
        im = gradient_image(tag="door")
        bq, mq = "is {art} door open?", "what color is {art} door?"
        cells = grid_cells("door", bq)
        assert len(cells) == 20 and len(set(cells)) == 20
        entries = scripted_vqa("door", bq, ["yes"] * 20) + scripted_vqa("door", mq, ["white"] * 20)
        backend = CountingBackend(MockBackend(entries))
        t0 = time.perf_counter()
        run_bvqa(backend, im, bq)
        assert backend.calls[Capability.VQA] == 20
        run_mvqa(backend, im, mq, ChoiceSet.of("white", "brown"))
        elapsed = time.perf_counter() - t0
        assert backend.calls[Capability.VQA] == 40 and backend.total == 40
        assert elapsed < 1.0


def test_c02_noise_bounds(capsys):
    with criterion(capsys, 2, "10^4 shifts in [-0.1, 0.1], outputs in [0, 1], zero shift bit-exact"):
        dark = ImageBuffer.filled(4, 3, (0.0, 0.02, 0.05))
        bright = ImageBuffer.filled(4, 3, (1.0, 0.98, 0.95))
        mixed = gradient_image(4, 3)
        deltas = []
        for seed in range(2000):
            noise = NoiseConfig(seed=seed)
            for i in range(noise.n_variants):
                d = channel_shifts(noise, i)
                deltas.append(d)
                for im in (dark, bright, mixed):
                    out = rgb_shift(im, noise, i).data
                    assert out.min() >= 0.0 and out.max() <= 1.0
        deltas = np.asarray(deltas)
        assert deltas.shape == (10_000, 3)
        assert np.all((deltas >= -0.1) & (deltas <= 0.1))
        zero = NoiseConfig(0.0, 0.0)
        for i in range(zero.n_variants):
            assert rgb_shift(mixed, zero, i).data.tobytes() == mixed.data.tobytes()


# hand-labelled answers: Y / N / I(nvalid) for binary, choice index / None for MVQA
_BINARY = {"yes": "Y", "Yes.": "Y", "YES!": "Y", "no": "N", "No.": "N", " no ": "N",
           "maybe": "I", "the door is open": "I", "": "I", "yes and no": "I", "nah": "I"}
_FRUIT = ChoiceSet.of("apple", "banana", "orange")
_CHOICE = {"apple": 0, "a red apple": 0, "Apple!": 0, "banana": 1, "ripe banana": 1, "orange": 2,
           "an orange fruit": 2, "pear": None, "apple or banana": None, "": None, "oranges": None}


def _recount_binary(labels, frac):
    n = len(labels)
    y, no, i = labels.count("Y"), labels.count("N"), labels.count("I")
    ratios = (y / n, no / n, i / n) if n else (0.0, 0.0, 0.0)
    if n == 0 or (y + no) / n < frac or y == no:
        return "UNDECIDED", ratios
    return ("YES" if y > no else "NO"), ratios


def _recount_choices(idxs, k):
    n = len(idxs)
    counts = [sum(1 for x in idxs if x == j) for j in range(k)]
    best = max(counts)
    sel = counts.index(best) if best > 0 else None
    return tuple(c / n for c in counts), sum(1 for x in idxs if x is None) / n, sel


def test_c03_aggregation_oracle(capsys):
    with criterion(capsys, 3, "1000 random multisets: BVQA/MVQA ratios and decisions equal brute-force recount"):
        rng = np.random.default_rng(2024)
        bkeys, ckeys = sorted(_BINARY), sorted(_CHOICE)
        for trial in range(1000):
            frac = [0.0, 0.5, 0.75][trial % 3]
            answers = [bkeys[j] for j in rng.integers(0, len(bkeys), rng.integers(0, 41))]
            res = aggregate_binary(answers, DecisionPolicy(min_valid_fraction=frac))
            decision, ratios = _recount_binary([_BINARY[a] for a in answers], frac)
            assert res.decision.value == decision
            assert (res.yes_ratio, res.no_ratio, res.invalid_ratio) == ratios

            answers = [ckeys[j] for j in rng.integers(0, len(ckeys), rng.integers(1, 41))]
            res = aggregate_choices(answers, _FRUIT)
            per, inv, sel = _recount_choices([_CHOICE[a] for a in answers], 3)
            assert res.per_choice_ratio == per
            assert res.invalid_ratio == inv
            assert res.selected == sel


def test_c04_all_invalid(capsys):
    with criterion(capsys, 4, "20 non-yes/no answers give invalid_ratio 1.0 and UNDECIDED"):
        q = "is {art} door open?"
        answers = ["the door", "open", "a white door", "maybe", "door"] * 4
        res = run_bvqa(MockBackend(scripted_vqa("door", q, answers)), gradient_image(tag="door"), q)
        assert res.invalid_ratio == 1.0
        assert res.yes_ratio == 0.0 and res.no_ratio == 0.0
        assert res.decision.value == "UNDECIDED"
        assert res.distribution.total == 20


def test_c05_itr_math(capsys):
    with criterion(capsys, 5, "softmax sums to 1 (1e-9), argmax preserved, shift-invariant (1e-9), 1000 vectors"):
        rng = np.random.default_rng(5)
        for _ in range(1000):
            k = int(rng.integers(2, 12))
            scores = rng.normal(0, rng.uniform(0.1, 20), k)
            temp = float(rng.uniform(1e-3, 10.0))
            p = np.array(softmax(scores, temp))
            assert abs(p.sum() - 1.0) <= 1e-9
            assert int(np.argmax(p)) == int(np.argmax(scores))
            shifted = np.array(softmax(scores + rng.uniform(-100, 100), temp))
            assert np.max(np.abs(shifted - p)) <= 1e-9
        assert softmax([1.0, 1.0, 1.0], 10.0) == pytest.approx([1 / 3] * 3, abs=1e-12)


def test_c06_dic_math(capsys):
    with criterion(capsys, 6, "cosine equals dot/norm oracle (1e-12), cos(u,u)=1, changed monotone in threshold"):
        rng = np.random.default_rng(6)
        for _ in range(1000):
            d = int(rng.integers(2, 64))
            u, v = rng.normal(size=d), rng.normal(size=d)
            dot = sum(float(a) * float(b) for a, b in zip(u, v))
            oracle = dot / (math.sqrt(sum(float(a) ** 2 for a in u)) * math.sqrt(sum(float(b) ** 2 for b in v)))
            assert abs(cosine_similarity(u, v) - oracle) <= 1e-12
            assert abs(cosine_similarity(u, u) - 1.0) <= 1e-12

        backend = MockBackend([
            {"image_id": "before", "task": "caption", "text": None, "response": "a closed shelf"},
            {"image_id": "after", "task": "caption", "text": None, "response": "a shelf with dishes and an open door"},
        ])
        a, b = gradient_image(tag="before"), gradient_image(tag="after")
        flags = [run_dic(backend, a, b, float(t)).changed for t in np.linspace(-1.0, 1.0, 100)]
        assert flags == sorted(flags) and flags[0] is False and flags[-1] is True


def test_c07_refinement_pixels(capsys):
    with criterion(capsys, 7, "global box chain reproduces the innermost crop pixel-exactly"):
        scene = gradient_image(320, 240, tag="scene", seed=7)
        entries = [
            {"image_id": "scene", "task": "vg", "text": "kettle", "response": [97, 41, 281, 203]},
            {"image_id": "scene@97,41,281,203", "task": "vg", "text": "handle", "response": [113, 17, 171, 90]},
            {"image_id": "scene@97,41,281,203@113,17,171,90", "task": "vg", "text": "grip", "response": [5, 11, 33, 61]},
        ]
        steps = [RecognitionTask("location", "vg", phrase=p) for p in ("kettle", "handle", "grip")]
        res = stepwise_refine(MockBackend(entries), scene, steps)
        assert res.complete
        boxes = [b.as_tuple() for b in res.box_chain]
        # hand-composed offsets
        assert boxes == [(97, 41, 281, 203), (210, 58, 268, 131), (215, 69, 243, 119)]
        x0, y0, x1, y1 = boxes[-1]
        assert res.final_image.data.tobytes() == scene.data[y0:y1, x0:x1].tobytes()
        nested = scene.data[41:203, 97:281][17:90, 113:171][11:61, 5:33]
        assert np.array_equal(res.final_image.data, nested)
        assert crop(scene, res.box_chain[-1]).equals(res.final_image)


def _relation_corpus(n=50, seed=8):
    rng = np.random.default_rng(seed)
    fillers = ["the cup is", "it sits", "a mug", "the box stays", "clearly", "I think it is"]
    tails = ["the table", "the shelf", "the box", "a plate"]
    extras = ["", " and on the left", " next to the lamp", ", not under it", " on a tray", " under the light"]
    out = []
    for i in range(n):
        core = ["on top of", "On top of", "on  top  of", "ON TOP OF"][i % 4]
        answer = f"{rng.choice(fillers)} {core} {rng.choice(tails)}{rng.choice(extras)}"
        if i % 5 == 0:
            answer = f"on {answer}"
        if i % 7 == 0:
            answer += "."
        out.append(answer)
    return out


def test_c08_relation_longest_match(capsys):
    with criterion(capsys, 8, "answers containing 'on top of' never resolve to 'on' (50-answer fuzz corpus)"):
        corpus = _relation_corpus()
        assert len(corpus) == 50
        lexicon = RelationLexicon()
        # most answers also carry a competing preposition outside "on top of"
        rest = [" ".join(a.lower().replace(".", "").split()).replace("on top of", "|") for a in corpus]
        competing = [r for r in rest if any(f" {p} " in f" {r} " for p in ("on", "under", "next to"))]
        assert len(competing) >= 25
        for answer in corpus:
            assert lexicon.find(answer) == "on top of", answer
        res = aggregate_relations(corpus, lexicon)
        assert res.relation == "on top of"
        assert res.counts == {"on top of": 50}


def test_c09_patrol_roundtrip(capsys, tmp_path):
    with criterion(capsys, 9, "record -> check identical image: similarity 1.0, not anomalous, captions byte-identical"):
        caption = "a kitchen counter with a kettle, two mugs and a closed cupboard"
        backend = MockBackend([{"image_id": "wp-3", "task": "caption", "text": None, "response": caption}])
        image = gradient_image(tag="wp-3")
        store = WaypointStore(tmp_path / "store")
        recorded = record_baseline(store, backend, "wp-3", image)
        reopened = WaypointStore(tmp_path / "store").get("wp-3")
        assert reopened.baseline_caption.encode("utf-8") == caption.encode("utf-8")
        assert reopened.baseline_embedding == recorded.baseline_embedding
        report = check_waypoint(WaypointStore(tmp_path / "store"), backend, "wp-3", image)
        assert report.similarity == 1.0
        assert report.anomalous is False


def test_c10_cli_determinism(capsys, tmp_path, monkeypatch):
    with criterion(capsys, 10, "two CLI runs byte-identical with pinned timestamps; full suite < 30 s"):
        monkeypatch.delenv(ENDPOINT_ENV, raising=False)
        q = "is {art} door open?"
        gradient_image(tag="door").save(tmp_path / "door.png")
        entries = scripted_vqa("door", q, ["yes", "no", "Yes.", "open"] * 5)
        (tmp_path / "fx.json").write_text(json.dumps(entries))
        (tmp_path / "cfg.json").write_text(json.dumps(
            {"schema_version": 1, "seed": 11, "backend": {"fixtures": "fx.json"}}
        ))
        outputs = []
        for run in range(2):
            log = tmp_path / f"log{run}.jsonl"
            argv = ["--config", str(tmp_path / "cfg.json"), "--now", "2024-05-01T00:00:00+00:00", "--audit",
                    "--log", str(log), "extract", "bvqa", "--image", str(tmp_path / "door.png"), "--template", q]
            capsys.readouterr()
            assert main(argv) == 0
            outputs.append((capsys.readouterr().out.encode(), log.read_bytes()))
        assert outputs[0] == outputs[1]

        others = subprocess.run(
            [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", "--ignore", str(Path(__file__)), "tests"],
            cwd=ROOT, capture_output=True, text=True,
        )
        assert others.returncode == 0, others.stdout[-2000:]
        # this module so far plus every other test module
        total = (time.perf_counter() - _MODULE_START)
        assert total < 30.0, f"suite took {total:.1f} s"


def test_c11_live_check_is_manual(capsys):
    script = ROOT / "scripts" / "live_door_check.py"
    assert script.is_file()
    with capsys.disabled():
        print(f"\nMANUAL  criterion 11: live door open/closed check, run scripts/{script.name} against a real backend")
    pytest.skip("needs a real model behind the HTTP protocol; see scripts/live_door_check.py")
