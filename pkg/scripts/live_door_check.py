"""Manual live check: door open/closed against a real model.

Needs a model server speaking the vlx HTTP protocol (POST /v1/infer) and two
photos of the same door, one open and one closed:

    python scripts/live_door_check.py --endpoint http://gpu-box:8000 \\
        --open photos/door_open.jpg --closed photos/door_closed.jpg

Expected: BVQA decides YES on the open photo and NO on the closed one. With
--itr the retrieval path is checked too. Exit status 0 only if every check holds.
"""
import argparse
import json
import sys

from vlx.backend import Capability, HttpBackend
from vlx.errors import VlxError
from vlx.extractors import ChoiceSet, run_bvqa, run_itr
from vlx.image import ImageBuffer
from vlx.variation import NoiseConfig


def main():
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--endpoint", required=True)
    p.add_argument("--open", required=True, help="photo of the open door")
    p.add_argument("--closed", required=True, help="photo of the closed door")
    p.add_argument("--template", default="is {art} door open?")
    p.add_argument("--seed", type=int, default=17)
    p.add_argument("--itr", action="store_true", help="also check retrieval with 'an open door' / 'a closed door'")
    p.add_argument("--timeout", type=float, default=120.0)
    args = p.parse_args()

    caps = {Capability.VQA} | ({Capability.ITR_SCORES} if args.itr else set())
    backend = HttpBackend(args.endpoint, capabilities=caps, timeout=args.timeout)
    noise = NoiseConfig(seed=args.seed)
    choices = ChoiceSet.of("an open door", "a closed door")

    ok = True
    for path, want in ((args.open, "YES"), (args.closed, "NO")):
        image = ImageBuffer.load(path)
        try:
            res = run_bvqa(backend, image, args.template, noise)
        except VlxError as exc:
            print(json.dumps({"image": path, "error": exc.code, "detail": str(exc)}))
            ok = False
            continue
        passed = res.decision.value == want
        ok &= passed
        print(json.dumps({"image": path, "method": "bvqa", "expected": want, **res.to_dict(audit=True),
                          "pass": passed}))
        if args.itr:
            dist = run_itr(backend, image, choices)
            passed = dist.selected == (0 if want == "YES" else 1)
            ok &= passed
            print(json.dumps({"image": path, "method": "itr", "expected": want, **dist.to_dict(), "pass": passed}))

    print("PASS" if ok else "FAIL", file=sys.stderr)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
